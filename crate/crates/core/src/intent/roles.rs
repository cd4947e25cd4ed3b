use serde::{Deserialize, Serialize};

use super::{Aspect, ComponentId, DescriptorKind, EntityRef, IntentRequest};

/// The role in which an entity is used, independent of the list it was written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Descriptor,
    Transformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationClass {
    /// Every descriptor in the request is the user's own original input.
    OriginalOnly,
    Mixed,
}

/// One rights-relevant use extracted from a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedRef {
    pub component: ComponentId,
    pub entity_ref: EntityRef,
    pub aspect: Aspect,
    pub role: Role,
    pub combination: CombinationClass,
}

pub fn combination_class(request: &IntentRequest) -> CombinationClass {
    if request.descriptors.iter().all(|d| d.kind == DescriptorKind::Original) {
        CombinationClass::OriginalOnly
    } else {
        CombinationClass::Mixed
    }
}

/// Effective role of a specific component.
///
/// Work references keep their position. A personal aspect (voice, style,
/// likeness) of a person or group transforms something only when the
/// request carries another descriptor that is not the user's own original
/// input; otherwise that personal aspect is itself the primary subject.
pub fn classify_reference_role(component: ComponentId, request: &IntentRequest) -> Role {
    let (entity_ref, aspect, positional) = match component {
        ComponentId::Descriptor(i) => match request.descriptors.get(i) {
            Some(d) => (d.entity_ref.as_ref(), &d.aspect, Role::Descriptor),
            None => return Role::Descriptor,
        },
        ComponentId::Transformation(i) => match request.transformations.get(i) {
            Some(t) => (t.entity_ref.as_ref(), &t.aspect, Role::Transformation),
            None => return Role::Transformation,
        },
        ComponentId::Qualifier(_) => return Role::Transformation,
    };
    let Some(entity_ref) = entity_ref else {
        return positional;
    };
    if entity_ref.entity_type.is_work() || !aspect.is_personal() {
        return positional;
    }
    let has_other_non_original = request
        .descriptors
        .iter()
        .enumerate()
        .any(|(i, d)| component != ComponentId::Descriptor(i) && d.kind != DescriptorKind::Original);
    if has_other_non_original {
        Role::Transformation
    } else {
        Role::Descriptor
    }
}

/// One tuple per specific component, descriptors first, in list order.
pub fn extract_entity_refs(request: &IntentRequest) -> Vec<ExtractedRef> {
    let combination = combination_class(request);
    request
        .specific_components()
        .map(|(component, entity_ref, aspect)| ExtractedRef {
            component,
            entity_ref: entity_ref.clone(),
            aspect: aspect.clone(),
            role: classify_reference_role(component, request),
            combination,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::Digest;
    use crate::intent::{Descriptor, EntityType, Transformation};

    fn rolling() -> Descriptor {
        Descriptor::specific(EntityRef::new(EntityType::Work, "Rolling in the Deep"), Aspect::Whole)
    }

    fn grimes_voice() -> Transformation {
        Transformation::specific(EntityRef::new(EntityType::Person, "Grimes"), Aspect::Voice)
    }

    fn upload() -> Descriptor {
        Descriptor::original(Digest::of(b"my recording"), Aspect::Whole)
    }

    #[test]
    fn voice_with_work_descriptor_is_transformation() {
        let r = IntentRequest { descriptors: vec![rolling()], transformations: vec![grimes_voice()], ..Default::default() };
        assert_eq!(classify_reference_role(ComponentId::Transformation(0), &r), Role::Transformation);
    }

    #[test]
    fn voice_over_original_upload_is_descriptor() {
        let r = IntentRequest { descriptors: vec![upload()], transformations: vec![grimes_voice()], ..Default::default() };
        assert_eq!(classify_reference_role(ComponentId::Transformation(0), &r), Role::Descriptor);
    }

    #[test]
    fn work_in_descriptor_position_stays_descriptor() {
        let r = IntentRequest { descriptors: vec![rolling()], transformations: vec![grimes_voice()], ..Default::default() };
        assert_eq!(classify_reference_role(ComponentId::Descriptor(0), &r), Role::Descriptor);
    }

    #[test]
    fn personal_descriptor_does_not_count_itself() {
        let voice_desc = Descriptor::specific(EntityRef::new(EntityType::Person, "Grimes"), Aspect::Voice);
        let r = IntentRequest { descriptors: vec![upload(), voice_desc.clone()], ..Default::default() };
        assert_eq!(classify_reference_role(ComponentId::Descriptor(1), &r), Role::Descriptor);
        let r = IntentRequest { descriptors: vec![rolling(), voice_desc], ..Default::default() };
        assert_eq!(classify_reference_role(ComponentId::Descriptor(1), &r), Role::Transformation);
    }

    #[test]
    fn extraction_matches_hand_classification() {
        let r = IntentRequest { descriptors: vec![rolling()], transformations: vec![grimes_voice()], ..Default::default() };
        let got: Vec<_> = extract_entity_refs(&r)
            .into_iter()
            .map(|e| (e.entity_ref.name, e.aspect, e.role, e.combination))
            .collect();
        assert_eq!(
            got,
            vec![
                ("Rolling in the Deep".to_string(), Aspect::Whole, Role::Descriptor, CombinationClass::Mixed),
                ("Grimes".to_string(), Aspect::Voice, Role::Transformation, CombinationClass::Mixed),
            ]
        );

        let r = IntentRequest { descriptors: vec![upload()], ..Default::default() };
        assert!(extract_entity_refs(&r).is_empty());

        let r = IntentRequest { descriptors: vec![upload()], transformations: vec![grimes_voice()], ..Default::default() };
        let got: Vec<_> = extract_entity_refs(&r)
            .into_iter()
            .map(|e| (e.entity_ref.name, e.aspect, e.role, e.combination))
            .collect();
        assert_eq!(got, vec![("Grimes".to_string(), Aspect::Voice, Role::Descriptor, CombinationClass::OriginalOnly)]);
    }
}
