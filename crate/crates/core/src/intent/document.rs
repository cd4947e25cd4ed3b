//! The canonical intent document: the exact-intent channel used by the API,
//! the CLI and any pluggable extractor.

use serde_json::{Map, Value};

use super::{
    Aspect, Descriptor, DescriptorKind, EntityRef, EntityType, IntentRequest, Qualifier, QualifierKind,
    QualifierValue, Transformation, TransformationKind,
};
use crate::canonical::Digest;
use crate::time::Timestamp;

pub const INTENT_DOCUMENT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DocumentError {
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("unknown aspect `{value}` at `{path}`")]
    UnknownAspect { path: String, value: String },
    #[error("unknown qualifier kind `{value}` at `{path}`")]
    UnknownQualifierKind { path: String, value: String },
}

impl DocumentError {
    pub fn path(&self) -> &str {
        match self {
            DocumentError::SchemaViolation { path, .. }
            | DocumentError::UnknownAspect { path, .. }
            | DocumentError::UnknownQualifierKind { path, .. } => path,
        }
    }
}

fn violation(path: &str, message: impl Into<String>) -> DocumentError {
    DocumentError::SchemaViolation { path: path.to_string(), message: message.into() }
}

/// Renders a request as a canonical intent document.
pub fn to_document(request: &IntentRequest) -> Value {
    let mut doc = Map::new();
    doc.insert("version".into(), Value::from(INTENT_DOCUMENT_VERSION));
    doc.insert("descriptors".into(), serde_json::to_value(&request.descriptors).expect("serializable"));
    doc.insert("transformations".into(), serde_json::to_value(&request.transformations).expect("serializable"));
    doc.insert("qualifiers".into(), serde_json::to_value(&request.qualifiers).expect("serializable"));
    if let Some(raw) = &request.raw_input {
        doc.insert("raw_input".into(), Value::String(raw.clone()));
    }
    doc.insert("received_at".into(), Value::from(request.received_at.0));
    crate::canonical::canonical_value(&Value::Object(doc)).expect("serializable")
}

/// Parses a canonical intent document. Field order is irrelevant; unknown
/// fields are rejected so that typos never silently drop a constraint.
pub fn parse_structured_intent(document: &Value) -> Result<IntentRequest, DocumentError> {
    let obj = as_object(document, "$")?;
    check_fields(
        obj,
        "$",
        &["version", "descriptors", "transformations", "qualifiers", "raw_input", "received_at"],
    )?;

    match obj.get("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(INTENT_DOCUMENT_VERSION) => {}
        Some(_) => return Err(violation("$.version", "must be the integer 1")),
        None => return Err(violation("$.version", "missing required field")),
    }

    let descriptors = array_field(obj, "$", "descriptors")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_descriptor(v, &format!("$.descriptors[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let transformations = array_field(obj, "$", "transformations")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_transformation(v, &format!("$.transformations[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let qualifiers = array_field(obj, "$", "qualifiers")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_qualifier(v, &format!("$.qualifiers[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;

    let raw_input = opt_string(obj, "$", "raw_input")?;
    let received_at = match obj.get("received_at") {
        None | Some(Value::Null) => Timestamp(0),
        Some(Value::Number(n)) => Timestamp(n.as_i64().ok_or_else(|| violation("$.received_at", "must be an integer"))?),
        Some(_) => return Err(violation("$.received_at", "must be an integer")),
    };

    Ok(IntentRequest { descriptors, transformations, qualifiers, raw_input, received_at })
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, DocumentError> {
    v.as_object().ok_or_else(|| violation(path, "expected an object"))
}

fn check_fields(obj: &Map<String, Value>, path: &str, allowed: &[&str]) -> Result<(), DocumentError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(violation(&format!("{path}.{k}"), "unknown field")),
        None => Ok(()),
    }
}

fn array_field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a [Value], DocumentError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(&[]),
        Some(Value::Array(items)) => Ok(items),
        Some(_) => Err(violation(&format!("{path}.{key}"), "expected an array")),
    }
}

fn opt_string(obj: &Map<String, Value>, path: &str, key: &str) -> Result<Option<String>, DocumentError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(violation(&format!("{path}.{key}"), "expected a string")),
    }
}

fn req_string<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a str, DocumentError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(violation(&format!("{path}.{key}"), "expected a string")),
        None => Err(violation(&format!("{path}.{key}"), "missing required field")),
    }
}

fn parse_aspect(obj: &Map<String, Value>, path: &str) -> Result<Aspect, DocumentError> {
    match obj.get("aspect") {
        None | Some(Value::Null) => Ok(Aspect::Whole),
        Some(Value::String(s)) => s.parse().map_err(|_| DocumentError::UnknownAspect {
            path: format!("{path}.aspect"),
            value: s.clone(),
        }),
        Some(_) => Err(violation(&format!("{path}.aspect"), "expected a string")),
    }
}

fn parse_ref(obj: &Map<String, Value>, path: &str) -> Result<Option<EntityRef>, DocumentError> {
    let path = format!("{path}.ref");
    let v = match obj.get("ref") {
        None | Some(Value::Null) => return Ok(None),
        Some(v) => v,
    };
    let r = as_object(v, &path)?;
    check_fields(r, &path, &["entity_type", "name", "resolved_id"])?;
    let entity_type = match req_string(r, &path, "entity_type")? {
        "person" => EntityType::Person,
        "group" => EntityType::Group,
        "work" => EntityType::Work,
        "work_part" => EntityType::WorkPart,
        other => return Err(violation(&format!("{path}.entity_type"), format!("unknown entity type `{other}`"))),
    };
    Ok(Some(EntityRef {
        entity_type,
        name: req_string(r, &path, "name")?.to_string(),
        resolved_id: opt_string(r, &path, "resolved_id")?,
    }))
}

fn parse_descriptor(v: &Value, path: &str) -> Result<Descriptor, DocumentError> {
    let obj = as_object(v, path)?;
    check_fields(obj, path, &["kind", "ref", "category", "aspect", "payload_digest"])?;
    let kind = match req_string(obj, path, "kind")? {
        "generic" => DescriptorKind::Generic,
        "specific" => DescriptorKind::Specific,
        "original" => DescriptorKind::Original,
        other => return Err(violation(&format!("{path}.kind"), format!("unknown descriptor kind `{other}`"))),
    };
    let payload_digest = opt_string(obj, path, "payload_digest")?
        .map(|s| {
            s.parse::<Digest>()
                .map_err(|_| violation(&format!("{path}.payload_digest"), "expected lowercase hex SHA-256"))
        })
        .transpose()?;
    Ok(Descriptor {
        kind,
        entity_ref: parse_ref(obj, path)?,
        category: opt_string(obj, path, "category")?,
        aspect: parse_aspect(obj, path)?,
        payload_digest,
    })
}

fn parse_transformation(v: &Value, path: &str) -> Result<Transformation, DocumentError> {
    let obj = as_object(v, path)?;
    check_fields(obj, path, &["kind", "ref", "category", "rule_text", "aspect", "applies_to"])?;
    let kind = match req_string(obj, path, "kind")? {
        "generic" => TransformationKind::Generic,
        "specific" => TransformationKind::Specific,
        "foundational" => TransformationKind::Foundational,
        other => {
            return Err(violation(&format!("{path}.kind"), format!("unknown transformation kind `{other}`")))
        }
    };
    let applies_to = array_field(obj, path, "applies_to")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| violation(&format!("{path}.applies_to[{i}]"), "expected a descriptor index"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Transformation {
        kind,
        entity_ref: parse_ref(obj, path)?,
        category: opt_string(obj, path, "category")?,
        rule_text: opt_string(obj, path, "rule_text")?,
        aspect: parse_aspect(obj, path)?,
        applies_to,
    })
}

fn parse_qualifier(v: &Value, path: &str) -> Result<Qualifier, DocumentError> {
    let obj = as_object(v, path)?;
    check_fields(obj, path, &["kind", "key", "value"])?;
    let kind = match req_string(obj, path, "kind")? {
        "quality" => QualifierKind::Quality,
        "distribution" => QualifierKind::Distribution,
        "purpose" => QualifierKind::Purpose,
        other => {
            return Err(DocumentError::UnknownQualifierKind { path: format!("{path}.kind"), value: other.to_string() })
        }
    };
    let value = match obj.get("value") {
        Some(Value::String(s)) => QualifierValue::Text(s.clone()),
        Some(Value::Number(n)) => QualifierValue::Number(n.as_f64().expect("finite JSON number")),
        Some(_) => return Err(violation(&format!("{path}.value"), "expected a string or number")),
        None => return Err(violation(&format!("{path}.value"), "missing required field")),
    };
    Ok(Qualifier { kind, key: req_string(obj, path, "key")?.to_string(), value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn single_original_descriptor() {
        let digest = Digest::of(b"my photo").to_hex();
        let doc = json!({
            "version": 1,
            "descriptors": [{"kind": "original", "aspect": "whole", "payload_digest": digest}],
            "transformations": [],
            "qualifiers": []
        });
        let r = parse_structured_intent(&doc).unwrap();
        assert_eq!(r.descriptors.len(), 1);
        assert_eq!(r.transformations.len(), 0);
        assert_eq!(r.descriptors[0].kind, DescriptorKind::Original);
    }

    #[test]
    fn unknown_aspect_reports_path() {
        let doc = json!({
            "version": 1,
            "descriptors": [{"kind": "specific", "ref": {"entity_type": "person", "name": "X"}, "aspect": "telepathy"}],
        });
        assert_eq!(
            parse_structured_intent(&doc),
            Err(DocumentError::UnknownAspect { path: "$.descriptors[0].aspect".into(), value: "telepathy".into() })
        );
    }

    #[test]
    fn unknown_qualifier_kind() {
        let doc = json!({
            "version": 1,
            "descriptors": [{"kind": "generic", "category": "anime"}],
            "qualifiers": [{"kind": "mood", "key": "k", "value": "v"}],
        });
        assert!(matches!(
            parse_structured_intent(&doc),
            Err(DocumentError::UnknownQualifierKind { ref path, .. }) if path == "$.qualifiers[0].kind"
        ));
    }

    #[test]
    fn schema_violations_carry_paths() {
        let cases = [
            (json!([]), "$"),
            (json!({"descriptors": []}), "$.version"),
            (json!({"version": 2}), "$.version"),
            (json!({"version": 1, "extra": 1}), "$.extra"),
            (json!({"version": 1, "descriptors": [{"aspect": "voice"}]}), "$.descriptors[0].kind"),
            (
                json!({"version": 1, "descriptors": [{"kind": "original", "payload_digest": "ABC"}]}),
                "$.descriptors[0].payload_digest",
            ),
            (
                json!({"version": 1, "transformations": [{"kind": "generic", "applies_to": [-1]}]}),
                "$.transformations[0].applies_to[0]",
            ),
        ];
        for (doc, path) in cases {
            let err = parse_structured_intent(&doc).unwrap_err();
            assert_eq!(err.path(), path, "{doc}");
        }
    }

    #[test]
    fn serialization_is_canonical() {
        let doc = json!({
            "qualifiers": [], "transformations": [], "version": 1,
            "descriptors": [{"kind": "generic", "category": "anime", "aspect": "style"}]
        });
        let r = parse_structured_intent(&doc).unwrap();
        let s = crate::canonical::to_canonical_string(&to_document(&r)).unwrap();
        assert_eq!(
            s,
            r#"{"descriptors":[{"aspect":"style","category":"anime","kind":"generic"}],"qualifiers":[],"received_at":0,"transformations":[],"version":1}"#
        );
    }
}
