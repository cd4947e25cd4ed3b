use serde_json::{Map, Value};

use super::{Action, Directive, IngestError, PreferenceDeclaration, Scope, SourceFormat};

fn malformed(path: String, message: impl Into<String>) -> IngestError {
    IngestError::MalformedDocument { path, message: message.into() }
}

/// Parses a TDM reservation document: a JSON array of
/// `{"location", "tdm-reservation": 0|1, "tdm-policy"?}`.
///
/// Reservation `1` denies every action; `0` allows outputs only.
pub fn import_tdm_document(document: &str) -> Result<Vec<PreferenceDeclaration>, IngestError> {
    let value: Value = serde_json::from_str(document).map_err(|e| malformed("$".into(), e.to_string()))?;
    let entries = value.as_array().ok_or_else(|| malformed("$".into(), "expected an array of reservations"))?;
    entries
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let path = format!("$[{i}]");
            let obj = entry.as_object().ok_or_else(|| malformed(path.clone(), "expected an object"))?;
            if let Some(unknown) = obj.keys().find(|k| !["location", "tdm-reservation", "tdm-policy"].contains(&k.as_str())) {
                return Err(malformed(format!("{path}.{unknown}"), "unknown field"));
            }
            let location = match obj.get("location") {
                Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
                _ => return Err(malformed(format!("{path}.location"), "expected a non-empty string")),
            };
            let reservation = obj.get("tdm-reservation").ok_or_else(|| malformed(format!("{path}.tdm-reservation"), "missing"))?;
            let directives = match reservation.as_i64() {
                Some(1) => PreferenceDeclaration::deny_all(SourceFormat::TdmDoc, Scope::Site).directives,
                Some(0) => [(Action::Output, Directive::Allow)].into_iter().collect(),
                _ if reservation.is_number() => {
                    return Err(IngestError::UnknownReservationValue {
                        path: format!("{path}.tdm-reservation"),
                        value: reservation.to_string(),
                    })
                }
                _ => return Err(malformed(format!("{path}.tdm-reservation"), "expected 0 or 1")),
            };
            let policy_url = match obj.get("tdm-policy") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(malformed(format!("{path}.tdm-policy"), "expected a string")),
            };
            Ok(PreferenceDeclaration {
                source_format: SourceFormat::TdmDoc,
                scope: Scope::from_location(&location),
                directives,
                policy_url,
            })
        })
        .collect()
}

/// Renders declarations as a TDM document. Only deny-all and output-only
/// allow declarations over a site or path are expressible.
pub fn export_tdm_document(declarations: &[PreferenceDeclaration]) -> Result<String, IngestError> {
    let output_only: std::collections::BTreeMap<Action, Directive> =
        [(Action::Output, Directive::Allow)].into_iter().collect();
    let mut entries = Vec::new();
    for d in declarations {
        let location = match &d.scope {
            Scope::Site => "/".to_string(),
            Scope::Path(p) => p.clone(),
            Scope::ContentId(_) => return Err(IngestError::NotRepresentable { scope: d.scope.clone() }),
        };
        let reservation = if d.is_deny_all() {
            1
        } else if d.directives == output_only {
            0
        } else {
            return Err(IngestError::NotRepresentable { scope: d.scope.clone() });
        };
        let mut obj = Map::new();
        obj.insert("location".into(), Value::String(location));
        obj.insert("tdm-reservation".into(), Value::from(reservation));
        if let Some(url) = &d.policy_url {
            obj.insert("tdm-policy".into(), Value::String(url.clone()));
        }
        entries.push(Value::Object(obj));
    }
    let text = crate::canonical::to_canonical_string(&Value::Array(entries))
        .map_err(|e| malformed("$".into(), e.to_string()))?;
    Ok(text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reservation_mapping() {
        let d = import_tdm_document(r#"[{"location":"/music/*","tdm-reservation":1}]"#).unwrap();
        assert_eq!(d[0].scope, Scope::Path("/music/*".into()));
        assert!(d[0].is_deny_all());
        let d = import_tdm_document(r#"[{"location":"/","tdm-reservation":0}]"#).unwrap();
        assert_eq!(d[0].scope, Scope::Site);
        assert_eq!(d[0].directives.len(), 1);
        assert_eq!(d[0].directives[&Action::Output], Directive::Allow);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(
            import_tdm_document(r#"[{"location":"/","tdm-reservation":2}]"#),
            Err(IngestError::UnknownReservationValue { .. })
        ));
        assert!(matches!(import_tdm_document("{}"), Err(IngestError::MalformedDocument { .. })));
        assert!(matches!(
            import_tdm_document(r#"[{"location":"/","tdm-reservation":1,"extra":true}]"#),
            Err(IngestError::MalformedDocument { .. })
        ));
        assert!(matches!(import_tdm_document(r#"[{"tdm-reservation":1}]"#), Err(IngestError::MalformedDocument { .. })));
    }

    #[test]
    fn policy_is_preserved_opaquely() {
        let src = r#"[{"location":"/a","tdm-policy":"https://x.test/policy.json","tdm-reservation":1}]"#;
        let d = import_tdm_document(src).unwrap();
        assert_eq!(d[0].policy_url.as_deref(), Some("https://x.test/policy.json"));
        assert_eq!(export_tdm_document(&d).unwrap().trim_end(), src);
    }
}
