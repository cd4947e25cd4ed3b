//! Line-oriented AI preferences text.
//!
//! ```text
//! # comment
//! Path: /songs/
//! Policy: https://example.com/licensing
//! Output: deny
//! Train: deny
//!
//! Content-Id: isrc:GBBKS1000351
//! *: deny
//! ```
//!
//! A section starts with `Path:` or `Content-Id:` and ends at a blank line.
//! `*` sets every action at once. Keys are case-insensitive.

use std::collections::BTreeMap;

use super::{Action, Directive, IngestError, PreferenceDeclaration, Scope, SourceFormat};

struct Section {
    line: usize,
    scope: Scope,
    directives: BTreeMap<Action, Directive>,
    policy_url: Option<String>,
}

impl Section {
    fn finish(self) -> Result<PreferenceDeclaration, IngestError> {
        if self.directives.is_empty() {
            return Err(IngestError::SyntaxError { line: self.line, message: "section has no directives".into() });
        }
        Ok(PreferenceDeclaration {
            source_format: SourceFormat::AiPrefsText,
            scope: self.scope,
            directives: self.directives,
            policy_url: self.policy_url,
        })
    }
}

fn syntax(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::SyntaxError { line, message: message.into() }
}

pub fn import_ai_preferences_text(text: &str) -> Result<Vec<PreferenceDeclaration>, IngestError> {
    let mut out = Vec::new();
    let mut current: Option<Section> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            if let Some(section) = current.take() {
                out.push(section.finish()?);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(syntax(line_no, format!("expected `<key>: <value>`, found `{line}`")));
        };
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(syntax(line_no, format!("`{key}` needs a value")));
        }
        let lower = key.to_ascii_lowercase();
        match lower.as_str() {
            "path" | "content-id" => {
                if let Some(section) = current.take() {
                    out.push(section.finish()?);
                }
                let scope = if lower == "path" { Scope::from_location(value) } else { Scope::ContentId(value.to_string()) };
                current = Some(Section { line: line_no, scope, directives: BTreeMap::new(), policy_url: None });
            }
            _ => {
                let section = current.as_mut().ok_or_else(|| syntax(line_no, "directive outside a `Path:` section"))?;
                if lower == "policy" {
                    if section.policy_url.replace(value.to_string()).is_some() {
                        return Err(syntax(line_no, "duplicate `Policy`"));
                    }
                    continue;
                }
                let directive = match value.to_ascii_lowercase().as_str() {
                    "allow" => Directive::Allow,
                    "deny" => Directive::Deny,
                    _ => return Err(syntax(line_no, format!("expected `allow` or `deny`, found `{value}`"))),
                };
                let actions: Vec<Action> = if key == "*" {
                    Action::ALL.to_vec()
                } else {
                    vec![Action::parse(key).ok_or_else(|| IngestError::UnknownDirective { line: line_no, key: key.to_string() })?]
                };
                for action in actions {
                    if section.directives.insert(action, directive).is_some() {
                        return Err(syntax(line_no, format!("`{}` is set twice", action.as_str())));
                    }
                }
            }
        }
    }
    if let Some(section) = current.take() {
        out.push(section.finish()?);
    }
    Ok(out)
}

fn capitalized(action: Action) -> String {
    let s = action.as_str();
    s[..1].to_ascii_uppercase() + &s[1..]
}

/// Canonical text: sections in input order separated by blank lines; a
/// uniform section collapses to `*: <value>`, otherwise actions are listed
/// in a fixed order.
pub fn export_ai_preferences_text(declarations: &[PreferenceDeclaration]) -> String {
    let sections: Vec<String> = declarations
        .iter()
        .map(|d| {
            let mut lines = vec![match &d.scope {
                Scope::Site => "Path: /".to_string(),
                Scope::Path(p) => format!("Path: {p}"),
                Scope::ContentId(c) => format!("Content-Id: {c}"),
            }];
            if let Some(url) = &d.policy_url {
                lines.push(format!("Policy: {url}"));
            }
            let values: Vec<Directive> = Action::ALL.iter().filter_map(|a| d.directives.get(a).copied()).collect();
            if values.len() == Action::ALL.len() && values.iter().all(|v| *v == values[0]) {
                lines.push(format!("*: {}", values[0].as_str()));
            } else {
                for (action, directive) in &d.directives {
                    lines.push(format!("{}: {}", capitalized(*action), directive.as_str()));
                }
            }
            lines.join("\n") + "\n"
        })
        .collect();
    sections.join("\n")
}
