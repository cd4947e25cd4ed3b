//! Rights-reservation declarations from legacy preference formats.
//!
//! Two formats are understood: a TDM reservation document (a JSON list of
//! `{location, tdm-reservation, tdm-policy}`) and a line-oriented AI
//! preferences text. Both are coarse: the most an import can grant is
//! "outputs may use anything", and only through an explicit `output: allow`.

mod text;
mod tdm;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consent::{AspectSelector, CombinationRule, ConsentRecord, PermissionRule};
use crate::intent::Role;
use crate::registry::{ConsentDraft, Registry, RegistryError};
use crate::time::Timestamp;

pub use tdm::{export_tdm_document, import_tdm_document};
pub use text::{export_ai_preferences_text, import_ai_preferences_text};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed document at {path}: {message}")]
    MalformedDocument { path: String, message: String },
    #[error("unknown tdm-reservation value {value} at {path}")]
    UnknownReservationValue { path: String, value: String },
    #[error("syntax error on line {line}: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("unknown directive `{key}` on line {line}")]
    UnknownDirective { line: usize, key: String },
    #[error("declaration for {scope} cannot be expressed as a TDM reservation")]
    NotRepresentable { scope: Scope },
    #[error("at least one directive is required")]
    NoDirectives,
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    TdmDoc,
    AiPrefsText,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tdm_doc" | "tdm" => Ok(SourceFormat::TdmDoc),
            "ai_prefs_text" | "ai_prefs" => Ok(SourceFormat::AiPrefsText),
            other => Err(format!("unknown preference format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Site,
    Path(String),
    ContentId(String),
}

impl Scope {
    /// `/` is the whole site.
    pub fn from_location(location: &str) -> Scope {
        if location == "/" {
            Scope::Site
        } else {
            Scope::Path(location.to_string())
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Site => f.write_str("site"),
            Scope::Path(p) => write!(f, "path {p}"),
            Scope::ContentId(c) => write!(f, "content {c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Train,
    Output,
    Search,
    Transcribe,
    Translate,
    Clip,
    Describe,
    Rephrase,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::Train,
        Action::Output,
        Action::Search,
        Action::Transcribe,
        Action::Translate,
        Action::Clip,
        Action::Describe,
        Action::Rephrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Train => "train",
            Action::Output => "output",
            Action::Search => "search",
            Action::Transcribe => "transcribe",
            Action::Translate => "translate",
            Action::Clip => "clip",
            Action::Describe => "describe",
            Action::Rephrase => "rephrase",
        }
    }

    /// Case-insensitive.
    pub fn parse(s: &str) -> Option<Action> {
        let lower = s.to_ascii_lowercase();
        Action::ALL.into_iter().find(|a| a.as_str() == lower)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directive {
    Allow,
    Deny,
}

impl Directive {
    pub fn as_str(self) -> &'static str {
        match self {
            Directive::Allow => "allow",
            Directive::Deny => "deny",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceDeclaration {
    pub source_format: SourceFormat,
    pub scope: Scope,
    pub directives: BTreeMap<Action, Directive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_url: Option<String>,
}

impl PreferenceDeclaration {
    pub fn deny_all(source_format: SourceFormat, scope: Scope) -> Self {
        PreferenceDeclaration {
            source_format,
            scope,
            directives: Action::ALL.into_iter().map(|a| (a, Directive::Deny)).collect(),
            policy_url: None,
        }
    }

    pub fn is_deny_all(&self) -> bool {
        Action::ALL.iter().all(|a| self.directives.get(a) == Some(&Directive::Deny))
    }
}

/// Folds declarations into one draft. Deny wins over allow for the same
/// action. Only `output: allow` yields a rule; every directive is kept as a
/// declared preference, which evaluation never consults.
pub fn declarations_to_draft(declarations: &[PreferenceDeclaration]) -> Result<ConsentDraft, IngestError> {
    let mut merged: BTreeMap<Action, Directive> = BTreeMap::new();
    let mut policies: Vec<&str> = Vec::new();
    for d in declarations {
        for (action, directive) in &d.directives {
            let slot = merged.entry(*action).or_insert(*directive);
            if *directive == Directive::Deny {
                *slot = Directive::Deny;
            }
        }
        if let Some(url) = d.policy_url.as_deref() {
            if !policies.contains(&url) {
                policies.push(url);
            }
        }
    }
    if merged.is_empty() {
        return Err(IngestError::NoDirectives);
    }
    let rules = if merged.get(&Action::Output) == Some(&Directive::Allow) {
        vec![PermissionRule::new(AspectSelector::Any, &[Role::Descriptor, Role::Transformation], CombinationRule::Any)]
    } else {
        Vec::new()
    };
    let mut declared_preferences: BTreeMap<String, String> =
        merged.iter().map(|(a, d)| (a.as_str().to_string(), d.as_str().to_string())).collect();
    if !policies.is_empty() {
        declared_preferences.insert("policy_url".to_string(), policies.join(" "));
    }
    Ok(ConsentDraft { rules, declared_preferences, ..Default::default() })
}

/// Imports declarations as a new consent version for a registered entity.
pub fn declarations_to_consent(
    registry: &Registry,
    declarations: &[PreferenceDeclaration],
    entity_id: &str,
    credential: &str,
    at: Timestamp,
) -> Result<ConsentRecord, IngestError> {
    let draft = declarations_to_draft(declarations)?;
    Ok(registry.upsert_consent(entity_id, draft, credential, at)?)
}

/// Parses either format by name.
pub fn import(format: SourceFormat, input: &str) -> Result<Vec<PreferenceDeclaration>, IngestError> {
    match format {
        SourceFormat::TdmDoc => import_tdm_document(input),
        SourceFormat::AiPrefsText => import_ai_preferences_text(input),
    }
}
