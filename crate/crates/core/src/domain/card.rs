use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DomainError, Slot};

/// Task tags understood by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Preprocessing,
    BackgroundInfo,
    Anomaly,
    Causal,
    Rca,
    Recommend,
}

impl Capability {
    pub const ALL: [Capability; 6] = [
        Capability::Preprocessing,
        Capability::BackgroundInfo,
        Capability::Anomaly,
        Capability::Causal,
        Capability::Rca,
        Capability::Recommend,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Capability::Preprocessing => "preprocessing",
            Capability::BackgroundInfo => "background_info",
            Capability::Anomaly => "anomaly",
            Capability::Causal => "causal",
            Capability::Rca => "rca",
            Capability::Recommend => "recommend",
        }
    }

    pub fn parse(tag: &str) -> Option<Capability> {
        Capability::ALL.into_iter().find(|c| c.tag() == tag)
    }

    /// State slot a successful step of this capability writes.
    pub fn slot(self) -> Slot {
        match self {
            Capability::Preprocessing => Slot::Preprocessing,
            Capability::BackgroundInfo => Slot::Background,
            Capability::Anomaly => Slot::Anomaly,
            Capability::Causal => Slot::Causal,
            Capability::Rca => Slot::Rca,
            Capability::Recommend => Slot::Recommendations,
        }
    }

    /// Slots that must not have failed earlier in a run for this step to proceed.
    pub fn dependencies(self) -> &'static [Slot] {
        match self {
            Capability::Causal => &[Slot::Preprocessing],
            Capability::Rca => &[Slot::Causal, Slot::Anomaly],
            _ => &[],
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerOp {
    Eq,
    Ne,
    Contains,
    Exists,
}

/// Predicate over one (dotted-path) field of an agent's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub field: String,
    pub op: TriggerOp,
    #[serde(default)]
    pub value: Value,
}

impl Trigger {
    pub fn matches(&self, output: &Value) -> bool {
        let found = lookup(output, &self.field);
        match self.op {
            TriggerOp::Exists => found.is_some_and(|v| !v.is_null()),
            TriggerOp::Eq => found == Some(&self.value),
            TriggerOp::Ne => found.is_some() && found != Some(&self.value),
            TriggerOp::Contains => match found {
                Some(Value::Array(items)) => items.contains(&self.value),
                Some(Value::String(s)) => self.value.as_str().is_some_and(|needle| s.contains(needle)),
                _ => false,
            },
        }
    }
}

/// Resolves a dotted path such as `report.status` inside a JSON value.
pub fn lookup<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(value, |v, key| match v {
        Value::Object(map) => map.get(key),
        Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessRule {
    pub trigger: Trigger,
    pub next_capability: String,
    /// Output field of this agent → input field of the downstream agent.
    #[serde(default)]
    pub input_mapping: BTreeMap<String, String>,
    #[serde(default)]
    pub auto_chain: bool,
}

/// Capability descriptor an agent registers with the central registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCard {
    pub name: String,
    pub version: String,
    pub endpoint: String,
    pub capabilities: Vec<String>,
    #[serde(default)]
    pub input_schema: Value,
    #[serde(default)]
    pub output_schema: Value,
    #[serde(default)]
    pub postprocess_rules: Vec<PostprocessRule>,
}

impl AgentCard {
    pub fn new(name: impl Into<String>, version: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
            endpoint: endpoint.into(),
            capabilities: Vec::new(),
            input_schema: Value::Null,
            output_schema: Value::Null,
            postprocess_rules: Vec::new(),
        }
    }

    pub fn with_capability(mut self, tag: impl Into<String>) -> Self {
        self.capabilities.push(tag.into());
        self
    }

    pub fn with_schemas(mut self, input_fields: &[&str], output_fields: &[&str]) -> Self {
        self.input_schema = schema_of(input_fields);
        self.output_schema = schema_of(output_fields);
        self
    }

    pub fn with_rule(mut self, rule: PostprocessRule) -> Self {
        self.postprocess_rules.push(rule);
        self
    }

    pub fn id(&self) -> String {
        alloc::format!("{}@{}", self.name, self.version)
    }

    pub fn offers(&self, tag: &str) -> bool {
        self.capabilities.iter().any(|c| c == tag)
    }

    /// Declared input field names, if the schema lists them.
    pub fn input_fields(&self) -> Option<Vec<&str>> {
        schema_fields(&self.input_schema)
    }

    pub fn output_fields(&self) -> Option<Vec<&str>> {
        schema_fields(&self.output_schema)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.name.trim().is_empty() {
            return Err(DomainError::InvalidCard("empty name".into()));
        }
        if self.capabilities.is_empty() || self.capabilities.iter().any(|c| c.trim().is_empty()) {
            return Err(DomainError::InvalidCard(alloc::format!("{}: capabilities must be non-empty", self.name)));
        }
        if !valid_endpoint(&self.endpoint) {
            return Err(DomainError::InvalidCard(alloc::format!("{}: malformed endpoint {:?}", self.name, self.endpoint)));
        }
        if let Some(outputs) = self.output_fields() {
            for rule in &self.postprocess_rules {
                if let Some(bad) = rule.input_mapping.keys().find(|k| !outputs.contains(&k.as_str())) {
                    return Err(DomainError::InvalidCard(alloc::format!(
                        "{}: postprocess mapping references undeclared output field {bad:?}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

fn schema_of(fields: &[&str]) -> Value {
    let list = fields.iter().map(|f| Value::String(f.to_string())).collect();
    let mut obj = serde_json::Map::new();
    obj.insert("fields".into(), Value::Array(list));
    Value::Object(obj)
}

fn schema_fields(schema: &Value) -> Option<Vec<&str>> {
    schema.get("fields")?.as_array()?.iter().map(Value::as_str).collect()
}

/// `scheme://authority[/path]` with an alphanumeric scheme and a non-empty authority.
pub fn valid_endpoint(endpoint: &str) -> bool {
    let Some((scheme, rest)) = endpoint.split_once("://") else { return false };
    let scheme_ok = scheme.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && scheme.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
    let authority = rest.split('/').next().unwrap_or("");
    scheme_ok && !authority.is_empty() && !authority.chars().any(char::is_whitespace)
}
