use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// High-level role of a process variable.
///
/// Controls are set-points chosen by the line; observations are measured
/// outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarType {
    Control,
    Observation,
}

/// Closed measurement interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub lo: f64,
    pub hi: f64,
}

impl Tolerance {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.lo && value <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableInfo {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub subsystem: String,
    pub var_type: VarType,
    /// Process stage, 1-based. Zero marks a variable without stage information.
    #[serde(default)]
    pub stage: u32,
    #[serde(default)]
    pub tolerance: Option<Tolerance>,
}

impl VariableInfo {
    pub fn new(var_type: VarType, stage: u32) -> Self {
        Self {
            description: String::new(),
            unit: String::new(),
            location: String::new(),
            subsystem: String::new(),
            var_type,
            stage,
            tolerance: None,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_tolerance(mut self, lo: f64, hi: f64) -> Self {
        self.tolerance = Some(Tolerance { lo, hi });
        self
    }
}

/// One record of the catalog document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    #[serde(flatten)]
    pub info: VariableInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CatalogDocument {
    variables: Vec<CatalogEntry>,
}

/// Per-variable semantics keyed by variable name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogDocument", into = "CatalogDocument")]
pub struct VariableCatalog {
    entries: BTreeMap<String, VariableInfo>,
}

impl TryFrom<CatalogDocument> for VariableCatalog {
    type Error = DomainError;

    fn try_from(doc: CatalogDocument) -> Result<Self, Self::Error> {
        VariableCatalog::from_entries(doc.variables)
    }
}

impl From<VariableCatalog> for CatalogDocument {
    fn from(catalog: VariableCatalog) -> Self {
        CatalogDocument {
            variables: catalog
                .entries
                .into_iter()
                .map(|(name, info)| CatalogEntry { name, info })
                .collect(),
        }
    }
}

impl VariableCatalog {
    pub fn from_entries(entries: impl IntoIterator<Item = CatalogEntry>) -> Result<Self, DomainError> {
        let mut map = BTreeMap::new();
        for entry in entries {
            if entry.name.trim().is_empty() {
                return Err(DomainError::EmptyName);
            }
            if let Some(tol) = entry.info.tolerance {
                if !(tol.lo < tol.hi) {
                    return Err(DomainError::InvalidTolerance {
                        name: entry.name,
                        lo: tol.lo,
                        hi: tol.hi,
                    });
                }
            }
            if map.contains_key(&entry.name) {
                return Err(DomainError::DuplicateVariable(entry.name));
            }
            map.insert(entry.name, entry.info);
        }
        let catalog = Self { entries: map };
        catalog.check_stages()?;
        Ok(catalog)
    }

    fn check_stages(&self) -> Result<(), DomainError> {
        let stages: BTreeSet<u32> = self.entries.values().map(|v| v.stage).filter(|&s| s > 0).collect();
        if let (Some(&min), Some(&max)) = (stages.iter().next(), stages.iter().next_back()) {
            if let Some(missing) = (min..=max).find(|s| !stages.contains(s)) {
                return Err(DomainError::NonContiguousStages { missing });
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&VariableInfo> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &VariableInfo)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// True when every variable carries a (non-zero) stage.
    pub fn fully_staged(&self) -> bool {
        self.entries.values().all(|v| v.stage > 0)
    }

    pub fn max_stage(&self) -> u32 {
        self.entries.values().map(|v| v.stage).max().unwrap_or(0)
    }

    pub fn has_tolerances(&self) -> bool {
        self.entries.values().any(|v| v.tolerance.is_some())
    }

    /// Returns a copy with `name` inserted or replaced, re-validated.
    pub fn with_entry(&self, name: impl Into<String>, info: VariableInfo) -> Result<Self, DomainError> {
        let name = name.into();
        let mut entries: Vec<CatalogEntry> = self
            .entries
            .iter()
            .filter(|(k, _)| **k != name)
            .map(|(k, v)| CatalogEntry { name: k.clone(), info: v.clone() })
            .collect();
        entries.push(CatalogEntry { name, info });
        Self::from_entries(entries)
    }
}

/// Parses and validates a catalog document of the form
/// `{"variables": [{"name": ..., "var_type": "Control", "stage": 3, ...}]}`.
pub fn load_catalog(source: &str) -> Result<VariableCatalog, DomainError> {
    let doc: CatalogDocument =
        serde_json::from_str(source).map_err(|e| DomainError::Parse(alloc::format!("{e}")))?;
    VariableCatalog::from_entries(doc.variables)
}

/// Process stages and the machine → subsystem → sensor asset hierarchy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessGraph {
    pub stages: Vec<String>,
    #[serde(default)]
    pub asset_edges: Vec<(String, String)>,
    #[serde(default)]
    pub stage_variables: BTreeMap<String, Vec<String>>,
}

impl ProcessGraph {
    /// Builds stage lanes `"1"..="K"` and the asset tree from catalog metadata.
    pub fn from_catalog(catalog: &VariableCatalog) -> Self {
        let max = catalog.max_stage();
        let stages: Vec<String> = (1..=max).map(|s| alloc::format!("{s}")).collect();
        let mut stage_variables: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut asset_edges = BTreeSet::new();
        for (name, info) in catalog.iter() {
            if info.stage > 0 {
                stage_variables
                    .entry(alloc::format!("{}", info.stage))
                    .or_default()
                    .push(name.into());
            }
            if !info.location.is_empty() && !info.subsystem.is_empty() {
                asset_edges.insert((info.location.clone(), info.subsystem.clone()));
                asset_edges.insert((info.subsystem.clone(), name.into()));
            }
        }
        Self {
            stages,
            asset_edges: asset_edges.into_iter().collect(),
            stage_variables,
        }
    }

    pub fn validate(&self, catalog: &VariableCatalog) -> Result<(), DomainError> {
        let mut seen = BTreeSet::new();
        for s in &self.stages {
            if !seen.insert(s.as_str()) {
                return Err(DomainError::DuplicateStage(s.clone()));
            }
        }
        for (stage, vars) in &self.stage_variables {
            if !seen.contains(stage.as_str()) {
                return Err(DomainError::UnknownStage(stage.clone()));
            }
            for v in vars {
                if !catalog.contains(v) {
                    return Err(DomainError::UnknownVariable(v.clone()));
                }
            }
        }
        Ok(())
    }

    /// Position of a stage id in the process order.
    pub fn position(&self, stage: &str) -> Option<usize> {
        self.stages.iter().position(|s| s == stage)
    }

    /// Variables of all stages strictly before `stage`, in stage order.
    pub fn upstream_of(&self, stage: &str) -> Vec<&str> {
        let Some(pos) = self.position(stage) else { return Vec::new() };
        self.stages[..pos]
            .iter()
            .filter_map(|s| self.stage_variables.get(s))
            .flat_map(|vs| vs.iter().map(String::as_str))
            .collect()
    }
}
