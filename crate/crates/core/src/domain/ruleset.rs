use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DomainError, VarType};

/// How the destination's stage relates to the source's stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageRelation {
    SameOrLater,
    StrictlyLater,
    Same,
}

impl StageRelation {
    pub fn holds(self, src_stage: u32, dst_stage: u32) -> bool {
        match self {
            StageRelation::SameOrLater => dst_stage >= src_stage,
            StageRelation::StrictlyLater => dst_stage > src_stage,
            StageRelation::Same => dst_stage == src_stage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub src_type: VarType,
    pub dst_type: VarType,
    pub stage_relation: StageRelation,
    pub allowed: bool,
}

impl Rule {
    pub const fn allow(src_type: VarType, dst_type: VarType, stage_relation: StageRelation) -> Self {
        Self { src_type, dst_type, stage_relation, allowed: true }
    }

    pub const fn forbid(src_type: VarType, dst_type: VarType, stage_relation: StageRelation) -> Self {
        Self { src_type, dst_type, stage_relation, allowed: false }
    }

    fn matches(&self, src: (VarType, u32), dst: (VarType, u32)) -> bool {
        self.src_type == src.0 && self.dst_type == dst.0 && self.stage_relation.holds(src.1, dst.1)
    }
}

/// Declarative edge-admissibility rules over (variable type, stage).
///
/// An explicit `allowed: false` rule beats any matching allowance; pairs no
/// rule matches fall back to `default_allowed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleSetDocument", into = "RuleSetDocument")]
pub struct RuleSet {
    rules: Vec<Rule>,
    default_allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RuleSetDocument {
    List(Vec<Rule>),
    Full {
        rules: Vec<Rule>,
        #[serde(default)]
        default_allowed: bool,
    },
}

impl TryFrom<RuleSetDocument> for RuleSet {
    type Error = DomainError;

    fn try_from(doc: RuleSetDocument) -> Result<Self, Self::Error> {
        match doc {
            RuleSetDocument::List(rules) => RuleSet::new(rules, false),
            RuleSetDocument::Full { rules, default_allowed } => RuleSet::new(rules, default_allowed),
        }
    }
}

impl From<RuleSet> for RuleSetDocument {
    fn from(set: RuleSet) -> Self {
        if set.default_allowed {
            RuleSetDocument::Full { rules: set.rules, default_allowed: true }
        } else {
            RuleSetDocument::List(set.rules)
        }
    }
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>, default_allowed: bool) -> Result<Self, DomainError> {
        let mut seen = BTreeSet::new();
        for r in &rules {
            if !seen.insert((r.src_type, r.dst_type, r.stage_relation)) {
                return Err(DomainError::DuplicateRule);
            }
        }
        Ok(Self { rules, default_allowed })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn default_allowed(&self) -> bool {
        self.default_allowed
    }

    /// Rule evaluation on raw metadata; self-loops are handled by callers.
    pub fn evaluate(&self, src: (VarType, u32), dst: (VarType, u32)) -> bool {
        let mut allowed = None;
        for rule in self.rules.iter().filter(|r| r.matches(src, dst)) {
            if !rule.allowed {
                return false;
            }
            allowed = Some(true);
        }
        allowed.unwrap_or(self.default_allowed)
    }
}
