//! Shared domain types: variable semantics, rules, tables, agent cards,
//! workflow state, graphs and reports.

mod card;
mod catalog;
mod graph;
mod report;
mod ruleset;
mod table;
mod workflow;

use alloc::string::String;

pub use card::{lookup, valid_endpoint, AgentCard, Capability, PostprocessRule, Trigger, TriggerOp};
pub use catalog::{load_catalog, CatalogEntry, ProcessGraph, Tolerance, VarType, VariableCatalog, VariableInfo};
pub use graph::{Algorithm, CausalGraph, GraphEdge};
pub use report::{
    AnomalyReport, Backend, RankedCause, RcaPath, RcaReport, RcaTrigger, Recommendation, Violation, NORMAL,
};
pub use ruleset::{Rule, RuleSet, StageRelation};
pub use table::{Cell, DataTable, NumericData};
pub use workflow::{
    validate_state, ExecutedStep, Slot, StateViolation, StepOrigin, StepSpec, StepStatus, WorkflowState,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("variable name must be non-empty")]
    EmptyName,
    #[error("duplicate variable {0:?}")]
    DuplicateVariable(String),
    #[error("variable {name:?}: tolerance lo ({lo}) must be below hi ({hi})")]
    InvalidTolerance { name: String, lo: f64, hi: f64 },
    #[error("stage indices must be contiguous; stage {missing} is missing")]
    NonContiguousStages { missing: u32 },
    #[error("duplicate stage id {0:?}")]
    DuplicateStage(String),
    #[error("unknown stage id {0:?}")]
    UnknownStage(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("rule set has more than one rule for the same (src_type, dst_type, stage_relation)")]
    DuplicateRule,
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("column {0:?} is not numeric")]
    NonNumeric(String),
    #[error("invalid agent card: {0}")]
    InvalidCard(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use serde_json::json;

    #[test]
    fn empty_catalog_is_valid() {
        let c = load_catalog(r#"{"variables": []}"#).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn two_stage_three_controls() {
        let doc = json!({"variables": [
            {"name": "SetAngle_3", "var_type": "Control", "stage": 3},
            {"name": "GrindDepth_3", "var_type": "Control", "stage": 3},
        ]});
        let c = load_catalog(&doc.to_string()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("GrindDepth_3").unwrap().var_type, VarType::Control);
    }

    #[test]
    fn stage_gap_is_rejected() {
        let doc = json!({"variables": [
            {"name": "SetAngle_1", "var_type": "Control", "stage": 1},
            {"name": "GrindDepth_3", "var_type": "Control", "stage": 3},
        ]});
        assert_eq!(
            load_catalog(&doc.to_string()),
            Err(DomainError::NonContiguousStages { missing: 2 })
        );
    }

    #[test]
    fn degenerate_tolerance_names_entry() {
        let doc = json!({"variables": [
            {"name": "Dist_1", "var_type": "Observation", "stage": 1, "tolerance": {"lo": 5.0, "hi": 5.0}},
        ]});
        match load_catalog(&doc.to_string()) {
            Err(DomainError::InvalidTolerance { name, .. }) => assert_eq!(name, "Dist_1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let doc = json!({"variables": [
            {"name": "X", "var_type": "Observation"},
            {"name": "X", "var_type": "Control"},
        ]});
        assert_eq!(load_catalog(&doc.to_string()), Err(DomainError::DuplicateVariable("X".into())));
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_catalog("{not json"), Err(DomainError::Parse(_))));
        assert!(matches!(load_catalog(r#"{"variables": [{"name": "x"}]}"#), Err(DomainError::Parse(_))));
    }

    #[test]
    fn process_graph_rejects_unknown_variable() {
        let c = VariableCatalog::from_entries(vec![CatalogEntry {
            name: "A".into(),
            info: VariableInfo::new(VarType::Control, 1),
        }])
        .unwrap();
        let mut g = ProcessGraph::from_catalog(&c);
        assert!(g.validate(&c).is_ok());
        g.stage_variables.get_mut("1").unwrap().push("Ghost".into());
        assert_eq!(g.validate(&c), Err(DomainError::UnknownVariable("Ghost".into())));
        g.stages.push("1".into());
        assert!(matches!(g.validate(&c), Err(DomainError::DuplicateStage(_))));
    }

    #[test]
    fn ragged_rows_rejected() {
        let r = DataTable::new(vec!["a".into(), "b".into()], vec![vec![Cell::Num(1.0)]]);
        assert!(matches!(r, Err(DomainError::RaggedRow { row: 0, .. })));
    }

    #[test]
    fn card_validation() {
        let card = AgentCard::new("p", "1", "http://localhost:9000").with_capability("preprocessing");
        assert!(card.validate().is_ok());
        let no_caps = AgentCard::new("p", "1", "http://localhost:9000");
        assert!(matches!(no_caps.validate(), Err(DomainError::InvalidCard(_))));
        let bad_url = AgentCard::new("p", "1", "not a url").with_capability("x");
        assert!(bad_url.validate().is_err());
        let bad_map = AgentCard::new("a", "1", "local://a")
            .with_capability("anomaly")
            .with_schemas(&["data_ref"], &["status"])
            .with_rule(PostprocessRule {
                trigger: Trigger { field: "status".into(), op: TriggerOp::Ne, value: json!("Normal") },
                next_capability: "rca".into(),
                input_mapping: [("missing".into(), "x".into())].into_iter().collect(),
                auto_chain: true,
            });
        assert!(bad_map.validate().is_err());
    }

    #[test]
    fn trigger_ops() {
        let out = json!({"status": "Anomaly_A", "auto": ["rca"], "nested": {"k": 1}});
        let t = |field: &str, op, value| Trigger { field: String::from(field), op, value };
        assert!(t("status", TriggerOp::Ne, json!("Normal")).matches(&out));
        assert!(!t("status", TriggerOp::Eq, json!("Normal")).matches(&out));
        assert!(t("auto", TriggerOp::Contains, json!("rca")).matches(&out));
        assert!(t("nested.k", TriggerOp::Exists, json!(null)).matches(&out));
        assert!(!t("absent", TriggerOp::Ne, json!("Normal")).matches(&out));
    }

    fn step(seq: u32, cap: Capability, status: StepStatus, slot: Option<Slot>) -> ExecutedStep {
        ExecutedStep {
            seq,
            capability: cap,
            agent: "a".into(),
            status,
            started_ms: 0,
            ended_ms: 0,
            cache_hit: false,
            origin: StepOrigin::Planned,
            slot_written: slot,
            consumed: Vec::new(),
            error: None,
        }
    }

    #[test]
    fn fresh_state_has_no_violations() {
        assert!(validate_state(&WorkflowState::new("q", "d.csv")).is_empty());
    }

    #[test]
    fn gap_in_seq_is_one_violation() {
        let mut s = WorkflowState::new("q", "d.csv");
        s.slots.insert(Slot::Preprocessing, json!({}));
        s.slots.insert(Slot::Anomaly, json!({}));
        s.trace.push(step(1, Capability::Preprocessing, StepStatus::Success, Some(Slot::Preprocessing)));
        s.trace.push(step(3, Capability::Anomaly, StepStatus::Success, Some(Slot::Anomaly)));
        let v = validate_state(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("non-contiguous seq"));
    }

    #[test]
    fn success_without_slot_is_flagged() {
        let mut s = WorkflowState::new("q", "d.csv");
        s.trace.push(step(1, Capability::Anomaly, StepStatus::Success, None));
        assert_eq!(validate_state(&s), vec![StateViolation::SuccessWithoutSlot { seq: 1 }]);
        // claims a slot that was never filled
        s.trace[0].slot_written = Some(Slot::Anomaly);
        assert_eq!(validate_state(&s), vec![StateViolation::SlotNotFilled { seq: 1, slot: Slot::Anomaly }]);
        // failed steps write nothing and are fine
        s.trace[0].status = StepStatus::Failed;
        assert!(validate_state(&s).is_empty());
    }

    #[test]
    fn graph_cycle_detection() {
        let e = |a: &str, b: &str| GraphEdge { src: a.into(), dst: b.into(), directed: true, stat: 0.0 };
        let mut g = CausalGraph::empty(vec!["a".into(), "b".into(), "c".into()], Algorithm::Pc);
        g.edges = vec![e("a", "b"), e("b", "c")];
        assert!(g.is_acyclic());
        assert_eq!(g.ancestors("c").len(), 2);
        g.edges.push(e("c", "a"));
        assert!(!g.is_acyclic());
    }
}
