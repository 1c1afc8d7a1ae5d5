//! Deterministic keyword planner over the nine workflow templates, and the
//! replanner's pruning rules.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Serialize;
use serde_json::Value;

use crate::domain::{Capability, Slot, StepSpec, WorkflowState, NORMAL};

use Capability::{Anomaly as A, BackgroundInfo as B, Causal as C, Preprocessing as P, Rca as R, Recommend as Rec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanTemplate {
    pub id: &'static str,
    pub steps: &'static [Capability],
    pub cacheable: &'static [Capability],
    /// Every group must match (any alternative within a group).
    #[serde(skip)]
    pub keywords: &'static [&'static [&'static str]],
}

impl PlanTemplate {
    pub fn step_specs(&self) -> Vec<StepSpec> {
        self.steps
            .iter()
            .map(|&c| if self.cacheable.contains(&c) { StepSpec::cached(c) } else { StepSpec::new(c) })
            .collect()
    }
}

const DESCRIBE: &[&str] = &["describe", "what is", "what are", "explain"];
const ANOMALY: &[&str] = &["anomal", "detect", "outlier"];
const DISCOVER: &[&str] = &["causal graph", "discover", "causal structure"];
const ROOT_CAUSE: &[&str] = &["root cause", "why"];
const RERUN: &[&str] = &["again", "rerun", "re-run", "reuse"];
/// Pseudo keyword matched when the query names a data file.
const FILE: &str = "<file>";

pub const TEMPLATES: [PlanTemplate; 9] = [
    PlanTemplate { id: "W1", steps: &[P, Rec], cacheable: &[], keywords: &[&["clean", "summariz"]] },
    PlanTemplate { id: "W2", steps: &[P, B, Rec], cacheable: &[], keywords: &[DESCRIBE, &[FILE]] },
    PlanTemplate { id: "W3", steps: &[B, Rec], cacheable: &[], keywords: &[DESCRIBE] },
    PlanTemplate { id: "W4", steps: &[P, A, Rec], cacheable: &[P], keywords: &[ANOMALY] },
    PlanTemplate { id: "W5", steps: &[P, B, C, Rec], cacheable: &[P], keywords: &[DISCOVER] },
    PlanTemplate { id: "W6", steps: &[P, A, C, R, Rec], cacheable: &[P, C], keywords: &[ROOT_CAUSE] },
    PlanTemplate { id: "W7", steps: &[P, A, C, Rec], cacheable: &[P], keywords: &[ANOMALY, DISCOVER] },
    PlanTemplate { id: "W8", steps: &[P, A, B, C, R, Rec], cacheable: &[], keywords: &[&["diagnos"]] },
    PlanTemplate { id: "W9", steps: &[P, A, C, R, Rec], cacheable: &[P, C], keywords: &[ROOT_CAUSE, RERUN] },
];

pub fn template(id: &str) -> Option<&'static PlanTemplate> {
    TEMPLATES.iter().find(|t| t.id == id)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("empty query")]
    EmptyQuery,
    #[error("no workflow matches the query; keywords tried: {0}")]
    UnplannableQuery(String),
    #[error("unknown capability {0:?} in external plan")]
    UnknownCapability(String),
}

fn names_file(query: &str) -> bool {
    query.split_whitespace().any(|tok| {
        let tok = tok.trim_matches(|c: char| matches!(c, ',' | ';' | '?' | '!' | '"' | '\'' | '(' | ')'));
        tok.rsplit_once('.').is_some_and(|(stem, ext)| {
            !stem.is_empty() && (1..=5).contains(&ext.len()) && ext.chars().all(|c| c.is_ascii_alphanumeric())
                && ext.chars().any(|c| c.is_ascii_alphabetic())
        })
    })
}

fn group_matches(query: &str, group: &[&str], has_file: bool) -> bool {
    group.iter().any(|k| if *k == FILE { has_file } else { query.contains(k) })
}

/// Template chosen for `query`: all keyword groups must match; the most
/// specific (most groups, then longest) wins, ties to the lowest id.
pub fn select_template(query: &str) -> Result<&'static PlanTemplate, PlanError> {
    let q = query.to_lowercase();
    if q.trim().is_empty() {
        return Err(PlanError::EmptyQuery);
    }
    let has_file = names_file(&q);
    let mut best: Option<&PlanTemplate> = None;
    for t in &TEMPLATES {
        if !t.keywords.iter().all(|g| group_matches(&q, g, has_file)) {
            continue;
        }
        let key = |t: &PlanTemplate| (t.keywords.len(), t.steps.len());
        // strict comparison keeps the earlier (lower id) template on ties
        if best.is_none_or(|b| key(t) > key(b)) {
            best = Some(t);
        }
    }
    best.ok_or_else(|| {
        let tried: Vec<String> = TEMPLATES
            .iter()
            .map(|t| {
                let groups: Vec<String> = t.keywords.iter().map(|g| g.join("|")).collect();
                alloc::format!("{}=[{}]", t.id, groups.join(" & "))
            })
            .collect();
        PlanError::UnplannableQuery(tried.join(", "))
    })
}

fn drop_cached(steps: Vec<StepSpec>, state: &WorkflowState) -> Vec<StepSpec> {
    steps.into_iter().filter(|s| !(s.cacheable && state.is_filled(s.capability.slot()))).collect()
}

/// Plans `query`: the matched template minus cacheable steps whose slot is
/// already filled. The plan is appended to `state.plan`.
pub fn plan(query: &str, state: &mut WorkflowState) -> Result<Vec<StepSpec>, PlanError> {
    let t = select_template(query)?;
    let steps = drop_cached(t.step_specs(), state);
    state.planned.extend(t.steps.iter().copied());
    state.plan.extend(steps.iter().cloned());
    Ok(steps)
}

/// Accepts a capability list from an external planner. Steps are marked
/// cacheable by the matched template when one exists.
pub fn plan_from_list(tags: &[String], query: &str, state: &mut WorkflowState) -> Result<Vec<StepSpec>, PlanError> {
    let caps: Vec<Capability> = tags
        .iter()
        .map(|t| Capability::parse(t).ok_or_else(|| PlanError::UnknownCapability(t.to_string())))
        .collect::<Result<_, _>>()?;
    if caps.is_empty() {
        return Err(PlanError::UnplannableQuery("external planner returned no steps".into()));
    }
    let cacheable: &[Capability] = select_template(query).map_or(&[], |t| t.cacheable);
    let specs = caps.iter().map(|&c| if cacheable.contains(&c) { StepSpec::cached(c) } else { StepSpec::new(c) }).collect();
    let steps = drop_cached(specs, state);
    state.planned.extend(caps);
    state.plan.extend(steps.iter().cloned());
    Ok(steps)
}

pub fn anomaly_status(state: &WorkflowState) -> Option<&str> {
    state.slot(Slot::Anomaly)?.get("status").and_then(Value::as_str)
}

/// Prunes the pending plan: a Normal anomaly status removes causal and rca,
/// and any step whose slot is already filled goes. Removed capabilities are
/// recorded in `state.pruned`; the remaining plan is returned.
pub fn replan(state: &mut WorkflowState) -> Vec<StepSpec> {
    let normal = anomaly_status(state) == Some(NORMAL);
    let mut kept = Vec::with_capacity(state.plan.len());
    for step in core::mem::take(&mut state.plan) {
        let c = step.capability;
        let skip_normal = normal && matches!(c, Capability::Causal | Capability::Rca);
        if skip_normal || state.is_filled(c.slot()) {
            state.pruned.push(c);
        } else {
            kept.push(step);
        }
    }
    state.plan = kept.clone();
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn caps(steps: &[StepSpec]) -> Vec<Capability> {
        steps.iter().map(|s| s.capability).collect()
    }

    #[test]
    fn templates_match_the_table() {
        let ids: Vec<&str> = TEMPLATES.iter().map(|t| t.id).collect();
        assert_eq!(ids, ["W1", "W2", "W3", "W4", "W5", "W6", "W7", "W8", "W9"]);
        assert_eq!(template("W8").unwrap().steps, &[P, A, B, C, R, Rec]);
        assert_eq!(template("W6").unwrap().steps, template("W9").unwrap().steps);
        assert!(TEMPLATES.iter().all(|t| t.cacheable.iter().all(|c| t.steps.contains(c))));
    }

    #[test]
    fn keyword_selection() {
        let pick = |q: &str| select_template(q).unwrap().id;
        assert_eq!(pick("clean and summarize run.csv"), "W1");
        assert_eq!(pick("describe the variables in run.csv"), "W2");
        assert_eq!(pick("what is SetAngle_3?"), "W3");
        assert_eq!(pick("detect anomalies in run.csv"), "W4");
        assert_eq!(pick("discover the causal graph of run.csv"), "W5");
        assert_eq!(pick("find the root causes of anomalies in run.csv"), "W6");
        assert_eq!(pick("detect anomalies and build the causal graph for run.csv"), "W7");
        assert_eq!(pick("diagnose the drift in run.csv"), "W8");
        assert_eq!(pick("find the root cause again for run.csv"), "W9");
    }

    #[test]
    fn plan_examples() {
        let mut s = WorkflowState::new("q", "run.csv");
        assert_eq!(caps(&plan("clean and summarize run.csv", &mut s).unwrap()), [P, Rec]);
        let mut s = WorkflowState::new("q", "run.csv");
        let q = "find the root causes of anomalies in run.csv";
        assert_eq!(caps(&plan(q, &mut s).unwrap()), [P, A, C, R, Rec]);
        assert_eq!(caps(&s.plan), [P, A, C, R, Rec]);
        let mut s = WorkflowState::new("q", "run.csv");
        s.slots.insert(Slot::Preprocessing, json!({}));
        assert_eq!(caps(&plan(q, &mut s).unwrap()), [A, C, R, Rec]);
        // W8 preprocessing is not cacheable
        assert_eq!(caps(&plan("diagnose run.csv", &mut s).unwrap())[0], P);
    }

    #[test]
    fn unplannable_and_empty() {
        let mut s = WorkflowState::default();
        assert!(matches!(plan("make coffee", &mut s), Err(PlanError::UnplannableQuery(d)) if d.contains("W8=[diagnos]")));
        assert_eq!(plan("  ", &mut s), Err(PlanError::EmptyQuery));
    }

    #[test]
    fn external_list_is_validated() {
        let mut s = WorkflowState::default();
        let tags = ["preprocessing".to_string(), "rca".to_string()];
        assert_eq!(caps(&plan_from_list(&tags, "why", &mut s).unwrap()), [P, R]);
        assert!(s.plan[0].cacheable);
        assert_eq!(plan_from_list(&["nope".into()], "why", &mut s), Err(PlanError::UnknownCapability("nope".into())));
    }

    #[test]
    fn replan_examples() {
        let mut s = WorkflowState::default();
        s.plan = vec![StepSpec::new(C), StepSpec::new(R), StepSpec::new(Rec)];
        s.slots.insert(Slot::Anomaly, json!({"status": "Normal"}));
        assert_eq!(caps(&replan(&mut s)), [Rec]);
        assert_eq!(s.pruned, [C, R]);

        let mut s = WorkflowState::default();
        assert!(replan(&mut s).is_empty());

        let mut s = WorkflowState::default();
        s.plan = vec![StepSpec::new(R)];
        s.slots.insert(Slot::Rca, json!({}));
        assert!(replan(&mut s).is_empty());
    }
}
