//! Edge admissibility from variable type and process stage.
//!
//! The default rule set admits exactly three kinds of edge:
//! control → observation in the same stage, control → observation in a
//! later stage, and observation → observation in a strictly later stage.
//! Everything else is forbidden (closed world). Under these rules every
//! admissible edge points forward in [`stage_order`], so any admissible
//! edge set is acyclic.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::domain::{Rule, RuleSet, StageRelation, VarType, VariableCatalog, VariableInfo};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RulesError {
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeQuery<'a> {
    pub src: &'a str,
    pub dst: &'a str,
}

impl<'a> EdgeQuery<'a> {
    pub fn new(src: &'a str, dst: &'a str) -> Self {
        Self { src, dst }
    }
}

pub fn default_ruleset() -> RuleSet {
    use StageRelation::*;
    use VarType::*;
    RuleSet::new(
        alloc::vec![
            Rule::allow(Control, Observation, Same),
            Rule::allow(Control, Observation, StrictlyLater),
            Rule::allow(Observation, Observation, StrictlyLater),
        ],
        false,
    )
    .expect("default rules are distinct")
}

fn admissible_info(src: &VariableInfo, dst: &VariableInfo, rules: &RuleSet) -> bool {
    rules.evaluate((src.var_type, src.stage), (dst.var_type, dst.stage))
}

pub fn is_admissible(q: EdgeQuery<'_>, catalog: &VariableCatalog, rules: &RuleSet) -> Result<bool, RulesError> {
    let src = catalog.get(q.src).ok_or_else(|| RulesError::UnknownVariable(q.src.into()))?;
    let dst = catalog.get(q.dst).ok_or_else(|| RulesError::UnknownVariable(q.dst.into()))?;
    if q.src == q.dst {
        return Ok(false);
    }
    Ok(admissible_info(src, dst, rules))
}

/// Every ordered pair of catalog variables that is not admissible, self-loops included.
pub fn forbidden_edges(catalog: &VariableCatalog, rules: &RuleSet) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for (a, ia) in catalog.iter() {
        for (b, ib) in catalog.iter() {
            if a == b || !admissible_info(ia, ib, rules) {
                out.insert((a.into(), b.into()));
            }
        }
    }
    out
}

pub fn admissible_edges(catalog: &VariableCatalog, rules: &RuleSet) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for (a, ia) in catalog.iter() {
        for (b, ib) in catalog.iter() {
            if a != b && admissible_info(ia, ib, rules) {
                out.insert((a.into(), b.into()));
            }
        }
    }
    out
}

fn order_key<'a>(name: &'a str, info: Option<&VariableInfo>) -> (u32, u8, &'a str) {
    let (stage, ty) = info.map_or((u32::MAX, 2), |i| {
        (i.stage, if i.var_type == VarType::Control { 0 } else { 1 })
    });
    (stage, ty, name)
}

/// Compares variables by (stage, control before observation, name).
/// Variables missing from the catalog sort last.
pub fn stage_cmp(catalog: &VariableCatalog, a: &str, b: &str) -> Ordering {
    order_key(a, catalog.get(a)).cmp(&order_key(b, catalog.get(b)))
}

/// Catalog variables sorted by (stage, control before observation, name).
pub fn stage_order(catalog: &VariableCatalog) -> Vec<String> {
    let mut names: Vec<&str> = catalog.names().collect();
    names.sort_by(|a, b| stage_cmp(catalog, a, b));
    names.into_iter().map(String::from).collect()
}

/// Dense admissibility predicate over an ordered variable list, as consumed
/// by the structure learners.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admissibility {
    names: Vec<String>,
    allowed: Vec<bool>,
}

impl Admissibility {
    /// Rules are evaluated per pair. A pair with an unstaged endpoint
    /// (stage 0) cannot be judged on process order, so it is left
    /// unconstrained in both directions.
    pub fn from_rules(names: &[String], catalog: &VariableCatalog, rules: &RuleSet) -> Result<Self, RulesError> {
        let infos: Vec<&VariableInfo> = names
            .iter()
            .map(|n| catalog.get(n).ok_or_else(|| RulesError::UnknownVariable(n.clone())))
            .collect::<Result<_, _>>()?;
        let m = names.len();
        let mut allowed = alloc::vec![false; m * m];
        for i in 0..m {
            for j in 0..m {
                let unstaged = infos[i].stage == 0 || infos[j].stage == 0;
                allowed[i * m + j] = i != j && (unstaged || admissible_info(infos[i], infos[j], rules));
            }
        }
        Ok(Self { names: names.to_vec(), allowed })
    }

    /// Admits exactly the listed directed pairs.
    pub fn from_pairs<'a>(names: &[String], pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let m = names.len();
        let mut allowed = alloc::vec![false; m * m];
        for (a, b) in pairs {
            let (Some(i), Some(j)) = (names.iter().position(|n| n == a), names.iter().position(|n| n == b)) else {
                continue;
            };
            if i != j {
                allowed[i * m + j] = true;
            }
        }
        Self { names: names.to_vec(), allowed }
    }

    /// Everything except self-loops.
    pub fn unconstrained(names: &[String]) -> Self {
        let m = names.len();
        let allowed = (0..m * m).map(|k| k / m != k % m).collect();
        Self { names: names.to_vec(), allowed }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.names.len() + j]
    }

    pub fn allows_either(&self, i: usize, j: usize) -> bool {
        self.allows(i, j) || self.allows(j, i)
    }
}

#[cfg(test)]
mod tests {
    extern crate std;

    use super::*;
    use crate::domain::{CatalogEntry, VariableInfo};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_stage_catalog() -> VariableCatalog {
        let e = |n: &str, t, s| CatalogEntry { name: n.into(), info: VariableInfo::new(t, s) };
        VariableCatalog::from_entries(vec![
            e("C4", VarType::Control, 4),
            e("O4", VarType::Observation, 4),
            e("C10", VarType::Control, 5),
            e("O10", VarType::Observation, 5),
        ])
        .unwrap()
    }

    fn adm(c: &VariableCatalog, a: &str, b: &str) -> bool {
        is_admissible(EdgeQuery::new(a, b), c, &default_ruleset()).unwrap()
    }

    #[test]
    fn two_stage_examples() {
        let c = two_stage_catalog();
        assert!(adm(&c, "C4", "O4"));
        assert!(!adm(&c, "O10", "O4"));
        assert!(!adm(&c, "C4", "C10"));
        assert!(adm(&c, "C4", "O10"));
        assert!(!adm(&c, "O4", "C10"));
        assert!(!adm(&c, "C4", "C4"));
    }

    #[test]
    fn unknown_variable_is_error() {
        let c = two_stage_catalog();
        assert_eq!(
            is_admissible(EdgeQuery::new("C4", "Nope"), &c, &default_ruleset()),
            Err(RulesError::UnknownVariable("Nope".into()))
        );
    }

    #[test]
    fn forbidden_set_edge_cases() {
        assert!(forbidden_edges(&VariableCatalog::default(), &default_ruleset()).is_empty());
        let one = VariableCatalog::from_entries(vec![CatalogEntry {
            name: "X".into(),
            info: VariableInfo::new(VarType::Observation, 1),
        }])
        .unwrap();
        let f = forbidden_edges(&one, &default_ruleset());
        assert_eq!(f.len(), 1);
        assert!(f.contains(&("X".into(), "X".into())));
    }

    #[test]
    fn stage_order_key() {
        assert_eq!(stage_order(&two_stage_catalog()), vec!["C4", "O4", "C10", "O10"]);
        let c = VariableCatalog::from_entries(vec![
            CatalogEntry { name: "B_obs_2".into(), info: VariableInfo::new(VarType::Observation, 2) },
            CatalogEntry { name: "A_obs_2".into(), info: VariableInfo::new(VarType::Observation, 2) },
        ])
        .unwrap();
        assert_eq!(stage_order(&c), vec!["A_obs_2", "B_obs_2"]);
    }

    #[test]
    fn explicit_forbid_overrides_allow() {
        use StageRelation::*;
        use VarType::*;
        let rules = RuleSet::new(
            vec![Rule::allow(Observation, Observation, SameOrLater), Rule::forbid(Observation, Observation, Same)],
            false,
        )
        .unwrap();
        assert!(rules.evaluate((Observation, 1), (Observation, 2)));
        assert!(!rules.evaluate((Observation, 2), (Observation, 2)));
        assert!(RuleSet::new(vec![Rule::allow(Control, Control, Same), Rule::forbid(Control, Control, Same)], false)
            .is_err());
    }

    #[test]
    fn purity_over_repeated_calls() {
        let c = two_stage_catalog();
        let first = adm(&c, "C4", "O10");
        assert!((0..10_000).all(|_| adm(&c, "C4", "O10") == first));
    }

    #[test]
    fn antisymmetry_on_random_catalogs() {
        let rules = default_ruleset();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = rng.random_range(1..=10);
            let k = rng.random_range(1..=4u32);
            let entries = (0..m).map(|i| CatalogEntry {
                name: alloc::format!("v{i}"),
                info: VariableInfo::new(
                    if rng.random_bool(0.5) { VarType::Control } else { VarType::Observation },
                    rng.random_range(1..=k),
                ),
            });
            let Ok(cat) = VariableCatalog::from_entries(entries.collect::<Vec<_>>()) else { continue };
            for a in cat.names() {
                for b in cat.names() {
                    let ab = is_admissible(EdgeQuery::new(a, b), &cat, &rules).unwrap();
                    let ba = is_admissible(EdgeQuery::new(b, a), &cat, &rules).unwrap();
                    assert!(!(ab && ba), "{a} <-> {b}");
                }
            }
        }
    }
}
