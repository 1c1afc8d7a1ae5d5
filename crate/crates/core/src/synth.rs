//! Synthetic multi-stage grinding line: a linear-Gaussian SCM whose edges
//! follow the default admissibility rules, with optional interventions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Algorithm, CatalogEntry, CausalGraph, DataTable, GraphEdge, NumericData, VarType, VariableCatalog, VariableInfo,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("need at least 100 rows, got {0}")]
    TooFewRows(usize),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("need at least one stage and two variables per stage (stages={stages}, variables={variables})")]
    BadShape { stages: u32, variables: usize },
    #[error("intervention rows {start}..{end} exceed the {n} generated rows")]
    RowsOutOfRange { start: usize, end: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthVar {
    pub name: String,
    pub var_type: VarType,
    pub stage: u32,
    pub unit: String,
    pub description: String,
}

/// Mean shift of `shift`·σ on the noise of `node` for rows
/// `row_start..row_start + row_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub node: String,
    pub shift: f64,
    pub row_start: usize,
    pub row_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub stages: u32,
    pub variables: Vec<SynthVar>,
    #[serde(default)]
    pub interventions: Vec<Intervention>,
}

// Extra variables beyond the per-stage SetAngle/Dist pair, in fill order.
const EXTRAS: &[(&str, VarType, &str, &str)] = &[
    ("GrindDepth", VarType::Control, "mm", "Grinding depth set-point"),
    ("Angle", VarType::Observation, "deg", "Measured edge angle"),
    ("Speed", VarType::Control, "rpm", "Wheel speed set-point"),
    ("Duration", VarType::Control, "s", "Grinding duration"),
    ("Force", VarType::Observation, "N", "Measured normal force"),
    ("Temp", VarType::Observation, "degC", "Measured workpiece temperature"),
];

fn var(name: String, var_type: VarType, stage: u32, unit: &str, what: &str) -> SynthVar {
    SynthVar { name, var_type, stage, unit: unit.into(), description: format!("{what}, stage {stage}") }
}

impl SyntheticSpec {
    /// The default line: per stage SetAngle and GrindDepth controls and a
    /// Dist observation.
    pub fn grinding(stages: u32) -> Self {
        Self::sized(stages, 3 * stages as usize).expect("3 variables per stage is always valid")
    }

    /// `stages` stages and `m` variables in total. Each stage gets
    /// SetAngle (control) and Dist (observation); remaining slots are
    /// dealt round-robin over stages from a fixed list of extras.
    pub fn sized(stages: u32, m: usize) -> Result<Self, SynthError> {
        if stages == 0 || m < 2 * stages as usize {
            return Err(SynthError::BadShape { stages, variables: m });
        }
        let k = stages as usize;
        let mut per_stage: Vec<Vec<SynthVar>> = (1..=stages)
            .map(|s| {
                vec![
                    var(format!("SetAngle_{s}"), VarType::Control, s, "deg", "Wheel angle set-point"),
                    var(format!("Dist_{s}"), VarType::Observation, s, "mm", "Measured edge distance"),
                ]
            })
            .collect();
        for r in 0..m - 2 * k {
            let s = (r % k) as u32 + 1;
            let slot = r / k;
            let v = match EXTRAS.get(slot) {
                Some(&(base, t, unit, what)) => var(format!("{base}_{s}"), t, s, unit, what),
                None => {
                    let t = if slot % 2 == 0 { VarType::Control } else { VarType::Observation };
                    var(format!("Aux{slot}_{s}"), t, s, "", "Auxiliary signal")
                }
            };
            per_stage[(s - 1) as usize].push(v);
        }
        Ok(Self { stages, variables: per_stage.into_iter().flatten().collect(), interventions: Vec::new() })
    }

    pub fn with_intervention(mut self, node: &str, shift: f64, row_start: usize, row_count: usize) -> Self {
        self.interventions.push(Intervention { node: node.into(), shift, row_start, row_count });
        self
    }

    pub fn catalog_entries(&self) -> Vec<CatalogEntry> {
        self.variables
            .iter()
            .map(|v| CatalogEntry {
                name: v.name.clone(),
                info: VariableInfo {
                    unit: v.unit.clone(),
                    location: "grinding_line".into(),
                    subsystem: format!("stage_{}", v.stage),
                    ..VariableInfo::new(v.var_type, v.stage).with_description(v.description.clone())
                },
            })
            .collect()
    }

    /// Ground-truth parent lists (indices into `variables`): every
    /// observation depends on all same-stage controls and on one
    /// observation of the previous stage (same position within the stage's
    /// observations if it exists, else the first).
    pub fn structure(&self) -> Vec<Vec<usize>> {
        let obs_of = |s: u32| -> Vec<usize> {
            (0..self.variables.len())
                .filter(|&i| self.variables[i].stage == s && self.variables[i].var_type == VarType::Observation)
                .collect()
        };
        self.variables
            .iter()
            .map(|v| {
                if v.var_type == VarType::Control {
                    return Vec::new();
                }
                let mut ps: Vec<usize> = (0..self.variables.len())
                    .filter(|&i| self.variables[i].stage == v.stage && self.variables[i].var_type == VarType::Control)
                    .collect();
                if v.stage > 1 {
                    let here = obs_of(v.stage);
                    let prev = obs_of(v.stage - 1);
                    let pos = here.iter().position(|&i| self.variables[i].name == v.name).unwrap_or(0);
                    if let Some(&p) = prev.get(pos).or(prev.first()) {
                        ps.push(p);
                    }
                }
                ps
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: NumericData,
    pub catalog: VariableCatalog,
    pub truth: CausalGraph,
    /// Per row: the intervened node, or `None` for clean rows.
    pub labels: Vec<Option<String>>,
    pub coefficients: BTreeMap<String, BTreeMap<String, f64>>,
    /// Analytic un-intervened mean and standard deviation per variable.
    pub means: BTreeMap<String, f64>,
    pub stds: BTreeMap<String, f64>,
}

impl SyntheticDataset {
    pub fn table(&self) -> DataTable {
        self.data.clone().into_table()
    }

    /// Rows carrying any intervention label.
    pub fn anomalous_rows(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| l.is_some()).map(|(i, _)| i).collect()
    }
}

fn signed_coefficient(rng: &mut ChaCha8Rng) -> f64 {
    let mag = rng.random_range(0.5..=1.5);
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

pub fn generate(spec: &SyntheticSpec, n_rows: usize, seed: u64) -> Result<SyntheticDataset, SynthError> {
    if n_rows < 100 {
        return Err(SynthError::TooFewRows(n_rows));
    }
    let m = spec.variables.len();
    if spec.stages == 0 || m < 2 {
        return Err(SynthError::BadShape { stages: spec.stages, variables: m });
    }
    let index: BTreeMap<&str, usize> = spec.variables.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    let mut shifts: Vec<(usize, f64, usize, usize)> = Vec::new();
    for iv in &spec.interventions {
        let &node = index.get(iv.node.as_str()).ok_or_else(|| SynthError::UnknownVariable(iv.node.clone()))?;
        let end = iv.row_start + iv.row_count;
        if end > n_rows {
            return Err(SynthError::RowsOutOfRange { start: iv.row_start, end, n: n_rows });
        }
        shifts.push((node, iv.shift, iv.row_start, end));
    }

    let parents = spec.structure();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<f64> = spec
        .variables
        .iter()
        .map(|v| if v.var_type == VarType::Control { rng.random_range(5.0..50.0) } else { 0.0 })
        .collect();
    let coefs: Vec<Vec<f64>> = parents.iter().map(|ps| ps.iter().map(|_| signed_coefficient(&mut rng)).collect()).collect();

    // analytic moments: x = B x + c + e  =>  mean = (I-B)^-1 c, cov = A A'
    let mut b = DMatrix::<f64>::zeros(m, m);
    for (j, ps) in parents.iter().enumerate() {
        for (k, &p) in ps.iter().enumerate() {
            b[(j, p)] = coefs[j][k];
        }
    }
    let a = (DMatrix::identity(m, m) - b)
        .try_inverse()
        .expect("stage-ordered structure is acyclic, so I - B is unit triangular up to permutation");
    let mu = &a * nalgebra::DVector::from_vec(offsets.clone());
    let cov = &a * a.transpose();

    // parents always precede children within a stage, and stages are ascending
    let order: Vec<usize> = {
        let mut o: Vec<usize> = (0..m).collect();
        o.sort_by_key(|&i| (spec.variables[i].stage, spec.variables[i].var_type == VarType::Observation, i));
        o
    };
    let mut columns = vec![vec![0.0; n_rows]; m];
    let mut labels: Vec<Option<String>> = vec![None; n_rows];
    for row in 0..n_rows {
        for &j in &order {
            let mut e: f64 = rng.sample(StandardNormal);
            for &(node, shift, start, end) in &shifts {
                if node == j && (start..end).contains(&row) {
                    e += shift;
                    labels[row] = Some(spec.variables[j].name.clone());
                }
            }
            let mut x = offsets[j] + e;
            for (k, &p) in parents[j].iter().enumerate() {
                x += coefs[j][k] * columns[p][row];
            }
            columns[j][row] = x;
        }
    }

    let mut means = BTreeMap::new();
    let mut stds = BTreeMap::new();
    let mut entries = spec.catalog_entries();
    for (i, e) in entries.iter_mut().enumerate() {
        let sd = libm::sqrt(cov[(i, i)]);
        e.info = e.info.clone().with_tolerance(mu[i] - 3.0 * sd, mu[i] + 3.0 * sd);
        means.insert(e.name.clone(), mu[i]);
        stds.insert(e.name.clone(), sd);
    }
    let catalog = VariableCatalog::from_entries(entries).expect("generated catalog is valid");

    let names: Vec<String> = spec.variables.iter().map(|v| v.name.clone()).collect();
    let mut truth = CausalGraph::empty(names.clone(), Algorithm::Ges);
    let mut coefficients: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (j, ps) in parents.iter().enumerate() {
        for (k, &p) in ps.iter().enumerate() {
            truth.edges.push(GraphEdge { src: names[p].clone(), dst: names[j].clone(), directed: true, stat: coefs[j][k] });
            coefficients.entry(names[j].clone()).or_default().insert(names[p].clone(), coefs[j][k]);
        }
    }
    let data = NumericData::new(names, columns).expect("columns have equal length");
    Ok(SyntheticDataset { data, catalog, truth, labels, coefficients, means, stds })
}
