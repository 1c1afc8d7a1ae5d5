use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rcdiag_core::anomaly::{auto_backend, detect, threshold_check, DetectMode, DetectOptions, FOREST_ANOMALY};
use rcdiag_core::domain::{
    Algorithm, Backend, CatalogEntry, CausalGraph, GraphEdge, NumericData, VarType, VariableCatalog, VariableInfo,
    NORMAL,
};
use rcdiag_core::iforest::IsolationForest;
use rcdiag_core::rca::{choose_target, fit_scm, node_deviation, score_causes, DEFAULT_MAX_PATH_LEN};
use rcdiag_core::synth::{generate, SyntheticSpec};

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn graph(nodes: &[&str], edges: &[(&str, &str)]) -> CausalGraph {
    let mut g = CausalGraph::empty(names(nodes), Algorithm::Ges);
    g.edges = edges
        .iter()
        .map(|(a, b)| GraphEdge { src: a.to_string(), dst: b.to_string(), directed: true, stat: 0.0 })
        .collect();
    g
}

fn chain_catalog() -> VariableCatalog {
    VariableCatalog::from_entries([("X", 1), ("Y", 2), ("Z", 3)].map(|(n, s)| CatalogEntry {
        name: n.into(),
        info: VariableInfo::new(VarType::Observation, s),
    }))
    .unwrap()
}

/// X → Y → Z with coefficients 1.5 and −1.2; `shift` is added to X's noise.
fn chain_sample(rng: &mut ChaCha8Rng, shift: f64) -> [f64; 3] {
    let x = normal(rng) + shift;
    let y = 1.5 * x + normal(rng);
    let z = -1.2 * y + normal(rng);
    [x, y, z]
}

fn chain_reference(rng: &mut ChaCha8Rng, n: usize) -> NumericData {
    let mut cols = vec![Vec::with_capacity(n); 3];
    for _ in 0..n {
        for (c, v) in cols.iter_mut().zip(chain_sample(rng, 0.0)) {
            c.push(v);
        }
    }
    NumericData::new(names(&["X", "Y", "Z"]), cols).unwrap()
}

fn row_of(names: &[&str], values: &[f64]) -> BTreeMap<String, f64> {
    names.iter().map(|s| s.to_string()).zip(values.iter().copied()).collect()
}

// ---------- isolation forest ----------

fn blob_with_outlier(seed: u64, n: usize) -> NumericData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n - 1).map(|_| normal(&mut rng)).collect();
    let mut y: Vec<f64> = (0..n - 1).map(|_| normal(&mut rng)).collect();
    // 10σ away along a random direction
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    x.push(10.0 * a.cos());
    y.push(10.0 * a.sin());
    NumericData::new(names(&["x", "y"]), vec![x, y]).unwrap()
}

#[test]
fn training_scores_sit_near_half() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..500).map(|_| normal(&mut rng)).collect()).collect();
        let d = NumericData::new(names(&["a", "b", "c"]), cols).unwrap();
        let f = IsolationForest::fit(&d, 100, 256, seed).unwrap();
        let s = f.score_all(&d).unwrap();
        let m = s.iter().sum::<f64>() / s.len() as f64;
        assert!(m > 0.3 && m < 0.7, "seed {seed}: mean training score {m}");
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn forest_mode_flags_injected_outlier() {
    let d = blob_with_outlier(3, 1000);
    let opts = DetectOptions { seed: 3, ..DetectOptions::default() };
    let r = detect(&d, Some(999), &VariableCatalog::default(), DetectMode::Auto, &opts, "blob.csv", "evt-1").unwrap();
    assert_eq!(r.backend, Backend::IsolationForest);
    assert_eq!(r.status, FOREST_ANOMALY);
    assert!(r.score >= 0.6, "score {}", r.score);
    let p = r.rca_payload.expect("payload on anomaly");
    assert_eq!(p.event_ref, "evt-1");
    assert_eq!(p.data_ref, "blob.csv");
    assert_eq!(p.targets.len(), 1);
    // a typical row stays normal with the same model
    let typical = detect(&d, Some(0), &VariableCatalog::default(), DetectMode::Forest, &opts, "", "").unwrap();
    assert_eq!(typical.status, NORMAL);
    assert!(typical.rca_payload.is_none());
}

#[test]
fn pre_fitted_model_is_reused() {
    let d = blob_with_outlier(5, 300);
    let m = IsolationForest::fit(&d, 20, 64, 1).unwrap();
    let opts = DetectOptions { model: Some(m.clone()), ..DetectOptions::default() };
    let r = detect(&d, Some(299), &VariableCatalog::default(), DetectMode::Forest, &opts, "", "").unwrap();
    assert_eq!(r.score, m.score(&d.row(299)).unwrap());
}

// ---------- thresholds on the generator ----------

#[test]
fn grind_depth_intervention_violates_tolerance() {
    let spec = SyntheticSpec::grinding(4).with_intervention("GrindDepth_3", 4.0, 1000, 100);
    let ds = generate(&spec, 2000, 42).unwrap();
    let j = ds.data.index("GrindDepth_3").unwrap();
    let tol = ds.catalog.get("GrindDepth_3").unwrap().tolerance.unwrap();
    let mut flagged = 0;
    for i in 1000..1100 {
        let r = detect(&ds.data, Some(i), &ds.catalog, DetectMode::Auto, &DetectOptions::default(), "", "").unwrap();
        assert_eq!(r.backend, Backend::Threshold);
        let listed = r.violated_features.iter().any(|v| v.variable == "GrindDepth_3");
        // exact: listed iff the value is outside the closed band
        assert_eq!(listed, !tol.contains(ds.data.column(j)[i]), "row {i}");
        if listed {
            flagged += 1;
            assert!(r.rca_payload.as_ref().unwrap().targets.contains(&"GrindDepth_3".to_string()));
        }
    }
    // 4σ shift against a ±3σ band: Φ(1) ≈ 0.841, 4 standard errors ≈ 0.146
    assert!((flagged as f64 / 100.0 - 0.841).abs() < 0.146, "{flagged}/100");
}

#[test]
fn stage_shift_status_when_violations_share_a_stage() {
    let spec = SyntheticSpec::grinding(4).with_intervention("SetAngle_3", 6.0, 500, 50);
    let ds = generate(&spec, 1000, 7).unwrap();
    let r = detect(&ds.data, Some(520), &ds.catalog, DetectMode::Threshold, &DetectOptions::default(), "", "").unwrap();
    let stages: BTreeSet<u32> = r.violated_features.iter().map(|v| ds.catalog.get(&v.variable).unwrap().stage).collect();
    assert!(!r.violated_features.is_empty());
    if stages.len() == 1 {
        assert_eq!(r.status, "StageShift");
    } else {
        assert_eq!(r.status, "ToleranceViolation");
    }
}

fn catalog_strategy() -> impl Strategy<Value = VariableCatalog> {
    prop::collection::vec((any::<bool>(), 1u32..4, prop::option::of(-5.0f64..5.0)), 1..8).prop_map(|vs| {
        // stages must be contiguous: remap to 1..=k
        let mut stages: Vec<u32> = vs.iter().map(|v| v.1).collect();
        stages.sort();
        stages.dedup();
        VariableCatalog::from_entries(vs.iter().enumerate().map(|(i, (ctrl, s, lo))| {
            let st = stages.iter().position(|x| x == s).unwrap() as u32 + 1;
            let t = if *ctrl { VarType::Control } else { VarType::Observation };
            let mut info = VariableInfo::new(t, st);
            if let Some(lo) = lo {
                info = info.with_tolerance(*lo, lo + 2.0);
            }
            CatalogEntry { name: format!("v{i}"), info }
        }))
        .unwrap()
    })
}

proptest! {
    #[test]
    fn threshold_status_iff_violations(cat in catalog_strategy(), vals in prop::collection::vec(-10.0f64..10.0, 8)) {
        let row: BTreeMap<String, f64> = cat.names().zip(vals).map(|(n, v)| (n.to_string(), v)).collect();
        let r = threshold_check(&row, &cat);
        prop_assert_eq!(r.status == NORMAL, r.violated_features.is_empty());
        prop_assert!((0.0..=1.0).contains(&r.score));
    }

    #[test]
    fn auto_backend_ignores_data(cat in catalog_strategy(), a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let names: Vec<String> = cat.names().map(String::from).collect();
        let mk = |v: f64| NumericData::new(names.clone(), vec![vec![v, v + 1.0, v - 1.0]; names.len()]).unwrap();
        let opts = DetectOptions { trees: 5, psi: 3, ..DetectOptions::default() };
        let ra = detect(&mk(a), None, &cat, DetectMode::Auto, &opts, "", "").unwrap();
        let rb = detect(&mk(b), None, &cat, DetectMode::Auto, &opts, "", "").unwrap();
        prop_assert_eq!(ra.backend, rb.backend);
        prop_assert_eq!(ra.backend, auto_backend(&cat));
    }

    #[test]
    fn forest_scores_in_open_unit_interval(seed in 0u64..1000, probe in prop::collection::vec(-1e6f64..1e6, 2)) {
        let d = blob_with_outlier(seed, 50);
        let f = IsolationForest::fit(&d, 10, 32, seed).unwrap();
        let s = f.score(&probe).unwrap();
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!(f.max_height() <= 5);
    }
}

// ---------- RCA ----------

#[test]
fn chain_coefficient_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 5000;
    let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0 + normal(&mut rng)).collect();
    let d = NumericData::new(names(&["X", "Y"]), vec![x, y]).unwrap();
    let scm = fit_scm(&graph(&["X", "Y"], &[("X", "Y")]), &d).unwrap();
    let m = &scm.mechanisms["Y"];
    assert!((m.coefficients[0] - 2.0).abs() < 0.05, "coef {}", m.coefficients[0]);
    assert!((m.intercept - 3.0).abs() < 0.1);
    assert!((m.residual_sigma - 1.0).abs() < 0.05);
}

#[test]
fn chain_intervention_on_root_ranks_root_first() {
    let g = graph(&["X", "Y", "Z"], &[("X", "Y"), ("Y", "Z")]);
    let cat = chain_catalog();
    let mut top1 = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = chain_reference(&mut rng, 1000);
        let scm = fit_scm(&g, &reference).unwrap();
        let ev = chain_sample(&mut rng, 4.0);
        let report = score_causes(&scm, &g, &row_of(&["X", "Y", "Z"], &ev), "Z", &cat, DEFAULT_MAX_PATH_LEN).unwrap();
        if report.ranking()[0] == "X" {
            top1 += 1;
        }
        for c in &report.ranked_causes {
            assert!(c.combined_score >= 0.0 && c.combined_score.is_finite());
        }
        // every path head is a candidate; every structurally linked candidate has a path
        let ranked: BTreeSet<&str> = report.ranking().into_iter().collect();
        for p in &report.paths {
            assert!(ranked.contains(p.nodes[0].as_str()));
            assert_eq!(p.nodes.last().unwrap(), "Z");
        }
        for c in report.ranked_causes.iter().filter(|c| c.structural_score > 0.0) {
            assert!(report.paths.iter().any(|p| p.nodes[0] == c.variable));
        }
    }
    assert!(top1 >= 90, "top-1 {top1}/100");
}

#[test]
fn root_deviation_tracks_shift() {
    let spec = SyntheticSpec::grinding(4).with_intervention("SetAngle_1", 4.0, 2000, 100);
    let ds = generate(&spec, 2100, 42).unwrap();
    let reference = ds.data.select_rows(&(0..2000).collect::<Vec<_>>());
    let scm = fit_scm(&ds.truth, &reference).unwrap();
    let zs: Vec<f64> =
        (2000..2100).map(|i| node_deviation(&scm, &ds.data.row_map(i)).unwrap()["SetAngle_1"]).collect();
    let mean = zs.iter().sum::<f64>() / zs.len() as f64;
    assert!((mean - 4.0).abs() < 0.5, "mean z {mean}");
    // root at its reference mean deviates by zero
    let mut at_mean = ds.data.row_map(0);
    at_mean.insert("SetAngle_1".into(), scm.mechanisms["SetAngle_1"].intercept);
    assert!(node_deviation(&scm, &at_mean).unwrap()["SetAngle_1"] < 1e-9);
}

#[test]
fn self_originating_anomaly() {
    let g = graph(&["X", "Y", "Z"], &[("X", "Y"), ("Y", "Z")]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reference = chain_reference(&mut rng, 1000);
    let scm = fit_scm(&g, &reference).unwrap();
    // X and Y exactly at their predictions, Z off by 5
    let x = scm.mechanisms["X"].intercept;
    let my = &scm.mechanisms["Y"];
    let y = my.intercept + my.coefficients[0] * x;
    let mz = &scm.mechanisms["Z"];
    let z = mz.intercept + mz.coefficients[0] * y + 5.0;
    let r = score_causes(&scm, &g, &row_of(&["X", "Y", "Z"], &[x, y, z]), "Z", &chain_catalog(), 6).unwrap();
    assert_eq!(r.ranking()[0], "Z");
    assert!(r.ranked_causes[1..].iter().all(|c| c.combined_score < 1e-9));
}

#[test]
fn grinding_line_intervention_in_top_three() {
    let spec = SyntheticSpec::grinding(4).with_intervention("SetAngle_3", 4.0, 3000, 1);
    let ds = generate(&spec, 3001, 42).unwrap();
    let reference = ds.data.select_rows(&(0..3000).collect::<Vec<_>>());
    let scm = fit_scm(&ds.truth, &reference).unwrap();
    let row = ds.data.row_map(3000);
    let report = detect(&ds.data, Some(3000), &ds.catalog, DetectMode::Auto, &DetectOptions::default(), "", "").unwrap();
    let suggested = report.rca_payload.map(|p| p.targets).unwrap_or_default();
    let target = choose_target(&suggested, &ds.truth, &row, &reference).unwrap();
    let r = score_causes(&scm, &ds.truth, &row, &target, &ds.catalog, 6).unwrap();
    assert!(r.ranking().iter().take(3).any(|v| *v == "SetAngle_3"), "target {target}, ranking {:?}", r.ranking());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn ranking_ignores_row_order(seed in 0u64..500, perm in Just([2usize, 0, 1]).prop_shuffle()) {
        let g = graph(&["X", "Y", "Z"], &[("X", "Y"), ("Y", "Z")]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = chain_reference(&mut rng, 200);
        let scm = fit_scm(&g, &reference).unwrap();
        let ev = chain_sample(&mut rng, 3.0);
        let ns = ["X", "Y", "Z"];
        let a = score_causes(&scm, &g, &row_of(&ns, &ev), "Z", &chain_catalog(), 6).unwrap();
        // build the row map in a permuted insertion order
        let mut permuted = BTreeMap::new();
        for &k in perm.iter() {
            permuted.insert(ns[k].to_string(), ev[k]);
        }
        let b = score_causes(&scm, &g, &permuted, "Z", &chain_catalog(), 6).unwrap();
        prop_assert_eq!(a, b);
    }
}
