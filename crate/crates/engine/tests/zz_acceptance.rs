//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Named so cargo runs it after the other test
//! binaries.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rcdiag::config::EngineConfig;
use rcdiag::eval::{rca_trials, run_suite, scaling_run, stages_for};
use rcdiag::io;
use rcdiag::service::Service;
use rcdiag_core::discovery::{discover, ges_learn, AlgorithmChoice};
use rcdiag_core::domain::{
    Algorithm, CatalogEntry, CausalGraph, GraphEdge, NumericData, VarType, VariableCatalog, VariableInfo,
};
use rcdiag_core::iforest::IsolationForest;
use rcdiag_core::metrics::{hits_at_k, set_prf};
use rcdiag_core::rules::{admissible_edges, default_ruleset, is_admissible, stage_order, Admissibility, EdgeQuery};
use rcdiag_core::synth::{generate, SyntheticSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(results: &mut Vec<(String, bool)>, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
    let t = Instant::now();
    let o = f();
    let secs = t.elapsed();
    let pass = o.pass && secs <= limit;
    println!("{} {name}: {} [{:.1}s, limit {}s]", if pass { "PASS" } else { "FAIL" }, o.detail, secs.as_secs_f64(), limit.as_secs());
    results.push((name.to_string(), pass));
}

fn set(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn catalog(vars: &[(&str, VarType, u32)]) -> VariableCatalog {
    VariableCatalog::from_entries(
        vars.iter().map(|(n, t, s)| CatalogEntry { name: n.to_string(), info: VariableInfo::new(*t, *s) }),
    )
    .unwrap()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn golden_metrics() -> Outcome {
    // ranked, truth, (precision, recall, f1), [(k, hits@k)]
    type Row<'a> = (&'a [&'a str], &'a [&'a str], (f64, f64, f64), &'a [(usize, u8)]);
    let rows: [Row; 3] = [
        (&["SetAngle_4", "GrindDepth_4"], &["SetAngle_3", "GrindDepth_3", "GrindDepth_4"], (0.50, 0.33, 0.40), &[(1, 0), (2, 1)]),
        (
            &["SetAngle_3", "GrindDepth_E_12", "GrindDepth_E_9", "SetAngle_4", "SetAngle_2"],
            &["GrindDepth_E_9", "GrindDepth_E_12"],
            (0.40, 1.00, 0.57),
            &[(2, 1)],
        ),
        (&["GrindDepth_3", "SetAngle_3", "SetAngle_4", "GrindDepth_4"], &["SetAngle_3", "GrindDepth_3"], (0.50, 1.00, 0.67), &[(1, 1)]),
    ];
    let mut bad = Vec::new();
    for (i, (ranked, truth, want, hits)) in rows.iter().enumerate() {
        let p = set_prf(&set(ranked), &set(truth)).rounded(2);
        if (p.precision, p.recall, p.f1) != *want {
            bad.push(format!("row {i}: prf {:?}", (p.precision, p.recall, p.f1)));
        }
        for &(k, h) in hits.iter() {
            if hits_at_k(ranked, &set(truth), k) != Ok(h) {
                bad.push(format!("row {i}: hits@{k}"));
            }
        }
    }
    Outcome { pass: bad.is_empty(), detail: if bad.is_empty() { "3/3 rows exact".into() } else { bad.join("; ") } }
}

fn admissibility_table() -> Outcome {
    let cat = catalog(&[
        ("C4", VarType::Control, 4),
        ("O4", VarType::Observation, 4),
        ("C10", VarType::Control, 5),
        ("O10", VarType::Observation, 5),
    ]);
    let allowed = set(&["C4>O4", "C4>O10", "C10>O10", "O4>O10"]);
    let names = ["C4", "O4", "C10", "O10"];
    let rules = default_ruleset();
    let (mut admissible, mut mismatches) = (0, Vec::new());
    for a in names {
        for b in names {
            let got = is_admissible(EdgeQuery::new(a, b), &cat, &rules).unwrap();
            admissible += got as usize;
            if got != allowed.contains(&format!("{a}>{b}")) {
                mismatches.push(format!("{a}->{b}"));
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty() && admissible == 4,
        detail: format!("{admissible} admissible of 16, mismatches {mismatches:?}"),
    }
}

fn rule_acyclicity() -> Outcome {
    let rules = default_ruleset();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cyclic = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=12);
        // stages must be contiguous, so every stage 1..=k gets a variable
        let k = rng.random_range(1..=m.min(5)) as u32;
        let vars: Vec<(String, VarType, u32)> = (0..m)
            .map(|i| {
                let t = if rng.random_bool(0.5) { VarType::Control } else { VarType::Observation };
                (format!("v{i}"), t, i as u32 % k + 1)
            })
            .collect();
        let cat = VariableCatalog::from_entries(
            vars.iter().map(|(n, t, s)| CatalogEntry { name: n.clone(), info: VariableInfo::new(*t, *s) }),
        )
        .unwrap();
        let keep = rng.random_range(0.2..=1.0);
        let edges = admissible_edges(&cat, &rules)
            .into_iter()
            .filter(|_| rng.random_bool(keep))
            .map(|(src, dst)| GraphEdge { src, dst, directed: true, stat: 0.0 })
            .collect();
        let g = CausalGraph { nodes: cat.names().map(String::from).collect(), edges, algorithm: Algorithm::Ges, constrained: true };
        cyclic += !g.is_acyclic() as usize;
    }
    Outcome { pass: cyclic == 0, detail: format!("{cyclic} cyclic of 1000 random admissible edge sets") }
}

fn pc_chain() -> Outcome {
    let cat = catalog(&[("X", VarType::Observation, 1), ("Y", VarType::Observation, 2), ("Z", VarType::Observation, 3)]);
    let rules = default_ruleset();
    let want = BTreeSet::from([("X".to_string(), "Y".to_string()), ("Y".to_string(), "Z".to_string())]);
    let n = 5000;
    let exact = (0..100u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = normals(&mut rng, n);
            let y: Vec<f64> = x.iter().zip(normals(&mut rng, n)).map(|(a, e)| a + e).collect();
            let z: Vec<f64> = y.iter().zip(normals(&mut rng, n)).map(|(a, e)| a + e).collect();
            let d = NumericData::new(vec!["X".into(), "Y".into(), "Z".into()], vec![x, y, z]).unwrap();
            let g = discover(&d, &cat, &rules, AlgorithmChoice::Pc).unwrap();
            g.directed_edges().count() == g.edges.len() && g.edge_set() == want
        })
        .count();
    Outcome { pass: exact >= 95, detail: format!("exact oriented chain in {exact}/100 seeds (need 95)") }
}

fn ges_recovery() -> Outcome {
    let spec = SyntheticSpec::sized(4, 10).unwrap();
    let rules = default_ruleset();
    let (mut ps, mut rs) = (0.0, 0.0);
    for seed in 0..20 {
        let ds = generate(&spec, 5000, seed).unwrap();
        let names = stage_order(&ds.catalog);
        let adm = Admissibility::from_rules(&names, &ds.catalog, &rules).unwrap();
        let g = ges_learn(&ds.data, &adm).unwrap().graph;
        let p = set_prf(
            &g.edge_set().iter().map(|(a, b)| format!("{a}>{b}")).collect(),
            &ds.truth.edge_set().iter().map(|(a, b)| format!("{a}>{b}")).collect(),
        );
        ps += p.precision;
        rs += p.recall;
    }
    let (p, r) = (ps / 20.0, rs / 20.0);
    Outcome { pass: p >= 0.8 && r >= 0.8, detail: format!("mean precision {p:.3} recall {r:.3} over 20 seeds") }
}

fn rca_attribution() -> Outcome {
    let r = rca_trials(100, 4.0, 2000, 7).unwrap();
    let h = |k| r.metrics.hits.get(&k).copied().unwrap_or(0.0);
    Outcome {
        pass: h(3) >= 0.70 && r.monotone,
        detail: format!(
            "hits@1 {:.2} hits@2 {:.2} hits@3 {:.2} hits@5 {:.2}, monotone on every event: {}",
            h(1),
            h(2),
            h(3),
            h(5),
            r.monotone
        ),
    }
}

fn workflow_suite() -> Outcome {
    let b = common::bench();
    let s = b.service("work");
    let r = run_suite(s.engine(), &b.suite.queries, &b.data_dir()).unwrap();
    let pct = |c| r.criteria.get(&c).map_or(0.0, |s| s.success_pct);
    use rcdiag::eval::Criterion::*;
    Outcome {
        pass: r.all_pass() && r.warm_dispatches < r.cold_dispatches,
        detail: format!(
            "planning {:.0}% tool use {:.0}% self-reflection {:.0}% collaboration {:.0}%; dispatches cold {} warm {} ({:.1}% fewer)",
            pct(Planning),
            pct(ToolUse),
            pct(SelfReflection),
            pct(Collaboration),
            r.cold_dispatches,
            r.warm_dispatches,
            r.warm_reduction_pct
        ),
    }
}

fn scaling() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let r = scaling_run(&[5, 10, 20, 40], 100_000, 3, 3, dir.path()).unwrap();
    let pts: Vec<String> = r.points.iter().map(|p| format!("M={} {:.0}ms", p.m, p.total_ms)).collect();
    Outcome {
        pass: r.linear_fit.r_squared >= 0.9,
        detail: format!("R^2 {:.3} ({})", r.linear_fit.r_squared, pts.join(", ")),
    }
}

fn w6_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let n = 100_000;
    let spec = SyntheticSpec::sized(stages_for(5), 5).unwrap();
    let node = spec.variables.iter().find(|v| v.var_type == VarType::Control).unwrap().name.clone();
    let ds = generate(&spec.with_intervention(&node, 6.0, n - 50, 50), n, 5).unwrap();
    let data = dir.path().join("line.csv");
    io::write_numeric(&data, &ds.data).unwrap();
    io::write_json(&dir.path().join("catalog.json"), &ds.catalog).unwrap();
    let cfg = EngineConfig::new(dir.path().join("catalog.json"), dir.path().join("work"));
    let service = Service::in_process(cfg, "http://127.0.0.1:0").unwrap();
    let t = Instant::now();
    let out = service.run(&format!("find the root causes of anomalies in {}", data.display()), Some(&data.to_string_lossy()));
    let secs = t.elapsed().as_secs_f64();
    match out {
        Ok(o) => {
            let caps: Vec<String> = o.state.trace.iter().map(|s| s.capability.to_string()).collect();
            let ok = o.failed_steps() == 0 && o.state.trace.iter().any(|s| s.capability.to_string() == "rca");
            Outcome { pass: ok && secs < 60.0, detail: format!("{} in {secs:.1}s, trace {caps:?}", o.template) }
        }
        Err(e) => Outcome { pass: false, detail: e.to_string() },
    }
}

fn protocol() -> Outcome {
    let (ok, secs) = common::protocol_round_trip(100);
    Outcome { pass: ok == 100, detail: format!("{ok}/100 concurrent flows clean in {secs:.2}s") }
}

fn forest_outlier_rank() -> Outcome {
    let n = 1000;
    let top = (0..100u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = normals(&mut rng, n - 1);
            let mut y = normals(&mut rng, n - 1);
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            x.push(10.0 * a.cos());
            y.push(10.0 * a.sin());
            let d = NumericData::new(vec!["x".into(), "y".into()], vec![x, y]).unwrap();
            let s = IsolationForest::fit(&d, 100, 256, seed).unwrap().score_all(&d).unwrap();
            s[..n - 1].iter().all(|&v| v < s[n - 1])
        })
        .count();
    Outcome { pass: top >= 95, detail: format!("10-sigma outlier ranked first in {top}/100 seeds (need 95)") }
}

fn main() {
    let mut results = Vec::new();
    let s = Duration::from_secs;
    check(&mut results, "golden attribution metrics", s(1), golden_metrics);
    check(&mut results, "admissibility truth table", s(1), admissibility_table);
    check(&mut results, "rule-set acyclicity", s(10), rule_acyclicity);
    check(&mut results, "PC chain recovery", s(60), pc_chain);
    check(&mut results, "constrained GES recovery", s(300), ges_recovery);
    check(&mut results, "RCA attribution", s(300), rca_attribution);
    check(&mut results, "workflow suite", s(120), workflow_suite);
    check(&mut results, "scaling linearity", s(600), scaling);
    check(&mut results, "W6 end to end at M=5 N=100k", s(60), w6_end_to_end);
    check(&mut results, "protocol round trip", s(60), protocol);
    check(&mut results, "isolation forest outlier rank", s(60), forest_outlier_rank);
    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("{} of {} acceptance checks passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
