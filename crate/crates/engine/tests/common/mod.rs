#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rcdiag::agents::{Agent, AgentError};
use rcdiag::config::EngineConfig;
use rcdiag::eval::{self, FixturePaths, Suite};
use rcdiag::protocol::InvokeRequest;
use rcdiag::server::{self, ServerHandle};
use rcdiag::service::Service;
use rcdiag_core::domain::AgentCard;
use serde_json::{json, Value};

pub struct Bench {
    pub dir: tempfile::TempDir,
    pub fixtures: FixturePaths,
    pub suite: Suite,
}

pub fn suite_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/suite.json")
}

/// Shipped suite plus its generated fixtures in a fresh directory.
pub fn bench() -> Bench {
    let dir = tempfile::tempdir().unwrap();
    let suite = eval::load_suite(&suite_path()).unwrap();
    let fixtures = eval::write_fixtures(suite.fixtures.as_ref().unwrap(), &dir.path().join("fixtures")).unwrap();
    Bench { dir, fixtures, suite }
}

impl Bench {
    pub fn config(&self, work: &str) -> EngineConfig {
        EngineConfig::new(&self.fixtures.catalog, self.dir.path().join(work))
    }

    pub fn service(&self, work: &str) -> Service {
        Service::in_process(self.config(work), "http://127.0.0.1:0").unwrap()
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir.path().join("fixtures")
    }
}

/// A workflow state as JSON with timings dropped and the work directory
/// replaced by a placeholder, for comparing runs across processes.
pub fn normalized(state: &rcdiag_core::domain::WorkflowState, work: &Path) -> serde_json::Value {
    let text = serde_json::to_string(state).unwrap().replace(&*work.to_string_lossy(), "<work>");
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for step in v["trace"].as_array_mut().unwrap() {
        let m = step.as_object_mut().unwrap();
        m.remove("started_ms");
        m.remove("ended_ms");
    }
    v
}

/// Reports two progress steps and echoes its request.
pub struct Echo;

impl Agent for Echo {
    fn name(&self) -> &str {
        "echo"
    }
    fn card(&self, endpoint: &str) -> AgentCard {
        AgentCard::new("echo", "1", endpoint).with_capability("echo")
    }
    fn run(&self, req: &InvokeRequest, progress: &dyn Fn(Value)) -> Result<Value, AgentError> {
        progress(json!({"step": 1}));
        progress(json!({"step": 2}));
        Ok(json!({"capability": req.capability, "payload": req.payload}))
    }
}

pub fn http() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

/// register → discover → invoke → events for one control flow.
pub fn flow(url: &str, stub: &str, i: usize) -> Result<(), String> {
    let http = http();
    let cap = format!("echo-{i}");
    let card = AgentCard::new(format!("echo-{i}"), "1", stub).with_capability(cap.clone());
    let reg: Value = http
        .post(&format!("{url}/register"))
        .send_json(&card)
        .and_then(|mut r| r.body_mut().read_json())
        .map_err(|e| e.to_string())?;
    if reg["agent_id"] != json!(format!("echo-{i}@1")) {
        return Err(format!("register: {reg}"));
    }
    let cards: Vec<AgentCard> =
        http.get(&format!("{url}/agents")).call().and_then(|mut r| r.body_mut().read_json()).map_err(|e| e.to_string())?;
    if !cards.iter().any(|c| c.offers(&cap)) {
        return Err(format!("{cap} not discoverable"));
    }
    let task = format!("task-{i}");
    let out: Value = http
        .post(&format!("{url}/invoke"))
        .send_json(json!({"task_id": task, "capability": cap, "payload": {"i": i}}))
        .and_then(|mut r| r.body_mut().read_json())
        .map_err(|e| e.to_string())?;
    if out["status"] != "ok" || out["result"]["payload"]["i"] != i || out["result"]["capability"] != json!(cap) {
        return Err(format!("invoke: {out}"));
    }
    let events = server::fetch_events(url, &task).map_err(|e| e.to_string())?;
    let seqs: Vec<u64> = events.iter().filter_map(|e| e["seq"].as_u64()).collect();
    let terminal = events.iter().filter(|e| e["kind"] == "Result" || e["kind"] == "Error").count();
    if seqs != (1..=events.len() as u64).collect::<Vec<_>>() || terminal != 1 || events.last().unwrap()["kind"] != "Result" {
        return Err(format!("events of {task}: {events:?}"));
    }
    // started, two progress events, result
    if events.len() != 4 {
        return Err(format!("{task}: {} events", events.len()));
    }
    Ok(())
}

pub fn protocol_round_trip(flows: usize) -> (usize, f64) {
    let b = bench();
    let stub = ServerHandle::start("127.0.0.1:0", |url| server::agent_router(Arc::new(Echo), url)).unwrap();
    let cfg = b.config("work");
    let engine = ServerHandle::start("127.0.0.1:0", move |_| server::router(Arc::new(Service::new(cfg).unwrap()))).unwrap();
    let url = engine.url();
    let stub_url = stub.url();
    let start = Instant::now();
    let handles: Vec<_> = (0..flows)
        .map(|i| {
            let (url, stub_url) = (url.clone(), stub_url.clone());
            std::thread::spawn(move || flow(&url, &stub_url, i))
        })
        .collect();
    let mut ok = 0;
    for h in handles {
        match h.join().unwrap() {
            Ok(()) => ok += 1,
            Err(e) => eprintln!("{e}"),
        }
    }
    (ok, start.elapsed().as_secs_f64())
}
