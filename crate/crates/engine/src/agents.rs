//! The six diagnostic agents. All are stateless request handlers over a
//! shared read-only environment, except RCA, which keeps a per-event cache.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rcdiag_core::anomaly::{auto_backend, detect, DetectMode, DetectOptions};
use rcdiag_core::discovery::{discover, AlgorithmChoice};
use rcdiag_core::domain::{
    AgentCard, Backend, Capability, CausalGraph, NumericData, PostprocessRule, RcaTrigger, RuleSet, Slot, Trigger,
    TriggerOp, VariableCatalog, NORMAL,
};
use rcdiag_core::iforest::IsolationForest;
use rcdiag_core::prep::{describe_variables, preprocess, recommend_next};
use rcdiag_core::rca::{choose_target, fit_scm, score_causes, DEFAULT_MAX_PATH_LEN};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::io;
use crate::protocol::{InvokeRequest, WireError};

pub const AGENT_VERSION: &str = "1.0";

/// Shared, read-only context every agent is built with.
#[derive(Clone)]
pub struct AgentEnv {
    pub catalog: Arc<VariableCatalog>,
    pub rules: Arc<RuleSet>,
    /// Scratch space for fitted models, graphs and the RCA cache.
    pub data_dir: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("{0}")]
    Io(String),
    #[error("graph unavailable: {0}")]
    GraphUnavailable(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("{0}")]
    Failed(String),
}

impl AgentError {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentError::BadRequest(_) => "BadRequest",
            AgentError::Io(_) => "Io",
            AgentError::GraphUnavailable(_) => "GraphUnavailable",
            AgentError::Unavailable(_) => "Unavailable",
            AgentError::Failed(_) => "Failed",
        }
    }

    pub fn to_wire(&self) -> WireError {
        let message = match self {
            AgentError::BadRequest(m)
            | AgentError::Io(m)
            | AgentError::GraphUnavailable(m)
            | AgentError::Unavailable(m)
            | AgentError::Failed(m) => m.clone(),
        };
        WireError { kind: self.kind().into(), message }
    }

    pub fn from_wire(w: WireError) -> Self {
        match w.kind.as_str() {
            "BadRequest" => AgentError::BadRequest(w.message),
            "Io" => AgentError::Io(w.message),
            "GraphUnavailable" => AgentError::GraphUnavailable(w.message),
            "Unavailable" => AgentError::Unavailable(w.message),
            _ => AgentError::Failed(w.message),
        }
    }
}

impl From<io::IoError> for AgentError {
    fn from(e: io::IoError) -> Self {
        AgentError::Io(e.to_string())
    }
}

pub trait Agent: Send + Sync {
    fn name(&self) -> &str;
    /// Card advertising this agent at `endpoint`.
    fn card(&self, endpoint: &str) -> AgentCard;
    /// Handles one request. `progress` publishes intermediate bodies.
    fn run(&self, req: &InvokeRequest, progress: &dyn Fn(Value)) -> Result<Value, AgentError>;
}

fn base_card(name: &str, endpoint: &str, cap: Capability, inputs: &[&str], outputs: &[&str]) -> AgentCard {
    AgentCard::new(name, AGENT_VERSION, endpoint).with_capability(cap.tag()).with_schemas(inputs, outputs)
}

fn data_path(req: &InvokeRequest) -> Result<PathBuf, AgentError> {
    req.str_param("data_ref")
        .map(PathBuf::from)
        .ok_or_else(|| AgentError::BadRequest("missing data_ref".into()))
}

/// Numeric view of a CSV; raw tables are cleaned on the fly.
fn load_numeric(path: &Path, catalog: &VariableCatalog) -> Result<NumericData, AgentError> {
    let table = io::read_table(path)?;
    match table.numeric() {
        Ok(d) => Ok(d),
        Err(_) => {
            let (clean, _) = preprocess(&table, catalog).map_err(|e| AgentError::BadRequest(e.to_string()))?;
            clean.numeric().map_err(|e| AgentError::BadRequest(e.to_string()))
        }
    }
}

/// Columns the catalog knows, in data order.
fn catalog_columns(data: &NumericData, catalog: &VariableCatalog) -> Result<NumericData, AgentError> {
    let names: Vec<&str> = data.names().iter().map(String::as_str).filter(|n| catalog.contains(n)).collect();
    if names.len() < 2 {
        return Err(AgentError::BadRequest(format!("need at least two catalog variables in data, found {}", names.len())));
    }
    data.select_columns(&names).map_err(|e| AgentError::BadRequest(e.to_string()))
}

/// Row index encoded in an event reference such as `run#row41`.
pub fn row_of_event_ref(event_ref: &str) -> Option<usize> {
    event_ref.rsplit_once("#row")?.1.parse().ok()
}

fn param<T: for<'de> Deserialize<'de>>(req: &InvokeRequest, key: &str) -> Result<Option<T>, AgentError> {
    match req.payload.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| AgentError::BadRequest(format!("{key}: {e}"))),
    }
}

pub struct PreprocessingAgent {
    env: AgentEnv,
}

impl Agent for PreprocessingAgent {
    fn name(&self) -> &str {
        "preprocessing"
    }

    fn card(&self, endpoint: &str) -> AgentCard {
        base_card(
            self.name(),
            endpoint,
            Capability::Preprocessing,
            &["data_ref"],
            &["summary", "clean_ref", "encoders_ref", "columns"],
        )
    }

    fn run(&self, req: &InvokeRequest, progress: &dyn Fn(Value)) -> Result<Value, AgentError> {
        let path = data_path(req)?;
        let table = io::read_table(&path)?;
        let (clean, summary) = preprocess(&table, &self.env.catalog).map_err(|e| AgentError::Failed(e.to_string()))?;
        progress(json!({"stage": "cleaned", "rows_out": summary.rows_out, "cols_out": summary.cols_out}));
        let stem = io::stem(&path);
        let dir = path.parent().unwrap_or(Path::new("."));
        let clean_ref = dir.join(format!("{stem}.preprocessed.csv"));
        let encoders_ref = dir.join(format!("{stem}.encoders.json"));
        io::write_atomic(&clean_ref, |tmp| io::write_table(tmp, &clean))?;
        io::write_atomic(&encoders_ref, |tmp| io::write_json(tmp, &clean.encoders))?;
        Ok(json!({
            "summary": summary,
            "clean_ref": clean_ref,
            "encoders_ref": encoders_ref,
            "columns": clean.columns(),
        }))
    }
}

pub struct BackgroundInfoAgent {
    env: AgentEnv,
}

impl BackgroundInfoAgent {
    fn choose_variables(&self, req: &InvokeRequest) -> Result<(Vec<String>, &'static str), AgentError> {
        if let Some(v) = param::<Vec<String>>(req, "variables")? {
            return Ok((v, "explicit"));
        }
        if let Some(v) = req.str_param("variable") {
            return Ok((vec![v.to_string()], "explicit"));
        }
        if let Some(q) = req.str_param("query") {
            let found: Vec<String> = q
                .split(|c: char| !(c.is_alphanumeric() || c == '_'))
                .filter(|w| self.env.catalog.contains(w))
                .map(str::to_string)
                .collect();
            if !found.is_empty() {
                return Ok((found, "query"));
            }
        }
        if let Some(p) = req.str_param("data_ref") {
            let table = io::read_table(Path::new(p))?;
            return Ok((table.columns().to_vec(), "data"));
        }
        Ok((self.env.catalog.names().map(str::to_string).collect(), "catalog"))
    }
}

impl Agent for BackgroundInfoAgent {
    fn name(&self) -> &str {
        "background_info"
    }

    fn card(&self, endpoint: &str) -> AgentCard {
        base_card(
            self.name(),
            endpoint,
            Capability::BackgroundInfo,
            &["variables", "variable", "query", "data_ref"],
            &["descriptions", "stages", "source"],
        )
    }

    fn run(&self, req: &InvokeRequest, _progress: &dyn Fn(Value)) -> Result<Value, AgentError> {
        let (names, source) = self.choose_variables(req)?;
        let descriptions = describe_variables(&self.env.catalog, &names);
        let stages: BTreeMap<&str, u32> =
            names.iter().filter_map(|n| self.env.catalog.get(n).map(|v| (n.as_str(), v.stage))).collect();
        Ok(json!({"descriptions": descriptions, "stages": stages, "source": source}))
    }
}

pub struct AnomalyAgent {
    env: AgentEnv,
}

impl AnomalyAgent {
    /// Forest fitted on this exact data and seed, reused from disk when present.
    fn forest(&self, data: &NumericData, data_hash: &str, opts: &DetectOptions) -> Result<IsolationForest, AgentError> {
        let path = self.env.data_dir.join("models").join(format!("{data_hash}-{}-{}-{}.json", opts.trees, opts.psi, opts.seed));
        if let Ok(model) = io::read_json::<IsolationForest>(&path) {
            return Ok(model);
        }
        let model = IsolationForest::fit(data, opts.trees, opts.psi, opts.seed)
            .map_err(|e| AgentError::Unavailable(format!("model: {e}")))?;
        io::write_atomic(&path, |tmp| io::write_json(tmp, &model))?;
        Ok(model)
    }
}

impl Agent for AnomalyAgent {
    fn name(&self) -> &str {
        "anomaly"
    }

    fn card(&self, endpoint: &str) -> AgentCard {
        base_card(
            self.name(),
            endpoint,
            Capability::Anomaly,
            &["data_ref", "mode", "event_row", "event_ref"],
            &["status", "score", "violated_features", "backend", "event_ref", "event_row", "rca_payload"],
        )
        .with_rule(PostprocessRule {
            trigger: Trigger { field: "status".into(), op: TriggerOp::Ne, value: json!(NORMAL) },
            next_capability: Capability::Rca.tag().into(),
            input_mapping: [("rca_payload".to_string(), "trigger".to_string())].into_iter().collect(),
            auto_chain: true,
        })
    }

    fn run(&self, req: &InvokeRequest, progress: &dyn Fn(Value)) -> Result<Value, AgentError> {
        let path = data_path(req)?;
        let data = load_numeric(&path, &self.env.catalog)?;
        let mode: DetectMode = param(req, "mode")?.unwrap_or_default();
        let event_ref_in = req.str_param("event_ref");
        let row = match param::<usize>(req, "event_row")? {
            Some(r) => r,
            None => event_ref_in.and_then(row_of_event_ref).unwrap_or(data.n_rows().saturating_sub(1)),
        };
        let event_ref = event_ref_in.map_or_else(|| format!("{}#row{row}", io::stem(&path)), str::to_string);
        let mut opts = DetectOptions { seed: self.env.seed, ..DetectOptions::default() };
        let backend = match mode {
            DetectMode::Auto => Some(auto_backend(&self.env.catalog)),
            DetectMode::Forest => Some(Backend::IsolationForest),
            _ => None,
        };
        if backend == Some(Backend::IsolationForest) {
            let hash = io::file_hash(&path)?;
            opts.model = Some(self.forest(&data, &hash, &opts)?);
            progress(json!({"stage": "model ready"}));
        }
        let report = detect(&data, Some(row), &self.env.catalog, mode, &opts, &path.to_string_lossy(), &event_ref)
            .map_err(|e| match e {
                rcdiag_core::anomaly::AnomalyError::RowOutOfRange { .. } => AgentError::BadRequest(e.to_string()),
                other => AgentError::Unavailable(other.to_string()),
            })?;
        let mut out = serde_json::to_value(&report).map_err(|e| AgentError::Failed(e.to_string()))?;
        out["event_row"] = json!(row);
        Ok(out)
    }
}

pub struct CausalAgent {
    env: AgentEnv,
}

impl Agent for CausalAgent {
    fn name(&self) -> &str {
        "causal"
    }

    fn card(&self, endpoint: &str) -> AgentCard {
        base_card(
            self.name(),
            endpoint,
            Capability::Causal,
            &["data_ref", "algorithm"],
            &["graph", "graph_ref", "algorithm", "edge_list"],
        )
    }

    fn run(&self, req: &InvokeRequest, progress: &dyn Fn(Value)) -> Result<Value, AgentError> {
        let path = data_path(req)?;
        let data = catalog_columns(&load_numeric(&path, &self.env.catalog)?, &self.env.catalog)?;
        let algorithm: AlgorithmChoice = param(req, "algorithm")?.unwrap_or_default();
        progress(json!({"stage": "searching", "variables": data.n_cols(), "rows": data.n_rows()}));
        let graph = discover(&data, &self.env.catalog, &self.env.rules, algorithm)
            .map_err(|e| AgentError::Failed(e.to_string()))?;
        let text = serde_json::to_string(&graph).map_err(|e| AgentError::Failed(e.to_string()))?;
        let graph_ref = self.env.data_dir.join("graphs").join(format!("{}.json", io::sha256_hex(text.as_bytes())));
        io::write_atomic(&graph_ref, |tmp| io::write_json(tmp, &graph))?;
        Ok(json!({
            "graph": graph,
            "graph_ref": graph_ref,
            "algorithm": graph.algorithm,
            "edge_list": graph.to_edge_list(),
        }))
    }
}

#[derive(Debug, Default, Deserialize)]
struct TriggerIn {
    #[serde(default)]
    targets: Vec<String>,
    #[serde(default)]
    event_ref: Option<String>,
    #[serde(default)]
    data_ref: Option<String>,
}

pub struct RcaAgent {
    env: AgentEnv,
    cache: Mutex<HashMap<String, Value>>,
}

impl RcaAgent {
    fn graph(&self, req: &InvokeRequest, reference: Option<&NumericData>) -> Result<CausalGraph, AgentError> {
        if let Some(g) = param::<CausalGraph>(req, "graph")? {
            return Ok(g);
        }
        if let Some(r) = req.str_param("graph_ref") {
            return io::read_json(Path::new(r)).map_err(|e| AgentError::GraphUnavailable(e.to_string()));
        }
        let data = reference.ok_or_else(|| AgentError::GraphUnavailable("no graph given and no data to learn one".into()))?;
        discover(data, &self.env.catalog, &self.env.rules, AlgorithmChoice::Auto)
            .map_err(|e| AgentError::GraphUnavailable(e.to_string()))
    }

    fn cache_path(&self, key: &str) -> PathBuf {
        self.env.data_dir.join("rca").join(format!("{}.json", io::sha256_hex(key.as_bytes())))
    }

    fn cached(&self, key: &str) -> Option<Value> {
        if let Some(v) = self.cache.lock().expect("rca cache poisoned").get(key) {
            return Some(v.clone());
        }
        io::read_json(&self.cache_path(key)).ok()
    }

    fn store(&self, key: &str, report: &Value) {
        self.cache.lock().expect("rca cache poisoned").insert(key.to_string(), report.clone());
        // the disk copy only speeds up later processes; losing it is harmless
        let _ = io::write_atomic(&self.cache_path(key), |tmp| io::write_json(tmp, report));
    }
}

impl Agent for RcaAgent {
    fn name(&self) -> &str {
        "rca"
    }

    fn card(&self, endpoint: &str) -> AgentCard {
        base_card(
            self.name(),
            endpoint,
            Capability::Rca,
            &["data_ref", "row", "trigger", "graph", "graph_ref", "event_row", "event_ref", "target"],
            &["target", "ranked_causes", "paths", "rendered", "cache_hit", "event_ref", "graph_hash"],
        )
    }

    fn run(&self, req: &InvokeRequest, progress: &dyn Fn(Value)) -> Result<Value, AgentError> {
        let trigger: TriggerIn = param(req, "trigger")?.unwrap_or_default();
        let row_in: Option<BTreeMap<String, f64>> = param(req, "row")?;
        let data_ref = req.str_param("data_ref").map(str::to_string).or(trigger.data_ref.clone()).filter(|s| !s.is_empty());
        if row_in.is_some() && data_ref.is_some() {
            progress(json!({"warning": "both row and data_ref given; using data_ref"}));
        }
        let event_ref_in = req.str_param("event_ref").map(str::to_string).or(trigger.event_ref.clone());

        let data = match &data_ref {
            Some(p) => Some(catalog_columns(&load_numeric(Path::new(p), &self.env.catalog)?, &self.env.catalog)?),
            None => None,
        };
        let (event_row, event, event_ref) = match &data {
            Some(d) => {
                let i = match param::<usize>(req, "event_row")? {
                    Some(i) => i,
                    None => event_ref_in.as_deref().and_then(row_of_event_ref).unwrap_or(d.n_rows().saturating_sub(1)),
                };
                if i >= d.n_rows() {
                    return Err(AgentError::BadRequest(format!("event row {i} out of range for {} rows", d.n_rows())));
                }
                let r = event_ref_in.clone().unwrap_or_else(|| format!("{}#row{i}", io::stem(Path::new(data_ref.as_deref().unwrap_or("")))));
                (Some(i), d.row_map(i), r)
            }
            None => {
                let row = row_in.ok_or_else(|| AgentError::BadRequest("need data_ref or row".into()))?;
                let r = event_ref_in.clone().ok_or_else(|| AgentError::BadRequest("a row without data_ref needs an event_ref".into()))?;
                (None, row, r)
            }
        };

        // reference window: rows within every tolerance, excluding the event
        let reference = data.as_ref().map(|d| {
            let tols: Vec<(usize, rcdiag_core::domain::Tolerance)> = d
                .names()
                .iter()
                .enumerate()
                .filter_map(|(j, n)| self.env.catalog.get(n).and_then(|v| v.tolerance).map(|t| (j, t)))
                .collect();
            let keep: Vec<usize> = (0..d.n_rows())
                .filter(|&i| Some(i) != event_row && tols.iter().all(|(j, t)| t.contains(d.column(*j)[i])))
                .collect();
            d.select_rows(&keep)
        });

        let mut graph = self.graph(req, reference.as_ref())?;
        let undirected = graph.edges.iter().filter(|e| !e.directed).count();
        if undirected > 0 {
            graph.edges.retain(|e| e.directed);
            progress(json!({"warning": format!("dropped {undirected} undirected edges before fitting")}));
        }
        let graph_text = serde_json::to_string(&graph).map_err(|e| AgentError::Failed(e.to_string()))?;
        let graph_hash = io::sha256_hex(graph_text.as_bytes());
        let key = format!("{event_ref}|{graph_hash}");
        if let Some(mut hit) = self.cached(&key) {
            hit["cache_hit"] = json!(true);
            return Ok(hit);
        }
        let reference = reference
            .ok_or_else(|| AgentError::BadRequest(format!("no cached result for {event_ref} and no data to fit on")))?;

        let target = match req.str_param("target") {
            Some(t) => t.to_string(),
            None => choose_target(&trigger.targets, &graph, &event, &reference)
                .ok_or_else(|| AgentError::Failed("no target variable in graph".into()))?,
        };
        progress(json!({"stage": "fitting", "target": target, "reference_rows": reference.n_rows()}));
        let scm = fit_scm(&graph, &reference).map_err(|e| AgentError::Failed(e.to_string()))?;
        let report = score_causes(&scm, &graph, &event, &target, &self.env.catalog, DEFAULT_MAX_PATH_LEN)
            .map_err(|e| AgentError::Failed(e.to_string()))?;
        let mut out = serde_json::to_value(&report).map_err(|e| AgentError::Failed(e.to_string()))?;
        out["rendered"] = json!(report.render_paths());
        out["event_ref"] = json!(event_ref);
        out["graph_hash"] = json!(graph_hash);
        out["cache_hit"] = json!(false);
        self.store(&key, &out);
        Ok(out)
    }
}

pub struct RecommendAgent;

impl Agent for RecommendAgent {
    fn name(&self) -> &str {
        "recommend"
    }

    fn card(&self, endpoint: &str) -> AgentCard {
        base_card(
            self.name(),
            endpoint,
            Capability::Recommend,
            &["last_capability", "last_output", "filled"],
            &["recommendations", "auto"],
        )
    }

    fn run(&self, req: &InvokeRequest, _progress: &dyn Fn(Value)) -> Result<Value, AgentError> {
        let last = req.str_param("last_capability").unwrap_or("");
        let output = req.payload.get("last_output").cloned().unwrap_or(Value::Null);
        let filled: BTreeSet<Slot> = param(req, "filled")?.unwrap_or_default();
        let recs = recommend_next(last, &output, &filled);
        let auto: Vec<&str> = recs.iter().filter(|r| r.auto_chain).map(|r| r.suggested_capability.tag()).collect();
        Ok(json!({"recommendations": recs, "auto": auto}))
    }
}

/// The six agents in registration order.
pub fn default_agents(env: &AgentEnv) -> Vec<Arc<dyn Agent>> {
    vec![
        Arc::new(PreprocessingAgent { env: env.clone() }),
        Arc::new(BackgroundInfoAgent { env: env.clone() }),
        Arc::new(AnomalyAgent { env: env.clone() }),
        Arc::new(CausalAgent { env: env.clone() }),
        Arc::new(RcaAgent { env: env.clone(), cache: Mutex::default() }),
        Arc::new(RecommendAgent),
    ]
}

pub fn agent_by_name(env: &AgentEnv, name: &str) -> Option<Arc<dyn Agent>> {
    default_agents(env).into_iter().find(|a| a.name() == name)
}

/// Shape check for the anomaly → RCA hand-off.
pub fn trigger_conforms(payload: &Value) -> bool {
    serde_json::from_value::<RcaTrigger>(payload.clone()).is_ok_and(|t| !t.targets.is_empty() && !t.event_ref.is_empty())
}
