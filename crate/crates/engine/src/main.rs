use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use rcdiag::agents::agent_by_name;
use rcdiag::config::{EngineConfig, DEFAULT_PORT};
use rcdiag::engine::{EngineError, RunOutcome};
use rcdiag::eval::{self, EvalError};
use rcdiag::io;
use rcdiag::server::{self, ServerHandle};
use rcdiag::service::Service;
use rcdiag_core::domain::StepStatus;
use rcdiag_core::synth::{generate, SyntheticSpec};
use serde_json::{json, Value};

const EXIT_IO: u8 = 1;
const EXIT_PLAN: u8 = 2;
const EXIT_AGENT: u8 = 3;

#[derive(Parser)]
#[command(name = "rcdiag", version, about = "Multi-agent root-cause diagnostics for staged manufacturing data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Variable catalog (JSON).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Rule set (JSON); the default stage rules when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Working directory for models, graphs, caches and run states.
    #[arg(long, default_value = "rcdiag-data")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-dispatch timeout in milliseconds.
    #[arg(long, default_value_t = 120_000)]
    timeout_ms: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Start the registry, the agents and the engine API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_PORT as u32)]
        port: u32,
        #[arg(long)]
        planner_url: Option<String>,
        /// Run every agent inside this process instead of as child processes.
        #[arg(long)]
        in_process: bool,
    },
    /// Run one workflow and write its final state.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query: String,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where the final workflow state goes.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        planner_url: Option<String>,
        /// Submit to a running server instead of running standalone.
        #[arg(long)]
        server: Option<String>,
    },
    /// Generate a synthetic grinding-line dataset.
    Synth {
        #[arg(long, default_value_t = 4)]
        stages: u32,
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output directory: data.csv, catalog.json, truth.json.
        #[arg(long)]
        out: PathBuf,
        /// Inject a shift: NODE:SIGMAS:START:COUNT.
        #[arg(long)]
        intervene: Vec<String>,
    },
    /// Run a scripted workflow suite and write the report.
    Eval {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Catalog for suites without generated fixtures.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve a single agent and register it with a registry.
    Agent {
        name: String,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        registry: String,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl ToString) -> Self {
        Self { code: EXIT_IO, message: message.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn config(common: &Common, port: u32, planner_url: Option<String>) -> Result<EngineConfig, Failure> {
    let catalog = common.catalog.clone().ok_or_else(|| Failure::io("--catalog is required"))?;
    let mut c = EngineConfig::new(catalog, common.data_dir.clone());
    c.port = EngineConfig::check_port(port).map_err(Failure::io)?;
    c.rules_path = common.rules.clone();
    c.planner_url = planner_url;
    c.seed = common.seed;
    c.timeout_ms = common.timeout_ms;
    c.apply_env().map_err(Failure::io)?;
    c.validate().map_err(Failure::io)?;
    Ok(c)
}

fn engine_failure(e: EngineError) -> Failure {
    let code = match e {
        EngineError::Plan(_) => EXIT_PLAN,
        EngineError::DataNotFound(_) | EngineError::Io(_) => EXIT_IO,
    };
    Failure { code, message: e.to_string() }
}

fn summary_line(o: &RunOutcome) -> String {
    let steps: Vec<String> = o
        .state
        .trace
        .iter()
        .map(|s| {
            let mark = if s.cache_hit { " [cache_hit]" } else { "" };
            format!("{}:{}:{:?}{mark}", s.seq, s.capability, s.status)
        })
        .collect();
    format!("{} ({}) {}", o.workflow_id, o.template, steps.join(" "))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

fn serve(common: Common, port: u32, planner_url: Option<String>, in_process: bool) -> CmdResult {
    let cfg = config(&common, port, planner_url)?;
    let addr = format!("127.0.0.1:{}", cfg.port);
    let listener = std::net::TcpListener::bind(&addr).map_err(|e| Failure::io(format!("cannot bind {addr}: {e}")))?;
    listener.set_nonblocking(true).map_err(Failure::io)?;
    let base = format!("http://{addr}");
    let service = Arc::new(if in_process {
        Service::in_process(cfg, &base).map_err(Failure::io)?
    } else {
        Service::new(cfg).map_err(Failure::io)?
    });
    let rt = tokio::runtime::Runtime::new().map_err(Failure::io)?;
    let app = server::router(service.clone());
    let svc = service.clone();
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).map_err(Failure::io)?;
        if !in_process {
            let exe = std::env::current_exe().map_err(Failure::io)?;
            let want = svc.spawn_agents(&exe, &base).map_err(|e| Failure { code: EXIT_AGENT, message: e.to_string() })?;
            let waiter = svc.clone();
            tokio::task::spawn_blocking(move || {
                if let Err(e) = waiter.wait_ready(want, Duration::from_secs(30)) {
                    eprintln!("rcdiag: {e}");
                }
            });
        }
        eprintln!("rcdiag: listening on {base}");
        server::serve(listener, app, shutdown_signal()).await.map_err(Failure::io)
    })?;
    service.stop_children();
    Ok(())
}

fn run(common: Common, query: String, data: Option<PathBuf>, out: PathBuf, planner_url: Option<String>, server: Option<String>) -> CmdResult {
    if let Some(d) = &data {
        if !d.is_file() {
            return Err(Failure::io(format!("data file not found: {}", d.display())));
        }
    }
    let data_ref = data.as_ref().map(|d| io::absolute(d, &std::env::current_dir().unwrap_or_default()));
    let data_str = data_ref.as_ref().map(|d| d.to_string_lossy().into_owned());
    if let Some(url) = server {
        return run_remote(&url, &query, data_str.as_deref(), &out);
    }
    let mut common = common;
    if common.catalog.is_none() {
        // synth writes catalog.json next to data.csv
        common.catalog = data_ref.as_ref().and_then(|d| d.parent()).map(|d| d.join("catalog.json"));
    }
    let cfg = config(&common, DEFAULT_PORT.into(), planner_url)?;
    let service = Service::in_process(cfg, "http://127.0.0.1:0").map_err(Failure::io)?;
    let outcome = service.run(&query, data_str.as_deref()).map_err(engine_failure)?;
    io::write_json(&out, &outcome.state).map_err(Failure::io)?;
    println!("{}", summary_line(&outcome));
    for n in &outcome.notes {
        println!("note: {n}");
    }
    if outcome.failed_steps() > 0 {
        return Err(Failure { code: EXIT_AGENT, message: format!("{} step(s) failed", outcome.failed_steps()) });
    }
    Ok(())
}

fn run_remote(url: &str, query: &str, data: Option<&str>, out: &Path) -> CmdResult {
    let url = url.trim_end_matches('/');
    let submit: Value = ureq::post(&format!("{url}/workflows"))
        .send_json(json!({"query": query, "data_ref": data}))
        .and_then(|mut r| r.body_mut().read_json())
        .map_err(|e| Failure::io(format!("{url}: {e}")))?;
    let id = submit["workflow_id"].as_str().ok_or_else(|| Failure::io("server returned no workflow id"))?.to_string();
    loop {
        let rec: Value = ureq::get(&format!("{url}/workflows/{id}"))
            .call()
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| Failure::io(format!("{url}: {e}")))?;
        match rec["status"].as_str() {
            Some("running") => std::thread::sleep(Duration::from_millis(100)),
            Some("done") => {
                io::write_json(out, &rec["state"]).map_err(Failure::io)?;
                let failed = rec["state"]["trace"]
                    .as_array()
                    .map_or(0, |t| t.iter().filter(|s| s["status"] == json!(StepStatus::Failed)).count());
                println!("{id} done");
                if failed > 0 {
                    return Err(Failure { code: EXIT_AGENT, message: format!("{failed} step(s) failed") });
                }
                return Ok(());
            }
            _ => {
                let msg = rec["error"].as_str().unwrap_or("workflow failed").to_string();
                let code = if msg.contains("no workflow matches") { EXIT_PLAN } else { EXIT_IO };
                return Err(Failure { code, message: msg });
            }
        }
    }
}

fn parse_intervention(s: &str) -> Result<(String, f64, usize, usize), Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Failure::io(format!("bad --intervene {s:?}; expected NODE:SIGMAS:START:COUNT"));
    let [node, shift, start, count] = parts.as_slice() else { return Err(bad()) };
    Ok((
        node.to_string(),
        shift.parse().map_err(|_| bad())?,
        start.parse().map_err(|_| bad())?,
        count.parse().map_err(|_| bad())?,
    ))
}

fn synth(stages: u32, rows: usize, seed: u64, out: PathBuf, intervene: Vec<String>) -> CmdResult {
    let mut spec = SyntheticSpec::grinding(stages);
    for s in &intervene {
        let (node, shift, start, count) = parse_intervention(s)?;
        spec = spec.with_intervention(&node, shift, start, count);
    }
    let ds = generate(&spec, rows, seed).map_err(Failure::io)?;
    io::write_numeric(&out.join("data.csv"), &ds.data).map_err(Failure::io)?;
    io::write_json(&out.join("catalog.json"), &ds.catalog).map_err(Failure::io)?;
    io::write_json(
        &out.join("truth.json"),
        &json!({"graph": ds.truth, "labels": ds.labels, "coefficients": ds.coefficients, "spec": spec}),
    )
    .map_err(Failure::io)?;
    println!("wrote {} rows x {} columns to {}", ds.data.n_rows(), ds.data.n_cols(), out.display());
    Ok(())
}

fn eval_cmd(suite_path: PathBuf, out: PathBuf, catalog: Option<PathBuf>, seed: u64) -> CmdResult {
    let suite = eval::load_suite(&suite_path).map_err(|e| match e {
        EvalError::NoQueries => Failure::io("no queries"),
        e => Failure::io(e),
    })?;
    let (data_dir, catalog) = match &suite.fixtures {
        Some(f) => {
            let dir = out.join("fixtures");
            let paths = eval::write_fixtures(f, &dir).map_err(Failure::io)?;
            (dir, paths.catalog)
        }
        None => {
            let base = suite_path.parent().map(Path::to_path_buf).unwrap_or_default();
            (base, catalog.ok_or_else(|| Failure::io("suite has no fixtures; pass --catalog"))?)
        }
    };
    let mut cfg = EngineConfig::new(catalog, out.join("work"));
    cfg.seed = seed;
    cfg.apply_env().map_err(Failure::io)?;
    cfg.validate().map_err(Failure::io)?;
    let service = Service::in_process(cfg, "http://127.0.0.1:0").map_err(Failure::io)?;
    let report = eval::run_suite(service.engine(), &suite.queries, &data_dir).map_err(Failure::io)?;
    let table = eval::render_table(&report);
    io::write_json(&out.join("report.json"), &report).map_err(Failure::io)?;
    std::fs::write(out.join("report.txt"), &table).map_err(Failure::io)?;
    print!("{table}");
    Ok(())
}

fn agent(name: String, common: Common, registry: String, host: String, port: u16) -> CmdResult {
    let cfg = config(&common, DEFAULT_PORT.into(), None)?;
    let env = cfg.agent_env().map_err(Failure::io)?;
    let agent = agent_by_name(&env, &name).ok_or_else(|| Failure::io(format!("unknown agent {name:?}")))?;
    let card_agent = agent.clone();
    let handle = ServerHandle::start(&format!("{host}:{port}"), move |url| server::agent_router(agent, url))
        .map_err(Failure::io)?;
    let card = card_agent.card(&handle.url());
    let registry = registry.trim_end_matches('/');
    ureq::post(&format!("{registry}/register"))
        .send_json(&card)
        .map_err(|e| Failure { code: EXIT_AGENT, message: format!("cannot register with {registry}: {e}") })?;
    // the supervisor kills this process; until then the server thread does the work
    loop {
        std::thread::park();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Serve { common, port, planner_url, in_process } => serve(common, port, planner_url, in_process),
        Cmd::Run { common, query, data, out, planner_url, server } => run(common, query, data, out, planner_url, server),
        Cmd::Synth { stages, rows, seed, out, intervene } => synth(stages, rows, seed, out, intervene),
        Cmd::Eval { suite, out, catalog, seed } => eval_cmd(suite, out, catalog, seed),
        Cmd::Agent { name, common, registry, host, port } => agent(name, common, registry, host, port),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rcdiag: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
