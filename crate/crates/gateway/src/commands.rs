//! Subcommand implementations, callable without the argument parser.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use anyhow::{bail, Context, Result};
use log::info;
use serde_json::json;

use reflex_core::backchannel::FormInventory;
use reflex_core::corpus::read_corpus;
use reflex_core::harness::dataset::{train_forms, train_target, Target, TrainingReport};
use reflex_core::harness::metrics::{MetricsReport, MetricsTally, DEFAULT_CUTIN_WINDOW_MS, DEFAULT_TOLERANCE_MS};
use reflex_core::harness::replay::{read_end_ms, replay_events};
use reflex_core::harness::synth::{write_synthetic, SynthSpec};
use reflex_core::harness::DecisionLog;
use reflex_core::par::{self, ExecMode};
use reflex_core::statmodel::TrainConfig;
use reflex_core::{DialogueEvent, EngineAssets, SessionConfig, Task};

use crate::server::{self, ServerConfig};

pub fn load_config(path: Option<&Path>) -> Result<SessionConfig> {
    match path {
        Some(p) => SessionConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(SessionConfig::default()),
    }
}

/// Expands directories into their `*.jsonl` files, sorted by name.
pub fn corpus_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            out.extend(files);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("corpus path {} does not exist", p.display());
        }
    }
    Ok(out)
}

pub fn read_sessions(files: &[PathBuf]) -> Result<Vec<Vec<DialogueEvent>>> {
    files
        .iter()
        .map(|f| read_corpus(f).with_context(|| format!("corpus {}", f.display())))
        .collect()
}

pub fn train_config(
    cfg: &SessionConfig,
    seed: Option<u64>,
    lr: Option<f64>,
    epochs: Option<usize>,
    l2: Option<f64>,
    batch: Option<usize>,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        lr: lr.unwrap_or(d.lr),
        epochs: epochs.unwrap_or(d.epochs),
        l2: l2.unwrap_or(d.l2),
        seed: seed.unwrap_or(if cfg.seed == 0 { d.seed } else { cfg.seed }),
        batch_size: batch.unwrap_or(d.batch_size),
    }
}

fn report_json(r: &TrainingReport) -> serde_json::Value {
    serde_json::to_value(r).expect("training report serializes")
}

/// Trains one model and writes it to `out`. Returns the training report.
pub fn train(
    target: Target,
    corpus: &[PathBuf],
    out: &Path,
    cfg: &SessionConfig,
    tc: &TrainConfig,
    mode: ExecMode,
) -> Result<TrainingReport> {
    let files = corpus_files(corpus)?;
    let sessions = read_sessions(&files)?;
    if sessions.iter().all(|s| s.is_empty()) {
        bail!("corpus is empty");
    }
    let (model, report) = train_target(target, &sessions, &cfg.engagement_baselines, tc, mode)
        .with_context(|| format!("training {:?}", target))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    info!("wrote {}", out.display());
    Ok(report)
}

/// One-vs-rest form models written as `<dir>/<label>.json`.
pub fn train_form_models(
    corpus: &[PathBuf],
    dir: &Path,
    cfg: &SessionConfig,
    tc: &TrainConfig,
    mode: ExecMode,
) -> Result<Vec<(String, TrainingReport)>> {
    let sessions = read_sessions(&corpus_files(corpus)?)?;
    let inventory = match &cfg.resources.backchannel_forms {
        Some(p) => FormInventory::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => FormInventory::default(),
    };
    let forms = train_forms(&sessions, &inventory, tc, mode)?;
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (label, model, report) in forms {
        let p = dir.join(format!("{label}.json"));
        model.save(&p).with_context(|| format!("writing {}", p.display()))?;
        out.push((label, report));
    }
    Ok(out)
}

pub fn print_training(report: &TrainingReport) {
    println!("{}", serde_json::to_string_pretty(&report_json(report)).expect("json"));
}

/// Log file name and session end for one corpus file. A live session's
/// `events.jsonl` is named after its directory and ends at its recorded end.
fn session_name(file: &Path) -> (String, PathBuf) {
    let stem = file
        .file_stem()
        .map_or_else(|| "session".into(), |s| s.to_string_lossy().into_owned());
    let dir = file.parent().unwrap_or(Path::new("."));
    if stem == "events" {
        let name = dir
            .file_name()
            .map_or(stem.clone(), |d| d.to_string_lossy().into_owned());
        (name, dir.join("meta.json"))
    } else {
        (stem.clone(), dir.join(format!("{stem}.meta.json")))
    }
}

pub struct ReplayResult {
    pub logs: Vec<(String, DecisionLog)>,
    pub report: MetricsReport,
}

/// Replays every corpus file. All inputs are read and checked before
/// anything is written to `out`.
pub fn replay(corpus: &[PathBuf], out: &Path, cfg: SessionConfig, mode: ExecMode) -> Result<ReplayResult> {
    let assets = Arc::new(EngineAssets::load(cfg).context("loading engine assets")?);
    let files = corpus_files(corpus)?;
    let sessions = read_sessions(&files)?;
    let mut jobs = Vec::new();
    for (f, events) in files.iter().zip(sessions) {
        let (name, meta) = session_name(f);
        let end = read_end_ms(&meta)?;
        jobs.push((name, events, end));
    }
    let logs: Vec<DecisionLog> = par::map(mode, &jobs, |(_, events, end)| {
        replay_events(&assets, events, *end, false).log
    });

    let mut tally = MetricsTally::default();
    for ((_, events, _), log) in jobs.iter().zip(&logs) {
        tally.add_session(log, events, DEFAULT_TOLERANCE_MS, DEFAULT_CUTIN_WINDOW_MS);
    }
    let report = tally.report(DEFAULT_TOLERANCE_MS, DEFAULT_CUTIN_WINDOW_MS);

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut named = Vec::new();
    for ((name, _, _), log) in jobs.into_iter().zip(logs) {
        log.write_to(&out.join(format!("{name}.log.jsonl")))?;
        named.push((name, log));
    }
    fs::write(out.join("report.json"), format!("{}\n", report.to_canonical_json()))?;
    Ok(ReplayResult { logs: named, report })
}

pub fn eval(log: &Path, corpus: &Path, tolerance_ms: u64, cutin_window_ms: u64) -> Result<MetricsReport> {
    let log = DecisionLog::read(log)
        .map_err(anyhow::Error::msg)
        .with_context(|| format!("log {}", log.display()))?;
    let events = read_corpus(corpus).with_context(|| format!("corpus {}", corpus.display()))?;
    let mut t = MetricsTally::default();
    t.add_session(&log, &events, tolerance_ms, cutin_window_ms);
    Ok(t.report(tolerance_ms, cutin_window_ms))
}

pub fn generate(out: &Path, n: usize, seed: u64, spec: &SynthSpec, mode: ExecMode) -> Result<serde_json::Value> {
    spec.validate().map_err(anyhow::Error::msg)?;
    let paths = write_synthetic(out, spec, seed, n, mode).with_context(|| format!("writing {}", out.display()))?;
    Ok(json!({ "sessions": paths.len(), "dir": out.display().to_string(), "seed": seed }))
}

pub fn load_spec(path: Option<&Path>, session_ms: Option<u64>) -> Result<SynthSpec> {
    let mut spec = match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("spec {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(ms) = session_ms {
        spec.session_ms = ms;
    }
    Ok(spec)
}

/// Loads assets for both tasks from one config.
pub fn server_config(cfg: SessionConfig) -> Result<ServerConfig> {
    let sessions_dir = server::sessions_dir(&cfg.sessions_dir);
    let with_task = |task| EngineAssets::load(SessionConfig { task, ..cfg.clone() }).context("loading engine assets");
    Ok(ServerConfig {
        listening: Arc::new(with_task(Task::Listening)?),
        interview: Arc::new(with_task(Task::Interview)?),
        sessions_dir,
    })
}

pub fn serve(cfg: SessionConfig, host: &str, port: u16, ws_port: Option<u16>) -> Result<()> {
    let sc = Arc::new(server_config(cfg)?);
    let lines = TcpListener::bind((host, port)).with_context(|| format!("binding {host}:{port}"))?;
    info!("line protocol on {}", lines.local_addr()?);
    if let Some(wp) = ws_port {
        let ws = TcpListener::bind((host, wp)).with_context(|| format!("binding {host}:{wp}"))?;
        info!("browser socket on {}", ws.local_addr()?);
        let sc = Arc::clone(&sc);
        thread::spawn(move || server::serve_ws(ws, sc));
    }
    server::serve_lines(lines, sc)?;
    Ok(())
}
