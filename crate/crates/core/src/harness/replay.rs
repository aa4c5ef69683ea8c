//! Corpus replay through the full engine.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::config::EngineAssets;
use crate::corpus::{self, CorpusError};
use crate::engine::Session;
use crate::harness::log::DecisionLog;
use crate::par::{self, ExecMode};
use crate::timeline::DialogueEvent;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("corpus {path}: {source}")]
    Corpus { path: PathBuf, source: CorpusError },
    #[error("session meta {path}: {reason}")]
    Meta { path: PathBuf, reason: String },
}

/// Replay end when none is given: the last event plus the longest wait, so
/// a pending turn decision still resolves.
pub fn default_end(assets: &EngineAssets, events: &[DialogueEvent]) -> u64 {
    events.last().map_or(0, |e| e.t_ms) + assets.config.thresholds.max_wait_ms
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOutput {
    pub log: DecisionLog,
    /// Wall-clock cost of each decision frame, when instrumented.
    pub frame_costs_ns: Vec<u64>,
}

/// Feeds `events` through a fresh session. An empty event list yields an
/// empty log; events the engine rejects are recorded in the log.
pub fn replay_events(
    assets: &Arc<EngineAssets>,
    events: &[DialogueEvent],
    end_ms: Option<u64>,
    instrument: bool,
) -> ReplayOutput {
    if events.is_empty() && end_ms.is_none() {
        return ReplayOutput::default();
    }
    let mut s = Session::new(Arc::clone(assets));
    if instrument {
        s = s.with_instrumentation();
    }
    let _ = s.start();
    for e in events {
        let _ = s.ingest(e.clone());
    }
    s.finish(end_ms.unwrap_or_else(|| default_end(assets, events)));
    let frame_costs_ns = s.frame_costs_ns().to_vec();
    ReplayOutput {
        log: s.into_log(),
        frame_costs_ns,
    }
}

/// Session end stored next to a live session's event stream.
pub fn read_end_ms(meta_path: &Path) -> Result<Option<u64>, ReplayError> {
    if !meta_path.exists() {
        return Ok(None);
    }
    let err = |reason: String| ReplayError::Meta {
        path: meta_path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(meta_path).map_err(|e| err(e.to_string()))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    Ok(v.get("end_t").and_then(|x| x.as_u64()))
}

pub fn replay(path: &Path, assets: &Arc<EngineAssets>, end_ms: Option<u64>) -> Result<DecisionLog, ReplayError> {
    let events = corpus::read_corpus(path).map_err(|source| ReplayError::Corpus {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(replay_events(assets, &events, end_ms, false).log)
}

/// Replays independent sessions, in parallel when `mode` allows.
pub fn replay_many(
    mode: ExecMode,
    assets: &Arc<EngineAssets>,
    sessions: &[Vec<DialogueEvent>],
    instrument: bool,
) -> Vec<ReplayOutput> {
    par::map(mode, sessions, |events| replay_events(assets, events, None, instrument))
}

/// Nearest-rank percentile of `xs` (`q` in [0, 1]).
pub fn percentile(xs: &[u64], q: f64) -> u64 {
    if xs.is_empty() {
        return 0;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
