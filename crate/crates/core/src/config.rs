//! Session configuration and the immutable assets loaded from it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backchannel::{BackchannelPolicy, FormInventory, DEFAULT_REFRACTORY_MS, DEFAULT_THRESHOLD};
use crate::features::{CountBaselines, BC_FORM, BC_TIMING, ENGAGEMENT, TAKE, TRP};
use crate::interview::{default_keyword_stoplist, InterviewScript};
use crate::listener::{SentimentLexicon, Stoplist, Templates, DEFAULT_SENTIMENT_THRESHOLD};
use crate::statmodel::LogisticModel;
use crate::timeline::DEFAULT_IPU_GAP_MS;
use crate::turntaking::{FillerLexicon, TurnConfig, DEFAULT_MAX_WAIT_MS, DEFAULT_MIN_WAIT_MS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Listening,
    Interview,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Listening => "listening",
            Task::Interview => "interview",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "listening" => Some(Task::Listening),
            "interview" => Some(Task::Interview),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub bc_timing: Option<PathBuf>,
    /// Form label to one-vs-rest model file.
    pub bc_forms: BTreeMap<String, PathBuf>,
    pub trp: Option<PathBuf>,
    pub take: Option<PathBuf>,
    pub engagement: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub backchannel: f64,
    pub sentiment: f64,
    pub min_wait_ms: u64,
    pub max_wait_ms: u64,
    pub refractory_ms: u64,
    pub ipu_gap_ms: u64,
    /// Engagement below this for `low_engagement_ms` turns on the
    /// question preference in listening mode.
    pub low_engagement: f64,
    pub low_engagement_ms: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            backchannel: DEFAULT_THRESHOLD,
            sentiment: DEFAULT_SENTIMENT_THRESHOLD,
            min_wait_ms: DEFAULT_MIN_WAIT_MS,
            max_wait_ms: DEFAULT_MAX_WAIT_MS,
            refractory_ms: DEFAULT_REFRACTORY_MS,
            ipu_gap_ms: DEFAULT_IPU_GAP_MS,
            low_engagement: 0.3,
            low_engagement_ms: 10_000,
        }
    }
}

/// Resource files; unset entries use the bundled defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourcePaths {
    pub templates: Option<PathBuf>,
    pub sentiment_lexicon: Option<PathBuf>,
    pub focus_stoplist: Option<PathBuf>,
    pub fillers: Option<PathBuf>,
    pub backchannel_forms: Option<PathBuf>,
    pub interview_script: Option<PathBuf>,
    pub keyword_stoplist: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub task: Task,
    pub models: ModelPaths,
    pub thresholds: Thresholds,
    pub resources: ResourcePaths,
    pub engagement_baselines: CountBaselines,
    /// Used by training and generation only.
    pub seed: u64,
    /// Pins `p_take` at every user VadOff, bypassing the turn models.
    pub force_p_take: Option<f64>,
    /// Log the backchannel probability of every decision frame.
    pub log_frames: bool,
    pub sessions_dir: PathBuf,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            task: Task::Listening,
            models: ModelPaths::default(),
            thresholds: Thresholds::default(),
            resources: ResourcePaths::default(),
            engagement_baselines: CountBaselines::default(),
            seed: 0,
            force_p_take: None,
            log_frames: false,
            sessions_dir: PathBuf::from("sessions"),
        }
    }
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let m = &mut self.models;
        m.bc_timing.iter_mut().for_each(fix);
        m.trp.iter_mut().for_each(fix);
        m.take.iter_mut().for_each(fix);
        m.engagement.iter_mut().for_each(fix);
        m.bc_forms.values_mut().for_each(fix);
        let r = &mut self.resources;
        for p in [
            &mut r.templates,
            &mut r.sentiment_lexicon,
            &mut r.focus_stoplist,
            &mut r.fillers,
            &mut r.backchannel_forms,
            &mut r.interview_script,
            &mut r.keyword_stoplist,
        ] {
            p.iter_mut().for_each(fix);
        }
        fix(&mut self.sessions_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        let unit_open = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} = {v} outside (0, 1)")))
            }
        };
        unit_open("thresholds.backchannel", t.backchannel)?;
        unit_open("thresholds.sentiment", t.sentiment)?;
        unit_open("thresholds.low_engagement", t.low_engagement)?;
        if t.min_wait_ms == 0 || t.min_wait_ms > t.max_wait_ms {
            return Err(ConfigError::Invalid(format!(
                "wait range [{}, {}] must satisfy 0 < min <= max",
                t.min_wait_ms, t.max_wait_ms
            )));
        }
        if t.refractory_ms == 0 || t.ipu_gap_ms == 0 {
            return Err(ConfigError::Invalid(
                "refractory_ms and ipu_gap_ms must be positive".into(),
            ));
        }
        if let Some(p) = self.force_p_take {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("force_p_take = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn turn_config(&self) -> TurnConfig {
        TurnConfig {
            min_wait_ms: self.thresholds.min_wait_ms,
            max_wait_ms: self.thresholds.max_wait_ms,
            hold_turn: self.task == Task::Interview,
        }
    }
}

/// Everything a session needs, loaded once and shared read-only.
#[derive(Debug, Clone)]
pub struct EngineAssets {
    pub config: SessionConfig,
    /// `None` when no timing model is configured: backchannels are off.
    pub backchannel: Option<BackchannelPolicy>,
    pub trp: LogisticModel,
    pub take: LogisticModel,
    pub engagement: Option<LogisticModel>,
    pub templates: Templates,
    pub lexicon: SentimentLexicon,
    pub focus_stoplist: Stoplist,
    pub fillers: FillerLexicon,
    pub script: InterviewScript,
    pub keyword_stoplist: Stoplist,
}

fn file_err(path: &Path, reason: impl ToString) -> ConfigError {
    ConfigError::File {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| file_err(path, e))
}

fn model(path: &Path, schema: &crate::features::Schema) -> Result<LogisticModel, ConfigError> {
    LogisticModel::load_for(path, schema).map_err(|e| file_err(path, e))
}

impl EngineAssets {
    /// Loads and checks every referenced file. Fails on the first missing or
    /// invalid one.
    pub fn load(config: SessionConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let r = &config.resources;

        let inventory = match &r.backchannel_forms {
            Some(p) => FormInventory::load(p).map_err(|e| file_err(p, e))?,
            None => FormInventory::default(),
        };
        let mut form_models = Vec::new();
        for (label, p) in &config.models.bc_forms {
            form_models.push((label.clone(), model(p, &BC_FORM)?));
        }
        let backchannel = match &config.models.bc_timing {
            Some(p) => Some(
                BackchannelPolicy::new(
                    model(p, &BC_TIMING)?,
                    form_models,
                    inventory,
                    config.thresholds.backchannel,
                    config.thresholds.refractory_ms,
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
            None if !form_models.is_empty() => {
                return Err(ConfigError::Invalid("form models given without a timing model".into()))
            }
            None => None,
        };
        let trp = match &config.models.trp {
            Some(p) => model(p, &TRP)?,
            None => LogisticModel::zeros(&TRP),
        };
        let take = match &config.models.take {
            Some(p) => model(p, &TAKE)?,
            None => LogisticModel::zeros(&TAKE),
        };
        let engagement = config
            .models
            .engagement
            .as_deref()
            .map(|p| model(p, &ENGAGEMENT))
            .transpose()?;

        let templates = match &r.templates {
            Some(p) => Templates::load(p).map_err(|e| file_err(p, e))?,
            None => Templates::default(),
        };
        let lexicon = match &r.sentiment_lexicon {
            Some(p) => SentimentLexicon::load(p).map_err(|e| file_err(p, e))?,
            None => SentimentLexicon::default(),
        };
        let focus_stoplist = match &r.focus_stoplist {
            Some(p) => Stoplist::parse(&read(p)?),
            None => Stoplist::default(),
        };
        let fillers = match &r.fillers {
            Some(p) => FillerLexicon::parse(&read(p)?),
            None => FillerLexicon::default(),
        };
        let script = match &r.interview_script {
            Some(p) => InterviewScript::load(p).map_err(|e| file_err(p, e))?,
            None => InterviewScript::default(),
        };
        let keyword_stoplist = match &r.keyword_stoplist {
            Some(p) => Stoplist::parse(&read(p)?),
            None => default_keyword_stoplist(),
        };

        Ok(Self {
            config,
            backchannel,
            trp,
            take,
            engagement,
            templates,
            lexicon,
            focus_stoplist,
            fillers,
            script,
            keyword_stoplist,
        })
    }

    /// Assets with bundled resources and no trained models.
    pub fn defaults(task: Task) -> Self {
        Self::load(SessionConfig {
            task,
            ..SessionConfig::default()
        })
        .expect("bundled resources are valid")
    }

    /// SHA-256 over the config and loaded model parameters, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        let mut cfg = self.config.clone();
        cfg.sessions_dir = PathBuf::new();
        cfg.seed = 0;
        h.update(serde_json::to_string(&cfg.thresholds).unwrap_or_default());
        h.update(cfg.task.as_str());
        let models = [
            self.backchannel.as_ref().map(|b| &b.timing_model),
            Some(&self.trp),
            Some(&self.take),
            self.engagement.as_ref(),
        ];
        for m in models.into_iter().flatten() {
            h.update(format!("{}{:?}{:?}", m.schema_id, m.weights, m.bias));
        }
        if let Some(b) = &self.backchannel {
            for (f, m) in &b.form_models {
                h.update(format!("{}{:?}{:?}", f.label, m.weights, m.bias));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_default() {
        assert_eq!(SessionConfig::from_json("{}").unwrap(), SessionConfig::default());
    }

    #[test]
    fn range_checks() {
        assert!(SessionConfig::from_json(r#"{"thresholds":{"backchannel":1.5}}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"thresholds":{"min_wait_ms":3000}}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"force_p_take":2}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn missing_model_file() {
        let cfg = SessionConfig::from_json(r#"{"models":{"trp":"/nonexistent/trp.json"}}"#).unwrap();
        assert!(matches!(EngineAssets::load(cfg), Err(ConfigError::File { .. })));
    }

    #[test]
    fn relative_paths_resolve() {
        let mut cfg = SessionConfig::from_json(r#"{"models":{"trp":"m/trp.json"}}"#).unwrap();
        cfg.resolve_relative(Path::new("/base"));
        assert_eq!(cfg.models.trp.unwrap(), PathBuf::from("/base/m/trp.json"));
    }

    #[test]
    fn interview_holds_turn() {
        let cfg = SessionConfig {
            task: Task::Interview,
            ..Default::default()
        };
        assert!(cfg.turn_config().hold_turn);
    }
}
