//! Frame-wise backchannel timing and form selection.
//!
//! Every decision frame the timing model scores the probability that a
//! backchannel should begin within the next 500 ms. A trigger fires when that
//! probability clears the threshold, the refractory period has passed, and the
//! system is not already speaking. The form is then picked by one-vs-rest
//! models over prosodic and linguistic features of the current IPU tail.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, BC_FORM, BC_TIMING};
use crate::prosody::FrameFeatures;
use crate::statmodel::{LogisticModel, ModelError};

/// Prediction horizon of the timing model.
pub const HORIZON_MS: u64 = 500;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_REFRACTORY_MS: u64 = 1500;

const DEFAULT_INVENTORY: &str = include_str!("../resources/backchannel_forms.json");

#[derive(Debug, Error)]
pub enum BackchannelError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no form models loaded")]
    NoModelsLoaded,
    #[error("invalid form inventory: {0}")]
    Inventory(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormFamily {
    Continuer,
    Assessment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackchannelForm {
    pub label: String,
    pub text: String,
    pub family: FormFamily,
}

/// Ordered form inventory. Order is the tie-break for form selection.
#[derive(Debug, Clone, PartialEq)]
pub struct FormInventory {
    forms: Vec<BackchannelForm>,
}

impl FormInventory {
    pub fn from_json(text: &str) -> Result<Self, BackchannelError> {
        let forms: Vec<BackchannelForm> =
            serde_json::from_str(text).map_err(|e| BackchannelError::Inventory(e.to_string()))?;
        Self::new(forms)
    }

    pub fn new(forms: Vec<BackchannelForm>) -> Result<Self, BackchannelError> {
        if forms.is_empty() {
            return Err(BackchannelError::Inventory("empty inventory".into()));
        }
        for (i, f) in forms.iter().enumerate() {
            if f.label.is_empty() || f.text.is_empty() {
                return Err(BackchannelError::Inventory(format!("form {i} has empty label or text")));
            }
            if forms[..i].iter().any(|g| g.label == f.label || g.text == f.text) {
                return Err(BackchannelError::Inventory(format!(
                    "duplicate label or text for {:?}",
                    f.label
                )));
            }
        }
        Ok(Self { forms })
    }

    pub fn load(path: &Path) -> Result<Self, BackchannelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackchannelError::Inventory(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn forms(&self) -> &[BackchannelForm] {
        &self.forms
    }

    pub fn get(&self, label: &str) -> Option<&BackchannelForm> {
        self.forms.iter().find(|f| f.label == label)
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.forms.iter().position(|f| f.label == label)
    }
}

impl Default for FormInventory {
    fn default() -> Self {
        Self::from_json(DEFAULT_INVENTORY).expect("bundled inventory is valid")
    }
}

#[derive(Debug, Clone)]
pub struct BackchannelPolicy {
    pub timing_model: LogisticModel,
    /// One-vs-rest models in inventory order.
    pub form_models: Vec<(BackchannelForm, LogisticModel)>,
    pub inventory: FormInventory,
    pub threshold: f64,
    pub refractory_ms: u64,
    pub horizon_ms: u64,
}

impl BackchannelPolicy {
    pub fn new(
        timing_model: LogisticModel,
        form_models: Vec<(String, LogisticModel)>,
        inventory: FormInventory,
        threshold: f64,
        refractory_ms: u64,
    ) -> Result<Self, BackchannelError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(BackchannelError::InvalidPolicy(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        if refractory_ms == 0 {
            return Err(BackchannelError::InvalidPolicy("refractory must be positive".into()));
        }
        timing_model.check_schema(&BC_TIMING)?;
        let mut ordered = Vec::new();
        for form in inventory.forms() {
            if let Some((_, m)) = form_models.iter().find(|(l, _)| *l == form.label) {
                m.check_schema(&BC_FORM)?;
                ordered.push((form.clone(), m.clone()));
            }
        }
        if let Some((l, _)) = form_models.iter().find(|(l, _)| inventory.get(l).is_none()) {
            return Err(BackchannelError::Inventory(format!("model for unknown form {l:?}")));
        }
        Ok(Self {
            timing_model,
            form_models: ordered,
            inventory,
            threshold,
            refractory_ms,
            horizon_ms: HORIZON_MS,
        })
    }

    /// Probability that a backchannel should begin within the horizon.
    pub fn predict_timing(&self, features: &FrameFeatures) -> Result<f64, BackchannelError> {
        Ok(self
            .timing_model
            .predict_prob(BC_TIMING.id, &features::bc_timing_vector(features))
            .map_err(|_| ModelError::SchemaMismatch {
                expected: BC_TIMING.id.into(),
                found: features.schema_id.into(),
            })?)
    }

    pub fn decide(&self, prob: f64, state: &DecisionState) -> bool {
        let rested = state
            .last_bc_t_ms
            .is_none_or(|last| state.now_ms.saturating_sub(last) >= self.refractory_ms);
        prob >= self.threshold && rested && !state.system_speaking
    }

    /// Highest-scoring form for a [`features::bc_form_vector`]; earlier
    /// inventory entries win ties.
    pub fn select_form(&self, x: &[f64]) -> Result<&BackchannelForm, BackchannelError> {
        if self.form_models.is_empty() {
            return Err(BackchannelError::NoModelsLoaded);
        }
        let mut best: Option<(&BackchannelForm, f64)> = None;
        for (form, model) in &self.form_models {
            let p = model.predict_prob(BC_FORM.id, x)?;
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((form, p));
            }
        }
        Ok(best.expect("non-empty").0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DecisionState {
    pub last_bc_t_ms: Option<u64>,
    pub system_speaking: bool,
    pub now_ms: u64,
}

/// Training label for a decision frame: does a gold backchannel start in
/// `(t, t + horizon]`?
pub fn timing_label(t_ms: u64, gold_starts: &[u64], horizon_ms: u64) -> bool {
    let i = gold_starts.partition_point(|&g| g <= t_ms);
    gold_starts.get(i).is_some_and(|&g| g <= t_ms + horizon_ms)
}
