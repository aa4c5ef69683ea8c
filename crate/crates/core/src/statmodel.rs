//! Binary logistic regression shared by every predictor in the engine.
//!
//! Training is mini-batch gradient descent on the L2-regularized mean
//! log-loss. Batches are drawn from a seeded shuffle, so equal seeds give
//! bit-identical weights. A dataset no larger than one batch is trained
//! full-batch.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Schema;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema mismatch: expected {expected}, got {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("non-finite feature value in row {row}")]
    NonFiniteFeature { row: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("model file version {found} is not supported (expected {MODEL_FILE_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("model io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 200,
            l2: 1e-4,
            seed: 42,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub n_train: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub lr: f64,
    #[serde(default)]
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub schema_id: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub schema_id: String,
    pub dim: usize,
    pub rows: Vec<(Vec<f64>, bool)>,
}

impl LabeledDataset {
    pub fn new(schema: &Schema) -> Self {
        Self {
            schema_id: schema.id.to_string(),
            dim: schema.dim(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, x: Vec<f64>, y: bool) -> Result<(), ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::SchemaMismatch {
                expected: format!("{} ({} features)", self.schema_id, self.dim),
                found: format!("{} features", x.len()),
            });
        }
        self.rows.push((x, y));
        Ok(())
    }

    pub fn extend(&mut self, other: LabeledDataset) -> Result<(), ModelError> {
        if other.schema_id != self.schema_id || other.dim != self.dim {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema_id.clone(),
                found: other.schema_id,
            });
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.1).count()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn zeros(schema: &Schema) -> Self {
        Self {
            schema_id: schema.id.to_string(),
            weights: vec![0.0; schema.dim()],
            bias: 0.0,
            meta: ModelMeta::default(),
        }
    }

    pub fn with_params(schema: &Schema, weights: Vec<f64>, bias: f64) -> Self {
        assert_eq!(weights.len(), schema.dim(), "weight length must match schema");
        Self {
            schema_id: schema.id.to_string(),
            weights,
            bias,
            meta: ModelMeta::default(),
        }
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<(), ModelError> {
        if self.schema_id != schema.id || self.weights.len() != schema.dim() {
            return Err(ModelError::SchemaMismatch {
                expected: schema.id.to_string(),
                found: self.schema_id.clone(),
            });
        }
        Ok(())
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }

    /// `sigmoid(w·x + b)` after checking the vector against the model layout.
    pub fn predict_prob(&self, schema_id: &str, x: &[f64]) -> Result<f64, ModelError> {
        if schema_id != self.schema_id || x.len() != self.weights.len() {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema_id.clone(),
                found: format!("{schema_id} ({} features)", x.len()),
            });
        }
        Ok(sigmoid(self.logit(x)))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let doc = ModelFile {
            version: MODEL_FILE_VERSION,
            schema_id: self.schema_id.clone(),
            bias: format!("{:?}", self.bias),
            weights: self.weights.iter().map(|w| format!("{w:?}")).collect(),
            meta: self.meta.clone(),
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| ModelError::Io(e.to_string()))?;
        // Write-then-rename so readers never observe a partial file.
        let tmp = path.with_extension("json.tmp");
        let io = |e: std::io::Error| ModelError::Io(format!("{}: {e}", path.display()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
        f.write_all(b"\n").map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            ModelError::Io(msg) => ModelError::Io(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Loads and checks the model against the schema it is meant to serve.
    pub fn load_for(path: &Path, schema: &Schema) -> Result<Self, ModelError> {
        let m = Self::load(path)?;
        m.check_schema(schema)?;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Io(e.to_string()))?;
        if doc.version != MODEL_FILE_VERSION {
            return Err(ModelError::VersionMismatch { found: doc.version });
        }
        let parse = |s: &str| -> Result<f64, ModelError> {
            let v: f64 = s.parse().map_err(|_| ModelError::Io(format!("invalid number {s:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ModelError::Io(format!("non-finite parameter {s:?}")))
            }
        };
        Ok(Self {
            schema_id: doc.schema_id,
            bias: parse(&doc.bias)?,
            weights: doc.weights.iter().map(|s| parse(s)).collect::<Result<_, _>>()?,
            meta: doc.meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    schema_id: String,
    bias: String,
    weights: Vec<String>,
    meta: ModelMeta,
}

/// Regularized mean log-loss: `mean(-y ln p - (1-y) ln(1-p)) + l2/2 |w|^2`.
/// The bias is not regularized.
pub fn loss(model: &LogisticModel, rows: &[(Vec<f64>, bool)], l2: f64) -> f64 {
    let n = rows.len().max(1) as f64;
    let data: f64 = rows
        .iter()
        .map(|(x, y)| {
            let z = model.logit(x);
            // log(1 + e^z) - y z, stable for large |z|
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - if *y { z } else { 0.0 }
        })
        .sum();
    data / n + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`loss`]: (d/dw, d/db).
pub fn gradient(model: &LogisticModel, rows: &[&(Vec<f64>, bool)], l2: f64) -> (Vec<f64>, f64) {
    let n = rows.len().max(1) as f64;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    for (x, y) in rows.iter().map(|r| (&r.0, r.1)) {
        let err = sigmoid(model.logit(x)) - if y { 1.0 } else { 0.0 };
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += err * xi;
        }
        gb += err;
    }
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

/// Training record: loss after each epoch.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
}

pub fn train(data: &LabeledDataset, cfg: &TrainConfig) -> Result<LogisticModel, ModelError> {
    train_with_report(data, cfg).map(|(m, _)| m)
}

pub fn train_with_report(data: &LabeledDataset, cfg: &TrainConfig) -> Result<(LogisticModel, TrainReport), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for (i, (x, _)) in data.rows.iter().enumerate() {
        if x.len() != data.dim {
            return Err(ModelError::SchemaMismatch {
                expected: format!("{} features", data.dim),
                found: format!("{} features in row {i}", x.len()),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature { row: i });
        }
    }

    let mut model = LogisticModel {
        schema_id: data.schema_id.clone(),
        weights: vec![0.0; data.dim],
        bias: 0.0,
        meta: ModelMeta {
            n_train: data.len(),
            epochs: cfg.epochs,
            seed: cfg.seed,
            lr: cfg.lr,
            l2: cfg.l2,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut report = TrainReport::default();
    // Diagonal preconditioner: features with a large second moment take
    // proportionally smaller steps. The optimum is unchanged.
    let n = data.len() as f64;
    let scale: Vec<f64> = (0..data.dim)
        .map(|j| (data.rows.iter().map(|(x, _)| x[j] * x[j]).sum::<f64>() / n).max(1.0))
        .collect();

    for _ in 0..cfg.epochs {
        if data.len() > batch {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let rows: Vec<&(Vec<f64>, bool)> = chunk.iter().map(|&i| &data.rows[i]).collect();
            let (gw, gb) = gradient(&model, &rows, cfg.l2);
            for ((w, g), s) in model.weights.iter_mut().zip(&gw).zip(&scale) {
                *w -= cfg.lr * g / s;
            }
            model.bias -= cfg.lr * gb;
        }
        report.loss_curve.push(loss(&model, &data.rows, cfg.l2));
    }
    Ok((model, report))
}

/// Area under the ROC curve via the rank statistic, with ties counted half.
pub fn auc(scores: &[(f64, bool)]) -> f64 {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * sorted[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    (rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos as f64 * neg as f64)
}
