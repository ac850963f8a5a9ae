//! Run configuration. Defaults follow the full-scale setup: loss ratios 0.6/0.6,
//! fusion proportions 0.6/0.4, `m = 30`, top-5 categories, top-10 objects,
//! `T = 50`, `K = 5`. The trainer defaults are a proportional desk-scale
//! rescaling of 100 epochs / batch 64 / decays at 25, 50, 75.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsqError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// One query / one projection per category.
    Specific,
    /// A single query / a single shared projection.
    Agnostic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingInit {
    /// Prototypes for the visual branch, category-name embeddings for the textual one.
    Informed,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub classes: usize,
    pub feature_dim: usize,
    pub word_dim: usize,
    pub object_count: usize,
    pub reduced_dim: usize,
    /// FFN hidden width; `None` means `4 × reduced_dim`.
    pub hidden_dim: Option<usize>,
    pub t_max: usize,
    pub positional: bool,
    pub norm: bool,
    pub attention: Scope,
    pub classifier: Scope,
    pub self_attention: bool,
    pub layers: usize,
    pub heads: usize,
    pub visual_init: EmbeddingInit,
    pub textual_init: EmbeddingInit,
    pub top_objects: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            feature_dim: 32,
            word_dim: 16,
            object_count: 40,
            reduced_dim: 64,
            hidden_dim: None,
            t_max: 64,
            positional: true,
            norm: true,
            attention: Scope::Specific,
            classifier: Scope::Specific,
            self_attention: false,
            layers: 1,
            heads: 1,
            visual_init: EmbeddingInit::Informed,
            textual_init: EmbeddingInit::Informed,
            top_objects: 10,
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(4 * self.reduced_dim)
    }

    /// Number of query rows per branch.
    pub fn queries(&self) -> usize {
        match self.attention {
            Scope::Specific => self.classes,
            Scope::Agnostic => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("word_dim", self.word_dim),
            ("object_count", self.object_count),
            ("reduced_dim", self.reduced_dim),
            ("hidden_dim", self.hidden()),
            ("t_max", self.t_max),
            ("layers", self.layers),
            ("heads", self.heads),
            ("top_objects", self.top_objects),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TsqError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(TsqError::InvalidConfig("need at least 2 classes".into()));
        }
        if !self.reduced_dim.is_multiple_of(self.heads) {
            return Err(TsqError::InvalidConfig(format!(
                "{} heads do not divide reduced_dim {}",
                self.heads, self.reduced_dim
            )));
        }
        if self.attention == Scope::Agnostic && self.classifier == Scope::Specific {
            return Err(TsqError::InvalidConfig(
                "a class-specific classifier needs class-specific attention".into(),
            ));
        }
        if self.top_objects > self.object_count {
            return Err(TsqError::InvalidConfig(format!(
                "top_objects {} exceeds object_count {}",
                self.top_objects, self.object_count
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.6,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TsqError::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub presample: usize,
    pub budget: usize,
    pub lambda_v: f64,
    pub lambda_t: f64,
    pub top_classes: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            presample: 50,
            budget: 5,
            lambda_v: 0.6,
            lambda_t: 0.4,
            top_classes: 5,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.budget == 0 || self.budget > self.presample {
            return Err(TsqError::InvalidConfig(format!(
                "budget K={} must satisfy 1 <= K <= T={}",
                self.budget, self.presample
            )));
        }
        if (self.lambda_v + self.lambda_t - 1.0).abs() > 1e-9
            || self.lambda_v < 0.0
            || self.lambda_t < 0.0
        {
            return Err(TsqError::InvalidConfig(format!(
                "lambda_v + lambda_t must equal 1 (got {} + {})",
                self.lambda_v, self.lambda_t
            )));
        }
        if self.top_classes == 0 || self.top_classes > classes {
            return Err(TsqError::InvalidConfig(format!(
                "top_classes {} must be in 1..={classes}",
                self.top_classes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    pub m_percent: f64,
    pub probe_epochs: usize,
    pub probe_lr: f64,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self {
            m_percent: 30.0,
            probe_epochs: 10,
            probe_lr: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub momentum: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            base_lr: 1e-2,
            decay_factor: 0.1,
            decay_epochs: vec![8, 16, 24],
            momentum: 0.9,
            seed: 0,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// The full-scale schedule: 100 epochs, batch 64, decays at 25/50/75.
    pub fn full_scale() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            decay_epochs: vec![25, 50, 75],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TsqError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] <= w[1]) {
            return Err(TsqError::InvalidConfig(
                "decay_epochs must be sorted".into(),
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(TsqError::InvalidConfig("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TsqError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        self.loss_weights.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub dataset: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Every n-th video of each class is held out from training; 0 holds out nothing.
    pub holdout_every: usize,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            dataset: None,
            vocabulary: None,
            checkpoint: None,
            holdout_every: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataPaths,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    pub prototype: PrototypeConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sampling.validate(self.model.classes)?;
        self.train.validate()?;
        if !(self.prototype.m_percent > 0.0 && self.prototype.m_percent <= 100.0) {
            return Err(TsqError::InvalidConfig(
                "m_percent must be in (0, 100]".into(),
            ));
        }
        if self.data.holdout_every == 1 {
            return Err(TsqError::InvalidConfig(
                "holdout_every = 1 leaves nothing to train on".into(),
            ));
        }
        if self.model.positional && self.sampling.presample > self.model.t_max {
            return Err(TsqError::InvalidConfig(format!(
                "presample T={} exceeds positional table size {}",
                self.sampling.presample, self.model.t_max
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Overrides one setting by its short name (used by flags and ablation grids).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path: &[&str] = match key {
            "alpha" => &["train", "loss_weights", "alpha"],
            "beta" => &["train", "loss_weights", "beta"],
            "epochs" => &["train", "epochs"],
            "batch" | "batch_size" => &["train", "batch_size"],
            "lr" | "base_lr" => &["train", "base_lr"],
            "momentum" => &["train", "momentum"],
            "seed" => &["train", "seed"],
            "holdout_every" => &["data", "holdout_every"],
            "lambda_v" => &["sampling", "lambda_v"],
            "lambda_t" => &["sampling", "lambda_t"],
            "budget" => &["sampling", "budget"],
            "presample" => &["sampling", "presample"],
            "top_classes" => &["sampling", "top_classes"],
            "m_percent" => &["prototype", "m_percent"],
            "reduced_dim" => &["model", "reduced_dim"],
            "top_objects" => &["model", "top_objects"],
            "attention" => &["model", "attention"],
            "classifier" => &["model", "classifier"],
            "self_attention" => &["model", "self_attention"],
            "layers" => &["model", "layers"],
            "heads" => &["model", "heads"],
            "positional" => &["model", "positional"],
            "norm" => &["model", "norm"],
            "visual_init" => &["model", "visual_init"],
            "textual_init" => &["model", "textual_init"],
            other => {
                return Err(TsqError::InvalidConfig(format!(
                    "unknown setting '{other}'"
                )));
            }
        };
        let mut tree = serde_json::to_value(&*self)?;
        let mut slot = &mut tree;
        for part in path {
            slot = slot
                .get_mut(*part)
                .ok_or_else(|| TsqError::InvalidConfig(format!("bad path for {key}")))?;
        }
        *slot = match serde_json::from_str::<serde_json::Value>(value) {
            Ok(v) if !v.is_string() => v,
            _ => serde_json::Value::String(value.to_string()),
        };
        let updated: RunConfig = serde_json::from_value(tree)
            .map_err(|e| TsqError::InvalidConfig(format!("{key}={value}: {e}")))?;
        if key == "lambda_v" {
            let mut updated = updated;
            updated.sampling.lambda_t = 1.0 - updated.sampling.lambda_v;
            *self = updated;
        } else {
            *self = updated;
        }
        Ok(())
    }
}
