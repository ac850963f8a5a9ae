//! SGD with heavy-ball momentum, the step schedule, the joint training loop,
//! and finite-difference gradient verification.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Mat};
use crate::config::{LossWeights, TrainConfig};
use crate::error::{Result, TsqError};
use crate::linear::argmax;
use crate::model::{PreparedVideo, TsqNet};
use crate::params::Parameterized;

/// Loss above which a batch counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

#[derive(Clone, Debug, Default)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: BTreeMap<String, Mat>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&Mat> {
        self.velocity.get(name)
    }

    /// `v ← μ·v + g; p ← p − lr·v`. Parameters without a gradient entry see a
    /// zero gradient. Nothing is modified if any gradient is non-finite.
    pub fn step<P: Parameterized>(
        &mut self,
        params: &mut P,
        grads: &Gradients,
        lr: f64,
    ) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(TsqError::Numeric {
                layer: format!("gradient of {name}"),
            });
        }
        let mut mismatch = None;
        params.visit_mut("", &mut |name, p| {
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| Mat::zeros(p.dim()));
            v.mapv_inplace(|x| x * self.momentum);
            if let Some(g) = grads.get(name) {
                if g.dim() != p.dim() {
                    mismatch.get_or_insert_with(|| {
                        TsqError::mismatch(
                            format!("gradient of {name}"),
                            format!("{:?}", p.dim()),
                            format!("{:?}", g.dim()),
                        )
                    });
                    return;
                }
                *v += g;
            }
            p.scaled_add(-lr, v);
        });
        mismatch.map_or(Ok(()), Err)
    }
}

/// `base_lr · decay_factor^(number of decay epochs ≤ epoch)`
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.base_lr * cfg.decay_factor.powi(decays as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the epoch's samples.
    pub loss: f64,
    /// Top-1 of the visual coarse prediction during the epoch.
    pub train_top1: f64,
}

struct SampleStep {
    loss: f64,
    grads: Gradients,
    correct: bool,
}

fn sample_step(model: &TsqNet, video: &PreparedVideo, w: LossWeights) -> Result<SampleStep> {
    let mut g = Graph::new();
    let vars = model.record_loss(&mut g, video, w)?;
    let logits = g.value(vars.visual.logits).row(0).to_vec();
    Ok(SampleStep {
        loss: g.scalar(vars.total),
        grads: g.backward(vars.total),
        correct: argmax(&logits) == video.label,
    })
}

/// Minimizes the batch-averaged total loss. Per-sample gradients are computed
/// in parallel and summed in index order, so the trajectory depends only on
/// `(videos, model, cfg)`.
pub fn train(
    videos: &[PreparedVideo],
    model: &mut TsqNet,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(TsqError::InvalidConfig("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = SgdMomentum::new(cfg.momentum);
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let steps: Vec<SampleStep> = batch
                .par_iter()
                .map(|&i| sample_step(model, &videos[i], cfg.loss_weights))
                .collect::<Result<_>>()?;
            let mut grads = Gradients::default();
            let mut batch_loss = 0.0;
            for s in &steps {
                grads.accumulate(&s.grads);
                batch_loss += s.loss;
                correct += s.correct as usize;
            }
            let n = steps.len() as f64;
            batch_loss /= n;
            if batch_loss.is_nan() || batch_loss > DIVERGENCE_LIMIT {
                return Err(TsqError::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss * n;
            grads.scale(1.0 / n);
            opt.step(model, &grads, lr)?;
        }
        let entry = EpochLog {
            epoch,
            lr,
            loss: loss_sum / videos.len() as f64,
            train_top1: correct as f64 / videos.len() as f64,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.1e} loss {:.4} top1 {:.3}",
            entry.loss,
            entry.train_top1
        );
        log.push(entry);
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, GRAD_FLOOR)`
    pub relative_error: f64,
    pub max_abs_error: f64,
    /// Entries left out because the loss is not smooth within `FD_STEP` of
    /// them (a ReLU input near zero); see [`KINK_TOLERANCE`].
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors
            .iter()
            .filter(move |t| t.relative_error.is_nan() || t.relative_error > self.tolerance)
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Gradient norms below this are compared in absolute terms. Central
/// differences at `FD_STEP` carry about `ε·|loss|/FD_STEP ≈ 1e-10` of rounding
/// noise per entry, so a tensor whose true gradient is identically zero (a
/// bias shared by every logit, say) would otherwise compare noise against noise.
pub const GRAD_FLOOR: f64 = 1e-5;

/// An entry whose difference quotients at `FD_STEP` and `FD_STEP / 2`
/// disagree by more than this (relative to `max(1, |g|)`) straddles a kink,
/// where central differences say nothing about the derivative. For a smooth
/// loss the two quotients agree to about 1e-10.
pub const KINK_TOLERANCE: f64 = 1e-6;

/// Compares `analytic` against central differences of `loss` for every
/// tensor of `params`. `fault` names a tensor (full name or last component)
/// whose analytic gradient is deliberately perturbed before comparison.
pub fn check_gradients<P, F>(
    params: &P,
    loss: F,
    analytic: &Gradients,
    tolerance: f64,
    fault: Option<&str>,
) -> Result<GradcheckReport>
where
    P: Parameterized + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let mut tensors = Vec::new();
    for name in params.parameter_names() {
        let shape = tensor_shape(params, &name);
        let mut numeric = Mat::zeros(shape);
        let mut smooth = vec![vec![true; shape.1]; shape.0];
        let mut probe = params.clone();
        let quotient = |probe: &mut P, r: usize, c: usize, original: f64, h: f64| -> Result<f64> {
            set_entry(probe, &name, r, c, original + h);
            let up = loss(probe)?;
            set_entry(probe, &name, r, c, original - h);
            let down = loss(probe)?;
            set_entry(probe, &name, r, c, original);
            Ok((up - down) / (2.0 * h))
        };
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let original = entry(&probe, &name, r, c);
                let d = quotient(&mut probe, r, c, original, FD_STEP)?;
                let half = quotient(&mut probe, r, c, original, FD_STEP / 2.0)?;
                numeric[[r, c]] = d;
                smooth[r][c] = (d - half).abs() <= KINK_TOLERANCE * d.abs().max(1.0);
            }
        }
        let mut grad = analytic
            .get(&name)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(shape));
        if fault.is_some_and(|f| name == f || name.ends_with(&format!(".{f}"))) {
            grad.mapv_inplace(|g| 1.5 * g + 1e-3);
        }
        let mut skipped = 0;
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                if !smooth[r][c] {
                    numeric[[r, c]] = 0.0;
                    grad[[r, c]] = 0.0;
                    skipped += 1;
                }
            }
        }
        let diff = &grad - &numeric;
        let norm = |m: &Mat| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm(&grad).max(norm(&numeric)).max(GRAD_FLOOR);
        let relative_error = norm(&diff) / denom;
        tensors.push(TensorCheck {
            relative_error,
            max_abs_error: diff.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
            skipped,
            name,
        });
    }
    let max_relative_error = tensors
        .iter()
        .fold(0.0, |m, t| f64::max(m, t.relative_error));
    Ok(GradcheckReport {
        passed: max_relative_error <= tolerance,
        tensors,
        max_relative_error,
        tolerance,
    })
}

fn tensor_shape<P: Parameterized>(params: &P, name: &str) -> (usize, usize) {
    let mut shape = (0, 0);
    params.visit("", &mut |n, m| {
        if n == name {
            shape = m.dim();
        }
    });
    shape
}

fn entry<P: Parameterized>(params: &P, name: &str, r: usize, c: usize) -> f64 {
    let mut v = 0.0;
    params.visit("", &mut |n, m| {
        if n == name {
            v = m[[r, c]];
        }
    });
    v
}

fn set_entry<P: Parameterized>(params: &mut P, name: &str, r: usize, c: usize, value: f64) {
    params.visit_mut("", &mut |n, m| {
        if n == name {
            m[[r, c]] = value;
        }
    });
}

/// Gradient check of the full training objective on one video.
pub fn gradcheck(
    model: &TsqNet,
    video: &PreparedVideo,
    weights: LossWeights,
    tolerance: f64,
    fault: Option<&str>,
) -> Result<GradcheckReport> {
    let (_, grads) = model.loss_and_grads(video, weights)?;
    check_gradients(
        model,
        |m: &TsqNet| m.loss(video, weights),
        &grads,
        tolerance,
        fault,
    )
}
