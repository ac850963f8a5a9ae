//! Cross-modality swap attention and the four-term training objective.
//!
//! Each branch's attention weights also gather the *other* branch's reduced
//! frame sequence. The swapped response is scored by the branch that owns the
//! features: `Aᵗ·X̂ᵛ` goes through the visual FFN and classifier, `Aᵛ·X̂ᵗ`
//! through the textual ones. Gradients flow into both attention sources.

use crate::autograd::{log_sum_exp, softmax, Graph, Mat, Var};
pub use crate::config::LossWeights;
use crate::error::{Result, TsqError};
use crate::tsq::SaliencyMatrix;

#[derive(Clone, Debug)]
pub struct BranchOutputs {
    pub visual_saliency: SaliencyMatrix,
    pub textual_saliency: SaliencyMatrix,
    /// `X̂ᵛ`, `T×d'`
    pub visual_features: Mat,
    /// `X̂ᵗ`, `T×d'`
    pub textual_features: Mat,
    pub visual_logits: Vec<f64>,
    pub textual_logits: Vec<f64>,
}

/// `(Aᵗ·X̂ᵛ, Aᵛ·X̂ᵗ)`
pub fn swap_responses(outputs: &BranchOutputs) -> Result<(Mat, Mat)> {
    let av = outputs.visual_saliency.as_mat();
    let at = outputs.textual_saliency.as_mat();
    let (xv, xt) = (&outputs.visual_features, &outputs.textual_features);
    if at.ncols() != xv.nrows() || av.ncols() != xt.nrows() || av.dim() != at.dim() {
        return Err(TsqError::mismatch(
            "swap attention",
            format!("A {:?} over T={}", av.dim(), xv.nrows()),
            format!("Aᵗ {:?}, X̂ᵗ {:?}", at.dim(), xt.dim()),
        ));
    }
    if xv.ncols() != xt.ncols() {
        return Err(TsqError::mismatch(
            "swap feature dims",
            xv.ncols(),
            xt.ncols(),
        ));
    }
    Ok((at.dot(xv), av.dot(xt)))
}

/// Records `Aᵗ·X̂ᵛ` (or the mirror) on the graph.
pub fn swap_response(g: &mut Graph, attention: Var, features: Var) -> Result<Var> {
    g.matmul(attention, features)
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

#[derive(Clone, Debug, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    /// `[L_v, L_t, L_{t→v}, L_{v→t}]`
    pub terms: [f64; 4],
    /// Gradient of `value` with respect to each logit vector, same order.
    pub grads: [Vec<f64>; 4],
}

/// `L_v + L_t + α·L_{t→v} + β·L_{v→t}` with softmax cross-entropy terms.
pub fn total_loss(
    zv: &[f64],
    zt: &[f64],
    z_tv: &[f64],
    z_vt: &[f64],
    label: usize,
    w: LossWeights,
) -> Result<TotalLoss> {
    w.validate()?;
    let all = [zv, zt, z_tv, z_vt];
    let c = zv.len();
    if all.iter().any(|z| z.len() != c) || label >= c {
        return Err(TsqError::mismatch(
            "loss logits",
            format!("four vectors of length C > label {label}"),
            format!("{:?}", all.map(|z| z.len())),
        ));
    }
    let coeff = [1.0, 1.0, w.alpha, w.beta];
    let terms = all.map(|z| cross_entropy(z, label));
    let value = terms.iter().zip(coeff).map(|(l, k)| k * l).sum();
    let mut grads: [Vec<f64>; 4] = Default::default();
    for (slot, (z, k)) in grads.iter_mut().zip(all.iter().zip(coeff)) {
        *slot = softmax(z)
            .into_iter()
            .enumerate()
            .map(|(i, p)| k * (p - if i == label { 1.0 } else { 0.0 }))
            .collect();
    }
    if !f64::is_finite(value) {
        return Err(TsqError::Numeric {
            layer: "total loss".into(),
        });
    }
    Ok(TotalLoss {
        value,
        terms,
        grads,
    })
}

/// Graph form of the weighted objective over four `1×1` loss terms. Terms with
/// a zero weight may be passed as `None`.
pub fn weighted_total(
    g: &mut Graph,
    lv: Var,
    lt: Var,
    l_tv: Option<Var>,
    l_vt: Option<Var>,
    w: LossWeights,
) -> Result<Var> {
    let mut total = g.add(lv, lt)?;
    if let Some(l) = l_tv {
        let s = g.scale(l, w.alpha);
        total = g.add(total, s)?;
    }
    if let Some(l) = l_vt {
        let s = g.scale(l, w.beta);
        total = g.add(total, s)?;
    }
    Ok(total)
}
