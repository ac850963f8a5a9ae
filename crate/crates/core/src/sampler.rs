//! Inference-time frame selection: saliency aggregation over the most likely
//! categories, two-modality fusion, and the baseline samplers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax, Mat};
use crate::error::{Result, TsqError};
use crate::tqm::top_n_indices;
use crate::tsq::{Modality, SaliencyMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyScores {
    pub per_frame: Vec<f64>,
    pub modality: Modality,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Visual,
    Textual,
    Backfill,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

/// `s_i = Σ_c p_c·A_{c,i}` over the `top_n` most probable classes, with
/// `p = softmax(z)` renormalized over the kept classes.
///
/// A single-row saliency matrix (class-agnostic attention) is returned as is.
pub fn aggregate_saliency(
    a: &SaliencyMatrix,
    z: &[f64],
    top_n: usize,
    modality: Modality,
) -> Result<SaliencyScores> {
    let a = a.as_mat();
    if a.nrows() == 1 {
        return Ok(SaliencyScores {
            per_frame: a.row(0).to_vec(),
            modality,
        });
    }
    if z.len() != a.nrows() {
        return Err(TsqError::mismatch("coarse logits", a.nrows(), z.len()));
    }
    if top_n == 0 || top_n > z.len() {
        return Err(TsqError::InvalidConfig(format!(
            "top_classes {top_n} must be in 1..={}",
            z.len()
        )));
    }
    let p = softmax(z);
    let kept = top_n_indices(&p, top_n);
    let mass: f64 = kept.iter().map(|&c| p[c]).sum();
    let mut s = vec![0.0; a.ncols()];
    for &c in &kept {
        let w = p[c] / mass;
        for (si, ai) in s.iter_mut().zip(a.row(c)) {
            *si += w * ai;
        }
    }
    Ok(SaliencyScores {
        per_frame: s,
        modality,
    })
}

/// `round(x)` with halves going up.
fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Number of frames taken from the visual ranking for budget `k`.
pub fn visual_share(k: usize, lambda_v: f64) -> usize {
    round_half_up(lambda_v * k as f64).min(k)
}

/// Takes the top `round(λ_v·K)` frames by `sᵛ` and the top remainder by `sᵗ`,
/// unions them, and backfills from the visual ranking if duplicates left the
/// set short.
pub fn fuse_and_select(
    sv: &SaliencyScores,
    st: &SaliencyScores,
    k: usize,
    lambda_v: f64,
    lambda_t: f64,
) -> Result<SelectionResult> {
    if (lambda_v + lambda_t - 1.0).abs() > 1e-9 || lambda_v < 0.0 || lambda_t < 0.0 {
        return Err(TsqError::InvalidConfig(format!(
            "lambda_v + lambda_t must be 1, got {lambda_v} + {lambda_t}"
        )));
    }
    let t = sv.per_frame.len();
    if st.per_frame.len() != t {
        return Err(TsqError::mismatch(
            "textual saliency length",
            t,
            st.per_frame.len(),
        ));
    }
    check_budget(k, t)?;
    let kv = visual_share(k, lambda_v);
    let visual_rank = top_n_indices(&sv.per_frame, t);
    let textual_rank = top_n_indices(&st.per_frame, k - kv);
    let mut taken = vec![false; t];
    let mut out = SelectionResult {
        indices: Vec::with_capacity(k),
        provenance: Vec::with_capacity(k),
    };
    let mut push = |i: usize, p: Provenance, out: &mut SelectionResult| {
        if !taken[i] {
            taken[i] = true;
            out.indices.push(i);
            out.provenance.push(p);
        }
    };
    for &i in &visual_rank[..kv] {
        push(i, Provenance::Visual, &mut out);
    }
    for &i in &textual_rank {
        push(i, Provenance::Textual, &mut out);
    }
    for &i in &visual_rank {
        if out.indices.len() == k {
            break;
        }
        push(i, Provenance::Backfill, &mut out);
    }
    Ok(out)
}

fn check_budget(k: usize, t: usize) -> Result<()> {
    if k > t {
        return Err(TsqError::InvalidConfig(format!(
            "budget K={k} exceeds the {t} available frames"
        )));
    }
    Ok(())
}

/// `floor(j·T/K)` for `j < K`.
pub fn baseline_uniform(t: usize, k: usize) -> Result<Vec<usize>> {
    check_budget(k, t)?;
    Ok((0..k).map(|j| j * t / k).collect())
}

/// `K` distinct frames drawn without replacement, in ascending order.
pub fn baseline_random(t: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    check_budget(k, t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, t, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn baseline_dense(t: usize) -> Vec<usize> {
    (0..t).collect()
}

/// Per-frame maximum softmax confidence.
pub fn max_confidence(frame_logits: &Mat) -> Vec<f64> {
    frame_logits
        .rows()
        .into_iter()
        .map(|r| {
            softmax(&r.to_vec())
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Top-`K` frames by maximum class confidence, most confident first.
pub fn baseline_maxconf(frame_logits: &Mat, k: usize) -> Result<Vec<usize>> {
    check_budget(k, frame_logits.nrows())?;
    Ok(top_n_indices(&max_confidence(frame_logits), k))
}
