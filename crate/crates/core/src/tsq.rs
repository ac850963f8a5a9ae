//! The temporal saliency query layer: per-category cross-attention over a
//! frame sequence, the residual feed-forward block, and the classifiers that
//! turn per-category responses into coarse logits.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::error::{Result, TsqError};
use crate::params::{gaussian, join, xavier, Parameterized};

/// Guards the standardization denominator in the FFN norm.
pub const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Textual,
}

/// Learnable per-category query embeddings (`C×d`).
#[derive(Clone, Debug, PartialEq)]
pub struct TsqEmbeddingSet {
    pub embeddings: Mat,
    pub modality: Modality,
}

impl TsqEmbeddingSet {
    pub fn new(embeddings: Mat, modality: Modality) -> Result<Self> {
        if embeddings.nrows() == 0 || embeddings.ncols() == 0 {
            return Err(TsqError::Init("embedding set must be non-empty".into()));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(TsqError::Init("non-finite embedding".into()));
        }
        Ok(Self {
            embeddings,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }
}

/// Row-stochastic `C×T` attention weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMatrix(Mat);

impl SaliencyMatrix {
    pub fn new(rows: Mat) -> Result<Self> {
        for (c, row) in rows.outer_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
                return Err(TsqError::Numeric {
                    layer: format!("saliency row {c} (sum {sum})"),
                });
            }
        }
        Ok(Self(rows))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn categories(&self) -> usize {
        self.0.nrows()
    }

    pub fn frames(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub scale: Mat,
    pub shift: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams {
    pub lin1_w: Mat,
    pub lin1_b: Mat,
    pub lin2_w: Mat,
    pub lin2_b: Mat,
    pub norm: Option<NormParams>,
}

impl FfnParams {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize, hidden: usize, norm: bool) -> Self {
        Self {
            lin1_w: xavier(rng, dim, hidden),
            lin1_b: Mat::zeros((1, hidden)),
            lin2_w: xavier(rng, hidden, dim),
            lin2_b: Mat::zeros((1, dim)),
            norm: norm.then(|| NormParams {
                scale: Mat::ones((1, dim)),
                shift: Mat::zeros((1, dim)),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.lin1_w.nrows()
    }
}

impl Parameterized for FfnParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "lin1.weight"), &self.lin1_w);
        f(&join(prefix, "lin1.bias"), &self.lin1_b);
        f(&join(prefix, "lin2.weight"), &self.lin2_w);
        f(&join(prefix, "lin2.bias"), &self.lin2_b);
        if let Some(n) = &self.norm {
            f(&join(prefix, "norm.scale"), &n.scale);
            f(&join(prefix, "norm.shift"), &n.shift);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "lin1.weight"), &mut self.lin1_w);
        f(&join(prefix, "lin1.bias"), &mut self.lin1_b);
        f(&join(prefix, "lin2.weight"), &mut self.lin2_w);
        f(&join(prefix, "lin2.bias"), &mut self.lin2_b);
        if let Some(n) = &mut self.norm {
            f(&join(prefix, "norm.scale"), &mut n.scale);
            f(&join(prefix, "norm.shift"), &mut n.shift);
        }
    }
}

/// Query self-attention, only present when the ablation toggle is on.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttnParams {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsqLayerParams {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub ffn: FfnParams,
    /// `T_max×d'`, added to the frames before the key/value projections.
    pub positional: Option<Mat>,
    pub self_attn: Option<SelfAttnParams>,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerShape {
    pub dim: usize,
    pub hidden: usize,
    pub t_max: usize,
    pub positional: bool,
    pub norm: bool,
    pub self_attention: bool,
    pub heads: usize,
}

impl TsqLayerParams {
    /// Key projection starts equal to the query projection so that the initial
    /// query-key form is positive semi-definite and a query attends to frames
    /// resembling it.
    pub fn init(rng: &mut ChaCha8Rng, shape: LayerShape) -> Self {
        let d = shape.dim;
        let w_q = xavier(rng, d, d);
        let w_k = w_q.clone();
        let w_v = xavier(rng, d, d);
        let ffn = FfnParams::init(rng, d, shape.hidden, shape.norm);
        let self_attn = shape.self_attention.then(|| SelfAttnParams {
            w_q: xavier(rng, d, d),
            w_k: xavier(rng, d, d),
            w_v: gaussian(rng, d, d, 0.01),
        });
        Self {
            w_q,
            w_k,
            w_v,
            ffn,
            positional: shape.positional.then(|| Mat::zeros((shape.t_max, d))),
            self_attn,
            heads: shape.heads.max(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }
}

impl Parameterized for TsqLayerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "w_q"), &self.w_q);
        f(&join(prefix, "w_k"), &self.w_k);
        f(&join(prefix, "w_v"), &self.w_v);
        if let Some(p) = &self.positional {
            f(&join(prefix, "positional"), p);
        }
        if let Some(sa) = &self.self_attn {
            f(&join(prefix, "self_attn.w_q"), &sa.w_q);
            f(&join(prefix, "self_attn.w_k"), &sa.w_k);
            f(&join(prefix, "self_attn.w_v"), &sa.w_v);
        }
        self.ffn.visit(&join(prefix, "ffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "w_q"), &mut self.w_q);
        f(&join(prefix, "w_k"), &mut self.w_k);
        f(&join(prefix, "w_v"), &mut self.w_v);
        if let Some(p) = &mut self.positional {
            f(&join(prefix, "positional"), p);
        }
        if let Some(sa) = &mut self.self_attn {
            f(&join(prefix, "self_attn.w_q"), &mut sa.w_q);
            f(&join(prefix, "self_attn.w_k"), &mut sa.w_k);
            f(&join(prefix, "self_attn.w_v"), &mut sa.w_v);
        }
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

/// Coarse classifier heads.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    /// One `1×d'` projection per category: `z_c = W_c·R̂_c + b_c`.
    Specific { weights: Mat, bias: Mat },
    /// A single `1×d'` projection shared by every category row.
    Shared { weight: Mat, bias: Mat },
    /// A full `d'→C` layer over a single response row (one-query attention).
    Dense { weight: Mat, bias: Mat },
}

impl Classifier {
    pub fn specific(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Self {
        Classifier::Specific {
            weights: xavier(rng, classes, dim),
            bias: Mat::zeros((1, classes)),
        }
    }

    pub fn shared(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Classifier::Shared {
            weight: xavier(rng, 1, dim),
            bias: Mat::zeros((1, 1)),
        }
    }

    pub fn dense(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Self {
        Classifier::Dense {
            weight: xavier(rng, dim, classes),
            bias: Mat::zeros((1, classes)),
        }
    }
}

impl Parameterized for Classifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        let (w, b) = match self {
            Classifier::Specific { weights, bias } => (weights, bias),
            Classifier::Shared { weight, bias } | Classifier::Dense { weight, bias } => {
                (weight, bias)
            }
        };
        f(&join(prefix, "weight"), w);
        f(&join(prefix, "bias"), b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        let (w, b) = match self {
            Classifier::Specific { weights, bias } => (weights, bias),
            Classifier::Shared { weight, bias } | Classifier::Dense { weight, bias } => {
                (weight, bias)
            }
        };
        f(&join(prefix, "weight"), w);
        f(&join(prefix, "bias"), b);
    }
}

/// Scaled dot-product attention of `queries` (`C×d'`) over `keys`/`values`
/// (`T×d'`), split across `heads`. Returns the head-averaged weights and the
/// concatenated responses.
fn scaled_attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Var)> {
    let d = g.value(q).ncols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(TsqError::InvalidConfig(format!(
            "{heads} heads do not divide dimension {d}"
        )));
    }
    if heads == 1 {
        let logits = g.matmul_t(q, k)?;
        let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
        let a = g.softmax_rows(logits);
        let r = g.matmul(a, v)?;
        return Ok((a, r));
    }
    let dh = d / heads;
    let mut weights = Vec::with_capacity(heads);
    let mut responses = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let logits = g.matmul_t(qh, kh)?;
        let logits = g.scale(logits, 1.0 / (dh as f64).sqrt());
        let a = g.softmax_rows(logits);
        responses.push(g.matmul(a, vh)?);
        weights.push(a);
    }
    let mut sum = weights[0];
    for &a in &weights[1..] {
        sum = g.add(sum, a)?;
    }
    let a = g.scale(sum, 1.0 / heads as f64);
    let r = g.concat_cols(&responses)?;
    Ok((a, r))
}

/// Records the attention step on `g`. `queries` is `C×d'` (already reduced),
/// `frames` is `T×d'`.
pub fn attend(
    g: &mut Graph,
    prefix: &str,
    params: &TsqLayerParams,
    queries: Var,
    frames: Var,
    use_positional: bool,
) -> Result<(Var, Var)> {
    let d = params.dim();
    let (c, dq) = g.value(queries).dim();
    let (t, dx) = g.value(frames).dim();
    if dq != d || dx != d {
        return Err(TsqError::mismatch(
            format!("{prefix} attention inputs"),
            format!("dimension {d}"),
            format!("queries {c}×{dq}, frames {t}×{dx}"),
        ));
    }
    let mut queries = queries;
    if let Some(sa) = &params.self_attn {
        let wq = g.param(&join(prefix, "self_attn.w_q"), &sa.w_q);
        let wk = g.param(&join(prefix, "self_attn.w_k"), &sa.w_k);
        let wv = g.param(&join(prefix, "self_attn.w_v"), &sa.w_v);
        let q = g.matmul(queries, wq)?;
        let k = g.matmul(queries, wk)?;
        let v = g.matmul(queries, wv)?;
        let (_, mixed) = scaled_attention(g, q, k, v, 1)?;
        queries = g.add(queries, mixed)?;
    }
    let mut frames = frames;
    if use_positional {
        let table = params.positional.as_ref().ok_or_else(|| {
            TsqError::InvalidConfig("positional embedding requested but not allocated".into())
        })?;
        if t > table.nrows() {
            return Err(TsqError::mismatch(
                format!("{prefix} positional table"),
                format!("T <= {}", table.nrows()),
                t,
            ));
        }
        let p = g.param(&join(prefix, "positional"), table);
        let rows = g.slice_rows(p, 0, t)?;
        frames = g.add(frames, rows)?;
    }
    let wq = g.param(&join(prefix, "w_q"), &params.w_q);
    let wk = g.param(&join(prefix, "w_k"), &params.w_k);
    let wv = g.param(&join(prefix, "w_v"), &params.w_v);
    let q = g.matmul(queries, wq)?;
    let k = g.matmul(frames, wk)?;
    let v = g.matmul(frames, wv)?;
    let (a, r) = scaled_attention(g, q, k, v, params.heads)?;
    g.ensure_finite(a, &join(prefix, "attention"))?;
    g.ensure_finite(r, &join(prefix, "response"))?;
    Ok((a, r))
}

/// `Norm(R + lin2(relu(lin1(R))))`, row-wise.
pub fn feed_forward(g: &mut Graph, prefix: &str, params: &FfnParams, r: Var) -> Result<Var> {
    let w1 = g.param(&join(prefix, "lin1.weight"), &params.lin1_w);
    let b1 = g.param(&join(prefix, "lin1.bias"), &params.lin1_b);
    let w2 = g.param(&join(prefix, "lin2.weight"), &params.lin2_w);
    let b2 = g.param(&join(prefix, "lin2.bias"), &params.lin2_b);
    let h = g.matmul(r, w1)?;
    let h = g.add_broadcast(h, b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, w2)?;
    let o = g.add_broadcast(o, b2)?;
    let mut y = g.add(r, o)?;
    if let Some(n) = &params.norm {
        let scale = g.param(&join(prefix, "norm.scale"), &n.scale);
        let shift = g.param(&join(prefix, "norm.shift"), &n.shift);
        y = g.norm_rows(y, scale, shift, NORM_EPS)?;
    }
    g.ensure_finite(y, prefix)?;
    Ok(y)
}

/// Maps `R̂` to a `1×C` logit row.
pub fn classify(g: &mut Graph, prefix: &str, params: &Classifier, rhat: Var) -> Result<Var> {
    let (rows, dim) = g.value(rhat).dim();
    let z = match params {
        Classifier::Specific { weights, bias } => {
            if weights.dim() != (rows, dim) || bias.dim() != (1, rows) {
                return Err(TsqError::mismatch(
                    format!("{prefix} class-specific classifier"),
                    format!("{:?}", weights.dim()),
                    format!("responses {rows}×{dim}"),
                ));
            }
            let w = g.param(&join(prefix, "weight"), weights);
            let b = g.param(&join(prefix, "bias"), bias);
            let z = g.row_dot(rhat, w)?;
            g.add(z, b)?
        }
        Classifier::Shared { weight, bias } => {
            if weight.dim() != (1, dim) {
                return Err(TsqError::mismatch(
                    format!("{prefix} shared classifier"),
                    format!("1×{dim}"),
                    format!("{:?}", weight.dim()),
                ));
            }
            let w = g.param(&join(prefix, "weight"), weight);
            let b = g.param(&join(prefix, "bias"), bias);
            let z = g.matmul_t(w, rhat)?;
            g.add_broadcast(z, b)?
        }
        Classifier::Dense { weight, bias } => {
            if rows != 1 || weight.nrows() != dim {
                return Err(TsqError::mismatch(
                    format!("{prefix} dense classifier"),
                    format!("1×{}", weight.nrows()),
                    format!("{rows}×{dim}"),
                ));
            }
            let w = g.param(&join(prefix, "weight"), weight);
            let b = g.param(&join(prefix, "bias"), bias);
            let z = g.matmul(rhat, w)?;
            g.add(z, b)?
        }
    };
    g.ensure_finite(z, prefix)?;
    Ok(z)
}

/// Attention weights and responses of per-category queries `e` (`C×d'`) over
/// frames `x` (`T×d'`).
pub fn tsq_attention(
    e: &Mat,
    x: &Mat,
    params: &TsqLayerParams,
    use_positional: bool,
) -> Result<(SaliencyMatrix, Mat)> {
    let mut g = Graph::new();
    let q = g.constant(e.clone());
    let f = g.constant(x.clone());
    let (a, r) = attend(&mut g, "tsq", params, q, f, use_positional)?;
    Ok((SaliencyMatrix::new(g.value(a).clone())?, g.value(r).clone()))
}

pub fn ffn_forward(r: &Mat, params: &FfnParams) -> Result<Mat> {
    let mut g = Graph::new();
    let rv = g.constant(r.clone());
    let y = feed_forward(&mut g, "ffn", params, rv)?;
    Ok(g.value(y).clone())
}

/// `z_c = W_c·R̂_c + b_c` with `weights` `C×d'` and `bias` of length `C`.
pub fn class_specific_classify(rhat: &Mat, weights: &Mat, bias: &[f64]) -> Result<Vec<f64>> {
    let params = Classifier::Specific {
        weights: weights.clone(),
        bias: Mat::from_shape_vec((1, bias.len()), bias.to_vec())
            .map_err(|_| TsqError::mismatch("bias", "1×C", bias.len()))?,
    };
    run_classifier(rhat, &params)
}

/// One shared `1×d'` projection applied to every row of `R̂`.
pub fn class_agnostic_classify(rhat: &Mat, weight: &[f64], bias: f64) -> Result<Vec<f64>> {
    let params = Classifier::Shared {
        weight: Mat::from_shape_vec((1, weight.len()), weight.to_vec())
            .map_err(|_| TsqError::mismatch("weight", "1×d'", weight.len()))?,
        bias: Mat::from_elem((1, 1), bias),
    };
    run_classifier(rhat, &params)
}

fn run_classifier(rhat: &Mat, params: &Classifier) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let r = g.constant(rhat.clone());
    let z = classify(&mut g, "classifier", params, r)?;
    Ok(g.value(z).row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn layer(seed: u64, d: usize, t_max: usize) -> TsqLayerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TsqLayerParams::init(
            &mut rng,
            LayerShape {
                dim: d,
                hidden: 4 * d,
                t_max,
                positional: true,
                norm: true,
                self_attention: false,
                heads: 1,
            },
        )
    }

    #[test]
    fn single_frame_attention_is_one() {
        let p = layer(1, 3, 4);
        let e = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let x = array![[0.7, -0.4, 2.0]];
        let (a, _) = tsq_attention(&e, &x, &p, true).unwrap();
        assert!(a.as_mat().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_query_projection_gives_uniform_rows() {
        let mut p = layer(2, 2, 8);
        p.w_q.fill(0.0);
        let e = array![[1.0, 2.0], [3.0, -1.0], [0.0, 1.0]];
        let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [-1.0, 0.5], [0.3, 0.3]];
        let (a, _) = tsq_attention(&e, &x, &p, false).unwrap();
        for v in a.as_mat() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn positional_table_too_short_is_rejected() {
        let p = layer(3, 2, 2);
        let e = array![[1.0, 2.0]];
        let x = Mat::zeros((3, 2));
        assert!(tsq_attention(&e, &x, &p, true).is_err());
        assert!(tsq_attention(&e, &x, &p, false).is_ok());
    }

    #[test]
    fn attention_dimension_mismatch() {
        let p = layer(3, 2, 4);
        let e = array![[1.0, 2.0, 3.0]];
        let x = Mat::zeros((3, 2));
        assert!(matches!(
            tsq_attention(&e, &x, &p, false),
            Err(TsqError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ffn_zero_linears_reduce_to_standardization() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = FfnParams::init(&mut rng, 4, 8, true);
        p.lin1_w.fill(0.0);
        p.lin2_w.fill(0.0);
        let r = array![[1.0, -1.0, 1.0, -1.0]];
        let y = ffn_forward(&r, &p).unwrap();
        let s = 1.0 / (1.0f64 + NORM_EPS).sqrt();
        for (out, inp) in y.iter().zip(r.iter()) {
            assert!((out - inp * s).abs() < 1e-15);
        }
    }

    #[test]
    fn ffn_constant_row_yields_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = FfnParams::init(&mut rng, 3, 6, true);
        p.lin1_w.fill(0.0);
        p.lin2_w.fill(0.0);
        let y = ffn_forward(&array![[2.5, 2.5, 2.5]], &p).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classifier_bias_only() {
        let z = class_specific_classify(&Mat::ones((3, 2)), &Mat::zeros((3, 2)), &[7.0, -1.0, 0.0])
            .unwrap();
        assert_eq!(z, vec![7.0, -1.0, 0.0]);
    }

    #[test]
    fn classifier_unit_dot() {
        let rhat = array![[1.0, 0.0], [0.0, 1.0]];
        let z = class_specific_classify(&rhat, &Mat::ones((2, 2)), &[0.5, -0.5]).unwrap();
        assert_eq!(z, vec![1.5, 0.5]);
    }

    #[test]
    fn classifier_row_count_mismatch() {
        let res = class_specific_classify(&Mat::ones((3, 2)), &Mat::ones((2, 2)), &[0.0, 0.0]);
        assert!(matches!(res, Err(TsqError::DimensionMismatch { .. })));
    }

    #[test]
    fn agnostic_classifier_bias_and_symmetry() {
        let z = class_agnostic_classify(&Mat::ones((4, 3)), &[0.0, 0.0, 0.0], 5.0).unwrap();
        assert_eq!(z, vec![5.0; 4]);
        let rows = array![[0.3, -0.2], [0.3, -0.2]];
        let z = class_agnostic_classify(&rows, &[1.5, 2.0], 0.1).unwrap();
        assert_eq!(z[0], z[1]);
    }

    #[test]
    fn multi_head_rows_stay_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = TsqLayerParams::init(
            &mut rng,
            LayerShape {
                dim: 4,
                hidden: 8,
                t_max: 6,
                positional: false,
                norm: true,
                self_attention: true,
                heads: 2,
            },
        );
        let e = gaussian(&mut rng, 3, 4, 1.0);
        let x = gaussian(&mut rng, 5, 4, 1.0);
        let (a, r) = tsq_attention(&e, &x, &p, false).unwrap();
        assert_eq!(a.as_mat().dim(), (3, 5));
        assert_eq!(r.dim(), (3, 4));
    }
}
