//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Every value is a 2-D matrix; vectors are `1×n` rows and scalars are `1×1`.
//! Parameters enter the tape by name, so the gradients returned by
//! [`Graph::backward`] are keyed the same way the model names its tensors.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, Axis};

use crate::error::{Result, TsqError};

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + b` where `b` is `1×n` (row broadcast) or `1×1`.
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    Relu(Var),
    NormRows {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    /// `out[0, c] = Σ_j a[c, j]·b[c, j]`
    RowDot(Var, Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    by_name: HashMap<String, Var>,
}

/// Parameter gradients keyed by tensor name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<String, Mat>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Mat) {
        self.entries.insert(name.into(), grad);
    }

    /// Adds `other` into `self`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.entries {
            match self.entries.get_mut(name) {
                Some(acc) => *acc += g,
                None => {
                    self.entries.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.entries.values_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A named trainable tensor. Registering the same name twice returns the
    /// first handle, so shared parameters accumulate a single gradient.
    pub fn param(&mut self, name: &str, value: &Mat) -> Var {
        if let Some(&v) = self.by_name.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.push((name.to_string(), v));
        self.by_name.insert(name.to_string(), v);
        v
    }

    pub fn ensure_finite(&self, v: Var, layer: &str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(TsqError::Numeric {
                layer: layer.to_string(),
            })
        }
    }

    fn check_shape(&self, context: &str, ok: bool, a: Var, b: Var) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(TsqError::mismatch(
                context,
                format!("{:?}", self.value(a).dim()),
                format!("{:?}", self.value(b).dim()),
            ))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ok = self.value(a).ncols() == self.value(b).nrows();
        self.check_shape("matmul", ok, a, b)?;
        let out = self.value(a).dot(self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let ok = self.value(a).ncols() == self.value(b).ncols();
        self.check_shape("matmul_t", ok, a, b)?;
        let out = self.value(a).dot(&self.value(b).t());
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let ok = self.value(a).dim() == self.value(b).dim();
        self.check_shape("add", ok, a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, cols) = self.value(a).dim();
        let bd = self.value(b).dim();
        let ok = bd == (1, cols) || bd == (1, 1);
        self.check_shape("add_broadcast", ok, a, b)?;
        let out = if bd == (1, 1) {
            let c = self.value(b)[[0, 0]];
            self.value(a).mapv(|v| v + c)
        } else {
            self.value(a) + self.value(b)
        };
        Ok(self.push(out, Op::AddBroadcast(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).mapv(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Per-row standardization followed by a learnable per-column affine map.
    pub fn norm_rows(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let cols = self.value(x).ncols();
        let ok = self.value(scale).dim() == (1, cols) && self.value(shift).dim() == (1, cols);
        self.check_shape("norm_rows", ok, x, scale)?;
        let xv = self.value(x);
        let mut xhat = Mat::zeros(xv.dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (r, row) in xv.outer_iter().enumerate() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (c, v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * is;
            }
        }
        let out = &xhat * self.value(scale) + self.value(shift);
        Ok(self.push(
            out,
            Op::NormRows {
                x,
                scale,
                shift,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let ok = self.value(a).dim() == self.value(b).dim();
        self.check_shape("row_dot", ok, a, b)?;
        let prod = self.value(a) * self.value(b);
        let out = prod.sum_axis(Axis(1)).insert_axis(Axis(0));
        Ok(self.push(out, Op::RowDot(a, b)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let rows = self.value(a).nrows();
        if start + len > rows {
            return Err(TsqError::mismatch(
                "slice_rows",
                format!("at least {} rows", start + len),
                rows,
            ));
        }
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let cols = self.value(a).ncols();
        if start + len > cols {
            return Err(TsqError::mismatch(
                "slice_cols",
                format!("at least {} columns", start + len),
                cols,
            ));
        }
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|_| TsqError::mismatch("concat_cols", "equal row counts", "ragged inputs"))?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Softmax cross-entropy of a `1×C` logit row against `label`; yields `1×1`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.nrows() != 1 || label >= z.ncols() {
            return Err(TsqError::mismatch(
                "cross_entropy",
                format!("1×C logits with label < C (label {label})"),
                format!("{:?}", z.dim()),
            ));
        }
        let row: Vec<f64> = z.row(0).to_vec();
        let probs = softmax(&row);
        let loss = log_sum_exp(&row) - row[label];
        Ok(self.push(
            Mat::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// Reverse sweep from the scalar `output`, returning gradients of every
    /// named parameter that was registered on this graph.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Mat::ones(self.value(output).dim()));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = gout.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&gout);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = gout.dot(self.value(*b));
                    let gb = gout.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gout.clone());
                    acc(&mut grads, *b, gout);
                }
                Op::AddBroadcast(a, b) => {
                    let gb = if self.value(*b).dim() == (1, 1) {
                        Mat::from_elem((1, 1), gout.sum())
                    } else {
                        gout.sum_axis(Axis(0)).insert_axis(Axis(0))
                    };
                    acc(&mut grads, *a, gout);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => {
                    acc(&mut grads, *a, gout.mapv(|v| v * f));
                }
                Op::Transpose(a) => {
                    acc(&mut grads, *a, gout.t().to_owned());
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| gout[[r, c]] * y[[r, c]]).sum();
                        for c in 0..y.ncols() {
                            ga[[r, c]] = y[[r, c]] * (gout[[r, c]] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = gout;
                    ga.zip_mut_with(x, |g, &xv| {
                        if xv <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::NormRows {
                    x,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let gshift = gout.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gscale = (&gout * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &gout * self.value(*scale);
                    let n = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let mean_d: f64 = dxhat.row(r).sum() / n;
                        let mean_dx: f64 = (0..xhat.ncols())
                            .map(|c| dxhat[[r, c]] * xhat[[r, c]])
                            .sum::<f64>()
                            / n;
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] =
                                inv_std[r] * (dxhat[[r, c]] - mean_d - xhat[[r, c]] * mean_dx);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *scale, gscale);
                    acc(&mut grads, *shift, gshift);
                }
                Op::RowDot(a, b) => {
                    let gcol = gout.row(0).to_owned().insert_axis(Axis(1));
                    let ga = self.value(*b) * &gcol;
                    let gb = self.value(*a) * &gcol;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + gout.nrows(), ..])
                        .assign(&gout);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + gout.ncols()])
                        .assign(&gout);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let gp = gout.slice(s![.., offset..offset + w]).to_owned();
                        acc(&mut grads, *p, gp);
                        offset += w;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let g = gout[[0, 0]];
                    let mut gz = Mat::zeros((1, probs.len()));
                    for (c, p) in probs.iter().enumerate() {
                        let target = if c == *label { 1.0 } else { 0.0 };
                        gz[[0, c]] = g * (p - target);
                    }
                    acc(&mut grads, *logits, gz);
                }
            }
        }

        let mut out = Gradients::default();
        for (name, v) in &self.params {
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Mat::zeros(self.value(*v).dim()));
            out.entries.insert(name.clone(), g);
        }
        out
    }
}

/// Numerically stable softmax of one vector.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(m: &Mat) -> Mat {
    let mut out = Mat::zeros(m.dim());
    for (r, row) in m.outer_iter().enumerate() {
        let sm = softmax(&row.to_vec());
        for (c, v) in sm.into_iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Mat) -> f64, x: &Mat) -> Mat {
        let h = 1e-6;
        let mut g = Mat::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let p = softmax(&[3.0, 3.0, 3.0, 3.0]);
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] >= 0.0);
    }

    #[test]
    fn shared_param_accumulates_once() {
        let w = array![[2.0]];
        let mut g = Graph::new();
        let a = g.param("w", &w);
        let b = g.param("w", &w);
        assert_eq!(a, b);
        let y = g.matmul(a, b).unwrap();
        let grads = g.backward(y);
        assert_eq!(grads.get("w").unwrap()[[0, 0]], 4.0);
    }

    #[test]
    fn composite_matches_finite_differences() {
        let x0 = array![[0.3, -1.2, 0.5], [1.1, 0.2, -0.7]];
        let w = array![[0.4, -0.1], [0.2, 0.9], [-0.6, 0.3]];
        let scale = array![[1.2, 0.8]];
        let shift = array![[0.1, -0.2]];
        let f = |x: &Mat| {
            let mut g = Graph::new();
            let xv = g.param("x", x);
            let wv = g.constant(w.clone());
            let h = g.matmul(xv, wv).unwrap();
            let h = g.relu(h);
            let sc = g.constant(scale.clone());
            let sh = g.constant(shift.clone());
            let n = g.norm_rows(h, sc, sh, 1e-6).unwrap();
            let sm = g.softmax_rows(n);
            let t = g.transpose(sm);
            let r = g.slice_rows(t, 0, 1).unwrap();
            let ce = g.cross_entropy(r, 1).unwrap();
            (g.scalar(ce), g.backward(ce))
        };
        let (_, grads) = f(&x0);
        let num = numeric_grad(|x| f(x).0, &x0);
        assert_close(grads.get("x").unwrap(), &num, 1e-6);
    }
}
