//! Softmax-regression classifier used as the lightweight frame probe and as
//! the frozen recognizer in desk-scale evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{softmax, Mat};
use crate::error::{Result, TsqError};
use crate::params::{join, Parameterized};

/// Maps one feature vector to class logits.
pub trait FrameClassifier {
    fn classes(&self) -> usize;
    fn logits(&self, features: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    /// `d×C`
    pub weight: Mat,
    /// `1×C`
    pub bias: Mat,
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.05,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl LinearClassifier {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self {
            weight: Mat::zeros((dim, classes)),
            bias: Mat::zeros((1, classes)),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Mini-batch SGD with momentum on softmax cross-entropy, starting from zero
    /// weights. Deterministic given `opts.seed`.
    pub fn fit(samples: &[(Vec<f64>, usize)], classes: usize, opts: FitOptions) -> Result<Self> {
        let Some((first, _)) = samples.first() else {
            return Err(TsqError::InvalidConfig("no samples to fit".into()));
        };
        let dim = first.len();
        if let Some((x, y)) = samples
            .iter()
            .find(|(x, y)| x.len() != dim || *y >= classes)
        {
            return Err(TsqError::mismatch(
                "classifier sample",
                format!("dim {dim}, label < {classes}"),
                format!("dim {}, label {y}", x.len()),
            ));
        }
        let mut model = Self::zeros(dim, classes);
        let mut vw = Mat::zeros((dim, classes));
        let mut vb = Mat::zeros((1, classes));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let bs = opts.batch_size.max(1);
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(bs) {
                let mut gw = Mat::zeros((dim, classes));
                let mut gb = Mat::zeros((1, classes));
                for &i in batch {
                    let (x, y) = &samples[i];
                    let p = softmax(&model.logits(x));
                    for c in 0..classes {
                        let err = p[c] - if c == *y { 1.0 } else { 0.0 };
                        gb[[0, c]] += err;
                        for (k, xv) in x.iter().enumerate() {
                            gw[[k, c]] += err * xv;
                        }
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                vw = vw * opts.momentum + gw * scale;
                vb = vb * opts.momentum + gb * scale;
                model.weight.scaled_add(-opts.lr, &vw);
                model.bias.scaled_add(-opts.lr, &vb);
            }
        }
        if model
            .weight
            .iter()
            .chain(model.bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(TsqError::Numeric {
                layer: "linear classifier".into(),
            });
        }
        Ok(model)
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        argmax(&self.logits(features))
    }
}

impl FrameClassifier for LinearClassifier {
    fn classes(&self) -> usize {
        self.weight.ncols()
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        (0..self.weight.ncols())
            .map(|c| {
                self.bias[[0, c]]
                    + features
                        .iter()
                        .enumerate()
                        .map(|(k, x)| x * self.weight[[k, c]])
                        .sum::<f64>()
            })
            .collect()
    }
}

impl Parameterized for LinearClassifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
