//! Every numeric kernel against a plain scalar-loop reimplementation on
//! seeded random instances. Shared by the `oracles` test target and the
//! acceptance runner.

// The oracles index on purpose; iterator forms would mirror the code under test.
#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tsqnet::autograd::Mat;
use tsqnet::data::{FeatureSequence, ObjectScoreSequence, VideoRecord, WordEmbeddingTable};
use tsqnet::linear::FrameClassifier;
use tsqnet::metrics::{mean_average_precision, top1_accuracy};
use tsqnet::sampler::{aggregate_saliency, baseline_maxconf, fuse_and_select, SaliencyScores};
use tsqnet::tqm::textual_frame_features;
use tsqnet::tsq::{
    class_agnostic_classify, class_specific_classify, ffn_forward, tsq_attention, FfnParams,
    LayerShape, Modality, NormParams, SaliencyMatrix, TsqLayerParams,
};
use tsqnet::vqm::prototype_init;

pub const INSTANCES: u64 = 120;

pub const ALL: &[(&str, fn())] = &[
    ("tsq_attention_matches_loops", tsq_attention_matches_loops),
    ("ffn_forward_matches_loops", ffn_forward_matches_loops),
    ("classifiers_match_loops", classifiers_match_loops),
    (
        "textual_frame_features_match_loops",
        textual_frame_features_match_loops,
    ),
    (
        "aggregate_saliency_matches_loops",
        aggregate_saliency_matches_loops,
    ),
    (
        "fuse_and_select_matches_loops",
        fuse_and_select_matches_loops,
    ),
    ("prototype_init_matches_loops", prototype_init_matches_loops),
    ("map_and_top1_match_loops", map_and_top1_match_loops),
    ("maxconf_matches_loops", maxconf_matches_loops),
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn rand_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| normal(r))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

fn assert_mat_close(got: &Mat, want: &[Vec<f64>], what: &str, seed: u64) {
    assert_eq!(got.nrows(), want.len(), "{what} rows, seed {seed}");
    for (i, row) in want.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            assert!(
                close(got[[i, j]], *w),
                "{what}[{i},{j}] seed {seed}: {} vs {w}",
                got[[i, j]]
            );
        }
    }
}

fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let mut e = Vec::new();
    let mut s = 0.0;
    for &v in z {
        let x = (v - m).exp();
        e.push(x);
        s += x;
    }
    for x in e.iter_mut() {
        *x /= s;
    }
    e
}

fn oracle_matmul(a: &[Vec<f64>], b: &Mat) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; b.ncols()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..b.nrows() {
                s += a[i][k] * b[[k, j]];
            }
            out[i][j] = s;
        }
    }
    out
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Indices sorted by descending value, lower index first on ties.
fn oracle_rank(v: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut used = vec![false; v.len()];
    for _ in 0..v.len() {
        let mut best: Option<usize> = None;
        for i in 0..v.len() {
            if used[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if v[i] > v[b] => best = Some(i),
                _ => {}
            }
        }
        let b = best.unwrap();
        used[b] = true;
        out.push(b);
    }
    out
}

fn random_layer(r: &mut ChaCha8Rng, d: usize, t_max: usize, positional: bool) -> TsqLayerParams {
    let mut p = TsqLayerParams::init(
        r,
        LayerShape {
            dim: d,
            hidden: 2 * d,
            t_max,
            positional,
            norm: true,
            self_attention: false,
            heads: 1,
        },
    );
    p.w_k = rand_mat(r, d, d);
    if let Some(table) = p.positional.as_mut() {
        *table = rand_mat(r, t_max, d);
    }
    p
}

pub fn tsq_attention_matches_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (c, t, d) = (
            r.random_range(1..6),
            r.random_range(1..9),
            r.random_range(1..6),
        );
        let positional = seed % 2 == 0;
        let p = random_layer(&mut r, d, t + 2, positional);
        let e = rand_mat(&mut r, c, d);
        let x = rand_mat(&mut r, t, d);
        let (a, resp) = tsq_attention(&e, &x, &p, positional).unwrap();

        let mut xp = rows_of(&x);
        if positional {
            let table = p.positional.as_ref().unwrap();
            for i in 0..t {
                for k in 0..d {
                    xp[i][k] += table[[i, k]];
                }
            }
        }
        let q = oracle_matmul(&rows_of(&e), &p.w_q);
        let keys = oracle_matmul(&xp, &p.w_k);
        let vals = oracle_matmul(&xp, &p.w_v);
        let mut want_a = vec![vec![0.0; t]; c];
        for i in 0..c {
            let mut logits = vec![0.0; t];
            for j in 0..t {
                let mut s = 0.0;
                for k in 0..d {
                    s += q[i][k] * keys[j][k];
                }
                logits[j] = s / (d as f64).sqrt();
            }
            want_a[i] = oracle_softmax(&logits);
        }
        let mut want_r = vec![vec![0.0; d]; c];
        for i in 0..c {
            for k in 0..d {
                for j in 0..t {
                    want_r[i][k] += want_a[i][j] * vals[j][k];
                }
            }
        }
        assert_mat_close(a.as_mat(), &want_a, "A", seed);
        assert_mat_close(&resp, &want_r, "R", seed);
    }
}

pub fn ffn_forward_matches_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(1000 + seed);
        let (c, d, h) = (
            r.random_range(1..6),
            r.random_range(2..7),
            r.random_range(1..9),
        );
        let norm = seed % 3 != 0;
        let p = FfnParams {
            lin1_w: rand_mat(&mut r, d, h),
            lin1_b: rand_mat(&mut r, 1, h),
            lin2_w: rand_mat(&mut r, h, d),
            lin2_b: rand_mat(&mut r, 1, d),
            norm: norm.then(|| NormParams {
                scale: rand_mat(&mut r, 1, d),
                shift: rand_mat(&mut r, 1, d),
            }),
        };
        let x = rand_mat(&mut r, c, d);
        let got = ffn_forward(&x, &p).unwrap();
        let mut want = vec![vec![0.0; d]; c];
        for i in 0..c {
            let mut hidden = vec![0.0; h];
            for j in 0..h {
                let mut s = p.lin1_b[[0, j]];
                for k in 0..d {
                    s += x[[i, k]] * p.lin1_w[[k, j]];
                }
                hidden[j] = if s > 0.0 { s } else { 0.0 };
            }
            for k in 0..d {
                let mut s = p.lin2_b[[0, k]];
                for j in 0..h {
                    s += hidden[j] * p.lin2_w[[j, k]];
                }
                want[i][k] = x[[i, k]] + s;
            }
            if let Some(n) = &p.norm {
                let mean: f64 = want[i].iter().sum::<f64>() / d as f64;
                let var: f64 =
                    want[i].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                for k in 0..d {
                    want[i][k] = (want[i][k] - mean) / (var + 1e-6).sqrt() * n.scale[[0, k]]
                        + n.shift[[0, k]];
                }
            }
        }
        assert_mat_close(&got, &want, "FFN", seed);
    }
}

pub fn classifiers_match_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(2000 + seed);
        let (c, d) = (r.random_range(1..8), r.random_range(1..7));
        let rhat = rand_mat(&mut r, c, d);
        let w = rand_mat(&mut r, c, d);
        let b: Vec<f64> = (0..c).map(|_| normal(&mut r)).collect();
        let z = class_specific_classify(&rhat, &w, &b).unwrap();
        let shared: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
        let sb = normal(&mut r);
        let za = class_agnostic_classify(&rhat, &shared, sb).unwrap();
        for i in 0..c {
            let (mut s, mut sa) = (b[i], sb);
            for k in 0..d {
                s += w[[i, k]] * rhat[[i, k]];
                sa += shared[k] * rhat[[i, k]];
            }
            assert!(close(z[i], s), "specific seed {seed}");
            assert!(close(za[i], sa), "agnostic seed {seed}");
        }
    }
}

pub fn textual_frame_features_match_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(3000 + seed);
        let (t, o, dim) = (
            r.random_range(1..6),
            r.random_range(1..9),
            r.random_range(1..5),
        );
        let top_n = r.random_range(1..=o);
        // Quantized scores produce frequent ties.
        let scores: Vec<f32> = (0..t * o)
            .map(|_| r.random_range(0..5) as f32 / 4.0)
            .collect();
        let words: Vec<f32> = (0..o * dim).map(|_| normal(&mut r) as f32).collect();
        let seq = ObjectScoreSequence::new(t, o, scores.clone()).unwrap();
        let table = WordEmbeddingTable::new(
            (0..o).map(|i| format!("w{i}")).collect(),
            dim,
            words.clone(),
        )
        .unwrap();
        let got = textual_frame_features(&seq, &table, top_n).unwrap();
        let mut want = vec![vec![0.0; dim]; t];
        for f in 0..t {
            let row: Vec<f64> = (0..o).map(|k| scores[f * o + k] as f64).collect();
            let kept: Vec<usize> = oracle_rank(&row).into_iter().take(top_n).collect();
            let mass: f64 = kept.iter().map(|&k| row[k]).sum();
            for &k in &kept {
                let w = if mass > 0.0 { row[k] / mass } else { 0.0 };
                for j in 0..dim {
                    want[f][j] += w * words[k * dim + j] as f64;
                }
            }
            if mass == 0.0 {
                for k in 0..top_n {
                    for j in 0..dim {
                        want[f][j] += words[k * dim + j] as f64 / top_n as f64;
                    }
                }
            }
        }
        assert_mat_close(&got, &want, "textual", seed);
    }
}

fn random_saliency(r: &mut ChaCha8Rng, c: usize, t: usize) -> SaliencyMatrix {
    let m = Mat::from_shape_fn((c, t), |_| normal(r));
    let rows: Vec<Vec<f64>> = rows_of(&m).iter().map(|row| oracle_softmax(row)).collect();
    SaliencyMatrix::new(Mat::from_shape_fn((c, t), |(i, j)| rows[i][j])).unwrap()
}

pub fn aggregate_saliency_matches_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(4000 + seed);
        let (c, t) = if seed == 0 {
            (7, 6)
        } else {
            (r.random_range(2..9), r.random_range(1..9))
        };
        let top_n = if seed == 0 { 5 } else { r.random_range(1..=c) };
        let a = random_saliency(&mut r, c, t);
        let z: Vec<f64> = (0..c).map(|_| normal(&mut r) * 2.0).collect();
        let got = aggregate_saliency(&a, &z, top_n, Modality::Visual).unwrap();
        let p = oracle_softmax(&z);
        let kept: Vec<usize> = oracle_rank(&p).into_iter().take(top_n).collect();
        let mut mask = vec![0.0; c];
        for &k in &kept {
            mask[k] = p[k];
        }
        let total: f64 = mask.iter().sum();
        for i in 0..t {
            let mut s = 0.0;
            for k in 0..c {
                s += mask[k] / total * a.as_mat()[[k, i]];
            }
            assert!(close(got.per_frame[i], s), "seed {seed} frame {i}");
        }
    }
}

fn oracle_fuse(sv: &[f64], st: &[f64], k: usize, lambda_v: f64) -> Vec<usize> {
    let kv = ((lambda_v * k as f64) + 0.5 + 1e-9).floor() as usize;
    let mut out: Vec<usize> = Vec::new();
    for i in oracle_rank(sv).into_iter().take(kv) {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    for i in oracle_rank(st).into_iter().take(k - kv) {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    for i in oracle_rank(sv) {
        if out.len() == k {
            break;
        }
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

pub fn fuse_and_select_matches_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(5000 + seed);
        let t = r.random_range(1..12);
        let k = r.random_range(1..=t);
        let lambda_v = r.random_range(0..=10) as f64 / 10.0;
        let sv: Vec<f64> = (0..t).map(|_| r.random_range(0..6) as f64).collect();
        let st: Vec<f64> = (0..t).map(|_| r.random_range(0..6) as f64).collect();
        let got = fuse_and_select(
            &SaliencyScores {
                per_frame: sv.clone(),
                modality: Modality::Visual,
            },
            &SaliencyScores {
                per_frame: st.clone(),
                modality: Modality::Textual,
            },
            k,
            lambda_v,
            1.0 - lambda_v,
        )
        .unwrap();
        assert_eq!(
            got.indices,
            oracle_fuse(&sv, &st, k, lambda_v),
            "seed {seed}"
        );
    }
}

struct Linear {
    w: Mat,
}

impl FrameClassifier for Linear {
    fn classes(&self) -> usize {
        self.w.ncols()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.w.ncols())
            .map(|c| x.iter().enumerate().map(|(k, v)| v * self.w[[k, c]]).sum())
            .collect()
    }
}

pub fn prototype_init_matches_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(6000 + seed);
        let (classes, d) = (r.random_range(2..5), r.random_range(1..5));
        let m_percent = [10.0, 30.0, 50.0, 100.0][r.random_range(0..4)];
        let probe = Linear {
            w: rand_mat(&mut r, d, classes),
        };
        let mut videos = Vec::new();
        for c in 0..classes {
            for v in 0..r.random_range(1..4) {
                let t = r.random_range(1..7);
                let vals: Vec<f32> = (0..t * d).map(|_| normal(&mut r) as f32).collect();
                let feats = FeatureSequence::new(format!("c{c}v{v}"), t, d, vals).unwrap();
                let objs = ObjectScoreSequence::new(t, 1, vec![0.5; t]).unwrap();
                videos.push(VideoRecord::new(feats, objs, c, None).unwrap());
            }
        }
        let got = prototype_init(&videos, classes, &probe, m_percent).unwrap();

        let mut want = vec![vec![0.0; d]; classes];
        let mut counts = vec![0.0; classes];
        for v in &videos {
            let t = v.frames();
            let mut correct: Vec<(usize, f64)> = Vec::new();
            for f in 0..t {
                let x: Vec<f64> = v.features.row(f).iter().map(|&a| a as f64).collect();
                let z = probe.logits(&x);
                let pred = oracle_rank(&z)[0];
                if pred == v.label {
                    correct.push((f, oracle_softmax(&z)[v.label]));
                }
            }
            let chosen: Vec<usize> = if correct.is_empty() {
                (0..t).collect()
            } else {
                let conf: Vec<f64> = correct.iter().map(|c| c.1).collect();
                let keep = ((m_percent * t as f64 / 100.0 - 1e-9).ceil() as usize).clamp(1, t);
                oracle_rank(&conf)
                    .into_iter()
                    .take(keep)
                    .map(|i| correct[i].0)
                    .collect()
            };
            for k in 0..d {
                let mut s = 0.0;
                for &f in &chosen {
                    s += v.features.row(f)[k] as f64;
                }
                want[v.label][k] += s / chosen.len() as f64;
            }
            counts[v.label] += 1.0;
        }
        for c in 0..classes {
            for k in 0..d {
                want[c][k] /= counts[c];
            }
        }
        assert_mat_close(&got.embeddings, &want, "prototype", seed);
    }
}

fn oracle_ap(scores: &[f64], relevant: &[bool]) -> f64 {
    let order = oracle_rank(scores);
    let positives = relevant.iter().filter(|&&r| r).count();
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            let mut above = 0;
            for &j in &order[..=rank] {
                if relevant[j] {
                    above += 1;
                }
            }
            sum += above as f64 / (rank + 1) as f64;
        }
    }
    assert_eq!(hits, positives);
    sum / positives as f64
}

pub fn map_and_top1_match_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(7000 + seed);
        let (n, c) = if seed == 0 {
            (6, 2)
        } else {
            (r.random_range(1..12), r.random_range(2..5))
        };
        let scores = Mat::from_shape_fn((n, c), |_| r.random_range(0..4) as f64 / 3.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let mut sum = 0.0;
        let mut counted = 0;
        for k in 0..c {
            let rel: Vec<bool> = labels.iter().map(|&y| y == k).collect();
            if rel.iter().any(|&b| b) {
                sum += oracle_ap(&scores.column(k).to_vec(), &rel);
                counted += 1;
            }
        }
        assert!(
            close(
                mean_average_precision(&scores, &labels).unwrap(),
                sum / counted as f64
            ),
            "seed {seed}"
        );
        let correct = (0..n)
            .filter(|&i| oracle_rank(&scores.row(i).to_vec())[0] == labels[i])
            .count();
        assert_eq!(
            top1_accuracy(&scores, &labels).unwrap(),
            correct as f64 / n as f64
        );
    }
}

pub fn maxconf_matches_loops() {
    for seed in 0..INSTANCES {
        let mut r = rng(8000 + seed);
        let (t, c) = if seed == 0 {
            (6, 3)
        } else {
            (r.random_range(1..10), r.random_range(1..5))
        };
        let k = r.random_range(1..=t);
        let logits = Mat::from_shape_fn((t, c), |_| r.random_range(-2..3) as f64);
        let conf: Vec<f64> = (0..t)
            .map(|i| {
                let p = oracle_softmax(&logits.row(i).to_vec());
                let mut m = p[0];
                for v in p {
                    if v > m {
                        m = v;
                    }
                }
                m
            })
            .collect();
        let want: Vec<usize> = oracle_rank(&conf).into_iter().take(k).collect();
        assert_eq!(baseline_maxconf(&logits, k).unwrap(), want, "seed {seed}");
    }
}
