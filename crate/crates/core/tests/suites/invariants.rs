//! Structural properties checked over randomized inputs. Shared by the
//! `invariants` test target and the acceptance runner.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tsqnet::autograd::{softmax, Mat};
use tsqnet::config::{ModelConfig, TrainConfig};
use tsqnet::data::{generate_synthetic_dataset, SynthConfig};
use tsqnet::io::{decode_dataset, encode_dataset};
use tsqnet::metrics::{
    mean_average_precision, top1_accuracy, FlopsComponent, FlopsConfig, FlopsHead,
};
use tsqnet::model::Branch;
use tsqnet::sampler::{aggregate_saliency, fuse_and_select, SaliencyScores};
use tsqnet::trainer::lr_at;
use tsqnet::tsq::{
    class_specific_classify, tsq_attention, LayerShape, Modality, SaliencyMatrix, TsqEmbeddingSet,
    TsqLayerParams,
};

// Persistence looks for the including crate's lib.rs/main.rs, which the
// acceptance runner does not have; failing seeds are printed instead.
fn cases() -> ProptestConfig {
    with_cases(1000)
}

fn with_cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(n)
    }
}

fn rand_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| scale * r.sample::<f64, _>(StandardNormal))
}

fn layer(r: &mut ChaCha8Rng, d: usize, t_max: usize, positional: bool) -> TsqLayerParams {
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
    p.w_k = rand_mat(r, d, d, 1.0);
    if let Some(table) = p.positional.as_mut() {
        *table = rand_mat(r, t_max, d, 1.0);
    }
    p
}

fn assert_row_stochastic(a: &Mat) {
    for row in a.rows() {
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((row.sum() - 1.0).abs() <= 1e-9, "row sums to {}", row.sum());
    }
}

fn scores(v: Vec<f64>, modality: Modality) -> SaliencyScores {
    SaliencyScores {
        per_frame: v,
        modality,
    }
}

pub const ALL: &[(&str, fn())] = &[
    (
        "attention_rows_are_stochastic",
        attention_rows_are_stochastic,
    ),
    (
        "branch_saliency_is_stochastic",
        branch_saliency_is_stochastic,
    ),
    (
        "attention_is_permutation_equivariant_without_positional",
        attention_is_permutation_equivariant_without_positional,
    ),
    ("softmax_is_shift_invariant", softmax_is_shift_invariant),
    (
        "aggregation_is_shift_invariant_and_convex",
        aggregation_is_shift_invariant_and_convex,
    ),
    (
        "fusion_returns_k_distinct_and_is_rank_based",
        fusion_returns_k_distinct_and_is_rank_based,
    ),
    (
        "class_specific_logit_depends_only_on_its_row",
        class_specific_logit_depends_only_on_its_row,
    ),
    (
        "ranking_metrics_ignore_monotone_transforms",
        ranking_metrics_ignore_monotone_transforms,
    ),
    (
        "flops_are_additive_and_order_independent",
        flops_are_additive_and_order_independent,
    ),
    ("schedule_never_increases", schedule_never_increases),
    ("dataset_encoding_round_trips", dataset_encoding_round_trips),
];

pub fn attention_rows_are_stochastic() {
    proptest!(cases(), |(seed: u64, c in 1usize..6, t in 1usize..10, d in 1usize..6, scale in 0.1f64..20.0)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = layer(&mut r, d, t, seed % 2 == 0);
        let e = rand_mat(&mut r, c, d, scale);
        let x = rand_mat(&mut r, t, d, scale);
        let (a, _) = tsq_attention(&e, &x, &p, seed % 2 == 0).unwrap();
        assert_row_stochastic(a.as_mat());
    });
}

pub fn branch_saliency_is_stochastic() {
    proptest!(cases(), |(seed: u64, t in 1usize..9, heads in 1usize..3, layers in 1usize..3)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig {
            classes: 3,
            feature_dim: 5,
            reduced_dim: 4,
            t_max: 8,
            heads,
            layers,
            self_attention: seed % 3 == 0,
            top_objects: 1,
            ..ModelConfig::default()
        };
        let e = TsqEmbeddingSet::new(rand_mat(&mut r, 3, 5, 1.0), Modality::Visual).unwrap();
        let branch = Branch::new(&cfg, 5, e, &mut r).unwrap();
        let (a, z) = branch.infer(&rand_mat(&mut r, t.min(8), 5, 2.0)).unwrap();
        assert_row_stochastic(a.as_mat());
        prop_assert_eq!(z.len(), 3);
    });
}

pub fn attention_is_permutation_equivariant_without_positional() {
    proptest!(cases(), |(seed: u64, c in 1usize..5, t in 2usize..9, d in 1usize..5)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = layer(&mut r, d, t, false);
        let e = rand_mat(&mut r, c, d, 1.0);
        let x = rand_mat(&mut r, t, d, 1.0);
        let perm = rand::seq::index::sample(&mut r, t, t).into_vec();
        let xp = Mat::from_shape_fn((t, d), |(i, k)| x[[perm[i], k]]);
        let (a, resp) = tsq_attention(&e, &x, &p, false).unwrap();
        let (ap, resp_p) = tsq_attention(&e, &xp, &p, false).unwrap();
        for q in 0..c {
            for (i, &src) in perm.iter().enumerate() {
                prop_assert!((ap.as_mat()[[q, i]] - a.as_mat()[[q, src]]).abs() <= 1e-12);
            }
            for k in 0..d {
                prop_assert!((resp_p[[q, k]] - resp[[q, k]]).abs() <= 1e-10 * resp[[q, k]].abs().max(1.0));
            }
        }
    });
}

pub fn softmax_is_shift_invariant() {
    proptest!(cases(), |(v in prop::collection::vec(-30.0f64..30.0, 1..12), shift in -100.0f64..100.0)| {
        let a = softmax(&v);
        let b = softmax(&v.iter().map(|x| x + shift).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    });
}

pub fn aggregation_is_shift_invariant_and_convex() {
    proptest!(cases(), |(seed: u64, c in 2usize..8, t in 1usize..10, shift in -50.0f64..50.0)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let top = r.random_range(1..=c);
        let raw = rand_mat(&mut r, c, t, 3.0);
        let rows: Vec<Vec<f64>> = raw.rows().into_iter().map(|x| softmax(&x.to_vec())).collect();
        let a = SaliencyMatrix::new(Mat::from_shape_fn((c, t), |(i, j)| rows[i][j])).unwrap();
        // Integer logits keep the kept-class set unambiguous under the shift.
        let z: Vec<f64> = (0..c).map(|_| r.random_range(-6..7) as f64).collect();
        let zs: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let s = aggregate_saliency(&a, &z, top, Modality::Visual).unwrap();
        let s2 = aggregate_saliency(&a, &zs, top, Modality::Visual).unwrap();
        for i in 0..t {
            prop_assert!((s.per_frame[i] - s2.per_frame[i]).abs() <= 1e-12);
            let col: Vec<f64> = (0..c).map(|k| a.as_mat()[[k, i]]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s.per_frame[i] >= lo - 1e-12 && s.per_frame[i] <= hi + 1e-12);
        }
    });
}

pub fn fusion_returns_k_distinct_and_is_rank_based() {
    proptest!(cases(), |(sv in prop::collection::vec(0u8..20, 1..16), st_seed: u64, k_frac in 0.0f64..1.0, lv_tenths in 0u8..=10, a in 0.25f64..4.0, b in -3.0f64..3.0)| {
        let t = sv.len();
        let mut r = ChaCha8Rng::seed_from_u64(st_seed);
        let st: Vec<f64> = (0..t).map(|_| r.random_range(0..20) as f64).collect();
        let sv: Vec<f64> = sv.into_iter().map(f64::from).collect();
        let k = ((k_frac * t as f64) as usize).clamp(1, t);
        let lv = lv_tenths as f64 / 10.0;
        let base = fuse_and_select(&scores(sv.clone(), Modality::Visual), &scores(st.clone(), Modality::Textual), k, lv, 1.0 - lv).unwrap();
        prop_assert_eq!(base.indices.len(), k);
        let mut sorted = base.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        prop_assert!(base.indices.iter().all(|&i| i < t));
        let sv2: Vec<f64> = sv.iter().map(|x| a * x + b).collect();
        let st2: Vec<f64> = st.iter().map(|x| x.exp()).collect();
        let moved = fuse_and_select(&scores(sv2, Modality::Visual), &scores(st2, Modality::Textual), k, lv, 1.0 - lv).unwrap();
        prop_assert_eq!(&moved.indices, &base.indices);
        let visual_only = fuse_and_select(&scores(sv.clone(), Modality::Visual), &scores(st, Modality::Textual), k, 1.0, 0.0).unwrap();
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]).then(x.cmp(&y)));
        prop_assert_eq!(visual_only.indices, order[..k].to_vec());
    });
}

pub fn class_specific_logit_depends_only_on_its_row() {
    proptest!(cases(), |(seed: u64, c in 2usize..8, d in 1usize..6, row_pick: usize)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rhat = rand_mat(&mut r, c, d, 1.0);
        let w = rand_mat(&mut r, c, d, 1.0);
        let b: Vec<f64> = (0..c).map(|_| r.random::<f64>()).collect();
        let j = row_pick % c;
        let mut changed = rhat.clone();
        for k in 0..d {
            changed[[j, k]] += r.sample::<f64, _>(StandardNormal) + 0.5;
        }
        let z = class_specific_classify(&rhat, &w, &b).unwrap();
        let z2 = class_specific_classify(&changed, &w, &b).unwrap();
        for i in 0..c {
            if i != j {
                prop_assert_eq!(z[i], z2[i]);
            }
        }
    });
}

pub fn ranking_metrics_ignore_monotone_transforms() {
    proptest!(cases(), |(seed: u64, n in 1usize..15, c in 2usize..5)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let s = Mat::from_shape_fn((n, c), |_| r.random_range(0..6) as f64);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let t = s.mapv(|v| 3.0 * v.powi(3) + v - 7.0);
        prop_assert_eq!(mean_average_precision(&s, &labels).unwrap(), mean_average_precision(&t, &labels).unwrap());
        prop_assert_eq!(top1_accuracy(&s, &labels).unwrap(), top1_accuracy(&t, &labels).unwrap());
    });
}

pub fn flops_are_additive_and_order_independent() {
    proptest!(cases(), |(rows in prop::collection::vec((0u32..5000, 0u64..64), 0..6), heads in prop::collection::vec(0u32..900, 0..4), rotate: usize)| {
        let components: Vec<FlopsComponent> = rows
            .iter()
            .enumerate()
            .map(|(i, &(milli, n))| FlopsComponent {
                name: format!("c{i}"),
                arch: None,
                flops_per_frame: milli as f64 / 1000.0,
                frame_count: n,
            })
            .collect();
        let heads: Vec<FlopsHead> = heads
            .iter()
            .enumerate()
            .map(|(i, &centi)| FlopsHead { name: format!("h{i}"), flops: centi as f64 / 100.0 })
            .collect();
        let whole = FlopsConfig { components: components.clone(), heads: heads.clone() }.breakdown().unwrap();
        let row_sum: f64 = whole.rows.iter().map(|r| r.rounded).sum();
        prop_assert!((whole.total - row_sum).abs() < 1e-9);
        let mut shuffled = components.clone();
        if !shuffled.is_empty() {
            let k = rotate % shuffled.len();
            shuffled.rotate_left(k);
        }
        let mut hs = heads.clone();
        hs.reverse();
        let again = FlopsConfig { components: shuffled, heads: hs }.breakdown().unwrap();
        prop_assert_eq!(again.total, whole.total);
        let split = components.len() / 2;
        let left = FlopsConfig { components: components[..split].to_vec(), heads: vec![] }.breakdown().unwrap();
        let right = FlopsConfig { components: components[split..].to_vec(), heads }.breakdown().unwrap();
        prop_assert!((left.total + right.total - whole.total).abs() < 1e-9);
    });
}

pub fn schedule_never_increases() {
    proptest!(cases(), |(epoch in 0usize..500, gap in 0usize..50)| {
        let cfg = TrainConfig::full_scale();
        prop_assert!(lr_at(epoch + gap, &cfg) <= lr_at(epoch, &cfg));
    });
}

pub fn dataset_encoding_round_trips() {
    proptest!(with_cases(64), |(seed: u64, frames in 1usize..6, dim in 1usize..5)| {
        let cfg = SynthConfig {
            classes: 2,
            frames,
            feature_dim: dim,
            objects: 3,
            embed_dim: 2,
            per_class: 2,
            salient: 1,
            noise: 0.5,
        };
        let bench = generate_synthetic_dataset(&cfg, seed).unwrap();
        let (manifest, payload) = encode_dataset(&bench.dataset, "d.bin").unwrap();
        prop_assert_eq!(decode_dataset(&manifest, &payload).unwrap(), bench.dataset);
    });
}
