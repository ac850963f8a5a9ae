use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tsqnet::config::{LossWeights, ModelConfig, Scope, TrainConfig};
use tsqnet::data::{generate_synthetic_dataset, SynthConfig, SyntheticBenchmark};
use tsqnet::linear::argmax;
use tsqnet::model::{PreparedVideo, TsqNet};
use tsqnet::params::{gaussian, Parameterized};
use tsqnet::trainer::{gradcheck, train};
use tsqnet::tsq::{Modality, TsqEmbeddingSet};

fn bench(
    noise: f64,
    classes: usize,
    frames: usize,
    per_class: usize,
    seed: u64,
) -> SyntheticBenchmark {
    generate_synthetic_dataset(
        &SynthConfig {
            classes,
            frames,
            feature_dim: 8,
            objects: 12,
            embed_dim: 6,
            per_class,
            salient: 2,
            noise,
        },
        seed,
    )
    .unwrap()
}

fn net(cfg: ModelConfig, seed: u64) -> TsqNet {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let q = cfg.queries();
    let v =
        TsqEmbeddingSet::new(gaussian(&mut r, q, cfg.feature_dim, 1.0), Modality::Visual).unwrap();
    let t =
        TsqEmbeddingSet::new(gaussian(&mut r, q, cfg.word_dim, 1.0), Modality::Textual).unwrap();
    TsqNet::new(cfg, v, t, seed).unwrap()
}

fn small_config(classes: usize, t_max: usize) -> ModelConfig {
    ModelConfig {
        classes,
        feature_dim: 8,
        word_dim: 6,
        object_count: 12,
        reduced_dim: 4,
        t_max,
        top_objects: 4,
        ..ModelConfig::default()
    }
}

fn prepared(b: &SyntheticBenchmark, m: &TsqNet) -> Vec<PreparedVideo> {
    b.dataset
        .videos
        .iter()
        .map(|v| m.prepare(v, &b.vocabulary).unwrap())
        .collect()
}

#[test]
fn full_model_passes_gradcheck() {
    let b = bench(0.5, 4, 6, 1, 7);
    let model = net(small_config(4, 6), 3);
    let video = model.prepare(&b.dataset.videos[2], &b.vocabulary).unwrap();
    let report = gradcheck(&model, &video, LossWeights::default(), 1e-4, None).unwrap();
    assert!(report.passed, "{:?}", report.failures().collect::<Vec<_>>());
    assert_eq!(report.tensors.len(), model.parameter_names().len());
}

#[test]
fn ablation_variants_pass_gradcheck() {
    let b = bench(0.5, 4, 6, 1, 8);
    let variants = [
        ModelConfig {
            classifier: Scope::Agnostic,
            ..small_config(4, 6)
        },
        ModelConfig {
            attention: Scope::Agnostic,
            classifier: Scope::Agnostic,
            ..small_config(4, 6)
        },
        ModelConfig {
            self_attention: true,
            layers: 2,
            heads: 2,
            ..small_config(4, 6)
        },
        ModelConfig {
            positional: false,
            norm: false,
            ..small_config(4, 6)
        },
    ];
    for (i, cfg) in variants.into_iter().enumerate() {
        let model = net(cfg, 10 + i as u64);
        let video = model.prepare(&b.dataset.videos[i], &b.vocabulary).unwrap();
        let report = gradcheck(
            &model,
            &video,
            LossWeights::new(0.7, 0.4).unwrap(),
            1e-4,
            None,
        )
        .unwrap();
        assert!(
            report.passed,
            "variant {i}: {:?}",
            report.failures().collect::<Vec<_>>()
        );
    }
}

#[test]
fn corrupted_query_projection_is_named() {
    let b = bench(0.5, 4, 6, 1, 9);
    let model = net(small_config(4, 6), 4);
    let video = model.prepare(&b.dataset.videos[0], &b.vocabulary).unwrap();
    let report = gradcheck(
        &model,
        &video,
        LossWeights::default(),
        1e-4,
        Some("visual.tsq.0.w_q"),
    )
    .unwrap();
    assert!(!report.passed);
    let failed: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
    assert_eq!(failed, vec!["visual.tsq.0.w_q"]);
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let b = bench(0.5, 3, 6, 2, 1);
    let mut model = net(small_config(3, 6), 1);
    let before = model.clone();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let log = train(&prepared(&b, &model), &mut model, &cfg).unwrap();
    assert!(log.is_empty());
    assert_eq!(model, before);
}

#[test]
fn training_is_bitwise_reproducible() {
    let b = bench(0.5, 3, 6, 4, 2);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 17,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = net(small_config(3, 6), 5);
        let log = train(&prepared(&b, &m), &mut m, &cfg).unwrap();
        (m.tensors(), log)
    };
    let (a, la) = run();
    let (b2, lb) = run();
    assert_eq!(la, lb);
    for ((na, ta), (nb, tb)) in a.iter().zip(&b2) {
        assert_eq!(na, nb);
        let bits = |m: &tsqnet::autograd::Mat| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta), bits(tb), "{na}");
    }
}

#[test]
fn noiseless_data_is_fit_perfectly() {
    let b = bench(0.0, 4, 8, 8, 3);
    let cfg = ModelConfig {
        reduced_dim: 16,
        ..small_config(4, 8)
    };
    let mut model = net(cfg, 6);
    let videos = prepared(&b, &model);
    let tc = TrainConfig {
        epochs: 60,
        batch_size: videos.len(),
        decay_epochs: vec![],
        ..TrainConfig::default()
    };
    let log = train(&videos, &mut model, &tc).unwrap();
    for w in log[1..].windows(2) {
        assert!(
            w[1].loss < w[0].loss,
            "loss rose: {:?}",
            log.iter().map(|e| e.loss).collect::<Vec<_>>()
        );
    }
    let correct = videos
        .iter()
        .filter(|v| argmax(&model.infer(v).unwrap().visual_logits) == v.label)
        .count();
    assert_eq!(correct, videos.len());
}
