//! End-to-end pipeline: frame probe, query initialization, joint training,
//! the frozen recognizer, and the policy comparison / ablation harness.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax, Mat};
use crate::config::{EmbeddingInit, ModelConfig, RunConfig};
use crate::data::{generate_synthetic_dataset, Dataset, SynthConfig, VideoRecord, Vocabulary};
use crate::error::{Result, TsqError};
use crate::io::TensorArchive;
use crate::linear::{FitOptions, FrameClassifier, LinearClassifier};
use crate::metrics::{
    mean_average_precision, top1_accuracy, FlopsComponent, FlopsConfig, FlopsHead,
};
use crate::model::{PreparedVideo, TsqNet};
use crate::params::Parameterized;
use crate::sampler::{
    aggregate_saliency, baseline_dense, baseline_maxconf, baseline_random, baseline_uniform,
    fuse_and_select, Provenance,
};
use crate::tqm::{random_embedding_init, textual_embedding_init};
use crate::trainer::{train, EpochLog};
use crate::tsq::{Modality, TsqEmbeddingSet};
use crate::vqm::prototype_init;

/// Per-frame / per-video GFLOPs of the reference backbones.
pub mod cost {
    pub const MOBILENET_V2: f64 = 0.220;
    /// Displays as 0.098; 0.0975 is the value whose 16-frame product rounds
    /// to 1.56.
    pub const EFFICIENTNET_B0: f64 = 0.0975;
    pub const RESNET50: f64 = 4.109;
    pub const VQM: f64 = 0.36;
    pub const TQM: f64 = 0.10;
}

fn component(name: &str, arch: &str, per_frame: f64, frames: usize) -> FlopsComponent {
    FlopsComponent {
        name: name.into(),
        arch: Some(arch.into()),
        flops_per_frame: per_frame,
        frame_count: frames as u64,
    }
}

/// Cost of the full sampler-plus-recognizer pipeline at `t` pre-sampled
/// frames and `k` selected ones.
pub fn tsq_flops(t: usize, k: usize) -> FlopsConfig {
    FlopsConfig {
        components: vec![
            component("MobileNetV2", "mobilenet_v2", cost::MOBILENET_V2, t),
            component(
                "EfficientNet-B0",
                "efficientnet_b0",
                cost::EFFICIENTNET_B0,
                t,
            ),
            component("ResNet50", "resnet50", cost::RESNET50, k),
        ],
        heads: vec![
            FlopsHead {
                name: "VQM".into(),
                flops: cost::VQM,
            },
            FlopsHead {
                name: "TQM".into(),
                flops: cost::TQM,
            },
        ],
    }
}

/// The reference breakdown: 16 pre-sampled frames, 5 selected.
pub fn reference_costs() -> FlopsConfig {
    tsq_flops(16, 5)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "tsq")]
    Tsq,
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "dense")]
    Dense,
    #[serde(rename = "maxconf")]
    MaxConf,
    #[serde(rename = "maxconf-l")]
    MaxConfL,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Tsq,
        Policy::Uniform,
        Policy::Random,
        Policy::Dense,
        Policy::MaxConf,
        Policy::MaxConfL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Tsq => "tsq",
            Policy::Uniform => "uniform",
            Policy::Random => "random",
            Policy::Dense => "dense",
            Policy::MaxConf => "maxconf",
            Policy::MaxConfL => "maxconf-l",
        }
    }

    /// Cost of running this policy on a video of `t_raw` frames.
    pub fn flops(self, t_raw: usize, t: usize, k: usize) -> FlopsConfig {
        let recognizer = |n| component("ResNet50", "resnet50", cost::RESNET50, n);
        match self {
            Policy::Tsq => tsq_flops(t, k),
            Policy::Uniform | Policy::Random => FlopsConfig {
                components: vec![recognizer(k)],
                heads: vec![],
            },
            Policy::Dense | Policy::MaxConf => FlopsConfig {
                components: vec![recognizer(t_raw)],
                heads: vec![],
            },
            Policy::MaxConfL => FlopsConfig {
                components: vec![
                    component("MobileNetV2", "mobilenet_v2", cost::MOBILENET_V2, t),
                    recognizer(k),
                ],
                heads: vec![],
            },
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = TsqError;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| TsqError::InvalidConfig(format!("unknown policy '{s}'")))
    }
}

/// Frames chosen for one video.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub video_id: String,
    pub indices: Vec<usize>,
    /// Whether `indices` address raw frames rather than pre-sampled ones.
    pub raw_frames: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<Provenance>>,
    /// Per-frame scores the policy ranked by, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyReport {
    pub policy: Policy,
    pub budget: usize,
    pub map: f64,
    pub top1: f64,
    pub flops: f64,
    /// Mean recall of planted salient frames, when ground truth exists.
    pub recall: Option<f64>,
}

/// Model dimensions completed from the data.
pub fn model_config_for(
    cfg: &RunConfig,
    dataset: &Dataset,
    vocabulary: &Vocabulary,
) -> Result<ModelConfig> {
    let mut m = cfg.model.clone();
    m.classes = dataset.classes;
    m.feature_dim = dataset
        .feature_dim()
        .ok_or_else(|| TsqError::InvalidConfig("dataset has no videos".into()))?;
    m.object_count = vocabulary.objects.rows();
    m.word_dim = vocabulary.dim();
    if let Some(o) = dataset.object_count() {
        if o != m.object_count {
            return Err(TsqError::mismatch("object vocabulary", o, m.object_count));
        }
    }
    m.validate()?;
    Ok(m)
}

pub fn presample_all(videos: &[VideoRecord], t: usize) -> Result<Vec<VideoRecord>> {
    videos.iter().map(|v| v.presampled(t)).collect()
}

fn frame_samples(videos: &[VideoRecord]) -> Vec<(Vec<f64>, usize)> {
    videos
        .iter()
        .flat_map(|v| {
            let m = v.features.to_mat();
            (0..m.nrows())
                .map(|t| (m.row(t).to_vec(), v.label))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Mean of the selected frames' raw features.
pub fn pooled(video: &VideoRecord, indices: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; video.features.dim()];
    for &i in indices {
        for (a, &v) in acc.iter_mut().zip(video.features.row(i)) {
            *a += v as f64;
        }
    }
    acc.iter_mut()
        .for_each(|a| *a /= indices.len().max(1) as f64);
    acc
}

fn collapse(set: TsqEmbeddingSet, queries: usize) -> Result<TsqEmbeddingSet> {
    if set.len() == queries {
        return Ok(set);
    }
    let mean = set
        .embeddings
        .mean_axis(ndarray::Axis(0))
        .ok_or_else(|| TsqError::Init("empty query set".into()))?;
    TsqEmbeddingSet::new(mean.insert_axis(ndarray::Axis(0)), set.modality)
}

/// Trained sampler plus the two auxiliary classifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub config: RunConfig,
    /// Lightweight per-frame classifier (prototype selection, MaxConf-L).
    pub probe: LinearClassifier,
    /// Frozen recognizer over pooled selected frames.
    pub recognizer: LinearClassifier,
    pub model: TsqNet,
    pub log: Vec<EpochLog>,
}

impl Pipeline {
    /// Fits everything on `train_set`. All randomness derives from
    /// `config.train.seed`.
    pub fn fit(
        train_set: &Dataset,
        vocabulary: &Vocabulary,
        mut config: RunConfig,
    ) -> Result<Self> {
        config.model = model_config_for(&config, train_set, vocabulary)?;
        config.validate()?;
        let model_cfg = config.model.clone();
        let seed = config.train.seed;
        let classes = train_set.classes;
        let t = config.sampling.presample;
        let videos = presample_all(&train_set.videos, t)?;

        let probe = LinearClassifier::fit(
            &frame_samples(&videos),
            classes,
            FitOptions {
                epochs: config.prototype.probe_epochs,
                lr: config.prototype.probe_lr,
                seed: seed ^ 0x5052_4f42,
                ..FitOptions::default()
            },
        )?;

        let queries = model_cfg.queries();
        let visual = match model_cfg.visual_init {
            EmbeddingInit::Informed => collapse(
                prototype_init(&videos, classes, &probe, config.prototype.m_percent)?,
                queries,
            )?,
            EmbeddingInit::Random => random_embedding_init(
                queries,
                model_cfg.feature_dim,
                Modality::Visual,
                seed ^ 0x5649_5355,
            )?,
        };
        let textual = match model_cfg.textual_init {
            EmbeddingInit::Informed => collapse(
                textual_embedding_init(&vocabulary.classes, classes)?,
                queries,
            )?,
            EmbeddingInit::Random => random_embedding_init(
                queries,
                model_cfg.word_dim,
                Modality::Textual,
                seed ^ 0x5445_5854,
            )?,
        };
        let mut model = TsqNet::new(model_cfg, visual, textual, seed)?;
        let prepared: Vec<PreparedVideo> = videos
            .iter()
            .map(|v| model.prepare(v, vocabulary))
            .collect::<Result<_>>()?;
        let log = train(&prepared, &mut model, &config.train)?;

        let recognizer = fit_recognizer(&videos, classes, config.sampling.budget, seed)?;
        Ok(Self {
            config,
            probe,
            recognizer,
            model,
            log,
        })
    }

    pub fn budget(&self) -> usize {
        self.config.sampling.budget
    }

    /// Selects frames of one raw video. `seed` only affects the random policy.
    pub fn select(
        &self,
        policy: Policy,
        raw: &VideoRecord,
        vocabulary: &Vocabulary,
        seed: u64,
    ) -> Result<Selection> {
        self.select_k(policy, raw, vocabulary, self.budget(), seed)
    }

    pub fn select_k(
        &self,
        policy: Policy,
        raw: &VideoRecord,
        vocabulary: &Vocabulary,
        k: usize,
        seed: u64,
    ) -> Result<Selection> {
        let s = &self.config.sampling;
        let t = s.presample;
        let mut out = Selection {
            video_id: raw.id().to_string(),
            indices: Vec::new(),
            raw_frames: false,
            provenance: None,
            scores: None,
        };
        match policy {
            Policy::Tsq => {
                let pre = raw.presampled(t)?;
                let inf = self.model.infer(&self.model.prepare(&pre, vocabulary)?)?;
                let sv = aggregate_saliency(
                    &inf.visual_saliency,
                    &inf.visual_logits,
                    s.top_classes,
                    Modality::Visual,
                )?;
                let st = aggregate_saliency(
                    &inf.textual_saliency,
                    &inf.textual_logits,
                    s.top_classes,
                    Modality::Textual,
                )?;
                let r = fuse_and_select(&sv, &st, k, s.lambda_v, s.lambda_t)?;
                out.indices = r.indices;
                out.provenance = Some(r.provenance);
                out.scores = Some(sv.per_frame);
            }
            Policy::Uniform => out.indices = baseline_uniform(t, k)?,
            Policy::Random => out.indices = baseline_random(t, k, seed)?,
            Policy::Dense => {
                out.indices = baseline_dense(raw.frames());
                out.raw_frames = true;
            }
            Policy::MaxConf => {
                let logits = frame_logits(&self.recognizer, raw);
                out.indices = baseline_maxconf(&logits, k)?;
                out.raw_frames = true;
            }
            Policy::MaxConfL => {
                let pre = raw.presampled(t)?;
                out.indices = baseline_maxconf(&frame_logits(&self.probe, &pre), k)?;
            }
        }
        Ok(out)
    }

    /// Scores every policy on `videos` with the frozen recognizer.
    pub fn evaluate(
        &self,
        videos: &[VideoRecord],
        vocabulary: &Vocabulary,
        policies: &[Policy],
        k: usize,
        seed: u64,
    ) -> Result<Vec<PolicyReport>> {
        if videos.is_empty() {
            return Err(TsqError::InvalidConfig("evaluation set is empty".into()));
        }
        let t = self.config.sampling.presample;
        let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
        let mut reports = Vec::with_capacity(policies.len());
        for &policy in policies {
            let rows: Vec<(Vec<f64>, Option<f64>, usize)> = videos
                .par_iter()
                .enumerate()
                .map(|(i, raw)| -> Result<_> {
                    let sel = self.select_k(policy, raw, vocabulary, k, video_seed(seed, i))?;
                    let source = if sel.raw_frames {
                        raw.clone()
                    } else {
                        raw.presampled(t)?
                    };
                    let probs = softmax(&self.recognizer.logits(&pooled(&source, &sel.indices)));
                    Ok((probs, planted_recall(&source, &sel.indices), raw.frames()))
                })
                .collect::<Result<_>>()?;
            let scores = Mat::from_shape_fn((rows.len(), self.recognizer.classes()), |(r, c)| {
                rows[r].0[c]
            });
            let recalls: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
            let mean_raw = rows.iter().map(|r| r.2).sum::<usize>() as f64 / rows.len() as f64;
            let flops = policy
                .flops(mean_raw.round() as usize, t, k)
                .breakdown()?
                .total;
            reports.push(PolicyReport {
                policy,
                budget: k,
                map: mean_average_precision(&scores, &labels)?,
                top1: top1_accuracy(&scores, &labels)?,
                flops,
                recall: (!recalls.is_empty())
                    .then(|| recalls.iter().sum::<f64>() / recalls.len() as f64),
            });
        }
        Ok(reports)
    }

    /// mAP and Top-1 of the visual branch's own coarse prediction.
    pub fn coarse_metrics(
        &self,
        videos: &[VideoRecord],
        vocabulary: &Vocabulary,
    ) -> Result<(f64, f64)> {
        let t = self.config.sampling.presample;
        let rows: Vec<Vec<f64>> = videos
            .par_iter()
            .map(|v| -> Result<Vec<f64>> {
                let p = self.model.prepare(&v.presampled(t)?, vocabulary)?;
                Ok(softmax(&self.model.infer(&p)?.visual_logits))
            })
            .collect::<Result<_>>()?;
        let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
        let c = self.model.config.classes;
        let scores = Mat::from_shape_fn((rows.len(), c), |(r, k)| rows[r][k]);
        Ok((
            mean_average_precision(&scores, &labels)?,
            top1_accuracy(&scores, &labels)?,
        ))
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut tensors = self.model.tensors();
        self.probe.visit("probe", &mut |n, m| {
            tensors.push((n.to_string(), m.clone()))
        });
        self.recognizer.visit("recognizer", &mut |n, m| {
            tensors.push((n.to_string(), m.clone()))
        });
        Ok(TensorArchive {
            meta: serde_json::json!({
                "config": self.config,
                "model": self.model.config,
                "train_log": self.log,
            }),
            tensors,
        })
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let field = |k: &str| {
            archive
                .meta
                .get(k)
                .cloned()
                .ok_or_else(|| TsqError::format("checkpoint meta", format!("missing '{k}'")))
        };
        let config: RunConfig = serde_json::from_value(field("config")?)?;
        let model_cfg: ModelConfig = serde_json::from_value(field("model")?)?;
        let mut model = TsqNet::skeleton(model_cfg)?;
        model.load_tensors(archive)?;
        let load = |prefix: &str| -> Result<LinearClassifier> {
            let get = |n: &str| {
                archive
                    .get(&format!("{prefix}.{n}"))
                    .cloned()
                    .ok_or_else(|| {
                        TsqError::format(format!("{prefix}.{n}"), "missing from checkpoint")
                    })
            };
            let (weight, bias) = (get("weight")?, get("bias")?);
            if bias.nrows() != 1 || bias.ncols() != weight.ncols() {
                return Err(TsqError::mismatch(
                    format!("{prefix}.bias"),
                    weight.ncols(),
                    bias.ncols(),
                ));
            }
            Ok(LinearClassifier { weight, bias })
        };
        Ok(Self {
            config,
            probe: load("probe")?,
            recognizer: load("recognizer")?,
            model,
            log: serde_json::from_value(field("train_log")?).unwrap_or_default(),
        })
    }
}

/// Seed for the random policy on the `index`-th video of a listing.
pub fn video_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

fn frame_logits(classifier: &LinearClassifier, video: &VideoRecord) -> Mat {
    let feats = video.features.to_mat();
    let rows: Vec<Vec<f64>> = feats
        .rows()
        .into_iter()
        .map(|r| classifier.logits(&r.to_vec()))
        .collect();
    Mat::from_shape_fn((rows.len(), classifier.classes()), |(r, c)| rows[r][c])
}

/// `|selected ∩ planted| / min(K, |planted|)`; `None` without ground truth.
pub fn planted_recall(video: &VideoRecord, selected: &[usize]) -> Option<f64> {
    let planted = video.planted_salient.as_ref()?;
    if planted.is_empty() || selected.is_empty() {
        return None;
    }
    let hits = selected.iter().filter(|i| planted.contains(i)).count();
    Some(hits as f64 / selected.len().min(planted.len()) as f64)
}

/// Linear recognizer over the mean of `k` uniformly chosen frames.
pub fn fit_recognizer(
    videos: &[VideoRecord],
    classes: usize,
    k: usize,
    seed: u64,
) -> Result<LinearClassifier> {
    let samples: Vec<(Vec<f64>, usize)> = videos
        .iter()
        .map(|v| Ok((pooled(v, &baseline_uniform(v.frames(), k)?), v.label)))
        .collect::<Result<_>>()?;
    LinearClassifier::fit(
        &samples,
        classes,
        FitOptions {
            epochs: 60,
            lr: 0.05,
            batch_size: 16,
            seed: seed ^ 0x5245_4347,
            ..FitOptions::default()
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub reports: Vec<PolicyReport>,
    /// Coarse visual-prediction mAP and Top-1 on the held-out split.
    pub coarse_map: f64,
    pub coarse_top1: f64,
    pub final_loss: Option<f64>,
}

impl Outcome {
    pub fn report(&self, policy: Policy) -> Option<&PolicyReport> {
        self.reports.iter().find(|r| r.policy == policy)
    }
}

/// Fits on the training split of `dataset` and evaluates on the held-out one
/// (`config.data.holdout_every`).
pub fn run_holdout(
    dataset: &Dataset,
    vocabulary: &Vocabulary,
    config: &RunConfig,
    policies: &[Policy],
) -> Result<(Pipeline, Outcome)> {
    let (train_set, test_set) = dataset.split_holdout(config.data.holdout_every);
    let pipeline = Pipeline::fit(&train_set, vocabulary, config.clone())?;
    let reports = pipeline.evaluate(
        &test_set.videos,
        vocabulary,
        policies,
        config.sampling.budget,
        config.train.seed,
    )?;
    let (coarse_map, coarse_top1) = pipeline.coarse_metrics(&test_set.videos, vocabulary)?;
    let final_loss = pipeline.log.last().map(|e| e.loss);
    Ok((
        pipeline,
        Outcome {
            reports,
            coarse_map,
            coarse_top1,
            final_loss,
        },
    ))
}

/// Generates the planted-saliency benchmark with `seed`, then trains and
/// evaluates with the same seed.
pub fn run_synthetic(
    synth: &SynthConfig,
    config: &RunConfig,
    seed: u64,
    policies: &[Policy],
) -> Result<Outcome> {
    let bench = generate_synthetic_dataset(synth, seed)?;
    let mut cfg = config.clone();
    cfg.train.seed = seed;
    Ok(run_holdout(&bench.dataset, &bench.vocabulary, &cfg, policies)?.1)
}

/// One grid point as `(key, value)` pairs, in axis order.
pub type Setting = Vec<(String, String)>;

/// One grid axis: a setting name and its candidate values.
pub type GridAxis = (String, Vec<String>);

pub fn parse_grid(spec: &str) -> Result<GridAxis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| TsqError::InvalidConfig(format!("grid '{spec}' is not key=v1,v2,...")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if key.trim().is_empty() || values.iter().any(|v| v.is_empty()) {
        return Err(TsqError::InvalidConfig(format!(
            "grid '{spec}' has an empty key or value"
        )));
    }
    Ok((key.trim().to_string(), values))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub setting: Setting,
    pub seeds: Vec<u64>,
    /// Fused-selection mAP per seed.
    pub maps: Vec<f64>,
    pub median_map: f64,
    pub median_top1: f64,
    pub median_recall: Option<f64>,
    pub median_coarse_map: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Every combination of `grid` applied on top of `base`, in row-major order.
pub fn grid_settings(base: &RunConfig, grid: &[GridAxis]) -> Result<Vec<(Setting, RunConfig)>> {
    let mut out = vec![(Vec::new(), base.clone())];
    for (key, values) in grid {
        let mut next = Vec::with_capacity(out.len() * values.len());
        for (setting, cfg) in &out {
            for v in values {
                let mut c = cfg.clone();
                c.set(key, v)?;
                let mut s = setting.clone();
                s.push((key.clone(), v.clone()));
                next.push((s, c));
            }
        }
        out = next;
    }
    Ok(out)
}

/// Runs every grid setting for every seed through `run`, which maps a
/// config and seed to an outcome.
pub fn ablate<F>(
    base: &RunConfig,
    grid: &[GridAxis],
    seeds: &[u64],
    run: F,
) -> Result<Vec<AblationRow>>
where
    F: Fn(&RunConfig, u64) -> Result<Outcome>,
{
    let mut rows = Vec::new();
    for (setting, cfg) in grid_settings(base, grid)? {
        cfg.validate()?;
        let outcomes: Vec<Outcome> = seeds.iter().map(|&s| run(&cfg, s)).collect::<Result<_>>()?;
        let tsq = |f: &dyn Fn(&PolicyReport) -> Option<f64>| -> Vec<f64> {
            outcomes
                .iter()
                .filter_map(|o| o.report(Policy::Tsq).and_then(f))
                .collect()
        };
        let maps = tsq(&|r| Some(r.map));
        let recalls = tsq(&|r| r.recall);
        rows.push(AblationRow {
            setting,
            seeds: seeds.to_vec(),
            median_map: median(&maps),
            median_top1: median(&tsq(&|r| Some(r.top1))),
            median_recall: (!recalls.is_empty()).then(|| median(&recalls)),
            median_coarse_map: median(&outcomes.iter().map(|o| o.coarse_map).collect::<Vec<_>>()),
            maps,
        });
    }
    Ok(rows)
}

/// Configuration used by the desk-scale synthetic experiments.
pub fn desk_config(synth: &SynthConfig, budget: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.sampling.presample = synth.frames;
    cfg.sampling.budget = budget;
    cfg.model.t_max = cfg.model.t_max.max(synth.frames);
    cfg.model.top_objects = cfg.model.top_objects.min(synth.objects);
    cfg.sampling.top_classes = cfg.sampling.top_classes.min(synth.classes);
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (SynthConfig, RunConfig) {
        let synth = SynthConfig {
            classes: 3,
            frames: 8,
            feature_dim: 8,
            objects: 9,
            embed_dim: 6,
            per_class: 8,
            salient: 2,
            noise: 0.5,
        };
        let mut cfg = desk_config(&synth, 2);
        cfg.model.reduced_dim = 8;
        cfg.sampling.top_classes = 2;
        cfg.train.epochs = 2;
        (synth, cfg)
    }

    #[test]
    fn reference_costs_round_to_the_expected_rows() {
        let b = reference_costs().breakdown().unwrap();
        let rows: Vec<f64> = b.rows.iter().map(|r| r.rounded).collect();
        assert_eq!(rows, vec![3.52, 1.56, 20.55, 0.36, 0.10]);
        assert_eq!(b.total, 26.09);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("best".parse::<Policy>().is_err());
    }

    #[test]
    fn dense_costs_more_than_uniform() {
        let d = Policy::Dense.flops(16, 16, 4).breakdown().unwrap().total;
        let u = Policy::Uniform.flops(16, 16, 4).breakdown().unwrap().total;
        assert!(d > u);
    }

    #[test]
    fn recall_counts_planted_hits() {
        let bench = generate_synthetic_dataset(&small().0, 0).unwrap();
        let v = &bench.dataset.videos[0];
        let planted = v.planted_salient.clone().unwrap();
        assert_eq!(planted_recall(v, &planted), Some(1.0));
    }

    #[test]
    fn pipeline_checkpoint_round_trip_and_uniform_equals_dense_at_full_budget() {
        let (synth, mut cfg) = small();
        let bench = generate_synthetic_dataset(&synth, 3).unwrap();
        cfg.sampling.budget = synth.frames;
        let (p, _) =
            run_holdout(&bench.dataset, &bench.vocabulary, &cfg, &[Policy::Uniform]).unwrap();
        let back = Pipeline::from_archive(&p.to_archive().unwrap()).unwrap();
        assert_eq!(back.model, p.model);
        assert_eq!(back.recognizer, p.recognizer);
        let test = bench.dataset.split_holdout(cfg.data.holdout_every).1;
        let r = p
            .evaluate(
                &test.videos,
                &bench.vocabulary,
                &[Policy::Uniform, Policy::Dense],
                synth.frames,
                0,
            )
            .unwrap();
        assert_eq!((r[0].map, r[0].top1), (r[1].map, r[1].top1));
    }

    #[test]
    fn grid_expands_row_major() {
        let grid = vec![
            parse_grid("beta=0,1").unwrap(),
            parse_grid("alpha=0.5,1").unwrap(),
        ];
        let s = grid_settings(&RunConfig::default(), &grid).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[1].1.train.loss_weights.alpha, 1.0);
        assert_eq!(s[2].1.train.loss_weights.beta, 1.0);
        assert!(parse_grid("beta").is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
