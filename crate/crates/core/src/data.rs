//! Domain types for per-frame inputs, frame pre-sampling, and the synthetic
//! planted-saliency benchmark.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax, Mat};
use crate::error::{Result, TsqError};

/// `T×d` per-frame visual features of one video, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    video_id: String,
    frames: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        frames: usize,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if frames == 0 {
            return Err(TsqError::EmptyVideo);
        }
        if dim == 0 {
            return Err(TsqError::format(
                &video_id,
                "feature dimension must be positive",
            ));
        }
        if values.len() != frames * dim {
            return Err(TsqError::mismatch(
                format!("features of {video_id}"),
                frames * dim,
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TsqError::format(&video_id, "non-finite feature value"));
        }
        Ok(Self {
            video_id,
            frames,
            dim,
            values,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_mat(&self) -> Mat {
        f32_mat(self.frames, self.dim, &self.values)
    }

    /// Gathers the listed frames (repeats allowed) into a new sequence.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.frames {
                return Err(TsqError::mismatch(
                    "frame gather",
                    format!("< {}", self.frames),
                    i,
                ));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(self.video_id.clone(), indices.len(), self.dim, values)
    }
}

/// `T×C_o` per-frame object probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectScoreSequence {
    frames: usize,
    object_count: usize,
    values: Vec<f32>,
}

impl ObjectScoreSequence {
    pub fn new(frames: usize, object_count: usize, values: Vec<f32>) -> Result<Self> {
        if frames == 0 {
            return Err(TsqError::EmptyVideo);
        }
        if object_count == 0 {
            return Err(TsqError::InvalidConfig(
                "object count must be positive".into(),
            ));
        }
        if values.len() != frames * object_count {
            return Err(TsqError::mismatch(
                "object scores",
                frames * object_count,
                values.len(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(TsqError::InvalidConfig(format!(
                "object score {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            frames,
            object_count,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn object_count(&self) -> usize {
        self.object_count
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.object_count..(t + 1) * self.object_count]
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.object_count);
        for &i in indices {
            if i >= self.frames {
                return Err(TsqError::mismatch(
                    "object gather",
                    format!("< {}", self.frames),
                    i,
                ));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.object_count, values)
    }
}

/// Named `rows×D` embedding table (object vocabulary or category names).
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddingTable {
    names: Vec<String>,
    dim: usize,
    values: Vec<f32>,
}

impl WordEmbeddingTable {
    pub fn new(names: Vec<String>, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(TsqError::InvalidConfig(
                "embedding dimension must be positive".into(),
            ));
        }
        if values.len() != names.len() * dim {
            return Err(TsqError::mismatch(
                "embedding table",
                names.len() * dim,
                values.len(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(TsqError::format(
                names[pos / dim].clone(),
                "non-finite embedding value",
            ));
        }
        Ok(Self { names, dim, values })
    }

    pub fn rows(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn to_mat(&self) -> Mat {
        f32_mat(self.rows(), self.dim, &self.values)
    }
}

/// Object vocabulary plus category-name embeddings, as shipped in one file.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub objects: WordEmbeddingTable,
    pub classes: WordEmbeddingTable,
}

impl Vocabulary {
    pub fn new(objects: WordEmbeddingTable, classes: WordEmbeddingTable) -> Result<Self> {
        if objects.dim() != classes.dim() {
            return Err(TsqError::mismatch(
                "vocabulary embedding dim",
                objects.dim(),
                classes.dim(),
            ));
        }
        Ok(Self { objects, classes })
    }

    pub fn dim(&self) -> usize {
        self.objects.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub features: FeatureSequence,
    pub objects: ObjectScoreSequence,
    pub label: usize,
    pub planted_salient: Option<Vec<usize>>,
}

impl VideoRecord {
    pub fn new(
        features: FeatureSequence,
        objects: ObjectScoreSequence,
        label: usize,
        planted_salient: Option<Vec<usize>>,
    ) -> Result<Self> {
        if features.frames() != objects.frames() {
            return Err(TsqError::mismatch(
                format!("object frames of {}", features.video_id()),
                features.frames(),
                objects.frames(),
            ));
        }
        if let Some(planted) = &planted_salient {
            if let Some(bad) = planted.iter().find(|&&i| i >= features.frames()) {
                return Err(TsqError::format(
                    features.video_id(),
                    format!("planted frame {bad} out of range"),
                ));
            }
        }
        Ok(Self {
            features,
            objects,
            label,
            planted_salient,
        })
    }

    pub fn id(&self) -> &str {
        self.features.video_id()
    }

    pub fn frames(&self) -> usize {
        self.features.frames()
    }

    /// Pre-samples or pads the video to exactly `t` frames. Planted indices
    /// are remapped to the positions that still show a planted frame.
    pub fn presampled(&self, t: usize) -> Result<Self> {
        let idx = presample_and_pad(self.frames(), t)?;
        let planted = self.planted_salient.as_ref().map(|p| {
            let set: BTreeSet<usize> = p.iter().copied().collect();
            idx.iter()
                .enumerate()
                .filter(|(_, src)| set.contains(src))
                .map(|(pos, _)| pos)
                .collect()
        });
        VideoRecord::new(
            self.features.gather(&idx)?,
            self.objects.gather(&idx)?,
            self.label,
            planted,
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn new(classes: usize, videos: Vec<VideoRecord>) -> Result<Self> {
        for v in &videos {
            if v.label >= classes {
                return Err(TsqError::format(
                    v.id(),
                    format!("label {} not below class count {classes}", v.label),
                ));
            }
        }
        Ok(Self { classes, videos })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.dim())
    }

    pub fn object_count(&self) -> Option<usize> {
        self.videos.first().map(|v| v.objects.object_count())
    }

    /// Deterministic hold-out split: within each class, every `every`-th
    /// video (in dataset order) goes to the second half.
    pub fn split_holdout(&self, every: usize) -> (Dataset, Dataset) {
        let mut seen = vec![0usize; self.classes];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for v in &self.videos {
            let k = seen[v.label];
            seen[v.label] += 1;
            if every > 0 && k % every == every - 1 {
                test.push(v.clone());
            } else {
                train.push(v.clone());
            }
        }
        (
            Dataset {
                classes: self.classes,
                videos: train,
            },
            Dataset {
                classes: self.classes,
                videos: test,
            },
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionBudget {
    pub presample_count: usize,
    pub select_count: usize,
}

impl SelectionBudget {
    pub fn new(presample_count: usize, select_count: usize) -> Result<Self> {
        if select_count == 0 || select_count > presample_count {
            return Err(TsqError::InvalidConfig(format!(
                "budget requires 1 <= K <= T, got K={select_count}, T={presample_count}"
            )));
        }
        Ok(Self {
            presample_count,
            select_count,
        })
    }
}

/// Uniformly pre-samples `t` frame indices from a video of `raw_frame_count`
/// frames (start-aligned), or cyclically repeats a shorter video up to `t`.
pub fn presample_and_pad(raw_frame_count: usize, t: usize) -> Result<Vec<usize>> {
    if raw_frame_count == 0 {
        return Err(TsqError::EmptyVideo);
    }
    if t == 0 {
        return Err(TsqError::InvalidConfig(
            "pre-sample count must be positive".into(),
        ));
    }
    if raw_frame_count >= t {
        Ok((0..t).map(|j| j * raw_frame_count / t).collect())
    } else {
        Ok((0..t).map(|j| j % raw_frame_count).collect())
    }
}

pub(crate) fn f32_mat(rows: usize, cols: usize, values: &[f32]) -> Mat {
    Mat::from_shape_fn((rows, cols), |(r, c)| values[r * cols + c] as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub objects: usize,
    pub embed_dim: usize,
    pub per_class: usize,
    pub salient: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            frames: 16,
            feature_dim: 32,
            objects: 40,
            embed_dim: 16,
            per_class: 40,
            salient: 4,
            noise: 0.8,
        }
    }
}

/// Logit boost given to a class's own objects in salient frames.
const OBJECT_BOOST: f64 = 4.0;
/// Fraction of distractor frames borrowed from other classes (the rest are clutter).
const CONFUSER_FRACTION: f64 = 0.5;
const NAME_NOISE: f64 = 0.25;

/// Generated benchmark with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBenchmark {
    pub config: SynthConfig,
    pub dataset: Dataset,
    pub vocabulary: Vocabulary,
    /// `g_c`, one row per class.
    pub class_directions: Vec<Vec<f64>>,
    pub class_objects: Vec<Vec<usize>>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("classes", self.classes),
            ("frames", self.frames),
            ("feature_dim", self.feature_dim),
            ("objects", self.objects),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TsqError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(TsqError::InvalidConfig("need at least 2 classes".into()));
        }
        if self.salient > self.frames {
            return Err(TsqError::InvalidConfig(format!(
                "salient frames {} exceed frame count {}",
                self.salient, self.frames
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(TsqError::InvalidConfig(
                "noise must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn object_row(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    boosted: Option<&[usize]>,
    spread: f64,
) -> Vec<f32> {
    let mut logits: Vec<f64> = gaussian(rng, cfg.objects)
        .into_iter()
        .map(|v| v * spread)
        .collect();
    if let Some(subset) = boosted {
        for &o in subset {
            logits[o] += OBJECT_BOOST;
        }
    }
    softmax(&logits).into_iter().map(|p| p as f32).collect()
}

/// Builds the planted-saliency benchmark. Pure function of `(config, seed)`.
pub fn generate_synthetic_dataset(config: &SynthConfig, seed: u64) -> Result<SyntheticBenchmark> {
    config.validate()?;
    let cfg = config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let class_directions: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| gaussian(&mut rng, cfg.feature_dim))
        .collect();

    let per_class_objects = (cfg.objects / cfg.classes).clamp(1, 3);
    let perm = index::sample(&mut rng, cfg.objects, cfg.objects).into_vec();
    let class_objects: Vec<Vec<usize>> = (0..cfg.classes)
        .map(|c| {
            let mut subset: Vec<usize> = (0..per_class_objects)
                .map(|j| perm[(c * per_class_objects + j) % cfg.objects])
                .collect();
            subset.sort_unstable();
            subset.dedup();
            subset
        })
        .collect();

    let object_rows: Vec<Vec<f64>> = (0..cfg.objects)
        .map(|_| gaussian(&mut rng, cfg.embed_dim))
        .collect();
    let mut class_rows = Vec::with_capacity(cfg.classes);
    for subset in &class_objects {
        let noise = gaussian(&mut rng, cfg.embed_dim);
        let row: Vec<f64> = (0..cfg.embed_dim)
            .map(|k| {
                subset.iter().map(|&o| object_rows[o][k]).sum::<f64>() / subset.len() as f64
                    + NAME_NOISE * noise[k]
            })
            .collect();
        class_rows.push(row);
    }

    let mut videos = Vec::with_capacity(cfg.classes * cfg.per_class);
    for c in 0..cfg.classes {
        for v in 0..cfg.per_class {
            let mut planted = index::sample(&mut rng, cfg.frames, cfg.salient).into_vec();
            planted.sort_unstable();
            let mut feats = Vec::with_capacity(cfg.frames * cfg.feature_dim);
            let mut objs = Vec::with_capacity(cfg.frames * cfg.objects);
            for t in 0..cfg.frames {
                let (base, subset, spread): (Option<usize>, Option<usize>, f64) =
                    if planted.binary_search(&t).is_ok() {
                        (Some(c), Some(c), cfg.noise)
                    } else if rng.random_bool(CONFUSER_FRACTION) {
                        let mut other = rng.random_range(0..cfg.classes - 1);
                        if other >= c {
                            other += 1;
                        }
                        (Some(other), Some(other), cfg.noise)
                    } else {
                        (None, None, 1.0)
                    };
                let noise = gaussian(&mut rng, cfg.feature_dim);
                for k in 0..cfg.feature_dim {
                    let value = match base {
                        Some(b) => class_directions[b][k] + cfg.noise * noise[k],
                        None => noise[k],
                    };
                    feats.push(value as f32);
                }
                let boosted = subset.map(|s| class_objects[s].as_slice());
                objs.extend(object_row(&mut rng, cfg, boosted, spread));
            }
            let id = format!("syn-c{c}-v{v}");
            let features = FeatureSequence::new(id, cfg.frames, cfg.feature_dim, feats)?;
            let objects = ObjectScoreSequence::new(cfg.frames, cfg.objects, objs)?;
            videos.push(VideoRecord::new(features, objects, c, Some(planted))?);
        }
    }

    let to_f32 =
        |rows: &[Vec<f64>]| -> Vec<f32> { rows.iter().flatten().map(|&v| v as f32).collect() };
    let vocabulary = Vocabulary::new(
        WordEmbeddingTable::new(
            (0..cfg.objects).map(|o| format!("object-{o}")).collect(),
            cfg.embed_dim,
            to_f32(&object_rows),
        )?,
        WordEmbeddingTable::new(
            (0..cfg.classes).map(|c| format!("class-{c}")).collect(),
            cfg.embed_dim,
            to_f32(&class_rows),
        )?,
    )?;

    Ok(SyntheticBenchmark {
        config: cfg.clone(),
        dataset: Dataset::new(cfg.classes, videos)?,
        vocabulary,
        class_directions,
        class_objects,
    })
}
