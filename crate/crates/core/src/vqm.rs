//! Visual query module: prototype initialization of the visual queries and
//! the visual forward pass.

use crate::autograd::{softmax, Mat};
use crate::data::VideoRecord;
use crate::error::{Result, TsqError};
use crate::linear::{argmax, FrameClassifier};
use crate::model::Branch;
use crate::tsq::{Modality, SaliencyMatrix, TsqEmbeddingSet};

/// Number of frames kept per video for a keep-ratio of `m_percent`.
pub fn keep_count(m_percent: f64, frames: usize) -> usize {
    let exact = m_percent * frames as f64 / 100.0;
    ((exact - 1e-9).ceil() as usize).clamp(1, frames.max(1))
}

/// Video vector: mean of the top `m%` frames (by ground-truth confidence)
/// among those the probe classifies correctly; all frames if none are.
pub fn video_vector(video: &VideoRecord, probe: &dyn FrameClassifier, m_percent: f64) -> Vec<f64> {
    let feats = video.features.to_mat();
    let t = feats.nrows();
    let mut correct: Vec<(usize, f64)> = Vec::new();
    for i in 0..t {
        let row = feats.row(i).to_vec();
        let logits = probe.logits(&row);
        if argmax(&logits) == video.label {
            correct.push((i, softmax(&logits)[video.label]));
        }
    }
    let chosen: Vec<usize> = if correct.is_empty() {
        (0..t).collect()
    } else {
        correct.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        correct
            .iter()
            .take(keep_count(m_percent, t))
            .map(|(i, _)| *i)
            .collect()
    };
    let mut acc = vec![0.0; feats.ncols()];
    for &i in &chosen {
        for (a, v) in acc.iter_mut().zip(feats.row(i)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= chosen.len() as f64);
    acc
}

/// Per-class mean of video vectors, one prototype row per class.
pub fn prototype_init(
    videos: &[VideoRecord],
    classes: usize,
    probe: &dyn FrameClassifier,
    m_percent: f64,
) -> Result<TsqEmbeddingSet> {
    let Some(dim) = videos.first().map(|v| v.features.dim()) else {
        return Err(TsqError::Init("no training videos".into()));
    };
    let mut sums = Mat::zeros((classes, dim));
    let mut counts = vec![0usize; classes];
    for v in videos {
        if v.label >= classes {
            return Err(TsqError::Init(format!(
                "video {} has label {} >= {classes}",
                v.id(),
                v.label
            )));
        }
        let vec = video_vector(v, probe, m_percent);
        for (k, x) in vec.into_iter().enumerate() {
            sums[[v.label, k]] += x;
        }
        counts[v.label] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(TsqError::Init(format!("class {c} has no training videos")));
    }
    for (c, n) in counts.iter().enumerate() {
        sums.row_mut(c).mapv_inplace(|x| x / *n as f64);
    }
    TsqEmbeddingSet::new(sums, Modality::Visual)
}

/// Visual saliency matrix and coarse logits for one video.
pub fn vqm_forward(video: &VideoRecord, branch: &Branch) -> Result<(SaliencyMatrix, Vec<f64>)> {
    branch.infer(&video.features.to_mat())
}
