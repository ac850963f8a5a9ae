//! Textual query module: object-score features over a word-embedding
//! vocabulary, category-name initialization, and the textual forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Mat;
use crate::data::{ObjectScoreSequence, VideoRecord, Vocabulary, WordEmbeddingTable};
use crate::error::{Result, TsqError};
use crate::model::Branch;
use crate::params::gaussian;
use crate::tsq::{Modality, SaliencyMatrix, TsqEmbeddingSet};

/// Indices of the `n` largest values; ties go to the lower index.
pub fn top_n_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Per frame: keep the `top_n` largest object scores, renormalize them to sum
/// one, and mix the matching embedding rows. `top_n == C_o` keeps all objects.
pub fn textual_frame_features(
    objects: &ObjectScoreSequence,
    table: &WordEmbeddingTable,
    top_n: usize,
) -> Result<Mat> {
    if objects.object_count() != table.rows() {
        return Err(TsqError::mismatch(
            "object vocabulary",
            objects.object_count(),
            table.rows(),
        ));
    }
    if top_n == 0 || top_n > table.rows() {
        return Err(TsqError::InvalidConfig(format!(
            "top_n {top_n} must be in 1..={}",
            table.rows()
        )));
    }
    let words = table.to_mat();
    let mut out = Mat::zeros((objects.frames(), table.dim()));
    for t in 0..objects.frames() {
        let scores: Vec<f64> = objects.row(t).iter().map(|&v| v as f64).collect();
        let kept = top_n_indices(&scores, top_n);
        let mass: f64 = kept.iter().map(|&o| scores[o]).sum();
        let weights: Vec<(usize, f64)> = if mass > 0.0 {
            kept.iter().map(|&o| (o, scores[o] / mass)).collect()
        } else {
            log::warn!("frame {t} has no object mass; using uniform weights");
            (0..top_n).map(|o| (o, 1.0 / top_n as f64)).collect()
        };
        for (o, w) in weights {
            out.row_mut(t).scaled_add(w, &words.row(o));
        }
    }
    Ok(out)
}

/// Copies the category-name rows into a learnable textual query set.
pub fn textual_embedding_init(
    class_rows: &WordEmbeddingTable,
    classes: usize,
) -> Result<TsqEmbeddingSet> {
    if class_rows.rows() < classes {
        return Err(TsqError::Init(format!(
            "missing category-name embedding for class {}",
            class_rows.rows()
        )));
    }
    let m = class_rows.to_mat();
    TsqEmbeddingSet::new(
        m.slice(ndarray::s![..classes, ..]).to_owned(),
        Modality::Textual,
    )
}

/// Unit-variance Gaussian queries, for the random-initialization ablation.
pub fn random_embedding_init(
    rows: usize,
    dim: usize,
    modality: Modality,
    seed: u64,
) -> Result<TsqEmbeddingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TsqEmbeddingSet::new(gaussian(&mut rng, rows, dim, 1.0), modality)
}

pub fn tqm_forward(
    video: &VideoRecord,
    vocabulary: &Vocabulary,
    branch: &Branch,
    top_n: usize,
) -> Result<(SaliencyMatrix, Vec<f64>)> {
    let x = textual_frame_features(&video.objects, &vocabulary.objects, top_n)?;
    branch.infer(&x)
}
