//! Query branches and the dual-branch network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Graph, Mat, Var};
use crate::config::{LossWeights, ModelConfig, Scope};
use crate::data::{VideoRecord, Vocabulary};
use crate::error::{Result, TsqError};
use crate::interaction::{swap_response, weighted_total, BranchOutputs};
use crate::io::TensorArchive;
use crate::params::{join, xavier, Parameterized};
use crate::tqm::textual_frame_features;
use crate::tsq::{
    attend, classify, feed_forward, Classifier, LayerShape, Modality, SaliencyMatrix,
    TsqEmbeddingSet, TsqLayerParams,
};

/// Per-frame linear map (a kernel-size-1 convolution): `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Mat,
    pub bias: Mat,
}

impl Affine {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Self {
            weight: xavier(rng, input, output),
            bias: Mat::zeros((1, output)),
        }
    }

    pub fn record(&self, g: &mut Graph, prefix: &str, x: Var) -> Result<Var> {
        let w = g.param(&join(prefix, "weight"), &self.weight);
        let b = g.param(&join(prefix, "bias"), &self.bias);
        let y = g.matmul(x, w)?;
        g.add_broadcast(y, b)
    }
}

impl Parameterized for Affine {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// One query module: reduction projections, query embeddings, TSQ layer
/// stack, and the coarse classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub modality: Modality,
    pub reduce: Affine,
    pub embed_reduce: Affine,
    pub embeddings: TsqEmbeddingSet,
    pub layers: Vec<TsqLayerParams>,
    pub classifier: Classifier,
    pub use_positional: bool,
}

/// Graph handles produced by one branch pass.
#[derive(Clone, Copy, Debug)]
pub struct BranchPass {
    /// Last layer's attention, `Q×T`.
    pub saliency: Var,
    /// Reduced frames `X̂`, `T×d'`.
    pub features: Var,
    pub logits: Var,
}

impl Branch {
    pub fn new(
        config: &ModelConfig,
        input_dim: usize,
        embeddings: TsqEmbeddingSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let queries = config.queries();
        if embeddings.len() != queries || embeddings.dim() != input_dim {
            return Err(TsqError::mismatch(
                "query embeddings",
                format!("{queries}×{input_dim}"),
                format!("{}×{}", embeddings.len(), embeddings.dim()),
            ));
        }
        let d = config.reduced_dim;
        let reduce = Affine::init(rng, input_dim, d);
        // Queries and frames start in the same reduced space.
        let embed_reduce = reduce.clone();
        let shape = LayerShape {
            dim: d,
            hidden: config.hidden(),
            t_max: config.t_max,
            positional: config.positional,
            norm: config.norm,
            self_attention: config.self_attention,
            heads: config.heads,
        };
        let layers = (0..config.layers)
            .map(|_| TsqLayerParams::init(rng, shape))
            .collect();
        let classifier = match (config.attention, config.classifier) {
            (Scope::Specific, Scope::Specific) => Classifier::specific(rng, config.classes, d),
            (Scope::Specific, Scope::Agnostic) => Classifier::shared(rng, d),
            (Scope::Agnostic, _) => Classifier::dense(rng, config.classes, d),
        };
        Ok(Self {
            modality: embeddings.modality,
            reduce,
            embed_reduce,
            embeddings,
            layers,
            classifier,
            use_positional: config.positional,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.reduce.weight.nrows()
    }

    pub fn forward(&self, g: &mut Graph, prefix: &str, input: Var) -> Result<BranchPass> {
        let (_, cols) = g.value(input).dim();
        if cols != self.input_dim() {
            return Err(TsqError::mismatch(
                format!("{prefix} input features"),
                self.input_dim(),
                cols,
            ));
        }
        let features = self.reduce.record(g, &join(prefix, "reduce"), input)?;
        let e = g.param(&join(prefix, "embeddings"), &self.embeddings.embeddings);
        let mut queries = self
            .embed_reduce
            .record(g, &join(prefix, "embed_reduce"), e)?;
        let mut saliency = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let lp = join(prefix, &format!("tsq.{l}"));
            let (a, r) = attend(g, &lp, layer, queries, features, self.use_positional)?;
            queries = feed_forward(g, &join(&lp, "ffn"), &layer.ffn, r)?;
            saliency = Some(a);
        }
        let saliency = saliency.ok_or_else(|| TsqError::InvalidConfig("no TSQ layers".into()))?;
        let logits = classify(g, &join(prefix, "classifier"), &self.classifier, queries)?;
        Ok(BranchPass {
            saliency,
            features,
            logits,
        })
    }

    /// Scores externally gathered responses with this branch's last FFN and
    /// its classifier.
    pub fn head(&self, g: &mut Graph, prefix: &str, responses: Var) -> Result<Var> {
        let l = self.layers.len() - 1;
        let lp = join(prefix, &format!("tsq.{l}"));
        let rhat = feed_forward(g, &join(&lp, "ffn"), &self.layers[l].ffn, responses)?;
        classify(g, &join(prefix, "classifier"), &self.classifier, rhat)
    }

    /// Saliency matrix and coarse logits for one `T×d_in` input.
    pub fn infer(&self, input: &Mat) -> Result<(SaliencyMatrix, Vec<f64>)> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let pass = self.forward(&mut g, "branch", x)?;
        Ok((
            SaliencyMatrix::new(g.value(pass.saliency).clone())?,
            g.value(pass.logits).row(0).to_vec(),
        ))
    }
}

impl Parameterized for Branch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "embeddings"), &self.embeddings.embeddings);
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.embed_reduce.visit(&join(prefix, "embed_reduce"), f);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("tsq.{l}")), f);
        }
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "embeddings"), &mut self.embeddings.embeddings);
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.embed_reduce
            .visit_mut(&join(prefix, "embed_reduce"), f);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("tsq.{l}")), f);
        }
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

/// A video with both branch inputs materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedVideo {
    pub visual: Mat,
    pub textual: Mat,
    pub label: usize,
}

impl PreparedVideo {
    pub fn new(video: &VideoRecord, vocabulary: &Vocabulary, top_objects: usize) -> Result<Self> {
        Ok(Self {
            visual: video.features.to_mat(),
            textual: textual_frame_features(&video.objects, &vocabulary.objects, top_objects)?,
            label: video.label,
        })
    }
}

/// Loss terms recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub visual: BranchPass,
    pub textual: BranchPass,
    pub swap_tv: Option<Var>,
    pub swap_vt: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub visual_saliency: SaliencyMatrix,
    pub visual_logits: Vec<f64>,
    pub textual_saliency: SaliencyMatrix,
    pub textual_logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsqNet {
    pub config: ModelConfig,
    pub visual: Branch,
    pub textual: Branch,
}

pub const VISUAL: &str = "visual";
pub const TEXTUAL: &str = "textual";

impl TsqNet {
    pub fn new(
        config: ModelConfig,
        visual_queries: TsqEmbeddingSet,
        textual_queries: TsqEmbeddingSet,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visual = Branch::new(&config, config.feature_dim, visual_queries, &mut rng)?;
        let textual = Branch::new(&config, config.word_dim, textual_queries, &mut rng)?;
        Ok(Self {
            config,
            visual,
            textual,
        })
    }

    /// A correctly shaped network with placeholder values, to be filled from
    /// a checkpoint.
    pub fn skeleton(config: ModelConfig) -> Result<Self> {
        let q = config.queries();
        let v = TsqEmbeddingSet::new(Mat::zeros((q, config.feature_dim)), Modality::Visual)?;
        let t = TsqEmbeddingSet::new(Mat::zeros((q, config.word_dim)), Modality::Textual)?;
        Self::new(config, v, t, 0)
    }

    pub fn prepare(&self, video: &VideoRecord, vocabulary: &Vocabulary) -> Result<PreparedVideo> {
        PreparedVideo::new(video, vocabulary, self.config.top_objects)
    }

    pub fn record_loss(
        &self,
        g: &mut Graph,
        video: &PreparedVideo,
        w: LossWeights,
    ) -> Result<LossVars> {
        let xv = g.constant(video.visual.clone());
        let xt = g.constant(video.textual.clone());
        let visual = self.visual.forward(g, VISUAL, xv)?;
        let textual = self.textual.forward(g, TEXTUAL, xt)?;
        let lv = g.cross_entropy(visual.logits, video.label)?;
        let lt = g.cross_entropy(textual.logits, video.label)?;
        let swap_tv = if w.alpha != 0.0 {
            let r = swap_response(g, textual.saliency, visual.features)?;
            let z = self.visual.head(g, VISUAL, r)?;
            Some(g.cross_entropy(z, video.label)?)
        } else {
            None
        };
        let swap_vt = if w.beta != 0.0 {
            let r = swap_response(g, visual.saliency, textual.features)?;
            let z = self.textual.head(g, TEXTUAL, r)?;
            Some(g.cross_entropy(z, video.label)?)
        } else {
            None
        };
        let total = weighted_total(g, lv, lt, swap_tv, swap_vt, w)?;
        g.ensure_finite(total, "total loss")?;
        Ok(LossVars {
            total,
            visual,
            textual,
            swap_tv,
            swap_vt,
        })
    }

    pub fn loss(&self, video: &PreparedVideo, w: LossWeights) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.record_loss(&mut g, video, w)?;
        Ok(g.scalar(vars.total))
    }

    pub fn loss_and_grads(
        &self,
        video: &PreparedVideo,
        w: LossWeights,
    ) -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let vars = self.record_loss(&mut g, video, w)?;
        Ok((g.scalar(vars.total), g.backward(vars.total)))
    }

    pub fn infer(&self, video: &PreparedVideo) -> Result<Inference> {
        let (visual_saliency, visual_logits) = self.visual.infer(&video.visual)?;
        let (textual_saliency, textual_logits) = self.textual.infer(&video.textual)?;
        Ok(Inference {
            visual_saliency,
            visual_logits,
            textual_saliency,
            textual_logits,
        })
    }

    /// Everything the swap-attention step consumes, as plain matrices.
    pub fn branch_outputs(&self, video: &PreparedVideo) -> Result<BranchOutputs> {
        let mut g = Graph::new();
        let xv = g.constant(video.visual.clone());
        let xt = g.constant(video.textual.clone());
        let v = self.visual.forward(&mut g, VISUAL, xv)?;
        let t = self.textual.forward(&mut g, TEXTUAL, xt)?;
        Ok(BranchOutputs {
            visual_saliency: SaliencyMatrix::new(g.value(v.saliency).clone())?,
            textual_saliency: SaliencyMatrix::new(g.value(t.saliency).clone())?,
            visual_features: g.value(v.features).clone(),
            textual_features: g.value(t.features).clone(),
            visual_logits: g.value(v.logits).row(0).to_vec(),
            textual_logits: g.value(t.logits).row(0).to_vec(),
        })
    }

    pub fn tensors(&self) -> Vec<(String, Mat)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, m| out.push((n.to_string(), m.clone())));
        out
    }

    /// Overwrites every tensor from `archive`, checking names and shapes.
    pub fn load_tensors(&mut self, archive: &TensorArchive) -> Result<()> {
        let mut failure = None;
        self.visit_mut("", &mut |name, m| {
            if failure.is_some() {
                return;
            }
            match archive.get(name) {
                Some(src) if src.dim() == m.dim() => m.assign(src),
                Some(src) => {
                    failure = Some(TsqError::mismatch(
                        format!("checkpoint tensor {name}"),
                        format!("{:?}", m.dim()),
                        format!("{:?}", src.dim()),
                    ))
                }
                None => failure = Some(TsqError::format(name, "missing from checkpoint")),
            }
        });
        failure.map_or(Ok(()), Err)
    }
}

impl Parameterized for TsqNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        self.visual.visit(&join(prefix, VISUAL), f);
        self.textual.visit(&join(prefix, TEXTUAL), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.visual.visit_mut(&join(prefix, VISUAL), f);
        self.textual.visit_mut(&join(prefix, TEXTUAL), f);
    }
}
