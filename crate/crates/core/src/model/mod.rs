//! The Siamese verification head.
//!
//! Both inputs go through one shared backbone
//! (`linear n -> n/2`, ReLU, `linear n/2 -> n`, sigmoid). The two embeddings
//! are combined into the distance vector `[(e1 - e2)^2, e1 * e2]` of length
//! `2n`, and a single linear unit followed by a sigmoid turns that into a
//! similarity probability.

mod checkpoint;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, LinearLayer, Matrix};

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_MAGIC};

/// Default decision threshold on the similarity probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Which halves of the distance vector feed the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// `[(e1 - e2)^2, e1 * e2]`, length `2n`.
    #[default]
    Full,
    /// Ablation without the Hadamard half: `(e1 - e2)^2`, length `n`.
    SquaredDifferenceOnly,
}

impl DistanceMode {
    pub fn width(self, dim: usize) -> usize {
        match self {
            DistanceMode::Full => 2 * dim,
            DistanceMode::SquaredDifferenceOnly => dim,
        }
    }

    fn combine(self, e1: &[f64], e2: &[f64]) -> Vec<f64> {
        let n = e1.len();
        let mut out = Vec::with_capacity(self.width(n));
        out.extend(e1.iter().zip(e2).map(|(a, b)| {
            let d = a - b;
            d * d
        }));
        if self == DistanceMode::Full {
            out.extend(e1.iter().zip(e2).map(|(a, b)| a * b));
        }
        out
    }
}

/// Shape of a model: input width, backbone depth, and distance layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    /// Number of linear layers in the backbone, at least 2. Extra layers are
    /// `n/2 -> n/2` with ReLU, inserted before the final expansion layer.
    pub depth: usize,
    pub distance: DistanceMode,
}

impl ModelConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            depth: 2,
            distance: DistanceMode::Full,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_distance(mut self, distance: DistanceMode) -> Self {
        self.distance = distance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || !self.dim.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "model dimension must be even and >= 2, got {}",
                self.dim
            )));
        }
        if self.depth < 2 {
            return Err(Error::InvalidParameter(format!(
                "backbone depth must be >= 2, got {}",
                self.depth
            )));
        }
        Ok(())
    }

    /// `(in, out)` of each backbone layer.
    fn backbone_shapes(&self) -> Vec<(usize, usize)> {
        let (n, h) = (self.dim, self.dim / 2);
        let mut shapes = vec![(n, h)];
        shapes.extend(std::iter::repeat_n((h, h), self.depth - 2));
        shapes.push((h, n));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.checked_param_count().expect("parameter count overflows usize")
    }

    pub(crate) fn checked_param_count(&self) -> Option<usize> {
        let (n, h) = (self.dim, self.dim / 2);
        let expand = n.checked_mul(h)?;
        let hidden = h.checked_mul(h)?.checked_add(h)?.checked_mul(self.depth - 2)?;
        (expand + h)
            .checked_add(expand + n)?
            .checked_add(hidden)?
            .checked_add(self.distance.width(n).checked_add(1)?)
    }
}

/// A similarity probability, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Score(f64);

impl Score {
    pub fn p(self) -> f64 {
        self.0
    }

    pub fn is_similar(self, threshold: f64) -> bool {
        self.0 >= threshold
    }
}

#[derive(Debug, Clone)]
struct TwinActivations {
    /// Input to each backbone layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each backbone layer.
    pre: Vec<Vec<f64>>,
    embedding: Vec<f64>,
}

/// Everything [`TinyModel::backward_pair`] needs from one forward pass.
#[derive(Debug, Clone)]
pub struct PairActivations {
    stamp: u64,
    left: TwinActivations,
    right: TwinActivations,
    distance: Vec<f64>,
    logit: f64,
    p: f64,
}

impl PairActivations {
    pub fn left_embedding(&self) -> &[f64] {
        &self.left.embedding
    }

    pub fn right_embedding(&self) -> &[f64] {
        &self.right.embedding
    }

    pub fn distance(&self) -> &[f64] {
        &self.distance
    }

    pub fn logit(&self) -> f64 {
        self.logit
    }

    pub fn score(&self) -> Score {
        Score(self.p)
    }
}

/// Gradients for every parameter tensor, in [`TinyModel::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    tensors: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(model: &TinyModel) -> Self {
        Self {
            tensors: model.parameters().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    /// Flattened view, in parameter order.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flatten().copied()
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::dim("gradient tensors", self.tensors.len(), other.tensors.len()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.len() != b.len() {
                return Err(Error::dim("gradient tensor", a.len(), b.len()));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.flat().all(|g| g == 0.0)
    }
}

/// All learnable parameters of the Siamese head.
///
/// Cloning is cheap relative to training and yields a snapshot that scores
/// identically. Any mutation through [`TinyModel::parameters_mut`] invalidates
/// previously captured [`PairActivations`].
#[derive(Debug, Clone)]
pub struct TinyModel {
    config: ModelConfig,
    backbone: Vec<LinearLayer>,
    head: LinearLayer,
    stamp: u64,
}

impl PartialEq for TinyModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.backbone == other.backbone && self.head == other.head
    }
}

/// Randomly initialized default-shape model; see [`TinyModel::init`].
pub fn init_model(dim: usize, seed: u64) -> Result<TinyModel> {
    TinyModel::init(ModelConfig::new(dim), seed)
}

/// `[(e1 - e2)^2, e1 * e2]`.
pub fn distance_vector(e1: &[f64], e2: &[f64]) -> Result<Vec<f64>> {
    if e1.len() != e2.len() {
        return Err(Error::dim("distance vector", e1.len(), e2.len()));
    }
    Ok(DistanceMode::Full.combine(e1, e2))
}

impl TinyModel {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform_layer = |in_dim: usize, out_dim: usize| {
            let bound = 1.0 / (in_dim as f64).sqrt();
            let w = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            LinearLayer::new(Matrix::from_vec(out_dim, in_dim, w)?, vec![0.0; out_dim])
        };
        let backbone = config
            .backbone_shapes()
            .into_iter()
            .map(|(i, o)| uniform_layer(i, o))
            .collect::<Result<Vec<_>>>()?;
        let head = uniform_layer(config.distance.width(config.dim), 1)?;
        Ok(Self {
            config,
            backbone,
            head,
            stamp: fresh_stamp(),
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            backbone: config
                .backbone_shapes()
                .into_iter()
                .map(|(i, o)| LinearLayer::zeros(i, o))
                .collect(),
            head: LinearLayer::zeros(config.distance.width(config.dim), 1),
            config,
            stamp: fresh_stamp(),
        })
    }

    /// Assembles a model from explicit layers, checking every shape.
    pub fn from_layers(
        backbone: Vec<LinearLayer>,
        head: LinearLayer,
        distance: DistanceMode,
    ) -> Result<Self> {
        let dim = backbone.first().map_or(0, LinearLayer::in_dim);
        let config = ModelConfig {
            dim,
            depth: backbone.len(),
            distance,
        };
        config.validate()?;
        for (layer, (i, o)) in backbone.iter().zip(config.backbone_shapes()) {
            if layer.in_dim() != i {
                return Err(Error::dim("backbone layer input", i, layer.in_dim()));
            }
            if layer.out_dim() != o {
                return Err(Error::dim("backbone layer output", o, layer.out_dim()));
            }
        }
        let width = distance.width(dim);
        if head.in_dim() != width {
            return Err(Error::dim("head input", width, head.in_dim()));
        }
        if head.out_dim() != 1 {
            return Err(Error::dim("head output", 1, head.out_dim()));
        }
        Ok(Self {
            config,
            backbone,
            head,
            stamp: fresh_stamp(),
        })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn backbone(&self) -> &[LinearLayer] {
        &self.backbone
    }

    pub fn head(&self) -> &LinearLayer {
        &self.head
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in fixed order: each backbone layer's weight
    /// (row-major) then bias, followed by the head's weight and bias.
    pub fn parameters(&self) -> Vec<&[f64]> {
        self.backbone
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|l| [l.weight().as_slice(), l.bias()])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.stamp = fresh_stamp();
        self.backbone
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|l| {
                let (w, b) = l.params_mut();
                [w, b]
            })
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim("model input", self.dim(), x.len()));
        }
        Ok(())
    }

    fn embed_trace(&self, x: &[f64]) -> Result<TwinActivations> {
        self.check_input(x)?;
        let last = self.backbone.len() - 1;
        let mut inputs = Vec::with_capacity(self.backbone.len());
        let mut pre = Vec::with_capacity(self.backbone.len());
        let mut current = x.to_vec();
        for (k, layer) in self.backbone.iter().enumerate() {
            let z = layer.forward(&current)?;
            let a = if k == last { sigmoid(&z) } else { relu(&z) };
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
        }
        Ok(TwinActivations {
            inputs,
            pre,
            embedding: current,
        })
    }

    /// Backbone output for one feature vector; every entry lies in (0, 1).
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed_trace(x)?.embedding)
    }

    fn head_forward(&self, e1: &[f64], e2: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
        if e1.len() != self.dim() || e2.len() != self.dim() {
            let bad = if e1.len() != self.dim() { e1.len() } else { e2.len() };
            return Err(Error::dim("embedding", self.dim(), bad));
        }
        let distance = self.config.distance.combine(e1, e2);
        let logit = self.head.forward(&distance)?[0];
        Ok((distance, logit, sigmoid_scalar(logit)))
    }

    /// Scores two precomputed embeddings. Bitwise identical to
    /// [`TinyModel::score`] on the inputs that produced them.
    pub fn score_embeddings(&self, e1: &[f64], e2: &[f64]) -> Result<Score> {
        Ok(Score(self.head_forward(e1, e2)?.2))
    }

    pub fn score(&self, x1: &[f64], x2: &[f64]) -> Result<Score> {
        let e1 = self.embed(x1)?;
        let e2 = self.embed(x2)?;
        self.score_embeddings(&e1, &e2)
    }

    /// Forward pass that keeps the activations needed for backprop.
    pub fn score_pair(&self, x1: &[f64], x2: &[f64]) -> Result<(Score, PairActivations)> {
        let left = self.embed_trace(x1)?;
        let right = self.embed_trace(x2)?;
        let (distance, logit, p) = self.head_forward(&left.embedding, &right.embedding)?;
        let acts = PairActivations {
            stamp: self.stamp,
            left,
            right,
            distance,
            logit,
            p,
        };
        Ok((Score(p), acts))
    }

    /// Gradients of a downstream loss with respect to every parameter, given
    /// `dL/dp` for the pair's score. Both twins accumulate into the shared
    /// backbone tensors.
    pub fn backward_pair(&self, acts: &PairActivations, dl_dp: f64) -> Result<ParamGrads> {
        let mut grads = ParamGrads::zeros_like(self);
        self.accumulate_backward(acts, dl_dp, &mut grads)?;
        Ok(grads)
    }

    /// Like [`TinyModel::backward_pair`] but adds into existing buffers.
    pub fn accumulate_backward(
        &self,
        acts: &PairActivations,
        dl_dp: f64,
        grads: &mut ParamGrads,
    ) -> Result<()> {
        if acts.stamp != self.stamp {
            return Err(Error::StaleActivations);
        }
        let expected = 2 * (self.backbone.len() + 1);
        if grads.tensors.len() != expected {
            return Err(Error::dim("gradient tensors", expected, grads.tensors.len()));
        }

        let dl_dz = dl_dp * acts.p * (1.0 - acts.p);
        let (backbone_grads, head_grads) = grads.tensors.split_at_mut(2 * self.backbone.len());
        let (head_w, head_b) = head_grads.split_at_mut(1);
        let grad_distance =
            self.head
                .accumulate_backward(&acts.distance, &[dl_dz], &mut head_w[0], &mut head_b[0])?;

        let n = self.dim();
        let (e1, e2) = (&acts.left.embedding, &acts.right.embedding);
        let mut g1 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        for i in 0..n {
            let g = grad_distance[i];
            let d = 2.0 * (e1[i] - e2[i]) * g;
            g1[i] += d;
            g2[i] -= d;
        }
        if self.config.distance == DistanceMode::Full {
            for i in 0..n {
                let g = grad_distance[n + i];
                g1[i] += e2[i] * g;
                g2[i] += e1[i] * g;
            }
        }

        self.backbone_backward(&acts.left, &g1, backbone_grads)?;
        self.backbone_backward(&acts.right, &g2, backbone_grads)?;
        Ok(())
    }

    fn backbone_backward(
        &self,
        twin: &TwinActivations,
        grad_embedding: &[f64],
        grads: &mut [Vec<f64>],
    ) -> Result<()> {
        let mut g = sigmoid_backward(&twin.embedding, grad_embedding)?;
        for k in (0..self.backbone.len()).rev() {
            let (gw, gb) = grads[2 * k..2 * k + 2].split_at_mut(1);
            let grad_in = self.backbone[k].accumulate_backward(&twin.inputs[k], &g, &mut gw[0], &mut gb[0])?;
            if k > 0 {
                g = relu_backward(&twin.pre[k - 1], &grad_in)?;
            }
        }
        Ok(())
    }
}
