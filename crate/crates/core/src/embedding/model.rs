use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainingConfig;
use crate::corpus::Vocabulary;
use crate::linalg::{axpy, dot, Matrix};

/// Logits are clamped to `±LOGIT_CLAMP` before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Exponent applied to item frequencies for the noise distribution.
pub const NOISE_EXPONENT: f64 = 0.75;

/// Trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    /// One row per user, aligned with the corpus user order.
    pub user_vectors: Matrix,
    /// Item input vectors, aligned with vocabulary indices.
    pub item_vectors: Matrix,
    /// Output (context) vectors shared by both objectives.
    pub output: Matrix,
    /// Noise probabilities over vocabulary indices, ∝ count^0.75.
    pub noise: Vec<f64>,
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.output.cols()
    }

    pub fn all_finite(&self) -> bool {
        self.user_vectors.all_finite() && self.item_vectors.all_finite() && self.output.all_finite()
    }
}

/// Input matrices uniform in `[-0.5/dim, 0.5/dim]`, output matrix zero.
pub fn init_model(vocab: &Vocabulary, user_count: usize, config: &TrainingConfig) -> EmbeddingModel {
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let mut uniform_matrix = |rows: usize| {
        let data = (0..rows * dim).map(|_| (rng.random::<f64>() - 0.5) / dim as f64).collect();
        Matrix::from_vec(rows, dim, data)
    };
    let item_vectors = uniform_matrix(vocab.len());
    let user_vectors = uniform_matrix(user_count);
    let weights: Vec<f64> = vocab.counts().iter().map(|&c| (c as f64).powf(NOISE_EXPONENT)).collect();
    let total: f64 = weights.iter().sum();
    EmbeddingModel {
        user_vectors,
        item_vectors,
        output: Matrix::zeros(vocab.len(), dim),
        noise: weights.into_iter().map(|w| w / total).collect(),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn clamp_logit(x: f64) -> f64 {
    x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// Negative-sampling loss of one example:
/// `−[ln σ(c·o_t) + Σ_j ln σ(−c·o_j)]`.
pub fn example_loss(context: &[f64], target: usize, negatives: &[usize], model: &EmbeddingModel) -> f64 {
    let pos = clamp_logit(dot(context, model.output.row(target)));
    let mut loss = softplus(-pos);
    for &n in negatives {
        let x = clamp_logit(dot(context, model.output.row(n)));
        loss += softplus(x);
    }
    loss
}

/// Gradient of [`example_loss`] with respect to every participating vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleGradient {
    pub context: Vec<f64>,
    /// Output-row gradients keyed by vocabulary index; repeated negatives
    /// are accumulated into one entry.
    pub outputs: BTreeMap<usize, Vec<f64>>,
}

pub fn example_gradient(
    context: &[f64],
    target: usize,
    negatives: &[usize],
    model: &EmbeddingModel,
) -> ExampleGradient {
    let dim = context.len();
    let mut grad_context = vec![0.0; dim];
    let mut outputs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let terms = std::iter::once((target, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    for (idx, label) in terms {
        let out = model.output.row(idx);
        let raw = dot(context, out);
        // Inside the clamp the derivative of the loss w.r.t. the logit is
        // σ(x) − label; outside it the loss is flat.
        let coeff = if raw.abs() > LOGIT_CLAMP { 0.0 } else { sigmoid(raw) - label };
        axpy(coeff, out, &mut grad_context);
        let entry = outputs.entry(idx).or_insert_with(|| vec![0.0; dim]);
        axpy(coeff, context, entry);
    }
    ExampleGradient { context: grad_context, outputs }
}

/// One SGD step on a single example. Output rows are updated in place and
/// the accumulated context update is applied at the end. Returns the loss
/// evaluated before the step.
///
/// # Safety
/// `output_row(i)` must return a valid row of length `context.len()` that does
/// not alias `context` or `work`.
#[inline]
pub(crate) unsafe fn sgd_step<'a>(
    context: &mut [f64],
    output_row: impl Fn(usize) -> &'a mut [f64],
    target: usize,
    negatives: &[usize],
    lr: f64,
    work: &mut [f64],
) -> f64 {
    work.fill(0.0);
    let mut loss = 0.0;
    let terms = std::iter::once((target, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    for (idx, label) in terms {
        let out = output_row(idx);
        let x = clamp_logit(dot(context, out));
        let s = sigmoid(x);
        // −ln σ(x) for the target, −ln(1 − σ(x)) for negatives.
        loss -= if label > 0.0 { s.ln() } else { (1.0 - s).ln() };
        let g = lr * (label - s);
        axpy(g, out, work);
        axpy(g, context, out);
    }
    axpy(1.0, work, context);
    loss
}
