//! Loss, optimizer, and the balanced-batch training loop.

mod adam;
mod loss;

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Pair, PairSampler};
use crate::error::{Error, Result};
use crate::model::{ParamGrads, TinyModel};

pub use adam::{Adam, AdamConfig};
pub use loss::{bce_loss, PROB_CLAMP};

/// Tolerance of the per-run gradient spot-check.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
/// Finite-difference step of the spot-check.
pub const GRAD_CHECK_STEP: f64 = 1e-6;
/// Denominator floor for [`relative_error`].
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps gradients that are
/// essentially zero from turning rounding noise into large ratios.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pairs per optimizer step; half similar, half dissimilar.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Balanced pairs per epoch; `None` means one full batch per dataset record.
    pub pairs_per_epoch: Option<usize>,
    /// Compare the first batch's gradient against finite differences.
    pub grad_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 18,
            adam: AdamConfig::default(),
            seed: 0,
            pairs_per_epoch: None,
            grad_check: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "batch size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if self.pairs_per_epoch == Some(0) {
            return Err(Error::InvalidParameter("pairs per epoch must be >= 1".into()));
        }
        self.adam.validate()
    }

    pub fn batches_per_epoch(&self, dataset_len: usize) -> usize {
        match self.pairs_per_epoch {
            Some(pairs) => pairs.div_ceil(self.batch_size),
            None => dataset_len.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

/// Per-epoch mean loss and wall time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    records: Vec<EpochRecord>,
}

impl LossTrace {
    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_loss).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_loss)
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }

    /// `epoch  mean_loss  seconds`, tab separated, with a header line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("epoch\tmean_loss\tseconds\n");
        for r in &self.records {
            writeln!(out, "{}\t{:.12}\t{:.6}", r.epoch, r.mean_loss, r.seconds).unwrap();
        }
        out
    }

    /// Same as [`LossTrace::to_table`] without the timing column, so the
    /// output depends only on the seed and inputs.
    pub fn to_loss_table(&self) -> String {
        let mut out = String::from("epoch\tmean_loss\n");
        for r in &self.records {
            writeln!(out, "{}\t{:.12}", r.epoch, r.mean_loss).unwrap();
        }
        out
    }
}

/// Mean BCE of `model` over `pairs`.
pub fn batch_loss(model: &TinyModel, dataset: &Dataset, pairs: &[Pair]) -> Result<f64> {
    let mut p = Vec::with_capacity(pairs.len());
    for pair in pairs {
        p.push(model.score(dataset.vector(pair.left), dataset.vector(pair.right))?.p());
    }
    let y: Vec<f64> = pairs.iter().map(Pair::label_f64).collect();
    Ok(bce_loss(&p, &y)?.0)
}

/// Mean BCE over `pairs` and its gradient with respect to every parameter.
/// Per-pair contributions are reduced in pair order.
pub fn batch_gradient(model: &TinyModel, dataset: &Dataset, pairs: &[Pair]) -> Result<(f64, ParamGrads)> {
    let mut acts = Vec::with_capacity(pairs.len());
    let mut p = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (score, a) = model.score_pair(dataset.vector(pair.left), dataset.vector(pair.right))?;
        p.push(score.p());
        acts.push(a);
    }
    let y: Vec<f64> = pairs.iter().map(Pair::label_f64).collect();
    let (loss, dl_dp) = bce_loss(&p, &y)?;
    let mut grads = ParamGrads::zeros_like(model);
    for (a, g) in acts.iter().zip(dl_dp) {
        model.accumulate_backward(a, g, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Checks one random coordinate of every parameter tensor against central
/// differences of the batch loss. Returns the largest relative error.
pub fn spot_check_gradient(
    model: &mut TinyModel,
    dataset: &Dataset,
    pairs: &[Pair],
    grads: &ParamGrads,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<(usize, usize)> = grads
        .tensors()
        .iter()
        .enumerate()
        .map(|(t, g)| (t, rng.random_range(0..g.len())))
        .collect();
    let mut worst = 0.0f64;
    for (t, k) in coords {
        let original = model.parameters()[t][k];
        model.parameters_mut()[t][k] = original + GRAD_CHECK_STEP;
        let up = batch_loss(model, dataset, pairs)?;
        model.parameters_mut()[t][k] = original - GRAD_CHECK_STEP;
        let down = batch_loss(model, dataset, pairs)?;
        model.parameters_mut()[t][k] = original;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        worst = worst.max(relative_error(grads.tensors()[t][k], numeric));
    }
    Ok(worst)
}

pub fn train(model: TinyModel, dataset: &Dataset, config: &TrainConfig) -> Result<(TinyModel, LossTrace)> {
    train_with(model, dataset, config, |_| {})
}

/// Runs `config.epochs` epochs of balanced-batch Adam training, calling
/// `on_epoch` after each one. Fully determined by the inputs and
/// `config.seed`.
pub fn train_with(
    mut model: TinyModel,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TinyModel, LossTrace)> {
    config.validate()?;
    if dataset.dim() != model.dim() {
        return Err(Error::dim("training data", model.dim(), dataset.dim()));
    }
    let mut sampler = PairSampler::new(dataset, config.seed)?;
    let mut adam = Adam::for_model(config.adam, &model)?;
    let half = config.batch_size / 2;
    let batches = config.batches_per_epoch(dataset.len());
    let mut trace = LossTrace::default();
    let mut checked = !config.grad_check;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        for _ in 0..batches {
            let pairs = sampler.next_batch(half)?;
            let (loss, grads) = batch_gradient(&model, dataset, &pairs)?;
            if !checked {
                let rel_err =
                    spot_check_gradient(&mut model, dataset, &pairs, &grads, config.seed ^ 0x9e37_79b9_7f4a_7c15)?;
                if rel_err > GRAD_CHECK_TOLERANCE {
                    return Err(Error::GradientCheck {
                        rel_err,
                        tolerance: GRAD_CHECK_TOLERANCE,
                    });
                }
                checked = true;
            }
            adam.step_model(&mut model, &grads)?;
            loss_sum += loss;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        trace.records.push(record);
    }
    Ok((model, trace))
}
