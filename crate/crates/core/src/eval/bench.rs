use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Report;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::TinyModel;
use crate::training::{train, TrainConfig};

/// Epochs timed by [`bench_training`].
pub const TRAIN_BENCH_EPOCHS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub trials: usize,
    /// Per-trial seconds for a full match: both embeddings, distance, head.
    pub match_seconds: Vec<f64>,
    /// Per-trial seconds with both embeddings precomputed.
    pub cached_match_seconds: Vec<f64>,
    /// Wall time of a [`TRAIN_BENCH_EPOCHS`]-epoch training run, if measured.
    pub train10_seconds: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl BenchReport {
    pub fn mean_match_seconds(&self) -> f64 {
        mean(&self.match_seconds)
    }

    pub fn mean_cached_match_seconds(&self) -> f64 {
        mean(&self.cached_match_seconds)
    }
}

impl Report for BenchReport {
    fn to_table(&self) -> String {
        let mut out = format!(
            "trials                 {}\nmean match (s)         {:.9}\nmean cached match (s)  {:.9}\n",
            self.trials,
            self.mean_match_seconds(),
            self.mean_cached_match_seconds()
        );
        if let Some(t) = self.train10_seconds {
            out.push_str(&format!("train {TRAIN_BENCH_EPOCHS} epochs (s)    {t:.6}\n"));
        }
        out
    }

    fn to_kv(&self) -> String {
        let mut out = format!(
            "trials={}\nmean_match_seconds={}\nmean_cached_match_seconds={}\n",
            self.trials,
            self.mean_match_seconds(),
            self.mean_cached_match_seconds()
        );
        if let Some(t) = self.train10_seconds {
            out.push_str(&format!("train10_seconds={t}\n"));
        }
        out
    }
}

/// Times `trials` matches of random record pairs, single-threaded.
pub fn bench_matching(model: &TinyModel, dataset: &Dataset, trials: usize, seed: u64) -> Result<BenchReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    if dataset.dim() != model.dim() {
        return Err(Error::dim("benchmark data", model.dim(), dataset.dim()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut match_seconds = Vec::with_capacity(trials);
    let mut cached_match_seconds = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = dataset.vector(rng.random_range(0..dataset.len()));
        let b = dataset.vector(rng.random_range(0..dataset.len()));

        let start = Instant::now();
        black_box(model.score(black_box(a), black_box(b))?);
        match_seconds.push(start.elapsed().as_secs_f64());

        let ea = model.embed(a)?;
        let eb = model.embed(b)?;
        let start = Instant::now();
        black_box(model.score_embeddings(black_box(&ea), black_box(&eb))?);
        cached_match_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(BenchReport {
        trials,
        match_seconds,
        cached_match_seconds,
        train10_seconds: None,
    })
}

/// Wall time of training a copy of `model` for [`TRAIN_BENCH_EPOCHS`] epochs.
pub fn bench_training(model: &TinyModel, dataset: &Dataset, config: &TrainConfig) -> Result<f64> {
    let config = TrainConfig {
        epochs: TRAIN_BENCH_EPOCHS,
        grad_check: false,
        ..config.clone()
    };
    let start = Instant::now();
    train(model.clone(), dataset, &config)?;
    Ok(start.elapsed().as_secs_f64())
}
