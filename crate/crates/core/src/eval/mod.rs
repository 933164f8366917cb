//! Verification metrics, threshold sweeps, gallery/probe classification and
//! timing.
//!
//! Zero-denominator conventions: precision, recall and F1 are 0 when their
//! denominator is 0; FPR is 0 when there are no negatives and FNR is 0 when
//! there are no positives.

mod bench;
mod gallery;

use std::fmt::Write as _;

use crate::data::{Dataset, Pair};
use crate::error::{Error, Result};
use crate::model::TinyModel;

pub use bench::{bench_matching, bench_training, BenchReport, TRAIN_BENCH_EPOCHS};
pub use gallery::{classify_gallery_probe, Aggregation, ClassReport, ClassificationReport, Prediction};

/// Output flavour for the report types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    KeyValue,
}

pub trait Report {
    fn to_table(&self) -> String;
    fn to_kv(&self) -> String;

    fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.to_table(),
            ReportFormat::KeyValue => self.to_kv(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted_similar: bool, actually_similar: bool) {
        match (predicted_similar, actually_similar) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub threshold: f64,
    pub confusion: Confusion,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, threshold: f64) -> Self {
        let Confusion { tp, fp, tn, fn_ } = confusion;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy: ratio(tp + tn, confusion.total()),
            precision,
            recall,
            f1,
            fpr: ratio(fp, fp + tn),
            fnr: ratio(fn_, fn_ + tp),
            threshold,
            confusion,
        }
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.confusion.tn, self.confusion.tn + self.confusion.fp)
    }
}

impl Report for EvalReport {
    fn to_table(&self) -> String {
        let c = &self.confusion;
        let mut out = String::new();
        writeln!(out, "threshold  {:.4}", self.threshold).unwrap();
        writeln!(out, "pairs      {}", c.total()).unwrap();
        writeln!(out, "accuracy   {:.4}", self.accuracy).unwrap();
        writeln!(out, "precision  {:.4}", self.precision).unwrap();
        writeln!(out, "recall     {:.4}", self.recall).unwrap();
        writeln!(out, "f1         {:.4}", self.f1).unwrap();
        writeln!(out, "fpr        {:.4}", self.fpr).unwrap();
        writeln!(out, "fnr        {:.4}", self.fnr).unwrap();
        writeln!(out, "tp {}  fp {}  tn {}  fn {}", c.tp, c.fp, c.tn, c.fn_).unwrap();
        out.push_str("(undefined ratios are reported as 0)\n");
        out
    }

    fn to_kv(&self) -> String {
        let c = &self.confusion;
        format!(
            "threshold={}\naccuracy={}\nprecision={}\nrecall={}\nf1={}\nfpr={}\nfnr={}\ntp={}\nfp={}\ntn={}\nfn={}\n",
            self.threshold,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.fpr,
            self.fnr,
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        )
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&bad) => Err(Error::InvalidLabel(f64::from(bad))),
        None => Ok(()),
    }
}

/// Confusion-based report for precomputed scores: a pair is predicted
/// similar iff its score is at least `threshold`.
pub fn evaluate_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if scores.len() != labels.len() {
        return Err(Error::dim("evaluation labels", scores.len(), labels.len()));
    }
    check_labels(labels)?;
    let mut confusion = Confusion::default();
    for (&p, &y) in scores.iter().zip(labels) {
        confusion.record(p >= threshold, y == 1);
    }
    Ok(EvalReport::from_confusion(confusion, threshold))
}

/// Scores every pair with `model`, in pair order.
pub fn score_pairs(model: &TinyModel, dataset: &Dataset, pairs: &[Pair]) -> Result<Vec<f64>> {
    if dataset.dim() != model.dim() {
        return Err(Error::dim("evaluation data", model.dim(), dataset.dim()));
    }
    pairs
        .iter()
        .map(|p| Ok(model.score(dataset.vector(p.left), dataset.vector(p.right))?.p()))
        .collect()
}

pub fn evaluate_verification(
    model: &TinyModel,
    dataset: &Dataset,
    pairs: &[Pair],
    threshold: f64,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scores = score_pairs(model, dataset, pairs)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    evaluate_scores(&scores, &labels, threshold)
}

/// Thresholds `k / (steps + 1)` for `k = 1..=steps`.
pub fn sweep_threshold_values(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidParameter(format!("sweep needs >= 2 steps, got {steps}")));
    }
    Ok((1..=steps).map(|k| k as f64 / (steps + 1) as f64).collect())
}

pub fn sweep_scores(scores: &[f64], labels: &[u8], steps: usize) -> Result<Vec<EvalReport>> {
    sweep_threshold_values(steps)?
        .into_iter()
        .map(|t| evaluate_scores(scores, labels, t))
        .collect()
}

/// Reports at evenly spaced thresholds inside (0, 1), scoring each pair once.
pub fn sweep_thresholds(
    model: &TinyModel,
    dataset: &Dataset,
    pairs: &[Pair],
    steps: usize,
) -> Result<Vec<EvalReport>> {
    sweep_threshold_values(steps)?;
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scores = score_pairs(model, dataset, pairs)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    sweep_scores(&scores, &labels, steps)
}

/// One `threshold fpr fnr accuracy` line per sweep step.
pub fn sweep_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("threshold\tfpr\tfnr\taccuracy\n");
    for r in reports {
        writeln!(out, "{:.6}\t{:.6}\t{:.6}\t{:.6}", r.threshold, r.fpr, r.fnr, r.accuracy).unwrap();
    }
    out
}
