use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::Report;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::TinyModel;

/// How per-record similarity scores become one score per gallery class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Record position in the probe set.
    pub probe: usize,
    pub truth: u32,
    pub predicted: u32,
    /// Aggregated score of the predicted class.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassReport {
    pub class: u32,
    pub probes: usize,
    pub correct: usize,
}

impl ClassReport {
    pub fn accuracy(&self) -> f64 {
        if self.probes == 0 {
            0.0
        } else {
            self.correct as f64 / self.probes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    /// Correct / evaluated, 0 when nothing could be evaluated.
    pub accuracy: f64,
    pub evaluated: usize,
    pub correct: usize,
    pub predictions: Vec<Prediction>,
    /// Probes whose class has no gallery records: `(probe position, class)`.
    pub missing: Vec<(usize, u32)>,
    pub per_class: Vec<ClassReport>,
}

/// Each probe is scored against every gallery record; the predicted class is
/// the one with the highest aggregated score, ties going to the lowest id.
pub fn classify_gallery_probe(
    model: &TinyModel,
    gallery: &Dataset,
    probes: &Dataset,
    aggregation: Aggregation,
) -> Result<ClassificationReport> {
    if gallery.dim() != model.dim() {
        return Err(Error::dim("gallery", model.dim(), gallery.dim()));
    }
    if probes.dim() != model.dim() {
        return Err(Error::dim("probes", model.dim(), probes.dim()));
    }

    let gallery_embeddings = gallery
        .records()
        .iter()
        .map(|r| model.embed(&r.vector))
        .collect::<Result<Vec<_>>>()?;

    let mut predictions = Vec::new();
    let mut missing = Vec::new();
    let mut per_class: BTreeMap<u32, ClassReport> = BTreeMap::new();
    for (probe, record) in probes.records().iter().enumerate() {
        let truth = record.subject_id;
        if !gallery.contains_subject(truth) {
            missing.push((probe, truth));
            continue;
        }
        let e = model.embed(&record.vector)?;
        let mut best: Option<(u32, f64)> = None;
        for class in gallery.subjects() {
            let positions = gallery.positions(class);
            let mut acc = match aggregation {
                Aggregation::Mean => 0.0,
                Aggregation::Max => f64::NEG_INFINITY,
            };
            for &g in positions {
                let s = model.score_embeddings(&e, &gallery_embeddings[g])?.p();
                match aggregation {
                    Aggregation::Mean => acc += s,
                    Aggregation::Max => acc = acc.max(s),
                }
            }
            if aggregation == Aggregation::Mean {
                acc /= positions.len() as f64;
            }
            // Classes arrive in ascending order, so only a strictly better
            // score displaces the current pick.
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((class, acc));
            }
        }
        let (predicted, score) = best.expect("gallery has at least one class");
        let entry = per_class.entry(truth).or_insert(ClassReport {
            class: truth,
            probes: 0,
            correct: 0,
        });
        entry.probes += 1;
        if predicted == truth {
            entry.correct += 1;
        }
        predictions.push(Prediction {
            probe,
            truth,
            predicted,
            score,
        });
    }

    let evaluated = predictions.len();
    let correct = predictions.iter().filter(|p| p.predicted == p.truth).count();
    Ok(ClassificationReport {
        accuracy: if evaluated == 0 { 0.0 } else { correct as f64 / evaluated as f64 },
        evaluated,
        correct,
        predictions,
        missing,
        per_class: per_class.into_values().collect(),
    })
}

impl Report for ClassificationReport {
    fn to_table(&self) -> String {
        let mut out = String::from("class\tprobes\tcorrect\taccuracy\n");
        for c in &self.per_class {
            writeln!(out, "{}\t{}\t{}\t{:.4}", c.class, c.probes, c.correct, c.accuracy()).unwrap();
        }
        writeln!(
            out,
            "overall\t{}\t{}\t{:.4}",
            self.evaluated, self.correct, self.accuracy
        )
        .unwrap();
        if !self.missing.is_empty() {
            writeln!(out, "excluded {} probes whose class is not in the gallery", self.missing.len()).unwrap();
        }
        out
    }

    fn to_kv(&self) -> String {
        let mut out = format!(
            "accuracy={}\nevaluated={}\ncorrect={}\nmissing={}\n",
            self.accuracy,
            self.evaluated,
            self.correct,
            self.missing.len()
        );
        for c in &self.per_class {
            writeln!(out, "class.{}.probes={}", c.class, c.probes).unwrap();
            writeln!(out, "class.{}.correct={}", c.class, c.correct).unwrap();
        }
        out
    }
}
