//! Feature-vector datasets and balanced pair sampling.

mod io;
mod synthetic;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use io::{
    detect_format, load_dataset, load_dataset_auto, read_binary, read_text, save_dataset,
    write_binary, write_text, FeatureFormat, FEATURE_MAGIC,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// One precomputed embedding and the subject it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub subject_id: u32,
    pub vector: Vec<f64>,
}

impl FeatureRecord {
    pub fn new(subject_id: u32, vector: Vec<f64>) -> Self {
        Self { subject_id, vector }
    }
}

/// Immutable collection of records sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    records: Vec<FeatureRecord>,
    index: BTreeMap<u32, Vec<usize>>,
}

impl Dataset {
    pub fn new(records: Vec<FeatureRecord>) -> Result<Self> {
        let dim = match records.first() {
            Some(r) => r.vector.len(),
            None => return Err(Error::InsufficientData("dataset has no records".into())),
        };
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dimension must be >= 1".into()));
        }
        let mut index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(Error::InconsistentDim {
                    record: i,
                    expected: dim,
                    actual: r.vector.len(),
                });
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("feature vector"));
            }
            index.entry(r.subject_id).or_default().push(i);
        }
        Ok(Self {
            dim,
            records,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn vector(&self, record: usize) -> &[f64] {
        &self.records[record].vector
    }

    pub fn subject(&self, record: usize) -> u32 {
        self.records[record].subject_id
    }

    /// Subject ids in ascending order.
    pub fn subjects(&self) -> impl Iterator<Item = u32> + '_ {
        self.index.keys().copied()
    }

    pub fn subject_count(&self) -> usize {
        self.index.len()
    }

    pub fn contains_subject(&self, subject: u32) -> bool {
        self.index.contains_key(&subject)
    }

    /// Record positions of one subject, in file order.
    pub fn positions(&self, subject: u32) -> &[usize] {
        self.index.get(&subject).map_or(&[], Vec::as_slice)
    }

    /// Splits every subject's records: the first `per_subject` (in file order)
    /// go to the first dataset and the rest to the second.
    pub fn split_per_subject(&self, per_subject: usize) -> Result<(Dataset, Dataset)> {
        let mut head = Vec::new();
        let mut tail = Vec::new();
        for positions in self.index.values() {
            if positions.len() <= per_subject {
                return Err(Error::InsufficientData(format!(
                    "cannot keep {per_subject} records per subject when a subject has only {}",
                    positions.len()
                )));
            }
            for (k, &i) in positions.iter().enumerate() {
                let dest = if k < per_subject { &mut head } else { &mut tail };
                dest.push(self.records[i].clone());
            }
        }
        Ok((Dataset::new(head)?, Dataset::new(tail)?))
    }

    /// Subjects that can anchor a positive pair.
    fn anchor_subjects(&self) -> Vec<u32> {
        self.index
            .iter()
            .filter(|(_, p)| p.len() >= 2)
            .map(|(&s, _)| s)
            .collect()
    }

    fn check_pairable(&self) -> Result<Vec<u32>> {
        if self.subject_count() < 2 {
            return Err(Error::InsufficientData(format!(
                "balanced pairs need at least 2 subjects, found {}",
                self.subject_count()
            )));
        }
        let anchors = self.anchor_subjects();
        if anchors.is_empty() {
            return Err(Error::InsufficientData(
                "balanced pairs need a subject with at least 2 records".into(),
            ));
        }
        Ok(anchors)
    }
}

/// Two records of one dataset and whether they share a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub left: usize,
    pub right: usize,
    /// 1 when both records belong to the same subject, else 0.
    pub label: u8,
}

impl Pair {
    pub fn label_f64(&self) -> f64 {
        f64::from(self.label)
    }
}

fn batch_for_anchor(
    dataset: &Dataset,
    anchor: u32,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<Pair> {
    let own = dataset.positions(anchor);
    let mut pairs = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let i = rng.random_range(0..own.len());
        let mut j = rng.random_range(0..own.len() - 1);
        if j >= i {
            j += 1;
        }
        pairs.push(Pair {
            left: own[i],
            right: own[j],
            label: 1,
        });
    }
    for _ in 0..n {
        let left = own[rng.random_range(0..own.len())];
        let right = loop {
            let r = rng.random_range(0..dataset.len());
            if dataset.subject(r) != anchor {
                break r;
            }
        };
        pairs.push(Pair {
            left,
            right,
            label: 0,
        });
    }
    pairs
}

/// `n` positive pairs from one randomly chosen subject followed by `n`
/// negative pairs that match that subject against random records of other
/// subjects.
pub fn sample_balanced_batch(dataset: &Dataset, n: usize, rng: &mut impl Rng) -> Result<Vec<Pair>> {
    if n == 0 {
        return Err(Error::InvalidParameter("pairs per half-batch must be >= 1".into()));
    }
    let anchors = dataset.check_pairable()?;
    let anchor = anchors[rng.random_range(0..anchors.len())];
    Ok(batch_for_anchor(dataset, anchor, n, rng))
}

/// Seeded balanced-batch source that walks the eligible subjects in a
/// reshuffled order, so consecutive batches use fresh anchors and every
/// subject anchors once per pass.
#[derive(Debug)]
pub struct PairSampler<'a> {
    dataset: &'a Dataset,
    rng: ChaCha8Rng,
    order: Vec<u32>,
    cursor: usize,
}

impl<'a> PairSampler<'a> {
    pub fn new(dataset: &'a Dataset, seed: u64) -> Result<Self> {
        let order = dataset.check_pairable()?;
        let cursor = order.len();
        Ok(Self {
            dataset,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order,
            cursor,
        })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn next_batch(&mut self, n: usize) -> Result<Vec<Pair>> {
        if n == 0 {
            return Err(Error::InvalidParameter("pairs per half-batch must be >= 1".into()));
        }
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let anchor = self.order[self.cursor];
        self.cursor += 1;
        Ok(batch_for_anchor(self.dataset, anchor, n, &mut self.rng))
    }
}

/// `batches` balanced batches of `2n` pairs each, concatenated.
pub fn balanced_pairs(dataset: &Dataset, batches: usize, n: usize, seed: u64) -> Result<Vec<Pair>> {
    let mut sampler = PairSampler::new(dataset, seed)?;
    let mut out = Vec::with_capacity(batches * 2 * n);
    for _ in 0..batches {
        out.extend(sampler.next_batch(n)?);
    }
    Ok(out)
}
