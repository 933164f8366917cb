use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, FeatureRecord};
use crate::error::{Error, Result};

/// Parameters for a clustered synthetic feature set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub subjects: usize,
    pub samples_per_subject: usize,
    pub dim: usize,
    /// Subject centers are uniform in `[0, spread]^dim`.
    pub spread: f64,
    /// Standard deviation of the Gaussian noise around each center.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::InvalidParameter(format!(
                "subjects must be >= 2, got {}",
                self.subjects
            )));
        }
        if self.subjects > u32::MAX as usize {
            return Err(Error::InvalidParameter("too many subjects".into()));
        }
        if self.samples_per_subject < 2 {
            return Err(Error::InvalidParameter(format!(
                "samples per subject must be >= 2, got {}",
                self.samples_per_subject
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if !(self.noise > 0.0 && self.noise < self.spread && self.spread.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < noise < spread, got noise {} spread {}",
                self.noise, self.spread
            )));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centers: Vec<Vec<f64>> = (0..self.subjects)
            .map(|_| (0..self.dim).map(|_| rng.random_range(0.0..=self.spread)).collect())
            .collect();
        let mut records = Vec::with_capacity(self.subjects * self.samples_per_subject);
        for (subject, center) in centers.iter().enumerate() {
            for _ in 0..self.samples_per_subject {
                let vector = center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        // Stored at the same precision as feature files.
                        f64::from((c + self.noise * z) as f32)
                    })
                    .collect();
                records.push(FeatureRecord::new(subject as u32, vector));
            }
        }
        Dataset::new(records)
    }
}

/// Clustered dataset with `subjects` ids `0..subjects`, records grouped by
/// subject. Values are rounded to `f32` so a file round trip is lossless.
pub fn generate_synthetic(
    subjects: usize,
    samples_per_subject: usize,
    dim: usize,
    spread: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    SyntheticSpec {
        subjects,
        samples_per_subject,
        dim,
        spread,
        noise,
        seed,
    }
    .generate()
}
