//! Foil sampling and the sample-size bound for the foil term.
//!
//! The foil term of the target is a sample mean of kernel values that lie
//! in `[-1, 1]` for the cosine kernel, or in `[0, 1]` when representations
//! are nonnegative. Hoeffding's inequality then gives the number of foil
//! samples needed for the estimate to be within `epsilon` of the
//! population value with probability at least `1 - delta`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::kernel::SimilarityKernel;
use crate::reference::ReferenceSet;
use crate::target::ExplanationTarget;
use crate::tensor::{shifted_mean, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSizeQuery {
    pub delta: f64,
    pub epsilon: f64,
    /// Representations are known to be nonnegative (e.g. relu output),
    /// which halves the range of each cosine term.
    pub nonnegative: bool,
}

/// Which form of the bound produced a sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundForm {
    /// `m >= 2 ln(2/delta) / epsilon^2`, terms in `[-1, 1]`.
    General,
    /// `m >= ln(2/delta) / (2 epsilon^2)`, terms in `[0, 1]`.
    Nonnegative,
}

impl BoundForm {
    pub fn formula(self) -> &'static str {
        match self {
            BoundForm::General => "m = ceil(2 ln(2/delta) / epsilon^2)  (cosine terms in [-1, 1])",
            BoundForm::Nonnegative => {
                "m = ceil(ln(2/delta) / (2 epsilon^2))  (nonnegative representations, cosine terms in [0, 1])"
            }
        }
    }
}

impl SampleSizeQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn form(&self) -> BoundForm {
        if self.nonnegative {
            BoundForm::Nonnegative
        } else {
            BoundForm::General
        }
    }
}

/// Smallest foil size satisfying the Hoeffding bound for `q`.
pub fn required_foil_size(q: &SampleSizeQuery) -> Result<u64> {
    q.validate()?;
    let log_term = (2.0 / q.delta).ln();
    let raw = match q.form() {
        BoundForm::General => 2.0 * log_term / (q.epsilon * q.epsilon),
        BoundForm::Nonnegative => log_term / (2.0 * q.epsilon * q.epsilon),
    };
    Ok(tolerant_ceil(raw).max(1.0) as u64)
}

/// `ceil`, except that values within a few ulps above an integer round down
/// to it, so exact bounds like `2 * ln(e) / 1` are not bumped up by
/// rounding error in `ln`.
fn tolerant_ceil(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 8.0 * f64::EPSILON * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// `m` i.i.d. uniform draws, with replacement, from `population`.
pub fn sample_foil(population: &[Vec<f64>], m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if population.is_empty() {
        return Err(Error::invalid("cannot sample a foil from an empty population"));
    }
    if m == 0 {
        return Err(Error::invalid("foil size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m)
        .map(|_| population[rng.random_range(0..population.len())].clone())
        .collect())
}

/// Result of [`estimator_bias_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasReport {
    /// Mean of the estimator over all trials.
    pub mean_estimate: f64,
    /// Target value with the foil expectation taken over the whole population.
    pub population_value: f64,
    /// `|mean_estimate - population_value|`.
    pub gap: f64,
    /// Standard error of `mean_estimate` (sample std / sqrt(trials)).
    pub std_error: f64,
    pub trials: usize,
}

/// Inputs for [`estimator_bias_check`].
#[derive(Debug, Clone)]
pub struct BiasCheck<'a> {
    pub encoder: &'a Encoder,
    pub kernel: SimilarityKernel,
    pub corpus: &'a [Vec<f64>],
    pub foil_population: &'a [Vec<f64>],
    pub explicand: &'a Tensor,
    pub foil_size: usize,
    pub trials: usize,
    pub seed: u64,
    /// Use the whole population as the foil in every trial instead of
    /// sampling (a census), so the estimator has no sampling variance.
    pub exhaustive: bool,
}

/// Average the cocoa estimator over independent foil draws and compare it
/// with the population value, where the foil distribution is uniform over
/// `foil_population`.
pub fn estimator_bias_check(check: &BiasCheck<'_>) -> Result<BiasReport> {
    if check.foil_population.is_empty() {
        return Err(Error::invalid("foil population is empty"));
    }
    if check.trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    let target_with = |foil: Vec<Vec<f64>>| {
        let refs = ReferenceSet::new(check.corpus.to_vec(), foil)?;
        ExplanationTarget::cocoa(check.encoder.clone(), check.kernel, refs)
    };
    let z = check.encoder.forward(check.explicand)?.into_data();
    let population_value =
        target_with(check.foil_population.to_vec())?.value_from_representation(&z)?;

    let estimates = (0..check.trials)
        .into_par_iter()
        .map(|trial| {
            let foil = if check.exhaustive {
                check.foil_population.to_vec()
            } else {
                sample_foil(
                    check.foil_population,
                    check.foil_size,
                    trial_seed(check.seed, trial as u64),
                )?
            };
            target_with(foil)?.value_from_representation(&z)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mean_estimate = shifted_mean(&estimates);
    let n = estimates.len() as f64;
    let var = if estimates.len() > 1 {
        estimates
            .iter()
            .map(|v| (v - mean_estimate).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    Ok(BiasReport {
        mean_estimate,
        population_value,
        gap: (mean_estimate - population_value).abs(),
        std_error: (var / n).sqrt(),
        trials: estimates.len(),
    })
}

/// Independent seed for trial `index` of a run seeded with `seed`
/// (splitmix64 finalizer over the pair).
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
