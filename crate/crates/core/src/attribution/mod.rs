//! Local feature attribution methods.
//!
//! Every method explains any [`ScalarTarget`], so the same code produces
//! attributions for cocoa, its ablations, or a supervised class
//! probability. Stochastic methods derive one RNG stream per sample from
//! `(seed, index)` and reduce in index order, so results do not depend on
//! the number of worker threads.

mod gradient;
mod rise;

pub use gradient::{gradient_shap, integrated_gradients, vanilla_gradients};
pub use rise::{rise, rise_detailed, rise_mask, RiseOutput};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{blur, default_blur_sigma};
use crate::target::ScalarTarget;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    VanillaGrad,
    IntegratedGradients,
    GradientShap,
    Rise,
    /// Uniform random scores, the evaluation benchmark.
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::VanillaGrad => "vanilla-grad",
            Method::IntegratedGradients => "integrated-gradients",
            Method::GradientShap => "gradient-shap",
            Method::Rise => "rise",
            Method::Random => "random",
        }
    }
}

/// Quadrature over the integrated-gradients path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IgRule {
    /// `S + 1` points with half weight at the ends; error `O(1/S^2)`.
    #[default]
    Trapezoid,
    /// `S` points at `s/S`, `s = 1..=S`; error `O(1/S)`.
    RightRiemann,
}

fn default_ig_steps() -> usize {
    50
}
fn default_gs_samples() -> usize {
    50
}
fn default_gs_sigma() -> f64 {
    0.2
}
fn default_rise_masks() -> usize {
    5000
}
fn default_keep_prob() -> f64 {
    0.5
}
fn default_grid() -> [usize; 2] {
    [7, 7]
}
fn yes() -> bool {
    true
}

/// Hyperparameters for all methods. Only the fields of the selected
/// method are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub method: Method,
    pub seed: u64,
    #[serde(default = "default_ig_steps")]
    pub ig_steps: usize,
    #[serde(default)]
    pub ig_rule: IgRule,
    #[serde(default = "default_gs_samples")]
    pub gs_samples: usize,
    #[serde(default = "default_gs_sigma")]
    pub gs_sigma: f64,
    #[serde(default = "default_rise_masks")]
    pub rise_masks: usize,
    #[serde(default = "default_keep_prob")]
    pub rise_keep_prob: f64,
    /// Coarse mask grid `[rows, cols]` before upsampling.
    #[serde(default = "default_grid")]
    pub rise_grid: [usize; 2],
    /// Randomly shift each upsampled mask within one grid cell.
    #[serde(default = "yes")]
    pub rise_shift: bool,
    /// Replace Monte Carlo sampling by a probability-weighted sum over
    /// every binary grid (no shift). Only feasible for small grids.
    #[serde(default)]
    pub rise_exhaustive: bool,
    /// Blur width for the default baseline; `None` means `min(h, w) / 8`.
    #[serde(default)]
    pub blur_sigma: Option<f64>,
    /// Explicit baseline. When absent, spatial explicands use their own
    /// blurred copy.
    #[serde(skip)]
    pub baseline: Option<Tensor>,
}

impl AttributionConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        AttributionConfig {
            method,
            seed,
            ig_steps: default_ig_steps(),
            ig_rule: IgRule::default(),
            gs_samples: default_gs_samples(),
            gs_sigma: default_gs_sigma(),
            rise_masks: default_rise_masks(),
            rise_keep_prob: default_keep_prob(),
            rise_grid: default_grid(),
            rise_shift: true,
            rise_exhaustive: false,
            blur_sigma: None,
            baseline: None,
        }
    }

    pub fn with_baseline(mut self, baseline: Tensor) -> Self {
        self.baseline = Some(baseline);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 || self.gs_samples == 0 || self.rise_masks == 0 {
            return Err(Error::invalid("steps, samples and masks must be at least 1"));
        }
        if !(self.gs_sigma >= 0.0 && self.gs_sigma.is_finite()) {
            return Err(Error::invalid("gradient-shap sigma must be nonnegative"));
        }
        if !(self.rise_keep_prob > 0.0 && self.rise_keep_prob < 1.0) {
            return Err(Error::invalid("rise keep probability must lie in (0, 1)"));
        }
        if self.rise_grid.contains(&0) {
            return Err(Error::invalid("rise grid extents must be at least 1"));
        }
        if let Some(s) = self.blur_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("blur sigma must be positive"));
            }
        }
        Ok(())
    }

    /// The configured baseline, or the blurred explicand.
    pub fn resolve_baseline(&self, explicand: &Tensor) -> Result<Tensor> {
        if let Some(b) = &self.baseline {
            b.expect_shape(explicand.shape())?;
            return Ok(b.clone());
        }
        let (h, w, _) = explicand.spatial_dims().map_err(|_| {
            Error::invalid("non-spatial explicands need an explicit baseline")
        })?;
        blur(explicand, self.blur_sigma.unwrap_or_else(|| default_blur_sigma(h, w)))
    }

    /// Hex digest of every setting that influences the output, including
    /// the explicit baseline if one is set.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("config serializes"));
        if let Some(b) = &self.baseline {
            for v in b.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Where an attribution map came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub target: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: AttributionConfig,
    /// `sum(scores) - (target(explicand) - target(baseline))`, for
    /// integrated gradients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completeness_gap: Option<f64>,
    /// Number of gradient evaluations that hit the zero-norm clamp.
    #[serde(default)]
    pub clamped_norm_events: usize,
}

impl Provenance {
    pub(crate) fn new<T: ScalarTarget + ?Sized>(target: &T, config: &AttributionConfig) -> Self {
        Provenance {
            method: config.method,
            target: target.describe(),
            seed: config.seed,
            config_hash: config.fingerprint(),
            config: config.clone(),
            completeness_gap: None,
            clamped_norm_events: 0,
        }
    }
}

/// Per-feature scores for one explicand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMap", into = "RawMap")]
pub struct AttributionMap {
    pub scores: Tensor,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct RawMap {
    shape: Vec<usize>,
    data: Vec<f64>,
    provenance: Provenance,
}

impl TryFrom<RawMap> for AttributionMap {
    type Error = Error;

    fn try_from(raw: RawMap) -> Result<Self> {
        Ok(AttributionMap {
            scores: Tensor::new(raw.shape, raw.data)?,
            provenance: raw.provenance,
        })
    }
}

impl From<AttributionMap> for RawMap {
    fn from(m: AttributionMap) -> Self {
        RawMap {
            shape: m.scores.shape().to_vec(),
            provenance: m.provenance,
            data: m.scores.into_data(),
        }
    }
}

/// Run the method selected in `config`.
pub fn attribute<T: ScalarTarget + ?Sized>(
    target: &T,
    explicand: &Tensor,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    config.validate()?;
    match config.method {
        Method::VanillaGrad => vanilla_gradients(target, explicand, config),
        Method::IntegratedGradients => integrated_gradients(target, explicand, config),
        Method::GradientShap => gradient_shap(target, explicand, config),
        Method::Rise => rise(target, explicand, config),
        Method::Random => crate::eval::random_attribution(explicand.shape(), config.seed),
    }
}

/// Average an `(h, w, c)` map over channels, giving an `(h, w)` map.
pub fn channel_average(map: &AttributionMap) -> Result<AttributionMap> {
    let (h, w, c) = map.scores.spatial_dims()?;
    let data = map
        .scores
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().sum::<f64>() / c as f64)
        .collect();
    Ok(AttributionMap {
        scores: Tensor::new(vec![h, w], data)?,
        provenance: map.provenance.clone(),
    })
}

const CHUNK: usize = 64;

/// `sum_{i < n} f(i)` for vector-valued `f`, evaluated in parallel chunks
/// and accumulated strictly in index order.
pub(crate) fn indexed_sum<F>(n: usize, len: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    let mut acc = vec![0.0; len];
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK * rayon::current_num_threads().max(1)).min(n);
        let parts = (start..end).into_par_iter().map(&f).collect::<Result<Vec<_>>>()?;
        for part in parts {
            for (a, v) in acc.iter_mut().zip(&part) {
                *a += v;
            }
        }
        start = end;
    }
    Ok(acc)
}
