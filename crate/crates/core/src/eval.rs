//! Insertion and deletion evaluation of attribution maps.
//!
//! Pixels are ranked by their (channel-averaged) score. Deletion starts
//! from the explicand and replaces the top-ranked pixels with a blurred
//! baseline; insertion starts from the baseline and restores them. The
//! measure is tracked along the way and summarized by the area under the
//! curve: good attributions give low deletion and high insertion area.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionConfig, AttributionMap, Method, Provenance};
use crate::encoder::{Encoder, LinearHead};
use crate::error::{Error, Result};
use crate::target::{ExplanationTarget, ScalarTarget, TargetGradient};
use crate::tensor::Tensor;

/// `min(h, w) / 8`
pub fn default_blur_sigma(h: usize, w: usize) -> f64 {
    h.min(w) as f64 / 8.0
}

/// Index into `0..n` after extending the signal by half-sample symmetric
/// reflection (`... b a | a b ... y z | z y ...`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        period as usize - 1 - m
    }
}

/// Normalized 1-D Gaussian taps over `-radius..=radius`, `radius = ceil(2 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur of each channel of an `(h, w[, c])` image.
pub fn blur(image: &Tensor, sigma: f64) -> Result<Tensor> {
    let (h, w, c) = image.spatial_dims()?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let src = image.data();
    let at = |r: usize, col: usize, ch: usize| (r * w + col) * c + ch;

    let mut rows = vec![0.0; src.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                rows[at(r, col, ch)] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * src[at(r, reflect(col as isize + k as isize - radius, w), ch)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                out[at(r, col, ch)] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * rows[at(reflect(r as isize + k as isize - radius, h), col, ch)])
                    .sum();
            }
        }
    }
    image.with_data(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMode {
    Insertion,
    Deletion,
}

impl CurveMode {
    pub fn name(self) -> &'static str {
        match self {
            CurveMode::Insertion => "insertion",
            CurveMode::Deletion => "deletion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub mode: CurveMode,
    pub fractions: Vec<f64>,
    pub values: Vec<f64>,
    pub auc: f64,
}

impl EvalCurve {
    /// `fraction,value` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,value\n");
        for (f, v) in self.fractions.iter().zip(&self.values) {
            out.push_str(&format!("{f:?},{v:?}\n"));
        }
        out
    }
}

/// Trapezoid area under `values` over `fractions`.
pub fn auc(fractions: &[f64], values: &[f64]) -> f64 {
    fractions
        .windows(2)
        .zip(values.windows(2))
        .map(|(f, v)| (f[1] - f[0]) * (v[0] + v[1]) / 2.0)
        .sum()
}

/// One point per pixel for images of at most 256 pixels, else 257 evenly
/// spaced fractions.
pub fn default_steps(pixels: usize) -> usize {
    pixels.min(256) + 1
}

/// Pixel indices by descending score, ties broken by row-major index.
pub fn pixel_ranking(map2d: &Tensor) -> Vec<usize> {
    let scores = map2d.data();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn curve<M: ScalarTarget + ?Sized>(
    mode: CurveMode,
    map2d: &Tensor,
    start: &Tensor,
    replacement: &Tensor,
    measure: &M,
    steps: usize,
) -> Result<EvalCurve> {
    let (h, w, c) = start.spatial_dims()?;
    replacement.expect_shape(start.shape())?;
    map2d.expect_shape(&[h, w])?;
    if steps < 2 {
        return Err(Error::invalid("a curve needs at least 2 points"));
    }
    let pixels = h * w;
    let order = pixel_ranking(map2d);
    let mut current = start.data().to_vec();
    let mut done = 0;
    let mut fractions = Vec::with_capacity(steps);
    let mut values = Vec::with_capacity(steps);
    for k in 0..steps {
        let count = (k * pixels).div_ceil(steps - 1);
        for &px in &order[done..count] {
            current[px * c..(px + 1) * c].copy_from_slice(&replacement.data()[px * c..(px + 1) * c]);
        }
        done = count;
        fractions.push(k as f64 / (steps - 1) as f64);
        values.push(measure.value(&start.with_data(current.clone())?)?);
    }
    let area = auc(&fractions, &values);
    Ok(EvalCurve {
        mode,
        fractions,
        values,
        auc: area,
    })
}

/// Replace the top-ranked pixels of the explicand with the baseline.
pub fn deletion_curve<M: ScalarTarget + ?Sized>(
    map2d: &Tensor,
    explicand: &Tensor,
    baseline: &Tensor,
    measure: &M,
    steps: usize,
) -> Result<EvalCurve> {
    curve(CurveMode::Deletion, map2d, explicand, baseline, measure, steps)
}

/// Restore the top-ranked pixels of the explicand into the baseline.
pub fn insertion_curve<M: ScalarTarget + ?Sized>(
    map2d: &Tensor,
    explicand: &Tensor,
    baseline: &Tensor,
    measure: &M,
    steps: usize,
) -> Result<EvalCurve> {
    curve(CurveMode::Insertion, map2d, baseline, explicand, measure, steps)
}

/// Uniform `[0, 1)` scores, the benchmark every method should beat.
pub fn random_attribution(shape: &[usize], seed: u64) -> Result<AttributionMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let scores = Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random()).collect())?;
    let config = AttributionConfig::new(Method::Random, seed);
    Ok(AttributionMap {
        scores,
        provenance: Provenance {
            method: Method::Random,
            target: "none".to_string(),
            seed,
            config_hash: config.fingerprint(),
            config,
            completeness_gap: None,
            clamped_norm_events: 0,
        },
    })
}

/// Mean AUC with a normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_auc: f64,
    /// `1.96 * sd / sqrt(n)` with the sample standard deviation.
    pub ci95: f64,
    pub n: usize,
}

impl Aggregate {
    /// Standard error of the mean (`ci95 / 1.96`).
    pub fn std_error(&self) -> f64 {
        self.ci95 / 1.96
    }
}

pub fn aggregate(curves: &[EvalCurve]) -> Result<Aggregate> {
    let Some(first) = curves.first() else {
        return Err(Error::invalid("cannot aggregate an empty list of curves"));
    };
    if curves.iter().any(|c| c.mode != first.mode) {
        return Err(Error::invalid("cannot aggregate insertion and deletion curves together"));
    }
    Ok(aggregate_values(&curves.iter().map(|c| c.auc).collect::<Vec<_>>()))
}

/// [`aggregate`] over raw AUC values. Values are summed in sorted order so
/// the result does not depend on input order.
pub fn aggregate_values(aucs: &[f64]) -> Aggregate {
    let mut sorted = aucs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = crate::tensor::shifted_mean(&sorted);
    let sd = if n > 1 {
        (sorted.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Aggregate {
        mean_auc: mean,
        ci95: 1.96 * sd / (n as f64).sqrt(),
        n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    ContrastiveCorpusSimilarity,
    CorpusMajorityProbability,
}

/// The scalar tracked along an insertion or deletion curve.
#[derive(Debug, Clone)]
pub struct EvalMeasure {
    kind: MeasureKind,
    target: ExplanationTarget,
    majority_class: Option<usize>,
}

impl EvalMeasure {
    /// Track the explanation target itself.
    pub fn contrastive_corpus_similarity(target: ExplanationTarget) -> Self {
        EvalMeasure {
            kind: MeasureKind::ContrastiveCorpusSimilarity,
            target,
            majority_class: None,
        }
    }

    /// Track the head's probability of the most common predicted class
    /// among the corpus representations.
    pub fn corpus_majority_probability(
        encoder: Encoder,
        head: LinearHead,
        corpus: &[Vec<f64>],
    ) -> Result<Self> {
        let class = majority_class(&head, corpus)?;
        Ok(EvalMeasure {
            kind: MeasureKind::CorpusMajorityProbability,
            target: ExplanationTarget::class_probability(encoder, head, class)?,
            majority_class: Some(class),
        })
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn majority_class(&self) -> Option<usize> {
        self.majority_class
    }
}

impl ScalarTarget for EvalMeasure {
    fn input_shape(&self) -> &[usize] {
        self.target.input_shape()
    }

    fn value(&self, x: &Tensor) -> Result<f64> {
        self.target.value(x)
    }

    fn gradient(&self, x: &Tensor) -> Result<TargetGradient> {
        self.target.gradient(x)
    }

    fn describe(&self) -> String {
        match self.kind {
            MeasureKind::ContrastiveCorpusSimilarity => "contrastive-corpus-similarity".into(),
            MeasureKind::CorpusMajorityProbability => "corpus-majority-probability".into(),
        }
    }
}

/// Mode of the head's argmax predictions over `corpus`; ties go to the
/// smallest class index.
pub fn majority_class(head: &LinearHead, corpus: &[Vec<f64>]) -> Result<usize> {
    if corpus.is_empty() {
        return Err(Error::MissingReference("majority class needs a nonempty corpus".into()));
    }
    let mut counts = vec![0usize; head.classes()];
    for z in corpus {
        counts[head.predict(z)?] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    Ok(counts.iter().position(|&n| n == best).unwrap_or(0))
}
