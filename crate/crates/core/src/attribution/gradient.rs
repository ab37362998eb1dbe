use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{indexed_sum, AttributionConfig, AttributionMap, IgRule, Provenance};
use crate::error::Result;
use crate::foil::trial_seed;
use crate::target::ScalarTarget;
use crate::tensor::Tensor;

/// Gradient of the target at the explicand.
pub fn vanilla_gradients<T: ScalarTarget + ?Sized>(
    target: &T,
    explicand: &Tensor,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    let g = target.gradient(explicand)?;
    let mut provenance = Provenance::new(target, config);
    provenance.clamped_norm_events = usize::from(g.clamped_norm);
    Ok(AttributionMap {
        scores: g.gradient,
        provenance,
    })
}

/// Gradient at `x` with one extra trailing slot that is 1 when the norm
/// clamp was hit, so clamp events ride along in [`indexed_sum`].
fn gradient_with_flag<T: ScalarTarget + ?Sized>(target: &T, x: &Tensor) -> Result<Vec<f64>> {
    let g = target.gradient(x)?;
    let mut v = g.gradient.into_data();
    v.push(f64::from(u8::from(g.clamped_norm)));
    Ok(v)
}

fn split_flag(mut summed: Vec<f64>) -> (Vec<f64>, usize) {
    let events = summed.pop().unwrap_or(0.0) as usize;
    (summed, events)
}

/// Integrated gradients along the straight path from the baseline, with
/// `ig_steps` intervals of the configured quadrature rule. The
/// completeness gap is recorded in the provenance.
pub fn integrated_gradients<T: ScalarTarget + ?Sized>(
    target: &T,
    explicand: &Tensor,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    config.validate()?;
    let baseline = config.resolve_baseline(explicand)?;
    let diff = explicand.zip_with(&baseline, |e, b| e - b)?;
    let steps = config.ig_steps;
    let (points, first) = match config.ig_rule {
        IgRule::Trapezoid => (steps + 1, 0),
        IgRule::RightRiemann => (steps, 1),
    };
    let summed = indexed_sum(points, explicand.len() + 1, |i| {
        let s = i + first;
        let alpha = s as f64 / steps as f64;
        let point = baseline.zip_with(&diff, |b, d| b + alpha * d)?;
        let mut g = gradient_with_flag(target, &point)?;
        if config.ig_rule == IgRule::Trapezoid && (s == 0 || s == steps) {
            let flag = g.len() - 1;
            g[..flag].iter_mut().for_each(|v| *v *= 0.5);
        }
        Ok(g)
    })?;
    let (grad_sum, events) = split_flag(summed);
    let scores = diff.with_data(
        diff.data()
            .iter()
            .zip(&grad_sum)
            .map(|(d, g)| d * g / steps as f64)
            .collect(),
    )?;
    let delta = target.value(explicand)? - target.value(&baseline)?;
    let mut provenance = Provenance::new(target, config);
    provenance.completeness_gap = Some(scores.sum() - delta);
    provenance.clamped_norm_events = events;
    Ok(AttributionMap { scores, provenance })
}

/// GradientSHAP: the expected gradient at random points on the
/// baseline-explicand segment perturbed by Gaussian noise, times the
/// input difference.
pub fn gradient_shap<T: ScalarTarget + ?Sized>(
    target: &T,
    explicand: &Tensor,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    config.validate()?;
    let baseline = config.resolve_baseline(explicand)?;
    let diff = explicand.zip_with(&baseline, |e, b| e - b)?;
    let n = config.gs_samples;
    let sigma = config.gs_sigma;
    let summed = indexed_sum(n, explicand.len() + 1, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, i as u64));
        let alpha: f64 = rng.random();
        let point = baseline.with_data(
            baseline
                .data()
                .iter()
                .zip(diff.data())
                .map(|(b, d)| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    b + alpha * d + sigma * noise
                })
                .collect(),
        )?;
        gradient_with_flag(target, &point)
    })?;
    let (grad_sum, events) = split_flag(summed);
    let scores = diff.with_data(
        diff.data()
            .iter()
            .zip(&grad_sum)
            .map(|(d, g)| d * g / n as f64)
            .collect(),
    )?;
    let mut provenance = Provenance::new(target, config);
    provenance.clamped_norm_events = events;
    Ok(AttributionMap { scores, provenance })
}
