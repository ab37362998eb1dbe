//! Randomized input sampling: score each pixel by the average target value
//! of random soft masks that keep it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{indexed_sum, AttributionConfig, AttributionMap, Provenance};
use crate::error::{Error, Result};
use crate::foil::trial_seed;
use crate::target::ScalarTarget;
use crate::tensor::Tensor;

/// Upsample a binary `grid_h x grid_w` grid to an `(h, w)` soft mask.
///
/// The grid is bilinearly interpolated (edge-clamped, pixel-center
/// aligned) onto `((grid_h + 1) * cell_h, (grid_w + 1) * cell_w)` with
/// `cell = ceil(image / grid)`, then an `(h, w)` window starting at
/// `shift` is cut out. `shift` must lie within one cell.
pub fn rise_mask(
    grid: &[bool],
    grid_dims: (usize, usize),
    image_dims: (usize, usize),
    shift: (usize, usize),
) -> Vec<f64> {
    let (gh, gw) = grid_dims;
    let (h, w) = image_dims;
    debug_assert_eq!(grid.len(), gh * gw);
    let cell_h = h.div_ceil(gh);
    let cell_w = w.div_ceil(gw);
    let up_h = (gh + 1) * cell_h;
    let up_w = (gw + 1) * cell_w;
    debug_assert!(shift.0 < cell_h && shift.1 < cell_w);

    let axis = |i: usize, g: usize, up: usize| {
        let pos = ((i as f64 + 0.5) * g as f64 / up as f64 - 0.5).clamp(0.0, (g - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(g - 1);
        (lo, hi, pos - lo as f64)
    };
    let cell = |r: usize, c: usize| f64::from(u8::from(grid[r * gw + c]));

    let mut mask = Vec::with_capacity(h * w);
    for r in 0..h {
        let (r0, r1, fr) = axis(r + shift.0, gh, up_h);
        for c in 0..w {
            let (c0, c1, fc) = axis(c + shift.1, gw, up_w);
            let top = cell(r0, c0) * (1.0 - fc) + cell(r0, c1) * fc;
            let bottom = cell(r1, c0) * (1.0 - fc) + cell(r1, c1) * fc;
            mask.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    mask
}

/// RISE scores together with their per-pixel Monte Carlo standard error.
#[derive(Debug, Clone)]
pub struct RiseOutput {
    pub map: AttributionMap,
    /// Standard error of each `(h, w)` pixel score; all zero for the
    /// exhaustive variant.
    pub std_error: Vec<f64>,
}

pub fn rise<T: ScalarTarget + ?Sized>(
    target: &T,
    explicand: &Tensor,
    config: &AttributionConfig,
) -> Result<AttributionMap> {
    Ok(rise_detailed(target, explicand, config)?.map)
}

pub fn rise_detailed<T: ScalarTarget + ?Sized>(
    target: &T,
    explicand: &Tensor,
    config: &AttributionConfig,
) -> Result<RiseOutput> {
    config.validate()?;
    let (h, w, c) = explicand.spatial_dims()?;
    let [gh, gw] = config.rise_grid;
    if gh > h || gw > w {
        return Err(Error::invalid(format!(
            "rise grid {gh}x{gw} is larger than the {h}x{w} image"
        )));
    }
    let baseline = config.resolve_baseline(explicand)?;
    let p = config.rise_keep_prob;
    let pixels = h * w;

    let masked_value = |mask: &[f64]| -> Result<f64> {
        let data = explicand
            .data()
            .iter()
            .zip(baseline.data())
            .enumerate()
            .map(|(i, (e, b))| {
                let m = mask[i / c];
                m * e + (1.0 - m) * b
            })
            .collect();
        target.value(&explicand.with_data(data)?)
    };

    let (sum, sum_sq, weight) = if config.rise_exhaustive {
        let cells = gh * gw;
        if cells > 20 {
            return Err(Error::invalid(format!(
                "exhaustive rise enumerates 2^{cells} grids; use at most 20 cells"
            )));
        }
        let total = indexed_sum(1 << cells, pixels, |code| {
            let grid: Vec<bool> = (0..cells).map(|b| code >> b & 1 == 1).collect();
            let kept = grid.iter().filter(|&&g| g).count() as i32;
            let prob = p.powi(kept) * (1.0 - p).powi(cells as i32 - kept);
            let mask = rise_mask(&grid, (gh, gw), (h, w), (0, 0));
            let value = masked_value(&mask)?;
            Ok(mask.iter().map(|m| prob * value * m).collect())
        })?;
        (total, None, 1.0)
    } else {
        let n = config.rise_masks;
        let cell_h = h.div_ceil(gh);
        let cell_w = w.div_ceil(gw);
        // per mask: [value * m, (value * m / p)^2] for every pixel
        let both = indexed_sum(n, 2 * pixels, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, i as u64));
            let grid: Vec<bool> = (0..gh * gw).map(|_| rng.random::<f64>() < p).collect();
            let shift = if config.rise_shift {
                (rng.random_range(0..cell_h), rng.random_range(0..cell_w))
            } else {
                (0, 0)
            };
            let mask = rise_mask(&grid, (gh, gw), (h, w), shift);
            let value = masked_value(&mask)?;
            let mut out: Vec<f64> = mask.iter().map(|m| value * m).collect();
            out.extend(mask.iter().map(|m| (value * m / p).powi(2)));
            Ok(out)
        })?;
        let (sum, sum_sq) = both.split_at(pixels);
        (sum.to_vec(), Some(sum_sq.to_vec()), n as f64)
    };

    let pixel_scores: Vec<f64> = sum.iter().map(|s| s / (weight * p)).collect();
    let std_error = match sum_sq {
        Some(sq) if weight > 1.0 => pixel_scores
            .iter()
            .zip(&sq)
            .map(|(mean, s2)| {
                let var = (s2 / weight - mean * mean).max(0.0) * weight / (weight - 1.0);
                (var / weight).sqrt()
            })
            .collect(),
        _ => vec![0.0; pixels],
    };
    let scores = explicand.with_data(
        pixel_scores
            .iter()
            .flat_map(|&s| std::iter::repeat_n(s, c))
            .collect(),
    )?;
    Ok(RiseOutput {
        map: AttributionMap {
            scores,
            provenance: Provenance::new(target, config),
        },
        std_error,
    })
}
