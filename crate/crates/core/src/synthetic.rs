//! A synthetic image task whose encoder reads a known set of pixels.
//!
//! Every image is Rademacher noise (`+-1` per pixel) except on the signal
//! pixels, which carry one of several orthogonal `+-1` class patterns plus
//! a little Gaussian jitter. Signal and background pixels therefore look
//! alike marginally; only the encoder knows where the signal is. The
//! encoder is a single relu layer with a `+p_k` and a `-p_k` detector per
//! class, so representations are nonnegative, and the linear head reads
//! the class off the detector pair. This gives attribution methods a
//! ground truth to be evaluated against.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{Activation, DenseLayer, Encoder, EncoderKind, LinearHead};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    /// Number of signal pixels; must be a power of two.
    pub signal_pixels: usize,
    /// Number of classes, at most `signal_pixels - 1`.
    pub classes: usize,
    /// Standard deviation of the jitter added to the class pattern.
    pub jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            height: 32,
            width: 32,
            signal_pixels: 8,
            classes: 4,
            jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    config: SyntheticConfig,
    signal: Vec<usize>,
    patterns: Vec<Vec<f64>>,
    encoder: Encoder,
    head: LinearHead,
}

/// Row `r` of the Sylvester Hadamard matrix of order `n` (a power of two).
fn hadamard_row(r: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|c| if (r & c).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 })
        .collect()
}

impl SyntheticTask {
    /// Build the task; `seed` picks which pixels carry the signal.
    pub fn new(config: SyntheticConfig, seed: u64) -> Result<Self> {
        let pixels = config.height * config.width;
        let s = config.signal_pixels;
        if !s.is_power_of_two() || s > pixels {
            return Err(Error::invalid(
                "signal_pixels must be a power of two no larger than the image",
            ));
        }
        if config.classes < 2 || config.classes >= s {
            return Err(Error::invalid("need 2 <= classes < signal_pixels"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut signal = sample(&mut rng, pixels, s).into_vec();
        signal.sort_unstable();
        // skip the all-ones row so patterns are zero-mean
        let patterns: Vec<Vec<f64>> = (1..=config.classes).map(|r| hadamard_row(r, s)).collect();

        let scale = 1.0 / (s as f64).sqrt();
        let d = 2 * config.classes;
        let mut weight = vec![0.0; d * pixels];
        for (k, p) in patterns.iter().enumerate() {
            for (j, &px) in signal.iter().enumerate() {
                weight[(2 * k) * pixels + px] = p[j] * scale;
                weight[(2 * k + 1) * pixels + px] = -p[j] * scale;
            }
        }
        let layer = DenseLayer::new(weight, d, pixels, vec![0.0; d], Activation::Relu)?;
        let encoder = Encoder::new(
            EncoderKind::MlpRelu,
            vec![config.height, config.width, 1],
            vec![layer],
        )?;

        let mut head_weight = vec![0.0; config.classes * d];
        for k in 0..config.classes {
            head_weight[k * d + 2 * k] = 2.0;
            head_weight[k * d + 2 * k + 1] = -2.0;
        }
        let head = LinearHead::new(head_weight, config.classes, d, vec![0.0; config.classes])?;
        Ok(SyntheticTask {
            config,
            signal,
            patterns,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    /// Row-major indices of the pixels the encoder reads.
    pub fn signal_pixels(&self) -> &[usize] {
        &self.signal
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.config.height, self.config.width, 1]
    }

    /// A random image of `class`.
    pub fn sample_image(&self, class: usize, rng: &mut impl Rng) -> Result<Tensor> {
        let pattern = self
            .patterns
            .get(class)
            .ok_or_else(|| Error::invalid(format!("no class {class}")))?;
        let pixels = self.config.height * self.config.width;
        let mut data: Vec<f64> = (0..pixels)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        for (j, &px) in self.signal.iter().enumerate() {
            let jitter: f64 = StandardNormal.sample(rng);
            data[px] = pattern[j] + self.config.jitter * jitter;
        }
        Tensor::new(self.image_shape().to_vec(), data)
    }

    /// Representations of `n` random images of `class`.
    pub fn class_representations(&self, class: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| Ok(self.encoder.forward(&self.sample_image(class, rng)?)?.into_data()))
            .collect()
    }

    /// Representations of `n` random images with uniformly random classes.
    pub fn mixed_representations(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| {
                let class = rng.random_range(0..self.config.classes);
                Ok(self.encoder.forward(&self.sample_image(class, rng)?)?.into_data())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_ignores_background() {
        let task = SyntheticTask::new(SyntheticConfig::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = task.sample_image(2, &mut rng).unwrap();
        let mut y = x.data().to_vec();
        for (i, v) in y.iter_mut().enumerate() {
            if !task.signal_pixels().contains(&i) {
                *v = -*v;
            }
        }
        let y = x.with_data(y).unwrap();
        assert_eq!(task.encoder().forward(&x).unwrap(), task.encoder().forward(&y).unwrap());
    }

    #[test]
    fn head_recovers_the_class() {
        let task = SyntheticTask::new(SyntheticConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for class in 0..4 {
            for z in task.class_representations(class, 10, &mut rng).unwrap() {
                assert_eq!(task.head().predict(&z).unwrap(), class);
                assert!(z.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn patterns_are_orthogonal() {
        for a in 1..8 {
            for b in 1..8 {
                let dot: f64 = hadamard_row(a, 8).iter().zip(hadamard_row(b, 8)).map(|(x, y)| x * y).sum();
                assert_eq!(dot, if a == b { 8.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = SyntheticConfig {
            signal_pixels: 6,
            ..Default::default()
        };
        assert!(SyntheticTask::new(bad, 0).is_err());
        let bad = SyntheticConfig {
            classes: 8,
            ..Default::default()
        };
        assert!(SyntheticTask::new(bad, 0).is_err());
    }
}
