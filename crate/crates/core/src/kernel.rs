//! Similarity kernels between representation vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, norm};

pub const DEFAULT_EPSILON_NORM: f64 = 1e-12;
pub const DEFAULT_RBF_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Cosine,
    Dot,
    Rbf,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Cosine => "cosine",
            KernelKind::Dot => "dot",
            KernelKind::Rbf => "rbf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityKernel {
    pub kind: KernelKind,
    /// Bandwidth of the rbf kernel, ignored otherwise.
    pub rbf_gamma: f64,
    /// Lower clamp applied to vector norms in the cosine kernel.
    pub epsilon_norm: f64,
}

/// A kernel value with its gradient in the first argument.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// The first argument's norm fell below `epsilon_norm` and was clamped.
    pub clamped: bool,
}

impl SimilarityKernel {
    pub fn cosine() -> Self {
        Self::with_kind(KernelKind::Cosine)
    }

    pub fn dot() -> Self {
        Self::with_kind(KernelKind::Dot)
    }

    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("rbf gamma must be positive, got {gamma}")));
        }
        Ok(SimilarityKernel {
            rbf_gamma: gamma,
            ..Self::with_kind(KernelKind::Rbf)
        })
    }

    pub fn with_kind(kind: KernelKind) -> Self {
        SimilarityKernel {
            kind,
            rbf_gamma: DEFAULT_RBF_GAMMA,
            epsilon_norm: DEFAULT_EPSILON_NORM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_norm > 0.0 && self.epsilon_norm.is_finite()) {
            return Err(Error::invalid("epsilon_norm must be positive"));
        }
        if self.kind == KernelKind::Rbf && !(self.rbf_gamma > 0.0 && self.rbf_gamma.is_finite()) {
            return Err(Error::invalid("rbf gamma must be positive"));
        }
        Ok(())
    }

    /// Norm clamped from below at `epsilon_norm`.
    pub fn clamped_norm(&self, z: &[f64]) -> f64 {
        norm(z).max(self.epsilon_norm)
    }

    /// `z / max(|z|, epsilon_norm)`: the cosine kernel's feature map.
    pub fn unit(&self, z: &[f64]) -> Vec<f64> {
        let n = self.clamped_norm(z);
        z.iter().map(|v| v / n).collect()
    }

    pub fn eval(&self, z1: &[f64], z2: &[f64]) -> Result<f64> {
        check_lengths(z1, z2)?;
        Ok(match self.kind {
            KernelKind::Cosine => dot(z1, z2) / (self.clamped_norm(z1) * self.clamped_norm(z2)),
            KernelKind::Dot => dot(z1, z2),
            KernelKind::Rbf => (-self.rbf_gamma * squared_distance(z1, z2)).exp(),
        })
    }

    /// Cosine similarity against an already unit-normalized `unit2`.
    pub(crate) fn cosine_with_unit(&self, z1: &[f64], unit2: &[f64]) -> f64 {
        dot(z1, unit2) / self.clamped_norm(z1)
    }

    /// Value and gradient of `s(z1, z2)` with respect to `z1`.
    pub fn eval_with_gradient(&self, z1: &[f64], z2: &[f64]) -> Result<KernelGradient> {
        check_lengths(z1, z2)?;
        Ok(match self.kind {
            KernelKind::Cosine => {
                let unit2 = self.unit(z2);
                self.cosine_gradient_with_unit(z1, &unit2)
            }
            KernelKind::Dot => KernelGradient {
                value: dot(z1, z2),
                gradient: z2.to_vec(),
                clamped: false,
            },
            KernelKind::Rbf => {
                let value = (-self.rbf_gamma * squared_distance(z1, z2)).exp();
                let scale = -2.0 * self.rbf_gamma * value;
                KernelGradient {
                    value,
                    gradient: z1.iter().zip(z2).map(|(a, b)| scale * (a - b)).collect(),
                    clamped: false,
                }
            }
        })
    }

    /// `d/dz1 [z1 . u / |z1|] = u / |z1| - s z1 / |z1|^2`. When `|z1|` is
    /// clamped the denominator is constant and only the first term remains.
    pub(crate) fn cosine_gradient_with_unit(&self, z1: &[f64], unit2: &[f64]) -> KernelGradient {
        let raw = norm(z1);
        let clamped = raw < self.epsilon_norm;
        let n = raw.max(self.epsilon_norm);
        let value = dot(z1, unit2) / n;
        let gradient = if clamped {
            unit2.iter().map(|u| u / n).collect()
        } else {
            unit2
                .iter()
                .zip(z1)
                .map(|(u, z)| u / n - value * z / (n * n))
                .collect()
        };
        KernelGradient {
            value,
            gradient,
            clamped,
        }
    }
}

fn check_lengths(z1: &[f64], z2: &[f64]) -> Result<()> {
    if z1.len() != z2.len() {
        return Err(Error::shape(&[z1.len()], &[z2.len()]));
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
