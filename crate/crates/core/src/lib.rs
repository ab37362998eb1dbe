//! Contrastive corpus attributions.
//!
//! An unsupervised encoder maps inputs to representations. Feature
//! attribution methods need a scalar to explain, so this crate builds
//! scalar explanation targets from representations (mean similarity to a
//! corpus of interest, optionally contrasted against a foil set), wraps
//! them for gradient- and perturbation-based attribution methods, and
//! evaluates the resulting maps with insertion and deletion curves.
//!
//! ```
//! use cocoa::{AttributionConfig, Encoder, ExplanationTarget, Method, ReferenceSet, SimilarityKernel, Tensor};
//!
//! let encoder = Encoder::identity(2).unwrap();
//! let refs = ReferenceSet::new(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]).unwrap();
//! let target = ExplanationTarget::cocoa(encoder, SimilarityKernel::cosine(), refs).unwrap();
//! let x = Tensor::from_vec(vec![2.0, 1.0]).unwrap();
//! let mut config = AttributionConfig::new(Method::VanillaGrad, 0);
//! config.baseline = Some(Tensor::zeros(&[2]).unwrap());
//! let map = cocoa::attribute(&target, &x, &config).unwrap();
//! assert_eq!(map.scores.shape(), &[2]);
//! ```

pub mod attribution;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod foil;
pub mod io;
pub mod kernel;
pub mod pipeline;
pub mod reference;
pub mod synthetic;
pub mod target;
pub mod tensor;

pub use attribution::{attribute, AttributionConfig, AttributionMap, IgRule, Method, Provenance};
pub use encoder::{Encoder, EncoderKind, LinearHead};
pub use error::{Error, Result};
pub use eval::{aggregate, deletion_curve, insertion_curve, Aggregate, EvalCurve, EvalMeasure};
pub use foil::{required_foil_size, SampleSizeQuery};
pub use kernel::{KernelKind, SimilarityKernel};
pub use reference::ReferenceSet;
pub use target::{ExplanationTarget, ScalarTarget, TargetKind};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/targets.md")]
    mod targets {}
    #[doc = include_str!("../../../book/src/foil.md")]
    mod foil {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
