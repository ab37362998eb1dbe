//! Scalar explanation targets built on an encoder and a reference set.
//!
//! The central one is contrastive corpus similarity: the mean kernel
//! similarity of `f(x)` to the corpus minus its mean similarity to the
//! foil sample. The other kinds are its ablations plus the supervised
//! class-probability target, so every attribution method can be run on all
//! of them through the same [`ScalarTarget`] interface.

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, LinearHead};
use crate::error::{Error, Result};
use crate::kernel::{KernelKind, SimilarityKernel};
use crate::reference::ReferenceSet;
use crate::tensor::{check_finite, dot, shifted_mean, Tensor};

/// Gradient of a target with respect to its input.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGradient {
    pub gradient: Tensor,
    /// A representation norm was clamped at the kernel's `epsilon_norm`.
    pub clamped_norm: bool,
}

/// Anything an attribution method can explain: a scalar function of an
/// input tensor with a gradient.
pub trait ScalarTarget: Sync {
    fn input_shape(&self) -> &[usize];

    fn value(&self, x: &Tensor) -> Result<f64>;

    fn gradient(&self, x: &Tensor) -> Result<TargetGradient>;

    /// Short label recorded in attribution provenance.
    fn describe(&self) -> String {
        "custom".to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// Similarity to the explicand's own representation.
    LabelFree,
    /// Similarity to the explicand minus mean similarity to the foil.
    ContrastiveLabelFree,
    /// Mean similarity to the corpus.
    Corpus,
    /// Mean similarity to the corpus minus mean similarity to the foil.
    Cocoa,
    /// Softmax probability of a fixed class under a linear head.
    ClassProbability,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::LabelFree => "label-free",
            TargetKind::ContrastiveLabelFree => "contrastive-label-free",
            TargetKind::Corpus => "corpus",
            TargetKind::Cocoa => "cocoa",
            TargetKind::ClassProbability => "class-probability",
        }
    }

    pub fn needs_corpus(self) -> bool {
        matches!(self, TargetKind::Corpus | TargetKind::Cocoa)
    }

    pub fn needs_foil(self) -> bool {
        matches!(self, TargetKind::Cocoa | TargetKind::ContrastiveLabelFree)
    }

    pub fn needs_explicand(self) -> bool {
        matches!(self, TargetKind::LabelFree | TargetKind::ContrastiveLabelFree)
    }
}

/// A frozen explanation target. Reference statistics are cached at
/// construction and never change afterwards.
#[derive(Debug, Clone)]
pub struct ExplanationTarget {
    kind: TargetKind,
    encoder: Encoder,
    kernel: SimilarityKernel,
    refs: ReferenceSet,
    explicand: Option<Vec<f64>>,
    head: Option<(LinearHead, usize)>,
    // cosine only: unit-normalized references
    corpus_unit: Vec<Vec<f64>>,
    foil_unit: Vec<Vec<f64>>,
    explicand_unit: Option<Vec<f64>>,
}

/// Everything needed to assemble an [`ExplanationTarget`] of any kind.
#[derive(Debug, Clone)]
pub struct TargetBuilder {
    pub kind: TargetKind,
    pub encoder: Encoder,
    pub kernel: SimilarityKernel,
    pub refs: ReferenceSet,
    pub explicand_representation: Option<Vec<f64>>,
    pub head: Option<(LinearHead, usize)>,
}

impl TargetBuilder {
    pub fn new(kind: TargetKind, encoder: Encoder, kernel: SimilarityKernel) -> Self {
        TargetBuilder {
            kind,
            encoder,
            kernel,
            refs: ReferenceSet::default(),
            explicand_representation: None,
            head: None,
        }
    }

    pub fn refs(mut self, refs: ReferenceSet) -> Self {
        self.refs = refs;
        self
    }

    /// Cache `f(explicand)` for the label-free kinds.
    pub fn explicand(mut self, explicand: &Tensor) -> Result<Self> {
        self.explicand_representation = Some(self.encoder.forward(explicand)?.into_data());
        Ok(self)
    }

    pub fn explicand_representation(mut self, z: Vec<f64>) -> Self {
        self.explicand_representation = Some(z);
        self
    }

    pub fn head(mut self, head: LinearHead, class: usize) -> Self {
        self.head = Some((head, class));
        self
    }

    pub fn build(self) -> Result<ExplanationTarget> {
        ExplanationTarget::from_builder(self)
    }
}

impl ExplanationTarget {
    pub fn cocoa(encoder: Encoder, kernel: SimilarityKernel, refs: ReferenceSet) -> Result<Self> {
        TargetBuilder::new(TargetKind::Cocoa, encoder, kernel).refs(refs).build()
    }

    pub fn corpus(encoder: Encoder, kernel: SimilarityKernel, refs: ReferenceSet) -> Result<Self> {
        TargetBuilder::new(TargetKind::Corpus, encoder, kernel).refs(refs).build()
    }

    pub fn label_free(encoder: Encoder, kernel: SimilarityKernel, explicand: &Tensor) -> Result<Self> {
        TargetBuilder::new(TargetKind::LabelFree, encoder, kernel)
            .explicand(explicand)?
            .build()
    }

    pub fn contrastive_label_free(
        encoder: Encoder,
        kernel: SimilarityKernel,
        explicand: &Tensor,
        refs: ReferenceSet,
    ) -> Result<Self> {
        TargetBuilder::new(TargetKind::ContrastiveLabelFree, encoder, kernel)
            .refs(refs)
            .explicand(explicand)?
            .build()
    }

    pub fn class_probability(encoder: Encoder, head: LinearHead, class: usize) -> Result<Self> {
        TargetBuilder::new(TargetKind::ClassProbability, encoder, SimilarityKernel::cosine())
            .head(head, class)
            .build()
    }

    fn from_builder(b: TargetBuilder) -> Result<Self> {
        b.kernel.validate()?;
        let kind = b.kind;
        let d = b.encoder.output_dim();
        if kind.needs_corpus() && b.refs.corpus().is_empty() {
            return Err(Error::MissingReference(format!(
                "target `{}` requires a nonempty corpus",
                kind.name()
            )));
        }
        if kind.needs_foil() && b.refs.foil().is_empty() {
            return Err(Error::MissingReference(format!(
                "target `{}` requires a nonempty foil set",
                kind.name()
            )));
        }
        if let Some(rd) = b.refs.dim() {
            if rd != d {
                return Err(Error::shape(&[d], &[rd]));
            }
        }
        let explicand = if kind.needs_explicand() {
            let z = b.explicand_representation.ok_or_else(|| {
                Error::MissingReference(format!(
                    "target `{}` requires the explicand representation",
                    kind.name()
                ))
            })?;
            if z.len() != d {
                return Err(Error::shape(&[d], &[z.len()]));
            }
            check_finite(&z, "explicand representation")?;
            Some(z)
        } else {
            None
        };
        let head = if kind == TargetKind::ClassProbability {
            let (head, class) = b.head.ok_or_else(|| {
                Error::MissingReference("class-probability target requires a linear head".into())
            })?;
            if head.input_dim() != d {
                return Err(Error::shape(&[d], &[head.input_dim()]));
            }
            if class >= head.classes() {
                return Err(Error::invalid(format!(
                    "class index {class} out of range for {} classes",
                    head.classes()
                )));
            }
            Some((head, class))
        } else {
            None
        };

        let kernel = b.kernel;
        let (corpus_unit, foil_unit, explicand_unit) = if kernel.kind == KernelKind::Cosine {
            (
                b.refs.corpus().iter().map(|z| kernel.unit(z)).collect(),
                b.refs.foil().iter().map(|z| kernel.unit(z)).collect(),
                explicand.as_deref().map(|z| kernel.unit(z)),
            )
        } else {
            (Vec::new(), Vec::new(), None)
        };
        Ok(ExplanationTarget {
            kind,
            encoder: b.encoder,
            kernel,
            refs: b.refs,
            explicand,
            head,
            corpus_unit,
            foil_unit,
            explicand_unit,
        })
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn kernel(&self) -> &SimilarityKernel {
        &self.kernel
    }

    pub fn refs(&self) -> &ReferenceSet {
        &self.refs
    }

    /// The same target with a different encoder; reference vectors are kept.
    pub fn with_encoder(&self, encoder: Encoder) -> Result<Self> {
        TargetBuilder {
            kind: self.kind,
            encoder,
            kernel: self.kernel,
            refs: self.refs.clone(),
            explicand_representation: self.explicand.clone(),
            head: self.head.clone(),
        }
        .build()
    }

    /// Mean similarity of `z` to a reference group.
    fn mean_similarity(&self, z: &[f64], raw: &[Vec<f64>], unit: &[Vec<f64>]) -> Result<f64> {
        let terms = if self.kernel.kind == KernelKind::Cosine {
            unit.iter()
                .map(|u| self.kernel.cosine_with_unit(z, u))
                .collect::<Vec<_>>()
        } else {
            raw.iter()
                .map(|r| self.kernel.eval(z, r))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(shifted_mean(&terms))
    }

    /// Value of the target given the representation `z = f(x)`.
    pub fn value_from_representation(&self, z: &[f64]) -> Result<f64> {
        let refs = &self.refs;
        let value = match self.kind {
            TargetKind::Corpus => self.mean_similarity(z, refs.corpus(), &self.corpus_unit)?,
            TargetKind::Cocoa => {
                self.mean_similarity(z, refs.corpus(), &self.corpus_unit)?
                    - self.mean_similarity(z, refs.foil(), &self.foil_unit)?
            }
            TargetKind::LabelFree => self.explicand_similarity(z)?,
            TargetKind::ContrastiveLabelFree => {
                self.explicand_similarity(z)? - self.mean_similarity(z, refs.foil(), &self.foil_unit)?
            }
            TargetKind::ClassProbability => {
                let (head, class) = self.head.as_ref().expect("validated at construction");
                head.probability_and_gradient(z, *class)?.0
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{} target value", self.kind.name())));
        }
        Ok(value)
    }

    fn explicand_similarity(&self, z: &[f64]) -> Result<f64> {
        let e = self.explicand.as_deref().expect("validated at construction");
        match &self.explicand_unit {
            Some(u) => Ok(self.kernel.cosine_with_unit(z, u)),
            None => self.kernel.eval(z, e),
        }
    }

    /// Mean kernel gradient over a reference group, and whether any norm
    /// was clamped.
    fn mean_gradient(&self, z: &[f64], raw: &[Vec<f64>], unit: &[Vec<f64>]) -> Result<(Vec<f64>, bool)> {
        let mut acc = vec![0.0; z.len()];
        let mut clamped = false;
        let n = raw.len();
        for i in 0..n {
            let g = if self.kernel.kind == KernelKind::Cosine {
                self.kernel.cosine_gradient_with_unit(z, &unit[i])
            } else {
                self.kernel.eval_with_gradient(z, &raw[i])?
            };
            clamped |= g.clamped;
            for (a, v) in acc.iter_mut().zip(&g.gradient) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        Ok((acc, clamped))
    }

    /// `d gamma / d z` at the representation `z`.
    pub fn representation_gradient(&self, z: &[f64]) -> Result<(Vec<f64>, bool)> {
        let refs = &self.refs;
        let sub = |(a, ca): (Vec<f64>, bool), (b, cb): (Vec<f64>, bool)| {
            (a.iter().zip(&b).map(|(x, y)| x - y).collect(), ca || cb)
        };
        Ok(match self.kind {
            TargetKind::Corpus => self.mean_gradient(z, refs.corpus(), &self.corpus_unit)?,
            TargetKind::Cocoa => sub(
                self.mean_gradient(z, refs.corpus(), &self.corpus_unit)?,
                self.mean_gradient(z, refs.foil(), &self.foil_unit)?,
            ),
            TargetKind::LabelFree => self.explicand_gradient(z)?,
            TargetKind::ContrastiveLabelFree => sub(
                self.explicand_gradient(z)?,
                self.mean_gradient(z, refs.foil(), &self.foil_unit)?,
            ),
            TargetKind::ClassProbability => {
                let (head, class) = self.head.as_ref().expect("validated at construction");
                (head.probability_and_gradient(z, *class)?.1, false)
            }
        })
    }

    fn explicand_gradient(&self, z: &[f64]) -> Result<(Vec<f64>, bool)> {
        let e = self.explicand.as_deref().expect("validated at construction");
        let g = match &self.explicand_unit {
            Some(u) => self.kernel.cosine_gradient_with_unit(z, u),
            None => self.kernel.eval_with_gradient(z, e)?,
        };
        Ok((g.gradient, g.clamped))
    }

    /// The contrastive direction of this target's references.
    pub fn contrastive_direction(&self) -> Result<Vec<f64>> {
        contrastive_direction(&self.refs, &self.kernel)
    }

    /// Split a corpus or cocoa target along its sub-corpus partition into
    /// `(|C_k| / |C|, value of the target restricted to C_k)` pairs.
    pub fn subcorpus_decompose(&self, x: &Tensor) -> Result<Vec<(f64, f64)>> {
        if !self.kind.needs_corpus() {
            return Err(Error::invalid(format!(
                "sub-corpus decomposition needs a corpus or cocoa target, got `{}`",
                self.kind.name()
            )));
        }
        let groups = self
            .refs
            .partition()
            .ok_or_else(|| Error::MissingReference("reference set has no sub-corpus partition".into()))?;
        let z = self.encoder.forward(x)?.into_data();
        let total = self.refs.corpus().len() as f64;
        groups
            .iter()
            .map(|g| {
                let sub = TargetBuilder {
                    kind: self.kind,
                    encoder: self.encoder.clone(),
                    kernel: self.kernel,
                    refs: self.refs.restricted_to(g),
                    explicand_representation: None,
                    head: None,
                }
                .build()?;
                Ok((g.len() as f64 / total, sub.value_from_representation(&z)?))
            })
            .collect()
    }
}

impl ScalarTarget for ExplanationTarget {
    fn input_shape(&self) -> &[usize] {
        self.encoder.input_shape()
    }

    fn value(&self, x: &Tensor) -> Result<f64> {
        let z = self.encoder.forward(x)?;
        self.value_from_representation(z.data())
    }

    fn gradient(&self, x: &Tensor) -> Result<TargetGradient> {
        let (z, tape) = self.encoder.forward_with_tape(x)?;
        let (dz, clamped_norm) = self.representation_gradient(&z)?;
        let grad = tape.backward(&dz)?;
        Ok(TargetGradient {
            gradient: Tensor::new(x.shape().to_vec(), grad)?,
            clamped_norm,
        })
    }

    fn describe(&self) -> String {
        match self.kind {
            TargetKind::ClassProbability => self.kind.name().to_string(),
            k => format!("{}/{}", k.name(), self.kernel.kind.name()),
        }
    }
}

/// Mean unit corpus representation minus mean unit foil representation.
/// Only defined for the cosine kernel, whose feature map is `z / |z|`.
pub fn contrastive_direction(refs: &ReferenceSet, kernel: &SimilarityKernel) -> Result<Vec<f64>> {
    if kernel.kind != KernelKind::Cosine {
        return Err(Error::invalid("the contrastive direction is defined for the cosine kernel"));
    }
    if refs.corpus().is_empty() || refs.foil().is_empty() {
        return Err(Error::MissingReference(
            "contrastive direction needs a nonempty corpus and foil".into(),
        ));
    }
    let mean_unit = |set: &[Vec<f64>]| {
        let mut acc = vec![0.0; set[0].len()];
        for z in set {
            for (a, u) in acc.iter_mut().zip(kernel.unit(z)) {
                *a += u;
            }
        }
        acc.iter().map(|a| a / set.len() as f64).collect::<Vec<_>>()
    };
    let c = mean_unit(refs.corpus());
    let f = mean_unit(refs.foil());
    Ok(c.iter().zip(&f).map(|(a, b)| a - b).collect())
}

/// `f(x)/|f(x)| . direction`, the single-dot-product form of the cocoa
/// target under the cosine kernel.
pub fn direction_value(kernel: &SimilarityKernel, z: &[f64], direction: &[f64]) -> f64 {
    dot(&kernel.unit(z), direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Activation, DenseLayer, EncoderKind};

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    fn refs(corpus: &[&[f64]], foil: &[&[f64]]) -> ReferenceSet {
        ReferenceSet::new(
            corpus.iter().map(|v| v.to_vec()).collect(),
            foil.iter().map(|v| v.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn cocoa_cancels_when_corpus_equals_foil() {
        let target = ExplanationTarget::cocoa(
            Encoder::identity(2).unwrap(),
            SimilarityKernel::cosine(),
            refs(&[&[0.3, 0.7]], &[&[0.3, 0.7]]),
        )
        .unwrap();
        for x in [[1.0, 0.0], [-2.0, 5.0], [0.1, 0.1]] {
            assert_eq!(target.value(&t(&x)).unwrap(), 0.0);
        }
    }

    #[test]
    fn orthogonal_references() {
        let target = ExplanationTarget::cocoa(
            Encoder::identity(2).unwrap(),
            SimilarityKernel::cosine(),
            refs(&[&[1.0, 0.0]], &[&[0.0, 1.0]]),
        )
        .unwrap();
        assert_eq!(target.value(&t(&[1.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn label_free_dot_is_representation_product() {
        let enc = Encoder::linear(vec![2], vec![2.0, 0.0, 1.0, 1.0], 2, vec![0.0, 0.0]).unwrap();
        let xe = t(&[1.0, 2.0]);
        let target = ExplanationTarget::label_free(enc.clone(), SimilarityKernel::dot(), &xe).unwrap();
        let x = t(&[0.5, -1.0]);
        let fx = enc.forward(&x).unwrap();
        let fe = enc.forward(&xe).unwrap();
        assert_eq!(target.value(&x).unwrap(), dot(fx.data(), fe.data()));
        // cosine label-free on the explicand itself is 1
        let target = ExplanationTarget::label_free(enc, SimilarityKernel::cosine(), &xe).unwrap();
        assert!((target.value(&xe).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dot_corpus_gradient_is_corpus_mean() {
        let target = ExplanationTarget::corpus(
            Encoder::identity(3).unwrap(),
            SimilarityKernel::dot(),
            refs(&[&[1.0, 2.0, 3.0]], &[]),
        )
        .unwrap();
        let g = target.gradient(&t(&[0.3, -0.2, 9.0])).unwrap();
        assert_eq!(g.gradient.data(), &[1.0, 2.0, 3.0]);
        assert!(!g.clamped_norm);
    }

    #[test]
    fn missing_references_are_reported() {
        let enc = Encoder::identity(2).unwrap();
        let corpus_only = refs(&[&[1.0, 0.0]], &[]);
        assert!(ExplanationTarget::corpus(enc.clone(), SimilarityKernel::cosine(), corpus_only.clone()).is_ok());
        assert!(matches!(
            ExplanationTarget::cocoa(enc.clone(), SimilarityKernel::cosine(), corpus_only),
            Err(Error::MissingReference(_))
        ));
        assert!(matches!(
            ExplanationTarget::corpus(enc.clone(), SimilarityKernel::cosine(), ReferenceSet::default()),
            Err(Error::MissingReference(_))
        ));
        assert!(TargetBuilder::new(TargetKind::LabelFree, enc.clone(), SimilarityKernel::cosine())
            .build()
            .is_err());
        assert!(TargetBuilder::new(TargetKind::ClassProbability, enc.clone(), SimilarityKernel::cosine())
            .build()
            .is_err());
        // reference dimension must match the encoder
        assert!(ExplanationTarget::corpus(enc, SimilarityKernel::cosine(), refs(&[&[1.0, 0.0, 0.0]], &[])).is_err());
    }

    #[test]
    fn contrastive_direction_examples() {
        let k = SimilarityKernel::cosine();
        assert_eq!(
            contrastive_direction(&refs(&[&[1.0, 0.0]], &[&[0.0, 1.0]]), &k).unwrap(),
            vec![1.0, -1.0]
        );
        assert_eq!(
            contrastive_direction(&refs(&[&[3.0, 4.0]], &[&[3.0, 4.0]]), &k).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(contrastive_direction(&refs(&[&[1.0, 0.0]], &[]), &k).is_err());
        assert!(contrastive_direction(&refs(&[&[1.0, 0.0]], &[&[1.0, 1.0]]), &SimilarityKernel::dot()).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let enc = Encoder::identity(2).unwrap();
        let base = refs(
            &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[2.0, -1.0]],
            &[&[-1.0, 0.5]],
        );
        let x = t(&[0.4, 0.9]);

        let single = ExplanationTarget::cocoa(
            enc.clone(),
            SimilarityKernel::cosine(),
            base.clone().with_partition(vec![vec![0, 1, 2, 3]]).unwrap(),
        )
        .unwrap();
        let parts = single.subcorpus_decompose(&x).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].0, 1.0);
        assert_eq!(parts[0].1, single.value(&x).unwrap());

        let split = ExplanationTarget::cocoa(
            enc.clone(),
            SimilarityKernel::cosine(),
            base.clone().with_partition(vec![vec![2], vec![0, 1, 3]]).unwrap(),
        )
        .unwrap();
        let parts = split.subcorpus_decompose(&x).unwrap();
        assert_eq!(parts[0].0, 0.25);
        assert_eq!(parts[1].0, 0.75);
        let total: f64 = parts.iter().map(|(w, v)| w * v).sum();
        assert!((total - split.value(&x).unwrap()).abs() < 1e-12);

        let no_partition = ExplanationTarget::cocoa(enc, SimilarityKernel::cosine(), base).unwrap();
        assert!(no_partition.subcorpus_decompose(&x).is_err());
    }

    #[test]
    fn zero_representation_is_clamped_and_flagged() {
        let layer = DenseLayer::new(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0], Activation::Relu).unwrap();
        let enc = Encoder::new(EncoderKind::MlpRelu, vec![2], vec![layer]).unwrap();
        let target =
            ExplanationTarget::cocoa(enc, SimilarityKernel::cosine(), refs(&[&[1.0, 0.0]], &[&[0.0, 1.0]])).unwrap();
        let x = t(&[-1.0, -1.0]);
        assert_eq!(target.value(&x).unwrap(), 0.0);
        let g = target.gradient(&x).unwrap();
        assert!(g.clamped_norm);
        assert!(g.gradient.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn class_probability_target() {
        let head = LinearHead::new(vec![0.0; 4], 2, 2, vec![3f64.ln(), 0.0]).unwrap();
        let target = ExplanationTarget::class_probability(Encoder::identity(2).unwrap(), head.clone(), 0).unwrap();
        assert!((target.value(&t(&[5.0, -2.0])).unwrap() - 0.75).abs() < 1e-15);
        assert!(ExplanationTarget::class_probability(Encoder::identity(2).unwrap(), head, 2).is_err());
    }
}
