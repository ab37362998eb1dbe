//! Differentiable encoders built from dense layers, and the linear
//! classification head used for corpus-majority evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_finite, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Linear,
    MlpRelu,
    /// Lookup of precomputed representations by integer key. The table is
    /// stored as a single `d x K` layer whose columns are the vectors.
    EmbeddingTable,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Linear => "linear",
            EncoderKind::MlpRelu => "mlp-relu",
            EncoderKind::EmbeddingTable => "embedding-table",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative with the subgradient at exactly zero taken as 0.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `y = act(W x + b)` with `W` stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub activation: Activation,
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        weight: Vec<f64>,
        rows: usize,
        cols: usize,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let layer = DenseLayer {
            activation,
            rows,
            cols,
            weight,
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        if self.weight.len() != self.rows * self.cols {
            return Err(Error::shape(&[self.rows, self.cols], &[self.weight.len()]));
        }
        if self.bias.len() != self.rows {
            return Err(Error::shape(&[self.rows], &[self.bias.len()]));
        }
        check_finite(&self.weight, "layer weight")?;
        check_finite(&self.bias, "layer bias")
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| crate::tensor::dot(row, input) + b)
            .collect()
    }

    /// `W^T g`
    fn transpose_apply(&self, grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &g) in self.weight.chunks_exact(self.cols).zip(grad) {
            if g == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * g;
            }
        }
        out
    }
}

/// A map from input space to `R^d`, supporting forward evaluation and
/// vector-Jacobian products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEncoder", into = "RawEncoder")]
pub struct Encoder {
    kind: EncoderKind,
    input_shape: Vec<usize>,
    layers: Vec<DenseLayer>,
    nonnegative_output: bool,
}

#[derive(Serialize, Deserialize)]
struct RawEncoder {
    kind: EncoderKind,
    input_shape: Vec<usize>,
    layers: Vec<DenseLayer>,
    #[serde(default)]
    nonnegative_output: bool,
}

impl TryFrom<RawEncoder> for Encoder {
    type Error = Error;

    fn try_from(raw: RawEncoder) -> Result<Self> {
        let enc = Encoder::new(raw.kind, raw.input_shape, raw.layers)?;
        if raw.nonnegative_output && !enc.nonnegative_output {
            return Err(Error::invalid(
                "nonnegative_output is set but the final activation is not relu",
            ));
        }
        Ok(enc)
    }
}

impl From<Encoder> for RawEncoder {
    fn from(e: Encoder) -> Self {
        RawEncoder {
            kind: e.kind,
            input_shape: e.input_shape,
            layers: e.layers,
            nonnegative_output: e.nonnegative_output,
        }
    }
}

/// Pre-activations recorded during a forward pass, consumed by
/// [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Tape<'a> {
    encoder: &'a Encoder,
    pre_activations: Vec<Vec<f64>>,
}

impl Encoder {
    pub fn new(kind: EncoderKind, input_shape: Vec<usize>, layers: Vec<DenseLayer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "input_shape extents must be positive, got {input_shape:?}"
            )));
        }
        let Some(last) = layers.last() else {
            return Err(Error::invalid("encoder needs at least one layer"));
        };
        for layer in &layers {
            layer.validate()?;
        }
        match kind {
            EncoderKind::EmbeddingTable => {
                if layers.len() != 1
                    || last.activation != Activation::Identity
                    || last.bias.iter().any(|&b| b != 0.0)
                {
                    return Err(Error::invalid(
                        "embedding-table encoders hold exactly one identity layer with zero bias",
                    ));
                }
                if input_shape != [1] {
                    return Err(Error::invalid(
                        "embedding-table encoders take a single integer key, input_shape [1]",
                    ));
                }
            }
            EncoderKind::Linear => {
                if layers.iter().any(|l| l.activation != Activation::Identity) {
                    return Err(Error::invalid("linear encoders use identity activations only"));
                }
            }
            EncoderKind::MlpRelu => {}
        }
        if kind != EncoderKind::EmbeddingTable {
            let input_len: usize = input_shape.iter().product();
            if layers[0].cols != input_len {
                return Err(Error::shape(&[input_len], &[layers[0].cols]));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].rows != pair[1].cols {
                return Err(Error::invalid(format!(
                    "layer dimensions do not chain: {} outputs feed {} inputs",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        let nonnegative_output = last.activation == Activation::Relu;
        Ok(Encoder {
            kind,
            input_shape,
            layers,
            nonnegative_output,
        })
    }

    /// A single identity layer `x -> W x + b`.
    pub fn linear(input_shape: Vec<usize>, weight: Vec<f64>, rows: usize, bias: Vec<f64>) -> Result<Self> {
        let cols = input_shape.iter().product();
        let layer = DenseLayer::new(weight, rows, cols, bias, Activation::Identity)?;
        Encoder::new(EncoderKind::Linear, input_shape, vec![layer])
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Encoder::linear(vec![dim], w, dim, vec![0.0; dim])
    }

    /// Precomputed representations addressed by key `0..vectors.len()`.
    pub fn embedding_table(vectors: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::invalid("embedding table needs at least one vector"));
        };
        let d = first.len();
        let k = vectors.len();
        let mut weight = vec![0.0; d * k];
        for (key, v) in vectors.iter().enumerate() {
            if v.len() != d {
                return Err(Error::shape(&[d], &[v.len()]));
            }
            for (row, &val) in v.iter().enumerate() {
                weight[row * k + key] = val;
            }
        }
        let layer = DenseLayer::new(weight, d, k, vec![0.0; d], Activation::Identity)?;
        Encoder::new(EncoderKind::EmbeddingTable, vec![1], vec![layer])
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// True when every output coordinate is guaranteed `>= 0`.
    pub fn nonnegative_output(&self) -> bool {
        self.nonnegative_output
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.kind == EncoderKind::EmbeddingTable {
            return self.lookup(x);
        }
        let (out, _) = self.run(x)?;
        Tensor::from_vec(out)
    }

    /// Forward pass that keeps what [`Tape::backward`] needs.
    pub fn forward_with_tape(&self, x: &Tensor) -> Result<(Vec<f64>, Tape<'_>)> {
        if self.kind == EncoderKind::EmbeddingTable {
            return Err(Error::NoGradient(self.kind.name()));
        }
        let (out, pre_activations) = self.run(x)?;
        Ok((
            out,
            Tape {
                encoder: self,
                pre_activations,
            },
        ))
    }

    /// `u^T J` where `J` is the Jacobian of the encoder at `x`.
    pub fn vjp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let (_, tape) = self.forward_with_tape(x)?;
        let grad = tape.backward(u.data())?;
        Tensor::new(x.shape().to_vec(), grad)
    }

    fn run(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        x.expect_shape(&self.input_shape)?;
        let mut act = x.data().to_vec();
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.affine(&act);
            check_finite(&pre, &format!("encoder layer {i}"))?;
            act = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(pre);
        }
        Ok((act, pre_activations))
    }

    fn lookup(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_shape(&self.input_shape)?;
        let table = &self.layers[0];
        let key = x.data()[0];
        if key < 0.0 || key.fract() != 0.0 || key >= table.cols as f64 {
            return Err(Error::invalid(format!(
                "embedding key {key} is not an integer in 0..{}",
                table.cols
            )));
        }
        let key = key as usize;
        Tensor::from_vec(
            table
                .weight
                .chunks_exact(table.cols)
                .map(|row| row[key])
                .collect(),
        )
    }

    /// A copy with every weight and bias redrawn from a normal distribution
    /// truncated at two standard deviations, with standard deviation
    /// `1/sqrt(fan_in)` per layer. The architecture is unchanged.
    pub fn randomized(&self, seed: u64) -> Result<Encoder> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let std = 1.0 / (l.cols as f64).sqrt();
                let weight = (0..l.weight.len())
                    .map(|_| truncated_normal(&mut rng) * std)
                    .collect();
                let bias = if self.kind == EncoderKind::EmbeddingTable {
                    vec![0.0; l.rows]
                } else {
                    (0..l.rows).map(|_| truncated_normal(&mut rng) * std).collect()
                };
                DenseLayer::new(weight, l.rows, l.cols, bias, l.activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Encoder::new(self.kind, self.input_shape.clone(), layers)
    }
}

impl Tape<'_> {
    pub fn backward(&self, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.encoder.output_dim();
        if u.len() != d {
            return Err(Error::shape(&[d], &[u.len()]));
        }
        let mut grad = u.to_vec();
        for (layer, pre) in self
            .encoder
            .layers
            .iter()
            .zip(&self.pre_activations)
            .rev()
        {
            for (g, &p) in grad.iter_mut().zip(pre) {
                *g *= layer.activation.derivative(p);
            }
            grad = layer.transpose_apply(&grad);
        }
        check_finite(&grad, "encoder gradient")?;
        Ok(grad)
    }
}

/// Standard normal draw rejected outside `[-2, 2]`.
pub(crate) fn truncated_normal(rng: &mut impl rand::Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Downstream linear classifier over representations: `softmax(W z + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHead", into = "RawHead")]
pub struct LinearHead {
    layer: DenseLayer,
}

#[derive(Serialize, Deserialize)]
struct RawHead {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl TryFrom<RawHead> for LinearHead {
    type Error = Error;

    fn try_from(raw: RawHead) -> Result<Self> {
        LinearHead::new(raw.weight, raw.rows, raw.cols, raw.bias)
    }
}

impl From<LinearHead> for RawHead {
    fn from(h: LinearHead) -> Self {
        RawHead {
            rows: h.layer.rows,
            cols: h.layer.cols,
            weight: h.layer.weight,
            bias: h.layer.bias,
        }
    }
}

impl LinearHead {
    /// `weight` is `classes x dim`, row-major.
    pub fn new(weight: Vec<f64>, classes: usize, dim: usize, bias: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a classification head needs at least 2 classes"));
        }
        let layer = DenseLayer::new(weight, classes, dim, bias, Activation::Identity)?;
        Ok(LinearHead { layer })
    }

    pub fn classes(&self) -> usize {
        self.layer.rows
    }

    pub fn input_dim(&self) -> usize {
        self.layer.cols
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.layer.cols {
            return Err(Error::shape(&[self.layer.cols], &[z.len()]));
        }
        let logits = self.layer.affine(z);
        check_finite(&logits, "head logits")?;
        Ok(logits)
    }

    pub fn probabilities(&self, z: &Tensor) -> Result<Tensor> {
        Tensor::from_vec(softmax(&self.logits(z.data())?))
    }

    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        let logits = self.logits(z)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Probability of `class` and its gradient with respect to `z`.
    pub fn probability_and_gradient(&self, z: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        if class >= self.classes() {
            return Err(Error::invalid(format!(
                "class index {class} out of range for {} classes",
                self.classes()
            )));
        }
        let p = softmax(&self.logits(z)?);
        let pk = p[class];
        // d p_k / d logits = p_k (e_k - p)
        let dlogits: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| pk * (f64::from(u8::from(j == class)) - pj))
            .collect();
        Ok((pk, self.layer.transpose_apply(&dlogits)))
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    fn random_mlp(seed: u64, dims: &[usize]) -> Encoder {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::new(vec![0.0; w[0] * w[1]], w[1], w[0], vec![0.0; w[1]], act).unwrap()
            })
            .collect();
        Encoder::new(EncoderKind::MlpRelu, vec![dims[0]], layers)
            .unwrap()
            .randomized(seed)
            .unwrap()
    }

    #[test]
    fn identity_forward() {
        let enc = Encoder::identity(3).unwrap();
        assert_eq!(enc.forward(&t(&[1.0, 2.0, 3.0])).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn relu_forward() {
        let layer =
            DenseLayer::new(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0], Activation::Relu).unwrap();
        let enc = Encoder::new(EncoderKind::MlpRelu, vec![2], vec![layer]).unwrap();
        assert!(enc.nonnegative_output());
        assert_eq!(enc.forward(&t(&[-1.0, 2.0])).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn two_layer_mlp_matches_hand_evaluation() {
        // W1 = [[1, -2], [0.5, 3]], b1 = [0.5, -1]
        // x = [1, 1]: pre1 = [-0.5, 2.5], relu -> [0, 2.5]
        // W2 = [[2, 1], [-1, 4]], b2 = [0, 1]
        // out = [2.5, 11]
        let l1 = DenseLayer::new(vec![1.0, -2.0, 0.5, 3.0], 2, 2, vec![0.5, -1.0], Activation::Relu)
            .unwrap();
        let l2 = DenseLayer::new(vec![2.0, 1.0, -1.0, 4.0], 2, 2, vec![0.0, 1.0], Activation::Identity)
            .unwrap();
        let enc = Encoder::new(EncoderKind::MlpRelu, vec![2], vec![l1, l2]).unwrap();
        assert!(!enc.nonnegative_output());
        assert_eq!(enc.forward(&t(&[1.0, 1.0])).unwrap().data(), &[2.5, 11.0]);
        // u = [1, 0]: d out0 / d x = W2[0] . diag([0, 1]) W1 = [0, 1] W1 = [0.5, 3]
        let g = enc.vjp(&t(&[1.0, 1.0]), &t(&[1.0, 0.0])).unwrap();
        assert_eq!(g.data(), &[0.5, 3.0]);
    }

    #[test]
    fn linear_vjp_is_transpose() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let enc = Encoder::linear(vec![3], w, 2, vec![0.1, 0.2]).unwrap();
        let g = enc.vjp(&t(&[9.0, -1.0, 0.3]), &t(&[1.0, -2.0])).unwrap();
        assert_eq!(g.data(), &[1.0 - 8.0, 2.0 - 10.0, 3.0 - 12.0]);
    }

    #[test]
    fn active_relu_region_matches_linear() {
        let w = vec![1.0, 2.0, -1.0, 0.5];
        let relu = Encoder::new(
            EncoderKind::MlpRelu,
            vec![2],
            vec![DenseLayer::new(w.clone(), 2, 2, vec![5.0, 5.0], Activation::Relu).unwrap()],
        )
        .unwrap();
        let lin = Encoder::linear(vec![2], w, 2, vec![5.0, 5.0]).unwrap();
        let x = t(&[0.5, 0.25]);
        let u = t(&[0.7, -1.3]);
        assert_eq!(relu.vjp(&x, &u).unwrap(), lin.vjp(&x, &u).unwrap());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let h = 1e-5;
        for seed in 0..10 {
            let enc = random_mlp(seed, &[5, 7, 6, 4]);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
            // skip points near a relu kink
            let (_, tape) = enc.forward_with_tape(&t(&x)).unwrap();
            if tape.pre_activations.iter().flatten().any(|p| p.abs() < 1e-3) {
                continue;
            }
            for i in 0..4 {
                let mut u = vec![0.0; 4];
                u[i] = 1.0;
                let g = enc.vjp(&t(&x), &t(&u)).unwrap();
                for k in 0..5 {
                    let mut xp = x.clone();
                    xp[k] += h;
                    let mut xm = x.clone();
                    xm[k] -= h;
                    let fd = (enc.forward(&t(&xp)).unwrap().data()[i]
                        - enc.forward(&t(&xm)).unwrap().data()[i])
                        / (2.0 * h);
                    let err = (g.data()[k] - fd).abs() / fd.abs().max(1e-8).max(g.data()[k].abs());
                    assert!(err <= 1e-6 || (g.data()[k] - fd).abs() < 1e-10, "seed {seed}: {} vs {fd}", g.data()[k]);
                }
            }
        }
    }

    #[test]
    fn embedding_table_lookup_and_no_gradient() {
        let enc = Encoder::embedding_table(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(enc.output_dim(), 2);
        assert_eq!(enc.forward(&t(&[1.0])).unwrap().data(), &[3.0, 4.0]);
        assert!(enc.forward(&t(&[3.0])).is_err());
        assert!(enc.forward(&t(&[0.5])).is_err());
        assert!(matches!(
            enc.vjp(&t(&[0.0]), &t(&[1.0, 1.0])),
            Err(Error::NoGradient(_))
        ));
    }

    #[test]
    fn invalid_encoders_are_rejected() {
        let l1 = DenseLayer::new(vec![1.0; 6], 3, 2, vec![0.0; 3], Activation::Relu).unwrap();
        let l2 = DenseLayer::new(vec![1.0; 4], 2, 2, vec![0.0; 2], Activation::Identity).unwrap();
        assert!(Encoder::new(EncoderKind::MlpRelu, vec![2], vec![l1.clone(), l2]).is_err());
        assert!(Encoder::new(EncoderKind::Linear, vec![2], vec![l1.clone()]).is_err());
        assert!(Encoder::new(EncoderKind::MlpRelu, vec![3], vec![l1]).is_err());
        assert!(DenseLayer::new(vec![1.0; 5], 3, 2, vec![0.0; 3], Activation::Relu).is_err());
        assert!(Encoder::identity(2).unwrap().forward(&t(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn json_flag_must_agree_with_activation() {
        let json = r#"{"kind":"linear","input_shape":[1],"layers":[{"activation":"identity","rows":1,"cols":1,"weight":[2.0],"bias":[0.0]}],"nonnegative_output":true}"#;
        assert!(serde_json::from_str::<Encoder>(json).is_err());
        let ok = json.replace("true", "false");
        let enc: Encoder = serde_json::from_str(&ok).unwrap();
        assert_eq!(enc.forward(&t(&[3.0])).unwrap().data(), &[6.0]);
    }

    #[test]
    fn randomized_keeps_architecture() {
        let enc = random_mlp(1, &[4, 3, 2]);
        let r = enc.randomized(9).unwrap();
        assert_eq!(r.layers().len(), 2);
        assert_eq!(r.output_dim(), 2);
        assert_ne!(r, enc);
        assert_eq!(r, enc.randomized(9).unwrap());
        assert!(r.layers().iter().all(|l| {
            let bound = 2.0 / (l.cols as f64).sqrt();
            l.weight.iter().all(|w| w.abs() <= bound)
        }));
    }

    #[test]
    fn head_uniform_and_closed_form() {
        let head = LinearHead::new(vec![0.0; 8], 4, 2, vec![0.0; 4]).unwrap();
        let p = head.probabilities(&t(&[0.3, -1.0])).unwrap();
        assert_eq!(p.data(), &[0.25; 4]);

        let head = LinearHead::new(vec![0.0; 4], 2, 2, vec![3f64.ln(), 0.0]).unwrap();
        let p = head.probabilities(&t(&[1.0, 1.0])).unwrap();
        assert!((p.data()[0] - 0.75).abs() < 1e-15);
        assert!((p.data()[1] - 0.25).abs() < 1e-15);
        assert!(LinearHead::new(vec![0.0; 2], 1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn head_matches_naive_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w: Vec<f64> = (0..15).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..5).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let head = LinearHead::new(w.clone(), 5, 3, b.clone()).unwrap();
            let p = head.probabilities(&t(&z)).unwrap();
            // naive: exp(l) / sum exp(l) without max shift
            let logits: Vec<f64> = (0..5)
                .map(|r| (0..3).map(|c| w[r * 3 + c] * z[c]).sum::<f64>() + b[r])
                .collect();
            let total: f64 = logits.iter().map(|l| l.exp()).sum();
            for (pi, l) in p.data().iter().zip(&logits) {
                assert!((pi - l.exp() / total).abs() < 1e-12);
            }
            assert!((p.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let head = LinearHead::new(vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7], 3, 2, vec![0.1, 0.0, -0.2]).unwrap();
        let z = [0.4, -0.9];
        let (_, g) = head.probability_and_gradient(&z, 1).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut zp = z;
            zp[k] += h;
            let mut zm = z;
            zm[k] -= h;
            let fd = (head.probability_and_gradient(&zp, 1).unwrap().0
                - head.probability_and_gradient(&zm, 1).unwrap().0)
                / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn bias_free_linear_is_homogeneous(
            w in proptest::collection::vec(-3.0f64..3.0, 6),
            x in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let enc = Encoder::linear(vec![3], w, 2, vec![0.0; 2]).unwrap();
            let fx = enc.forward(&t(&x)).unwrap();
            for alpha in [-2.0, 0.5, 3.0] {
                let xs: Vec<f64> = x.iter().map(|v| alpha * v).collect();
                let fxs = enc.forward(&t(&xs)).unwrap();
                for (a, b) in fxs.data().iter().zip(fx.data()) {
                    prop_assert!((a - alpha * b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }

        #[test]
        fn vjp_is_linear_in_u(
            seed in 0u64..1000,
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let enc = random_mlp(seed, &[4, 5, 3]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let x = t(&(0..4).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>());
            let u: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let v: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
            let gm = enc.vjp(&x, &t(&mix)).unwrap();
            let gu = enc.vjp(&x, &t(&u)).unwrap();
            let gv = enc.vjp(&x, &t(&v)).unwrap();
            for k in 0..4 {
                prop_assert!((gm.data()[k] - (a * gu.data()[k] + b * gv.data()[k])).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariant(
            logits in proptest::collection::vec(-20.0f64..20.0, 2..8),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&shifted);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
