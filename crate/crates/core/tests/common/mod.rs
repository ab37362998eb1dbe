//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cocoa::attribution::channel_average;
use cocoa::encoder::{Activation, DenseLayer};
use cocoa::eval::{blur, default_blur_sigma, default_steps, random_attribution};
use cocoa::io::write_json;
use cocoa::synthetic::{SyntheticConfig, SyntheticTask};
use cocoa::{
    deletion_curve, insertion_curve, AttributionConfig, Encoder, EncoderKind, EvalMeasure, ExplanationTarget,
    Method, ReferenceSet, SimilarityKernel, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn gaussian_vectors(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| gaussian(rng, dim)).collect()
}

/// Random relu MLP through `dims` (input first). The last layer is relu
/// when `relu_output` is set, identity otherwise.
pub fn random_mlp(rng: &mut impl Rng, dims: &[usize], relu_output: bool) -> Encoder {
    let n = dims.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let (cols, rows) = (dims[i], dims[i + 1]);
            let scale = 1.0 / (cols as f64).sqrt();
            let weight = gaussian(rng, rows * cols).into_iter().map(|v| v * scale).collect();
            let bias = gaussian(rng, rows).into_iter().map(|v| 0.1 * v).collect();
            let act = if i + 1 < n || relu_output {
                Activation::Relu
            } else {
                Activation::Identity
            };
            DenseLayer::new(weight, rows, cols, bias, act).unwrap()
        })
        .collect();
    Encoder::new(EncoderKind::MlpRelu, vec![dims[0]], layers).unwrap()
}

/// Plain forward pass, written independently of the library, that also
/// returns the smallest |pre-activation| of any relu unit.
pub fn oracle_forward(encoder: &Encoder, x: &[f64]) -> (Vec<f64>, f64) {
    let mut h = x.to_vec();
    let mut margin = f64::INFINITY;
    for l in encoder.layers() {
        let mut out = vec![0.0; l.rows];
        for (r, o) in out.iter_mut().enumerate() {
            let mut pre = l.bias[r];
            for (w, hc) in l.weight[r * l.cols..(r + 1) * l.cols].iter().zip(&h) {
                pre += w * hc;
            }
            *o = match l.activation {
                Activation::Relu => {
                    margin = margin.min(pre.abs());
                    pre.max(0.0)
                }
                Activation::Identity => pre,
            };
        }
        h = out;
    }
    (h, margin)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean cosine to the corpus minus mean cosine to the foil, summed naively.
pub fn oracle_cocoa(z: &[f64], corpus: &[Vec<f64>], foil: &[Vec<f64>]) -> f64 {
    let c = corpus.iter().map(|r| cosine(z, r)).sum::<f64>() / corpus.len() as f64;
    let f = foil.iter().map(|r| cosine(z, r)).sum::<f64>() / foil.len() as f64;
    c - f
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean with the sample standard deviation.
pub fn std_error(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Insertion and deletion AUCs for one map under one measure.
#[derive(Debug, Clone, Copy)]
pub struct Aucs {
    pub insertion: f64,
    pub deletion: f64,
}

/// AUCs of one synthetic instance, under the contrastive corpus
/// similarity measure and the corpus majority probability measure.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticAucs {
    pub similarity: Aucs,
    pub majority: Aucs,
}

pub struct SyntheticInstance {
    pub task: SyntheticTask,
    pub corpus_images: Vec<Tensor>,
    pub foil_images: Vec<Tensor>,
    pub explicand: Tensor,
    pub target: ExplanationTarget,
    pub similarity: EvalMeasure,
    pub majority: EvalMeasure,
}

fn embed(encoder: &Encoder, images: &[Tensor]) -> Vec<Vec<f64>> {
    images.iter().map(|x| encoder.forward(x).unwrap().into_data()).collect()
}

impl SyntheticInstance {
    /// Corpus of class 0, foil of random classes, explicand of class 0.
    pub fn new(seed: u64) -> Self {
        let task = SyntheticTask::new(SyntheticConfig::default(), seed).unwrap();
        let mut r = rng(seed.wrapping_add(1000));
        let corpus_images: Vec<Tensor> = (0..40).map(|_| task.sample_image(0, &mut r).unwrap()).collect();
        let foil_images: Vec<Tensor> = (0..80)
            .map(|_| {
                let class = r.random_range(0..task.config().classes);
                task.sample_image(class, &mut r).unwrap()
            })
            .collect();
        let explicand = task.sample_image(0, &mut r).unwrap();
        let encoder = task.encoder().clone();
        let corpus = embed(&encoder, &corpus_images);
        let refs = ReferenceSet::new(corpus.clone(), embed(&encoder, &foil_images)).unwrap();
        let target = ExplanationTarget::cocoa(encoder.clone(), SimilarityKernel::cosine(), refs).unwrap();
        let similarity = EvalMeasure::contrastive_corpus_similarity(target.clone());
        let majority = EvalMeasure::corpus_majority_probability(encoder, task.head().clone(), &corpus).unwrap();
        SyntheticInstance {
            task,
            corpus_images,
            foil_images,
            explicand,
            target,
            similarity,
            majority,
        }
    }

    /// The same cocoa target built on `encoder`, references re-embedded.
    pub fn target_with(&self, encoder: &Encoder) -> ExplanationTarget {
        let refs = ReferenceSet::new(embed(encoder, &self.corpus_images), embed(encoder, &self.foil_images)).unwrap();
        ExplanationTarget::cocoa(encoder.clone(), SimilarityKernel::cosine(), refs).unwrap()
    }

    pub fn attribution_config(&self, method: Method, seed: u64) -> AttributionConfig {
        let mut cfg = AttributionConfig::new(method, seed);
        cfg.rise_masks = 2000;
        cfg
    }

    /// AUCs of a `(h, w)` or `(h, w, c)` map.
    pub fn evaluate(&self, map: &Tensor) -> SyntheticAucs {
        let (h, w, _) = self.explicand.spatial_dims().unwrap();
        let map2d = if map.rank() == 3 {
            let m = cocoa::AttributionMap {
                scores: map.clone(),
                provenance: random_attribution(&[1], 0).unwrap().provenance,
            };
            channel_average(&m).unwrap().scores
        } else {
            map.clone()
        };
        let baseline = blur(&self.explicand, default_blur_sigma(h, w)).unwrap();
        let steps = default_steps(h * w);
        let aucs = |m: &EvalMeasure| Aucs {
            insertion: insertion_curve(&map2d, &self.explicand, &baseline, m, steps).unwrap().auc,
            deletion: deletion_curve(&map2d, &self.explicand, &baseline, m, steps).unwrap().auc,
        };
        SyntheticAucs {
            similarity: aucs(&self.similarity),
            majority: aucs(&self.majority),
        }
    }
}

pub fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cocoa"))
}

pub fn run_cli(args: &[&str]) -> Output {
    cli().args(args).output().expect("binary runs")
}

/// A complete run directory on the synthetic task: encoder, head,
/// references, two explicands and a config for `method`.
pub fn write_fixture(dir: &Path, method: &str, seed: u64) -> PathBuf {
    let inst = SyntheticInstance::new(seed);
    write_json(dir.join("encoder.json"), inst.task.encoder()).unwrap();
    write_json(dir.join("head.json"), inst.task.head()).unwrap();
    let mut r = rng(seed);
    for i in 0..2 {
        let x = inst.task.sample_image(0, &mut r).unwrap();
        write_json(dir.join(format!("x{i}.json")), &x).unwrap();
    }
    let refs = serde_json::json!({
        "corpus": inst.target.refs().corpus(),
        "foil_population": inst.target.refs().foil(),
        "foil_size": 30,
        "seed": seed,
    });
    write_json(dir.join("refs.json"), &refs).unwrap();
    let config = serde_json::json!({
        "encoder": "encoder.json",
        "explicands": ["x0.json", "x1.json"],
        "references": "refs.json",
        "target": "cocoa",
        "head": "head.json",
        "attribution": {
            "method": method,
            "seed": seed,
            "ig_steps": 16,
            "gs_samples": 16,
            "rise_masks": 300,
        },
        "evaluation": {"measure": "corpus-majority-probability"},
        "output_dir": "out",
        "heatmap": true,
    });
    let path = dir.join("run.json");
    write_json(&path, &config).unwrap();
    path
}

/// Every file under `dir` with its contents, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
