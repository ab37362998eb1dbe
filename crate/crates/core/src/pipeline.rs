//! The embed / attribute / evaluate pipeline behind the command-line tool.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, channel_average, AttributionConfig, AttributionMap, Method};
use crate::encoder::{Encoder, LinearHead};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, blur, default_blur_sigma, default_steps, deletion_curve, insertion_curve, random_attribution,
    Aggregate, CurveMode, EvalCurve, EvalMeasure, MeasureKind,
};
use crate::foil::trial_seed;
use crate::io::{heatmap_pgm, load_encoder, load_head, load_references, load_tensor, read_json, write_atomic, write_json};
use crate::kernel::{KernelKind, SimilarityKernel, DEFAULT_RBF_GAMMA};
use crate::reference::ReferenceSet;
use crate::target::{ExplanationTarget, TargetBuilder, TargetKind};
use crate::tensor::Tensor;

fn default_kernel() -> KernelKind {
    KernelKind::Cosine
}

fn default_measure() -> MeasureKind {
    MeasureKind::ContrastiveCorpusSimilarity
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_measure")]
    pub measure: MeasureKind,
    /// Curve points; default one per pixel up to 256 pixels.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Baseline blur width; default `min(h, w) / 8`.
    #[serde(default)]
    pub blur_sigma: Option<f64>,
    /// Attribution maps, one per explicand. Defaults to the files written
    /// by `attribute` in the output directory.
    #[serde(default)]
    pub maps: Option<Vec<PathBuf>>,
    /// Evaluate seeded uniform random maps instead of stored ones.
    #[serde(default)]
    pub random: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            measure: default_measure(),
            steps: None,
            blur_sigma: None,
            maps: None,
            random: false,
        }
    }
}

/// A full run description, loadable from JSON. Relative paths resolve
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: PathBuf,
    pub explicands: Vec<PathBuf>,
    #[serde(default)]
    pub references: Option<PathBuf>,
    pub target: TargetKind,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default)]
    pub rbf_gamma: Option<f64>,
    #[serde(default)]
    pub head: Option<PathBuf>,
    #[serde(default)]
    pub class_index: Option<usize>,
    pub attribution: AttributionConfig,
    /// Explicit baseline tensor; default is the blurred explicand.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    #[serde(default)]
    pub evaluation: EvalConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub heatmap: bool,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.encoder);
        self.explicands.iter_mut().for_each(fix);
        self.references.iter_mut().for_each(fix);
        self.head.iter_mut().for_each(fix);
        self.baseline.iter_mut().for_each(fix);
        if let Some(maps) = &mut self.evaluation.maps {
            maps.iter_mut().for_each(fix);
        }
        fix(&mut self.output_dir);
    }

    pub fn similarity_kernel(&self) -> Result<SimilarityKernel> {
        match self.kernel {
            KernelKind::Rbf => SimilarityKernel::rbf(self.rbf_gamma.unwrap_or(DEFAULT_RBF_GAMMA)),
            k => Ok(SimilarityKernel::with_kind(k)),
        }
    }
}

/// Output file stem for an explicand path.
fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "explicand".into())
}

pub fn attribution_path(cfg: &RunConfig, explicand: &Path) -> PathBuf {
    cfg.output_dir.join(format!("{}.attribution.json", stem(explicand)))
}

/// Loaded inputs shared by `attribute` and `evaluate`.
struct Inputs {
    encoder: Encoder,
    refs: ReferenceSet,
    head: Option<LinearHead>,
    explicands: Vec<(PathBuf, Tensor)>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let encoder = load_encoder(&cfg.encoder)?;
    let refs = match &cfg.references {
        Some(p) => load_references(p, Some(&encoder))?,
        None => ReferenceSet::default(),
    };
    let head = cfg.head.as_ref().map(load_head).transpose()?;
    let explicands = cfg
        .explicands
        .iter()
        .map(|p| Ok((p.clone(), load_tensor(p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Inputs {
        encoder,
        refs,
        head,
        explicands,
    })
}

fn build_target(cfg: &RunConfig, inputs: &Inputs, explicand: &Tensor) -> Result<ExplanationTarget> {
    let mut b = TargetBuilder::new(cfg.target, inputs.encoder.clone(), cfg.similarity_kernel()?)
        .refs(inputs.refs.clone());
    if cfg.target.needs_explicand() {
        b = b.explicand(explicand)?;
    }
    if cfg.target == TargetKind::ClassProbability {
        let head = inputs
            .head
            .clone()
            .ok_or_else(|| Error::MissingReference("class-probability target needs `head`".into()))?;
        let class = cfg
            .class_index
            .ok_or_else(|| Error::MissingReference("class-probability target needs `class_index`".into()))?;
        b = b.head(head, class);
    }
    b.build()
}

/// Compute one attribution map per explicand and write them (and optional
/// heatmaps) to the output directory. All targets are validated before any
/// attribution work starts.
pub fn run_attribute(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(cfg)?;
    let mut attr_cfg = cfg.attribution.clone();
    attr_cfg.validate()?;
    if let Some(p) = &cfg.baseline {
        attr_cfg.baseline = Some(load_tensor(p)?);
    }
    let targets = inputs
        .explicands
        .iter()
        .map(|(p, x)| build_target(cfg, &inputs, x).map_err(|e| e.in_file(p)))
        .collect::<Result<Vec<_>>>()?;

    inputs
        .explicands
        .par_iter()
        .zip(targets.par_iter())
        .map(|((path, x), target)| {
            let map = attribute(target, x, &attr_cfg).map_err(|e| e.in_file(path))?;
            let out = attribution_path(cfg, path);
            write_json(&out, &map)?;
            if cfg.heatmap {
                let map2d = if map.scores.rank() == 1 {
                    return Err(Error::invalid("heatmaps need a spatial explicand").in_file(path));
                } else {
                    channel_average(&map)?
                };
                let pgm = cfg.output_dir.join(format!("{}.heatmap.pgm", stem(path)));
                write_atomic(pgm, &heatmap_pgm(&map2d.scores)?)?;
            }
            Ok(out)
        })
        .collect()
}

/// One row of the aggregate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub target: String,
    pub measure: String,
    pub mode: CurveMode,
    pub mean_auc: f64,
    /// Half-width of the 95% confidence interval.
    pub ci95: f64,
    pub n: usize,
}

/// Curves of one explicand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicandCurves {
    pub explicand: String,
    pub insertion: EvalCurve,
    pub deletion: EvalCurve,
    pub provenance: crate::attribution::Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub curves: Vec<ExplicandCurves>,
    pub rows: Vec<ReportRow>,
}

fn build_measure(cfg: &RunConfig, inputs: &Inputs, explicand: &Tensor) -> Result<EvalMeasure> {
    match cfg.evaluation.measure {
        MeasureKind::ContrastiveCorpusSimilarity => {
            Ok(EvalMeasure::contrastive_corpus_similarity(build_target(cfg, inputs, explicand)?))
        }
        MeasureKind::CorpusMajorityProbability => {
            let head = inputs.head.clone().ok_or_else(|| {
                Error::MissingReference("corpus-majority-probability needs `head`".into())
            })?;
            EvalMeasure::corpus_majority_probability(inputs.encoder.clone(), head, inputs.refs.corpus())
        }
    }
}

/// Insertion and deletion curves for every explicand plus the aggregate
/// rows, written as CSV and JSON under the output directory.
pub fn run_evaluate(cfg: &RunConfig) -> Result<EvaluationReport> {
    let inputs = load_inputs(cfg)?;
    let eval = &cfg.evaluation;
    let maps: Vec<AttributionMap> = if eval.random {
        inputs
            .explicands
            .iter()
            .enumerate()
            .map(|(i, (_, x))| random_attribution(x.shape(), trial_seed(cfg.attribution.seed, i as u64)))
            .collect::<Result<_>>()?
    } else {
        let paths: Vec<PathBuf> = match &eval.maps {
            Some(m) => m.clone(),
            None => inputs.explicands.iter().map(|(p, _)| attribution_path(cfg, p)).collect(),
        };
        if paths.len() != inputs.explicands.len() {
            return Err(Error::invalid(format!(
                "{} maps for {} explicands",
                paths.len(),
                inputs.explicands.len()
            )));
        }
        paths.iter().map(read_json).collect::<Result<_>>()?
    };

    let curves = inputs
        .explicands
        .par_iter()
        .zip(maps.par_iter())
        .map(|((path, x), map)| {
            let ctx = |e: Error| e.in_file(path);
            let (h, w, _) = x.spatial_dims().map_err(ctx)?;
            let map2d = match map.scores.rank() {
                2 => map.scores.clone(),
                _ => channel_average(map).map_err(ctx)?.scores,
            };
            map2d.expect_shape(&[h, w]).map_err(ctx)?;
            let baseline = blur(x, eval.blur_sigma.unwrap_or_else(|| default_blur_sigma(h, w)))?;
            let measure = build_measure(cfg, &inputs, x).map_err(ctx)?;
            let steps = eval.steps.unwrap_or_else(|| default_steps(h * w));
            let insertion = insertion_curve(&map2d, x, &baseline, &measure, steps).map_err(ctx)?;
            let deletion = deletion_curve(&map2d, x, &baseline, &measure, steps).map_err(ctx)?;
            let name = stem(path);
            write_atomic(cfg.output_dir.join(format!("{name}.insertion.csv")), insertion.to_csv().as_bytes())?;
            write_atomic(cfg.output_dir.join(format!("{name}.deletion.csv")), deletion.to_csv().as_bytes())?;
            let entry = ExplicandCurves {
                explicand: name.clone(),
                insertion,
                deletion,
                provenance: map.provenance.clone(),
            };
            write_json(cfg.output_dir.join(format!("{name}.curves.json")), &entry)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    if curves.is_empty() {
        return Err(Error::invalid("no explicands to evaluate"));
    }
    let first = &curves[0].provenance;
    let method = if eval.random {
        Method::Random.name().to_string()
    } else {
        first.method.name().to_string()
    };
    let measure_name = match eval.measure {
        MeasureKind::ContrastiveCorpusSimilarity => "contrastive-corpus-similarity",
        MeasureKind::CorpusMajorityProbability => "corpus-majority-probability",
    };
    let row = |mode: CurveMode, agg: Aggregate| ReportRow {
        method: method.clone(),
        target: first.target.clone(),
        measure: measure_name.to_string(),
        mode,
        mean_auc: agg.mean_auc,
        ci95: agg.ci95,
        n: agg.n,
    };
    let ins: Vec<EvalCurve> = curves.iter().map(|c| c.insertion.clone()).collect();
    let del: Vec<EvalCurve> = curves.iter().map(|c| c.deletion.clone()).collect();
    let rows = vec![
        row(CurveMode::Insertion, aggregate(&ins)?),
        row(CurveMode::Deletion, aggregate(&del)?),
    ];
    write_json(cfg.output_dir.join("aggregate.json"), &rows)?;
    let mut csv = String::from("method,target,measure,mode,mean_auc,ci95,n\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{:?},{:?},{}\n",
            r.method,
            r.target,
            r.measure,
            r.mode.name(),
            r.mean_auc,
            r.ci95,
            r.n
        ));
    }
    write_atomic(cfg.output_dir.join("aggregate.csv"), csv.as_bytes())?;
    Ok(EvaluationReport { curves, rows })
}

/// Forward every input through the encoder and write the representations
/// as a JSON array of vectors.
pub fn run_embed(encoder: &Path, inputs: &[PathBuf], out: &Path) -> Result<Vec<Vec<f64>>> {
    let encoder = load_encoder(encoder)?;
    let vectors = crate::io::embed_files(&encoder, inputs)?;
    write_json(out, &vectors)?;
    Ok(vectors)
}
