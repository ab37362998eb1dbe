//! File formats. Everything is JSON; floats are written in shortest
//! round-trip form and parsed exactly, so every file reloads bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, LinearHead};
use crate::error::{Error, Result};
use crate::foil::sample_foil;
use crate::reference::ReferenceSet;
use crate::tensor::Tensor;

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `bytes` to a temporary file next to `path`, then rename it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_json(path)
}

pub fn load_encoder(path: impl AsRef<Path>) -> Result<Encoder> {
    read_json(path)
}

pub fn load_head(path: impl AsRef<Path>) -> Result<LinearHead> {
    read_json(path)
}

/// On-disk reference set. Each group is given either directly as
/// representation vectors or as tensor files to embed with the run's
/// encoder. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_inputs: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foil: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foil_inputs: Option<Vec<PathBuf>>,
    /// Pool to draw `foil_size` foil samples from when no foil is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foil_population: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foil_population_inputs: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foil_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<Vec<usize>>>,
}

impl ReferenceFile {
    /// Resolve into a [`ReferenceSet`], embedding input files with
    /// `encoder` where needed.
    pub fn resolve(&self, base_dir: &Path, encoder: Option<&Encoder>) -> Result<ReferenceSet> {
        let group = |vectors: &Option<Vec<Vec<f64>>>,
                     inputs: &Option<Vec<PathBuf>>,
                     name: &str|
         -> Result<Option<Vec<Vec<f64>>>> {
            match (vectors, inputs) {
                (Some(_), Some(_)) => Err(Error::invalid(format!(
                    "give either `{name}` or `{name}_inputs`, not both"
                ))),
                (Some(v), None) => Ok(Some(v.clone())),
                (None, Some(paths)) => {
                    let encoder = encoder.ok_or_else(|| {
                        Error::MissingReference(format!("`{name}_inputs` needs an encoder"))
                    })?;
                    let paths: Vec<PathBuf> = paths.iter().map(|p| base_dir.join(p)).collect();
                    Ok(Some(embed_files(encoder, &paths)?))
                }
                (None, None) => Ok(None),
            }
        };
        let corpus = group(&self.corpus, &self.corpus_inputs, "corpus")?.unwrap_or_default();
        let foil = group(&self.foil, &self.foil_inputs, "foil")?;
        let population = group(&self.foil_population, &self.foil_population_inputs, "foil_population")?;

        let (foil, population) = match (foil, population) {
            (Some(f), p) => (f, p),
            (None, Some(pop)) => {
                let m = self.foil_size.ok_or_else(|| {
                    Error::invalid("sampling a foil from a population needs `foil_size`")
                })?;
                let seed = self
                    .seed
                    .ok_or_else(|| Error::invalid("sampling a foil needs an explicit `seed`"))?;
                (sample_foil(&pop, m, seed)?, Some(pop))
            }
            (None, None) => (Vec::new(), None),
        };
        let mut refs = ReferenceSet::new(corpus, foil)?;
        if let Some(groups) = &self.partition {
            refs = refs.with_partition(groups.clone())?;
        }
        if let Some(pop) = population {
            refs = refs.with_foil_population(pop, self.seed.unwrap_or(0))?;
        }
        Ok(refs)
    }
}

pub fn load_references(path: impl AsRef<Path>, encoder: Option<&Encoder>) -> Result<ReferenceSet> {
    let path = path.as_ref();
    let file: ReferenceFile = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    file.resolve(base, encoder).map_err(|e| e.in_file(path))
}

/// Forward every tensor file through `encoder`.
pub fn embed_files(encoder: &Encoder, paths: &[PathBuf]) -> Result<Vec<Vec<f64>>> {
    paths
        .iter()
        .map(|p| {
            let x = load_tensor(p)?;
            Ok(encoder.forward(&x).map_err(|e| e.in_file(p))?.into_data())
        })
        .collect()
}

/// 8-bit binary PGM of a 2-D map, min-max normalized. Lossy: only the
/// ranking and coarse magnitudes survive.
pub fn heatmap_pgm(map2d: &Tensor) -> Result<Vec<u8>> {
    let [h, w] = map2d.shape()[..] else {
        return Err(Error::invalid("heatmaps need a 2-D map"));
    };
    let lo = map2d.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map2d.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map2d.data().iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}
