//! Corpus and foil representation sets.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::check_finite;

/// The corpus `C`, the foil sample `F`, and optional extras.
///
/// Vectors are stored in a canonical (lexicographic) order, so two sets
/// holding the same vectors in different input orders behave identically
/// down to the last bit. Partition indices refer to the order the corpus
/// was supplied in and are remapped internally.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceSet {
    corpus: Vec<Vec<f64>>,
    foil: Vec<Vec<f64>>,
    partition: Option<Vec<Vec<usize>>>,
    foil_population: Option<Vec<Vec<f64>>>,
    seed: Option<u64>,
    /// `canonical_index[i]` is where input corpus vector `i` ended up.
    canonical_index: Vec<usize>,
}

impl ReferenceSet {
    pub fn new(corpus: Vec<Vec<f64>>, foil: Vec<Vec<f64>>) -> Result<Self> {
        let dim = corpus.first().or(foil.first()).map(Vec::len);
        for v in corpus.iter().chain(&foil) {
            if Some(v.len()) != dim {
                return Err(Error::shape(&[dim.unwrap_or(0)], &[v.len()]));
            }
            check_finite(v, "reference vector")?;
        }
        if dim == Some(0) {
            return Err(Error::invalid("reference vectors must be nonempty"));
        }
        let (corpus, canonical_index) = canonical_order(corpus);
        let (foil, _) = canonical_order(foil);
        Ok(ReferenceSet {
            corpus,
            foil,
            canonical_index,
            ..Default::default()
        })
    }

    /// Attach a partition of corpus indices into sub-corpora. Groups must be
    /// nonempty, disjoint, and together cover every corpus index.
    pub fn with_partition(mut self, groups: Vec<Vec<usize>>) -> Result<Self> {
        let n = self.corpus.len();
        let mut seen = vec![false; n];
        for group in &groups {
            if group.is_empty() {
                return Err(Error::invalid("sub-corpus groups must be nonempty"));
            }
            for &i in group {
                if i >= n {
                    return Err(Error::invalid(format!(
                        "partition index {i} out of range for a corpus of {n}"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!(
                        "partition groups overlap at index {i}"
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!(
                "partition does not cover corpus index {missing}"
            )));
        }
        let remapped = groups
            .into_iter()
            .map(|g| {
                let mut g: Vec<usize> = g.into_iter().map(|i| self.canonical_index[i]).collect();
                g.sort_unstable();
                g
            })
            .collect();
        self.partition = Some(remapped);
        Ok(self)
    }

    /// Record the population the foil was drawn from.
    pub fn with_foil_population(mut self, population: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if let Some(d) = self.dim() {
            if let Some(v) = population.iter().find(|v| v.len() != d) {
                return Err(Error::shape(&[d], &[v.len()]));
            }
        }
        self.foil_population = Some(population);
        self.seed = Some(seed);
        Ok(self)
    }

    pub fn corpus(&self) -> &[Vec<f64>] {
        &self.corpus
    }

    pub fn foil(&self) -> &[Vec<f64>] {
        &self.foil
    }

    /// Sub-corpus groups as indices into [`corpus`](Self::corpus).
    pub fn partition(&self) -> Option<&[Vec<usize>]> {
        self.partition.as_deref()
    }

    pub fn foil_population(&self) -> Option<&[Vec<f64>]> {
        self.foil_population.as_deref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn dim(&self) -> Option<usize> {
        self.corpus.first().or(self.foil.first()).map(Vec::len)
    }

    /// The same set with the corpus replaced by one sub-corpus group.
    pub(crate) fn restricted_to(&self, group: &[usize]) -> ReferenceSet {
        ReferenceSet {
            corpus: group.iter().map(|&i| self.corpus[i].clone()).collect(),
            foil: self.foil.clone(),
            canonical_index: (0..group.len()).collect(),
            ..Default::default()
        }
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn canonical_order(vectors: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| lexicographic(&vectors[a], &vectors[b]).then(a.cmp(&b)));
    let mut position = vec![0; vectors.len()];
    for (pos, &orig) in order.iter().enumerate() {
        position[orig] = pos;
    }
    let mut slots: Vec<Option<Vec<f64>>> = vectors.into_iter().map(Some).collect();
    let sorted = order.iter().map(|&i| slots[i].take().unwrap()).collect();
    (sorted, position)
}
