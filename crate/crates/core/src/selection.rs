//! Power-law chain selection and training-set expansion.
//!
//! For a best-first list of `k` chains the weights are `v_1 = 1` and
//! `v_i = i^(-alpha)`. Selection scans from the worst chain to the best,
//! accepting chain `i` with probability `v_i`; since `v_1 = 1` the scan
//! always ends with a choice. The weights are not normalised.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{DatasetError, Item, LabeledDataset, Provenance};
use crate::ops::apply_chain;
use crate::policy::ScoredChain;
use crate::rng::stream_for;

pub const DEFAULT_ALPHA: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("need at least one chain")]
    NoChains,
    #[error("alpha must be a positive finite number, got {0}")]
    BadAlpha(f64),
    #[error("expansion factor must be >= 1, got {0}")]
    BadFactor(f64),
    #[error("{weights} weights for {chains} chains")]
    LengthMismatch { weights: usize, chains: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoWeights {
    alpha: f64,
    values: Vec<f64>,
}

impl ParetoWeights {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Probability that [`select_index`] returns each index, computed from
    /// the scan order: `P(i) = v_i * prod_{j > i} (1 - v_j)`.
    pub fn selection_distribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        let mut reach = 1.0;
        for (i, &v) in self.values.iter().enumerate().rev() {
            out[i] = reach * v;
            reach *= 1.0 - v;
        }
        out
    }
}

pub fn pareto_weights(k: usize, alpha: f64) -> Result<ParetoWeights, SelectionError> {
    if k == 0 {
        return Err(SelectionError::NoChains);
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(SelectionError::BadAlpha(alpha));
    }
    let values = (1..=k).map(|i| if i <= 1 { 1.0 } else { (i as f64).powf(-alpha) }).collect();
    Ok(ParetoWeights { alpha, values })
}

/// Zero-based index of the chosen chain. Draws once per rejected or accepted
/// candidate below the best; the best is taken without a draw.
pub fn select_index<R: Rng + ?Sized>(weights: &ParetoWeights, rng: &mut R) -> usize {
    for i in (1..weights.values.len()).rev() {
        if rng.gen::<f64>() < weights.values[i] {
            return i;
        }
    }
    0
}

pub fn select_chain<'a, R: Rng + ?Sized>(
    chains: &'a [ScoredChain],
    weights: &ParetoWeights,
    rng: &mut R,
) -> Result<&'a ScoredChain, SelectionError> {
    if chains.len() != weights.len() {
        return Err(SelectionError::LengthMismatch { weights: weights.len(), chains: chains.len() });
    }
    Ok(&chains[select_index(weights, rng)])
}

/// `ceil((factor - 1) * n)`, ignoring binary noise below 1e-9.
pub fn augmented_count(factor: f64, n: usize) -> usize {
    let x = (factor - 1.0) * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Keeps every original item once and appends `ceil((factor - 1) * n)`
/// generated items. Each generated item `j` uses its own stream derived
/// from `(seed, j)`: it draws a source uniformly from the originals, picks a
/// chain with [`select_index`] and applies it once.
pub fn expand_dataset(
    original: &LabeledDataset,
    chains: &[ScoredChain],
    alpha: f64,
    factor: f64,
    seed: u64,
) -> Result<LabeledDataset, SelectionError> {
    if chains.is_empty() {
        return Err(SelectionError::NoChains);
    }
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(SelectionError::BadFactor(factor));
    }
    let weights = pareto_weights(chains.len(), alpha)?;
    let sources: Vec<&Item> = original.items().iter().collect();
    let n = sources.len();
    let extra = augmented_count(factor, n);

    let generated: Vec<Item> = (0..extra)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_for(seed, j as u64);
            let source = rng.gen_range(0..n as u64) as usize;
            let chain = select_index(&weights, &mut rng);
            let src = sources[source];
            Item {
                image: apply_chain(&src.image, &chains[chain].chain, &mut rng),
                label: src.label,
                provenance: Provenance::Augmented { source, chain },
            }
        })
        .collect();

    let mut items = original.items().to_vec();
    items.extend(generated);
    Ok(LabeledDataset::new(items, original.class_count())?)
}

/// Per-chain usage counts among the generated items.
pub fn chain_usage(data: &LabeledDataset, chains: usize) -> Vec<usize> {
    let mut counts = vec![0; chains];
    for item in data.items() {
        if let Provenance::Augmented { chain, .. } = item.provenance {
            if chain < chains {
                counts[chain] += 1;
            }
        }
    }
    counts
}
