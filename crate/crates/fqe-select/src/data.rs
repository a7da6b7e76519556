//! Offline transition datasets: reproducible sampling under an explicit query
//! distribution, train/validation splitting, feature embeddings and their
//! standardization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{FqeError, Result};
use crate::mdp::TabularMdp;

/// Deterministic sub-seed derivation (splitmix64 over seed and a tag), so
/// every (operation, seed) pair owns an independent stream.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(tag)
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    n: usize,
    seed: u64,
    mu: Vec<f64>,
}

/// An i.i.d. collection of transition tuples drawn under the query
/// distribution `mu` over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub records: Vec<Transition>,
    pub mu: Vec<f64>,
    pub seed: u64,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Line-delimited serialization: a header object followed by one record
    /// per line. Round-trips bit-exactly.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DatasetHeader { n: self.records.len(), seed: self.seed, mu: self.mu.clone() };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for rec in &self.records {
            writeln!(w, "{}", serde_json::to_string(rec)?)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| FqeError::InvalidArgument("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        let mut records = Vec::with_capacity(header.n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        if records.len() != header.n {
            return Err(FqeError::InvalidArgument(format!(
                "dataset header says n={}, found {} records",
                header.n,
                records.len()
            )));
        }
        Ok(Self { records, mu: header.mu, seed: header.seed })
    }
}

fn sample_index(rng: &mut ChaCha12Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draw `n` i.i.d. transitions: `(s, a) ~ mu`, `r ~ R(s, a)`, `s' ~ T(s, a)`.
pub fn sample_dataset(
    mdp: &TabularMdp,
    mu: &[f64],
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(FqeError::InvalidArgument("dataset size must be positive".into()));
    }
    if mu.len() != mdp.n_pairs() {
        return Err(FqeError::InvalidArgument("mu size mismatch".into()));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || mu.iter().any(|&p| p < 0.0) {
        return Err(FqeError::InvalidArgument("mu is not a probability vector".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x5a17));
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let pair = sample_index(&mut rng, mu);
        let s = pair / mdp.n_actions;
        let a = pair % mdp.n_actions;
        let (lo, hi, p_hi) = mdp.reward_support(s, a);
        let r = if rng.gen::<f64>() < p_hi { hi } else { lo };
        let s_next = sample_index(&mut rng, mdp.transition_row(s, a));
        records.push(Transition { s, a, r, s_next });
    }
    Ok(TransitionDataset { records, mu: mu.to_vec(), seed })
}

/// Disjoint random partition into train and validation parts; the union is
/// the input as a multiset.
pub fn split_dataset(
    d: &TransitionDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(TransitionDataset, TransitionDataset)> {
    let n = d.len();
    if !(0.0..1.0).contains(&train_fraction) || train_fraction <= 0.0 {
        return Err(FqeError::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n_train = ((n as f64) * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(FqeError::InvalidArgument(
            "split would produce an empty train or validation part".into(),
        ));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x5b11));
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let mut train_idx: Vec<usize> = indices[..n_train].to_vec();
    let mut valid_idx: Vec<usize> = indices[n_train..].to_vec();
    train_idx.sort_unstable();
    valid_idx.sort_unstable();
    let pick = |idx: &[usize]| TransitionDataset {
        records: idx.iter().map(|&i| d.records[i]).collect(),
        mu: d.mu.clone(),
        seed: d.seed,
    };
    Ok((pick(&train_idx), pick(&valid_idx)))
}

/// Per-dimension affine standardization fitted on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Indicator embedding over state-action pairs.
    OneHot { n_states: usize, n_actions: usize },
    /// Random linear projection of the one-hot embedding; deliberately lossy
    /// when `dim` is below the number of pairs.
    Projection { n_states: usize, n_actions: usize, dim: usize, weights: Vec<f64> },
}

/// Deterministic map from a state-action pair to a feature vector, with an
/// optional standardization fitted from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub normalization: Option<Normalization>,
}

impl FeatureMap {
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        Self { kind: FeatureKind::OneHot { n_states, n_actions }, normalization: None }
    }

    pub fn random_projection(n_states: usize, n_actions: usize, dim: usize, seed: u64) -> Self {
        let np = n_states * n_actions;
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0xfea7));
        let weights: Vec<f64> = (0..np * dim).map(|_| rng.sample(StandardNormal)).collect();
        Self {
            kind: FeatureKind::Projection { n_states, n_actions, dim, weights },
            normalization: None,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FeatureKind::OneHot { n_states, n_actions } => n_states * n_actions,
            FeatureKind::Projection { dim, .. } => *dim,
        }
    }

    /// `(n_states, n_actions)` of the underlying state-action space.
    pub fn shape(&self) -> (usize, usize) {
        match &self.kind {
            FeatureKind::OneHot { n_states, n_actions }
            | FeatureKind::Projection { n_states, n_actions, .. } => (*n_states, *n_actions),
        }
    }

    fn raw_embed(&self, s: usize, a: usize) -> Vec<f64> {
        match &self.kind {
            FeatureKind::OneHot { n_states, n_actions } => {
                let mut v = vec![0.0; n_states * n_actions];
                v[s * n_actions + a] = 1.0;
                v
            }
            FeatureKind::Projection { n_actions, dim, weights, .. } => {
                let pair = s * n_actions + a;
                weights[pair * dim..(pair + 1) * dim].to_vec()
            }
        }
    }

    pub fn embed(&self, s: usize, a: usize) -> Vec<f64> {
        let mut v = self.raw_embed(s, a);
        if let Some(norm) = &self.normalization {
            for ((x, m), sc) in v.iter_mut().zip(&norm.mean).zip(&norm.scale) {
                *x = (*x - m) / sc;
            }
        }
        v
    }
}

/// Fit a standardization on the (s, a) embeddings of a dataset so each
/// dimension has zero mean and unit variance on the fitting data. Dimensions
/// with negligible variance are centered and left unscaled.
pub fn fit_feature_normalization(features: &FeatureMap, d: &TransitionDataset) -> Result<FeatureMap> {
    if d.len() < 2 {
        return Err(FqeError::InvalidArgument("need at least 2 records to standardize".into()));
    }
    let dim = features.dim();
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let n = d.len() as f64;
    for rec in &d.records {
        let v = features.embed(rec.s, rec.a);
        for i in 0..dim {
            mean[i] += v[i];
            sq[i] += v[i] * v[i];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let scale: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(&sq_i, &m)| {
            let var = (sq_i / n - m * m).max(0.0);
            let sd = var.sqrt();
            if sd < 1e-12 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    let mut out = features.clone();
    // Compose with any existing normalization by fitting on the already
    // normalized embeddings, which `embed` above applied.
    let combined = match &features.normalization {
        None => Normalization { mean, scale },
        Some(prev) => Normalization {
            mean: prev
                .mean
                .iter()
                .zip(&prev.scale)
                .zip(&mean)
                .map(|((pm, ps), m)| pm + m * ps)
                .collect(),
            scale: prev.scale.iter().zip(&scale).map(|(ps, s)| ps * s).collect(),
        },
    };
    out.normalization = Some(combined);
    Ok(out)
}
