//! Normalized positive semidefinite kernels over state-action pairs, exact
//! dual RKHS norm oracles on finite spaces, and the kernel Bellman loss
//! V-statistic.
//!
//! Since the state-action space is finite, every dataset-level double sum
//! collapses onto the grid of pairs: residuals are aggregated per pair and
//! the quadratic form is evaluated on the pair-level Gram matrix. This is
//! exact (the kernel only sees the pair identity) and keeps the summation
//! order fixed regardless of how the work might be partitioned.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{FeatureMap, TransitionDataset};
use crate::error::{FqeError, Result};
use crate::mdp::{Policy, QFunction};
use crate::ops::{apply_operator, BellmanOperatorCandidate, OperatorContext};

/// Numerical slack below which a quadratic form is treated as zero rather
/// than evidence of a non-PSD kernel.
const PSD_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `exp(-d_2^2 / sigma^2)`.
    Gaussian { sigma: f64 },
    /// `exp(-d_p / sigma)` with `p` in {1, 2}.
    Exponential { p: u8, sigma: f64 },
    /// Identically one.
    Constant,
}

/// A normalized kernel on state-action pairs, computed on feature embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub embedding: FeatureMap,
}

impl Kernel {
    pub fn new(kind: KernelKind, embedding: FeatureMap) -> Result<Self> {
        match kind {
            KernelKind::Gaussian { sigma } if sigma <= 0.0 => {
                Err(FqeError::InvalidArgument(format!("kernel bandwidth {sigma} must be positive")))
            }
            KernelKind::Exponential { p, sigma } => {
                if sigma <= 0.0 {
                    return Err(FqeError::InvalidArgument(format!(
                        "kernel bandwidth {sigma} must be positive"
                    )));
                }
                if p != 1 && p != 2 {
                    return Err(FqeError::InvalidArgument(format!("exponent p={p} not in {{1, 2}}")));
                }
                Ok(Self { kind, embedding })
            }
            _ => Ok(Self { kind, embedding }),
        }
    }

    /// Parse a kernel spec string such as `exp:p=1:sigma=0.1`,
    /// `gauss:sigma=1.0`, or `const`.
    pub fn parse(spec: &str, embedding: FeatureMap) -> Result<Self> {
        let kind = KernelKind::from_str(spec)?;
        Self::new(kind, embedding)
    }

    pub fn n_pairs(&self) -> usize {
        let (s, a) = self.embedding.shape();
        s * a
    }

    fn distance(&self, u: &[f64], v: &[f64], p: u8) -> f64 {
        match p {
            1 => u.iter().zip(v).map(|(x, y)| (x - y).abs()).sum(),
            _ => u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }

    fn eval_embedded(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Constant => 1.0,
            KernelKind::Gaussian { sigma } => {
                let d = self.distance(u, v, 2);
                (-d * d / (sigma * sigma)).exp()
            }
            KernelKind::Exponential { p, sigma } => (-self.distance(u, v, p) / sigma).exp(),
        }
    }
}

impl FromStr for KernelKind {
    type Err = FqeError;

    fn from_str(s: &str) -> Result<Self> {
        fn param(piece: &str, name: &str) -> Result<f64> {
            let rest = piece
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| FqeError::Config(format!("expected {name}=<value>, got '{piece}'")))?;
            rest.parse::<f64>()
                .map_err(|_| FqeError::Config(format!("bad number in kernel spec: '{rest}'")))
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["const"] => Ok(KernelKind::Constant),
            ["gauss", sig] => Ok(KernelKind::Gaussian { sigma: param(sig, "sigma")? }),
            ["exp", p, sig] => {
                let p_val = param(p, "p")?;
                if p_val != 1.0 && p_val != 2.0 {
                    return Err(FqeError::Config(format!("p must be 1 or 2 in '{s}'")));
                }
                Ok(KernelKind::Exponential { p: p_val as u8, sigma: param(sig, "sigma")? })
            }
            _ => Err(FqeError::Config(format!("unrecognized kernel spec '{s}'"))),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Constant => write!(f, "const"),
            KernelKind::Gaussian { sigma } => write!(f, "gauss:sigma={sigma}"),
            KernelKind::Exponential { p, sigma } => write!(f, "exp:p={p}:sigma={sigma}"),
        }
    }
}

/// Kernel value between two state-action pairs.
pub fn kernel_eval(k: &Kernel, u: (usize, usize), v: (usize, usize)) -> f64 {
    let eu = k.embedding.embed(u.0, u.1);
    let ev = k.embedding.embed(v.0, v.1);
    k.eval_embedded(&eu, &ev)
}

/// Gram matrix over the full state-action grid, in pair-index order.
pub fn gram_matrix(k: &Kernel) -> DMatrix<f64> {
    let (n_states, n_actions) = k.embedding.shape();
    let np = n_states * n_actions;
    let embeds: Vec<Vec<f64>> = (0..np)
        .map(|cell| k.embedding.embed(cell / n_actions, cell % n_actions))
        .collect();
    DMatrix::from_fn(np, np, |i, j| k.eval_embedded(&embeds[i], &embeds[j]))
}

/// Exact dual RKHS norm of `g` under the weighting `mu`:
/// `sqrt(g' diag(mu) K diag(mu) g)` over the finite pair space.
pub fn dual_norm_exact(k: &Kernel, g: &[f64], mu: &[f64]) -> Result<f64> {
    let np = k.n_pairs();
    if g.len() != np || mu.len() != np {
        return Err(FqeError::InvalidArgument("g/mu size mismatch with kernel space".into()));
    }
    let gram = gram_matrix(k);
    let v = DVector::from_iterator(np, mu.iter().zip(g).map(|(&m, &x)| m * x));
    let quad = (v.transpose() * &gram * &v)[(0, 0)];
    if quad < -PSD_SLACK {
        return Err(FqeError::KernelNotPsd(quad));
    }
    Ok(quad.max(0.0).sqrt())
}

/// The dual norm computed by substituting the closed-form maximizer
/// `f* = K diag(mu) g / ||.||` into `E_mu[f g]`. Independent of
/// `dual_norm_exact`'s quadratic-form route; agrees with it on PSD kernels.
pub fn dual_norm_via_maximizer(k: &Kernel, g: &[f64], mu: &[f64]) -> Result<f64> {
    let np = k.n_pairs();
    if g.len() != np || mu.len() != np {
        return Err(FqeError::InvalidArgument("g/mu size mismatch with kernel space".into()));
    }
    let gram = gram_matrix(k);
    let alpha = DVector::from_iterator(np, mu.iter().zip(g).map(|(&m, &x)| m * x));
    let f = &gram * &alpha;
    let norm_sq = alpha.dot(&f);
    if norm_sq < -PSD_SLACK {
        return Err(FqeError::KernelNotPsd(norm_sq));
    }
    if norm_sq <= 0.0 {
        return Ok(0.0);
    }
    let inner: f64 = mu.iter().zip(g).zip(f.iter()).map(|((&m, &gv), &fv)| m * gv * fv).sum();
    Ok(inner / norm_sq.sqrt())
}

/// Best value of `E_mu[f g]` over `trials` random unit-ball RKHS functions
/// `f = K alpha` with `alpha' K alpha = 1`. A stochastic lower bound on the
/// dual norm.
pub fn dual_norm_maximizer_check(k: &Kernel, g: &[f64], mu: &[f64], trials: usize) -> Result<f64> {
    let np = k.n_pairs();
    if g.len() != np || mu.len() != np {
        return Err(FqeError::InvalidArgument("g/mu size mismatch with kernel space".into()));
    }
    let gram = gram_matrix(k);
    let mut rng = ChaCha12Rng::seed_from_u64(0xd0a1_4053);
    let mut best = 0.0f64;
    for _ in 0..trials {
        let alpha = DVector::from_fn(np, |_, _| StandardNormal.sample(&mut rng));
        let f = &gram * &alpha;
        let norm_sq = alpha.dot(&f);
        if norm_sq <= PSD_SLACK {
            continue;
        }
        let scale = norm_sq.sqrt();
        let inner: f64 =
            mu.iter().zip(g).zip(f.iter()).map(|((&m, &gv), &fv)| m * gv * fv).sum::<f64>() / scale;
        best = best.max(inner.abs());
    }
    Ok(best)
}

/// Kernel Bellman loss V-statistic from precomputed residuals and their
/// pair indices: `(1/n^2) sum_{i,j} kappa(u_i, u_j) e_i e_j`.
pub fn kernel_loss_from_residuals(k: &Kernel, cells: &[usize], residuals: &[f64]) -> Result<f64> {
    if cells.len() != residuals.len() || cells.is_empty() {
        return Err(FqeError::InvalidArgument("residuals and cells must align and be non-empty".into()));
    }
    let np = k.n_pairs();
    let mut sums = vec![0.0; np];
    for (&c, &e) in cells.iter().zip(residuals) {
        if c >= np {
            return Err(FqeError::InvalidArgument(format!("pair index {c} out of range")));
        }
        sums[c] += e;
    }
    let gram = gram_matrix(k);
    let mut total = 0.0;
    for i in 0..np {
        if sums[i] == 0.0 {
            continue;
        }
        for j in 0..np {
            total += gram[(i, j)] * sums[i] * sums[j];
        }
    }
    let n = cells.len() as f64;
    Ok(total / (n * n))
}

/// Kernel Bellman loss of candidate `x` at function `f` on dataset `d`.
/// Residuals are `r_i + gamma * E_{a' ~ pi(s'_i)} f(s'_i, a') - (Xf)(u_i)`.
pub fn kernel_bellman_loss(
    k: &Kernel,
    x: &BellmanOperatorCandidate,
    f: &QFunction,
    d: &TransitionDataset,
    policy: &Policy,
    ctx: &OperatorContext,
) -> Result<f64> {
    if d.is_empty() {
        return Err(FqeError::InvalidArgument("empty dataset".into()));
    }
    let xf = apply_operator(x, f, ctx);
    let gamma = ctx.horizon.gamma;
    let mut next_means = vec![0.0; f.n_states];
    for (s, m) in next_means.iter_mut().enumerate() {
        *m = f.policy_mean(policy, s);
    }
    let n_actions = f.n_actions;
    let mut cells = Vec::with_capacity(d.len());
    let mut residuals = Vec::with_capacity(d.len());
    for rec in &d.records {
        cells.push(rec.s * n_actions + rec.a);
        residuals.push(rec.r + gamma * next_means[rec.s_next] - xf.get(rec.s, rec.a));
    }
    kernel_loss_from_residuals(k, &cells, &residuals)
}

/// RKHS norm of the minimum-norm interpolant of `w` on the finite pair
/// grid: `sqrt(w' K^+ w)`. Returns infinity when `w` has a component
/// outside the Gram matrix's range (e.g. a non-constant `w` under the
/// constant kernel), in which case no interpolant exists in the space.
pub fn rkhs_interpolant_norm(k: &Kernel, w: &[f64]) -> Result<f64> {
    let np = k.n_pairs();
    if w.len() != np {
        return Err(FqeError::InvalidArgument("w size mismatch with kernel space".into()));
    }
    let gram = gram_matrix(k);
    let eig = gram.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = max_eig * 1e-12 * np as f64;
    let coords = eig.eigenvectors.transpose() * DVector::from_column_slice(w);
    let mut norm_sq = 0.0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            norm_sq += coords[i] * coords[i] / lambda;
        } else if coords[i].abs() > 1e-8 * (1.0 + max_eig) {
            return Ok(f64::INFINITY);
        }
    }
    Ok(norm_sq.sqrt())
}

/// Minimum eigenvalue of the kernel's Gram matrix over the full pair grid.
pub fn gram_min_eigenvalue(k: &Kernel) -> f64 {
    let gram = gram_matrix(k);
    gram.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// The six exponential kernels from the standard configuration grid,
/// p in {1, 2} crossed with sigma in {0.1, 1, 10}.
pub fn exponential_grid(embedding: &FeatureMap) -> Result<Vec<Kernel>> {
    let mut out = Vec::with_capacity(6);
    for p in [1u8, 2] {
        for sigma in [0.1, 1.0, 10.0] {
            out.push(Kernel::new(KernelKind::Exponential { p, sigma }, embedding.clone())?);
        }
    }
    Ok(out)
}
