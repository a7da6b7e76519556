//! Iterative policy-evaluation drivers (finite-horizon and fixed-point
//! averaging modes), the four data-driven selection rules over candidate
//! operators, and the exact tabular oracles used to score them: value gaps,
//! precriteria, and the linear error bounds they certify.

use serde::Serialize;

use crate::data::TransitionDataset;
use crate::error::{FqeError, Result};
use crate::kernel::{dual_norm_exact, kernel_loss_from_residuals, rkhs_interpolant_norm, Kernel};
use crate::mdp::{
    bellman_backup_unclipped, exact_q, occupancy_profile, policy_value, OccupancyProfile, Policy,
    QFunction,
};
use crate::ops::{
    apply_operator, bellman_error_l2, operator_error_sup, BellmanOperatorCandidate, CandidateSet,
    OperatorContext,
};

/// Probe count used by the suboptimality proxy's operator-level error
/// estimate.
const PROXY_PROBES: usize = 8;

/// Iterates of one candidate operator: plain iterates in finite-horizon mode,
/// running averages in fixed-point mode.
#[derive(Debug, Clone)]
pub struct QFunctionSeq {
    /// Index h holds the h-th iterate (or running average); index 0 is the
    /// zero function.
    pub iterates: Vec<QFunction>,
    pub terminal: QFunction,
    /// Step at which consecutive iterates coincided, if they did.
    pub fp_exit_step: Option<usize>,
}

/// Configuration for the fixed-point averaging driver.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointConfig {
    pub h_star: usize,
    pub fp_tolerance: f64,
}

impl FixedPointConfig {
    /// Default step count `ceil(n^{1/4})` for a dataset of size `n`.
    pub fn for_dataset_size(n: usize) -> Self {
        let h_star = ((n as f64).powf(0.25).ceil() as usize).max(1);
        Self { h_star, fp_tolerance: 1e-12 }
    }

    pub fn with_steps(h_star: usize) -> Result<Self> {
        if h_star == 0 {
            return Err(FqeError::InvalidArgument("h_star must be at least 1".into()));
        }
        Ok(Self { h_star, fp_tolerance: 1e-12 })
    }
}

/// Outcome of one selection rule, including oracle diagnostics that require
/// the tabular ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub method: String,
    pub candidate_ids: Vec<String>,
    pub per_candidate_scores: Vec<f64>,
    pub selected_index: usize,
    pub selected_id: String,
    /// Value gap of the selected candidate's output.
    pub delta_j: f64,
    /// Absolute value gaps for every candidate.
    pub abs_delta_j_all: Vec<f64>,
    /// |delta_j of the winner| minus the best achievable |delta_j|.
    pub excess_mae: f64,
    /// Linear upper bound on |delta_j| certified for the winner; infinite
    /// when the weight-norm surrogate is infinite.
    pub bound_value: f64,
    /// Computable stand-in for the criterion suboptimality; labeled a proxy
    /// because the exact link function is not computable.
    pub suboptimality_proxy: f64,
}

impl std::fmt::Display for SelectionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "method: {}", self.method)?;
        writeln!(f, "selected: {} (index {})", self.selected_id, self.selected_index)?;
        for (id, score) in self.candidate_ids.iter().zip(&self.per_candidate_scores) {
            writeln!(f, "  score[{id}] = {score:.17e}")?;
        }
        writeln!(f, "delta_j: {:.17e}", self.delta_j)?;
        writeln!(f, "excess_mae: {:.17e}", self.excess_mae)?;
        writeln!(f, "bound_value: {:.17e}", self.bound_value)?;
        write!(f, "suboptimality_proxy (proxy): {:.17e}", self.suboptimality_proxy)
    }
}

/// Run the finite-horizon iteration `Q_0 = 0`, `Q_h = X Q_{h-1}` for
/// `h = 1..=H`.
pub fn meta_fqe(x: &BellmanOperatorCandidate, ctx: &OperatorContext) -> Result<QFunctionSeq> {
    let h_max = match ctx.horizon.horizon {
        crate::mdp::Horizon::Finite(h) => h,
        crate::mdp::Horizon::Infinite => {
            return Err(FqeError::InvalidHorizon(
                "finite-horizon iteration requires a finite horizon".into(),
            ))
        }
    };
    let mut iterates = Vec::with_capacity(h_max + 1);
    iterates.push(QFunction::zero(ctx.mdp.n_states, ctx.mdp.n_actions));
    for h in 1..=h_max {
        let next = apply_operator(x, &iterates[h - 1], ctx);
        iterates.push(next);
    }
    let terminal = iterates.last().unwrap().clone();
    Ok(QFunctionSeq { iterates, terminal, fp_exit_step: None })
}

/// Run the fixed-point averaging iteration: maintain the running average of
/// the iterates for `h_star` steps, exiting early with the iterate itself if
/// two consecutive iterates coincide within `fp_tolerance` in sup-norm.
pub fn meta_fqe_fp(
    x: &BellmanOperatorCandidate,
    cfg: &FixedPointConfig,
    ctx: &OperatorContext,
) -> Result<QFunctionSeq> {
    if ctx.horizon.gamma >= 1.0 {
        return Err(FqeError::InvalidHorizon(
            "fixed-point iteration requires a discount factor below one".into(),
        ));
    }
    if cfg.h_star == 0 {
        return Err(FqeError::InvalidArgument("h_star must be at least 1".into()));
    }
    let zero = QFunction::zero(ctx.mdp.n_states, ctx.mdp.n_actions);
    let mut averages = vec![zero.clone()];
    let mut q_prev = zero;
    for h in 1..=cfg.h_star {
        let q_h = apply_operator(x, &q_prev, ctx);
        if h > 1 && q_h.sup_distance(&q_prev) <= cfg.fp_tolerance {
            return Ok(QFunctionSeq { iterates: averages, terminal: q_h, fp_exit_step: Some(h) });
        }
        let prev_avg = averages.last().unwrap();
        let weight = 1.0 / h as f64;
        let values: Vec<f64> = prev_avg
            .values
            .iter()
            .zip(&q_h.values)
            .map(|(&avg, &q)| (1.0 - weight) * avg + weight * q)
            .collect();
        averages.push(QFunction {
            n_states: q_h.n_states,
            n_actions: q_h.n_actions,
            values,
        });
        q_prev = q_h;
    }
    let terminal = averages.last().unwrap().clone();
    Ok(QFunctionSeq { iterates: averages, terminal, fp_exit_step: None })
}

fn residuals_for(
    xf: &QFunction,
    f: &QFunction,
    d: &TransitionDataset,
    policy: &Policy,
    gamma: f64,
) -> (Vec<usize>, Vec<f64>) {
    let mut next_means = vec![0.0; f.n_states];
    for (s, m) in next_means.iter_mut().enumerate() {
        *m = f.policy_mean(policy, s);
    }
    let mut cells = Vec::with_capacity(d.len());
    let mut residuals = Vec::with_capacity(d.len());
    for rec in &d.records {
        cells.push(rec.s * f.n_actions + rec.a);
        residuals.push(rec.r + gamma * next_means[rec.s_next] - xf.get(rec.s, rec.a));
    }
    (cells, residuals)
}

/// Empirical squared Bellman loss of candidate `x` at probe function `f`.
pub fn squared_bellman_loss(
    x: &BellmanOperatorCandidate,
    f: &QFunction,
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<f64> {
    if d.is_empty() {
        return Err(FqeError::InvalidArgument("empty dataset".into()));
    }
    let xf = apply_operator(x, f, ctx);
    let (_, residuals) = residuals_for(&xf, f, d, ctx.policy, ctx.horizon.gamma);
    Ok(residuals.iter().map(|e| e * e).sum::<f64>() / d.len() as f64)
}

/// Squared Bellman loss of the identity operator at `f`: the residual
/// compares `f` against its own one-step targets.
pub fn identity_bellman_loss(
    f: &QFunction,
    d: &TransitionDataset,
    policy: &Policy,
    gamma: f64,
) -> Result<f64> {
    if d.is_empty() {
        return Err(FqeError::InvalidArgument("empty dataset".into()));
    }
    let (_, residuals) = residuals_for(f, f, d, policy, gamma);
    Ok(residuals.iter().map(|e| e * e).sum::<f64>() / d.len() as f64)
}

/// Kernel Bellman loss of the identity operator at `f`.
pub fn kernel_identity_loss(
    k: &Kernel,
    f: &QFunction,
    d: &TransitionDataset,
    policy: &Policy,
    gamma: f64,
) -> Result<f64> {
    if d.is_empty() {
        return Err(FqeError::InvalidArgument("empty dataset".into()));
    }
    let (cells, residuals) = residuals_for(f, f, d, policy, gamma);
    kernel_loss_from_residuals(k, &cells, &residuals)
}

/// Loss of `x` at `f` minus the best loss over the candidate set.
pub fn bellman_regret(
    x: &BellmanOperatorCandidate,
    cset: &CandidateSet,
    f: &QFunction,
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<f64> {
    if !cset.candidates.iter().any(|c| c.id == x.id) {
        return Err(FqeError::InvalidArgument(format!("candidate {} not in set", x.id)));
    }
    let own = squared_bellman_loss(x, f, d, ctx)?;
    let mut best = f64::INFINITY;
    for c in &cset.candidates {
        best = best.min(squared_bellman_loss(c, f, d, ctx)?);
    }
    Ok((own - best).max(0.0))
}

fn horizon_steps(ctx: &OperatorContext) -> Result<usize> {
    match ctx.horizon.horizon {
        crate::mdp::Horizon::Finite(h) => Ok(h),
        crate::mdp::Horizon::Infinite => Err(FqeError::InvalidHorizon(
            "discounted-sum scores require a finite horizon".into(),
        )),
    }
}

/// Discounted aggregate of square-rooted per-step regrets along `x`'s own
/// iterates.
pub fn total_regret(
    x: &BellmanOperatorCandidate,
    cset: &CandidateSet,
    seq: &QFunctionSeq,
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<f64> {
    let h_max = horizon_steps(ctx)?;
    let c = ctx.time_constant();
    let gamma = ctx.horizon.gamma;
    let mut total = 0.0;
    for h in 1..=h_max {
        let regret = bellman_regret(x, cset, &seq.iterates[h - 1], d, ctx)?;
        total += gamma.powi((h_max - h) as i32) * regret.sqrt();
    }
    Ok(total / c)
}

/// Discounted aggregate of square-rooted kernel Bellman losses along `x`'s
/// own iterates.
pub fn total_kernel_loss(
    x: &BellmanOperatorCandidate,
    k: &Kernel,
    seq: &QFunctionSeq,
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<f64> {
    let h_max = horizon_steps(ctx)?;
    let c = ctx.time_constant();
    let gamma = ctx.horizon.gamma;
    let mut total = 0.0;
    for h in 1..=h_max {
        let f = &seq.iterates[h - 1];
        let xf = apply_operator(x, f, ctx);
        let (cells, residuals) = residuals_for(&xf, f, d, ctx.policy, gamma);
        let loss = kernel_loss_from_residuals(k, &cells, &residuals)?;
        total += gamma.powi((h_max - h) as i32) * loss.max(0.0).sqrt();
    }
    Ok(total / c)
}

/// Exact discounted aggregate of per-step Bellman error norms along `x`'s
/// iterates; the population quantity the empirical scores estimate.
pub fn precriterion_l2(
    x: &BellmanOperatorCandidate,
    seq: &QFunctionSeq,
    mu: &[f64],
    ctx: &OperatorContext,
) -> Result<f64> {
    let h_max = horizon_steps(ctx)?;
    let c = ctx.time_constant();
    let gamma = ctx.horizon.gamma;
    let mut total = 0.0;
    for h in 1..=h_max {
        total += gamma.powi((h_max - h) as i32)
            * bellman_error_l2(x, &seq.iterates[h - 1], mu, ctx);
    }
    Ok(total / c)
}

/// Linear upper bound on the absolute value gap of `x`'s finite-horizon
/// output: `C * max_h ||w_h||_2 * precriterion`.
pub fn master_bound_l2(
    x: &BellmanOperatorCandidate,
    seq: &QFunctionSeq,
    mu: &[f64],
    ctx: &OperatorContext,
) -> Result<f64> {
    let profile = occupancy_profile(ctx.mdp, ctx.policy, ctx.horizon, mu)?;
    let pre = precriterion_l2(x, seq, mu, ctx)?;
    Ok(ctx.time_constant() * profile.max_weight_l2() * pre)
}

/// Kernel analog of the master bound: dual norms of the per-step Bellman
/// errors weighted by the largest interpolant norm of the step weights.
pub fn master_bound_kernel(
    x: &BellmanOperatorCandidate,
    k: &Kernel,
    seq: &QFunctionSeq,
    mu: &[f64],
    ctx: &OperatorContext,
) -> Result<f64> {
    let h_max = horizon_steps(ctx)?;
    let profile = occupancy_profile(ctx.mdp, ctx.policy, ctx.horizon, mu)?;
    let mut max_w = 0.0f64;
    for w in &profile.weights_per_step {
        max_w = max_w.max(rkhs_interpolant_norm(k, w)?);
    }
    let c = ctx.time_constant();
    let gamma = ctx.horizon.gamma;
    let mut pre = 0.0;
    for h in 1..=h_max {
        let f = &seq.iterates[h - 1];
        let xf = apply_operator(x, f, ctx);
        let bf = bellman_backup_unclipped(ctx.mdp, ctx.policy, f, gamma);
        let g: Vec<f64> = xf.values.iter().zip(&bf.values).map(|(a, b)| a - b).collect();
        pre += gamma.powi((h_max - h) as i32) * dual_norm_exact(k, &g, mu)?;
    }
    Ok(c * max_w * pre / c)
}

fn fixed_point_residual(f: &QFunction, ctx: &OperatorContext) -> Vec<f64> {
    let bf = bellman_backup_unclipped(ctx.mdp, ctx.policy, f, ctx.horizon.gamma);
    f.values.iter().zip(&bf.values).map(|(a, b)| a - b).collect()
}

/// Fixed-point analog of the master bound: `C * ||w||_2 * ||f - Bf||_2`
/// under the discounted average occupancy weights.
pub fn fixed_point_bound_l2(f: &QFunction, mu: &[f64], ctx: &OperatorContext) -> Result<f64> {
    let profile = occupancy_profile(ctx.mdp, ctx.policy, ctx.horizon, mu)?;
    let g = fixed_point_residual(f, ctx);
    let norm: f64 = g.iter().zip(mu).map(|(&x, &m)| m * x * x).sum::<f64>().sqrt();
    Ok(ctx.time_constant() * profile.weight_avg_l2_norm * norm)
}

/// Kernel analog of the fixed-point bound.
pub fn fixed_point_bound_kernel(
    f: &QFunction,
    k: &Kernel,
    mu: &[f64],
    ctx: &OperatorContext,
) -> Result<f64> {
    let profile = occupancy_profile(ctx.mdp, ctx.policy, ctx.horizon, mu)?;
    let w_norm = rkhs_interpolant_norm(k, &profile.weight_avg)?;
    let g = fixed_point_residual(f, ctx);
    Ok(ctx.time_constant() * w_norm * dual_norm_exact(k, &g, mu)?)
}

fn argmin_lowest_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Run the finite-horizon iteration for every candidate. The sequences can
/// be shared by the regret- and kernel-based scorers to avoid recomputing
/// the iterates.
pub fn compute_sequences(cset: &CandidateSet, ctx: &OperatorContext) -> Result<Vec<QFunctionSeq>> {
    cset.candidates.iter().map(|x| meta_fqe(x, ctx)).collect()
}

/// Fixed-point-mode counterpart of `compute_sequences`.
pub fn compute_sequences_fp(
    cset: &CandidateSet,
    cfg: &FixedPointConfig,
    ctx: &OperatorContext,
) -> Result<Vec<QFunctionSeq>> {
    cset.candidates.iter().map(|x| meta_fqe_fp(x, cfg, ctx)).collect()
}

#[derive(Clone, Copy)]
enum BoundKind<'a> {
    FiniteL2,
    FiniteKernel(&'a Kernel),
    FixedPointL2,
    FixedPointKernel(&'a Kernel),
}

fn build_report(
    method: String,
    cset: &CandidateSet,
    seqs: &[QFunctionSeq],
    scores: Vec<f64>,
    d: &TransitionDataset,
    ctx: &OperatorContext,
    bound: BoundKind,
) -> Result<SelectionReport> {
    let selected_index = argmin_lowest_index(&scores);
    let q_pi = exact_q(ctx.mdp, ctx.policy, ctx.horizon)?;
    let j_pi = policy_value(ctx.mdp, ctx.policy, &q_pi);
    let delta_j_all: Vec<f64> = seqs
        .iter()
        .map(|seq| policy_value(ctx.mdp, ctx.policy, &seq.terminal) - j_pi)
        .collect();
    let abs_delta_j_all: Vec<f64> = delta_j_all.iter().map(|d| d.abs()).collect();
    let delta_j = delta_j_all[selected_index];
    let best_abs = abs_delta_j_all.iter().copied().fold(f64::INFINITY, f64::min);
    let excess_mae = (delta_j.abs() - best_abs).max(0.0);

    let winner = &cset.candidates[selected_index];
    let winner_seq = &seqs[selected_index];
    let bound_value = match bound {
        BoundKind::FiniteL2 => master_bound_l2(winner, winner_seq, &d.mu, ctx)?,
        BoundKind::FiniteKernel(k) => master_bound_kernel(winner, k, winner_seq, &d.mu, ctx)?,
        BoundKind::FixedPointL2 => fixed_point_bound_l2(&winner_seq.terminal, &d.mu, ctx)?,
        BoundKind::FixedPointKernel(k) => {
            fixed_point_bound_kernel(&winner_seq.terminal, k, &d.mu, ctx)?
        }
    };

    // Proxy chain: the best candidate's operator-level error, scaled as the
    // criterion would scale it, subtracted from the winner's oracle gap.
    let profile = occupancy_profile(ctx.mdp, ctx.policy, ctx.horizon, &d.mu)?;
    let c = ctx.time_constant();
    let mut best_criterion = f64::INFINITY;
    for x in &cset.candidates {
        let err = operator_error_sup(x, &d.mu, ctx, PROXY_PROBES)?;
        best_criterion = best_criterion.min(3.0 * c * profile.max_weight_l2() * err);
    }
    let suboptimality_proxy = (delta_j.abs() - best_criterion).max(0.0);

    Ok(SelectionReport {
        method,
        candidate_ids: cset.ids(),
        per_candidate_scores: scores,
        selected_index,
        selected_id: cset.candidates[selected_index].id.clone(),
        delta_j,
        abs_delta_j_all,
        excess_mae,
        bound_value,
        suboptimality_proxy,
    })
}

/// Regret-minimization selection over precomputed sequences.
pub fn select_rm_from(
    cset: &CandidateSet,
    seqs: &[QFunctionSeq],
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<SelectionReport> {
    let scores: Vec<f64> = cset
        .candidates
        .iter()
        .zip(seqs)
        .map(|(x, seq)| total_regret(x, cset, seq, d, ctx))
        .collect::<Result<_>>()?;
    build_report("RM".into(), cset, seqs, scores, d, ctx, BoundKind::FiniteL2)
}

/// Select the candidate with the smallest total regret on the validation
/// data.
pub fn select_rm(
    cset: &CandidateSet,
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<SelectionReport> {
    let seqs = compute_sequences(cset, ctx)?;
    select_rm_from(cset, &seqs, d, ctx)
}

/// Kernel-loss selection over precomputed sequences.
pub fn select_klm_from(
    cset: &CandidateSet,
    k: &Kernel,
    seqs: &[QFunctionSeq],
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<SelectionReport> {
    let scores: Vec<f64> = cset
        .candidates
        .iter()
        .zip(seqs)
        .map(|(x, seq)| total_kernel_loss(x, k, seq, d, ctx))
        .collect::<Result<_>>()?;
    build_report(
        format!("KLM({})", k.kind),
        cset,
        seqs,
        scores,
        d,
        ctx,
        BoundKind::FiniteKernel(k),
    )
}

/// Select the candidate with the smallest total kernel loss.
pub fn select_klm(
    cset: &CandidateSet,
    k: &Kernel,
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<SelectionReport> {
    let seqs = compute_sequences(cset, ctx)?;
    select_klm_from(cset, k, &seqs, d, ctx)
}

/// Fixed-point regret selection: score each candidate's averaged output by
/// its identity-operator loss relative to the best in the set.
pub fn select_rm_fp(
    cset: &CandidateSet,
    cfg: &FixedPointConfig,
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<SelectionReport> {
    let seqs = compute_sequences_fp(cset, cfg, ctx)?;
    let losses: Vec<f64> = seqs
        .iter()
        .map(|seq| identity_bellman_loss(&seq.terminal, d, ctx.policy, ctx.horizon.gamma))
        .collect::<Result<_>>()?;
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let scores: Vec<f64> = losses.iter().map(|l| (l - best).max(0.0)).collect();
    build_report("RM-FP".into(), cset, &seqs, scores, d, ctx, BoundKind::FixedPointL2)
}

/// Fixed-point kernel selection: score each candidate's averaged output by
/// the kernel loss of the identity operator.
pub fn select_klm_fp(
    cset: &CandidateSet,
    k: &Kernel,
    cfg: &FixedPointConfig,
    d: &TransitionDataset,
    ctx: &OperatorContext,
) -> Result<SelectionReport> {
    let seqs = compute_sequences_fp(cset, cfg, ctx)?;
    let scores: Vec<f64> = seqs
        .iter()
        .map(|seq| kernel_identity_loss(k, &seq.terminal, d, ctx.policy, ctx.horizon.gamma))
        .collect::<Result<_>>()?;
    build_report(
        format!("KLM-FP({})", k.kind),
        cset,
        &seqs,
        scores,
        d,
        ctx,
        BoundKind::FixedPointKernel(k),
    )
}

/// Exact value gap `J(Q) - J(pi)` of an arbitrary Q-function estimate.
pub fn value_gap(q: &QFunction, ctx: &OperatorContext) -> Result<f64> {
    let q_pi = exact_q(ctx.mdp, ctx.policy, ctx.horizon)?;
    Ok(policy_value(ctx.mdp, ctx.policy, q) - policy_value(ctx.mdp, ctx.policy, &q_pi))
}

/// Exact per-step decomposition of the value gap: the discounted sum of the
/// per-step occupancy averages of the Bellman errors along the iterates.
/// Agrees with `value_gap` for sequences produced by the finite-horizon
/// driver; used as a cross-check oracle.
pub fn value_gap_decomposed(
    x: &BellmanOperatorCandidate,
    seq: &QFunctionSeq,
    profile: &OccupancyProfile,
    ctx: &OperatorContext,
) -> Result<f64> {
    let h_max = horizon_steps(ctx)?;
    let gamma = ctx.horizon.gamma;
    let mut total = 0.0;
    for h in 1..=h_max {
        // Step h pairs with the iterate H - h applications deep.
        let f = &seq.iterates[h_max - h];
        let xf = apply_operator(x, f, ctx);
        let bf = bellman_backup_unclipped(ctx.mdp, ctx.policy, f, gamma);
        let step: f64 = profile.per_step_marginals[h - 1]
            .iter()
            .zip(xf.values.iter().zip(&bf.values))
            .map(|(&p, (a, b))| p * (a - b))
            .sum();
        total += gamma.powi((h - 1) as i32) * step;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_dataset;
    use crate::mdp::{HorizonSpec, TabularMdp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn chain_mdp() -> TabularMdp {
        TabularMdp::new(
            2,
            2,
            vec![0.5, 0.5],
            vec![
                0.9, 0.1, 0.2, 0.8, // s0
                0.3, 0.7, 0.6, 0.4, // s1
            ],
            vec![0.2, 0.8, 0.5, 0.3],
            vec![0.1, 0.1, 0.0, 0.2],
        )
        .unwrap()
    }

    fn deterministic_mdp() -> TabularMdp {
        TabularMdp::new(
            2,
            2,
            vec![1.0, 0.0],
            vec![
                0.0, 1.0, 1.0, 0.0, // s0
                1.0, 0.0, 0.0, 1.0, // s1
            ],
            vec![0.3, 0.6, 0.9, 0.1],
            vec![0.0; 4],
        )
        .unwrap()
    }

    fn random_mdp(rng: &mut ChaCha12Rng, n_states: usize, n_actions: usize) -> TabularMdp {
        let np = n_states * n_actions;
        let mut transition = vec![0.0; np * n_states];
        for row in transition.chunks_mut(n_states) {
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = rng.gen::<f64>() + 1e-3;
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let mut initial = vec![0.0; n_states];
        let mut z = 0.0;
        for v in initial.iter_mut() {
            *v = rng.gen::<f64>() + 1e-3;
            z += *v;
        }
        for v in initial.iter_mut() {
            *v /= z;
        }
        let reward_mean: Vec<f64> = (0..np).map(|_| 0.1 + 0.6 * rng.gen::<f64>()).collect();
        TabularMdp::new(n_states, n_actions, initial, transition, reward_mean, vec![0.05; np])
            .unwrap()
    }

    fn random_policy(rng: &mut ChaCha12Rng, n_states: usize, n_actions: usize) -> Policy {
        let mut probs = vec![0.0; n_states * n_actions];
        for row in probs.chunks_mut(n_actions) {
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = rng.gen::<f64>() + 1e-3;
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Policy::new(n_states, n_actions, probs).unwrap()
    }

    #[test]
    fn exact_iteration_reaches_the_true_q_function() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        for horizon in [HorizonSpec::finite(1, 1.0).unwrap(), HorizonSpec::finite(6, 0.7).unwrap()]
        {
            let ctx = OperatorContext::new(&mdp, &policy, &horizon);
            let x = BellmanOperatorCandidate::exact_tabular("exact");
            let seq = meta_fqe(&x, &ctx).unwrap();
            let truth = exact_q(&mdp, &policy, &horizon).unwrap();
            assert!(seq.terminal.sup_distance(&truth) < 1e-12);
        }
    }

    #[test]
    fn one_step_iteration_is_the_operator_at_zero() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(1, 0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let x = BellmanOperatorCandidate::constant_shift(
            "shift",
            BellmanOperatorCandidate::exact_tabular("exact"),
            0.1,
        );
        let seq = meta_fqe(&x, &ctx).unwrap();
        let zero = QFunction::zero(2, 2);
        assert!(seq.terminal.sup_distance(&apply_operator(&x, &zero, &ctx)) < 1e-15);
        assert_eq!(seq.iterates.len(), 2);
    }

    #[test]
    fn fixed_point_exits_early_for_idempotent_operators() {
        // With a zero discount the exact operator is constant in its input,
        // so the second iterate equals the first.
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::infinite(0.0).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let x = BellmanOperatorCandidate::exact_tabular("exact");
        let cfg = FixedPointConfig::with_steps(30).unwrap();
        let seq = meta_fqe_fp(&x, &cfg, &ctx).unwrap();
        assert_eq!(seq.fp_exit_step, Some(2));
        for (t, r) in seq.terminal.values.iter().zip(&mdp.reward_mean) {
            assert!((t - r).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_point_single_step_returns_the_first_iterate() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::infinite(0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let x = BellmanOperatorCandidate::exact_tabular("exact");
        let cfg = FixedPointConfig::with_steps(1).unwrap();
        let seq = meta_fqe_fp(&x, &cfg, &ctx).unwrap();
        let zero = QFunction::zero(2, 2);
        assert!(seq.terminal.sup_distance(&apply_operator(&x, &zero, &ctx)) < 1e-15);
    }

    #[test]
    fn fixed_point_average_residual_shrinks_with_the_step_budget() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::infinite(0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let c = horizon.time_constant();
        let x = BellmanOperatorCandidate::exact_tabular("exact");
        let cfg = FixedPointConfig::with_steps(50).unwrap();
        let seq = meta_fqe_fp(&x, &cfg, &ctx).unwrap();
        let q_bar = &seq.terminal;
        let backup = bellman_backup_unclipped(&mdp, &policy, q_bar, horizon.gamma);
        let sup = q_bar.sup_distance(&backup);
        assert!(sup <= 2.0 * c / 50.0 + 1e-12, "sup residual {sup} vs {}", 2.0 * c / 50.0);
    }

    #[test]
    fn exact_operator_has_zero_loss_on_deterministic_instances() {
        let mdp = deterministic_mdp();
        let policy = Policy::deterministic(2, 2, &[1, 0]).unwrap();
        let horizon = HorizonSpec::finite(3, 0.8).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 128, 2).unwrap();
        let x = BellmanOperatorCandidate::exact_tabular("exact");
        let f = QFunction::from_values(2, 2, vec![0.1, 0.5, 0.9, 0.3]).unwrap();
        assert!(squared_bellman_loss(&x, &f, &d, &ctx).unwrap() < 1e-24);
    }

    #[test]
    fn constant_shift_loss_is_the_squared_shift() {
        let mdp = deterministic_mdp();
        let policy = Policy::deterministic(2, 2, &[1, 0]).unwrap();
        let horizon = HorizonSpec::finite(3, 0.5).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 64, 4).unwrap();
        let x = BellmanOperatorCandidate::constant_shift(
            "shift",
            BellmanOperatorCandidate::exact_tabular("exact"),
            0.3,
        );
        let f = QFunction::zero(2, 2);
        let loss = squared_bellman_loss(&x, &f, &d, &ctx).unwrap();
        assert!((loss - 0.09).abs() < 1e-12, "loss {loss}");
    }

    /// Closed-form expectation of the empirical squared loss over the data
    /// distribution: reward variance, next-state variance of the probe's
    /// policy average, and the squared bias of the candidate against the
    /// unclipped backup.
    fn expected_squared_loss(
        x: &BellmanOperatorCandidate,
        f: &QFunction,
        mu: &[f64],
        ctx: &OperatorContext,
    ) -> f64 {
        let mdp = ctx.mdp;
        let gamma = ctx.horizon.gamma;
        let xf = apply_operator(x, f, ctx);
        let bf = bellman_backup_unclipped(mdp, ctx.policy, f, gamma);
        let mut next_means = vec![0.0; mdp.n_states];
        for (s, m) in next_means.iter_mut().enumerate() {
            *m = f.policy_mean(ctx.policy, s);
        }
        let mut total = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let cell = s * mdp.n_actions + a;
                let row = &mdp.transition[cell * mdp.n_states..(cell + 1) * mdp.n_states];
                let mean_next: f64 = row.iter().zip(&next_means).map(|(&p, &m)| p * m).sum();
                let var_next: f64 = row
                    .iter()
                    .zip(&next_means)
                    .map(|(&p, &m)| p * (m - mean_next) * (m - mean_next))
                    .sum();
                let bias = bf.get(s, a) - xf.get(s, a);
                total += mu[cell]
                    * (mdp.reward_variance(s, a) + gamma * gamma * var_next + bias * bias);
            }
        }
        total
    }

    #[test]
    fn expected_loss_gap_equals_the_squared_error_norm() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mdp = chain_mdp();
        let horizon = HorizonSpec::finite(4, 0.6).unwrap();
        let mu = vec![0.1, 0.4, 0.3, 0.2];
        for _ in 0..20 {
            let policy = random_policy(&mut rng, 2, 2);
            let ctx = OperatorContext::new(&mdp, &policy, &horizon);
            let offsets: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 0.4 - 0.2).collect();
            let x = BellmanOperatorCandidate::shifted_exact("x", offsets);
            let b = BellmanOperatorCandidate::exact_tabular("b");
            let fvals: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 0.8).collect();
            let f = QFunction::from_values(2, 2, fvals).unwrap();
            let gap = expected_squared_loss(&x, &f, &mu, &ctx)
                - expected_squared_loss(&b, &f, &mu, &ctx);
            let err_sq = bellman_error_l2(&x, &f, &mu, &ctx).powi(2);
            assert!((gap - err_sq).abs() < 1e-12, "gap {gap} vs {err_sq}");
        }
    }

    #[test]
    fn regret_is_zero_for_the_per_probe_minimizer() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(3, 0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 256, 6).unwrap();
        let exact = BellmanOperatorCandidate::exact_tabular("exact");
        let singleton = CandidateSet::new(vec![exact.clone()]).unwrap();
        let f = QFunction::constant(2, 2, 0.4);
        assert_eq!(bellman_regret(&exact, &singleton, &f, &d, &ctx).unwrap(), 0.0);

        let outsider = BellmanOperatorCandidate::exact_tabular("other");
        assert!(bellman_regret(&outsider, &singleton, &f, &d, &ctx).is_err());
    }

    #[test]
    fn regrets_match_hand_set_deterministic_residuals() {
        let mdp = deterministic_mdp();
        let policy = Policy::deterministic(2, 2, &[0, 1]).unwrap();
        let horizon = HorizonSpec::finite(2, 0.5).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 64, 12).unwrap();
        let exact = BellmanOperatorCandidate::exact_tabular("exact");
        let shifted = BellmanOperatorCandidate::constant_shift("shift", exact.clone(), 0.2);
        let cset = CandidateSet::new(vec![exact.clone(), shifted.clone()]).unwrap();
        let f = QFunction::zero(2, 2);
        let r0 = bellman_regret(&exact, &cset, &f, &d, &ctx).unwrap();
        let r1 = bellman_regret(&shifted, &cset, &f, &d, &ctx).unwrap();
        assert!(r0 < 1e-24);
        assert!((r1 - 0.04).abs() < 1e-12, "regret {r1}");
    }

    #[test]
    fn one_step_total_regret_is_the_square_root_of_one_regret() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(1, 1.0).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 512, 3).unwrap();
        let exact = BellmanOperatorCandidate::exact_tabular("exact");
        let shifted = BellmanOperatorCandidate::constant_shift("shift", exact.clone(), 0.5);
        let cset = CandidateSet::new(vec![exact, shifted.clone()]).unwrap();
        let seq = meta_fqe(&shifted, &ctx).unwrap();
        let total = total_regret(&shifted, &cset, &seq, &d, &ctx).unwrap();
        let zero = QFunction::zero(2, 2);
        let single = bellman_regret(&shifted, &cset, &zero, &d, &ctx).unwrap();
        assert!((total - single.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn total_scores_match_a_naive_re_summation() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(5, 0.8).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 256, 21).unwrap();
        let exact = BellmanOperatorCandidate::exact_tabular("exact");
        let shifted = BellmanOperatorCandidate::shifted_exact("x", vec![0.1, -0.05, 0.2, 0.0]);
        let cset = CandidateSet::new(vec![exact, shifted.clone()]).unwrap();
        let seq = meta_fqe(&shifted, &ctx).unwrap();

        let total = total_regret(&shifted, &cset, &seq, &d, &ctx).unwrap();
        // Independent re-summation, written from the definition.
        let c = horizon.time_constant();
        let mut expected = 0.0;
        for h in 1..=5usize {
            let r = bellman_regret(&shifted, &cset, &seq.iterates[h - 1], &d, &ctx).unwrap();
            expected += 0.8f64.powi((5 - h) as i32) * r.sqrt();
        }
        expected /= c;
        assert!((total - expected).abs() < 1e-12);

        let k = Kernel::parse("gauss:sigma=1", crate::data::FeatureMap::one_hot(2, 2)).unwrap();
        let total_k = total_kernel_loss(&shifted, &k, &seq, &d, &ctx).unwrap();
        let mut expected_k = 0.0;
        for h in 1..=5usize {
            let f = &seq.iterates[h - 1];
            let loss =
                crate::kernel::kernel_bellman_loss(&k, &shifted, f, &d, &policy, &ctx).unwrap();
            expected_k += 0.8f64.powi((5 - h) as i32) * loss.max(0.0).sqrt();
        }
        expected_k /= c;
        assert!((total_k - expected_k).abs() < 1e-12);
    }

    #[test]
    fn singleton_sets_always_select_their_member() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(3, 0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 256, 14).unwrap();
        let cset =
            CandidateSet::new(vec![BellmanOperatorCandidate::exact_tabular("only")]).unwrap();
        let k = Kernel::parse("gauss:sigma=1", crate::data::FeatureMap::one_hot(2, 2)).unwrap();

        let rm = select_rm(&cset, &d, &ctx).unwrap();
        assert_eq!(rm.selected_id, "only");
        let klm = select_klm(&cset, &k, &d, &ctx).unwrap();
        assert_eq!(klm.selected_id, "only");

        let fp_horizon = HorizonSpec::infinite(0.9).unwrap();
        let fp_ctx = OperatorContext::new(&mdp, &policy, &fp_horizon);
        let cfg = FixedPointConfig::for_dataset_size(d.len());
        let rm_fp = select_rm_fp(&cset, &cfg, &d, &fp_ctx).unwrap();
        assert_eq!(rm_fp.selected_id, "only");
        assert_eq!(rm_fp.per_candidate_scores[0], 0.0);
        let klm_fp = select_klm_fp(&cset, &k, &cfg, &d, &fp_ctx).unwrap();
        assert_eq!(klm_fp.selected_id, "only");
    }

    #[test]
    fn selection_ignores_candidate_order_for_distinct_scores() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(3, 0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 1024, 19).unwrap();
        let exact = BellmanOperatorCandidate::exact_tabular("exact");
        let shifted = BellmanOperatorCandidate::constant_shift("shift", exact.clone(), 0.5);
        let forward = CandidateSet::new(vec![exact.clone(), shifted.clone()]).unwrap();
        let backward = CandidateSet::new(vec![shifted, exact]).unwrap();
        let a = select_rm(&forward, &d, &ctx).unwrap();
        let b = select_rm(&backward, &d, &ctx).unwrap();
        assert_eq!(a.selected_id, b.selected_id);
        assert_eq!(a.selected_id, "exact");
    }

    #[test]
    fn constant_kernel_ties_break_to_the_lowest_index() {
        use crate::data::Transition;
        // Flat exactly-representable rewards so every residual is an exact
        // power of two and the tie is bitwise, not approximate.
        let mdp = TabularMdp::new(
            2,
            2,
            vec![0.5, 0.5],
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
            vec![0.5; 4],
            vec![0.0; 4],
        )
        .unwrap();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(1, 1.0).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        // One record per cell so per-cell offsets average exactly.
        let records = (0..4)
            .map(|cell| Transition { s: cell / 2, a: cell % 2, r: 0.5, s_next: 0 })
            .collect();
        let d = TransitionDataset { records, mu: vec![0.25; 4], seed: 0 };
        // Same mean offset 0.125, different spread (small enough that range
        // clipping stays inactive): the constant kernel sees only the mean,
        // so the scores tie and index 0 wins.
        let a = BellmanOperatorCandidate::shifted_exact("uniform-shift", vec![0.125; 4]);
        let b = BellmanOperatorCandidate::shifted_exact("split-shift", vec![0.0, 0.25, 0.0, 0.25]);
        let cset = CandidateSet::new(vec![a, b]).unwrap();
        let k = Kernel::parse("const", crate::data::FeatureMap::one_hot(2, 2)).unwrap();
        let report = select_klm(&cset, &k, &d, &ctx).unwrap();
        let diff = (report.per_candidate_scores[0] - report.per_candidate_scores[1]).abs();
        assert!(diff < 1e-12, "scores should tie, diff {diff}");
        assert_eq!(report.selected_id, "uniform-shift");
    }

    #[test]
    fn fixed_point_selection_prefers_the_true_fixed_point() {
        let mdp = deterministic_mdp();
        let policy = Policy::deterministic(2, 2, &[1, 0]).unwrap();
        let horizon = HorizonSpec::infinite(0.8).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 512, 23).unwrap();
        let exact = BellmanOperatorCandidate::exact_tabular("exact");
        let broken = BellmanOperatorCandidate::constant_shift("broken", exact.clone(), 0.4);
        let cset = CandidateSet::new(vec![broken, exact]).unwrap();
        let cfg = FixedPointConfig::with_steps(60).unwrap();
        let k = Kernel::parse("gauss:sigma=1", crate::data::FeatureMap::one_hot(2, 2)).unwrap();

        let rm_fp = select_rm_fp(&cset, &cfg, &d, &ctx).unwrap();
        assert_eq!(rm_fp.selected_id, "exact");
        let klm_fp = select_klm_fp(&cset, &k, &cfg, &d, &ctx).unwrap();
        assert_eq!(klm_fp.selected_id, "exact");
    }

    #[test]
    fn value_gap_decomposition_matches_the_direct_gap() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for trial in 0..20 {
            let n_states = 2 + trial % 3;
            let mdp = random_mdp(&mut rng, n_states, 2);
            let policy = random_policy(&mut rng, n_states, 2);
            let horizon = HorizonSpec::finite(4, 0.85).unwrap();
            let ctx = OperatorContext::new(&mdp, &policy, &horizon);
            let np = mdp.n_pairs();
            let offsets: Vec<f64> = (0..np).map(|_| rng.gen::<f64>() * 0.2 - 0.1).collect();
            let x = BellmanOperatorCandidate::shifted_exact("x", offsets);
            let seq = meta_fqe(&x, &ctx).unwrap();
            let mu = vec![1.0 / np as f64; np];
            let profile = occupancy_profile(&mdp, &policy, &horizon, &mu).unwrap();
            let direct = value_gap(&seq.terminal, &ctx).unwrap();
            let decomposed = value_gap_decomposed(&x, &seq, &profile, &ctx).unwrap();
            assert!(
                (direct - decomposed).abs() < 1e-9,
                "trial {trial}: {direct} vs {decomposed}"
            );
        }
    }

    #[test]
    fn master_bound_dominates_the_value_gap() {
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for trial in 0..20 {
            let n_states = 2 + trial % 3;
            let mdp = random_mdp(&mut rng, n_states, 2);
            let policy = random_policy(&mut rng, n_states, 2);
            let horizon = HorizonSpec::finite(3, 0.9).unwrap();
            let ctx = OperatorContext::new(&mdp, &policy, &horizon);
            let np = mdp.n_pairs();
            let offsets: Vec<f64> = (0..np).map(|_| rng.gen::<f64>() * 0.3 - 0.15).collect();
            let x = BellmanOperatorCandidate::shifted_exact("x", offsets);
            let seq = meta_fqe(&x, &ctx).unwrap();
            let mu = vec![1.0 / np as f64; np];
            let gap = value_gap(&seq.terminal, &ctx).unwrap().abs();
            let bound = master_bound_l2(&x, &seq, &mu, &ctx).unwrap();
            assert!(gap <= bound + 1e-9, "trial {trial}: |gap| {gap} > bound {bound}");
        }
    }

    #[test]
    fn exact_candidate_has_zero_bound_and_zero_gap() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(4, 0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let x = BellmanOperatorCandidate::exact_tabular("exact");
        let seq = meta_fqe(&x, &ctx).unwrap();
        let mu = vec![0.25; 4];
        assert!(precriterion_l2(&x, &seq, &mu, &ctx).unwrap() < 1e-12);
        assert!(master_bound_l2(&x, &seq, &mu, &ctx).unwrap() < 1e-12);
        assert!(value_gap(&seq.terminal, &ctx).unwrap().abs() < 1e-12);
    }

    #[test]
    fn one_step_bound_under_the_visitation_marginal_is_cauchy_schwarz() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(1, 1.0).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        // mu equal to the step-1 visitation marginal makes every weight 1.
        let profile_probe = occupancy_profile(&mdp, &policy, &horizon, &[0.25; 4]).unwrap();
        let mu = profile_probe.per_step_marginals[0].clone();
        let x = BellmanOperatorCandidate::shifted_exact("x", vec![0.2, -0.1, 0.15, -0.05]);
        let seq = meta_fqe(&x, &ctx).unwrap();
        let bound = master_bound_l2(&x, &seq, &mu, &ctx).unwrap();
        let zero = QFunction::zero(2, 2);
        let err = bellman_error_l2(&x, &zero, &mu, &ctx);
        assert!((bound - err).abs() < 1e-12, "bound {bound} vs ||error|| {err}");
        let gap = value_gap(&seq.terminal, &ctx).unwrap().abs();
        assert!(gap <= bound + 1e-12);
    }

    #[test]
    fn fixed_point_bound_dominates_the_gap_for_averaged_outputs() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::infinite(0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let mu = vec![0.25; 4];
        let x = BellmanOperatorCandidate::constant_shift(
            "x",
            BellmanOperatorCandidate::exact_tabular("exact"),
            0.2,
        );
        let cfg = FixedPointConfig::with_steps(40).unwrap();
        let seq = meta_fqe_fp(&x, &cfg, &ctx).unwrap();
        let gap = value_gap(&seq.terminal, &ctx).unwrap().abs();
        let bound = fixed_point_bound_l2(&seq.terminal, &mu, &ctx).unwrap();
        assert!(gap <= bound + 1e-9, "|gap| {gap} > bound {bound}");
    }

    #[test]
    fn scale_invariant_argmin_and_deterministic_reports() {
        let mdp = chain_mdp();
        let policy = Policy::uniform(2, 2);
        let horizon = HorizonSpec::finite(3, 0.9).unwrap();
        let ctx = OperatorContext::new(&mdp, &policy, &horizon);
        let d = sample_dataset(&mdp, &[0.25; 4], 512, 33).unwrap();
        let exact = BellmanOperatorCandidate::exact_tabular("exact");
        let shifted = BellmanOperatorCandidate::constant_shift("shift", exact.clone(), 0.5);
        let cset = CandidateSet::new(vec![exact, shifted]).unwrap();
        let a = select_rm(&cset, &d, &ctx).unwrap();
        let b = select_rm(&cset, &d, &ctx).unwrap();
        assert_eq!(a.per_candidate_scores, b.per_candidate_scores);
        assert_eq!(a.selected_id, b.selected_id);
        // Scaling all scores by a positive constant cannot move the argmin.
        let scaled: Vec<f64> = a.per_candidate_scores.iter().map(|s| s * 7.5).collect();
        assert_eq!(argmin_lowest_index(&scaled), a.selected_index);
    }
}
