//! Finite MDP representation, policy algebra and exact dynamic-programming
//! oracles: Q^pi, policy values, occupancy marginals and likelihood-ratio
//! weights against a data distribution.

use serde::{Deserialize, Serialize};

use crate::error::{FqeError, Result};

const PROB_TOL: f64 = 1e-12;
/// Tail mass threshold for truncating infinite-horizon occupancy sums.
const OCCUPANCY_TAIL_TOL: f64 = 1e-10;
/// Sup-norm convergence threshold for infinite-horizon value iteration.
const VI_TOL: f64 = 1e-12;

/// Time-horizon length: a fixed number of steps or a discounted infinite run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

/// Horizon length together with the discount factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub horizon: Horizon,
    pub gamma: f64,
}

impl HorizonSpec {
    pub fn finite(h: usize, gamma: f64) -> Result<Self> {
        if h == 0 {
            return Err(FqeError::InvalidHorizon("horizon must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(FqeError::InvalidHorizon(format!(
                "gamma must be in [0, 1], got {gamma}"
            )));
        }
        Ok(Self { horizon: Horizon::Finite(h), gamma })
    }

    pub fn infinite(gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(FqeError::InvalidHorizon(format!(
                "infinite horizon requires gamma in [0, 1), got {gamma}"
            )));
        }
        Ok(Self { horizon: Horizon::Infinite, gamma })
    }

    /// The time constant: the discounted sum of step weights. This bounds the
    /// range of every admissible Q-function.
    pub fn time_constant(&self) -> f64 {
        match self.horizon {
            Horizon::Finite(h) => {
                let mut sum = 0.0;
                let mut weight = 1.0;
                for _ in 0..h {
                    sum += weight;
                    weight *= self.gamma;
                }
                sum
            }
            Horizon::Infinite => 1.0 / (1.0 - self.gamma),
        }
    }

    /// Number of forward steps needed so that the ignored geometric tail is
    /// below `OCCUPANCY_TAIL_TOL` (finite horizons return their own length).
    pub fn effective_steps(&self) -> usize {
        match self.horizon {
            Horizon::Finite(h) => h,
            Horizon::Infinite => {
                if self.gamma == 0.0 {
                    return 1;
                }
                let steps = (OCCUPANCY_TAIL_TOL.ln() / self.gamma.ln()).ceil() as usize;
                steps.max(1)
            }
        }
    }
}

/// Bounded-noise reward: a two-point distribution on
/// `{max(0, mean - sigma), min(1, mean + sigma)}` whose expectation is `mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardNoise {
    pub sigma: f64,
}

/// A finite MDP with rewards supported in [0, 1].
///
/// Transition rows are stored row-major by `(s, a)`; each row is a
/// distribution over next states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub initial_dist: Vec<f64>,
    pub transition: Vec<f64>,
    pub reward_mean: Vec<f64>,
    pub reward_noise: Vec<f64>,
}

fn check_prob_vector(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&p| p < 0.0) {
        return Err(FqeError::InvalidArgument(format!("{what} has negative entries")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(FqeError::InvalidArgument(format!(
            "{what} sums to {sum}, expected 1 within {PROB_TOL}"
        )));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        initial_dist: Vec<f64>,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        reward_noise: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self { n_states, n_actions, initial_dist, transition, reward_mean, reward_noise };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let np = self.n_pairs();
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(FqeError::InvalidArgument("empty state or action space".into()));
        }
        if self.initial_dist.len() != self.n_states
            || self.transition.len() != np * self.n_states
            || self.reward_mean.len() != np
            || self.reward_noise.len() != np
        {
            return Err(FqeError::InvalidArgument("mdp field sizes are inconsistent".into()));
        }
        check_prob_vector(&self.initial_dist, "initial distribution")?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                check_prob_vector(self.transition_row(s, a), "transition row")?;
            }
        }
        for (i, &m) in self.reward_mean.iter().enumerate() {
            if !(0.0..=1.0).contains(&m) {
                return Err(FqeError::InvalidArgument(format!(
                    "reward mean {m} at pair {i} outside [0, 1]"
                )));
            }
            if self.reward_noise[i] < 0.0 {
                return Err(FqeError::InvalidArgument("negative reward noise".into()));
            }
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let i = self.pair_index(s, a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    /// Two-point reward support `(lo, hi, p_hi)` for a pair; the distribution
    /// keeps its mean while staying inside [0, 1].
    pub fn reward_support(&self, s: usize, a: usize) -> (f64, f64, f64) {
        let i = self.pair_index(s, a);
        let mean = self.reward_mean[i];
        let sigma = self.reward_noise[i];
        let lo = (mean - sigma).max(0.0);
        let hi = (mean + sigma).min(1.0);
        if hi - lo < 1e-15 {
            (mean, mean, 1.0)
        } else {
            (lo, hi, (mean - lo) / (hi - lo))
        }
    }

    pub fn reward_variance(&self, s: usize, a: usize) -> f64 {
        let (lo, hi, _) = self.reward_support(s, a);
        let mean = self.reward_mean[self.pair_index(s, a)];
        (hi - mean) * (mean - lo)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: Self = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }
}

/// A state-conditional action distribution, one row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(FqeError::InvalidArgument("policy size mismatch".into()));
        }
        let policy = Self { n_states, n_actions, probs };
        for s in 0..n_states {
            check_prob_vector(policy.row(s), "policy row")?;
        }
        Ok(policy)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self { n_states, n_actions, probs: vec![p; n_states * n_actions] }
    }

    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != n_states {
            return Err(FqeError::InvalidArgument("one action per state required".into()));
        }
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(FqeError::InvalidArgument("action index out of range".into()));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }
}

/// A function over state-action pairs, usually range-bounded to
/// `[0, time_constant]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QFunction {
    pub fn zero(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self { n_states, n_actions, values: vec![value; n_states * n_actions] }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(FqeError::InvalidArgument("q-function size mismatch".into()));
        }
        Ok(Self { n_states, n_actions, values })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    /// Expected value under the policy's action distribution at `s`.
    pub fn policy_mean(&self, policy: &Policy, s: usize) -> f64 {
        policy
            .row(s)
            .iter()
            .enumerate()
            .map(|(a, &p)| p * self.get(s, a))
            .sum()
    }

    pub fn clip_in_place(&mut self, c: f64) {
        for v in &mut self.values {
            *v = v.max(0.0).min(c);
        }
    }

    pub fn sup_distance(&self, other: &QFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-step state-action marginals, their discounted average, and the
/// likelihood-ratio weights against a data distribution `mu`.
#[derive(Debug, Clone)]
pub struct OccupancyProfile {
    /// P_h over (s, a), h = 1..=steps.
    pub per_step_marginals: Vec<Vec<f64>>,
    /// Discounted average nu, normalized so it is a probability vector.
    pub discounted_average: Vec<f64>,
    /// w_h = P_h / mu, elementwise where mu > 0.
    pub weights_per_step: Vec<Vec<f64>>,
    /// w = nu / mu.
    pub weight_avg: Vec<f64>,
    /// L2(mu) norms of each w_h.
    pub weight_l2_norms: Vec<f64>,
    /// L2(mu) norm of w.
    pub weight_avg_l2_norm: f64,
}

impl OccupancyProfile {
    pub fn max_weight_l2(&self) -> f64 {
        self.weight_l2_norms.iter().copied().fold(0.0, f64::max)
    }
}

/// One application of the Bellman backup without range clipping.
pub fn bellman_backup_unclipped(
    mdp: &TabularMdp,
    policy: &Policy,
    f: &QFunction,
    gamma: f64,
) -> QFunction {
    let mut next_means = vec![0.0; mdp.n_states];
    for (s, m) in next_means.iter_mut().enumerate() {
        *m = f.policy_mean(policy, s);
    }
    let mut out = QFunction::zero(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.transition_row(s, a);
            let cont: f64 = row.iter().zip(&next_means).map(|(&t, &m)| t * m).sum();
            out.values[mdp.pair_index(s, a)] = mdp.reward_mean[mdp.pair_index(s, a)] + gamma * cont;
        }
    }
    out
}

/// The exact Bellman operator restricted to the range-bounded function class:
/// backup followed by clipping to `[0, C]`.
pub fn exact_bellman_apply(
    mdp: &TabularMdp,
    policy: &Policy,
    f: &QFunction,
    horizon: &HorizonSpec,
) -> QFunction {
    let mut out = bellman_backup_unclipped(mdp, policy, f, horizon.gamma);
    out.clip_in_place(horizon.time_constant());
    out
}

/// Exact Q^pi by backward dynamic programming (finite horizon) or value
/// iteration to a 1e-12 fixed point (discounted infinite horizon).
pub fn exact_q(mdp: &TabularMdp, policy: &Policy, horizon: &HorizonSpec) -> Result<QFunction> {
    match horizon.horizon {
        Horizon::Finite(h) => {
            let mut q = QFunction::zero(mdp.n_states, mdp.n_actions);
            for _ in 0..h {
                q = bellman_backup_unclipped(mdp, policy, &q, horizon.gamma);
            }
            q.clip_in_place(horizon.time_constant());
            Ok(q)
        }
        Horizon::Infinite => {
            let c = horizon.time_constant();
            let cap = (10.0 * c * (c / VI_TOL).ln()).ceil() as usize;
            let mut q = QFunction::zero(mdp.n_states, mdp.n_actions);
            for _ in 0..cap {
                let next = bellman_backup_unclipped(mdp, policy, &q, horizon.gamma);
                let delta = next.sup_distance(&q);
                q = next;
                if delta < VI_TOL {
                    q.clip_in_place(c);
                    return Ok(q);
                }
            }
            Err(FqeError::NoConvergence(cap))
        }
    }
}

/// J(pi) evaluated with an arbitrary Q-function: the initial-state expectation
/// of the policy-averaged values.
pub fn policy_value(mdp: &TabularMdp, policy: &Policy, q: &QFunction) -> f64 {
    mdp.initial_dist
        .iter()
        .enumerate()
        .map(|(s, &p)| p * q.policy_mean(policy, s))
        .sum()
}

/// Forward-propagated occupancy marginals and likelihood-ratio weights.
///
/// The discounted average uses weights `gamma^{h-1} / C`, which keeps it a
/// probability vector for every admissible horizon (including gamma = 1,
/// where it degenerates to the plain average over steps).
pub fn occupancy_profile(
    mdp: &TabularMdp,
    policy: &Policy,
    horizon: &HorizonSpec,
    mu: &[f64],
) -> Result<OccupancyProfile> {
    if mu.len() != mdp.n_pairs() {
        return Err(FqeError::InvalidArgument("mu size mismatch".into()));
    }
    check_prob_vector(mu, "mu")?;
    let steps = horizon.effective_steps();
    let np = mdp.n_pairs();

    let mut marginals: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut p = vec![0.0; np];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            p[mdp.pair_index(s, a)] = mdp.initial_dist[s] * policy.prob(s, a);
        }
    }
    marginals.push(p.clone());
    for _ in 1..steps {
        let mut next_state = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mass = p[mdp.pair_index(s, a)];
                if mass == 0.0 {
                    continue;
                }
                for (sn, &t) in mdp.transition_row(s, a).iter().enumerate() {
                    next_state[sn] += mass * t;
                }
            }
        }
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                p[mdp.pair_index(s, a)] = next_state[s] * policy.prob(s, a);
            }
        }
        marginals.push(p.clone());
    }

    let c = horizon.time_constant();
    let mut nu = vec![0.0; np];
    let mut weight = 1.0;
    for ph in &marginals {
        for (n, &m) in nu.iter_mut().zip(ph) {
            *n += weight / c * m;
        }
        weight *= horizon.gamma;
    }

    let weights_of = |ph: &[f64], h: usize| -> Result<Vec<f64>> {
        let mut w = vec![0.0; np];
        for (idx, (&mass, &m)) in ph.iter().zip(mu).enumerate() {
            if m > 0.0 {
                w[idx] = mass / m;
            } else if mass > 1e-14 {
                return Err(FqeError::ExplorationViolation {
                    h,
                    s: idx / mdp.n_actions,
                    a: idx % mdp.n_actions,
                    mass,
                });
            }
        }
        Ok(w)
    };

    let mut weights_per_step = Vec::with_capacity(steps);
    let mut weight_l2_norms = Vec::with_capacity(steps);
    for (h, ph) in marginals.iter().enumerate() {
        let w = weights_of(ph, h + 1)?;
        let norm: f64 = w
            .iter()
            .zip(mu)
            .map(|(&wi, &mi)| mi * wi * wi)
            .sum::<f64>()
            .sqrt();
        weights_per_step.push(w);
        weight_l2_norms.push(norm);
    }
    let weight_avg = weights_of(&nu, 0)?;
    let weight_avg_l2_norm: f64 = weight_avg
        .iter()
        .zip(mu)
        .map(|(&wi, &mi)| mi * wi * wi)
        .sum::<f64>()
        .sqrt();

    Ok(OccupancyProfile {
        per_step_marginals: marginals,
        discounted_average: nu,
        weights_per_step,
        weight_avg,
        weight_l2_norms,
        weight_avg_l2_norm,
    })
}

/// Rowwise convex combination `eps * p1 + (1 - eps) * p2`.
pub fn mix_policies(p1: &Policy, p2: &Policy, eps: f64) -> Result<Policy> {
    if p1.n_states != p2.n_states || p1.n_actions != p2.n_actions {
        return Err(FqeError::InvalidArgument("policy shape mismatch".into()));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(FqeError::InvalidArgument(format!("eps {eps} outside [0, 1]")));
    }
    let probs = p1
        .probs
        .iter()
        .zip(&p2.probs)
        .map(|(&x, &y)| eps * x + (1.0 - eps) * y)
        .collect();
    Ok(Policy { n_states: p1.n_states, n_actions: p1.n_actions, probs })
}

/// Deterministic policy greedy with respect to optimal value iteration, ties
/// broken toward the lowest action index.
pub fn greedy_expert(mdp: &TabularMdp, horizon: &HorizonSpec) -> Policy {
    let np = mdp.n_pairs();
    let mut q = vec![0.0; np];
    let steps = match horizon.horizon {
        Horizon::Finite(h) => h,
        Horizon::Infinite => {
            let c = horizon.time_constant();
            ((10.0 * c * (c / VI_TOL).ln()).ceil() as usize).max(1)
        }
    };
    for _ in 0..steps {
        let mut state_max = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            state_max[s] = (0..mdp.n_actions)
                .map(|a| q[mdp.pair_index(s, a)])
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let mut next = vec![0.0; np];
        let mut delta: f64 = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let row = mdp.transition_row(s, a);
                let cont: f64 = row.iter().zip(&state_max).map(|(&t, &m)| t * m).sum();
                let idx = mdp.pair_index(s, a);
                next[idx] = mdp.reward_mean[idx] + horizon.gamma * cont;
                delta = delta.max((next[idx] - q[idx]).abs());
            }
        }
        q = next;
        if matches!(horizon.horizon, Horizon::Infinite) && delta < VI_TOL {
            break;
        }
    }
    let actions: Vec<usize> = (0..mdp.n_states)
        .map(|s| {
            let mut best = 0;
            for a in 1..mdp.n_actions {
                if q[mdp.pair_index(s, a)] > q[mdp.pair_index(s, best)] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::deterministic(mdp.n_states, mdp.n_actions, &actions)
        .expect("greedy actions are in range")
}
