//! Benchmark orchestration: synthetic environments, experiment configs,
//! seeded sweeps over (seed, n, horizon, evaluation mixture, method, kernel),
//! convergence-rate checks, and deterministic result emission.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    derive_seed, fit_feature_normalization, sample_dataset, split_dataset, FeatureMap,
    TransitionDataset,
};
use crate::error::{FqeError, Result};
use crate::kernel::Kernel;
use crate::mdp::{greedy_expert, mix_policies, HorizonSpec, Policy, TabularMdp};
use crate::ops::{
    fit_fqe_operator, BellmanOperatorCandidate, CandidateSet, OperatorContext, RegressorSpec,
};
use crate::select::{
    compute_sequences, select_klm_from, select_klm_fp, select_rm_from, select_rm_fp,
    FixedPointConfig, SelectionReport,
};

/// Random tabular MDP with sparse transitions: each state-action pair reaches
/// `branching` uniformly chosen successor states with random weights.
pub fn garnet_mdp(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    seed: u64,
) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(FqeError::InvalidArgument("empty state or action space".into()));
    }
    if branching == 0 || branching > n_states {
        return Err(FqeError::InvalidArgument(format!(
            "branching {branching} outside 1..={n_states}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0x6a23));
    let np = n_states * n_actions;
    let mut transition = vec![0.0; np * n_states];
    let mut states: Vec<usize> = (0..n_states).collect();
    for cell in 0..np {
        states.shuffle(&mut rng);
        let mut weights: Vec<f64> = (0..branching).map(|_| rng.gen::<f64>() + 0.05).collect();
        let z: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= z;
        }
        for (i, &s_next) in states[..branching].iter().enumerate() {
            transition[cell * n_states + s_next] = weights[i];
        }
    }
    let mut initial: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 0.05).collect();
    let z: f64 = initial.iter().sum();
    for v in &mut initial {
        *v /= z;
    }
    let reward_mean: Vec<f64> = (0..np).map(|_| 0.05 + 0.9 * rng.gen::<f64>()).collect();
    let reward_noise = vec![0.05; np];
    TabularMdp::new(n_states, n_actions, initial, transition, reward_mean, reward_noise)
}

/// Small inventory-flavored chain: states are stock levels, the two actions
/// order zero or one unit, and a unit of Bernoulli(0.6) demand consumes
/// stock. Reward mixes sales revenue with a holding discount.
pub fn inventory_chain(capacity: usize) -> Result<TabularMdp> {
    if capacity == 0 {
        return Err(FqeError::InvalidArgument("capacity must be positive".into()));
    }
    let n_states = capacity + 1;
    let n_actions = 2;
    let demand_p = 0.6;
    let np = n_states * n_actions;
    let mut transition = vec![0.0; np * n_states];
    let mut reward_mean = vec![0.0; np];
    for s in 0..n_states {
        for a in 0..n_actions {
            let cell = s * n_actions + a;
            let stocked = (s + a).min(capacity);
            if stocked > 0 {
                transition[cell * n_states + stocked - 1] += demand_p;
                transition[cell * n_states + stocked] += 1.0 - demand_p;
                reward_mean[cell] = demand_p * 0.8;
            } else {
                transition[cell * n_states + stocked] = 1.0;
            }
            reward_mean[cell] += 0.2 * (1.0 - stocked as f64 / capacity as f64);
        }
    }
    let mut initial = vec![0.0; n_states];
    initial[0] = 1.0;
    TabularMdp::new(n_states, n_actions, initial, transition, reward_mean, vec![0.05; np])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSpec {
    Inline(TabularMdp),
    Garnet { n_states: usize, n_actions: usize, branching: usize, seed: u64 },
    Inventory { capacity: usize },
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match self {
            EnvSpec::Inline(mdp) => {
                let copy = mdp.clone();
                copy.validate()?;
                Ok(copy)
            }
            EnvSpec::Garnet { n_states, n_actions, branching, seed } => {
                garnet_mdp(*n_states, *n_actions, *branching, *seed)
            }
            EnvSpec::Inventory { capacity } => inventory_chain(*capacity),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BehaviorSpec {
    Named(String),
    Explicit(Vec<f64>),
}

impl BehaviorSpec {
    pub fn resolve(&self, mdp: &TabularMdp) -> Result<Vec<f64>> {
        match self {
            BehaviorSpec::Named(name) if name == "uniform" => {
                Ok(vec![1.0 / mdp.n_pairs() as f64; mdp.n_pairs()])
            }
            BehaviorSpec::Named(name) => {
                Err(FqeError::Config(format!("unknown behavior '{name}'; use \"uniform\"")))
            }
            BehaviorSpec::Explicit(mu) => {
                if mu.len() != mdp.n_pairs() {
                    return Err(FqeError::Config(format!(
                        "behavior distribution has {} entries, expected {}",
                        mu.len(),
                        mdp.n_pairs()
                    )));
                }
                let total: f64 = mu.iter().sum();
                if mu.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(FqeError::Config("behavior must be a probability vector".into()));
                }
                Ok(mu.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonPoint {
    pub h: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Rm,
    RmFp,
    Klm { kernels: Vec<String> },
    KlmFp { kernels: Vec<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSpec {
    Exact,
    BrokenShift { shift: f64 },
    /// Exact backup plus a signed shift of the given magnitude: positive on
    /// the lower half of the state space, negative on the upper half. The
    /// shifts cancel on average under a balanced data distribution while
    /// remaining large cell by cell.
    SignedShift { magnitude: f64 },
    TabularMean,
    Ridge { lambda: f64 },
    Knn { k: usize },
}

impl CandidateSpec {
    fn id(&self) -> String {
        match self {
            CandidateSpec::Exact => "exact".into(),
            CandidateSpec::BrokenShift { shift } => format!("broken_shift_{shift}"),
            CandidateSpec::SignedShift { magnitude } => format!("signed_shift_{magnitude}"),
            CandidateSpec::TabularMean => "tabular_mean".into(),
            CandidateSpec::Ridge { lambda } => format!("ridge_{lambda}"),
            CandidateSpec::Knn { k } => format!("knn_{k}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CandidateManifest {
    Named(String),
    List(Vec<CandidateSpec>),
}

/// The default candidate grid: one well-specified tabular regressor, ridge
/// and nearest-neighbor families spanning under- to over-smoothing, and one
/// deliberately corrupted operator.
pub fn standard_candidates() -> Vec<CandidateSpec> {
    vec![
        CandidateSpec::TabularMean,
        CandidateSpec::Ridge { lambda: 1e-4 },
        CandidateSpec::Ridge { lambda: 1e-2 },
        CandidateSpec::Ridge { lambda: 1.0 },
        CandidateSpec::Knn { k: 1 },
        CandidateSpec::Knn { k: 8 },
        CandidateSpec::Knn { k: 64 },
        CandidateSpec::BrokenShift { shift: 0.5 },
    ]
}

impl CandidateManifest {
    pub fn resolve(&self) -> Result<Vec<CandidateSpec>> {
        match self {
            CandidateManifest::Named(name) if name == "standard" => Ok(standard_candidates()),
            CandidateManifest::Named(name) => {
                Err(FqeError::Config(format!("unknown candidate manifest '{name}'")))
            }
            CandidateManifest::List(list) => {
                if list.is_empty() {
                    return Err(FqeError::Config("candidate list must be non-empty".into()));
                }
                Ok(list.clone())
            }
        }
    }
}

fn default_delta() -> f64 {
    0.05
}

fn default_train_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub behavior: BehaviorSpec,
    pub eval_eps_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub horizons: Vec<HorizonPoint>,
    pub methods: Vec<MethodSpec>,
    pub candidates: CandidateManifest,
    pub seeds: Vec<u64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| FqeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_eps_grid.is_empty()
            || self.n_grid.is_empty()
            || self.horizons.is_empty()
            || self.methods.is_empty()
            || self.seeds.is_empty()
        {
            return Err(FqeError::Config("all grids must be non-empty".into()));
        }
        if self.eval_eps_grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(FqeError::Config("eval_eps_grid entries must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction <= 0.0 {
            return Err(FqeError::Config("train_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.delta) || self.delta <= 0.0 {
            return Err(FqeError::Config("delta must lie in (0, 1)".into()));
        }
        for hp in &self.horizons {
            if hp.h == 0 || !(0.0..=1.0).contains(&hp.gamma) {
                return Err(FqeError::Config(format!(
                    "invalid horizon point h={} gamma={}",
                    hp.h, hp.gamma
                )));
            }
        }
        for m in &self.methods {
            if let MethodSpec::Klm { kernels } | MethodSpec::KlmFp { kernels } = m {
                if kernels.is_empty() {
                    return Err(FqeError::Config("kernel list must be non-empty".into()));
                }
                for spec in kernels {
                    spec.parse::<crate::kernel::KernelKind>()
                        .map_err(|e| FqeError::Config(format!("kernel '{spec}': {e}")))?;
                }
            }
        }
        self.candidates.resolve()?;
        self.env.build()?;
        Ok(())
    }
}

/// One sweep row. `wall_ms` is pinned to zero in emitted artifacts so
/// repeated runs are byte-identical; timing is reported on stderr instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub seed: u64,
    pub method: String,
    pub kernel: String,
    pub n: usize,
    pub h: usize,
    pub gamma: f64,
    pub eps_eval: f64,
    pub selected_id: String,
    pub delta_j: Option<f64>,
    pub excess_mae: Option<f64>,
    pub bound_value: Option<f64>,
    /// Per-candidate scores; carried for summaries, not in the CSV columns.
    pub scores: Vec<f64>,
    pub wall_ms: u64,
    pub status: String,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Instantiate a candidate set from specs, fitting the regression-backed
/// candidates on `train`.
pub fn build_candidate_set(
    specs: &[CandidateSpec],
    train: &TransitionDataset,
    mdp: &TabularMdp,
) -> Result<CandidateSet> {
    let features = FeatureMap::one_hot(mdp.n_states, mdp.n_actions);
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let id = spec.id();
        let candidate = match spec {
            CandidateSpec::Exact => BellmanOperatorCandidate::exact_tabular(id),
            CandidateSpec::BrokenShift { shift } => BellmanOperatorCandidate::constant_shift(
                id,
                BellmanOperatorCandidate::exact_tabular("exact-base"),
                *shift,
            ),
            CandidateSpec::SignedShift { magnitude } => {
                let half = mdp.n_states / 2;
                let offsets: Vec<f64> = (0..mdp.n_pairs())
                    .map(|c| {
                        if c / mdp.n_actions < half { *magnitude } else { -magnitude }
                    })
                    .collect();
                BellmanOperatorCandidate::shifted_exact(id, offsets)
            }
            CandidateSpec::TabularMean => fit_fqe_operator(
                id,
                train,
                mdp.n_states,
                mdp.n_actions,
                &RegressorSpec::TabularMean,
            )?,
            CandidateSpec::Ridge { lambda } => fit_fqe_operator(
                id,
                train,
                mdp.n_states,
                mdp.n_actions,
                &RegressorSpec::Ridge { lambda: *lambda, features: features.clone() },
            )?,
            CandidateSpec::Knn { k } => fit_fqe_operator(
                id,
                train,
                mdp.n_states,
                mdp.n_actions,
                &RegressorSpec::Knn { k: *k, features: features.clone() },
            )?,
        };
        out.push(candidate);
    }
    CandidateSet::new(out)
}

struct MethodRun {
    method: &'static str,
    kernel: String,
    report: Result<(SelectionReport, usize)>,
}

fn grid_tag(ni: usize, hi: usize, ei: usize) -> u64 {
    ((ni as u64) << 40) | ((hi as u64) << 24) | ((ei as u64) << 8) | 0xb7
}

/// Execute the full sweep. Rows are produced in a fixed deterministic order;
/// failed grid points are kept with their failure reason so the row count
/// always equals grid size times methods.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let mdp = cfg.env.build()?;
    let mu = cfg.behavior.resolve(&mdp)?;
    let specs = cfg.candidates.resolve()?;
    let uniform = Policy::uniform(mdp.n_states, mdp.n_actions);
    let mut rows = Vec::new();

    for &seed in &cfg.seeds {
        for (ni, &n) in cfg.n_grid.iter().enumerate() {
            for (hi, hp) in cfg.horizons.iter().enumerate() {
                let finite = HorizonSpec::finite(hp.h, hp.gamma)?;
                let expert = greedy_expert(&mdp, &finite);
                for (ei, &eps) in cfg.eval_eps_grid.iter().enumerate() {
                    let policy = mix_policies(&uniform, &expert, eps)?;
                    let data_seed = derive_seed(seed, grid_tag(ni, hi, ei));
                    let point = run_grid_point(
                        cfg, &mdp, &mu, &specs, &policy, &finite, n, data_seed,
                    );
                    for run in point {
                        let (selected_id, delta_j, excess_mae, bound_value, scores, h, status) =
                            match run.report {
                                Ok((report, h_used)) => (
                                    report.selected_id,
                                    Some(report.delta_j),
                                    Some(report.excess_mae),
                                    Some(report.bound_value),
                                    report.per_candidate_scores,
                                    h_used,
                                    "ok".to_string(),
                                ),
                                Err(e) => (
                                    String::new(),
                                    None,
                                    None,
                                    None,
                                    Vec::new(),
                                    hp.h,
                                    e.to_string().replace([',', '\n'], ";"),
                                ),
                            };
                        rows.push(RunResult {
                            seed,
                            method: run.method.to_string(),
                            kernel: run.kernel,
                            n,
                            h,
                            gamma: hp.gamma,
                            eps_eval: eps,
                            selected_id,
                            delta_j,
                            excess_mae,
                            bound_value,
                            scores,
                            wall_ms: 0,
                            status,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn run_grid_point(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    mu: &[f64],
    specs: &[CandidateSpec],
    policy: &Policy,
    finite: &HorizonSpec,
    n: usize,
    data_seed: u64,
) -> Vec<MethodRun> {
    let prep = (|| -> Result<_> {
        let d = sample_dataset(mdp, mu, n, data_seed)?;
        let (train, valid) = split_dataset(&d, cfg.train_fraction, data_seed)?;
        let cset = build_candidate_set(specs, &train, mdp)?;
        let kernel_features = fit_feature_normalization(
            &FeatureMap::one_hot(mdp.n_states, mdp.n_actions),
            &train,
        )?;
        Ok((valid, cset, kernel_features))
    })();

    let mut runs = Vec::new();
    match prep {
        Err(e) => {
            // Every requested method row at this grid point fails the same way.
            let msg = e.to_string();
            for m in &cfg.methods {
                match m {
                    MethodSpec::Rm => runs.push(MethodRun {
                        method: "RM",
                        kernel: "-".into(),
                        report: Err(FqeError::Config(msg.clone())),
                    }),
                    MethodSpec::RmFp => runs.push(MethodRun {
                        method: "RM-FP",
                        kernel: "-".into(),
                        report: Err(FqeError::Config(msg.clone())),
                    }),
                    MethodSpec::Klm { kernels } => {
                        for k in kernels {
                            runs.push(MethodRun {
                                method: "KLM",
                                kernel: k.clone(),
                                report: Err(FqeError::Config(msg.clone())),
                            });
                        }
                    }
                    MethodSpec::KlmFp { kernels } => {
                        for k in kernels {
                            runs.push(MethodRun {
                                method: "KLM-FP",
                                kernel: k.clone(),
                                report: Err(FqeError::Config(msg.clone())),
                            });
                        }
                    }
                }
            }
            return runs;
        }
        Ok((valid, cset, kernel_features)) => {
            let ctx = OperatorContext::new(mdp, policy, finite);
            // Shared finite-horizon iterates across RM and the KLM kernels.
            let mut seq_cache = None;
            let fp_cfg = FixedPointConfig::for_dataset_size(valid.len());

            for m in &cfg.methods {
                match m {
                    MethodSpec::Rm => {
                        let report = (|| {
                            if seq_cache.is_none() {
                                seq_cache = Some(compute_sequences(&cset, &ctx)?);
                            }
                            let seqs = seq_cache.as_ref().unwrap();
                            Ok((select_rm_from(&cset, seqs, &valid, &ctx)?, finite_steps(finite)))
                        })();
                        runs.push(MethodRun { method: "RM", kernel: "-".into(), report });
                    }
                    MethodSpec::Klm { kernels } => {
                        for spec in kernels {
                            let report = (|| {
                                let k = Kernel::parse(spec, kernel_features.clone())?;
                                if seq_cache.is_none() {
                                    seq_cache = Some(compute_sequences(&cset, &ctx)?);
                                }
                                let seqs = seq_cache.as_ref().unwrap();
                                Ok((
                                    select_klm_from(&cset, &k, seqs, &valid, &ctx)?,
                                    finite_steps(finite),
                                ))
                            })();
                            runs.push(MethodRun { method: "KLM", kernel: spec.clone(), report });
                        }
                    }
                    MethodSpec::RmFp => {
                        let report = (|| {
                            if finite.gamma >= 1.0 {
                                return Err(FqeError::InvalidHorizon(
                                    "fixed-point methods require gamma below one".into(),
                                ));
                            }
                            let fp = HorizonSpec::infinite(finite.gamma)?;
                            let fp_ctx = OperatorContext::new(mdp, policy, &fp);
                            Ok((
                                select_rm_fp(&cset, &fp_cfg, &valid, &fp_ctx)?,
                                fp_cfg.h_star,
                            ))
                        })();
                        runs.push(MethodRun { method: "RM-FP", kernel: "-".into(), report });
                    }
                    MethodSpec::KlmFp { kernels } => {
                        for spec in kernels {
                            let report = (|| {
                                if finite.gamma >= 1.0 {
                                    return Err(FqeError::InvalidHorizon(
                                        "fixed-point methods require gamma below one".into(),
                                    ));
                                }
                                let k = Kernel::parse(spec, kernel_features.clone())?;
                                let fp = HorizonSpec::infinite(finite.gamma)?;
                                let fp_ctx = OperatorContext::new(mdp, policy, &fp);
                                Ok((
                                    select_klm_fp(&cset, &k, &fp_cfg, &valid, &fp_ctx)?,
                                    fp_cfg.h_star,
                                ))
                            })();
                            runs.push(MethodRun { method: "KLM-FP", kernel: spec.clone(), report });
                        }
                    }
                }
            }
        }
    }
    runs
}

fn finite_steps(h: &HorizonSpec) -> usize {
    match h.horizon {
        crate::mdp::Horizon::Finite(n) => n,
        crate::mdp::Horizon::Infinite => h.effective_steps(),
    }
}

/// Method identity used for grouping rows: method name plus kernel spec for
/// kernel methods.
pub fn method_key(row: &RunResult) -> String {
    if row.kernel == "-" {
        row.method.clone()
    } else {
        format!("{}({})", row.method, row.kernel)
    }
}

fn median(sorted: &mut Vec<f64>) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateOutcome {
    /// Least-squares slope of log(median excess + floor) against log n.
    Slope(f64),
    /// Every median sits exactly at zero: the error has hit the floor and no
    /// rate can be read off.
    Floor,
}

const RATE_FLOOR: f64 = 1e-6;

/// Fit the log-log rate of the median excess error against dataset size for
/// one method key.
pub fn rate_check(results: &[RunResult], key: &str) -> Result<RateOutcome> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in results {
        if row.is_ok() && method_key(row) == key {
            if let Some(e) = row.excess_mae {
                by_n.entry(row.n).or_default().push(e);
            }
        }
    }
    if by_n.len() < 3 {
        return Err(FqeError::InvalidArgument(format!(
            "rate check needs at least 3 distinct n values, found {}",
            by_n.len()
        )));
    }
    if let Some((n, v)) = by_n.iter().find(|(_, v)| v.len() < 10) {
        return Err(FqeError::InvalidArgument(format!(
            "rate check needs at least 10 runs per n, found {} at n={n}",
            v.len()
        )));
    }
    let medians: Vec<(usize, f64)> = by_n
        .into_iter()
        .map(|(n, mut v)| {
            let m = median(&mut v);
            (n, m)
        })
        .collect();
    if medians.iter().all(|(_, m)| *m <= 0.0) {
        return Ok(RateOutcome::Floor);
    }
    let points: Vec<(f64, f64)> = medians
        .iter()
        .map(|(n, m)| ((*n as f64).ln(), (m + RATE_FLOOR).ln()))
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(RateOutcome::Slope(sxy / sxx))
}

pub const CSV_HEADER: &str =
    "seed,method,kernel,n,H,gamma,eps_eval,selected_id,delta_j,excess_mae,bound_value,wall_ms,status";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Render rows in the stable column order.
pub fn results_to_csv(results: &[RunResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.method,
            r.kernel,
            r.n,
            r.h,
            r.gamma,
            r.eps_eval,
            r.selected_id,
            fmt_opt(r.delta_j),
            fmt_opt(r.excess_mae),
            fmt_opt(r.bound_value),
            r.wall_ms,
            r.status
        ));
    }
    out
}

/// Parse a results CSV produced by `results_to_csv`. Per-candidate scores
/// are not part of the column set, so parsed rows carry empty score lists.
pub fn parse_results_csv(text: &str) -> Result<Vec<RunResult>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(FqeError::InvalidArgument("missing or unexpected csv header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 13 {
            return Err(FqeError::InvalidArgument(format!(
                "row {} has {} columns, expected 13",
                i + 2,
                parts.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| FqeError::InvalidArgument(format!("bad number '{s}'")))
        };
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse_f(s).map(Some)
            }
        };
        out.push(RunResult {
            seed: parts[0]
                .parse()
                .map_err(|_| FqeError::InvalidArgument(format!("bad seed '{}'", parts[0])))?,
            method: parts[1].to_string(),
            kernel: parts[2].to_string(),
            n: parts[3]
                .parse()
                .map_err(|_| FqeError::InvalidArgument(format!("bad n '{}'", parts[3])))?,
            h: parts[4]
                .parse()
                .map_err(|_| FqeError::InvalidArgument(format!("bad H '{}'", parts[4])))?,
            gamma: parse_f(parts[5])?,
            eps_eval: parse_f(parts[6])?,
            selected_id: parts[7].to_string(),
            delta_j: parse_opt(parts[8])?,
            excess_mae: parse_opt(parts[9])?,
            bound_value: parse_opt(parts[10])?,
            scores: Vec::new(),
            wall_ms: parts[11]
                .parse()
                .map_err(|_| FqeError::InvalidArgument(format!("bad wall_ms '{}'", parts[11])))?,
            status: parts[12].to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsAggregate {
    pub runs: usize,
    pub failed: usize,
    pub mean_excess_mae: Option<f64>,
    pub sd_excess_mae: Option<f64>,
}

/// Per-method, per-mixture aggregates over seeds.
pub fn summarize(results: &[RunResult]) -> BTreeMap<String, BTreeMap<String, EpsAggregate>> {
    let mut grouped: BTreeMap<String, BTreeMap<String, (usize, usize, Vec<f64>)>> =
        BTreeMap::new();
    for row in results {
        let entry = grouped
            .entry(method_key(row))
            .or_default()
            .entry(format!("eps={}", row.eps_eval))
            .or_insert((0, 0, Vec::new()));
        entry.0 += 1;
        if row.is_ok() {
            if let Some(e) = row.excess_mae {
                entry.2.push(e);
            }
        } else {
            entry.1 += 1;
        }
    }
    grouped
        .into_iter()
        .map(|(method, by_eps)| {
            let inner = by_eps
                .into_iter()
                .map(|(eps, (runs, failed, values))| {
                    let agg = if values.is_empty() {
                        EpsAggregate { runs, failed, mean_excess_mae: None, sd_excess_mae: None }
                    } else {
                        let (m, s) = mean_sd(&values);
                        EpsAggregate {
                            runs,
                            failed,
                            mean_excess_mae: Some(m),
                            sd_excess_mae: Some(s),
                        }
                    };
                    (eps, agg)
                })
                .collect();
            (method, inner)
        })
        .collect()
}

fn sanitize_file_stem(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Write results.csv, summary.json, and one plot series per method into
/// `out_dir`. Output is byte-deterministic for a fixed result list.
pub fn emit_results(results: &[RunResult], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows = results.to_vec();
    rows.sort_by(|a, b| {
        (a.seed, &a.method, &a.kernel, a.n, a.h)
            .partial_cmp(&(b.seed, &b.method, &b.kernel, b.n, b.h))
            .unwrap()
            .then(a.gamma.partial_cmp(&b.gamma).unwrap())
            .then(a.eps_eval.partial_cmp(&b.eps_eval).unwrap())
    });

    let csv = results_to_csv(&rows);
    std::fs::write(out_dir.join("results.csv"), csv)?;

    let summary = summarize(&rows);
    let mut f = std::fs::File::create(out_dir.join("summary.json"))?;
    f.write_all(serde_json::to_string_pretty(&summary)?.as_bytes())?;
    f.write_all(b"\n")?;

    for (key, by_eps) in &summary {
        let mut plot = String::from("eps_eval,mean_excess_mae,sd_excess_mae\n");
        // Keys are "eps=<value>"; sort numerically for the series.
        let mut pts: Vec<(f64, &EpsAggregate)> = by_eps
            .iter()
            .filter_map(|(k, agg)| {
                k.strip_prefix("eps=").and_then(|v| v.parse().ok()).map(|e: f64| (e, agg))
            })
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for (eps, agg) in pts {
            plot.push_str(&format!(
                "{},{},{}\n",
                eps,
                fmt_opt(agg.mean_excess_mae),
                fmt_opt(agg.sd_excess_mae)
            ));
        }
        let name = format!("plot_{}.csv", sanitize_file_stem(key));
        std::fs::write(out_dir.join(name), plot)?;
    }
    Ok(())
}
