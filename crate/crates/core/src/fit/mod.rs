//! Maximum-likelihood fitting of the mechanistic model.
//!
//! Optimization runs in an unconstrained space of `4 + 2K` coordinates:
//! `[b, u_s, u_f, L, w_s…, w_f…]` with `β = tanh b`, `κ = exp u`,
//! `ω = softmax w` and `log θ = L`. The objective is the mean negative
//! log-likelihood per decision plus `Ω / n_decisions`, where
//!
//! `Ω = λ_ω (‖ω_s − 1/K‖² + ‖ω_f − 1/K‖²) + λ_κ (κ_s² + κ_f²) + λ_β (β − β₀)² + λ_occ (log θ)²`.
//!
//! Decisions are every sampling round whose choice names an arm (available
//! or occluded) and every final choice that names an arm. Memory moves only
//! on rounds that revealed evidence.

pub mod optim;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{self, LlrConstants};
use crate::env::{TaskConfig, Trajectory, TrajectoryError};
use crate::mech::{self, MechParams};
use crate::rng::{self, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid fit config: {0}")]
    Config(String),
    #[error("game {game_id}: {source}")]
    Trajectory { game_id: String, source: TrajectoryError },
    #[error("dataset has no decisions to fit")]
    NoDecisions,
    #[error("split leaves an empty side ({train} train / {test} test games)")]
    EmptySplit { train: usize, test: usize },
    #[error("parameters are for {params} arms, task has {task}")]
    ArmMismatch { params: usize, task: usize },
    #[error("all {starts} starts diverged")]
    Diverged { starts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda_omega: f64,
    pub lambda_kappa: f64,
    pub lambda_beta: f64,
    pub lambda_occ: f64,
    pub beta_ref: f64,
    pub n_starts: usize,
    pub max_iters: usize,
    /// Max-norm gradient tolerance in unconstrained coordinates.
    pub tol: f64,
    /// Fraction of games used for training; `None` fits on everything.
    pub train_fraction: Option<f64>,
    pub split_seed: u64,
    /// Seeds the random restarts.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_omega: 1e-3,
            lambda_kappa: 1e-3,
            lambda_beta: 1e-3,
            lambda_occ: 1e-3,
            beta_ref: 0.0,
            n_starts: 8,
            max_iters: 500,
            tol: 1e-6,
            train_fraction: Some(0.8),
            split_seed: 0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let weights = [self.lambda_omega, self.lambda_kappa, self.lambda_beta, self.lambda_occ];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(FitError::Config("regularizer weights must be finite and non-negative".into()));
        }
        if self.n_starts == 0 || self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(FitError::Config("n_starts, max_iters and tol must be positive".into()));
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(FitError::Config(format!("train fraction must lie in (0, 1), got {f}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.beta_ref) {
            return Err(FitError::Config("beta_ref must lie in [-1, 1]".into()));
        }
        Ok(())
    }

    /// Same config without regularization.
    pub fn unregularized(&self) -> Self {
        FitConfig { lambda_omega: 0.0, lambda_kappa: 0.0, lambda_beta: 0.0, lambda_occ: 0.0, ..self.clone() }
    }
}

/// Policies the model assigns along one logged game.
#[derive(Debug, Clone, PartialEq)]
pub struct Unrolled {
    /// Sampling policy for every round (built from the pre-round memory and
    /// that round's availability), whether or not the round is a decision.
    pub sampling: Vec<Vec<f64>>,
    pub final_policy: Vec<f64>,
}

/// Replays a game through the model's memory.
pub fn unroll_policies(traj: &Trajectory, params: &MechParams, config: &TaskConfig) -> Result<Unrolled, FitError> {
    let k = config.k_arms;
    if params.k() != k {
        return Err(FitError::ArmMismatch { params: params.k(), task: k });
    }
    traj.validate(k)
        .map_err(|source| FitError::Trajectory { game_id: traj.game_id.clone(), source })?;
    let llr = LlrConstants::from_config(config);
    let log_ws: Vec<f64> = params.omega_s.iter().map(|w| w.ln()).collect();
    let log_wf: Vec<f64> = params.omega_f.iter().map(|w| w.ln()).collect();
    let mut h = vec![0.0; k];
    let mut sampling = Vec::with_capacity(traj.rounds.len());
    for r in &traj.rounds {
        let log_mask: Vec<f64> =
            (0..k).map(|j| if r.available.contains(j) { 0.0 } else { -params.log_theta }).collect();
        sampling.push(exp_all(mech::log_policy(&h, params.kappa_s, &log_ws, &log_mask)));
        if let (true, Some(a), Some(o)) = (r.valid, r.choice, r.outcome) {
            h = mech::memory_update(&h, &llr.centered_increment(a, o, k), params.beta);
        }
    }
    let final_policy = exp_all(mech::log_policy(&h, params.kappa_f, &log_wf, &vec![0.0; k]));
    Ok(Unrolled { sampling, final_policy })
}

fn exp_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::exp).collect()
}

#[derive(Debug, Clone)]
struct Step {
    /// Arm named in this round, if any (a decision).
    choice: Option<usize>,
    /// 1.0 for occluded arms.
    occluded: Vec<f64>,
    /// Memory increment when the round revealed evidence.
    dh: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct PreparedGame {
    steps: Vec<Step>,
    final_choice: Option<usize>,
}

/// Validated dataset in the form the likelihood consumes.
#[derive(Debug, Clone)]
pub struct Prepared {
    k: usize,
    games: Vec<PreparedGame>,
    n_decisions: usize,
}

impl Prepared {
    pub fn new(dataset: &[Trajectory], config: &TaskConfig) -> Result<Self, FitError> {
        let k = config.k_arms;
        let llr = LlrConstants::from_config(config);
        let mut n_decisions = 0;
        let games = dataset
            .iter()
            .map(|t| {
                t.validate(k)
                    .map_err(|source| FitError::Trajectory { game_id: t.game_id.clone(), source })?;
                let steps = t
                    .rounds
                    .iter()
                    .map(|r| Step {
                        choice: r.choice,
                        occluded: (0..k).map(|j| if r.available.contains(j) { 0.0 } else { 1.0 }).collect(),
                        dh: match (r.valid, r.choice, r.outcome) {
                            (true, Some(a), Some(o)) => Some(llr.centered_increment(a, o, k)),
                            _ => None,
                        },
                    })
                    .collect::<Vec<_>>();
                n_decisions += steps.iter().filter(|s| s.choice.is_some()).count();
                let final_choice = t.final_decision.choice.filter(|_| t.final_decision.valid);
                n_decisions += final_choice.is_some() as usize;
                Ok(PreparedGame { steps, final_choice })
            })
            .collect::<Result<Vec<_>, FitError>>()?;
        Ok(Prepared { k, games, n_decisions })
    }

    pub fn n_decisions(&self) -> usize {
        self.n_decisions
    }

    pub fn n_games(&self) -> usize {
        self.games.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Unconstrained dimension for `k` arms.
pub fn n_coords(k: usize) -> usize {
    4 + 2 * k
}

/// Maps parameters into unconstrained coordinates. Boundary values are pulled
/// slightly inside (|β| ≤ 1 − 1e-12, κ ≥ 1e-12, ω ≥ 1e-12).
pub fn to_unconstrained(p: &MechParams) -> Vec<f64> {
    let mut x = Vec::with_capacity(n_coords(p.k()));
    x.push(p.beta.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh());
    x.push(p.kappa_s.max(1e-12).ln());
    x.push(p.kappa_f.max(1e-12).ln());
    x.push(p.log_theta);
    for w in [&p.omega_s, &p.omega_f] {
        x.extend(bayes::center(&w.iter().map(|v| v.max(1e-12).ln()).collect::<Vec<_>>()));
    }
    x
}

pub fn from_unconstrained(x: &[f64], k: usize) -> MechParams {
    MechParams {
        beta: x[0].tanh(),
        kappa_s: x[1].exp(),
        kappa_f: x[2].exp(),
        log_theta: x[3],
        omega_s: bayes::softmax(&x[4..4 + k]),
        omega_f: bayes::softmax(&x[4 + k..4 + 2 * k]),
    }
}

/// Penalty `Ω` on constrained parameters.
pub fn regularizer(p: &MechParams, cfg: &FitConfig) -> f64 {
    let u = 1.0 / p.k() as f64;
    let sq = |w: &[f64]| w.iter().map(|v| (v - u).powi(2)).sum::<f64>();
    cfg.lambda_omega * (sq(&p.omega_s) + sq(&p.omega_f))
        + cfg.lambda_kappa * (p.kappa_s.powi(2) + p.kappa_f.powi(2))
        + cfg.lambda_beta * (p.beta - cfg.beta_ref).powi(2)
        + cfg.lambda_occ * p.log_theta.powi(2)
}

fn regularizer_grad(x: &[f64], p: &MechParams, cfg: &FitConfig) -> Vec<f64> {
    let k = p.k();
    let u = 1.0 / k as f64;
    let mut g = vec![0.0; n_coords(k)];
    g[0] = cfg.lambda_beta * 2.0 * (p.beta - cfg.beta_ref) * (1.0 - p.beta * p.beta);
    g[1] = cfg.lambda_kappa * 2.0 * p.kappa_s * p.kappa_s;
    g[2] = cfg.lambda_kappa * 2.0 * p.kappa_f * p.kappa_f;
    g[3] = cfg.lambda_occ * 2.0 * x[3];
    for (off, w) in [(4, &p.omega_s), (4 + k, &p.omega_f)] {
        let inner: f64 = w.iter().map(|v| v * (v - u)).sum();
        for j in 0..k {
            g[off + j] = cfg.lambda_omega * 2.0 * w[j] * ((w[j] - u) - inner);
        }
    }
    g
}

/// Summed NLL of one game and its gradient in unconstrained coordinates.
fn game_nll(game: &PreparedGame, p: &MechParams, want_grad: bool) -> (f64, Vec<f64>) {
    let k = p.k();
    let rho = 1.0 - p.beta;
    let drho_db = -(1.0 - p.beta * p.beta);
    let log_ws: Vec<f64> = p.omega_s.iter().map(|w| w.ln()).collect();
    let log_wf: Vec<f64> = p.omega_f.iter().map(|w| w.ln()).collect();
    let mut h = vec![0.0; k];
    // dh/dρ
    let mut gh = vec![0.0; k];
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; n_coords(k)] } else { Vec::new() };
    let mut z = vec![0.0; k];

    let mut decide = |h: &[f64], gh: &[f64], kappa: f64, log_w: &[f64], occ: Option<&[f64]>, choice: usize,
                      kappa_idx: usize, w_off: usize, total: &mut f64, grad: &mut Vec<f64>| {
        for j in 0..k {
            z[j] = kappa * h[j] + log_w[j] - occ.map_or(0.0, |o| p.log_theta * o[j]);
        }
        let lse = bayes::log_sum_exp(&z);
        *total += lse - z[choice];
        if !want_grad {
            return;
        }
        let (mut d_kappa, mut d_b, mut d_l) = (0.0, 0.0, 0.0);
        for j in 0..k {
            let dz = (z[j] - lse).exp() - if j == choice { 1.0 } else { 0.0 };
            d_kappa += dz * h[j];
            d_b += dz * kappa * gh[j];
            if let Some(o) = occ {
                d_l -= dz * o[j];
            }
            grad[w_off + j] += dz;
        }
        grad[kappa_idx] += d_kappa * kappa;
        grad[0] += d_b * drho_db;
        grad[3] += d_l;
    };

    for s in &game.steps {
        if let Some(c) = s.choice {
            decide(&h, &gh, p.kappa_s, &log_ws, Some(&s.occluded), c, 1, 4, &mut total, &mut grad);
        }
        if let Some(dh) = &s.dh {
            for j in 0..k {
                gh[j] = h[j] + rho * gh[j];
                h[j] = rho * h[j] + dh[j];
            }
        }
    }
    if let Some(c) = game.final_choice {
        decide(&h, &gh, p.kappa_f, &log_wf, None, c, 2, 4 + k, &mut total, &mut grad);
    }
    (total, grad)
}

fn summed_nll(data: &Prepared, p: &MechParams, want_grad: bool) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = data.games.par_iter().map(|g| game_nll(g, p, want_grad)).collect();
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; n_coords(data.k)] } else { Vec::new() };
    for (v, g) in parts {
        total += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (total, grad)
}

/// Mean NLL per decision (nats) without regularization. Zero-mass choices
/// give `+∞`.
pub fn mean_nll(data: &Prepared, p: &MechParams) -> f64 {
    if data.n_decisions == 0 {
        return f64::NAN;
    }
    let (total, _) = summed_nll(data, p, false);
    if total.is_nan() {
        f64::INFINITY
    } else {
        total / data.n_decisions as f64
    }
}

/// Regularized objective `mean NLL + Ω / n_decisions`.
pub fn nll(data: &Prepared, p: &MechParams, cfg: &FitConfig) -> f64 {
    mean_nll(data, p) + regularizer(p, cfg) / data.n_decisions.max(1) as f64
}

/// Regularized objective and its gradient at unconstrained point `x`.
pub fn objective(data: &Prepared, x: &[f64], cfg: &FitConfig) -> (f64, Vec<f64>) {
    let p = from_unconstrained(x, data.k);
    let n = data.n_decisions.max(1) as f64;
    let (total, mut grad) = summed_nll(data, &p, true);
    let reg_grad = regularizer_grad(x, &p, cfg);
    for (g, r) in grad.iter_mut().zip(&reg_grad) {
        *g = (*g + r) / n;
    }
    let value = (total + regularizer(&p, cfg)) / n;
    (if value.is_nan() { f64::INFINITY } else { value }, grad)
}

/// Gradient of the regularized objective in unconstrained coordinates.
pub fn nll_gradient(data: &Prepared, p: &MechParams, cfg: &FitConfig) -> Vec<f64> {
    objective(data, &to_unconstrained(p), cfg).1
}

/// Game-level split, deterministic in `seed`.
pub fn split_dataset(dataset: &[Trajectory], fraction: f64, seed: u64) -> Result<(Vec<Trajectory>, Vec<Trajectory>), FitError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(FitError::Config(format!("train fraction must lie in (0, 1), got {fraction}")));
    }
    let n = dataset.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(FitError::EmptySplit { train: n_train, test: n - n_train });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Auxiliary));
    let (a, b) = idx.split_at(n_train);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a.iter().map(|&i| dataset[i].clone()).collect(), b.iter().map(|&i| dataset[i].clone()).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub starts: Vec<StartReport>,
    pub best_start: usize,
    pub best_objective: f64,
    pub converged: bool,
    pub grad_norm: f64,
    /// Second derivative of the unregularized mean NLL along `b = atanh β`.
    pub beta_curvature: f64,
    /// False when memory cannot influence the choices (both κ near zero or a
    /// flat likelihood along β); the reported β then carries no information.
    pub beta_identified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub reasoning: String,
    pub params: MechParams,
    pub train_nll: f64,
    pub test_nll: Option<f64>,
    pub n_train_games: usize,
    pub n_test_games: usize,
    pub n_train_decisions: usize,
    pub n_test_decisions: usize,
    pub diagnostics: FitDiagnostics,
}

fn initial_points(k: usize, cfg: &FitConfig) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(cfg.seed, Stream::Auxiliary);
    let mut first = to_unconstrained(&MechParams::neutral(k));
    first[3] = 1.0;
    let mut out = vec![first];
    while out.len() < cfg.n_starts {
        let mut x = vec![0.0; n_coords(k)];
        x[0] = rng.random_range(-1.0..1.0);
        x[1] = rng.random_range(-2.0..2.5);
        x[2] = rng.random_range(-2.0..2.5);
        x[3] = rng.random_range(-1.0..5.0);
        for v in &mut x[4..] {
            *v = rng.random_range(-0.5..0.5);
        }
        out.push(x);
    }
    out
}

fn beta_curvature(data: &Prepared, x: &[f64]) -> f64 {
    let h = 1e-4;
    let at = |d: f64| {
        let mut y = x.to_vec();
        y[0] += d;
        mean_nll(data, &from_unconstrained(&y, data.k))
    };
    (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h)
}

/// Fits on `train`, reporting held-out NLL on `test` when given.
pub fn fit_split(train: &Prepared, test: Option<&Prepared>, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    if train.n_decisions == 0 {
        return Err(FitError::NoDecisions);
    }
    let k = train.k;
    let outcomes: Vec<(optim::OptimOutcome, &'static str)> = initial_points(k, cfg)
        .par_iter()
        .map(|x0| {
            let out = optim::lbfgs(|x| objective(train, x, cfg), x0, cfg.max_iters, cfg.tol);
            if out.converged {
                return (out, "lbfgs");
            }
            // Line search stalled short of the tolerance; polish without derivatives.
            let start = if out.f.is_finite() { out.x.clone() } else { x0.clone() };
            let nm = optim::nelder_mead(|x| objective(train, x, cfg).0, &start, 0.1, 20 * cfg.max_iters, 1e-13);
            if nm.f < out.f {
                (optim::OptimOutcome { converged: nm.converged, ..nm }, "lbfgs+nelder-mead")
            } else {
                (out, "lbfgs")
            }
        })
        .collect();
    let starts: Vec<StartReport> = outcomes
        .iter()
        .map(|(o, m)| StartReport {
            objective: o.f,
            iterations: o.iterations,
            evaluations: o.evaluations,
            converged: o.converged,
            method: m.to_string(),
        })
        .collect();
    let best_start = (0..outcomes.len())
        .filter(|&i| outcomes[i].0.f.is_finite())
        .min_by(|&a, &b| outcomes[a].0.f.total_cmp(&outcomes[b].0.f))
        .ok_or(FitError::Diverged { starts: outcomes.len() })?;
    let best = &outcomes[best_start].0;
    let params = from_unconstrained(&best.x, k);
    let (_, grad) = objective(train, &best.x, cfg);
    let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let curvature = beta_curvature(train, &best.x);
    let beta_identified = params.kappa_s.max(params.kappa_f) > 1e-3 && curvature > 1e-6;
    Ok(FitResult {
        model: String::new(),
        reasoning: String::new(),
        train_nll: mean_nll(train, &params),
        test_nll: test.map(|t| mean_nll(t, &params)),
        n_train_games: train.n_games(),
        n_test_games: test.map_or(0, |t| t.n_games()),
        n_train_decisions: train.n_decisions,
        n_test_decisions: test.map_or(0, |t| t.n_decisions),
        diagnostics: FitDiagnostics {
            starts,
            best_start,
            best_objective: best.f,
            converged: best.converged || grad_norm < cfg.tol,
            grad_norm,
            beta_curvature: curvature,
            beta_identified,
        },
        params,
    })
}

/// Splits (when configured) and fits.
pub fn fit(dataset: &[Trajectory], config: &TaskConfig, cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    match cfg.train_fraction {
        Some(f) => {
            let (train, test) = split_dataset(dataset, f, cfg.split_seed)?;
            let train = Prepared::new(&train, config)?;
            let test = Prepared::new(&test, config)?;
            fit_split(&train, Some(&test), cfg)
        }
        None => fit_split(&Prepared::new(dataset, config)?, None, cfg),
    }
}
