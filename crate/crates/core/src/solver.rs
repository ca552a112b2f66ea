//! Multi-start damped least-squares solution of the restoring constraints.
//!
//! The unknowns are the free control angles of every segment. Residuals are
//! the real and imaginary parts of the off-diagonal receiver-block entries of
//! the model propagator. Each start runs a Levenberg-Marquardt iteration with
//! a central finite-difference Jacobian; converged starts are scored against
//! the exact propagator of the same schedule.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{
    amplitudes_from_angles, build_couplings, ChainSpec, ControlSchedule, CouplingMatrix,
};
use crate::error::{Error, Result};
use crate::propagator::{EvolutionModel, ScheduleEvaluator};
use crate::restore::{lambdas, residual_norm, residuals, LambdaSet, ReceiverBlock};

pub const DEFAULT_TOL_ROOT: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 200;
/// Central-difference step on the angles, in radians.
pub const FD_STEP: f64 = 1e-6;

/// Iterations without a 0.1% improvement of the best residual before a
/// start is abandoned.
const STALL_WINDOW: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub k_omega: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub tol_root: f64,
    pub max_iters: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            k_omega: 4,
            n_starts: 100,
            seed: 0,
            tol_root: DEFAULT_TOL_ROOT,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveProblem {
    pub spec: ChainSpec,
    pub coupling: CouplingMatrix,
    pub model: EvolutionModel,
    pub tau_reg: f64,
    pub settings: SolveSettings,
}

impl SolveProblem {
    pub fn new(
        spec: ChainSpec,
        model: EvolutionModel,
        tau_reg: f64,
        settings: SolveSettings,
    ) -> Result<Self> {
        let coupling = build_couplings(&spec);
        let problem = Self {
            spec,
            coupling,
            model,
            tau_reg,
            settings,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.model.validate()?;
        let s = &self.settings;
        if s.k_omega == 0 {
            return Err(Error::Schedule("k_omega must be >= 1".into()));
        }
        if self.n_effective_unknowns() < self.n_residuals() {
            return Err(Error::Schedule(format!(
                "{} effective unknowns cannot satisfy {} residual equations; increase k_omega",
                self.n_effective_unknowns(),
                self.n_residuals()
            )));
        }
        if !(self.tau_reg.is_finite() && self.tau_reg >= 0.0) {
            return Err(Error::Schedule(format!(
                "invalid registration time {}",
                self.tau_reg
            )));
        }
        if s.n_starts == 0 {
            return Err(Error::Schedule("n_starts must be >= 1".into()));
        }
        if !(s.tol_root > 0.0) {
            return Err(Error::Schedule("tol_root must be positive".into()));
        }
        Ok(())
    }

    pub fn n_unknowns(&self) -> usize {
        self.settings.k_omega * self.spec.free_controls()
    }

    /// Angles that can move the receiver block. Under the pulse model each
    /// segment's pulse precedes its free evolution, so the first pulse only
    /// dephases extended-receiver sites, which the sender state leaves empty.
    pub fn n_effective_unknowns(&self) -> usize {
        match self.model {
            EvolutionModel::Pulse { .. } => self.n_unknowns() - self.spec.free_controls(),
            _ => self.n_unknowns(),
        }
    }

    pub fn n_residuals(&self) -> usize {
        2 * self.spec.n_receiver * (self.spec.n_sender - 1)
    }

    pub fn with_tau(&self, tau_reg: f64) -> Self {
        Self {
            tau_reg,
            ..self.clone()
        }
    }

    pub fn with_model(&self, model: EvolutionModel) -> Self {
        Self {
            model,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut p = self.clone();
        p.settings.seed = seed;
        p
    }

    pub fn evaluator(&self) -> Result<ScheduleEvaluator> {
        ScheduleEvaluator::new(
            &self.spec,
            &self.coupling,
            self.model,
            self.settings.k_omega,
            self.tau_reg,
        )
    }

    pub fn schedule(&self, flat_angles: &[f64]) -> Result<ControlSchedule> {
        ControlSchedule::from_flat(&self.spec, self.settings.k_omega, self.tau_reg, flat_angles)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub start_index: usize,
    /// `k_omega x (n_ext_receiver - 1)` free angles.
    pub angles: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub exact_residual_norm: f64,
    /// Largest off-diagonal receiver entry of the exact propagator.
    pub exact_offdiag_max: f64,
    pub lam_model: LambdaSet,
    pub lam_exact: LambdaSet,
    pub converged: bool,
    pub iterations: usize,
}

impl Solution {
    pub fn flat_angles(&self) -> Vec<f64> {
        self.angles.iter().flatten().copied().collect()
    }

    /// Per-segment extended-receiver amplitudes, closure last.
    pub fn amplitudes(&self) -> Vec<Vec<f64>> {
        self.angles
            .iter()
            .map(|a| crate::chain::amplitudes_from_angles(a))
            .collect()
    }

    /// `(min |a|, max |a|)` over the free (bounded) amplitudes.
    pub fn free_amplitude_extrema(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for a in self.angles.iter().flatten() {
            let v = (2.0 * a.sin()).abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn closure_amplitude_max(&self) -> f64 {
        self.amplitudes()
            .iter()
            .filter_map(|a| a.last())
            .map(|a| a.abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionSet {
    pub tau_reg: f64,
    pub n_starts: usize,
    /// Converged solutions, ordered by start index.
    pub solutions: Vec<Solution>,
    /// `tau_reg == 0`: constraints hold trivially with vanishing scale factors.
    pub degenerate: bool,
}

impl SolutionSet {
    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of an independent substream, e.g. one solver start.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x6A09_E667_F3BC_C909)))
}

/// Initial angles for start `index`, uniform on `(-pi, pi]`.
pub fn initial_angles(problem: &SolveProblem, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(problem.settings.seed, index as u64));
    (0..problem.n_unknowns())
        .map(|_| PI - 2.0 * PI * rng.random::<f64>())
        .collect()
}

struct Objective<'a> {
    problem: &'a SolveProblem,
    evaluator: &'a ScheduleEvaluator,
}

impl Objective<'_> {
    fn block(&self, x: &[f64]) -> Result<ReceiverBlock> {
        let schedule = self.problem.schedule(x)?;
        let cols = self.evaluator.model_sender_columns(&schedule)?;
        Ok(ReceiverBlock::from_sender_columns(
            &cols,
            &self.problem.spec,
        ))
    }

    fn residuals(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(residuals(&self.block(x)?)))
    }

    /// Central differences. Each angle only enters one segment, so every
    /// probe re-evaluates that segment alone between cached products of the
    /// others.
    fn jacobian(&self, x: &[f64], m: usize) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jac = DMatrix::zeros(m, n);
        if n == 0 {
            return Ok(jac);
        }
        let spec = &self.problem.spec;
        let per_segment = spec.free_controls();
        let schedule = self.problem.schedule(x)?;
        let split = self.evaluator.split_model(&schedule)?;
        let probe_residuals = |angles: &[f64], j: usize| {
            let omega = segment_omega(spec, angles);
            let u_hat = self.evaluator.block_with_segment(&split, j, &omega);
            DVector::from_vec(residuals(&ReceiverBlock { u_hat }))
        };
        for (j, seg) in x.chunks(per_segment).enumerate() {
            let mut probe = seg.to_vec();
            for i in 0..per_segment {
                probe[i] = seg[i] + FD_STEP;
                let plus = probe_residuals(&probe, j);
                probe[i] = seg[i] - FD_STEP;
                let minus = probe_residuals(&probe, j);
                probe[i] = seg[i];
                jac.set_column(j * per_segment + i, &((plus - minus) / (2.0 * FD_STEP)));
            }
        }
        Ok(jac)
    }
}

fn segment_omega(spec: &ChainSpec, angles: &[f64]) -> Vec<f64> {
    let mut omega = vec![0.0; spec.n_total];
    let start = spec.ext_receiver_start();
    for (k, a) in amplitudes_from_angles(angles).into_iter().enumerate() {
        omega[start + k] = a;
    }
    omega
}

/// Levenberg-Marquardt with Nielsen's damping update. Returns the best point,
/// its residual norm and the number of Jacobian evaluations.
fn levenberg_marquardt(
    obj: &Objective<'_>,
    x0: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let mut x = x0;
    let mut r = obj.residuals(&x)?;
    let mut norm = r.norm();
    let m = r.len();
    let n = x.len();
    if norm < tol || n == 0 {
        return Ok((x, norm, 0));
    }

    let mut jac = obj.jacobian(&x, m)?;
    let mut jtj = jac.transpose() * &jac;
    let mut grad = jac.transpose() * &r;
    let mut mu = 1e-3 * jtj.diagonal().max().max(1e-12);
    let mut nu = 2.0;
    let mut iters = 1;
    let mut best_since = norm;
    let mut stall = 0;

    while iters < max_iters {
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += mu;
        }
        let step = match a.cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => {
                mu *= nu;
                nu *= 2.0;
                if mu > 1e20 {
                    break;
                }
                continue;
            }
        };
        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step.norm() <= 1e-15 * (x_norm + 1e-15) {
            break;
        }
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let r_trial = obj.residuals(&trial)?;
        let trial_norm = r_trial.norm();
        let predicted = step.dot(&(step.scale(mu) - &grad));
        let gain = (norm * norm - trial_norm * trial_norm) / predicted;

        if gain > 0.0 && trial_norm.is_finite() {
            x = trial;
            r = r_trial;
            norm = trial_norm;
            if norm < tol {
                break;
            }
            jac = obj.jacobian(&x, m)?;
            jtj = jac.transpose() * &jac;
            grad = jac.transpose() * &r;
            iters += 1;
            mu *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
        } else {
            mu *= nu;
            nu *= 2.0;
            if mu > 1e20 {
                break;
            }
        }

        if norm < best_since * (1.0 - 1e-3) {
            best_since = norm;
            stall = 0;
        } else {
            stall += 1;
            if stall >= STALL_WINDOW {
                break;
            }
        }
    }
    Ok((x, norm, iters))
}

/// Runs one start from `initial` (flattened angles) and scores the result
/// under the exact propagator.
pub fn solve_once(
    problem: &SolveProblem,
    evaluator: &ScheduleEvaluator,
    initial: &[f64],
    start_index: usize,
) -> Result<Solution> {
    if initial.len() != problem.n_unknowns() {
        return Err(Error::Schedule(format!(
            "expected {} initial angles, got {}",
            problem.n_unknowns(),
            initial.len()
        )));
    }
    let obj = Objective { problem, evaluator };
    let (x, _, iterations) = levenberg_marquardt(
        &obj,
        initial.to_vec(),
        problem.settings.tol_root,
        problem.settings.max_iters,
    )?;
    evaluate_solution(problem, evaluator, &x, start_index, iterations)
}

/// Scores a fixed angle vector. Pure in its inputs.
pub fn evaluate_solution(
    problem: &SolveProblem,
    evaluator: &ScheduleEvaluator,
    flat_angles: &[f64],
    start_index: usize,
    iterations: usize,
) -> Result<Solution> {
    let schedule = problem.schedule(flat_angles)?;
    let spec = &problem.spec;
    let model_block =
        ReceiverBlock::from_sender_columns(&evaluator.model_sender_columns(&schedule)?, spec);
    let exact_block = if evaluator.model() == EvolutionModel::Exact {
        model_block.clone()
    } else {
        ReceiverBlock::from_sender_columns(&evaluator.exact_sender_columns(&schedule)?, spec)
    };
    let residual = residual_norm(&model_block);
    Ok(Solution {
        start_index,
        angles: schedule.angles,
        residual_norm: residual,
        exact_residual_norm: residual_norm(&exact_block),
        exact_offdiag_max: exact_block.offdiag_max(),
        lam_model: lambdas(&model_block),
        lam_exact: lambdas(&exact_block),
        converged: residual < problem.settings.tol_root,
        iterations,
    })
}

/// Runs every start (in parallel on the current rayon pool) and keeps the
/// converged ones in start order.
pub fn multi_start(problem: &SolveProblem) -> Result<SolutionSet> {
    let (solutions, _) = multi_start_all(problem)?;
    Ok(SolutionSet {
        tau_reg: problem.tau_reg,
        n_starts: problem.settings.n_starts,
        solutions: solutions.into_iter().filter(|s| s.converged).collect(),
        degenerate: problem.tau_reg == 0.0,
    })
}

/// Every start, converged or not, plus the shared evaluator.
pub fn multi_start_all(problem: &SolveProblem) -> Result<(Vec<Solution>, ScheduleEvaluator)> {
    problem.validate()?;
    let evaluator = problem.evaluator()?;
    let solutions = (0..problem.settings.n_starts)
        .into_par_iter()
        .map(|i| solve_once(problem, &evaluator, &initial_angles(problem, i), i))
        .collect::<Result<Vec<_>>>()?;
    Ok((solutions, evaluator))
}

/// Re-scores solutions of a pulse-model problem against the exact
/// reference at another pulse ratio. Model quantities are unchanged.
pub fn rescore_eps(
    problem: &SolveProblem,
    set: &SolutionSet,
    eps_tilde: f64,
) -> Result<SolutionSet> {
    let evaluator = problem.evaluator()?.with_eps_tilde(eps_tilde)?;
    let scoped = problem.with_model(evaluator.model());
    let solutions = set
        .solutions
        .par_iter()
        .map(|s| {
            let mut out = evaluate_solution(
                &scoped,
                &evaluator,
                &s.flat_angles(),
                s.start_index,
                s.iterations,
            )?;
            out.converged = s.converged;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SolutionSet {
        solutions,
        ..set.clone()
    })
}
