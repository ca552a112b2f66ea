//! Quality characteristics of solution families over registration-time grids
//! and chain lengths.
//!
//! At one grid point, `s1` is the best (over solutions) worst-case exact
//! off-diagonal receiver entry, `s2` the best worst-case scale-factor error
//! of the model, and `lambda_best` the best worst-case model scale factor
//! modulus. Along the grid, `s3`, `s4` and `s5` are running maxima of these.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::propagator::EvolutionModel;
use crate::solver::{
    multi_start, rescore_eps, substream_seed, Solution, SolutionSet, SolveProblem,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricPoint {
    pub tau: f64,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
    pub s3: Option<f64>,
    pub s4: Option<f64>,
    pub s5: f64,
    pub lambda_best: f64,
    pub converged_count: usize,
    /// `(min |a|, max |a|)` of the free amplitudes of the solution attaining `s1`.
    pub s1_amplitudes: Option<(f64, f64)>,
}

impl MetricPoint {
    pub fn feasible(&self) -> bool {
        self.converged_count > 0
    }
}

fn min_by_key(set: &SolutionSet, key: impl Fn(&Solution) -> f64) -> Option<(&Solution, f64)> {
    set.solutions
        .iter()
        .map(|s| (s, key(s)))
        .fold(None, |acc, (s, v)| match acc {
            Some((_, best)) if best <= v => acc,
            _ => Some((s, v)),
        })
}

/// Statistics of one solution family. Running quantities are initialised to
/// the point's own values.
pub fn point_metrics(set: &SolutionSet, tau: f64) -> MetricPoint {
    let best_s1 = min_by_key(set, |s| s.exact_offdiag_max);
    let s1 = best_s1.map(|(_, v)| v);
    let s2 = min_by_key(set, |s| s.lam_model.max_deviation(&s.lam_exact)).map(|(_, v)| v);
    let lambda_best = set
        .solutions
        .iter()
        .map(|s| s.lam_model.min_abs())
        .fold(0.0, f64::max);
    MetricPoint {
        tau,
        s1,
        s2,
        s3: s1,
        s4: s2,
        s5: lambda_best,
        lambda_best,
        converged_count: set.len(),
        s1_amplitudes: best_s1.map(|(s, _)| s.free_amplitude_extrema()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub model: EvolutionModel,
    pub horizon: f64,
    pub step: f64,
    pub points: Vec<MetricPoint>,
    pub lambda_opt: f64,
    pub tau_0: Option<f64>,
}

impl SweepResult {
    /// Grid index of `tau_0`.
    pub fn tau_0_index(&self) -> Option<usize> {
        let t0 = self.tau_0?;
        self.points.iter().position(|p| p.tau == t0)
    }
}

/// `0, step, 2 step, ...` up to and including `horizon`.
pub fn tau_grid(horizon: f64, step: f64) -> Vec<f64> {
    let count = (horizon / step + 1e-9).floor() as usize;
    (0..=count).map(|k| k as f64 * step).collect()
}

fn running_max(acc: Option<f64>, v: Option<f64>) -> Option<f64> {
    match (acc, v) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// Fills running maxima along the ordered grid and extracts the optimum.
/// Infeasible points carry the running values forward unchanged.
pub fn accumulate(
    model: EvolutionModel,
    horizon: f64,
    step: f64,
    mut points: Vec<MetricPoint>,
) -> SweepResult {
    let (mut s3, mut s4, mut s5) = (None, None, 0.0f64);
    let mut tau_0 = None;
    let mut best = f64::NEG_INFINITY;
    for p in points.iter_mut() {
        if p.feasible() {
            s3 = running_max(s3, p.s1);
            s4 = running_max(s4, p.s2);
            s5 = s5.max(p.lambda_best);
            if p.lambda_best > best {
                best = p.lambda_best;
                tau_0 = Some(p.tau);
            }
        }
        p.s3 = s3;
        p.s4 = s4;
        p.s5 = s5;
    }
    SweepResult {
        model,
        horizon,
        step,
        points,
        lambda_opt: s5,
        tau_0,
    }
}

/// Problem at grid point `index`, with its own seed substream.
pub fn grid_problem(template: &SolveProblem, tau: f64, index: usize) -> SolveProblem {
    template.with_tau(tau).with_seed(substream_seed(
        template.settings.seed,
        0x7A00_0000 + index as u64,
    ))
}

/// Runs `multi_start` at every grid point. For the pulse model one family
/// of solutions is scored at every ratio in `eps_list` (the model
/// propagator does not depend on it); other models ignore `eps_list`.
pub fn sweep_tau_multi(
    template: &SolveProblem,
    horizon: f64,
    step: f64,
    eps_list: &[f64],
) -> Result<Vec<SweepResult>> {
    if !(horizon > 0.0 && step > 0.0) {
        return Err(Error::Schedule(format!(
            "horizon and step must be positive (got {horizon}, {step})"
        )));
    }
    let models = scored_models(template.model, eps_list)?;
    let grid = tau_grid(horizon, step);
    let per_point: Vec<Vec<MetricPoint>> = grid
        .par_iter()
        .enumerate()
        .map(|(k, &tau)| {
            let problem = grid_problem(template, tau, k);
            let set = multi_start(&problem)?;
            models
                .iter()
                .map(|&m| Ok(point_metrics(&rescore_for(&problem, &set, m)?, tau)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(models
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let points = per_point.iter().map(|row| row[i].clone()).collect();
            accumulate(m, horizon, step, points)
        })
        .collect())
}

pub fn sweep_tau(template: &SolveProblem, horizon: f64, step: f64) -> Result<SweepResult> {
    Ok(sweep_tau_multi(template, horizon, step, &[])?.remove(0))
}

fn scored_models(model: EvolutionModel, eps_list: &[f64]) -> Result<Vec<EvolutionModel>> {
    match model {
        EvolutionModel::Pulse { .. } if !eps_list.is_empty() => eps_list
            .iter()
            .map(|&eps_tilde| {
                let m = EvolutionModel::Pulse { eps_tilde };
                m.validate().map(|_| m)
            })
            .collect(),
        m => Ok(vec![m]),
    }
}

fn rescore_for(
    problem: &SolveProblem,
    set: &SolutionSet,
    model: EvolutionModel,
) -> Result<SolutionSet> {
    match model {
        EvolutionModel::Pulse { eps_tilde } if model != problem.model => {
            rescore_eps(problem, set, eps_tilde)
        }
        _ => Ok(set.clone()),
    }
}

/// One row of a chain-length sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainLengthRow {
    pub n: usize,
    pub lambda_opt: f64,
    pub tau_0: Option<f64>,
    pub s1_at_tau0: Option<f64>,
    pub s2_at_tau0: Option<f64>,
    pub eps_tilde: Option<f64>,
}

/// Sweeps chain lengths with horizon `horizon_factor * N`. For each `N` the
/// optimum is located with the template model; `S1`/`S2` at `tau_0` are then
/// reported for every ratio in `eps_list` (pulse model) or once otherwise.
pub fn sweep_n(
    template: &SolveProblem,
    n_list: &[usize],
    horizon_factor: f64,
    step: f64,
    eps_list: &[f64],
) -> Result<Vec<ChainLengthRow>> {
    let models = scored_models(template.model, eps_list)?;
    let mut rows = Vec::new();
    for &n in n_list {
        let spec = template.spec.with_n_total(n)?;
        let problem = SolveProblem::new(spec, template.model, 0.0, template.settings.clone())?;
        let horizon = horizon_factor * n as f64;
        let sweep = sweep_tau(&problem, horizon, step)?;
        let at_tau0 = match sweep.tau_0_index() {
            Some(k) => {
                let p = grid_problem(&problem, sweep.points[k].tau, k);
                Some((p.clone(), multi_start(&p)?))
            }
            None => None,
        };
        for &m in &models {
            let (s1, s2) = match &at_tau0 {
                Some((p, set)) => {
                    let point = point_metrics(&rescore_for(p, set, m)?, p.tau_reg);
                    (point.s1, point.s2)
                }
                None => (None, None),
            };
            rows.push(ChainLengthRow {
                n,
                lambda_opt: sweep.lambda_opt,
                tau_0: sweep.tau_0,
                s1_at_tau0: s1,
                s2_at_tau0: s2,
                eps_tilde: match m {
                    EvolutionModel::Pulse { eps_tilde } => Some(eps_tilde),
                    _ => None,
                },
            });
        }
    }
    Ok(rows)
}

/// Physical realisation of a pulse-model solution at ratio `eps_tilde`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhysicalPulseSchedule {
    pub eps_tilde: f64,
    /// Per-segment extended-receiver amplitudes `a / eps_tilde`, closure last.
    pub amplitudes: Vec<Vec<f64>>,
    pub free_duration: f64,
    pub pulse_duration: f64,
    pub total_duration: f64,
    pub max_amplitude: f64,
    pub exact_offdiag_max: f64,
    pub exact_residual_norm: f64,
}

pub fn rescale_pulse_solution(
    problem: &SolveProblem,
    solution: &Solution,
    eps_tilde: f64,
) -> Result<PhysicalPulseSchedule> {
    if !(eps_tilde > 0.0) {
        return Err(Error::Model(format!(
            "pulse ratio must be positive, got {eps_tilde}"
        )));
    }
    if !matches!(problem.model, EvolutionModel::Pulse { .. }) {
        return Err(Error::Model(format!(
            "{} solutions cannot be rescaled as pulses",
            problem.model
        )));
    }
    let set = SolutionSet {
        tau_reg: problem.tau_reg,
        n_starts: 1,
        solutions: vec![solution.clone()],
        degenerate: problem.tau_reg == 0.0,
    };
    let rescored = rescore_eps(problem, &set, eps_tilde)?.solutions.remove(0);
    let amplitudes: Vec<Vec<f64>> = solution
        .amplitudes()
        .into_iter()
        .map(|row| row.into_iter().map(|a| a / eps_tilde).collect())
        .collect();
    let max_amplitude = amplitudes
        .iter()
        .flatten()
        .map(|a| a.abs())
        .fold(0.0, f64::max);
    let dt1 = problem.tau_reg / problem.settings.k_omega as f64;
    Ok(PhysicalPulseSchedule {
        eps_tilde,
        amplitudes,
        free_duration: dt1,
        pulse_duration: eps_tilde * dt1,
        total_duration: problem.settings.k_omega as f64 * dt1 * (1.0 + eps_tilde),
        max_amplitude,
        exact_offdiag_max: rescored.exact_offdiag_max,
        exact_residual_norm: rescored.exact_residual_norm,
    })
}

/// Median of each window of three consecutive values.
pub fn moving_median3(values: &[f64]) -> Vec<f64> {
    values
        .windows(3)
        .map(|w| {
            let mut v = [w[0], w[1], w[2]];
            v.sort_by(f64::total_cmp);
            v[1]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainSpec;
    use crate::restore::LambdaSet;
    use crate::solver::SolveSettings;
    use num_complex::Complex64 as C64;

    fn sol(idx: usize, offdiag: f64, lam_model: &[f64], lam_exact: &[f64]) -> Solution {
        let to_set = |v: &[f64]| LambdaSet {
            lam: v.iter().map(|&x| C64::new(x, 0.0)).collect(),
        };
        Solution {
            start_index: idx,
            angles: vec![vec![0.1 * idx as f64]],
            residual_norm: 0.0,
            exact_residual_norm: offdiag,
            exact_offdiag_max: offdiag,
            lam_model: to_set(lam_model),
            lam_exact: to_set(lam_exact),
            converged: true,
            iterations: 1,
        }
    }

    fn set(solutions: Vec<Solution>) -> SolutionSet {
        SolutionSet {
            tau_reg: 1.0,
            n_starts: solutions.len(),
            solutions,
            degenerate: false,
        }
    }

    #[test]
    fn point_statistics() {
        let s = set(vec![
            sol(0, 0.3, &[0.5, 0.9], &[0.4, 0.9]),
            sol(1, 0.1, &[0.7, 0.6], &[0.7, 0.3]),
        ]);
        let p = point_metrics(&s, 2.0);
        assert_eq!(p.s1, Some(0.1));
        assert!((p.s2.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(p.lambda_best, 0.6);
        assert_eq!(p.converged_count, 2);

        let mut rev = s.clone();
        rev.solutions.reverse();
        assert_eq!(point_metrics(&rev, 2.0).s1, p.s1);
        assert_eq!(point_metrics(&rev, 2.0).s2, p.s2);
        assert_eq!(point_metrics(&rev, 2.0).lambda_best, p.lambda_best);
    }

    #[test]
    fn empty_set_is_infeasible() {
        let p = point_metrics(&set(vec![]), 1.0);
        assert!(!p.feasible());
        assert_eq!((p.s1, p.s2, p.lambda_best), (None, None, 0.0));
        let r = accumulate(EvolutionModel::Exact, 1.0, 1.0, vec![p.clone(), p]);
        assert_eq!(r.lambda_opt, 0.0);
        assert_eq!(r.tau_0, None);
    }

    #[test]
    fn running_maxima() {
        let pts: Vec<MetricPoint> = [
            (0.0, vec![sol(0, 0.2, &[0.1], &[0.1])]),
            (1.0, vec![]),
            (2.0, vec![sol(0, 0.1, &[0.8], &[0.5])]),
            (3.0, vec![sol(0, 0.5, &[0.4], &[0.4])]),
        ]
        .into_iter()
        .map(|(t, v)| point_metrics(&set(v), t))
        .collect();
        let r = accumulate(EvolutionModel::Exact, 3.0, 1.0, pts);
        let s3: Vec<_> = r.points.iter().map(|p| p.s3).collect();
        assert_eq!(s3, vec![Some(0.2), Some(0.2), Some(0.2), Some(0.5)]);
        let s5: Vec<_> = r.points.iter().map(|p| p.s5).collect();
        assert_eq!(s5, vec![0.1, 0.1, 0.8, 0.8]);
        assert_eq!(r.lambda_opt, 0.8);
        assert_eq!(r.tau_0, Some(2.0));
        assert_eq!(r.tau_0_index(), Some(2));
    }

    #[test]
    fn grid() {
        assert_eq!(tau_grid(0.3, 0.1).len(), 4);
        assert_eq!(tau_grid(60.0, 0.1).len(), 601);
        assert_eq!(*tau_grid(60.0, 0.1).last().unwrap(), 60.0);
        assert_eq!(tau_grid(1.0, 0.5), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn medians() {
        assert_eq!(moving_median3(&[3.0, 1.0, 2.0, 5.0]), vec![2.0, 2.0]);
        assert!(moving_median3(&[1.0, 2.0]).is_empty());
    }

    fn pulse_problem(tau: f64, starts: usize) -> SolveProblem {
        SolveProblem::new(
            ChainSpec::symmetric(6, 2).unwrap(),
            EvolutionModel::Pulse { eps_tilde: 1.0 },
            tau,
            SolveSettings {
                k_omega: 5,
                n_starts: starts,
                seed: 3,
                ..SolveSettings::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn rescale_identity_ratio() {
        let p = pulse_problem(8.0, 1);
        let ev = p.evaluator().unwrap();
        let s =
            crate::solver::evaluate_solution(&p, &ev, &[0.3, -0.4, 1.0, 2.0, -0.7], 0, 0).unwrap();
        let phys = rescale_pulse_solution(&p, &s, 1.0).unwrap();
        assert_eq!(phys.amplitudes, s.amplitudes());
        assert_eq!(phys.pulse_duration, phys.free_duration);
        assert_eq!(phys.total_duration, 16.0);
        assert_eq!(phys.exact_offdiag_max, s.exact_offdiag_max);

        let phys = rescale_pulse_solution(&p, &s, 0.01).unwrap();
        let max_a = s
            .amplitudes()
            .iter()
            .flatten()
            .map(|a| a.abs())
            .fold(0.0, f64::max);
        assert_eq!(phys.max_amplitude, max_a / 0.01);
        assert!(rescale_pulse_solution(&p, &s, 0.0).is_err());
        assert!(rescale_pulse_solution(&p, &s, -1.0).is_err());
        assert!(rescale_pulse_solution(&p.with_model(EvolutionModel::Exact), &s, 0.1).is_err());
    }

    #[test]
    fn exact_model_sweep_identities() {
        let p = SolveProblem::new(
            ChainSpec::symmetric(6, 2).unwrap(),
            EvolutionModel::Exact,
            0.0,
            SolveSettings {
                k_omega: 4,
                n_starts: 6,
                seed: 1,
                ..SolveSettings::default()
            },
        )
        .unwrap();
        let r = sweep_tau(&p, 3.0, 1.0).unwrap();
        assert_eq!(r.points.len(), 4);
        assert_eq!(r.points[0].lambda_best, 0.0);
        for w in r.points.windows(2) {
            assert!(w[1].s5 >= w[0].s5);
        }
        for pt in r.points.iter().filter(|p| p.feasible()) {
            assert_eq!(pt.s2, Some(0.0));
            assert!(pt.s1.unwrap() <= 1e-10);
        }
    }
}
