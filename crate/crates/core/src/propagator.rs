//! One-excitation propagators for piecewise-constant control schedules.
//!
//! Three evolution models are supported: the exact piecewise exponential,
//! first-order Trotterization with `n` alternating factors per segment, and
//! the strong-pulse model where each segment is a free evolution preceded by
//! an idealised diagonal kick. The vacuum amplitude never evolves because the
//! control frequencies sum to zero.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::chain::{
    check_zero_sum, free_hamiltonian, ChainSpec, ControlSchedule, CouplingMatrix,
    HamiltonianBlock1Exc,
};
use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvolutionModel {
    Exact,
    Trotter { n: usize },
    Pulse { eps_tilde: f64 },
}

impl EvolutionModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EvolutionModel::Exact => Ok(()),
            EvolutionModel::Trotter { n } if n >= 1 => Ok(()),
            EvolutionModel::Trotter { n } => Err(Error::Model(format!(
                "Trotterization number must be >= 1, got {n}"
            ))),
            EvolutionModel::Pulse { eps_tilde } if eps_tilde > 0.0 && eps_tilde <= 1.0 => Ok(()),
            EvolutionModel::Pulse { eps_tilde } => Err(Error::Model(format!(
                "pulse ratio must lie in (0, 1], got {eps_tilde}"
            ))),
        }
    }

    /// Short identifier used in file names and CSV provenance.
    pub fn label(&self) -> String {
        match *self {
            EvolutionModel::Exact => "exact".to_string(),
            EvolutionModel::Trotter { n } => format!("trotter_n{n}"),
            EvolutionModel::Pulse { eps_tilde } => format!("pulse_eps{eps_tilde}"),
        }
    }
}

impl fmt::Display for EvolutionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Evolution operator restricted to the (0,1)-excitation subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspacePropagator {
    pub u1: CMatrix,
    pub u0: C64,
}

impl SubspacePropagator {
    pub fn identity(n: usize) -> Self {
        Self {
            u1: CMatrix::identity(n, n),
            u0: C64::new(1.0, 0.0),
        }
    }

    pub fn n(&self) -> usize {
        self.u1.nrows()
    }

    /// `later * self`: the propagator of `self` followed by `later`.
    pub fn then(&self, later: &SubspacePropagator) -> SubspacePropagator {
        SubspacePropagator {
            u1: &later.u1 * &self.u1,
            u0: later.u0 * self.u0,
        }
    }

    /// `max |u1^dag u1 - I|`.
    pub fn unitarity_error(&self) -> f64 {
        let n = self.n();
        let g = self.u1.adjoint() * &self.u1;
        max_abs(&(g - CMatrix::identity(n, n)))
    }

    pub fn max_abs_diff(&self, other: &SubspacePropagator) -> f64 {
        max_abs(&(&self.u1 - &other.u1)).max((self.u0 - other.u0).norm())
    }
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenpairs of a real symmetric generator; evaluates `exp(-i h t)` for any
/// `t` without refactoring.
#[derive(Clone, Debug)]
pub struct SpectralExp {
    vals: DVector<f64>,
    vecs: CMatrix,
}

impl SpectralExp {
    pub fn new(h: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(h.clone());
        Self {
            vals: eig.eigenvalues,
            vecs: eig.eigenvectors.map(|x| C64::new(x, 0.0)),
        }
    }

    pub fn exp(&self, t: f64) -> CMatrix {
        if t == 0.0 {
            let n = self.vals.len();
            return CMatrix::identity(n, n);
        }
        let phases: Vec<C64> = self
            .vals
            .iter()
            .map(|&l| C64::from_polar(1.0, -l * t))
            .collect();
        let mut scaled = self.vecs.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[k];
        }
        scaled * self.vecs.transpose()
    }
}

/// Multiplies row `k` by `exp(+i omega_k t)`, i.e. applies `exp(-i Omega t)`
/// for the one-excitation diagonal `-omega_k`.
fn apply_field_phase(cols: &mut CMatrix, omega: &[f64], t: f64) {
    for (k, &w) in omega.iter().enumerate() {
        if w != 0.0 {
            let phase = C64::from_polar(1.0, w * t);
            cols.row_mut(k).iter_mut().for_each(|z| *z *= phase);
        }
    }
}

/// Multiplies column `k` by `exp(+i omega_k t)`: right-multiplication by
/// `exp(-i Omega t)`.
fn scale_columns(m: &mut CMatrix, omega: &[f64], t: f64) {
    for (k, &w) in omega.iter().enumerate() {
        if w != 0.0 {
            let phase = C64::from_polar(1.0, w * t);
            m.column_mut(k).iter_mut().for_each(|z| *z *= phase);
        }
    }
}

fn field_phase_matrix(omega: &[f64], t: f64) -> CMatrix {
    let n = omega.len();
    let mut m = CMatrix::identity(n, n);
    apply_field_phase(&mut m, omega, t);
    m
}

fn wrap(u1: CMatrix) -> SubspacePropagator {
    SubspacePropagator {
        u1,
        u0: C64::new(1.0, 0.0),
    }
}

/// `exp(-i h dt)` via eigendecomposition.
pub fn exact_segment(h: &HamiltonianBlock1Exc, dt: f64) -> SubspacePropagator {
    wrap(SpectralExp::new(h.as_matrix()).exp(dt))
}

/// `[exp(-i h0 dt/n) exp(-i Omega dt/n)]^n`.
pub fn trotter_segment(
    h0: &HamiltonianBlock1Exc,
    omega: &[f64],
    dt: f64,
    n: usize,
) -> Result<SubspacePropagator> {
    EvolutionModel::Trotter { n }.validate()?;
    check_zero_sum(omega)?;
    let free = SpectralExp::new(h0.as_matrix()).exp(dt / n as f64);
    let mut step = free;
    scale_columns(&mut step, omega, dt / n as f64);
    let mut u = CMatrix::identity(h0.n(), h0.n());
    for _ in 0..n {
        u = &step * u;
    }
    Ok(wrap(u))
}

/// Strong-pulse segment: returns the approximate factor
/// `exp(-i h0 dt1) exp(-i Omega dt1)` and the exact reference
/// `exp(-i h0 dt1) exp(-i (h0 + Omega/eps) eps dt1)`.
pub fn pulse_segment(
    h0: &HamiltonianBlock1Exc,
    omega: &[f64],
    dt1: f64,
    eps_tilde: f64,
) -> Result<(SubspacePropagator, SubspacePropagator)> {
    EvolutionModel::Pulse { eps_tilde }.validate()?;
    check_zero_sum(omega)?;
    let free = SpectralExp::new(h0.as_matrix()).exp(dt1);
    let approx = &free * field_phase_matrix(omega, dt1);
    let kicked = SpectralExp::new(&h0.with_diagonal_shift(omega, 1.0 / eps_tilde));
    let exact = &free * kicked.exp(eps_tilde * dt1);
    Ok((wrap(approx), wrap(exact)))
}

/// Products of model segments before (`prefix[j]`, applied to the sender
/// columns) and after (`suffix[j]`, receiver rows) segment `j`. For the
/// pulse model the suffix already includes segment `j`'s free evolution.
#[derive(Clone, Debug)]
pub struct SegmentSplit {
    prefix: Vec<CMatrix>,
    suffix: Vec<CMatrix>,
}

/// Evaluates model and exact propagators of schedules sharing one chain,
/// model, segment count and registration time. Free-evolution exponentials
/// are computed once at construction.
#[derive(Clone, Debug)]
pub struct ScheduleEvaluator {
    spec: ChainSpec,
    h0: HamiltonianBlock1Exc,
    model: EvolutionModel,
    k_omega: usize,
    tau_reg: f64,
    /// Model free factor: `exp(-i h0 dt/n)` (Trotter) or `exp(-i h0 dt)` (pulse).
    free_step: Option<CMatrix>,
}

impl ScheduleEvaluator {
    pub fn new(
        spec: &ChainSpec,
        coupling: &CouplingMatrix,
        model: EvolutionModel,
        k_omega: usize,
        tau_reg: f64,
    ) -> Result<Self> {
        spec.validate()?;
        model.validate()?;
        if k_omega == 0 {
            return Err(Error::Schedule("at least one segment required".into()));
        }
        if coupling.n() != spec.n_total {
            return Err(Error::Chain(
                "coupling matrix does not match chain size".into(),
            ));
        }
        let h0 = free_hamiltonian(coupling);
        let dt = tau_reg / k_omega as f64;
        let free_step = match model {
            EvolutionModel::Exact => None,
            EvolutionModel::Trotter { n } => {
                Some(SpectralExp::new(h0.as_matrix()).exp(dt / n as f64))
            }
            EvolutionModel::Pulse { .. } => Some(SpectralExp::new(h0.as_matrix()).exp(dt)),
        };
        Ok(Self {
            spec: spec.clone(),
            h0,
            model,
            k_omega,
            tau_reg,
            free_step,
        })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn model(&self) -> EvolutionModel {
        self.model
    }

    pub fn k_omega(&self) -> usize {
        self.k_omega
    }

    pub fn tau_reg(&self) -> f64 {
        self.tau_reg
    }

    pub fn segment_duration(&self) -> f64 {
        self.tau_reg / self.k_omega as f64
    }

    /// Same evaluator with a different pulse ratio. The model propagator is
    /// unaffected; only the exact reference changes.
    pub fn with_eps_tilde(&self, eps_tilde: f64) -> Result<Self> {
        let model = EvolutionModel::Pulse { eps_tilde };
        model.validate()?;
        match self.model {
            EvolutionModel::Pulse { .. } => Ok(Self {
                model,
                ..self.clone()
            }),
            other => Err(Error::Model(format!("{other} has no pulse ratio"))),
        }
    }

    fn check_schedule(&self, schedule: &ControlSchedule) -> Result<()> {
        schedule.validate(&self.spec)?;
        if schedule.k_omega != self.k_omega || schedule.tau_reg != self.tau_reg {
            return Err(Error::Schedule(format!(
                "schedule ({} segments, tau {}) does not match evaluator ({}, {})",
                schedule.k_omega, schedule.tau_reg, self.k_omega, self.tau_reg
            )));
        }
        Ok(())
    }

    fn exact_factor(&self, omega: &[f64], scale: f64, t: f64) -> CMatrix {
        SpectralExp::new(&self.h0.with_diagonal_shift(omega, scale)).exp(t)
    }

    /// `cols <- S(omega) cols` for one model segment.
    fn model_segment_left(&self, omega: &[f64], cols: &mut CMatrix) {
        let dt = self.segment_duration();
        match self.model {
            EvolutionModel::Exact => {
                *cols = self.exact_factor(omega, 1.0, dt) * &*cols;
            }
            EvolutionModel::Trotter { n } => {
                let step = self.trotter_step(omega);
                for _ in 0..n {
                    *cols = &step * &*cols;
                }
            }
            EvolutionModel::Pulse { .. } => {
                let free = self.free_step.as_ref().expect("pulse free step");
                apply_field_phase(cols, omega, dt);
                *cols = free * &*cols;
            }
        }
    }

    /// `rows <- rows S(omega)` for one model segment.
    fn model_segment_right(&self, omega: &[f64], rows: &mut CMatrix) {
        let dt = self.segment_duration();
        match self.model {
            EvolutionModel::Exact => {
                *rows = &*rows * self.exact_factor(omega, 1.0, dt);
            }
            EvolutionModel::Trotter { n } => {
                let step = self.trotter_step(omega);
                for _ in 0..n {
                    *rows = &*rows * &step;
                }
            }
            EvolutionModel::Pulse { .. } => {
                let free = self.free_step.as_ref().expect("pulse free step");
                *rows = &*rows * free;
                scale_columns(rows, omega, dt);
            }
        }
    }

    /// `exp(-i h0 dt/n) exp(-i Omega dt/n)`.
    fn trotter_step(&self, omega: &[f64]) -> CMatrix {
        let EvolutionModel::Trotter { n } = self.model else {
            unreachable!("trotter step of a non-Trotter model")
        };
        let mut step = self.free_step.clone().expect("trotter free step");
        scale_columns(&mut step, omega, self.segment_duration() / n as f64);
        step
    }

    /// Applies the model propagator of `schedule` to the columns of `cols`.
    pub fn apply_model(&self, schedule: &ControlSchedule, cols: &mut CMatrix) -> Result<()> {
        self.check_schedule(schedule)?;
        for j in 0..self.k_omega {
            self.model_segment_left(&schedule.omega(&self.spec, j), cols);
        }
        Ok(())
    }

    /// Prefix and suffix products of the model propagator around every
    /// segment, for re-evaluating the receiver block with one segment
    /// replaced.
    pub fn split_model(&self, schedule: &ControlSchedule) -> Result<SegmentSplit> {
        self.check_schedule(schedule)?;
        let k = self.k_omega;
        let omegas: Vec<Vec<f64>> = (0..k).map(|j| schedule.omega(&self.spec, j)).collect();
        let mut prefix = Vec::with_capacity(k);
        let mut cols = self.sender_unit_columns();
        for (j, omega) in omegas.iter().enumerate() {
            prefix.push(cols.clone());
            if j + 1 < k {
                self.model_segment_left(omega, &mut cols);
            }
        }
        let mut suffix = vec![CMatrix::zeros(0, 0); k];
        let mut rows = self.receiver_unit_rows();
        for j in (0..k).rev() {
            suffix[j] = match self.model {
                EvolutionModel::Pulse { .. } => {
                    &rows * self.free_step.as_ref().expect("pulse free step")
                }
                _ => rows.clone(),
            };
            if j > 0 {
                self.model_segment_right(&omegas[j], &mut rows);
            }
        }
        Ok(SegmentSplit { prefix, suffix })
    }

    /// Receiver block (`n_receiver x n_sender`) of the model propagator with
    /// segment `j` driven by `omega` and all other segments as in `split`.
    pub fn block_with_segment(&self, split: &SegmentSplit, j: usize, omega: &[f64]) -> CMatrix {
        let mut cols = split.prefix[j].clone();
        match self.model {
            EvolutionModel::Pulse { .. } => {
                apply_field_phase(&mut cols, omega, self.segment_duration());
            }
            _ => self.model_segment_left(omega, &mut cols),
        }
        &split.suffix[j] * cols
    }

    /// Applies the exact propagator the model approximates.
    pub fn apply_exact(&self, schedule: &ControlSchedule, cols: &mut CMatrix) -> Result<()> {
        self.check_schedule(schedule)?;
        let dt = self.segment_duration();
        for j in 0..self.k_omega {
            let omega = schedule.omega(&self.spec, j);
            match self.model {
                EvolutionModel::Exact | EvolutionModel::Trotter { .. } => {
                    *cols = self.exact_factor(&omega, 1.0, dt) * &*cols;
                }
                EvolutionModel::Pulse { eps_tilde } => {
                    let free = self.free_step.as_ref().expect("pulse free step");
                    let kick = self.exact_factor(&omega, 1.0 / eps_tilde, eps_tilde * dt);
                    *cols = free * (kick * &*cols);
                }
            }
        }
        Ok(())
    }

    /// Model propagator columns for the sender sites (`n_total x n_sender`).
    pub fn model_sender_columns(&self, schedule: &ControlSchedule) -> Result<CMatrix> {
        let mut cols = self.sender_unit_columns();
        self.apply_model(schedule, &mut cols)?;
        Ok(cols)
    }

    pub fn exact_sender_columns(&self, schedule: &ControlSchedule) -> Result<CMatrix> {
        let mut cols = self.sender_unit_columns();
        self.apply_exact(schedule, &mut cols)?;
        Ok(cols)
    }

    fn receiver_unit_rows(&self) -> CMatrix {
        let n = self.spec.n_total;
        CMatrix::from_fn(self.spec.n_receiver, n, |p, i| {
            if i == self.spec.receiver_site(p) {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    fn sender_unit_columns(&self) -> CMatrix {
        let n = self.spec.n_total;
        CMatrix::from_fn(n, self.spec.n_sender, |i, q| {
            if i == self.spec.sender_site(q) {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    pub fn model_propagator(&self, schedule: &ControlSchedule) -> Result<SubspacePropagator> {
        let n = self.spec.n_total;
        let mut u = CMatrix::identity(n, n);
        self.apply_model(schedule, &mut u)?;
        Ok(wrap(u))
    }

    pub fn exact_propagator(&self, schedule: &ControlSchedule) -> Result<SubspacePropagator> {
        let n = self.spec.n_total;
        let mut u = CMatrix::identity(n, n);
        self.apply_exact(schedule, &mut u)?;
        Ok(wrap(u))
    }
}

/// Ordered product of model segment propagators, first segment rightmost.
pub fn compose_schedule(
    spec: &ChainSpec,
    coupling: &CouplingMatrix,
    schedule: &ControlSchedule,
    model: EvolutionModel,
) -> Result<SubspacePropagator> {
    ScheduleEvaluator::new(spec, coupling, model, schedule.k_omega, schedule.tau_reg)?
        .model_propagator(schedule)
}

/// Exact propagator of the schedule `model` approximates.
pub fn compose_schedule_exact(
    spec: &ChainSpec,
    coupling: &CouplingMatrix,
    schedule: &ControlSchedule,
    model: EvolutionModel,
) -> Result<SubspacePropagator> {
    ScheduleEvaluator::new(spec, coupling, model, schedule.k_omega, schedule.tau_reg)?
        .exact_propagator(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_couplings, one_excitation_hamiltonian};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn chain6() -> (ChainSpec, CouplingMatrix) {
        let spec = ChainSpec::symmetric(6, 2).unwrap();
        let d = build_couplings(&spec);
        (spec, d)
    }

    fn random_zero_sum(rng: &mut ChaCha8Rng, n: usize, active: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        let mut sum = 0.0;
        for k in (n - active)..(n - 1) {
            w[k] = rng.random_range(-2.0..2.0);
            sum += w[k];
        }
        w[n - 1] = -sum;
        w
    }

    fn random_schedule(spec: &ChainSpec, k: usize, tau: f64, seed: u64) -> ControlSchedule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles = (0..k)
            .map(|_| {
                (0..spec.free_controls())
                    .map(|_| rng.random_range(-PI..PI))
                    .collect()
            })
            .collect();
        ControlSchedule::new(spec, tau, angles).unwrap()
    }

    #[test]
    fn zero_duration_is_identity() {
        let (_, d) = chain6();
        let h = free_hamiltonian(&d);
        let u = exact_segment(&h, 0.0);
        assert!(u.max_abs_diff(&SubspacePropagator::identity(6)) < 1e-15);
    }

    #[test]
    fn two_site_closed_form() {
        let spec = ChainSpec::symmetric(2, 1).unwrap();
        let h = free_hamiltonian(&build_couplings(&spec));
        let u = exact_segment(&h, PI);
        // cos(pi/2) I - i sin(pi/2) sigma_x
        let expected = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.0, 0.0),
                C64::new(0.0, -1.0),
                C64::new(0.0, -1.0),
                C64::new(0.0, 0.0),
            ],
        );
        assert!(max_abs(&(&u.u1 - expected)) < 1e-14);
    }

    #[test]
    fn exact_segment_is_unitary() {
        let (_, d) = chain6();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = random_zero_sum(&mut rng, 6, 3);
            let h = one_excitation_hamiltonian(&d, &w).unwrap();
            let u = exact_segment(&h, rng.random_range(0.0..20.0));
            assert!(u.unitarity_error() < 1e-12);
        }
    }

    #[test]
    fn trotter_without_field_is_exact() {
        let (_, d) = chain6();
        let h0 = free_hamiltonian(&d);
        let exact = exact_segment(&h0, 2.3);
        for n in [1, 2, 7, 60] {
            let t = trotter_segment(&h0, &[0.0; 6], 2.3, n).unwrap();
            assert!(t.max_abs_diff(&exact) < 1e-12, "n = {n}");
        }
        assert!(trotter_segment(&h0, &[0.0; 6], 1.0, 0).is_err());
    }

    #[test]
    fn trotter_first_order_convergence() {
        let (_, d) = chain6();
        let h0 = free_hamiltonian(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_zero_sum(&mut rng, 6, 2);
        let exact = exact_segment(&one_excitation_hamiltonian(&d, &w).unwrap(), 1.0);
        let err = |n| {
            trotter_segment(&h0, &w, 1.0, n)
                .unwrap()
                .max_abs_diff(&exact)
        };
        assert!(err(60) <= err(10) / 4.0);
        let (e1, e2) = (err(400), err(800));
        let ratio = e1 / e2;
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn pulse_segment_structure() {
        let (_, d) = chain6();
        let h0 = free_hamiltonian(&d);
        let (a, e) = pulse_segment(&h0, &[0.0; 6], 1.5, 0.01).unwrap();
        assert!(a.max_abs_diff(&exact_segment(&h0, 1.5)) < 1e-13);
        assert!(e.max_abs_diff(&exact_segment(&h0, 1.5 * 1.01)) < 1e-13);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_zero_sum(&mut rng, 6, 2);
        let (a1, e1) = pulse_segment(&h0, &w, 1.5, 0.02).unwrap();
        let (a2, e2) = pulse_segment(&h0, &w, 1.5, 0.01).unwrap();
        assert_eq!(a1, a2);
        let ratio = a1.max_abs_diff(&e1) / a2.max_abs_diff(&e2);
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
        assert!(pulse_segment(&h0, &w, 1.5, 0.0).is_err());
        assert!(pulse_segment(&h0, &w, 1.5, 1.5).is_err());
    }

    #[test]
    fn compose_edge_cases() {
        let (spec, d) = chain6();
        let s0 = ControlSchedule::zeros(&spec, 4, 0.0).unwrap();
        for model in [
            EvolutionModel::Exact,
            EvolutionModel::Trotter { n: 10 },
            EvolutionModel::Pulse { eps_tilde: 0.1 },
        ] {
            let u = compose_schedule(&spec, &d, &s0, model).unwrap();
            assert!(u.max_abs_diff(&SubspacePropagator::identity(6)) < 1e-15);
        }
        let s1 = random_schedule(&spec, 1, 3.0, 1);
        let h = one_excitation_hamiltonian(&d, &s1.omega(&spec, 0)).unwrap();
        let u = compose_schedule(&spec, &d, &s1, EvolutionModel::Exact).unwrap();
        assert!(u.max_abs_diff(&exact_segment(&h, 3.0)) < 1e-14);
    }

    #[test]
    fn compose_matches_segment_products() {
        let (spec, d) = chain6();
        let h0 = free_hamiltonian(&d);
        let s = random_schedule(&spec, 3, 4.5, 9);
        let dt = s.segment_duration();
        let mut trot = SubspacePropagator::identity(6);
        let mut approx = SubspacePropagator::identity(6);
        let mut reference = SubspacePropagator::identity(6);
        for j in 0..3 {
            let w = s.omega(&spec, j);
            trot = trot.then(&trotter_segment(&h0, &w, dt, 7).unwrap());
            let (a, e) = pulse_segment(&h0, &w, dt, 0.05).unwrap();
            approx = approx.then(&a);
            reference = reference.then(&e);
        }
        let t = compose_schedule(&spec, &d, &s, EvolutionModel::Trotter { n: 7 }).unwrap();
        assert!(t.max_abs_diff(&trot) < 1e-12);
        let p = EvolutionModel::Pulse { eps_tilde: 0.05 };
        assert!(
            compose_schedule(&spec, &d, &s, p)
                .unwrap()
                .max_abs_diff(&approx)
                < 1e-12
        );
        assert!(
            compose_schedule_exact(&spec, &d, &s, p)
                .unwrap()
                .max_abs_diff(&reference)
                < 1e-12
        );
    }

    #[test]
    fn trotter_error_decreases_with_n() {
        let (spec, d) = chain6();
        let s = random_schedule(&spec, 4, 24.0, 21);
        let exact = compose_schedule_exact(&spec, &d, &s, EvolutionModel::Exact).unwrap();
        let errs: Vec<f64> = [10, 20, 30, 60]
            .iter()
            .map(|&n| {
                compose_schedule(&spec, &d, &s, EvolutionModel::Trotter { n })
                    .unwrap()
                    .max_abs_diff(&exact)
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn zero_field_is_free_evolution_for_every_model() {
        let (spec, d) = chain6();
        let s = ControlSchedule::zeros(&spec, 4, 7.3).unwrap();
        let free = exact_segment(&free_hamiltonian(&d), 7.3);
        for model in [
            EvolutionModel::Exact,
            EvolutionModel::Trotter { n: 1 },
            EvolutionModel::Trotter { n: 30 },
            EvolutionModel::Pulse { eps_tilde: 1.0 },
            EvolutionModel::Pulse { eps_tilde: 0.001 },
        ] {
            let u = compose_schedule(&spec, &d, &s, model).unwrap();
            assert!(u.max_abs_diff(&free) < 1e-12, "{model}");
        }
        let e = compose_schedule_exact(&spec, &d, &s, EvolutionModel::Exact).unwrap();
        assert!(e.max_abs_diff(&free) < 1e-12);
    }

    #[test]
    fn exact_composition_refines() {
        let (spec, d) = chain6();
        let s = random_schedule(&spec, 2, 5.0, 4);
        let split: Vec<Vec<f64>> = s
            .angles
            .iter()
            .flat_map(|r| [r.clone(), r.clone()])
            .collect();
        let s2 = ControlSchedule::new(&spec, 5.0, split).unwrap();
        let u = compose_schedule(&spec, &d, &s, EvolutionModel::Exact).unwrap();
        let u2 = compose_schedule(&spec, &d, &s2, EvolutionModel::Exact).unwrap();
        assert!(u.max_abs_diff(&u2) < 1e-12);
    }

    #[test]
    fn determinant_has_unit_modulus() {
        let (spec, d) = chain6();
        for seed in 0..5 {
            let s = random_schedule(&spec, 4, 10.0, seed);
            for model in [EvolutionModel::Exact, EvolutionModel::Trotter { n: 10 }] {
                let u = compose_schedule(&spec, &d, &s, model).unwrap();
                assert_abs_diff_eq!(u.u1.determinant().norm(), 1.0, epsilon = 1e-8);
                assert!(u.unitarity_error() < 1e-10);
            }
        }
    }

    #[test]
    fn evaluator_rejects_mismatched_schedule() {
        let (spec, d) = chain6();
        let ev = ScheduleEvaluator::new(&spec, &d, EvolutionModel::Exact, 4, 10.0).unwrap();
        let s = ControlSchedule::zeros(&spec, 3, 10.0).unwrap();
        assert!(ev.model_propagator(&s).is_err());
        assert!(ev.with_eps_tilde(0.1).is_err());
        assert!(EvolutionModel::Pulse { eps_tilde: 0.0 }.validate().is_err());
        assert!(EvolutionModel::Trotter { n: 0 }.validate().is_err());
    }
}
