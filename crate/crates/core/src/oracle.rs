//! Brute-force reference in the full `2^N`-dimensional Hilbert space.
//!
//! Everything here is dense and deliberately naive: operators are built from
//! Kronecker products of single-spin matrices and exponentiated by a Taylor
//! series, independently of the eigendecomposition used by the subspace code.
//! Basis states are bit patterns with site 1 as the most significant bit; a
//! set bit is an excited spin (`Z = -1/2`).

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{
    build_couplings, one_excitation_hamiltonian, ChainSpec, ControlSchedule, CouplingMatrix,
};
use crate::error::{Error, Result};
use crate::propagator::{compose_schedule_exact, CMatrix, EvolutionModel, SubspacePropagator};
use crate::restore::{embed_sender_state, random_density, receiver_density};

/// Largest chain the oracle accepts; `2^12 = 4096` basis states.
pub const MAX_SITES: usize = 12;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, Copy)]
enum Spin {
    X,
    Y,
    Z,
}

impl Spin {
    fn matrix(self) -> CMatrix {
        let h = 0.5;
        let v = match self {
            Spin::X => [ZERO, C64::new(h, 0.0), C64::new(h, 0.0), ZERO],
            Spin::Y => [ZERO, C64::new(0.0, -h), C64::new(0.0, h), ZERO],
            Spin::Z => [C64::new(h, 0.0), ZERO, ZERO, C64::new(-h, 0.0)],
        };
        CMatrix::from_row_slice(2, 2, &v)
    }
}

/// `op_1 (x) ... (x) op_N` with the identity on unlisted sites.
fn site_string(n: usize, ops: &[(usize, Spin)]) -> CMatrix {
    let id = CMatrix::identity(2, 2);
    let mut out = CMatrix::from_element(1, 1, ONE);
    for site in 0..n {
        out = match ops.iter().find(|(s, _)| *s == site) {
            Some((_, spin)) => out.kronecker(&spin.matrix()),
            None => out.kronecker(&id),
        };
    }
    out
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_SITES {
        return Err(Error::OracleSize { n, max: MAX_SITES });
    }
    Ok(())
}

/// Basis index of the state with only `site` excited.
fn one_excitation_index(n: usize, site: usize) -> usize {
    1 << (n - 1 - site)
}

/// Dense operator on `n_sites` spins.
#[derive(Clone, Debug, PartialEq)]
pub struct FullOperator {
    pub n_sites: usize,
    pub m: CMatrix,
}

impl FullOperator {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs(&(&self.m - self.m.adjoint()))
    }

    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim();
        max_abs(&(self.m.adjoint() * &self.m - CMatrix::identity(d, d)))
    }

    /// `max |[M, Z_total]|`, with `Z_total` built from its site terms.
    pub fn total_z_commutator(&self) -> f64 {
        let n = self.n_sites;
        let mut z = CMatrix::zeros(self.dim(), self.dim());
        for i in 0..n {
            z += site_string(n, &[(i, Spin::Z)]);
        }
        max_abs(&(&self.m * &z - &z * &self.m))
    }

    /// Largest entry coupling different excitation numbers.
    pub fn off_sector_max(&self) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in (0..self.dim()).flat_map(|a| (0..self.dim()).map(move |b| (a, b))) {
            if a.count_ones() != b.count_ones() {
                worst = worst.max(self.m[(a, b)].norm());
            }
        }
        worst
    }

    pub fn vacuum_amplitude(&self) -> C64 {
        self.m[(0, 0)]
    }

    /// Restriction to the single-excitation states, indexed by site.
    pub fn one_excitation_block(&self) -> CMatrix {
        let n = self.n_sites;
        CMatrix::from_fn(n, n, |k, l| {
            self.m[(one_excitation_index(n, k), one_excitation_index(n, l))]
        })
    }

    /// The (0,1) sector in the layout of [`SubspacePropagator`].
    pub fn to_subspace(&self) -> SubspacePropagator {
        SubspacePropagator {
            u1: self.one_excitation_block(),
            u0: self.vacuum_amplitude(),
        }
    }
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `sum_{i<j} D_ij (X_i X_j + Y_i Y_j) + sum_j omega_j Z_j`.
pub fn full_hamiltonian(
    spec: &ChainSpec,
    coupling: &CouplingMatrix,
    omega: &[f64],
) -> Result<FullOperator> {
    let n = spec.n_total;
    check_size(n)?;
    if omega.len() != n || coupling.n() != n {
        return Err(Error::Chain(format!(
            "field has {} entries and couplings {} sites for a chain of {n}",
            omega.len(),
            coupling.n()
        )));
    }
    let dim = 1usize << n;
    let mut h = CMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in i + 1..n {
            let d = C64::new(coupling.get(i, j), 0.0);
            h += site_string(n, &[(i, Spin::X), (j, Spin::X)]) * d;
            h += site_string(n, &[(i, Spin::Y), (j, Spin::Y)]) * d;
        }
        if omega[i] != 0.0 {
            h += site_string(n, &[(i, Spin::Z)]) * C64::new(omega[i], 0.0);
        }
    }
    Ok(FullOperator { n_sites: n, m: h })
}

/// `exp(-i h t)` for a real symmetric `h` as `cos(ht) - i sin(ht)`, from
/// truncated Taylor series of the scaled argument and repeated angle
/// doubling. Real arithmetic only.
fn expm_real_symmetric(h: &DMatrix<f64>, t: f64) -> CMatrix {
    let dim = h.nrows();
    let a = h * t;
    let norm = (0..dim)
        .map(|j| a.column(j).abs().sum())
        .fold(0.0, f64::max);
    let halvings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = a * 0.5f64.powi(halvings);
    let mut cos = DMatrix::<f64>::identity(dim, dim);
    let mut sin = DMatrix::<f64>::zeros(dim, dim);
    let mut term = DMatrix::<f64>::identity(dim, dim);
    for k in 1..=40 {
        term = (&term * &b) / k as f64;
        let signed = if (k / 2) % 2 == 0 {
            term.clone()
        } else {
            -&term
        };
        if k % 2 == 0 {
            cos += signed;
        } else {
            sin += signed;
        }
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..halvings {
        let (c2, s2) = (&cos * &cos, &sin * &sin);
        sin = (&sin * &cos) * 2.0;
        cos = c2 - s2;
    }
    CMatrix::from_fn(dim, dim, |i, j| C64::new(cos[(i, j)], -sin[(i, j)]))
}

/// `exp(-i H t)`. The chain Hamiltonian is real in the computational basis.
pub fn full_evolution(h: &FullOperator, t: f64) -> FullOperator {
    assert!(
        h.m.iter().all(|z| z.im == 0.0),
        "generator must be real in the computational basis"
    );
    FullOperator {
        n_sites: h.n_sites,
        m: expm_real_symmetric(&h.m.map(|z| z.re), t),
    }
}

/// Ordered product of the segment exponentials of `schedule`.
pub fn full_propagate_schedule(
    spec: &ChainSpec,
    coupling: &CouplingMatrix,
    schedule: &ControlSchedule,
) -> Result<FullOperator> {
    check_size(spec.n_total)?;
    schedule.validate(spec)?;
    let dt = schedule.segment_duration();
    let dim = 1usize << spec.n_total;
    let mut u = CMatrix::identity(dim, dim);
    for j in 0..schedule.k_omega {
        let h = full_hamiltonian(spec, coupling, &schedule.omega(spec, j))?;
        u = full_evolution(&h, dt).m * u;
    }
    Ok(FullOperator {
        n_sites: spec.n_total,
        m: u,
    })
}

/// Basis index of sender slot `i` (0 = vacuum) with every other spin down.
fn sender_index(spec: &ChainSpec, i: usize) -> usize {
    if i == 0 {
        0
    } else {
        one_excitation_index(spec.n_total, spec.sender_site(i - 1))
    }
}

/// Receiver bit pattern of receiver slot `p` (0 = vacuum).
fn receiver_bits(spec: &ChainSpec, p: usize) -> usize {
    if p == 0 {
        0
    } else {
        1 << (spec.n_receiver - p)
    }
}

/// Receiver state after full-space evolution of the embedded sender state,
/// restricted to the receiver's (0,1) sector.
pub fn full_receiver_density(
    u: &FullOperator,
    rho_s: &CMatrix,
    spec: &ChainSpec,
) -> Result<CMatrix> {
    let ns = spec.n_sender;
    if rho_s.nrows() != ns + 1 || rho_s.ncols() != ns + 1 {
        return Err(Error::State(format!(
            "sender state must be {0}x{0}",
            ns + 1
        )));
    }
    let dim = u.dim();
    let mut rho0 = CMatrix::zeros(dim, dim);
    for i in 0..=ns {
        for j in 0..=ns {
            rho0[(sender_index(spec, i), sender_index(spec, j))] = rho_s[(i, j)];
        }
    }
    let rho = &u.m * rho0 * u.m.adjoint();
    let nr = spec.n_receiver;
    let rest = 1usize << (spec.n_total - nr);
    let mut out = CMatrix::zeros(nr + 1, nr + 1);
    for a in 0..=nr {
        for b in 0..=nr {
            out[(a, b)] = (0..rest)
                .map(|k| {
                    rho[(
                        (k << nr) | receiver_bits(spec, a),
                        (k << nr) | receiver_bits(spec, b),
                    )]
                })
                .sum();
        }
    }
    Ok(out)
}

/// The transfer tensor `T[n][m][i][j]` mapping sender elements to receiver
/// elements, summed from full-propagator entries over every configuration
/// of the traced sites.
#[derive(Clone, Debug)]
pub struct TransferTensor {
    n_receiver: usize,
    n_sender: usize,
    t: Vec<C64>,
}

impl TransferTensor {
    pub fn from_full(u: &FullOperator, spec: &ChainSpec) -> Self {
        let (nr, ns) = (spec.n_receiver, spec.n_sender);
        let rest = 1usize << (spec.n_total - nr);
        let mut t = Vec::with_capacity((nr + 1).pow(2) * (ns + 1).pow(2));
        for n in 0..=nr {
            for m in 0..=nr {
                for i in 0..=ns {
                    for j in 0..=ns {
                        let (si, sj) = (sender_index(spec, i), sender_index(spec, j));
                        t.push(
                            (0..rest)
                                .map(|k| {
                                    u.m[((k << nr) | receiver_bits(spec, n), si)]
                                        * u.m[((k << nr) | receiver_bits(spec, m), sj)].conj()
                                })
                                .sum(),
                        );
                    }
                }
            }
        }
        Self {
            n_receiver: nr,
            n_sender: ns,
            t,
        }
    }

    pub fn get(&self, n: usize, m: usize, i: usize, j: usize) -> C64 {
        let s = self.n_sender + 1;
        self.t[((n * (self.n_receiver + 1) + m) * s + i) * s + j]
    }

    pub fn apply(&self, rho_s: &CMatrix) -> CMatrix {
        let (nr, ns) = (self.n_receiver, self.n_sender);
        CMatrix::from_fn(nr + 1, nr + 1, |n, m| {
            let mut acc = ZERO;
            for i in 0..=ns {
                for j in 0..=ns {
                    acc += self.get(n, m, i, j) * rho_s[(i, j)];
                }
            }
            acc
        })
    }
}

/// Largest deviation between the transfer tensor applied to each sample and
/// the subspace evolve-then-trace receiver state.
pub fn t_tensor_check(
    spec: &ChainSpec,
    schedule: &ControlSchedule,
    samples: &[CMatrix],
) -> Result<f64> {
    let coupling = build_couplings(spec);
    let full = full_propagate_schedule(spec, &coupling, schedule)?;
    let tensor = TransferTensor::from_full(&full, spec);
    let u = compose_schedule_exact(spec, &coupling, schedule, EvolutionModel::Exact)?;
    let mut worst = 0.0f64;
    for rho_s in samples {
        let sub = receiver_density(&u, &embed_sender_state(rho_s, spec)?, spec);
        worst = worst.max(max_abs(&(tensor.apply(rho_s) - sub)));
    }
    Ok(worst)
}

/// Schedule with angles uniform on `(-pi, pi]`.
pub fn random_schedule<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &ChainSpec,
    k_omega: usize,
    tau_reg: f64,
) -> Result<ControlSchedule> {
    use std::f64::consts::PI;
    let angles = (0..k_omega)
        .map(|_| {
            (0..spec.free_controls())
                .map(|_| PI - 2.0 * PI * rng.random::<f64>())
                .collect()
        })
        .collect();
    ControlSchedule::new(spec, tau_reg, angles)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<26} {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

/// Runs every oracle comparison on `n_schedules` random schedules and
/// reports the worst value of each.
pub fn verify_suite(
    spec: &ChainSpec,
    k_omega: usize,
    tau_reg: f64,
    n_schedules: usize,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    check_size(spec.n_total)?;
    spec.validate()?;
    let coupling = build_couplings(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 9];
    for _ in 0..n_schedules {
        let schedule = random_schedule(&mut rng, spec, k_omega, tau_reg)?;
        let omega = schedule.omega(spec, 0);
        let h = full_hamiltonian(spec, &coupling, &omega)?;
        let h1 = one_excitation_hamiltonian(&coupling, &omega)?;
        let block = h.one_excitation_block();
        let h_dev = DMatrix::from_fn(block.nrows(), block.ncols(), |k, l| {
            (block[(k, l)] - C64::new(h1.as_matrix()[(k, l)], 0.0)).norm()
        })
        .max();
        let full = full_propagate_schedule(spec, &coupling, &schedule)?;
        let sub = compose_schedule_exact(spec, &coupling, &schedule, EvolutionModel::Exact)?;
        let samples: Vec<CMatrix> = (0..4)
            .map(|_| random_density(&mut rng, spec.n_sender + 1))
            .collect();
        let mut trace_dev = 0.0f64;
        for rho_s in &samples {
            let oracle = full_receiver_density(&full, rho_s, spec)?;
            let sub_r = receiver_density(&sub, &embed_sender_state(rho_s, spec)?, spec);
            trace_dev = trace_dev.max(max_abs(&(oracle - sub_r)));
        }
        let values = [
            h_dev,
            h.hermiticity_error(),
            h.total_z_commutator(),
            full.to_subspace().max_abs_diff(&sub),
            full.unitarity_error(),
            full.off_sector_max(),
            (full.vacuum_amplitude() - ONE).norm(),
            trace_dev,
            t_tensor_check(spec, &schedule, &samples)?,
        ];
        for (w, v) in worst.iter_mut().zip(values) {
            *w = w.max(v);
        }
    }
    let names = [
        ("one_excitation_hamiltonian", 1e-12),
        ("hamiltonian_hermitian", 1e-12),
        ("total_z_commutator", 1e-12),
        ("subspace_propagator", 1e-10),
        ("full_unitarity", 1e-10),
        ("excitation_sectors", 1e-12),
        ("vacuum_amplitude", 1e-12),
        ("partial_trace", 1e-10),
        ("transfer_tensor", 1e-10),
    ];
    Ok(names
        .iter()
        .zip(worst)
        .map(|(&(name, tolerance), value)| CheckResult {
            name,
            value,
            tolerance,
        })
        .collect())
}
