//! Receiver block of the propagator, restoring residuals, scale factors and
//! the receiver's reduced density matrix in the (0,1)-excitation subspace.
//!
//! Subspace states use the basis `{vacuum, excitation at site 0, ..., site N-1}`.
//! Sender and receiver states use `{vacuum, slot 0, ..., slot n-1}`.

use nalgebra::SymmetricEigen;
use num_complex::Complex64 as C64;
use rand::Rng;

use crate::chain::ChainSpec;
use crate::error::{Error, Result};
use crate::propagator::{CMatrix, SubspacePropagator};

const STATE_TOL: f64 = 1e-10;

/// `u_hat[p][q] = U1[receiver site p, sender site q]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverBlock {
    pub u_hat: CMatrix,
}

impl ReceiverBlock {
    /// Builds the block from propagator columns of the sender sites
    /// (`n_total x n_sender`).
    pub fn from_sender_columns(cols: &CMatrix, spec: &ChainSpec) -> Self {
        let u_hat = CMatrix::from_fn(spec.n_receiver, spec.n_sender, |p, q| {
            cols[(spec.receiver_site(p), q)]
        });
        Self { u_hat }
    }

    pub fn n_receiver(&self) -> usize {
        self.u_hat.nrows()
    }

    /// Largest off-diagonal magnitude.
    pub fn offdiag_max(&self) -> f64 {
        let mut m = 0.0f64;
        for p in 0..self.u_hat.nrows() {
            for q in 0..self.u_hat.ncols() {
                if p != q {
                    m = m.max(self.u_hat[(p, q)].norm());
                }
            }
        }
        m
    }
}

pub fn receiver_block(u: &SubspacePropagator, spec: &ChainSpec) -> ReceiverBlock {
    let u_hat = CMatrix::from_fn(spec.n_receiver, spec.n_sender, |p, q| {
        u.u1[(spec.receiver_site(p), spec.sender_site(q))]
    });
    ReceiverBlock { u_hat }
}

/// Real and imaginary parts of every off-diagonal entry of the receiver
/// block, real parts first.
pub fn residuals(b: &ReceiverBlock) -> Vec<f64> {
    let mut re = Vec::new();
    let mut im = Vec::new();
    for p in 0..b.u_hat.nrows() {
        for q in 0..b.u_hat.ncols() {
            if p != q {
                re.push(b.u_hat[(p, q)].re);
                im.push(b.u_hat[(p, q)].im);
            }
        }
    }
    re.extend(im);
    re
}

pub fn residual_norm(b: &ReceiverBlock) -> f64 {
    residuals(b).iter().map(|r| r * r).sum::<f64>().sqrt()
}

/// Complex scale factors `lambda_{p0}`; pairwise factors are derived.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSet {
    pub lam: Vec<C64>,
}

impl LambdaSet {
    /// `lambda_{p0} * conj(lambda_{q0})`.
    pub fn pair(&self, p: usize, q: usize) -> C64 {
        self.lam[p] * self.lam[q].conj()
    }

    /// Scale factor between receiver element `(i, j)` and sender element
    /// `(i, j)`, with index 0 the vacuum. The `(0, 0)` entry has no factor.
    pub fn element(&self, i: usize, j: usize) -> Option<C64> {
        match (i, j) {
            (0, 0) => None,
            (p, 0) => Some(self.lam[p - 1]),
            (0, q) => Some(self.lam[q - 1].conj()),
            (p, q) => Some(self.pair(p - 1, q - 1)),
        }
    }

    pub fn min_abs(&self) -> f64 {
        self.lam
            .iter()
            .map(|z| z.norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.lam.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max_p |self_p - other_p|`.
    pub fn max_deviation(&self, other: &LambdaSet) -> f64 {
        self.lam
            .iter()
            .zip(&other.lam)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

pub fn lambdas(b: &ReceiverBlock) -> LambdaSet {
    let n = b.u_hat.nrows().min(b.u_hat.ncols());
    LambdaSet {
        lam: (0..n).map(|p| b.u_hat[(p, p)]).collect(),
    }
}

/// Density matrix over the (0,1)-excitation subspace of the whole chain.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceState {
    pub rho: CMatrix,
}

/// Checks Hermiticity, unit trace and positivity of a density matrix.
pub fn validate_density(rho: &CMatrix) -> Result<()> {
    if rho.nrows() != rho.ncols() {
        return Err(Error::State("density matrix must be square".into()));
    }
    let herm = (rho - rho.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if herm > STATE_TOL {
        return Err(Error::State(format!("not Hermitian (deviation {herm:e})")));
    }
    let tr = rho.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > STATE_TOL {
        return Err(Error::State(format!("trace is {tr}, expected 1")));
    }
    let sym = (rho + rho.adjoint()).scale(0.5);
    let min_eig = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -STATE_TOL {
        return Err(Error::State(format!(
            "not positive semidefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

/// Embeds a sender state into the chain with all other sites in the ground
/// state.
pub fn embed_sender_state(rho_s: &CMatrix, spec: &ChainSpec) -> Result<SubspaceState> {
    let ns = spec.n_sender;
    if rho_s.nrows() != ns + 1 || rho_s.ncols() != ns + 1 {
        return Err(Error::State(format!(
            "sender state must be {0}x{0}, got {1}x{2}",
            ns + 1,
            rho_s.nrows(),
            rho_s.ncols()
        )));
    }
    validate_density(rho_s)?;
    let n = spec.n_total;
    // sender slot q -> chain index 1 + sender_site(q)
    let index = |i: usize| {
        if i == 0 {
            0
        } else {
            1 + spec.sender_site(i - 1)
        }
    };
    let mut rho = CMatrix::zeros(n + 1, n + 1);
    for i in 0..=ns {
        for j in 0..=ns {
            rho[(index(i), index(j))] = rho_s[(i, j)];
        }
    }
    Ok(SubspaceState { rho })
}

/// `rho(tau) = U rho0 U^dag` in the subspace.
pub fn evolve_state(u: &SubspacePropagator, rho0: &SubspaceState) -> SubspaceState {
    let n = u.n();
    let mut full = CMatrix::zeros(n + 1, n + 1);
    full[(0, 0)] = u.u0;
    full.view_mut((1, 1), (n, n)).copy_from(&u.u1);
    SubspaceState {
        rho: &full * &rho0.rho * full.adjoint(),
    }
}

/// Reduced receiver state after evolution: sender and line sites are traced
/// out, so their excitation probability is folded into the receiver vacuum.
pub fn receiver_density(u: &SubspacePropagator, rho0: &SubspaceState, spec: &ChainSpec) -> CMatrix {
    let rho = evolve_state(u, rho0).rho;
    let nr = spec.n_receiver;
    let index = |p: usize| 1 + spec.receiver_site(p);
    let mut out = CMatrix::zeros(nr + 1, nr + 1);
    let mut vac = rho[(0, 0)];
    for k in 0..spec.n_total - nr {
        vac += rho[(1 + k, 1 + k)];
    }
    out[(0, 0)] = vac;
    for p in 0..nr {
        out[(p + 1, 0)] = rho[(index(p), 0)];
        out[(0, p + 1)] = rho[(0, index(p))];
        for q in 0..nr {
            out[(p + 1, q + 1)] = rho[(index(p), index(q))];
        }
    }
    out
}

/// Largest deviation `|rho_R[i][j] - lambda_ij rho_S[i][j]|` over all
/// elements except the receiver vacuum population.
pub fn restore_check(
    u: &SubspacePropagator,
    rho_s: &CMatrix,
    lam: &LambdaSet,
    spec: &ChainSpec,
) -> Result<f64> {
    let rho0 = embed_sender_state(rho_s, spec)?;
    let rho_r = receiver_density(u, &rho0, spec);
    let mut dev = 0.0f64;
    for i in 0..rho_r.nrows() {
        for j in 0..rho_r.ncols() {
            if let Some(l) = lam.element(i, j) {
                dev = dev.max((rho_r[(i, j)] - l * rho_s[(i, j)]).norm());
            }
        }
    }
    Ok(dev)
}

/// Random mixed state `G G^dag / tr(G G^dag)` of dimension `dim`.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let m = &g * g.adjoint();
    let tr = m.trace();
    m.map(|z| z / tr)
}
