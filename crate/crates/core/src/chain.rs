//! Chain geometry, dipolar couplings and the one-excitation Hamiltonian block.
//!
//! Sites are indexed from 0 internally. The sender occupies sites
//! `0..n_sender`, the receiver the last `n_receiver` sites and the extended
//! receiver the last `n_ext_receiver` sites. Times are measured in units of
//! the nearest-neighbour coupling, so `d[0][1] == 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on the zero-sum constraint of the control frequencies.
pub const ZERO_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n_total: usize,
    pub n_sender: usize,
    pub n_receiver: usize,
    pub n_ext_receiver: usize,
    pub coupling_exponent: f64,
}

impl ChainSpec {
    pub fn new(
        n_total: usize,
        n_sender: usize,
        n_receiver: usize,
        n_ext_receiver: usize,
    ) -> Result<Self> {
        let spec = Self {
            n_total,
            n_sender,
            n_receiver,
            n_ext_receiver,
            coupling_exponent: 3.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Symmetric sender/receiver of `n_party` sites with an extended receiver
    /// of the same size, as used throughout the numerical experiments.
    pub fn symmetric(n_total: usize, n_party: usize) -> Result<Self> {
        Self::new(n_total, n_party, n_party, n_party)
    }

    pub fn with_exponent(mut self, exponent: f64) -> Result<Self> {
        self.coupling_exponent = exponent;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sender == 0 {
            return Err(Error::Chain("sender must contain at least one site".into()));
        }
        if self.n_sender != self.n_receiver {
            return Err(Error::Chain(format!(
                "sender and receiver sizes must match ({} != {})",
                self.n_sender, self.n_receiver
            )));
        }
        if self.n_total < self.n_sender + self.n_receiver {
            return Err(Error::Chain(format!(
                "chain of {} sites cannot hold sender ({}) and receiver ({})",
                self.n_total, self.n_sender, self.n_receiver
            )));
        }
        if self.n_ext_receiver < self.n_receiver
            || self.n_ext_receiver > self.n_total - self.n_sender
        {
            return Err(Error::Chain(format!(
                "extended receiver size {} must lie in [{}, {}]",
                self.n_ext_receiver,
                self.n_receiver,
                self.n_total - self.n_sender
            )));
        }
        if !(self.coupling_exponent.is_finite() && self.coupling_exponent > 0.0) {
            return Err(Error::Chain(format!(
                "coupling exponent must be positive, got {}",
                self.coupling_exponent
            )));
        }
        Ok(())
    }

    pub fn n_line(&self) -> usize {
        self.n_total - self.n_sender - self.n_receiver
    }

    /// Chain site holding sender slot `q`.
    pub fn sender_site(&self, q: usize) -> usize {
        q
    }

    /// Chain site holding receiver slot `p`.
    pub fn receiver_site(&self, p: usize) -> usize {
        self.n_total - self.n_receiver + p
    }

    /// First site of the extended receiver.
    pub fn ext_receiver_start(&self) -> usize {
        self.n_total - self.n_ext_receiver
    }

    /// Number of free control angles per time segment.
    pub fn free_controls(&self) -> usize {
        self.n_ext_receiver - 1
    }

    pub fn with_n_total(&self, n_total: usize) -> Result<Self> {
        let mut spec = self.clone();
        spec.n_total = n_total;
        spec.validate()?;
        Ok(spec)
    }
}

/// Dimensionless all-pairs coupling constants, `d[i][j] = 1/|i-j|^exponent`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    d: DMatrix<f64>,
}

impl CouplingMatrix {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.d
    }
}

pub fn build_couplings(spec: &ChainSpec) -> CouplingMatrix {
    let n = spec.n_total;
    let d = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (i.abs_diff(j) as f64).powf(-spec.coupling_exponent)
        }
    });
    CouplingMatrix { d }
}

/// Maps the free angles of one segment onto extended-receiver amplitudes
/// `a = 2 sin(angle)`, closing with `a_last = -sum(a)`.
pub fn amplitudes_from_angles(angles: &[f64]) -> Vec<f64> {
    let mut amps: Vec<f64> = angles.iter().map(|a| 2.0 * a.sin()).collect();
    let closure = -amps.iter().sum::<f64>();
    amps.push(closure);
    amps
}

/// Piecewise-constant control: `k_omega` equal segments over `tau_reg`,
/// each with `n_ext_receiver - 1` free angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub k_omega: usize,
    pub tau_reg: f64,
    pub angles: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn new(spec: &ChainSpec, tau_reg: f64, angles: Vec<Vec<f64>>) -> Result<Self> {
        let schedule = Self {
            k_omega: angles.len(),
            tau_reg,
            angles,
        };
        schedule.validate(spec)?;
        Ok(schedule)
    }

    pub fn zeros(spec: &ChainSpec, k_omega: usize, tau_reg: f64) -> Result<Self> {
        Self::new(
            spec,
            tau_reg,
            vec![vec![0.0; spec.free_controls()]; k_omega],
        )
    }

    /// Builds a schedule from angles flattened segment-major.
    pub fn from_flat(spec: &ChainSpec, k_omega: usize, tau_reg: f64, flat: &[f64]) -> Result<Self> {
        let m = spec.free_controls();
        if flat.len() != k_omega * m {
            return Err(Error::Schedule(format!(
                "expected {} angles, got {}",
                k_omega * m,
                flat.len()
            )));
        }
        let angles = if m == 0 {
            vec![Vec::new(); k_omega]
        } else {
            flat.chunks(m).map(<[f64]>::to_vec).collect()
        };
        Self::new(spec, tau_reg, angles)
    }

    pub fn validate(&self, spec: &ChainSpec) -> Result<()> {
        if self.k_omega == 0 {
            return Err(Error::Schedule("at least one segment required".into()));
        }
        if self.angles.len() != self.k_omega {
            return Err(Error::Schedule(format!(
                "{} angle rows for {} segments",
                self.angles.len(),
                self.k_omega
            )));
        }
        if !(self.tau_reg.is_finite() && self.tau_reg >= 0.0) {
            return Err(Error::Schedule(format!(
                "registration time must be finite and non-negative, got {}",
                self.tau_reg
            )));
        }
        let m = spec.free_controls();
        for (j, row) in self.angles.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Schedule(format!(
                    "segment {j} has {} angles, expected {m}",
                    row.len()
                )));
            }
            if row.iter().any(|a| !a.is_finite()) {
                return Err(Error::Schedule(format!(
                    "segment {j} has non-finite angles"
                )));
            }
        }
        Ok(())
    }

    pub fn segment_duration(&self) -> f64 {
        self.tau_reg / self.k_omega as f64
    }

    pub fn flat_angles(&self) -> Vec<f64> {
        self.angles.iter().flatten().copied().collect()
    }

    /// Extended-receiver amplitudes of segment `j`.
    pub fn amplitudes(&self, j: usize) -> Vec<f64> {
        amplitudes_from_angles(&self.angles[j])
    }

    /// Full per-site frequency vector of segment `j`; zero outside the
    /// extended receiver.
    pub fn omega(&self, spec: &ChainSpec, j: usize) -> Vec<f64> {
        let mut omega = vec![0.0; spec.n_total];
        let start = spec.ext_receiver_start();
        for (k, a) in self.amplitudes(j).into_iter().enumerate() {
            omega[start + k] = a;
        }
        omega
    }
}

/// One-excitation block of the chain Hamiltonian. All entries are real, so
/// the block is stored as a real symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianBlock1Exc {
    h: DMatrix<f64>,
}

impl HamiltonianBlock1Exc {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.h
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.h.trace()
    }

    /// Adds `-omega_k` to the diagonal without re-checking the zero-sum rule.
    pub(crate) fn with_diagonal_shift(&self, omega: &[f64], scale: f64) -> DMatrix<f64> {
        let mut h = self.h.clone();
        for (k, w) in omega.iter().enumerate() {
            h[(k, k)] -= w * scale;
        }
        h
    }
}

pub(crate) fn check_zero_sum(omega: &[f64]) -> Result<()> {
    let sum: f64 = omega.iter().sum();
    let scale: f64 = omega.iter().map(|w| w.abs()).sum::<f64>().max(1.0);
    if sum.abs() > ZERO_SUM_TOL * scale {
        return Err(Error::ZeroSum(sum));
    }
    Ok(())
}

/// `h[k][l] = d[k][l] / 2` off the diagonal and `h[k][k] = -omega[k]`.
pub fn one_excitation_hamiltonian(
    coupling: &CouplingMatrix,
    omega: &[f64],
) -> Result<HamiltonianBlock1Exc> {
    let n = coupling.n();
    if omega.len() != n {
        return Err(Error::Schedule(format!(
            "frequency vector has length {}, chain has {n} sites",
            omega.len()
        )));
    }
    check_zero_sum(omega)?;
    let h = DMatrix::from_fn(n, n, |k, l| {
        if k == l {
            -omega[k]
        } else {
            0.5 * coupling.get(k, l)
        }
    });
    Ok(HamiltonianBlock1Exc { h })
}

pub fn free_hamiltonian(coupling: &CouplingMatrix) -> HamiltonianBlock1Exc {
    let n = coupling.n();
    one_excitation_hamiltonian(coupling, &vec![0.0; n]).expect("zero field is zero-sum")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn two_site_couplings() {
        let spec = ChainSpec::new(2, 1, 1, 1).unwrap();
        let d = build_couplings(&spec);
        assert_eq!(
            d.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
    }

    #[test]
    fn inverse_cube_law() {
        let spec = ChainSpec::new(4, 1, 1, 1).unwrap();
        let d = build_couplings(&spec);
        assert_abs_diff_eq!(d.get(0, 2), 1.0 / 8.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.get(0, 3), 1.0 / 27.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.get(1, 2), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn couplings_decrease_away_from_diagonal() {
        let spec = ChainSpec::symmetric(6, 2).unwrap();
        let d = build_couplings(&spec);
        for i in 0..6 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..6 {
                assert_eq!(d.get(i, j), d.get(j, i));
                assert_eq!(d.get(i, j), d.get(5 - i, 5 - j));
            }
            for j in (i + 1)..5 {
                assert!(d.get(i, j) > d.get(i, j + 1));
            }
            for j in 1..i {
                assert!(d.get(i, j) > d.get(i, j - 1));
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(ChainSpec::new(6, 2, 2, 2).is_ok());
        assert!(ChainSpec::new(4, 2, 2, 2).is_ok());
        assert!(ChainSpec::new(6, 2, 2, 4).is_ok());
        assert!(ChainSpec::new(3, 2, 2, 2).is_err());
        assert!(ChainSpec::new(6, 2, 3, 3).is_err());
        assert!(ChainSpec::new(6, 2, 2, 1).is_err());
        assert!(ChainSpec::new(6, 2, 2, 5).is_err());
        assert!(ChainSpec::new(6, 0, 0, 0).is_err());
    }

    #[test]
    fn receiver_index_map() {
        let spec = ChainSpec::symmetric(6, 2).unwrap();
        assert_eq!(spec.sender_site(0), 0);
        assert_eq!(spec.sender_site(1), 1);
        assert_eq!(spec.receiver_site(0), 4);
        assert_eq!(spec.receiver_site(1), 5);
        assert_eq!(spec.n_line(), 2);
    }

    #[test]
    fn angle_parametrization() {
        assert_eq!(amplitudes_from_angles(&[PI / 2.0]), vec![2.0, -2.0]);
        assert_eq!(amplitudes_from_angles(&[0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        let a = amplitudes_from_angles(&[PI / 6.0, PI / 6.0]);
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[2], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn schedule_frequencies_live_on_extended_receiver() {
        let spec = ChainSpec::new(7, 2, 2, 3).unwrap();
        let s = ControlSchedule::new(&spec, 4.0, vec![vec![0.3, -1.1], vec![0.7, 0.2]]).unwrap();
        assert_eq!(s.segment_duration(), 2.0);
        for j in 0..2 {
            let w = s.omega(&spec, j);
            assert!(w[..4].iter().all(|&x| x == 0.0));
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 0.0, epsilon = 1e-15);
        }
        assert!(ControlSchedule::new(&spec, 4.0, vec![vec![0.3]]).is_err());
        assert!(ControlSchedule::new(&spec, -1.0, vec![vec![0.3, 0.1]]).is_err());
        assert!(ControlSchedule::from_flat(&spec, 2, 1.0, &[0.0; 3]).is_err());
        let flat = ControlSchedule::from_flat(&spec, 2, 1.0, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flat.angles, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(flat.flat_angles(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn hamiltonian_block_entries() {
        let spec = ChainSpec::new(3, 1, 1, 2).unwrap();
        let d = build_couplings(&spec);
        let w = 0.7;
        let h = one_excitation_hamiltonian(&d, &[0.0, -w, w]).unwrap();
        let m = h.as_matrix();
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(1, 1)], w);
        assert_eq!(m[(2, 2)], -w);
        assert_eq!(m[(0, 1)], 0.5);
        assert_eq!(m[(0, 2)], 1.0 / 16.0);
        assert_eq!(m[(1, 2)], 0.5);
        assert_eq!(h.trace(), 0.0);
    }

    #[test]
    fn rejects_non_zero_sum() {
        let spec = ChainSpec::symmetric(4, 1).unwrap();
        let d = build_couplings(&spec);
        assert!(matches!(
            one_excitation_hamiltonian(&d, &[0.0, 0.0, 0.0, 1e-9]),
            Err(Error::ZeroSum(_))
        ));
        assert!(one_excitation_hamiltonian(&d, &[0.0, 0.0]).is_err());
    }
}
