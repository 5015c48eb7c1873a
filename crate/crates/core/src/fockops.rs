//! Truncated Fock-space operators and the one-count / no-count maps of both
//! counting models.
//!
//! Truncation convention: the space holds `|0>..|N>` and the raising
//! operators send `|N>` to zero, so mass leaves the space at the edge
//! instead of wrapping around. The jump and no-count maps return a zero
//! tail mass, since what happens to the dropped tail is not tracked.
//!
//! The jump, no-count and free-evolution maps never form dense matrix
//! products: every operator involved is either diagonal or a weighted shift,
//! so the maps act entrywise in `O(N^2)`. The dense matrices in
//! [`OperatorSet`] exist for algebra checks and for brute-force oracles.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::states::{DensityMatrix, PhotonStatistics};

/// Which counting model supplies the jump and no-count maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    /// `J rho = gamma a rho a+`, rate operator `gamma a+a`.
    Sd,
    /// `J rho = E- rho E+`, rate operator `gamma E+E-`.
    Ep,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Sd, ModelKind::Ep];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sd => "sd",
            ModelKind::Ep => "ep",
        }
    }

    /// Coefficient `c_n` of the lowering operator, `L|n> = c_n |n-1>`.
    pub fn ladder(self, n: usize) -> f64 {
        match self {
            ModelKind::Sd => (n as f64).sqrt(),
            ModelKind::Ep => {
                if n == 0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Diagonal of the (gamma-free) rate operator `L+L`: `n` for SD, `Lambda` for EP.
    pub fn rate_diag(self, n: usize) -> f64 {
        let c = self.ladder(n);
        c * c
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(ModelKind::Sd),
            "ep" => Ok(ModelKind::Ep),
            other => Err(Error::invalid(format!(
                "unknown model {other:?} (expected sd or ep)"
            ))),
        }
    }
}

/// Dense operator matrices on a truncated Fock space plus the mode and
/// detector parameters.
#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub dim: usize,
    pub a: DMatrix<f64>,
    pub a_dag: DMatrix<f64>,
    pub e_minus: DMatrix<f64>,
    pub e_plus: DMatrix<f64>,
    pub number: DMatrix<f64>,
    /// `Lambda = 1 - |0><0|`.
    pub lambda: DMatrix<f64>,
    /// `Lambda_0 = |0><0|`.
    pub lambda0: DMatrix<f64>,
    /// Mode angular frequency, `H = omega a+a`.
    pub omega: f64,
    /// Detector coupling (1/time).
    pub gamma: f64,
}

pub fn build_operators(dim: usize, gamma: f64, omega: f64) -> Result<OperatorSet> {
    if dim < 2 {
        return Err(Error::invalid(format!(
            "operator dimension must be >= 2, got {dim}"
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    if !omega.is_finite() {
        return Err(Error::invalid("omega must be finite"));
    }
    let mut a = DMatrix::zeros(dim, dim);
    let mut e_minus = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = (n as f64).sqrt();
        e_minus[(n - 1, n)] = 1.0;
    }
    let number = DMatrix::from_fn(dim, dim, |i, j| if i == j { i as f64 } else { 0.0 });
    let mut lambda0 = DMatrix::zeros(dim, dim);
    lambda0[(0, 0)] = 1.0;
    let lambda = DMatrix::identity(dim, dim) - &lambda0;
    Ok(OperatorSet {
        dim,
        a_dag: a.transpose(),
        e_plus: e_minus.transpose(),
        a,
        e_minus,
        number,
        lambda,
        lambda0,
        omega,
        gamma,
    })
}

impl OperatorSet {
    /// Dense lowering operator of the model (`a` or `E-`).
    pub fn lowering(&self, model: ModelKind) -> &DMatrix<f64> {
        match model {
            ModelKind::Sd => &self.a,
            ModelKind::Ep => &self.e_minus,
        }
    }

    /// Dense no-count generator `Y = -i omega n - (gamma/2) R` with
    /// `R = a+a` (SD) or `R = E+E-` (EP).
    pub fn generator(&self, model: ModelKind) -> DMatrix<Complex64> {
        let l = self.lowering(model);
        let r = l.transpose() * l;
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            Complex64::new(
                -0.5 * self.gamma * r[(i, j)],
                -self.omega * self.number[(i, j)],
            )
        })
    }
}

fn check_dim(rho: &DensityMatrix, ops: &OperatorSet) {
    assert_eq!(rho.dim(), ops.dim, "state and operator dimensions differ");
}

/// `rho'_{ij} = c_{i+1} c_{j+1} rho_{i+1, j+1}`.
fn shift_conjugate(rho: &DensityMatrix, model: ModelKind, scale: f64) -> DensityMatrix {
    let dim = rho.dim();
    let m = rho.matrix();
    let out = DMatrix::from_fn(dim, dim, |i, j| {
        if i + 1 < dim && j + 1 < dim {
            m[(i + 1, j + 1)] * (scale * model.ladder(i + 1) * model.ladder(j + 1))
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    DensityMatrix::from_matrix(out, 0.0)
}

/// One-count map exactly as each model defines it: `gamma a rho a+` for SD and
/// the unscaled `E- rho E+` for EP. The result is unnormalized.
pub fn jump(rho: &DensityMatrix, ops: &OperatorSet, model: ModelKind) -> DensityMatrix {
    check_dim(rho, ops);
    match model {
        ModelKind::Sd => shift_conjugate(rho, model, ops.gamma),
        ModelKind::Ep => shift_conjugate(rho, model, 1.0),
    }
}

/// One-count map weighted by the detector rate, `gamma L rho L+`.
///
/// This is the map whose trace balances the no-count generator and the one
/// that enters count densities and the unconditioned master equation. For SD
/// it coincides with [`jump`]; for EP it is `gamma` times it.
pub fn rate_jump(rho: &DensityMatrix, ops: &OperatorSet, model: ModelKind) -> DensityMatrix {
    check_dim(rho, ops);
    shift_conjugate(rho, model, ops.gamma)
}

/// State just after one count, `J rho / Tr[J rho]`.
pub fn post_count_state(
    rho: &DensityMatrix,
    ops: &OperatorSet,
    model: ModelKind,
) -> Result<DensityMatrix> {
    let j = jump(rho, ops, model);
    let tr = j.trace();
    if tr <= 1e-15 {
        return Err(Error::VacuumOnly);
    }
    j.normalized()
}

/// Mean photon number after one count from the statistics alone:
/// `nbar + q` (SD) or `nbar / (1 - p0) - 1` (EP).
pub fn mean_after_one_count(p: &PhotonStatistics, model: ModelKind) -> Result<f64> {
    let (nbar, q) = crate::states::mean_and_q(p);
    match model {
        ModelKind::Sd => {
            if nbar <= 1e-15 {
                return Err(Error::VacuumOnly);
            }
            Ok(nbar + q)
        }
        ModelKind::Ep => {
            let one_minus_p0 = 1.0 - p.prob(0);
            if one_minus_p0 <= 1e-15 {
                return Err(Error::VacuumOnly);
            }
            Ok(nbar / one_minus_p0 - 1.0)
        }
    }
}

/// Diagonal of `exp(Y tau)`.
fn no_count_factors(
    dim: usize,
    tau: f64,
    gamma: f64,
    omega: f64,
    model: ModelKind,
) -> Vec<Complex64> {
    (0..dim)
        .map(|n| {
            let decay = -0.5 * gamma * model.rate_diag(n) * tau;
            Complex64::from_polar(decay.exp(), -omega * n as f64 * tau)
        })
        .collect()
}

/// No-count evolution `S_tau rho = e^{Y tau} rho e^{Y+ tau}` (unnormalized).
///
/// For EP this uses `e^{-gamma tau Lambda / 2} = Lambda_0 + e^{-gamma tau / 2} Lambda`.
/// The trace of the result is the probability of no count during `tau`.
pub fn no_count_evolve(
    rho: &DensityMatrix,
    tau: f64,
    ops: &OperatorSet,
    model: ModelKind,
) -> DensityMatrix {
    check_dim(rho, ops);
    assert!(tau >= 0.0, "tau must be >= 0");
    let d = no_count_factors(rho.dim(), tau, ops.gamma, ops.omega, model);
    let m = rho.matrix();
    let out = DMatrix::from_fn(rho.dim(), rho.dim(), |i, j| d[i] * m[(i, j)] * d[j].conj());
    DensityMatrix::from_matrix(out, 0.0)
}

/// Free evolution `U_t rho = e^{-iHt} rho e^{iHt}`.
pub fn free_evolve(rho: &DensityMatrix, t: f64, omega: f64) -> DensityMatrix {
    if omega == 0.0 {
        return rho.clone();
    }
    let m = rho.matrix();
    let out = DMatrix::from_fn(rho.dim(), rho.dim(), |i, j| {
        m[(i, j)] * Complex64::from_polar(1.0, -omega * (i as f64 - j as f64) * t)
    });
    DensityMatrix::from_matrix(out, rho.tail_mass())
}

/// Probability of no count during `tau` from the photon statistics:
/// `e^{-g} + p0 (1 - e^{-g})` (EP) or `sum p_n e^{-n g}` (SD), `g = gamma tau`.
pub fn no_count_probability(p: &PhotonStatistics, tau: f64, gamma: f64, model: ModelKind) -> f64 {
    let g = gamma * tau;
    match model {
        ModelKind::Ep => {
            let e = (-g).exp();
            let p0 = p.prob(0);
            // tail photons decay like any n >= 1
            e + p0 * (1.0 - e)
        }
        ModelKind::Sd => crate::specfun::sum_compensated(
            p.probs()
                .iter()
                .enumerate()
                .map(|(n, v)| v * (-(n as f64) * g).exp()),
        ),
    }
}

/// Pure state in the truncated Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amps: DVector<Complex64>,
}

impl PureState {
    /// Normalized state; the norm must be one within `1e-12`.
    pub fn new(amps: DVector<Complex64>) -> Result<Self> {
        let n2 = amps.norm_squared();
        if (n2 - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "pure state has squared norm {n2}, expected 1"
            )));
        }
        Ok(PureState { amps })
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.norm_squared()
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn to_density_matrix(&self) -> DensityMatrix {
        DensityMatrix::pure(&self.amps, 0.0)
    }
}

/// EP no-count evolution of a pure state,
/// `<0|psi>|0> + e^{-gamma tau/2} e^{-i omega n tau} Lambda |psi>`.
///
/// The result is sub-normalized; its squared norm is the no-count probability.
pub fn no_count_evolve_pure(psi: &PureState, tau: f64, ops: &OperatorSet) -> PureState {
    assert_eq!(psi.dim(), ops.dim, "state and operator dimensions differ");
    let d = no_count_factors(psi.dim(), tau, ops.gamma, ops.omega, ModelKind::Ep);
    PureState {
        amps: DVector::from_iterator(psi.dim(), psi.amps.iter().zip(&d).map(|(a, f)| a * f)),
    }
}

/// `|Tr[J rho + Y rho + rho Y+]|` evaluated with dense matrices, where `J` is
/// the rate-weighted one-count map.
pub fn trace_rate_identity_check(rho: &DensityMatrix, ops: &OperatorSet, model: ModelKind) -> f64 {
    check_dim(rho, ops);
    let l = ops.lowering(model).map(|v| Complex64::new(v, 0.0));
    let m = rho.matrix();
    let jr = (&l * m * l.adjoint()) * Complex64::new(ops.gamma, 0.0);
    let y = ops.generator(model);
    let total = jr + &y * m + m * y.adjoint();
    total.trace().norm()
}

/// Diagonal-only versions of the maps, used when the state stays diagonal
/// (diagonal input and `omega = 0`).
pub mod diag {
    use super::ModelKind;

    /// Unnormalized jump on a diagonal: `p'_n = w c_{n+1}^2 p_{n+1}` with
    /// `w = gamma` for SD and `1` for EP.
    pub fn jump(p: &[f64], gamma: f64, model: ModelKind) -> Vec<f64> {
        let w = match model {
            ModelKind::Sd => gamma,
            ModelKind::Ep => 1.0,
        };
        (0..p.len())
            .map(|n| {
                if n + 1 < p.len() {
                    w * model.rate_diag(n + 1) * p[n + 1]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Unnormalized no-count evolution of a diagonal.
    pub fn no_count(p: &[f64], tau: f64, gamma: f64, model: ModelKind) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(n, v)| v * (-gamma * model.rate_diag(n) * tau).exp())
            .collect()
    }

    /// Normalize in place; returns the previous total.
    pub fn normalize(p: &mut [f64]) -> f64 {
        let s = crate::specfun::sum_compensated(p.iter().copied());
        if s > 0.0 {
            p.iter_mut().for_each(|v| *v /= s);
        }
        s
    }
}
