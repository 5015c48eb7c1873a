//! Initial-state families, their photon-number distributions and
//! truncated density matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::specfun::{self, sum_compensated};

/// Declarative description of an initial field state.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSpec {
    /// Number state `|m>`.
    Fock { m: usize },
    /// Coherent state with `|alpha|^2 = nbar`, amplitude taken real and nonnegative.
    Coherent { nbar: f64 },
    /// Thermal (geometric) distribution with mean `nbar`.
    Thermal { nbar: f64 },
    /// Negative binomial distribution with shape `mu` and mean `nbar`.
    NegBinomial { mu: f64, nbar: f64 },
    /// Binomial distribution over `0..=m_max` with mean `nbar`.
    Binomial { m_max: usize, nbar: f64 },
    /// Coherent phase state `sqrt(1-|z|^2) sum z^n |n>`.
    CoherentPhase { z: Complex64 },
    /// Arbitrary diagonal state given by its photon-number probabilities.
    Custom { p: Vec<f64> },
}

impl StateSpec {
    pub fn family(&self) -> &'static str {
        match self {
            StateSpec::Fock { .. } => "fock",
            StateSpec::Coherent { .. } => "coherent",
            StateSpec::Thermal { .. } => "thermal",
            StateSpec::NegBinomial { .. } => "negbinomial",
            StateSpec::Binomial { .. } => "binomial",
            StateSpec::CoherentPhase { .. } => "phase",
            StateSpec::Custom { .. } => "custom",
        }
    }

    /// True when the family's density matrix is diagonal in the Fock basis.
    pub fn is_diagonal(&self) -> bool {
        match self {
            StateSpec::Coherent { nbar } => *nbar == 0.0,
            StateSpec::CoherentPhase { z } => z.norm() == 0.0,
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )))
            }
        };
        match self {
            StateSpec::Fock { .. } => Ok(()),
            StateSpec::Coherent { nbar } | StateSpec::Thermal { nbar } => nonneg("nbar", *nbar),
            StateSpec::NegBinomial { mu, nbar } => {
                nonneg("nbar", *nbar)?;
                if !(mu.is_finite() && *mu > 0.0) {
                    return Err(Error::invalid(format!("mu must be > 0, got {mu}")));
                }
                Ok(())
            }
            StateSpec::Binomial { m_max, nbar } => {
                nonneg("nbar", *nbar)?;
                if *m_max == 0 {
                    return Err(Error::invalid("binomial M must be >= 1"));
                }
                if *nbar > *m_max as f64 {
                    return Err(Error::invalid(format!(
                        "binomial nbar = {nbar} exceeds M = {m_max}"
                    )));
                }
                Ok(())
            }
            StateSpec::CoherentPhase { z } => {
                if !(z.norm() < 1.0) {
                    return Err(Error::invalid(format!(
                        "phase state needs |z| < 1, got {}",
                        z.norm()
                    )));
                }
                Ok(())
            }
            StateSpec::Custom { p } => {
                if p.is_empty() {
                    return Err(Error::invalid("custom distribution is empty"));
                }
                if let Some((i, v)) = p
                    .iter()
                    .enumerate()
                    .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
                {
                    return Err(Error::invalid(format!(
                        "custom p[{i}] = {v} is negative or not finite"
                    )));
                }
                let s = sum_compensated(p.iter().copied());
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "custom probabilities sum to {s}, not 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Nominal mean photon number of the family.
    pub fn nominal_mean(&self) -> f64 {
        match self {
            StateSpec::Fock { m } => *m as f64,
            StateSpec::Coherent { nbar }
            | StateSpec::Thermal { nbar }
            | StateSpec::NegBinomial { nbar, .. }
            | StateSpec::Binomial { nbar, .. } => *nbar,
            StateSpec::CoherentPhase { z } => {
                let r2 = z.norm_sqr();
                r2 / (1.0 - r2)
            }
            StateSpec::Custom { p } => p.iter().enumerate().map(|(n, v)| n as f64 * v).sum(),
        }
    }
}

/// Photon-number distribution `p_n`, `n = 0..N`, plus the probability mass
/// dropped beyond `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonStatistics {
    p: Vec<f64>,
    tail_mass: f64,
}

impl PhotonStatistics {
    /// Wrap a probability vector. Entries must be nonnegative and
    /// `sum(p) + tail_mass` must equal one within `1e-12`.
    pub fn new(p: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("photon statistics need at least one entry"));
        }
        if let Some((i, v)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::invalid(format!(
                "p[{i}] = {v} is negative or not finite"
            )));
        }
        if !(tail_mass >= 0.0) {
            return Err(Error::invalid(format!("tail mass {tail_mass} < 0")));
        }
        let s = sum_compensated(p.iter().copied()) + tail_mass;
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {s}, not 1")));
        }
        Ok(PhotonStatistics { p, tail_mass })
    }

    /// Vacuum distribution.
    pub fn vacuum() -> Self {
        PhotonStatistics {
            p: vec![1.0],
            tail_mass: 0.0,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    /// `p_n`, zero beyond the stored support.
    pub fn prob(&self, n: usize) -> f64 {
        self.p.get(n).copied().unwrap_or(0.0)
    }

    pub fn trunc_dim(&self) -> usize {
        self.p.len()
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Keep the first `dim` entries, moving the rest into the tail.
    pub fn truncated(&self, dim: usize) -> Self {
        let dim = dim.max(1);
        if dim >= self.p.len() {
            return self.clone();
        }
        let dropped = sum_compensated(self.p[dim..].iter().copied());
        PhotonStatistics {
            p: self.p[..dim].to_vec(),
            tail_mass: self.tail_mass + dropped,
        }
    }

    /// Same support renormalized to unit mass (tail discarded).
    pub fn renormalized(&self) -> Self {
        let s = sum_compensated(self.p.iter().copied());
        PhotonStatistics {
            p: self.p.iter().map(|v| v / s).collect(),
            tail_mass: 0.0,
        }
    }

    /// Zero-padded copy with at least `dim` entries.
    pub fn padded(&self, dim: usize) -> Self {
        let mut p = self.p.clone();
        if p.len() < dim {
            p.resize(dim, 0.0);
        }
        PhotonStatistics {
            p,
            tail_mass: self.tail_mass,
        }
    }

    pub fn mean(&self) -> f64 {
        sum_compensated(self.p.iter().enumerate().map(|(n, v)| n as f64 * v))
    }
}

/// Build the photon-number distribution of a state family.
///
/// Infinite-support families are cut at the smallest `N` whose tail mass is
/// below `tail_tol`; Fock and binomial distributions are exact.
pub fn make_distribution(spec: &StateSpec, tail_tol: f64) -> Result<PhotonStatistics> {
    spec.validate()?;
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(Error::invalid(format!(
            "tail_tol must be in (0, 1), got {tail_tol}"
        )));
    }
    match spec {
        StateSpec::Fock { m } => {
            let mut p = vec![0.0; m + 1];
            p[*m] = 1.0;
            PhotonStatistics::new(p, 0.0)
        }
        StateSpec::Coherent { nbar } => {
            if *nbar == 0.0 {
                return Ok(PhotonStatistics::vacuum());
            }
            let mut p = Vec::new();
            let mut n = 0;
            loop {
                p.push(specfun::poisson_weight(n, *nbar));
                let tail = specfun::phi_k(n, *nbar);
                if tail < tail_tol {
                    return PhotonStatistics::new(p, tail);
                }
                n += 1;
            }
        }
        StateSpec::Thermal { nbar } => geometric(*nbar / (1.0 + nbar), tail_tol),
        StateSpec::CoherentPhase { z } => geometric(z.norm_sqr(), tail_tol),
        StateSpec::NegBinomial { mu, nbar } => {
            if *nbar == 0.0 {
                return Ok(PhotonStatistics::vacuum());
            }
            // p_0 = (mu/(nbar+mu))^mu, p_{n+1}/p_n = (mu+n)/(n+1) * nbar/(nbar+mu)
            let ratio = nbar / (nbar + mu);
            let mut cur = (mu * (-ratio).ln_1p()).exp();
            let mut p = Vec::new();
            let mut acc = specfun::CompensatedSum::new();
            let mut n = 0usize;
            loop {
                p.push(cur);
                acc.add(cur);
                let tail = 1.0 - acc.value();
                // past the mode the remaining terms decay at least geometrically
                let past_mode = (mu + n as f64) / (n as f64 + 1.0) * ratio < 1.0;
                if past_mode && tail < tail_tol {
                    return PhotonStatistics::new(p, tail.max(0.0));
                }
                cur *= (mu + n as f64) / (n as f64 + 1.0) * ratio;
                n += 1;
            }
        }
        StateSpec::Binomial { m_max, nbar } => {
            let m = *m_max;
            let q = nbar / m as f64;
            let p = (0..=m).map(|n| binomial_pmf(m, n, q)).collect::<Vec<_>>();
            let s = sum_compensated(p.iter().copied());
            PhotonStatistics::new(p.into_iter().map(|v| v / s).collect(), 0.0)
        }
        StateSpec::Custom { p } => PhotonStatistics::new(p.clone(), 0.0),
    }
}

fn geometric(ratio: f64, tail_tol: f64) -> Result<PhotonStatistics> {
    if ratio == 0.0 {
        return Ok(PhotonStatistics::vacuum());
    }
    // p_n = (1 - r) r^n, tail beyond N = r^{N+1}
    let n_max = (tail_tol.ln() / ratio.ln()).ceil().max(1.0) as usize;
    let mut n = n_max.saturating_sub(1);
    while ratio.powi(n as i32 + 1) >= tail_tol {
        n += 1;
    }
    while n > 0 && ratio.powi(n as i32) < tail_tol {
        n -= 1;
    }
    let p = (0..=n)
        .map(|k| (1.0 - ratio) * ratio.powi(k as i32))
        .collect();
    PhotonStatistics::new(p, ratio.powi(n as i32 + 1))
}

pub(crate) fn binomial_pmf(m: usize, n: usize, q: f64) -> f64 {
    if n > m {
        return 0.0;
    }
    if q == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if q == 1.0 {
        return if n == m { 1.0 } else { 0.0 };
    }
    (specfun::ln_choose(m, n) + n as f64 * q.ln() + (m - n) as f64 * (-q).ln_1p()).exp()
}

/// Mean photon number and Mandel's `q = (var - nbar) / nbar` (zero for vacuum).
pub fn mean_and_q(p: &PhotonStatistics) -> (f64, f64) {
    let nbar = p.mean();
    if nbar == 0.0 {
        return (0.0, 0.0);
    }
    let second = sum_compensated(
        p.probs()
            .iter()
            .enumerate()
            .map(|(n, v)| (n * n) as f64 * v),
    );
    let var = second - nbar * nbar;
    (nbar, (var - nbar) / nbar)
}

/// `(A_k, Z_{k+1})`: probability of at most `k` photons and its complement.
pub fn partial_sums(p: &PhotonStatistics, k: usize) -> (f64, f64) {
    let upto = (k + 1).min(p.trunc_dim());
    let a = sum_compensated(p.probs()[..upto].iter().copied());
    (a, 1.0 - a)
}

/// Truncated Fock-basis density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
    tail_mass: f64,
}

impl DensityMatrix {
    /// Wrap a matrix without validation. Used for the unnormalized outputs of
    /// the jump and no-count maps.
    pub fn from_matrix(entries: DMatrix<Complex64>, tail_mass: f64) -> Self {
        assert!(entries.is_square(), "density matrix must be square");
        DensityMatrix { entries, tail_mass }
    }

    /// Wrap a matrix and check Hermiticity, unit trace and positivity.
    pub fn from_matrix_checked(entries: DMatrix<Complex64>, tail_mass: f64) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::invalid("density matrix must be square"));
        }
        let rho = DensityMatrix { entries, tail_mass };
        rho.validate()?;
        Ok(rho)
    }

    pub fn diagonal_from(p: &PhotonStatistics) -> Self {
        let d = DVector::from_iterator(
            p.trunc_dim(),
            p.probs().iter().map(|v| Complex64::new(*v, 0.0)),
        );
        DensityMatrix {
            entries: DMatrix::from_diagonal(&d),
            tail_mass: p.tail_mass(),
        }
    }

    pub fn pure(amps: &DVector<Complex64>, tail_mass: f64) -> Self {
        DensityMatrix {
            entries: amps * amps.adjoint(),
            tail_mass,
        }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn trace(&self) -> f64 {
        sum_compensated((0..self.dim()).map(|i| self.entries[(i, i)].re))
    }

    /// Real diagonal `rho_nn`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries[(i, i)].re).collect()
    }

    /// Diagonal as photon statistics; the state must be normalized.
    pub fn photon_statistics(&self) -> Result<PhotonStatistics> {
        let d = self.diagonal().into_iter().map(|v| v.max(0.0)).collect();
        PhotonStatistics::new(d, self.tail_mass)
    }

    pub fn mean_photons(&self) -> f64 {
        sum_compensated((0..self.dim()).map(|i| i as f64 * self.entries[(i, i)].re))
    }

    /// Mass on the last retained Fock level.
    pub fn edge_mass(&self) -> f64 {
        let n = self.dim() - 1;
        self.entries[(n, n)].re
    }

    /// Divide by the total mass, trace plus tail.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace() + self.tail_mass;
        if !(self.trace() > 0.0) {
            return Err(Error::ZeroProbability);
        }
        Ok(DensityMatrix {
            entries: self.entries.map(|c| c / tr),
            tail_mass: self.tail_mass / tr,
        })
    }

    /// Zero-padded (or cropped) copy of dimension `dim`. Cropped diagonal
    /// mass moves into the tail.
    pub fn with_dim(&self, dim: usize) -> Self {
        let n = self.dim().min(dim);
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (n, n))
            .copy_from(&self.entries.view((0, 0), (n, n)));
        let dropped = sum_compensated((n..self.dim()).map(|i| self.entries[(i, i)].re));
        DensityMatrix {
            entries: m,
            tail_mass: self.tail_mass + dropped,
        }
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.entries - self.entries.adjoint())
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.entries + self.entries.adjoint()).map(|c| c * 0.5);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-12 {
            return Err(Error::invalid(format!(
                "density matrix not Hermitian (error {herm:.3e})"
            )));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("density matrix trace {tr} != 1")));
        }
        let min_ev = self.eigenvalues()[0];
        if min_ev < -1e-10 {
            return Err(Error::invalid(format!(
                "density matrix eigenvalue {min_ev:.3e} < 0"
            )));
        }
        Ok(())
    }
}

/// Build the truncated density matrix of a state family.
///
/// Fock, coherent and coherent-phase states give rank-one matrices; the
/// remaining families are diagonal.
pub fn make_density_matrix(spec: &StateSpec, tail_tol: f64) -> Result<DensityMatrix> {
    let dist = make_distribution(spec, tail_tol)?;
    match spec {
        StateSpec::Coherent { .. } => {
            let amps = DVector::from_iterator(
                dist.trunc_dim(),
                dist.probs().iter().map(|p| Complex64::new(p.sqrt(), 0.0)),
            );
            Ok(DensityMatrix::pure(&amps, dist.tail_mass()))
        }
        StateSpec::CoherentPhase { z } => {
            let norm = (1.0 - z.norm_sqr()).sqrt();
            let mut amps = DVector::zeros(dist.trunc_dim());
            let mut zn = Complex64::new(norm, 0.0);
            for a in amps.iter_mut() {
                *a = zn;
                zn *= z;
            }
            Ok(DensityMatrix::pure(&amps, dist.tail_mass()))
        }
        _ => Ok(DensityMatrix::diagonal_from(&dist)),
    }
}
