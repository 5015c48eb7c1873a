//! Pre-selection dynamics: the field state when counting runs but the
//! record is discarded.
//!
//! Everything here uses the dimensionless time `tau = gamma t`. The EP
//! diagonal obeys `dp_n/dtau = p_{n+1} - (1 - delta_{n0}) p_n`, whose solution
//! is `p_n(tau) = sum_l w_l(tau) p_{n+l}(0)` for `n >= 1` with Poisson weights
//! `w_l`. Family closed forms of that series are provided alongside a
//! fourth-order Runge-Kutta integrator for the full Lindblad equation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fockops::{ModelKind, OperatorSet};
use crate::specfun::{
    bessel_i, kummer_m, laguerre_assoc, ln_choose, log_factorial, poisson_upper, poisson_weight,
    poisson_weights, sum_compensated, CompensatedSum, SeriesControl,
};
use crate::states::{make_distribution, DensityMatrix, PhotonStatistics, StateSpec};
use crate::DEFAULT_TAIL_TOL;

/// Tail tolerance for photon-number-weighted series, whose truncation error
/// grows like `N * tail`.
pub const MEAN_TAIL_TOL: f64 = 1e-16;

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "tau must be finite and >= 0, got {tau}"
        )))
    }
}

/// Values of one quantity on a grid of dimensionless times.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory1D {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    pub state: StateSpec,
    pub model: ModelKind,
    pub quantity: String,
}

impl Trajectory1D {
    pub fn new(
        taus: Vec<f64>,
        values: Vec<f64>,
        state: StateSpec,
        model: ModelKind,
        quantity: impl Into<String>,
    ) -> Result<Self> {
        if taus.len() != values.len() {
            return Err(Error::invalid("taus and values differ in length"));
        }
        if taus.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("tau grid must be strictly increasing"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "value at tau = {} is not finite",
                taus[i]
            )));
        }
        Ok(Trajectory1D {
            taus,
            values,
            state,
            model,
            quantity: quantity.into(),
        })
    }

    /// Evaluate `f` on every grid point.
    pub fn tabulate<F>(
        taus: Vec<f64>,
        state: StateSpec,
        model: ModelKind,
        quantity: &str,
        mut f: F,
    ) -> Result<Self>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let values = taus.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
        Self::new(taus, values, state, model, quantity)
    }
}

/// `p_0(tau) = sum_k p_k(0) Phi_{k-1}(tau)` with `Phi_{-1} = 1`.
pub fn preselect_p0(p0: &PhotonStatistics, tau: f64) -> f64 {
    sum_compensated(
        p0.probs()
            .iter()
            .enumerate()
            .map(|(k, v)| v * poisson_upper(k, tau)),
    )
}

/// EP pre-selection probability of `n` photons at `tau`.
pub fn preselect_pn(p0: &PhotonStatistics, n: usize, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if n == 0 {
        return Ok(preselect_p0(p0, tau));
    }
    let probs = p0.probs();
    if n >= probs.len() {
        return Ok(0.0);
    }
    let w = poisson_weights(probs.len() - n, tau);
    Ok(sum_compensated(
        w.iter().zip(&probs[n..]).map(|(a, b)| a * b),
    ))
}

/// Full pre-selection photon statistics of either model.
///
/// EP uses the Poisson-shift series; SD thins each photon independently
/// with survival probability `e^{-tau}`. The tail mass is carried over.
pub fn preselect_distribution(
    p0: &PhotonStatistics,
    tau: f64,
    model: ModelKind,
) -> Result<PhotonStatistics> {
    check_tau(tau)?;
    let dim = p0.trunc_dim();
    let mut out = match model {
        ModelKind::Ep => (0..dim)
            .map(|n| preselect_pn(p0, n, tau))
            .collect::<Result<Vec<_>>>()?,
        ModelKind::Sd => {
            let q = (-tau).exp();
            let probs = p0.probs();
            (0..dim)
                .map(|n| {
                    sum_compensated(
                        probs
                            .iter()
                            .enumerate()
                            .skip(n)
                            .map(|(m, v)| v * crate::states::binomial_pmf(m, n, q)),
                    )
                })
                .collect()
        }
    };
    // absorb rounding so the result passes the normalization check
    let s = sum_compensated(out.iter().copied()) + p0.tail_mass();
    let drift = s - 1.0;
    if drift.abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "pre-selection lost {drift:e} of probability"
        )));
    }
    out[0] = (out[0] - drift).max(0.0);
    PhotonStatistics::new(out, p0.tail_mass())
}

/// Mean photon number under pre-selection.
///
/// SD: `nbar_0 e^{-tau}`. EP: closed forms for Fock, thermal and coherent
/// states, the double series `sum_k p_k sum_{n<=k} n w_{k-n}(tau)` otherwise.
pub fn mean_photons(spec: &StateSpec, tau: f64, model: ModelKind) -> Result<f64> {
    spec.validate()?;
    check_tau(tau)?;
    if model == ModelKind::Sd {
        return Ok(spec.nominal_mean() * (-tau).exp());
    }
    match spec {
        StateSpec::Fock { m } => Ok(mean_fock(*m, tau)),
        StateSpec::Thermal { nbar } => Ok(nbar * (-tau / (1.0 + nbar)).exp()),
        StateSpec::Coherent { nbar } => mean_poisson(*nbar, tau),
        other => Ok(mean_series(&make_distribution(other, MEAN_TAIL_TOL)?, tau)),
    }
}

/// `e^{-tau} sum_{n=1}^{m} n tau^{m-n}/(m-n)!`.
fn mean_fock(m: usize, tau: f64) -> f64 {
    sum_compensated((1..=m).map(|n| n as f64 * poisson_weight(m - n, tau)))
}

/// EP mean from the double series over a truncated distribution.
pub fn mean_series(p0: &PhotonStatistics, tau: f64) -> f64 {
    let w = poisson_weights(p0.trunc_dim(), tau);
    let mut acc = CompensatedSum::new();
    for (k, pk) in p0.probs().iter().enumerate().skip(1) {
        if *pk == 0.0 {
            continue;
        }
        let inner = sum_compensated((1..=k).map(|n| n as f64 * w[k - n]));
        acc.add(pk * inner);
    }
    acc.value()
}

/// `sum_n n p_n^{Pois}(tau)`.
fn mean_poisson(nbar0: f64, tau: f64) -> Result<f64> {
    if nbar0 == 0.0 {
        return Ok(0.0);
    }
    if tau == 0.0 {
        return Ok(nbar0);
    }
    let mut acc = CompensatedSum::new();
    let peak = nbar0.max(1.0);
    for n in 1..100_000usize {
        let term = n as f64 * pn_poisson(nbar0, n, tau)?;
        acc.add(term);
        if n as f64 > peak && term < 1e-17 * acc.value() {
            return Ok(acc.value());
        }
    }
    Err(Error::NonConvergent {
        what: "Poisson mean series",
        terms: 100_000,
    })
}

/// Mean photon number under EP minus under SD pre-selection:
/// `sum_{l>=1} w_l(tau) sum_{n>=1} n p_{n+l}(0)`.
pub fn mean_gap(spec: &StateSpec, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let p0 = make_distribution(spec, MEAN_TAIL_TOL)?;
    Ok(mean_gap_series(&p0, tau))
}

pub fn mean_gap_series(p0: &PhotonStatistics, tau: f64) -> f64 {
    let probs = p0.probs();
    let dim = probs.len();
    let w = poisson_weights(dim, tau);
    let mut acc = CompensatedSum::new();
    for l in 1..dim {
        let inner = sum_compensated((1..dim - l).map(|n| n as f64 * probs[n + l]));
        acc.add(w[l] * inner);
    }
    acc.value()
}

fn ln_negbin_p(mu: f64, nbar0: f64, n: usize) -> f64 {
    if nbar0 == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    ln_gamma(mu + nf) - ln_gamma(mu) - log_factorial(n)
        + mu * (mu / (nbar0 + mu)).ln()
        + nf * (nbar0 / (nbar0 + mu)).ln()
}

/// The three exact expressions of the negative binomial pre-selection
/// probability for `n >= 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NegBinomialForms {
    /// `p_n(0) e^{-tau} M(mu+n; n+1; x)`; `None` when it overflows.
    pub kummer: Option<f64>,
    /// `p_n(0) e^{-mu tau/(nbar0+mu)} M(1-mu; n+1; -x)`; `None` when the
    /// series does not converge.
    pub transformed: Option<f64>,
    /// Associated-Laguerre form, integer `mu` only.
    pub laguerre: Option<f64>,
}

/// Evaluate every form with `x = nbar0 tau/(nbar0+mu)`.
pub fn negbinomial_forms(mu: f64, nbar0: f64, n: usize, tau: f64) -> Result<NegBinomialForms> {
    StateSpec::NegBinomial { mu, nbar: nbar0 }.validate()?;
    check_tau(tau)?;
    if n == 0 {
        return Err(Error::invalid("closed forms need n >= 1"));
    }
    if nbar0 == 0.0 {
        let laguerre = (mu.fract() == 0.0).then_some(0.0);
        return Ok(NegBinomialForms {
            kummer: Some(0.0),
            transformed: Some(0.0),
            laguerre,
        });
    }
    let nf = n as f64;
    let x = nbar0 * tau / (nbar0 + mu);
    let ln_p = ln_negbin_p(mu, nbar0, n);
    let kummer = kummer_m(mu + nf, nf + 1.0, x)
        .ok()
        .map(|m| (ln_p - tau).exp() * m)
        .filter(|v| v.is_finite());
    let transformed = kummer_m(1.0 - mu, nf + 1.0, -x)
        .ok()
        .map(|m| (ln_p - mu * tau / (nbar0 + mu)).exp() * m);
    let laguerre = (mu.fract() == 0.0 && mu <= i32::MAX as f64).then(|| {
        let pref = mu * (mu / (nbar0 + mu)).ln() + nf * (nbar0 / (nbar0 + mu)).ln()
            - mu * tau / (nbar0 + mu);
        pref.exp() * laguerre_assoc(mu as usize - 1, n as i32, -x)
    });
    Ok(NegBinomialForms {
        kummer,
        transformed,
        laguerre,
    })
}

/// EP pre-selection probability for an initial negative binomial
/// distribution with shape `mu` and mean `nbar0`.
///
/// `n >= 1` uses the direct Kummer form, or the transformed one when the
/// first overflows. For integer `mu` the Laguerre form must agree within
/// `1e-10`. `n = 0` uses the complement.
pub fn pn_negbinomial(mu: f64, nbar0: f64, n: usize, tau: f64) -> Result<f64> {
    let spec = StateSpec::NegBinomial { mu, nbar: nbar0 };
    spec.validate()?;
    check_tau(tau)?;
    if n == 0 {
        return Ok(preselect_p0(
            &make_distribution(&spec, DEFAULT_TAIL_TOL)?,
            tau,
        ));
    }
    let forms = negbinomial_forms(mu, nbar0, n, tau)?;
    let value = forms
        .kummer
        .or(forms.transformed)
        .ok_or(Error::NonConvergent {
            what: "negative binomial Kummer series",
            terms: SeriesControl::default().max_terms,
        })?;
    if let Some(lag) = forms.laguerre {
        if (lag - value).abs() > 1e-10 {
            return Err(Error::Inconsistent {
                what: "negative binomial Kummer and Laguerre forms",
                a: value,
                b: lag,
            });
        }
    }
    Ok(value)
}

/// EP pre-selection probability for an initial binomial distribution over
/// `0..=m_max` with mean `nbar0`:
/// `q^n (1-q)^{M-n} e^{-tau} L_{M-n}^n(nbar0 tau/(nbar0 - M))`, `q = nbar0/M`.
///
/// `nbar0 = M` is the Fock state `|M>`; `n = 0` uses the complement.
pub fn pn_binomial(m_max: usize, nbar0: f64, n: usize, tau: f64) -> Result<f64> {
    let spec = StateSpec::Binomial { m_max, nbar: nbar0 };
    spec.validate()?;
    check_tau(tau)?;
    if n > m_max {
        return Err(Error::invalid(format!("n = {n} exceeds M = {m_max}")));
    }
    if n == 0 {
        return Ok(preselect_p0(
            &make_distribution(&spec, DEFAULT_TAIL_TOL)?,
            tau,
        ));
    }
    if nbar0 == 0.0 {
        return Ok(0.0);
    }
    let mf = m_max as f64;
    if nbar0 == mf {
        return Ok(poisson_weight(m_max - n, tau));
    }
    let q = nbar0 / mf;
    let ln_pref = n as f64 * q.ln() + (m_max - n) as f64 * (-q).ln_1p() - tau;
    Ok(ln_pref.exp() * laguerre_assoc(m_max - n, n as i32, nbar0 * tau / (nbar0 - mf)))
}

/// EP pre-selection probability for an initial Poisson distribution:
/// `e^{-nbar0-tau} (nbar0/tau)^{n/2} I_n(2 sqrt(nbar0 tau))`.
///
/// `tau = 0` returns `p_n(0)`; `n = 0` uses the complement. When the Bessel
/// function overflows or fails to converge the same series is summed in log
/// space.
pub fn pn_poisson(nbar0: f64, n: usize, tau: f64) -> Result<f64> {
    let spec = StateSpec::Coherent { nbar: nbar0 };
    spec.validate()?;
    check_tau(tau)?;
    if tau == 0.0 {
        return Ok(poisson_weight(n, nbar0));
    }
    if n == 0 {
        return Ok(preselect_p0(
            &make_distribution(&spec, DEFAULT_TAIL_TOL)?,
            tau,
        ));
    }
    if nbar0 == 0.0 {
        return Ok(0.0);
    }
    let z = 2.0 * (nbar0 * tau).sqrt();
    let ln_pref = -nbar0 - tau + 0.5 * n as f64 * (nbar0 / tau).ln();
    let direct = bessel_i(n, z)
        .ok()
        .map(|i_n| ln_pref.exp() * i_n)
        .filter(|v| v.is_finite());
    if let Some(v) = direct {
        return Ok(v);
    }
    // sum_j e^{-nbar0-tau} nbar0^{n+j} tau^j / (j! (n+j)!)
    let (ln_a, ln_t) = (nbar0.ln(), tau.ln());
    let mut acc = CompensatedSum::new();
    let mut best = f64::NEG_INFINITY;
    for j in 0..1_000_000usize {
        let e = -nbar0 - tau + (n + j) as f64 * ln_a + j as f64 * ln_t
            - log_factorial(j)
            - log_factorial(n + j);
        best = best.max(e);
        acc.add(e.exp());
        if e < best - 40.0 {
            return Ok(acc.value());
        }
    }
    Err(Error::NonConvergent {
        what: "Poisson pre-selection series",
        terms: 1_000_000,
    })
}

/// Large-time approximation with its validity flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Asymptotic {
    pub value: f64,
    /// `tau > nbar0 + 1/nbar0`.
    pub valid: bool,
}

fn asymptotic_valid(nbar0: f64, tau: f64) -> bool {
    nbar0 > 0.0 && tau > nbar0 + 1.0 / nbar0
}

/// `(nbar0/tau)^{n/2} (4 pi sqrt(nbar0 tau))^{-1/2} exp[-(sqrt nbar0 - sqrt tau)^2]`.
pub fn pn_poisson_asymptotic(nbar0: f64, n: usize, tau: f64) -> Result<Asymptotic> {
    check_tau(tau)?;
    if !(nbar0 > 0.0) {
        return Err(Error::invalid("asymptotic form needs nbar0 > 0"));
    }
    let d = nbar0.sqrt() - tau.sqrt();
    let value = (0.5 * n as f64 * (nbar0 / tau).ln()
        - 0.5 * (4.0 * std::f64::consts::PI * (nbar0 * tau).sqrt()).ln()
        - d * d)
        .exp();
    Ok(Asymptotic {
        value,
        valid: asymptotic_valid(nbar0, tau),
    })
}

/// `nbar0^{1/4} (4 pi)^{-1/2} tau^{-3/4} exp[-(sqrt nbar0 - sqrt tau)^2]`.
pub fn mean_poisson_asymptotic(nbar0: f64, tau: f64) -> Result<Asymptotic> {
    check_tau(tau)?;
    if !(nbar0 > 0.0) {
        return Err(Error::invalid("asymptotic form needs nbar0 > 0"));
    }
    let d = nbar0.sqrt() - tau.sqrt();
    let value =
        nbar0.powf(0.25) / (4.0 * std::f64::consts::PI).sqrt() * tau.powf(-0.75) * (-d * d).exp();
    Ok(Asymptotic {
        value,
        valid: asymptotic_valid(nbar0, tau),
    })
}

fn check_z(z: f64) -> Result<()> {
    if (0.0..=1.0).contains(&z) {
        Ok(())
    } else {
        Err(Error::invalid(format!("z must lie in [0, 1], got {z}")))
    }
}

/// Reduced generating function `sum_{n>=1} z^n p_n(tau)` of the EP
/// pre-selection diagonal.
pub fn generating_function(p0: &PhotonStatistics, z: f64, tau: f64) -> Result<f64> {
    check_z(z)?;
    check_tau(tau)?;
    let w = poisson_weights(p0.trunc_dim(), tau);
    let mut acc = CompensatedSum::new();
    for (k, pk) in p0.probs().iter().enumerate().skip(1) {
        acc.add(pk * sum_compensated((1..=k).map(|n| z.powi(n as i32) * w[k - n])));
    }
    Ok(acc.value())
}

/// `dG/dz`; at `z = 1` this is the EP mean photon number.
pub fn generating_function_dz(p0: &PhotonStatistics, z: f64, tau: f64) -> Result<f64> {
    check_z(z)?;
    check_tau(tau)?;
    let w = poisson_weights(p0.trunc_dim(), tau);
    let mut acc = CompensatedSum::new();
    for (k, pk) in p0.probs().iter().enumerate().skip(1) {
        acc.add(pk * sum_compensated((1..=k).map(|n| n as f64 * z.powi(n as i32 - 1) * w[k - n])));
    }
    Ok(acc.value())
}

/// Settings of the Lindblad integrator.
#[derive(Clone, Copy, Debug)]
pub struct IntegratorControl {
    /// Largest step tried first; further capped by `1 / max rate`.
    pub h_start: f64,
    pub h_min: f64,
    /// Halving must change every reported `p_n` by less than this.
    pub tol: f64,
}

impl Default for IntegratorControl {
    fn default() -> Self {
        IntegratorControl {
            h_start: 0.05,
            h_min: 1e-5,
            tol: 1e-8,
        }
    }
}

/// Right-hand side `L rho L+ - {L+L, rho}/2 - i (omega/gamma) [n, rho]`
/// with `L = a` (SD) or `E-` (EP), in units of `tau`.
struct Generator {
    dim: usize,
    ladder: Vec<f64>,
    rate: Vec<f64>,
    omega: f64,
}

impl Generator {
    fn new(dim: usize, ops: &OperatorSet, model: ModelKind) -> Self {
        Generator {
            dim,
            ladder: (0..dim).map(|n| model.ladder(n)).collect(),
            rate: (0..dim).map(|n| model.rate_diag(n)).collect(),
            omega: ops.omega / ops.gamma,
        }
    }

    fn apply(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| {
            let gain = if i + 1 < d && j + 1 < d {
                rho[(i + 1, j + 1)] * (self.ladder[i + 1] * self.ladder[j + 1])
            } else {
                Complex64::new(0.0, 0.0)
            };
            let loss = rho[(i, j)]
                * Complex64::new(
                    -0.5 * (self.rate[i] + self.rate[j]),
                    -self.omega * (i as f64 - j as f64),
                );
            gain + loss
        })
    }

    fn max_rate(&self) -> f64 {
        self.rate
            .iter()
            .copied()
            .fold(0.0, f64::max)
            .max(self.omega.abs())
    }

    fn rk4(&self, rho: &DMatrix<Complex64>, h: f64) -> DMatrix<Complex64> {
        let k1 = self.apply(rho);
        let k2 = self.apply(&(rho + &k1 * Complex64::from(0.5 * h)));
        let k3 = self.apply(&(rho + &k2 * Complex64::from(0.5 * h)));
        let k4 = self.apply(&(rho + &k3 * Complex64::from(h)));
        rho + (k1 + k2 * Complex64::from(2.0) + k3 * Complex64::from(2.0) + k4)
            * Complex64::from(h / 6.0)
    }

    fn run(&self, rho0: &DMatrix<Complex64>, grid: &[f64], h: f64) -> Vec<DMatrix<Complex64>> {
        let mut out = Vec::with_capacity(grid.len());
        let mut rho = rho0.clone();
        let mut prev = grid[0];
        for &tau in grid {
            let span = tau - prev;
            if span > 0.0 {
                let steps = (span / h).ceil().max(1.0) as usize;
                let step = span / steps as f64;
                for _ in 0..steps {
                    rho = self.rk4(&rho, step);
                }
            }
            out.push(rho.clone());
            prev = tau;
        }
        out
    }
}

/// Integrate the pre-selection master equation of `model` on `tau_grid`
/// with classical RK4, halving the step until the reported diagonals move by
/// less than `ctl.tol`.
pub fn lindblad_integrate(
    rho0: &DensityMatrix,
    tau_grid: &[f64],
    ops: &OperatorSet,
    model: ModelKind,
) -> Result<Vec<DensityMatrix>> {
    lindblad_integrate_with(rho0, tau_grid, ops, model, &IntegratorControl::default())
}

pub fn lindblad_integrate_with(
    rho0: &DensityMatrix,
    tau_grid: &[f64],
    ops: &OperatorSet,
    model: ModelKind,
    ctl: &IntegratorControl,
) -> Result<Vec<DensityMatrix>> {
    if rho0.dim() != ops.dim {
        return Err(Error::invalid("state and operator dimensions differ"));
    }
    if tau_grid.first() != Some(&0.0) {
        return Err(Error::invalid("tau grid must start at 0"));
    }
    if tau_grid.windows(2).any(|w| !(w[1] > w[0])) || !tau_grid.iter().all(|t| t.is_finite()) {
        return Err(Error::invalid(
            "tau grid must be finite and strictly increasing",
        ));
    }
    let gen = Generator::new(rho0.dim(), ops, model);
    let wrap = |ms: Vec<DMatrix<Complex64>>| {
        ms.into_iter()
            .map(|m| DensityMatrix::from_matrix(m, rho0.tail_mass()))
            .collect()
    };
    if tau_grid.len() == 1 {
        return Ok(vec![rho0.clone()]);
    }
    let mut h = ctl.h_start.min(1.0 / gen.max_rate().max(1e-300));
    let mut coarse = gen.run(rho0.matrix(), tau_grid, h);
    loop {
        let fine = gen.run(rho0.matrix(), tau_grid, 0.5 * h);
        let change = coarse
            .iter()
            .zip(&fine)
            .flat_map(|(a, b)| (0..a.nrows()).map(move |i| (a[(i, i)].re - b[(i, i)].re).abs()))
            .fold(0.0, f64::max);
        if change < ctl.tol {
            return Ok(wrap(fine));
        }
        h *= 0.5;
        if h < ctl.h_min {
            return Err(Error::StepTooLarge { h });
        }
        coarse = fine;
    }
}

/// SD pre-selection `p_n` by binomial thinning, `sum_m p_m C(m,n) e^{-n tau} (1-e^{-tau})^{m-n}`.
pub fn preselect_pn_sd(p0: &PhotonStatistics, n: usize, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let q = (-tau).exp();
    Ok(sum_compensated(p0.probs().iter().enumerate().skip(n).map(
        |(m, v)| {
            if *v == 0.0 {
                0.0
            } else {
                v * (ln_choose(m, n) - tau * n as f64 + (m - n) as f64 * (-q).ln_1p()).exp()
            }
        },
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockops::build_operators;
    use crate::states::make_density_matrix;

    fn dist(spec: StateSpec) -> PhotonStatistics {
        make_distribution(&spec, DEFAULT_TAIL_TOL).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn preselect_examples() {
        let f = dist(StateSpec::Fock { m: 6 });
        for m in 1..=6 {
            let v = preselect_pn(&f, m, 1.7).unwrap();
            assert!((v - poisson_weight(6 - m, 1.7)).abs() < 1e-16);
        }
        let th = dist(StateSpec::Thermal { nbar: 5.0 });
        for n in 0..10 {
            assert_eq!(preselect_pn(&th, n, 0.0).unwrap(), th.prob(n));
        }
        let v = preselect_pn(&th, 2, 3.0).unwrap();
        assert!((v - 0.070_200_307_837_110_35).abs() < 1e-15);
        assert!((v - 25.0 / 216.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn probability_conservation_and_laplace_consistency() {
        for spec in [
            StateSpec::Thermal { nbar: 5.0 },
            StateSpec::Coherent { nbar: 4.0 },
            StateSpec::Fock { m: 7 },
            StateSpec::NegBinomial { mu: 1.5, nbar: 3.0 },
        ] {
            let p = dist(spec);
            for &tau in &[0.0, 0.3, 1.0, 4.0, 12.0] {
                let rest =
                    sum_compensated((1..p.trunc_dim()).map(|n| preselect_pn(&p, n, tau).unwrap()));
                let p0 = preselect_pn(&p, 0, tau).unwrap();
                assert!((p0 + rest + p.tail_mass() - 1.0).abs() < 1e-10);
                assert!((p0 - (1.0 - rest - p.tail_mass())).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn diagonal_recurrence_by_finite_differences() {
        let p = dist(StateSpec::Coherent { nbar: 3.0 });
        let h = 1e-4;
        for &tau in &[0.5, 2.0] {
            for n in 0..8 {
                let d = (preselect_pn(&p, n, tau + h).unwrap()
                    - preselect_pn(&p, n, tau - h).unwrap())
                    / (2.0 * h);
                let rhs = preselect_pn(&p, n + 1, tau).unwrap()
                    - if n == 0 {
                        0.0
                    } else {
                        preselect_pn(&p, n, tau).unwrap()
                    };
                assert!((d - rhs).abs() < 1e-6, "n={n} tau={tau}");
            }
        }
    }

    #[test]
    fn thermal_shape_is_preserved() {
        let nbar = 5.0;
        let p = dist(StateSpec::Thermal { nbar });
        for &tau in &[0.5, 3.0, 10.0] {
            for n in 0..30 {
                let ratio = preselect_pn(&p, n, tau).unwrap() / p.prob(n);
                if n == 0 {
                    continue;
                }
                assert!((ratio - (-tau / (1.0 + nbar)).exp()).abs() < 1e-10, "n={n}");
            }
        }
    }

    #[test]
    fn mean_examples() {
        let v = mean_photons(&StateSpec::Thermal { nbar: 5.0 }, 6.0, ModelKind::Ep).unwrap();
        assert!((v - 5.0 * (-1.0f64).exp()).abs() < 1e-15);
        for &tau in &[0.0, 0.4, 3.0] {
            let ep = mean_photons(&StateSpec::Fock { m: 1 }, tau, ModelKind::Ep).unwrap();
            let sd = mean_photons(&StateSpec::Fock { m: 1 }, tau, ModelKind::Sd).unwrap();
            assert!((ep - (-tau).exp()).abs() < 1e-15 && (ep - sd).abs() < 1e-15);
        }
        let c = mean_photons(&StateSpec::Coherent { nbar: 5.0 }, 2.0, ModelKind::Ep).unwrap();
        assert!((c - 3.146_086_755_047_152_4).abs() < 1e-12);
        let series = mean_series(&dist(StateSpec::Coherent { nbar: 5.0 }), 2.0);
        assert!((c - series).abs() < 1e-8);
    }

    #[test]
    fn closed_means_match_series() {
        for spec in [
            StateSpec::Fock { m: 9 },
            StateSpec::Thermal { nbar: 3.0 },
            StateSpec::Coherent { nbar: 7.0 },
        ] {
            let p = dist(spec.clone());
            for &tau in &[0.2, 1.0, 5.0, 15.0] {
                let a = mean_photons(&spec, tau, ModelKind::Ep).unwrap();
                let b = mean_series(&p, tau);
                let c = generating_function_dz(&p, 1.0, tau).unwrap();
                assert!(
                    (a - b).abs() < 1e-9 && (b - c).abs() < 1e-9,
                    "{spec:?} {tau}"
                );
            }
        }
    }

    #[test]
    fn ep_mean_decreases_monotonically() {
        for spec in [
            StateSpec::Fock { m: 3 },
            StateSpec::Thermal { nbar: 2.0 },
            StateSpec::Coherent { nbar: 1.0 },
        ] {
            let mut prev = f64::INFINITY;
            for i in 0..60 {
                let v = mean_photons(&spec, i as f64 * 0.25, ModelKind::Ep).unwrap();
                assert!(v < prev);
                prev = v;
            }
        }
        for model in ModelKind::ALL {
            assert_eq!(
                mean_photons(&StateSpec::Fock { m: 0 }, 3.0, model).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn negbinomial_forms() {
        for n in 1..8 {
            for &tau in &[0.0, 0.7, 3.0] {
                let nb = pn_negbinomial(1.0, 5.0, n, tau).unwrap();
                let th = preselect_pn(&dist(StateSpec::Thermal { nbar: 5.0 }), n, tau).unwrap();
                assert!((nb - th).abs() < 1e-12);
            }
        }
        let v = pn_negbinomial(2.0, 3.0, 1, 2.0).unwrap();
        assert!((v - 0.138_033_857_776_810_47).abs() < 1e-14);
        let series =
            preselect_pn(&dist(StateSpec::NegBinomial { mu: 2.0, nbar: 3.0 }), 1, 2.0).unwrap();
        assert!((v - series).abs() < 1e-12);
        for &mu in &[0.5, 2.5, 4.0] {
            let p = dist(StateSpec::NegBinomial { mu, nbar: 2.0 });
            for n in 0..6 {
                let a = pn_negbinomial(mu, 2.0, n, 1.3).unwrap();
                assert!(
                    (a - preselect_pn(&p, n, 1.3).unwrap()).abs() < 1e-12,
                    "mu={mu} n={n}"
                );
            }
        }
        let big = pn_negbinomial(3.0, 4.0, 2, 2000.0).unwrap();
        assert!(big.is_finite() && big >= 0.0);
    }

    #[test]
    fn binomial_forms() {
        let p = dist(StateSpec::Binomial {
            m_max: 5,
            nbar: 2.0,
        });
        let v = pn_binomial(5, 2.0, 1, 1.5).unwrap();
        assert!((v - 0.241_462_534_106_224_82).abs() < 1e-14);
        assert!((v - preselect_pn(&p, 1, 1.5).unwrap()).abs() < 1e-14);
        assert!(
            (pn_binomial(5, 2.0, 5, 0.9).unwrap() - 0.4f64.powi(5) * (-0.9f64).exp()).abs() < 1e-16
        );
        for n in 0..=5 {
            assert!((pn_binomial(5, 2.0, n, 0.0).unwrap() - p.prob(n)).abs() < 1e-15);
        }
        let fock = pn_binomial(4, 4.0, 2, 1.1).unwrap();
        assert!((fock - poisson_weight(2, 1.1)).abs() < 1e-16);
        assert!(pn_binomial(4, 5.0, 1, 1.0).is_err());
        assert!(pn_binomial(4, 2.0, 5, 1.0).is_err());
    }

    #[test]
    fn poisson_forms() {
        assert_eq!(pn_poisson(5.0, 3, 0.0).unwrap(), poisson_weight(3, 5.0));
        let v = pn_poisson(5.0, 2, 1.0).unwrap();
        assert!(rel(v, 0.128_256_680_355_495_55) < 1e-13);
        let series = preselect_pn(&dist(StateSpec::Coherent { nbar: 5.0 }), 2, 1.0).unwrap();
        assert!((v - series).abs() < 1e-8);
        // far beyond the Bessel overflow threshold
        let big = pn_poisson(400.0, 5, 500.0).unwrap();
        let series = preselect_pn(&dist(StateSpec::Coherent { nbar: 400.0 }), 5, 500.0).unwrap();
        assert!(rel(big, series) < 1e-10);
    }

    #[test]
    fn asymptotic_forms_against_exact() {
        let exact = [
            1.559_829_257_941_157_8e-12,
            4.700_549_620_337_988e-13,
            1.371_807_273_127_638_3e-13,
            3.877_465_256_461_405e-14,
            1.061_610_052_610_725_9e-14,
        ];
        let errs = [0.0121, 0.0621, 0.151, 0.288, 0.487];
        for n in 1..=5 {
            let e = pn_poisson(5.0, n, 50.0).unwrap();
            assert!(rel(e, exact[n - 1]) < 1e-10);
            let a = pn_poisson_asymptotic(5.0, n, 50.0).unwrap();
            assert!(a.valid);
            assert!(
                (rel(a.value, e) - errs[n - 1]).abs() < 1e-3,
                "n={n}: {}",
                rel(a.value, e)
            );
        }
        assert!(!pn_poisson_asymptotic(5.0, 1, 1.0).unwrap().valid);
        let m = mean_poisson_asymptotic(1.0, 20.0).unwrap();
        let exact_mean =
            mean_photons(&StateSpec::Coherent { nbar: 1.0 }, 20.0, ModelKind::Ep).unwrap();
        assert!(rel(exact_mean, 2.471_449_5e-7) < 1e-6);
        assert!((rel(m.value, exact_mean) - 0.2987).abs() < 1e-3);
    }

    #[test]
    fn generating_function_examples() {
        let p = dist(StateSpec::Thermal { nbar: 2.0 });
        assert_eq!(generating_function(&p, 0.0, 1.0).unwrap(), 0.0);
        let g1 = generating_function(&p, 1.0, 1.3).unwrap();
        assert!((g1 - (1.0 - preselect_pn(&p, 0, 1.3).unwrap() - p.tail_mass())).abs() < 1e-12);
        let f3 = dist(StateSpec::Fock { m: 3 });
        let g = generating_function(&f3, 0.5, 1.0).unwrap();
        assert!((g - 0.229_924_650_732_151_45).abs() < 1e-15);
        assert!(generating_function(&f3, 1.5, 1.0).is_err());
    }

    #[test]
    fn mean_gap_examples() {
        assert_eq!(mean_gap(&StateSpec::Fock { m: 1 }, 2.0).unwrap(), 0.0);
        let th = StateSpec::Thermal { nbar: 5.0 };
        let g = mean_gap(&th, 2.0).unwrap();
        assert!((g - (5.0 * (-1.0f64 / 3.0).exp() - 5.0 * (-2.0f64).exp())).abs() < 1e-10);
        assert_eq!(mean_gap(&th, 0.0).unwrap(), 0.0);
        for spec in [
            StateSpec::Coherent { nbar: 3.0 },
            StateSpec::Fock { m: 4 },
            StateSpec::Binomial {
                m_max: 6,
                nbar: 2.0,
            },
        ] {
            for &tau in &[0.1, 1.0, 6.0] {
                let g = mean_gap(&spec, tau).unwrap();
                let d = mean_photons(&spec, tau, ModelKind::Ep).unwrap()
                    - mean_photons(&spec, tau, ModelKind::Sd).unwrap();
                assert!(g > 0.0 && (g - d).abs() < 1e-10, "{spec:?} {tau}");
            }
        }
    }

    #[test]
    fn lindblad_examples() {
        let th = make_density_matrix(&StateSpec::Thermal { nbar: 5.0 }, 1e-10).unwrap();
        let ops = build_operators(th.dim(), 1.0, 0.0).unwrap();
        let out = lindblad_integrate(&th, &[0.0, 0.5, 1.0], &ops, ModelKind::Ep).unwrap();
        let p = th.photon_statistics().unwrap();
        for n in 0..th.dim() {
            let want = preselect_pn(&p, n, 1.0).unwrap();
            assert!((out[2].matrix()[(n, n)].re - want).abs() < 1e-6, "n={n}");
        }
        assert!((out[2].trace() - th.trace()).abs() < 1e-9);

        let c = make_density_matrix(&StateSpec::Coherent { nbar: 5.0 }, 1e-12).unwrap();
        let ops = build_operators(c.dim(), 1.0, 0.3).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0];
        let out = lindblad_integrate(&c, &grid, &ops, ModelKind::Sd).unwrap();
        for (rho, tau) in out.iter().zip(grid) {
            assert!((rho.mean_photons() - 5.0 * (-tau).exp()).abs() < 1e-6);
        }
        let same = lindblad_integrate(&c, &[0.0], &ops, ModelKind::Ep).unwrap();
        assert_eq!(same[0], c);
        assert!(lindblad_integrate(&c, &[0.0, 1.0, 0.5], &ops, ModelKind::Ep).is_err());
    }

    #[test]
    fn sd_preselection_matches_integrator() {
        let nb =
            make_density_matrix(&StateSpec::NegBinomial { mu: 2.0, nbar: 1.5 }, 1e-10).unwrap();
        let ops = build_operators(nb.dim(), 1.0, 0.0).unwrap();
        let out = lindblad_integrate(&nb, &[0.0, 0.8], &ops, ModelKind::Sd).unwrap();
        let p = nb.photon_statistics().unwrap();
        let sd = preselect_distribution(&p, 0.8, ModelKind::Sd).unwrap();
        for n in 0..nb.dim() {
            assert!((out[1].matrix()[(n, n)].re - sd.prob(n)).abs() < 1e-7);
            assert!((sd.prob(n) - preselect_pn_sd(&p, n, 0.8).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn step_budget_exhaustion() {
        let c = make_density_matrix(&StateSpec::Coherent { nbar: 2.0 }, 1e-10).unwrap();
        let ops = build_operators(c.dim(), 1.0, 0.0).unwrap();
        let ctl = IntegratorControl {
            h_start: 0.5,
            h_min: 0.2,
            tol: 1e-14,
        };
        assert!(matches!(
            lindblad_integrate_with(&c, &[0.0, 1.0], &ops, ModelKind::Ep, &ctl),
            Err(Error::StepTooLarge { .. })
        ));
    }
}
