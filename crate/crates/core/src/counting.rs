//! Counting statistics of both models: count probabilities `P(k, t)`,
//! densities of timed count sequences, moments and post-selected states.
//!
//! Times enter as `tau = gamma t` internally. Functions taking `t` and `gamma`
//! convert at the boundary.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fockops::{self, ModelKind, OperatorSet};
use crate::quadrature::{integrate_vec, QuadControl};
use crate::specfun::{
    ln_choose, log_factorial, phi_k, poisson_upper, poisson_weight, sum_compensated,
};
use crate::states::{DensityMatrix, PhotonStatistics, StateSpec};

/// Target cumulative mass for automatic `K_max` selection.
pub const AUTO_KMAX_TARGET: f64 = 1.0 - 1e-10;

/// Absolute tolerance of the post-selection quadratures.
pub const POST_SELECT_TOL: f64 = 1e-10;

/// Largest count order handled by the nested construction.
pub const NESTED_MAX_ORDER: usize = 3;

fn check_time(t: f64, gamma: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("t must be >= 0, got {t}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(gamma * t)
}

/// `Z_k = sum_{n >= k} p_n`, tail mass included.
fn upper_mass(p: &PhotonStatistics, k: usize) -> f64 {
    let probs = p.probs();
    let from = k.min(probs.len());
    sum_compensated(probs[from..].iter().copied()) + p.tail_mass()
}

/// `ln(1 - e^{-tau})`.
fn ln_detected(tau: f64) -> f64 {
    (-(-tau).exp_m1()).ln()
}

fn sd_binomial_term(n: usize, k: usize, tau: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut e = ln_choose(n, k);
    if k > 0 {
        e += k as f64 * ln_detected(tau);
    }
    if n > k {
        e -= tau * (n - k) as f64;
    }
    e.exp()
}

/// `P(k, tau)` with dimensionless time `tau = gamma t`.
///
/// At `tau = 0` this is exactly `[k = 0]`, truncated tail included.
pub fn prob_counts_scaled(p: &PhotonStatistics, k: usize, tau: f64, model: ModelKind) -> f64 {
    if tau == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    match model {
        ModelKind::Ep => p.prob(k) * phi_k(k, tau) + poisson_weight(k, tau) * upper_mass(p, k),
        ModelKind::Sd => sum_compensated(
            p.probs()
                .iter()
                .enumerate()
                .skip(k)
                .map(|(n, v)| v * sd_binomial_term(n, k, tau)),
        ),
    }
}

/// Probability of exactly `k` counts during `[0, t]`.
pub fn prob_counts(
    p: &PhotonStatistics,
    k: usize,
    t: f64,
    gamma: f64,
    model: ModelKind,
) -> Result<f64> {
    let tau = check_time(t, gamma)?;
    Ok(prob_counts_scaled(p, k, tau, model))
}

/// `P(k, t)` from the family closed forms, without truncating the state.
///
/// Supported families: Fock, Coherent, Thermal.
pub fn prob_counts_closed_family(
    spec: &StateSpec,
    k: usize,
    t: f64,
    gamma: f64,
    model: ModelKind,
) -> Result<f64> {
    spec.validate()?;
    let tau = check_time(t, gamma)?;
    let kf = k as f64;
    let v = match (spec, model) {
        (StateSpec::Fock { m }, ModelKind::Sd) => sd_binomial_term(*m, k, tau),
        (StateSpec::Fock { m }, ModelKind::Ep) => match k.cmp(m) {
            std::cmp::Ordering::Less => poisson_weight(k, tau),
            std::cmp::Ordering::Equal => poisson_upper(k, tau),
            std::cmp::Ordering::Greater => 0.0,
        },
        (StateSpec::Coherent { nbar }, ModelKind::Sd) => poisson_weight(k, nbar * -(-tau).exp_m1()),
        (StateSpec::Coherent { nbar }, ModelKind::Ep) => {
            poisson_weight(k, tau) * poisson_upper(k, *nbar)
                + poisson_weight(k, *nbar) * phi_k(k, tau)
        }
        (StateSpec::Thermal { nbar }, ModelKind::Sd) => {
            let x = nbar * -(-tau).exp_m1();
            if x == 0.0 {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (kf * (x / (1.0 + x)).ln() - (1.0 + x).ln()).exp()
            }
        }
        (StateSpec::Thermal { nbar }, ModelKind::Ep) => {
            let r = nbar / (nbar + 1.0);
            let geo = r.powi(k as i32) / (nbar + 1.0);
            poisson_weight(k, tau) * r.powi(k as i32) + geo * phi_k(k, tau)
        }
        (other, _) => return Err(Error::UnsupportedFamily(other.family().to_string())),
    };
    Ok(v)
}

/// Count distribution `P(0..=K_max, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountDistribution {
    pub probs: Vec<f64>,
    pub t: f64,
    pub gamma: f64,
    pub model: ModelKind,
    /// `1 - sum(probs)`.
    pub deficit: f64,
}

impl CountDistribution {
    pub fn k_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn total(&self) -> f64 {
        sum_compensated(self.probs.iter().copied())
    }

    /// `sum_k k^l P(k, t)`.
    pub fn moment(&self, l: u32) -> f64 {
        sum_compensated(
            self.probs
                .iter()
                .enumerate()
                .map(|(k, v)| (k as f64).powi(l as i32) * v),
        )
    }
}

/// Cap on automatic `K_max`: `trunc_dim + ceil(10 tau)`.
fn auto_cap(p: &PhotonStatistics, tau: f64) -> usize {
    let extra = if tau.is_finite() {
        (10.0 * tau).ceil() as usize
    } else {
        0
    };
    p.trunc_dim() + extra
}

/// Evaluate `P(k, t)` for `k = 0..=K_max`.
///
/// With `k_max = None` the smallest `K` whose cumulative probability reaches
/// [`AUTO_KMAX_TARGET`] is used, capped at `trunc_dim + ceil(10 gamma t)`.
pub fn count_distribution(
    p: &PhotonStatistics,
    t: f64,
    gamma: f64,
    model: ModelKind,
    k_max: Option<usize>,
) -> Result<CountDistribution> {
    let tau = check_time(t, gamma)?;
    let probs = match k_max {
        Some(0) => return Err(Error::invalid("K_max must be >= 1")),
        Some(km) => (0..=km)
            .map(|k| prob_counts_scaled(p, k, tau, model))
            .collect::<Vec<_>>(),
        None => {
            let cap = auto_cap(p, tau);
            let mut out = Vec::new();
            let mut cum = crate::specfun::CompensatedSum::new();
            for k in 0..=cap {
                let v = prob_counts_scaled(p, k, tau, model);
                cum.add(v);
                out.push(v);
                if k >= 1 && cum.value() >= AUTO_KMAX_TARGET {
                    break;
                }
            }
            out
        }
    };
    let deficit = 1.0 - sum_compensated(probs.iter().copied());
    Ok(CountDistribution {
        probs,
        t,
        gamma,
        model,
        deficit,
    })
}

/// `l`-th moment `sum_k k^l P(k, t)` by direct summation up to
/// `trunc_dim + ceil(10 gamma t)`.
///
/// Fails with `NonConvergent` when the last summed term is not negligible.
pub fn moments(p: &PhotonStatistics, l: u32, t: f64, gamma: f64, model: ModelKind) -> Result<f64> {
    if l == 0 {
        return Err(Error::invalid("moment order must be >= 1"));
    }
    let tau = check_time(t, gamma)?;
    let cap = auto_cap(p, tau);
    let dist = count_distribution(p, t, gamma, model, Some(cap))?;
    let total = dist.moment(l);
    let last = (cap as f64).powi(l as i32) * dist.probs[cap];
    if last > 1e-13 * total.abs().max(1e-300) {
        return Err(Error::NonConvergent {
            what: "moment summation",
            terms: cap + 1,
        });
    }
    Ok(total)
}

/// Observation window of a count sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    /// Counting stops at this time, which must be `>= t_k`.
    Finite(f64),
    Infinite,
}

/// Ordered count times `0 < t_1 < ... < t_k` inside a window.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTimes {
    times: Vec<f64>,
    window: Window,
}

impl CountTimes {
    pub fn new(times: Vec<f64>, window: Window) -> Result<Self> {
        let mut prev = 0.0;
        for (i, &t) in times.iter().enumerate() {
            if !(t.is_finite() && t > prev) {
                return Err(Error::invalid(format!(
                    "count times must be positive and strictly increasing (t[{i}] = {t})"
                )));
            }
            prev = t;
        }
        if let Window::Finite(end) = window {
            if !(end.is_finite() && end >= prev) {
                return Err(Error::invalid(format!(
                    "window end {end} precedes the last count {prev}"
                )));
            }
        }
        Ok(CountTimes { times, window })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn k(&self) -> usize {
        self.times.len()
    }

    /// Same sequence with every time multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        CountTimes {
            times: self.times.iter().map(|t| t * factor).collect(),
            window: match self.window {
                Window::Finite(e) => Window::Finite(e * factor),
                Window::Infinite => Window::Infinite,
            },
        }
    }
}

/// Count-sequence density in units of `gamma^k`; `times` are in units of
/// `1/gamma`.
pub fn epd_scaled(p: &PhotonStatistics, times: &CountTimes, model: ModelKind) -> f64 {
    let k = times.k();
    let last = times.times().last().copied().unwrap_or(0.0);
    match model {
        ModelKind::Ep => {
            let head = (-last).exp() * p.prob(k);
            match times.window() {
                Window::Infinite => head,
                Window::Finite(end) => head + (-end).exp() * upper_mass(p, k + 1),
            }
        }
        ModelKind::Sd => {
            let base = log_factorial(k) - sum_compensated(times.times().iter().copied());
            match times.window() {
                Window::Infinite => p.prob(k) * base.exp(),
                Window::Finite(end) => {
                    sum_compensated(p.probs().iter().enumerate().skip(k).map(|(n, v)| {
                        if *v == 0.0 {
                            return 0.0;
                        }
                        (base + ln_choose(n, k) - end * (n - k) as f64).exp() * v
                    }))
                }
            }
        }
    }
}

/// Count-sequence density in units of `time^{-k}`.
pub fn epd(p: &PhotonStatistics, times: &CountTimes, gamma: f64, model: ModelKind) -> Result<f64> {
    check_time(0.0, gamma)?;
    let scaled = times.scaled(gamma);
    Ok(gamma.powi(times.k() as i32) * epd_scaled(p, &scaled, model))
}

fn require_p_k(p: &PhotonStatistics, k: usize) -> Result<f64> {
    let pk = p.prob(k);
    if pk > 0.0 {
        Ok(pk)
    } else {
        Err(Error::ZeroProbability)
    }
}

/// `|EPD_EP / p_k - prod gamma e^{-gamma (t_i - t_{i-1})}|` for an infinite
/// window. The window of `times` is ignored.
pub fn epd_markov_factorization_residual(
    p: &PhotonStatistics,
    times: &[f64],
    gamma: f64,
) -> Result<f64> {
    let k = times.len();
    let pk = require_p_k(p, k)?;
    let ct = CountTimes::new(times.to_vec(), Window::Infinite)?;
    let lhs = epd(p, &ct, gamma, ModelKind::Ep)? / pk;
    let mut prev = 0.0;
    let mut rhs = 1.0;
    for &t in times {
        rhs *= gamma * (-gamma * (t - prev)).exp();
        prev = t;
    }
    Ok((lhs - rhs).abs())
}

/// `|EPD_SD / p_k - prod i gamma e^{-gamma t_i}|` for an infinite window.
pub fn epd_sd_product_residual(p: &PhotonStatistics, times: &[f64], gamma: f64) -> Result<f64> {
    let k = times.len();
    let pk = require_p_k(p, k)?;
    let ct = CountTimes::new(times.to_vec(), Window::Infinite)?;
    let lhs = epd(p, &ct, gamma, ModelKind::Sd)? / pk;
    let rhs: f64 = times
        .iter()
        .enumerate()
        .map(|(i, &t)| (i + 1) as f64 * gamma * (-gamma * t).exp())
        .product();
    Ok((lhs - rhs).abs())
}

/// Count probability of the naive semiclassical formula, with a flag that is
/// false once `gamma t > 1`, where the formula stops being a probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Semiclassical {
    pub value: f64,
    pub valid: bool,
}

pub fn prob_counts_semiclassical(
    p: &PhotonStatistics,
    k: usize,
    t: f64,
    gamma: f64,
) -> Result<Semiclassical> {
    let x = check_time(t, gamma)?;
    let value = sum_compensated(p.probs().iter().enumerate().skip(k).map(|(n, v)| {
        ln_choose(n, k).exp() * (1.0 - x).powi((n - k) as i32) * x.powi(k as i32) * v
    }));
    Ok(Semiclassical {
        value,
        valid: x <= 1.0,
    })
}

fn flatten(m: &DMatrix<Complex64>) -> Vec<f64> {
    m.iter()
        .map(|c| c.re)
        .chain(m.iter().map(|c| c.im))
        .collect()
}

fn unflatten(v: &[f64], dim: usize) -> DMatrix<Complex64> {
    let n = dim * dim;
    DMatrix::from_iterator(dim, dim, (0..n).map(|i| Complex64::new(v[i], v[n + i])))
}

/// Unnormalized `N_t(k) rho`; its trace is `P(k, t)`.
pub fn conditioned_state(
    rho: &DensityMatrix,
    k: usize,
    t: f64,
    ops: &OperatorSet,
    model: ModelKind,
) -> Result<DensityMatrix> {
    let tau = check_time(t, ops.gamma)?;
    if !tau.is_finite() {
        return Err(Error::invalid("post-selection needs a finite time"));
    }
    if k == 0 {
        return Ok(fockops::no_count_evolve(rho, t, ops, model));
    }
    let shifted = shift_power(rho, k, model);
    let dim = rho.dim();
    let coeff = match model {
        ModelKind::Ep => ep_channels(k, tau)?,
        ModelKind::Sd => {
            if k > NESTED_MAX_ORDER {
                return Err(Error::UnsupportedOrder {
                    k,
                    max: NESTED_MAX_ORDER,
                });
            }
            sd_channels(k, tau, dim)?
        }
    };
    let m = shifted.matrix();
    let out = DMatrix::from_fn(dim, dim, |i, j| {
        let c = match model {
            ModelKind::Ep => coeff[usize::from(i > 0) + usize::from(j > 0)],
            ModelKind::Sd => coeff[i + j],
        };
        m[(i, j)] * c
    });
    Ok(fockops::free_evolve(
        &DensityMatrix::from_matrix(out, 0.0),
        t,
        ops.omega,
    ))
}

/// `L^k rho L+^k` with unit weight per jump.
fn shift_power(rho: &DensityMatrix, k: usize, model: ModelKind) -> DensityMatrix {
    let dim = rho.dim();
    let m = rho.matrix();
    let weight = |i: usize| -> f64 { (1..=k).map(|s| model.ladder(i + s)).product() };
    let out = DMatrix::from_fn(dim, dim, |i, j| {
        if i + k < dim && j + k < dim {
            m[(i + k, j + k)] * (weight(i) * weight(j))
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    DensityMatrix::from_matrix(out, 0.0)
}

/// `int_0^tau ds e^{-s} s^{k-1}/(k-1)! e^{-(tau - s) c / 2}` for `c = 0, 1, 2`.
fn ep_channels(k: usize, tau: f64) -> Result<Vec<f64>> {
    let lf = log_factorial(k - 1);
    let f = |s: f64| -> Vec<f64> {
        let base = if s > 0.0 {
            ((k - 1) as f64 * s.ln() - s - lf).exp()
        } else if k == 1 {
            1.0
        } else {
            0.0
        };
        (0..3)
            .map(|c| base * (-(tau - s) * c as f64 / 2.0).exp())
            .collect()
    };
    integrate_vec(f, 0.0, tau, &QuadControl::with_tol(POST_SELECT_TOL)).map(|(v, _)| v)
}

/// Nested time-ordered integral
/// `int_{0<s_1<..<s_k<tau} prod_m exp(-d_c[m] (s_{m+1} - s_m))` for every
/// channel `c`, with `s_0 = 0`, `s_{k+1} = tau`.
fn nested_channels(decay: &[Vec<f64>], tau: f64, tol: f64) -> Result<Vec<f64>> {
    fn level(decay: &[Vec<f64>], m: usize, s: f64, tol: f64) -> Result<Vec<f64>> {
        if m == 0 {
            return Ok(decay.iter().map(|d| (-d[0] * s).exp()).collect());
        }
        let mut err = None;
        let (v, _) = integrate_vec(
            |u| match level(decay, m - 1, u, tol) {
                Ok(inner) => inner
                    .iter()
                    .zip(decay)
                    .map(|(g, d)| g * (-d[m] * (s - u)).exp())
                    .collect(),
                Err(e) => {
                    err.get_or_insert(e);
                    vec![0.0; decay.len()]
                }
            },
            0.0,
            s,
            &QuadControl::with_tol(tol),
        )?;
        match err {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }
    let k = decay[0].len() - 1;
    level(decay, k, tau, tol)
}

/// SD channel coefficients indexed by `i + j`.
fn sd_channels(k: usize, tau: f64, dim: usize) -> Result<Vec<f64>> {
    let decay = (0..2 * dim)
        .map(|sigma| {
            (0..=k)
                .map(|m| sigma as f64 / 2.0 + (k - m) as f64)
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    nested_channels(&decay, tau, POST_SELECT_TOL / (1.0 + tau))
}

/// Normalized state conditioned on exactly `k` counts during `[0, t]`.
pub fn post_selected_state(
    rho: &DensityMatrix,
    k: usize,
    t: f64,
    ops: &OperatorSet,
    model: ModelKind,
) -> Result<DensityMatrix> {
    let n = conditioned_state(rho, k, t, ops, model)?;
    if !(n.trace() > 0.0) {
        return Err(Error::ZeroProbability);
    }
    n.normalized()
}

/// Brute-force `N_t(k) rho` from the dense jump and no-count maps:
/// `G_0(s) = S_s rho`, `G_j(s) = int_0^s S_{s-u} J G_{j-1}(u) du`,
/// where `J` is the rate-weighted jump. Cost grows like `(15 n)^k`; meant as
/// an oracle for small dimensions.
pub fn brute_force_conditioned(
    rho: &DensityMatrix,
    k: usize,
    t: f64,
    ops: &OperatorSet,
    model: ModelKind,
    abs_tol: f64,
) -> Result<DensityMatrix> {
    check_time(t, ops.gamma)?;
    if k > NESTED_MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            k,
            max: NESTED_MAX_ORDER,
        });
    }
    fn g(
        rho: &DensityMatrix,
        j: usize,
        s: f64,
        ops: &OperatorSet,
        model: ModelKind,
        tol: f64,
    ) -> Result<DensityMatrix> {
        if j == 0 {
            return Ok(fockops::no_count_evolve(rho, s, ops, model));
        }
        let dim = rho.dim();
        let mut err = None;
        let (v, _) = integrate_vec(
            |u| match g(rho, j - 1, u, ops, model, tol) {
                Ok(inner) => {
                    let jumped = fockops::rate_jump(&inner, ops, model);
                    flatten(fockops::no_count_evolve(&jumped, s - u, ops, model).matrix())
                }
                Err(e) => {
                    err.get_or_insert(e);
                    vec![0.0; 2 * dim * dim]
                }
            },
            0.0,
            s,
            &QuadControl::with_tol(tol),
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(DensityMatrix::from_matrix(unflatten(&v, dim), 0.0))
    }
    g(rho, k, t, ops, model, abs_tol)
}
