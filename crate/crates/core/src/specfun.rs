//! Special functions used by the closed-form counting and master-equation
//! formulas.
//!
//! Everything here is a plain series or recurrence evaluated in `f64` with
//! Neumaier-compensated accumulation. The parameter ranges of interest are
//! modest (arguments up to a few tens), so no asymptotic expansions are used;
//! a series that fails to reach its tolerance within the term budget is
//! reported as [`Error::NonConvergent`] rather than silently truncated.

use crate::error::{Error, Result};

/// Tolerance and term budget for series evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesControl {
    pub rel_tol: f64,
    pub max_terms: usize,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl {
            rel_tol: 1e-13,
            max_terms: 10_000,
        }
    }
}

impl SeriesControl {
    pub fn new(rel_tol: f64, max_terms: usize) -> Result<Self> {
        if !(rel_tol > 0.0) {
            return Err(Error::invalid(format!(
                "rel_tol must be > 0, got {rel_tol}"
            )));
        }
        if max_terms == 0 {
            return Err(Error::invalid("max_terms must be >= 1"));
        }
        Ok(SeriesControl { rel_tol, max_terms })
    }
}

/// Neumaier's variant of Kahan summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator of floats.
pub fn sum_compensated<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

const FACTORIALS: [u64; 21] = [
    1,
    1,
    2,
    6,
    24,
    120,
    720,
    5040,
    40320,
    362880,
    3628800,
    39916800,
    479001600,
    6227020800,
    87178291200,
    1307674368000,
    20922789888000,
    355687428096000,
    6402373705728000,
    121645100408832000,
    2432902008176640000,
];

/// `ln(n!)`: exact table for `n <= 20`, Stirling series beyond.
pub fn log_factorial(n: usize) -> f64 {
    if n < FACTORIALS.len() {
        return (FACTORIALS[n] as f64).ln();
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/(12n) - 1/(360n^3) + 1/(1260n^5) - 1/(1680n^7)
    let corr = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + corr
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    log_factorial(n) - log_factorial(k) - log_factorial(n - k)
}

/// Poisson weight `e^{-lambda} lambda^j / j!`, evaluated in log space.
pub fn poisson_weight(j: usize, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    if lambda.is_infinite() {
        return 0.0;
    }
    (j as f64 * lambda.ln() - lambda - log_factorial(j)).exp()
}

/// Poisson weights `w_0..w_{len-1}` for mean `lambda`.
pub fn poisson_weights(len: usize, lambda: f64) -> Vec<f64> {
    (0..len).map(|j| poisson_weight(j, lambda)).collect()
}

fn clamp_unit(raw: f64) -> f64 {
    const SLACK: f64 = 1e-14;
    if raw < 0.0 && raw > -SLACK {
        0.0
    } else if raw > 1.0 && raw < 1.0 + SLACK {
        1.0
    } else {
        raw
    }
}

/// `Phi_k(x) = 1 - e^{-x} sum_{n=0}^{k} x^n/n! = e^{-x} sum_{n>k} x^n/n!`.
///
/// This is the probability that a Poisson variable of mean `x` exceeds `k`.
/// For `x < k + 1` the upper tail is summed directly (no cancellation);
/// otherwise the lower sum is accumulated from its largest term downwards
/// and complemented.
pub fn phi_k(k: usize, x: f64) -> f64 {
    debug_assert!(x >= 0.0, "phi_k requires x >= 0");
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let kf = k as f64;
    let raw = if x < kf + 1.0 {
        let mut n = k + 1;
        let mut term = (n as f64 * x.ln() - x - log_factorial(n)).exp();
        let mut acc = CompensatedSum::new();
        while term > 0.0 {
            acc.add(term);
            n += 1;
            term *= x / n as f64;
            if term < 1e-18 * acc.value() {
                break;
            }
        }
        acc.value()
    } else {
        let mut term = (kf * x.ln() - x - log_factorial(k)).exp();
        let mut acc = CompensatedSum::new();
        for n in (0..=k).rev() {
            acc.add(term);
            if term == 0.0 {
                break;
            }
            term *= n as f64 / x;
        }
        1.0 - acc.value()
    };
    clamp_unit(raw)
}

/// `Phi_{k-1}(x)` with the convention `Phi_{-1} = 1`, i.e. `P(Poisson(x) >= k)`.
pub fn poisson_upper(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        _ => phi_k(k - 1, x),
    }
}

/// Kummer's confluent hypergeometric function `M(a; b; x)` with default control.
pub fn kummer_m(a: f64, b: f64, x: f64) -> Result<f64> {
    kummer_m_with(a, b, x, &SeriesControl::default())
}

/// `M(a; b; x) = sum_m (a)_m x^m / ((b)_m m!)`.
///
/// Terminates exactly when `a` is a nonpositive integer.
pub fn kummer_m_with(a: f64, b: f64, x: f64, ctl: &SeriesControl) -> Result<f64> {
    if b <= 0.0 && b.fract() == 0.0 {
        return Err(Error::invalid(format!(
            "kummer_m: b = {b} is a nonpositive integer"
        )));
    }
    let terminating = a <= 0.0 && a.fract() == 0.0;
    let mut acc = CompensatedSum::new();
    acc.add(1.0);
    let mut term = 1.0;
    for m in 0..ctl.max_terms {
        let mf = m as f64;
        if terminating && a + mf == 0.0 {
            return Ok(acc.value());
        }
        term *= (a + mf) * x / ((b + mf) * (mf + 1.0));
        acc.add(term);
        let next = ((a + mf + 1.0) * x / ((b + mf + 1.0) * (mf + 2.0))).abs();
        if next < 1.0 && term.abs() * next / (1.0 - next) <= ctl.rel_tol * acc.value().abs() {
            return Ok(acc.value());
        }
    }
    Err(Error::NonConvergent {
        what: "kummer_m",
        terms: ctl.max_terms,
    })
}

/// Associated Laguerre polynomial `L_n^alpha(x)` by the three-term recurrence.
pub fn laguerre_assoc(n: usize, alpha: i32, x: f64) -> f64 {
    let alpha = alpha as f64;
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Modified Bessel function of the first kind `I_n(x)` with default control.
pub fn bessel_i(n: usize, x: f64) -> Result<f64> {
    bessel_i_with(n, x, &SeriesControl::default())
}

/// `I_n(x) = sum_k (x/2)^{2k+n} / (k! (k+n)!)`.
pub fn bessel_i_with(n: usize, x: f64, ctl: &SeriesControl) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("bessel_i: x = {x} must be >= 0")));
    }
    if x == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    let half = 0.5 * x;
    let q = half * half;
    let nf = n as f64;
    let mut term = (nf * half.ln() - log_factorial(n)).exp();
    let mut acc = CompensatedSum::new();
    acc.add(term);
    for k in 0..ctl.max_terms {
        let kf = k as f64;
        term *= q / ((kf + 1.0) * (kf + nf + 1.0));
        acc.add(term);
        let next = q / ((kf + 2.0) * (kf + nf + 2.0));
        if next < 1.0 && term * next / (1.0 - next) <= ctl.rel_tol * acc.value() {
            return Ok(acc.value());
        }
    }
    Err(Error::NonConvergent {
        what: "bessel_i",
        terms: ctl.max_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    /// Naive `1 - e^{-x} sum_{n<=k} x^n/n!` with running factorial.
    fn phi_direct(k: usize, x: f64) -> f64 {
        let mut term = 1.0;
        let mut s = 1.0;
        for n in 1..=k {
            term *= x / n as f64;
            s += term;
        }
        1.0 - (-x).exp() * s
    }

    #[test]
    fn phi_k_examples() {
        assert!((phi_k(0, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((phi_k(0, 1.0) - 0.632120559).abs() < 1e-9);
        assert_eq!(phi_k(4, 0.0), 0.0);
        // 1 - e^{-1} * 65/24
        let want = phi_direct(4, 1.0);
        assert!(rel(want, 1.0 - (-1.0f64).exp() * 65.0 / 24.0) < 1e-12);
        assert!(rel(phi_k(4, 1.0), want) < 1e-11);
        // 40-digit reference
        assert!(rel(phi_k(4, 1.0), 0.003_659_846_827_343_712_345) < 1e-13);
    }

    #[test]
    fn phi_k_matches_direct_sum_away_from_cancellation() {
        for k in 0..15 {
            for &x in &[0.5, 1.0, 3.0, 7.5, 12.0, 20.0] {
                let direct = phi_direct(k, x);
                if direct > 1e-3 {
                    assert!(rel(phi_k(k, x), direct) < 1e-12, "k={k} x={x}");
                }
            }
        }
    }

    #[test]
    fn phi_k_monotone_on_grid() {
        for k in 0..=30 {
            let mut prev = 0.0;
            for i in 0..=400 {
                let x = 20.0 * i as f64 / 400.0;
                let v = phi_k(k, x);
                assert!((0.0..=1.0).contains(&v));
                assert!(v >= prev - 1e-16, "k={k} x={x}");
                prev = v;
                if k > 0 {
                    assert!(v <= phi_k(k - 1, x) + 1e-16);
                }
            }
        }
    }

    #[test]
    fn log_factorial_values() {
        assert_eq!(log_factorial(0), 0.0);
        assert!((log_factorial(5) - 120f64.ln()).abs() < 1e-15);
        // cumulative-sum oracle in compensated f64 and a 40-digit reference
        let cum = sum_compensated((1..=100).map(|i| (i as f64).ln()));
        assert!(rel(log_factorial(100), cum) < 1e-13);
        assert!(rel(log_factorial(100), 363.739_375_555_563_490_144) < 1e-14);
        for n in 21..300 {
            let cum = sum_compensated((1..=n).map(|i| (i as f64).ln()));
            assert!(rel(log_factorial(n), cum) < 1e-12, "n={n}");
        }
    }

    #[test]
    fn kummer_examples() {
        assert_eq!(kummer_m(2.5, 3.0, 0.0).unwrap(), 1.0);
        assert!(rel(kummer_m(1.0, 1.0, 0.7).unwrap(), 0.7f64.exp()) < 1e-13);
        // 200-term direct summation oracle
        let mut term = 1.0;
        let mut acc = CompensatedSum::new();
        acc.add(term);
        for m in 0..200 {
            let mf = m as f64;
            term *= (2.0 + mf) * 1.5 / ((3.0 + mf) * (mf + 1.0));
            acc.add(term);
        }
        let v = kummer_m(2.0, 3.0, 1.5).unwrap();
        assert!(rel(v, acc.value()) < 1e-13);
        assert!(rel(v, 2.880_750_697_928_028_810) < 1e-13);
    }

    #[test]
    fn kummer_rejects_bad_b_and_reports_nonconvergence() {
        assert!(matches!(
            kummer_m(1.0, -2.0, 1.0),
            Err(Error::InvalidParameter(_))
        ));
        let ctl = SeriesControl::new(1e-13, 5).unwrap();
        assert!(matches!(
            kummer_m_with(2.0, 1.0, 30.0, &ctl),
            Err(Error::NonConvergent { .. })
        ));
        assert!(SeriesControl::new(0.0, 10).is_err());
        assert!(SeriesControl::new(1e-10, 0).is_err());
    }

    #[test]
    fn laguerre_examples() {
        assert_eq!(laguerre_assoc(0, 3, 2.7), 1.0);
        assert!((laguerre_assoc(1, 2, 0.5) - 2.5).abs() < 1e-15);
        // explicit sum: L_n^a(x) = sum_j (-1)^j C(n+a, n-j) x^j / j!
        let explicit = |n: usize, a: usize, x: f64| {
            sum_compensated((0..=n).map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * ln_choose(n + a, n - j).exp() * x.powi(j as i32) / log_factorial(j).exp()
            }))
        };
        let v = laguerre_assoc(3, 1, 1.2);
        assert!((v - explicit(3, 1, 1.2)).abs() < 1e-13);
        assert!((v - (-0.608)).abs() < 1e-13);
        for n in 0..10 {
            for a in 0..6 {
                for &x in &[-3.0, -0.4, 0.3, 2.0, 5.5] {
                    let e = explicit(n, a, x);
                    assert!((laguerre_assoc(n, a as i32, x) - e).abs() < 1e-10 * e.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn laguerre_is_terminating_kummer() {
        // M(-n; a+1; x) = n! L_n^a(x) / (a+1)_n
        for n in 0..=6usize {
            for a in 0..5i32 {
                for &x in &[-2.0, 0.5, 1.7, 4.0] {
                    let poch: f64 = (0..n).map(|i| a as f64 + 1.0 + i as f64).product();
                    let want = log_factorial(n).exp() * laguerre_assoc(n, a, x) / poch;
                    let got = kummer_m(-(n as f64), a as f64 + 1.0, x).unwrap();
                    assert!(
                        (got - want).abs() < 1e-12 * want.abs().max(1.0),
                        "n={n} a={a} x={x}"
                    );
                }
            }
        }
    }

    #[test]
    fn bessel_examples() {
        assert_eq!(bessel_i(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_i(3, 0.0).unwrap(), 0.0);
        let v = bessel_i(1, 2.0).unwrap();
        assert!(rel(v, 1.590_636_854_637_329_063) < 1e-14);
        assert!((v - 1.5906369).abs() < 1e-7);
        assert!(bessel_i(1, -1.0).is_err());
    }

    #[test]
    fn bessel_generating_identity() {
        for i in 1..=20 {
            let x = 0.5 * i as f64;
            let mut acc = CompensatedSum::new();
            acc.add(bessel_i(0, x).unwrap());
            for n in 1..80 {
                acc.add(2.0 * bessel_i(n, x).unwrap());
            }
            assert!(rel(acc.value(), x.exp()) < 1e-13, "x={x}");
        }
    }

    proptest! {
        #[test]
        fn kummer_transform_identity(a in 0.1f64..6.0, b in 0.5f64..8.0, x in -2.0f64..2.0) {
            let lhs = kummer_m(a, b, x).unwrap();
            let rhs = x.exp() * kummer_m(b - a, b, -x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 10.0 * 1e-13 * lhs.abs());
        }

        #[test]
        fn poisson_weights_sum_to_one(lambda in 0.0f64..40.0) {
            let w = poisson_weights(400, lambda);
            let s = sum_compensated(w.iter().copied());
            prop_assert!((s - 1.0).abs() < 1e-13);
        }
    }
}
