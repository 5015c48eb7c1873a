//! Quantum-jump sampling of count records.
//!
//! A trajectory alternates two moves: draw the waiting time to the next
//! count from the survival function of the current conditioned state, then
//! either stop (the draw falls past the window) or apply the no-count
//! evolution followed by the normalized jump.
//!
//! The survival function depends only on the diagonal of the conditioned
//! state: `p_0 + (1 - p_0) e^{-gamma s}` for EP (an atom at infinity of weight
//! `p_0` plus an exponential) and `sum_n p_n e^{-n gamma s}` for SD, inverted by
//! bisection in `x = e^{-gamma s}`.
//!
//! Randomness: each trajectory owns a ChaCha8 stream (`rand_chacha::ChaCha8Rng`)
//! seeded from a 64-bit seed; batch seeds are `splitmix64(base ^ splitmix64(i))`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fockops::{self, ModelKind, OperatorSet};
use crate::specfun::{ln_choose, poisson_upper};
use crate::states::{make_density_matrix, make_distribution, DensityMatrix, StateSpec};
use crate::DEFAULT_TAIL_TOL;

/// Largest conditioned probability tolerated in the top Fock level.
pub const EDGE_MASS_BUDGET: f64 = 1e-6;

/// Bisection resolution in `x = e^{-gamma s}`.
const SD_BISECTION_TOL: f64 = 1e-12;

/// Window used by [`ks_like_epd_check`], in units of `1/gamma`.
pub const EPD_CHECK_WINDOW: f64 = 50.0;

/// Minimum number of conditioned records for [`ks_like_epd_check`].
pub const EPD_CHECK_MIN_SAMPLES: usize = 100;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trajectory `index` in a batch.
pub fn trajectory_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index))
}

/// Times of all counts in `[0, window]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountRecord {
    pub jump_times: Vec<f64>,
    pub window: f64,
    pub model: ModelKind,
    pub seed: u64,
}

impl CountRecord {
    pub fn k(&self) -> usize {
        self.jump_times.len()
    }
}

/// Conditioned state at the end of the window.
#[derive(Clone, Debug, PartialEq)]
pub enum FinalState {
    Diagonal(Vec<f64>),
    Full(DensityMatrix),
}

impl FinalState {
    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            FinalState::Diagonal(d) => d.clone(),
            FinalState::Full(rho) => rho.diagonal(),
        }
    }
}

trait Conditioned {
    fn diagonal(&self) -> &[f64];
    fn no_count(&mut self, s: f64) -> Result<()>;
    fn jump(&mut self) -> Result<()>;
    fn to_vacuum(&mut self);
    fn finish(self) -> FinalState;
}

struct DiagState {
    p: Vec<f64>,
    gamma: f64,
    model: ModelKind,
}

impl Conditioned for DiagState {
    fn diagonal(&self) -> &[f64] {
        &self.p
    }

    fn no_count(&mut self, s: f64) -> Result<()> {
        match self.model {
            ModelKind::Ep => {
                let e = (-self.gamma * s).exp();
                self.p.iter_mut().skip(1).for_each(|v| *v *= e);
            }
            ModelKind::Sd => {
                let x = (-self.gamma * s).exp();
                let mut f = 1.0;
                for v in self.p.iter_mut() {
                    *v *= f;
                    f *= x;
                }
            }
        }
        if fockops::diag::normalize(&mut self.p) > 0.0 {
            Ok(())
        } else {
            Err(Error::ZeroProbability)
        }
    }

    fn jump(&mut self) -> Result<()> {
        let mut next = fockops::diag::jump(&self.p, self.gamma, self.model);
        if fockops::diag::normalize(&mut next) <= 0.0 {
            return Err(Error::VacuumOnly);
        }
        self.p = next;
        Ok(())
    }

    fn to_vacuum(&mut self) {
        self.p.iter_mut().for_each(|v| *v = 0.0);
        self.p[0] = 1.0;
    }

    fn finish(self) -> FinalState {
        FinalState::Diagonal(self.p)
    }
}

struct FullState<'a> {
    rho: DensityMatrix,
    diag: Vec<f64>,
    ops: &'a OperatorSet,
    model: ModelKind,
}

impl FullState<'_> {
    fn set(&mut self, rho: DensityMatrix) {
        self.diag = rho.diagonal();
        self.rho = rho;
    }
}

impl Conditioned for FullState<'_> {
    fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    fn no_count(&mut self, s: f64) -> Result<()> {
        let next = fockops::no_count_evolve(&self.rho, s, self.ops, self.model);
        self.set(next.normalized()?);
        Ok(())
    }

    fn jump(&mut self) -> Result<()> {
        let next = fockops::post_count_state(&self.rho, self.ops, self.model)?;
        self.set(next);
        Ok(())
    }

    fn to_vacuum(&mut self) {
        let dim = self.rho.dim();
        let mut m = DMatrix::zeros(dim, dim);
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        self.set(DensityMatrix::from_matrix(m, 0.0));
    }

    fn finish(self) -> FinalState {
        FinalState::Full(self.rho)
    }
}

fn check_edge(d: &[f64]) -> Result<()> {
    let edge = *d.last().expect("nonempty state");
    if edge > EDGE_MASS_BUDGET {
        Err(Error::TruncationExhausted { mass: edge })
    } else {
        Ok(())
    }
}

/// Survival probability over `remaining` for a normalized diagonal.
fn survival(d: &[f64], gamma: f64, model: ModelKind, remaining: f64) -> f64 {
    let x = (-gamma * remaining).exp();
    match model {
        ModelKind::Ep => d[0] + (1.0 - d[0]) * x,
        ModelKind::Sd => horner(d, x),
    }
}

fn horner(d: &[f64], x: f64) -> f64 {
    d.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

/// Waiting time to the next count, or `None` when no count happens within
/// `remaining`.
fn draw_wait(d: &[f64], gamma: f64, model: ModelKind, remaining: f64, u: f64) -> Option<f64> {
    if u < survival(d, gamma, model, remaining) {
        return None;
    }
    let s = match model {
        ModelKind::Ep => -((u - d[0]) / (1.0 - d[0])).ln() / gamma,
        ModelKind::Sd => {
            let (mut lo, mut hi) = ((-gamma * remaining).exp(), 1.0);
            while hi - lo > SD_BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                if horner(d, mid) > u {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            -(0.5 * (lo + hi)).ln() / gamma
        }
    };
    Some(s.clamp(0.0, remaining))
}

fn run_trajectory<C: Conditioned>(
    mut state: C,
    gamma: f64,
    model: ModelKind,
    t: f64,
    seed: u64,
) -> Result<(CountRecord, FinalState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut now = 0.0;
    let mut times = Vec::new();
    check_edge(state.diagonal())?;
    loop {
        let remaining = t - now;
        let u: f64 = rng.random();
        match draw_wait(state.diagonal(), gamma, model, remaining, u) {
            None => {
                if remaining.is_finite() {
                    state.no_count(remaining)?;
                } else {
                    state.to_vacuum();
                }
                break;
            }
            Some(s) => {
                state.no_count(s)?;
                state.jump()?;
                check_edge(state.diagonal())?;
                now += s;
                times.push(now);
            }
        }
    }
    let record = CountRecord {
        jump_times: times,
        window: t,
        model,
        seed,
    };
    Ok((record, state.finish()))
}

enum Initial {
    Diag(Vec<f64>),
    Full(Box<(DensityMatrix, OperatorSet)>),
}

/// Prepared initial state and model, reused across trajectories.
pub struct Sampler {
    initial: Initial,
    gamma: f64,
    model: ModelKind,
}

impl Sampler {
    /// Diagonal states take the fast diagonal path; others carry the full
    /// density matrix.
    pub fn new(spec: &StateSpec, gamma: f64, model: ModelKind) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
        }
        if spec.is_diagonal() {
            let p = make_distribution(spec, DEFAULT_TAIL_TOL)?;
            // one spare level so a full support never sits on the edge
            let p = p.padded(p.trunc_dim() + 1).renormalized();
            Ok(Sampler {
                initial: Initial::Diag(p.probs().to_vec()),
                gamma,
                model,
            })
        } else {
            let rho = make_density_matrix(spec, DEFAULT_TAIL_TOL)?;
            let rho = rho.with_dim(rho.dim() + 1);
            let ops = fockops::build_operators(rho.dim(), gamma, 0.0)?;
            Self::from_density_matrix(rho, ops, model)
        }
    }

    /// General initial state. The diagonal path is used when `rho` is
    /// diagonal and `omega = 0`.
    pub fn from_density_matrix(
        rho: DensityMatrix,
        ops: OperatorSet,
        model: ModelKind,
    ) -> Result<Self> {
        if rho.dim() != ops.dim {
            return Err(Error::invalid("state and operator dimensions differ"));
        }
        let rho = rho.normalized()?;
        let m = rho.matrix();
        let diagonal = (0..rho.dim())
            .all(|i| (0..rho.dim()).all(|j| i == j || m[(i, j)] == Complex64::new(0.0, 0.0)));
        let gamma = ops.gamma;
        let initial = if diagonal && ops.omega == 0.0 {
            let mut d = rho.diagonal();
            fockops::diag::normalize(&mut d);
            Initial::Diag(d)
        } else {
            let tr = rho.trace();
            Initial::Full(Box::new((
                DensityMatrix::from_matrix(rho.matrix().map(|c| c / tr), 0.0),
                ops,
            )))
        };
        Ok(Sampler {
            initial,
            gamma,
            model,
        })
    }

    pub fn is_diagonal_path(&self) -> bool {
        matches!(self.initial, Initial::Diag(_))
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    /// One trajectory over `[0, t]` (`t` may be infinite) and its final state.
    pub fn sample(&self, t: f64, seed: u64) -> Result<(CountRecord, FinalState)> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("t must be >= 0, got {t}")));
        }
        match &self.initial {
            Initial::Diag(p) => run_trajectory(
                DiagState {
                    p: p.clone(),
                    gamma: self.gamma,
                    model: self.model,
                },
                self.gamma,
                self.model,
                t,
                seed,
            ),
            Initial::Full(full) => run_trajectory(
                FullState {
                    diag: full.0.diagonal(),
                    rho: full.0.clone(),
                    ops: &full.1,
                    model: self.model,
                },
                self.gamma,
                self.model,
                t,
                seed,
            ),
        }
    }

    pub fn sample_record(&self, t: f64, seed: u64) -> Result<CountRecord> {
        self.sample(t, seed).map(|(r, _)| r)
    }

    fn collect<T, F>(&self, n_traj: u64, base_seed: u64, parallel: bool, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        if n_traj == 0 {
            return Err(Error::invalid("n_traj must be >= 1"));
        }
        let run = |i: u64| f(trajectory_seed(base_seed, i));
        let results: Vec<Result<T>> = if parallel {
            (0..n_traj).into_par_iter().map(run).collect()
        } else {
            (0..n_traj).map(run).collect()
        };
        results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| Error::Trajectory {
                    index: i as u64,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Histogram of final counts over `n_traj` trajectories.
    pub fn run_batch(
        &self,
        t: f64,
        n_traj: u64,
        base_seed: u64,
        parallel: bool,
    ) -> Result<McSummary> {
        let ks = self.collect(n_traj, base_seed, parallel, |seed| {
            self.sample_record(t, seed).map(|r| r.k())
        })?;
        let mut histogram = BTreeMap::new();
        for k in ks {
            *histogram.entry(k).or_insert(0u64) += 1;
        }
        Ok(McSummary {
            histogram,
            n_traj,
            ci_level: DEFAULT_CI_LEVEL,
        })
    }

    /// Mean and standard error of the final conditioned diagonals.
    pub fn average_final_diagonal(
        &self,
        t: f64,
        n_traj: u64,
        base_seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let finals = self.collect(n_traj, base_seed, true, |seed| {
            self.sample(t, seed).map(|(_, f)| f.diagonal())
        })?;
        let dim = finals[0].len();
        let n = n_traj as f64;
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for d in &finals {
            for (i, v) in d.iter().enumerate() {
                mean[i] += v;
                sq[i] += v * v;
            }
        }
        let se = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= n;
                let var = (s / n - *m * *m).max(0.0) * n / (n - 1.0).max(1.0);
                (var / n).sqrt()
            })
            .collect();
        Ok((mean, se))
    }

    /// Jump-time tuples of the records with exactly `k` counts in `[0, t]`.
    pub fn conditioned_times(
        &self,
        t: f64,
        k: usize,
        n_traj: u64,
        base_seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let records = self.collect(n_traj, base_seed, true, |seed| self.sample_record(t, seed))?;
        Ok(records
            .into_iter()
            .filter(|r| r.k() == k)
            .map(|r| r.jump_times)
            .collect())
    }
}

/// One trajectory from a state spec.
pub fn sample_record(
    spec: &StateSpec,
    t: f64,
    gamma: f64,
    model: ModelKind,
    seed: u64,
) -> Result<CountRecord> {
    Sampler::new(spec, gamma, model)?.sample_record(t, seed)
}

/// Parallel batch from a state spec. The result does not depend on the
/// thread schedule.
pub fn run_batch(
    spec: &StateSpec,
    t: f64,
    gamma: f64,
    model: ModelKind,
    n_traj: u64,
    base_seed: u64,
) -> Result<McSummary> {
    Sampler::new(spec, gamma, model)?.run_batch(t, n_traj, base_seed, true)
}

/// Single-threaded batch; identical output to [`run_batch`].
pub fn run_batch_serial(
    spec: &StateSpec,
    t: f64,
    gamma: f64,
    model: ModelKind,
    n_traj: u64,
    base_seed: u64,
) -> Result<McSummary> {
    Sampler::new(spec, gamma, model)?.run_batch(t, n_traj, base_seed, false)
}

pub const DEFAULT_CI_LEVEL: f64 = 0.95;

/// Histogram of final count numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct McSummary {
    pub histogram: BTreeMap<usize, u64>,
    pub n_traj: u64,
    pub ci_level: f64,
}

/// One histogram bin with its Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McRow {
    pub k: usize,
    pub count: u64,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl McSummary {
    pub fn count(&self, k: usize) -> u64 {
        self.histogram.get(&k).copied().unwrap_or(0)
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.count(k) as f64 / self.n_traj as f64
    }

    pub fn k_max(&self) -> usize {
        self.histogram.keys().next_back().copied().unwrap_or(0)
    }

    /// Wilson score interval for bin `k` at `ci_level`.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        let z = Normal::standard().inverse_cdf(0.5 + 0.5 * self.ci_level);
        let n = self.n_traj as f64;
        let p = self.frequency(k);
        let denom = 1.0 + z * z / n;
        let center = (p + z * z / (2.0 * n)) / denom;
        let half = z / denom * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
        ((center - half).max(0.0), (center + half).min(1.0))
    }

    /// Rows `k = 0..=k_max`, empty bins included.
    pub fn rows(&self) -> Vec<McRow> {
        (0..=self.k_max())
            .map(|k| {
                let (ci_low, ci_high) = self.interval(k);
                McRow {
                    k,
                    count: self.count(k),
                    frequency: self.frequency(k),
                    ci_low,
                    ci_high,
                }
            })
            .collect()
    }

    /// `|f_k - P_k| / sqrt(P_k (1 - P_k) / n)`; zero when `P_k` is 0 or 1 and
    /// the frequency matches.
    pub fn z_score(&self, k: usize, expected: f64) -> f64 {
        let diff = (self.frequency(k) - expected).abs();
        let se = (expected * (1.0 - expected) / self.n_traj as f64).sqrt();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }
}

/// Result of [`ks_like_epd_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct EpdCheck {
    /// Largest per-coordinate Kolmogorov distance.
    pub statistic: f64,
    /// `4 / sqrt(n_conditioned)`.
    pub threshold: f64,
    pub n_conditioned: usize,
    pub per_coordinate: Vec<f64>,
}

impl EpdCheck {
    pub fn passed(&self) -> bool {
        self.statistic < self.threshold
    }
}

/// CDF of the `i`-th count time (1-based) given exactly `k` counts in a long
/// window: Erlang(`i`, gamma) for EP, the `i`-th order statistic of `k`
/// Exp(gamma) variables for SD.
pub fn conditioned_time_cdf(model: ModelKind, i: usize, k: usize, gamma: f64, t: f64) -> f64 {
    let x = gamma * t;
    match model {
        ModelKind::Ep => poisson_upper(i, x),
        ModelKind::Sd => {
            let f = -(-x).exp_m1();
            if f >= 1.0 {
                return 1.0;
            }
            (i..=k)
                .map(|j| (ln_choose(k, j) + j as f64 * f.ln() + (k - j) as f64 * (-x)).exp())
                .sum::<f64>()
                .min(1.0)
        }
    }
}

/// One-sample Kolmogorov distance of `samples` against `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let c = cdf(x);
            ((j + 1) as f64 / n - c).max(c - j as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Compare the count times of records with exactly `k` counts in a window of
/// `50 / gamma` against the model's count-sequence density, coordinate by
/// coordinate.
pub fn ks_like_epd_check(
    spec: &StateSpec,
    gamma: f64,
    model: ModelKind,
    k: usize,
    n_traj: u64,
    base_seed: u64,
) -> Result<EpdCheck> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let sampler = Sampler::new(spec, gamma, model)?;
    let tuples = sampler.conditioned_times(EPD_CHECK_WINDOW / gamma, k, n_traj, base_seed)?;
    let n = tuples.len();
    if n < EPD_CHECK_MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: n,
            need: EPD_CHECK_MIN_SAMPLES,
        });
    }
    let per_coordinate = (0..k)
        .map(|i| {
            let mut xs = tuples.iter().map(|t| t[i]).collect::<Vec<_>>();
            ks_distance(&mut xs, |x| conditioned_time_cdf(model, i + 1, k, gamma, x))
        })
        .collect::<Vec<_>>();
    let statistic = per_coordinate.iter().copied().fold(0.0, f64::max);
    Ok(EpdCheck {
        statistic,
        threshold: 4.0 / (n as f64).sqrt(),
        n_conditioned: n,
        per_coordinate,
    })
}
