//! Cross-module invariant battery behind `photocount check`.

use photocount::counting::{
    brute_force_conditioned, conditioned_state, count_distribution, prob_counts,
};
use photocount::fockops::{build_operators, jump, rate_jump};
use photocount::master::{lindblad_integrate, preselect_distribution};
use photocount::states::make_distribution;
use photocount::{DensityMatrix, ModelKind, PhotonStatistics, StateSpec};

use crate::CliError;

/// Largest tail mass the truncation may drop.
pub const TRUNCATION_BUDGET: f64 = 1e-6;

/// Dimension used by the matrix-valued checks.
const SMALL_DIM: usize = 24;
const BRUTE_DIM: usize = 8;

pub const INVARIANTS: [&str; 7] = [
    "truncation-budget",
    "boundedness",
    "normalization",
    "ideality",
    "semigroup",
    "analytic-vs-numeric",
    "ep-vs-brute-force",
];

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Diagonal state on the first `dim` levels, renormalized there.
fn cropped(p: &PhotonStatistics, dim: usize) -> DensityMatrix {
    DensityMatrix::diagonal_from(&p.truncated(dim).renormalized())
}

fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

type Check = Result<(bool, String), photocount::Error>;

fn truncation_budget(p: &PhotonStatistics) -> Check {
    let tail = p.tail_mass();
    Ok((
        tail <= TRUNCATION_BUDGET,
        format!(
            "tail mass {tail:.3e} at dim {} (budget {TRUNCATION_BUDGET:.0e})",
            p.trunc_dim()
        ),
    ))
}

fn boundedness(p: &PhotonStatistics) -> Check {
    let rho = DensityMatrix::diagonal_from(p);
    let ops = build_operators(rho.dim(), 1.0, 0.0)?;
    let mut cur = rho.clone();
    let mut max_tr: f64 = 0.0;
    for _ in 0..10 {
        cur = jump(&cur, &ops, ModelKind::Ep);
        max_tr = max_tr.max(cur.trace());
    }
    let sd = rate_jump(&rho, &ops, ModelKind::Sd).trace();
    let mean = p.mean();
    let ok = max_tr <= 1.0 + 1e-12 && (sd - mean).abs() <= 1e-9 * mean.max(1.0);
    Ok((
        ok,
        format!(
            "max Tr[J_ep^k rho] = {max_tr:.12}, Tr[J_sd rho]/gamma = {sd:.6} vs <n> = {mean:.6}"
        ),
    ))
}

fn normalization(p: &PhotonStatistics) -> Check {
    let mut err: f64 = 0.0;
    for model in ModelKind::ALL {
        for x in [0.1, 1.0, 5.0, 20.0] {
            let d = count_distribution(p, x, 1.0, model, None)?;
            err = err.max((d.total() - 1.0).abs());
        }
    }
    Ok((err < 1e-9, format!("max |sum_k P(k) - 1| = {err:.3e}")))
}

fn ideality(p: &PhotonStatistics) -> Check {
    let mut err: f64 = 0.0;
    for model in ModelKind::ALL {
        for k in 0..=10 {
            err = err.max((prob_counts(p, k, 50.0, 1.0, model)? - p.prob(k)).abs());
        }
    }
    Ok((err < 1e-6, format!("max |P(k, 50) - p_k| = {err:.3e}")))
}

fn semigroup(p: &PhotonStatistics) -> Check {
    let rho = cropped(p, SMALL_DIM);
    let ops = build_operators(rho.dim(), 1.0, 0.0)?;
    let q = rho.photon_statistics()?;
    let (t1, t2) = (0.6, 0.9);
    let mut err: f64 = 0.0;
    for k in 0..=2 {
        let direct = prob_counts(&q, k, t1 + t2, 1.0, ModelKind::Ep)?;
        let mut composed = 0.0;
        for k1 in 0..=k {
            let cond = conditioned_state(&rho, k1, t1, &ops, ModelKind::Ep)?;
            let w = cond.trace();
            if w > 0.0 {
                let after = cond.normalized()?.photon_statistics()?;
                composed += w * prob_counts(&after, k - k1, t2, 1.0, ModelKind::Ep)?;
            }
        }
        err = err.max((direct - composed).abs());
    }
    Ok((err < 1e-7, format!("max composition error {err:.3e}")))
}

fn analytic_vs_numeric(p: &PhotonStatistics) -> Check {
    let rho = cropped(p, SMALL_DIM);
    let ops = build_operators(rho.dim(), 1.0, 0.0)?;
    let q = rho.photon_statistics()?;
    let grid = [0.0, 0.5, 1.0];
    let mut err: f64 = 0.0;
    for model in ModelKind::ALL {
        let states = lindblad_integrate(&rho, &grid, &ops, model)?;
        for (tau, s) in grid.iter().zip(&states) {
            let want = preselect_distribution(&q, *tau, model)?;
            let d = s.diagonal();
            err = err.max(worst(
                d.iter().enumerate().map(|(n, v)| (v - want.prob(n)).abs()),
            ));
        }
    }
    Ok((
        err < 1e-6,
        format!("max |p_n(tau) - integrated| = {err:.3e}"),
    ))
}

fn ep_vs_brute_force(p: &PhotonStatistics) -> Check {
    let rho = cropped(p, BRUTE_DIM);
    let ops = build_operators(rho.dim(), 1.0, 0.0)?;
    let q = rho.photon_statistics()?;
    let mut err: f64 = 0.0;
    for model in ModelKind::ALL {
        for k in 0..=2 {
            let b = brute_force_conditioned(&rho, k, 1.0, &ops, model, 1e-10)?;
            err = err.max((b.trace() - prob_counts(&q, k, 1.0, 1.0, model)?).abs());
        }
    }
    Ok((
        err < 1e-6,
        format!("max |P(k) - Tr[N_t(k) rho]| = {err:.3e}"),
    ))
}

/// Run every invariant on `spec`, optionally cut to `truncation` levels.
pub fn run_checks(
    spec: &StateSpec,
    trunc_tol: f64,
    truncation: Option<usize>,
) -> Result<Vec<Outcome>, CliError> {
    let mut p = make_distribution(spec, trunc_tol)?;
    if let Some(dim) = truncation {
        if dim == 0 {
            return Err(CliError::Usage("--truncation must be >= 1".into()));
        }
        p = p.truncated(dim);
    }
    let checks: [fn(&PhotonStatistics) -> Check; 7] = [
        truncation_budget,
        boundedness,
        normalization,
        ideality,
        semigroup,
        analytic_vs_numeric,
        ep_vs_brute_force,
    ];
    Ok(INVARIANTS
        .iter()
        .zip(checks)
        .map(|(name, f)| match f(&p) {
            Ok((passed, detail)) => Outcome {
                name,
                passed,
                detail,
            },
            Err(e) => Outcome {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect())
}

pub fn render(outcomes: &[Outcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{:<22} {status}  {}\n", o.name, o.detail));
    }
    s
}
