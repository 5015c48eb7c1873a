//! Dataset commands. Each builds a [`Table`]; the caller writes it.

use photocount::counting::{epd, prob_counts_scaled, CountTimes, Window};
use photocount::master::mean_photons;
use photocount::montecarlo::run_batch;
use photocount::states::make_distribution;
use photocount::{ModelKind, StateSpec};

use crate::output::{fmt_float, Table};
use crate::scenario::ScenarioArgs;
use crate::CliError;

/// `n, p_n` of the initial distribution.
pub fn dist(args: &ScenarioArgs) -> Result<Table, CliError> {
    let spec = args.state_spec()?;
    let p = make_distribution(&spec, args.trunc_tol()?)?;
    let mut t = Table::new(&["n", "p_n"]);
    for (n, v) in p.probs().iter().enumerate() {
        t.push(vec![n.to_string(), fmt_float(*v)]);
    }
    Ok(t)
}

/// State of figures 1-3.
pub fn counts_figure(figure: u8) -> Result<StateSpec, CliError> {
    match figure {
        1 => Ok(StateSpec::Fock { m: 5 }),
        2 => Ok(StateSpec::Coherent { nbar: 5.0 }),
        3 => Ok(StateSpec::Thermal { nbar: 5.0 }),
        f => Err(CliError::Usage(format!("counts has figures 1-3, got {f}"))),
    }
}

fn prob_column(model: ModelKind) -> &'static str {
    match model {
        ModelKind::Sd => "P_sd",
        ModelKind::Ep => "P_ep",
    }
}

/// `gamma_t, k, P_sd, P_ep` over the time grid (outer) and k list (inner).
pub fn counts(args: &ScenarioArgs) -> Result<Table, CliError> {
    let spec = match args.figure {
        Some(f) => counts_figure(f)?,
        None => args.state_spec()?,
    };
    let models = args.models();
    let p = make_distribution(&spec, args.trunc_tol()?)?;
    let grid = args.grid()?;
    let ks = args.ks()?;
    let mut header = vec!["gamma_t", "k"];
    header.extend(models.iter().map(|m| prob_column(*m)));
    let mut t = Table::new(&header);
    for &x in &grid {
        for &k in &ks {
            let mut row = vec![fmt_float(x), k.to_string()];
            row.extend(
                models
                    .iter()
                    .map(|m| fmt_float(prob_counts_scaled(&p, k, x, *m))),
            );
            t.push(row);
        }
    }
    Ok(t)
}

/// `(state, nbar0)` pairs of figure 4.
pub fn master_figure_states() -> Vec<StateSpec> {
    let mut out = Vec::new();
    for nbar0 in [1usize, 5, 10] {
        out.push(StateSpec::Fock { m: nbar0 });
        out.push(StateSpec::Coherent { nbar: nbar0 as f64 });
        out.push(StateSpec::Thermal { nbar: nbar0 as f64 });
    }
    out
}

/// `state, nbar0, model, tau, nbar_over_nbar0` per state (outer), model and
/// tau grid (inner).
pub fn master(args: &ScenarioArgs) -> Result<Table, CliError> {
    let specs = match args.figure {
        Some(4) => master_figure_states(),
        Some(f) => {
            return Err(CliError::Usage(format!(
                "master has figure 4 only, got {f}"
            )))
        }
        None => vec![args.state_spec()?],
    };
    let models = args.models();
    let grid = args.grid()?;
    let mut t = Table::new(&["state", "nbar0", "model", "tau", "nbar_over_nbar0"]);
    for spec in &specs {
        let nbar0 = spec.nominal_mean();
        if nbar0.is_nan() || nbar0 <= 0.0 {
            return Err(CliError::Usage(
                "master needs an initial mean photon number > 0".into(),
            ));
        }
        for &model in &models {
            for &tau in &grid {
                let v = mean_photons(spec, tau, model)? / nbar0;
                t.push(vec![
                    spec.family().to_string(),
                    nbar0.to_string(),
                    model.name().to_string(),
                    fmt_float(tau),
                    fmt_float(v),
                ]);
            }
        }
    }
    Ok(t)
}

/// Count-sequence density of `--times` in a window of `--gamma-t` / `--t`
/// (infinite when neither is given).
pub fn epd_cmd(args: &ScenarioArgs) -> Result<Table, CliError> {
    let spec = args.state_spec()?;
    let gamma = args.gamma()?;
    let times = args
        .times
        .clone()
        .ok_or_else(|| CliError::Usage("--times is required".into()))?;
    let window = match (args.gamma_t, args.t) {
        (None, None) => Window::Infinite,
        _ => Window::Finite(args.grid()?[0] / gamma),
    };
    let ct = CountTimes::new(times, window)?;
    let p = make_distribution(&spec, args.trunc_tol()?)?;
    let mut t = Table::new(&["model", "k", "window", "epd"]);
    for model in args.models() {
        let w = match window {
            Window::Infinite => "inf".to_string(),
            Window::Finite(x) => fmt_float(x),
        };
        t.push(vec![
            model.name().to_string(),
            ct.k().to_string(),
            w,
            fmt_float(epd(&p, &ct, gamma, model)?),
        ]);
    }
    Ok(t)
}

pub const DEFAULT_N_TRAJ: u64 = 10_000;

/// Monte Carlo histogram with Wilson intervals and the exact `P(k, t)`.
pub fn mc(args: &ScenarioArgs) -> Result<Table, CliError> {
    let spec = args.state_spec()?;
    let gamma = args.gamma()?;
    let seed = args
        .seed
        .ok_or_else(|| CliError::Usage("--seed is required".into()))?;
    let n_traj = args.n_traj.unwrap_or(DEFAULT_N_TRAJ);
    if n_traj == 0 {
        return Err(CliError::Usage("--n-traj must be >= 1".into()));
    }
    let gamma_t = match (args.gamma_t, args.t) {
        (None, None) => 1.0,
        _ => args.grid()?[0],
    };
    let p = make_distribution(&spec, args.trunc_tol()?)?;
    let mut t = Table::new(&[
        "model",
        "k",
        "count",
        "frequency",
        "ci_low",
        "ci_high",
        "p_exact",
    ]);
    for model in args.models() {
        let summary = run_batch(&spec, gamma_t / gamma, gamma, model, n_traj, seed)?;
        for row in summary.rows() {
            t.push(vec![
                model.name().to_string(),
                row.k.to_string(),
                row.count.to_string(),
                fmt_float(row.frequency),
                fmt_float(row.ci_low),
                fmt_float(row.ci_high),
                fmt_float(prob_counts_scaled(&p, row.k, gamma_t, model)),
            ]);
        }
    }
    Ok(t)
}
