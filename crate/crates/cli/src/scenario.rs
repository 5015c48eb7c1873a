//! Scenario parameters from flags and an optional JSON document.
//!
//! The JSON keys are the long flag names with `-` replaced by `_`, plus a
//! required `"schema": 1`. Flags given on the command line override the file.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use num_complex::Complex64;
use photocount::{ModelKind, StateSpec, DEFAULT_TAIL_TOL};
use serde::Deserialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSel {
    Sd,
    Ep,
    Both,
}

impl ModelSel {
    pub fn models(self) -> Vec<ModelKind> {
        match self {
            ModelSel::Sd => vec![ModelKind::Sd],
            ModelSel::Ep => vec![ModelKind::Ep],
            ModelSel::Both => vec![ModelKind::Sd, ModelKind::Ep],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Fock,
    Coherent,
    Thermal,
    Binomial,
    Negbinomial,
    Phase,
    Custom,
}

/// Every scenario field, all optional so that flags and file can be merged.
#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioArgs {
    /// JSON scenario file; command-line flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub scenario: Option<PathBuf>,

    #[arg(skip)]
    pub schema: Option<u32>,

    /// Counting model
    #[arg(long, value_enum)]
    pub model: Option<ModelSel>,

    /// Initial state family
    #[arg(long, value_enum)]
    pub state: Option<Family>,

    /// Fock photon number
    #[arg(long)]
    pub m: Option<usize>,

    /// Mean photon number
    #[arg(long)]
    pub nbar: Option<f64>,

    /// Negative binomial shape
    #[arg(long)]
    pub mu: Option<f64>,

    /// Binomial maximum photon number
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m_max: Option<usize>,

    /// Coherent phase parameter (real, |z| < 1)
    #[arg(long)]
    pub z: Option<f64>,

    /// Custom photon-number probabilities, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p: Option<Vec<f64>>,

    /// Damping rate
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Single physical time
    #[arg(long)]
    pub t: Option<f64>,

    /// Single dimensionless time gamma*t
    #[arg(long = "gamma-t")]
    pub gamma_t: Option<f64>,

    /// Grid end in gamma*t (or tau)
    #[arg(long = "tau-max")]
    pub tau_max: Option<f64>,

    /// Number of grid steps
    #[arg(long)]
    pub steps: Option<usize>,

    /// Single count number
    #[arg(long)]
    pub k: Option<usize>,

    /// Count numbers, comma separated
    #[arg(long = "k-list", value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,

    /// Tail mass allowed when truncating infinite distributions
    #[arg(long = "trunc-tol")]
    pub trunc_tol: Option<f64>,

    /// Base seed for Monte Carlo
    #[arg(long)]
    pub seed: Option<u64>,

    /// Number of Monte Carlo trajectories
    #[arg(long = "n-traj")]
    pub n_traj: Option<u64>,

    /// Count times for the epd command, comma separated
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,

    /// Emit the dataset of figure 1, 2, 3 (counts) or 4 (master)
    #[arg(long)]
    pub figure: Option<u8>,

    /// Output path; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ScenarioArgs {
    /// Flags merged over the scenario file, if any.
    pub fn merged(self) -> Result<ScenarioArgs, CliError> {
        let Some(path) = self.scenario.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)?;
        let file = parse_scenario(&text)?;
        Ok(ScenarioArgs {
            scenario: Some(path),
            schema: file.schema,
            model: self.model.or(file.model),
            state: self.state.or(file.state),
            m: self.m.or(file.m),
            nbar: self.nbar.or(file.nbar),
            mu: self.mu.or(file.mu),
            m_max: self.m_max.or(file.m_max),
            z: self.z.or(file.z),
            p: self.p.or(file.p),
            gamma: self.gamma.or(file.gamma),
            t: self.t.or(file.t),
            gamma_t: self.gamma_t.or(file.gamma_t),
            tau_max: self.tau_max.or(file.tau_max),
            steps: self.steps.or(file.steps),
            k: self.k.or(file.k),
            k_list: self.k_list.or(file.k_list),
            trunc_tol: self.trunc_tol.or(file.trunc_tol),
            seed: self.seed.or(file.seed),
            n_traj: self.n_traj.or(file.n_traj),
            times: self.times.or(file.times),
            figure: self.figure.or(file.figure),
            out: self.out.or(file.out),
        })
    }

    pub fn gamma(&self) -> Result<f64, CliError> {
        let g = self.gamma.unwrap_or(1.0);
        if g.is_finite() && g > 0.0 {
            Ok(g)
        } else {
            Err(CliError::Usage(format!("--gamma must be > 0, got {g}")))
        }
    }

    pub fn models(&self) -> Vec<ModelKind> {
        self.model.unwrap_or(ModelSel::Both).models()
    }

    pub fn trunc_tol(&self) -> Result<f64, CliError> {
        let tol = self.trunc_tol.unwrap_or(DEFAULT_TAIL_TOL);
        if tol > 0.0 && tol < 1.0 {
            Ok(tol)
        } else {
            Err(CliError::Usage(format!(
                "--trunc-tol must lie in (0, 1), got {tol}"
            )))
        }
    }

    /// State spec, or `default` when no family was given.
    pub fn state_spec_or(&self, default: Option<StateSpec>) -> Result<StateSpec, CliError> {
        let need_f = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| CliError::Usage(format!("--{name} is required for this state")))
        };
        let need_u = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| CliError::Usage(format!("--{name} is required for this state")))
        };
        let spec = match self.state {
            None => default.ok_or_else(|| CliError::Usage("--state is required".into()))?,
            Some(Family::Fock) => StateSpec::Fock {
                m: need_u(self.m, "m")?,
            },
            Some(Family::Coherent) => StateSpec::Coherent {
                nbar: need_f(self.nbar, "nbar")?,
            },
            Some(Family::Thermal) => StateSpec::Thermal {
                nbar: need_f(self.nbar, "nbar")?,
            },
            Some(Family::Negbinomial) => StateSpec::NegBinomial {
                mu: need_f(self.mu, "mu")?,
                nbar: need_f(self.nbar, "nbar")?,
            },
            Some(Family::Binomial) => StateSpec::Binomial {
                m_max: need_u(self.m_max, "M")?,
                nbar: need_f(self.nbar, "nbar")?,
            },
            Some(Family::Phase) => StateSpec::CoherentPhase {
                z: Complex64::new(need_f(self.z, "z")?, 0.0),
            },
            Some(Family::Custom) => StateSpec::Custom {
                p: self
                    .p
                    .clone()
                    .ok_or_else(|| CliError::Usage("--p is required for this state".into()))?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn state_spec(&self) -> Result<StateSpec, CliError> {
        self.state_spec_or(None)
    }

    /// Dimensionless time grid: a single `--gamma-t` / `--t` value or
    /// `0..=tau_max` in `steps` equal steps (default 10 and 100).
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        let single = match (self.gamma_t, self.t) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "give either --gamma-t or --t, not both".into(),
                ))
            }
            (Some(x), None) => Some(x),
            (None, Some(t)) => Some(self.gamma()? * t),
            (None, None) => None,
        };
        if let Some(x) = single {
            if !(x.is_finite() && x >= 0.0) {
                return Err(CliError::Usage(format!(
                    "time must be finite and >= 0, got {x}"
                )));
            }
            return Ok(vec![x]);
        }
        let tau_max = self.tau_max.unwrap_or(10.0);
        let steps = self.steps.unwrap_or(100);
        if !(tau_max.is_finite() && tau_max > 0.0) || steps == 0 {
            return Err(CliError::Usage(
                "grid needs --tau-max > 0 and --steps >= 1".into(),
            ));
        }
        Ok((0..=steps)
            .map(|i| i as f64 * tau_max / steps as f64)
            .collect())
    }

    /// Count numbers from `--k`, `--k-list`, or `0..=5`.
    pub fn ks(&self) -> Result<Vec<usize>, CliError> {
        match (self.k, &self.k_list) {
            (Some(_), Some(_)) => Err(CliError::Usage(
                "give either --k or --k-list, not both".into(),
            )),
            (Some(k), None) => Ok(vec![k]),
            (None, Some(list)) if list.is_empty() => {
                Err(CliError::Usage("--k-list is empty".into()))
            }
            (None, Some(list)) => Ok(list.clone()),
            (None, None) => Ok((0..=5).collect()),
        }
    }
}

/// Strict parse of a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioArgs, CliError> {
    let file: ScenarioArgs =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("scenario: {e}")))?;
    match file.schema {
        Some(SCHEMA_VERSION) => Ok(file),
        Some(v) => Err(CliError::Usage(format!("scenario: unsupported schema {v}"))),
        None => Err(CliError::Usage("scenario: missing \"schema\" field".into())),
    }
}
