//! Flat `key = value` run configuration.
//!
//! Values come from three layers: built-in defaults, an optional config file,
//! and command-line flags. Later layers win.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qsmooth::dynamics::{ModelParams, OperatorForm, Unraveling};
use qsmooth::qmath::{excited_state, from_bloch, ground_state};
use qsmooth::CMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Smoother {
    PetzFuchs,
    Recursive,
    Swv,
    Gw,
}

impl Smoother {
    pub fn name(self) -> &'static str {
        match self {
            Smoother::PetzFuchs => "petz_fuchs",
            Smoother::Recursive => "recursive",
            Smoother::Swv => "swv",
            Smoother::Gw => "gw",
        }
    }
}

impl FromStr for Smoother {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "petz_fuchs" | "pf" => Ok(Smoother::PetzFuchs),
            "recursive" => Ok(Smoother::Recursive),
            "swv" => Ok(Smoother::Swv),
            "gw" => Ok(Smoother::Gw),
            other => Err(format!(
                "unknown smoother `{other}` (expected petz_fuchs, recursive, swv or gw)"
            )),
        }
    }
}

/// Initial state as written in the config, kept for echoing.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    Ground,
    Excited,
    Mixed,
    Bloch([f64; 3]),
}

impl InitialState {
    pub fn matrix(&self) -> CMatrix {
        match self {
            InitialState::Ground => ground_state(),
            InitialState::Excited => excited_state(),
            InitialState::Mixed => CMatrix::identity(2).scale(0.5),
            InitialState::Bloch(r) => from_bloch(*r),
        }
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialState::Ground => write!(f, "ground"),
            InitialState::Excited => write!(f, "excited"),
            InitialState::Mixed => write!(f, "mixed"),
            InitialState::Bloch([x, y, z]) => write!(f, "{x:?},{y:?},{z:?}"),
        }
    }
}

impl FromStr for InitialState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ground" | "g" => Ok(InitialState::Ground),
            "excited" | "e" => Ok(InitialState::Excited),
            "mixed" => Ok(InitialState::Mixed),
            other => {
                let parts: Vec<&str> = other.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(format!(
                        "rho0 must be ground, excited, mixed or a Bloch vector x,y,z; got `{other}`"
                    ));
                }
                let mut r = [0.0; 3];
                for (slot, part) in r.iter_mut().zip(&parts) {
                    *slot = part.parse().map_err(|_| format!("bad Bloch component `{part}`"))?;
                }
                if r.iter().map(|v| v * v).sum::<f64>() > 1.0 + 1e-12 {
                    return Err(format!("Bloch vector {other} lies outside the unit ball"));
                }
                Ok(InitialState::Bloch(r))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub omega: f64,
    pub gamma: f64,
    pub nbar: f64,
    pub unraveling: Unraveling,
    /// Explicit homodyne phase; `None` takes the unraveling's own quadrature.
    pub phi: Option<f64>,
    pub dt: f64,
    pub t_final: f64,
    pub rho0: InitialState,
    pub eta: f64,
    pub seed: u64,
    pub form: OperatorForm,
    pub n_traj: usize,
    pub n_bob: usize,
    pub bob: Unraveling,
    pub smoothers: Vec<Smoother>,
    pub window_start: f64,
    pub window_end: f64,
    pub steps: usize,
    pub uniform: bool,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ModelParams::default();
        RunConfig {
            omega: p.omega,
            gamma: p.gamma,
            nbar: p.nbar,
            unraveling: p.unraveling,
            phi: None,
            dt: p.dt,
            t_final: p.t_final,
            rho0: InitialState::Ground,
            eta: p.eta,
            seed: p.seed,
            form: p.form,
            n_traj: 100,
            n_bob: 256,
            bob: Unraveling::Jump,
            smoothers: vec![Smoother::PetzFuchs],
            window_start: 4.0,
            window_end: 7.5,
            steps: 20,
            uniform: false,
            output: None,
            format: Format::Csv,
        }
    }
}

pub const KEYS: [&str; 21] = [
    "omega",
    "gamma",
    "nbar",
    "unraveling",
    "phi",
    "dt",
    "t_final",
    "rho0",
    "eta",
    "seed",
    "form",
    "n_traj",
    "n_bob",
    "bob",
    "smoothers",
    "window_start",
    "window_end",
    "steps",
    "uniform",
    "output",
    "format",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("invalid value `{value}` for `{key}` (expected true or false)")),
    }
}

fn form_name(f: OperatorForm) -> &'static str {
    match f {
        OperatorForm::SecondOrder => "second-order",
        OperatorForm::Exact => "exact",
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key {
            "omega" => self.omega = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "nbar" => self.nbar = parse(key, value)?,
            "unraveling" => self.unraveling = value.parse().map_err(|e| format!("{e}"))?,
            "phi" => {
                self.phi = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "dt" => self.dt = parse(key, value)?,
            "t_final" => self.t_final = parse(key, value)?,
            "rho0" => self.rho0 = value.parse()?,
            "eta" => self.eta = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "form" => {
                self.form = match value {
                    "second-order" | "second_order" => OperatorForm::SecondOrder,
                    "exact" => OperatorForm::Exact,
                    _ => {
                        return Err(format!(
                            "invalid value `{value}` for `form` (expected second-order or exact)"
                        ))
                    }
                }
            }
            "n_traj" => self.n_traj = parse(key, value)?,
            "n_bob" => self.n_bob = parse(key, value)?,
            "bob" => self.bob = value.parse().map_err(|e| format!("{e}"))?,
            "smoothers" => {
                let mut list = vec![Smoother::PetzFuchs];
                for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    list.push(item.parse()?);
                }
                list.sort();
                list.dedup();
                self.smoothers = list;
            }
            "window_start" => self.window_start = parse(key, value)?,
            "window_end" => self.window_end = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "uniform" => self.uniform = parse_bool(key, value)?,
            "output" => {
                self.output = if value.is_empty() || value == "-" {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "format" => {
                self.format = match value {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    _ => return Err(format!("invalid value `{value}` for `format` (expected csv or json)")),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies a `key = value` file; errors carry the file name and line.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{origin}:{}: expected `key = value`, got `{line}`", i + 1))?;
            self.set(key.trim(), value)
                .map_err(|e| format!("{origin}:{}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn has_smoother(&self, s: Smoother) -> bool {
        self.smoothers.contains(&s)
    }

    pub fn phase(&self) -> f64 {
        self.phi.unwrap_or_else(|| self.unraveling.phase().unwrap_or(0.0))
    }

    /// Validated model parameters.
    pub fn params(&self) -> Result<ModelParams, String> {
        let p = ModelParams {
            omega: self.omega,
            gamma: self.gamma,
            nbar: self.nbar,
            unraveling: self.unraveling,
            phi: self.phase(),
            dt: self.dt,
            t_final: self.t_final,
            rho0: self.rho0.matrix(),
            eta: self.eta,
            seed: self.seed,
            form: self.form,
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }

    /// Resolved value of every key, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter()
            .map(|&k| {
                let v = match k {
                    "omega" => format!("{:?}", self.omega),
                    "gamma" => format!("{:?}", self.gamma),
                    "nbar" => format!("{:?}", self.nbar),
                    "unraveling" => self.unraveling.to_string(),
                    "phi" => format!("{:?}", self.phase()),
                    "dt" => format!("{:?}", self.dt),
                    "t_final" => format!("{:?}", self.t_final),
                    "rho0" => self.rho0.to_string(),
                    "eta" => format!("{:?}", self.eta),
                    "seed" => self.seed.to_string(),
                    "form" => form_name(self.form).to_string(),
                    "n_traj" => self.n_traj.to_string(),
                    "n_bob" => self.n_bob.to_string(),
                    "bob" => self.bob.to_string(),
                    "smoothers" => self.smoothers.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
                    "window_start" => format!("{:?}", self.window_start),
                    "window_end" => format!("{:?}", self.window_end),
                    "steps" => self.steps.to_string(),
                    "uniform" => self.uniform.to_string(),
                    "output" => self
                        .output
                        .as_ref()
                        .map_or("-".to_string(), |p| p.display().to_string()),
                    "format" => match self.format {
                        Format::Csv => "csv".to_string(),
                        Format::Json => "json".to_string(),
                    },
                    _ => unreachable!(),
                };
                (k, v)
            })
            .collect()
    }
}
