//! Experiment configuration files (TOML).
//!
//! ```toml
//! [problem]
//! name = "lasso"          # see `papc zoo --list`
//! dim = 4                 # optional
//! instance_seed = 1       # optional, seeds the problem data
//!
//! # name = "custom" defines the problem in place instead:
//! # dim = 3
//! # h = "quadratic(A=A.txt, b=b.txt)"   # or sqdist(center=..), zero
//! # projector = "full"                  # full | matrix:<path> | basis:<path>
//! # [[problem.blocks]]                  # one or more terms ω g(L x)
//! # g = "l1(weight=0.5)"
//! # L = "identity"                      # identity | difference | matrix:<path>
//! # weight = 1.0
//! # sigma = 1.0                         # dual preconditioner σ Id
//!
//! [schedule]
//! gamma0 = 0.4            # optional, default 0.9 β
//! gamma_decay = "constant"  # constant | harmonic:<p> | relaxing:<r>
//! tau0 = 0.5              # optional, default 0.99 of the largest admissible τ
//! tau_cap = 0.5           # optional, default tau0
//!
//! [noise]
//! kind = "gaussian"       # none | gaussian | minibatch
//! sigma0 = 1.0            # gaussian: standard deviation at n = 0
//! epsilon = 1.0           # gaussian, optional: variance sigma0² / (n+1)^(1+epsilon);
//!                         #   constant variance sigma0² when absent
//! batch_schedule = "full" # minibatch: full | constant:<b> | linear:<b0>:<step> | table:<b,..>
//!
//! [run]
//! horizon = 10000
//! seeds = [1, 2, 3]
//! variant = "papc"        # papc | saddle
//! regime = "almost-sure"  # almost-sure | ergodic
//! checkpoints_per_decade = 10   # or an explicit list: checkpoints = [0, 9, 99]
//! output = "out/lasso"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{log_checkpoints, Schedules, StepSchedule, Variant};
use crate::stochastic::{BatchSchedule, NoiseModel, Regime, VarianceSchedule};
use crate::zoo::{self, CustomBlock, CustomProblem, ZooInstance, ZooParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub run: RunSection,
    /// Directory that relative paths in the problem section refer to.
    #[serde(skip, default = "here")]
    pub base_dir: PathBuf,
}

fn here() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<CustomBlock>,
}

pub const CUSTOM: &str = "custom";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    #[serde(default = "constant_decay")]
    pub gamma_decay: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_cap: Option<f64>,
}

fn constant_decay() -> String {
    "constant".into()
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            gamma0: None,
            gamma_decay: constant_decay(),
            tau0: None,
            tau_cap: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "no_noise")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_schedule: Option<String>,
}

fn no_noise() -> String {
    "none".into()
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: no_noise(),
            sigma0: None,
            epsilon: None,
            batch_schedule: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "papc_variant")]
    pub variant: String,
    #[serde(default = "almost_sure")]
    pub regime: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints_per_decade: Option<usize>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn papc_variant() -> String {
    "papc".into()
}

fn almost_sure() -> String {
    "almost-sure".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("papc-out")
}

const DEFAULT_PER_DECADE: usize = 10;

impl ExperimentConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative problem paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            cfg.base_dir = dir.to_path_buf();
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that does not require building the problem.
    pub fn validate(&self) -> Result<()> {
        let pr = &self.problem;
        if pr.name == CUSTOM {
            if pr.dim.is_none() || pr.h.is_none() || pr.blocks.is_empty() {
                return Err(Error::Config(
                    "a custom problem needs problem.dim, problem.h and at least one [[problem.blocks]]".into(),
                ));
            }
            if pr.instance_seed.is_some() {
                return Err(Error::Config("problem.instance_seed applies to zoo problems only".into()));
            }
        } else {
            if !zoo::names().contains(&pr.name.as_str()) {
                return Err(Error::Unknown {
                    kind: "zoo problem",
                    name: pr.name.clone(),
                    available: format!("{}, {CUSTOM}", zoo::names().join(", ")),
                });
            }
            if pr.h.is_some() || pr.projector.is_some() || !pr.blocks.is_empty() {
                return Err(Error::Config(format!(
                    "problem.h, problem.projector and problem.blocks apply to name = \"{CUSTOM}\" only"
                )));
            }
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must list at least one seed".into()));
        }
        if self.run.horizon == 0 {
            return Err(Error::Config("run.horizon must be positive".into()));
        }
        if self.run.checkpoints.is_some() && self.run.checkpoints_per_decade.is_some() {
            return Err(Error::Config(
                "give either run.checkpoints or run.checkpoints_per_decade, not both".into(),
            ));
        }
        if self.run.checkpoints_per_decade == Some(0) {
            return Err(Error::Config("run.checkpoints_per_decade must be positive".into()));
        }
        for (key, value) in [
            ("schedule.gamma0", self.schedule.gamma0),
            ("schedule.tau0", self.schedule.tau0),
            ("schedule.tau_cap", self.schedule.tau_cap),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{key} must be positive and finite, got {v}")));
                }
            }
        }
        if let (Some(t0), Some(cap)) = (self.schedule.tau0, self.schedule.tau_cap) {
            if cap < t0 {
                return Err(Error::Config(format!("schedule.tau_cap {cap} is below tau0 {t0}")));
            }
        }
        parse_decay(&self.schedule.gamma_decay)?;
        self.variant()?;
        self.regime()?;
        self.noise_model()?;
        Ok(())
    }

    pub fn zoo_params(&self) -> ZooParams {
        ZooParams {
            dim: self.problem.dim,
            seed: self.problem.instance_seed.unwrap_or(ZooParams::default().seed),
        }
    }

    /// Builds the problem with its reference solution.
    pub fn instance(&self) -> Result<ZooInstance> {
        let pr = &self.problem;
        if pr.name == CUSTOM {
            let def = CustomProblem {
                dim: pr.dim.unwrap_or_default(),
                h: pr.h.clone().unwrap_or_default(),
                projector: pr.projector.clone().unwrap_or_else(|| "full".into()),
                blocks: pr.blocks.clone(),
            };
            zoo::custom(&def, &self.base_dir)
        } else {
            zoo::build(&pr.name, &self.zoo_params())
        }
    }

    pub fn variant(&self) -> Result<Variant> {
        match self.run.variant.as_str() {
            "papc" => Ok(Variant::Papc),
            "saddle" => Ok(Variant::Saddle),
            other => Err(unknown("variant", other, "papc, saddle")),
        }
    }

    pub fn regime(&self) -> Result<Regime> {
        match self.run.regime.as_str() {
            "almost-sure" => Ok(Regime::AlmostSure),
            "ergodic" => Ok(Regime::Ergodic),
            other => Err(unknown("regime", other, "almost-sure, ergodic")),
        }
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let n = &self.noise;
        let only = |allowed: &str| -> Result<()> {
            let given = [
                ("sigma0", n.sigma0.is_some()),
                ("epsilon", n.epsilon.is_some()),
                ("batch_schedule", n.batch_schedule.is_some()),
            ];
            match given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
                Some((k, _)) => Err(Error::Config(format!("noise.{k} does not apply to kind = {:?}", n.kind))),
                None => Ok(()),
            }
        };
        match n.kind.as_str() {
            "none" => {
                only("")?;
                Ok(NoiseModel::none())
            }
            "gaussian" => {
                only("sigma0 epsilon")?;
                let s0 = n
                    .sigma0
                    .ok_or_else(|| Error::Config("gaussian noise needs noise.sigma0".into()))?;
                if !(s0 >= 0.0 && s0.is_finite()) {
                    return Err(Error::Config(format!("noise.sigma0 must be non-negative, got {s0}")));
                }
                let schedule = match n.epsilon {
                    Some(epsilon) => VarianceSchedule::Polynomial {
                        sigma0_sq: s0 * s0,
                        epsilon,
                    },
                    None => VarianceSchedule::Constant(s0 * s0),
                };
                schedule.validate()?;
                Ok(NoiseModel::Gaussian(schedule))
            }
            "minibatch" => {
                only("batch_schedule")?;
                let b = n.batch_schedule.as_deref().unwrap_or("full");
                Ok(NoiseModel::Minibatch(BatchSchedule::parse(b)?))
            }
            other => Err(unknown("noise kind", other, "none, gaussian, minibatch")),
        }
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        match &self.run.checkpoints {
            Some(list) => {
                let mut c: Vec<usize> = list.iter().copied().filter(|&n| n < self.run.horizon).collect();
                c.sort_unstable();
                c.dedup();
                c
            }
            None => log_checkpoints(
                self.run.horizon,
                self.run.checkpoints_per_decade.unwrap_or(DEFAULT_PER_DECADE),
            ),
        }
    }

    /// Schedules for a built instance, filling unset values from its defaults.
    pub fn schedules(&self, inst: &ZooInstance) -> Result<Schedules> {
        let defaults = inst.default_schedules()?;
        let gamma0 = self.schedule.gamma0.unwrap_or_else(|| defaults.gamma(0));
        let gamma = match parse_decay(&self.schedule.gamma_decay)? {
            Decay::Constant => StepSchedule::Constant(gamma0),
            Decay::Harmonic(power) => StepSchedule::Harmonic { initial: gamma0, power },
            Decay::Relaxing(r) => StepSchedule::Relaxing {
                limit: gamma0 / (1.0 + r),
                coef: r,
                shift: 1.0,
            },
        };
        let tau0 = self.schedule.tau0.unwrap_or_else(|| defaults.tau(0));
        let tau_cap = self.schedule.tau_cap.unwrap_or(tau0);
        let tau = if tau_cap > tau0 {
            // rises from tau0 towards tau_cap
            StepSchedule::Relaxing {
                limit: tau_cap,
                coef: tau0 / tau_cap - 1.0,
                shift: 1.0,
            }
        } else {
            StepSchedule::Constant(tau0)
        };
        Ok(Schedules {
            gamma,
            tau,
            tau_cap,
            beta: defaults.beta,
        })
    }
}

fn unknown(kind: &'static str, name: &str, available: &str) -> Error {
    Error::Unknown {
        kind,
        name: name.to_string(),
        available: available.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Decay {
    Constant,
    Harmonic(f64),
    Relaxing(f64),
}

fn number(text: &str, what: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("{what}: expected a number, got {text:?}")))
}

fn parse_decay(text: &str) -> Result<Decay> {
    let mut parts = text.split(':');
    let kind = parts.next().unwrap_or_default();
    let args: Vec<&str> = parts.collect();
    let decay = match (kind, args.as_slice()) {
        ("constant", []) => Decay::Constant,
        ("harmonic", [p]) => Decay::Harmonic(number(p, "harmonic power")?),
        ("relaxing", [r]) => Decay::Relaxing(number(r, "relaxing coefficient")?),
        _ => {
            return Err(Error::Parse(format!(
                "gamma_decay {text:?}: expected constant, harmonic:<p> or relaxing:<r>"
            )))
        }
    };
    match decay {
        Decay::Harmonic(p) if p < 0.0 => Err(Error::Config("harmonic power must be non-negative".into())),
        Decay::Relaxing(r) if r < 0.0 => Err(Error::Config("relaxing coefficient must be non-negative".into())),
        d => Ok(d),
    }
}
