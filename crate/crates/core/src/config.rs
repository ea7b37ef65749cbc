//! JSON problem configuration and the `--n-list` syntax.
//!
//! ```json
//! {"problem": "double_well", "n": 100, "schedule": {"total_steps": 4000, "dt": 0.02}}
//! ```
//!
//! Omitted double-well parameters take their n-dependent defaults; an omitted
//! `alpha` means 0.4; an omitted `dt` is filled in by [`crate::ssmc::default_dt`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DoubleWellParams, ModelError, ProblemInstance, ProblemKind, Schedule};
use crate::potentials::SpikeParams;
use crate::ssmc::default_dt;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid config JSON: {0}")]
    Json(String),
    #[error("key `{key}` does not apply to problem `{problem}`")]
    Irrelevant {
        key: &'static str,
        problem: &'static str,
    },
    #[error("config has no schedule section")]
    MissingSchedule,
    #[error("invalid n list `{input}`: {reason}")]
    NList { input: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: ProblemKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
}

impl ProblemConfig {
    pub fn double_well(n: usize) -> Self {
        ProblemConfig {
            problem: ProblemKind::DoubleWell,
            n,
            omega: None,
            delta: None,
            tau: None,
            alpha: None,
            schedule: None,
        }
    }

    pub fn spike(n: usize, alpha: f64) -> Self {
        ProblemConfig {
            problem: ProblemKind::Spike,
            alpha: Some(alpha),
            ..ProblemConfig::double_well(n)
        }
    }

    pub fn with_schedule(mut self, total_steps: usize, dt: Option<f64>) -> Self {
        self.schedule = Some(ScheduleConfig { total_steps, dt });
        self
    }

    /// Parses and validates (every key must make sense for the problem and
    /// the instance must construct).
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ProblemConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        cfg.instance()?;
        if let Some(sc) = cfg.schedule {
            if let Some(dt) = sc.dt {
                Schedule::linear(sc.total_steps, dt)?;
            } else if sc.total_steps == 0 {
                Schedule::linear(0, 1.0)?;
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn instance(&self) -> Result<ProblemInstance, ConfigError> {
        self.instance_for(self.n)
    }

    /// Same problem with `n` replaced, for n sweeps. Explicit ω, δ, τ are
    /// kept as given; omitted ones follow their defaults at the new n.
    pub fn instance_for(&self, n: usize) -> Result<ProblemInstance, ConfigError> {
        match self.problem {
            ProblemKind::DoubleWell => {
                if self.alpha.is_some() {
                    return Err(ConfigError::Irrelevant {
                        key: "alpha",
                        problem: "double_well",
                    });
                }
                let d = DoubleWellParams::default_for(n)?;
                let p = DoubleWellParams::new(
                    n,
                    self.omega.unwrap_or(d.omega()),
                    self.delta.unwrap_or(d.delta()),
                    self.tau.unwrap_or(d.tau()),
                )?;
                Ok(ProblemInstance::double_well(p))
            }
            ProblemKind::Spike => {
                for (key, v) in [
                    ("omega", self.omega),
                    ("delta", self.delta),
                    ("tau", self.tau),
                ] {
                    if v.is_some() {
                        return Err(ConfigError::Irrelevant {
                            key,
                            problem: "spike",
                        });
                    }
                }
                let alpha = self.alpha.unwrap_or(SpikeParams::DEFAULT_ALPHA);
                Ok(ProblemInstance::spike(SpikeParams::new(n, alpha)?))
            }
        }
    }

    /// The configured schedule for `instance`, with dt defaulted if absent.
    pub fn schedule_for(&self, instance: &ProblemInstance) -> Result<Schedule, ConfigError> {
        let sc = self.schedule.ok_or(ConfigError::MissingSchedule)?;
        let dt = sc.dt.unwrap_or_else(|| default_dt(instance));
        Ok(Schedule::linear(sc.total_steps, dt)?)
    }
}

/// Parses a comma-separated list of sizes. Each item is either an integer or
/// an inclusive range `start:step:end`. Sizes must be distinct and positive.
///
/// ```
/// assert_eq!(stoq::config::parse_n_list("40:20:100,128").unwrap(), vec![40, 60, 80, 100, 128]);
/// ```
pub fn parse_n_list(input: &str) -> Result<Vec<usize>, ConfigError> {
    let fail = |reason: &str| ConfigError::NList {
        input: input.to_string(),
        reason: reason.to_string(),
    };
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| fail(&format!("`{}` is not a size", t.trim())))
    };
    let mut out = Vec::new();
    for item in input.split(',') {
        if item.trim().is_empty() {
            return Err(fail("empty item"));
        }
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [one] => out.push(parse(one)?),
            [start, step, end] => {
                let (start, step, end) = (parse(start)?, parse(step)?, parse(end)?);
                if step == 0 {
                    return Err(fail("range step must be positive"));
                }
                if end < start {
                    return Err(fail("range end is below its start"));
                }
                if (end - start) / step >= 100_000 {
                    return Err(fail("range has too many points"));
                }
                out.extend((start..=end).step_by(step));
            }
            _ => return Err(fail("items are `n` or `start:step:end`")),
        }
    }
    if out.contains(&0) {
        return Err(fail("sizes must be positive"));
    }
    let mut sorted = out.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(fail("duplicate size"));
    }
    Ok(out)
}
