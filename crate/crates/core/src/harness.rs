//! Experiment orchestration: walker-count calibration, cost estimation,
//! repeated cost series and the spike comparison.
//!
//! Every trial seed is derived from the master seed and the trial's place in
//! the experiment, so results are identical however rayon schedules the work.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ConfigError;
use crate::fit::{self, LinearFit};
use crate::model::{ProblemInstance, Schedule};
use crate::potentials::SpikeParams;
use crate::seed::derive_path;
use crate::spectral::{quantum_cost_series, QuantumCostSeries, ScanOptions, SeriesFailure};
use crate::ssmc::{default_dt, run_anneal, AnnealOptions, SsmcError, WalkerMode};

pub const DEFAULT_BAND: (f64, f64) = (0.70, 0.75);
pub const MIN_CALIBRATION_TRIALS: usize = 20;
pub const DEFAULT_WALKER_CAP: usize = 1 << 16;
pub const DEFAULT_SCHEDULE_STEPS: usize = 2000;
pub const DEFAULT_REPETITIONS: usize = 10;
pub const DEFAULT_TRIALS_PER_REP: usize = 100;
pub const SPIKE_WALKERS: usize = 8000;

// Seed-path stream tags.
const CALIBRATION_STREAM: u64 = 0;
const REPETITION_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("success rate {0} is outside (0, 1]; cost is undefined")]
    UndefinedCost(f64),
    #[error("walkers and timesteps must be positive")]
    EmptyEffort,
    #[error("calibration needs at least {min} trials per probe, got {got}")]
    TooFewTrials { got: usize, min: usize },
    #[error("invalid success band ({0}, {1})")]
    InvalidBand(f64, f64),
    #[error("walker range [{min}, {cap}] is empty")]
    InvalidWalkerRange { min: usize, cap: usize },
    #[error("n list is empty")]
    EmptyNList,
    #[error("power-law fit needs at least 3 valid points, got {valid}")]
    DegenerateFit { valid: usize },
    #[error(transparent)]
    Ssmc(#[from] SsmcError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// (No. of walkers) × (No. of timesteps) / (probability of success).
pub fn estimate_cost(
    walkers: usize,
    timesteps: usize,
    success_rate: f64,
) -> Result<f64, HarnessError> {
    if walkers == 0 || timesteps == 0 {
        return Err(HarnessError::EmptyEffort);
    }
    if !(success_rate > 0.0 && success_rate <= 1.0) {
        return Err(HarnessError::UndefinedCost(success_rate));
    }
    Ok(walkers as f64 * timesteps as f64 / success_rate)
}

/// Runs `seeds.len()` anneals in parallel and returns the success fraction.
pub fn success_rate(
    instance: &ProblemInstance,
    schedule: &Schedule,
    walkers: usize,
    mode: WalkerMode,
    seeds: &[u64],
) -> Result<f64, HarnessError> {
    let wins = seeds
        .par_iter()
        .map(|&seed| {
            let opts = AnnealOptions::new(walkers, seed).with_mode(mode);
            run_anneal(instance, schedule, &opts).map(|r| r.success as usize)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum::<usize>();
    Ok(wins as f64 / seeds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationFlag {
    /// Even the walker cap stays below the band.
    BelowBandAtCap,
    /// Even the minimum walker count is above the band.
    AboveBandAtMinimum,
    /// Adjacent walker counts straddle the band without landing in it.
    BracketCollapsed,
    /// A larger walker count measured significantly lower success.
    NonMonotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub band: (f64, f64),
    pub trials: usize,
    pub min_walkers: usize,
    pub max_walkers: usize,
    pub mode: WalkerMode,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            band: DEFAULT_BAND,
            trials: DEFAULT_TRIALS_PER_REP,
            min_walkers: 1,
            max_walkers: DEFAULT_WALKER_CAP,
            mode: WalkerMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub n: usize,
    pub walkers: usize,
    pub success_rate: f64,
    pub trials: usize,
    pub flags: Vec<CalibrationFlag>,
    /// Every (walkers, success rate) measured, by walker count.
    pub probes: Vec<(usize, f64)>,
}

impl CalibrationResult {
    pub fn in_band(&self, band: (f64, f64)) -> bool {
        self.success_rate >= band.0 && self.success_rate <= band.1
    }
}

/// Finds a walker count whose success rate over `opts.trials` anneals lies in
/// the band: doubling from the minimum until the rate reaches the band, then
/// bisecting. Outcomes that cannot reach the band are flagged, not errors.
pub fn calibrate_walkers(
    instance: &ProblemInstance,
    schedule: &Schedule,
    opts: &CalibrationOptions,
    seed: u64,
) -> Result<CalibrationResult, HarnessError> {
    let (lo_band, hi_band) = opts.band;
    if !(0.0..=1.0).contains(&lo_band) || !(0.0..=1.0).contains(&hi_band) || lo_band > hi_band {
        return Err(HarnessError::InvalidBand(lo_band, hi_band));
    }
    if opts.trials < MIN_CALIBRATION_TRIALS {
        return Err(HarnessError::TooFewTrials {
            got: opts.trials,
            min: MIN_CALIBRATION_TRIALS,
        });
    }
    if opts.min_walkers == 0 || opts.min_walkers > opts.max_walkers {
        return Err(HarnessError::InvalidWalkerRange {
            min: opts.min_walkers,
            cap: opts.max_walkers,
        });
    }

    let mut probes: BTreeMap<usize, f64> = BTreeMap::new();
    let mut measure = |w: usize| -> Result<f64, HarnessError> {
        if let Some(&r) = probes.get(&w) {
            return Ok(r);
        }
        let seeds: Vec<u64> = (0..opts.trials as u64)
            .map(|k| derive_path(seed, &[CALIBRATION_STREAM, w as u64, k]))
            .collect();
        let r = success_rate(instance, schedule, w, opts.mode, &seeds)?;
        probes.insert(w, r);
        Ok(r)
    };
    let position = |r: f64| {
        if r < lo_band {
            std::cmp::Ordering::Less
        } else if r > hi_band {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    };

    let mut flags = Vec::new();
    let mut below = None;
    let mut w = opts.min_walkers;
    let chosen = loop {
        let r = measure(w)?;
        match position(r) {
            std::cmp::Ordering::Equal => break w,
            std::cmp::Ordering::Greater => {
                if below.is_none() {
                    flags.push(CalibrationFlag::AboveBandAtMinimum);
                    break w;
                }
                // Bisect between the last below-band and this above-band count.
                let (mut lo, mut hi) = (below.unwrap(), w);
                break loop {
                    if hi - lo <= 1 {
                        flags.push(CalibrationFlag::BracketCollapsed);
                        let dist = |r: f64| (lo_band - r).max(r - hi_band);
                        let (rl, rh) = (measure(lo)?, measure(hi)?);
                        break if dist(rl) < dist(rh) { lo } else { hi };
                    }
                    let mid = lo + (hi - lo) / 2;
                    match position(measure(mid)?) {
                        std::cmp::Ordering::Equal => break mid,
                        std::cmp::Ordering::Less => lo = mid,
                        std::cmp::Ordering::Greater => hi = mid,
                    }
                };
            }
            std::cmp::Ordering::Less => {
                if w == opts.max_walkers {
                    flags.push(CalibrationFlag::BelowBandAtCap);
                    break w;
                }
                below = Some(w);
                w = w.saturating_mul(2).min(opts.max_walkers);
            }
        }
    };

    let probes: Vec<(usize, f64)> = probes.into_iter().collect();
    if violates_monotonicity(&probes, opts.trials) {
        flags.push(CalibrationFlag::NonMonotone);
    }
    let success_rate = probes
        .iter()
        .find(|(w, _)| *w == chosen)
        .map(|p| p.1)
        .expect("chosen count was probed");
    Ok(CalibrationResult {
        n: instance.n(),
        walkers: chosen,
        success_rate,
        trials: opts.trials,
        flags,
        probes,
    })
}

/// True when a larger walker count scored lower by more than two combined
/// binomial standard errors.
fn violates_monotonicity(probes: &[(usize, f64)], trials: usize) -> bool {
    let se2 = |p: f64| p.clamp(0.05, 0.95) * (1.0 - p.clamp(0.05, 0.95)) / trials as f64;
    probes.iter().enumerate().any(|(i, &(_, ra))| {
        probes[i + 1..]
            .iter()
            .any(|&(_, rb)| ra - rb > 2.0 * (se2(ra) + se2(rb)).sqrt())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub n: usize,
    /// Mean over repetitions.
    pub cost: f64,
    /// Sample standard deviation over repetitions (0 for one repetition).
    pub std: f64,
    pub walkers: usize,
    pub timesteps: usize,
    pub dt: f64,
    /// Mean success rate over repetitions.
    pub success_rate: f64,
    /// Repetitions whose success rate was zero and so had no cost.
    pub failed_repetitions: usize,
}

/// Repeats the success measurement `repetitions` times with fresh seeds and
/// summarises the cost. Repetitions with zero successes are counted in
/// `failed_repetitions`; if all fail the cost is undefined.
pub fn repeated_cost(
    instance: &ProblemInstance,
    schedule: &Schedule,
    walkers: usize,
    repetitions: usize,
    trials: usize,
    mode: WalkerMode,
    seed: u64,
) -> Result<CostPoint, HarnessError> {
    let mut rates = Vec::with_capacity(repetitions);
    for r in 0..repetitions as u64 {
        let seeds: Vec<u64> = (0..trials as u64)
            .map(|k| derive_path(seed, &[REPETITION_STREAM, r, k]))
            .collect();
        rates.push(success_rate(instance, schedule, walkers, mode, &seeds)?);
    }
    let costs: Vec<f64> = rates
        .iter()
        .filter_map(|&p| estimate_cost(walkers, schedule.total_steps(), p).ok())
        .collect();
    if costs.is_empty() {
        return Err(HarnessError::UndefinedCost(0.0));
    }
    let m = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / m;
    let std = if costs.len() > 1 {
        (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(CostPoint {
        n: instance.n(),
        cost: mean,
        std,
        walkers,
        timesteps: schedule.total_steps(),
        dt: schedule.dt(),
        success_rate: rates.iter().sum::<f64>() / rates.len() as f64,
        failed_repetitions: repetitions - costs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesOptions {
    pub schedule_steps: usize,
    /// Step size; `None` uses [`default_dt`] at each n.
    pub dt: Option<f64>,
    pub repetitions: usize,
    pub calibration: CalibrationOptions,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            schedule_steps: DEFAULT_SCHEDULE_STEPS,
            dt: None,
            repetitions: DEFAULT_REPETITIONS,
            calibration: CalibrationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSeries {
    pub points: Vec<CostPoint>,
    pub calibrations: Vec<CalibrationResult>,
    pub failures: Vec<SeriesFailure>,
}

impl CostSeries {
    /// ln cost against √n.
    pub fn semilog_fit(&self) -> Option<LinearFit> {
        let (ns, cs) = self.columns();
        fit::semilog_sqrt(&ns, &cs)
    }

    /// ln cost against ln n.
    pub fn power_law_fit(&self) -> Option<LinearFit> {
        let (ns, cs) = self.columns();
        fit::power_law(&ns, &cs)
    }

    fn columns(&self) -> (Vec<f64>, Vec<f64>) {
        self.points.iter().map(|p| (p.n as f64, p.cost)).unzip()
    }
}

/// Calibrates walkers at every n, then measures the cost `repetitions` times.
/// Sizes run in parallel; failures at one n are recorded and skipped.
pub fn ssmc_cost_series<F>(
    n_list: &[usize],
    opts: &SeriesOptions,
    make: F,
    seed: u64,
) -> Result<CostSeries, HarnessError>
where
    F: Fn(usize) -> Result<ProblemInstance, ConfigError> + Sync,
{
    if n_list.is_empty() {
        return Err(HarnessError::EmptyNList);
    }
    let outcomes: Vec<Result<(CalibrationResult, CostPoint), HarnessError>> = n_list
        .par_iter()
        .map(|&n| {
            let instance = make(n)?;
            let dt = opts.dt.unwrap_or_else(|| default_dt(&instance));
            let schedule = Schedule::linear(opts.schedule_steps, dt).map_err(ConfigError::from)?;
            let cal = calibrate_walkers(
                &instance,
                &schedule,
                &opts.calibration,
                derive_path(seed, &[n as u64, 0]),
            )?;
            let point = repeated_cost(
                &instance,
                &schedule,
                cal.walkers,
                opts.repetitions,
                opts.calibration.trials,
                opts.calibration.mode,
                derive_path(seed, &[n as u64, 1]),
            )?;
            Ok((cal, point))
        })
        .collect();
    let mut series = CostSeries::default();
    for (&n, outcome) in n_list.iter().zip(outcomes) {
        match outcome {
            Ok((cal, point)) => {
                series.calibrations.push(cal);
                series.points.push(point);
            }
            Err(e) => series.failures.push(SeriesFailure {
                n,
                reason: e.to_string(),
            }),
        }
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeOptions {
    pub alpha: f64,
    pub walkers: usize,
    /// Anneal length is max(min_steps, steps_per_n · n).
    pub steps_per_n: usize,
    pub min_steps: usize,
    pub repetitions: usize,
    pub trials_per_rep: usize,
    pub mode: WalkerMode,
    pub scan: ScanOptions,
}

impl Default for SpikeOptions {
    fn default() -> Self {
        SpikeOptions {
            alpha: SpikeParams::DEFAULT_ALPHA,
            walkers: SPIKE_WALKERS,
            steps_per_n: 100,
            min_steps: DEFAULT_SCHEDULE_STEPS,
            repetitions: 2,
            trials_per_rep: 25,
            mode: WalkerMode::default(),
            scan: ScanOptions::default(),
        }
    }
}

impl SpikeOptions {
    pub fn timesteps(&self, n: usize) -> usize {
        self.min_steps.max(self.steps_per_n.saturating_mul(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeComparison {
    pub adiabatic: QuantumCostSeries,
    pub ssmc: Vec<CostPoint>,
    pub ssmc_failures: Vec<SeriesFailure>,
    pub adiabatic_fit: Option<LinearFit>,
    pub ssmc_fit: Option<LinearFit>,
}

impl SpikeComparison {
    /// (adiabatic exponent, SSMC exponent).
    pub fn exponents(&self) -> Result<(f64, f64), HarnessError> {
        let valid = self.adiabatic.points.len().min(self.ssmc.len());
        match (&self.adiabatic_fit, &self.ssmc_fit) {
            (Some(a), Some(b)) if valid >= 3 => Ok((a.slope, b.slope)),
            _ => Err(HarnessError::DegenerateFit { valid }),
        }
    }

    /// SSMC exponent minus adiabatic exponent.
    pub fn exponent_gap(&self) -> Result<f64, HarnessError> {
        self.exponents().map(|(a, b)| b - a)
    }
}

fn spike_instance(n: usize, alpha: f64) -> Result<ProblemInstance, ConfigError> {
    Ok(ProblemInstance::spike(SpikeParams::new(n, alpha)?))
}

/// The SSMC half of the spike comparison: fixed walkers, linear step count.
pub fn spike_ssmc_series(
    n_list: &[usize],
    opts: &SpikeOptions,
    seed: u64,
) -> Result<(Vec<CostPoint>, Vec<SeriesFailure>), HarnessError> {
    if n_list.is_empty() {
        return Err(HarnessError::EmptyNList);
    }
    let outcomes: Vec<Result<CostPoint, HarnessError>> = n_list
        .par_iter()
        .map(|&n| {
            let instance = spike_instance(n, opts.alpha)?;
            let schedule = Schedule::linear(opts.timesteps(n), default_dt(&instance))
                .map_err(ConfigError::from)?;
            repeated_cost(
                &instance,
                &schedule,
                opts.walkers,
                opts.repetitions,
                opts.trials_per_rep,
                opts.mode,
                derive_path(seed, &[n as u64]),
            )
        })
        .collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (&n, outcome) in n_list.iter().zip(outcomes) {
        match outcome {
            Ok(p) => points.push(p),
            Err(e) => failures.push(SeriesFailure {
                n,
                reason: e.to_string(),
            }),
        }
    }
    Ok((points, failures))
}

/// Adiabatic cost 1/γ_min² against SSMC cost on spike instances, each with a
/// least-squares power-law fit.
pub fn spike_comparison(
    n_list: &[usize],
    opts: &SpikeOptions,
    seed: u64,
) -> Result<SpikeComparison, HarnessError> {
    let adiabatic = quantum_cost_series(n_list, &opts.scan, |n| spike_instance(n, opts.alpha));
    let (ssmc, ssmc_failures) = spike_ssmc_series(n_list, opts, seed)?;
    let adiabatic_fit = adiabatic.loglog_fit();
    let (ns, cs): (Vec<f64>, Vec<f64>) = ssmc.iter().map(|p| (p.n as f64, p.cost)).unzip();
    let ssmc_fit = fit::power_law(&ns, &cs);
    Ok(SpikeComparison {
        adiabatic,
        ssmc,
        ssmc_failures,
        adiabatic_fit,
        ssmc_fit,
    })
}
