//! Problem instances, annealing schedules and the shared vocabulary
//! (Hamming weight, annealing parameter) used by the rest of the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potentials::{self, SpikeParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("qubit count n = {0} is too small (need n >= {1})")]
    TooFewQubits(usize, usize),
    #[error("parameter {name} = {value} is out of range ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("Hamming weight {w} outside [0, {n}]")]
    WeightOutOfRange { w: usize, n: usize },
    #[error("right well site {site} falls outside the lattice [0, {n}]")]
    WellOffGrid { site: i64, n: usize },
}

/// Smallest qubit count for which both wells sit strictly inside the lattice.
pub const MIN_DOUBLE_WELL_QUBITS: usize = 4;

/// Parameters (n, ω, δ, τ) of the 6-local double-well counterexample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDoubleWell")]
pub struct DoubleWellParams {
    n: usize,
    omega: f64,
    delta: f64,
    tau: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoubleWell {
    n: usize,
    omega: f64,
    delta: f64,
    tau: f64,
}

impl TryFrom<RawDoubleWell> for DoubleWellParams {
    type Error = ModelError;

    fn try_from(r: RawDoubleWell) -> Result<Self, ModelError> {
        DoubleWellParams::new(r.n, r.omega, r.delta, r.tau)
    }
}

impl DoubleWellParams {
    pub fn new(n: usize, omega: f64, delta: f64, tau: f64) -> Result<Self, ModelError> {
        if n < MIN_DOUBLE_WELL_QUBITS {
            return Err(ModelError::TooFewQubits(n, MIN_DOUBLE_WELL_QUBITS));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(ModelError::OutOfRange {
                name: "omega",
                value: omega,
                expected: "omega > 0",
            });
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(ModelError::OutOfRange {
                name: "delta",
                value: delta,
                expected: "0 < delta < 1/2",
            });
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(ModelError::OutOfRange {
                name: "tau",
                value: tau,
                expected: "tau > 0",
            });
        }
        let params = DoubleWellParams {
            n,
            omega,
            delta,
            tau,
        };
        let site = params.right_well_position().round() as i64;
        if site < 0 || site > n as i64 {
            return Err(ModelError::WellOffGrid { site, n });
        }
        Ok(params)
    }

    /// ω = 260√n, δ = 0.1 (100/n)^{1/4}, τ = 1000 / n^{5/4}.
    pub fn default_for(n: usize) -> Result<Self, ModelError> {
        if n < MIN_DOUBLE_WELL_QUBITS {
            return Err(ModelError::TooFewQubits(n, MIN_DOUBLE_WELL_QUBITS));
        }
        let nf = n as f64;
        Self::new(
            n,
            260.0 * nf.sqrt(),
            0.1 * (100.0 / nf).powf(0.25),
            1000.0 / nf.powf(1.25),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Left well centre n/2 (real valued).
    pub fn left_well_position(&self) -> f64 {
        self.n as f64 / 2.0
    }

    /// Right well centre n/2 + δn (real valued).
    pub fn right_well_position(&self) -> f64 {
        self.n as f64 / 2.0 + self.delta * self.n as f64
    }

    /// Lattice site of the left well, n/2 rounded half away from zero.
    pub fn left_well_site(&self) -> usize {
        self.left_well_position().round() as usize
    }

    /// Lattice site of the right well, round(n/2 + δn).
    pub fn right_well_site(&self) -> usize {
        self.right_well_position().round() as usize
    }

    /// Harmonic variance of each well's ground state in lattice-site² units, n²/ω.
    pub fn well_variance(&self) -> f64 {
        let nf = self.n as f64;
        nf * nf / self.omega
    }
}

/// Annealing parameter s ∈ [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AnnealPoint(f64);

impl AnnealPoint {
    pub fn new(s: f64) -> Result<Self, ModelError> {
        if (0.0..=1.0).contains(&s) {
            Ok(AnnealPoint(s))
        } else {
            Err(ModelError::OutOfRange {
                name: "s",
                value: s,
                expected: "0 <= s <= 1",
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub const HALF: AnnealPoint = AnnealPoint(0.5);
    pub const START: AnnealPoint = AnnealPoint(0.0);
    pub const END: AnnealPoint = AnnealPoint(1.0);
}

impl TryFrom<f64> for AnnealPoint {
    type Error = ModelError;

    fn try_from(s: f64) -> Result<Self, Self::Error> {
        AnnealPoint::new(s)
    }
}

impl From<AnnealPoint> for f64 {
    fn from(s: AnnealPoint) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// s(t) = t / T
    #[default]
    Linear,
}

/// Discrete annealing schedule: `total_steps` timesteps of length `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    total_steps: usize,
    dt: f64,
    #[serde(default)]
    interpolation: Interpolation,
}

impl Schedule {
    pub fn linear(total_steps: usize, dt: f64) -> Result<Self, ModelError> {
        if total_steps == 0 {
            return Err(ModelError::OutOfRange {
                name: "total_steps",
                value: 0.0,
                expected: "total_steps >= 1",
            });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ModelError::OutOfRange {
                name: "dt",
                value: dt,
                expected: "dt > 0",
            });
        }
        Ok(Schedule {
            total_steps,
            dt,
            interpolation: Interpolation::Linear,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn with_dt(self, dt: f64) -> Result<Self, ModelError> {
        Schedule::linear(self.total_steps, dt)
    }

    /// Annealing parameter at step `t`; steps past the end clamp to s = 1.
    pub fn s_at(&self, t: usize) -> f64 {
        match self.interpolation {
            Interpolation::Linear => {
                if t >= self.total_steps {
                    1.0
                } else {
                    t as f64 / self.total_steps as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    DoubleWell,
    Spike,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::DoubleWell => "double_well",
            ProblemKind::Spike => "spike",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Problem {
    DoubleWell(DoubleWellParams),
    Spike(SpikeParams),
}

/// A Hamming-weight-symmetric Hamiltonian H(s) = hopping(s) + V(Σ Z̄_j, s).
///
/// The double well uses the fixed transverse field −(1/n) Σ X_j with s entering
/// only through the tilt. The spike uses (1−s) Σ (1−X_j)/2 + s·v_spike, whose
/// uniform diagonal (1−s)n/2 is dropped since it shifts every level equally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    problem: Problem,
}

impl ProblemInstance {
    pub fn double_well(params: DoubleWellParams) -> Self {
        ProblemInstance {
            problem: Problem::DoubleWell(params),
        }
    }

    pub fn spike(params: SpikeParams) -> Self {
        ProblemInstance {
            problem: Problem::Spike(params),
        }
    }

    pub fn kind(&self) -> ProblemKind {
        match self.problem {
            Problem::DoubleWell(_) => ProblemKind::DoubleWell,
            Problem::Spike(_) => ProblemKind::Spike,
        }
    }

    pub fn n(&self) -> usize {
        match &self.problem {
            Problem::DoubleWell(p) => p.n(),
            Problem::Spike(p) => p.n(),
        }
    }

    pub fn double_well_params(&self) -> Option<&DoubleWellParams> {
        match &self.problem {
            Problem::DoubleWell(p) => Some(p),
            Problem::Spike(_) => None,
        }
    }

    pub fn spike_params(&self) -> Option<&SpikeParams> {
        match &self.problem {
            Problem::Spike(p) => Some(p),
            Problem::DoubleWell(_) => None,
        }
    }

    /// Diagonal potential V(w, s). No range checks; w must be in [0, n].
    #[inline]
    pub fn potential(&self, w: usize, s: f64) -> f64 {
        match &self.problem {
            Problem::DoubleWell(p) => potentials::total_at(w as f64, s, p),
            Problem::Spike(p) => s * potentials::spike_at(w, p),
        }
    }

    /// Writes V(w, s) for every w ∈ [0, n] into `out`.
    pub fn fill_potential(&self, s: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n() + 1);
        for (w, v) in out.iter_mut().enumerate() {
            *v = self.potential(w, s);
        }
    }

    /// Per-neighbour hopping amplitude: the coefficient c in −c Σ_j X_j.
    #[inline]
    pub fn hopping_scale(&self, s: f64) -> f64 {
        match &self.problem {
            Problem::DoubleWell(p) => 1.0 / p.n() as f64,
            Problem::Spike(_) => (1.0 - s) / 2.0,
        }
    }

    /// Global minimiser of the final (s = 1) potential, the site a successful
    /// run must occupy. For the double well this is round(n/2 + δn) at small
    /// n; −V_fict shifts it to the right as n grows. Ties go to the smaller w.
    pub fn target_site(&self) -> usize {
        match &self.problem {
            Problem::DoubleWell(_) => {
                (0..=self.n())
                    .map(|w| (w, self.potential(w, 1.0)))
                    .fold(
                        (0, f64::INFINITY),
                        |best, (w, v)| if v < best.1 { (w, v) } else { best },
                    )
                    .0
            }
            Problem::Spike(_) => 0,
        }
    }
}
