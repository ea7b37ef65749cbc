//! Hamming-weight potentials: the quartic double well, its tilt, the
//! fictitious-potential counterterm, their sum, and the spike barrier.
//!
//! The checked functions validate `w ∈ [0, n]`; the `*_at` variants take a
//! real-valued weight and skip validation, for use in inner loops and in the
//! continuum model.

use serde::{Deserialize, Serialize};

use crate::model::{AnnealPoint, DoubleWellParams, ModelError};

fn check_weight(w: usize, n: usize) -> Result<(), ModelError> {
    if w > n {
        Err(ModelError::WeightOutOfRange { w, n })
    } else {
        Ok(())
    }
}

/// Offset from the barrier top: x = w/n − 1/2 − δ/2.
#[inline]
fn barrier_offset(w: f64, p: &DoubleWellParams) -> f64 {
    w / p.n() as f64 - 0.5 - p.delta() / 2.0
}

#[inline]
pub fn quartic_at(w: f64, p: &DoubleWellParams) -> f64 {
    let nf = p.n() as f64;
    let om2 = p.omega() * p.omega();
    let x = barrier_offset(w, p);
    let x2 = x * x;
    om2 / (2.0 * p.delta() * p.delta() * nf * nf) * x2 * x2 - om2 / (4.0 * nf * nf) * x2
}

#[inline]
pub fn linear_at(w: f64, s: f64, p: &DoubleWellParams) -> f64 {
    p.tau() * (1.0 - 2.0 * s) * barrier_offset(w, p)
}

#[inline]
pub fn fict_at(w: f64, n: usize) -> f64 {
    let nf = n as f64;
    let y = w / nf - 0.5;
    let y2 = y * y;
    -(2.0 / nf) * y2 + 2.0 * y2 + 2.0 * y2 * y2 + 4.0 * y2 * y2 * y2
}

#[inline]
pub fn total_at(w: f64, s: f64, p: &DoubleWellParams) -> f64 {
    quartic_at(w, p) + linear_at(w, s, p) - fict_at(w, p.n())
}

/// V_q(w): symmetric quartic double well with minima at n/2 and n/2 + δn.
pub fn v_quartic(w: usize, p: &DoubleWellParams) -> Result<f64, ModelError> {
    check_weight(w, p.n())?;
    Ok(quartic_at(w as f64, p))
}

/// V_l(w, s) = τ(1 − 2s)(w/n − 1/2 − δ/2).
pub fn v_linear(w: usize, s: AnnealPoint, p: &DoubleWellParams) -> Result<f64, ModelError> {
    check_weight(w, p.n())?;
    Ok(linear_at(w as f64, s.value(), p))
}

/// V_fict(w) = −(2/n)y² + 2y² + 2y⁴ + 4y⁶ with y = w/n − 1/2.
pub fn v_fict(w: usize, n: usize) -> Result<f64, ModelError> {
    check_weight(w, n)?;
    Ok(fict_at(w as f64, n))
}

/// V(w, s) = V_q + V_l − V_fict, the potential the walkers see.
pub fn v_total(w: usize, s: AnnealPoint, p: &DoubleWellParams) -> Result<f64, ModelError> {
    check_weight(w, p.n())?;
    Ok(total_at(w as f64, s.value(), p))
}

/// Spike benchmark: linear ramp with a rectangular barrier of height and
/// width n^α centred at n/4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpike")]
pub struct SpikeParams {
    n: usize,
    alpha: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpike {
    n: usize,
    alpha: f64,
}

impl TryFrom<RawSpike> for SpikeParams {
    type Error = ModelError;

    fn try_from(r: RawSpike) -> Result<Self, ModelError> {
        SpikeParams::new(r.n, r.alpha)
    }
}

impl SpikeParams {
    pub const DEFAULT_ALPHA: f64 = 0.4;

    /// Accepts α ∈ [0, 1). α = 0 (a unit-height barrier) is allowed but sits
    /// outside the tunnelling regime; see [`SpikeParams::in_tunnelling_regime`].
    pub fn new(n: usize, alpha: f64) -> Result<Self, ModelError> {
        if n < 4 {
            return Err(ModelError::TooFewQubits(n, 4));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(ModelError::OutOfRange {
                name: "alpha",
                value: alpha,
                expected: "0 <= alpha < 1",
            });
        }
        let p = SpikeParams { n, alpha };
        let nf = n as f64;
        if p.height() / 2.0 >= nf / 4.0 {
            return Err(ModelError::OutOfRange {
                name: "alpha",
                value: alpha,
                expected: "spike window n/4 ± n^alpha/2 inside (0, n)",
            });
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Barrier height and width, n^α.
    pub fn height(&self) -> f64 {
        (self.n as f64).powf(self.alpha)
    }

    pub fn center(&self) -> f64 {
        self.n as f64 / 4.0
    }

    pub fn in_tunnelling_regime(&self) -> bool {
        self.alpha > 0.0
    }

    /// Whether `w` lies strictly inside the barrier window |w − n/4| < n^α/2.
    #[inline]
    pub fn in_barrier(&self, w: usize) -> bool {
        (w as f64 - self.center()).abs() < self.height() / 2.0
    }
}

#[inline]
pub fn spike_at(w: usize, p: &SpikeParams) -> f64 {
    if p.in_barrier(w) {
        w as f64 + p.height()
    } else {
        w as f64
    }
}

pub fn v_spike(w: usize, p: &SpikeParams) -> Result<f64, ModelError> {
    check_weight(w, p.n())?;
    Ok(spike_at(w, p))
}
