//! Closed-form layer for the double well: tight-binding gap, harmonic
//! (Gaussian) well states, the weight distribution D(w) that converged walkers
//! follow, the right-well mass P_R, and a finite-difference model of the
//! continuum Hamiltonian −½ d²/dw² + V_q + V_l used to validate the lattice.
//!
//! Well variance. Expanding V_q to second order about either minimum gives a
//! curvature of ω²/n² in x = w/n, i.e. ω²/n⁴ per lattice site². With the
//! kinetic term −½ d²/dw² the harmonic ground state is
//! φ(w) ∝ exp(−(w − w_c)²/(2σ²)) with σ² = n²/ω.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::model::{AnnealPoint, DoubleWellParams, ProblemInstance};
use crate::potentials;
use crate::spectral::{self, SpectralError, SymmetricTridiagonal};
use crate::sturm::{self, EigenError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("wavefunction has no positive support where the binomial weight is finite")]
    EmptySupport,
    #[error("wavefunction amplitude {value} at w = {w} is negative or not finite")]
    InvalidAmplitude { w: usize, value: f64 },
    #[error("wavefunction has length {0}, need n + 1 >= 2")]
    BadLength(usize),
    #[error("continuum grid needs at least {min} points, got {got}")]
    TooFewGridPoints { got: usize, min: usize },
    #[error("continuum grid resolves the well width with {0:.2} points per sigma (need >= 10)")]
    GridTooCoarse(f64),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Largest n accepted by the log-domain binomial weights.
pub const MAX_DISTRIBUTION_N: usize = 1 << 30;
pub const MIN_CONTINUUM_GRID_POINTS: usize = 100;
const MIN_POINTS_PER_SIGMA: f64 = 10.0;
/// Half-width of the continuum box beyond each well, in units of σ.
const CONTINUUM_MARGIN_SIGMAS: f64 = 5.0;

/// ln C(n, w) through log-gamma.
pub fn ln_binomial(n: usize, w: usize) -> f64 {
    debug_assert!(w <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(w as f64 + 1.0) - ln_gamma((n - w) as f64 + 1.0)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightBindingEstimate {
    pub gamma: f64,
    /// δ²ω; the estimate is positive only for δ²ω > 3.
    pub delta_sq_omega: f64,
    pub in_regime: bool,
}

/// γ ≈ e^{−δ²ω/4}(δ²ω − 3)/(8δ²n²).
pub fn tight_binding_gap(p: &DoubleWellParams) -> TightBindingEstimate {
    let k = p.delta() * p.delta() * p.omega();
    let nf = p.n() as f64;
    let gamma = (-k / 4.0).exp() * (k - 3.0) / (8.0 * p.delta() * p.delta() * nf * nf);
    TightBindingEstimate {
        gamma,
        delta_sq_omega: k,
        in_regime: k > 3.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Well {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightBindingModel {
    pub left_center: f64,
    pub right_center: f64,
    pub variance: f64,
    pub gamma_tb: TightBindingEstimate,
}

impl TightBindingModel {
    pub fn new(p: &DoubleWellParams) -> Self {
        TightBindingModel {
            left_center: p.left_well_position(),
            right_center: p.right_well_position(),
            variance: p.well_variance(),
            gamma_tb: tight_binding_gap(p),
        }
    }

    pub fn center(&self, which: Well) -> f64 {
        match which {
            Well::Left => self.left_center,
            Well::Right => self.right_center,
        }
    }
}

/// Real amplitudes over Hamming weights 0..=n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wavefunction {
    pub amplitudes: Vec<f64>,
}

impl Wavefunction {
    pub fn n(&self) -> usize {
        self.amplitudes.len().saturating_sub(1)
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum()
    }
}

/// Lattice-normalised harmonic ground state of one well.
pub fn gaussian_well(p: &DoubleWellParams, which: Well) -> Wavefunction {
    let model = TightBindingModel::new(p);
    let c = model.center(which);
    let var = model.variance;
    let logs: Vec<f64> = (0..=p.n())
        .map(|w| -(w as f64 - c).powi(2) / (2.0 * var))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut amplitudes: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let norm = amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
    amplitudes.iter_mut().for_each(|a| *a /= norm);
    Wavefunction { amplitudes }
}

/// Probability distribution over Hamming weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammingDistribution {
    weights: Vec<f64>,
    #[serde(skip)]
    log_weights: Vec<f64>,
}

impl HammingDistribution {
    /// Builds from unnormalised log weights (−∞ allowed).
    fn from_log_weights(log_weights: Vec<f64>) -> Result<Self, AnalyticsError> {
        let total = log_sum_exp(log_weights.iter().cloned());
        if !total.is_finite() {
            return Err(AnalyticsError::EmptySupport);
        }
        let log_weights: Vec<f64> = log_weights.iter().map(|l| l - total).collect();
        let mut weights: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|x| *x /= sum);
        Ok(HammingDistribution {
            weights,
            log_weights,
        })
    }

    /// Normalises a nonnegative histogram or weight vector.
    pub fn from_weights(raw: &[f64]) -> Result<Self, AnalyticsError> {
        if raw.len() < 2 {
            return Err(AnalyticsError::BadLength(raw.len()));
        }
        let mut logs = Vec::with_capacity(raw.len());
        for (w, &v) in raw.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AnalyticsError::InvalidAmplitude { w, value: v });
            }
            logs.push(if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
        }
        Self::from_log_weights(logs)
    }

    pub fn n(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self) -> usize {
        (0..self.weights.len())
            .max_by(|&a, &b| self.weights[a].total_cmp(&self.weights[b]))
            .unwrap_or(0)
    }

    /// ln Σ_{w ≥ from} D(w), accurate even when the tail underflows.
    pub fn ln_tail_mass(&self, from: usize) -> f64 {
        if from >= self.weights.len() {
            return f64::NEG_INFINITY;
        }
        log_sum_exp(self.log_weights[from..].iter().cloned())
    }

    pub fn tail_mass(&self, from: usize) -> f64 {
        self.ln_tail_mass(from).exp().min(1.0)
    }
}

/// D(w) ∝ √C(n, w) φ(w): the weight marginal of a distribution over bit
/// strings proportional to the amplitudes φ in the symmetric basis.
pub fn classical_distribution(phi: &Wavefunction) -> Result<HammingDistribution, AnalyticsError> {
    let len = phi.amplitudes.len();
    if len < 2 || len - 1 > MAX_DISTRIBUTION_N {
        return Err(AnalyticsError::BadLength(len));
    }
    let n = len - 1;
    let mut logs = Vec::with_capacity(len);
    for (w, &a) in phi.amplitudes.iter().enumerate() {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(AnalyticsError::InvalidAmplitude { w, value: a });
        }
        logs.push(if a > 0.0 {
            0.5 * ln_binomial(n, w) + a.ln()
        } else {
            f64::NEG_INFINITY
        });
    }
    HammingDistribution::from_log_weights(logs)
}

/// Exact weight marginal of the instantaneous ground state at `s`, from the
/// symmetric-subspace ground eigenvector.
pub fn ground_state_distribution(
    instance: &ProblemInstance,
    s: AnnealPoint,
) -> Result<HammingDistribution, AnalyticsError> {
    let (_, v) = spectral::build_tridiagonal(instance, s).ground_state()?;
    // Inverse iteration can leave tiny negative round-off in the tails.
    let amplitudes = v.into_iter().map(|a| a.max(0.0)).collect();
    classical_distribution(&Wavefunction { amplitudes })
}

/// ln P_R with P_R = Σ_{w ≥ w_R} D(w), D built on the left-well Gaussian and
/// w_R = round(n/2 + δn).
pub fn ln_right_well_mass_exact(p: &DoubleWellParams) -> Result<f64, AnalyticsError> {
    let d = classical_distribution(&gaussian_well(p, Well::Left))?;
    Ok(d.ln_tail_mass(p.right_well_site()))
}

pub fn right_well_mass_exact(p: &DoubleWellParams) -> Result<f64, AnalyticsError> {
    ln_right_well_mass_exact(p).map(f64::exp)
}

/// ln of the Gaussian-limit closed form (1/(2√π)) exp[−δ²(n + ω/2)].
pub fn ln_right_well_mass_approx(p: &DoubleWellParams) -> f64 {
    let d2 = p.delta() * p.delta();
    -(2.0 * std::f64::consts::PI.sqrt()).ln() - d2 * (p.n() as f64 + p.omega() / 2.0)
}

pub fn right_well_mass_approx(p: &DoubleWellParams) -> f64 {
    ln_right_well_mass_approx(p).exp()
}

/// Closed-form predictions next to their exact lattice counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub n: usize,
    pub gamma_tb: f64,
    /// Lattice gap at s = ½.
    pub gamma_exact: f64,
    pub pr_exact: f64,
    pub pr_approx: f64,
}

pub fn predictions(p: &DoubleWellParams) -> Result<Predictions, AnalyticsError> {
    let instance = ProblemInstance::double_well(*p);
    Ok(Predictions {
        n: p.n(),
        gamma_tb: tight_binding_gap(p).gamma,
        gamma_exact: spectral::gap_at(&instance, AnnealPoint::HALF)?,
        pr_exact: right_well_mass_exact(p)?,
        pr_approx: right_well_mass_approx(p),
    })
}

/// Finite-difference discretisation of −½ d²/dw² + V_q(w) + V_l(w, s) on the
/// box [n/2 − 5σ, n/2 + δn + 5σ] with hard walls.
#[derive(Debug, Clone)]
pub struct ContinuumModel {
    /// Interior grid positions (in Hamming-weight units).
    pub positions: Vec<f64>,
    pub spacing: f64,
    pub matrix: SymmetricTridiagonal,
}

impl ContinuumModel {
    pub fn new(
        p: &DoubleWellParams,
        s: AnnealPoint,
        grid_points: usize,
    ) -> Result<Self, AnalyticsError> {
        if grid_points < MIN_CONTINUUM_GRID_POINTS {
            return Err(AnalyticsError::TooFewGridPoints {
                got: grid_points,
                min: MIN_CONTINUUM_GRID_POINTS,
            });
        }
        let sigma = p.well_variance().sqrt();
        let lo = p.left_well_position() - CONTINUUM_MARGIN_SIGMAS * sigma;
        let hi = p.right_well_position() + CONTINUUM_MARGIN_SIGMAS * sigma;
        let h = (hi - lo) / (grid_points as f64 + 1.0);
        if sigma / h < MIN_POINTS_PER_SIGMA {
            return Err(AnalyticsError::GridTooCoarse(sigma / h));
        }
        let positions: Vec<f64> = (1..=grid_points).map(|i| lo + h * i as f64).collect();
        let kinetic = 1.0 / (h * h);
        let diag = positions
            .iter()
            .map(|&w| {
                kinetic + potentials::quartic_at(w, p) + potentials::linear_at(w, s.value(), p)
            })
            .collect();
        let off = vec![-0.5 * kinetic; grid_points - 1];
        let matrix = SymmetricTridiagonal::new(diag, off)?;
        Ok(ContinuumModel {
            positions,
            spacing: h,
            matrix,
        })
    }

    pub fn gap(&self) -> Result<f64, AnalyticsError> {
        let (e0, e1) = self.matrix.lowest_two_eigenvalues()?;
        Ok(e1 - e0)
    }

    /// Ground-state probability density |ψ|² on the grid, summing to one.
    pub fn ground_density(&self) -> Result<Vec<f64>, AnalyticsError> {
        let (e0, _) = self.matrix.lowest_two_eigenvalues()?;
        let v = sturm::eigenvector(self.matrix.diag(), self.matrix.offdiag(), e0)?;
        Ok(v.iter().map(|a| a * a).collect())
    }
}

/// Continuum-limit gap at s = 1/2, where V_l vanishes and V_fict has been
/// cancelled analytically.
pub fn continuum_gap(p: &DoubleWellParams, grid_points: usize) -> Result<f64, AnalyticsError> {
    ContinuumModel::new(p, AnnealPoint::HALF, grid_points)?.gap()
}
