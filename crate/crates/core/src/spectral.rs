//! Symmetric-subspace Hamiltonian, its two lowest levels, gap curves over the
//! annealing parameter, and the adiabatic cost 1/γ².
//!
//! In the basis |φ_w⟩ of uniform superpositions over weight-w strings, the
//! transverse field −c Σ_j X_j couples only w ↔ w ± 1 with amplitude
//! −c √((w+1)(n−w)), so H(s) restricted to that block is an (n+1)×(n+1)
//! symmetric tridiagonal matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{self, LinearFit};
use crate::model::{AnnealPoint, ProblemInstance};
use crate::sturm::{self, EigenError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("gap {gap:e} at s = {s} is not strictly positive")]
    NonPositiveGap { s: f64, gap: f64 },
    #[error("coarse scan needs at least 3 points, got {0}")]
    TooFewScanPoints(usize),
}

/// Default number of coarse samples over s ∈ [0, 1].
pub const DEFAULT_COARSE_POINTS: usize = 201;
/// Default golden-section tolerance in s.
pub const DEFAULT_S_TOLERANCE: f64 = 1e-6;
/// Smallest gap accepted as strictly positive.
pub const GAP_MARGIN: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricTridiagonal {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
}

impl SymmetricTridiagonal {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self, EigenError> {
        if diag.is_empty() {
            return Err(EigenError::TooSmall(0, 1));
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(EigenError::ShapeMismatch {
                got: offdiag.len(),
                expected: diag.len() - 1,
            });
        }
        Ok(SymmetricTridiagonal { diag, offdiag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    pub fn count_below(&self, lambda: f64) -> usize {
        sturm::SturmSequence::new(&self.diag, &self.offdiag).count_below(lambda)
    }

    pub fn lowest_two_eigenvalues(&self) -> Result<(f64, f64), EigenError> {
        sturm::lowest_two(&self.diag, &self.offdiag)
    }

    /// Ground energy and the normalised, nonnegative ground-state amplitudes.
    pub fn ground_state(&self) -> Result<(f64, Vec<f64>), EigenError> {
        let e0 = sturm::lowest_eigenvalues(&self.diag, &self.offdiag, 1)?[0];
        let v = sturm::eigenvector(&self.diag, &self.offdiag, e0)?;
        Ok((e0, v))
    }
}

/// Hopping amplitude between |φ_w⟩ and |φ_{w+1}⟩, without the −c prefactor.
/// The product is formed in 128-bit integers before the square root.
#[inline]
pub fn hopping_amplitude(w: usize, n: usize) -> f64 {
    let prod = (w as u128 + 1) * (n as u128 - w as u128);
    (prod as f64).sqrt()
}

/// H(s) in the symmetric subspace: diag[w] = V(w, s), offdiag[w] =
/// −c(s) √((w+1)(n−w)). The transverse field contributes no diagonal.
pub fn build_tridiagonal(instance: &ProblemInstance, s: AnnealPoint) -> SymmetricTridiagonal {
    build_at(instance, s.value())
}

fn build_at(instance: &ProblemInstance, s: f64) -> SymmetricTridiagonal {
    let n = instance.n();
    let mut diag = vec![0.0; n + 1];
    instance.fill_potential(s, &mut diag);
    let c = instance.hopping_scale(s);
    let offdiag = (0..n).map(|w| -c * hopping_amplitude(w, n)).collect();
    SymmetricTridiagonal { diag, offdiag }
}

fn gap_raw(instance: &ProblemInstance, s: f64) -> Result<f64, SpectralError> {
    let (e0, e1) = build_at(instance, s).lowest_two_eigenvalues()?;
    let gap = e1 - e0;
    if gap > GAP_MARGIN {
        Ok(gap)
    } else {
        Err(SpectralError::NonPositiveGap { s, gap })
    }
}

/// γ(s) = E1 − E0 of the symmetric block.
pub fn gap_at(instance: &ProblemInstance, s: AnnealPoint) -> Result<f64, SpectralError> {
    gap_raw(instance, s.value())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    /// (s, γ(s)) pairs sorted by s: the coarse scan plus refinement probes.
    pub samples: Vec<(f64, f64)>,
    pub gamma_min: f64,
    pub s_star: f64,
    /// Adiabatic cost 1/γ_min².
    pub cost: f64,
    /// The coarse minimum sat at s = 0 or s = 1 and was refined one-sidedly.
    pub boundary_minimum: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub coarse_points: usize,
    pub tolerance: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            coarse_points: DEFAULT_COARSE_POINTS,
            tolerance: DEFAULT_S_TOLERANCE,
        }
    }
}

/// Uniform coarse scan over s followed by golden-section refinement around
/// the coarse minimum.
pub fn min_gap_scan(
    instance: &ProblemInstance,
    coarse_points: usize,
) -> Result<GapCurve, SpectralError> {
    min_gap_scan_with(
        instance,
        &ScanOptions {
            coarse_points,
            ..ScanOptions::default()
        },
    )
}

pub fn min_gap_scan_with(
    instance: &ProblemInstance,
    opts: &ScanOptions,
) -> Result<GapCurve, SpectralError> {
    scan_minimum(|s| gap_raw(instance, s), opts)
}

/// Coarse-then-golden-section minimisation of any positive function of s.
fn scan_minimum<F>(f: F, opts: &ScanOptions) -> Result<GapCurve, SpectralError>
where
    F: Fn(f64) -> Result<f64, SpectralError> + Sync,
{
    let m = opts.coarse_points;
    if m < 3 {
        return Err(SpectralError::TooFewScanPoints(m));
    }
    let grid: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let coarse: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&s| f(s).map(|g| (s, g)))
        .collect::<Result<_, _>>()?;

    let k = coarse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let boundary_minimum = k == 0 || k == m - 1;
    let lo = grid[k.saturating_sub(1)];
    let hi = grid[(k + 1).min(m - 1)];

    let mut samples = coarse.clone();
    let (mut s_star, mut gamma_min) = coarse[k];
    golden_section(lo, hi, opts.tolerance, |s| {
        let g = f(s)?;
        samples.push((s, g));
        if g < gamma_min {
            gamma_min = g;
            s_star = s;
        }
        Ok(g)
    })?;
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));

    Ok(GapCurve {
        samples,
        gamma_min,
        s_star,
        cost: 1.0 / (gamma_min * gamma_min),
        boundary_minimum,
    })
}

fn golden_section<F>(mut a: f64, mut b: f64, tol: f64, mut f: F) -> Result<(), SpectralError>
where
    F: FnMut(f64) -> Result<f64, SpectralError>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumCostPoint {
    pub n: usize,
    pub s_star: f64,
    pub gamma_min: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFailure {
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuantumCostSeries {
    pub points: Vec<QuantumCostPoint>,
    pub failures: Vec<SeriesFailure>,
}

impl QuantumCostSeries {
    /// Least-squares fit of log cost against log n; `None` for fewer than two points.
    pub fn loglog_fit(&self) -> Option<LinearFit> {
        let ns: Vec<f64> = self.points.iter().map(|p| p.n as f64).collect();
        let cs: Vec<f64> = self.points.iter().map(|p| p.cost).collect();
        fit::power_law(&ns, &cs)
    }
}

/// Minimum-gap scan at every n; instance construction or solver failures are
/// recorded and the series continues.
pub fn quantum_cost_series<F, E>(n_list: &[usize], opts: &ScanOptions, make: F) -> QuantumCostSeries
where
    F: Fn(usize) -> Result<ProblemInstance, E>,
    E: std::fmt::Display,
{
    let mut series = QuantumCostSeries::default();
    for &n in n_list {
        let outcome = make(n)
            .map_err(|e| e.to_string())
            .and_then(|inst| min_gap_scan_with(&inst, opts).map_err(|e| e.to_string()));
        match outcome {
            Ok(curve) => series.points.push(QuantumCostPoint {
                n,
                s_star: curve.s_star,
                gamma_min: curve.gamma_min,
                cost: curve.cost,
            }),
            Err(reason) => series.failures.push(SeriesFailure { n, reason }),
        }
    }
    series
}
