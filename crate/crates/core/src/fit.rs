//! Ordinary least-squares line fits used for scaling exponents.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// y_i − (slope·x_i + intercept), in input order.
    pub residuals: Vec<f64>,
}

impl LinearFit {
    /// `None` when fewer than two points are given, the lengths differ, any
    /// value is non-finite, or every x is identical.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return None;
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return None;
        }
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        if sxx == 0.0 {
            return None;
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let residuals: Vec<f64> = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| y - (slope * x + intercept))
            .collect();
        let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
        let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
        Some(LinearFit {
            slope,
            intercept,
            r_squared,
            residuals,
        })
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Lag-one autocorrelation of the residuals; values near +1 indicate
    /// systematic curvature the straight line does not capture.
    pub fn residual_autocorrelation(&self) -> Option<f64> {
        let r = &self.residuals;
        if r.len() < 3 {
            return None;
        }
        let denom: f64 = r.iter().map(|v| v * v).sum();
        if denom == 0.0 {
            return Some(0.0);
        }
        let num: f64 = r.windows(2).map(|w| w[0] * w[1]).sum();
        Some(num / denom)
    }
}

/// Fit of ln y against ln x; the slope is the power-law exponent.
pub fn power_law(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.iter().chain(ys).any(|v| *v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    LinearFit::fit(&lx, &ly)
}

/// Fit of ln y against √x, the natural coordinates for exp[O(√n)] growth.
pub fn semilog_sqrt(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.iter().any(|x| *x < 0.0) || ys.iter().any(|y| *y <= 0.0) {
        return None;
    }
    let sx: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    LinearFit::fit(&sx, &ly)
}
