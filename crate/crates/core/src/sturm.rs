//! Sturm-sequence bisection and inverse iteration for real symmetric
//! tridiagonal matrices.
//!
//! Everything here works on borrowed slices (`diag` of length m, `off` of
//! length m − 1) and uses O(m) memory, so matrices with 10⁵–10⁶ rows are fine.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("matrix has dimension {0}, need at least {1}")]
    TooSmall(usize, usize),
    #[error("off-diagonal has length {got}, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("bisection for eigenvalue {index} did not converge in {iterations} steps")]
    NoConvergence { index: usize, iterations: usize },
}

const MAX_BISECTIONS: usize = 2200;

fn validate(diag: &[f64], off: &[f64], need: usize) -> Result<(), EigenError> {
    if diag.len() < need {
        return Err(EigenError::TooSmall(diag.len(), need));
    }
    if off.len() + 1 != diag.len() {
        return Err(EigenError::ShapeMismatch {
            got: off.len(),
            expected: diag.len() - 1,
        });
    }
    if diag.iter().chain(off).any(|v| !v.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    Ok(())
}

/// Gershgorin interval containing the whole spectrum.
pub fn gershgorin_bounds(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let m = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let left = if i > 0 { off[i - 1].abs() } else { 0.0 };
        let right = if i + 1 < m { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - left - right);
        hi = hi.max(diag[i] + left + right);
    }
    (lo, hi)
}

/// Precomputed squares of the off-diagonal plus the pivot floor used by the
/// Sturm recurrence.
#[derive(Debug, Clone)]
pub struct SturmSequence<'a> {
    diag: &'a [f64],
    off_sq: Vec<f64>,
    pivmin: f64,
}

impl<'a> SturmSequence<'a> {
    pub fn new(diag: &'a [f64], off: &[f64]) -> Self {
        let off_sq: Vec<f64> = off.iter().map(|e| e * e).collect();
        let max_sq = off_sq.iter().cloned().fold(1.0, f64::max);
        SturmSequence {
            diag,
            off_sq,
            pivmin: f64::MIN_POSITIVE * max_sq,
        }
    }

    /// Number of eigenvalues strictly less than `lambda` (count of negative
    /// pivots in the LDLᵀ factorisation of T − λI).
    pub fn count_below(&self, lambda: f64) -> usize {
        let mut count = 0usize;
        let mut q = self.diag[0] - lambda;
        if q.abs() < self.pivmin {
            q = -self.pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for (d, e2) in self.diag[1..].iter().zip(&self.off_sq) {
            q = (d - lambda) - e2 / q;
            if q.abs() < self.pivmin {
                q = -self.pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }
}

/// Bisection stops once the bracket cannot be split further in floating point.
#[inline]
fn converged(lo: f64, hi: f64) -> bool {
    let mid = 0.5 * (lo + hi);
    mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs())
}

/// The `k` smallest eigenvalues in ascending order, each bisected to full
/// double precision. Brackets are shared: every probe of eigenvalue i also
/// narrows the brackets of i+1, …, k−1.
pub fn lowest_eigenvalues(diag: &[f64], off: &[f64], k: usize) -> Result<Vec<f64>, EigenError> {
    validate(diag, off, k.max(1))?;
    let (glo, ghi) = gershgorin_bounds(diag, off);
    let pad = f64::EPSILON * glo.abs().max(ghi.abs()).max(1.0) * 4.0;
    let seq = SturmSequence::new(diag, off);
    let mut lo = vec![glo - pad; k];
    let mut hi = vec![ghi + pad; k];
    let mut out = Vec::with_capacity(k);
    for index in 0..k {
        let (mut a, mut b) = (lo[index], hi[index]);
        let mut iterations = 0;
        while !converged(a, b) {
            iterations += 1;
            if iterations > MAX_BISECTIONS {
                return Err(EigenError::NoConvergence { index, iterations });
            }
            let mid = 0.5 * (a + b);
            let c = seq.count_below(mid);
            // c eigenvalues lie below mid: λ_j < mid for j < c, λ_j ≥ mid for j ≥ c.
            for j in index..k {
                if j < c {
                    hi[j] = hi[j].min(mid);
                } else {
                    lo[j] = lo[j].max(mid);
                }
            }
            a = lo[index];
            b = hi[index];
        }
        out.push(0.5 * (a + b));
    }
    Ok(out)
}

/// Ground and first excited eigenvalues (E0, E1), E0 ≤ E1.
pub fn lowest_two(diag: &[f64], off: &[f64]) -> Result<(f64, f64), EigenError> {
    let ev = lowest_eigenvalues(diag, off, 2)?;
    Ok((ev[0], ev[1]))
}

/// LU factorisation with partial pivoting of a tridiagonal matrix
/// (sub `dl`, diag `d`, super `du`); fills the second superdiagonal `du2`.
struct TridiagonalLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    fn factor(mut dl: Vec<f64>, mut d: Vec<f64>, mut du: Vec<f64>, tiny: f64) -> Self {
        let m = d.len();
        let mut du2 = vec![0.0; m.saturating_sub(2)];
        let mut swapped = vec![false; m.saturating_sub(1)];
        for i in 0..m.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < m {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        if m > 0 && d[m - 1] == 0.0 {
            d[m - 1] = tiny;
        }
        TridiagonalLu {
            dl,
            d,
            du,
            du2,
            swapped,
        }
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let m = self.d.len();
        for i in 0..m.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i] - self.dl[i] * b[i + 1];
                b[i] = b[i + 1];
                b[i + 1] = temp;
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[m - 1] /= self.d[m - 1];
        if m > 1 {
            b[m - 2] = (b[m - 2] - self.du[m - 2] * b[m - 1]) / self.d[m - 2];
        }
        for i in (0..m.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// Unit eigenvector for a converged eigenvalue `lambda`, by inverse iteration.
/// The sign is fixed so that the component sum is nonnegative.
pub fn eigenvector(diag: &[f64], off: &[f64], lambda: f64) -> Result<Vec<f64>, EigenError> {
    validate(diag, off, 1)?;
    let m = diag.len();
    let (glo, ghi) = gershgorin_bounds(diag, off);
    let scale = glo.abs().max(ghi.abs()).max(f64::MIN_POSITIVE);
    // Perturb the shift slightly so T − σI is not exactly singular.
    let sigma = lambda + 4.0 * f64::EPSILON * scale;
    let shifted: Vec<f64> = diag.iter().map(|d| d - sigma).collect();
    let lu = TridiagonalLu::factor(off.to_vec(), shifted, off.to_vec(), f64::EPSILON * scale);
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    for _ in 0..4 {
        lu.solve_in_place(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(EigenError::NonFinite);
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pauli_x() {
        let (e0, e1) = lowest_two(&[0.0, 0.0], &[-1.0]).unwrap();
        assert!((e0 + 1.0).abs() < 1e-15);
        assert!((e1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_qubit_hopping() {
        // Characteristic polynomial −λ(λ² − 1): roots −1, 0, 1.
        let h = -(0.5f64).sqrt();
        let (e0, e1) = lowest_two(&[0.0; 3], &[h, h]).unwrap();
        assert!((e0 + 1.0).abs() < 1e-15);
        assert!(e1.abs() < 1e-15);
    }

    #[test]
    fn free_chain_spectrum() {
        let m = 200;
        let ev = lowest_eigenvalues(&vec![0.0; m], &vec![-1.0; m - 1], 5).unwrap();
        for (k, e) in ev.iter().enumerate() {
            let exact = -2.0 * ((k + 1) as f64 * std::f64::consts::PI / (m as f64 + 1.0)).cos();
            assert!((e - exact).abs() < 1e-13, "k={k}: {e} vs {exact}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(lowest_two(&[1.0], &[]), Err(EigenError::TooSmall(1, 2)));
        assert_eq!(
            lowest_two(&[f64::NAN, 0.0], &[1.0]),
            Err(EigenError::NonFinite)
        );
        assert!(matches!(
            lowest_two(&[0.0, 0.0, 0.0], &[1.0]),
            Err(EigenError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn eigenvector_of_free_chain() {
        let m = 50;
        let diag = vec![0.0; m];
        let off = vec![-1.0; m - 1];
        let (e0, _) = lowest_two(&diag, &off).unwrap();
        let v = eigenvector(&diag, &off, e0).unwrap();
        let norm = (m as f64 + 1.0) / 2.0;
        for (j, x) in v.iter().enumerate() {
            let exact =
                ((j + 1) as f64 * std::f64::consts::PI / (m as f64 + 1.0)).sin() / norm.sqrt();
            assert!((x - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvector_residual_with_pivoting() {
        // Large diagonal contrasts force row interchanges in the LU.
        let diag = vec![5.0, -3.0, 0.1, 8.0, -2.0, 0.0, 1.0];
        let off = vec![-0.01, -4.0, -0.5, -3.0, -0.2, -6.0];
        let ev = lowest_eigenvalues(&diag, &off, 2).unwrap();
        for &lambda in &ev {
            let v = eigenvector(&diag, &off, lambda).unwrap();
            let m = diag.len();
            for i in 0..m {
                let mut tv = diag[i] * v[i];
                if i > 0 {
                    tv += off[i - 1] * v[i - 1];
                }
                if i + 1 < m {
                    tv += off[i] * v[i + 1];
                }
                assert!((tv - lambda * v[i]).abs() < 1e-10);
            }
        }
    }

    fn dense_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
        let m = diag.len();
        let mat = nalgebra::DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                diag[i]
            } else if i + 1 == j {
                off[i]
            } else if j + 1 == i {
                off[j]
            } else {
                0.0
            }
        });
        let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    proptest! {
        #[test]
        fn sturm_count_matches_dense(
            diag in proptest::collection::vec(-5.0f64..5.0, 2..13),
            seed_off in proptest::collection::vec(-3.0f64..3.0, 12),
            probe in -9.0f64..9.0,
        ) {
            let m = diag.len();
            let off = &seed_off[..m - 1];
            let dense = dense_eigenvalues(&diag, off);
            // Skip probes that sit on top of an eigenvalue.
            prop_assume!(dense.iter().all(|e| (e - probe).abs() > 1e-9));
            let expected = dense.iter().filter(|&&e| e < probe).count();
            let seq = SturmSequence::new(&diag, off);
            prop_assert_eq!(seq.count_below(probe), expected);
        }

        #[test]
        fn lowest_two_matches_dense(
            diag in proptest::collection::vec(-5.0f64..5.0, 2..13),
            seed_off in proptest::collection::vec(-3.0f64..3.0, 12),
        ) {
            let m = diag.len();
            let off = &seed_off[..m - 1];
            let dense = dense_eigenvalues(&diag, off);
            let (e0, e1) = lowest_two(&diag, off).unwrap();
            prop_assert!((e0 - dense[0]).abs() < 1e-11);
            prop_assert!((e1 - dense[1]).abs() < 1e-11);
        }

        #[test]
        fn constant_shift(
            diag in proptest::collection::vec(-5.0f64..5.0, 2..40),
            seed_off in proptest::collection::vec(-3.0f64..-0.01, 39),
            c in -10.0f64..10.0,
        ) {
            let m = diag.len();
            let off = &seed_off[..m - 1];
            let shifted: Vec<f64> = diag.iter().map(|d| d + c).collect();
            let a = lowest_two(&diag, off).unwrap();
            let b = lowest_two(&shifted, off).unwrap();
            prop_assert!((b.0 - (a.0 + c)).abs() < 1e-12 * (1.0 + c.abs()) * 10.0);
            prop_assert!((b.1 - (a.1 + c)).abs() < 1e-12 * (1.0 + c.abs()) * 10.0);
        }
    }
}
