//! Dense helpers on top of nalgebra: Cayley transform and unitary eigenpairs.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::math::{atan2, wrap_angle, TAU};
use crate::C64;

/// Phase step used when scanning for an admissible Cayley phase.
pub const CAYLEY_SCAN_STEP: f64 = 1e-3;

/// `i(1 + wU)(1 - wU)^{-1}` with `w = e^{iφ}`, or `None` when `1 - wU` is
/// numerically singular.
pub fn cayley_matrix(u: &DMatrix<C64>, phase: f64) -> Option<DMatrix<C64>> {
    let n = u.nrows();
    let w = C64::from_polar(1.0, phase);
    let id = DMatrix::<C64>::identity(n, n);
    let minus = &id - u * w;
    let plus = &id + u * w;
    let inv = minus.lu().try_inverse()?;
    if !inv.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        return None;
    }
    let h = (plus * inv) * C64::new(0.0, 1.0);
    // exact Hermitian part; the skew part is rounding
    Some((&h + h.adjoint()) * C64::new(0.5, 0.0))
}

/// Picks the first phase on the scan grid whose Cayley resolvent norm stays below `bound`.
pub fn cayley_phase(u: &DMatrix<C64>, bound: f64) -> Result<(f64, DMatrix<C64>)> {
    let steps = (TAU / CAYLEY_SCAN_STEP) as usize;
    let n = u.nrows();
    for k in 0..steps {
        // golden-ratio stride visits the grid in a well-spread order
        let phase = wrap_angle(libm::round(k as f64 * 0.618_033_988_749_895 * TAU / CAYLEY_SCAN_STEP) * CAYLEY_SCAN_STEP);
        let w = C64::from_polar(1.0, phase);
        let minus = DMatrix::<C64>::identity(n, n) - u * w;
        let Some(inv) = minus.lu().try_inverse() else { continue };
        let fro = inv.norm();
        if fro.is_finite() && fro <= bound {
            if let Some(h) = cayley_matrix(u, phase) {
                return Ok((phase, h));
            }
        }
    }
    Err(Error::CayleyPhase)
}

/// Eigenphases in `[0, 2π)` and unit eigenvectors (columns) of a unitary matrix.
///
/// Goes through the Cayley transform so that a Hermitian eigensolver does the work.
pub fn unitary_eigen(u: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let n = u.nrows();
    let (phase, h) = cayley_phase(u, 1e4 * (n as f64).max(1.0))?;
    let eig = SymmetricEigen::new(h);
    let phases = eig
        .eigenvalues
        .iter()
        .map(|&t| {
            // h = i(1+v)/(1-v)  =>  v = (h - i)/(h + i)
            let v = C64::new(t, -1.0) / C64::new(t, 1.0);
            wrap_angle(atan2(v.im, v.re) - phase)
        })
        .collect();
    Ok((phases, eig.eigenvectors))
}

/// Participation ratio `(Σ|v|²)² / Σ|v|⁴` of a vector.
pub fn participation_ratio(v: &[C64]) -> f64 {
    let s2: f64 = v.iter().map(|c| c.norm_sqr()).sum();
    let s4: f64 = v.iter().map(|c| c.norm_sqr() * c.norm_sqr()).sum();
    if s4 == 0.0 {
        0.0
    } else {
        s2 * s2 / s4
    }
}

/// Largest entrywise modulus difference between two matrices.
pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_cayley_values() {
        let minus_one = DMatrix::from_element(1, 1, C64::new(-1.0, 0.0));
        let h = cayley_matrix(&minus_one, 0.0).unwrap();
        assert!(h[(0, 0)].norm() < 1e-15);
        let i = DMatrix::from_element(1, 1, C64::new(0.0, 1.0));
        let h = cayley_matrix(&i, 0.0).unwrap();
        assert!((h[(0, 0)] - C64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn eigenphases_of_diagonal_unitary() {
        let phases = [0.3, 1.7, 4.0, 6.1];
        let u = DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                C64::from_polar(1.0, phases[i])
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let (mut got, _) = unitary_eigen(&u).unwrap();
        got.sort_by(f64::total_cmp);
        for (g, p) in got.iter().zip(phases) {
            assert!((g - p).abs() < 1e-12, "{g} vs {p}");
        }
    }
}
