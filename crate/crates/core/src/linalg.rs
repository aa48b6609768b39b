//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RoaError};

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 100_000;
const POWER_RESTARTS: usize = 3;

/// Spectral norm `‖m‖₂` by power iteration on `mᵀm`.
///
/// Several starting vectors are tried (a fixed all-ones start plus seeded
/// random restarts) and the largest converged estimate is kept, so a start
/// orthogonal to the leading singular vector cannot hide it.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let n = gram.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_5eed);
    let mut best = 0.0f64;
    for restart in 0..=POWER_RESTARTS {
        let start = if restart == 0 {
            DVector::from_element(n, 1.0)
        } else {
            DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5)
        };
        best = best.max(power_iterate(&gram, start));
    }
    best.sqrt()
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn power_iterate(gram: &DMatrix<f64>, start: DVector<f64>) -> f64 {
    let norm = start.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut v = start / norm;
    let mut lambda = 0.0f64;
    for _ in 0..POWER_MAX_ITERS {
        let w = gram * &v;
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / wn;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            return next.max(lambda);
        }
        lambda = next;
    }
    lambda
}

/// Spectral radius (largest eigenvalue modulus).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Powers `m⁰, m¹, …, m^{count-1}`.
pub fn matrix_powers(m: &DMatrix<f64>, count: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(DMatrix::identity(m.nrows(), m.ncols()));
    for k in 1..count {
        let next = &out[k - 1] * m;
        out.push(next);
    }
    out
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Largest absolute asymmetry `|m_ij − m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(RoaError::DimensionMismatch {
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a `DMatrix` as nested row-major arrays.
pub mod rows_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn power_iteration_matches_svd() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -0.3, 0.9, 1.1, 0.0, 0.4, -2.0]);
        let svd = m.clone().svd(false, false);
        let top = svd.singular_values.max();
        assert_close(spectral_norm(&m), top, 1e-10);
    }

    #[test]
    fn identity_and_scaled_identity() {
        assert_close(spectral_norm(&DMatrix::identity(4, 4)), 1.0, 1e-14);
        let half = DMatrix::identity(3, 3) * 0.5;
        assert_close(spectral_norm(&half), 0.5, 1e-14);
    }

    #[test]
    fn rectangular_vectors() {
        let row = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_close(spectral_norm(&row), 5.0, 1e-12);
        let col = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        assert_close(spectral_norm(&col), 5.0, 1e-12);
    }

    #[test]
    fn rows_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = to_rows(&m);
        assert_eq!(rows, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(from_rows(&rows).unwrap(), m);
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
