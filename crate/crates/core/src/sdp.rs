//! Primal-dual interior-point method for linear objectives under linear
//! inequalities and one linear matrix inequality:
//!
//! ```text
//! min cᵀξ  s.t.  G ξ ≥ h,  Θ(ξ) ⪰ 0
//! ```
//!
//! where the trailing variables `ξ[offset..]` hold the upper triangle of the
//! symmetric matrix `Θ` row by row. The dual is
//! `max hᵀz  s.t.  Gᵀz + Θ*(Z) = c,  z ≥ 0,  Z ⪰ 0`.
//!
//! Iterations use the HKM search direction with a Mehrotra predictor and
//! corrector, starting from a strictly feasible primal point. Primal
//! feasibility is kept exactly, so every iterate is a usable solution.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, RoaError};

#[derive(Clone, Debug)]
pub struct ConicProblem {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub psd_dim: usize,
    pub psd_offset: usize,
}

#[derive(Clone, Debug)]
pub struct ConicOptions {
    pub max_iters: usize,
    /// Relative duality gap and dual residual at which the solve stops.
    pub tol: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for ConicOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-9,
            step_fraction: 0.97,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Index pairs `(i, j)`, `i ≤ j`, in the packed order used for `Θ`.
pub fn packed_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        for j in i..dim {
            out.push((i, j));
        }
    }
    out
}

pub fn unpack(x: &DVector<f64>, offset: usize, dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for (k, (i, j)) in packed_pairs(dim).into_iter().enumerate() {
        m[(i, j)] = x[offset + k];
        m[(j, i)] = x[offset + k];
    }
    m
}

/// Largest `α ≤ cap` keeping `x + α dx` strictly positive.
fn max_step_orthant(x: &DVector<f64>, dx: &DVector<f64>, cap: f64) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(cap, f64::min)
}

/// Largest `α ≤ cap` keeping `X + α dX` positive definite.
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>, cap: f64) -> Result<f64> {
    let chol = Cholesky::new(x.clone())
        .ok_or_else(|| RoaError::Solver("iterate left the PSD cone".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| RoaError::Solver("singular Cholesky factor".into()))?;
    let m = sym(&l_inv * dx * l_inv.transpose());
    let lmin = m.symmetric_eigenvalues().min();
    Ok(if lmin < 0.0 { cap.min(-1.0 / lmin) } else { cap })
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

impl ConicProblem {
    fn check(&self) -> Result<()> {
        let dim = self.c.len();
        let packed = self.psd_dim * (self.psd_dim + 1) / 2;
        if self.g.ncols() != dim || self.g.nrows() != self.h.len() || self.psd_offset + packed != dim
        {
            return Err(RoaError::DimensionMismatch {
                expected: dim,
                got: self.psd_offset + packed,
            });
        }
        Ok(())
    }

    /// `Θ*(Z)`: inner products of `Z` with the packed basis matrices.
    fn adjoint(&self, z: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.c.len());
        for (k, (i, j)) in packed_pairs(self.psd_dim).into_iter().enumerate() {
            out[self.psd_offset + k] = if i == j { z[(i, i)] } else { z[(i, j)] + z[(j, i)] };
        }
        out
    }

    /// Schur block `H[k][l] = ⟨E_k, sym(S⁻¹ E_l Z)⟩`.
    fn psd_schur(&self, s_inv: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        let pairs = packed_pairs(self.psd_dim);
        let expanded: Vec<Vec<(usize, usize)>> = pairs
            .iter()
            .map(|&(i, j)| if i == j { vec![(i, i)] } else { vec![(i, j), (j, i)] })
            .collect();
        // tr(E_k A E_l B) with E = Σ e_p e_qᵀ
        let trace = |ek: &[(usize, usize)], el: &[(usize, usize)], a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut acc = 0.0;
            for &(p, q) in ek {
                for &(r, s) in el {
                    acc += a[(q, r)] * b[(s, p)];
                }
            }
            acc
        };
        let n = pairs.len();
        let mut h = DMatrix::zeros(n, n);
        for k in 0..n {
            for l in k..n {
                let v = 0.5
                    * (trace(&expanded[k], &expanded[l], s_inv, z)
                        + trace(&expanded[l], &expanded[k], s_inv, z));
                h[(k, l)] = v;
                h[(l, k)] = v;
            }
        }
        h
    }
}

fn cholesky_regularized(m: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for _ in 0..10 {
        let mut trial = m.clone();
        for i in 0..trial.nrows() {
            trial[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(trial) {
            return Ok(ch);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    Err(RoaError::Solver("Schur complement is not positive definite".into()))
}

struct Direction {
    dx: DVector<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
    d_s_mat: DMatrix<f64>,
    d_z_mat: DMatrix<f64>,
}

/// Solve from a strictly feasible primal point `x0`.
pub fn solve_conic(
    problem: &ConicProblem,
    x0: DVector<f64>,
    opts: &ConicOptions,
) -> Result<ConicSolution> {
    problem.check()?;
    // equilibrate rows; the feasible set is unchanged
    let mut g = problem.g.clone();
    let mut h = problem.h.clone();
    for i in 0..g.nrows() {
        let norm = g.row(i).amax();
        if norm > 0.0 {
            g.row_mut(i).scale_mut(1.0 / norm);
            h[i] /= norm;
        }
    }
    let problem = ConicProblem {
        g,
        h,
        ..problem.clone()
    };
    let (g, h, c) = (&problem.g, &problem.h, &problem.c);
    let nq = problem.psd_dim;
    let off = problem.psd_offset;
    let m_rows = g.nrows();
    let degree = (m_rows + nq) as f64;

    let mut x = x0;
    let mut s = g * &x - h;
    let mut s_mat = unpack(&x, off, nq);
    if s.iter().any(|v| *v <= 0.0) || Cholesky::new(s_mat.clone()).is_none() {
        return Err(RoaError::Solver("start is not strictly feasible".into()));
    }
    // centred dual start: s∘z = μ0, S Z = μ0 I
    let mu0 = c.dot(&x).abs().max(1.0) / degree;
    let mut z = s.map(|v| mu0 / v);
    let mut z_mat = Cholesky::new(s_mat.clone())
        .expect("checked above")
        .inverse()
        * mu0;
    let c_norm = 1.0 + c.norm();

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        let mu = (s.dot(&z) + (&s_mat * &z_mat).trace()) / degree;
        let r_d = c - g.tr_mul(&z) - problem.adjoint(&z_mat);
        let primal = c.dot(&x);
        let dual = h.dot(&z);
        let gap = (primal - dual).abs() / (1.0 + primal.abs() + dual.abs());
        if gap <= opts.tol && r_d.norm() / c_norm <= opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let s_inv = Cholesky::new(s_mat.clone())
            .ok_or_else(|| RoaError::Solver("iterate left the PSD cone".into()))?
            .inverse();
        let d = z.component_div(&s);
        let mut weighted = g.clone();
        for (i, w) in d.iter().enumerate() {
            weighted.row_mut(i).scale_mut(w.sqrt());
        }
        let mut schur = weighted.tr_mul(&weighted);
        let block = problem.psd_schur(&s_inv, &z_mat);
        for k in 0..block.nrows() {
            for l in 0..block.ncols() {
                schur[(off + k, off + l)] += block[(k, l)];
            }
        }
        let chol = cholesky_regularized(schur)?;

        // psd_target = σμ S⁻¹ − Z − corrector
        let direction = |r_c: &DVector<f64>, psd_target: &DMatrix<f64>| -> Direction {
            let rhs = g.tr_mul(&r_c.component_div(&s)) + problem.adjoint(psd_target) - &r_d;
            let dx = chol.solve(&rhs);
            let ds = g * &dx;
            let dz = r_c.component_div(&s) - d.component_mul(&ds);
            let d_s_mat = unpack(&dx, off, nq);
            let d_z_mat = psd_target - sym(&s_inv * &d_s_mat * &z_mat);
            Direction {
                dx,
                ds,
                dz,
                d_s_mat,
                d_z_mat,
            }
        };
        let step_lengths = |dir: &Direction| -> Result<(f64, f64)> {
            let ap = max_step_psd(&s_mat, &dir.d_s_mat, max_step_orthant(&s, &dir.ds, f64::INFINITY))?;
            let ad = max_step_psd(&z_mat, &dir.d_z_mat, max_step_orthant(&z, &dir.dz, f64::INFINITY))?;
            Ok((ap, ad))
        };

        // predictor
        let aff = direction(&(-s.component_mul(&z)), &(-&z_mat));
        let (ap, ad) = step_lengths(&aff)?;
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = ((&s + &aff.ds * ap).dot(&(&z + &aff.dz * ad))
            + ((&s_mat + &aff.d_s_mat * ap) * (&z_mat + &aff.d_z_mat * ad)).trace())
            / degree;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let r_c = DVector::from_element(m_rows, sigma * mu)
            - s.component_mul(&z)
            - aff.ds.component_mul(&aff.dz);
        let target = &s_inv * (sigma * mu) - &z_mat - sym(&s_inv * &aff.d_s_mat * &aff.d_z_mat);
        let dir = direction(&r_c, &target);
        let (ap, ad) = step_lengths(&dir)?;
        let ap = (opts.step_fraction * ap).min(1.0);
        let ad = (opts.step_fraction * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            break;
        }
        let x_next = &x + &dir.dx * ap;
        let s_next = g * &x_next - h;
        let s_mat_next = unpack(&x_next, off, nq);
        // round-off can push a boundary-hugging step outside; stop there
        if s_next.iter().any(|v| *v <= 0.0) || Cholesky::new(s_mat_next.clone()).is_none() {
            break;
        }
        x = x_next;
        s = s_next;
        s_mat = s_mat_next;
        z += &dir.dz * ad;
        z_mat = sym(&z_mat + &dir.d_z_mat * ad);
    }
    Ok(ConicSolution {
        objective: c.dot(&x),
        dual_objective: h.dot(&z),
        x,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_round_trip() {
        let pairs = packed_pairs(3);
        assert_eq!(pairs, vec![(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]);
        let x = DVector::from_vec(vec![9.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = unpack(&x, 1, 3);
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(2, 0)], 3.0);
        assert_eq!(m[(2, 2)], 6.0);
    }

    #[test]
    fn smallest_eigenvalue_as_sdp() {
        // max λ st A − λI ⪰ 0, with Θ = A − λI written as pairs of
        // inequalities that leave a 1e-3 band
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let mut g = DMatrix::zeros(6, 4);
        let mut h = DVector::zeros(6);
        let targets = [(1usize, a[(0, 0)], 1.0), (2, a[(0, 1)], 0.0), (3, a[(1, 1)], 1.0)];
        for (r, (col, val, lam)) in targets.iter().enumerate() {
            g[(2 * r, *col)] = 1.0;
            g[(2 * r, 0)] = *lam;
            h[2 * r] = *val - 1e-3;
            g[(2 * r + 1, *col)] = -1.0;
            g[(2 * r + 1, 0)] = -*lam;
            h[2 * r + 1] = -*val - 1e-3;
        }
        let problem = ConicProblem {
            c: DVector::from_vec(vec![-1.0, 0.0, 0.0, 0.0]),
            g,
            h,
            psd_dim: 2,
            psd_offset: 1,
        };
        let x0 = DVector::from_vec(vec![0.0, 2.0, 1.0, 3.0]);
        let sol = solve_conic(&problem, x0, &ConicOptions::default()).unwrap();
        assert!(sol.converged);
        let want = (5.0 - 5f64.sqrt()) / 2.0;
        assert!((sol.x[0] - want).abs() < 5e-3, "{} vs {want}", sol.x[0]);
        assert!((sol.objective - sol.dual_objective).abs() < 1e-6);
    }

    #[test]
    fn pure_lp_matches_vertex() {
        // min x + 2y st x + y ≥ 1, x ≥ 0, with y carried by a 1x1 cone
        let problem = ConicProblem {
            c: DVector::from_vec(vec![1.0, 2.0]),
            g: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]),
            h: DVector::from_vec(vec![1.0, 0.0]),
            psd_dim: 1,
            psd_offset: 1,
        };
        let sol =
            solve_conic(&problem, DVector::from_vec(vec![2.0, 2.0]), &ConicOptions::default())
                .unwrap();
        assert!(sol.converged);
        assert!((sol.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_start_rejected() {
        let problem = ConicProblem {
            c: DVector::from_vec(vec![1.0]),
            g: DMatrix::from_row_slice(1, 1, &[1.0]),
            h: DVector::from_vec(vec![0.0]),
            psd_dim: 1,
            psd_offset: 0,
        };
        assert!(solve_conic(&problem, DVector::from_vec(vec![-1.0]), &ConicOptions::default())
            .is_err());
        let sol = solve_conic(&problem, DVector::from_vec(vec![3.0]), &ConicOptions::default())
            .unwrap();
        assert!(sol.objective.abs() < 1e-8);
    }
}
