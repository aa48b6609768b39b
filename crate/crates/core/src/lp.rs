//! Dense revised simplex for `max cᵀx  s.t.  A x = b, x ≥ 0`.
//!
//! Keeps an explicit basis inverse updated by elementary row operations and
//! refactored periodically. Pricing is Dantzig's largest reduced cost; after
//! a run of non-improving (degenerate) pivots it switches to Bland's rule,
//! which cannot cycle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RoaError};

#[derive(Clone, Debug)]
pub struct StandardLp {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct SimplexOptions {
    pub max_iters: usize,
    pub refactor_every: usize,
    /// Degenerate pivots tolerated before switching to Bland's rule.
    pub stall_switch: usize,
    /// Optimality tolerance on reduced costs (relative to `max |c|`).
    pub tol: f64,
    pub pivot_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            refactor_every: 64,
            stall_switch: 200,
            tol: 1e-10,
            pivot_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Simplex multipliers `π = B⁻ᵀ c_B`, one per equality row.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub basis: Vec<usize>,
    pub iterations: usize,
    pub used_bland: bool,
}

struct Revised<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    c: DVector<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    enterable: Vec<bool>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
}

enum Step {
    Optimal,
    Pivoted { improvement: f64 },
}

impl<'a> Revised<'a> {
    fn new(
        a: &'a DMatrix<f64>,
        b: &'a DVector<f64>,
        c: DVector<f64>,
        basis: Vec<usize>,
        enterable: Vec<bool>,
    ) -> Result<Self> {
        let n = a.ncols();
        let mut in_basis = vec![false; n];
        for &j in &basis {
            if j >= n || in_basis[j] {
                return Err(RoaError::Solver(format!("invalid starting basis column {j}")));
            }
            in_basis[j] = true;
        }
        let mut s = Self {
            a,
            b,
            c,
            basis,
            in_basis,
            enterable,
            binv: DMatrix::zeros(0, 0),
            xb: DVector::zeros(0),
        };
        s.refactor()?;
        Ok(s)
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.a.nrows();
        let mut bmat = DMatrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            bmat.set_column(k, &self.a.column(j));
        }
        self.binv = bmat
            .try_inverse()
            .ok_or_else(|| RoaError::Solver("singular simplex basis".into()))?;
        self.xb = &self.binv * self.b;
        Ok(())
    }

    fn objective(&self) -> f64 {
        self.basis
            .iter()
            .zip(self.xb.iter())
            .map(|(&j, x)| self.c[j] * x)
            .sum()
    }

    fn duals(&self) -> DVector<f64> {
        let cb = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&j| self.c[j]));
        self.binv.tr_mul(&cb)
    }

    fn step(&mut self, bland: bool, tol: f64, pivot_tol: f64) -> Result<Step> {
        let pi = self.duals();
        let reduced = &self.c - self.a.tr_mul(&pi);
        let mut entering = None;
        let mut best = tol;
        for j in 0..self.a.ncols() {
            if self.in_basis[j] || !self.enterable[j] {
                continue;
            }
            let d = reduced[j];
            if d > best {
                entering = Some(j);
                if bland {
                    break;
                }
                best = d;
            }
        }
        let Some(q) = entering else {
            return Ok(Step::Optimal);
        };
        let alpha = &self.binv * self.a.column(q);
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..alpha.len() {
            if alpha[i] > pivot_tol {
                let ratio = self.xb[i].max(0.0) / alpha[i];
                let better = match leave {
                    None => true,
                    Some((r, best_ratio)) => {
                        if ratio < best_ratio - 1e-14 {
                            true
                        } else if ratio <= best_ratio + 1e-14 {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                alpha[i] > alpha[r]
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((r, theta)) = leave else {
            return Err(RoaError::Solver("linear program is unbounded".into()));
        };
        let piv = alpha[r];
        let pivot_row = self.binv.row(r) / piv;
        for i in 0..alpha.len() {
            if i != r && alpha[i] != 0.0 {
                let f = alpha[i];
                for k in 0..pivot_row.len() {
                    self.binv[(i, k)] -= f * pivot_row[k];
                }
            }
        }
        self.binv.set_row(r, &pivot_row);
        for i in 0..alpha.len() {
            if i != r {
                self.xb[i] -= theta * alpha[i];
            }
        }
        self.xb[r] = theta;
        self.in_basis[self.basis[r]] = false;
        self.in_basis[q] = true;
        self.basis[r] = q;
        Ok(Step::Pivoted {
            improvement: theta * reduced[q],
        })
    }

    fn run(&mut self, opts: &SimplexOptions) -> Result<(usize, bool)> {
        let scale = self.c.amax().max(1.0);
        let tol = opts.tol * scale;
        let mut bland = false;
        let mut degenerate = 0usize;
        for it in 0..opts.max_iters {
            if it > 0 && it % opts.refactor_every == 0 {
                self.refactor()?;
            }
            match self.step(bland, tol, opts.pivot_tol)? {
                Step::Optimal => {
                    self.refactor()?;
                    // confirm with a fresh factorization before stopping
                    if let Step::Optimal = self.step(bland, tol, opts.pivot_tol)? {
                        return Ok((it, bland));
                    }
                }
                Step::Pivoted { improvement } => {
                    if improvement <= 1e-12 * scale {
                        degenerate += 1;
                        if degenerate >= opts.stall_switch {
                            bland = true;
                        }
                    } else {
                        degenerate = 0;
                    }
                }
            }
        }
        Err(RoaError::SolverStall {
            iterations: opts.max_iters,
            best_objective: self.objective(),
        })
    }

    fn solution(&self, iterations: usize, used_bland: bool, n: usize) -> LpSolution {
        let mut x = vec![0.0; n];
        for (&j, v) in self.basis.iter().zip(self.xb.iter()) {
            if j < n {
                x[j] = v.max(0.0);
            }
        }
        LpSolution {
            objective: self.objective(),
            duals: self.duals().iter().copied().collect(),
            x,
            basis: self.basis.clone(),
            iterations,
            used_bland,
        }
    }
}

fn check_shapes(lp: &StandardLp) -> Result<()> {
    let (m, n) = lp.a.shape();
    if lp.b.len() != m || lp.c.len() != n {
        return Err(RoaError::DimensionMismatch {
            expected: m,
            got: lp.b.len(),
        });
    }
    if m == 0 || m > n {
        return Err(RoaError::InvalidArgument(format!(
            "need 0 < rows <= columns, got {m}x{n}"
        )));
    }
    Ok(())
}

/// Phase-two simplex from a basis the caller knows to be primal feasible.
pub fn solve_from_basis(
    lp: &StandardLp,
    basis: Vec<usize>,
    opts: &SimplexOptions,
) -> Result<LpSolution> {
    check_shapes(lp)?;
    if basis.len() != lp.a.nrows() {
        return Err(RoaError::DimensionMismatch {
            expected: lp.a.nrows(),
            got: basis.len(),
        });
    }
    let n = lp.a.ncols();
    let mut rs = Revised::new(&lp.a, &lp.b, lp.c.clone(), basis, vec![true; n])?;
    let floor = -1e-9 * lp.b.amax().max(1.0);
    if rs.xb.iter().any(|v| *v < floor) {
        return Err(RoaError::Solver("starting basis is not primal feasible".into()));
    }
    let (it, bland) = rs.run(opts)?;
    Ok(rs.solution(it, bland, n))
}

/// Two-phase simplex with artificial variables.
pub fn solve(lp: &StandardLp, opts: &SimplexOptions) -> Result<LpSolution> {
    check_shapes(lp)?;
    let (m, n) = lp.a.shape();
    let mut a = DMatrix::zeros(m, n + m);
    let mut b = lp.b.clone();
    for i in 0..m {
        let sign = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            a[(i, j)] = sign * lp.a[(i, j)];
        }
        a[(i, n + i)] = 1.0;
        b[i] *= sign;
    }
    let mut c1 = DVector::zeros(n + m);
    for i in 0..m {
        c1[n + i] = -1.0;
    }
    let basis: Vec<usize> = (n..n + m).collect();
    let mut rs = Revised::new(&a, &b, c1, basis, vec![true; n + m])?;
    let (it1, _) = rs.run(opts)?;
    let infeas = -rs.objective();
    if infeas > 1e-8 * b.amax().max(1.0) {
        return Err(RoaError::Solver(format!(
            "linear program is infeasible (residual {infeas})"
        )));
    }
    // pivot zero-level artificials out where a structural column allows it
    for r in 0..m {
        if rs.basis[r] < n {
            continue;
        }
        let row = rs.binv.row(r) * &a;
        if let Some(q) = (0..n).find(|&j| !rs.in_basis[j] && row[j].abs() > 1e-9) {
            let alpha = &rs.binv * a.column(q);
            let piv = alpha[r];
            let pivot_row = rs.binv.row(r) / piv;
            for i in 0..m {
                if i != r && alpha[i] != 0.0 {
                    let f = alpha[i];
                    for k in 0..m {
                        rs.binv[(i, k)] -= f * pivot_row[k];
                    }
                }
            }
            rs.binv.set_row(r, &pivot_row);
            rs.in_basis[rs.basis[r]] = false;
            rs.in_basis[q] = true;
            rs.basis[r] = q;
        }
    }
    rs.refactor()?;
    let mut c2 = DVector::zeros(n + m);
    c2.rows_mut(0, n).copy_from(&lp.c);
    rs.c = c2;
    rs.enterable = (0..n + m).map(|j| j < n).collect();
    let (it2, bland) = rs.run(opts)?;
    let mut sol = rs.solution(it1 + it2, bland, n);
    // multipliers refer to the sign-normalized rows
    for i in 0..m {
        if lp.b[i] < 0.0 {
            sol.duals[i] = -sol.duals[i];
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y st x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18  →  (2, 6), value 36
        let a = DMatrix::from_row_slice(
            3,
            5,
            &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 3.0, 2.0, 0.0, 0.0, 1.0],
        );
        let lp = StandardLp {
            a,
            b: DVector::from_vec(vec![4.0, 12.0, 18.0]),
            c: DVector::from_vec(vec![3.0, 5.0, 0.0, 0.0, 0.0]),
        };
        let s = solve_from_basis(&lp, vec![2, 3, 4], &SimplexOptions::default()).unwrap();
        assert!(close(s.objective, 36.0, 1e-12));
        assert!(close(s.x[0], 2.0, 1e-12) && close(s.x[1], 6.0, 1e-12));
        // duals give the same objective
        let dual_obj: f64 = s.duals.iter().zip(lp.b.iter()).map(|(p, b)| p * b).sum();
        assert!(close(dual_obj, 36.0, 1e-12));
        let two = solve(&lp, &SimplexOptions::default()).unwrap();
        assert!(close(two.objective, 36.0, 1e-12));
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x + y = -1 with x, y ≥ 0
        let lp = StandardLp {
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: DVector::from_vec(vec![-1.0]),
            c: DVector::from_vec(vec![1.0, 0.0]),
        };
        assert!(solve(&lp, &SimplexOptions::default()).is_err());
        // x - y = 1, max y
        let lp = StandardLp {
            a: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            b: DVector::from_vec(vec![1.0]),
            c: DVector::from_vec(vec![0.0, 1.0]),
        };
        assert!(matches!(solve(&lp, &SimplexOptions::default()), Err(RoaError::Solver(_))));
    }

    #[test]
    fn degenerate_problem_terminates_under_bland() {
        // classic cycling example for largest-coefficient pricing
        let a = DMatrix::from_row_slice(
            3,
            7,
            &[
                0.5, -5.5, -2.5, 9.0, 1.0, 0.0, 0.0, //
                0.5, -1.5, -0.5, 1.0, 0.0, 1.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
            ],
        );
        let lp = StandardLp {
            a,
            b: DVector::from_vec(vec![0.0, 0.0, 1.0]),
            c: DVector::from_vec(vec![10.0, -57.0, -9.0, -24.0, 0.0, 0.0, 0.0]),
        };
        let opts = SimplexOptions {
            stall_switch: 2,
            ..SimplexOptions::default()
        };
        let s = solve_from_basis(&lp, vec![4, 5, 6], &opts).unwrap();
        assert!(close(s.objective, 1.0, 1e-12));
    }

    #[test]
    fn iteration_cap_reports_stall() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let lp = StandardLp {
            a,
            b: DVector::from_vec(vec![1.0]),
            c: DVector::from_vec(vec![1.0, 2.0, 3.0]),
        };
        let opts = SimplexOptions {
            max_iters: 1,
            ..SimplexOptions::default()
        };
        assert!(matches!(
            solve_from_basis(&lp, vec![0], &opts),
            Err(RoaError::SolverStall { iterations: 1, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        /// Random bounded feasible LPs: strong duality and feasibility.
        #[test]
        fn random_lps_satisfy_duality(seed in any::<u64>(), m in 2usize..8, extra in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n0 = m + extra;
            // max cᵀx st A x ≤ b (A ≥ 0 with positive rows ⇒ bounded), slack form
            let mut a = DMatrix::zeros(m, n0 + m);
            for i in 0..m {
                for j in 0..n0 {
                    a[(i, j)] = rng.gen_range(0.05..2.0);
                }
                a[(i, n0 + i)] = 1.0;
            }
            let b = DVector::from_fn(m, |_, _| rng.gen_range(0.5..5.0));
            let mut c = DVector::zeros(n0 + m);
            for j in 0..n0 {
                c[j] = rng.gen_range(-1.0..3.0);
            }
            let lp = StandardLp { a: a.clone(), b: b.clone(), c: c.clone() };
            let s = solve_from_basis(&lp, (n0..n0 + m).collect(), &SimplexOptions::default()).unwrap();
            let x = DVector::from_vec(s.x.clone());
            prop_assert!((&a * &x - &b).amax() <= 1e-9);
            let pi = DVector::from_vec(s.duals.clone());
            let dual_obj = pi.dot(&b);
            prop_assert!((dual_obj - s.objective).abs() <= 1e-9 * s.objective.abs().max(1.0));
            // dual feasibility: Aᵀπ ≥ c
            let slack = a.tr_mul(&pi) - &c;
            prop_assert!(slack.min() >= -1e-9);
            let two = solve(&lp, &SimplexOptions::default()).unwrap();
            prop_assert!((two.objective - s.objective).abs() <= 1e-9 * s.objective.abs().max(1.0));
        }
    }
}
