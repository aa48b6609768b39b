//! Sampled shape and level programs and the resulting polynomial estimate
//! `{x : ⟨Θ, Z_q(x) Z_q(x)ᵀ⟩ < c}`.
//!
//! The shape program fits `V_p` on stable samples in the max-residual sense
//! while pushing the polynomial above `c_p` on unstable samples:
//!
//! ```text
//! min η  s.t.  |V_p(x̆ᵢ) − ⟨Θ, Z(x̆ᵢ)²⟩| ≤ η,   ⟨Θ, Z(x̂ⱼ)²⟩ ≥ c_p − η,   Θ ⪰ 0
//! ```
//!
//! The level program takes the smallest polynomial value over a second
//! unstable pool, so every point of that pool lies outside the estimate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{GramPoly, MonomialBasis};
use crate::converse::ConverseCertificate;
use crate::dynamics::SystemDef;
use crate::error::{Result, RoaError};
use crate::lp::{self, SimplexOptions, StandardLp};
use crate::sampling::{self, DomainBox, RejectionStats, SamplePools};
use crate::sdp::{self, ConicOptions, ConicProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeMode {
    /// Diagonally dominant `Θ` (polyhedral inner approximation of the PSD
    /// cone), solved as a linear program.
    DdLp,
    /// Exact PSD constraint, solved by a barrier method.
    FullPsd,
}

impl std::fmt::Display for ShapeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapeMode::DdLp => "dd-lp",
            ShapeMode::FullPsd => "full-psd",
        })
    }
}

/// Constraint data of the shape program in the degree-`2q` coefficient
/// space of the scaled variable `x̂ = x / scale`.
#[derive(Clone, Debug)]
pub struct ShapeProgram {
    pub basis: MonomialBasis,
    pub doubled: MonomialBasis,
    /// Per-coordinate scale (max `|x_j|` over the stable samples).
    pub scale: Vec<f64>,
    /// `Z_{2q}(x̂)` of each stable sample, one row each.
    pub stable_rows: DMatrix<f64>,
    pub values: DVector<f64>,
    /// `Z_{2q}(x̂)` of each unstable fitting sample.
    pub unstable_rows: DMatrix<f64>,
    pub c_p: f64,
}

impl ShapeProgram {
    pub fn assemble(
        basis: &MonomialBasis,
        stable: &[(Vec<f64>, f64)],
        unstable: &[Vec<f64>],
        c_p: f64,
    ) -> Result<Self> {
        if stable.is_empty() {
            return Err(RoaError::EmptyPool("stable"));
        }
        let d = basis.n;
        if let Some(bad) = stable
            .iter()
            .map(|(x, _)| x)
            .chain(unstable)
            .find(|x| x.len() != d)
        {
            return Err(RoaError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let mut scale = vec![0.0f64; d];
        for (x, _) in stable {
            for (s, v) in scale.iter_mut().zip(x) {
                *s = s.max(v.abs());
            }
        }
        for s in &mut scale {
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        let (doubled, _) = basis.square_map();
        let rows = |pts: Vec<&Vec<f64>>| -> DMatrix<f64> {
            let evals: Vec<Vec<f64>> = pts
                .par_iter()
                .map(|x| {
                    let xs: Vec<f64> = x.iter().zip(&scale).map(|(v, s)| v / s).collect();
                    doubled.eval(&xs)
                })
                .collect();
            DMatrix::from_fn(evals.len(), doubled.len(), |i, j| evals[i][j])
        };
        let stable_rows = rows(stable.iter().map(|(x, _)| x).collect());
        let unstable_rows = rows(unstable.iter().collect());
        let values = DVector::from_iterator(stable.len(), stable.iter().map(|(_, v)| *v));
        Ok(Self {
            basis: basis.clone(),
            doubled,
            scale,
            stable_rows,
            values,
            unstable_rows,
            c_p,
        })
    }

    pub fn from_pools(basis: &MonomialBasis, pools: &SamplePools, c_p: f64) -> Result<Self> {
        let stable: Vec<(Vec<f64>, f64)> =
            pools.stable.iter().map(|s| (s.x.clone(), s.v_p)).collect();
        Self::assemble(basis, &stable, &pools.unstable_fit, c_p)
    }

    pub fn row_count(&self) -> usize {
        2 * self.stable_rows.nrows() + self.unstable_rows.nrows()
    }

    /// Diagonal of monomial scales: `ẑ = D⁻¹ z`.
    fn monomial_scale(&self) -> Vec<f64> {
        self.basis
            .exponents
            .iter()
            .map(|e| {
                e.iter()
                    .zip(&self.scale)
                    .map(|(&k, s)| s.powi(k as i32))
                    .product()
            })
            .collect()
    }

    /// Smallest `η` making the rows feasible for a scaled Gram matrix.
    pub fn max_violation(&self, theta_scaled: &DMatrix<f64>) -> f64 {
        let coeffs = flatten_matrix(&self.basis, theta_scaled);
        let fit = &self.stable_rows * &coeffs;
        let mut eta = 0.0f64;
        for (f, v) in fit.iter().zip(self.values.iter()) {
            eta = eta.max((f - v).abs());
        }
        let push = &self.unstable_rows * &coeffs;
        for f in push.iter() {
            eta = eta.max(self.c_p - f);
        }
        eta
    }

    /// Map a Gram matrix of the scaled basis back to the raw monomials.
    pub fn unscale(&self, theta_scaled: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.monomial_scale();
        DMatrix::from_fn(theta_scaled.nrows(), theta_scaled.ncols(), |i, j| {
            theta_scaled[(i, j)] / (d[i] * d[j])
        })
    }
}

fn flatten_matrix(basis: &MonomialBasis, theta: &DMatrix<f64>) -> DVector<f64> {
    let poly = GramPoly {
        basis: basis.clone(),
        theta: theta.clone(),
    };
    DVector::from_vec(poly.flatten())
}

/// Rays `u uᵀ` generating the diagonally dominant cone with nonnegative
/// diagonal: `u = e_i` and `u = e_i ± e_j` for `i < j`.
pub fn dd_rays(nq: usize) -> Vec<Vec<(usize, f64)>> {
    let mut rays: Vec<Vec<(usize, f64)>> = (0..nq).map(|i| vec![(i, 1.0)]).collect();
    for i in 0..nq {
        for j in (i + 1)..nq {
            rays.push(vec![(i, 1.0), (j, 1.0)]);
            rays.push(vec![(i, 1.0), (j, -1.0)]);
        }
    }
    rays
}

fn ray_matrix(nq: usize, ray: &[(usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nq, nq);
    for &(i, a) in ray {
        for &(j, b) in ray {
            m[(i, j)] += a * b;
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct ShapeSolution {
    pub eta: f64,
    /// Gram matrix in the scaled basis.
    pub theta_scaled: DMatrix<f64>,
    pub poly: GramPoly,
    /// Ray weights of the DD solution (empty for the PSD mode).
    pub ray_weights: Vec<f64>,
    pub iterations: usize,
}

/// Solve the shape program.
pub fn solve_shape(program: &ShapeProgram, mode: ShapeMode) -> Result<ShapeSolution> {
    let (theta_scaled, ray_weights, iterations) = match mode {
        ShapeMode::DdLp => solve_dd(program)?,
        ShapeMode::FullPsd => solve_psd(program)?,
    };
    let theta_scaled = (&theta_scaled + theta_scaled.transpose()) * 0.5;
    let eta = program.max_violation(&theta_scaled);
    let theta = program.unscale(&theta_scaled);
    let theta = (&theta + theta.transpose()) * 0.5;
    let poly = GramPoly::new(program.basis.clone(), theta)?;
    let scale = poly.theta.amax().max(1.0);
    let min_eig = poly.min_eigenvalue();
    if min_eig < -crate::basis::PSD_TOL * scale {
        return Err(RoaError::Solver(format!(
            "shape solution is not positive semidefinite (min eigenvalue {min_eig})"
        )));
    }
    Ok(ShapeSolution {
        eta,
        theta_scaled,
        poly,
        ray_weights,
        iterations,
    })
}

/// DD shape program through its LP dual: maximize
/// `Σ v a − Σ v b + c_p Σ h` over the simplex `Σ a + Σ b + Σ h = 1` with one
/// `≤ 0` row per ray. The simplex multipliers recover `(η, w)`.
fn solve_dd(program: &ShapeProgram) -> Result<(DMatrix<f64>, Vec<f64>, usize)> {
    let nq = program.basis.len();
    let rays = dd_rays(nq);
    let (_, map) = program.basis.square_map();
    // ray coefficients in the degree-2q space
    let mut ray_coeffs = DMatrix::zeros(program.doubled.len(), rays.len());
    for (r, ray) in rays.iter().enumerate() {
        for &(i, a) in ray {
            for &(j, b) in ray {
                ray_coeffs[(map[i * nq + j], r)] += a * b;
            }
        }
    }
    let fit = &program.stable_rows * &ray_coeffs;
    let push = &program.unstable_rows * &ray_coeffs;
    let n1 = fit.nrows();
    let nu = push.nrows();
    let nr = rays.len();
    let m = nr + 1;
    let ncols = 2 * n1 + nu + nr;
    let mut a = DMatrix::zeros(m, ncols);
    let mut c = DVector::zeros(ncols);
    // each primal row is divided by its largest ray coefficient
    let row_norm = |m: &DMatrix<f64>, i: usize| m.row(i).amax().max(1.0);
    for i in 0..n1 {
        let s = row_norm(&fit, i);
        a[(0, i)] = 1.0 / s;
        a[(0, n1 + i)] = 1.0 / s;
        c[i] = program.values[i] / s;
        c[n1 + i] = -program.values[i] / s;
        for r in 0..nr {
            a[(1 + r, i)] = fit[(i, r)] / s;
            a[(1 + r, n1 + i)] = -fit[(i, r)] / s;
        }
    }
    for j in 0..nu {
        let s = row_norm(&push, j);
        let col = 2 * n1 + j;
        a[(0, col)] = 1.0 / s;
        c[col] = program.c_p / s;
        for r in 0..nr {
            a[(1 + r, col)] = push[(j, r)] / s;
        }
    }
    for r in 0..nr {
        a[(1 + r, 2 * n1 + nu + r)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[0] = 1.0;
    // feasible start: all weight on one lower-residual row, ray slacks absorb it
    let start = n1 + argmin(program.values.as_slice());
    let mut basis = vec![start];
    basis.extend((0..nr).map(|r| 2 * n1 + nu + r));
    let lp_problem = StandardLp { a, b, c };
    let sol = lp::solve_from_basis(&lp_problem, basis, &SimplexOptions::default())?;
    let weights: Vec<f64> = sol.duals[1..].iter().map(|w| w.max(0.0)).collect();
    let mut theta = DMatrix::zeros(nq, nq);
    for (ray, w) in rays.iter().zip(&weights) {
        if *w > 0.0 {
            theta += ray_matrix(nq, ray) * *w;
        }
    }
    Ok((theta, weights, sol.iterations))
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, x)| if *x < bv { (i, *x) } else { (bi, bv) })
        .0
}

fn solve_psd(program: &ShapeProgram) -> Result<(DMatrix<f64>, Vec<f64>, usize)> {
    let nq = program.basis.len();
    let pairs = sdp::packed_pairs(nq);
    let (_, map) = program.basis.square_map();
    let mut packed_coeffs = DMatrix::zeros(program.doubled.len(), pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        packed_coeffs[(map[i * nq + j], k)] += if i == j { 1.0 } else { 2.0 };
    }
    let fit = &program.stable_rows * &packed_coeffs;
    let push = &program.unstable_rows * &packed_coeffs;
    let n1 = fit.nrows();
    let nu = push.nrows();
    let dim = 1 + pairs.len();
    let rows = 2 * n1 + nu;
    let mut g = DMatrix::zeros(rows, dim);
    let mut h = DVector::zeros(rows);
    for i in 0..n1 {
        g[(2 * i, 0)] = 1.0;
        g[(2 * i + 1, 0)] = 1.0;
        h[2 * i] = program.values[i];
        h[2 * i + 1] = -program.values[i];
        for k in 0..pairs.len() {
            g[(2 * i, 1 + k)] = fit[(i, k)];
            g[(2 * i + 1, 1 + k)] = -fit[(i, k)];
        }
    }
    for j in 0..nu {
        let r = 2 * n1 + j;
        g[(r, 0)] = 1.0;
        h[r] = program.c_p;
        for k in 0..pairs.len() {
            g[(r, 1 + k)] = push[(j, k)];
        }
    }
    // strictly feasible start: Θ̂ = I with η above every residual
    let mut x0 = DVector::zeros(dim);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if i == j {
            x0[1 + k] = 1.0;
        }
    }
    let residual = (&g * &x0 - &h).min();
    x0[0] = (-residual).max(0.0) + 1.0;
    let mut c = DVector::zeros(dim);
    c[0] = 1.0;
    let problem = ConicProblem {
        c,
        g,
        h,
        psd_dim: nq,
        psd_offset: 1,
    };
    let sol = sdp::solve_conic(&problem, x0, &ConicOptions::default())?;
    Ok((sdp::unpack(&sol.x, 1, nq), Vec::new(), sol.iterations))
}

/// `c = min_j ⟨Θ, Z(x̄ⱼ)²⟩` over the level pool.
pub fn solve_level(poly: &GramPoly, pool_level: &[Vec<f64>]) -> Result<f64> {
    if pool_level.is_empty() {
        return Err(RoaError::EmptyPool("unstable_level"));
    }
    Ok(pool_level
        .par_iter()
        .map(|x| poly.eval(x))
        .reduce(|| f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quotes {
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub n_theta: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateParams {
    pub n1: usize,
    pub n2: usize,
    pub q: usize,
    pub seed: u64,
    pub mode: ShapeMode,
    pub delta1: f64,
    pub delta2: f64,
}

impl EstimateParams {
    pub fn new(n1: usize, n2: usize, q: usize, seed: u64) -> Self {
        Self {
            n1,
            n2,
            q,
            seed,
            mode: ShapeMode::DdLp,
            delta1: 1e-6,
            delta2: 1e-6,
        }
    }
}

/// Polynomial sublevel-set estimate with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramEstimate {
    pub system_label: String,
    pub cert: ConverseCertificate,
    #[serde(flatten)]
    pub poly: GramPoly,
    #[serde(rename = "eta_N")]
    pub eta_n: f64,
    #[serde(rename = "c_N")]
    pub c_n: f64,
    pub seed: u64,
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    pub mode: ShapeMode,
    pub quotes: Quotes,
    pub domain: DomainBox,
    /// Per-coordinate scale applied to the constraint rows.
    pub row_scale: Vec<f64>,
    /// False when fewer stable samples than degree-`2q` monomials were used,
    /// so the optimal Gram matrix need not be unique.
    pub uniqueness_guaranteed: bool,
    pub sampling: RejectionStats,
}

impl GramEstimate {
    pub fn contains(&self, x: &[f64]) -> bool {
        membership_estimate(self, x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn membership_estimate(est: &GramEstimate, x: &[f64]) -> bool {
    est.poly.eval(x) < est.c_n
}

/// Fit a shape from already drawn pools and set its level.
pub fn estimate_from_pools(
    cert: &ConverseCertificate,
    pools: &SamplePools,
    params: &EstimateParams,
) -> Result<GramEstimate> {
    let basis = MonomialBasis::new(pools.domain.dim(), params.q)?;
    let program = ShapeProgram::from_pools(&basis, pools, cert.c_p)?;
    let shape = solve_shape(&program, params.mode)?;
    let c_n = solve_level(&shape.poly, &pools.unstable_level)?;
    let n_theta = basis.len() * basis.len();
    let quotes = Quotes {
        epsilon1: sampling::achieved_epsilon(pools.n1 as u64, params.delta1, n_theta)?,
        epsilon2: sampling::achieved_epsilon(pools.n2 as u64, params.delta2, 0)?,
        delta1: params.delta1,
        delta2: params.delta2,
        n_theta,
    };
    Ok(GramEstimate {
        system_label: cert.system_label.clone(),
        cert: cert.clone(),
        uniqueness_guaranteed: pools.n1 >= program.doubled.len(),
        poly: shape.poly,
        eta_n: shape.eta,
        c_n,
        seed: pools.seed,
        n1: pools.n1,
        n2: pools.n2,
        mode: params.mode,
        quotes,
        domain: pools.domain.clone(),
        row_scale: program.scale,
        sampling: pools.stats.clone(),
    })
}

/// Full pipeline: draw pools, solve the shape and level programs.
pub fn estimate(
    sys: &SystemDef,
    cert: &ConverseCertificate,
    domain: &DomainBox,
    params: &EstimateParams,
) -> Result<GramEstimate> {
    if sys.label != cert.system_label {
        return Err(RoaError::InvalidArgument(format!(
            "certificate is for {:?}, system is {:?}",
            cert.system_label, sys.label
        )));
    }
    if params.n1 == 0 || params.n2 == 0 {
        return Err(RoaError::InvalidArgument("N1 and N2 must be >= 1".into()));
    }
    let pools = sampling::draw_pools(sys, cert, domain, params.n1, params.n2, params.seed)?;
    estimate_from_pools(cert, &pools, params)
}
