//! Invariance radius and level certificate for the truncated energy function.
//!
//! For `x⁺ = A x + Σ B_i φ_i(w_i)` the state after `p` steps from the ball
//! of radius `r` obeys `‖x_p‖ ≤ F_p(r)`, where `F_p` is assembled from norms
//! of powers of `A` and the envelopes of the scalar nonlinearities. Any
//! `r` with `F_p(r) ≤ r − ι` over the whole window `p̃ ≤ p < 2p̃` makes the
//! ball invariant from step `p̃` on, which in turn fixes the level `c_p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, Feed, ScalarKind, SystemDef};
use crate::error::{Result, RoaError};
use crate::linalg;
use nalgebra::DMatrix;

pub const DEFAULT_IOTA: f64 = 1e-6;
pub const DEFAULT_P_TILDE_CAP: usize = 500;
pub const DEFAULT_RADIUS_CAP: f64 = 1e8;
const BISECTION_TOL: f64 = 1e-9;

/// Smallest `p̃` with `‖A^k‖₂ < 1` for every `k ∈ [p̃, 2p̃ − 1]`.
///
/// The window condition alone implies `‖A^k‖₂ < 1` for all `k ≥ p̃`: any
/// such `k` splits into factors with exponents inside the window.
pub fn find_p_tilde(a: &DMatrix<f64>, cap: usize) -> Result<usize> {
    if cap == 0 {
        return Err(RoaError::InvalidArgument("p_tilde cap must be >= 1".into()));
    }
    let norms: Vec<f64> = linalg::matrix_powers(a, 2 * cap)
        .iter()
        .map(linalg::spectral_norm)
        .collect();
    (1..=cap)
        .find(|&p| norms[p..2 * p].iter().all(|v| *v < 1.0))
        .ok_or_else(|| {
            RoaError::Certificate(format!("no p_tilde <= {cap} with contracting window"))
        })
}

/// Precomputed scalar tables for the bound `F_p`, covering `p ≤ max_p`.
#[derive(Clone, Debug)]
pub struct InvarianceBoundSpec {
    pub max_p: usize,
    /// `‖A^k‖₂`, `k = 0..=max_p`.
    pub norm_table: Vec<f64>,
    /// `‖A^k B_i‖₂` indexed `[k][i]`.
    pub out_norms: Vec<Vec<f64>>,
    /// `‖K_i A^k‖₂` indexed `[k][i]`.
    pub in_norms: Vec<Vec<f64>>,
    /// `|K_j A^k B_i|` indexed `[k][j][i]`.
    pub cross: Vec<Vec<Vec<f64>>>,
    pub envelopes: Vec<ScalarKind>,
    pub feeds: Vec<Vec<Feed>>,
}

impl InvarianceBoundSpec {
    pub fn build(sys: &SystemDef, max_p: usize) -> Result<Self> {
        let structured = sys.phi.structured().ok_or_else(|| {
            RoaError::Certificate(
                "invariance bound needs a structured nonlinearity; supply the radius instead"
                    .into(),
            )
        })?;
        let n = sys.n;
        let powers = linalg::matrix_powers(&sys.a, max_p + 1);
        let norm_table: Vec<f64> = powers.par_iter().map(linalg::spectral_norm).collect();
        let terms = &structured.terms;
        let b_cols: Vec<DMatrix<f64>> = terms
            .iter()
            .map(|t| DMatrix::from_column_slice(n, 1, &t.b))
            .collect();
        let k_rows: Vec<DMatrix<f64>> = terms
            .iter()
            .map(|t| DMatrix::from_row_slice(1, n, &t.k))
            .collect();
        let out_norms = powers
            .iter()
            .map(|ak| b_cols.iter().map(|b| (ak * b).norm()).collect())
            .collect();
        let in_norms = powers
            .iter()
            .map(|ak| k_rows.iter().map(|k| (k * ak).norm()).collect())
            .collect();
        let cross = powers
            .par_iter()
            .map(|ak| {
                let akb: Vec<DMatrix<f64>> = b_cols.iter().map(|b| ak * b).collect();
                k_rows
                    .iter()
                    .map(|k| akb.iter().map(|col| (k * col)[(0, 0)].abs()).collect())
                    .collect()
            })
            .collect();
        let spec = Self {
            max_p,
            norm_table,
            out_norms,
            in_norms,
            cross,
            envelopes: terms.iter().map(|t| t.kind.clone()).collect(),
            feeds: terms.iter().map(|t| t.feed.clone()).collect(),
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        let finite = |v: &f64| v.is_finite() && *v >= 0.0;
        let ok = self.norm_table.iter().all(finite)
            && self.out_norms.iter().flatten().all(finite)
            && self.in_norms.iter().flatten().all(finite)
            && self.cross.iter().flatten().flatten().all(finite);
        if ok {
            Ok(())
        } else {
            Err(RoaError::Certificate("non-finite invariance table entry".into()))
        }
    }

    fn channels(&self) -> usize {
        self.envelopes.len()
    }

    /// `F_0(r), …, F_{max_p}(r)`.
    pub fn bound_profile(&self, r: f64) -> Vec<f64> {
        let m = self.channels();
        // envelope values of the channel outputs at each earlier step
        let mut out_bounds: Vec<Vec<f64>> = Vec::with_capacity(self.max_p);
        let mut profile = Vec::with_capacity(self.max_p + 1);
        profile.push(self.norm_table[0] * r);
        for p in 1..=self.max_p {
            // channel bounds at step p - 1
            let k = p - 1;
            let mut rho = vec![0.0; m];
            for i in 0..m {
                let mut w = self.in_norms[k][i] * r;
                for (kp, prev) in out_bounds.iter().enumerate() {
                    let row = &self.cross[k - kp - 1][i];
                    w += row.iter().zip(prev).map(|(c, d)| c * d).sum::<f64>();
                }
                for f in &self.feeds[i] {
                    w += f.gain.abs() * rho[f.from];
                }
                rho[i] = self.envelopes[i].envelope(w);
            }
            out_bounds.push(rho);
            let mut x = self.norm_table[p] * r;
            for (kp, bounds) in out_bounds.iter().enumerate() {
                let norms = &self.out_norms[p - kp - 1];
                x += norms.iter().zip(bounds).map(|(c, d)| c * d).sum::<f64>();
            }
            profile.push(x);
        }
        profile
    }

    /// `F_p(r)` for a single horizon.
    pub fn f_p(&self, p: usize, r: f64) -> f64 {
        assert!(p <= self.max_p, "horizon {p} beyond tabled range {}", self.max_p);
        let mut trimmed = self.clone_header(p);
        trimmed.max_p = p;
        trimmed.bound_profile(r)[p]
    }

    fn clone_header(&self, p: usize) -> Self {
        Self {
            max_p: p,
            norm_table: self.norm_table[..=p].to_vec(),
            out_norms: self.out_norms[..=p].to_vec(),
            in_norms: self.in_norms[..=p].to_vec(),
            cross: self.cross[..=p].to_vec(),
            envelopes: self.envelopes.clone(),
            feeds: self.feeds.clone(),
        }
    }

    /// `max_{p ∈ [p̃, 2p̃−1]} F_p(r) − r + ι`.
    pub fn window_gap(&self, p_tilde: usize, r: f64, iota: f64) -> f64 {
        let profile = self.bound_profile(r);
        profile[p_tilde..2 * p_tilde]
            .iter()
            .fold(f64::NEG_INFINITY, |acc, v| acc.max(*v))
            - r
            + iota
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusSearch {
    pub r_iota: f64,
    /// The feasible set reached the radius cap without an upward crossing.
    pub unbounded: bool,
}

/// Largest `r` (below the first upward crossing found by doubling) with
/// `F_p(r) ≤ r − ι` on the whole window, bisected to `1e-9`.
///
/// The bracket starts at `2ι / (1 − γ)`, `γ` the largest window norm: below
/// `ι / (1 − γ)` the gap is positive even for the linear part alone.
pub fn find_r_iota(
    spec: &InvarianceBoundSpec,
    p_tilde: usize,
    iota: f64,
    radius_cap: f64,
) -> Result<RadiusSearch> {
    if !(iota > 0.0 && iota.is_finite()) {
        return Err(RoaError::InvalidArgument(format!("iota must be positive, got {iota}")));
    }
    if p_tilde == 0 || 2 * p_tilde - 1 > spec.max_p {
        return Err(RoaError::InvalidArgument(format!(
            "window for p_tilde = {p_tilde} exceeds tabled range {}",
            spec.max_p
        )));
    }
    let gamma = spec.norm_table[p_tilde..2 * p_tilde]
        .iter()
        .fold(0.0f64, |acc, v| acc.max(*v));
    if gamma >= 1.0 {
        return Err(RoaError::HypothesisViolated(format!(
            "window norm {gamma} is not below 1"
        )));
    }
    let gap = |r: f64| spec.window_gap(p_tilde, r, iota);
    let mut lo = 2.0 * iota / (1.0 - gamma);
    if gap(lo) > 0.0 {
        return Err(RoaError::HypothesisViolated(format!(
            "bound exceeds r - iota already at r = {lo}"
        )));
    }
    let mut hi = lo * 2.0;
    loop {
        if hi >= radius_cap {
            if gap(radius_cap) <= 0.0 {
                return Ok(RadiusSearch {
                    r_iota: radius_cap,
                    unbounded: true,
                });
            }
            hi = radius_cap;
            break;
        }
        if gap(hi) > 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if gap(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RadiusSearch {
        r_iota: lo,
        unbounded: false,
    })
}

/// Everything needed to decide `V_p(x) < c_p` by simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConverseCertificate {
    pub p_tilde: usize,
    pub r_iota: f64,
    pub iota: f64,
    pub p: usize,
    pub c_p: f64,
    pub system_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_used: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unbounded: bool,
}

#[derive(Clone, Debug)]
pub struct CertOptions {
    pub iota: f64,
    pub p_tilde_cap: usize,
    pub radius_cap: f64,
}

impl Default for CertOptions {
    fn default() -> Self {
        Self {
            iota: DEFAULT_IOTA,
            p_tilde_cap: DEFAULT_P_TILDE_CAP,
            radius_cap: DEFAULT_RADIUS_CAP,
        }
    }
}

impl ConverseCertificate {
    /// Certificate from the structured form of `sys` at horizon `p`.
    pub fn compute(sys: &SystemDef, p: usize, opts: &CertOptions) -> Result<Self> {
        let p_tilde = find_p_tilde(&sys.a, opts.p_tilde_cap)?;
        let spec = InvarianceBoundSpec::build(sys, 2 * p_tilde - 1)?;
        let search = find_r_iota(&spec, p_tilde, opts.iota, opts.radius_cap)?;
        let mut cert = Self::from_radius(sys, p_tilde, search.r_iota, opts.iota, p)?;
        cert.unbounded = search.unbounded;
        Ok(cert)
    }

    /// Certificate from a user-supplied invariance radius (needed for
    /// opaque nonlinearities).
    pub fn from_radius(
        sys: &SystemDef,
        p_tilde: usize,
        r_iota: f64,
        iota: f64,
        p: usize,
    ) -> Result<Self> {
        if p_tilde == 0 {
            return Err(RoaError::InvalidArgument("p_tilde must be >= 1".into()));
        }
        if p < p_tilde {
            return Err(RoaError::InvalidArgument(format!(
                "horizon p = {p} below p_tilde = {p_tilde}"
            )));
        }
        if !(r_iota > 0.0 && r_iota.is_finite()) {
            return Err(RoaError::InvalidArgument(format!(
                "invariance radius must be positive, got {r_iota}"
            )));
        }
        Ok(Self {
            p_tilde,
            r_iota,
            iota,
            p,
            c_p: (p as f64 + 1.0) * r_iota * r_iota,
            system_label: sys.label.clone(),
            alpha_used: sys.params.get("alpha").copied(),
            unbounded: false,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Membership {
    Inside { v_p: f64 },
    Outside,
}

impl Membership {
    pub fn is_inside(&self) -> bool {
        matches!(self, Membership::Inside { .. })
    }
}

/// Decide `x0 ∈ R_p`, i.e. `V_p(x0) < c_p`, stopping as soon as the partial
/// sum reaches the level. A diverging trajectory is outside.
pub fn membership(sys: &SystemDef, cert: &ConverseCertificate, x0: &[f64]) -> Result<Membership> {
    match dynamics::energy(sys, x0, cert.p, Some(cert.c_p)) {
        Ok(e) if e.exceeded => Ok(Membership::Outside),
        Ok(e) => Ok(Membership::Inside { v_p: e.value }),
        Err(RoaError::Diverged { step }) if step > 0 => Ok(Membership::Outside),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        make_saturated_lqr, simulate, Nonlinearity, StructuredNonlinearity,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear(a: DMatrix<f64>) -> SystemDef {
        SystemDef::new(
            a,
            Nonlinearity::Structured(StructuredNonlinearity::default()),
            "linear",
        )
        .unwrap()
    }

    fn lqr_cert() -> (SystemDef, ConverseCertificate) {
        let sys = make_saturated_lqr();
        let cert = ConverseCertificate::compute(&sys, 25, &CertOptions::default()).unwrap();
        (sys, cert)
    }

    #[test]
    fn p_tilde_of_contraction_is_one() {
        let a = DMatrix::identity(3, 3) * 0.5;
        assert_eq!(find_p_tilde(&a, 10).unwrap(), 1);
    }

    #[test]
    fn p_tilde_lqr() {
        assert_eq!(find_p_tilde(&make_saturated_lqr().a, 100).unwrap(), 5);
    }

    #[test]
    fn p_tilde_cap_exceeded() {
        let a = DMatrix::from_row_slice(2, 2, &[0.99, 50.0, 0.0, 0.99]);
        assert!(matches!(find_p_tilde(&a, 3), Err(RoaError::Certificate(_))));
    }

    #[test]
    fn bound_vanishes_at_zero_radius() {
        let sys = make_saturated_lqr();
        let spec = InvarianceBoundSpec::build(&sys, 9).unwrap();
        assert_eq!(spec.norm_table[0], 1.0);
        assert!(spec.bound_profile(0.0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_bound_is_norm_times_radius() {
        let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.9, -0.2, 0.3]);
        let sys = linear(a.clone());
        let spec = InvarianceBoundSpec::build(&sys, 6).unwrap();
        let powers = linalg::matrix_powers(&a, 7);
        for p in 0..=6 {
            let want = linalg::spectral_norm(&powers[p]) * 2.5;
            assert!((spec.f_p(p, 2.5) - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_radius_is_unbounded() {
        let sys = linear(DMatrix::identity(2, 2) * 0.5);
        let spec = InvarianceBoundSpec::build(&sys, 1).unwrap();
        let found = find_r_iota(&spec, 1, 1e-6, 1e3).unwrap();
        assert!(found.unbounded);
        assert_eq!(found.r_iota, 1e3);
    }

    #[test]
    fn lqr_small_radius_bound_dominates_sampled_worst_case() {
        let sys = make_saturated_lqr();
        let spec = InvarianceBoundSpec::build(&sys, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for r in [0.5, 1.0, 1.5] {
            let profile = spec.bound_profile(r);
            let mut worst = vec![0.0f64; 10];
            for _ in 0..2000 {
                let t: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                let tr = simulate(&sys, &[r * t.cos(), r * t.sin()], 9, None).unwrap();
                for (k, s) in tr.states.iter().enumerate() {
                    worst[k] = worst[k].max(dynamics::norm_sq(s).sqrt());
                }
            }
            for k in 0..10 {
                assert!(profile[k] + 1e-12 >= worst[k], "p={k} r={r}");
            }
        }
        // sat inactive on the ball of radius 1 for the first steps
        let small = spec.bound_profile(0.5);
        for (p, v) in small.iter().enumerate() {
            assert!((v - spec.norm_table[p] * 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn lqr_radius_and_level() {
        let (_, cert) = lqr_cert();
        assert_eq!(cert.p_tilde, 5);
        assert!((cert.r_iota - 1.5052).abs() <= 1e-3, "r_iota = {}", cert.r_iota);
        assert!((cert.c_p - 26.0 * cert.r_iota.powi(2)).abs() <= 1e-12 * cert.c_p);
        assert!(!cert.unbounded);
    }

    #[test]
    fn r_iota_satisfies_window_inequality() {
        let sys = make_saturated_lqr();
        let spec = InvarianceBoundSpec::build(&sys, 9).unwrap();
        let found = find_r_iota(&spec, 5, 1e-6, 1e8).unwrap();
        assert!(spec.window_gap(5, found.r_iota, 1e-6) <= 0.0);
        assert!(spec.window_gap(5, found.r_iota + 2e-9, 1e-6) > 0.0);
    }

    #[test]
    fn r_iota_soundness_on_trajectories() {
        let (sys, cert) = lqr_cert();
        let r = cert.r_iota;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let t: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
            let rad = r * rng.gen::<f64>().sqrt() * (1.0 - 1e-12);
            let tr = simulate(&sys, &[rad * t.cos(), rad * t.sin()], 25, None).unwrap();
            for k in cert.p_tilde..=5 * cert.p_tilde {
                assert!(dynamics::norm_sq(&tr.states[k]).sqrt() < r);
            }
        }
    }

    #[test]
    fn membership_basics() {
        let (sys, cert) = lqr_cert();
        assert_eq!(
            membership(&sys, &cert, &[0.0, 0.0]).unwrap(),
            Membership::Inside { v_p: 0.0 }
        );
        let edge = cert.c_p.sqrt();
        assert_eq!(membership(&sys, &cert, &[edge, 0.0]).unwrap(), Membership::Outside);
        assert_eq!(membership(&sys, &cert, &[0.0, -edge * 1.01]).unwrap(), Membership::Outside);
    }

    #[test]
    fn membership_agrees_with_full_horizon_sum() {
        let (sys, cert) = lqr_cert();
        for i in -12..=12 {
            for j in -12..=12 {
                let x0 = [i as f64 * 0.25, j as f64 * 0.6];
                let tr = simulate(&sys, &x0, cert.p, None).unwrap();
                let inside = tr.last_sum() < cert.c_p;
                match membership(&sys, &cert, &x0).unwrap() {
                    Membership::Inside { v_p } => {
                        assert!(inside);
                        assert_eq!(v_p, tr.last_sum());
                    }
                    Membership::Outside => assert!(!inside),
                }
            }
        }
    }

    #[test]
    fn opaque_system_needs_radius() {
        let sys = SystemDef::new(
            DMatrix::identity(1, 1) * 0.5,
            Nonlinearity::Opaque(dynamics::OpaqueFn::new(|x: &[f64]| vec![0.1 * x[0].powi(3)])),
            "cubic",
        )
        .unwrap();
        assert!(ConverseCertificate::compute(&sys, 5, &CertOptions::default()).is_err());
        let cert = ConverseCertificate::from_radius(&sys, 1, 0.8, 1e-6, 5).unwrap();
        assert!((cert.c_p - 6.0 * 0.64).abs() < 1e-12);
        assert!(ConverseCertificate::from_radius(&sys, 6, 0.8, 1e-6, 5).is_err());
    }

    #[test]
    fn certificate_json_round_trip() {
        let (_, cert) = lqr_cert();
        let back = ConverseCertificate::from_json(&cert.to_json().unwrap()).unwrap();
        assert_eq!(back, cert);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bound_is_monotone_in_radius(r1 in 0.0f64..20.0, r2 in 0.0f64..20.0) {
            let sys = make_saturated_lqr();
            let spec = InvarianceBoundSpec::build(&sys, 9).unwrap();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let a = spec.bound_profile(lo);
            let b = spec.bound_profile(hi);
            for p in 0..=9 {
                prop_assert!(a[p] <= b[p] + 1e-12);
            }
        }

        #[test]
        fn inside_is_prefix_closed(x1 in -3.0f64..3.0, x2 in -8.0f64..8.0, cut in 5usize..25) {
            let (sys, cert) = lqr_cert_cached();
            if let Membership::Inside { .. } = membership(&sys, &cert, &[x1, x2]).unwrap() {
                let tr = simulate(&sys, &[x1, x2], cut, None).unwrap();
                prop_assert!(tr.last_sum() < cert.c_p);
            }
        }
    }

    fn lqr_cert_cached() -> (SystemDef, ConverseCertificate) {
        use std::sync::OnceLock;
        static CACHE: OnceLock<(SystemDef, ConverseCertificate)> = OnceLock::new();
        CACHE.get_or_init(lqr_cert).clone()
    }
}
