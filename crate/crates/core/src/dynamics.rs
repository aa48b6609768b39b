//! Discrete-time systems `x⁺ = A x + φ(x)`, trajectory simulation and the
//! two built-in benchmarks (saturated LQR and projected-gradient MPC).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RoaError};
use crate::linalg::{self, rows_serde};

/// Scalar nonlinearity attached to one residual channel.
///
/// Every kind is odd around the origin with `φ(0) = 0`, and exposes a
/// monotone envelope `s ↦ sup_{|w| ≤ s} |φ(w)|` used by the invariance bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum ScalarKind {
    /// `clamp(w, -level, level)`.
    Saturation { level: f64 },
    /// `tanh(w) - w`.
    TanhResidual,
    /// `clamp(w, -level, level) - w`.
    SatResidual { level: f64 },
    /// `clamp(w, lower, upper) - w` with `lower < 0 < upper`.
    BoxProjectionResidual { lower: f64, upper: f64 },
    /// Odd piecewise-linear function through `(0, 0)` and the listed
    /// `(abscissae[i], values[i])` knots, extrapolated with the last slope.
    CustomTable { abscissae: Vec<f64>, values: Vec<f64> },
}

impl ScalarKind {
    pub fn eval(&self, w: f64) -> f64 {
        match self {
            ScalarKind::Saturation { level } => w.clamp(-level, *level),
            ScalarKind::TanhResidual => w.tanh() - w,
            ScalarKind::SatResidual { level } => w.clamp(-level, *level) - w,
            ScalarKind::BoxProjectionResidual { lower, upper } => w.clamp(*lower, *upper) - w,
            ScalarKind::CustomTable { abscissae, values } => {
                w.signum() * table_interp(abscissae, values, w.abs())
            }
        }
    }

    /// Monotone envelope `s ↦ sup_{|w| ≤ s} |φ(w)|` for `s ≥ 0`.
    pub fn envelope(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match self {
            ScalarKind::Saturation { level } => s.min(*level),
            ScalarKind::TanhResidual => s - s.tanh(),
            ScalarKind::SatResidual { level } => (s - level).max(0.0),
            ScalarKind::BoxProjectionResidual { lower, upper } => {
                (s - upper.min(-lower)).max(0.0)
            }
            ScalarKind::CustomTable { abscissae, values } => {
                let mut best = table_interp(abscissae, values, s).abs();
                for (a, v) in abscissae.iter().zip(values) {
                    if *a <= s {
                        best = best.max(v.abs());
                    }
                }
                best
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ScalarKind::Saturation { level } | ScalarKind::SatResidual { level } => {
                level.is_finite() && *level > 0.0
            }
            ScalarKind::TanhResidual => true,
            ScalarKind::BoxProjectionResidual { lower, upper } => {
                lower.is_finite() && upper.is_finite() && *lower < 0.0 && *upper > 0.0
            }
            ScalarKind::CustomTable { abscissae, values } => {
                !abscissae.is_empty()
                    && abscissae.len() == values.len()
                    && abscissae[0] > 0.0
                    && abscissae.windows(2).all(|w| w[0] < w[1])
                    && abscissae.iter().chain(values).all(|v| v.is_finite())
            }
        };
        if !ok {
            return Err(RoaError::InvalidArgument(format!(
                "malformed scalar nonlinearity {self:?}"
            )));
        }
        let at_zero = self.eval(0.0);
        if at_zero.abs() > 1e-12 {
            return Err(RoaError::InvalidArgument(format!(
                "scalar nonlinearity does not vanish at 0 (value {at_zero})"
            )));
        }
        Ok(())
    }
}

fn table_interp(abscissae: &[f64], values: &[f64], s: f64) -> f64 {
    // knots include the implicit (0, 0)
    let knot = |i: usize| -> (f64, f64) {
        if i == 0 {
            (0.0, 0.0)
        } else {
            (abscissae[i - 1], values[i - 1])
        }
    };
    let count = abscissae.len() + 1;
    let mut seg = count - 2;
    for i in 1..count {
        if s <= knot(i).0 {
            seg = i - 1;
            break;
        }
    }
    let (a0, v0) = knot(seg);
    let (a1, v1) = knot(seg + 1);
    v0 + (v1 - v0) * (s - a0) / (a1 - a0)
}

/// Gain from an earlier channel's output into this channel's pre-activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feed {
    pub from: usize,
    pub gain: f64,
}

/// One channel `B · φ(w)` with `w = ⟨K, x⟩ + Σ gain · d_from`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerm {
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    #[serde(flatten)]
    pub kind: ScalarKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feed: Vec<Feed>,
}

/// `φ(x) = Σ_i B_i d_i` with `d_i = φ_i(w_i)` evaluated in channel order.
///
/// Without feeds this is the plain sum `Σ B_i φ_i(⟨K_i, x⟩)`. Feeds let a
/// channel see outputs of earlier channels in the same step, which is how
/// an unrolled projected-gradient solver is written down.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuredNonlinearity {
    pub terms: Vec<ResidualTerm>,
}

impl StructuredNonlinearity {
    pub fn new(terms: Vec<ResidualTerm>) -> Self {
        Self { terms }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (i, term) in self.terms.iter().enumerate() {
            if term.b.len() != n {
                return Err(RoaError::DimensionMismatch {
                    expected: n,
                    got: term.b.len(),
                });
            }
            if term.k.len() != n {
                return Err(RoaError::DimensionMismatch {
                    expected: n,
                    got: term.k.len(),
                });
            }
            term.kind.validate()?;
            if let Some(f) = term.feed.iter().find(|f| f.from >= i || !f.gain.is_finite()) {
                return Err(RoaError::InvalidArgument(format!(
                    "term {i} feeds from channel {} which is not an earlier channel",
                    f.from
                )));
            }
        }
        Ok(())
    }

    /// Channel outputs `d_i` for state `x`.
    pub fn channel_outputs(&self, x: &[f64]) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let mut w = dot(&term.k, x);
            for f in &term.feed {
                w += f.gain * d[f.from];
            }
            d.push(term.kind.eval(w));
        }
        d
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.channel_outputs(x);
        let mut out = vec![0.0; x.len()];
        for (term, di) in self.terms.iter().zip(d) {
            if di != 0.0 {
                for (o, b) in out.iter_mut().zip(&term.b) {
                    *o += b * di;
                }
            }
        }
        out
    }
}

type OpaqueEval = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// User-supplied nonlinearity; not serializable and not certifiable from
/// structure (a user-supplied invariance radius is required).
#[derive(Clone)]
pub struct OpaqueFn(Arc<OpaqueEval>);

impl OpaqueFn {
    pub fn new(f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl fmt::Debug for OpaqueFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("OpaqueFn(..)")
    }
}

#[derive(Clone, Debug)]
pub enum Nonlinearity {
    Structured(StructuredNonlinearity),
    Opaque(OpaqueFn),
}

impl Nonlinearity {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Nonlinearity::Structured(s) => s.eval(x),
            Nonlinearity::Opaque(f) => (f.0)(x),
        }
    }

    pub fn structured(&self) -> Option<&StructuredNonlinearity> {
        match self {
            Nonlinearity::Structured(s) => Some(s),
            Nonlinearity::Opaque(_) => None,
        }
    }
}

/// Direct evaluator of one closed-loop step, equivalent to `A x + φ(x)` of
/// the structured form but cheaper to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NativeStep {
    /// Plant `x⁺ = A_op x + B u` driven by `iterations` projected-gradient
    /// steps `z ← clamp(M z + N x, -1, 1)` warm-started from the carried `z`;
    /// `u` is the first entry of the final iterate.
    ProjectedGradient {
        #[serde(with = "rows_serde")]
        a_op: DMatrix<f64>,
        b: Vec<f64>,
        #[serde(with = "rows_serde")]
        m: DMatrix<f64>,
        #[serde(with = "rows_serde")]
        n: DMatrix<f64>,
        iterations: usize,
    },
}

impl NativeStep {
    fn dim(&self) -> usize {
        match self {
            NativeStep::ProjectedGradient { a_op, m, .. } => a_op.nrows() + m.nrows(),
        }
    }

    fn step_into(&self, s: &[f64], out: &mut [f64]) {
        match self {
            NativeStep::ProjectedGradient {
                a_op,
                b,
                m,
                n,
                iterations,
            } => {
                let nx = a_op.nrows();
                let nz = m.nrows();
                let (x, z0) = s.split_at(nx);
                let mut z = z0.to_vec();
                let mut next = vec![0.0; nz];
                let nx_drive: Vec<f64> = (0..nz)
                    .map(|c| (0..nx).map(|j| n[(c, j)] * x[j]).sum())
                    .collect();
                for _ in 0..*iterations {
                    for c in 0..nz {
                        let mut y = nx_drive[c];
                        for (c2, zc) in z.iter().enumerate() {
                            y += m[(c, c2)] * zc;
                        }
                        next[c] = y.clamp(-1.0, 1.0);
                    }
                    std::mem::swap(&mut z, &mut next);
                }
                let u = z[0];
                for i in 0..nx {
                    let mut acc = b[i] * u;
                    for j in 0..nx {
                        acc += a_op[(i, j)] * x[j];
                    }
                    out[i] = acc;
                }
                out[nx..].copy_from_slice(&z);
            }
        }
    }
}

/// A system `x⁺ = A x + φ(x)` with `ρ(A) < 1` and `φ(0) = 0`.
#[derive(Clone, Debug)]
pub struct SystemDef {
    pub n: usize,
    pub a: DMatrix<f64>,
    pub phi: Nonlinearity,
    pub label: String,
    /// Construction parameters recorded for provenance (e.g. `alpha`).
    pub params: BTreeMap<String, f64>,
    pub native: Option<NativeStep>,
}

impl SystemDef {
    pub fn new(a: DMatrix<f64>, phi: Nonlinearity, label: impl Into<String>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(RoaError::InvalidArgument(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(RoaError::InvalidArgument("A has non-finite entries".into()));
        }
        if let Nonlinearity::Structured(s) = &phi {
            s.validate(n)?;
        }
        let radius = linalg::spectral_radius(&a);
        if radius >= 1.0 {
            return Err(RoaError::InvalidArgument(format!(
                "linear part is not Schur stable (spectral radius {radius})"
            )));
        }
        let at_zero = phi.eval(&vec![0.0; n]);
        if at_zero.len() != n {
            return Err(RoaError::DimensionMismatch {
                expected: n,
                got: at_zero.len(),
            });
        }
        if at_zero.iter().any(|v| v.abs() > 1e-12) {
            return Err(RoaError::InvalidArgument("phi(0) != 0".into()));
        }
        Ok(Self {
            n,
            a,
            phi,
            label: label.into(),
            params: BTreeMap::new(),
            native: None,
        })
    }

    pub fn with_native(mut self, native: NativeStep) -> Result<Self> {
        if native.dim() != self.n {
            return Err(RoaError::DimensionMismatch {
                expected: self.n,
                got: native.dim(),
            });
        }
        self.native = Some(native);
        Ok(self)
    }

    /// One step of the closed loop.
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.step_into(x, &mut out);
        out
    }

    fn step_into(&self, x: &[f64], out: &mut [f64]) {
        if let Some(native) = &self.native {
            native.step_into(x, out);
            return;
        }
        self.step_structural_into(x, out);
    }

    /// `A x + φ(x)` evaluated from the split form, ignoring any native path.
    pub fn step_structural(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.step_structural_into(x, &mut out);
        out
    }

    fn step_structural_into(&self, x: &[f64], out: &mut [f64]) {
        let phi = self.phi.eval(x);
        for i in 0..self.n {
            let mut acc = phi[i];
            for j in 0..self.n {
                acc += self.a[(i, j)] * x[j];
            }
            out[i] = acc;
        }
    }

    pub fn to_doc(&self) -> Result<SystemDoc> {
        let terms = match &self.phi {
            Nonlinearity::Structured(s) => s.terms.clone(),
            Nonlinearity::Opaque(_) => {
                return Err(RoaError::InvalidArgument(
                    "opaque nonlinearities cannot be serialized".into(),
                ))
            }
        };
        Ok(SystemDoc {
            n: self.n,
            a: self.a.clone(),
            terms,
            label: self.label.clone(),
            params: self.params.clone(),
            native: self.native.clone(),
        })
    }

    pub fn from_doc(doc: SystemDoc) -> Result<Self> {
        if doc.a.nrows() != doc.n {
            return Err(RoaError::DimensionMismatch {
                expected: doc.n,
                got: doc.a.nrows(),
            });
        }
        let mut sys = SystemDef::new(
            doc.a,
            Nonlinearity::Structured(StructuredNonlinearity::new(doc.terms)),
            doc.label,
        )?;
        sys.params = doc.params;
        if let Some(native) = doc.native {
            sys = sys.with_native(native)?;
        }
        Ok(sys)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(text)?)
    }
}

/// On-disk form of a [`SystemDef`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDoc {
    pub n: usize,
    #[serde(rename = "A", with = "rows_serde")]
    pub a: DMatrix<f64>,
    pub terms: Vec<ResidualTerm>,
    pub label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native: Option<NativeStep>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    /// `partial_sums[k] = Σ_{j ≤ k} ‖x_j‖²`.
    pub partial_sums: Vec<f64>,
    /// Set when the run stopped early because the partial sum met the level.
    pub exceeded: bool,
}

impl Trajectory {
    pub fn last_sum(&self) -> f64 {
        *self.partial_sums.last().expect("trajectory has x_0")
    }
}

/// Outcome of [`energy`]: the partial sum without the stored states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub value: f64,
    /// Index of the last state included in `value`.
    pub last_step: usize,
    pub exceeded: bool,
}

fn check_x0(sys: &SystemDef, x0: &[f64], p: usize) -> Result<()> {
    if x0.len() != sys.n {
        return Err(RoaError::DimensionMismatch {
            expected: sys.n,
            got: x0.len(),
        });
    }
    if p == 0 {
        return Err(RoaError::InvalidArgument("horizon p must be >= 1".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(RoaError::Diverged { step: 0 });
    }
    Ok(())
}

/// Simulate `x_0 … x_p`; with `stop_level`, stops at the first `k` whose
/// partial sum reaches the level.
pub fn simulate(
    sys: &SystemDef,
    x0: &[f64],
    p: usize,
    stop_level: Option<f64>,
) -> Result<Trajectory> {
    check_x0(sys, x0, p)?;
    let mut states = vec![x0.to_vec()];
    let mut sum = norm_sq(x0);
    let mut partial_sums = vec![sum];
    let hit = |s: f64| stop_level.is_some_and(|c| s >= c);
    if hit(sum) {
        return Ok(Trajectory {
            states,
            partial_sums,
            exceeded: true,
        });
    }
    let mut x = x0.to_vec();
    let mut next = vec![0.0; sys.n];
    for k in 1..=p {
        sys.step_into(&x, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(RoaError::Diverged { step: k });
        }
        std::mem::swap(&mut x, &mut next);
        sum += norm_sq(&x);
        states.push(x.clone());
        partial_sums.push(sum);
        if hit(sum) {
            return Ok(Trajectory {
                states,
                partial_sums,
                exceeded: true,
            });
        }
    }
    Ok(Trajectory {
        states,
        partial_sums,
        exceeded: false,
    })
}

/// Allocation-light partial sum `V_k(x0)` with the same early-exit rule as
/// [`simulate`].
pub fn energy(sys: &SystemDef, x0: &[f64], p: usize, stop_level: Option<f64>) -> Result<Energy> {
    check_x0(sys, x0, p)?;
    let level = stop_level.unwrap_or(f64::INFINITY);
    let mut sum = norm_sq(x0);
    if sum >= level {
        return Ok(Energy {
            value: sum,
            last_step: 0,
            exceeded: true,
        });
    }
    let mut x = x0.to_vec();
    let mut next = vec![0.0; sys.n];
    for k in 1..=p {
        sys.step_into(&x, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(RoaError::Diverged { step: k });
        }
        std::mem::swap(&mut x, &mut next);
        sum += norm_sq(&x);
        if sum >= level {
            return Ok(Energy {
                value: sum,
                last_step: k,
                exceeded: true,
            });
        }
    }
    Ok(Energy {
        value: sum,
        last_step: p,
        exceeded: false,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

// Open-loop plant shared by both benchmarks.
pub const PLANT_A: [[f64; 2]; 2] = [[1.0745, 0.1025], [1.5079, 1.0745]];
pub const PLANT_B: [f64; 2] = [0.1518, 3.0741];
pub const LQR_GAIN: [f64; 2] = [-0.7999, -0.3397];

pub fn plant_a() -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| PLANT_A[i][j])
}

pub fn plant_b() -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 1, &PLANT_B)
}

/// Saturated LQR: `x⁺ = A_op x + B sat(K x)`, split as `A = A_op + BK` and
/// `φ(x) = B (sat(Kx) − Kx)`.
pub fn make_saturated_lqr() -> SystemDef {
    let b = plant_b();
    let k = DMatrix::from_row_slice(1, 2, &LQR_GAIN);
    let a = plant_a() + &b * &k;
    let term = ResidualTerm {
        b: PLANT_B.to_vec(),
        k: LQR_GAIN.to_vec(),
        kind: ScalarKind::SatResidual { level: 1.0 },
        feed: Vec::new(),
    };
    SystemDef::new(
        a,
        Nonlinearity::Structured(StructuredNonlinearity::new(vec![term])),
        "saturated-lqr",
    )
    .expect("saturated LQR benchmark is well formed")
}

pub const MPC_HORIZON: usize = 3;
pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITERS: usize = 100_000;

/// Discrete algebraic Riccati solution by fixed-point iteration from `P₀ = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let next = riccati_map(a, b, q, r, &p)?;
        let diff = (&next - &p).amax();
        p = next;
        if diff < RICCATI_TOL {
            return Ok((&p + p.transpose()) * 0.5);
        }
    }
    Err(RoaError::Certificate(format!(
        "Riccati iteration did not converge within {RICCATI_MAX_ITERS} iterations"
    )))
}

/// `AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q`.
pub fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let btp = b.transpose() * p;
    let inner = (r + &btp * b)
        .try_inverse()
        .ok_or_else(|| RoaError::Certificate("singular R + BᵀPB".into()))?;
    let atp = a.transpose() * p;
    Ok(&atp * a - &atp * b * inner * &btp * a + q)
}

/// Condensed finite-horizon MPC data: cost `zᵀHz + 2⟨Gx, z⟩` over the input
/// sequence `z ∈ [-1, 1]^T`.
#[derive(Clone, Debug)]
pub struct CondensedMpc {
    pub terminal: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

pub fn condense_mpc(horizon: usize) -> Result<CondensedMpc> {
    let a = plant_a();
    let b = plant_b();
    let nx = a.nrows();
    let q = DMatrix::identity(nx, nx);
    let r = DMatrix::identity(1, 1);
    let terminal = solve_dare(&a, &b, &q, &r)?;
    let powers = linalg::matrix_powers(&a, horizon + 1);

    let mut phi = DMatrix::zeros(nx * horizon, nx);
    let mut gamma = DMatrix::zeros(nx * horizon, horizon);
    for k in 1..=horizon {
        phi.view_mut((nx * (k - 1), 0), (nx, nx))
            .copy_from(&powers[k]);
        for j in 0..k {
            let col = &powers[k - 1 - j] * &b;
            gamma
                .view_mut((nx * (k - 1), j), (nx, 1))
                .copy_from(&col);
        }
    }
    let mut qbar = DMatrix::zeros(nx * horizon, nx * horizon);
    for k in 0..horizon {
        let block = if k + 1 == horizon { &terminal } else { &q };
        qbar.view_mut((nx * k, nx * k), (nx, nx)).copy_from(block);
    }
    let h = gamma.transpose() * &qbar * &gamma + DMatrix::identity(horizon, horizon);
    let g = gamma.transpose() * &qbar * &phi;
    Ok(CondensedMpc {
        terminal,
        phi,
        gamma,
        h,
        g,
    })
}

/// Default projected-gradient step for the MPC benchmark:
/// `α = 1 / (λ_max(H) + λ_min(H))`, the fastest fixed step for the
/// iteration `z ← z − 2α(Hz + Gx)` on a strongly convex quadratic.
pub fn default_pgd_alpha(h: &DMatrix<f64>) -> f64 {
    let eig = h.clone().symmetric_eigenvalues();
    1.0 / (eig.max() + eig.min())
}

/// Classical `1 / λ_max(2H)` step, kept for comparison sweeps.
pub fn lipschitz_pgd_alpha(h: &DMatrix<f64>) -> f64 {
    let eig = (h * 2.0).symmetric_eigenvalues();
    1.0 / eig.max()
}

/// Suboptimal MPC on the combined state `(x, z) ∈ R² × R³`: each closed-loop
/// step runs `r_iters` projected-gradient iterations warm-started at `z`,
/// applies the first input and carries the final iterate as the new `z`.
///
/// The linear part is the unsaturated iteration composed symbolically; each
/// projection residual becomes one channel, with the in-step coupling
/// between iterations carried by channel feeds.
pub fn make_suboptimal_mpc(alpha: Option<f64>, r_iters: usize) -> Result<SystemDef> {
    if r_iters == 0 {
        return Err(RoaError::InvalidArgument("r_iters must be >= 1".into()));
    }
    let cond = condense_mpc(MPC_HORIZON)?;
    let alpha = alpha.unwrap_or_else(|| default_pgd_alpha(&cond.h));
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(RoaError::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let a_op = plant_a();
    let b = plant_b();
    let nx = a_op.nrows();
    let nz = MPC_HORIZON;
    let n = nx + nz;

    let m = DMatrix::identity(nz, nz) - &cond.h * (2.0 * alpha);
    let drive = &cond.g * (-2.0 * alpha);
    let mpow = linalg::matrix_powers(&m, r_iters + 1);
    // partial[j] = Σ_{i<j} Mⁱ
    let mut partial = vec![DMatrix::zeros(nz, nz)];
    for j in 0..r_iters {
        let next = &partial[j] + &mpow[j];
        partial.push(next);
    }
    let mut e1 = DMatrix::zeros(1, nz);
    e1[(0, 0)] = 1.0;

    let sn = &partial[r_iters] * &drive;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (nx, nx))
        .copy_from(&(&a_op + &b * &e1 * &sn));
    a.view_mut((0, nx), (nx, nz))
        .copy_from(&(&b * &e1 * &mpow[r_iters]));
    a.view_mut((nx, 0), (nz, nx)).copy_from(&sn);
    a.view_mut((nx, nx), (nz, nz)).copy_from(&mpow[r_iters]);

    let mut terms = Vec::with_capacity(r_iters * nz);
    for j in 0..r_iters {
        // pre-activation of iterate j: M^{j+1} z + (Σ_{i≤j} Mⁱ) N x + Σ_{j'<j} M^{j−j'} d_{j'}
        let kx = &partial[j + 1] * &drive;
        let kz = &mpow[j + 1];
        // output direction: [B e₁ᵀ M^{r−1−j}; M^{r−1−j}]
        let tail = &mpow[r_iters - 1 - j];
        let bx = &b * &e1 * tail;
        for c in 0..nz {
            let mut k = Vec::with_capacity(n);
            k.extend((0..nx).map(|col| kx[(c, col)]));
            k.extend((0..nz).map(|col| kz[(c, col)]));
            let mut bvec = Vec::with_capacity(n);
            bvec.extend((0..nx).map(|row| bx[(row, c)]));
            bvec.extend((0..nz).map(|row| tail[(row, c)]));
            let mut feed = Vec::new();
            for jp in 0..j {
                let coupling = &mpow[j - jp];
                for cp in 0..nz {
                    let gain = coupling[(c, cp)];
                    if gain != 0.0 {
                        feed.push(Feed {
                            from: jp * nz + cp,
                            gain,
                        });
                    }
                }
            }
            terms.push(ResidualTerm {
                b: bvec,
                k,
                kind: ScalarKind::SatResidual { level: 1.0 },
                feed,
            });
        }
    }

    let mut sys = SystemDef::new(
        a,
        Nonlinearity::Structured(StructuredNonlinearity::new(terms)),
        "suboptimal-mpc",
    )?;
    sys.params.insert("alpha".into(), alpha);
    sys.params.insert("r_iters".into(), r_iters as f64);
    sys.params.insert("horizon".into(), MPC_HORIZON as f64);
    sys.with_native(NativeStep::ProjectedGradient {
        a_op,
        b: PLANT_B.to_vec(),
        m,
        n: drive,
        iterations: r_iters,
    })
}

/// `‖x‖₂` of a slice, as a `DVector` convenience for callers.
pub fn as_vector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
