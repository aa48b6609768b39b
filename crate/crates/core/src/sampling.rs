//! Labeled sample pools and scenario sample-complexity arithmetic.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::converse::{self, ConverseCertificate, Membership};
use crate::dynamics::SystemDef;
use crate::error::{Result, RoaError};

/// RNG stream used for pool draws.
pub const POOL_STREAM: u64 = 1;
/// RNG stream used for audit draws; disjoint from [`POOL_STREAM`].
pub const AUDIT_STREAM: u64 = 2;

const BATCH: usize = 4096;
const STARVATION_RATE: f64 = 1e-4;
const STARVATION_MIN_DRAWS: u64 = 100_000;
const DRAW_BUDGET: u64 = 50_000_000;

/// Axis-aligned sampling box. When the system state is larger than the box
/// dimension, sampled points are padded with zeros (e.g. the MPC solver
/// state starts at `z = 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn symmetric(half_widths: &[f64]) -> Result<Self> {
        Self::new(half_widths.iter().map(|h| -h).collect(), half_widths.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(RoaError::InvalidArgument(
                "box bounds must be nonempty and of equal length".into(),
            ));
        }
        let ok = self
            .lower
            .iter()
            .zip(&self.upper)
            .all(|(l, u)| l.is_finite() && u.is_finite() && *l < 0.0 && 0.0 < *u);
        if !ok {
            return Err(RoaError::InvalidArgument(
                "box must be finite with the origin strictly inside".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Pad a box point with zeros up to the system dimension.
    pub fn lift(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        if n < x.len() {
            return Err(RoaError::DimensionMismatch {
                expected: x.len(),
                got: n,
            });
        }
        let mut out = x.to_vec();
        out.resize(n, 0.0);
        Ok(out)
    }

    /// Point `index` of the uniform sequence for `(seed, stream)`. Each
    /// point owns a fixed window of the ChaCha keystream, so the sequence
    /// can be generated in any order.
    pub fn uniform_point(&self, seed: u64, stream: u64, index: u64) -> Vec<f64> {
        let d = self.dim() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        // one f64 consumes two 32-bit words
        rng.set_word_pos(u128::from(index) * u128::from(2 * d));
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.gen::<f64>())
            .collect()
    }
}

/// Derive an independent per-run seed from a master seed.
pub fn derive_seed(master: u64, run: u64) -> u64 {
    let mut z = master.wrapping_add(run.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableSample {
    pub x: Vec<f64>,
    pub v_p: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionStats {
    /// Candidate points drawn in total.
    pub draws: u64,
    /// Draws consumed until the stable pool was full.
    pub draws_stable: u64,
    /// Draws consumed until both unstable pools were full.
    pub draws_unstable: u64,
    pub stable_seen: u64,
    pub unstable_seen: u64,
}

/// Stable samples with their `V_p` values plus two unstable pools drawn by
/// one procedure from the same distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePools {
    pub stable: Vec<StableSample>,
    pub unstable_fit: Vec<Vec<f64>>,
    pub unstable_level: Vec<Vec<f64>>,
    pub seed: u64,
    pub n1: usize,
    pub n2: usize,
    pub domain: DomainBox,
    pub stats: RejectionStats,
    /// True when the box is known to contain the ball `‖x‖² < c_p`.
    pub box_covers_level_ball: bool,
}

impl SamplePools {
    pub fn to_csv(&self) -> String {
        let d = self.domain.dim();
        let mut out = String::new();
        for i in 0..d {
            let _ = write!(out, "x{},", i + 1);
        }
        out.push_str("label,v_p\n");
        let mut row = |x: &[f64], label: &str, v: Option<f64>| {
            for xi in x {
                let _ = write!(out, "{xi},");
            }
            let _ = match v {
                Some(v) => writeln!(out, "{label},{v}"),
                None => writeln!(out, "{label},"),
            };
        };
        for s in &self.stable {
            row(&s.x, "stable", Some(s.v_p));
        }
        for x in &self.unstable_fit {
            row(x, "unstable_fit", None);
        }
        for x in &self.unstable_level {
            row(x, "unstable_level", None);
        }
        out
    }
}

/// Uniform rejection sampling in `domain`: stable points (w.r.t. the
/// certified set) fill the first pool until `n1`, unstable points fill the
/// fitting pool and then the level pool. Deterministic given `seed`, and
/// independent of the worker count.
pub fn draw_pools(
    sys: &SystemDef,
    cert: &ConverseCertificate,
    domain: &DomainBox,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<SamplePools> {
    domain.validate()?;
    if domain.dim() > sys.n {
        return Err(RoaError::DimensionMismatch {
            expected: sys.n,
            got: domain.dim(),
        });
    }
    let radius = cert.c_p.sqrt();
    let box_covers_level_ball = domain.dim() == sys.n
        && domain
            .lower
            .iter()
            .zip(&domain.upper)
            .all(|(l, u)| -l >= radius && *u >= radius);

    let mut stable = Vec::with_capacity(n1);
    let mut unstable = Vec::with_capacity(n1 + n2);
    let mut stats = RejectionStats::default();
    let mut next: u64 = 0;
    while stable.len() < n1 || unstable.len() < n1 + n2 {
        let batch: Vec<(Vec<f64>, Membership)> = (next..next + BATCH as u64)
            .into_par_iter()
            .map(|i| {
                let x = domain.uniform_point(seed, POOL_STREAM, i);
                let lifted = domain.lift(&x, sys.n)?;
                Ok((x, converse::membership(sys, cert, &lifted)?))
            })
            .collect::<Result<_>>()?;
        for (x, label) in batch {
            if stable.len() >= n1 && unstable.len() >= n1 + n2 {
                break;
            }
            stats.draws += 1;
            match label {
                Membership::Inside { v_p } => {
                    stats.stable_seen += 1;
                    if stable.len() < n1 {
                        stable.push(StableSample { x, v_p });
                        if stable.len() == n1 {
                            stats.draws_stable = stats.draws;
                        }
                    }
                }
                Membership::Outside => {
                    stats.unstable_seen += 1;
                    if unstable.len() < n1 + n2 {
                        unstable.push(x);
                        if unstable.len() == n1 + n2 {
                            stats.draws_unstable = stats.draws;
                        }
                    }
                }
            }
        }
        next += BATCH as u64;
        check_starvation(&stats, stable.len() < n1, unstable.len() < n1 + n2)?;
    }
    let unstable_level = unstable.split_off(n1);
    Ok(SamplePools {
        stable,
        unstable_fit: unstable,
        unstable_level,
        seed,
        n1,
        n2,
        domain: domain.clone(),
        stats,
        box_covers_level_ball,
    })
}

fn check_starvation(stats: &RejectionStats, need_stable: bool, need_unstable: bool) -> Result<()> {
    let starving = |seen: u64| {
        stats.draws >= STARVATION_MIN_DRAWS && (seen as f64) < STARVATION_RATE * (stats.draws as f64)
    };
    if need_stable && starving(stats.stable_seen) {
        return Err(RoaError::DomainMismatch(format!(
            "only {} of {} draws were stable; shrink the box toward the certified set",
            stats.stable_seen, stats.draws
        )));
    }
    if need_unstable && starving(stats.unstable_seen) {
        return Err(RoaError::DomainMismatch(format!(
            "only {} of {} draws were unstable; enlarge the box",
            stats.unstable_seen, stats.draws
        )));
    }
    if (need_stable || need_unstable) && stats.draws >= DRAW_BUDGET {
        return Err(RoaError::DomainMismatch(format!(
            "draw budget of {DRAW_BUDGET} exhausted; rescale the box"
        )));
    }
    Ok(())
}

/// Scenario sample-complexity quote `ε N ≥ e/(e−1) (ln δ⁻¹ + n_Θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityQuote {
    pub epsilon: f64,
    pub delta: f64,
    pub n_theta: usize,
    pub n_required: u64,
}

fn complexity_numerator(delta: f64, n_theta: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(RoaError::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let e = std::f64::consts::E;
    Ok(e / (e - 1.0) * ((1.0 / delta).ln() + n_theta as f64))
}

/// Smallest `N` meeting the bound for accuracy `epsilon`.
pub fn required_samples(epsilon: f64, delta: f64, n_theta: usize) -> Result<ComplexityQuote> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(RoaError::InvalidArgument(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let k = complexity_numerator(delta, n_theta)?;
    let mut n = (k / epsilon).ceil().max(1.0) as u64;
    while n > 1 && epsilon * (n - 1) as f64 >= k {
        n -= 1;
    }
    while epsilon * (n as f64) < k {
        n += 1;
    }
    Ok(ComplexityQuote {
        epsilon,
        delta,
        n_theta,
        n_required: n,
    })
}

/// Accuracy reached with `n` samples.
pub fn achieved_epsilon(n: u64, delta: f64, n_theta: usize) -> Result<f64> {
    if n == 0 {
        return Err(RoaError::InvalidArgument("sample count must be >= 1".into()));
    }
    Ok(complexity_numerator(delta, n_theta)? / n as f64)
}
