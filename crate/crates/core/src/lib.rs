//! Probabilistic region-of-attraction estimation for discrete-time systems
//! `x⁺ = A x + φ(x)`.
//!
//! The pipeline certifies a truncated energy function `V_p(x) = Σ_{k≤p} ‖x_k‖²`
//! whose sublevel set `{V_p < c_p}` is decidable by simulation, then fits a
//! sum-of-squares polynomial to sampled values of `V_p` and adjusts its level
//! so that sampled unstable points are excluded.

pub mod basis;
pub mod cli;
pub mod converse;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod lp;
pub mod sampling;
pub mod scenario;
pub mod sdp;

pub use basis::{GramPoly, MonomialBasis};
pub use converse::{ConverseCertificate, Membership};
pub use dynamics::{SystemDef, Trajectory};
pub use error::{Result, RoaError};
pub use eval::AccuracyReport;
pub use sampling::{ComplexityQuote, DomainBox, SamplePools};
pub use scenario::{GramEstimate, ShapeMode};
