//! `roa` command-line front end.
//!
//! Every run is described by a [`RunConfig`]: a JSON file, optionally
//! overridden by `ROA_SEED` and then by flags. The fully resolved config is
//! embedded in every artifact, and an artifact can be passed back as
//! `--config` to reproduce it.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::basis::binomial;
use crate::converse::{CertOptions, ConverseCertificate};
use crate::dynamics::{make_saturated_lqr, make_suboptimal_mpc, SystemDef};
use crate::error::RoaError;
use crate::eval::{self, AccuracyReport, AuditConfig};
use crate::sampling::{self, DomainBox};
use crate::scenario::{self, EstimateParams, GramEstimate, ShapeMode};

pub const SEED_ENV: &str = "ROA_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Compute(#[from] RoaError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "roa", version, about = "Sampled region-of-attraction estimates with simulation-decidable truth")]
pub struct Cli {
    /// Worker threads for sampling and audits (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute the invariance window, radius and level c_p.
    Cert(RunArgs),
    /// Draw pools, fit the Gram polynomial and set its level.
    Estimate(RunArgs),
    /// Monte-Carlo false-positive / false-negative audit.
    Audit(AuditArgs),
    /// Sample-complexity quotes for the shape and level programs.
    Complexity(ComplexityArgs),
    /// CSV lattice of polynomial values and truth labels.
    Grid(GridArgs),
    /// Repeated audits over a list of sample sizes (or degrees).
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// JSON run config, or any artifact with an embedded config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Builtin system: lqr or mpc.
    #[arg(long, conflicts_with = "system_file")]
    pub system: Option<String>,
    /// System definition JSON.
    #[arg(long)]
    pub system_file: Option<PathBuf>,
    /// Step size of the MPC projected-gradient iteration.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Projected-gradient iterations per MPC step.
    #[arg(long)]
    pub r_iters: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampling box as lower1,upper1,lower2,upper2,...
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
    pub bounds: Option<Vec<f64>>,
    #[arg(long)]
    pub iota: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ShapeMode>,
    #[arg(long)]
    pub delta1: Option<f64>,
    #[arg(long)]
    pub delta2: Option<f64>,
    /// Invariance window supplied by hand (with --r-iota).
    #[arg(long, requires = "r_iota")]
    pub p_tilde: Option<usize>,
    /// Invariance radius supplied by hand (with --p-tilde).
    #[arg(long, requires = "p_tilde")]
    pub r_iota: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AuditArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Estimate artifact to audit.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Number of audit points.
    #[arg(long = "m")]
    pub m: Option<usize>,
    /// Also write the per-point classification of a single audit.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Audit over N1 in {100, 250, 500, 1000} with N2 = 2 N1.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Args, Debug, Clone)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["epsilon", "n"])))]
pub struct ComplexityArgs {
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Sample count whose achieved accuracy is quoted.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long, default_value_t = 1e-6)]
    pub delta: f64,
    /// State dimension of the shape basis.
    #[arg(long, requires = "q")]
    pub n_state: Option<usize>,
    #[arg(long, requires = "n_state")]
    pub q: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    pub resolution: usize,
    /// Output CSV (default: <out_dir>/grid.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long = "m")]
    pub m: Option<usize>,
    /// Stable sample sizes; N2 = 2 N1 unless --n2 is given.
    #[arg(long, value_delimiter = ',', default_value = "100,250,500,1000")]
    pub n1_list: Vec<usize>,
    /// Sweep over degrees at fixed N1, N2 instead.
    #[arg(long, value_delimiter = ',')]
    pub q_list: Option<Vec<usize>>,
}

/// System source: a builtin benchmark or a definition file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Builtin {
        builtin: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_iters: Option<usize>,
    },
    File {
        path: PathBuf,
    },
}

/// Run config as read from JSON; absent fields take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, rename = "N1", skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    #[serde(default, rename = "N2", skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iota: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ShapeMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_tilde: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_iota: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default, rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Config with every field filled in; this is what artifacts embed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub system: SystemSpec,
    pub p: usize,
    pub q: usize,
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    pub seed: u64,
    #[serde(rename = "box")]
    pub domain: DomainBox,
    pub iota: f64,
    pub mode: ShapeMode,
    pub delta1: f64,
    pub delta2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_tilde: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_iota: Option<f64>,
    pub runs: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub out_dir: PathBuf,
}

impl From<ResolvedConfig> for RunConfig {
    fn from(r: ResolvedConfig) -> Self {
        Self {
            system: Some(r.system),
            p: Some(r.p),
            q: Some(r.q),
            n1: Some(r.n1),
            n2: Some(r.n2),
            seed: Some(r.seed),
            domain: Some(r.domain),
            iota: Some(r.iota),
            mode: Some(r.mode),
            delta1: Some(r.delta1),
            delta2: Some(r.delta2),
            p_tilde: r.p_tilde,
            r_iota: r.r_iota,
            runs: Some(r.runs),
            m: Some(r.m),
            out_dir: Some(r.out_dir),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Builtin {
    Lqr,
    Mpc,
}

fn builtin_kind(name: &str) -> CliResult<Builtin> {
    match name {
        "lqr" | "saturated-lqr" => Ok(Builtin::Lqr),
        "mpc" | "suboptimal-mpc" => Ok(Builtin::Mpc),
        other => Err(usage(format!("unknown builtin system {other:?} (expected lqr or mpc)"))),
    }
}

/// Read a config file. An artifact with a top-level `config` object
/// contributes that object.
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let value = match value.get("config") {
        Some(inner) if inner.is_object() => inner.clone(),
        _ => value,
    };
    serde_json::from_value(value)
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Merge file, environment and flags (in increasing priority) and fill
/// defaults.
pub fn resolve(
    base: RunConfig,
    args: &RunArgs,
    env_seed: Option<&str>,
) -> CliResult<ResolvedConfig> {
    let mut cfg = base;
    if let Some(text) = env_seed {
        let seed = text
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {text:?}")))?;
        cfg.seed = Some(seed);
    }
    if let Some(name) = &args.system {
        cfg.system = Some(SystemSpec::Builtin {
            builtin: name.clone(),
            alpha: None,
            r_iters: None,
        });
    }
    if let Some(path) = &args.system_file {
        cfg.system = Some(SystemSpec::File { path: path.clone() });
    }
    if args.alpha.is_some() || args.r_iters.is_some() {
        match &mut cfg.system {
            Some(SystemSpec::Builtin { alpha, r_iters, .. }) => {
                if args.alpha.is_some() {
                    *alpha = args.alpha;
                }
                if args.r_iters.is_some() {
                    *r_iters = args.r_iters;
                }
            }
            _ => return Err(usage("--alpha and --r-iters apply to the builtin mpc system")),
        }
    }
    macro_rules! take {
        ($($field:ident),*) => { $( if args.$field.is_some() { cfg.$field = args.$field.clone(); } )* };
    }
    take!(p, q, n1, n2, seed, iota, mode, delta1, delta2, p_tilde, r_iota, out_dir);
    if let Some(bounds) = &args.bounds {
        cfg.domain = Some(parse_box(bounds)?);
    }

    let system = cfg
        .system
        .ok_or_else(|| usage("no system given (use --system, --system-file or a config)"))?;
    let kind = match &system {
        SystemSpec::Builtin {
            builtin,
            alpha,
            r_iters,
        } => {
            let kind = builtin_kind(builtin)?;
            if kind == Builtin::Lqr && (alpha.is_some() || r_iters.is_some()) {
                return Err(usage("alpha and r_iters apply to the builtin mpc system"));
            }
            Some(kind)
        }
        SystemSpec::File { .. } => None,
    };
    let domain = match (cfg.domain, kind) {
        (Some(d), _) => d,
        (None, Some(Builtin::Lqr)) => DomainBox::symmetric(&[6.0, 9.0])?,
        (None, Some(Builtin::Mpc)) => DomainBox::symmetric(&[11.0, 11.0])?,
        (None, None) => return Err(usage("a sampling box is required for file-defined systems")),
    };
    domain.validate().map_err(|e| usage(e.to_string()))?;
    let n1 = cfg.n1.unwrap_or(1000);
    let resolved = ResolvedConfig {
        p: cfg.p.unwrap_or(if kind == Some(Builtin::Mpc) { 250 } else { 25 }),
        q: cfg.q.unwrap_or(2),
        n1,
        n2: cfg.n2.unwrap_or(2 * n1),
        seed: cfg.seed.unwrap_or(0),
        domain,
        iota: cfg.iota.unwrap_or(crate::converse::DEFAULT_IOTA),
        mode: cfg.mode.unwrap_or(ShapeMode::DdLp),
        delta1: cfg.delta1.unwrap_or(1e-6),
        delta2: cfg.delta2.unwrap_or(1e-6),
        p_tilde: cfg.p_tilde,
        r_iota: cfg.r_iota,
        runs: cfg.runs.unwrap_or(10),
        m: cfg.m.unwrap_or(10_000),
        out_dir: cfg.out_dir.unwrap_or_else(|| PathBuf::from(".")),
        system,
    };
    validate_ranges(&resolved)?;
    Ok(resolved)
}

fn validate_ranges(c: &ResolvedConfig) -> CliResult<()> {
    let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(usage(msg.to_string())) };
    check(c.p >= 1, "p must be >= 1")?;
    check(c.q >= 1, "q must be >= 1")?;
    check(c.n1 >= 1 && c.n2 >= 1, "N1 and N2 must be >= 1")?;
    check(c.iota > 0.0 && c.iota.is_finite(), "iota must be positive")?;
    check(c.delta1 > 0.0 && c.delta1 < 1.0, "delta1 must lie in (0, 1)")?;
    check(c.delta2 > 0.0 && c.delta2 < 1.0, "delta2 must lie in (0, 1)")?;
    check(c.runs >= 1, "runs must be >= 1")?;
    check(c.m >= 1, "M must be >= 1")?;
    check(c.p_tilde.is_some() == c.r_iota.is_some(), "p_tilde and r_iota go together")?;
    Ok(())
}

fn parse_box(bounds: &[f64]) -> CliResult<DomainBox> {
    if bounds.is_empty() || bounds.len() % 2 != 0 {
        return Err(usage("--box takes lower,upper pairs"));
    }
    let lower = bounds.iter().step_by(2).copied().collect();
    let upper = bounds.iter().skip(1).step_by(2).copied().collect();
    DomainBox::new(lower, upper).map_err(|e| usage(e.to_string()))
}

pub fn build_system(spec: &SystemSpec) -> CliResult<SystemDef> {
    match spec {
        SystemSpec::Builtin {
            builtin,
            alpha,
            r_iters,
        } => match builtin_kind(builtin)? {
            Builtin::Lqr => Ok(make_saturated_lqr()),
            Builtin::Mpc => Ok(make_suboptimal_mpc(*alpha, r_iters.unwrap_or(25))?),
        },
        SystemSpec::File { path } => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read system {}: {e}", path.display())))?;
            Ok(SystemDef::from_json(&text)?)
        }
    }
}

pub fn certificate(sys: &SystemDef, cfg: &ResolvedConfig) -> CliResult<ConverseCertificate> {
    let cert = match (cfg.p_tilde, cfg.r_iota) {
        (Some(p_tilde), Some(r_iota)) => {
            ConverseCertificate::from_radius(sys, p_tilde, r_iota, cfg.iota, cfg.p)?
        }
        _ => ConverseCertificate::compute(
            sys,
            cfg.p,
            &CertOptions {
                iota: cfg.iota,
                ..CertOptions::default()
            },
        )?,
    };
    Ok(cert)
}

fn params(cfg: &ResolvedConfig) -> EstimateParams {
    EstimateParams {
        mode: cfg.mode,
        delta1: cfg.delta1,
        delta2: cfg.delta2,
        ..EstimateParams::new(cfg.n1, cfg.n2, cfg.q, cfg.seed)
    }
}

/// Number formatting for summaries: 6 significant digits, `%g` style.
pub fn g6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-4..6).contains(&exp) {
        let s = format!("{x:.5e}");
        let (mantissa, power) = s.split_once('e').expect("exponent form");
        format!("{}e{power}", trim(mantissa.to_string()))
    } else {
        trim(format!("{:.*}", (5 - exp).max(0) as usize, x))
    }
}

#[derive(Serialize, Deserialize)]
struct CertArtifact {
    config: ResolvedConfig,
    certificate: ConverseCertificate,
}

#[derive(Serialize, Deserialize)]
pub struct EstimateArtifact {
    pub config: ResolvedConfig,
    pub estimate: GramEstimate,
}

#[derive(Serialize, Deserialize)]
struct AuditArtifact {
    config: ResolvedConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    estimate: Option<PathBuf>,
    report: AccuracyReport,
}

#[derive(Serialize, Deserialize)]
struct SweepRow {
    label: String,
    #[serde(rename = "N1")]
    n1: usize,
    #[serde(rename = "N2")]
    n2: usize,
    q: usize,
    epsilon2: f64,
    report: AccuracyReport,
}

#[derive(Serialize, Deserialize)]
struct SweepArtifact {
    config: ResolvedConfig,
    rows: Vec<SweepRow>,
}

fn write_artifact<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let text = serde_json::to_string_pretty(value).map_err(RoaError::from)?;
    write_text(dir, name, &(text + "\n"))
}

fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(RoaError::from)?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(RoaError::from)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn base_config(args: &RunArgs, fallback: Option<RunConfig>) -> CliResult<RunConfig> {
    match &args.config {
        Some(path) => load_config(path),
        None => Ok(fallback.unwrap_or_default()),
    }
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn resolved_from(args: &RunArgs, fallback: Option<RunConfig>) -> CliResult<ResolvedConfig> {
    resolve(base_config(args, fallback)?, args, env_seed().as_deref())
}

pub fn cmd_cert(args: &RunArgs) -> CliResult<()> {
    let cfg = resolved_from(args, None)?;
    let sys = build_system(&cfg.system)?;
    let cert = certificate(&sys, &cfg)?;
    println!(
        "system={} p_tilde={} r_iota={} p={} c_p={}{}",
        cert.system_label,
        cert.p_tilde,
        g6(cert.r_iota),
        cert.p,
        g6(cert.c_p),
        cert.alpha_used.map(|a| format!(" alpha={}", g6(a))).unwrap_or_default()
    );
    if cert.unbounded {
        eprintln!("warning: the radius search reached its cap; the bound holds on the whole search range");
    }
    let dir = cfg.out_dir.clone();
    write_artifact(&dir, "cert.json", &CertArtifact {
        config: cfg,
        certificate: cert,
    })?;
    Ok(())
}

pub fn cmd_estimate(args: &RunArgs) -> CliResult<()> {
    let cfg = resolved_from(args, None)?;
    let sys = build_system(&cfg.system)?;
    let cert = certificate(&sys, &cfg)?;
    let est = scenario::estimate(&sys, &cert, &cfg.domain, &params(&cfg))?;
    println!(
        "system={} q={} N1={} N2={} eta_N={} c_N={} epsilon1={} epsilon2={}",
        est.system_label,
        cfg.q,
        est.n1,
        est.n2,
        g6(est.eta_n),
        g6(est.c_n),
        g6(est.quotes.epsilon1),
        g6(est.quotes.epsilon2)
    );
    if !est.uniqueness_guaranteed {
        let doubled = binomial(cfg.domain.dim() + 2 * cfg.q, 2 * cfg.q);
        eprintln!(
            "warning: N1 = {} is below the {doubled} monomials of degree <= {}; the optimal Gram matrix may not be unique",
            est.n1,
            2 * cfg.q
        );
    }
    let dir = cfg.out_dir.clone();
    write_artifact(&dir, "estimate.json", &EstimateArtifact {
        config: cfg,
        estimate: est,
    })?;
    Ok(())
}

pub fn load_estimate(path: &Path) -> CliResult<(Option<RunConfig>, GramEstimate)> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read estimate {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(RoaError::from)?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(est) = obj.remove("estimate") {
            let config = match obj.remove("config") {
                Some(c) => Some(serde_json::from_value(c).map_err(RoaError::from)?),
                None => None,
            };
            return Ok((config, serde_json::from_value(est).map_err(RoaError::from)?));
        }
    }
    Ok((None, serde_json::from_value(value).map_err(RoaError::from)?))
}

pub fn cmd_audit(args: &AuditArgs) -> CliResult<()> {
    if args.sweep {
        return cmd_sweep(&SweepArgs {
            run: args.run.clone(),
            runs: args.runs,
            m: args.m,
            n1_list: vec![100, 250, 500, 1000],
            q_list: None,
        });
    }
    let loaded = args.estimate.as_deref().map(load_estimate).transpose()?;
    let fallback = loaded.as_ref().and_then(|(c, _)| c.clone());
    let mut cfg = resolved_from(&args.run, fallback)?;
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    validate_ranges(&cfg)?;
    let sys = build_system(&cfg.system)?;
    let cert = certificate(&sys, &cfg)?;

    let report = match (&loaded, cfg.runs) {
        (Some((_, est)), 1) => {
            if est.system_label != sys.label {
                return Err(CliError::Compute(RoaError::InvalidArgument(format!(
                    "estimate is for {:?}, system is {:?}",
                    est.system_label, sys.label
                ))));
            }
            let records = eval::classify_points(&sys, &cert, est, &cfg.domain, cfg.m, cfg.seed)?;
            if let Some(path) = &args.points {
                fs::write(path, eval::points_csv(&records)).map_err(RoaError::from)?;
                eprintln!("wrote {}", path.display());
            }
            let mut one = eval::audit(&sys, &cert, est, &cfg.domain, cfg.m, cfg.seed)?;
            one.per_run[0].seed = cfg.seed;
            one
        }
        (Some((_, est)), _) if est.system_label != sys.label => {
            return Err(CliError::Compute(RoaError::InvalidArgument(format!(
                "estimate is for {:?}, system is {:?}",
                est.system_label, sys.label
            ))));
        }
        _ => {
            if args.points.is_some() {
                return Err(usage("--points needs a single audit (--estimate with --runs 1)"));
            }
            let config = AuditConfig {
                sys: &sys,
                cert: &cert,
                domain: &cfg.domain,
                params: params(&cfg),
                m: cfg.m,
            };
            eval::repeat_audit(&config, cfg.runs)?
        }
    };
    let label = format!("N1={} q={}", cfg.n1, cfg.q);
    let table = eval::format_table(&[(label, &report)]);
    print!("{table}");
    let dir = cfg.out_dir.clone();
    write_text(&dir, "audit.txt", &table)?;
    write_artifact(&dir, "audit.json", &AuditArtifact {
        config: cfg,
        estimate: args.estimate.clone(),
        report,
    })?;
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let mut cfg = resolved_from(&args.run, None)?;
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    validate_ranges(&cfg)?;
    let sys = build_system(&cfg.system)?;
    let cert = certificate(&sys, &cfg)?;
    let settings: Vec<(usize, usize, usize)> = match &args.q_list {
        Some(qs) => qs.iter().map(|&q| (cfg.n1, cfg.n2, q)).collect(),
        None => args
            .n1_list
            .iter()
            .map(|&n1| (n1, args.run.n2.unwrap_or(2 * n1), cfg.q))
            .collect(),
    };
    if settings.is_empty() || settings.iter().any(|&(n1, n2, q)| n1 == 0 || n2 == 0 || q == 0) {
        return Err(usage("sweep values must be >= 1"));
    }
    let mut rows = Vec::with_capacity(settings.len());
    for (n1, n2, q) in settings {
        let config = AuditConfig {
            sys: &sys,
            cert: &cert,
            domain: &cfg.domain,
            params: EstimateParams {
                n1,
                n2,
                q,
                ..params(&cfg)
            },
            m: cfg.m,
        };
        let report = eval::repeat_audit(&config, cfg.runs)?;
        let epsilon2 = sampling::achieved_epsilon(n2 as u64, cfg.delta2, 0)?;
        let label = if args.q_list.is_some() {
            format!("q={q}")
        } else {
            format!("N1={n1} N2={n2}")
        };
        eprintln!("{label}: done");
        rows.push(SweepRow {
            label,
            n1,
            n2,
            q,
            epsilon2,
            report,
        });
    }
    let table_rows: Vec<(String, &AccuracyReport)> = rows
        .iter()
        .map(|r| (format!("{} (eps2 {:.4})", r.label, r.epsilon2), &r.report))
        .collect();
    let table = eval::format_table(&table_rows);
    print!("{table}");
    let dir = cfg.out_dir.clone();
    write_text(&dir, "sweep.txt", &table)?;
    write_artifact(&dir, "sweep.json", &SweepArtifact { config: cfg, rows })?;
    Ok(())
}

pub fn cmd_complexity(args: &ComplexityArgs) -> CliResult<()> {
    let range = |e: RoaError| usage(e.to_string());
    let mut stages: Vec<(&str, usize, String)> = vec![("level", 0, String::new())];
    if let (Some(n), Some(q)) = (args.n_state, args.q) {
        if n == 0 || q == 0 {
            return Err(usage("n-state and q must be >= 1"));
        }
        let nq = binomial(n + q, q);
        stages.insert(0, ("shape", nq * nq, format!(" n={n} q={q}")));
    }
    for (stage, n_theta, extra) in stages {
        match (args.epsilon, args.n) {
            (Some(eps), _) => {
                let quote = sampling::required_samples(eps, args.delta, n_theta).map_err(range)?;
                println!(
                    "{stage}:{extra} n_theta={n_theta} delta={} epsilon={} N_required={}",
                    g6(args.delta),
                    g6(eps),
                    quote.n_required
                );
            }
            (None, Some(n)) => {
                let eps = sampling::achieved_epsilon(n, args.delta, n_theta).map_err(range)?;
                println!(
                    "{stage}:{extra} n_theta={n_theta} delta={} N={n} epsilon={}",
                    g6(args.delta),
                    g6(eps)
                );
            }
            (None, None) => unreachable!("clap requires one of epsilon and n"),
        }
    }
    Ok(())
}

pub fn cmd_grid(args: &GridArgs) -> CliResult<()> {
    let loaded = args.estimate.as_deref().map(load_estimate).transpose()?;
    let fallback = loaded.as_ref().and_then(|(c, _)| c.clone());
    let cfg = resolved_from(&args.run, fallback)?;
    let sys = build_system(&cfg.system)?;
    let (cert, domain) = match &loaded {
        Some((_, est)) => (est.cert.clone(), est.domain.clone()),
        None => (certificate(&sys, &cfg)?, cfg.domain.clone()),
    };
    let domain = if args.run.bounds.is_some() { cfg.domain.clone() } else { domain };
    let csv = eval::grid_export(&sys, &cert, loaded.as_ref().map(|(_, e)| e), &domain, args.resolution)
        .map_err(|e| match e {
            RoaError::InvalidArgument(msg) if msg.contains("resolution") => usage(msg),
            other => CliError::Compute(other),
        })?;
    let path = args.out.clone().unwrap_or_else(|| cfg.out_dir.join("grid.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(RoaError::from)?;
    }
    fs::write(&path, csv).map_err(RoaError::from)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(usage("--workers must be >= 1"));
        }
        // a second initialization (e.g. in tests) keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match &cli.command {
        Command::Cert(a) => cmd_cert(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Complexity(a) => cmd_complexity(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage error",
                CliError::Compute(_) => "error",
            };
            eprintln!("{kind}: {e}");
            e.exit_code()
        }
    }
}
