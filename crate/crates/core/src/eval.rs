//! Monte-Carlo accuracy audits of estimates against the simulation-decidable
//! truth set `{V_p < c_p}`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::converse::{self, ConverseCertificate};
use crate::dynamics::SystemDef;
use crate::error::{Result, RoaError};
use crate::sampling::{derive_seed, DomainBox, AUDIT_STREAM};
use crate::scenario::{self, EstimateParams, GramEstimate};

/// Truth and prediction for one audit point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub x: Vec<f64>,
    pub truth: bool,
    pub predicted: bool,
}

/// Counts and rates of a single audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: usize,
    pub stable_count: usize,
    pub fp_count: usize,
    pub fn_count: usize,
    /// Predicted stable but outside the truth set, over `M`.
    pub fp_rate: f64,
    /// Truly stable but predicted unstable, over `M`.
    pub fn_rate: f64,
    /// False negatives over the number of truly stable points.
    pub fn_rate_of_stable: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub mean: f64,
    pub max: f64,
}

impl RateSummary {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
        for v in values {
            sum += v;
            max = max.max(v);
            count += 1;
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        // guard against the last-bit rounding of the sum
        Self {
            mean: mean.min(max),
            max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    #[serde(rename = "M")]
    pub m: usize,
    pub per_run: Vec<RunReport>,
    pub fp_rate: RateSummary,
    pub fn_rate: RateSummary,
    pub fn_rate_of_stable: RateSummary,
    pub seeds: Vec<u64>,
}

impl AccuracyReport {
    pub fn from_runs(per_run: Vec<RunReport>) -> Result<Self> {
        let m = per_run
            .first()
            .map(|r| r.m)
            .ok_or_else(|| RoaError::InvalidArgument("no audit runs to aggregate".into()))?;
        Ok(Self {
            m,
            fp_rate: RateSummary::of(per_run.iter().map(|r| r.fp_rate)),
            fn_rate: RateSummary::of(per_run.iter().map(|r| r.fn_rate)),
            fn_rate_of_stable: RateSummary::of(per_run.iter().map(|r| r.fn_rate_of_stable)),
            seeds: per_run.iter().map(|r| r.seed).collect(),
            per_run,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Classify `m` uniform points of `domain` drawn from the audit stream.
pub fn classify_points(
    sys: &SystemDef,
    cert: &ConverseCertificate,
    est: &GramEstimate,
    domain: &DomainBox,
    m: usize,
    seed: u64,
) -> Result<Vec<PointRecord>> {
    if m == 0 {
        return Err(RoaError::InvalidArgument("M must be >= 1".into()));
    }
    check_pairing(sys, cert, est, domain)?;
    (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let x = domain.uniform_point(seed, AUDIT_STREAM, i);
            let lifted = domain.lift(&x, sys.n)?;
            let truth = converse::membership(sys, cert, &lifted)?.is_inside();
            let predicted = est.contains(&x);
            Ok(PointRecord {
                x,
                truth,
                predicted,
            })
        })
        .collect()
}

fn check_pairing(
    sys: &SystemDef,
    cert: &ConverseCertificate,
    est: &GramEstimate,
    domain: &DomainBox,
) -> Result<()> {
    if sys.label != cert.system_label || est.system_label != cert.system_label {
        return Err(RoaError::InvalidArgument(format!(
            "labels differ: system {:?}, certificate {:?}, estimate {:?}",
            sys.label, cert.system_label, est.system_label
        )));
    }
    if domain.dim() != est.poly.basis.n {
        return Err(RoaError::DimensionMismatch {
            expected: est.poly.basis.n,
            got: domain.dim(),
        });
    }
    Ok(())
}

pub fn tally(records: &[PointRecord], seed: u64) -> RunReport {
    let m = records.len();
    let stable_count = records.iter().filter(|r| r.truth).count();
    let fp_count = records.iter().filter(|r| r.predicted && !r.truth).count();
    let fn_count = records.iter().filter(|r| r.truth && !r.predicted).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    RunReport {
        seed,
        m,
        stable_count,
        fp_count,
        fn_count,
        fp_rate: ratio(fp_count, m),
        fn_rate: ratio(fn_count, m),
        fn_rate_of_stable: ratio(fn_count, stable_count),
        eta_n: None,
        c_n: None,
        epsilon2: None,
    }
}

pub fn audit(
    sys: &SystemDef,
    cert: &ConverseCertificate,
    est: &GramEstimate,
    domain: &DomainBox,
    m: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    let records = classify_points(sys, cert, est, domain, m, seed)?;
    let mut run = tally(&records, seed);
    annotate(&mut run, est);
    AccuracyReport::from_runs(vec![run])
}

fn annotate(run: &mut RunReport, est: &GramEstimate) {
    run.eta_n = Some(est.eta_n);
    run.c_n = Some(est.c_n);
    run.epsilon2 = Some(est.quotes.epsilon2);
}

pub fn points_csv(records: &[PointRecord]) -> String {
    let d = records.first().map_or(0, |r| r.x.len());
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "x{},", j + 1);
    }
    out.push_str("truth,predicted\n");
    for r in records {
        for v in &r.x {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{}", u8::from(r.truth), u8::from(r.predicted));
    }
    out
}

/// Everything needed to rerun the estimate and audit pipeline.
#[derive(Clone, Debug)]
pub struct AuditConfig<'a> {
    pub sys: &'a SystemDef,
    pub cert: &'a ConverseCertificate,
    pub domain: &'a DomainBox,
    /// `params.seed` is the master seed; run `i` uses `derive_seed(seed, i)`.
    pub params: EstimateParams,
    pub m: usize,
}

pub fn repeat_audit(config: &AuditConfig<'_>, runs: usize) -> Result<AccuracyReport> {
    if runs == 0 {
        return Err(RoaError::InvalidArgument("runs must be >= 1".into()));
    }
    let mut per_run = Vec::with_capacity(runs);
    for i in 0..runs {
        let seed = derive_seed(config.params.seed, i as u64);
        let params = EstimateParams {
            seed,
            ..config.params.clone()
        };
        let est = scenario::estimate(config.sys, config.cert, config.domain, &params)?;
        let records =
            classify_points(config.sys, config.cert, &est, config.domain, config.m, seed)?;
        let mut run = tally(&records, seed);
        annotate(&mut run, &est);
        per_run.push(run);
    }
    AccuracyReport::from_runs(per_run)
}

/// Aligned text table with one row per labelled report.
pub fn format_table(rows: &[(String, &AccuracyReport)]) -> String {
    let header = [
        "", "runs", "M", "fp mean", "fp max", "fn mean", "fn max", "fn/stable mean",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (label, r) in rows {
        cells.push(vec![
            label.clone(),
            r.per_run.len().to_string(),
            r.m.to_string(),
            format!("{:.4}", r.fp_rate.mean),
            format!("{:.4}", r.fp_rate.max),
            format!("{:.4}", r.fn_rate.mean),
            format!("{:.4}", r.fn_rate.max),
            format!("{:.4}", r.fn_rate_of_stable.mean),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub const GRID_HEADER: &str = "x1,x2,gram_value,truth_label";

/// CSV lattice over the first two box coordinates; the remaining box
/// coordinates and any extra state coordinates are fixed at zero. Without an
/// estimate the `gram_value` column is left empty.
pub fn grid_export(
    sys: &SystemDef,
    cert: &ConverseCertificate,
    est: Option<&GramEstimate>,
    domain: &DomainBox,
    resolution: usize,
) -> Result<String> {
    if resolution < 2 {
        return Err(RoaError::InvalidArgument("grid resolution must be >= 2".into()));
    }
    domain.validate()?;
    if domain.dim() < 2 {
        return Err(RoaError::DimensionMismatch {
            expected: 2,
            got: domain.dim(),
        });
    }
    if let Some(est) = est {
        check_pairing(sys, cert, est, domain)?;
    } else if sys.label != cert.system_label {
        return Err(RoaError::InvalidArgument(format!(
            "certificate is for {:?}, system is {:?}",
            cert.system_label, sys.label
        )));
    }
    let axis = |j: usize, i: usize| {
        let t = i as f64 / (resolution - 1) as f64;
        domain.lower[j] + (domain.upper[j] - domain.lower[j]) * t
    };
    let lines: Vec<String> = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let mut x = vec![0.0; domain.dim()];
            x[0] = axis(0, k / resolution);
            x[1] = axis(1, k % resolution);
            let truth = converse::membership(sys, cert, &domain.lift(&x, sys.n)?)?.is_inside();
            let value = est.map(|e| e.poly.eval(&x).to_string()).unwrap_or_default();
            Ok(format!("{},{},{},{}", x[0], x[1], value, u8::from(truth)))
        })
        .collect::<Result<_>>()?;
    let mut out = String::with_capacity(lines.len() * 48);
    out.push_str(GRID_HEADER);
    out.push('\n');
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
