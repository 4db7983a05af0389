//! Surface-accuracy metrics and paired statistical comparisons.
//!
//! Errors are aggregated per volume first; confidence intervals and t-tests
//! run over the per-volume means.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::infer::TilingPlan;
use crate::synthdata::SurfaceSet;

fn check_dims(pred: &SurfaceSet, reference: &SurfaceSet, surface: usize) -> Result<()> {
    if (pred.lambda, pred.x, pred.y) != (reference.lambda, reference.x, reference.y) {
        return Err(Error::Shape(format!(
            "surface sets differ: {}x{}x{} vs {}x{}x{}",
            pred.lambda, pred.x, pred.y, reference.lambda, reference.x, reference.y
        )));
    }
    if surface >= pred.lambda {
        return Err(Error::Shape(format!("surface {surface} out of range for lambda={}", pred.lambda)));
    }
    if pred.x * pred.y == 0 {
        return Err(Error::Shape("empty surface grid".into()));
    }
    Ok(())
}

/// Unsigned mean surface positioning error of surface `i`, in voxels.
pub fn umspe(pred: &SurfaceSet, reference: &SurfaceSet, i: usize) -> Result<f64> {
    check_dims(pred, reference, i)?;
    let sum: f64 = pred
        .positions
        .chunks(pred.x)
        .zip(reference.positions.chunks(reference.x))
        .skip(i * pred.y)
        .take(pred.y)
        .flat_map(|(a, b)| a.iter().zip(b))
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / (pred.x * pred.y) as f64)
}

/// Mean of `pred - reference` for surface `i`; positive means predicted too deep.
pub fn signed_mean_error(pred: &SurfaceSet, reference: &SurfaceSet, i: usize) -> Result<f64> {
    check_dims(pred, reference, i)?;
    let mut sum = 0.0;
    for y in 0..pred.y {
        for (a, b) in pred.row(i, y).iter().zip(reference.row(i, y)) {
            sum += *a as f64 - *b as f64;
        }
    }
    Ok(sum / (pred.x * pred.y) as f64)
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-sided 95% Student-t quantile `t_{0.975, df}`.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Mean and 95% confidence half-width `t_{0.975,n-1} s / sqrt(n)`.
pub fn ci95(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Invalid(format!(
            "a confidence interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ci95 input".into()));
    }
    let (mean, sd) = mean_and_sd(values);
    let n = values.len();
    Ok((mean, t_quantile_975(n - 1) * sd / (n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairedOutcome {
    /// Ordinary test with finite t.
    Tested,
    /// All differences are zero.
    NoDifference,
    /// Differences are constant and non-zero; t is infinite.
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedT {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub significant: bool,
    pub outcome: PairedOutcome,
}

/// Paired Student t-test on `a - b`, two-sided, significance at p < 0.05.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired lists differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Invalid("a paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired_t input".into()));
    }
    let n = d.len();
    let (mean, sd) = mean_and_sd(&d);
    if sd == 0.0 {
        let outcome = if mean == 0.0 {
            PairedOutcome::NoDifference
        } else {
            PairedOutcome::ZeroVariance
        };
        let (t, p) = match outcome {
            PairedOutcome::NoDifference => (0.0, 1.0),
            _ => (f64::INFINITY.copysign(mean), 0.0),
        };
        return Ok(PairedT {
            n,
            mean_diff: mean,
            t,
            p,
            significant: p < 0.05,
            outcome,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedT {
        n,
        mean_diff: mean,
        t,
        p,
        significant: p < 0.05,
        outcome: PairedOutcome::Tested,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SeamStats {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
}

/// `|S(x_seam) - S(x_seam - 1)|` over every surface, slice and stitched boundary.
pub fn seam_discontinuity(pred: &SurfaceSet, plan: &TilingPlan) -> SeamStats {
    let seams = plan.seams();
    let mut stats = SeamStats::default();
    let mut sum = 0.0;
    for i in 0..pred.lambda {
        for y in 0..pred.y {
            let row = pred.row(i, y);
            for &c in seams.iter().filter(|&&c| c > 0 && c < row.len()) {
                let jump = (row[c] as f64 - row[c - 1] as f64).abs();
                stats.max = stats.max.max(jump);
                sum += jump;
                stats.count += 1;
            }
        }
    }
    if stats.count > 0 {
        stats.mean = sum / stats.count as f64;
    }
    stats
}

/// Published clinical results kept for side-by-side context; they come from
/// a different data set and are not expected to be reproduced here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceResult {
    pub method: &'static str,
    pub overall: f64,
    pub overall_ci: f64,
    pub per_surface: [f64; 2],
}

pub const REFERENCE_RESULTS: [ReferenceResult; 2] = [
    ReferenceResult {
        method: "cnn",
        overall: 1.27,
        overall_ci: 0.13,
        per_surface: [0.98, 1.56],
    },
    ReferenceResult {
        method: "graph",
        overall: 2.31,
        overall_ci: 0.29,
        per_surface: [1.45, 3.17],
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSummary {
    /// UMSPE pooled over all volumes.
    pub umspe: f64,
    pub signed_mean: f64,
    /// Mean of per-volume UMSPE and its 95% CI half-width (0 with one volume).
    pub volume_mean: f64,
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub label: String,
    pub surfaces: Vec<SurfaceSummary>,
    /// `per_volume[v][i]`: UMSPE of surface `i` in volume `v`.
    pub per_volume: Vec<Vec<f64>>,
    pub overall_umspe: f64,
    pub overall_ci_half_width: f64,
    pub ordering_violation_rate: f64,
    pub seams: Option<SeamStats>,
    pub paired: Option<PairedT>,
}

/// Per-volume overall UMSPE (mean over surfaces).
pub fn volume_means(report: &ErrorReport) -> Vec<f64> {
    report
        .per_volume
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect()
}

fn ci_or_zero(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() == 1 {
        Ok((values[0], 0.0))
    } else {
        ci95(values)
    }
}

/// Builds the error report for predictions against references, one pair per volume.
pub fn error_report(label: &str, preds: &[SurfaceSet], refs: &[SurfaceSet]) -> Result<ErrorReport> {
    if preds.is_empty() || preds.len() != refs.len() {
        return Err(Error::Shape(format!(
            "need matching non-empty prediction/reference lists, got {} and {}",
            preds.len(),
            refs.len()
        )));
    }
    let lambda = refs[0].lambda;
    let mut per_volume = Vec::with_capacity(preds.len());
    let mut pooled = vec![(0.0, 0.0, 0usize); lambda];
    let (mut violations, mut columns) = (0usize, 0usize);
    for (p, r) in preds.iter().zip(refs) {
        if r.lambda != lambda {
            return Err(Error::Shape("reference sets differ in lambda".into()));
        }
        let mut row = Vec::with_capacity(lambda);
        for (i, acc) in pooled.iter_mut().enumerate() {
            let u = umspe(p, r, i)?;
            let s = signed_mean_error(p, r, i)?;
            let cols = p.x * p.y;
            acc.0 += u * cols as f64;
            acc.1 += s * cols as f64;
            acc.2 += cols;
            row.push(u);
        }
        per_volume.push(row);
        violations += p.ordering_violations(1.0);
        columns += p.x * p.y;
    }
    let mut surfaces = Vec::with_capacity(lambda);
    for (i, (u, s, n)) in pooled.iter().enumerate() {
        let vals: Vec<f64> = per_volume.iter().map(|v| v[i]).collect();
        let (volume_mean, ci_half_width) = ci_or_zero(&vals)?;
        surfaces.push(SurfaceSummary {
            umspe: u / *n as f64,
            signed_mean: s / *n as f64,
            volume_mean,
            ci_half_width,
        });
    }
    let mut report = ErrorReport {
        label: label.to_string(),
        surfaces,
        per_volume,
        overall_umspe: 0.0,
        overall_ci_half_width: 0.0,
        ordering_violation_rate: if lambda > 1 {
            violations as f64 / (columns * (lambda - 1)) as f64
        } else {
            0.0
        },
        seams: None,
        paired: None,
    };
    let (m, h) = ci_or_zero(&volume_means(&report))?;
    report.overall_umspe = m;
    report.overall_ci_half_width = h;
    Ok(report)
}

impl ErrorReport {
    /// Line-delimited `key = value` records.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let l = &self.label;
        let _ = writeln!(s, "{l}.volumes = {}", self.per_volume.len());
        let _ = writeln!(s, "{l}.umspe = {}", self.overall_umspe);
        let _ = writeln!(s, "{l}.ci95_half_width = {}", self.overall_ci_half_width);
        for (i, sf) in self.surfaces.iter().enumerate() {
            let k = i + 1;
            let _ = writeln!(s, "{l}.s{k}.umspe = {}", sf.umspe);
            let _ = writeln!(s, "{l}.s{k}.signed_mean = {}", sf.signed_mean);
            let _ = writeln!(s, "{l}.s{k}.volume_mean = {}", sf.volume_mean);
            let _ = writeln!(s, "{l}.s{k}.ci95_half_width = {}", sf.ci_half_width);
        }
        for (v, row) in self.per_volume.iter().enumerate() {
            for (i, u) in row.iter().enumerate() {
                let _ = writeln!(s, "{l}.volume{v}.s{}.umspe = {u}", i + 1);
            }
        }
        let _ = writeln!(s, "{l}.ordering_violation_rate = {}", self.ordering_violation_rate);
        if let Some(seam) = &self.seams {
            let _ = writeln!(s, "{l}.seam.count = {}", seam.count);
            let _ = writeln!(s, "{l}.seam.max = {}", seam.max);
            let _ = writeln!(s, "{l}.seam.mean = {}", seam.mean);
        }
        if let Some(p) = &self.paired {
            let _ = writeln!(s, "{l}.paired.n = {}", p.n);
            let _ = writeln!(s, "{l}.paired.mean_diff = {}", p.mean_diff);
            let _ = writeln!(s, "{l}.paired.t = {}", p.t);
            let _ = writeln!(s, "{l}.paired.p = {}", p.p);
            let _ = writeln!(s, "{l}.paired.significant = {}", p.significant);
        }
        s
    }

    /// Human-readable summary with the published clinical numbers alongside.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} ({} volumes)", self.label, self.per_volume.len());
        let _ = writeln!(
            s,
            "  overall UMSPE      {:.3} +/- {:.3} voxels (mean +/- 95% CI over volumes)",
            self.overall_umspe, self.overall_ci_half_width
        );
        for (i, sf) in self.surfaces.iter().enumerate() {
            let _ = writeln!(
                s,
                "  S{} UMSPE          {:.3} (signed {:+.3}, per-volume {:.3} +/- {:.3})",
                i + 1,
                sf.umspe,
                sf.signed_mean,
                sf.volume_mean,
                sf.ci_half_width
            );
        }
        let _ = writeln!(s, "  ordering violations {:.4}% of columns", 100.0 * self.ordering_violation_rate);
        if let Some(seam) = &self.seams {
            let _ = writeln!(
                s,
                "  seam jumps         max {:.3}, mean {:.3} over {} boundaries",
                seam.max, seam.mean, seam.count
            );
        }
        if let Some(p) = &self.paired {
            let verdict = match p.outcome {
                PairedOutcome::NoDifference => "no difference".to_string(),
                PairedOutcome::ZeroVariance => "constant difference (zero variance)".to_string(),
                PairedOutcome::Tested => format!("t = {:.4}", p.t),
            };
            let _ = writeln!(
                s,
                "  paired test        {verdict}, p = {:.4}, {}",
                p.p,
                if p.significant { "significant at 0.05" } else { "not significant at 0.05" }
            );
        }
        let _ = writeln!(s, "  published clinical reference (different data, context only):");
        for r in &REFERENCE_RESULTS {
            let _ = writeln!(
                s,
                "    {:<6} overall {:.2} +/- {:.2}, S1 {:.2}, S2 {:.2}",
                r.method, r.overall, r.overall_ci, r.per_surface[0], r.per_surface[1]
            );
        }
        s
    }
}
