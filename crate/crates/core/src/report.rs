//! Run summaries recomputed from a manifest, and the score curve as SVG.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::objective::{dpar, format_percent, improvement_percent, DparReport, ObjectiveError};
use crate::refine::ManifestRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// Best feasible objective among everything generated up to this step, which is also the
    /// best of the exemplar population.
    pub best: Option<f64>,
    /// Mean and worst feasible objective of the candidates born at this step.
    pub mean: Option<f64>,
    pub worst: Option<f64>,
    pub born: usize,
    pub infeasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: Vec<StepStats>,
    pub candidates: usize,
    pub infeasible: usize,
    /// Candidates that needed at least one regenerated artifact.
    pub regenerated: usize,
    /// Candidates whose prompt was re-requested at least once.
    pub prompt_retried: usize,
    pub dpar: Option<DparReport>,
    pub baseline_dpar: Option<DparReport>,
    pub improvement_percent: Option<f64>,
    /// Signed two-decimal rendering of `improvement_percent`, e.g. `+14.46%`.
    pub improvement: Option<String>,
}

pub fn manifest_dpar(records: &[ManifestRecord]) -> Result<DparReport, ObjectiveError> {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.f_domain?, r.f_physical?)))
        .collect();
    dpar(&pairs)
}

pub fn step_stats(records: &[ManifestRecord]) -> Vec<StepStats> {
    let last = records.iter().map(|r| r.step).max();
    let Some(last) = last else { return Vec::new() };
    let mut best = f64::INFINITY;
    (0..=last)
        .map(|step| {
            let born: Vec<&ManifestRecord> = records.iter().filter(|r| r.step == step).collect();
            let values: Vec<f64> = born.iter().filter_map(|r| r.objective).collect();
            for v in &values {
                best = best.min(*v);
            }
            StepStats {
                step,
                best: best.is_finite().then_some(best),
                mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
                worst: values.iter().copied().reduce(f64::max),
                born: born.len(),
                infeasible: born.len() - values.len(),
            }
        })
        .collect()
}

impl RunReport {
    pub fn from_manifest(records: &[ManifestRecord], baseline: Option<&[ManifestRecord]>) -> Self {
        let dpar = manifest_dpar(records).ok();
        let baseline_dpar = baseline.and_then(|b| manifest_dpar(b).ok());
        let improvement_percent = match (&baseline_dpar, &dpar) {
            (Some(b), Some(o)) => improvement_percent(b.dpar, o.dpar).ok(),
            _ => None,
        };
        Self {
            steps: step_stats(records),
            candidates: records.len(),
            infeasible: records.iter().filter(|r| r.objective.is_none()).count(),
            regenerated: records.iter().filter(|r| r.regenerations > 0).count(),
            prompt_retried: records.iter().filter(|r| r.retries > r.regenerations).count(),
            dpar,
            baseline_dpar,
            improvement: improvement_percent.map(format_percent),
            improvement_percent,
        }
    }
}

/// Line chart of best, mean and worst objective per step.
pub fn curve_svg(steps: &[StepStats]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    let series: [(&str, &str, Vec<(usize, f64)>); 3] = [
        ("best", "#1f77b4", steps.iter().filter_map(|s| Some((s.step, s.best?))).collect()),
        ("mean", "#2ca02c", steps.iter().filter_map(|s| Some((s.step, s.mean?))).collect()),
        ("worst", "#d62728", steps.iter().filter_map(|s| Some((s.step, s.worst?))).collect()),
    ];
    let values: Vec<f64> = series.iter().flat_map(|s| s.2.iter().map(|p| p.1)).collect();
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let last = steps.last().map_or(1, |s| s.step.max(1)) as f64;
    let x = |step: usize| PAD + (W - 2.0 * PAD) * step as f64 / last;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {top} V{bottom} H{right}" stroke="black" fill="none"/>"#,
        top = PAD,
        bottom = H - PAD,
        right = W - PAD
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            PAD - 6.0,
            y(v) + 4.0
        );
    }
    let tick = (last as usize).div_ceil(10).max(1);
    for s in (0..=last as usize).step_by(tick) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{s}</text>"#,
            x(s),
            H - PAD + 16.0
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">step</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">objective</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (k, (name, colour, points)) in series.iter().enumerate() {
        if !points.is_empty() {
            let pts: Vec<String> = points.iter().map(|(s, v)| format!("{:.1},{:.1}", x(*s), y(*v))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        let ly = PAD + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{name}</text>"#,
            W - PAD - 70.0,
            W - PAD - 50.0,
            W - PAD - 44.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
