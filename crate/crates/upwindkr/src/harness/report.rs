//! Deterministic study outputs: a per-level CSV, a text summary, and a
//! log-log SVG plot. Identical reports produce byte-identical CSV, text and
//! SVG files; wall-clock timings go to a separate file that is documented
//! as non-reproducible.

use super::study::StudyReport;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// `levels.csv`: one row per (level, evaluation time).
pub fn levels_csv(report: &StudyReport) -> String {
    let mut out = String::from(
        "level,h,delta,r,cells,time,dr,dr_times_r,w1,l1,bias_bound,atoms_plus,atoms_minus,imbalance_removed\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.level,
            fmt(r.h),
            fmt(r.delta),
            fmt(r.r),
            r.cells,
            fmt(r.time),
            fmt(r.dr),
            fmt(r.dr * r.r),
            fmt(r.w1),
            fmt(r.l1),
            fmt(r.bias_bound),
            r.ot_atoms.0,
            r.ot_atoms.1,
            fmt(r.imbalance_removed),
        );
    }
    out
}

/// `diagnostics.csv`: one row per level.
pub fn diagnostics_csv(report: &StudyReport) -> String {
    let mut out = String::from(
        "level,h,delta,cells,steps,mass_drift_max,min_value,bv_temporal,bv_spatial,bv_temporal_scaled,bv_spatial_scaled,energy_temporal,energy_spatial,energy_ratio,stability_margin,stability_lambda,step_margin,solver_iters\n",
    );
    let mut diags = report.diagnostics.clone();
    diags.sort_by_key(|d| d.level);
    for d in &diags {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            d.level,
            fmt(d.h),
            fmt(d.delta),
            d.cells,
            d.steps,
            fmt(d.mass_drift_max),
            fmt(d.min_value),
            fmt(d.bv_temporal),
            fmt(d.bv_spatial),
            fmt(d.bv_temporal_scaled),
            fmt(d.bv_spatial_scaled),
            fmt(d.energy_temporal),
            fmt(d.energy_spatial),
            fmt(d.energy_ratio),
            fmt(d.stability.margin),
            fmt(d.stability.lambda),
            fmt(d.stability.step_margin),
            d.solver_iters_total,
        );
    }
    out
}

/// `summary.txt`: fitted rates and the calibration quantities.
pub fn summary_text(report: &StudyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "study: {}", report.test_case);
    let _ = writeln!(out, "levels: {}", report.diagnostics.len());
    let _ = writeln!(out, "t_final: {}", fmt(report.t_final));
    let _ = writeln!(out, "u_sup: {}", fmt(report.u_sup));
    let _ = writeln!(
        out,
        "weak rate (dr*r vs h):            {:+.4} +- {:.4}",
        report.weak_rate_h.slope, report.weak_rate_h.half_width
    );
    let _ = writeln!(
        out,
        "weak rate (dr*r vs sqrt(h)+sqrt(delta)): {:+.4} +- {:.4}",
        report.weak_rate_scale.slope, report.weak_rate_scale.half_width
    );
    let _ = writeln!(
        out,
        "strong rate (l1 vs h):            {:+.4} +- {:.4}",
        report.strong_rate_h.slope, report.strong_rate_h.half_width
    );
    for (t, fit) in &report.per_time_weak {
        let _ = writeln!(
            out,
            "weak rate at t={}: {:+.4} +- {:.4}",
            fmt(*t),
            fit.slope,
            fit.half_width
        );
    }
    let mut diags = report.diagnostics.clone();
    diags.sort_by_key(|d| d.level);
    if let Some(first) = diags.first() {
        let _ = writeln!(
            out,
            "bv calibration (coarsest): temporal_scaled={} spatial_scaled={}",
            fmt(first.bv_temporal_scaled),
            fmt(first.bv_spatial_scaled)
        );
    }
    for d in &diags {
        let _ = writeln!(
            out,
            "level {}: h={} delta={} cells={} steps={} drift={} min={} stab_margin={} lambda={}",
            d.level,
            fmt(d.h),
            fmt(d.delta),
            d.cells,
            d.steps,
            fmt(d.mass_drift_max),
            fmt(d.min_value),
            fmt(d.stability.margin),
            fmt(d.stability.lambda),
        );
    }
    out
}

/// `timings.csv`: wall-clock seconds per level. Not covered by the
/// determinism guarantee.
pub fn timings_csv(report: &StudyReport) -> String {
    let mut out = String::from("level,runtime_seconds\n");
    let mut diags = report.diagnostics.clone();
    diags.sort_by_key(|d| d.level);
    for d in &diags {
        let _ = writeln!(out, "{},{:.3}", d.level, d.runtime_seconds);
    }
    out
}

/// Log-log scatter of the final-time error proxy with the fitted line.
pub fn study_svg(report: &StudyReport) -> String {
    let pts: Vec<(f64, f64)> = report
        .final_time_rows()
        .iter()
        .map(|r| (r.h.sqrt() + r.delta.sqrt(), (r.dr * r.r).max(1e-300)))
        .collect();
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 30.0, 50.0);
    let xs: Vec<f64> = pts.iter().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.log10()).collect();
    let (xmin, xmax) = bounds(&xs);
    let (ymin, ymax) = bounds(&ys);
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - ymin) / (ymax - ymin) * (h - mb - mt);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">{} error vs scale (log-log), slope {:.3}</text>",
        0.5 * w,
        xml_escape(&report.test_case),
        report.weak_rate_scale.slope
    );
    // axes
    let _ = writeln!(
        out,
        "<line x1=\"{ml:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        h - mb,
        w - mr,
        h - mb
    );
    let _ = writeln!(
        out,
        "<line x1=\"{ml:.1}\" y1=\"{mt:.1}\" x2=\"{ml:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        h - mb
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">log10(sqrt(h) + sqrt(delta))</text>",
        0.5 * w,
        h - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">log10(dr * r)</text>",
        0.5 * h,
        0.5 * h
    );
    // fitted line through the data in log coordinates
    if pts.len() >= 2 {
        let slope = report.weak_rate_scale.slope;
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let y0 = ym + slope * (xmin - xm);
        let y1 = ym + slope * (xmax - xm);
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"steelblue\" stroke-width=\"1.5\"/>",
            sx(xmin),
            sy(y0),
            sx(xmax),
            sy(y1)
        );
    }
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"firebrick\"/>",
            sx(*x),
            sy(*y)
        );
    }
    // tick labels at the extremes
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{xmin:.2}</text>",
        sx(xmin),
        h - mb + 16.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{xmax:.2}</text>",
        sx(xmax),
        h - mb + 16.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{ymin:.2}</text>",
        ml - 6.0,
        sy(ymin) + 4.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{ymax:.2}</text>",
        ml - 6.0,
        sy(ymax) + 4.0
    );
    out.push_str("</svg>\n");
    out
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the selected formats into `out_dir` and returns the paths.
pub fn emit_report(
    report: &StudyReport,
    formats: &std::collections::BTreeSet<super::config::EmitFormat>,
    out_dir: &Path,
) -> std::io::Result<Vec<PathBuf>> {
    use super::config::EmitFormat;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    if formats.contains(&EmitFormat::Csv) {
        let p = out_dir.join("levels.csv");
        std::fs::write(&p, levels_csv(report))?;
        written.push(p);
        let p = out_dir.join("diagnostics.csv");
        std::fs::write(&p, diagnostics_csv(report))?;
        written.push(p);
        let p = out_dir.join("timings.csv");
        std::fs::write(&p, timings_csv(report))?;
        written.push(p);
    }
    if formats.contains(&EmitFormat::Text) {
        let p = out_dir.join("summary.txt");
        std::fs::write(&p, summary_text(report))?;
        written.push(p);
    }
    if formats.contains(&EmitFormat::Svg) {
        let p = out_dir.join("study.svg");
        std::fs::write(&p, study_svg(report))?;
        written.push(p);
    }
    Ok(written)
}
