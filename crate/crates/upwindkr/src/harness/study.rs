//! Convergence studies: run the scheme across a mesh family, measure the
//! distance to a reference solution at selected times, collect diagnostics
//! and fit rates.
//!
//! Per level the pipeline is: build mesh, pick the step from the delta rule
//! (snapped to an even divisor of the horizon so the evaluation times land
//! on step times), run the solver, build the reference at each evaluation
//! time, atomize the difference and solve the transport problem at the
//! radius given by the r rule. The transport value is reported as `dr`; the
//! dimensionful proxy `dr * r` is what the rate fit uses, against both the
//! mesh size and the combined scale sqrt(h) + sqrt(delta).

use super::config::{ExperimentConfig, ReferenceKind};
use super::testcases::{self, TestCase};
use crate::diagnostics::{
    energy_report, stability_certificate, weak_bv_report, StabilityCertificate,
};
use crate::fields::CellField;
use crate::mesh::Tessellation;
use crate::reference::{self, ReferenceError};
use crate::transport::{self, DiscreteMeasure, TransportError};
use crate::upwind::{self, SchemeConfig, SolverError, Trajectory};
use rayon::prelude::*;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown test case {0:?}")]
    UnknownTestCase(String),
    #[error("need at least 3 levels for rate fitting, got {0}")]
    TooFewLevels(usize),
    #[error("level {level} (h target {h_target}): {source}")]
    Level { level: usize, h_target: f64, source: Box<StudyError> },
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("mesh: {0}")]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("reference: {0}")]
    Reference(#[from] ReferenceError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("rate fit: {0}")]
    Fit(String),
    #[error("step {delta} exceeds the admissible bound {max} on level {level}")]
    StepBound { delta: f64, max: f64, level: usize },
    #[error("evaluation time {0} outside (0, {1}]")]
    BadEvalTime(f64, f64),
}

/// Least-squares slope in log-log coordinates with a residual-based
/// confidence half width (two standard errors).
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    pub slope: f64,
    pub half_width: f64,
}

/// Fits error = C scale^slope through (scale, error) pairs.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, StudyError> {
    if points.len() < 3 {
        return Err(StudyError::Fit(format!("need 3 points, got {}", points.len())));
    }
    for &(s, e) in points {
        if !(s > 0.0 && e > 0.0) {
            return Err(StudyError::Fit(format!("nonpositive point ({s}, {e})")));
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    if sxx == 0.0 {
        return Err(StudyError::Fit("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let dof = (points.len() - 2).max(1) as f64;
    let half_width = 2.0 * (rss / dof / sxx).sqrt();
    Ok(RateFit { slope, half_width })
}

/// One (level, evaluation time) record.
#[derive(Debug, Clone)]
pub struct LevelRow {
    pub level: usize,
    pub h: f64,
    pub delta: f64,
    pub r: f64,
    pub cells: usize,
    pub time: f64,
    /// Transport distance at radius r between reference and solution.
    pub dr: f64,
    /// Linear-cost transport distance of the same pair.
    pub w1: f64,
    /// Cellwise L1 distance on the comparison mesh.
    pub l1: f64,
    /// Documented atomization-plus-reference displacement bound, in units
    /// of dr.
    pub bias_bound: f64,
    pub ot_atoms: (usize, usize),
    pub imbalance_removed: f64,
}

/// Per-level diagnostics independent of the evaluation time.
#[derive(Debug, Clone)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub h: f64,
    pub delta: f64,
    pub cells: usize,
    pub steps: usize,
    pub mass_drift_max: f64,
    pub min_value: f64,
    pub bv_temporal: f64,
    pub bv_spatial: f64,
    pub bv_temporal_scaled: f64,
    pub bv_spatial_scaled: f64,
    pub energy_temporal: f64,
    pub energy_spatial: f64,
    pub energy_ratio: f64,
    pub stability: StabilityCertificate,
    pub solver_iters_total: usize,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub test_case: String,
    pub rows: Vec<LevelRow>,
    pub diagnostics: Vec<LevelDiagnostics>,
    /// Weak rate: slope of dr r against the mesh size h at the final
    /// evaluation time.
    pub weak_rate_h: RateFit,
    /// Same quantity against sqrt(h) + sqrt(delta).
    pub weak_rate_scale: RateFit,
    /// Strong rate: slope of the L1 column against h.
    pub strong_rate_h: RateFit,
    /// Per evaluation time weak rates against h.
    pub per_time_weak: Vec<(f64, RateFit)>,
    pub u_sup: f64,
    pub t_final: f64,
}

impl StudyReport {
    /// Rows at the final evaluation time, coarsest level first.
    pub fn final_time_rows(&self) -> Vec<&LevelRow> {
        let tmax = self
            .rows
            .iter()
            .map(|r| r.time)
            .fold(f64::NEG_INFINITY, f64::max);
        self.rows.iter().filter(|r| r.time == tmax).collect()
    }
}

/// Snap the raw step to an even divisor of the horizon so both the half and
/// the full horizon are step times.
fn snap_delta(t_final: f64, raw: f64) -> f64 {
    let n = ((t_final / raw / 2.0).ceil() as usize).max(1) * 2;
    t_final / n as f64
}

struct LevelOutcome {
    rows: Vec<LevelRow>,
    diag: LevelDiagnostics,
}

/// Runs the full study described by the configuration.
pub fn run_study(config: &ExperimentConfig) -> Result<StudyReport, StudyError> {
    let tc = testcases::test_case(&config.test_case)
        .ok_or_else(|| StudyError::UnknownTestCase(config.test_case.clone()))?;
    let levels: Vec<f64> = if config.levels.is_empty() {
        tc.default_levels.to_vec()
    } else {
        config.levels.clone()
    };
    if levels.len() < 3 {
        return Err(StudyError::TooFewLevels(levels.len()));
    }
    let t_final = config.t_final.unwrap_or(tc.t_final);
    let q = config.q.unwrap_or(tc.q);
    let kappa = config.kappa.unwrap_or(tc.kappa);
    let refine = if config.particles_refine > 0 {
        config.particles_refine
    } else {
        tc.default_refine
    };
    let eval_times: Vec<f64> = if config.eval_times.is_empty() {
        vec![0.5 * t_final, t_final]
    } else {
        config.eval_times.clone()
    };
    for &t in &eval_times {
        if !(t > 0.0 && t <= t_final * (1.0 + 1e-12)) {
            return Err(StudyError::BadEvalTime(t, t_final));
        }
    }
    let u_sup = tc.velocity.sup_norm();
    let delta_max = if tc.velocity.is_divergence_free() {
        t_final
    } else {
        upwind::max_timestep(tc.velocity.as_ref(), q, kappa, t_final)?
    };

    // one fine-grid reference serves every level
    let fine: Option<(Arc<Tessellation>, Trajectory)> = match config.reference {
        ReferenceKind::Particles => None,
        ReferenceKind::FineGrid => {
            let h_fine = levels[0] / 16.0;
            let mesh = Arc::new(tc.mesh_family.build(h_fine, config.seed)?);
            let raw = config.delta_rule.apply(mesh.h, u_sup) / 16.0;
            let delta_fine = snap_delta(t_final, raw.min(delta_max));
            let mut cfg = SchemeConfig::new(delta_fine, t_final);
            cfg.q = q;
            cfg.kappa = kappa;
            cfg.solver_tol = config.solver_tol;
            let traj = upwind::run(&mesh, tc.velocity.as_ref(), tc.data.as_ref(), &cfg)?;
            Some((mesh, traj))
        }
    };

    let run_level = |(level, &h_target): (usize, &f64)| -> Result<LevelOutcome, StudyError> {
        level_pipeline(
            level, h_target, &tc, config, t_final, q, kappa, refine, &eval_times, u_sup,
            delta_max, fine.as_ref(),
        )
        .map_err(|e| StudyError::Level { level, h_target, source: Box::new(e) })
    };

    let workers = config.effective_workers();
    let outcomes: Result<Vec<LevelOutcome>, StudyError> = if workers == 1 {
        levels.iter().enumerate().map(run_level).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(|| levels.par_iter().enumerate().map(run_level).collect())
    };
    let outcomes = outcomes?;

    let mut rows: Vec<LevelRow> = Vec::new();
    let mut diagnostics = Vec::new();
    for o in outcomes {
        rows.extend(o.rows);
        diagnostics.push(o.diag);
    }
    rows.sort_by(|a, b| {
        b.h.partial_cmp(&a.h)
            .unwrap()
            .then(a.time.partial_cmp(&b.time).unwrap())
    });

    let tmax = eval_times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let finals: Vec<&LevelRow> = rows
        .iter()
        .filter(|r| (r.time - tmax).abs() <= 1e-9 * t_final)
        .collect();
    let weak_pts_h: Vec<(f64, f64)> = finals
        .iter()
        .map(|r| (r.h, (r.dr * r.r).max(1e-300)))
        .collect();
    let weak_pts_scale: Vec<(f64, f64)> = finals
        .iter()
        .map(|r| (r.h.sqrt() + r.delta.sqrt(), (r.dr * r.r).max(1e-300)))
        .collect();
    let strong_pts: Vec<(f64, f64)> = finals.iter().map(|r| (r.h, r.l1.max(1e-300))).collect();
    let weak_rate_h = fit_rate(&weak_pts_h)?;
    let weak_rate_scale = fit_rate(&weak_pts_scale)?;
    let strong_rate_h = fit_rate(&strong_pts)?;
    let mut per_time_weak = Vec::new();
    for &t in &eval_times {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| (r.time - t).abs() <= 1e-9 * t_final)
            .map(|r| (r.h, (r.dr * r.r).max(1e-300)))
            .collect();
        if pts.len() >= 3 {
            per_time_weak.push((t, fit_rate(&pts)?));
        }
    }

    Ok(StudyReport {
        test_case: config.test_case.clone(),
        rows,
        diagnostics,
        weak_rate_h,
        weak_rate_scale,
        strong_rate_h,
        per_time_weak,
        u_sup,
        t_final,
    })
}

#[allow(clippy::too_many_arguments)]
fn level_pipeline(
    level: usize,
    h_target: f64,
    tc: &TestCase,
    config: &ExperimentConfig,
    t_final: f64,
    q: f64,
    kappa: f64,
    refine: usize,
    eval_times: &[f64],
    u_sup: f64,
    delta_max: f64,
    fine: Option<&(Arc<Tessellation>, Trajectory)>,
) -> Result<LevelOutcome, StudyError> {
    let started = Instant::now();
    let mesh = Arc::new(tc.mesh_family.build(h_target, config.seed + level as u64)?);
    let h = mesh.h;
    let raw_delta = config.delta_rule.apply(h, u_sup);
    let delta = snap_delta(t_final, raw_delta);
    if delta > delta_max * (1.0 + 1e-12) {
        return Err(StudyError::StepBound { delta, max: delta_max, level });
    }
    let mut scheme = SchemeConfig::new(delta, t_final);
    scheme.q = q;
    scheme.kappa = kappa;
    scheme.solver_tol = config.solver_tol;
    let traj = upwind::run(&mesh, tc.velocity.as_ref(), tc.data.as_ref(), &scheme)?;

    if config.emit_trajectories {
        let dir = config.out_dir.join(format!("level{level}"));
        let _ = std::fs::create_dir_all(&dir);
        let _ = std::fs::write(dir.join("snapshots.csv"), traj.snapshots_csv());
        let _ = std::fs::write(dir.join("mass_audit.csv"), traj.mass_audit_csv());
    }

    // deposit grid for particle references: unperturbed, finer than the
    // level so sub-cell placement survives atomization
    let deposit_factor = if mesh.dim == 1 { 4 } else { 2 };
    let dep_mesh = Arc::new(tc.mesh_family.build_reference_grid(h_target, deposit_factor)?);

    let mut rows = Vec::new();
    for &t in eval_times {
        let step = traj.step_at(t);
        let te = traj.times[step];
        let sol = traj.snapshot_field(step);

        // (reference field on its own mesh, displacement committed by the
        // reference representation)
        let (ref_field, ref_displacement) = match config.reference {
            ReferenceKind::Particles => {
                let cloud = reference::reference_for_run(
                    tc.velocity.as_ref(),
                    tc.data.as_ref(),
                    &traj,
                    te,
                    refine,
                    config.ode_tol,
                )?;
                let field = reference::deposit(&cloud, &dep_mesh)?;
                (field, h / refine as f64 + dep_mesh.h)
            }
            ReferenceKind::FineGrid => {
                let (fmesh, ftraj) = fine.expect("fine reference prepared");
                let fstep = ftraj.step_at(te);
                (
                    CellField::new(fmesh.clone(), ftraj.snapshots[fstep].clone()),
                    fmesh.h + fmesh.h.sqrt(),
                )
            }
        };

        let r = config.r_rule.apply(h, delta);
        let diff = transport::signed_difference(&ref_field, &sol, config.balance_tol)?;
        let (plus, minus, coarsen_bias) = fit_to_cap(diff.plus, diff.minus, config.ot_cap, r);
        let dr = transport::kr_distance_with_cap(&plus, &minus, r, config.ot_cap)?;
        let w1 = transport::w1_distance_with_cap(&plus, &minus, config.ot_cap)?;
        // strong error compared on the reference mesh; the solution extends
        // to it as a piecewise constant
        let l1: f64 = ref_field
            .values
            .iter()
            .zip(&ref_field.mesh.cells)
            .map(|(v, c)| {
                let host = mesh.locate(c.centroid).expect("reference grid covers the domain");
                c.volume * (v - sol.values[host]).abs()
            })
            .sum();
        let moved_mass = plus.total() + minus.total();
        let bias_bound = ((ref_displacement / r + 1.0).ln()
            + (h / r + 1.0).ln()
            + (coarsen_bias / r + 1.0).ln())
            * moved_mass;
        rows.push(LevelRow {
            level,
            h,
            delta,
            r,
            cells: mesh.cell_count(),
            time: te,
            dr: dr.value,
            w1: w1.value,
            l1,
            bias_bound,
            ot_atoms: (plus.len(), minus.len()),
            imbalance_removed: diff.imbalance_removed,
        });
    }

    // diagnostics: weak BV, energy, stability (split runs for signed data)
    let bv = weak_bv_report(&traj);
    let qbar = config.qbar.min(q.min(2.0)).max(1.0 + 1e-6);
    let energy = energy_report(&traj, qbar).map_err(|e| StudyError::Fit(e.to_string()))?;
    let stability = if testcases::is_signed(tc) {
        let (p, m) =
            upwind::split_run(&mesh, tc.velocity.as_ref(), tc.data.as_ref(), &scheme)?;
        let cp = stability_certificate(&p, q, kappa);
        let cm = stability_certificate(&m, q, kappa);
        if cp.margin <= cm.margin {
            cp
        } else {
            cm
        }
    } else {
        stability_certificate(&traj, q, kappa)
    };

    let diag = LevelDiagnostics {
        level,
        h,
        delta,
        cells: mesh.cell_count(),
        steps: traj.steps(),
        mass_drift_max: traj.max_mass_drift(),
        min_value: traj.min_value(),
        bv_temporal: bv.temporal_sum,
        bv_spatial: bv.spatial_sum,
        bv_temporal_scaled: bv.temporal_sum / bv.temporal_scale.max(1e-300),
        bv_spatial_scaled: if bv.spatial_scale > 0.0 {
            bv.spatial_sum / bv.spatial_scale
        } else {
            0.0
        },
        energy_temporal: energy.temporal,
        energy_spatial: energy.spatial,
        energy_ratio: energy.ratio,
        stability,
        solver_iters_total: traj.stats.iter().map(|s| s.iters).sum(),
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(LevelOutcome { rows, diag })
}

/// Coarsens both sides until the cost matrix fits the cap, starting from a
/// bin size well under the cost radius and doubling. Returns the applied
/// displacement bound (zero when untouched).
fn fit_to_cap(
    plus: DiscreteMeasure,
    minus: DiscreteMeasure,
    cap: usize,
    r: f64,
) -> (DiscreteMeasure, DiscreteMeasure, f64) {
    if plus.len() * minus.len() <= cap {
        return (plus, minus, 0.0);
    }
    let mut cell = r / 10.0;
    let mut p = plus;
    let mut m = minus;
    loop {
        p = transport::coarsen(&p, cell);
        m = transport::coarsen(&m, cell);
        if p.len() * m.len() <= cap {
            return (p, m, cell);
        }
        cell *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_rate_exact_power_law() {
        let pts: Vec<(f64, f64)> = [0.1_f64, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&s| (s, s.sqrt()))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!(fit.half_width < 1e-12);
    }

    #[test]
    fn fit_rate_constant_and_noisy() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&s| (s, 3.0)).collect();
        let fit = fit_rate(&pts).unwrap();
        assert!(fit.slope.abs() < 1e-12);

        // synthetic half-order law with +-5 percent wiggle
        let noise = [1.05, 0.95, 1.03, 0.97, 1.02];
        let pts: Vec<(f64, f64)> = (0..5)
            .map(|k| {
                let s = 0.1 / 2f64.powi(k as i32);
                (s, s.sqrt() * noise[k])
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!(fit.slope > 0.4 && fit.slope < 0.6, "slope {}", fit.slope);
    }

    #[test]
    fn fit_rate_rejects_bad_input() {
        assert!(fit_rate(&[(0.1, 1.0), (0.05, 0.5)]).is_err());
        assert!(fit_rate(&[(0.1, 1.0), (0.05, 0.5), (0.025, -1.0)]).is_err());
    }

    #[test]
    fn snap_delta_divides_evenly() {
        let t = std::f64::consts::FRAC_PI_2;
        let d = snap_delta(t, 0.013);
        let n = (t / d).round();
        assert!((n * d - t).abs() < 1e-12);
        assert!(d <= 0.013 + 1e-15);
        assert_eq!((n as usize) % 2, 0);
    }

    #[test]
    fn mini_study_runs_and_reports() {
        // a fast smoke study on the no-dynamics case
        let mut cfg = ExperimentConfig::for_test_case("tc0");
        cfg.levels = vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
        cfg.particles_refine = 8;
        cfg.workers = 1;
        let report = run_study(&cfg).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.diagnostics.len(), 3);
        // atomization error scales like h, so the weak slope sits near one
        assert!(
            report.weak_rate_h.slope > 0.8 && report.weak_rate_h.slope < 1.2,
            "slope {}",
            report.weak_rate_h.slope
        );
        for d in &report.diagnostics {
            assert!(d.mass_drift_max < 1e-9);
            assert!(d.stability.holds);
        }
        // monotone dr at the final time
        let finals = report.final_time_rows();
        for w in finals.windows(2) {
            assert!(w[1].dr <= w[0].dr * (1.0 + 1e-9));
        }
    }

    #[test]
    fn unknown_test_case_fails_cleanly() {
        let cfg = ExperimentConfig::for_test_case("tc42");
        assert!(matches!(run_study(&cfg), Err(StudyError::UnknownTestCase(_))));
    }
}
