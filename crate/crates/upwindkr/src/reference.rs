//! High-accuracy reference solutions of the continuity equation by particle
//! advection along characteristics, plus a fine-grid fallback reference.
//!
//! Particles are seeded on a stratified sub-lattice of each cell, advected
//! with an adaptive embedded Runge-Kutta integrator, and deposited back onto
//! a mesh as cell averages. Sources add emission particles at midpoint times
//! of each window. Masses never change along trajectories, so the cloud
//! conserves every seeded total exactly.
//!
//! Reference bias is documented rather than hidden: seeding on a lattice of
//! spacing s and depositing on cells of size h displace mass by at most
//! s + h, so a distance with cost radius r picks up at most
//! (s + h) / r times the total mass moved.

use crate::fields::{CellField, ScalarData, VelocityField};
use crate::geometry::{dist, lerp, polygon_area, Point, Rect};
use crate::mesh::Tessellation;
use crate::upwind::{self, SchemeConfig, SolverError, Trajectory};
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

/// Default local tolerance of the characteristics integrator.
pub const DEFAULT_ODE_TOL: f64 = 1e-10;
/// Trajectories may leave the closed domain by this relative slack before
/// the integrator reports a failure.
pub const ESCAPE_TOL: f64 = 1e-6;
/// Overshoots below this relative slack are projected back silently.
pub const PROJECT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("trajectory escaped the domain by {overshoot:.3e} at t={t}")]
    Escaped { overshoot: f64, t: f64 },
    #[error("integrator step size collapsed at t={0}")]
    StepCollapse(f64),
    #[error("backward interval: s={s} > t={t}")]
    BackwardInterval { s: f64, t: f64 },
    #[error("solver error in fine-grid reference: {0}")]
    Solver(#[from] SolverError),
    #[error("particle at ({0}, {1}) lies outside the deposit mesh")]
    OutsideDeposit(f64, f64),
}

#[derive(Debug, Clone, Copy)]
pub struct Particle {
    pub position: Point,
    pub mass: f64,
    /// Emission time for source particles, absent for initial-datum ones.
    pub emitted: Option<f64>,
}

/// A weighted particle ensemble representing a density at one time.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub particles: Vec<Particle>,
    pub domain: Rect,
    pub time: f64,
}

impl ParticleCloud {
    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    /// Cloud export rows `x,y,mass,emission_time` (emission empty for
    /// initial-datum particles).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,mass,emission_time\n");
        for p in &self.particles {
            let em = p.emitted.map(|t| format!("{t:.12e}")).unwrap_or_default();
            out.push_str(&format!(
                "{:.12e},{:.12e},{:.12e},{em}\n",
                p.position[0], p.position[1], p.mass
            ));
        }
        out
    }
}

// Dormand-Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Follows one characteristic of the velocity field from time `s` to `t`
/// with an adaptive embedded Runge-Kutta step. Positions that drift out of
/// the closed domain by a relative hair are projected back; larger escapes
/// are an error (the fields here are tangential at the boundary).
pub fn flow_map(
    u: &dyn VelocityField,
    x: Point,
    s: f64,
    t: f64,
    ode_tol: f64,
) -> Result<Point, ReferenceError> {
    if s > t {
        return Err(ReferenceError::BackwardInterval { s, t });
    }
    if s == t {
        return Ok(x);
    }
    let domain = u.domain();
    let diam = domain.diameter(if domain.extent()[1] == 0.0 { 1 } else { 2 });
    let speed = u.sup_norm().max(1e-12);
    let mut pos = x;
    let mut time = s;
    let mut h = ((t - s) * 0.1).min(0.1 * diam / speed).max(1e-12);
    let min_step = 1e-14 * (t - s).max(1.0);
    let mut k = [[0.0_f64; 2]; 7];
    while time < t {
        h = h.min(t - time);
        k[0] = u.eval(time, pos);
        for stage in 0..6 {
            let mut y = pos;
            for (idx, kk) in k.iter().enumerate().take(stage + 1) {
                y[0] += h * A[stage][idx] * kk[0];
                y[1] += h * A[stage][idx] * kk[1];
            }
            k[stage + 1] = u.eval(time + C[stage] * h, y);
        }
        let mut y5 = pos;
        let mut y4 = pos;
        for (idx, kk) in k.iter().enumerate() {
            y5[0] += h * B5[idx] * kk[0];
            y5[1] += h * B5[idx] * kk[1];
            y4[0] += h * B4[idx] * kk[0];
            y4[1] += h * B4[idx] * kk[1];
        }
        let err = dist(y5, y4);
        let scale = ode_tol * (1.0 + crate::geometry::norm(pos));
        if err <= scale {
            time += h;
            pos = y5;
            let overshoot = domain.overshoot(pos);
            if overshoot > ESCAPE_TOL * diam {
                return Err(ReferenceError::Escaped { overshoot, t: time });
            }
            if overshoot > 0.0 {
                pos = domain.clamp(pos);
            }
        }
        let factor = if err > 0.0 {
            (0.9 * (scale / err).powf(0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
        if h < min_step {
            return Err(ReferenceError::StepCollapse(time));
        }
    }
    Ok(pos)
}

/// Stratified seeding lattice of one cell: an m-by-m (or m in one
/// dimension) sub-grid with exact sub-area weights that partition |K|.
fn cell_lattice(mesh: &Tessellation, cell: usize, m: usize) -> Vec<(Point, f64)> {
    let c = &mesh.cells[cell];
    let verts = c.vertices.as_ref().expect("builders store cell geometry");
    let mut out = Vec::with_capacity(if mesh.dim == 1 { m } else { m * m });
    if mesh.dim == 1 {
        let (a, b) = (verts[0][0], verts[1][0]);
        let w = (b - a) / m as f64;
        for k in 0..m {
            out.push(([a + (k as f64 + 0.5) * w, 0.0], w));
        }
    } else {
        // bilinear sub-grid of the quad; sub-areas tile the cell exactly
        let map = |s: f64, t: f64| -> Point {
            let bottom = lerp(verts[0], verts[1], s);
            let top = lerp(verts[3], verts[2], s);
            lerp(bottom, top, t)
        };
        let f = 1.0 / m as f64;
        for j in 0..m {
            for i in 0..m {
                let (s0, t0) = (i as f64 * f, j as f64 * f);
                let quad = [
                    map(s0, t0),
                    map(s0 + f, t0),
                    map(s0 + f, t0 + f),
                    map(s0, t0 + f),
                ];
                let area = polygon_area(&quad);
                let center = map(s0 + 0.5 * f, t0 + 0.5 * f);
                out.push((center, area));
            }
        }
    }
    out
}

fn advect_all(
    u: &dyn VelocityField,
    seeds: Vec<(Point, f64, f64, Option<f64>)>,
    t: f64,
    ode_tol: f64,
) -> Result<Vec<Particle>, ReferenceError> {
    seeds
        .into_par_iter()
        .map(|(pos, mass, s, emitted)| {
            let end = flow_map(u, pos, s, t, ode_tol)?;
            Ok(Particle { position: end, mass, emitted })
        })
        .collect()
}

/// Reference solution at time `t` from the analytic data: initial particles
/// pushed forward from time zero plus source particles emitted at midpoint
/// time nodes (`source_time_nodes` per unit time) and pushed from their
/// emission time.
pub fn reference_solution(
    u: &dyn VelocityField,
    data: &dyn ScalarData,
    t: f64,
    particles_per_cell: usize,
    source_time_nodes: usize,
    sampling_mesh: &Tessellation,
    ode_tol: f64,
) -> Result<ParticleCloud, ReferenceError> {
    let m = lattice_side(sampling_mesh.dim, particles_per_cell);
    let mut seeds: Vec<(Point, f64, f64, Option<f64>)> = Vec::new();
    for cell in 0..sampling_mesh.cell_count() {
        for (p, w) in cell_lattice(sampling_mesh, cell, m) {
            let mass = data.initial(p) * w;
            if mass != 0.0 {
                seeds.push((p, mass, 0.0, None));
            }
        }
    }
    if t > 0.0 {
        let nodes = ((source_time_nodes as f64 * t).ceil() as usize).max(1);
        let ds = t / nodes as f64;
        for node in 0..nodes {
            let s = (node as f64 + 0.5) * ds;
            let mut any = false;
            for cell in 0..sampling_mesh.cell_count() {
                for (p, w) in cell_lattice(sampling_mesh, cell, m) {
                    let mass = data.source(s, p) * w * ds;
                    if mass != 0.0 {
                        seeds.push((p, mass, s, Some(s)));
                        any = true;
                    }
                }
            }
            if !any && !data.has_source() {
                break;
            }
        }
    }
    let particles = advect_all(u, seeds, t, ode_tol)?;
    Ok(ParticleCloud { particles, domain: u.domain(), time: t })
}

fn lattice_side(dim: usize, particles_per_cell: usize) -> usize {
    if dim == 1 {
        particles_per_cell.max(1)
    } else {
        (particles_per_cell as f64).sqrt().ceil() as usize
    }
}

/// Reference solution tied to a solver run: initial particles sample the
/// true datum on a sub-cell lattice with a per-cell mass correction that
/// reproduces the discretized cell masses exactly, and source particles are
/// emitted from the per-step balanced sources the scheme consumed. The
/// correction keeps every conserved total equal to the scheme's to
/// rounding, so the transport marginals balance by construction, while the
/// sub-cell structure of the datum survives at the lattice scale
/// h / refine. `refine` is the per-direction subdivision of every cell.
pub fn reference_for_run(
    u: &dyn VelocityField,
    data: &dyn ScalarData,
    traj: &Trajectory,
    t: f64,
    refine: usize,
    ode_tol: f64,
) -> Result<ParticleCloud, ReferenceError> {
    let mesh = &traj.mesh;
    let delta = traj.config.delta;
    let mut seeds: Vec<(Point, f64, f64, Option<f64>)> = Vec::new();
    let rho0 = &traj.snapshots[0];
    for cell in 0..mesh.cell_count() {
        let lattice = cell_lattice(mesh, cell, refine);
        let mut masses: Vec<f64> = lattice.iter().map(|&(p, w)| data.initial(p) * w).collect();
        let cell_mass = rho0[cell] * mesh.cells[cell].volume;
        let defect = cell_mass - masses.iter().sum::<f64>();
        if defect != 0.0 {
            let volume = mesh.cells[cell].volume;
            for (m, &(_, w)) in masses.iter_mut().zip(&lattice) {
                *m += defect * w / volume;
            }
        }
        for (&(p, _), m) in lattice.iter().zip(&masses) {
            if *m != 0.0 {
                seeds.push((p, *m, 0.0, None));
            }
        }
    }
    // each step's balanced source is constant on its window; emit at the
    // window midpoint (second-order in delta)
    let src_refine = (refine / 2).max(1);
    for (n, source) in traj.sources.iter().enumerate() {
        let t0 = n as f64 * delta;
        if t0 >= t {
            break;
        }
        let window = delta.min(t - t0);
        let s = t0 + 0.5 * window;
        if source.iter().all(|&v| v == 0.0) {
            continue;
        }
        for cell in 0..mesh.cell_count() {
            if source[cell] == 0.0 {
                continue;
            }
            for (p, w) in cell_lattice(mesh, cell, src_refine) {
                seeds.push((p, source[cell] * w * window, s, Some(s)));
            }
        }
    }
    let particles = advect_all(u, seeds, t, ode_tol)?;
    Ok(ParticleCloud { particles, domain: u.domain(), time: t })
}

/// Deposits a particle cloud onto a mesh as cell averages. Particles must
/// land inside the mesh (up to the domain-location slack).
pub fn deposit(cloud: &ParticleCloud, mesh: &Arc<Tessellation>) -> Result<CellField, ReferenceError> {
    let mut mass = vec![0.0; mesh.cell_count()];
    for p in &cloud.particles {
        let cell = mesh
            .locate(p.position)
            .ok_or(ReferenceError::OutsideDeposit(p.position[0], p.position[1]))?;
        mass[cell] += p.mass;
    }
    let values: Vec<f64> = mass
        .iter()
        .zip(&mesh.cells)
        .map(|(m, c)| m / c.volume)
        .collect();
    Ok(CellField::new(mesh.clone(), values))
}

/// Surrogate reference: the scheme itself on a much finer mesh and step.
/// Carries its own order-sqrt(h_fine) bias; studies that use it must say so.
pub fn fine_grid_reference(
    mesh_fine: &Arc<Tessellation>,
    u: &dyn VelocityField,
    data: &dyn ScalarData,
    delta_fine: f64,
    t: f64,
) -> Result<Trajectory, ReferenceError> {
    let mut config = SchemeConfig::new(delta_fine, t);
    config.q = data.q();
    Ok(upwind::run(mesh_fine, u, data, &config)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{data_by_id, velocity_by_id};
    use crate::mesh::{build_perturbed_quad_mesh, build_uniform_interval_mesh};
    use crate::transport::{signed_difference, w1_distance};

    #[test]
    fn flow_map_identity_for_zero_field() {
        let u = velocity_by_id("zero2d").unwrap();
        let x = [0.3, 0.7];
        let y = flow_map(u.as_ref(), x, 0.0, 2.0, 1e-10).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn flow_map_rotation_closed_form() {
        let u = velocity_by_id("rotation2d_rigid").unwrap();
        let x = [0.3, 0.1];
        for theta in [0.5, 1.2] {
            let y = flow_map(u.as_ref(), x, 0.0, theta, 1e-11).unwrap();
            let expect = [
                theta.cos() * x[0] - theta.sin() * x[1],
                theta.sin() * x[0] + theta.cos() * x[1],
            ];
            assert!(dist(y, expect) < 1e-9, "theta {theta}: {y:?} vs {expect:?}");
        }
    }

    #[test]
    fn flow_map_logistic_closed_form() {
        let u = velocity_by_id("logistic1d").unwrap();
        let x0 = 0.5_f64;
        let y = flow_map(u.as_ref(), [x0, 0.0], 0.0, 1.0, 1e-11).unwrap();
        let e = 1.0_f64.exp();
        let expect = x0 * e / (1.0 - x0 + x0 * e);
        assert!((y[0] - expect).abs() < 1e-9, "{} vs {expect}", y[0]);
    }

    #[test]
    fn flow_map_semigroup_property() {
        let u = velocity_by_id("sobolev1d:alpha=0.6").unwrap();
        for &x0 in &[-0.8, -0.3, 0.2, 0.55, 0.9] {
            let full = flow_map(u.as_ref(), [x0, 0.0], 0.0, 1.0, 1e-11).unwrap();
            let mid = flow_map(u.as_ref(), [x0, 0.0], 0.0, 0.4, 1e-11).unwrap();
            let composed = flow_map(u.as_ref(), mid, 0.4, 1.0, 1e-11).unwrap();
            assert!(dist(full, composed) < 1e-8, "x0 = {x0}");
        }
        assert!(matches!(
            flow_map(u.as_ref(), [0.1, 0.0], 1.0, 0.5, 1e-10),
            Err(ReferenceError::BackwardInterval { .. })
        ));
    }

    #[test]
    fn flow_map_escape_detection() {
        // constant outward drift is not tangential; must be reported
        struct Outward;
        impl VelocityField for Outward {
            fn eval(&self, _t: f64, _x: Point) -> Point {
                [1.0, 0.0]
            }
            fn sup_norm(&self) -> f64 {
                1.0
            }
            fn domain(&self) -> Rect {
                Rect::unit_square()
            }
            fn is_autonomous(&self) -> bool {
                true
            }
        }
        assert!(matches!(
            flow_map(&Outward, [0.9, 0.5], 0.0, 1.0, 1e-10),
            Err(ReferenceError::Escaped { .. })
        ));
    }

    #[test]
    fn advected_polygon_preserves_area_for_divergence_free_field() {
        // square deep inside the rigid-rotation region
        let u = velocity_by_id("rotation2d").unwrap();
        let side = 0.08;
        let corners = [
            [0.66, 0.46],
            [0.66 + side, 0.46],
            [0.66 + side, 0.46 + side],
            [0.66, 0.46 + side],
        ];
        let before = polygon_area(&corners);
        let after: Vec<Point> = corners
            .iter()
            .map(|&c| flow_map(u.as_ref(), c, 0.0, 1.3, 1e-11).unwrap())
            .collect();
        let after_area = polygon_area(&after);
        assert!(
            ((after_area - before) / before).abs() < 1e-6,
            "{before} vs {after_area}"
        );
    }

    #[test]
    fn reference_zero_velocity_keeps_sampling() {
        let mesh = build_uniform_interval_mesh(0.0, 1.0, 16).unwrap();
        let u = velocity_by_id("zero1d").unwrap();
        let data = data_by_id("blob1d").unwrap();
        let cloud =
            reference_solution(u.as_ref(), data.as_ref(), 0.7, 4, 16, &mesh, 1e-10).unwrap();
        // quadrature of the datum over the sampling mesh
        let lattice_mass: f64 = (0..mesh.cell_count())
            .flat_map(|c| cell_lattice(&mesh, c, 4))
            .map(|(p, w)| data.initial(p) * w)
            .sum();
        assert!((cloud.total_mass() - lattice_mass).abs() < 1e-13);
        for p in &cloud.particles {
            assert!(p.emitted.is_none());
        }
    }

    #[test]
    fn reference_source_mass_grows_linearly() {
        let mesh = build_uniform_interval_mesh(0.0, 1.0, 8).unwrap();
        let u = velocity_by_id("zero1d").unwrap();
        struct PlusMinus;
        impl ScalarData for PlusMinus {
            fn initial(&self, _x: Point) -> f64 {
                1.0
            }
            fn source(&self, _t: f64, x: Point) -> f64 {
                // balanced source: positive left half, negative right half
                if x[0] < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            fn has_source(&self) -> bool {
                true
            }
        }
        let t = 0.6;
        let cloud = reference_solution(u.as_ref(), &PlusMinus, t, 4, 32, &mesh, 1e-10).unwrap();
        // total mass: integral of rho0 plus t times the (zero) net source
        assert!((cloud.total_mass() - 1.0).abs() < 1e-12);
        let emitted: f64 = cloud
            .particles
            .iter()
            .filter(|p| p.emitted.is_some())
            .map(|p| p.mass.abs())
            .sum();
        assert!((emitted - t).abs() < 1e-12, "|f| mass {emitted}");
    }

    #[test]
    fn cloud_csv_schema() {
        let cloud = ParticleCloud {
            particles: vec![
                Particle { position: [0.25, 0.0], mass: 1.5, emitted: None },
                Particle { position: [0.75, 0.0], mass: 0.5, emitted: Some(0.125) },
            ],
            domain: Rect::interval(0.0, 1.0),
            time: 0.5,
        };
        let csv = cloud.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "x,y,mass,emission_time");
        assert!(lines.next().unwrap().ends_with(',')); // datum particles carry no emission time
        assert!(csv.lines().nth(2).unwrap().contains("1.25"));
    }

    #[test]
    fn deposit_conserves_mass_and_locates() {
        let mesh = Arc::new(build_perturbed_quad_mesh(Rect::unit_square(), 6, 6, 0.2, 3).unwrap());
        let cloud = ParticleCloud {
            particles: vec![
                Particle { position: [0.1, 0.1], mass: 1.0, emitted: None },
                Particle { position: [0.9, 0.2], mass: 2.0, emitted: None },
                Particle { position: [0.5, 0.5], mass: 0.5, emitted: None },
            ],
            domain: Rect::unit_square(),
            time: 0.0,
        };
        let field = deposit(&cloud, &mesh).unwrap();
        assert!((field.mass() - 3.5).abs() < 1e-13);
    }

    #[test]
    fn rotated_indicator_matches_rotated_seeding() {
        // quarter turn of an off-center indicator inside the rigid region
        let u = velocity_by_id("rotation2d").unwrap();
        let data = data_by_id("indicator2d:cx=0.7,cy=0.5,radius=0.08").unwrap();
        let mesh = build_perturbed_quad_mesh(Rect::unit_square(), 48, 48, 0.0, 0).unwrap();
        let t = std::f64::consts::FRAC_PI_2;
        let cloud = reference_solution(u.as_ref(), data.as_ref(), t, 4, 8, &mesh, 1e-10).unwrap();
        // analytically rotated seeding: same masses, rotated positions
        let rotated: Vec<Particle> = (0..mesh.cell_count())
            .flat_map(|c| cell_lattice(&mesh, c, 2))
            .filter_map(|(p, w)| {
                let mass = data.initial(p) * w;
                if mass == 0.0 {
                    return None;
                }
                let d = [p[0] - 0.5, p[1] - 0.5];
                Some(Particle { position: [0.5 - d[1], 0.5 + d[0]], mass, emitted: None })
            })
            .collect();
        let expect = ParticleCloud { particles: rotated, domain: Rect::unit_square(), time: t };
        let grid = Arc::new(build_perturbed_quad_mesh(Rect::unit_square(), 48, 48, 0.0, 0).unwrap());
        let got = deposit(&cloud, &grid).unwrap();
        let want = deposit(&expect, &grid).unwrap();
        let diff = signed_difference(&got, &want, 1e-6).unwrap();
        if !diff.plus.is_empty() {
            let w1 = w1_distance(&diff.plus, &diff.minus).unwrap().value;
            assert!(w1 < 1e-8 * got.mass().max(1.0), "W1 gap {w1}");
        }
    }

    #[test]
    fn fine_grid_reference_zero_velocity() {
        let mesh = Arc::new(build_uniform_interval_mesh(0.0, 1.0, 64).unwrap());
        let u = velocity_by_id("zero1d").unwrap();
        let data = data_by_id("sourced_sine1d").unwrap();
        let traj = fine_grid_reference(&mesh, u.as_ref(), data.as_ref(), 0.01, 0.5).unwrap();
        let n = traj.steps();
        // rho + t f, with f the balanced per-step source
        let f = &traj.sources[0];
        for k in 0..mesh.cell_count() {
            let expect = traj.snapshots[0][k] + 0.5 * f[k];
            assert!((traj.snapshots[n][k] - expect).abs() < 1e-10);
        }
    }
}
