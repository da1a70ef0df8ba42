//! Built-in test-case registry: a velocity field, a data field, a mesh
//! family and default study parameters under one short id.
//!
//! The six standing cases cover: pure sources, smooth and rough data under
//! a divergence-free rotation, a merely Sobolev velocity, data oscillating
//! at a fixed scale, and a compressive field that exercises the
//! compressibility constant.

use crate::fields::{self, ScalarData, VelocityField};
use crate::geometry::Rect;
use crate::mesh::{build_perturbed_quad_mesh, build_uniform_interval_mesh, MeshError, Tessellation};
use std::sync::Arc;

/// Mesh family of a test case; levels are target mesh sizes.
#[derive(Debug, Clone, Copy)]
pub enum MeshFamily {
    Interval { a: f64, b: f64 },
    PerturbedQuad { domain: Rect, perturbation: f64 },
}

impl MeshFamily {
    pub fn build(&self, h_target: f64, seed: u64) -> Result<Tessellation, MeshError> {
        match *self {
            MeshFamily::Interval { a, b } => {
                let n = (((b - a) / h_target).round() as usize).max(1);
                build_uniform_interval_mesh(a, b, n)
            }
            MeshFamily::PerturbedQuad { domain, perturbation } => {
                let e = domain.extent();
                let nx = ((e[0] / h_target).round() as usize).max(1);
                let ny = ((e[1] / h_target).round() as usize).max(1);
                build_perturbed_quad_mesh(domain, nx, ny, perturbation, seed)
            }
        }
    }

    /// Unperturbed deposit grid refined by `factor` relative to the level
    /// resolution; used to bin reference particles without erasing their
    /// sub-cell placement.
    pub fn build_reference_grid(&self, h_target: f64, factor: usize) -> Result<Tessellation, MeshError> {
        match *self {
            MeshFamily::Interval { a, b } => {
                let n = (((b - a) / h_target).round() as usize).max(1) * factor;
                build_uniform_interval_mesh(a, b, n)
            }
            MeshFamily::PerturbedQuad { domain, .. } => {
                let e = domain.extent();
                let nx = ((e[0] / h_target).round() as usize).max(1) * factor;
                let ny = ((e[1] / h_target).round() as usize).max(1) * factor;
                build_perturbed_quad_mesh(domain, nx, ny, 0.0, 0)
            }
        }
    }
}

#[derive(Clone)]
pub struct TestCase {
    pub id: &'static str,
    pub summary: &'static str,
    pub velocity: Arc<dyn VelocityField>,
    pub data: Arc<dyn ScalarData>,
    pub mesh_family: MeshFamily,
    pub t_final: f64,
    pub q: f64,
    pub kappa: f64,
    pub default_levels: &'static [f64],
    /// Per-direction particle subdivision of each cell for the reference.
    pub default_refine: usize,
}

const LEVELS_TC0: [f64; 4] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
const LEVELS_TC1: [f64; 4] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
const LEVELS_TC2: [f64; 4] = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
const LEVELS_TC3: [f64; 4] = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
const LEVELS_TC4: [f64; 6] = [
    1.0 / 32.0,
    1.0 / 64.0,
    1.0 / 128.0,
    1.0 / 256.0,
    1.0 / 512.0,
    1.0 / 1024.0,
];
const LEVELS_TC5: [f64; 5] = [
    1.0 / 16.0,
    1.0 / 32.0,
    1.0 / 64.0,
    1.0 / 128.0,
    1.0 / 256.0,
];
const LEVELS_TC6: [f64; 4] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];

pub const TEST_CASE_IDS: [&str; 7] = ["tc0", "tc1", "tc2", "tc3", "tc4", "tc5", "tc6"];

/// Looks up a test case by id. `tc0` is the no-dynamics baseline whose only
/// error source is data atomization.
pub fn test_case(id: &str) -> Option<TestCase> {
    let v = |s: &str| fields::velocity_by_id(s).expect("registry velocity id");
    let d = |s: &str| fields::data_by_id(s).expect("registry data id");
    Some(match id {
        "tc0" => TestCase {
            id: "tc0",
            summary: "no dynamics: zero velocity, zero source, smooth datum",
            velocity: v("zero1d"),
            data: d("blob1d:center=0.5,radius=0.3"),
            mesh_family: MeshFamily::Interval { a: 0.0, b: 1.0 },
            t_final: 1.0,
            q: 2.0,
            kappa: 1.0,
            default_levels: &LEVELS_TC0,
            default_refine: 16,
        },
        "tc1" => TestCase {
            id: "tc1",
            summary: "pure source: zero velocity, balanced sine source",
            velocity: v("zero1d"),
            data: d("sourced_sine1d"),
            mesh_family: MeshFamily::Interval { a: 0.0, b: 1.0 },
            t_final: 1.0,
            q: 2.0,
            kappa: 1.0,
            default_levels: &LEVELS_TC1,
            default_refine: 16,
        },
        "tc2" => TestCase {
            id: "tc2",
            summary: "2d rotation with a smooth blob",
            velocity: v("rotation2d"),
            data: d("blob2d"),
            mesh_family: MeshFamily::PerturbedQuad {
                domain: Rect::unit_square(),
                perturbation: 0.15,
            },
            t_final: std::f64::consts::FRAC_PI_2,
            q: 2.0,
            kappa: 1.0,
            default_levels: &LEVELS_TC2,
            default_refine: 8,
        },
        "tc3" => TestCase {
            id: "tc3",
            summary: "2d rotation with an indicator datum",
            velocity: v("rotation2d"),
            data: d("indicator2d"),
            mesh_family: MeshFamily::PerturbedQuad {
                domain: Rect::unit_square(),
                perturbation: 0.15,
            },
            t_final: std::f64::consts::FRAC_PI_2,
            q: 2.0,
            kappa: 1.0,
            default_levels: &LEVELS_TC3,
            default_refine: 8,
        },
        "tc4" => TestCase {
            id: "tc4",
            summary: "1d Sobolev-only velocity with a smooth datum",
            velocity: v("sobolev1d:alpha=0.6"),
            data: d("blob1d:center=0.3,radius=0.25"),
            mesh_family: MeshFamily::Interval { a: -1.0, b: 1.0 },
            t_final: 1.0,
            q: 2.0,
            kappa: 2.0,
            default_levels: &LEVELS_TC4,
            default_refine: 16,
        },
        "tc5" => TestCase {
            id: "tc5",
            summary: "1d oscillating datum under a sine drift",
            velocity: v("sine1d:amp=0.5"),
            data: d("oscillating1d:eps=0.25"),
            mesh_family: MeshFamily::Interval { a: 0.0, b: 1.0 },
            t_final: 1.0,
            q: 2.0,
            kappa: 2.0,
            default_levels: &LEVELS_TC5,
            default_refine: 16,
        },
        "tc6" => TestCase {
            id: "tc6",
            summary: "1d compressive field, mass piles up at the origin",
            velocity: v("compressive1d:amp=1"),
            data: d("blob1d:center=0,radius=0.5"),
            mesh_family: MeshFamily::Interval { a: -1.0, b: 1.0 },
            t_final: 0.5,
            q: 2.0,
            kappa: 2.0,
            default_levels: &LEVELS_TC6,
            default_refine: 16,
        },
        _ => return None,
    })
}

/// True when the discretized data of the case can take both signs.
pub fn is_signed(tc: &TestCase) -> bool {
    matches!(tc.id, "tc1" | "tc5")
}
