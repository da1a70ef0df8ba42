//! Discretizes analytic fields onto a mesh: cell averages of the datum,
//! face-averaged normal velocities, and the discrete divergence.
//!
//! Run with `cargo run --example discretize_fields`.

use std::sync::Arc;
use upwindkr::fields::{
    cell_average, data_by_id, discrete_divergence, div_minus_budget, face_velocity, velocity_by_id,
};
use upwindkr::geometry::Rect;
use upwindkr::mesh::build_perturbed_quad_mesh;

fn main() {
    let mesh = Arc::new(build_perturbed_quad_mesh(Rect::unit_square(), 16, 16, 0.15, 7).unwrap());
    let data = data_by_id("blob2d").unwrap();
    let u = velocity_by_id("rotation2d").unwrap();

    let rho0 = cell_average(&mesh, |p| data.initial(p), 3).unwrap();
    println!(
        "cell averages of the blob: mass={:.8}  min={:.3e}  max={:.5}",
        rho0.mass(),
        rho0.min(),
        rho0.max()
    );

    let flux = face_velocity(&mesh, u.as_ref(), 0, 0.05, 3).unwrap();
    let mut boundary_max: f64 = 0.0;
    let mut interior_max: f64 = 0.0;
    for (fid, face) in mesh.faces.iter().enumerate() {
        let v = flux.on_owner(fid).abs();
        if face.is_boundary() {
            boundary_max = boundary_max.max(v);
        } else {
            interior_max = interior_max.max(v);
        }
    }
    println!("face velocities: interior max |u_KL|={interior_max:.5}, boundary max={boundary_max:.1e}");

    let div = discrete_divergence(&mesh, &flux);
    let max_div = div.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    println!("discrete divergence of the rotation (zero up to quadrature): max={max_div:.3e}");

    let compressive = velocity_by_id("compressive1d:amp=1").unwrap();
    let budget = div_minus_budget(compressive.as_ref(), 0.0, 0.5, 10_000).unwrap();
    println!("negative-divergence budget of the compressive field over (0, 1/2): {budget:.6}");
    println!("(the analytic value is pi/2 = {:.6})", std::f64::consts::PI / 2.0);
}
