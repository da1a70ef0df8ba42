//! Runs the implicit upwind scheme on a rotating blob and audits mass
//! conservation and positivity step by step.
//!
//! Run with `cargo run --release --example implicit_transport`.

use std::sync::Arc;
use upwindkr::fields::{data_by_id, velocity_by_id};
use upwindkr::geometry::Rect;
use upwindkr::mesh::build_perturbed_quad_mesh;
use upwindkr::upwind::{max_timestep, run, SchemeConfig};

fn main() {
    let mesh = Arc::new(build_perturbed_quad_mesh(Rect::unit_square(), 24, 24, 0.15, 7).unwrap());
    let u = velocity_by_id("rotation2d").unwrap();
    let data = data_by_id("blob2d").unwrap();
    let t_final = std::f64::consts::FRAC_PI_2;

    let delta_max = max_timestep(u.as_ref(), 2.0, 1.0, t_final).unwrap();
    println!("divergence-free field: admissible step = full horizon = {delta_max:.4}");

    let delta = mesh.h / (2.0 * u.sup_norm());
    let steps = (t_final / delta).ceil() as usize;
    let config = SchemeConfig::new(t_final / steps as f64, t_final);
    println!(
        "mesh h={:.4}, delta={:.4}, {} steps to t={:.4}",
        mesh.h, config.delta, steps, t_final
    );

    let traj = run(&mesh, u.as_ref(), data.as_ref(), &config).unwrap();
    println!("\n step   time     mass        drift      min        solver sweeps");
    for (n, s) in traj.stats.iter().enumerate() {
        if n % 5 == 0 || n + 1 == traj.steps() {
            println!(
                " {:4}  {:.4}  {:.8}  {:.2e}  {:+.2e}  {}",
                n + 1,
                traj.times[n + 1],
                s.mass,
                s.mass_drift,
                s.min_value,
                s.iters
            );
        }
    }
    println!(
        "\nworst mass drift {:.2e}, lowest cell value {:+.2e}",
        traj.max_mass_drift(),
        traj.min_value()
    );
}
