//! Evaluates the quantitative functionals attached to a discrete run: the
//! stability certificate with its compressibility constant, the energy
//! sums, and the weak BV sums against their reference scalings.
//!
//! Run with `cargo run --release --example scheme_diagnostics`.

use std::sync::Arc;
use upwindkr::diagnostics::{energy_report, stability_certificate, weak_bv_report};
use upwindkr::fields::{data_by_id, velocity_by_id};
use upwindkr::mesh::build_uniform_interval_mesh;
use upwindkr::upwind::{run, SchemeConfig};

fn main() {
    // compressive field: mass piles up at the origin and the
    // compressibility constant moves visibly away from one
    let mesh = Arc::new(build_uniform_interval_mesh(-1.0, 1.0, 128).unwrap());
    let u = velocity_by_id("compressive1d:amp=1").unwrap();
    let data = data_by_id("blob1d:center=0,radius=0.5").unwrap();
    let mut config = SchemeConfig::new(0.005, 0.5);
    config.q = 2.0;
    config.kappa = 2.0;
    let traj = run(&mesh, u.as_ref(), data.as_ref(), &config).unwrap();

    let cert = stability_certificate(&traj, 2.0, 2.0);
    println!("stability certificate (q=2, kappa=2):");
    println!("  sup-in-time L2 norm    {:.6}", cert.lhs);
    println!("  data-side bound        {:.6}", cert.rhs);
    println!("  compressibility        {:.6}", cert.lambda);
    println!("  margin                 {:+.6}", cert.margin);
    println!("  worst one-step margin  {:+.3e}", cert.step_margin);
    println!("  holds                  {}", cert.holds);

    let energy = energy_report(&traj, 2.0).unwrap();
    println!("\nenergy sums (qbar = 2):");
    println!("  temporal {:.6e}", energy.temporal);
    println!("  spatial  {:.6e}", energy.spatial);
    println!("  data-side bound {:.6e}  (ratio {:.3})", energy.rhs_bound, energy.ratio);

    let bv = weak_bv_report(&traj);
    println!("\nweak BV sums and reference scalings:");
    println!(
        "  temporal {:.5}  / sqrt(T/delta)        = {:.5}",
        bv.temporal_sum,
        bv.temporal_sum / bv.temporal_scale
    );
    println!(
        "  spatial  {:.5}  / sqrt(T |u|_inf / h)  = {:.5}",
        bv.spatial_sum,
        bv.spatial_sum / bv.spatial_scale
    );
}
