//! Builds the two mesh families, prints their regularity metrics, and
//! round-trips the text exchange format.
//!
//! Run with `cargo run --example build_meshes`.

use upwindkr::geometry::Rect;
use upwindkr::mesh::{build_perturbed_quad_mesh, build_uniform_interval_mesh, Tessellation};

fn main() {
    println!("uniform interval meshes of (0, 1):");
    for n in [8usize, 32, 128] {
        let mesh = build_uniform_interval_mesh(0.0, 1.0, n).unwrap();
        let rep = mesh.regularity_report();
        println!(
            "  n={n:4}  h={:.5}  cells={}  faces={}  iso_proxy={:.3}",
            mesh.h,
            mesh.cell_count(),
            mesh.face_count(),
            rep.iso_proxy
        );
    }

    println!("\nvertex-perturbed quadrilateral meshes of the unit square:");
    for (lvl, n) in [8usize, 16, 32].iter().enumerate() {
        let mesh =
            build_perturbed_quad_mesh(Rect::unit_square(), *n, *n, 0.15, 7 + lvl as u64).unwrap();
        let rep = mesh.regularity_report();
        println!(
            "  {n:3}x{n:<3} h={:.5}  volume sum={:.12}  iso_proxy={:.3}  min/max volume={:.3}",
            mesh.h,
            mesh.total_volume(),
            rep.iso_proxy,
            rep.volume_ratio
        );
    }

    let mesh = build_perturbed_quad_mesh(Rect::unit_square(), 4, 3, 0.1, 2).unwrap();
    let text = mesh.export_text();
    let back = Tessellation::import_text(&text).unwrap();
    println!(
        "\ntext format round trip: {} cells, {} faces, re-export identical: {}",
        back.cell_count(),
        back.face_count(),
        back.export_text() == text
    );
    println!("first lines of the exchange format:");
    for line in text.lines().take(4) {
        println!("  {line}");
    }
}
