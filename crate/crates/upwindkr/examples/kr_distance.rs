//! Solves small transport problems exactly: optimal value, plan, dual
//! potentials and the primal-dual gap, under the logarithmic and the
//! linear cost.
//!
//! Run with `cargo run --example kr_distance`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upwindkr::geometry::dist;
use upwindkr::transport::{exhaustive, kr_distance, w1_distance, DiscreteMeasure};

fn main() {
    // two unit atoms a known distance apart: the plan is forced
    let p = DiscreteMeasure::from_atoms([([0.0, 0.0], 1.0)]).unwrap();
    let q = DiscreteMeasure::from_atoms([([3.0, 4.0], 1.0)]).unwrap();
    let r = 0.5;
    let res = kr_distance(&p, &q, r).unwrap();
    println!(
        "single pair over distance 5, r={r}: value={:.12} (log(5/r + 1)={:.12})",
        res.value,
        (5.0 / r + 1.0_f64).ln()
    );

    // random instance against the exhaustive vertex enumeration
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mk = |rng: &mut ChaCha8Rng, k: usize, total: f64| {
        let mut atoms: Vec<([f64; 2], f64)> = (0..k)
            .map(|_| {
                (
                    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                    rng.gen_range(0.1..1.0),
                )
            })
            .collect();
        let s: f64 = atoms.iter().map(|a| a.1).sum();
        for a in &mut atoms {
            a.1 *= total / s;
        }
        DiscreteMeasure::from_atoms(atoms).unwrap()
    };
    let a = mk(&mut rng, 5, 1.0);
    let b = mk(&mut rng, 4, 1.0);
    let res = kr_distance(&a, &b, 0.25).unwrap();
    let brute = exhaustive::min_cost(a.atoms(), b.atoms(), |x, y| (dist(x, y) / 0.25 + 1.0).ln());
    println!("\n5x4 random instance, r=0.25:");
    println!("  network simplex value {:.15}", res.value);
    println!("  exhaustive oracle     {brute:.15}");
    println!("  primal-dual gap       {:.2e}, pivots {}", res.gap, res.stats.pivots);
    println!("  optimal plan:");
    for arc in &res.plan {
        let (x, _) = a.atoms()[arc.src];
        let (y, _) = b.atoms()[arc.dst];
        println!(
            "    {:.3?} -> {:.3?}  mass {:.4}  (potential gap {:.4})",
            x,
            y,
            arc.mass,
            res.potential_plus[arc.src] - res.potential_minus[arc.dst]
        );
    }

    let w1 = w1_distance(&a, &b).unwrap();
    println!(
        "\nlinear-cost distance {:.10}; log-cost value is below w1/r = {:.10}",
        w1.value,
        w1.value / 0.25
    );
}
