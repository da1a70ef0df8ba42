//! Fixed-order Gauss quadrature on intervals, segments and convex polygons.

use crate::geometry::{lerp, polygon_area, Point};

/// Gauss-Legendre nodes and weights on [-1, 1]. Orders 1 through 5.
pub fn gauss_legendre(order: usize) -> &'static [(f64, f64)] {
    const N1: [(f64, f64); 1] = [(0.0, 2.0)];
    const N2: [(f64, f64); 2] = [
        (-0.5773502691896257, 1.0),
        (0.5773502691896257, 1.0),
    ];
    const N3: [(f64, f64); 3] = [
        (-0.7745966692414834, 0.5555555555555556),
        (0.0, 0.8888888888888888),
        (0.7745966692414834, 0.5555555555555556),
    ];
    const N4: [(f64, f64); 4] = [
        (-0.8611363115940526, 0.3478548451374538),
        (-0.3399810435848563, 0.6521451548625461),
        (0.3399810435848563, 0.6521451548625461),
        (0.8611363115940526, 0.3478548451374538),
    ];
    const N5: [(f64, f64); 5] = [
        (-0.9061798459386640, 0.2369268850561891),
        (-0.5384693101056831, 0.4786286704993665),
        (0.0, 0.5688888888888889),
        (0.5384693101056831, 0.4786286704993665),
        (0.9061798459386640, 0.2369268850561891),
    ];
    match order {
        0 | 1 => &N1,
        2 => &N2,
        3 => &N3,
        4 => &N4,
        _ => &N5,
    }
}

/// Nodes and weights on the interval [a, b]; weights sum to b - a.
pub fn on_interval(order: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    gauss_legendre(order)
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect()
}

/// Nodes and weights on the segment from `a` to `b`; weights sum to |b - a|.
pub fn on_segment(order: usize, a: Point, b: Point) -> Vec<(Point, f64)> {
    let len = crate::geometry::dist(a, b);
    gauss_legendre(order)
        .iter()
        .map(|&(x, w)| (lerp(a, b, 0.5 * (1.0 + x)), 0.5 * len * w))
        .collect()
}

/// Symmetric quadrature on the reference triangle, barycentric coordinates
/// with weights summing to one. Order 1 is the centroid rule, order 2 is
/// exact for quadratics, anything higher uses a degree four rule.
fn triangle_rule(order: usize) -> &'static [([f64; 3], f64)] {
    const C: [([f64; 3], f64); 1] = [([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)];
    const D2: [([f64; 3], f64); 3] = [
        ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
        ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
        ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
    ];
    const A1: f64 = 0.8168475729804585;
    const B1: f64 = 0.0915762135097707;
    const W1: f64 = 0.1099517436553219;
    const A2: f64 = 0.1081030181680702;
    const B2: f64 = 0.4459484909159649;
    const W2: f64 = 0.2233815896780115;
    const D4: [([f64; 3], f64); 6] = [
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ];
    match order {
        0 | 1 => &C,
        2 => &D2,
        _ => &D4,
    }
}

/// Nodes and weights on a convex polygon (counter-clockwise vertices) via a
/// centroid fan; weights sum to the polygon area.
pub fn on_polygon(order: usize, vertices: &[Point], centroid: Point) -> Vec<(Point, f64)> {
    let n = vertices.len();
    let mut out = Vec::with_capacity(n * triangle_rule(order).len());
    for i in 0..n {
        let a = centroid;
        let b = vertices[i];
        let c = vertices[(i + 1) % n];
        let area = polygon_area(&[a, b, c]);
        for &(bary, w) in triangle_rule(order) {
            let p = [
                bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
                bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
            ];
            out.push((p, w * area));
        }
    }
    out
}
