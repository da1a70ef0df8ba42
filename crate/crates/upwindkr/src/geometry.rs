//! Small planar vector helpers shared by the mesh and transport code.
//!
//! Points always carry two components; one-dimensional geometry keeps the
//! second component at zero so that distances and normals work unchanged.

pub type Point = [f64; 2];

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn lerp(a: Point, b: Point, s: f64) -> Point {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

/// Cross product z-component of (b - a) x (c - a).
#[inline]
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Signed area of a simple polygon (shoelace formula, positive for
/// counter-clockwise orientation).
pub fn polygon_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

/// Area centroid of a simple polygon with nonzero area.
pub fn polygon_centroid(vertices: &[Point]) -> Point {
    let n = vertices.len();
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut area = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        let w = p[0] * q[1] - q[0] * p[1];
        area += w;
        cx += (p[0] + q[0]) * w;
        cy += (p[1] + q[1]) * w;
    }
    area *= 0.5;
    [cx / (6.0 * area), cy / (6.0 * area)]
}

/// Largest pairwise vertex distance.
pub fn polygon_diameter(vertices: &[Point]) -> f64 {
    let mut d = 0.0_f64;
    for i in 0..vertices.len() {
        for j in i + 1..vertices.len() {
            d = d.max(dist(vertices[i], vertices[j]));
        }
    }
    d
}

/// Point containment in a convex polygon given in counter-clockwise order.
/// Boundary points count as inside up to `tol`.
pub fn convex_contains(vertices: &[Point], p: Point, tol: f64) -> bool {
    let n = vertices.len();
    for i in 0..n {
        if orient(vertices[i], vertices[(i + 1) % n], p) < -tol {
            return false;
        }
    }
    true
}

/// Axis-aligned rectangle. Intervals collapse the second axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub lo: Point,
    pub hi: Point,
}

impl Rect {
    pub fn new(lo: Point, hi: Point) -> Self {
        Rect { lo, hi }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Rect { lo: [a, 0.0], hi: [b, 0.0] }
    }

    pub fn unit_square() -> Self {
        Rect { lo: [0.0, 0.0], hi: [1.0, 1.0] }
    }

    pub fn extent(&self) -> Point {
        sub(self.hi, self.lo)
    }

    pub fn volume(&self, dim: usize) -> f64 {
        let e = self.extent();
        if dim == 1 {
            e[0]
        } else {
            e[0] * e[1]
        }
    }

    pub fn diameter(&self, dim: usize) -> f64 {
        let e = self.extent();
        if dim == 1 {
            e[0]
        } else {
            norm(e)
        }
    }

    pub fn clamp(&self, p: Point) -> Point {
        [
            p[0].clamp(self.lo[0], self.hi[0]),
            p[1].clamp(self.lo[1], self.hi[1]),
        ]
    }

    /// Distance by which `p` lies outside the rectangle (zero if inside).
    pub fn overshoot(&self, p: Point) -> f64 {
        let c = self.clamp(p);
        dist(p, c)
    }
}
