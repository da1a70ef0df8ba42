//! Tessellations of intervals and axis-aligned rectangles into control
//! volumes, with oriented faces, adjacency and regularity metrics.
//!
//! Every face is stored once with a fixed orientation (owner to neighbor);
//! quantities that flip sign across a face are negated on neighbor access.
//! Two builders are provided: uniform-or-graded interval meshes and
//! vertex-perturbed quadrilateral meshes of a rectangle. Both keep enough
//! lattice structure for O(1) point location, which the particle deposit
//! relies on.

use crate::geometry::{
    self, convex_contains, dist, polygon_area, polygon_centroid, polygon_diameter, Point, Rect,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type CellId = usize;
pub type FaceId = usize;

/// Unit-normal deviation tolerated by validation.
pub const NORMAL_TOL: f64 = 1e-12;
/// Relative tolerance on the total volume against the domain volume.
pub const VOLUME_SUM_TOL: f64 = 1e-10;
/// Per-cell face-normal closure tolerance, relative to the cell boundary size.
pub const CLOSURE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cell size {value} at index {index} is not positive")]
    NonPositiveSize { index: usize, value: f64 },
    #[error("cell sizes sum to {sum}, expected {expected}")]
    SizeSumMismatch { sum: f64, expected: f64 },
    #[error("cell {cell} is degenerate after perturbation: {reason}")]
    BadCell { cell: CellId, reason: String },
    #[error("mesh validation failed: {0}")]
    Validation(String),
    #[error("mesh file parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("grid resolution must be at least one")]
    EmptyGrid,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub volume: f64,
    pub centroid: Point,
    pub diameter: f64,
    pub faces: Vec<FaceId>,
    /// Polygon vertices in counter-clockwise order (two endpoints in one
    /// dimension). Absent on meshes read back from the text format.
    pub vertices: Option<Vec<Point>>,
}

#[derive(Debug, Clone)]
pub struct Face {
    pub area: f64,
    /// Unit normal pointing from the owner towards the neighbor (outward on
    /// boundary faces).
    pub normal: Point,
    pub owner: CellId,
    pub neighbor: Option<CellId>,
    /// Segment endpoints (coincident in one dimension). Absent on imported
    /// meshes.
    pub endpoints: Option<(Point, Point)>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.neighbor.is_none()
    }

    /// The cell on the other side of the face.
    pub fn across(&self, cell: CellId) -> Option<CellId> {
        if self.owner == cell {
            self.neighbor
        } else {
            Some(self.owner)
        }
    }
}

/// Structured lattice metadata kept by the builders for point location.
#[derive(Debug, Clone)]
enum Lattice {
    Interval { breaks: Vec<f64> },
    Quad { nx: usize, ny: usize },
}

#[derive(Debug, Clone)]
pub struct Tessellation {
    pub dim: usize,
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    /// Mesh size: the largest cell diameter.
    pub h: f64,
    pub domain: Rect,
    lattice: Option<Lattice>,
}

/// Mesh quality summary. `iso_proxy` is the largest h |dK| / |K| over cells,
/// which stays bounded on shape-regular families.
#[derive(Debug, Clone, Copy)]
pub struct RegularityReport {
    pub h: f64,
    pub iso_proxy: f64,
    pub volume_ratio: f64,
    pub face_area_ratio: f64,
}

impl Tessellation {
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    /// Total boundary size |dK| of one cell, domain boundary included.
    pub fn cell_boundary(&self, cell: CellId) -> f64 {
        self.cells[cell].faces.iter().map(|&f| self.faces[f].area).sum()
    }

    pub fn interior_faces(&self) -> impl Iterator<Item = (FaceId, &Face)> {
        self.faces.iter().enumerate().filter(|(_, f)| !f.is_boundary())
    }

    /// Checks every structural invariant; builders call this before
    /// returning a mesh.
    pub fn validate(&self) -> Result<(), MeshError> {
        if self.dim != 1 && self.dim != 2 {
            return Err(MeshError::Validation(format!("dimension {} unsupported", self.dim)));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if !(c.volume > 0.0) {
                return Err(MeshError::Validation(format!("cell {i} has volume {}", c.volume)));
            }
            if c.faces.is_empty() {
                return Err(MeshError::Validation(format!("cell {i} has no faces")));
            }
        }
        for (i, f) in self.faces.iter().enumerate() {
            if !(f.area > 0.0) {
                return Err(MeshError::Validation(format!("face {i} has area {}", f.area)));
            }
            if (geometry::norm(f.normal) - 1.0).abs() > NORMAL_TOL {
                return Err(MeshError::Validation(format!(
                    "face {i} normal has length {}",
                    geometry::norm(f.normal)
                )));
            }
            if let Some(nb) = f.neighbor {
                if nb == f.owner {
                    return Err(MeshError::Validation(format!("face {i} links a cell to itself")));
                }
                if !self.cells[nb].faces.contains(&i) || !self.cells[f.owner].faces.contains(&i) {
                    return Err(MeshError::Validation(format!("face {i} adjacency is asymmetric")));
                }
            }
        }
        let vol = self.total_volume();
        let dom = self.domain.volume(self.dim);
        if dom > 0.0 && (vol - dom).abs() > VOLUME_SUM_TOL * dom {
            return Err(MeshError::Validation(format!(
                "cell volumes sum to {vol}, domain volume is {dom}"
            )));
        }
        // face-normal closure per cell: sum |K|L| nu = 0 for closed polytopes
        for (i, c) in self.cells.iter().enumerate() {
            let mut acc = [0.0, 0.0];
            for &fid in &c.faces {
                let f = &self.faces[fid];
                let sign = if f.owner == i { 1.0 } else { -1.0 };
                acc[0] += sign * f.area * f.normal[0];
                acc[1] += sign * f.area * f.normal[1];
            }
            let boundary = self.cell_boundary(i);
            if geometry::norm(acc) > CLOSURE_TOL * boundary {
                return Err(MeshError::Validation(format!(
                    "cell {i} face closure defect {}",
                    geometry::norm(acc)
                )));
            }
        }
        Ok(())
    }

    pub fn regularity_report(&self) -> RegularityReport {
        let mut iso: f64 = 0.0;
        let mut vmin = f64::INFINITY;
        let mut vmax: f64 = 0.0;
        for (i, c) in self.cells.iter().enumerate() {
            iso = iso.max(self.h * self.cell_boundary(i) / c.volume);
            vmin = vmin.min(c.volume);
            vmax = vmax.max(c.volume);
        }
        let href = self.h.powi(self.dim as i32 - 1);
        let amin = self
            .faces
            .iter()
            .map(|f| f.area / href)
            .fold(f64::INFINITY, f64::min);
        RegularityReport {
            h: self.h,
            iso_proxy: iso,
            volume_ratio: vmin / vmax,
            face_area_ratio: amin,
        }
    }

    /// Locates the cell containing `p`. Points outside the domain by more
    /// than a relative 1e-9 return `None`; ties on shared edges resolve to
    /// the lowest cell index.
    pub fn locate(&self, p: Point) -> Option<CellId> {
        let diam = self.domain.diameter(self.dim);
        if self.domain.overshoot(p) > 1e-9 * diam {
            return None;
        }
        let p = self.domain.clamp(p);
        match &self.lattice {
            Some(Lattice::Interval { breaks }) => {
                let n = self.cells.len();
                let idx = match breaks.binary_search_by(|b| b.partial_cmp(&p[0]).unwrap()) {
                    Ok(k) => k.min(n - 1),
                    Err(k) => k.saturating_sub(1).min(n - 1),
                };
                Some(idx)
            }
            Some(Lattice::Quad { nx, ny }) => {
                let e = self.domain.extent();
                let fx = ((p[0] - self.domain.lo[0]) / e[0] * *nx as f64).floor() as i64;
                let fy = ((p[1] - self.domain.lo[1]) / e[1] * *ny as f64).floor() as i64;
                let tol = 1e-12 * diam;
                // perturbed vertices move by less than half a cell, so the
                // containing cell is within one ring of the lattice guess
                for r in 0..=1i64 {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            if dx.abs() != r && dy.abs() != r {
                                continue;
                            }
                            let ix = fx + dx;
                            let iy = fy + dy;
                            if ix < 0 || iy < 0 || ix >= *nx as i64 || iy >= *ny as i64 {
                                continue;
                            }
                            let cid = iy as usize * nx + ix as usize;
                            let verts = self.cells[cid].vertices.as_ref().unwrap();
                            if convex_contains(verts, p, tol) {
                                return Some(cid);
                            }
                        }
                    }
                }
                // widened tolerance fallback for points on perturbed edges
                self.cells.iter().enumerate().find_map(|(i, c)| {
                    c.vertices
                        .as_ref()
                        .filter(|v| convex_contains(v, p, 1e-9 * diam))
                        .map(|_| i)
                })
            }
            None => self.cells.iter().enumerate().find_map(|(i, c)| {
                c.vertices
                    .as_ref()
                    .filter(|v| convex_contains(v, p, 1e-12 * diam))
                    .map(|_| i)
            }),
        }
    }

    /// Plain-text exchange format. Header `dim nc nf h`, one line per cell
    /// (`id volume centroid.. diameter`), one line per face
    /// (`id area normal.. owner neighbor`), neighbor -1 on the boundary.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{} {} {} {:.17e}\n",
            self.dim,
            self.cells.len(),
            self.faces.len(),
            self.h
        ));
        for (i, c) in self.cells.iter().enumerate() {
            out.push_str(&format!("{i} {:.17e}", c.volume));
            for k in 0..self.dim {
                out.push_str(&format!(" {:.17e}", c.centroid[k]));
            }
            out.push_str(&format!(" {:.17e}\n", c.diameter));
        }
        for (i, f) in self.faces.iter().enumerate() {
            out.push_str(&format!("{i} {:.17e}", f.area));
            for k in 0..self.dim {
                out.push_str(&format!(" {:.17e}", f.normal[k]));
            }
            let nb = f.neighbor.map(|n| n as i64).unwrap_or(-1);
            out.push_str(&format!(" {} {}\n", f.owner, nb));
        }
        out
    }

    /// Parses the text format written by [`Tessellation::export_text`]. Imported meshes
    /// carry no vertex geometry, so they support validation and regularity
    /// reporting but not field discretization.
    pub fn import_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text.lines().enumerate();
        let (ln, header) = lines
            .next()
            .ok_or(MeshError::Parse { line: 1, msg: "empty file".into() })?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 4 {
            return Err(MeshError::Parse { line: ln + 1, msg: "header needs `dim nc nf h`".into() });
        }
        let parse_f = |s: &str, line: usize| -> Result<f64, MeshError> {
            s.parse()
                .map_err(|_| MeshError::Parse { line, msg: format!("bad number {s:?}") })
        };
        let parse_u = |s: &str, line: usize| -> Result<usize, MeshError> {
            s.parse()
                .map_err(|_| MeshError::Parse { line, msg: format!("bad index {s:?}") })
        };
        let dim = parse_u(head[0], ln + 1)?;
        let nc = parse_u(head[1], ln + 1)?;
        let nf = parse_u(head[2], ln + 1)?;
        let h = parse_f(head[3], ln + 1)?;
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, line) = lines
                .next()
                .ok_or(MeshError::Parse { line: 0, msg: "missing cell line".into() })?;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 + dim {
                return Err(MeshError::Parse { line: ln + 1, msg: "bad cell line".into() });
            }
            let mut centroid = [0.0, 0.0];
            for k in 0..dim {
                centroid[k] = parse_f(t[2 + k], ln + 1)?;
            }
            cells.push(Cell {
                volume: parse_f(t[1], ln + 1)?,
                centroid,
                diameter: parse_f(t[2 + dim], ln + 1)?,
                faces: Vec::new(),
                vertices: None,
            });
        }
        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, line) = lines
                .next()
                .ok_or(MeshError::Parse { line: 0, msg: "missing face line".into() })?;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 4 + dim {
                return Err(MeshError::Parse { line: ln + 1, msg: "bad face line".into() });
            }
            let mut normal = [0.0, 0.0];
            for k in 0..dim {
                normal[k] = parse_f(t[2 + k], ln + 1)?;
            }
            let owner = parse_u(t[2 + dim], ln + 1)?;
            let nb: i64 = t[3 + dim]
                .parse()
                .map_err(|_| MeshError::Parse { line: ln + 1, msg: "bad neighbor".into() })?;
            if owner >= nc || nb >= nc as i64 {
                return Err(MeshError::Parse { line: ln + 1, msg: "face references missing cell".into() });
            }
            faces.push(Face {
                area: parse_f(t[1], ln + 1)?,
                normal,
                owner,
                neighbor: if nb < 0 { None } else { Some(nb as usize) },
                endpoints: None,
            });
        }
        for (i, f) in faces.iter().enumerate() {
            cells[f.owner].faces.push(i);
            if let Some(nb) = f.neighbor {
                cells[nb].faces.push(i);
            }
        }
        // the text format has no domain record; use the accumulated volume
        let vol: f64 = cells.iter().map(|c| c.volume).sum();
        let domain = if dim == 1 {
            Rect::interval(0.0, vol)
        } else {
            Rect::new([0.0, 0.0], [vol.sqrt(), vol.sqrt()])
        };
        let mesh = Tessellation { dim, cells, faces, h, domain, lattice: None };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Builds the interval mesh over (a, b) with the given cell sizes.
pub fn build_interval_mesh(a: f64, b: f64, sizes: &[f64]) -> Result<Tessellation, MeshError> {
    if sizes.is_empty() {
        return Err(MeshError::EmptyGrid);
    }
    if !(a < b) {
        return Err(MeshError::Validation(format!("empty interval ({a}, {b})")));
    }
    for (i, &s) in sizes.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            return Err(MeshError::NonPositiveSize { index: i, value: s });
        }
    }
    let sum: f64 = sizes.iter().sum();
    if (sum - (b - a)).abs() > 1e-12 * (b - a).max(1.0) {
        return Err(MeshError::SizeSumMismatch { sum, expected: b - a });
    }
    let n = sizes.len();
    let mut breaks = Vec::with_capacity(n + 1);
    breaks.push(a);
    for &s in sizes {
        breaks.push(breaks.last().unwrap() + s);
    }
    breaks[n] = b;

    let mut cells = Vec::with_capacity(n);
    for k in 0..n {
        let (x0, x1) = (breaks[k], breaks[k + 1]);
        cells.push(Cell {
            volume: x1 - x0,
            centroid: [0.5 * (x0 + x1), 0.0],
            diameter: x1 - x0,
            faces: Vec::new(),
            vertices: Some(vec![[x0, 0.0], [x1, 0.0]]),
        });
    }
    let mut faces = Vec::with_capacity(n + 1);
    // left boundary, interior breaks, right boundary
    faces.push(Face {
        area: 1.0,
        normal: [-1.0, 0.0],
        owner: 0,
        neighbor: None,
        endpoints: Some(([a, 0.0], [a, 0.0])),
    });
    for k in 1..n {
        faces.push(Face {
            area: 1.0,
            normal: [1.0, 0.0],
            owner: k - 1,
            neighbor: Some(k),
            endpoints: Some(([breaks[k], 0.0], [breaks[k], 0.0])),
        });
    }
    faces.push(Face {
        area: 1.0,
        normal: [1.0, 0.0],
        owner: n - 1,
        neighbor: None,
        endpoints: Some(([b, 0.0], [b, 0.0])),
    });
    for (i, f) in faces.iter().enumerate() {
        cells[f.owner].faces.push(i);
        if let Some(nb) = f.neighbor {
            cells[nb].faces.push(i);
        }
    }
    let h = sizes.iter().cloned().fold(0.0, f64::max);
    let mesh = Tessellation {
        dim: 1,
        cells,
        faces,
        h,
        domain: Rect::interval(a, b),
        lattice: Some(Lattice::Interval { breaks }),
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Uniform interval mesh with n cells.
pub fn build_uniform_interval_mesh(a: f64, b: f64, n: usize) -> Result<Tessellation, MeshError> {
    if n == 0 {
        return Err(MeshError::EmptyGrid);
    }
    let mut sizes = vec![(b - a) / n as f64; n];
    let correction = (b - a) - sizes.iter().sum::<f64>();
    *sizes.last_mut().unwrap() += correction;
    build_interval_mesh(a, b, &sizes)
}

/// Quadrilateral mesh of a rectangle with interior vertices jittered by at
/// most `perturbation * min(dx, dy)` in each coordinate. Boundary vertices
/// stay fixed. Deterministic for a fixed seed.
pub fn build_perturbed_quad_mesh(
    domain: Rect,
    nx: usize,
    ny: usize,
    perturbation: f64,
    seed: u64,
) -> Result<Tessellation, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::EmptyGrid);
    }
    if !(0.0..0.3).contains(&perturbation) {
        return Err(MeshError::Validation(format!(
            "perturbation {perturbation} outside [0, 0.3)"
        )));
    }
    let e = domain.extent();
    if !(e[0] > 0.0 && e[1] > 0.0) {
        return Err(MeshError::Validation("degenerate domain rectangle".into()));
    }
    let dx = e[0] / nx as f64;
    let dy = e[1] / ny as f64;
    let amp = perturbation * dx.min(dy);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut verts = vec![[0.0, 0.0]; (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            let mut p = [domain.lo[0] + i as f64 * dx, domain.lo[1] + j as f64 * dy];
            if i == nx {
                p[0] = domain.hi[0];
            }
            if j == ny {
                p[1] = domain.hi[1];
            }
            let interior = i > 0 && i < nx && j > 0 && j < ny;
            if interior && amp > 0.0 {
                p[0] += rng.gen_range(-amp..=amp);
                p[1] += rng.gen_range(-amp..=amp);
            } else if amp > 0.0 && perturbation > 0.0 {
                // keep the random stream independent of which vertices move
                let _ = rng.gen_range(-amp..=amp);
                let _ = rng.gen_range(-amp..=amp);
            }
            verts[vid(i, j)] = p;
        }
    }

    let cid = |i: usize, j: usize| j * nx + i;
    let mut cells = Vec::with_capacity(nx * ny);
    let mut h: f64 = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let quad = vec![
                verts[vid(i, j)],
                verts[vid(i + 1, j)],
                verts[vid(i + 1, j + 1)],
                verts[vid(i, j + 1)],
            ];
            for k in 0..4 {
                let c = geometry::orient(quad[k], quad[(k + 1) % 4], quad[(k + 2) % 4]);
                if c <= 0.0 {
                    return Err(MeshError::BadCell {
                        cell: cid(i, j),
                        reason: format!("non-convex corner {k} (cross product {c:.3e})"),
                    });
                }
            }
            let volume = polygon_area(&quad);
            if volume <= 0.0 {
                return Err(MeshError::BadCell { cell: cid(i, j), reason: "inverted cell".into() });
            }
            let diameter = polygon_diameter(&quad);
            h = h.max(diameter);
            cells.push(Cell {
                volume,
                centroid: polygon_centroid(&quad),
                diameter,
                faces: Vec::new(),
                vertices: Some(quad),
            });
        }
    }

    let mut faces = Vec::new();
    let mut push_face = |cells: &mut [Cell], a: Point, b: Point, owner: CellId, neighbor: Option<CellId>| {
        let len = dist(a, b);
        let t = geometry::scale(geometry::sub(b, a), 1.0 / len);
        let mut normal = [t[1], -t[0]];
        let mid = geometry::lerp(a, b, 0.5);
        let outward = geometry::sub(mid, cells[owner].centroid);
        if geometry::dot(normal, outward) < 0.0 {
            normal = [-normal[0], -normal[1]];
        }
        let id = faces.len();
        faces.push(Face { area: len, normal, owner, neighbor, endpoints: Some((a, b)) });
        cells[owner].faces.push(id);
        if let Some(nb) = neighbor {
            cells[nb].faces.push(id);
        }
    };
    // vertical-direction edges: between (i, j) and (i + 1, j), plus boundary
    for j in 0..ny {
        for i in 0..=nx {
            let a = verts[vid(i, j)];
            let b = verts[vid(i, j + 1)];
            let (owner, neighbor) = if i == 0 {
                (cid(0, j), None)
            } else if i == nx {
                (cid(nx - 1, j), None)
            } else {
                (cid(i - 1, j), Some(cid(i, j)))
            };
            push_face(&mut cells, a, b, owner, neighbor);
        }
    }
    // horizontal-direction edges
    for j in 0..=ny {
        for i in 0..nx {
            let a = verts[vid(i, j)];
            let b = verts[vid(i + 1, j)];
            let (owner, neighbor) = if j == 0 {
                (cid(i, 0), None)
            } else if j == ny {
                (cid(i, ny - 1), None)
            } else {
                (cid(i, j - 1), Some(cid(i, j)))
            };
            push_face(&mut cells, a, b, owner, neighbor);
        }
    }

    let mesh = Tessellation {
        dim: 2,
        cells,
        faces,
        h,
        domain,
        lattice: Some(Lattice::Quad { nx, ny }),
    };
    mesh.validate()?;
    Ok(mesh)
}
