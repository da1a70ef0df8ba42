//! Analytic velocity and data fields together with the discretization maps
//! that turn them into mesh quantities: cell averages, per-step source
//! averages and face-averaged normal velocities.
//!
//! Velocity fields are tangential at the domain boundary, so boundary faces
//! always carry zero flux. Interior face values are stored on the owner
//! orientation; reading from the neighbor side negates them.

use crate::geometry::{dist, dot, norm, sub, Point, Rect};
use crate::mesh::{CellId, FaceId, Tessellation};
use crate::quadrature;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("evaluator returned a non-finite value at t={t}, x=({x}, {y})")]
    NonFinite { t: f64, x: f64, y: f64 },
    #[error("field has no analytic divergence")]
    MissingDivergence,
    #[error("quadrature needs at least one sample, got {0}")]
    BadSampleCount(usize),
    #[error("cell {0} carries no vertex geometry (imported mesh?)")]
    NoGeometry(CellId),
    #[error("unknown field id {0:?}")]
    UnknownId(String),
    #[error("bad parameter in field id {id:?}: {msg}")]
    BadParameter { id: String, msg: String },
}

/// Spatial regularity declared by a velocity field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularity {
    Lipschitz,
    /// W^{1,p} in space but not Lipschitz.
    SobolevOnly { p: f64 },
}

/// An analytic velocity field on a fixed domain, tangential at the boundary.
pub trait VelocityField: Sync + Send {
    fn eval(&self, t: f64, x: Point) -> Point;

    /// Pointwise spatial divergence, when available in closed form. May
    /// return infinities where the derivative blows up.
    fn divergence(&self, _t: f64, _x: Point) -> Option<f64> {
        None
    }

    /// Supremum over the domain of the negative part of the divergence at
    /// time `t`, when known analytically.
    fn div_minus_sup(&self, _t: f64) -> Option<f64> {
        None
    }

    /// Declared bound on |u| over time and space.
    fn sup_norm(&self) -> f64;

    fn domain(&self) -> Rect;

    fn is_divergence_free(&self) -> bool {
        false
    }

    /// True when the field does not depend on time.
    fn is_autonomous(&self) -> bool {
        false
    }

    fn regularity(&self) -> Regularity {
        Regularity::Lipschitz
    }
}

/// Initial datum and source distribution with a declared integrability
/// exponent. Sources integrate to zero over the domain at every time.
pub trait ScalarData: Sync + Send {
    fn initial(&self, x: Point) -> f64;

    fn source(&self, _t: f64, _x: Point) -> f64 {
        0.0
    }

    fn has_source(&self) -> bool {
        false
    }

    fn source_autonomous(&self) -> bool {
        true
    }

    /// Integrability exponent q > 1.
    fn q(&self) -> f64 {
        2.0
    }
}

/// One scalar value per cell of a fixed mesh.
#[derive(Debug, Clone)]
pub struct CellField {
    pub mesh: Arc<Tessellation>,
    pub values: Vec<f64>,
}

impl CellField {
    pub fn new(mesh: Arc<Tessellation>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.cell_count());
        CellField { mesh, values }
    }

    pub fn zeros(mesh: Arc<Tessellation>) -> Self {
        let n = mesh.cell_count();
        CellField { mesh, values: vec![0.0; n] }
    }

    /// Total integral over the domain.
    pub fn mass(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.mesh.cells)
            .map(|(v, c)| v * c.volume)
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pointwise combination with another field on the same mesh.
    pub fn zip_with(&self, other: &CellField, f: impl Fn(f64, f64) -> f64) -> CellField {
        assert!(Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.cell_count() == other.mesh.cell_count());
        CellField {
            mesh: self.mesh.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CellField {
        CellField { mesh: self.mesh.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

/// Face-averaged normal velocities for one time step, stored on the owner
/// orientation; boundary faces carry zero.
#[derive(Debug, Clone)]
pub struct FluxData {
    pub mesh: Arc<Tessellation>,
    pub step: usize,
    values: Vec<f64>,
}

impl FluxData {
    pub fn new(mesh: Arc<Tessellation>, step: usize, mut values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.face_count());
        for (f, v) in mesh.faces.iter().zip(values.iter_mut()) {
            if f.is_boundary() {
                *v = 0.0;
            }
        }
        FluxData { mesh, step, values }
    }

    /// Face value on the owner orientation.
    pub fn on_owner(&self, face: FaceId) -> f64 {
        self.values[face]
    }

    /// Face value seen from `cell`: negated when `cell` is the neighbor.
    pub fn from_cell(&self, face: FaceId, cell: CellId) -> f64 {
        if self.mesh.faces[face].owner == cell {
            self.values[face]
        } else {
            -self.values[face]
        }
    }
}

/// Quadrature nodes and weights covering one cell; weights sum to |K|.
pub fn cell_quadrature(
    mesh: &Tessellation,
    cell: CellId,
    order: usize,
) -> Result<Vec<(Point, f64)>, FieldError> {
    let c = &mesh.cells[cell];
    let verts = c.vertices.as_ref().ok_or(FieldError::NoGeometry(cell))?;
    Ok(if mesh.dim == 1 {
        quadrature::on_interval(order, verts[0][0], verts[1][0])
            .into_iter()
            .map(|(x, w)| ([x, 0.0], w))
            .collect()
    } else {
        quadrature::on_polygon(order, verts, c.centroid)
    })
}

/// Cell averages of a pointwise function.
pub fn cell_average(
    mesh: &Arc<Tessellation>,
    g: impl Fn(Point) -> f64,
    quad_order: usize,
) -> Result<CellField, FieldError> {
    let mut values = Vec::with_capacity(mesh.cell_count());
    for cell in 0..mesh.cell_count() {
        let mut acc = 0.0;
        for (p, w) in cell_quadrature(mesh, cell, quad_order)? {
            let v = g(p);
            if !v.is_finite() {
                return Err(FieldError::NonFinite { t: 0.0, x: p[0], y: p[1] });
            }
            acc += w * v;
        }
        values.push(acc / mesh.cells[cell].volume);
    }
    Ok(CellField::new(mesh.clone(), values))
}

/// Space-time average of the source over cell K and step window
/// [n delta, (n+1) delta].
pub fn source_average(
    mesh: &Arc<Tessellation>,
    data: &dyn ScalarData,
    n: usize,
    delta: f64,
    quad_order: usize,
) -> Result<CellField, FieldError> {
    assert!(delta > 0.0);
    let t0 = n as f64 * delta;
    let tnodes = quadrature::on_interval(2, t0, t0 + delta);
    let mut values = Vec::with_capacity(mesh.cell_count());
    for cell in 0..mesh.cell_count() {
        let nodes = cell_quadrature(mesh, cell, quad_order)?;
        let mut acc = 0.0;
        for &(t, wt) in &tnodes {
            for &(p, w) in &nodes {
                let v = data.source(t, p);
                if !v.is_finite() {
                    return Err(FieldError::NonFinite { t, x: p[0], y: p[1] });
                }
                acc += wt * w * v;
            }
        }
        values.push(acc / (delta * mesh.cells[cell].volume));
    }
    Ok(CellField::new(mesh.clone(), values))
}

/// Removes the mean so the per-step sources sum to zero exactly; returns the
/// removed imbalance (the original mean density).
pub fn mean_correct(field: &CellField) -> (CellField, f64) {
    let vol = field.mesh.total_volume();
    let mean = field.mass() / vol;
    (field.map(|v| v - mean), mean)
}

/// Face-and-time averaged normal velocities for step `n`. Boundary faces are
/// forced to zero; the velocity is tangential there.
pub fn face_velocity(
    mesh: &Arc<Tessellation>,
    u: &dyn VelocityField,
    n: usize,
    delta: f64,
    quad_order: usize,
) -> Result<FluxData, FieldError> {
    assert!(delta > 0.0);
    let t0 = n as f64 * delta;
    let tnodes = if u.is_autonomous() {
        vec![(t0, delta)]
    } else {
        quadrature::on_interval(2, t0, t0 + delta)
    };
    let mut values = vec![0.0; mesh.face_count()];
    for (fid, face) in mesh.faces.iter().enumerate() {
        if face.is_boundary() {
            continue;
        }
        let (a, b) = face.endpoints.ok_or(FieldError::NoGeometry(face.owner))?;
        let snodes: Vec<(Point, f64)> = if mesh.dim == 1 {
            vec![(a, 1.0)]
        } else {
            quadrature::on_segment(quad_order, a, b)
        };
        let mut acc = 0.0;
        for &(t, wt) in &tnodes {
            for &(p, w) in &snodes {
                let v = u.eval(t, p);
                if !v[0].is_finite() || !v[1].is_finite() {
                    return Err(FieldError::NonFinite { t, x: p[0], y: p[1] });
                }
                acc += wt * w * dot(v, face.normal);
            }
        }
        values[fid] = acc / (delta * face.area);
    }
    Ok(FluxData::new(mesh.clone(), n, values))
}

/// Per-cell discrete divergence sum |K|L| u_KL / |K|.
pub fn discrete_divergence(mesh: &Arc<Tessellation>, flux: &FluxData) -> CellField {
    let mut values = vec![0.0; mesh.cell_count()];
    for (cell, c) in mesh.cells.iter().enumerate() {
        let mut acc = 0.0;
        for &fid in &c.faces {
            acc += mesh.faces[fid].area * flux.from_cell(fid, cell);
        }
        values[cell] = acc / c.volume;
    }
    CellField::new(mesh.clone(), values)
}

/// Upper Riemann estimate of the time integral of |(div u)^-|_sup over
/// [t0, t1]. Requires the analytic divergence supremum.
pub fn div_minus_budget(
    u: &dyn VelocityField,
    t0: f64,
    t1: f64,
    samples: usize,
) -> Result<f64, FieldError> {
    if samples < 2 {
        return Err(FieldError::BadSampleCount(samples));
    }
    if u.div_minus_sup(t0).is_none() {
        return Err(FieldError::MissingDivergence);
    }
    let dt = (t1 - t0) / (samples - 1) as f64;
    let mut acc = 0.0;
    let mut prev = u.div_minus_sup(t0).unwrap();
    for k in 1..samples {
        let cur = u.div_minus_sup(t0 + k as f64 * dt).unwrap();
        acc += prev.max(cur) * dt;
        prev = cur;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// concrete velocity fields
// ---------------------------------------------------------------------------

/// The zero field on an arbitrary domain.
pub struct ZeroVelocity {
    pub domain: Rect,
}

impl VelocityField for ZeroVelocity {
    fn eval(&self, _t: f64, _x: Point) -> Point {
        [0.0, 0.0]
    }
    fn divergence(&self, _t: f64, _x: Point) -> Option<f64> {
        Some(0.0)
    }
    fn div_minus_sup(&self, _t: f64) -> Option<f64> {
        Some(0.0)
    }
    fn sup_norm(&self) -> f64 {
        0.0
    }
    fn domain(&self) -> Rect {
        self.domain
    }
    fn is_divergence_free(&self) -> bool {
        true
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Quintic smoothstep, C^2 at both ends.
fn smoothstep5(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

/// Rotation about the center of a square with a radial cutoff profile:
/// rigid inside `r_rigid`, zero beyond `r_cut`. The radial profile keeps the
/// field exactly divergence free and tangential on the square boundary.
pub struct CutoffRotation {
    pub center: Point,
    pub omega: f64,
    pub r_rigid: f64,
    pub r_cut: f64,
    pub domain: Rect,
    sup: f64,
}

impl CutoffRotation {
    pub fn new(domain: Rect, center: Point, omega: f64, r_rigid: f64, r_cut: f64) -> Self {
        let mut sup: f64 = 0.0;
        for k in 0..=4096 {
            let r = r_cut * k as f64 / 4096.0;
            let eta = Self::profile_static(r, r_rigid, r_cut);
            sup = sup.max((omega * eta * r).abs());
        }
        CutoffRotation { center, omega, r_rigid, r_cut, domain, sup: sup * (1.0 + 1e-9) }
    }

    fn profile_static(r: f64, r_rigid: f64, r_cut: f64) -> f64 {
        if r <= r_rigid {
            1.0
        } else if r >= r_cut {
            0.0
        } else {
            1.0 - smoothstep5((r - r_rigid) / (r_cut - r_rigid))
        }
    }

    pub fn profile(&self, r: f64) -> f64 {
        Self::profile_static(r, self.r_rigid, self.r_cut)
    }
}

impl VelocityField for CutoffRotation {
    fn eval(&self, _t: f64, x: Point) -> Point {
        let d = sub(x, self.center);
        let r = norm(d);
        let eta = self.omega * self.profile(r);
        [-eta * d[1], eta * d[0]]
    }
    fn divergence(&self, _t: f64, _x: Point) -> Option<f64> {
        Some(0.0)
    }
    fn div_minus_sup(&self, _t: f64) -> Option<f64> {
        Some(0.0)
    }
    fn sup_norm(&self) -> f64 {
        self.sup
    }
    fn domain(&self) -> Rect {
        self.domain
    }
    fn is_divergence_free(&self) -> bool {
        true
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Plain rigid rotation (-y, x) about a center. Not tangential on a square,
/// so it only serves quadrature and flow-map tests.
pub struct RigidRotation {
    pub center: Point,
    pub omega: f64,
    pub domain: Rect,
}

impl VelocityField for RigidRotation {
    fn eval(&self, _t: f64, x: Point) -> Point {
        let d = sub(x, self.center);
        [-self.omega * d[1], self.omega * d[0]]
    }
    fn divergence(&self, _t: f64, _x: Point) -> Option<f64> {
        Some(0.0)
    }
    fn div_minus_sup(&self, _t: f64) -> Option<f64> {
        Some(0.0)
    }
    fn sup_norm(&self) -> f64 {
        let e = self.domain.extent();
        self.omega.abs() * norm(e)
    }
    fn domain(&self) -> Rect {
        self.domain
    }
    fn is_divergence_free(&self) -> bool {
        true
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// u(x) = sign(x) |x|^alpha (1 - x^2) on (-1, 1). Sobolev regular for
/// p < 1/(1 - alpha) but not Lipschitz at the origin; the derivative blows
/// up there with positive sign, so the negative divergence part stays
/// bounded by 2.
pub struct SobolevPower1d {
    pub alpha: f64,
    pub p: f64,
}

impl SobolevPower1d {
    pub fn new(alpha: f64, p: f64) -> Self {
        assert!(alpha > 0.0 && alpha < 1.0);
        SobolevPower1d { alpha, p }
    }
}

impl VelocityField for SobolevPower1d {
    fn eval(&self, _t: f64, x: Point) -> Point {
        let y = x[0].abs();
        [x[0].signum() * y.powf(self.alpha) * (1.0 - y * y), 0.0]
    }
    fn divergence(&self, _t: f64, x: Point) -> Option<f64> {
        let y = x[0].abs();
        let a = self.alpha;
        Some(if y == 0.0 {
            f64::INFINITY
        } else {
            a * y.powf(a - 1.0) - (a + 2.0) * y.powf(a + 1.0)
        })
    }
    fn div_minus_sup(&self, _t: f64) -> Option<f64> {
        // (a + 2) y^{a+1} - a y^{a-1} is increasing on (0, 1]; max at y = 1
        Some(2.0)
    }
    fn sup_norm(&self) -> f64 {
        let a = self.alpha;
        let y = (a / (a + 2.0)).sqrt();
        y.powf(a) * (1.0 - y * y)
    }
    fn domain(&self) -> Rect {
        Rect::interval(-1.0, 1.0)
    }
    fn is_autonomous(&self) -> bool {
        true
    }
    fn regularity(&self) -> Regularity {
        Regularity::SobolevOnly { p: self.p }
    }
}

/// u(x) = amplitude sin(pi (x - lo) / (hi - lo)) on an interval; tangential
/// at both ends and everywhere positive inside.
pub struct SineVelocity1d {
    pub amplitude: f64,
    pub a: f64,
    pub b: f64,
}

impl VelocityField for SineVelocity1d {
    fn eval(&self, _t: f64, x: Point) -> Point {
        let s = (x[0] - self.a) / (self.b - self.a);
        [self.amplitude * (std::f64::consts::PI * s).sin(), 0.0]
    }
    fn divergence(&self, _t: f64, x: Point) -> Option<f64> {
        let l = self.b - self.a;
        let s = (x[0] - self.a) / l;
        Some(self.amplitude * std::f64::consts::PI / l * (std::f64::consts::PI * s).cos())
    }
    fn div_minus_sup(&self, _t: f64) -> Option<f64> {
        Some(self.amplitude.abs() * std::f64::consts::PI / (self.b - self.a))
    }
    fn sup_norm(&self) -> f64 {
        self.amplitude.abs()
    }
    fn domain(&self) -> Rect {
        Rect::interval(self.a, self.b)
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// u(x) = -amplitude sin(pi x) on (-1, 1): compresses mass towards the
/// origin, with |(div u)^-|_sup = amplitude pi attained there.
pub struct CompressiveSine1d {
    pub amplitude: f64,
}

impl VelocityField for CompressiveSine1d {
    fn eval(&self, _t: f64, x: Point) -> Point {
        [-self.amplitude * (std::f64::consts::PI * x[0]).sin(), 0.0]
    }
    fn divergence(&self, _t: f64, x: Point) -> Option<f64> {
        Some(-self.amplitude * std::f64::consts::PI * (std::f64::consts::PI * x[0]).cos())
    }
    fn div_minus_sup(&self, _t: f64) -> Option<f64> {
        Some(self.amplitude * std::f64::consts::PI)
    }
    fn sup_norm(&self) -> f64 {
        self.amplitude
    }
    fn domain(&self) -> Rect {
        Rect::interval(-1.0, 1.0)
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Logistic drift u(x) = x (1 - x) on (0, 1); its characteristics have the
/// closed form x(t) = x0 e^t / (1 - x0 + x0 e^t).
pub struct Logistic1d;

impl VelocityField for Logistic1d {
    fn eval(&self, _t: f64, x: Point) -> Point {
        [x[0] * (1.0 - x[0]), 0.0]
    }
    fn divergence(&self, _t: f64, x: Point) -> Option<f64> {
        Some(1.0 - 2.0 * x[0])
    }
    fn div_minus_sup(&self, _t: f64) -> Option<f64> {
        Some(1.0)
    }
    fn sup_norm(&self) -> f64 {
        0.25
    }
    fn domain(&self) -> Rect {
        Rect::interval(0.0, 1.0)
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// concrete data fields
// ---------------------------------------------------------------------------

/// C^infinity bump supported on |s| < 1, equal to one at the center.
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

pub struct UniformData {
    pub value: f64,
    pub q: f64,
}

impl ScalarData for UniformData {
    fn initial(&self, _x: Point) -> f64 {
        self.value
    }
    fn q(&self) -> f64 {
        self.q
    }
}

/// Smooth compactly supported blob around a center point (any dimension).
pub struct SmoothBlob {
    pub center: Point,
    pub radius: f64,
    pub floor: f64,
    pub q: f64,
}

impl ScalarData for SmoothBlob {
    fn initial(&self, x: Point) -> f64 {
        self.floor + bump(dist(x, self.center) / self.radius)
    }
    fn q(&self) -> f64 {
        self.q
    }
}

/// Indicator of a disc (2d) or interval (1d, via radius on the first axis).
pub struct IndicatorData {
    pub center: Point,
    pub radius: f64,
    pub q: f64,
}

impl ScalarData for IndicatorData {
    fn initial(&self, x: Point) -> f64 {
        if dist(x, self.center) <= self.radius {
            1.0
        } else {
            0.0
        }
    }
    fn q(&self) -> f64 {
        self.q
    }
}

/// Square wave sign(sin(2 pi x / eps)): mean zero, oscillating at scale eps.
pub struct OscillatingData1d {
    pub eps: f64,
    pub q: f64,
}

impl ScalarData for OscillatingData1d {
    fn initial(&self, x: Point) -> f64 {
        let s = (2.0 * std::f64::consts::PI * x[0] / self.eps).sin();
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
    fn q(&self) -> f64 {
        self.q
    }
}

/// Smooth positive datum with a balanced time-independent source on (0, 1):
/// rho0 = 1 + a sin(2 pi x), f = a cos(2 pi x).
pub struct SourcedSine1d {
    pub amplitude: f64,
    pub q: f64,
}

impl ScalarData for SourcedSine1d {
    fn initial(&self, x: Point) -> f64 {
        1.0 + self.amplitude * (2.0 * std::f64::consts::PI * x[0]).sin()
    }
    fn source(&self, _t: f64, x: Point) -> f64 {
        self.amplitude * (2.0 * std::f64::consts::PI * x[0]).cos()
    }
    fn has_source(&self) -> bool {
        true
    }
    fn q(&self) -> f64 {
        self.q
    }
}

// ---------------------------------------------------------------------------
// string registry
// ---------------------------------------------------------------------------

fn parse_params(spec: &str) -> Result<(&str, Vec<(String, f64)>), FieldError> {
    match spec.split_once(':') {
        None => Ok((spec, Vec::new())),
        Some((name, rest)) => {
            let mut params = Vec::new();
            for part in rest.split(',') {
                let (k, v) = part.split_once('=').ok_or_else(|| FieldError::BadParameter {
                    id: spec.to_string(),
                    msg: format!("expected key=value, got {part:?}"),
                })?;
                let val: f64 = v.trim().parse().map_err(|_| FieldError::BadParameter {
                    id: spec.to_string(),
                    msg: format!("bad number {v:?}"),
                })?;
                params.push((k.trim().to_string(), val));
            }
            Ok((name, params))
        }
    }
}

fn param(params: &[(String, f64)], key: &str, default: f64) -> f64 {
    params
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| *v)
        .unwrap_or(default)
}

/// Looks up a velocity field by its string id, e.g. `rotation2d`,
/// `sobolev1d:alpha=0.6`, `sine1d:amp=0.5`, `compressive1d:amp=1`,
/// `logistic1d`, `zero1d`, `zero2d`.
pub fn velocity_by_id(id: &str) -> Result<Arc<dyn VelocityField>, FieldError> {
    let (name, params) = parse_params(id)?;
    Ok(match name {
        "zero1d" => Arc::new(ZeroVelocity { domain: Rect::interval(0.0, 1.0) }),
        "zero2d" => Arc::new(ZeroVelocity { domain: Rect::unit_square() }),
        "rotation2d" => Arc::new(CutoffRotation::new(
            Rect::unit_square(),
            [0.5, 0.5],
            param(&params, "omega", 1.0),
            0.38,
            0.48,
        )),
        "rotation2d_rigid" => Arc::new(RigidRotation {
            center: [0.0, 0.0],
            omega: param(&params, "omega", 1.0),
            domain: Rect::new([-0.5, -0.5], [0.5, 0.5]),
        }),
        "sobolev1d" => {
            let alpha = param(&params, "alpha", 0.6);
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(FieldError::BadParameter {
                    id: id.to_string(),
                    msg: format!("alpha={alpha} outside (0, 1)"),
                });
            }
            Arc::new(SobolevPower1d::new(alpha, param(&params, "p", 2.0)))
        }
        "sine1d" => Arc::new(SineVelocity1d { amplitude: param(&params, "amp", 0.5), a: 0.0, b: 1.0 }),
        "compressive1d" => Arc::new(CompressiveSine1d { amplitude: param(&params, "amp", 1.0) }),
        "logistic1d" => Arc::new(Logistic1d),
        _ => return Err(FieldError::UnknownId(id.to_string())),
    })
}

/// Looks up a data field by its string id, e.g. `blob2d`, `indicator2d`,
/// `blob1d:center=0.3`, `indicator1d`, `oscillating1d:eps=0.25`,
/// `sourced_sine1d`, `uniform:value=1`.
pub fn data_by_id(id: &str) -> Result<Arc<dyn ScalarData>, FieldError> {
    let (name, params) = parse_params(id)?;
    let q = param(&params, "q", 2.0);
    Ok(match name {
        "uniform" => Arc::new(UniformData { value: param(&params, "value", 1.0), q }),
        "blob2d" => Arc::new(SmoothBlob {
            center: [param(&params, "cx", 0.7), param(&params, "cy", 0.5)],
            radius: param(&params, "radius", 0.12),
            floor: 0.0,
            q,
        }),
        "indicator2d" => Arc::new(IndicatorData {
            center: [param(&params, "cx", 0.7), param(&params, "cy", 0.5)],
            radius: param(&params, "radius", 0.15),
            q,
        }),
        "blob1d" => Arc::new(SmoothBlob {
            center: [param(&params, "center", 0.3), 0.0],
            radius: param(&params, "radius", 0.25),
            floor: 0.0,
            q,
        }),
        "indicator1d" => Arc::new(IndicatorData {
            center: [param(&params, "center", 0.5), 0.0],
            radius: param(&params, "radius", 0.2),
            q,
        }),
        "oscillating1d" => {
            let eps = param(&params, "eps", 0.25);
            if !(eps > 0.0) {
                return Err(FieldError::BadParameter {
                    id: id.to_string(),
                    msg: "eps must be positive".into(),
                });
            }
            Arc::new(OscillatingData1d { eps, q })
        }
        "sourced_sine1d" => Arc::new(SourcedSine1d { amplitude: param(&params, "amp", 0.5), q }),
        _ => return Err(FieldError::UnknownId(id.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::lerp;
    use crate::mesh::{build_perturbed_quad_mesh, build_uniform_interval_mesh};

    fn interval(n: usize) -> Arc<Tessellation> {
        Arc::new(build_uniform_interval_mesh(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn cell_average_constant() {
        let mesh = Arc::new(build_perturbed_quad_mesh(Rect::unit_square(), 5, 4, 0.2, 3).unwrap());
        let f = cell_average(&mesh, |_| 3.25, 3).unwrap();
        for v in &f.values {
            assert!((v - 3.25).abs() < 1e-13);
        }
    }

    #[test]
    fn cell_average_linear_1d() {
        let n = 8;
        let mesh = interval(n);
        // order 1 (midpoint) integrates linear functions exactly
        let f = cell_average(&mesh, |p| p[0], 1).unwrap();
        for (k, v) in f.values.iter().enumerate() {
            let expect = (k as f64 + 0.5) / n as f64;
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_average_aligned_indicator() {
        let mesh = interval(2);
        let f = cell_average(&mesh, |p| if p[0] < 0.5 { 1.0 } else { 0.0 }, 3).unwrap();
        assert!((f.values[0] - 1.0).abs() < 1e-14);
        assert!(f.values[1].abs() < 1e-14);
    }

    #[test]
    fn cell_average_rejects_nan() {
        let mesh = interval(4);
        assert!(matches!(
            cell_average(&mesh, |p| if p[0] > 0.5 { f64::NAN } else { 0.0 }, 2),
            Err(FieldError::NonFinite { .. })
        ));
    }

    #[test]
    fn source_average_zero_and_time_independent() {
        let mesh = interval(6);
        struct Zero;
        impl ScalarData for Zero {
            fn initial(&self, _x: Point) -> f64 {
                0.0
            }
        }
        let f = source_average(&mesh, &Zero, 0, 0.1, 3).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));

        let data = SourcedSine1d { amplitude: 0.5, q: 2.0 };
        let f0 = source_average(&mesh, &data, 0, 0.1, 3).unwrap();
        let f7 = source_average(&mesh, &data, 7, 0.1, 3).unwrap();
        let avg = cell_average(&mesh, |p| data.source(0.0, p), 3).unwrap();
        for k in 0..6 {
            assert!((f0.values[k] - f7.values[k]).abs() < 1e-14);
            assert!((f0.values[k] - avg.values[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn source_average_separable_matches_tensor_product() {
        let mesh = interval(5);
        struct Separable;
        impl ScalarData for Separable {
            fn initial(&self, _x: Point) -> f64 {
                0.0
            }
            fn source(&self, t: f64, x: Point) -> f64 {
                (1.0 + t * t) * (x[0] * x[0] - 1.0 / 3.0)
            }
            fn has_source(&self) -> bool {
                true
            }
            fn source_autonomous(&self) -> bool {
                false
            }
        }
        let delta = 0.3;
        let n = 2;
        let f = source_average(&mesh, &Separable, n, delta, 3).unwrap();
        // independent tensor quadrature: time average of a(t) times space
        // average of b(x), both integrable in closed form
        let t0 = n as f64 * delta;
        let t1 = t0 + delta;
        let time_avg = (t1 - t0 + (t1.powi(3) - t0.powi(3)) / 3.0) / delta;
        for (k, v) in f.values.iter().enumerate() {
            let (x0, x1) = (k as f64 / 5.0, (k as f64 + 1.0) / 5.0);
            let space_avg = ((x1.powi(3) - x0.powi(3)) / 3.0) / (x1 - x0) - 1.0 / 3.0;
            assert!((v - time_avg * space_avg).abs() < 1e-13, "cell {k}");
        }
    }

    #[test]
    fn mean_correction_balances_sources() {
        let mesh = interval(7);
        let data = SourcedSine1d { amplitude: 0.5, q: 2.0 };
        let f = source_average(&mesh, &data, 0, 0.05, 3).unwrap();
        // the analytic source is balanced; quadrature keeps it under 1e-8
        assert!(f.mass().abs() < 1e-8 * 0.5);
        let (g, _) = mean_correct(&f);
        assert!(g.mass().abs() < 1e-15);
    }

    #[test]
    fn face_velocity_constant_field() {
        struct Constant;
        impl VelocityField for Constant {
            fn eval(&self, _t: f64, _x: Point) -> Point {
                [0.3, -0.2]
            }
            fn sup_norm(&self) -> f64 {
                norm([0.3, -0.2])
            }
            fn domain(&self) -> Rect {
                Rect::unit_square()
            }
            fn is_autonomous(&self) -> bool {
                true
            }
        }
        let mesh = Arc::new(build_perturbed_quad_mesh(Rect::unit_square(), 4, 4, 0.15, 9).unwrap());
        let flux = face_velocity(&mesh, &Constant, 0, 0.1, 3).unwrap();
        for (fid, face) in mesh.faces.iter().enumerate() {
            if face.is_boundary() {
                assert_eq!(flux.on_owner(fid), 0.0);
            } else {
                let expect = dot([0.3, -0.2], face.normal);
                assert!((flux.on_owner(fid) - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn face_velocity_zero_field() {
        let mesh = interval(6);
        let u = ZeroVelocity { domain: Rect::interval(0.0, 1.0) };
        let flux = face_velocity(&mesh, &u, 0, 0.1, 2).unwrap();
        for fid in 0..mesh.face_count() {
            assert_eq!(flux.on_owner(fid), 0.0);
        }
    }

    #[test]
    fn face_velocity_rotation_matches_line_integral() {
        // (-y, x) is linear, so two-point Gauss on a straight face is exact;
        // compare against the closed-form line integral through the midpoint
        let domain = Rect::new([-0.5, -0.5], [0.5, 0.5]);
        let mesh = Arc::new(build_perturbed_quad_mesh(domain, 4, 4, 0.2, 21).unwrap());
        let u = RigidRotation { center: [0.0, 0.0], omega: 1.0, domain };
        let flux = face_velocity(&mesh, &u, 0, 0.25, 2).unwrap();
        for (fid, face) in mesh.faces.iter().enumerate() {
            if face.is_boundary() {
                continue;
            }
            let (a, b) = face.endpoints.unwrap();
            let mid = lerp(a, b, 0.5);
            let expect = dot([-mid[1], mid[0]], face.normal);
            assert!((flux.on_owner(fid) - expect).abs() < 1e-12, "face {fid}");
        }
    }

    #[test]
    fn flux_antisymmetry_on_neighbor_access() {
        let mesh = Arc::new(build_perturbed_quad_mesh(Rect::unit_square(), 3, 3, 0.1, 5).unwrap());
        let u = CutoffRotation::new(Rect::unit_square(), [0.5, 0.5], 1.0, 0.38, 0.48);
        let flux = face_velocity(&mesh, &u, 0, 0.1, 3).unwrap();
        for (fid, face) in mesh.interior_faces() {
            let nb = face.neighbor.unwrap();
            assert_eq!(flux.from_cell(fid, face.owner), -flux.from_cell(fid, nb));
        }
    }

    #[test]
    fn discrete_divergence_constant_field_closes() {
        struct Constant;
        impl VelocityField for Constant {
            fn eval(&self, _t: f64, _x: Point) -> Point {
                [1.0, 2.0]
            }
            fn sup_norm(&self) -> f64 {
                norm([1.0, 2.0])
            }
            fn domain(&self) -> Rect {
                Rect::unit_square()
            }
            fn is_autonomous(&self) -> bool {
                true
            }
        }
        let mesh = Arc::new(build_perturbed_quad_mesh(Rect::unit_square(), 6, 6, 0.2, 13).unwrap());
        let flux = face_velocity(&mesh, &Constant, 0, 0.1, 3).unwrap();
        let div = discrete_divergence(&mesh, &flux);
        // interior cells close exactly; boundary cells see the forced zero
        for (cell, c) in mesh.cells.iter().enumerate() {
            let on_boundary = c.faces.iter().any(|&f| mesh.faces[f].is_boundary());
            if !on_boundary {
                assert!(div.values[cell].abs() < 1e-10, "cell {cell}");
            }
        }
    }

    #[test]
    fn discrete_divergence_rotation_is_zero() {
        let domain = Rect::new([-0.5, -0.5], [0.5, 0.5]);
        let mesh = Arc::new(build_perturbed_quad_mesh(domain, 5, 5, 0.15, 2).unwrap());
        let u = RigidRotation { center: [0.0, 0.0], omega: 1.0, domain };
        let flux = face_velocity(&mesh, &u, 0, 0.1, 2).unwrap();
        let div = discrete_divergence(&mesh, &flux);
        for (cell, c) in mesh.cells.iter().enumerate() {
            let on_boundary = c.faces.iter().any(|&f| mesh.faces[f].is_boundary());
            if !on_boundary {
                assert!(div.values[cell].abs() < 1e-10, "cell {cell}: {}", div.values[cell]);
            }
        }
    }

    #[test]
    fn discrete_divergence_linear_1d() {
        struct Linear;
        impl VelocityField for Linear {
            fn eval(&self, _t: f64, x: Point) -> Point {
                [x[0], 0.0]
            }
            fn sup_norm(&self) -> f64 {
                1.0
            }
            fn domain(&self) -> Rect {
                Rect::interval(0.0, 1.0)
            }
            fn is_autonomous(&self) -> bool {
                true
            }
        }
        let mesh = interval(10);
        let flux = face_velocity(&mesh, &Linear, 0, 0.1, 2).unwrap();
        let div = discrete_divergence(&mesh, &flux);
        // all but the last cell: boundary flux at x = 1 is forced to zero
        for v in &div.values[1..9] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!((div.values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn div_minus_budget_cases() {
        let zero = ZeroVelocity { domain: Rect::interval(0.0, 1.0) };
        assert_eq!(div_minus_budget(&zero, 0.0, 1.0, 100).unwrap(), 0.0);

        struct ConstDiv;
        impl VelocityField for ConstDiv {
            fn eval(&self, _t: f64, _x: Point) -> Point {
                [0.0, 0.0]
            }
            fn div_minus_sup(&self, _t: f64) -> Option<f64> {
                Some(3.0)
            }
            fn sup_norm(&self) -> f64 {
                1.0
            }
            fn domain(&self) -> Rect {
                Rect::interval(0.0, 1.0)
            }
        }
        let b = div_minus_budget(&ConstDiv, 0.25, 0.75, 50).unwrap();
        assert!((b - 1.5).abs() < 1e-13);

        struct SinDiv;
        impl VelocityField for SinDiv {
            fn eval(&self, _t: f64, _x: Point) -> Point {
                [0.0, 0.0]
            }
            fn div_minus_sup(&self, t: f64) -> Option<f64> {
                Some(t.sin().max(0.0))
            }
            fn sup_norm(&self) -> f64 {
                1.0
            }
            fn domain(&self) -> Rect {
                Rect::interval(0.0, 1.0)
            }
        }
        let b = div_minus_budget(&SinDiv, 0.0, std::f64::consts::PI, 10_000).unwrap();
        assert!(b >= 2.0 - 1e-12, "upper estimate must not undercut");
        assert!((b - 2.0).abs() < 1e-3);

        struct NoDiv;
        impl VelocityField for NoDiv {
            fn eval(&self, _t: f64, _x: Point) -> Point {
                [0.0, 0.0]
            }
            fn sup_norm(&self) -> f64 {
                1.0
            }
            fn domain(&self) -> Rect {
                Rect::interval(0.0, 1.0)
            }
        }
        assert!(matches!(
            div_minus_budget(&NoDiv, 0.0, 1.0, 10),
            Err(FieldError::MissingDivergence)
        ));
    }

    #[test]
    fn jensen_bound_for_discretized_data() {
        // averaging contracts Lq norms on nested refinements
        let coarse = interval(8);
        let fine = interval(64);
        let data = SmoothBlob { center: [0.3, 0.0], radius: 0.25, floor: 0.0, q: 2.0 };
        let rc = cell_average(&coarse, |p| data.initial(p), 3).unwrap();
        let rf = cell_average(&fine, |p| data.initial(p), 3).unwrap();
        let q = 2.0;
        let nc = crate::diagnostics::lq_norm(&rc, q);
        let nf = crate::diagnostics::lq_norm(&rf, q);
        assert!(nc <= nf + 1e-10);
    }

    #[test]
    fn registry_roundtrip() {
        assert!(velocity_by_id("rotation2d").is_ok());
        assert!(velocity_by_id("sobolev1d:alpha=0.6").is_ok());
        assert!(velocity_by_id("sobolev1d:alpha=1.5").is_err());
        assert!(velocity_by_id("nope").is_err());
        assert!(data_by_id("oscillating1d:eps=0.01").is_ok());
        assert!(data_by_id("indicator1d").is_ok());
        assert!(data_by_id("oscillating1d:eps=-1").is_err());
        assert!(data_by_id("blob2d:radius=0.2,q=3").is_ok());
    }

    #[test]
    fn cutoff_rotation_vanishes_on_boundary() {
        let u = CutoffRotation::new(Rect::unit_square(), [0.5, 0.5], 1.0, 0.38, 0.48);
        for k in 0..200 {
            let s = k as f64 / 199.0;
            for p in [[s, 0.0], [s, 1.0], [0.0, s], [1.0, s]] {
                assert_eq!(u.eval(0.0, p), [0.0, 0.0]);
            }
        }
        assert!(u.sup_norm() > 0.3 && u.sup_norm() < 0.5);
    }
}
