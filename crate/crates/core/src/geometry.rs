//! Parametric mold geometry: an inclined inlet pipe on top of a rectangular
//! cavity with two vents, plus point-set meshes of that domain.
//!
//! Design parameters are given in millimetres and degrees; everything built
//! from them is in metres.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::FluidProps;

pub type Point = [f64; 2];

const MM: f64 = 1e-3;

/// Critical Reynolds number capping the inlet speed.
pub const RE_LIMIT: f64 = 2300.0;

/// One point of the design space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    /// inlet size (mm)
    pub a: f64,
    /// inlet horizontal position (mm)
    pub b: f64,
    /// inlet angle from horizontal (deg)
    pub c: f64,
    /// inlet pipe height above the top wall (mm)
    pub d: f64,
    /// outlet size (mm)
    pub e: f64,
    /// cavity height (mm)
    pub f: f64,
    /// cavity width (mm)
    pub g: f64,
    /// inlet speed as a fraction of the Reynolds-limited maximum
    pub v: f64,
}

impl DesignParams {
    /// A design with the fixed values D=30, E=10, F=50, G=100.
    pub fn new(a: f64, b: f64, c: f64, v: f64) -> Self {
        Self { a, b, c, d: 30.0, e: 10.0, f: 50.0, g: 100.0, v }
    }

    pub fn to_array(&self) -> [f64; 8] {
        [self.a, self.b, self.c, self.d, self.e, self.f, self.g, self.v]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        Self { a: v[0], b: v[1], c: v[2], d: v[3], e: v[4], f: v[5], g: v[6], v: v[7] }
    }

    /// Horizontal centres of the two vents (mm).
    pub fn outlet_centers(&self) -> [f64; 2] {
        [self.g / 4.0, 3.0 * self.g / 4.0]
    }

    /// Horizontal displacement of the pipe mouth relative to its footprint (mm).
    /// Negative for angles below 90 degrees: the pipe leans left so that
    /// flow along its axis, direction (cos C, -sin C), heads into the cavity.
    pub fn pipe_shift(&self) -> f64 {
        let c = self.c.to_radians();
        -self.d * c.cos() / c.sin()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        if !(10.0..=25.0).contains(&self.a) {
            return bad(format!("inlet size A={} outside [10, 25] mm", self.a));
        }
        if !(10.0..=90.0).contains(&self.b) {
            return bad(format!("inlet position B={} outside [10, 90] mm", self.b));
        }
        if !(10.0..=90.0).contains(&self.c) {
            return bad(format!("inlet angle C={} outside [10, 90] deg", self.c));
        }
        if !(self.v > 0.0 && self.v <= 1.0) {
            return bad(format!("velocity fraction V={} outside (0, 1]", self.v));
        }
        if self.d <= 0.0 || self.e <= 0.0 || self.f <= 0.0 || self.g <= 0.0 {
            return bad("D, E, F and G must be positive".into());
        }
        let (lo, hi) = (self.b - self.a / 2.0, self.b + self.a / 2.0);
        if lo < 0.0 || hi > self.g {
            return bad(format!("inlet footprint [{lo}, {hi}] mm exits [0, {}]", self.g));
        }
        for xc in self.outlet_centers() {
            let (olo, ohi) = (xc - self.e / 2.0, xc + self.e / 2.0);
            if olo < 0.0 || ohi > self.g {
                return bad(format!("outlet [{olo}, {ohi}] mm exits the top wall"));
            }
            if lo < ohi && olo < hi {
                return bad(format!("inlet footprint [{lo}, {hi}] mm overlaps outlet [{olo}, {ohi}] mm"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryLabel {
    Inlet,
    Outlet,
    Wall,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
    pub label: BoundaryLabel,
    /// outward unit normal
    pub normal: Point,
}

impl Segment {
    fn new(start: Point, end: Point, label: BoundaryLabel) -> Self {
        let (dx, dy) = (end[0] - start[0], end[1] - start[1]);
        let len = dx.hypot(dy);
        Self { start, end, label, normal: [dy / len, -dx / len] }
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    pub fn distance(&self, p: Point) -> f64 {
        let (dx, dy) = (self.end[0] - self.start[0], self.end[1] - self.start[1]);
        let len2 = dx * dx + dy * dy;
        let t = (((p[0] - self.start[0]) * dx + (p[1] - self.start[1]) * dy) / len2).clamp(0.0, 1.0);
        (p[0] - self.start[0] - t * dx).hypot(p[1] - self.start[1] - t * dy)
    }

    pub fn point_at(&self, t: f64) -> Point {
        [self.start[0] + t * (self.end[0] - self.start[0]), self.start[1] + t * (self.end[1] - self.start[1])]
    }
}

/// The closed, counter-clockwise boundary of the mold plus its bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct CavityDomain {
    pub params: DesignParams,
    pub segments: Vec<Segment>,
    pub bbox_min: Point,
    pub bbox_max: Point,
}

fn segments_cross(a: &Segment, b: &Segment) -> bool {
    fn orient(p: Point, q: Point, r: Point) -> f64 {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    }
    let d1 = orient(a.start, a.end, b.start);
    let d2 = orient(a.start, a.end, b.end);
    let d3 = orient(b.start, b.end, a.start);
    let d4 = orient(b.start, b.end, a.end);
    let scale = a.length().max(b.length()).powi(2) * 1e-12;
    if d1.abs() <= scale && d2.abs() <= scale {
        // collinear: overlap test on the dominant axis
        let axis = if (a.end[0] - a.start[0]).abs() > (a.end[1] - a.start[1]).abs() { 0 } else { 1 };
        let (a0, a1) = (a.start[axis].min(a.end[axis]), a.start[axis].max(a.end[axis]));
        let (b0, b1) = (b.start[axis].min(b.end[axis]), b.start[axis].max(b.end[axis]));
        return a0 < b1 && b0 < a1;
    }
    (d1 > scale && d2 < -scale || d1 < -scale && d2 > scale) && (d3 > scale && d4 < -scale || d3 < -scale && d4 > scale)
}

/// Builds the mold outline for a design.
pub fn build_cavity(params: &DesignParams) -> Result<CavityDomain> {
    params.validate()?;
    let p = params;
    let (f, g) = (p.f * MM, p.g * MM);
    let (xl, xr) = ((p.b - p.a / 2.0) * MM, (p.b + p.a / 2.0) * MM);
    let top = (p.f + p.d) * MM;
    let shift = p.pipe_shift() * MM;
    let half_e = p.e / 2.0 * MM;
    let [o1, o2] = p.outlet_centers().map(|c| c * MM);

    // top wall, walked right to left, as (x_from, x_to, label) runs
    let mut openings = vec![(o2 + half_e, o2 - half_e, Some(BoundaryLabel::Outlet)), (xr, xl, None)];
    openings.push((o1 + half_e, o1 - half_e, Some(BoundaryLabel::Outlet)));
    openings.sort_by(|a, b| b.0.total_cmp(&a.0));

    use BoundaryLabel::*;
    let mut segs = vec![Segment::new([0.0, 0.0], [g, 0.0], Wall), Segment::new([g, 0.0], [g, f], Wall)];
    let mut x = g;
    for (from, to, label) in openings {
        if from < x {
            segs.push(Segment::new([x, f], [from, f], Wall));
        }
        match label {
            Some(l) => segs.push(Segment::new([from, f], [to, f], l)),
            None => {
                segs.push(Segment::new([xr, f], [xr + shift, top], Wall));
                segs.push(Segment::new([xr + shift, top], [xl + shift, top], Inlet));
                segs.push(Segment::new([xl + shift, top], [xl, f], Wall));
            }
        }
        x = to;
    }
    if x > 0.0 {
        segs.push(Segment::new([x, f], [0.0, f], Wall));
    }
    segs.push(Segment::new([0.0, f], [0.0, 0.0], Wall));

    for i in 0..segs.len() {
        for j in i + 1..segs.len() {
            let adjacent = j == i + 1 || (i == 0 && j == segs.len() - 1);
            if !adjacent && segments_cross(&segs[i], &segs[j]) {
                return Err(Error::InvalidDesign(format!("boundary self-intersects between segments {i} and {j}")));
            }
        }
    }

    let mut bbox_min = [f64::INFINITY; 2];
    let mut bbox_max = [f64::NEG_INFINITY; 2];
    for s in &segs {
        for k in 0..2 {
            bbox_min[k] = bbox_min[k].min(s.start[k]);
            bbox_max[k] = bbox_max[k].max(s.start[k]);
        }
    }
    Ok(CavityDomain { params: *params, segments: segs, bbox_min, bbox_max })
}

impl CavityDomain {
    /// Polygon vertices in loop order.
    pub fn polygon(&self) -> Vec<Point> {
        self.segments.iter().map(|s| s.start).collect()
    }

    /// Even-odd containment; points on the boundary count as inside.
    pub fn contains(&self, x: Point) -> bool {
        let tol = 1e-12 * (self.bbox_max[0] - self.bbox_min[0]).max(self.bbox_max[1] - self.bbox_min[1]);
        if self.distance_to_boundary(x) <= tol {
            return true;
        }
        let mut inside = false;
        for s in &self.segments {
            let (a, b) = (s.start, s.end);
            if (a[1] > x[1]) != (b[1] > x[1]) {
                let xc = a[0] + (x[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if x[0] < xc {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn distance_to_boundary(&self, x: Point) -> f64 {
        self.segments.iter().map(|s| s.distance(x)).fold(f64::INFINITY, f64::min)
    }

    /// Distance to the boundary, positive inside and negative outside.
    pub fn signed_distance(&self, x: Point) -> f64 {
        let d = self.distance_to_boundary(x);
        if self.contains(x) {
            d
        } else {
            -d
        }
    }

    /// Distance to the nearest segment carrying `label`.
    pub fn distance_to_label(&self, x: Point, label: BoundaryLabel) -> f64 {
        self.segments.iter().filter(|s| s.label == label).map(|s| s.distance(x)).fold(f64::INFINITY, f64::min)
    }

    /// Per-axis affine map of the bounding box onto `[0, 1]^2`.
    pub fn to_unit(&self, x: Point) -> Point {
        [
            (x[0] - self.bbox_min[0]) / (self.bbox_max[0] - self.bbox_min[0]),
            (x[1] - self.bbox_min[1]) / (self.bbox_max[1] - self.bbox_min[1]),
        ]
    }

    pub fn from_unit(&self, u: Point) -> Point {
        [
            self.bbox_min[0] + u[0] * (self.bbox_max[0] - self.bbox_min[0]),
            self.bbox_min[1] + u[1] * (self.bbox_max[1] - self.bbox_min[1]),
        ]
    }

    /// Enclosed area (shoelace).
    pub fn area(&self) -> f64 {
        0.5 * self.segments.iter().map(|s| s.start[0] * s.end[1] - s.end[0] * s.start[1]).sum::<f64>()
    }
}

/// Free function form of [`CavityDomain::contains`].
pub fn point_in_domain(domain: &CavityDomain, x: Point) -> bool {
    domain.contains(x)
}

/// A vertex set on the domain with per-vertex boundary information.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub inlet_mask: Vec<bool>,
    pub boundary_label: Vec<Option<BoundaryLabel>>,
    pub spacing: f64,
}

impl Mesh {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Rebuilds the derived per-vertex data from coordinates alone.
    pub fn from_vertices(domain: &CavityDomain, vertices: Vec<Point>, spacing: f64) -> Self {
        let tol = 1e-9 * spacing;
        let inlet_mask =
            vertices.iter().map(|&v| domain.distance_to_label(v, BoundaryLabel::Inlet) <= spacing).collect();
        let boundary_label = vertices
            .iter()
            .map(|&v| {
                domain.segments.iter().filter(|s| s.distance(v) <= tol).map(|s| s.label).min_by_key(|l| match l {
                    BoundaryLabel::Inlet => 0,
                    BoundaryLabel::Outlet => 1,
                    BoundaryLabel::Wall => 2,
                })
            })
            .collect();
        Self { vertices, inlet_mask, boundary_label, spacing }
    }

    /// Keeps the listed vertices, in the given order.
    pub fn select(&self, keep: &[usize]) -> Self {
        Self {
            vertices: keep.iter().map(|&i| self.vertices[i]).collect(),
            inlet_mask: keep.iter().map(|&i| self.inlet_mask[i]).collect(),
            boundary_label: keep.iter().map(|&i| self.boundary_label[i]).collect(),
            spacing: self.spacing,
        }
    }
}

/// Jittered-grid interior samples plus vertices traced along the boundary.
pub fn generate_mesh(domain: &CavityDomain, spacing: f64, seed: u64) -> Result<Mesh> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::DegenerateSpacing { spacing, count: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::new();
    for s in &domain.segments {
        let n = (s.length() / spacing).ceil().max(1.0) as usize;
        for k in 0..n {
            vertices.push(s.point_at(k as f64 / n as f64));
        }
    }
    let nx = ((domain.bbox_max[0] - domain.bbox_min[0]) / spacing).ceil() as usize;
    let ny = ((domain.bbox_max[1] - domain.bbox_min[1]) / spacing).ceil() as usize;
    for j in 0..ny {
        for i in 0..nx {
            let jx: f64 = rng.gen_range(-0.25..0.25);
            let jy: f64 = rng.gen_range(-0.25..0.25);
            let p = [
                domain.bbox_min[0] + (i as f64 + 0.5 + jx) * spacing,
                domain.bbox_min[1] + (j as f64 + 0.5 + jy) * spacing,
            ];
            if domain.contains(p) && domain.distance_to_boundary(p) >= 0.4 * spacing {
                vertices.push(p);
            }
        }
    }
    if vertices.len() < 16 {
        return Err(Error::DegenerateSpacing { spacing, count: vertices.len() });
    }
    Ok(Mesh::from_vertices(domain, vertices, spacing))
}

/// Reynolds-capped inlet speed `V * 2300 mu1 / (rho1 A)` in m/s.
pub fn inlet_velocity(params: &DesignParams, props: &FluidProps) -> f64 {
    params.v * RE_LIMIT * props.mu1 / (props.rho1 * params.a * MM)
}
