//! Rotated-rectangle geometry, polygon clipping and IoU, grid rasterization
//! and rigid-motion transforms.
//!
//! All operations here are pure functions over immutable inputs and are safe
//! to call from any number of threads.

mod iou;
mod pose;
mod raster;

pub use iou::rotated_iou;
pub use pose::{transform_points, RigidPose};
pub use raster::{rasterize_polygon, rasterize_polyline, CellSet, GridSpec};

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("box dimensions must be positive, got w={w}, h={h}")]
    NonPositiveBox { w: f64, h: f64 },
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is self-intersecting")]
    SelfIntersecting,
    #[error("polygon has (near-)zero area")]
    DegenerateArea,
    #[error("polyline needs at least 2 distinct vertices, got {0}")]
    TooShortPolyline(usize),
    #[error("polyline stroke width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("grid resolution must be positive, got {0}")]
    NonPositiveResolution(f64),
    #[error("grid must have at least one row and column, got {rows}x{cols}")]
    EmptyGrid { rows: usize, cols: usize },
}

/// Normalize an angle to `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    // rem_euclid can return exactly TAU for tiny negative inputs.
    if x <= -PI {
        x += TAU;
    }
    x
}

/// BEV pose and size of a vehicle at one timestep. `w` extends along the
/// heading, `h` across it; `phi` is counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub phi: f64,
}

impl OrientedBox2D {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, phi: f64) -> Result<Self, GeomError> {
        if !(w > 0.0 && h > 0.0) {
            return Err(GeomError::NonPositiveBox { w, h });
        }
        Ok(Self { cx, cy, w, h, phi: normalize_angle(phi) })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corner points in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.phi.sin_cos();
        let local = [
            [self.w / 2.0, self.h / 2.0],
            [-self.w / 2.0, self.h / 2.0],
            [-self.w / 2.0, -self.h / 2.0],
            [self.w / 2.0, -self.h / 2.0],
        ];
        local.map(|[x, y]| [self.cx + c * x - s * y, self.cy + s * x + c * y])
    }

    /// Heading unit vector.
    pub fn heading(&self) -> [f64; 2] {
        let (s, c) = self.phi.sin_cos();
        [c, s]
    }

    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }

    /// Does the point lie inside the box (boundary inclusive)?
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.phi.sin_cos();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.w / 2.0 && ly.abs() <= self.h / 2.0
    }

    /// Express the box, given in `from`'s frame, in `to`'s frame. Applies the
    /// full 3D rotation to the heading direction, then projects to BEV.
    pub fn to_frame(&self, from: &RigidPose, to: &RigidPose) -> OrientedBox2D {
        let center = transform_points(&[[self.cx, self.cy, 0.0]], from, to)[0];
        let (s, c) = self.phi.sin_cos();
        let dir = pose::rotate_between(from, to, [c, s, 0.0]);
        OrientedBox2D {
            cx: center[0],
            cy: center[1],
            w: self.w,
            h: self.h,
            phi: dir[1].atan2(dir[0]),
        }
    }
}

/// Simple polygon with counter-clockwise winding (normalized on construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self, GeomError> {
        // Drop a repeated closing vertex.
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeomError::TooFewVertices(vertices.len()));
        }
        if self_intersects(&vertices) {
            return Err(GeomError::SelfIntersecting);
        }
        let area = signed_area(&vertices);
        if area.abs() < 1e-12 {
            return Err(GeomError::DegenerateArea);
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle helper.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]).expect("valid rectangle")
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        bbox(&self.vertices)
    }

    /// Point containment with the boundary counting as inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        const EPS: f64 = 1e-9;
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if point_segment_distance(p, a, b) <= EPS {
                return true;
            }
        }
        // Even-odd ray cast, half-open in y so vertices are counted once.
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > p[1]) != (yj > p[1]) {
                let x_cross = xi + (p[1] - yi) / (yj - yi) * (xj - xi);
                if p[0] < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Apply a planar rigid motion (used when moving map geometry between
    /// world and ego BEV frames).
    pub fn to_frame(&self, from: &RigidPose, to: &RigidPose) -> Polygon {
        let pts: Vec<[f64; 3]> = self.vertices.iter().map(|v| [v[0], v[1], 0.0]).collect();
        let out = transform_points(&pts, from, to);
        Polygon {
            vertices: out.iter().map(|p| [p[0], p[1]]).collect(),
        }
    }
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = GeomError;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

/// Polyline with a raster stroke width. Consecutive duplicate vertices are
/// collapsed on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolylineRaw", into = "PolylineRaw")]
pub struct Polyline {
    vertices: Vec<[f64; 2]>,
    width: f64,
}

#[derive(Serialize, Deserialize)]
struct PolylineRaw {
    vertices: Vec<[f64; 2]>,
    width: f64,
}

impl Polyline {
    pub fn new(vertices: Vec<[f64; 2]>, width: f64) -> Result<Self, GeomError> {
        if !(width > 0.0) {
            return Err(GeomError::NonPositiveWidth(width));
        }
        let mut dedup: Vec<[f64; 2]> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if dedup.last() != Some(&v) {
                dedup.push(v);
            }
        }
        if dedup.len() < 2 {
            return Err(GeomError::TooShortPolyline(dedup.len()));
        }
        Ok(Self { vertices: dedup, width })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        bbox(&self.vertices)
    }

    /// Distance from a point to the nearest segment.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.vertices
            .windows(2)
            .map(|s| point_segment_distance(p, s[0], s[1]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_frame(&self, from: &RigidPose, to: &RigidPose) -> Polyline {
        let pts: Vec<[f64; 3]> = self.vertices.iter().map(|v| [v[0], v[1], 0.0]).collect();
        let out = transform_points(&pts, from, to);
        Polyline {
            vertices: out.iter().map(|p| [p[0], p[1]]).collect(),
            width: self.width,
        }
    }
}

impl TryFrom<PolylineRaw> for Polyline {
    type Error = GeomError;
    fn try_from(r: PolylineRaw) -> Result<Self, Self::Error> {
        Polyline::new(r.vertices, r.width)
    }
}

impl From<Polyline> for PolylineRaw {
    fn from(p: Polyline) -> Self {
        PolylineRaw { vertices: p.vertices, width: p.width }
    }
}

pub(crate) fn signed_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = vertices[i];
        let [x1, y1] = vertices[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn bbox(vertices: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY, f64::INFINITY];
    let mut hi = [f64::NEG_INFINITY, f64::NEG_INFINITY];
    for v in vertices {
        lo[0] = lo[0].min(v[0]);
        lo[1] = lo[1].min(v[1]);
        hi[0] = hi[0].max(v[0]);
        hi[1] = hi[1].max(v[1]);
    }
    (lo, hi)
}

/// Euclidean distance from a point to a segment.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return (ap[0] * ap[0] + ap[1] * ap[1]).sqrt();
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    let dx = ap[0] - t * ab[0];
    let dy = ap[1] - t * ab[1];
    (dx * dx + dy * dy).sqrt()
}

fn self_intersects(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    for i in 0..n {
        let (a1, a2) = (v[i], v[(i + 1) % n]);
        for j in (i + 1)..n {
            // Skip adjacent edges (they share a vertex).
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (b1, b2) = (v[j], v[(j + 1) % n]);
            if segments_properly_intersect(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

fn segments_properly_intersect(a1: [f64; 2], a2: [f64; 2], b1: [f64; 2], b2: [f64; 2]) -> bool {
    let d = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let d1 = d(b1, b2, a1);
    let d2 = d(b1, b2, a2);
    let d3 = d(a1, a2, b1);
    let d4 = d(a1, a2, b2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}
