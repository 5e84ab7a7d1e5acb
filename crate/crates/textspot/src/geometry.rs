//! Polygonal region arithmetic: areas, convex intersection, IoU and
//! scale-space coordinate mapping for multi-scale detection inputs.
//!
//! Polygons are validated once at construction (simple, at least three
//! vertices, strictly positive area) and normalized to counter-clockwise
//! orientation, so the shoelace area is always positive and downstream
//! code never has to reason about winding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cross products within this relative tolerance of zero are treated as
/// collinear during convexity testing; annotation files carry limited
/// decimal precision.
pub const COLLINEAR_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has a non-finite coordinate")]
    NonFiniteCoordinate,
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("polygon edges self-intersect")]
    SelfIntersecting,
    #[error("non-convex polygon (convex-hull fallback disabled)")]
    NonConvexInput,
    #[error("scale must be positive, got {0}")]
    InvalidScale(f64),
}

/// A 2D point in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Cross product of (b - a) x (c - a).
fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// A simple polygon with at least three vertices, stored counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Validates and normalizes a vertex list into a polygon.
    ///
    /// Rejects polygons with fewer than three vertices, non-finite
    /// coordinates, zero area, or properly self-intersecting edges.
    /// Clockwise input is reversed to counter-clockwise.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::NonFiniteCoordinate);
        }
        let signed = signed_area(&vertices);
        if signed.abs() <= 1e-12 {
            return Err(GeometryError::ZeroArea);
        }
        if signed < 0.0 {
            vertices.reverse();
        }
        if self_intersects(&vertices) {
            return Err(GeometryError::SelfIntersecting);
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle helper: corners (x0, y0) and (x1, y1).
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Shoelace area; strictly positive for a valid polygon.
    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Convexity test with the [`COLLINEAR_EPS`] collinearity tolerance.
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            let turn = cross(a, b, c);
            let e1 = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
            let e2 = ((c.x - b.x).powi(2) + (c.y - b.y).powi(2)).sqrt();
            // CCW polygon: every turn must be left or collinear.
            if turn < -COLLINEAR_EPS * e1 * e2 {
                return false;
            }
        }
        true
    }

    /// Convex hull of the vertex set (monotone chain).
    pub fn convex_hull(&self) -> Result<Polygon, GeometryError> {
        let hull = convex_hull_points(&self.vertices);
        Polygon::new(hull)
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for p in &self.vertices[1..] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        (min, max)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }
}

fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let mut sum = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        sum += a.x * b.y - b.x * a.y;
    }
    sum / 2.0
}

/// Proper crossing test between non-adjacent edges.
fn self_intersects(vertices: &[Point]) -> bool {
    let n = vertices.len();
    for i in 0..n {
        let (a1, a2) = (vertices[i], vertices[(i + 1) % n]);
        for j in (i + 1)..n {
            // skip adjacent edges (they share an endpoint)
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (b1, b2) = (vertices[j], vertices[(j + 1) % n]);
            let d1 = cross(b1, b2, a1);
            let d2 = cross(b1, b2, a2);
            let d3 = cross(a1, a2, b1);
            let d4 = cross(a1, a2, b2);
            if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
                && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
            {
                return true;
            }
        }
    }
    false
}

fn convex_hull_points(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Shoelace area of a polygon, in square pixels.
pub fn polygon_area(p: &Polygon) -> f64 {
    p.area()
}

/// Area of the intersection of two convex polygons via iterative
/// half-plane clipping. Errors with [`GeometryError::NonConvexInput`]
/// when either input fails the convexity test.
pub fn intersection_area(a: &Polygon, b: &Polygon) -> Result<f64, GeometryError> {
    if !a.is_convex() || !b.is_convex() {
        return Err(GeometryError::NonConvexInput);
    }
    Ok(convex_intersection_area(a, b))
}

fn convex_intersection_area(a: &Polygon, b: &Polygon) -> f64 {
    let clipped = clip_convex(a.vertices(), b.vertices());
    if clipped.len() < 3 {
        return 0.0;
    }
    let area = signed_area(&clipped).abs();
    area.min(a.area().min(b.area())).max(0.0)
}

/// Sutherland-Hodgman: clip `subject` against every half-plane of the
/// counter-clockwise convex polygon `clip`.
fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let c1 = clip[i];
        let c2 = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let next = input[(j + 1) % m];
            let cur_in = cross(c1, c2, cur) >= 0.0;
            let next_in = cross(c1, c2, next) >= 0.0;
            if cur_in {
                output.push(cur);
            }
            if cur_in != next_in {
                if let Some(p) = line_intersection(c1, c2, cur, next) {
                    output.push(p);
                }
            }
        }
    }
    output
}

fn line_intersection(a1: Point, a2: Point, b1: Point, b2: Point) -> Option<Point> {
    let da = Point::new(a2.x - a1.x, a2.y - a1.y);
    let db = Point::new(b2.x - b1.x, b2.y - b1.y);
    let denom = da.x * db.y - da.y * db.x;
    if denom == 0.0 {
        return None;
    }
    let t = ((b1.x - a1.x) * db.y - (b1.y - a1.y) * db.x) / denom;
    Some(Point::new(a1.x + t * da.x, a1.y + t * da.y))
}

/// Intersection over union of two convex polygons, in [0, 1].
pub fn iou(a: &Polygon, b: &Polygon) -> Result<f64, GeometryError> {
    if !a.is_convex() || !b.is_convex() {
        return Err(GeometryError::NonConvexInput);
    }
    Ok(iou_unchecked(a, b))
}

fn iou_unchecked(a: &Polygon, b: &Polygon) -> f64 {
    let inter = convex_intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Polygon IoU that replaces non-convex inputs by their convex hull
/// (with a logged warning) instead of erroring.
pub fn iou_hull_fallback(a: &Polygon, b: &Polygon) -> f64 {
    let a = hulled(a);
    let b = hulled(b);
    iou_unchecked(&a, &b)
}

fn hulled(p: &Polygon) -> std::borrow::Cow<'_, Polygon> {
    if p.is_convex() {
        std::borrow::Cow::Borrowed(p)
    } else {
        log::warn!("non-convex polygon replaced by its convex hull");
        // hull of a valid polygon always has >= 3 vertices and positive area
        std::borrow::Cow::Owned(p.convex_hull().expect("hull of valid polygon"))
    }
}

/// IoU of the axis-aligned bounding rectangles; comparison option for
/// the suppression stage.
pub fn axis_aligned_iou(a: &Polygon, b: &Polygon) -> f64 {
    let (amin, amax) = a.bounding_box();
    let (bmin, bmax) = b.bounding_box();
    let w = (amax.x.min(bmax.x) - amin.x.max(bmin.x)).max(0.0);
    let h = (amax.y.min(bmax.y) - amin.y.max(bmin.y)).max(0.0);
    let inter = w * h;
    let area_a = (amax.x - amin.x) * (amax.y - amin.y);
    let area_b = (bmax.x - bmin.x) * (bmax.y - bmin.y);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Maps a polygon from one inference scale to another. A scale names the
/// longer side of the resized image in pixels, so every vertex is
/// multiplied by `to_scale / from_scale`.
pub fn rescale_polygon(
    p: &Polygon,
    from_scale: f64,
    to_scale: f64,
) -> Result<Polygon, GeometryError> {
    for scale in [from_scale, to_scale] {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(GeometryError::InvalidScale(scale));
        }
    }
    let r = to_scale / from_scale;
    Ok(Polygon {
        vertices: p
            .vertices
            .iter()
            .map(|v| Point::new(v.x * r, v.y * r))
            .collect(),
    })
}
