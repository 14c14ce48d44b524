//! Planar convex-polygon helpers for support polygons.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Counter-clockwise convex hull (monotone chain). Collinear points are dropped.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if (b - a).cross(p - a) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..poly.len() {
        a += poly[i].cross(poly[(i + 1) % poly.len()]);
    }
    a.abs() / 2.0
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, Vec2) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = a + ab * t;
    ((p - q).norm(), q)
}

/// Signed distance from `p` to the boundary of a CCW convex polygon:
/// positive inside, negative outside. Degenerate polygons count as outside.
pub fn signed_distance(poly: &[Vec2], p: Vec2) -> f64 {
    if poly.is_empty() {
        return f64::NEG_INFINITY;
    }
    let n = poly.len();
    let mut dist = f64::INFINITY;
    let mut inside = n >= 3;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        dist = dist.min(segment_distance(p, a, b).0);
        if (b - a).cross(p - a) < 0.0 {
            inside = false;
        }
    }
    if inside && polygon_area(poly) > 0.0 {
        dist
    } else {
        -dist
    }
}

/// Keeps the part of a CCW convex polygon on the left of the directed line `a → b`,
/// shifted inward by `offset`.
fn clip_half_plane(poly: &[Vec2], a: Vec2, b: Vec2, offset: f64) -> Vec<Vec2> {
    let dir = b - a;
    let len = dir.norm();
    if len == 0.0 {
        return poly.to_vec();
    }
    let side = |p: Vec2| dir.cross(p - a) / len - offset;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let (sp, sq) = (side(p), side(q));
        if sp >= 0.0 {
            out.push(p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            out.push(p + (q - p) * t);
        }
    }
    out
}

/// Inward offset of a CCW convex polygon by `margin`; empty when nothing remains.
pub fn erode(poly: &[Vec2], margin: f64) -> Vec<Vec2> {
    if poly.len() < 3 {
        return Vec::new();
    }
    let mut out = poly.to_vec();
    for i in 0..poly.len() {
        out = clip_half_plane(&out, poly[i], poly[(i + 1) % poly.len()], margin);
        if out.len() < 3 {
            return Vec::new();
        }
    }
    if polygon_area(&out) <= 1e-14 {
        return Vec::new();
    }
    out
}

/// Closest point of a convex polygon (`p` itself when inside).
pub fn project_onto(poly: &[Vec2], p: Vec2) -> Option<Vec2> {
    if poly.is_empty() {
        return None;
    }
    if signed_distance(poly, p) >= 0.0 {
        return Some(p);
    }
    let n = poly.len();
    (0..n)
        .map(|i| segment_distance(p, poly[i], poly[(i + 1) % n]))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, q)| q)
}
