//! Oriented 3D boxes and their intersection-over-union.
//!
//! The ground plane is `(x, z)`; `y` is vertical. A box's footprint is a
//! rectangle of length `l` along the heading direction `(cos θ, sin θ)` and
//! width `w` across it; it spans `y ± h/2` vertically.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox3D {
    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.l > 0.0
            && self.w > 0.0
            && self.h > 0.0
            && [self.x, self.y, self.z, self.theta].iter().all(|v| v.is_finite())
    }

    /// Footprint corners in counter-clockwise order in the `(x, z)` plane.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let corner = |a: f64, b: f64| [self.x + a * c - b * s, self.z + a * s + b * c];
        [corner(hl, hw), corner(-hl, hw), corner(-hl, -hw), corner(hl, -hw)]
    }

    /// Whether a point lies inside the box (boundary inclusive).
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (dx, dz) = (p[0] - self.x, p[2] - self.z);
        let (s, c) = self.theta.sin_cos();
        let along = dx * c + dz * s;
        let across = -dx * s + dz * c;
        along.abs() <= self.l / 2.0 && across.abs() <= self.w / 2.0 && (p[1] - self.y).abs() <= self.h / 2.0
    }

    pub fn center_distance(&self, other: &OrientedBox3D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        twice += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * twice
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let (dp, dq) = (cross(a, b, p), cross(a, b, q));
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman: clips `subject` against the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        let inside = |p: [f64; 2]| cross(a, b, p) >= 0.0;
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(line_intersection(prev, cur, a, b)),
                (false, true) => {
                    output.push(line_intersection(prev, cur, a, b));
                    output.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    output
}

/// Bird's-eye-view footprint overlap area.
pub fn bev_intersection(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    polygon_area(&clip_convex(&a.footprint(), &b.footprint())).max(0.0)
}

/// Volumetric IoU of two oriented boxes, in `[0, 1]`.
pub fn iou3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let y_overlap = ((a.y + a.h / 2.0).min(b.y + b.h / 2.0) - (a.y - a.h / 2.0).max(b.y - b.h / 2.0)).max(0.0);
    if y_overlap <= 0.0 {
        return 0.0;
    }
    let area = bev_intersection(a, b);
    if area <= 0.0 {
        return 0.0;
    }
    let inter = area * y_overlap;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
