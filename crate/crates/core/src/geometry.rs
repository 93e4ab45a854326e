//! Poses, the fixed workspace, and segment distances.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Half-extent of the table along x, meters.
pub const TABLE_HALF_X: f64 = 0.8;
/// Half-extent of the table along y, meters.
pub const TABLE_HALF_Y: f64 = 0.5;
/// Edge of the uniform box objects, meters.
pub const OBJECT_EDGE: f64 = 0.06;
pub const DEPOT_Y: f64 = 0.7;
pub const DEPOT_HEIGHT: f64 = 0.3;

const TABLE_TOL: f64 = 1e-9;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    if r >= PI {
        r -= 2.0 * PI;
    }
    if r < -PI {
        r = -PI;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "pos")]
    pub position: [f64; 3],
    /// Roll, pitch, yaw in radians.
    #[serde(rename = "rpy")]
    pub orientation: [f64; 3],
}

impl Pose {
    pub fn new(position: [f64; 3], orientation: [f64; 3]) -> Self {
        Self { position, orientation: orientation.map(wrap_angle) }
    }

    /// A pose resting on the table with the given yaw.
    pub fn on_table(x: f64, y: f64, yaw: f64) -> Self {
        Self::new([x, y, 0.0], [0.0, 0.0, yaw])
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(&self.orientation).all(|v| v.is_finite())
    }

    pub fn is_on_table(&self) -> bool {
        let [x, y, z] = self.position;
        x.abs() <= TABLE_HALF_X + TABLE_TOL && y.abs() <= TABLE_HALF_Y + TABLE_TOL && z.abs() <= TABLE_TOL
    }

    pub fn translated(&self, by: [f64; 3]) -> Self {
        let p = self.position;
        Self { position: [p[0] + by[0], p[1] + by[1], p[2] + by[2]], orientation: self.orientation }
    }
}

/// Default end-effector pose of an arm's depot; arm 0 sits at negative y.
pub fn depot_pose(arm: usize) -> Pose {
    let y = if arm == 0 { -DEPOT_Y } else { DEPOT_Y };
    Pose::new([0.0, y, DEPOT_HEIGHT], [0.0, 0.0, 0.0])
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

/// Largest absolute per-axis wrapped difference between two orientations.
pub fn angular_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| wrap_angle(b[i] - a[i]).abs()).fold(0.0, f64::max)
}

/// Closest approach of two points moving linearly from `p0` to `p1` and from
/// `q0` to `q1` over the same interval.
pub fn synchronized_clearance(p0: [f64; 3], p1: [f64; 3], q0: [f64; 3], q1: [f64; 3]) -> f64 {
    let r = sub(p0, q0);
    let d = sub(sub(p1, p0), sub(q1, q0));
    let dd = dot(d, d);
    let s = if dd > 1e-15 { (-dot(r, d) / dd).clamp(0.0, 1.0) } else { 0.0 };
    let gap = [r[0] + s * d[0], r[1] + s * d[1], r[2] + s * d[2]];
    dot(gap, gap).sqrt()
}

/// Minimum distance between segments `p0-p1` and `q0-q1`.
pub fn segment_distance(p0: [f64; 3], p1: [f64; 3], q0: [f64; 3], q1: [f64; 3]) -> f64 {
    const EPS: f64 = 1e-15;
    let d1 = sub(p1, p0);
    let d2 = sub(q1, q0);
    let r = sub(p0, q0);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);
    let (s, t);
    if a <= EPS && e <= EPS {
        return distance(p0, q0);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(d1, r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(d1, d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let cp = [p0[0] + d1[0] * s, p0[1] + d1[1] * s, p0[2] + d1[2] * s];
    let cq = [q0[0] + d2[0] * t, q0[1] + d2[1] * t, q0[2] + d2[2] * t];
    distance(cp, cq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        for k in -50..50 {
            let w = wrap_angle(k as f64 * 0.37);
            assert!((-PI..PI).contains(&w));
        }
    }

    #[test]
    fn crossing_segments_touch() {
        let d = segment_distance([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn parallel_segments() {
        let d = segment_distance([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.3, 0.0], [2.0, 0.3, 0.0]);
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn degenerate_point_segment() {
        let d = segment_distance([0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_paths_can_pass_at_different_times() {
        // Same crossing as above, but arm q reaches the centre only at the end.
        let d = synchronized_clearance([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 0.0]);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
        let head_on = synchronized_clearance([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(head_on, 0.0);
    }

    #[test]
    fn depots_face_each_other() {
        assert_eq!(depot_pose(0).position, [0.0, -0.7, 0.3]);
        assert_eq!(depot_pose(1).position, [0.0, 0.7, 0.3]);
    }
}
