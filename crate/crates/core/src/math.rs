//! Small fixed-size vector and rigid-transform types.
//!
//! Everything here goes through `libm` so results are identical across
//! targets with or without `std`.

use core::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};
use serde::{Deserialize, Serialize};

pub use core::f64::consts::PI;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub fn tan(x: f64) -> f64 {
    libm::tan(x)
}
#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}
#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x.clamp(-1.0, 1.0))
}
#[inline]
pub fn asin(x: f64) -> f64 {
    libm::asin(x.clamp(-1.0, 1.0))
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn deg(rad: f64) -> f64 {
    rad * 180.0 / PI
}
#[inline]
pub fn rad(deg: f64) -> f64 {
    deg * PI / 180.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }
    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }
    #[inline]
    pub fn norm(self) -> f64 {
        sqrt(self.norm_sq())
    }
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }
    #[inline]
    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }
    #[inline]
    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }
    #[inline]
    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }
    #[inline]
    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
    /// Any unit vector perpendicular to `self` (assumed unit length).
    pub fn any_perpendicular(self) -> Vec3 {
        let helper = if abs(self.x) < 0.9 { Vec3::X } else { Vec3::Y };
        self.cross(helper).normalized()
    }
    /// Rotates `self` about the unit `axis` by `angle` radians (Rodrigues).
    pub fn rotated_about(self, axis: Vec3, angle: f64) -> Vec3 {
        let (s, c) = (sin(angle), cos(angle));
        self * c + axis.cross(self) * s + axis * (axis.dot(self) * (1.0 - c))
    }
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            _ => &self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}
impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}
impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}
impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}
impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}
impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}
impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rigid transform: a position and an orthonormal, right-handed basis.
///
/// `axis` is the local forward direction (segment axis, camera optical axis),
/// `lateral` and `normal` complete the frame so that `lateral × normal = axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Vec3,
    pub lateral: Vec3,
    pub normal: Vec3,
    pub axis: Vec3,
}

impl Frame {
    pub fn identity() -> Self {
        Frame {
            origin: Vec3::ZERO,
            lateral: Vec3::X,
            normal: Vec3::Y,
            axis: Vec3::Z,
        }
    }

    /// Frame with the given axis; `lateral_hint` is orthogonalised against it.
    pub fn from_axis(origin: Vec3, axis: Vec3, lateral_hint: Vec3) -> Self {
        let axis = axis.normalized();
        let mut lateral = lateral_hint - axis * lateral_hint.dot(axis);
        if lateral.norm_sq() < 1e-20 {
            lateral = axis.any_perpendicular();
        }
        let lateral = lateral.normalized();
        let normal = axis.cross(lateral);
        Frame {
            origin,
            lateral,
            normal,
            axis,
        }
    }

    #[inline]
    pub fn to_world(&self, local: Vec3) -> Vec3 {
        self.origin + self.lateral * local.x + self.normal * local.y + self.axis * local.z
    }

    #[inline]
    pub fn dir_to_world(&self, local: Vec3) -> Vec3 {
        self.lateral * local.x + self.normal * local.y + self.axis * local.z
    }

    #[inline]
    pub fn to_local(&self, world: Vec3) -> Vec3 {
        let d = world - self.origin;
        Vec3::new(d.dot(self.lateral), d.dot(self.normal), d.dot(self.axis))
    }

    /// Same frame rotated about its own axis by `angle` radians.
    pub fn twisted(&self, angle: f64) -> Frame {
        Frame {
            origin: self.origin,
            lateral: self.lateral.rotated_about(self.axis, angle),
            normal: self.normal.rotated_about(self.axis, angle),
            axis: self.axis,
        }
    }

    /// Row-major 4×4 homogeneous matrix mapping local to world coordinates.
    /// Columns are (lateral, normal, axis, origin).
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let (l, n, a, o) = (self.lateral, self.normal, self.axis, self.origin);
        [
            [l.x, n.x, a.x, o.x],
            [l.y, n.y, a.y, o.y],
            [l.z, n.z, a.z, o.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix(m: &[[f64; 4]; 4]) -> Frame {
        Frame {
            lateral: Vec3::new(m[0][0], m[1][0], m[2][0]),
            normal: Vec3::new(m[0][1], m[1][1], m[2][1]),
            axis: Vec3::new(m[0][2], m[1][2], m[2][2]),
            origin: Vec3::new(m[0][3], m[1][3], m[2][3]),
        }
    }
}

/// Closest distance between segments `p0-p1` and `q0-q1`.
pub fn segment_distance(p0: Vec3, p1: Vec3, q0: Vec3, q1: Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_sq();
    let e = d2.norm_sq();
    let f = d2.dot(r);
    let eps = 1e-300;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-18 * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
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
    let cp = p0 + d1 * s;
    let cq = q0 + d2 * t;
    cp.distance(cq)
}

/// Distance from `p` to segment `a-b`.
pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_sq();
    if l2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / l2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let f = Frame::from_axis(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.3, -0.2, 1.0), Vec3::X);
        let p = Vec3::new(-4.0, 0.5, 7.0);
        let back = f.to_world(f.to_local(p));
        assert!(back.distance(p) < 1e-12);
        assert!((f.lateral.cross(f.normal) - f.axis).norm() < 1e-12);
        let m = f.to_matrix();
        assert_eq!(Frame::from_matrix(&m), f);
    }

    #[test]
    fn segment_distance_cases() {
        let d = segment_distance(
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, 1.0, -1.0),
            Vec3::new(0.5, 1.0, 1.0),
        );
        assert!((d - 1.0).abs() < 1e-12);
        // parallel, offset
        let d = segment_distance(Vec3::ZERO, Vec3::Z, Vec3::new(2.0, 0.0, 0.5), Vec3::new(2.0, 0.0, 3.0));
        assert!((d - 2.0).abs() < 1e-12);
        // disjoint along the line
        let d = segment_distance(Vec3::ZERO, Vec3::Z, Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 4.0));
        assert!((d - 2.0).abs() < 1e-12);
    }
}
