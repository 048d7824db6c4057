//! Bifurcation geometry: curvature radii, minimum branching angle, sigmoid
//! tapering, carinal rounding and the daughter bend sweep.
//!
//! Bifurcation-local coordinates ("junction frame"): origin at the centre of
//! the parent's distal ring, `x` toward daughter `a` in the bifurcation plane,
//! `y` normal to the bifurcation plane, `z` along the parent axis. The 2-D
//! bifurcation-plane coordinates used by the carina model are `(x, z)`.

use serde::{Deserialize, Serialize};

use super::AirwaySegment;
use crate::error::AirwayError;
use crate::math::{self, Frame, Vec3};

/// Curvature radius of a daughter at a branching angle: `d / (2 sin phi)`.
pub fn curvature_radius(d: f64, phi_deg: f64) -> Result<f64, AirwayError> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(AirwayError::Domain(alloc::format!("diameter must be positive, got {d}")));
    }
    if !(phi_deg > 0.0) || phi_deg > 180.0 {
        return Err(AirwayError::Domain(alloc::format!(
            "branching angle must lie in (0, 180] degrees, got {phi_deg}"
        )));
    }
    let s = math::sin(math::rad(phi_deg));
    if s < 1e-9 {
        return Err(AirwayError::Domain(alloc::format!(
            "sin({phi_deg} deg) too small for a finite curvature radius"
        )));
    }
    Ok(d / (2.0 * s))
}

/// Axis clearance between the distal halves of two daughter axes that leave
/// a common branch point at `+phi` and `-phi` from the parent axis.
pub fn distal_half_clearance(phi_rad: f64, lengths: (f64, f64)) -> f64 {
    let (la, lb) = lengths;
    let ua = Vec3::new(math::sin(phi_rad), 0.0, math::cos(phi_rad));
    let ub = Vec3::new(-math::sin(phi_rad), 0.0, math::cos(phi_rad));
    math::segment_distance(ua * (0.5 * la), ua * la, ub * (0.5 * lb), ub * lb)
}

/// Smallest branching angle (degrees) at which two daughters of diameters
/// `d_a`, `d_b`, placed symmetrically at `±phi` about the parent axis, keep
/// an axis-to-axis clearance of `(d_a + d_b) / 2` over the distal halves of
/// their lengths. The clearance grows monotonically with `phi`, so the
/// threshold is found by bisection. Saturates at 90°.
pub fn min_branching_angle(parent: &AirwaySegment, d_a: f64, d_b: f64, lengths: (f64, f64)) -> f64 {
    debug_assert!(parent.diameter > 0.0);
    let required = 0.5 * (d_a.max(0.0) + d_b.max(0.0));
    if required <= 0.0 {
        return 0.0;
    }
    let half_pi = 0.5 * math::PI;
    if distal_half_clearance(half_pi, lengths) < required {
        return 90.0;
    }
    let (mut lo, mut hi) = (0.0, half_pi);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if distal_half_clearance(mid, lengths) >= required {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    math::deg(hi)
}

/// Logistic transition used for bifurcation tapering.
///
/// `f(0) = start_ratio` (the ring radius that matches the parent, relative to
/// the daughter radius) and `f(1) = 1`; in between the value follows a
/// logistic curve rescaled so both endpoints are hit exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidTaper {
    pub steepness: f64,
    pub midpoint: f64,
    pub start_ratio: f64,
}

impl SigmoidTaper {
    pub fn new(steepness: f64, midpoint: f64, start_ratio: f64) -> Self {
        SigmoidTaper {
            steepness,
            midpoint,
            start_ratio,
        }
    }

    fn logistic(&self, u: f64) -> f64 {
        1.0 / (1.0 + math::exp(-self.steepness * (u - self.midpoint)))
    }

    /// Rescaled logistic in [0, 1]: 0 at `u = 0`, 1 at `u = 1`.
    pub fn progress(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let lo = self.logistic(0.0);
        let hi = self.logistic(1.0);
        ((self.logistic(u) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// The transition function `f`.
    pub fn f(&self, u: f64) -> f64 {
        let g = self.progress(u);
        self.start_ratio + (1.0 - self.start_ratio) * g
    }
}

/// Ring radius at normalized sagittal position `phi_s` in [0,1]: `d · f(phi_s)`.
pub fn taper_radius(taper: &SigmoidTaper, d: f64, phi_s_normalized: f64) -> f64 {
    if phi_s_normalized <= 0.0 {
        return d * taper.start_ratio;
    }
    if phi_s_normalized >= 1.0 {
        return d;
    }
    d * taper.f(phi_s_normalized)
}

/// Which daughter of a bifurcation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    /// +1 for `a` (bends toward +x), -1 for `b`.
    pub fn sign(self) -> f64 {
        match self {
            Side::A => 1.0,
            Side::B => -1.0,
        }
    }
}

/// Swept bend of one daughter through the bifurcation region.
///
/// The daughter centreline leaves the parent's distal ring centre along the
/// parent axis and turns by `phi` about an axis parallel to `y`, placed so
/// that the lateral wall at the junction has curvature radius `r_star`. The
/// centreline radius is therefore `r_star + parent_radius`. Ring radii taper
/// from `parent_radius` to `radius` over the first `taper_length` mm of
/// centreline, which both daughters of a bifurcation share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaughterBend {
    pub side: Side,
    pub phi: f64,
    pub r_star: f64,
    pub parent_radius: f64,
    pub radius: f64,
    pub taper: SigmoidTaper,
    pub taper_length: f64,
}

impl DaughterBend {
    pub fn new(
        side: Side,
        phi_deg: f64,
        r_star: f64,
        parent_radius: f64,
        radius: f64,
        taper: SigmoidTaper,
        taper_length: f64,
    ) -> Self {
        DaughterBend {
            side,
            phi: math::rad(phi_deg),
            r_star,
            parent_radius,
            radius,
            taper,
            taper_length,
        }
    }

    pub fn bend_radius(&self) -> f64 {
        self.r_star + self.parent_radius
    }

    pub fn arc_length(&self) -> f64 {
        self.bend_radius() * self.phi
    }

    /// Centreline point at sweep angle `a` (radians), junction coordinates.
    pub fn center(&self, a: f64) -> Vec3 {
        let r = self.bend_radius();
        let s = self.side.sign();
        Vec3::new(s * r * (1.0 - math::cos(a)), 0.0, r * math::sin(a))
    }

    pub fn tangent(&self, a: f64) -> Vec3 {
        Vec3::new(self.side.sign() * math::sin(a), 0.0, math::cos(a))
    }

    /// Ring reference direction (angle 0), pointing toward the bend axis.
    pub fn ring_lateral(&self, a: f64) -> Vec3 {
        Vec3::new(self.side.sign() * math::cos(a), 0.0, -math::sin(a))
    }

    pub fn ring_normal(&self) -> Vec3 {
        Vec3::new(0.0, self.side.sign(), 0.0)
    }

    /// Ring radius at centreline arc length `tau` from the junction.
    pub fn ring_radius(&self, tau: f64) -> f64 {
        if !(self.taper_length > 0.0) || tau >= self.taper_length {
            return self.radius;
        }
        taper_radius(&self.taper, self.radius, tau / self.taper_length)
    }

    /// Wall point at arc length `tau` along the centreline (bend, then the
    /// straight part) and ring angle `theta`, junction coordinates.
    pub fn wall_point(&self, tau: f64, theta: f64) -> Vec3 {
        let arc = self.arc_length();
        let r = self.ring_radius(tau);
        if tau <= arc {
            let a = if arc > 0.0 { tau / self.bend_radius() } else { 0.0 };
            self.center(a) + (self.ring_lateral(a) * math::cos(theta) + self.ring_normal() * math::sin(theta)) * r
        } else {
            let e = self.end_frame_local();
            e.origin + e.axis * (tau - arc) + (e.lateral * math::cos(theta) + e.normal * math::sin(theta)) * r
        }
    }

    /// How far a wall point lies inside this daughter's half of the junction
    /// (`x ≥ 0` for `a`, `x ≤ 0` for `b`).
    pub fn side_offset(&self, tau: f64, theta: f64) -> f64 {
        self.side.sign() * self.wall_point(tau, theta).x
    }

    /// Smallest arc length at which the wall line at `theta` enters this
    /// daughter's half of the junction. Infinite if it never does within
    /// `max_tau`.
    pub fn clip(&self, theta: f64, max_tau: f64) -> f64 {
        if self.side_offset(0.0, theta) >= 0.0 {
            return 0.0;
        }
        const STEPS: usize = 256;
        let mut prev = 0.0;
        for s in 1..=STEPS {
            let tau = max_tau * s as f64 / STEPS as f64;
            if self.side_offset(tau, theta) >= 0.0 {
                let (mut lo, mut hi) = (prev, tau);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.side_offset(mid, theta) >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return hi;
            }
            prev = tau;
        }
        f64::INFINITY
    }

    /// Local frame of the straight part that follows the bend.
    pub fn end_frame_local(&self) -> Frame {
        Frame {
            origin: self.center(self.phi),
            lateral: self.ring_lateral(self.phi),
            normal: self.ring_normal(),
            axis: self.tangent(self.phi),
        }
    }
}

/// The medial wall of a daughter must enter its own half of the junction
/// within this fraction of the daughter's straight length.
pub const MAX_CLIP_FRACTION: f64 = 0.6;

/// Arc length over which both daughters taper: the longer bend, but never
/// beyond a quarter of either daughter's straight length past its bend.
pub fn shared_taper_length(arcs: (f64, f64), lengths: (f64, f64)) -> f64 {
    arcs.0
        .max(arcs.1)
        .min(arcs.0 + 0.25 * lengths.0)
        .min(arcs.1 + 0.25 * lengths.1)
}

/// Maps a junction-local frame into world coordinates.
pub fn frame_to_world(junction: &Frame, local: &Frame) -> Frame {
    Frame {
        origin: junction.to_world(local.origin),
        lateral: junction.dir_to_world(local.lateral),
        normal: junction.dir_to_world(local.normal),
        axis: junction.dir_to_world(local.axis),
    }
}

/// 2-D carina model in the bifurcation plane `(x, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarinaModel {
    /// Intersection of the two medial wall lines.
    pub apex: [f64; 2],
    pub wall_dir_a: [f64; 2],
    pub wall_dir_b: [f64; 2],
    pub wall_len_a: f64,
    pub wall_len_b: f64,
    /// Rounding circle centre `K`.
    pub center: [f64; 2],
    /// `R_c`: minimum distance from `K` to the carina boundary.
    pub radius: f64,
}

fn v2(p: Vec3) -> [f64; 2] {
    [p.x, p.z]
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm2(a: [f64; 2]) -> f64 {
    math::sqrt(dot2(a, a))
}

/// Distance from `p` to the segment `origin + t·dir`, `t ∈ [0, len]`.
pub fn point_ray_distance(p: [f64; 2], origin: [f64; 2], dir: [f64; 2], len: f64) -> f64 {
    let d = sub2(p, origin);
    let t = dot2(d, dir).clamp(0.0, len);
    norm2(sub2(d, [dir[0] * t, dir[1] * t]))
}

impl CarinaModel {
    /// Builds the carina from the two daughter bends. The boundary is formed
    /// by the medial walls of the daughters' straight parts (lengths
    /// `lengths`), extended back to where they meet. `K` sits on the wedge
    /// bisector, offset so the inscribed circle has radius
    /// `rounding_fraction · min(r_a, r_b)`.
    pub fn new(a: &DaughterBend, b: &DaughterBend, lengths: (f64, f64), rounding_fraction: f64) -> Self {
        let ea = a.end_frame_local();
        let eb = b.end_frame_local();
        let ma = v2(ea.origin - ea.lateral * a.radius);
        let mb = v2(eb.origin - eb.lateral * b.radius);
        let ua = v2(ea.axis);
        let ub = v2(eb.axis);

        // ma + s·ua = mb + t·ub
        let det = ua[0] * (-ub[1]) - ua[1] * (-ub[0]);
        let rhs = sub2(mb, ma);
        let apex = if math::abs(det) > 1e-12 {
            let s = (rhs[0] * (-ub[1]) - rhs[1] * (-ub[0])) / det;
            [ma[0] + s * ua[0], ma[1] + s * ua[1]]
        } else {
            [0.5 * (ma[0] + mb[0]), 0.5 * (ma[1] + mb[1])]
        };
        let ext_a = norm2(sub2(ma, apex));
        let ext_b = norm2(sub2(mb, apex));
        let wall_len_a = ext_a + lengths.0;
        let wall_len_b = ext_b + lengths.1;

        let mut bis = [ua[0] + ub[0], ua[1] + ub[1]];
        let bn = norm2(bis);
        if bn < 1e-9 {
            bis = [0.0, 1.0];
        } else {
            bis = [bis[0] / bn, bis[1] / bn];
        }
        let alpha = a.phi + b.phi;
        let half = (0.5 * alpha).min(0.5 * math::PI);
        let inscribed = rounding_fraction * a.radius.min(b.radius);
        let q = inscribed / math::sin(half);
        let center = [apex[0] + bis[0] * q, apex[1] + bis[1] * q];
        let radius = point_ray_distance(center, apex, ua, wall_len_a).min(point_ray_distance(center, apex, ub, wall_len_b));
        CarinaModel {
            apex,
            wall_dir_a: ua,
            wall_dir_b: ub,
            wall_len_a,
            wall_len_b,
            center,
            radius,
        }
    }

    /// How far the rounding pushes the carina tip distally along the parent
    /// axis (never negative).
    pub fn tip_lift(&self) -> f64 {
        let d = sub2(self.center, self.apex);
        let q = norm2(d);
        if q <= 0.0 {
            return 0.0;
        }
        ((q - self.radius) * d[1] / q).max(0.0)
    }
}

/// Rounding circle at one sagittal station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingCircle {
    pub center: [f64; 2],
    pub radius: f64,
    /// Tilt of the circle's plane from the parent axis, degrees.
    pub tilt: f64,
}

/// Rounding circle at signed sagittal angle `sagittal_deg`, which runs from
/// `-phi_b` (daughter b's wall) to `+phi_a` (daughter a's wall). The tilt
/// varies linearly between `tilt_b` and `tilt_a`; the centre moves
/// continuously between the circle tangent to wall b and the one tangent to
/// wall a.
pub fn carinal_rounding(bif: &super::BifurcationGeometry, sagittal_deg: f64) -> Result<RoundingCircle, AirwayError> {
    let lo = -bif.sagittal_range_b[1];
    let hi = bif.sagittal_range_a[1];
    if !(sagittal_deg >= lo - 1e-12 && sagittal_deg <= hi + 1e-12) {
        return Err(AirwayError::Domain(alloc::format!(
            "sagittal angle {sagittal_deg} outside [{lo}, {hi}]"
        )));
    }
    let span = hi - lo;
    let s = if span > 0.0 { ((sagittal_deg - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
    let c = &bif.carina;
    let k = c.center;
    let r = bif.r_c;
    let tangent_center = |dir: [f64; 2], len: f64| -> [f64; 2] {
        let d = sub2(k, c.apex);
        let t = dot2(d, dir).clamp(0.0, len);
        let foot = [c.apex[0] + dir[0] * t, c.apex[1] + dir[1] * t];
        let off = sub2(k, foot);
        let n = norm2(off);
        if n <= 0.0 {
            return k;
        }
        [foot[0] + off[0] / n * r, foot[1] + off[1] / n * r]
    };
    let cb = tangent_center(c.wall_dir_b, c.wall_len_b);
    let ca = tangent_center(c.wall_dir_a, c.wall_len_a);
    Ok(RoundingCircle {
        center: [cb[0] + (ca[0] - cb[0]) * s, cb[1] + (ca[1] - cb[1]) * s],
        radius: r,
        tilt: bif.tilt_b + (bif.tilt_a - bif.tilt_b) * s,
    })
}
