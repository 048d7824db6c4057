//! Camera paths along the centreline of a branch sequence.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RayAccelerator;
use crate::airway::{AirwayTree, DaughterBend, Side};
use crate::error::RenderError;
use crate::math::{self, Frame, Vec3};
use crate::rng;

/// Which branches a fly-through navigates. Routes always start at the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Route {
    /// Explicit segment ids, root first.
    Segments(Vec<u32>),
    /// Daughter choice at each bifurcation, starting below the root.
    Choices(Vec<Side>),
    /// Random walk from the root to a leaf.
    Seeded(u64),
}

/// Resolves a route to its segment ids.
pub fn route_segments(tree: &AirwayTree, route: &Route) -> Result<Vec<u32>, RenderError> {
    if tree.segments.is_empty() {
        return Err(RenderError::Route("tree has no segments".into()));
    }
    match route {
        Route::Segments(ids) => {
            let Some(&first) = ids.first() else {
                return Err(RenderError::Route("empty route".into()));
            };
            if first != 0 {
                return Err(RenderError::Route(format!("route must start at the root, got segment {first}")));
            }
            for w in ids.windows(2) {
                if tree.segment(w[1]).is_none() {
                    return Err(RenderError::Route(format!("segment {} does not exist", w[1])));
                }
                match tree.children(w[0]) {
                    Some((a, b)) if w[1] == a || w[1] == b => {}
                    _ => {
                        return Err(RenderError::Route(format!(
                            "segment {} is not a daughter of segment {}",
                            w[1], w[0]
                        )))
                    }
                }
            }
            Ok(ids.clone())
        }
        Route::Choices(sides) => {
            let mut ids = alloc::vec![0u32];
            for (k, side) in sides.iter().enumerate() {
                let cur = *ids.last().unwrap();
                let Some((a, b)) = tree.children(cur) else {
                    return Err(RenderError::Route(format!(
                        "choice {k} asks for a daughter of leaf segment {cur}"
                    )));
                };
                ids.push(if *side == Side::A { a } else { b });
            }
            Ok(ids)
        }
        Route::Seeded(seed) => {
            let mut r = rng::stream(*seed, rng::STREAM_FLYTHROUGH);
            let mut ids = alloc::vec![0u32];
            while let Some((a, b)) = tree.children(*ids.last().unwrap()) {
                ids.push(if r.random::<bool>() { a } else { b });
            }
            Ok(ids)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum PieceKind {
    Straight { start: Vec3, axis: Vec3, radius: f64 },
    Bend { bend: DaughterBend, junction: Frame },
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    segment: u32,
    s0: f64,
    len: f64,
    kind: PieceKind,
}

/// Arc-length parameterised centreline of a route: for every daughter its
/// bend out of the junction, then its straight part.
#[derive(Debug, Clone)]
pub struct RouteCenterline {
    pieces: Vec<Piece>,
    pub total_length: f64,
    /// Navigable span. The ends are pulled in by the local radius where the
    /// route meets an end cap.
    pub s_start: f64,
    pub s_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Station {
    pub position: Vec3,
    pub tangent: Vec3,
    pub segment: u32,
    pub radius: f64,
}

impl RouteCenterline {
    pub fn new(tree: &AirwayTree, ids: &[u32]) -> RouteCenterline {
        let mut pieces = Vec::new();
        let mut s = 0.0;
        for &id in ids {
            let seg = &tree.segments[id as usize];
            if let (Some(bend), Some(pid)) = (tree.daughter_bend(id), seg.parent_id) {
                let junction = tree.junction_frame(pid).unwrap();
                let len = bend.arc_length();
                pieces.push(Piece {
                    segment: id,
                    s0: s,
                    len,
                    kind: PieceKind::Bend { bend, junction },
                });
                s += len;
            }
            pieces.push(Piece {
                segment: id,
                s0: s,
                len: seg.length,
                kind: PieceKind::Straight {
                    start: seg.start(),
                    axis: seg.frame.axis,
                    radius: seg.radius(),
                },
            });
            s += seg.length;
        }
        let last = *ids.last().unwrap();
        let s_start = tree.segments[0].radius();
        let s_end = if tree.is_leaf(last) {
            s - tree.segments[last as usize].radius()
        } else {
            s
        };
        RouteCenterline {
            pieces,
            total_length: s,
            s_start,
            s_end,
        }
    }

    pub fn navigable_length(&self) -> f64 {
        (self.s_end - self.s_start).max(0.0)
    }

    /// Number of poses at spacing `step`: both ends included.
    pub fn pose_count(&self, step: f64) -> usize {
        math::ceil(self.navigable_length() / step) as usize + 1
    }

    pub fn station(&self, s: f64) -> Station {
        let s = s.clamp(0.0, self.total_length);
        let k = self.pieces.partition_point(|p| p.s0 + p.len < s).min(self.pieces.len() - 1);
        let p = &self.pieces[k];
        let local = (s - p.s0).clamp(0.0, p.len);
        match p.kind {
            PieceKind::Straight { start, axis, radius } => Station {
                position: start + axis * local,
                tangent: axis,
                segment: p.segment,
                radius,
            },
            PieceKind::Bend { bend, junction } => {
                let a = local / bend.bend_radius();
                Station {
                    position: junction.to_world(bend.center(a)),
                    tangent: junction.dir_to_world(bend.tangent(a)),
                    segment: p.segment,
                    radius: bend.ring_radius(local),
                }
            }
        }
    }
}

/// Bounded random perturbation of each pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterParams {
    /// Maximum yaw and pitch away from the centreline tangent, degrees.
    pub max_angle_deg: f64,
    /// Maximum roll about the optical axis, degrees.
    pub max_roll_deg: f64,
    /// Maximum sideways offset as a fraction of the local radius.
    pub max_offset_fraction: f64,
    pub seed: u64,
    /// Jittered draws per pose before falling back to the unperturbed pose.
    pub max_resamples: u32,
}

impl JitterParams {
    pub fn none() -> Self {
        JitterParams {
            max_angle_deg: 0.0,
            max_roll_deg: 0.0,
            max_offset_fraction: 0.0,
            seed: 0,
            max_resamples: 0,
        }
    }
}

impl Default for JitterParams {
    fn default() -> Self {
        JitterParams {
            max_angle_deg: 5.0,
            max_roll_deg: 15.0,
            max_offset_fraction: 0.2,
            seed: 0,
            max_resamples: 16,
        }
    }
}

/// Minimum distance from a pose to the wall, as a fraction of the local radius.
pub const MIN_CLEARANCE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub poses: Vec<Frame>,
    pub target_segment_ids: Vec<u32>,
    /// Centreline arc length of each pose.
    pub stations: Vec<f64>,
    /// Segment the centreline passes through at each pose.
    pub pose_segments: Vec<u32>,
}

fn jittered(base: &Frame, radius: f64, j: &JitterParams, draws: [f64; 5]) -> Frame {
    let [yaw, pitch, roll, rho, psi] = draws;
    let yaw = math::rad(j.max_angle_deg) * (2.0 * yaw - 1.0);
    let pitch = math::rad(j.max_angle_deg) * (2.0 * pitch - 1.0);
    let roll = math::rad(j.max_roll_deg) * (2.0 * roll - 1.0);
    let rho = j.max_offset_fraction * radius * math::sqrt(rho);
    let psi = 2.0 * math::PI * psi;
    let offset = (base.lateral * math::cos(psi) + base.normal * math::sin(psi)) * rho;
    let axis = base
        .axis
        .rotated_about(base.normal, yaw)
        .rotated_about(base.lateral, pitch)
        .normalized();
    let f = Frame::from_axis(base.origin + offset, axis, base.lateral);
    f.twisted(roll)
}

/// Poses every `step_mm` along the route, looking down-lumen. Each jittered
/// pose is redrawn until it clears the wall by `MIN_CLEARANCE_FRACTION` of
/// the local radius.
pub fn generate_flythrough(
    tree: &AirwayTree,
    accel: &RayAccelerator,
    route: &Route,
    step_mm: f64,
    jitter: &JitterParams,
) -> Result<CameraPath, RenderError> {
    if !(step_mm > 0.0) || !step_mm.is_finite() {
        return Err(RenderError::Route(format!("step must be positive, got {step_mm}")));
    }
    let ids = route_segments(tree, route)?;
    let line = RouteCenterline::new(tree, &ids);
    let n = line.pose_count(step_mm);
    let mut r = rng::stream(jitter.seed, rng::STREAM_FLYTHROUGH + 1);
    let still = jitter.max_angle_deg == 0.0 && jitter.max_roll_deg == 0.0 && jitter.max_offset_fraction == 0.0;
    let mut path = CameraPath {
        poses: Vec::with_capacity(n),
        target_segment_ids: ids,
        stations: Vec::with_capacity(n),
        pose_segments: Vec::with_capacity(n),
    };
    let mut lateral = tree.segments[0].frame.lateral;
    for k in 0..n {
        let s = (line.s_start + k as f64 * step_mm).min(line.s_end);
        let st = line.station(s);
        let base = Frame::from_axis(st.position, st.tangent, lateral);
        lateral = base.lateral;
        let min_clear = MIN_CLEARANCE_FRACTION * st.radius;
        let clear = |f: &Frame| accel.lumen_clearance(f.origin).is_some_and(|d| d >= min_clear);
        let mut pose = None;
        if !still {
            for _ in 0..jitter.max_resamples {
                let draws: [f64; 5] = core::array::from_fn(|_| r.random::<f64>());
                let f = jittered(&base, st.radius, jitter, draws);
                if clear(&f) {
                    pose = Some(f);
                    break;
                }
            }
        }
        let pose = match pose {
            Some(f) => f,
            None if clear(&base) => base,
            None => return Err(RenderError::Interior { station: k }),
        };
        path.poses.push(pose);
        path.stations.push(s);
        path.pose_segments.push(st.segment);
    }
    Ok(path)
}
