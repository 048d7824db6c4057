//! Tessellation of an airway tree into a closed interior-surface mesh.
//!
//! Every segment is lofted as a sequence of rings with `ring_segments`
//! vertices. At a bifurcation the parent's distal ring is split between the
//! daughters: each daughter keeps the half of the ring on its own side of the
//! plane that separates the daughters and replaces the other half with a
//! shared ridge curve lying in that plane. The daughters' swept tubes are
//! clipped at the plane, and the clipped rings blend back into planar
//! cylinder rings over a transition zone.

mod validate;

pub use validate::{validate_mesh, ValidationReport};

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::airway::{AirwayTree, DaughterBend, MAX_CLIP_FRACTION};
use crate::error::MeshError;
use crate::math::{self, Frame, Vec3};

/// What a vertex belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexTag {
    /// Planar ring on the straight part of a segment, at the exact radius.
    Straight(u32),
    /// Ring vertex inside the bifurcation transition of a daughter.
    Transition(u32),
    /// Ridge between the daughters of the given parent.
    Ridge(u32),
    CapCenter(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriangleTag {
    Wall(u32),
    Cap(u32),
}

impl TriangleTag {
    pub fn segment(self) -> u32 {
        match self {
            TriangleTag::Wall(s) | TriangleTag::Cap(s) => s,
        }
    }

    pub fn is_cap(self) -> bool {
        matches!(self, TriangleTag::Cap(_))
    }
}

/// Triangle mesh with normals pointing into the lumen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
    pub vertex_tags: Vec<VertexTag>,
    pub triangle_tags: Vec<TriangleTag>,
}

impl TriangleMesh {
    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalised face normal (twice the area vector).
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(c - a)
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * self.face_normal(t).norm()
    }

    /// Signed enclosed volume. Negative when normals point inward.
    pub fn signed_volume(&self) -> f64 {
        let mut v = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            v += a.dot(b.cross(c));
        }
        v / 6.0
    }

    /// Sorted unique undirected edges.
    pub fn edges(&self) -> Vec<[u32; 2]> {
        let mut e: Vec<[u32; 2]> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [[a, b], [b, c], [c, a]])
            .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.triangles.len() as i64
    }

    /// Area-weighted vertex normals from the face normals.
    pub fn compute_normals(&mut self) {
        let mut n = alloc::vec![Vec3::ZERO; self.vertices.len()];
        for t in 0..self.triangles.len() {
            let f = self.face_normal(t);
            for &v in &self.triangles[t] {
                n[v as usize] += f;
            }
        }
        self.normals = n.into_iter().map(|v| v.normalized()).collect();
    }

    pub fn bounds(&self) -> crate::bvh::Aabb {
        crate::bvh::Aabb::from_points(&self.vertices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TessellationParams {
    /// Vertices per ring; even, at least 8.
    pub ring_segments: u32,
    /// Ring density along straight parts, rings per mm.
    pub rings_per_unit_length: f64,
    /// Minimum number of ring stations across a bifurcation transition.
    pub bifurcation_rings: u32,
}

impl Default for TessellationParams {
    fn default() -> Self {
        TessellationParams {
            ring_segments: 32,
            rings_per_unit_length: 0.5,
            bifurcation_rings: 8,
        }
    }
}

impl TessellationParams {
    pub fn validate(&self) -> Result<(), MeshError> {
        if self.ring_segments < 8 || self.ring_segments % 2 != 0 {
            return Err(MeshError::InvalidParam {
                field: "ring_segments",
                reason: format!("must be even and at least 8, got {}", self.ring_segments),
            });
        }
        if !(self.rings_per_unit_length > 0.0) || !self.rings_per_unit_length.is_finite() {
            return Err(MeshError::InvalidParam {
                field: "rings_per_unit_length",
                reason: format!("must be positive, got {}", self.rings_per_unit_length),
            });
        }
        if self.bifurcation_rings < 4 {
            return Err(MeshError::InvalidParam {
                field: "bifurcation_rings",
                reason: format!("must be at least 4, got {}", self.bifurcation_rings),
            });
        }
        Ok(())
    }

    /// Angular offset of ring vertex 0. Chosen so that vertices always land
    /// on the two points of the ring that lie in the separating plane.
    pub fn ring_phase(&self) -> f64 {
        if self.ring_segments % 4 == 0 {
            0.0
        } else {
            math::PI / self.ring_segments as f64
        }
    }

    pub fn ring_angle(&self, i: usize) -> f64 {
        2.0 * math::PI * i as f64 / self.ring_segments as f64 + self.ring_phase()
    }

    /// Number of planar rings over a straight length.
    pub fn straight_ring_count(&self, length: f64) -> usize {
        (math::ceil(length * self.rings_per_unit_length) as usize + 1).max(2)
    }
}


struct Builder<'a> {
    tree: &'a AirwayTree,
    p: &'a TessellationParams,
    n: usize,
    mesh: TriangleMesh,
}

impl<'a> Builder<'a> {
    fn vertex(&mut self, p: Vec3, tag: VertexTag) -> u32 {
        self.mesh.vertices.push(p);
        self.mesh.vertex_tags.push(tag);
        (self.mesh.vertices.len() - 1) as u32
    }

    fn tri(&mut self, t: [u32; 3], tag: TriangleTag) {
        self.mesh.triangles.push(t);
        self.mesh.triangle_tags.push(tag);
    }

    /// Quad strip between a proximal and a distal loop, wound inward.
    /// Quads between two rings, split along the shorter diagonal.
    fn band(&mut self, prox: &[u32], dist: &[u32], seg: u32) {
        let n = self.n;
        for i in 0..n {
            let j = (i + 1) % n;
            let v = |k: u32| self.mesh.vertices[k as usize];
            let d0 = (v(dist[i]) - v(prox[j])).norm_sq();
            let d1 = (v(prox[i]) - v(dist[j])).norm_sq();
            if d0 <= d1 {
                self.tri([prox[i], dist[i], prox[j]], TriangleTag::Wall(seg));
                self.tri([dist[i], dist[j], prox[j]], TriangleTag::Wall(seg));
            } else {
                self.tri([prox[i], dist[i], dist[j]], TriangleTag::Wall(seg));
                self.tri([prox[i], dist[j], prox[j]], TriangleTag::Wall(seg));
            }
        }
    }

    fn cap(&mut self, ring: &[u32], center: Vec3, proximal: bool, seg: u32) {
        let c = self.vertex(center, VertexTag::CapCenter(seg));
        let n = self.n;
        for i in 0..n {
            let j = (i + 1) % n;
            if proximal {
                self.tri([c, ring[i], ring[j]], TriangleTag::Cap(seg));
            } else {
                self.tri([c, ring[j], ring[i]], TriangleTag::Cap(seg));
            }
        }
    }

    /// Planar rings over `[t0, length]` of a segment's straight part. The
    /// ring phase drifts by the residual twist so the last ring lines up with
    /// the distal junction. Returns the first and last rings and the index
    /// shift `m` mapping junction index `j` to ring index `j + m`.
    fn straight(&mut self, seg_id: u32, t0: f64) -> (Vec<u32>, Vec<u32>, usize) {
        let seg = &self.tree.segments[seg_id as usize];
        let n = self.n;
        let step = 2.0 * math::PI / n as f64;
        let (residual, m) = if self.tree.is_leaf(seg_id) {
            (0.0, 0usize)
        } else {
            let w = math::rad(seg.twist);
            let k = math::round(w / step);
            (w - k * step, (k as i64).rem_euclid(n as i64) as usize)
        };
        let span = seg.length - t0;
        let count = self.p.straight_ring_count(span);
        let frame = seg.frame;
        let r = seg.radius();
        let mut first = Vec::new();
        let mut prev: Vec<u32> = Vec::new();
        for k in 0..count {
            let u = k as f64 / (count - 1) as f64;
            let t = if k + 1 == count { seg.length } else { t0 + span * u };
            let phase = self.p.ring_phase() + residual * u;
            let c = frame.origin + frame.axis * t;
            let ring: Vec<u32> = (0..n)
                .map(|i| {
                    let th = step * i as f64 + phase;
                    let p = c + (frame.lateral * math::cos(th) + frame.normal * math::sin(th)) * r;
                    self.vertex(p, VertexTag::Straight(seg_id))
                })
                .collect();
            if k == 0 {
                first = ring.clone();
            } else {
                self.band(&prev, &ring, seg_id);
            }
            prev = ring;
        }
        (first, prev, m)
    }

    /// Lofts segment `id` starting from its first ring and recurses into
    /// its daughters.
    fn finish_segment(&mut self, id: u32, last: Vec<u32>, m: usize) -> Result<(), MeshError> {
        if self.tree.is_leaf(id) {
            let end = self.tree.segments[id as usize].end();
            self.cap(&last, end, false, id);
            return Ok(());
        }
        let n = self.n;
        let junction_ring: Vec<u32> = (0..n).map(|j| last[(j + m) % n]).collect();
        self.bifurcation(id, &junction_ring)
    }

    fn bifurcation(&mut self, pid: u32, ring: &[u32]) -> Result<(), MeshError> {
        let tree = self.tree;
        let n = self.n;
        let half = n / 2;
        let (ia, ib) = tree.children(pid).expect("internal segment");
        let junction = tree.junction_frame(pid).unwrap();
        let bif = tree.bifurcation(pid).ok_or(MeshError::Stitching {
            segment_id: pid,
            reason: "missing bifurcation record".into(),
        })?;
        let rp = tree.segments[pid as usize].radius();
        let ga = tree.daughter_bend(ia).unwrap();
        let gb = tree.daughter_bend(ib).unwrap();
        let reach = |g: &DaughterBend, id: u32| g.arc_length() + tree.segments[id as usize].length;
        let (reach_a, reach_b) = (reach(&ga, ia), reach(&gb, ib));
        let lift = bif.carina.tip_lift();
        let params = *self.p;
        let phase_zero = params.ring_phase() == 0.0;
        let angle = |i: usize| params.ring_angle(i);
        let medial = |i: usize| math::cos(angle(i)) < -1e-9;
        // b's ring vertex paired with a's vertex `i` (mirror image across the plane).
        let partner = |i: usize| if phase_zero { (n - i) % n } else { (2 * n - i - 1) % n };

        let mut loop_a: Vec<u32> = (0..n).map(|i| ring[i]).collect();
        let mut loop_b: Vec<u32> = (0..n).map(|j| ring[(j + half) % n]).collect();
        let mut tau_a = alloc::vec![0.0; n];
        let mut tau_b = alloc::vec![0.0; n];
        for i in (0..n).filter(|&i| medial(i)) {
            let j = partner(i);
            let ta = ga.clip(angle(i), reach_a);
            let tb = gb.clip(angle(j), reach_b);
            if !ta.is_finite() || !tb.is_finite() {
                return Err(MeshError::Stitching {
                    segment_id: if ta.is_finite() { ib } else { ia },
                    reason: "medial wall never reaches its own side of the junction".into(),
                });
            }
            let mut mid = (ga.wall_point(ta, angle(i)) + gb.wall_point(tb, angle(j))) * 0.5;
            mid.x = 0.0;
            let s = mid.y / rp;
            mid.z += lift * (1.0 - s * s).max(0.0);
            let v = self.vertex(junction.to_world(mid), VertexTag::Ridge(pid));
            loop_a[i] = v;
            loop_b[j] = v;
            tau_a[i] = ta;
            tau_b[j] = tb;
        }
        self.transition(ia, &ga, &junction, &loop_a, &tau_a)?;
        self.transition(ib, &gb, &junction, &loop_b, &tau_b)?;
        Ok(())
    }

    fn transition(
        &mut self,
        id: u32,
        g: &DaughterBend,
        junction: &Frame,
        loop0: &[u32],
        tau_start: &[f64],
    ) -> Result<(), MeshError> {
        let n = self.n;
        let length = self.tree.segments[id as usize].length;
        let arc = g.arc_length();
        let clip = tau_start.iter().map(|t| (t - arc).max(0.0)).fold(0.0, f64::max);
        if !(clip <= MAX_CLIP_FRACTION * length) {
            return Err(MeshError::Stitching {
                segment_id: id,
                reason: format!("medial wall clip {clip:.3} mm exceeds {MAX_CLIP_FRACTION} of the length {length:.3} mm"),
            });
        }
        let t0 = (clip + 0.25 * length).min(0.85 * length);
        let tau_t = arc + t0;
        let stations = (self.p.bifurcation_rings as usize).max(math::ceil(tau_t * self.p.rings_per_unit_length) as usize);
        let thetas: Vec<f64> = (0..n).map(|i| self.p.ring_angle(i)).collect();
        let offsets: Vec<Vec3> = (0..n)
            .map(|i| junction.to_local(self.mesh.vertices[loop0[i] as usize]) - g.wall_point(tau_start[i], thetas[i]))
            .collect();
        let mut prev = loop0.to_vec();
        for k in 1..stations {
            let u = k as f64 / stations as f64;
            let ring: Vec<u32> = (0..n)
                .map(|i| {
                    let tau = tau_start[i] + (tau_t - tau_start[i]) * u;
                    let local = g.wall_point(tau, thetas[i]) + offsets[i] * (1.0 - u);
                    self.vertex(junction.to_world(local), VertexTag::Transition(id))
                })
                .collect();
            self.band(&prev, &ring, id);
            prev = ring;
        }
        let (first, last, m) = self.straight(id, t0);
        self.band(&prev, &first, id);
        self.finish_segment(id, last, m)
    }
}

/// Builds the closed interior surface of `tree`.
pub fn tessellate(tree: &AirwayTree, params: &TessellationParams) -> Result<TriangleMesh, MeshError> {
    params.validate()?;
    if tree.segments.is_empty() {
        return Err(MeshError::InvalidParam {
            field: "tree",
            reason: "tree has no segments".into(),
        });
    }
    let mut b = Builder {
        tree,
        p: params,
        n: params.ring_segments as usize,
        mesh: TriangleMesh::default(),
    };
    let (first, last, m) = b.straight(0, 0.0);
    let start = tree.segments[0].start();
    b.cap(&first, start, true, 0);
    b.finish_segment(0, last, m)?;
    let mut mesh = b.mesh;
    mesh.compute_normals();
    Ok(mesh)
}
