//! Mesh validation: watertightness, winding, degenerate faces and exact
//! triangle-triangle intersection tests.

use alloc::vec::Vec;
use robust::{Coord, Coord3D};
use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::bvh::{Aabb, Bvh};
use crate::math::Vec3;

pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub vertex_count: usize,
    pub triangle_count: usize,
    pub edge_count: usize,
    /// Edges used by exactly one triangle.
    pub boundary_edges: Vec<[u32; 2]>,
    /// Edges used by more than two triangles.
    pub nonmanifold_edges: Vec<[u32; 2]>,
    /// Manifold edges traversed in the same direction by both triangles.
    pub inconsistent_edges: Vec<[u32; 2]>,
    pub signed_volume: f64,
    pub degenerate_triangles: Vec<u32>,
    pub self_intersections: Vec<[u32; 2]>,
    pub euler_characteristic: i64,
}

impl ValidationReport {
    pub fn watertight(&self) -> bool {
        self.boundary_edges.is_empty() && self.nonmanifold_edges.is_empty()
    }

    pub fn winding_consistent(&self) -> bool {
        self.inconsistent_edges.is_empty()
    }

    /// Normals face the enclosed volume (negative signed volume).
    pub fn normals_inward(&self) -> bool {
        self.signed_volume < 0.0
    }

    pub fn passes(&self) -> bool {
        self.triangle_count > 0
            && self.watertight()
            && self.winding_consistent()
            && self.normals_inward()
            && self.degenerate_triangles.is_empty()
            && self.self_intersections.is_empty()
    }
}

pub fn validate_mesh(mesh: &TriangleMesh) -> ValidationReport {
    // (lo, hi, forward) per directed edge.
    let mut edges: Vec<(u32, u32, bool)> = mesh
        .triangles
        .iter()
        .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
        .map(|(a, b)| if a < b { (a, b, true) } else { (b, a, false) })
        .collect();
    edges.sort_unstable();
    let mut boundary = Vec::new();
    let mut nonmanifold = Vec::new();
    let mut inconsistent = Vec::new();
    let mut edge_count = 0;
    let mut i = 0;
    while i < edges.len() {
        let mut j = i;
        while j < edges.len() && edges[j].0 == edges[i].0 && edges[j].1 == edges[i].1 {
            j += 1;
        }
        edge_count += 1;
        let e = [edges[i].0, edges[i].1];
        match j - i {
            1 => boundary.push(e),
            2 => {
                if edges[i].2 == edges[i + 1].2 {
                    inconsistent.push(e);
                }
            }
            _ => nonmanifold.push(e),
        }
        i = j;
    }
    let degenerate = (0..mesh.triangles.len())
        .filter(|&t| !(mesh.area(t) > MIN_TRIANGLE_AREA))
        .map(|t| t as u32)
        .collect();
    ValidationReport {
        vertex_count: mesh.vertices.len(),
        triangle_count: mesh.triangles.len(),
        edge_count,
        boundary_edges: boundary,
        nonmanifold_edges: nonmanifold,
        inconsistent_edges: inconsistent,
        signed_volume: mesh.signed_volume(),
        degenerate_triangles: degenerate,
        self_intersections: self_intersections(mesh),
        euler_characteristic: mesh.vertices.len() as i64 - edge_count as i64 + mesh.triangles.len() as i64,
    }
}

/// All intersecting triangle pairs `(i, j)`, `i < j`. Triangles that share
/// vertices only count when they overlap beyond the shared part.
pub fn self_intersections(mesh: &TriangleMesh) -> Vec<[u32; 2]> {
    let boxes: Vec<Aabb> = (0..mesh.triangles.len())
        .map(|t| Aabb::from_points(&mesh.triangle(t)))
        .collect();
    let Some(bvh) = Bvh::build(&boxes) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for t in 0..mesh.triangles.len() {
        let mut cand = Vec::new();
        bvh.for_each_overlap(&boxes[t], |u| {
            if u as usize > t && boxes[u as usize].overlaps(&boxes[t]) {
                cand.push(u);
            }
        });
        cand.sort_unstable();
        for u in cand {
            if triangles_intersect(mesh, t, u as usize) {
                out.push([t as u32, u]);
            }
        }
    }
    out
}

fn triangles_intersect(mesh: &TriangleMesh, t: usize, u: usize) -> bool {
    let ti = mesh.triangles[t];
    let ui = mesh.triangles[u];
    let tp = mesh.triangle(t);
    let up = mesh.triangle(u);
    let shared: Vec<(usize, usize)> = (0..3)
        .flat_map(|a| (0..3).map(move |b| (a, b)))
        .filter(|&(a, b)| ti[a] == ui[b])
        .collect();
    match shared.len() {
        0 => tri_tri(&tp, &up),
        1 => {
            let (a, b) = shared[0];
            let v = tp[a];
            let (p1, p2) = (tp[(a + 1) % 3], tp[(a + 2) % 3]);
            let (q1, q2) = (up[(b + 1) % 3], up[(b + 2) % 3]);
            shared_vertex_overlap(v, p1, p2, q1, q2)
        }
        2 => {
            let a_free = (0..3).find(|a| !shared.iter().any(|s| s.0 == *a)).unwrap();
            let b_free = (0..3).find(|b| !shared.iter().any(|s| s.1 == *b)).unwrap();
            let (e0, e1) = (tp[shared[0].0], tp[shared[1].0]);
            shared_edge_fold(e0, e1, tp[a_free], up[b_free])
        }
        _ => true,
    }
}

fn c3(p: Vec3) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn o3(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> i8 {
    sign(robust::orient3d(c3(a), c3(b), c3(c), c3(d)))
}

/// Drops the coordinate with the largest normal component.
#[derive(Clone, Copy)]
struct Projection(usize);

impl Projection {
    fn for_plane(a: Vec3, b: Vec3, c: Vec3) -> Self {
        let n = (b - a).cross(c - a);
        let (x, y, z) = (n.x.abs(), n.y.abs(), n.z.abs());
        if x >= y && x >= z {
            Projection(0)
        } else if y >= z {
            Projection(1)
        } else {
            Projection(2)
        }
    }

    fn p(self, v: Vec3) -> Coord<f64> {
        match self.0 {
            0 => Coord { x: v.y, y: v.z },
            1 => Coord { x: v.z, y: v.x },
            _ => Coord { x: v.x, y: v.y },
        }
    }

    fn o2(self, a: Vec3, b: Vec3, c: Vec3) -> i8 {
        sign(robust::orient2d(self.p(a), self.p(b), self.p(c)))
    }
}

fn mixed(s: [i8; 3]) -> bool {
    s.iter().any(|&v| v > 0) && s.iter().any(|&v| v < 0)
}

fn point_in_tri_2d(pr: Projection, p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> bool {
    !mixed([pr.o2(a, b, p), pr.o2(b, c, p), pr.o2(c, a, p)])
}

fn on_segment_2d(pr: Projection, p: Vec3, a: Vec3, b: Vec3) -> bool {
    let (pp, aa, bb) = (pr.p(p), pr.p(a), pr.p(b));
    pp.x >= aa.x.min(bb.x) && pp.x <= aa.x.max(bb.x) && pp.y >= aa.y.min(bb.y) && pp.y <= aa.y.max(bb.y)
}

fn segments_meet_2d(pr: Projection, p: Vec3, q: Vec3, a: Vec3, b: Vec3) -> bool {
    let d1 = pr.o2(a, b, p);
    let d2 = pr.o2(a, b, q);
    let d3 = pr.o2(p, q, a);
    let d4 = pr.o2(p, q, b);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment_2d(pr, p, a, b))
        || (d2 == 0 && on_segment_2d(pr, q, a, b))
        || (d3 == 0 && on_segment_2d(pr, a, p, q))
        || (d4 == 0 && on_segment_2d(pr, b, p, q))
}

fn coplanar_seg_tri(p: Vec3, q: Vec3, t: &[Vec3; 3]) -> bool {
    let pr = Projection::for_plane(t[0], t[1], t[2]);
    point_in_tri_2d(pr, p, t[0], t[1], t[2])
        || point_in_tri_2d(pr, q, t[0], t[1], t[2])
        || (0..3).any(|k| segments_meet_2d(pr, p, q, t[k], t[(k + 1) % 3]))
}

/// Closed segment `pq` against closed triangle `t`.
fn seg_tri(p: Vec3, q: Vec3, t: &[Vec3; 3]) -> bool {
    let sp = o3(t[0], t[1], t[2], p);
    let sq = o3(t[0], t[1], t[2], q);
    if sp == 0 && sq == 0 {
        return coplanar_seg_tri(p, q, t);
    }
    if sp == sq {
        return false;
    }
    let s = [o3(p, q, t[0], t[1]), o3(p, q, t[1], t[2]), o3(p, q, t[2], t[0])];
    !mixed(s)
}

/// Exact test for two triangles with no shared vertices (touching counts).
pub fn tri_tri(t: &[Vec3; 3], u: &[Vec3; 3]) -> bool {
    let su = [o3(t[0], t[1], t[2], u[0]), o3(t[0], t[1], t[2], u[1]), o3(t[0], t[1], t[2], u[2])];
    if su.iter().all(|&s| s > 0) || su.iter().all(|&s| s < 0) {
        return false;
    }
    let st = [o3(u[0], u[1], u[2], t[0]), o3(u[0], u[1], u[2], t[1]), o3(u[0], u[1], u[2], t[2])];
    if st.iter().all(|&s| s > 0) || st.iter().all(|&s| s < 0) {
        return false;
    }
    if su.iter().all(|&s| s == 0) {
        let pr = Projection::for_plane(t[0], t[1], t[2]);
        return (0..3).any(|k| coplanar_seg_tri(t[k], t[(k + 1) % 3], u))
            || point_in_tri_2d(pr, u[0], t[0], t[1], t[2]);
    }
    (0..3).any(|k| seg_tri(t[k], t[(k + 1) % 3], u)) || (0..3).any(|k| seg_tri(u[k], u[(k + 1) % 3], t))
}

/// Triangles `(v, p1, p2)` and `(v, q1, q2)` overlap somewhere other than `v`.
fn shared_vertex_overlap(v: Vec3, p1: Vec3, p2: Vec3, q1: Vec3, q2: Vec3) -> bool {
    let coplanar = o3(v, q1, q2, p1) == 0 && o3(v, q1, q2, p2) == 0;
    if !coplanar {
        return seg_tri(p1, p2, &[v, q1, q2]) || seg_tri(q1, q2, &[v, p1, p2]);
    }
    // Open angular sectors at v.
    let pr = Projection::for_plane(v, q1, q2);
    let so = pr.o2(v, p1, p2);
    let to = pr.o2(v, q1, q2);
    let inside = |a: Vec3, b: Vec3, o: i8, d: Vec3| o != 0 && pr.o2(v, a, d) == o && pr.o2(v, d, b) == o;
    if inside(p1, p2, so, q1) || inside(p1, p2, so, q2) || inside(q1, q2, to, p1) || inside(q1, q2, to, p2) {
        return true;
    }
    // A shared boundary ray with both sectors on the same side of it.
    let same_dir = |a: Vec3, b: Vec3| pr.o2(v, a, b) == 0 && (a - v).dot(b - v) > 0.0;
    for (pa, pb) in [(p1, p2), (p2, p1)] {
        for (qa, qb) in [(q1, q2), (q2, q1)] {
            if same_dir(pa, qa) {
                let sp = pr.o2(v, pa, pb);
                let sq = pr.o2(v, qa, qb);
                if sp != 0 && sp == sq {
                    return true;
                }
            }
        }
    }
    false
}

/// Two triangles sharing edge `e0 e1` fold onto each other.
fn shared_edge_fold(e0: Vec3, e1: Vec3, p: Vec3, q: Vec3) -> bool {
    if o3(e0, e1, p, q) != 0 {
        return false;
    }
    let pr = Projection::for_plane(e0, e1, p);
    let sp = pr.o2(e0, e1, p);
    let sq = pr.o2(e0, e1, q);
    sp != 0 && sp == sq
}
