//! Bounding-volume hierarchy over axis-aligned boxes, built with binned SAH.
//! Shared by the ray caster and the mesh self-intersection check.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn from_points(pts: &[Vec3]) -> Aabb {
        pts.iter().fold(Aabb::EMPTY, |b, p| b.grow(*p))
    }

    pub fn grow(self, p: Vec3) -> Aabb {
        Aabb {
            min: self.min.min(p),
            max: self.max.max(p),
        }
    }

    pub fn union(self, o: Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let d = self.max - self.min;
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
            && self.min.z <= o.max.z
            && o.min.z <= self.max.z
    }

    /// Pads the box outward so rounding in box tests can never cull a
    /// primitive lying on a face.
    pub fn padded(self) -> Aabb {
        let pad = |v: Vec3, s: f64| {
            Vec3::new(
                v.x + s * (1e-9 * (1.0 + v.x.abs())),
                v.y + s * (1e-9 * (1.0 + v.y.abs())),
                v.z + s * (1e-9 * (1.0 + v.z.abs())),
            )
        };
        Aabb {
            min: pad(self.min, -1.0),
            max: pad(self.max, 1.0),
        }
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_sq(&self, p: Vec3) -> f64 {
        let d = |v: f64, lo: f64, hi: f64| {
            if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            }
        };
        let x = d(p.x, self.min.x, self.max.x);
        let y = d(p.y, self.min.y, self.max.y);
        let z = d(p.z, self.min.z, self.max.z);
        x * x + y * y + z * z
    }

    /// Slab test. Returns the entry distance if the ray segment
    /// `[0, t_max]` touches the box.
    #[inline]
    pub fn ray_entry(&self, origin: Vec3, inv_dir: Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let o = origin[k];
            let inv = inv_dir[k];
            let (lo, hi) = (self.min[k], self.max[k]);
            if inv.is_infinite() {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let mut a = (lo - o) * inv;
            let mut b = (hi - o) * inv;
            if a > b {
                core::mem::swap(&mut a, &mut b);
            }
            // Widen by a few ulps so grazing hits are never lost.
            b *= 1.0 + 4.0 * f64::EPSILON;
            if a > t0 {
                t0 = a;
            }
            if b < t1 {
                t1 = b;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub bounds: Aabb,
    /// Leaf: first index into `order`. Internal: index of the left child
    /// (the right child follows it).
    pub start: u32,
    /// Number of primitives; 0 for internal nodes.
    pub count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    pub nodes: Vec<Node>,
    /// Primitive ids in leaf order.
    pub order: Vec<u32>,
}

const BINS: usize = 16;
const MAX_LEAF: usize = 4;

impl Bvh {
    /// Builds over primitive boxes. Returns `None` for an empty input.
    pub fn build(boxes: &[Aabb]) -> Option<Bvh> {
        if boxes.is_empty() {
            return None;
        }
        let boxes: Vec<Aabb> = boxes.iter().map(|b| b.padded()).collect();
        let centers: Vec<Vec3> = boxes.iter().map(|b| b.center()).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * boxes.len()),
            order: (0..boxes.len() as u32).collect(),
        };
        bvh.nodes.push(Node {
            bounds: Aabb::EMPTY,
            start: 0,
            count: boxes.len() as u32,
        });
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let start = bvh.nodes[ni].start as usize;
            let count = bvh.nodes[ni].count as usize;
            let ids = &mut bvh.order[start..start + count];
            let bounds = ids.iter().fold(Aabb::EMPTY, |b, &i| b.union(boxes[i as usize]));
            bvh.nodes[ni].bounds = bounds;
            if count <= MAX_LEAF {
                continue;
            }
            let cb = ids.iter().fold(Aabb::EMPTY, |b, &i| b.grow(centers[i as usize]));
            let Some(split) = best_split(ids, &boxes, &centers, &cb, bounds.surface_area(), count) else {
                continue;
            };
            let (axis, pos) = split;
            let mut mid = partition(ids, |i| centers[i as usize][axis] < pos);
            if mid == 0 || mid == count {
                // Degenerate split: order by centroid and halve.
                ids.sort_unstable_by(|a, b| {
                    centers[*a as usize][axis]
                        .partial_cmp(&centers[*b as usize][axis])
                        .unwrap_or(core::cmp::Ordering::Equal)
                        .then(a.cmp(b))
                });
                mid = count / 2;
            }
            let left = bvh.nodes.len();
            bvh.nodes.push(Node {
                bounds: Aabb::EMPTY,
                start: start as u32,
                count: mid as u32,
            });
            bvh.nodes.push(Node {
                bounds: Aabb::EMPTY,
                start: (start + mid) as u32,
                count: (count - mid) as u32,
            });
            bvh.nodes[ni].start = left as u32;
            bvh.nodes[ni].count = 0;
            stack.push(left + 1);
            stack.push(left);
        }
        Some(bvh)
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Closest-hit traversal. `hit(prim)` returns the hit distance
    /// for a primitive. Equal distances resolve to the lowest primitive id.
    /// Nodes are skipped only when their entry distance is strictly beyond
    /// the current best, so ties are always seen.
    pub fn closest_hit(
        &self,
        origin: Vec3,
        dir: Vec3,
        t_max: f64,
        mut hit: impl FnMut(u32) -> Option<f64>,
    ) -> Option<(u32, f64)> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(u32, f64)> = None;
        let mut best_t = t_max;
        self.nodes[0].bounds.ray_entry(origin, inv, best_t)?;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.count > 0 {
                let s = node.start as usize;
                for &prim in &self.order[s..s + node.count as usize] {
                    if let Some(t) = hit(prim) {
                        let better = match best {
                            None => t <= best_t,
                            Some((bp, bt)) => t < bt || (t == bt && prim < bp),
                        };
                        if better {
                            best = Some((prim, t));
                            best_t = t;
                        }
                    }
                }
                continue;
            }
            let l = node.start as usize;
            let r = l + 1;
            let el = self.nodes[l].bounds.ray_entry(origin, inv, best_t);
            let er = self.nodes[r].bounds.ray_entry(origin, inv, best_t);
            match (el, er) {
                (Some(a), Some(b)) => {
                    // Push the farther child first.
                    let (near, far) = if a <= b { (l, r) } else { (r, l) };
                    stack.push(far as u32);
                    stack.push(near as u32);
                }
                (Some(_), None) => stack.push(l as u32),
                (None, Some(_)) => stack.push(r as u32),
                (None, None) => {}
            }
        }
        best
    }

    /// Visits the primitives of every leaf whose bounds overlap `query`: a
    /// superset of the primitives whose own boxes overlap it.
    pub fn for_each_overlap(&self, query: &Aabb, mut f: impl FnMut(u32)) {
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if !node.bounds.overlaps(query) {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &prim in &self.order[s..s + node.count as usize] {
                    f(prim);
                }
            } else {
                stack.push(node.start);
                stack.push(node.start + 1);
            }
        }
    }

    /// Nearest primitive to `p`. `dist_sq(prim)` gives the squared distance
    /// to a primitive.
    pub fn nearest(&self, p: Vec3, mut dist_sq: impl FnMut(u32) -> f64) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        let mut best_d = f64::INFINITY;
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.distance_sq(p) > best_d {
                continue;
            }
            if node.count > 0 {
                let s = node.start as usize;
                for &prim in &self.order[s..s + node.count as usize] {
                    let d = dist_sq(prim);
                    if d < best_d {
                        best_d = d;
                        best = Some((prim, d));
                    }
                }
            } else {
                let l = node.start;
                let dl = self.nodes[l as usize].bounds.distance_sq(p);
                let dr = self.nodes[l as usize + 1].bounds.distance_sq(p);
                if dl <= dr {
                    stack.push(l + 1);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(l + 1);
                }
            }
        }
        best.map(|(i, d)| (i, crate::math::sqrt(d)))
    }

    pub fn depth(&self) -> usize {
        fn go(b: &Bvh, i: usize) -> usize {
            let n = &b.nodes[i];
            if n.count > 0 {
                1
            } else {
                1 + go(b, n.start as usize).max(go(b, n.start as usize + 1))
            }
        }
        go(self, 0)
    }
}

fn partition(ids: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut i = 0;
    for j in 0..ids.len() {
        if pred(ids[j]) {
            ids.swap(i, j);
            i += 1;
        }
    }
    i
}

/// Binned SAH. Returns `(axis, split position)` or `None` when a leaf is
/// cheaper.
fn best_split(
    ids: &[u32],
    boxes: &[Aabb],
    centers: &[Vec3],
    cb: &Aabb,
    parent_area: f64,
    count: usize,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for axis in 0..3 {
        let lo = cb.min[axis];
        let hi = cb.max[axis];
        if !(hi > lo) {
            continue;
        }
        let scale = BINS as f64 / (hi - lo);
        let mut bin_box = [Aabb::EMPTY; BINS];
        let mut bin_n = [0usize; BINS];
        for &i in ids {
            let b = (((centers[i as usize][axis] - lo) * scale) as usize).min(BINS - 1);
            bin_box[b] = bin_box[b].union(boxes[i as usize]);
            bin_n[b] += 1;
        }
        let mut right_area = [0.0; BINS];
        let mut right_n = [0usize; BINS];
        let mut acc = Aabb::EMPTY;
        let mut n = 0;
        for b in (1..BINS).rev() {
            acc = acc.union(bin_box[b]);
            n += bin_n[b];
            right_area[b] = acc.surface_area();
            right_n[b] = n;
        }
        let mut acc = Aabb::EMPTY;
        let mut n = 0;
        for b in 0..BINS - 1 {
            acc = acc.union(bin_box[b]);
            n += bin_n[b];
            if n == 0 || right_n[b + 1] == 0 {
                continue;
            }
            let cost = acc.surface_area() * n as f64 + right_area[b + 1] * right_n[b + 1] as f64;
            if best.map_or(true, |(_, _, c)| cost < c) {
                best = Some((axis, lo + (b + 1) as f64 / scale, cost));
            }
        }
    }
    let Some((axis, pos, cost)) = best else {
        // All centroids coincide: split by count along x.
        return Some((0, cb.min.x));
    };
    // Small nodes stay leaves when splitting does not pay off.
    if count <= 2 * MAX_LEAF && cost >= parent_area * count as f64 {
        return None;
    }
    Some((axis, pos))
}
