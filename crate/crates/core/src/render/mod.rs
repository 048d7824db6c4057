//! Ray-cast depth rendering of a tessellated airway.
//!
//! Camera convention: `pose.axis` is the optical axis, `pose.lateral` is image
//! +x (right) and `pose.normal` is image +y (down). Primary rays are built
//! with a unit component along the optical axis, so the ray parameter of a
//! hit is its z-depth.

mod path;

pub use path::{generate_flythrough, route_segments, CameraPath, JitterParams, Route, RouteCenterline};

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::bvh::{Aabb, Bvh};
use crate::error::RenderError;
use crate::grid::{Grid, Map};
use crate::math::{self, Frame, Vec3};
use crate::mesh::TriangleMesh;

/// Precomputed shear for the watertight ray/triangle test.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Ray {
        let a = [dir.x.abs(), dir.y.abs(), dir.z.abs()];
        let kz = if a[0] >= a[1] && a[0] >= a[2] {
            0
        } else if a[1] >= a[2] {
            1
        } else {
            2
        };
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if dir[kz] < 0.0 {
            core::mem::swap(&mut kx, &mut ky);
        }
        Ray {
            origin,
            dir,
            kx,
            ky,
            kz,
            sx: dir[kx] / dir[kz],
            sy: dir[ky] / dir[kz],
            sz: 1.0 / dir[kz],
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    /// Watertight ray/triangle intersection (Woop, Benthin and Wald 2013).
    /// Returns the ray parameter and the barycentric weights of the three
    /// vertices. Both faces count as hits.
    pub fn intersect(&self, tri: &[Vec3; 3]) -> Option<(f64, [f64; 3])> {
        let a = tri[0] - self.origin;
        let b = tri[1] - self.origin;
        let c = tri[2] - self.origin;
        let (kx, ky, kz) = (self.kx, self.ky, self.kz);
        let ax = a[kx] - self.sx * a[kz];
        let ay = a[ky] - self.sy * a[kz];
        let bx = b[kx] - self.sx * b[kz];
        let by = b[ky] - self.sy * b[kz];
        let cx = c[kx] - self.sx * c[kz];
        let cy = c[ky] - self.sy * c[kz];
        let u = cx * by - cy * bx;
        let v = ax * cy - ay * cx;
        let w = bx * ay - by * ax;
        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        let t = (u * self.sz * a[kz] + v * self.sz * b[kz] + w * self.sz * c[kz]) / det;
        if !(t > 0.0) || !t.is_finite() {
            return None;
        }
        Some((t, [u / det, v / det, w / det]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub triangle: u32,
    pub t: f64,
    pub bary: [f64; 3],
}

/// BVH over a mesh's triangles plus what shading needs.
#[derive(Debug, Clone)]
pub struct RayAccelerator {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
    pub face_normals: Vec<Vec3>,
    pub is_cap: Vec<bool>,
    pub bvh: Bvh,
}

pub fn build_accelerator(mesh: &TriangleMesh) -> Result<RayAccelerator, RenderError> {
    if mesh.triangles.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    let boxes: Vec<Aabb> = (0..mesh.triangles.len()).map(|t| Aabb::from_points(&mesh.triangle(t))).collect();
    let bvh = Bvh::build(&boxes).ok_or(RenderError::EmptyMesh)?;
    let normals = if mesh.normals.len() == mesh.vertices.len() {
        mesh.normals.clone()
    } else {
        let mut m = mesh.clone();
        m.compute_normals();
        m.normals
    };
    let is_cap = if mesh.triangle_tags.len() == mesh.triangles.len() {
        mesh.triangle_tags.iter().map(|t| t.is_cap()).collect()
    } else {
        alloc::vec![false; mesh.triangles.len()]
    };
    Ok(RayAccelerator {
        vertices: mesh.vertices.clone(),
        triangles: mesh.triangles.clone(),
        normals,
        face_normals: (0..mesh.triangles.len()).map(|t| mesh.face_normal(t)).collect(),
        is_cap,
        bvh,
    })
}

impl RayAccelerator {
    #[inline]
    pub fn triangle(&self, t: u32) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t as usize];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Closest hit with `t_min <= t <= t_max`; ties go to the lowest id.
    pub fn closest_hit(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        let (triangle, t) = self.bvh.closest_hit(ray.origin, ray.dir, t_max, |prim| {
            ray.intersect(&self.triangle(prim)).map(|h| h.0).filter(|&t| t >= t_min)
        })?;
        let bary = ray.intersect(&self.triangle(triangle))?.1;
        Some(Hit { triangle, t, bary })
    }

    /// Same query by testing every triangle.
    pub fn closest_hit_brute_force(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for id in 0..self.triangles.len() as u32 {
            if let Some((t, bary)) = ray.intersect(&self.triangle(id)) {
                if t >= t_min && t <= t_max && best.map_or(true, |b| t < b.t) {
                    best = Some(Hit { triangle: id, t, bary });
                }
            }
        }
        best
    }

    /// Interpolated unit normal at a hit.
    pub fn shading_normal(&self, hit: &Hit) -> Vec3 {
        let [a, b, c] = self.triangles[hit.triangle as usize];
        let [wa, wb, wc] = hit.bary;
        let n = self.normals[a as usize] * wa + self.normals[b as usize] * wb + self.normals[c as usize] * wc;
        if n.norm_sq() > 1e-24 {
            n.normalized()
        } else {
            self.face_normals[hit.triangle as usize]
        }
    }

    /// Distance from `p` to the surface, or `None` if `p` is not inside the
    /// closed surface (the first wall seen along a probe ray faces away).
    pub fn lumen_clearance(&self, p: Vec3) -> Option<f64> {
        let probe = Ray::new(p, Vec3::new(0.5773502691896258, 0.5773502691896257, 0.5773502691896258));
        let hit = self.closest_hit(&probe, 0.0, f64::INFINITY)?;
        if self.face_normals[hit.triangle as usize].dot(probe.dir) >= 0.0 {
            return None;
        }
        self.bvh
            .nearest(p, |t| {
                let q = closest_point_on_triangle(p, &self.triangle(t));
                (q - p).norm_sq()
            })
            .map(|(_, d)| d)
    }
}

/// Closest point of a triangle to `p` (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_on_triangle(p: Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    /// Degrees.
    pub vertical_fov: f64,
    pub pose: Frame,
    /// mm.
    pub near_clip: f64,
}

pub const DEFAULT_RESOLUTION: u32 = 256;
pub const DEFAULT_FOV: f64 = 90.0;
pub const DEFAULT_NEAR_CLIP: f64 = 0.01;

impl Camera {
    pub fn new(width: u32, height: u32, vertical_fov: f64, pose: Frame, near_clip: f64) -> Result<Camera, RenderError> {
        let cam = Camera {
            width,
            height,
            vertical_fov,
            pose,
            near_clip,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(10.0..=170.0).contains(&self.vertical_fov) {
            return Err(RenderError::InvalidCamera(format!(
                "vertical_fov must lie in [10, 170] degrees, got {}",
                self.vertical_fov
            )));
        }
        if self.width < 16 || self.height < 16 {
            return Err(RenderError::InvalidCamera(format!(
                "resolution must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.near_clip > 0.0) || !self.near_clip.is_finite() {
            return Err(RenderError::InvalidCamera(format!("near_clip must be positive, got {}", self.near_clip)));
        }
        if !self.pose.origin.is_finite() {
            return Err(RenderError::InvalidCamera("pose is not finite".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / math::tan(0.5 * math::rad(self.vertical_fov))
    }

    /// World direction through the centre of pixel `(x, y)`, with unit
    /// component along the optical axis.
    pub fn pixel_dir(&self, x: u32, y: u32) -> Vec3 {
        let f = self.focal();
        let u = (x as f64 + 0.5 - 0.5 * self.width as f64) / f;
        let v = (y as f64 + 0.5 - 0.5 * self.height as f64) / f;
        self.pose.dir_to_world(Vec3::new(u, v, 1.0))
    }
}

/// Headlight shading: `albedo · |n·v| / (1 + (d/d0)²)` with `d` the distance
/// from the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadingParams {
    /// Falloff distance, mm.
    pub d0: f64,
    pub wall_albedo: f64,
    /// End caps stand in for airway that continues beyond the model, so they
    /// render black by default.
    pub cap_albedo: f64,
}

impl Default for ShadingParams {
    fn default() -> Self {
        ShadingParams {
            d0: 20.0,
            wall_albedo: 1.0,
            cap_albedo: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    /// z-depth, `INFINITY` on a miss.
    pub depth: f64,
    pub intensity: f64,
    pub hit: bool,
}

pub fn render_pixel(accel: &RayAccelerator, cam: &Camera, shading: &ShadingParams, x: u32, y: u32) -> PixelSample {
    let ray = Ray::new(cam.pose.origin, cam.pixel_dir(x, y));
    match accel.closest_hit(&ray, cam.near_clip, f64::INFINITY) {
        None => PixelSample {
            depth: f64::INFINITY,
            intensity: 0.0,
            hit: false,
        },
        Some(hit) => {
            let len = ray.dir.norm();
            let dist = hit.t * len;
            let view = ray.dir / len;
            let n = accel.shading_normal(&hit);
            let albedo = if accel.is_cap[hit.triangle as usize] {
                shading.cap_albedo
            } else {
                shading.wall_albedo
            };
            let q = dist / shading.d0;
            let intensity = (albedo * n.dot(view).abs() / (1.0 + q * q)).clamp(0.0, 1.0);
            PixelSample {
                depth: hit.t,
                intensity,
                hit: true,
            }
        }
    }
}

/// One rendered frame. Miss pixels have `hit = false`, infinite depth and
/// zero disparity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSample {
    pub image: Map,
    pub depth: Map,
    pub disparity: Map,
    pub hit: Grid<bool>,
    pub pose: Frame,
    pub frame_index: u64,
}

impl FrameSample {
    /// Assembles a frame from per-pixel samples in row-major order.
    pub fn from_pixels(width: usize, height: usize, pixels: &[PixelSample], pose: Frame, frame_index: u64) -> Self {
        FrameSample {
            image: Grid::from_vec(width, height, pixels.iter().map(|p| p.intensity).collect()),
            depth: Grid::from_vec(width, height, pixels.iter().map(|p| p.depth).collect()),
            disparity: Grid::from_vec(
                width,
                height,
                pixels.iter().map(|p| if p.hit { 1.0 / p.depth } else { 0.0 }).collect(),
            ),
            hit: Grid::from_vec(width, height, pixels.iter().map(|p| p.hit).collect()),
            pose,
            frame_index,
        }
    }

    pub fn miss_count(&self) -> usize {
        self.hit.data.iter().filter(|h| !**h).count()
    }
}

/// Renders row `y` into `out`.
pub fn render_row(accel: &RayAccelerator, cam: &Camera, shading: &ShadingParams, y: u32, out: &mut [PixelSample]) {
    for (x, px) in out.iter_mut().enumerate() {
        *px = render_pixel(accel, cam, shading, x as u32, y);
    }
}

/// Renders every pixel, keeping misses flagged in the frame.
pub fn render_frame_unchecked(
    accel: &RayAccelerator,
    cam: &Camera,
    shading: &ShadingParams,
    frame_index: u64,
) -> Result<FrameSample, RenderError> {
    cam.validate()?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let blank = PixelSample {
        depth: 0.0,
        intensity: 0.0,
        hit: false,
    };
    let mut pixels = alloc::vec![blank; w * h];
    for (y, row) in pixels.chunks_mut(w).enumerate() {
        render_row(accel, cam, shading, y as u32, row);
    }
    Ok(FrameSample::from_pixels(w, h, &pixels, cam.pose, frame_index))
}

/// Renders a frame from inside the lumen. Any escaping primary ray means the
/// camera is outside the surface.
pub fn render_frame(
    accel: &RayAccelerator,
    cam: &Camera,
    shading: &ShadingParams,
    frame_index: u64,
) -> Result<FrameSample, RenderError> {
    let frame = render_frame_unchecked(accel, cam, shading, frame_index)?;
    match frame.miss_count() {
        0 => Ok(frame),
        escaped => Err(RenderError::Placement { escaped }),
    }
}
