//! Rendering fly-throughs to disk and the dataset manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use airway_core::airway::{AirwayTree, GenerationParams};
use airway_core::math::Frame;
use airway_core::mesh::{TessellationParams, TriangleMesh};
use airway_core::metrics::Convention;
use airway_core::render::{build_accelerator, render_frame, Camera, CameraPath, ShadingParams};
use airway_core::segmentation::{airway_mask, otsu_threshold, DEFAULT_THRESHOLD};

use crate::error::{Error, Result};
use crate::formats;

pub const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Camera intrinsics shared by every frame of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    /// Degrees.
    pub vertical_fov: f64,
    /// mm.
    pub near_clip: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            width: airway_core::render::DEFAULT_RESOLUTION,
            height: airway_core::render::DEFAULT_RESOLUTION,
            vertical_fov: airway_core::render::DEFAULT_FOV,
            near_clip: airway_core::render::DEFAULT_NEAR_CLIP,
        }
    }
}

impl CameraIntrinsics {
    pub fn camera(&self, pose: Frame) -> Result<Camera> {
        Ok(Camera::new(self.width, self.height, self.vertical_fov, pose, self.near_clip)?)
    }
}

/// Intensity threshold for lumen masks: a fixed value or Otsu per image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    Fixed(f64),
    Otsu,
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Fixed(DEFAULT_THRESHOLD)
    }
}

impl ThresholdMode {
    pub fn threshold_for(&self, gray: &airway_core::grid::Map) -> f64 {
        match *self {
            ThresholdMode::Fixed(t) => t,
            ThresholdMode::Otsu => otsu_threshold(gray),
        }
    }
}

impl Serialize for ThresholdMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ThresholdMode::Fixed(t) => s.serialize_f64(*t),
            ThresholdMode::Otsu => s.serialize_str("otsu"),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Value(f64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Value(t) => Ok(ThresholdMode::Fixed(t)),
            Raw::Name(n) if n.eq_ignore_ascii_case("otsu") => Ok(ThresholdMode::Otsu),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "threshold must be a number or \"otsu\", got \"{n}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_index: u64,
    pub path_index: usize,
    pub pose_index: usize,
    /// Segment the camera's centreline station lies in.
    pub segment_id: u32,
    pub image_path: String,
    pub depth_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_png_path: Option<String>,
    /// What `depth_path` holds.
    pub disparity_convention: Convention,
    pub pose_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub path_index: usize,
    pub pose_path: String,
    pub route: Vec<u32>,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetadata {
    pub params: GenerationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tessellation: Option<TessellationParams>,
    /// SHA-256 of the canonical JSON of everything that shapes the pixels.
    pub params_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    pub depth_units: String,
    /// 16-bit PNG depth holds `round(depth_mm · scale)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_png_scale: Option<f64>,
    pub camera: CameraIntrinsics,
    pub shading: ShadingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_threshold: Option<ThresholdMode>,
    pub generation: GenerationMetadata,
    pub paths: Vec<PathEntry>,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<DatasetManifest> {
        let m: DatasetManifest = formats::read_json(path)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                None,
                format!("unsupported manifest format_version \"{}\"", m.format_version),
            ));
        }
        Ok(m)
    }

    /// Every problem found: missing files, non-monotone frame indices.
    pub fn problems(&self, root: &Path) -> Vec<String> {
        let mut out = Vec::new();
        if self.format_version != MANIFEST_VERSION {
            out.push(format!("unsupported format_version \"{}\"", self.format_version));
        }
        let mut check = |frame: u64, what: &str, rel: &str| {
            if !root.join(rel).is_file() {
                out.push(format!("frame {frame}: {what} {rel} does not exist"));
            }
        };
        for f in &self.frames {
            check(f.frame_index, "image", &f.image_path);
            check(f.frame_index, "depth", &f.depth_path);
            check(f.frame_index, "pose file", &f.pose_path);
            if let Some(p) = &f.depth_png_path {
                check(f.frame_index, "16-bit depth", p);
            }
            if let Some(p) = &f.mask_path {
                check(f.frame_index, "mask", p);
            }
        }
        for w in self.frames.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                out.push(format!("frame indices not increasing at {}", w[1].frame_index));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_index: u64,
    pub station: f64,
    pub segment_id: u32,
    /// Row-major camera-to-world matrix; columns are image right, image down,
    /// optical axis and position.
    pub matrix: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub format_version: String,
    pub path_index: usize,
    pub route: Vec<u32>,
    pub poses: Vec<PoseRecord>,
}

/// Output options of [`render_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub camera: CameraIntrinsics,
    pub shading: ShadingParams,
    /// Also write 16-bit PNG depth at this scale.
    pub depth_png_scale: Option<f64>,
    /// Also write threshold lumen masks.
    pub masks: Option<ThresholdMode>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub tessellation: Option<TessellationParams>,
    pub seeds: BTreeMap<String, u64>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            camera: CameraIntrinsics::default(),
            shading: ShadingParams::default(),
            depth_png_scale: Some(100.0),
            masks: None,
            threads: 0,
            tessellation: None,
            seeds: BTreeMap::new(),
        }
    }
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}

fn params_hash(tree: &AirwayTree, s: &RenderSettings) -> String {
    let canonical = serde_json::json!({
        "generation": tree.params,
        "tessellation": s.tessellation,
        "camera": s.camera,
        "shading": s.shading,
        "depth_png_scale": s.depth_png_scale,
        "masks": s.masks,
        "seeds": s.seeds,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct Job {
    frame_index: u64,
    path_index: usize,
    pose_index: usize,
    pose: Frame,
    segment_id: u32,
}

/// Renders every pose of every path and writes images, depth, optional
/// masks, per-path pose files and `manifest.json` under `out_dir`. Output
/// bytes depend only on the inputs, never on the thread count.
pub fn render_dataset(
    tree: &AirwayTree,
    mesh: &TriangleMesh,
    paths: &[CameraPath],
    settings: &RenderSettings,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    settings.camera.camera(Frame::identity())?;
    if let Some(scale) = settings.depth_png_scale {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("depth_png_scale must be positive, got {scale}")));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let accel = build_accelerator(mesh)?;

    let mut jobs = Vec::new();
    let mut path_entries = Vec::new();
    let mut next = 0u64;
    for (pi, path) in paths.iter().enumerate() {
        let pose_rel = format!("poses/path_{pi:03}.json");
        let mut records = Vec::new();
        for (k, pose) in path.poses.iter().enumerate() {
            jobs.push(Job {
                frame_index: next,
                path_index: pi,
                pose_index: k,
                pose: *pose,
                segment_id: path.pose_segments[k],
            });
            records.push(PoseRecord {
                frame_index: next,
                station: path.stations[k],
                segment_id: path.pose_segments[k],
                matrix: pose.to_matrix(),
            });
            next += 1;
        }
        formats::write_json(
            &out_dir.join(&pose_rel),
            &PoseFile {
                format_version: MANIFEST_VERSION.into(),
                path_index: pi,
                route: path.target_segment_ids.clone(),
                poses: records,
            },
        )?;
        path_entries.push(PathEntry {
            path_index: pi,
            pose_path: pose_rel,
            route: path.target_segment_ids.clone(),
            frames: path.poses.len(),
        });
    }

    let render_one = |job: &Job| -> Result<FrameEntry> {
        let cam = settings.camera.camera(job.pose)?;
        let frame = render_frame(&accel, &cam, &settings.shading, job.frame_index)?;
        let stem = format!("{:06}", job.frame_index);
        let image_path = format!("images/{stem}.png");
        let depth_path = format!("depth/{stem}.pfm");
        formats::write_png8(&out_dir.join(&image_path), &frame.image)?;
        formats::write_pfm(&out_dir.join(&depth_path), &frame.depth)?;
        let depth_png_path = match settings.depth_png_scale {
            Some(scale) => {
                let rel = format!("depth16/{stem}.png");
                formats::write_png16_depth(&out_dir.join(&rel), &frame.depth, scale)?;
                Some(rel)
            }
            None => None,
        };
        let mask_path = match settings.masks {
            Some(mode) => {
                let rel = format!("masks/{stem}.png");
                let mask = airway_mask(&frame.image, mode.threshold_for(&frame.image));
                formats::write_mask_png(&out_dir.join(&rel), &mask)?;
                Some(rel)
            }
            None => None,
        };
        Ok(FrameEntry {
            frame_index: job.frame_index,
            path_index: job.path_index,
            pose_index: job.pose_index,
            segment_id: job.segment_id,
            image_path,
            depth_path,
            depth_png_path,
            disparity_convention: Convention::Depth,
            pose_path: path_entries[job.path_index].pose_path.clone(),
            mask_path,
        })
    };
    let pool = thread_pool(settings.threads)?;
    let frames: Vec<FrameEntry> = pool
        .install(|| jobs.par_iter().map(render_one).collect::<Vec<_>>())
        .into_iter()
        .collect::<Result<_>>()?;

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION.into(),
        depth_units: "mm".into(),
        depth_png_scale: settings.depth_png_scale,
        camera: settings.camera,
        shading: settings.shading,
        mask_threshold: settings.masks,
        generation: GenerationMetadata {
            params: tree.params.clone(),
            tessellation: settings.tessellation,
            params_hash: params_hash(tree, settings),
            seeds: settings.seeds.clone(),
        },
        paths: path_entries,
        frames,
    };
    formats::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Resolves a manifest argument: a file, or a directory holding
/// `manifest.json`.
pub fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}
