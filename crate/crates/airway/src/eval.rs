//! Loading prediction / ground-truth / mask bundles and evaluating them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use airway_core::grid::{Grid, Map};
use airway_core::metrics::{
    adse_frame, aggregate, airway_structure_loss, as_disparity, classical_aligned, classical_metrics, AdseOptions,
    Convention, FrameRecord, MetricsReport,
};
use airway_core::segmentation::{airway_mask, LumenMask};

use crate::dataset::{manifest_path, thread_pool, DatasetManifest, ThresholdMode};
use crate::error::{Error, Result};
use crate::formats;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalFrame {
    pub id: String,
    pub prediction: Map,
    pub convention: Convention,
    /// Ground-truth depth, mm.
    pub gt_depth: Option<Map>,
    pub lumen: Option<LumenMask>,
    pub valid: Option<Grid<bool>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalBundle {
    pub frames: Vec<EvalFrame>,
    /// Frames left out of a partial bundle, with the reason.
    pub dropped: Vec<(String, String)>,
}

/// Where a bundle comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleSpec {
    /// Prediction manifest (file or dataset directory) or a directory with a
    /// `pred/` sub-directory.
    pub pred: PathBuf,
    /// Ground-truth manifest; defaults to the prediction manifest itself when
    /// `pred` is a manifest.
    pub gt: Option<PathBuf>,
    /// Overrides the prediction convention (directory layouts default to
    /// disparity).
    pub pred_convention: Option<Convention>,
    /// Threshold used when masks are derived from images.
    pub threshold: ThresholdMode,
    /// 16-bit PNG depth scale for directory layouts.
    pub png_scale: f64,
    pub allow_partial: bool,
}

impl BundleSpec {
    pub fn new(pred: impl Into<PathBuf>) -> Self {
        BundleSpec {
            pred: pred.into(),
            gt: None,
            pred_convention: None,
            threshold: ThresholdMode::default(),
            png_scale: 100.0,
            allow_partial: false,
        }
    }
}

fn shape_problem<T>(id: &str, what: &str, pred: &Map, other: &Grid<T>) -> Option<String> {
    (!pred.same_shape(other)).then(|| {
        format!(
            "frame {id}: {what} is {}x{} but the prediction is {}x{}",
            other.width, other.height, pred.width, pred.height
        )
    })
}

/// Loads and validates a bundle. Every missing member and dimension mismatch
/// is listed; the bundle is rejected unless `allow_partial`, in which case
/// the affected frames are dropped.
pub fn load_eval_bundle(spec: &BundleSpec) -> Result<EvalBundle> {
    let candidates = if spec.pred.is_dir() && spec.pred.join("pred").is_dir() {
        load_directory(spec)?
    } else {
        load_manifests(spec)?
    };
    let mut bundle = EvalBundle::default();
    let mut problems = Vec::new();
    for c in candidates {
        match c {
            Ok(frame) => {
                let mut issues = Vec::new();
                if let Some(g) = &frame.gt_depth {
                    issues.extend(shape_problem(&frame.id, "ground truth", &frame.prediction, g));
                }
                if let Some(m) = &frame.lumen {
                    issues.extend(shape_problem(&frame.id, "lumen mask", &frame.prediction, &m.mask));
                }
                if let Some(v) = &frame.valid {
                    issues.extend(shape_problem(&frame.id, "validity mask", &frame.prediction, v));
                }
                if frame.gt_depth.is_none() && frame.lumen.is_none() {
                    issues.push(format!("frame {}: neither ground truth nor a lumen mask", frame.id));
                }
                if issues.is_empty() {
                    bundle.frames.push(frame);
                } else {
                    for i in &issues {
                        bundle.dropped.push((frame.id.clone(), i.clone()));
                    }
                    problems.extend(issues);
                }
            }
            Err((id, msg)) => {
                bundle.dropped.push((id, msg.clone()));
                problems.push(msg);
            }
        }
    }
    if !problems.is_empty() && !spec.allow_partial {
        return Err(Error::Ingestion(problems));
    }
    if bundle.frames.is_empty() {
        return Err(Error::Ingestion(vec!["bundle has no usable frames".into()]));
    }
    Ok(bundle)
}

type Candidate = std::result::Result<EvalFrame, (String, String)>;

fn load_manifests(spec: &BundleSpec) -> Result<Vec<Candidate>> {
    let pred_path = manifest_path(&spec.pred);
    let pred_root = pred_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let pred = DatasetManifest::read(&pred_path)?;
    let (gt, gt_root) = match &spec.gt {
        Some(g) => {
            let p = manifest_path(g);
            let root = p.parent().unwrap_or(Path::new(".")).to_path_buf();
            (DatasetManifest::read(&p)?, root)
        }
        None => (pred.clone(), pred_root.clone()),
    };
    let gt_by_index: BTreeMap<u64, _> = gt.frames.iter().map(|f| (f.frame_index, f)).collect();
    let scale = |m: &DatasetManifest| m.depth_png_scale.unwrap_or(spec.png_scale);
    let mut out = Vec::new();
    for f in &pred.frames {
        let id = format!("{}", f.frame_index);
        let Some(g) = gt_by_index.get(&f.frame_index) else {
            out.push(Err((id.clone(), format!("frame {id}: missing ground truth"))));
            continue;
        };
        let prediction = formats::read_depth(&pred_root.join(&f.depth_path), scale(&pred))?;
        let gt_depth = match g.disparity_convention {
            Convention::Depth => formats::read_depth(&gt_root.join(&g.depth_path), scale(&gt))?,
            Convention::Disparity => {
                let d = formats::read_depth(&gt_root.join(&g.depth_path), scale(&gt))?;
                d.map(|&v| if v > 0.0 { 1.0 / v } else { f64::INFINITY })
            }
        };
        let lumen = if let Some(m) = g.mask_path.as_ref().map(|m| gt_root.join(m)) {
            Some(formats::read_mask_png(&m)?)
        } else if let Some(m) = f.mask_path.as_ref().map(|m| pred_root.join(m)) {
            Some(formats::read_mask_png(&m)?)
        } else {
            let img = formats::read_gray_png(&gt_root.join(&g.image_path))?;
            Some(airway_mask(&img, spec.threshold.threshold_for(&img)))
        };
        out.push(Ok(EvalFrame {
            id,
            prediction,
            convention: spec.pred_convention.unwrap_or(f.disparity_convention),
            gt_depth: Some(gt_depth),
            lumen,
            valid: None,
        }));
    }
    Ok(out)
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(s.to_string(), p);
            }
        }
    }
    Ok(out)
}

/// Directory layout: `pred/`, and any of `gt/`, `mask/`, `image/`, `valid/`,
/// matched by file stem.
fn load_directory(spec: &BundleSpec) -> Result<Vec<Candidate>> {
    let root = &spec.pred;
    let pred = stems(&root.join("pred"))?;
    let gt = stems(&root.join("gt"))?;
    let masks = stems(&root.join("mask"))?;
    let images = stems(&root.join("image"))?;
    let valid = stems(&root.join("valid"))?;
    let (has_gt, has_masks, has_images) = (!gt.is_empty(), !masks.is_empty(), !images.is_empty());
    let mut out = Vec::new();
    for (id, p) in &pred {
        let missing = |what: &str| Err((id.clone(), format!("frame {id}: missing {what}")));
        let prediction = formats::read_depth(p, spec.png_scale)?;
        let gt_depth = match (has_gt, gt.get(id)) {
            (true, None) => {
                out.push(missing("ground truth"));
                continue;
            }
            (_, Some(g)) => Some(formats::read_depth(g, spec.png_scale)?),
            (false, None) => None,
        };
        let lumen = match (has_masks, masks.get(id)) {
            (true, None) => {
                out.push(missing("mask"));
                continue;
            }
            (_, Some(m)) => Some(formats::read_mask_png(m)?),
            (false, None) => match (has_images, images.get(id)) {
                (true, None) => {
                    out.push(missing("image"));
                    continue;
                }
                (_, Some(i)) => {
                    let img = formats::read_gray_png(i)?;
                    Some(airway_mask(&img, spec.threshold.threshold_for(&img)))
                }
                (false, None) => None,
            },
        };
        let valid = match valid.get(id) {
            Some(v) => Some(formats::read_mask_png(v)?.mask),
            None => None,
        };
        out.push(Ok(EvalFrame {
            id: id.clone(),
            prediction,
            convention: spec.pred_convention.unwrap_or(Convention::Disparity),
            gt_depth,
            lumen,
            valid,
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub adse: AdseOptions,
    /// Median-align predictions before the classical metrics.
    pub median_align: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            adse: AdseOptions::default(),
            median_align: true,
        }
    }
}

pub fn evaluate_frame(frame: &EvalFrame, opts: &EvalOptions) -> FrameRecord {
    let disparity = as_disparity(&frame.prediction, frame.convention);
    let mut rec = FrameRecord {
        frame_id: frame.id.clone(),
        adse: None,
        classical: None,
        skipped: None,
    };
    if let Some(lumen) = &frame.lumen {
        match adse_frame(&disparity, &lumen.mask, frame.valid.as_ref(), &opts.adse) {
            Ok(r) => rec.adse = Some(r),
            Err(reason) => {
                rec.skipped = Some(reason);
                return rec;
            }
        }
    }
    if let Some(gt) = &frame.gt_depth {
        let pred_depth = match frame.convention {
            Convention::Depth => frame.prediction.clone(),
            Convention::Disparity => frame.prediction.map(|&v| 1.0 / v),
        };
        let valid = Grid::from_vec(
            gt.width,
            gt.height,
            (0..gt.len())
                .map(|i| {
                    let g = gt.data[i];
                    g > 0.0 && g.is_finite() && frame.valid.as_ref().map_or(true, |v| v.data[i])
                })
                .collect(),
        );
        let result = if opts.median_align {
            classical_aligned(&pred_depth, gt, &valid)
        } else {
            classical_metrics(&pred_depth, gt, &valid)
        };
        match result {
            Ok(c) => rec.classical = Some(c),
            Err(e) => {
                rec.skipped = Some(e.to_string());
                rec.adse = None;
            }
        }
    }
    rec
}

/// Evaluates every frame (in parallel, order preserved) and aggregates.
pub fn evaluate_bundle(bundle: &EvalBundle, opts: &EvalOptions, threads: usize) -> Result<MetricsReport> {
    let pool = thread_pool(threads)?;
    let records: Vec<FrameRecord> = pool.install(|| bundle.frames.par_iter().map(|f| evaluate_frame(f, opts)).collect());
    Ok(aggregate(records)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epsilon: f64,
    pub frames: Vec<(String, f64)>,
    /// Mean of the per-map values.
    pub loss: f64,
}

/// Airway structure loss of every prediction (as disparity) against its
/// lumen mask.
pub fn bundle_loss(bundle: &EvalBundle, epsilon: f64) -> Result<LossReport> {
    let mut frames = Vec::new();
    for f in &bundle.frames {
        let Some(lumen) = &f.lumen else {
            return Err(Error::Ingestion(vec![format!("frame {}: no lumen mask", f.id)]));
        };
        let disparity = as_disparity(&f.prediction, f.convention);
        frames.push((f.id.clone(), airway_structure_loss(&disparity, &lumen.mask, epsilon)?));
    }
    let loss = frames.iter().map(|f| f.1).sum::<f64>() / frames.len() as f64;
    Ok(LossReport { epsilon, frames, loss })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

/// One row per frame.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut s = String::from(
        "frame_id,skipped,r_in_lumen,z_lumen_outside,local_pass,contrast_pass,abs_rel,sq_rel,rmse,rmse_log,delta,alignment_scale\n",
    );
    for f in &report.frames {
        let a = f.adse.as_ref();
        let c = f.classical.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            f.frame_id,
            f.skipped.as_deref().map(|r| format!("\"{}\"", r.replace('"', "'"))).unwrap_or_default(),
            opt(a.map(|a| a.r_in_lumen)),
            opt(a.map(|a| a.z_lumen_outside)),
            a.map(|a| a.local_pass.to_string()).unwrap_or_default(),
            a.map(|a| a.contrast_pass.to_string()).unwrap_or_default(),
            opt(c.map(|c| c.abs_rel)),
            opt(c.map(|c| c.sq_rel)),
            opt(c.map(|c| c.rmse)),
            opt(c.map(|c| c.rmse_log)),
            opt(c.map(|c| c.delta)),
            opt(c.map(|c| c.alignment_scale)),
        );
    }
    s
}

pub fn report_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "frames: {} evaluated, {} skipped",
        report.evaluated_frames,
        report.skipped.len()
    );
    if let (Some(dc), Some(la)) = (report.depth_con, report.local_accu) {
        let _ = writeln!(s, "ADSE over {} frames", report.adse_frames);
        let _ = writeln!(s, "  DepthCon   {dc:>8.2} %");
        let _ = writeln!(s, "  LocalAccu  {la:>8.2} %");
    }
    if let Some(c) = &report.classical {
        let _ = writeln!(s, "classical over {} frames", c.frames);
        let _ = writeln!(s, "  Abs Rel    {:>10.5}", c.abs_rel);
        let _ = writeln!(s, "  Sq Rel     {:>10.5}", c.sq_rel);
        let _ = writeln!(s, "  RMSE       {:>10.5}", c.rmse);
        let _ = writeln!(s, "  RMSE log   {:>10.5}", c.rmse_log);
        let _ = writeln!(s, "  delta      {:>10.2} %", 100.0 * c.delta);
    }
    for (id, why) in &report.skipped {
        let _ = writeln!(s, "skipped {id}: {why}");
    }
    s
}
