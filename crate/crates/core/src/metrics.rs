//! Airway structure loss, airway depth structure evaluation (ADSE) and
//! classical depth metrics.
//!
//! Structural metrics work on disparity maps, where the lumen is the
//! minimum. Depth maps go through [`to_disparity`] first.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::grid::{Grid, Map};
use crate::math;

pub const DEFAULT_EPSILON: f64 = 1e-7;
/// `local_pass` requires `r_in_lumen` strictly above this.
pub const LOCAL_PASS_THRESHOLD: f64 = 0.99;
/// `contrast_pass` requires `z_lumen_outside` strictly below this.
pub const CONTRAST_PASS_THRESHOLD: f64 = -1.0;
pub const DELTA_THRESHOLD: f64 = 1.25;

/// Loss weights of the translation network's training objective. Recorded
/// for downstream trainers; nothing here optimises them.
pub const LAMBDA_ADV: f64 = 5.0;
pub const LAMBDA_CYCLE: f64 = 1.0;
pub const LAMBDA_IDENTITY: f64 = 1.0;
pub const LAMBDA_AIRWAY: f64 = 0.5;

fn check_shape<A, B>(a: &Grid<A>, b: &Grid<B>, what: &str) -> Result<(), MetricsError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(MetricsError::Dimension(format!(
            "{what}: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )))
    }
}

/// Whether a map holds disparity or depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Disparity,
    Depth,
}

/// `1/depth`; non-positive or non-finite depths map to NaN.
pub fn to_disparity(depth: &Map) -> Map {
    depth.map(|&d| if d > 0.0 && d.is_finite() { 1.0 / d } else { f64::NAN })
}

pub fn as_disparity(map: &Map, convention: Convention) -> Map {
    match convention {
        Convention::Disparity => map.clone(),
        Convention::Depth => to_disparity(map),
    }
}

/// Airway structure loss for one disparity map:
/// `max(0, mean_airway - mean_non_airway)`, each mean guarded by `epsilon`.
pub fn airway_structure_loss(disparity: &Map, mask: &Grid<bool>, epsilon: f64) -> Result<f64, MetricsError> {
    check_shape(disparity, mask, "disparity vs mask")?;
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0.0, 0.0, 0.0);
    for (&d, &m) in disparity.data.iter().zip(&mask.data) {
        if m {
            s_in += d;
            n_in += 1.0;
        } else {
            s_out += d;
            n_out += 1.0;
        }
    }
    let d_airway = s_in / (n_in + epsilon);
    let d_non = s_out / (n_out + epsilon);
    Ok((d_airway - d_non).max(0.0))
}

/// Mean of the per-map losses.
pub fn batch_airway_structure_loss(items: &[(&Map, &Grid<bool>)], epsilon: f64) -> Result<f64, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty("empty batch".into()));
    }
    let mut sum = 0.0;
    for (d, m) in items {
        sum += airway_structure_loss(d, m, epsilon)?;
    }
    Ok(sum / items.len() as f64)
}

/// Pixels with `value <= min + tol` among the `valid` finite pixels.
pub fn minimum_set(map: &Map, valid: Option<&Grid<bool>>, tol: f64) -> (Grid<bool>, f64) {
    let ok = |i: usize| valid.map_or(true, |v| v.data[i]) && map.data[i].is_finite();
    let mut min = f64::INFINITY;
    for (i, &d) in map.data.iter().enumerate() {
        if ok(i) && d < min {
            min = d;
        }
    }
    let set = Grid::from_vec(
        map.width,
        map.height,
        (0..map.len()).map(|i| ok(i) && map.data[i] <= min + tol).collect(),
    );
    (set, min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdseOptions {
    pub epsilon: f64,
    /// Equality tolerance for the minimum set; 0 is exact equality.
    pub min_tolerance: f64,
    pub sigma: SigmaKind,
}

impl Default for AdseOptions {
    fn default() -> Self {
        AdseOptions {
            epsilon: DEFAULT_EPSILON,
            min_tolerance: 0.0,
            sigma: SigmaKind::Population,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdseFrameResult {
    pub r_in_lumen: f64,
    pub z_lumen_outside: f64,
    pub local_pass: bool,
    pub contrast_pass: bool,
    pub d_min: f64,
    pub min_set_size: usize,
    pub min_tolerance: f64,
    pub mean_in: f64,
    pub mean_out: f64,
    pub sigma_out: f64,
}

/// ADSE for one disparity map and lumen mask. `Err` carries the reason the
/// frame has to be skipped.
pub fn adse_frame(
    disparity: &Map,
    lumen: &Grid<bool>,
    valid: Option<&Grid<bool>>,
    opts: &AdseOptions,
) -> Result<AdseFrameResult, String> {
    if !disparity.same_shape(lumen) || valid.is_some_and(|v| !v.same_shape(lumen)) {
        return Err(format!(
            "dimension mismatch: disparity {}x{}, mask {}x{}",
            disparity.width, disparity.height, lumen.width, lumen.height
        ));
    }
    let ok = |i: usize| valid.map_or(true, |v| v.data[i]) && disparity.data[i].is_finite();
    let (mut n_in, mut s_in, mut n_out, mut s_out) = (0usize, 0.0, 0usize, 0.0);
    for (i, &d) in disparity.data.iter().enumerate() {
        if !ok(i) {
            continue;
        }
        if lumen.data[i] {
            n_in += 1;
            s_in += d;
        } else {
            n_out += 1;
            s_out += d;
        }
    }
    if n_in == 0 {
        return Err("lumen mask is empty".into());
    }
    if n_out < 2 {
        return Err(format!("only {n_out} pixels outside the lumen; need at least 2"));
    }
    let mean_in = s_in / n_in as f64;
    let mean_out = s_out / n_out as f64;
    let mut ss = 0.0;
    for (i, &d) in disparity.data.iter().enumerate() {
        if ok(i) && !lumen.data[i] {
            ss += (d - mean_out) * (d - mean_out);
        }
    }
    let dof = match opts.sigma {
        SigmaKind::Population => n_out as f64,
        SigmaKind::Sample => (n_out - 1) as f64,
    };
    let sigma_out = math::sqrt(ss / dof);
    let (set, d_min) = minimum_set(disparity, valid, opts.min_tolerance);
    let (mut n_min, mut n_min_in) = (0usize, 0usize);
    for (&s, &m) in set.data.iter().zip(&lumen.data) {
        if s {
            n_min += 1;
            if m {
                n_min_in += 1;
            }
        }
    }
    let r = n_min_in as f64 / (n_min as f64 + opts.epsilon);
    let z = (mean_in - mean_out) / (sigma_out + opts.epsilon);
    Ok(AdseFrameResult {
        r_in_lumen: r,
        z_lumen_outside: z,
        local_pass: r > LOCAL_PASS_THRESHOLD,
        contrast_pass: z < CONTRAST_PASS_THRESHOLD,
        d_min,
        min_set_size: n_min,
        min_tolerance: opts.min_tolerance,
        mean_in,
        mean_out,
        sigma_out,
    })
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Scales `pred` by `median(gt) / median(pred)` over the valid pixels.
/// Invalid pixels are scaled too.
pub fn median_align(pred: &Map, gt: &Map, valid: &Grid<bool>) -> Result<(Map, f64), MetricsError> {
    check_shape(pred, gt, "prediction vs ground truth")?;
    check_shape(pred, valid, "prediction vs validity mask")?;
    let mut p = Vec::new();
    let mut g = Vec::new();
    for i in 0..pred.len() {
        if valid.data[i] {
            p.push(pred.data[i]);
            g.push(gt.data[i]);
        }
    }
    if p.is_empty() {
        return Err(MetricsError::Empty("no valid pixels to align".into()));
    }
    let mp = median(&mut p);
    let mg = median(&mut g);
    if !(mp > 0.0) || !mp.is_finite() {
        return Err(MetricsError::Alignment(format!("median prediction is {mp}")));
    }
    if !(mg > 0.0) || !mg.is_finite() {
        return Err(MetricsError::Alignment(format!("median ground truth is {mg}")));
    }
    let scale = mg / mp;
    Ok((pred.map(|&v| v * scale), scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalResult {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta: f64,
    pub alignment_scale: f64,
    pub valid_pixels: usize,
    /// Valid pixels with a non-positive prediction, left out of `rmse_log`
    /// and `delta`.
    pub nonpositive_pixels: usize,
}

/// Standard depth metrics over the valid pixels with positive ground truth.
pub fn classical_metrics(pred: &Map, gt: &Map, valid: &Grid<bool>) -> Result<ClassicalResult, MetricsError> {
    check_shape(pred, gt, "prediction vs ground truth")?;
    check_shape(pred, valid, "prediction vs validity mask")?;
    let (mut n, mut abs_rel, mut sq_rel, mut sq) = (0usize, 0.0, 0.0, 0.0);
    let (mut n_pos, mut sq_log, mut good) = (0usize, 0.0, 0usize);
    for i in 0..pred.len() {
        let (p, g) = (pred.data[i], gt.data[i]);
        if !valid.data[i] || !(g > 0.0) || !g.is_finite() || !p.is_finite() {
            continue;
        }
        n += 1;
        let e = p - g;
        abs_rel += e.abs() / g;
        sq_rel += e * e / g;
        sq += e * e;
        if p > 0.0 {
            n_pos += 1;
            let l = math::ln(p) - math::ln(g);
            sq_log += l * l;
            if (p / g).max(g / p) < DELTA_THRESHOLD {
                good += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::Empty("no valid pixels with positive ground truth".into()));
    }
    let nf = n as f64;
    let (rmse_log, delta) = if n_pos > 0 {
        (math::sqrt(sq_log / n_pos as f64), good as f64 / n_pos as f64)
    } else {
        (f64::NAN, 0.0)
    };
    Ok(ClassicalResult {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: math::sqrt(sq / nf),
        rmse_log,
        delta,
        alignment_scale: 1.0,
        valid_pixels: n,
        nonpositive_pixels: n - n_pos,
    })
}

/// Median alignment followed by [`classical_metrics`].
pub fn classical_aligned(pred: &Map, gt: &Map, valid: &Grid<bool>) -> Result<ClassicalResult, MetricsError> {
    let (aligned, scale) = median_align(pred, gt, valid)?;
    let mut r = classical_metrics(&aligned, gt, valid)?;
    r.alignment_scale = scale;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub adse: Option<AdseFrameResult>,
    pub classical: Option<ClassicalResult>,
    /// Set when the frame could not be evaluated.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalMeans {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: Vec<FrameRecord>,
    /// Percentage of ADSE frames with `contrast_pass`.
    pub depth_con: Option<f64>,
    /// Percentage of ADSE frames with `local_pass`.
    pub local_accu: Option<f64>,
    pub classical: Option<ClassicalMeans>,
    pub evaluated_frames: usize,
    pub adse_frames: usize,
    pub skipped: Vec<(String, String)>,
}

/// Per-frame pass percentages and per-frame means of the classical metrics.
pub fn aggregate(frames: Vec<FrameRecord>) -> Result<MetricsReport, MetricsError> {
    let mut skipped = Vec::new();
    let (mut adse_n, mut con, mut loc) = (0usize, 0usize, 0usize);
    let mut sums = [0.0f64; 5];
    let mut cls_n = 0usize;
    let mut log_n = 0usize;
    for f in &frames {
        if let Some(reason) = &f.skipped {
            skipped.push((f.frame_id.clone(), reason.clone()));
            continue;
        }
        if let Some(a) = &f.adse {
            adse_n += 1;
            con += a.contrast_pass as usize;
            loc += a.local_pass as usize;
        }
        if let Some(c) = &f.classical {
            cls_n += 1;
            sums[0] += c.abs_rel;
            sums[1] += c.sq_rel;
            sums[2] += c.rmse;
            if c.rmse_log.is_finite() {
                sums[3] += c.rmse_log;
                log_n += 1;
            }
            sums[4] += c.delta;
        }
    }
    let evaluated = frames.len() - skipped.len();
    if evaluated == 0 || (adse_n == 0 && cls_n == 0) {
        return Err(MetricsError::AllSkipped);
    }
    let pct = |k: usize| 100.0 * k as f64 / adse_n as f64;
    let classical = (cls_n > 0).then(|| {
        let n = cls_n as f64;
        ClassicalMeans {
            abs_rel: sums[0] / n,
            sq_rel: sums[1] / n,
            rmse: sums[2] / n,
            rmse_log: if log_n > 0 { sums[3] / log_n as f64 } else { f64::NAN },
            delta: sums[4] / n,
            frames: cls_n,
        }
    });
    Ok(MetricsReport {
        frames,
        depth_con: (adse_n > 0).then(|| pct(con)),
        local_accu: (adse_n > 0).then(|| pct(loc)),
        classical,
        evaluated_frames: evaluated,
        adse_frames: adse_n,
        skipped,
    })
}

/// All-true validity mask matching a map.
pub fn all_valid(map: &Map) -> Grid<bool> {
    Grid::from_vec(map.width, map.height, vec![true; map.len()])
}
