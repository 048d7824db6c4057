//! Intensity-threshold lumen masks: `mask = gray < t`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::grid::{Grid, Map};

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];
pub const DEFAULT_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    IntensityThreshold,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumenMask {
    pub mask: Grid<bool>,
    /// Threshold the mask was computed with; NaN for external masks.
    pub threshold_used: f64,
    pub source: MaskSource,
}

impl LumenMask {
    pub fn external(mask: Grid<bool>) -> Self {
        LumenMask {
            mask,
            threshold_used: f64::NAN,
            source: MaskSource::External,
        }
    }

    /// External mask from 8-bit levels: nonzero is lumen.
    pub fn from_levels(width: usize, height: usize, levels: &[u8]) -> Self {
        Self::external(Grid::from_vec(width, height, levels.iter().map(|&v| v != 0).collect()))
    }

    pub fn count(&self) -> usize {
        self.mask.data.iter().filter(|m| **m).count()
    }

    /// 0/255 levels for writing.
    pub fn to_levels(&self) -> Vec<u8> {
        self.mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect()
    }
}

pub fn luminance(rgb: &Grid<[f64; 3]>) -> Map {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    rgb.map(|p| wr * p[0] + wg * p[1] + wb * p[2])
}

/// Lumen mask `gray < t`, with `t` clamped to `[0, 1]`.
pub fn airway_mask(gray: &Map, t: f64) -> LumenMask {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    LumenMask {
        mask: gray.map(|&g| g < t),
        threshold_used: t,
        source: MaskSource::IntensityThreshold,
    }
}

/// Otsu threshold over a 256-bin histogram of `[0, 1]`. The result is the
/// upper edge of the last dark bin, so `gray < t` selects the dark class.
pub fn otsu_threshold(gray: &Map) -> f64 {
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    let mut n = 0u64;
    for &g in &gray.data {
        if g.is_finite() {
            let b = ((g.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
            hist[b] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let total: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0usize);
    for (k, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = n as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (total - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    (best_k + 1) as f64 / BINS as f64
}
