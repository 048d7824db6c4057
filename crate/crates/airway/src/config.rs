//! Run configuration: defaults, then a TOML file, then `AIRWAY_*`
//! environment variables, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use airway_core::airway::GenerationParams;
use airway_core::metrics::{AdseOptions, Convention, SigmaKind, DEFAULT_EPSILON};
use airway_core::mesh::TessellationParams;
use airway_core::render::{JitterParams, ShadingParams};

use crate::dataset::{CameraIntrinsics, ThresholdMode};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;

pub const ENV_PREFIX: &str = "AIRWAY_";
pub const RESOLVED_CONFIG_FILE: &str = "run_config.toml";

/// Tree parameters. Unset tables are filled from the default anatomy for
/// `generations` when the config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub generations: u32,
    /// Defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ld_ratio_per_gen: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_mean_per_gen: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root_diameter: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_sigma_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taper_steepness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taper_midpoint: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub carina_rounding_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clearance_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_backtracks: Option<u32>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            generations: 6,
            seed: None,
            ld_ratio_per_gen: None,
            l_mean_per_gen: None,
            h_range: None,
            root_diameter: None,
            phi_max: None,
            length_sigma_factor: None,
            taper_steepness: None,
            taper_midpoint: None,
            carina_rounding_fraction: None,
            clearance_factor: None,
            max_attempts: None,
            max_backtracks: None,
        }
    }
}

impl GenerationConfig {
    pub fn params(&self, run_seed: u64) -> GenerationParams {
        let mut p = GenerationParams::with_generations(self.generations, self.seed.unwrap_or(run_seed));
        if let Some(v) = &self.ld_ratio_per_gen {
            p.ld_ratio_per_gen = v.clone();
        }
        if let Some(v) = self.h_range {
            p.h_range = v;
        }
        if let Some(v) = self.root_diameter {
            p.root_diameter = v;
        }
        p.l_mean_per_gen = match &self.l_mean_per_gen {
            Some(v) => v.clone(),
            None if self.ld_ratio_per_gen.is_some() || self.h_range.is_some() || self.root_diameter.is_some() => {
                let h = p.h_range;
                GenerationParams::lengths_from_ratios(&p.ld_ratio_per_gen, p.root_diameter, 0.5 * (h[0] + h[1]))
            }
            None => p.l_mean_per_gen,
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { p.$f = v; })* };
        }
        set!(
            phi_max,
            length_sigma_factor,
            taper_steepness,
            taper_midpoint,
            carina_rounding_fraction,
            clearance_factor,
            max_attempts,
            max_backtracks
        );
        p
    }

    fn from_params(p: &GenerationParams) -> Self {
        GenerationConfig {
            generations: p.generations,
            seed: Some(p.seed),
            ld_ratio_per_gen: Some(p.ld_ratio_per_gen.clone()),
            l_mean_per_gen: Some(p.l_mean_per_gen.clone()),
            h_range: Some(p.h_range),
            root_diameter: Some(p.root_diameter),
            phi_max: Some(p.phi_max),
            length_sigma_factor: Some(p.length_sigma_factor),
            taper_steepness: Some(p.taper_steepness),
            taper_midpoint: Some(p.taper_midpoint),
            carina_rounding_fraction: Some(p.carina_rounding_fraction),
            clearance_factor: Some(p.clearance_factor),
            max_attempts: Some(p.max_attempts),
            max_backtracks: Some(p.max_backtracks),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Mesh files written next to the tree: any of "obj", "stl".
    pub mesh_formats: Vec<String>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            mesh_formats: vec!["obj".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Render an existing tree JSON instead of sampling one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<PathBuf>,
    pub camera: CameraIntrinsics,
    /// Pose spacing along the centreline, mm.
    pub step_mm: f64,
    /// Number of seeded root-to-leaf routes; route `k` uses seed `seed + k`.
    pub paths: u32,
    /// Explicit routes as segment ids; replace the seeded ones when given.
    pub routes: Vec<Vec<u32>>,
    /// Truncate each path to this many poses (0 keeps all).
    pub max_frames_per_path: usize,
    /// 16-bit PNG depth scale (0 disables the PNG copy).
    pub depth_png_scale: f64,
    /// Write threshold lumen masks alongside the images.
    pub masks: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            tree: None,
            camera: CameraIntrinsics::default(),
            step_mm: 1.0,
            paths: 1,
            routes: Vec::new(),
            max_frames_per_path: 0,
            depth_png_scale: 100.0,
            masks: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub threshold: ThresholdMode,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            threshold: ThresholdMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub epsilon: f64,
    pub min_tolerance: f64,
    pub sigma: SigmaKind,
    pub median_align: bool,
    pub png_scale: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            epsilon: DEFAULT_EPSILON,
            min_tolerance: 0.0,
            sigma: SigmaKind::Population,
            median_align: true,
            png_scale: 100.0,
        }
    }
}

impl MetricsConfig {
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            adse: AdseOptions {
                epsilon: self.epsilon,
                min_tolerance: self.min_tolerance,
                sigma: self.sigma,
            },
            median_align: self.median_align,
        }
    }
}

/// Inputs of `evaluate` and `loss`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Prediction manifest, dataset directory or bundle directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    /// Ground-truth manifest or dataset directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred_convention: Option<Convention>,
    pub allow_partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub generation: GenerationConfig,
    pub tessellation: TessellationParams,
    pub generate: GenerateConfig,
    pub render: RenderConfig,
    pub shading: ShadingParams,
    pub jitter: JitterParams,
    pub segmentation: SegmentationConfig,
    pub metrics: MetricsConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            threads: 0,
            generation: GenerationConfig::default(),
            tessellation: TessellationParams::default(),
            generate: GenerateConfig::default(),
            render: RenderConfig::default(),
            shading: ShadingParams::default(),
            jitter: JitterParams::default(),
            segmentation: SegmentationConfig::default(),
            metrics: MetricsConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a scalar the way TOML would, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `a.b.c = value` in a table, creating intermediate tables.
fn set_dotted(t: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in \"{key}\"")))?;
    let mut cur = t;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("\"{p}\" in \"{key}\" is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// One `key=value` override; the key is dotted (`render.step_mm=0.5`).
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override \"{s}\" is not key=value")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

/// Environment overrides: `AIRWAY_RENDER__STEP_MM=0.5` sets `render.step_mm`.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, toml::Value)> {
    let mut out: Vec<_> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            (!rest.is_empty()).then(|| (rest.to_ascii_lowercase().replace("__", "."), parse_value(&v)))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

impl RunConfig {
    /// Merges defaults, the file (if any), environment and flag overrides,
    /// then resolves every derived field.
    pub fn load(
        file: Option<&Path>,
        env: &[(String, toml::Value)],
        overrides: &[(String, toml::Value)],
    ) -> Result<RunConfig> {
        let mut table = toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file_table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, file_table);
        }
        for (k, v) in env.iter().chain(overrides) {
            set_dotted(&mut table, k, v.clone())?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve()
    }

    /// Fills derived fields and checks every parameter block.
    pub fn resolve(mut self) -> Result<RunConfig> {
        let params = self.generation.params(self.seed);
        params.validate()?;
        self.generation = GenerationConfig::from_params(&params);
        self.tessellation.validate()?;
        self.render.camera.camera(airway_core::math::Frame::identity())?;
        let r = &self.render;
        if !(r.step_mm > 0.0) || !r.step_mm.is_finite() {
            return Err(Error::Config(format!("render.step_mm must be positive, got {}", r.step_mm)));
        }
        if r.paths == 0 && r.routes.is_empty() {
            return Err(Error::Config("render.paths must be at least 1".into()));
        }
        if !(r.depth_png_scale >= 0.0) || !r.depth_png_scale.is_finite() {
            return Err(Error::Config(format!(
                "render.depth_png_scale must be non-negative, got {}",
                r.depth_png_scale
            )));
        }
        if !(self.shading.d0 > 0.0) {
            return Err(Error::Config(format!("shading.d0 must be positive, got {}", self.shading.d0)));
        }
        if let ThresholdMode::Fixed(t) = self.segmentation.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("segmentation.threshold must be in [0, 1], got {t}")));
            }
        }
        for f in &self.generate.mesh_formats {
            if f != "obj" && f != "stl" {
                return Err(Error::Config(format!("unknown mesh format \"{f}\"")));
            }
        }
        if !(self.metrics.epsilon > 0.0) {
            return Err(Error::Config(format!("metrics.epsilon must be positive, got {}", self.metrics.epsilon)));
        }
        Ok(self)
    }

    pub fn generation_params(&self) -> GenerationParams {
        self.generation.params(self.seed)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved config to `dir/run_config.toml`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        crate::formats::write_text(&path, &self.to_toml()?)?;
        Ok(path)
    }
}
