//! `airway` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use airway_core::airway::{sample_tree, AirwayTree};
use airway_core::mesh::{tessellate, validate_mesh, TriangleMesh, ValidationReport};
use airway_core::metrics::Convention;
use airway_core::render::{build_accelerator, generate_flythrough, CameraPath, Route};

use crate::config::{env_overrides, parse_override, RunConfig};
use crate::dataset::{render_dataset, RenderSettings};
use crate::error::{Error, Result};
use crate::eval::{bundle_loss, evaluate_bundle, load_eval_bundle, report_csv, report_table, BundleSpec};
use crate::formats;

pub const TREE_FILE: &str = "tree.json";

#[derive(Debug, Parser)]
#[command(name = "airway", version, about = "Synthetic airway trees, fly-through datasets and depth metrics")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set render.step_mm=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an airway tree and tessellate it.
    Generate(GenerateArgs),
    /// Render fly-through frames, depth maps, masks and a manifest.
    Render(RenderArgs),
    /// Evaluate predictions with the structural and classical metrics.
    Evaluate(EvalArgs),
    /// Airway structure loss of predictions against lumen masks.
    Loss(EvalArgs),
    /// Check a mesh for watertightness, winding and self-intersections.
    ValidateMesh(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    #[arg(long)]
    pub generations: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub tree: TreeArgs,
    /// Mesh formats to write (repeatable).
    #[arg(long = "mesh-format", value_enum)]
    pub mesh_format: Vec<MeshFormat>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeshFormat {
    Obj,
    Stl,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub tree_args: TreeArgs,
    /// Render this tree JSON instead of sampling one.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Square resolution in pixels.
    #[arg(long)]
    pub resolution: Option<u32>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Number of seeded routes.
    #[arg(long)]
    pub paths: Option<u32>,
    /// Cap on poses per route.
    #[arg(long = "max-frames")]
    pub max_frames: Option<usize>,
    /// Mask threshold, a value in [0, 1] or `otsu`.
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub d0: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConventionArg {
    Disparity,
    Depth,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction manifest, dataset directory or bundle directory.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth manifest or dataset directory.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long = "pred-convention", value_enum)]
    pub pred_convention: Option<ConventionArg>,
    /// Mask threshold for image-derived masks, a value in [0, 1] or `otsu`.
    #[arg(long)]
    pub threshold: Option<String>,
    /// Evaluate the complete frames of a partial bundle.
    #[arg(long = "allow-partial")]
    pub allow_partial: bool,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// OBJ mesh, or a tree JSON to tessellate.
    pub input: PathBuf,
}

fn quoted(s: &str) -> toml::Value {
    toml::Value::String(s.to_string())
}

fn path_value(p: &Path) -> toml::Value {
    quoted(&p.to_string_lossy())
}

fn threshold_value(raw: &str) -> Result<toml::Value> {
    if raw.eq_ignore_ascii_case("otsu") {
        return Ok(quoted("otsu"));
    }
    raw.parse::<f64>()
        .map(toml::Value::Float)
        .map_err(|_| Error::Config(format!("threshold must be a number or \"otsu\", got \"{raw}\"")))
}

fn tree_overrides(t: &TreeArgs, o: &mut Vec<(String, toml::Value)>) {
    if let Some(g) = t.generations {
        o.push(("generation.generations".into(), toml::Value::Integer(g.into())));
    }
    if let Some(s) = t.seed {
        o.push(("seed".into(), toml::Value::Integer(s as i64)));
    }
}

impl Cli {
    /// Config overrides from flags, applied after the file and environment.
    pub fn overrides(&self) -> Result<Vec<(String, toml::Value)>> {
        let mut o = Vec::new();
        for s in &self.set {
            o.push(parse_override(s)?);
        }
        if let Some(t) = self.threads {
            o.push(("threads".into(), toml::Value::Integer(t as i64)));
        }
        if let Some(p) = &self.out {
            o.push(("output_dir".into(), path_value(p)));
        }
        match &self.command {
            Command::Generate(a) => {
                tree_overrides(&a.tree, &mut o);
                if !a.mesh_format.is_empty() {
                    let names = a
                        .mesh_format
                        .iter()
                        .map(|f| quoted(match f {
                            MeshFormat::Obj => "obj",
                            MeshFormat::Stl => "stl",
                        }))
                        .collect();
                    o.push(("generate.mesh_formats".into(), toml::Value::Array(names)));
                }
            }
            Command::Render(a) => {
                tree_overrides(&a.tree_args, &mut o);
                if let Some(t) = &a.tree {
                    o.push(("render.tree".into(), path_value(t)));
                }
                if let Some(r) = a.resolution {
                    o.push(("render.camera.width".into(), toml::Value::Integer(r.into())));
                    o.push(("render.camera.height".into(), toml::Value::Integer(r.into())));
                }
                if let Some(s) = a.step {
                    o.push(("render.step_mm".into(), toml::Value::Float(s)));
                }
                if let Some(p) = a.paths {
                    o.push(("render.paths".into(), toml::Value::Integer(p.into())));
                }
                if let Some(m) = a.max_frames {
                    o.push(("render.max_frames_per_path".into(), toml::Value::Integer(m as i64)));
                }
                if let Some(t) = &a.threshold {
                    o.push(("segmentation.threshold".into(), threshold_value(t)?));
                }
                if let Some(d) = a.d0 {
                    o.push(("shading.d0".into(), toml::Value::Float(d)));
                }
            }
            Command::Evaluate(a) | Command::Loss(a) => {
                if let Some(p) = &a.pred {
                    o.push(("evaluate.pred".into(), path_value(p)));
                }
                if let Some(p) = &a.gt {
                    o.push(("evaluate.gt".into(), path_value(p)));
                }
                if let Some(c) = a.pred_convention {
                    let name = match c {
                        ConventionArg::Disparity => "disparity",
                        ConventionArg::Depth => "depth",
                    };
                    o.push(("evaluate.pred_convention".into(), quoted(name)));
                }
                if let Some(t) = &a.threshold {
                    o.push(("segmentation.threshold".into(), threshold_value(t)?));
                }
                if a.allow_partial {
                    o.push(("evaluate.allow_partial".into(), toml::Value::Boolean(true)));
                }
                if let Some(e) = a.epsilon {
                    o.push(("metrics.epsilon".into(), toml::Value::Float(e)));
                }
            }
            Command::ValidateMesh(_) => {}
        }
        Ok(o)
    }
}

fn write_meshes(cfg: &RunConfig, mesh: &TriangleMesh) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for f in &cfg.generate.mesh_formats {
        let p = cfg.output_dir.join(format!("mesh.{f}"));
        match f.as_str() {
            "obj" => formats::write_obj(&p, mesh)?,
            _ => formats::write_stl(&p, mesh)?,
        }
        out.push(p);
    }
    Ok(out)
}

fn report_problems(r: &ValidationReport) -> String {
    format!(
        "{} boundary, {} non-manifold, {} inconsistent edges, {} degenerate triangles, {} self-intersections, Euler {}, volume {:.3}",
        r.boundary_edges.len(),
        r.nonmanifold_edges.len(),
        r.inconsistent_edges.len(),
        r.degenerate_triangles.len(),
        r.self_intersections.len(),
        r.euler_characteristic,
        r.signed_volume
    )
}

/// Tessellates and refuses meshes that fail validation.
pub fn checked_mesh(cfg: &RunConfig, tree: &AirwayTree) -> Result<TriangleMesh> {
    let mesh = tessellate(tree, &cfg.tessellation)?;
    let report = validate_mesh(&mesh);
    if !report.passes() {
        return Err(Error::InvalidMesh(report_problems(&report)));
    }
    Ok(mesh)
}

/// Fly-through paths for the configured routes.
pub fn camera_paths(cfg: &RunConfig, tree: &AirwayTree, mesh: &TriangleMesh) -> Result<Vec<CameraPath>> {
    let accel = build_accelerator(mesh)?;
    let routes: Vec<Route> = if cfg.render.routes.is_empty() {
        (0..cfg.render.paths as u64)
            .map(|k| Route::Seeded(cfg.seed.wrapping_add(k)))
            .collect()
    } else {
        cfg.render.routes.iter().map(|r| Route::Segments(r.clone())).collect()
    };
    let mut paths = Vec::new();
    for route in &routes {
        let mut p = generate_flythrough(tree, &accel, route, cfg.render.step_mm, &cfg.jitter)?;
        let cap = cfg.render.max_frames_per_path;
        if cap > 0 && p.poses.len() > cap {
            p.poses.truncate(cap);
            p.stations.truncate(cap);
            p.pose_segments.truncate(cap);
        }
        paths.push(p);
    }
    Ok(paths)
}

pub fn render_settings(cfg: &RunConfig) -> RenderSettings {
    let mut seeds = std::collections::BTreeMap::new();
    seeds.insert("run".to_string(), cfg.seed);
    seeds.insert("tree".to_string(), cfg.generation_params().seed);
    seeds.insert("jitter".to_string(), cfg.jitter.seed);
    RenderSettings {
        camera: cfg.render.camera,
        shading: cfg.shading,
        depth_png_scale: (cfg.render.depth_png_scale > 0.0).then_some(cfg.render.depth_png_scale),
        masks: cfg.render.masks.then_some(cfg.segmentation.threshold),
        threads: cfg.threads,
        tessellation: Some(cfg.tessellation),
        seeds,
    }
}

fn load_tree(cfg: &RunConfig) -> Result<AirwayTree> {
    match &cfg.render.tree {
        Some(p) => formats::read_json(p),
        None => Ok(sample_tree(&cfg.generation_params())?),
    }
}

fn bundle_spec(cfg: &RunConfig) -> Result<BundleSpec> {
    let pred = cfg
        .evaluate
        .pred
        .clone()
        .ok_or_else(|| Error::Config("no predictions given (--pred or evaluate.pred)".into()))?;
    let mut spec = BundleSpec::new(pred);
    spec.gt = cfg.evaluate.gt.clone();
    spec.pred_convention = cfg.evaluate.pred_convention;
    spec.threshold = cfg.segmentation.threshold;
    spec.png_scale = cfg.metrics.png_scale;
    spec.allow_partial = cfg.evaluate.allow_partial;
    Ok(spec)
}

/// What a command prints: a human summary and its JSON form.
pub struct Outcome {
    pub text: String,
    pub json: serde_json::Value,
    /// Non-zero when the command ran but found a validation failure.
    pub code: i32,
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Outcome> {
    let tree = sample_tree(&cfg.generation_params())?;
    let mesh = checked_mesh(cfg, &tree)?;
    let tree_path = cfg.output_dir.join(TREE_FILE);
    formats::write_json(&tree_path, &tree)?;
    let meshes = write_meshes(cfg, &mesh)?;
    let config_path = cfg.write_resolved(&cfg.output_dir)?;
    Ok(Outcome {
        text: format!(
            "{} segments, {} bifurcations, {} triangles -> {}",
            tree.segments.len(),
            tree.bifurcations.len(),
            mesh.triangles.len(),
            cfg.output_dir.display()
        ),
        json: json!({
            "tree": tree_path,
            "meshes": meshes,
            "config": config_path,
            "segments": tree.segments.len(),
            "bifurcations": tree.bifurcations.len(),
            "triangles": mesh.triangles.len(),
        }),
        code: 0,
    })
}

pub fn cmd_render(cfg: &RunConfig) -> Result<Outcome> {
    let tree = load_tree(cfg)?;
    let mesh = checked_mesh(cfg, &tree)?;
    let paths = camera_paths(cfg, &tree, &mesh)?;
    let manifest = render_dataset(&tree, &mesh, &paths, &render_settings(cfg), &cfg.output_dir)?;
    formats::write_json(&cfg.output_dir.join(TREE_FILE), &tree)?;
    let config_path = cfg.write_resolved(&cfg.output_dir)?;
    Ok(Outcome {
        text: format!(
            "{} frames over {} paths -> {}",
            manifest.frames.len(),
            manifest.paths.len(),
            cfg.output_dir.display()
        ),
        json: json!({
            "manifest": cfg.output_dir.join(crate::dataset::MANIFEST_FILE),
            "config": config_path,
            "frames": manifest.frames.len(),
            "paths": manifest.paths.len(),
        }),
        code: 0,
    })
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let bundle = load_eval_bundle(&bundle_spec(cfg)?)?;
    let report = evaluate_bundle(&bundle, &cfg.metrics.eval_options(), cfg.threads)?;
    let json_path = cfg.output_dir.join("metrics.json");
    formats::write_json(&json_path, &report)?;
    formats::write_text(&cfg.output_dir.join("metrics.csv"), &report_csv(&report))?;
    cfg.write_resolved(&cfg.output_dir)?;
    let mut text = report_table(&report);
    for (id, why) in &bundle.dropped {
        text.push_str(&format!("dropped {id}: {why}\n"));
    }
    Ok(Outcome {
        text,
        json: json!({
            "report": json_path,
            "depth_con": report.depth_con,
            "local_accu": report.local_accu,
            "classical": report.classical,
            "evaluated_frames": report.evaluated_frames,
            "skipped": report.skipped,
            "dropped": bundle.dropped,
        }),
        code: 0,
    })
}

pub fn cmd_loss(cfg: &RunConfig) -> Result<Outcome> {
    let bundle = load_eval_bundle(&bundle_spec(cfg)?)?;
    let loss = bundle_loss(&bundle, cfg.metrics.epsilon)?;
    formats::write_json(&cfg.output_dir.join("loss.json"), &loss)?;
    cfg.write_resolved(&cfg.output_dir)?;
    Ok(Outcome {
        text: format!("{}", loss.loss),
        json: serde_json::to_value(&loss).map_err(|e| Error::Config(e.to_string()))?,
        code: 0,
    })
}

pub fn cmd_validate_mesh(cfg: &RunConfig, input: &Path) -> Result<Outcome> {
    let mesh = if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let tree: AirwayTree = formats::read_json(input)?;
        tessellate(&tree, &cfg.tessellation)?
    } else {
        formats::read_obj(input)?
    };
    let r = validate_mesh(&mesh);
    let ok = r.passes();
    Ok(Outcome {
        text: format!("{}: {}", if ok { "valid" } else { "INVALID" }, report_problems(&r)),
        json: json!({
            "valid": ok,
            "watertight": r.watertight(),
            "winding_consistent": r.winding_consistent(),
            "normals_inward": r.normals_inward(),
            "boundary_edges": r.boundary_edges.len(),
            "nonmanifold_edges": r.nonmanifold_edges.len(),
            "inconsistent_edges": r.inconsistent_edges.len(),
            "degenerate_triangles": r.degenerate_triangles.len(),
            "self_intersections": r.self_intersections.len(),
            "euler_characteristic": r.euler_characteristic,
            "signed_volume": r.signed_volume,
        }),
        code: if ok { 0 } else { 2 },
    })
}

pub fn execute(cli: &Cli, env: &[(String, toml::Value)]) -> Result<Outcome> {
    let cfg = RunConfig::load(cli.config.as_deref(), env, &cli.overrides()?)?;
    match &cli.command {
        Command::Generate(_) => cmd_generate(&cfg),
        Command::Render(_) => cmd_render(&cfg),
        Command::Evaluate(_) => cmd_evaluate(&cfg),
        Command::Loss(_) => cmd_loss(&cfg),
        Command::ValidateMesh(a) => cmd_validate_mesh(&cfg, &a.input),
    }
}

/// Parses arguments, runs, prints, and returns the exit code.
pub fn run<I, T>(args: I, env: impl IntoIterator<Item = (String, String)>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let env = env_overrides(env);
    match execute(&cli, &env) {
        Ok(o) => {
            if cli.json {
                println!("{}", o.json);
            } else {
                print!("{}", o.text);
                if !o.text.ends_with('\n') {
                    println!();
                }
            }
            o.code
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error": e.to_string(), "exit_code": e.exit_code() }));
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `--pred-convention` values as core conventions.
impl From<ConventionArg> for Convention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Disparity => Convention::Disparity,
            ConventionArg::Depth => Convention::Depth,
        }
    }
}
