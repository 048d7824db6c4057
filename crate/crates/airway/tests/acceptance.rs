//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use airway::cli::{camera_paths, checked_mesh, render_settings};
use airway::config::{parse_override, RunConfig};
use airway::core::airway::{curvature_radius, sample_tree, AirwayTree, GenerationParams};
use airway::core::grid::{Grid, Map};
use airway::core::math::Vec3;
use airway::core::mesh::{tessellate, validate_mesh, TessellationParams, TriangleMesh};
use airway::core::metrics::*;
use airway::core::render::{build_accelerator, render_frame, Ray, RayAccelerator};
use airway::dataset::{render_dataset, DatasetManifest, MANIFEST_FILE};
use airway::eval::{evaluate_bundle, load_eval_bundle, BundleSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Report {
    failed: usize,
}

impl Report {
    fn run(&mut self, id: &str, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".into()));
        let took = t0.elapsed();
        let slow = limit.is_some_and(|l| took > l);
        let (pass, detail) = match outcome {
            Ok(d) if slow => (false, format!("{d}; over the {:?} limit", limit.unwrap())),
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if !pass {
            self.failed += 1;
        }
        let limit = limit.map_or_else(String::new, |l| format!(" / {:?}", l));
        println!(
            "criterion {id}: {} {title}: {detail} [{:.2?}{limit}]",
            if pass { "PASS" } else { "FAIL" },
            took
        );
    }
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let d: f64 = r.random_range(0.1..30.0);
        let phi: f64 = r.random_range(0.5..120.0);
        let got = curvature_radius(d, phi).map_err(|e| e.to_string())?;
        worst = worst.max((got - d / (2.0 * phi.to_radians().sin())).abs());
    }
    check(worst < 1e-9, format!("max error {worst:.2e} mm over 10^4 pairs"))
}

// ---------------------------------------------------------------- 2

fn clearance(phi: f64, la: f64, lb: f64) -> f64 {
    let ua = Vec3::new(phi.sin(), 0.0, phi.cos());
    let ub = Vec3::new(-phi.sin(), 0.0, phi.cos());
    let (b0, b1) = (ub * (0.5 * lb), ub * lb);
    let d = b1 - b0;
    (0..=2000)
        .map(|i| {
            let p = ua * (0.5 * la * (1.0 + i as f64 / 2000.0));
            let t = ((p - b0).dot(d) / d.dot(d)).clamp(0.0, 1.0);
            (p - (b0 + d * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest half-angle (degrees) at which the distal halves of two daughter
/// axes clear each other by the mean diameter.
fn phi_min(d_a: f64, d_b: f64, la: f64, lb: f64) -> f64 {
    let need = 0.5 * (d_a + d_b);
    let half_pi = std::f64::consts::FRAC_PI_2;
    if clearance(half_pi, la, lb) < need {
        return 90.0;
    }
    let (mut lo, mut hi) = (0.0, half_pi);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if clearance(mid, la, lb) >= need {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi.to_degrees()
}

fn check_tree(t: &AirwayTree) -> Result<(), String> {
    if t.segments.len() != 31 || t.bifurcations.len() != 15 {
        return Err(format!("{} segments, {} bifurcations", t.segments.len(), t.bifurcations.len()));
    }
    let [lo, hi] = t.params.h_range;
    for s in &t.segments[1..] {
        let p = &t.segments[s.parent_id.unwrap() as usize];
        let h = s.diameter / p.diameter;
        if !(h >= lo - 1e-12 && h <= hi + 1e-12 && s.diameter < p.diameter) {
            return Err(format!("segment {} diameter ratio {h}", s.id));
        }
    }
    for b in &t.bifurcations {
        let (ia, ib) = t.children(b.parent_id).ok_or("bifurcation without children")?;
        let (sa, sb) = (&t.segments[ia as usize], &t.segments[ib as usize]);
        let oracle = phi_min(sa.diameter, sb.diameter, sa.length, sb.length);
        for phi in [b.phi_a, b.phi_b] {
            if phi < oracle - 1e-3 || phi > 120.0 {
                return Err(format!("bifurcation at {}: angle {phi} outside [{oracle}, 120]", b.parent_id));
            }
        }
    }
    Ok(())
}

fn criterion_2() -> Outcome {
    for seed in 1..=100 {
        let t = sample_tree(&GenerationParams::with_generations(5, seed)).map_err(|e| format!("seed {seed}: {e}"))?;
        check_tree(&t).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok("seeds 1-100: 31 segments, 15 bifurcations, ratios and angles in range".into())
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut triangles = 0;
    for k in 0..50u64 {
        let g = 2 + (k % 5) as u32;
        let t = sample_tree(&GenerationParams::with_generations(g, 1000 + k)).map_err(|e| e.to_string())?;
        let m = tessellate(&t, &TessellationParams::default()).map_err(|e| e.to_string())?;
        let r = validate_mesh(&m);
        let ok = r.watertight() && r.winding_consistent() && r.euler_characteristic == 2 && r.self_intersections.is_empty() && r.passes();
        if !ok {
            return Err(format!("tree {k} (g{g}): {r:?}"));
        }
        triangles += m.triangles.len();
    }
    Ok(format!("50 trees of 2-6 generations, {triangles} triangles, all closed, consistent, Euler 2, no self-intersections"))
}

// ---------------------------------------------------------------- 4

fn unit(r: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Exhaustive closest hit: every triangle, lowest index wins ties.
fn brute_force(accel: &RayAccelerator, ray: &Ray) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for i in 0..accel.triangles.len() as u32 {
        if let Some((t, _)) = ray.intersect(&accel.triangle(i)) {
            if best.is_none_or(|(_, bt)| t < bt) {
                best = Some((i, t));
            }
        }
    }
    best
}

fn criterion_4() -> Outcome {
    let mut straight = GenerationParams::with_generations(1, 0);
    straight.root_diameter = 10.0;
    let cylinder = tessellate(
        &airway::core::airway::assemble_tree(&straight, 30.0, &[]).unwrap(),
        &TessellationParams { ring_segments: 16, rings_per_unit_length: 1.0, ..TessellationParams::default() },
    )
    .unwrap();
    // the exhaustive oracle is O(triangles) per ray, so the meshes stay small
    let coarse = TessellationParams { ring_segments: 12, rings_per_unit_length: 0.25, bifurcation_rings: 6 };
    let meshes: Vec<TriangleMesh> = vec![
        cylinder,
        tessellate(&sample_tree(&GenerationParams::with_generations(3, 8)).unwrap(), &coarse).unwrap(),
        tessellate(&sample_tree(&GenerationParams::with_generations(4, 2)).unwrap(), &coarse).unwrap(),
    ];
    let mut sizes = Vec::new();
    let mut hits = 0;
    for (k, mesh) in meshes.iter().enumerate() {
        let accel = build_accelerator(mesh).map_err(|e| e.to_string())?;
        let b = mesh.bounds();
        let mut r = ChaCha8Rng::seed_from_u64(40 + k as u64);
        for i in 0..100_000 {
            let o = Vec3::new(
                r.random_range(b.min.x..=b.max.x),
                r.random_range(b.min.y..=b.max.y),
                r.random_range(b.min.z..=b.max.z),
            );
            let ray = Ray::new(o, unit(&mut r));
            let fast = accel.closest_hit(&ray, 0.0, f64::INFINITY).map(|h| (h.triangle, h.t));
            match (fast, brute_force(&accel, &ray)) {
                (None, None) => {}
                (Some((ta, da)), Some((tb, db))) if ta == tb && (da - db).abs() <= 1e-9 * db => hits += 1,
                (a, b) => return Err(format!("mesh {k}, ray {i}: bvh {a:?} vs brute force {b:?}")),
            }
        }
        sizes.push(mesh.triangles.len());
    }
    Ok(format!("3 x 10^5 rays on meshes of {sizes:?} triangles agree ({hits} hits)"))
}

// ---------------------------------------------------------------- 5, 6

fn ref_loss(d: &[f64], m: &[bool], eps: f64) -> f64 {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..d.len() {
        let w = if m[i] { 1.0 } else { 0.0 };
        si += d[i] * w;
        ni += w;
        so += d[i] * (1.0 - w);
        no += 1.0 - w;
    }
    (si / (ni + eps) - so / (no + eps)).max(0.0)
}

fn ref_adse(d: &[f64], m: &[bool], eps: f64) -> (f64, f64) {
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let total = d.iter().filter(|&&v| v == lo).count() as f64;
    let inside = (0..d.len()).filter(|&i| d[i] == lo && m[i]).count() as f64;
    let pick = |want: bool| -> Vec<f64> { (0..d.len()).filter(|&i| m[i] == want).map(|i| d[i]).collect() };
    let (a, b) = (pick(true), pick(false));
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let sd = (b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / b.len() as f64).sqrt();
    (inside / (total + eps), (ma - mb) / (sd + eps))
}

fn ref_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn ref_classical(p: &[f64], g: &[f64]) -> [f64; 5] {
    let n = p.len() as f64;
    let mut acc = [0.0; 5];
    for i in 0..p.len() {
        acc[0] += (p[i] - g[i]).abs() / g[i];
        acc[1] += (p[i] - g[i]).powi(2) / g[i];
        acc[2] += (p[i] - g[i]).powi(2);
        acc[3] += (p[i].ln() - g[i].ln()).powi(2);
        acc[4] += ((p[i] / g[i]).max(g[i] / p[i]) < 1.25) as u8 as f64;
    }
    [acc[0] / n, acc[1] / n, (acc[2] / n).sqrt(), (acc[3] / n).sqrt(), acc[4] / n]
}

fn arr(c: &ClassicalResult) -> [f64; 5] {
    [c.abs_rel, c.sq_rel, c.rmse, c.rmse_log, c.delta]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

fn random_case(seed: u64) -> (Map, Map, Grid<bool>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let gt: Vec<f64> = (0..1024).map(|_| r.random_range(0.5..80.0)).collect();
    let pred: Vec<f64> = gt.iter().map(|g| g * r.random_range(0.6..1.6)).collect();
    let mut m: Vec<bool> = (0..1024).map(|_| r.random_bool(0.3)).collect();
    m[0] = true;
    m[1] = false;
    m[2] = false;
    (Grid::from_vec(32, 32, gt), Grid::from_vec(32, 32, pred), Grid::from_vec(32, 32, m))
}

fn criterion_5() -> Outcome {
    let eps = DEFAULT_EPSILON;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (g, p, m) = random_case(seed);
        let disp = p.map(|v| 1.0 / v);
        let loss = airway_structure_loss(&disp, &m, eps).map_err(|e| e.to_string())?;
        worst = worst.max(rel(loss, ref_loss(&disp.data, &m.data, eps)));
        let a = adse_frame(&disp, &m, None, &AdseOptions::default())?;
        let (rr, z) = ref_adse(&disp.data, &m.data, eps);
        worst = worst.max(rel(a.r_in_lumen, rr)).max(rel(a.z_lumen_outside, z));
        let v = all_valid(&g);
        let (aligned, s) = median_align(&p, &g, &v).map_err(|e| e.to_string())?;
        let rs = ref_median(&g.data) / ref_median(&p.data);
        worst = worst.max(rel(s, rs));
        for i in 0..aligned.len() {
            worst = worst.max(rel(aligned.data[i], p.data[i] * rs));
        }
        let c = classical_metrics(&p, &g, &v).map_err(|e| e.to_string())?;
        for (x, y) in arr(&c).iter().zip(ref_classical(&p.data, &g.data)) {
            worst = worst.max(rel(*x, y));
        }
    }
    // hand-worked cases
    let m: Vec<bool> = (0..10_000).map(|i| i % 100 < 50).collect();
    let d: Vec<f64> = m.iter().map(|&b| if b { 0.8 } else { 0.2 }).collect();
    let loss = airway_structure_loss(&Grid::from_vec(100, 100, d), &Grid::from_vec(100, 100, m), eps).unwrap();
    let mut zd = vec![10.0; 4];
    zd.extend([30.0, 70.0, 30.0, 70.0, 30.0, 70.0]);
    let zm: Vec<bool> = (0..10).map(|i| i < 4).collect();
    let z = adse_frame(&Grid::from_vec(10, 1, zd), &Grid::from_vec(10, 1, zm), None, &AdseOptions::default())?.z_lumen_outside;
    let rmse = classical_metrics(
        &Grid::from_vec(2, 1, vec![2.0, 3.0]),
        &Grid::from_vec(2, 1, vec![1.0, 4.0]),
        &Grid::filled(2, 1, true),
    )
    .unwrap()
    .rmse;
    let hand = (loss - 0.6).abs() < 1e-6 && (z + 2.0).abs() < 1e-6 && (rmse - 1.0).abs() < 1e-12;
    check(
        worst < 1e-9 && hand,
        format!("max relative deviation {worst:.1e} on 100 inputs; loss {loss:.6}, Z {z:.6}, rmse {rmse}"),
    )
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut flips = 0;
    for seed in 0..100 {
        let (g, p, m) = random_case(seed);
        let v = all_valid(&g);
        let base = arr(&classical_aligned(&p, &g, &v).map_err(|e| e.to_string())?);
        for k in [0.1, 3.0, 1000.0] {
            let scaled = arr(&classical_aligned(&p.map(|x| k * x), &g, &v).map_err(|e| e.to_string())?);
            for (a, b) in base.iter().zip(scaled) {
                worst = worst.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
            }
        }
        let disp = p.map(|x| 1.0 / x);
        let a0 = adse_frame(&disp, &m, None, &AdseOptions::default())?;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let (a, b) = (r.random_range(0.01..100.0), r.random_range(-50.0..50.0));
            let a1 = adse_frame(&disp.map(|x| a * x + b), &m, None, &AdseOptions::default())?;
            if (a0.local_pass, a0.contrast_pass) != (a1.local_pass, a1.contrast_pass) {
                flips += 1;
            }
        }
    }
    check(
        worst <= 1e-12 && flips == 0,
        format!("max relative change {worst:.1e} under k in {{0.1, 3, 1000}}; {flips} ADSE flag changes under 500 affine maps"),
    )
}

// ---------------------------------------------------------------- 7, 8, 9

fn config(out: &Path, sets: &[String]) -> RunConfig {
    let mut all = vec![format!("output_dir=\"{}\"", out.display())];
    all.extend_from_slice(sets);
    let o: Vec<_> = all.iter().map(|s| parse_override(s).unwrap()).collect();
    RunConfig::load(None, &[], &o).unwrap()
}

fn render(cfg: &RunConfig) -> Result<DatasetManifest, String> {
    let tree = sample_tree(&cfg.generation_params()).map_err(|e| e.to_string())?;
    let mesh = checked_mesh(cfg, &tree).map_err(|e| e.to_string())?;
    let paths = camera_paths(cfg, &tree, &mesh).map_err(|e| e.to_string())?;
    render_dataset(&tree, &mesh, &paths, &render_settings(cfg), &cfg.output_dir).map_err(|e| e.to_string())
}

fn self_consistency_sets(threads: usize) -> Vec<String> {
    [
        "seed=1",
        "generation.generations=6",
        "render.camera.width=256",
        "render.camera.height=256",
        "render.paths=1",
        "segmentation.threshold=\"otsu\"",
        "shading.d0=10.0",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([format!("threads={threads}")])
    .collect()
}

fn self_consistency(dir: &Path, threads: usize) -> Result<(DatasetManifest, MetricsReport), String> {
    let cfg = config(dir, &self_consistency_sets(threads));
    let manifest = render(&cfg)?;
    let bundle = load_eval_bundle(&BundleSpec::new(dir)).map_err(|e| e.to_string())?;
    let report = evaluate_bundle(&bundle, &cfg.metrics.eval_options(), threads).map_err(|e| e.to_string())?;
    Ok((manifest, report))
}

fn criterion_7(dir: &Path) -> Outcome {
    let (m, r) = self_consistency(dir, 0)?;
    let (la, dc) = (r.local_accu.unwrap_or(0.0), r.depth_con.unwrap_or(0.0));
    check(
        m.frames.len() >= 200 && la >= 95.0 && dc >= 95.0,
        format!(
            "{} frames at 256x256, {} skipped; LocalAccu {la:.2}, DepthCon {dc:.2}",
            m.frames.len(),
            r.skipped.len()
        ),
    )
}

fn depth_bytes(dir: &Path, m: &DatasetManifest) -> Vec<Vec<u8>> {
    m.frames.iter().map(|f| std::fs::read(dir.join(&f.depth_path)).unwrap()).collect()
}

fn criterion_8(base: &Path) -> Outcome {
    let first = base.join("c7");
    let m0 = DatasetManifest::read(&first.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let bundle = load_eval_bundle(&BundleSpec::new(&first)).map_err(|e| e.to_string())?;
    let r0 = evaluate_bundle(&bundle, &Default::default(), 0).map_err(|e| e.to_string())?;
    let d0 = depth_bytes(&first, &m0);
    for threads in [1, 8] {
        let dir = base.join(format!("c8_{threads}"));
        let (m, r) = self_consistency(&dir, threads)?;
        if depth_bytes(&dir, &m) != d0 {
            return Err(format!("depth files differ at {threads} threads"));
        }
        if r != r0 {
            return Err(format!("MetricsReport differs at {threads} threads"));
        }
    }
    Ok(format!("{} depth files and the report identical at 1 and 8 threads", d0.len()))
}

fn criterion_9(base: &Path) -> Outcome {
    let mut total = 0;
    let mut trees = 0;
    while total < 9_500 {
        let seed = 100 + trees;
        let dir = base.join(format!("tree_{seed}"));
        let sets: Vec<String> = [
            format!("seed={seed}"),
            "generation.generations=6".into(),
            "render.camera.width=128".into(),
            "render.camera.height=128".into(),
            "render.paths=8".into(),
            "render.depth_png_scale=0".into(),
            "segmentation.threshold=\"otsu\"".into(),
            "shading.d0=10.0".into(),
        ]
        .into();
        let m = render(&config(&dir, &sets))?;
        let on_disk = DatasetManifest::read(&dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
        if on_disk != m {
            return Err(format!("tree {seed}: manifest on disk differs"));
        }
        let problems = m.problems(&dir);
        if !problems.is_empty() {
            return Err(format!("tree {seed}: {}", problems.join("; ")));
        }
        let images = std::fs::read_dir(dir.join("images")).map_err(|e| e.to_string())?.count();
        let depths = std::fs::read_dir(dir.join("depth")).map_err(|e| e.to_string())?.count();
        if images != m.frames.len() || depths != m.frames.len() {
            return Err(format!("tree {seed}: {} frames listed, {images} images, {depths} depth maps", m.frames.len()));
        }
        total += m.frames.len();
        trees += 1;
        std::fs::remove_dir_all(&dir).ok();
    }
    Ok(format!("{total} image/depth pairs at 128x128 over {trees} trees, manifests complete"))
}

fn smoke_baseline(base: &Path) -> Outcome {
    let sets: Vec<String> = ["render.camera.width=256", "render.camera.height=256", "render.max_frames_per_path=100"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let m = render(&config(&base.join("smoke"), &sets))?;
    check(m.frames.len() == 100, format!("{} frames at 256x256", m.frames.len()))
}

fn frame_512_baseline(base: &Path) -> Outcome {
    let cfg = config(&base.join("f512"), &["render.paths=1".to_string()]);
    let tree = sample_tree(&cfg.generation_params()).map_err(|e| e.to_string())?;
    let mesh = checked_mesh(&cfg, &tree).map_err(|e| e.to_string())?;
    let paths = camera_paths(&cfg, &tree, &mesh).map_err(|e| e.to_string())?;
    let accel = build_accelerator(&mesh).map_err(|e| e.to_string())?;
    let mut intrinsics = render_settings(&cfg).camera;
    intrinsics.width = 512;
    intrinsics.height = 512;
    let cam = intrinsics.camera(paths[0].poses[0]).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let frame = render_frame(&accel, &cam, &cfg.shading, 0).map_err(|e| e.to_string())?;
    let took = t0.elapsed();
    // measured 0.20 s on one core, pinned at +50%
    check(
        took <= Duration::from_millis(300) && frame.miss_count() == 0,
        format!("one 512x512 frame on {} triangles in {:.0} ms", mesh.triangles.len(), took.as_secs_f64() * 1e3),
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments; only a `--list` needs handling.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let tmp = tempfile::tempdir().expect("temporary directory");
    let base = tmp.path();
    let mut rep = Report { failed: 0 };
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    rep.run("1", "curvature radius exactness", Some(Duration::from_secs(1)), criterion_1);
    rep.run("2", "tree structure", Some(Duration::from_secs(10)), criterion_2);
    rep.run("3", "mesh validity", min(2), criterion_3);
    rep.run("4", "ray oracle", min(1), criterion_4);
    rep.run("5", "metric oracle", Some(Duration::from_secs(10)), criterion_5);
    rep.run("6", "scale invariance", Some(Duration::from_secs(10)), criterion_6);
    rep.run("7", "end-to-end self-consistency", min(5), || criterion_7(&base.join("c7")));
    rep.run("8", "determinism", None, || criterion_8(base));
    rep.run("9", "dataset-scale smoke", min(60), || criterion_9(&base.join("c9")));
    rep.run("-", "render smoke baseline", Some(Duration::from_secs(30)), || smoke_baseline(base));
    rep.run("-", "512x512 frame baseline", None, || frame_512_baseline(base));
    if rep.failed > 0 {
        println!("acceptance: {} failed", rep.failed);
        std::process::exit(1);
    }
    println!("acceptance: all passed");
}
