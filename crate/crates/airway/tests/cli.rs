use std::path::Path;
use std::process::{Command, Output};

use airway::core::grid::Grid;
use airway::core::segmentation::LumenMask;
use airway::dataset::{DatasetManifest, MANIFEST_FILE};
use airway::formats;

fn airway(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_airway"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn ok(o: &Output) -> String {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_str(&ok(o)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn without_output_dir(cfg: &str) -> String {
    cfg.lines().filter(|l| !l.starts_with("output_dir")).collect::<Vec<_>>().join("\n")
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&airway(&["generate", "--generations", "5", "--seed", "7", "--mesh-format", "obj", "--mesh-format", "stl", "--out", s(d.path())], &[]));
    }
    for f in ["tree.json", "mesh.obj", "mesh.stl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let ca = std::fs::read_to_string(a.path().join("run_config.toml")).unwrap();
    let cb = std::fs::read_to_string(b.path().join("run_config.toml")).unwrap();
    assert_eq!(without_output_dir(&ca), without_output_dir(&cb));
    let tree: airway::core::airway::AirwayTree = formats::read_json(&a.path().join("tree.json")).unwrap();
    assert_eq!(tree.segments.len(), 31);
}

#[test]
fn zero_generations_is_a_usage_error() {
    let o = airway(&["generate", "--generations", "0"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("generations"));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(airway(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(airway(&["render", "--resolution", "many"], &[]).status.code(), Some(1));
    assert_eq!(airway(&["evaluate"], &[]).status.code(), Some(1));
    assert_eq!(airway(&["--help"], &[]).status.code(), Some(0));
    let o = airway(&["render", "--threshold", "bright", "--json"], &[]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["exit_code"], 1);
    assert!(v["error"].as_str().unwrap().contains("otsu"));
}

#[test]
fn config_file_parameters_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("airway.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[generation]\ngenerations = 3\nld_ratio_per_gen = [3.0, 2.5, 2.0]\nh_range = [0.7, 0.85]\nroot_diameter = 14.0\nphi_max = 100.0\nlength_sigma_factor = 0.2\ntaper_steepness = 9.0\ntaper_midpoint = 0.4\ncarina_rounding_fraction = 0.2\nclearance_factor = 1.0\nmax_attempts = 40\nmax_backtracks = 8\n",
    )
    .unwrap();
    ok(&airway(&["generate", "--config", s(&cfg), "--out", s(dir.path())], &[]));
    let echoed: toml::Table = std::fs::read_to_string(dir.path().join("run_config.toml")).unwrap().parse().unwrap();
    let g = echoed["generation"].as_table().unwrap();
    assert_eq!(g["generations"].as_integer(), Some(3));
    assert_eq!(g["root_diameter"].as_float(), Some(14.0));
    assert_eq!(g["phi_max"].as_float(), Some(100.0));
    assert_eq!(g["max_backtracks"].as_integer(), Some(8));
    assert_eq!(g["ld_ratio_per_gen"].as_array().unwrap().len(), 3);
    // mean lengths derived from L/D ratios and the mid diameter ratio
    let l: Vec<f64> = g["l_mean_per_gen"].as_array().unwrap().iter().map(|v| v.as_float().unwrap()).collect();
    assert!((l[0] - 42.0).abs() < 1e-9);
    assert!((l[1] - 2.5 * 14.0 * 0.775).abs() < 1e-9);
    let tree: airway::core::airway::AirwayTree = formats::read_json(&dir.path().join("tree.json")).unwrap();
    assert_eq!(tree.params.root_diameter, 14.0);
}

#[test]
fn environment_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&airway(&["generate", "--json", "--out", s(dir.path())], &[("AIRWAY_GENERATION__GENERATIONS", "2")]));
    assert_eq!(v["segments"], 3);
    // flags win over the environment
    let v = json(&airway(&["generate", "--json", "--generations", "3", "--out", s(dir.path())], &[("AIRWAY_GENERATION__GENERATIONS", "2")]));
    assert_eq!(v["segments"], 7);
}

fn render_small(out: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec!["render", "--json", "--generations", "4", "--seed", "2", "--resolution", "48", "--paths", "2", "--max-frames", "5", "--out", s(out)];
    args.extend_from_slice(extra);
    json(&airway(&args, &[]))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "depth", "depth16", "masks", "poses"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest".into(), std::fs::read(dir.join(MANIFEST_FILE)).unwrap()));
    out
}

#[test]
fn render_then_evaluate_ground_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let v = render_small(&data, &[]);
    assert_eq!(v["frames"], 10);
    let eval_out = dir.path().join("eval");
    let v = json(&airway(&["evaluate", "--json", "--pred", s(&data), "--out", s(&eval_out)], &[]));
    let c = &v["classical"];
    assert_eq!(c["abs_rel"], 0.0);
    assert_eq!(c["rmse"], 0.0);
    assert_eq!(c["delta"], 1.0);
    assert_eq!(v["evaluated_frames"], 10);
    assert!(eval_out.join("metrics.json").is_file() && eval_out.join("metrics.csv").is_file());
    assert!(eval_out.join("run_config.toml").is_file());
    let text = ok(&airway(&["evaluate", "--pred", s(&data), "--out", s(&eval_out)], &[]));
    assert!(text.contains("Abs Rel"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    render_small(&a, &["--threads", "1"]);
    render_small(&b, &["--threads", "8"]);
    assert!(dir_bytes(&a) == dir_bytes(&b));
}

#[test]
fn rerunning_from_the_resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    render_small(&a, &["--threshold", "otsu", "--d0", "10"]);
    ok(&airway(&["render", "--config", s(&a.join("run_config.toml")), "--out", s(&b)], &[]));
    assert!(dir_bytes(&a) == dir_bytes(&b));
    let ca = std::fs::read_to_string(a.join("run_config.toml")).unwrap();
    let cb = std::fs::read_to_string(b.join("run_config.toml")).unwrap();
    assert_eq!(without_output_dir(&ca), without_output_dir(&cb));
}

#[test]
fn inverted_disparity_fails_localization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    render_small(&data, &["--threshold", "otsu", "--d0", "10"]);
    let m = DatasetManifest::read(&data.join(MANIFEST_FILE)).unwrap();
    let bundle = dir.path().join("bundle");
    for f in &m.frames {
        let depth = formats::read_pfm(&data.join(&f.depth_path)).unwrap();
        let id = format!("{:06}", f.frame_index);
        // depth read as disparity puts the lumen at the top of the range
        formats::write_pfm(&bundle.join(format!("pred/{id}.pfm")), &depth).unwrap();
        formats::write_pfm(&bundle.join(format!("gt/{id}.pfm")), &depth).unwrap();
        std::fs::create_dir_all(bundle.join("mask")).unwrap();
        std::fs::copy(data.join(f.mask_path.as_ref().unwrap()), bundle.join(format!("mask/{id}.png"))).unwrap();
    }
    let v = json(&airway(&["evaluate", "--json", "--pred", s(&bundle), "--out", s(&dir.path().join("e"))], &[]));
    assert!(v["local_accu"].as_f64().unwrap() <= 5.0, "{v}");
    assert_eq!(v["depth_con"], 0.0);
    // the same maps read as depth pass
    let v = json(&airway(&["evaluate", "--json", "--pred", s(&bundle), "--pred-convention", "depth", "--out", s(&dir.path().join("e"))], &[]));
    assert!(v["local_accu"].as_f64().unwrap() >= 95.0, "{v}");
    assert!(v["depth_con"].as_f64().unwrap() >= 95.0, "{v}");
}

fn loss_bundle(root: &Path, pred: Vec<f64>, lumen: Vec<u8>, w: usize) {
    let h = pred.len() / w;
    formats::write_pfm(&root.join("pred/000.pfm"), &Grid::from_vec(w, h, pred)).unwrap();
    formats::write_mask_png(&root.join("mask/000.png"), &LumenMask::from_levels(w, h, &lumen)).unwrap();
}

#[test]
fn loss_examples_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(Vec<f64>, f64); 3] = [
        (vec![0.5; 4], 0.0),
        (vec![0.2, 0.2, 0.8, 0.8], 0.0),
        (vec![0.8, 0.8, 0.2, 0.2], 0.6),
    ];
    for (i, (pred, expect)) in cases.into_iter().enumerate() {
        let root = dir.path().join(format!("case{i}"));
        // 100x100 with the first two quarter columns as airway
        let (w, h) = (100, 100);
        let big: Vec<f64> = (0..w * h).map(|k| pred[(k % w) / 25]).collect();
        let lumen: Vec<u8> = (0..w * h).map(|k| ((k % w) < 50) as u8).collect();
        loss_bundle(&root, big, lumen, w);
        let v = json(&airway(&["loss", "--json", "--pred", s(&root), "--out", s(&root.join("out"))], &[]));
        let got = v["loss"].as_f64().unwrap();
        assert!((got - expect).abs() < 1e-6, "case {i}: {got}");
        assert!(root.join("out/loss.json").is_file());
        let plain = ok(&airway(&["loss", "--pred", s(&root), "--out", s(&root.join("out"))], &[]));
        assert!((plain.trim().parse::<f64>().unwrap() - expect).abs() < 1e-6);
    }
}

#[test]
fn missing_mask_rejects_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    loss_bundle(dir.path(), vec![0.1, 0.9], vec![1, 0], 2);
    formats::write_pfm(&dir.path().join("pred/001.pfm"), &Grid::from_vec(2, 1, vec![0.1, 0.9])).unwrap();
    let o = airway(&["loss", "--json", "--pred", s(dir.path()), "--out", s(&dir.path().join("o"))], &[]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["error"].as_str().unwrap().contains("frame 001: missing mask"));
    let v = json(&airway(&["loss", "--json", "--allow-partial", "--pred", s(dir.path()), "--out", s(&dir.path().join("o"))], &[]));
    assert_eq!(v["frames"].as_array().unwrap().len(), 1);
}

#[test]
fn validate_mesh_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&airway(&["generate", "--generations", "3", "--out", s(dir.path())], &[]));
    let v = json(&airway(&["validate-mesh", "--json", s(&dir.path().join("mesh.obj"))], &[]));
    assert_eq!(v["valid"], true);
    assert_eq!(v["euler_characteristic"], 2);
    let v = json(&airway(&["validate-mesh", "--json", s(&dir.path().join("tree.json"))], &[]));
    assert_eq!(v["valid"], true);

    // drop the last face
    let text = std::fs::read_to_string(dir.path().join("mesh.obj")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    let broken = dir.path().join("broken.obj");
    std::fs::write(&broken, lines.join("\n")).unwrap();
    let o = airway(&["validate-mesh", "--json", s(&broken)], &[]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["boundary_edges"], 3);

    assert_eq!(airway(&["validate-mesh", s(&dir.path().join("nope.obj"))], &[]).status.code(), Some(3));
}
