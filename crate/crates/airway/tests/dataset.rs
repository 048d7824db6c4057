use std::path::Path;

use airway::cli::{camera_paths, checked_mesh, render_settings};
use airway::config::{parse_override, RunConfig};
use airway::core::airway::sample_tree;
use airway::core::metrics::Convention;
use airway::dataset::*;
use airway::eval::*;
use airway::formats;
use airway::Error;

fn config(out: &Path, extra: &[&str]) -> RunConfig {
    let mut sets = vec![
        "generation.generations=4".to_string(),
        "seed=5".into(),
        "render.camera.width=40".into(),
        "render.camera.height=40".into(),
        "render.paths=2".into(),
        "render.max_frames_per_path=10".into(),
        format!("output_dir=\"{}\"", out.display()),
    ];
    sets.extend(extra.iter().map(|s| s.to_string()));
    let o: Vec<_> = sets.iter().map(|s| parse_override(s).unwrap()).collect();
    RunConfig::load(None, &[], &o).unwrap()
}

fn render(cfg: &RunConfig) -> DatasetManifest {
    let tree = sample_tree(&cfg.generation_params()).unwrap();
    let mesh = checked_mesh(cfg, &tree).unwrap();
    let paths = camera_paths(cfg, &tree, &mesh).unwrap();
    render_dataset(&tree, &mesh, &paths, &render_settings(cfg), &cfg.output_dir).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn two_paths_of_ten_poses_give_twenty_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    let m = render(&cfg);
    assert_eq!(m.frames.len(), 20);
    assert_eq!(m.paths.len(), 2);
    assert!(m.paths.iter().all(|p| p.frames == 10));
    for (i, f) in m.frames.iter().enumerate() {
        assert_eq!(f.frame_index, i as u64);
        assert_eq!((f.path_index, f.pose_index), (i / 10, i % 10));
        assert_eq!(f.disparity_convention, Convention::Depth);
        assert!(f.mask_path.is_some() && f.depth_png_path.is_some());
    }
    assert!(m.problems(dir.path()).is_empty());
    assert_eq!(m.format_version, "1");
    assert_eq!(m.depth_units, "mm");
    assert_eq!(m.generation.params_hash.len(), 64);

    let back = DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(back, m);

    let poses: PoseFile = formats::read_json(&dir.path().join(&m.paths[1].pose_path)).unwrap();
    assert_eq!(poses.poses.len(), 10);
    assert_eq!(poses.poses[0].frame_index, 10);
    // the pose matrix is rigid
    let r = poses.poses[3].matrix;
    for a in 0..3 {
        for b in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][a] * r[k][b]).sum();
            assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
        }
    }

    // PFM and 16-bit PNG agree to the quantization step
    let f = &m.frames[4];
    let pfm = formats::read_pfm(&dir.path().join(&f.depth_path)).unwrap();
    let png = formats::read_png16_depth(&dir.path().join(f.depth_png_path.as_ref().unwrap()), 100.0).unwrap();
    for (a, b) in pfm.data.iter().zip(&png.data) {
        assert!((a - b).abs() <= 0.005 + 1e-4 * a, "{a} vs {b}");
    }

    std::fs::remove_file(dir.path().join(&m.frames[7].image_path)).unwrap();
    let problems = m.problems(dir.path());
    assert_eq!(problems.len(), 1);
    assert!(problems[0].starts_with("frame 7: image"));
}

#[test]
fn re_rendering_is_byte_identical_across_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = config(a.path(), &["threads=1"]);
    let cb = config(b.path(), &["threads=8"]);
    render(&ca);
    render(&cb);
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.0, y.0);
        assert!(x.1 == y.1, "{} differs", x.0);
    }
}

#[test]
fn manifest_as_its_own_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["render.max_frames_per_path=5"]);
    render(&cfg);
    let bundle = load_eval_bundle(&BundleSpec::new(dir.path())).unwrap();
    assert_eq!(bundle.frames.len(), 10);
    assert!(bundle.dropped.is_empty());
    assert!(bundle.frames.iter().all(|f| f.convention == Convention::Depth));
    let report = evaluate_bundle(&bundle, &EvalOptions::default(), 0).unwrap();
    let c = report.classical.unwrap();
    assert_eq!((c.abs_rel, c.sq_rel, c.rmse, c.rmse_log, c.delta), (0.0, 0.0, 0.0, 0.0, 1.0));
    assert_eq!(c.frames, 10);
}

fn write_frame(root: &Path, id: &str, pred: &[f64], mask: Option<&[u8]>) {
    let n = pred.len();
    formats::write_pfm(&root.join("pred").join(format!("{id}.pfm")), &airway::core::grid::Grid::from_vec(n, 1, pred.to_vec())).unwrap();
    if let Some(m) = mask {
        formats::write_mask_png(
            &root.join("mask").join(format!("{id}.png")),
            &airway::core::segmentation::LumenMask::from_levels(m.len(), 1, m),
        )
        .unwrap();
    }
}

#[test]
fn bundle_missing_a_mask_is_rejected_with_the_frame_id() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(dir.path(), "a", &[0.1, 0.9], Some(&[1, 0]));
    write_frame(dir.path(), "b", &[0.1, 0.9], None);
    write_frame(dir.path(), "c", &[0.1, 0.9], Some(&[1, 0]));
    let err = load_eval_bundle(&BundleSpec::new(dir.path())).unwrap_err();
    let Error::Ingestion(problems) = &err else { panic!("{err}") };
    assert_eq!(problems, &vec!["frame b: missing mask".to_string()]);
    assert_eq!(err.exit_code(), 2);

    let mut spec = BundleSpec::new(dir.path());
    spec.allow_partial = true;
    let b = load_eval_bundle(&spec).unwrap();
    assert_eq!(b.frames.iter().map(|f| f.id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
    assert_eq!(b.dropped, vec![("b".to_string(), "frame b: missing mask".to_string())]);
}

#[test]
fn shape_mismatches_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(dir.path(), "a", &[0.1, 0.9, 0.5], Some(&[1, 0]));
    write_frame(dir.path(), "b", &[0.1, 0.9], Some(&[1, 0]));
    let Error::Ingestion(p) = load_eval_bundle(&BundleSpec::new(dir.path())).unwrap_err() else { panic!() };
    assert_eq!(p, vec!["frame a: lumen mask is 2x1 but the prediction is 3x1".to_string()]);
}

/// Writes a hand-built three-frame dataset and its manifest.
fn toy_dataset(root: &Path) -> DatasetManifest {
    use airway::core::grid::Grid;
    let depths = [vec![8.0, 2.0, 2.0, 2.0], vec![4.0, 4.0, 1.0, 4.0], vec![5.0, 5.0, 5.0, 5.0]];
    let masks: [[u8; 4]; 3] = [[255, 0, 0, 0], [0, 0, 0, 255], [255, 255, 0, 0]];
    let mut frames = Vec::new();
    for (i, (d, m)) in depths.iter().zip(&masks).enumerate() {
        let stem = format!("{i:06}");
        formats::write_pfm(&root.join(format!("depth/{stem}.pfm")), &Grid::from_vec(2, 2, d.clone())).unwrap();
        formats::write_png8(&root.join(format!("images/{stem}.png")), &Grid::filled(2, 2, 0.5)).unwrap();
        formats::write_mask_png(&root.join(format!("masks/{stem}.png")), &airway::core::segmentation::LumenMask::from_levels(2, 2, m)).unwrap();
        frames.push(FrameEntry {
            frame_index: i as u64,
            path_index: 0,
            pose_index: i,
            segment_id: 0,
            image_path: format!("images/{stem}.png"),
            depth_path: format!("depth/{stem}.pfm"),
            depth_png_path: None,
            disparity_convention: Convention::Depth,
            pose_path: "poses/path_000.json".into(),
            mask_path: Some(format!("masks/{stem}.png")),
        });
    }
    formats::write_text(&root.join("poses/path_000.json"), "{}").unwrap();
    let m = DatasetManifest {
        format_version: "1".into(),
        depth_units: "mm".into(),
        depth_png_scale: None,
        camera: CameraIntrinsics { width: 2, height: 2, vertical_fov: 60.0, near_clip: 0.1 },
        shading: Default::default(),
        mask_threshold: None,
        generation: GenerationMetadata {
            params: airway::core::airway::GenerationParams::with_generations(1, 0),
            tessellation: None,
            params_hash: String::new(),
            seeds: Default::default(),
        },
        paths: vec![PathEntry { path_index: 0, pose_path: "poses/path_000.json".into(), route: vec![0], frames: 3 }],
        frames,
    };
    formats::write_json(&root.join(MANIFEST_FILE), &m).unwrap();
    m
}

#[test]
fn toy_bundle_field_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_dataset(dir.path());
    assert!(m.problems(dir.path()).is_empty());
    let b = load_eval_bundle(&BundleSpec::new(dir.path())).unwrap();
    assert_eq!(b.frames.len(), 3);
    let ids: Vec<_> = b.frames.iter().map(|f| f.id.clone()).collect();
    assert_eq!(ids, ["0", "1", "2"]);
    assert_eq!(b.frames[1].prediction.data, vec![4.0, 4.0, 1.0, 4.0]);
    assert_eq!(b.frames[1].gt_depth.as_ref().unwrap().data, vec![4.0, 4.0, 1.0, 4.0]);
    assert_eq!(b.frames[1].lumen.as_ref().unwrap().mask.data, vec![false, false, false, true]);

    let r = evaluate_bundle(&b, &EvalOptions::default(), 1).unwrap();
    // frame 0: the farthest pixel (smallest disparity) is the lumen pixel
    let f0 = r.frames[0].adse.unwrap();
    assert!(f0.local_pass && f0.contrast_pass);
    // frame 1: three pixels tie for farthest, only one is lumen
    let f1 = r.frames[1].adse.unwrap();
    assert!(!f1.local_pass && !f1.contrast_pass);
    assert_eq!(f1.min_set_size, 3);
    // outside disparities 0.25, 0.25, 1: mean 0.5, population sigma sqrt(0.125)
    let z = -0.25 / (0.125f64.sqrt() + airway::core::metrics::DEFAULT_EPSILON);
    assert!((f1.z_lumen_outside - z).abs() < 1e-12);
    // frame 2: constant map, half the tied minimum set is lumen, no contrast
    let f2 = r.frames[2].adse.unwrap();
    assert!(!f2.contrast_pass);
    assert!((f2.r_in_lumen - 2.0 / (4.0 + airway::core::metrics::DEFAULT_EPSILON)).abs() < 1e-12);
    assert_eq!(r.local_accu, Some(100.0 / 3.0));
    assert_eq!(r.depth_con, Some(100.0 / 3.0));

    let csv = report_csv(&r);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,,"));
}

#[test]
fn unsupported_manifest_version() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = toy_dataset(dir.path());
    m.format_version = "2".into();
    formats::write_json(&dir.path().join(MANIFEST_FILE), &m).unwrap();
    assert!(DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).is_err());
}
