use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use codesplat_core::io::{self, read_png, SceneManifest};
use codesplat_core::render;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codesplat"))
        .args(args)
        .env_remove("CONTRAGS_THREADS")
        .output()
        .expect("spawn codesplat")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, size: usize) -> PathBuf {
    let out = dir.join("scene");
    let o = bin(&["synth", "--gaussians", "24", "--views", "2", "--size", &size.to_string(), "--shared-rows", "6", "--seed", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn synth_then_eval_ground_truth_hits_psnr_cap() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 24);
    let o = bin(&["eval", p(&scene.join("gt.cgs")), p(&scene.join("manifest.txt"))]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().starts_with("mean  psnr 100.0000  ssim 1.000000"), "{text}");
}

#[test]
fn render_is_bit_stable_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 24);
    let model = scene.join("gt.cgs");
    let manifest = scene.join("manifest.txt");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(bin(&["render", p(&model), p(&manifest), "--out", p(&a)]).status.success());
    assert!(bin(&["--threads", "2", "render", p(&model), p(&manifest), "--out", p(&b)]).status.success());
    let state = io::load_model(&model).unwrap();
    let m = SceneManifest::load(&manifest).unwrap();
    for v in &m.views {
        let name = format!("{}.png", v.name);
        let bytes_a = std::fs::read(a.join(&name)).unwrap();
        assert_eq!(bytes_a, std::fs::read(b.join(&name)).unwrap());
        let expected = io::quantized(&render::render(&state, &v.camera));
        assert_eq!(read_png(a.join(&name)).unwrap(), expected);
    }

    // The renders as ground truth: evaluating the model against them gives the cap.
    let own = SceneManifest {
        views: m
            .views
            .iter()
            .map(|v| io::ManifestView { image: PathBuf::from(format!("{}.png", v.name)), ..v.clone() })
            .collect(),
    };
    own.save(a.join("own.txt")).unwrap();
    let o = bin(&["eval", p(&model), p(&a.join("own.txt"))]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("mean  psnr 100.0000"));
}

#[test]
fn mismatched_image_size_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 24);
    io::write_png(&codesplat_core::Image::new(20, 24), scene.join("view000.png")).unwrap();
    let o = bin(&["eval", p(&scene.join("gt.cgs")), p(&scene.join("manifest.txt"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("declares 24x24"));
}

#[test]
fn missing_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 16);
    let missing = dir.path().join("nope.cgs");
    assert_eq!(bin(&["render", p(&missing), p(&scene.join("manifest.txt"))]).status.code(), Some(2));
    assert_eq!(bin(&["eval", p(&missing), p(&scene.join("manifest.txt"))]).status.code(), Some(2));
    assert_eq!(bin(&["stats", p(&missing)]).status.code(), Some(2));
}

#[test]
fn bad_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 16);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "iters = 5\nlambda_typo = 1\n").unwrap();
    let o = bin(&["train", p(&scene.join("manifest.txt")), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda_typo"));
    let o = bin(&["train", p(&scene.join("manifest.txt")), "--set", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["train", "--iters", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn zero_iterations_write_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 16);
    let out = dir.path().join("run");
    let o = bin(&["train", p(&scene.join("manifest.txt")), "--iters", "0", "--out", p(&out), "--set", "sh_degree=0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpts: Vec<_> = std::fs::read_dir(out.join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    let initial = std::fs::read(out.join("checkpoints/iter_00000000.cgs")).unwrap();
    assert_eq!(initial, std::fs::read(out.join("model.cgs")).unwrap());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,eval,-,"));
}

#[test]
fn short_default_training_completes() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 24);
    let out = dir.path().join("run");
    let o = bin(&["train", p(&scene.join("manifest.txt")), "--iters", "150", "--out", p(&out), "--set", "checkpoint_every=100"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let state = io::load_model(out.join("model.cgs")).unwrap();
    assert_eq!(state.iteration, 150);
    assert_eq!(state.sh_degree(), 3);
    assert!(out.join("checkpoints/iter_00000100.cgs").is_file());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    // header + 150 transitions + eval at the end
    assert_eq!(csv.lines().count(), 152);
}

#[test]
fn stats_reports_closed_form_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let state = codesplat_core::ModelState::init_one_to_one(10, 1, 0, codesplat_core::Aabb::cube(1.0)).unwrap();
    let path = dir.path().join("m.cgs");
    io::save_model(&state, &path).unwrap();
    let o = bin(&["stats", p(&path)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let field = |k: &str| -> String {
        text.lines().find(|l| l.starts_with(k)).unwrap().split_whitespace().nth(1).unwrap().to_string()
    };
    // 10 Gaussians, 10 rows of 12 SH floats and 7 SR floats each
    assert_eq!(field("compressed_bytes"), (10 * 24 + 10 * 12 * 4 + 10 * 28).to_string());
    assert_eq!(field("dense_bytes"), (10 * (3 + 1 + 12 + 7) * 4).to_string());
    let ratio: f64 = field("ratio").parse().unwrap();
    assert!(ratio < 1.0);
    let hist_total: usize = text
        .lines()
        .filter(|l| l.starts_with("  "))
        .map(|l| {
            let v: Vec<usize> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            v[0] * v[1]
        })
        .sum();
    assert_eq!(hist_total, 2 * 10);
}
