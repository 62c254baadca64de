//! Acceptance criteria 1-10. Each test prints one PASS/FAIL line to stdout
//! (outside the test harness capture) and then asserts the criterion.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use codesplat_core::io::{encode_model, synth_bounds, synth_scene};
use codesplat_core::loss;
use codesplat_core::model::{sh_dim, SR_DIM};
use codesplat_core::render;
use codesplat_core::sampler::{
    accept_merge, accept_split, train_step, MergeProposal, SamplerConfig, SplitMergeRates, SplitProposal, View,
};
use codesplat_core::{ChainRng, CodebookKind, CodebookRows, Image, ModelState, TransitionKind};
use codesplat_testkit::scenes::{random_scene, smooth_scene};
use codesplat_testkit::{acceptance_oracle, compare, fd_gradient, naive_render, FdGradients, MoveKind, OracleReport};
use rand::{Rng, SeedableRng};

// Tolerances and budgets, fixed here and nowhere else.
const RENDER_TOL: f64 = 1e-5;
const RENDER_BUDGET: Duration = Duration::from_secs(60);
const GRAD_REL_TOL: f64 = 1e-4;
/// Entries with |fd| below this are judged on absolute error at this scale.
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_H: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const ACCEPT_TOL: f64 = 1e-12;
const ERGODICITY_STEPS: usize = 10_000;
const FIXTURE_CAP: usize = 256;
const LAMBDA_GRID: [f64; 3] = [0.5, 2.3, 5.0];
const LAMBDA_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const LAMBDA_STEPS: usize = 2000;
const E2E_STEPS: usize = 2000;
const E2E_PSNR: f64 = 28.0;
const E2E_CODEBOOK_FRACTION: f64 = 0.5;
const E2E_BUDGET: Duration = Duration::from_secs(300);
const SSIM_CONST_TOL: f64 = 1e-6;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

/// The standard fixture: 64 ground-truth Gaussians sharing 16 rows, 3 views, 64×64.
fn fixture() -> Vec<View> {
    let (_, scene) = synth_scene(64, 3, 64, 0, 16, 0).unwrap();
    scene
        .manifest
        .views
        .iter()
        .zip(scene.images)
        .map(|(v, image)| View { camera: v.camera.clone(), image })
        .collect()
}

fn fixture_config() -> SamplerConfig {
    SamplerConfig { gaussian_cap: FIXTURE_CAP, ..Default::default() }
}

fn initial_state(seed: u64) -> ModelState {
    ModelState::init_one_to_one(64, 0, seed, synth_bounds()).unwrap()
}

/// Σ refcounts = N for both codebooks.
fn conserved(s: &ModelState) -> bool {
    CodebookKind::ALL.iter().all(|&w| {
        let b = s.codebook(w);
        b.live_rows().map(|r| b.refcount(r) as usize).sum::<usize>() == s.len()
    }) && s.check_invariants().is_ok()
}

#[test]
fn criterion_01_renderer_matches_naive_oracle() {
    let mut rng = ChainRng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=256);
        let (s, cam) = random_scene(&mut rng, n, 64);
        let diff = render::render(&s, &cam).max_abs_diff(&naive_render(&s, &cam)).unwrap();
        worst = worst.max(diff);
    }
    let elapsed = start.elapsed();
    let pass = worst <= RENDER_TOL && elapsed < RENDER_BUDGET;
    report(1, "renderer oracle", pass, &format!("max abs diff {worst:.3e} <= {RENDER_TOL:e}, {:.1}s", elapsed.as_secs_f64()));
    assert!(pass);
}

/// Central differences at `GRAD_H` and `GRAD_H / 2`, combined to cancel the h² term.
/// Plain central differences at `GRAD_H` carry ~1e-4 relative truncation error on
/// the smallest quaternion entries.
fn richardson_fd(s: &ModelState, cam: &codesplat_core::Camera, gt: &Image) -> FdGradients {
    let coarse = fd_gradient(s, cam, gt, GRAD_H, loss::DEFAULT_LAMBDA_SSIM);
    let fine = fd_gradient(s, cam, gt, GRAD_H / 2.0, loss::DEFAULT_LAMBDA_SSIM);
    let mix = |c: &[f64], f: &[f64]| c.iter().zip(f).map(|(c, f)| (4.0 * f - c) / 3.0).collect::<Vec<_>>();
    FdGradients {
        positions: coarse
            .positions
            .iter()
            .zip(&fine.positions)
            .map(|(c, f)| [0, 1, 2].map(|k| (4.0 * f[k] - c[k]) / 3.0))
            .collect(),
        opacity_logits: mix(&coarse.opacity_logits, &fine.opacity_logits),
        sh: mix(&coarse.sh, &fine.sh),
        sr: mix(&coarse.sr, &fine.sr),
    }
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    let mut rng = ChainRng::seed_from_u64(202);
    let start = Instant::now();
    let mut total = OracleReport::default();
    let mut shared_rows_checked = 0;
    for _ in 0..20 {
        let (s, cam, gt) = smooth_scene(&mut rng, 8, 16, 3);
        shared_rows_checked += CodebookKind::ALL
            .iter()
            .map(|&w| s.codebook(w).live_rows().filter(|&r| s.codebook(w).refcount(r) >= 2).count())
            .sum::<usize>();
        let art = render::rasterize_forward(&s, &cam);
        let (_, dl) = loss::recon_loss_with_grad(&art.image, &gt, loss::DEFAULT_LAMBDA_SSIM).unwrap();
        let g = render::rasterize_backward(&s, &cam, &art, &dl).unwrap();
        let fd = richardson_fd(&s, &cam, &gt);
        let flat = |v: &[[f64; 3]]| v.iter().flatten().copied().collect::<Vec<_>>();
        total.merge(compare("position", &flat(&g.positions), &flat(&fd.positions), GRAD_FLOOR, GRAD_REL_TOL));
        total.merge(compare("opacity", &g.opacity_logits, &fd.opacity_logits, GRAD_FLOOR, GRAD_REL_TOL));
        total.merge(compare("sh", &g.sh, &fd.sh, GRAD_FLOOR, GRAD_REL_TOL));
        total.merge(compare("sr", &g.sr, &fd.sr, GRAD_FLOOR, GRAD_REL_TOL));
    }
    let elapsed = start.elapsed();
    let pass = total.passed() && shared_rows_checked > 0 && elapsed < GRAD_BUDGET;
    report(
        2,
        "gradient correctness",
        pass,
        &format!(
            "max rel err {:.3e} <= {GRAD_REL_TOL:e}, {} failing entries, {shared_rows_checked} shared rows, {:.1}s",
            total.max_rel,
            total.failing.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "{:?}", &total.failing[..total.failing.len().min(10)]);
}

/// Four Gaussians on one row of each codebook.
fn shared_state(degree: usize, rng: &mut impl Rng) -> ModelState {
    let dim = sh_dim(degree);
    let sh: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut sr: Vec<f32> = (0..3).map(|_| rng.random_range(-3.0..-1.0)).collect();
    sr.extend([1.0, 0.0, 0.0, 0.0]);
    ModelState::from_parts(
        degree,
        vec![[0.0; 3]; 4],
        vec![0.0; 4],
        vec![0; 4],
        vec![0; 4],
        CodebookRows { values: sh, parents: vec![None] },
        CodebookRows { values: sr, parents: vec![None] },
    )
    .unwrap()
}

#[test]
fn criterion_03_acceptance_formulas_are_exact() {
    let mut rng = ChainRng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let which = CodebookKind::ALL[case % 2];
        let kind = if case % 4 < 2 { MoveKind::Split } else { MoveKind::Merge };
        let rates = SplitMergeRates { eps_split: rng.random_range(0.01..0.5), eps_merge: rng.random_range(0.01..0.5) };
        let lambda = rng.random_range(-1.0..6.0);
        let correction = rng.random_bool(0.5);
        let cfg = SamplerConfig {
            sh_rates: rates,
            sr_rates: rates,
            lambda_sh: lambda,
            lambda_sr: lambda,
            normalization_correction: correction,
            ..Default::default()
        };
        let mut s = shared_state(rng.random_range(0..=3), &mut rng);
        let dim = s.codebook(which).dim();
        let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0) * rates.eps_split).collect();
        let split = SplitProposal::with_offset(&s, which, 1, &offset).unwrap();
        let (probability, expected) = match kind {
            MoveKind::Split => {
                let (d, _) = accept_split(&mut s, &split, &cfg, 0.0, &mut rng).unwrap();
                (d.probability, acceptance_oracle(kind, &split.u, lambda, rates.eps_split, rates.eps_merge, correction))
            }
            MoveKind::Merge => {
                let child = s.split_row(1, which, &split.new_values).unwrap();
                let merge = MergeProposal::for_pair(&s, which, child, split.row);
                let c_minus_cp: Vec<f64> = s
                    .codebook(which)
                    .row(split.row)
                    .iter()
                    .zip(s.codebook(which).row(child))
                    .map(|(&c, &cp)| c as f64 - cp as f64)
                    .collect();
                let d = accept_merge(&mut s, &merge, &cfg, 0.0, &mut rng).unwrap();
                (d.probability, acceptance_oracle(kind, &c_minus_cp, lambda, rates.eps_split, rates.eps_merge, correction))
            }
        };
        worst = worst.max((probability - expected).abs());
    }
    let defaults = SamplerConfig::default();
    let mut rng = ChainRng::seed_from_u64(0);
    let mut s = shared_state(0, &mut rng);
    let zero = SplitProposal::with_offset(&s, CodebookKind::Sh, 0, &[0.0; 3]).unwrap();
    let anchor_split = accept_split(&mut s.clone(), &zero, &defaults, 0.0, &mut rng).unwrap().0.probability;
    let far = SplitProposal::with_offset(&s, CodebookKind::Sh, 0, &[0.3, -0.2, 0.1]).unwrap();
    let child = s.split_row(0, CodebookKind::Sh, &far.new_values).unwrap();
    let merge = MergeProposal::for_pair(&s, CodebookKind::Sh, child, far.row);
    let anchor_merge = accept_merge(&mut s, &merge, &defaults, 0.0, &mut rng).unwrap().probability;
    let pass = worst <= ACCEPT_TOL && (anchor_split - (-2.3f64).exp()).abs() <= ACCEPT_TOL && anchor_merge == 1.0;
    report(
        3,
        "acceptance formulas",
        pass,
        &format!("max |sampler - oracle| {worst:.3e} <= {ACCEPT_TOL:e}, split anchor {anchor_split:.6}, merge anchor {anchor_merge}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_split_then_merge_is_inverse() {
    let mut rng = ChainRng::seed_from_u64(404);
    let split_cfg = SamplerConfig { lambda_sh: -1e3, lambda_sr: -1e3, ..Default::default() };
    let merge_cfg = SamplerConfig::default();
    let mut restored = 0;
    let mut conservation = true;
    for case in 0..100 {
        let mut s = ModelState::init_one_to_one(10, case % 4, case as u64, synth_bounds()).unwrap();
        s.densify(1.0, 40, 0.05, &mut rng).unwrap();
        for _ in 0..4 {
            let i = rng.random_range(0..s.len());
            let w = CodebookKind::ALL[rng.random_range(0..2)];
            if s.codebook(w).refcount(s.row_of(i, w)) >= 2 {
                let v: Vec<f32> = s.codebook(w).row(s.row_of(i, w)).iter().map(|x| x + 0.01).collect();
                s.split_row(i, w, &v).unwrap();
                conservation &= conserved(&s);
            }
        }
        let before = encode_model(&s);
        let which = CodebookKind::ALL[rng.random_range(0..2)];
        let candidates: Vec<usize> =
            (0..s.len()).filter(|&i| s.codebook(which).refcount(s.row_of(i, which)) >= 2).collect();
        let i = candidates[rng.random_range(0..candidates.len())];
        let u: Vec<f64> = (0..s.codebook(which).dim()).map(|_| rng.random_range(-0.3..0.3)).collect();
        let split = SplitProposal::with_offset(&s, which, i, &u).unwrap();
        let (d, child) = accept_split(&mut s, &split, &split_cfg, 0.0, &mut rng).unwrap();
        conservation &= conserved(&s);
        let merge = MergeProposal::for_pair(&s, which, child.unwrap(), split.row);
        let m = accept_merge(&mut s, &merge, &merge_cfg, 0.0, &mut rng).unwrap();
        conservation &= conserved(&s);
        if d.accepted && m.accepted && encode_model(&s) == before {
            restored += 1;
        }
    }
    let pass = restored == 100 && conservation;
    report(4, "split/merge inverse", pass, &format!("{restored}/100 restored exactly, refcounts conserved: {conservation}"));
    assert!(pass);
}

#[test]
fn criterion_05_ergodicity_smoke() {
    let views = fixture();
    let cfg = fixture_config();
    let mut s = initial_state(0);
    let mut rng = ChainRng::seed_from_u64(0);
    let (mut splits, mut merges, mut conservation) = (0, 0, true);
    for _ in 0..ERGODICITY_STEPS {
        let rec = train_step(&mut s, &views, &cfg, &mut rng).unwrap();
        match rec.kind {
            TransitionKind::Split => splits += rec.accepts,
            TransitionKind::Merge => merges += rec.accepts,
            TransitionKind::Update => {}
        }
        conservation &= conserved(&s);
    }
    let live_sh = s.sh().live_count();
    let pass = splits >= 1 && merges >= 1 && live_sh < s.len() && conservation;
    report(
        5,
        "ergodicity smoke",
        pass,
        &format!("{splits} splits and {merges} merges accepted in {ERGODICITY_STEPS} steps, final |SH| {live_sh} vs N {}", s.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_06_lambda_monotonicity() {
    let views = fixture();
    let mut medians = Vec::new();
    let mut finals = Vec::new();
    let mut conservation = true;
    for &lambda in &LAMBDA_GRID {
        let cfg = SamplerConfig { lambda_sh: lambda, ..fixture_config() };
        let mut sizes: Vec<usize> = LAMBDA_SEEDS
            .iter()
            .map(|&seed| {
                let mut s = initial_state(seed);
                let mut rng = ChainRng::seed_from_u64(seed);
                for _ in 0..LAMBDA_STEPS {
                    train_step(&mut s, &views, &cfg, &mut rng).unwrap();
                    conservation &= conserved(&s);
                }
                s.sh().live_count()
            })
            .collect();
        finals.push(sizes.clone());
        sizes.sort_unstable();
        medians.push(sizes[sizes.len() / 2]);
    }
    let pass = medians.windows(2).all(|w| w[1] <= w[0]) && conservation;
    report(
        6,
        "lambda monotonicity",
        pass,
        &format!("median final |SH| {medians:?} for lambda_sh {LAMBDA_GRID:?}, per-seed {finals:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_end_to_end_quality() {
    let views = fixture();
    let cfg = fixture_config();
    let start = Instant::now();
    let mut s = initial_state(0);
    let mut rng = ChainRng::seed_from_u64(0);
    let mut conservation = true;
    for _ in 0..E2E_STEPS {
        train_step(&mut s, &views, &cfg, &mut rng).unwrap();
        conservation &= conserved(&s);
    }
    let elapsed = start.elapsed();
    let psnr = views
        .iter()
        .map(|v| loss::psnr(&render::render(&s, &v.camera), &v.image).unwrap())
        .sum::<f64>()
        / views.len() as f64;
    let n = s.len() as f64;
    let (sh, sr) = (s.sh().live_count(), s.sr().live_count());
    let pass = psnr >= E2E_PSNR
        && sh as f64 <= E2E_CODEBOOK_FRACTION * n
        && sr as f64 <= E2E_CODEBOOK_FRACTION * n
        && elapsed < E2E_BUDGET
        && conservation;
    report(
        7,
        "end-to-end quality",
        pass,
        &format!(
            "eval PSNR {psnr:.2} dB >= {E2E_PSNR}, |SH| {sh} |SR| {sr} vs N {} (limit {:.0}), {:.1}s",
            s.len(),
            E2E_CODEBOOK_FRACTION * n,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn closed_form_bytes(s: &ModelState) -> (u64, u64) {
    let n = s.len() as u64;
    let d = sh_dim(s.sh_degree()) as u64;
    let compressed = n * 24 + s.sh().live_count() as u64 * d * 4 + s.sr().live_count() as u64 * SR_DIM as u64 * 4;
    (compressed, n * (3 + 1 + d + 7) * 4)
}

#[test]
fn criterion_08_memory_accounting() {
    let mut rng = ChainRng::seed_from_u64(808);
    let mut exact = 0;
    for case in 0..100 {
        let n = rng.random_range(1..200);
        let mut s = ModelState::init_one_to_one(n, case % 4, case as u64, synth_bounds()).unwrap();
        s.densify(rng.random_range(0.1..3.0), 4 * n, 0.01, &mut rng).unwrap();
        for _ in 0..rng.random_range(0..20) {
            let w = CodebookKind::ALL[rng.random_range(0..2)];
            let pairs: Vec<(u32, u32)> = {
                let b = s.codebook(w);
                let live: Vec<u32> = b.live_rows().collect();
                if live.len() < 2 {
                    continue;
                }
                vec![(live[rng.random_range(0..live.len())], live[rng.random_range(0..live.len())])]
            };
            if pairs[0].0 != pairs[0].1 {
                s.merge_rows(w, pairs[0].0, pairs[0].1).unwrap();
            }
        }
        let r = s.model_bytes();
        if (r.compressed_bytes, r.dense_equivalent_bytes) == closed_form_bytes(&s) {
            exact += 1;
        }
    }
    // 1000 Gaussians over 125 rows per codebook: mean refcount 8.
    let positions = vec![[0.0f32; 3]; 1000];
    let index: Vec<u32> = (0..1000).map(|i| (i % 125) as u32).collect();
    let shared = ModelState::from_parts(
        3,
        positions,
        vec![0.0; 1000],
        index.clone(),
        index,
        CodebookRows { values: vec![0.0; 125 * 48], parents: vec![None; 125] },
        CodebookRows { values: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0].repeat(125), parents: vec![None; 125] },
    )
    .unwrap();
    let ratio = shared.model_bytes().ratio;
    let pass = exact == 100 && ratio >= 3.0;
    report(8, "memory accounting", pass, &format!("{exact}/100 exact, mean refcount 8 ratio {ratio:.3} >= 3"));
    assert!(pass);
}

#[test]
fn criterion_09_metric_identities() {
    let mut rng = ChainRng::seed_from_u64(909);
    let mut img = Image::new(23, 17);
    let mut other = Image::new(23, 17);
    for v in img.data_mut().iter_mut().chain(other.data_mut()) {
        *v = rng.random_range(0.0..1.0);
    }
    let psnr_cap = loss::psnr(&img, &img).unwrap() == loss::DEFAULT_PSNR_CAP;
    let ssim_one = (loss::ssim(&img, &img).unwrap() - 1.0).abs() <= 1e-12;
    // Zero variance everywhere: SSIM = (2ab + C1) / (a² + b² + C1).
    let (a, b) = (0.8, 0.3);
    let closed = (2.0 * a * b + loss::SSIM_C1) / (a * a + b * b + loss::SSIM_C1);
    let ssim_const = loss::ssim(&Image::filled(23, 17, [a; 3]), &Image::filled(23, 17, [b; 3])).unwrap();
    let const_ok = (ssim_const - closed).abs() <= SSIM_CONST_TOL;
    let r = loss::recon_loss(&img, &other, 0.0).unwrap();
    let l1 = img.data().iter().zip(other.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / img.data().len() as f64;
    let l1_ok = (r.recon - l1).abs() <= 1e-15;
    let pass = psnr_cap && ssim_one && const_ok && l1_ok;
    report(
        9,
        "metric identities",
        pass,
        &format!("PSNR(x,x)=cap {psnr_cap}, SSIM(x,x)=1 {ssim_one}, constant SSIM err {:.2e}, L1 collapse {l1_ok}", (ssim_const - closed).abs()),
    );
    assert!(pass);
}

fn train_run(scene: &Path, out: &Path, threads: &str) -> (Vec<u8>, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_codesplat"))
        .args(["--threads", threads, "train"])
        .arg(scene)
        .args(["--iters", "400", "--seed", "11", "--out"])
        .arg(out)
        .args(["--set", "sh_degree=0", "--set", "gaussian_cap=256", "--set", "eval_every=100", "--set", "p_split=0.1", "--set", "p_update=0.8", "--set", "p_merge=0.1", "--set", "lambda_sh=0.5"])
        .env_remove("CONTRAGS_THREADS")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (std::fs::read(out.join("model.cgs")).unwrap(), std::fs::read(out.join("metrics.csv")).unwrap())
}

#[test]
fn criterion_10_determinism_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let (_, scene) = synth_scene(64, 3, 64, 0, 16, 0).unwrap();
    let manifest = codesplat_core::io::write_scene(&scene, dir.path().join("scene")).unwrap();
    let a = train_run(&manifest, &dir.path().join("a"), "1");
    let b = train_run(&manifest, &dir.path().join("b"), "4");
    let model_same = a.0 == b.0;
    let csv_same = a.1 == b.1;
    let pass = model_same && csv_same;
    report(
        10,
        "determinism",
        pass,
        &format!("model.cgs identical {model_same} ({} bytes), metrics.csv identical {csv_same} ({} bytes), threads 1 vs 4", a.0.len(), a.1.len()),
    );
    assert!(pass);
}
