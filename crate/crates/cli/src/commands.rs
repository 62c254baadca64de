use std::io::Write;
use std::path::{Path, PathBuf};

use codesplat_core::io::{
    self, quantized, EvalRecord, MetricsRow, MetricsWriter, SceneManifest, Split,
};
use codesplat_core::sampler::{train_step, View};
use codesplat_core::{loss, render, ChainRng, CodebookKind, ModelState};
use rand::SeedableRng;

use crate::config::RunConfig;
use crate::error::{usage, CliResult};

fn load_model_arg(path: &Path) -> CliResult<ModelState> {
    if !path.is_file() {
        return Err(usage(format!("model file {} not found", path.display())));
    }
    Ok(io::load_model(path)?)
}

fn check_manifest_arg(path: &Path) -> CliResult<()> {
    if !path.is_file() {
        return Err(usage(format!("manifest {} not found", path.display())));
    }
    Ok(())
}

/// Mean PSNR and reconstruction loss of `state` over `views`.
pub fn evaluate(state: &ModelState, views: &[View], lambda_ssim: f64) -> CliResult<(f64, f64)> {
    let mut psnr = 0.0;
    let mut recon = 0.0;
    for v in views {
        let img = render::render(state, &v.camera);
        psnr += loss::psnr(&img, &v.image)?;
        recon += loss::recon_loss(&img, &v.image, lambda_ssim)?.recon;
    }
    let n = views.len().max(1) as f64;
    Ok((psnr / n, recon / n))
}

/// Trains from a one-to-one initial state; writes `model.cgs`, `metrics.csv`
/// and `checkpoints/iter_NNNNNNNN.cgs` (initial state plus every
/// `checkpoint_every` steps) under the output directory.
pub fn cmd_train(config: &RunConfig, out: &mut impl Write) -> CliResult<()> {
    config.validate()?;
    let scene = config.scene.as_ref().ok_or_else(|| usage("train needs a scene manifest"))?;
    check_manifest_arg(scene)?;
    let loaded = SceneManifest::load_views(scene, None)?;
    if loaded.is_empty() {
        return Err(usage("scene manifest has no views"));
    }
    let train: Vec<View> = loaded.iter().filter(|(m, _)| m.split == Split::Train).map(|(_, v)| v.clone()).collect();
    let train = if train.is_empty() { loaded.iter().map(|(_, v)| v.clone()).collect() } else { train };
    let eval: Vec<View> = loaded.iter().filter(|(m, _)| m.split == Split::Eval).map(|(_, v)| v.clone()).collect();
    let eval = if eval.is_empty() { train.clone() } else { eval };

    let dir = &config.out;
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(codesplat_core::Error::from)?;
    let sampler = &config.sampler;
    let mut state = ModelState::init_one_to_one(config.init_gaussians, config.sh_degree, sampler.seed, config.bounds)?;
    let mut rng = ChainRng::seed_from_u64(sampler.seed);
    let checkpoint = |s: &ModelState| -> CliResult<()> {
        Ok(io::save_model(s, dir.join("checkpoints").join(format!("iter_{:08}.cgs", s.iteration)))?)
    };
    checkpoint(&state)?;
    let mut metrics = MetricsWriter::create(dir.join("metrics.csv"))?;
    let eval_row = |s: &ModelState, metrics: &mut MetricsWriter, out: &mut dyn Write| -> CliResult<()> {
        let (psnr, recon) = evaluate(s, &eval, sampler.lambda_ssim)?;
        metrics.write(&MetricsRow::Eval(EvalRecord {
            iteration: s.iteration,
            live_sh: s.sh().live_count(),
            live_sr: s.sr().live_count(),
            recon,
            psnr,
        }))?;
        let _ = writeln!(
            out,
            "iter {:>7}  N {:>7}  |SH| {:>7}  |SR| {:>7}  psnr {:.3}",
            s.iteration,
            s.len(),
            s.sh().live_count(),
            s.sr().live_count(),
            psnr
        );
        Ok(())
    };
    for _ in 0..config.iters {
        let rec = train_step(&mut state, &train, sampler, &mut rng)?;
        metrics.write(&MetricsRow::Transition(rec))?;
        let it = state.iteration;
        if config.eval_every > 0 && it % config.eval_every == 0 && it < config.iters {
            eval_row(&state, &mut metrics, out)?;
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            checkpoint(&state)?;
        }
    }
    eval_row(&state, &mut metrics, out)?;
    metrics.finish()?;
    io::save_model(&state, dir.join("model.cgs"))?;
    Ok(())
}

/// Renders every view of the manifest to `<out_dir>/<view name>.png`.
pub fn cmd_render(model: &Path, manifest: &Path, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let state = load_model_arg(model)?;
    check_manifest_arg(manifest)?;
    let m = SceneManifest::parse(&std::fs::read_to_string(manifest).map_err(codesplat_core::Error::from)?)?;
    std::fs::create_dir_all(out_dir).map_err(codesplat_core::Error::from)?;
    let mut written = Vec::new();
    for v in &m.views {
        let path = out_dir.join(format!("{}.png", v.name));
        io::write_png(&render::render(&state, &v.camera), &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Per-view PSNR and SSIM against the manifest images. Renders are rounded to
/// 8 bits first, the precision of the stored ground truth.
pub fn cmd_eval(model: &Path, manifest: &Path, out: &mut impl Write) -> CliResult<(f64, f64)> {
    let state = load_model_arg(model)?;
    check_manifest_arg(manifest)?;
    let views = SceneManifest::load_views(manifest, None)?;
    if views.is_empty() {
        return Err(usage("scene manifest has no views"));
    }
    let (mut sum_psnr, mut sum_ssim) = (0.0, 0.0);
    for (m, v) in &views {
        let img = quantized(&render::render(&state, &v.camera));
        let psnr = loss::psnr(&img, &v.image)?;
        let ssim = loss::ssim(&img, &v.image)?;
        let _ = writeln!(out, "{}  psnr {:.4}  ssim {:.6}", m.name, psnr, ssim);
        sum_psnr += psnr;
        sum_ssim += ssim;
    }
    let n = views.len() as f64;
    let means = (sum_psnr / n, sum_ssim / n);
    let _ = writeln!(out, "mean  psnr {:.4}  ssim {:.6}", means.0, means.1);
    Ok(means)
}

pub struct SynthArgs {
    pub gaussians: usize,
    pub views: usize,
    pub size: usize,
    pub sh_degree: usize,
    pub shared_rows: usize,
    pub seed: u64,
}

/// Writes a synthetic scene (`manifest.txt`, PNGs) and its ground-truth model `gt.cgs`.
pub fn cmd_synth(args: &SynthArgs, out_dir: &Path) -> CliResult<PathBuf> {
    let (state, scene) = io::synth_scene(args.gaussians, args.views, args.size, args.sh_degree, args.shared_rows, args.seed)
        .map_err(|e| usage(e.to_string()))?;
    let manifest = io::write_scene(&scene, out_dir)?;
    io::save_model(&state, out_dir.join("gt.cgs"))?;
    Ok(manifest)
}

pub fn cmd_stats(model: &Path, out: &mut impl Write) -> CliResult<()> {
    let state = load_model_arg(model)?;
    let r = state.model_bytes();
    let mut text = String::new();
    text += &format!("gaussians            {}\n", state.len());
    text += &format!("sh_degree            {}\n", state.sh_degree());
    text += &format!("live_sh              {}\n", state.sh().live_count());
    text += &format!("live_sr              {}\n", state.sr().live_count());
    text += &format!("compressed_bytes     {}\n", r.compressed_bytes);
    text += &format!("dense_bytes          {}\n", r.dense_equivalent_bytes);
    text += &format!("ratio                {:.4}\n", r.ratio);
    for which in CodebookKind::ALL {
        text += &format!("refcount_histogram {which}\n");
        for (rc, rows) in state.refcount_histogram(which) {
            text += &format!("  {rc:>6} {rows:>8}\n");
        }
    }
    let _ = out.write_all(text.as_bytes());
    Ok(())
}
