//! Command-line front end: `train`, `render`, `eval`, `synth` and `stats`.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "codesplat", version, about = "Codebook-compressed Gaussian splatting")]
pub struct Cli {
    /// Worker threads for rendering (default: all cores).
    #[arg(long, global = true, env = "CONTRAGS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a scene manifest.
    Train(TrainArgs),
    /// Render every manifest view of a model to PNG.
    Render {
        model: PathBuf,
        manifest: PathBuf,
        #[arg(long, default_value = "renders")]
        out: PathBuf,
    },
    /// Report PSNR and SSIM of a model against the manifest images.
    Eval { model: PathBuf, manifest: PathBuf },
    /// Generate a synthetic scene with ground-truth images.
    Synth(SynthCli),
    /// Print memory accounting and reference-count histograms.
    Stats { model: PathBuf },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene manifest (overrides the `scene` config key).
    pub scene: Option<PathBuf>,
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lambda_sh: Option<f64>,
    #[arg(long)]
    pub lambda_sr: Option<f64>,
    /// Split proposal width for both codebooks.
    #[arg(long)]
    pub eps_split: Option<f64>,
    /// Merge proposal width for both codebooks.
    #[arg(long)]
    pub eps_merge: Option<f64>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthCli {
    #[arg(long, default_value_t = 64)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub sh_degree: usize,
    #[arg(long, default_value_t = 16)]
    pub shared_rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "scene")]
    pub out: PathBuf,
}

/// Config file first, then dedicated flags, then `--set` overrides.
pub fn train_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| error::usage(format!("config {}: {e}", path.display())))?;
        c.apply_text(&text)?;
    }
    if let Some(s) = &args.scene {
        c.scene = Some(s.clone());
    }
    if let Some(v) = args.seed {
        c.sampler.seed = v;
    }
    if let Some(v) = args.iters {
        c.iters = v;
    }
    if let Some(v) = &args.out {
        c.out = v.clone();
    }
    if let Some(v) = args.lambda_sh {
        c.sampler.lambda_sh = v;
    }
    if let Some(v) = args.lambda_sr {
        c.sampler.lambda_sr = v;
    }
    if let Some(v) = args.eps_split {
        c.sampler.sh_rates.eps_split = v;
        c.sampler.sr_rates.eps_split = v;
    }
    if let Some(v) = args.eps_merge {
        c.sampler.sh_rates.eps_merge = v;
        c.sampler.sr_rates.eps_merge = v;
    }
    for kv in &args.set {
        c.apply_override(kv)?;
    }
    Ok(c)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Train(args) => commands::cmd_train(&train_config(&args)?, &mut stdout),
        Command::Render { model, manifest, out } => {
            for p in commands::cmd_render(&model, &manifest, &out)? {
                let _ = std::io::Write::write_fmt(&mut stdout, format_args!("{}\n", p.display()));
            }
            Ok(())
        }
        Command::Eval { model, manifest } => commands::cmd_eval(&model, &manifest, &mut stdout).map(|_| ()),
        Command::Synth(a) => {
            let args = commands::SynthArgs {
                gaussians: a.gaussians,
                views: a.views,
                size: a.size,
                sh_degree: a.sh_degree,
                shared_rows: a.shared_rows,
                seed: a.seed,
            };
            let path = commands::cmd_synth(&args, &a.out)?;
            let _ = std::io::Write::write_fmt(&mut stdout, format_args!("{}\n", path.display()));
            Ok(())
        }
        Command::Stats { model } => commands::cmd_stats(&model, &mut stdout),
    }
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
