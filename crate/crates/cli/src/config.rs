//! Run configuration: `key = value` lines, `#` starts a comment.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `scene` | none | scene manifest path |
//! | `out` | `out` | output directory |
//! | `iters` | 2000 | train steps |
//! | `eval_every` | 500 | eval cadence in steps (0: only at the end) |
//! | `checkpoint_every` | 1000 | checkpoint cadence in steps (0: none) |
//! | `init_gaussians` | 64 | Gaussians in the one-to-one initial state |
//! | `sh_degree` | 3 | SH degree of the trained model |
//! | `bounds` | `-1,-1,-1,1,1,1` | box for initial positions (min then max) |
//! | `seed` | 0 | seed for initialization and the chain |
//! | `p_update`, `p_split`, `p_merge` | 0.98, 0.01, 0.01 | transition mixture |
//! | `eps_split_sh`, `eps_merge_sh` | 0.1, 0.05 | SH proposal widths |
//! | `eps_split_sr`, `eps_merge_sr` | 0.1, 0.05 | SR proposal widths |
//! | `lambda_sh`, `lambda_sr` | 2.3, 3 | codebook-size penalties |
//! | `lambda_ssim` | 0.2 | SSIM weight of the reconstruction loss |
//! | `step_position`, `step_opacity`, `step_sh`, `step_sr` | 0.5, 100, 50, 15 | SGLD step sizes |
//! | `noise_position`, `noise_opacity`, `noise_sh`, `noise_sr` | 0.001, 0, 0, 0 | SGLD noise multipliers |
//! | `split_fraction`, `merge_fraction` | 0.01, 0.01 | candidates per split/merge step |
//! | `densify_every`, `growth_rate` | 100, 0.05 | densification schedule |
//! | `gaussian_cap` | 2000000 | densification cap |
//! | `densify_jitter` | 0.01 | clone position jitter |
//! | `normalization_correction`, `exact_ratio` | false, false | acceptance variants |

use std::path::PathBuf;

use codesplat_core::{Aabb, SamplerConfig};

use crate::error::{usage, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub scene: Option<PathBuf>,
    pub out: PathBuf,
    pub iters: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub init_gaussians: usize,
    pub sh_degree: usize,
    pub bounds: Aabb,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            scene: None,
            out: PathBuf::from("out"),
            iters: 2000,
            eval_every: 500,
            checkpoint_every: 1000,
            init_gaussians: 64,
            sh_degree: 3,
            bounds: Aabb::cube(1.0),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| usage(format!("config key `{key}`: cannot parse `{value}`: {e}")))
}

impl RunConfig {
    /// Sets one key. Unknown keys and unparsable values are usage errors.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let s = &mut self.sampler;
        match key {
            "scene" => self.scene = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "iters" => self.iters = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "init_gaussians" => self.init_gaussians = parse(key, value)?,
            "sh_degree" => self.sh_degree = parse(key, value)?,
            "bounds" => {
                let v: Vec<f64> = value.split(',').map(|t| parse(key, t.trim())).collect::<CliResult<_>>()?;
                if v.len() != 6 {
                    return Err(usage("config key `bounds` needs 6 comma-separated values"));
                }
                self.bounds = Aabb::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]);
            }
            "seed" => s.seed = parse(key, value)?,
            "p_update" => s.p_update = parse(key, value)?,
            "p_split" => s.p_split = parse(key, value)?,
            "p_merge" => s.p_merge = parse(key, value)?,
            "eps_split_sh" => s.sh_rates.eps_split = parse(key, value)?,
            "eps_merge_sh" => s.sh_rates.eps_merge = parse(key, value)?,
            "eps_split_sr" => s.sr_rates.eps_split = parse(key, value)?,
            "eps_merge_sr" => s.sr_rates.eps_merge = parse(key, value)?,
            "lambda_sh" => s.lambda_sh = parse(key, value)?,
            "lambda_sr" => s.lambda_sr = parse(key, value)?,
            "lambda_ssim" => s.lambda_ssim = parse(key, value)?,
            "step_position" => s.sgld_position.step = parse(key, value)?,
            "step_opacity" => s.sgld_opacity.step = parse(key, value)?,
            "step_sh" => s.sgld_sh.step = parse(key, value)?,
            "step_sr" => s.sgld_sr.step = parse(key, value)?,
            "noise_position" => s.sgld_position.noise = parse(key, value)?,
            "noise_opacity" => s.sgld_opacity.noise = parse(key, value)?,
            "noise_sh" => s.sgld_sh.noise = parse(key, value)?,
            "noise_sr" => s.sgld_sr.noise = parse(key, value)?,
            "split_fraction" => s.split_fraction = parse(key, value)?,
            "merge_fraction" => s.merge_fraction = parse(key, value)?,
            "densify_every" => s.densify_every = parse(key, value)?,
            "growth_rate" => s.growth_rate = parse(key, value)?,
            "gaussian_cap" => s.gaussian_cap = parse(key, value)?,
            "densify_jitter" => s.densify_jitter = parse(key, value)?,
            "normalization_correction" => s.normalization_correction = parse(key, value)?,
            "exact_ratio" => s.exact_ratio = parse(key, value)?,
            _ => return Err(usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> CliResult<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("override `{kv}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.sampler.validate().map_err(|e| usage(e.to_string()))?;
        self.bounds.validate().map_err(|e| usage(e.to_string()))?;
        if self.init_gaussians == 0 {
            return Err(usage("init_gaussians must be at least 1"));
        }
        if self.sh_degree > codesplat_core::model::MAX_SH_DEGREE {
            return Err(usage("sh_degree must be at most 3"));
        }
        if self.sampler.gaussian_cap < self.init_gaussians {
            return Err(usage("gaussian_cap is below init_gaussians"));
        }
        Ok(())
    }
}
