use codesplat_core::sampler::{train_step, SamplerConfig, View};
use codesplat_core::{CodebookKind, ModelState, Result, TransitionKind};
use rand::Rng;

/// One split or merge proposal logged by the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeProposal {
    pub kind: TransitionKind,
    pub codebook: CodebookKind,
    pub sq_norm: f64,
    pub dim: usize,
    pub lambda: f64,
    pub log_likelihood_ratio: f64,
    pub probability: f64,
    pub accepted: bool,
}

/// Trajectories and rates collected over a chain run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainStats {
    /// Live SH rows after each step.
    pub sh: Vec<usize>,
    pub sr: Vec<usize>,
    pub gaussians: Vec<usize>,
    /// Reconstruction loss of each update step, as `(iteration, loss)`.
    pub losses: Vec<(u64, f64)>,
    pub split_attempts: usize,
    pub split_accepts: usize,
    pub merge_attempts: usize,
    pub merge_accepts: usize,
    pub proposals: Vec<ProbeProposal>,
}

impl ChainStats {
    pub fn final_sh(&self) -> usize {
        self.sh.last().copied().unwrap_or(0)
    }

    pub fn final_sr(&self) -> usize {
        self.sr.last().copied().unwrap_or(0)
    }

    pub fn final_gaussians(&self) -> usize {
        self.gaussians.last().copied().unwrap_or(0)
    }
}

/// Runs `iters` train steps on `state`, recording statistics after each.
pub fn chain_probe(
    state: &mut ModelState,
    views: &[View],
    config: &SamplerConfig,
    iters: usize,
    rng: &mut impl Rng,
) -> Result<ChainStats> {
    let mut stats = ChainStats::default();
    for _ in 0..iters {
        let rec = train_step(state, views, config, rng)?;
        match rec.kind {
            TransitionKind::Update => {
                if let Some(l) = rec.recon {
                    stats.losses.push((rec.iteration, l));
                }
            }
            TransitionKind::Split => {
                stats.split_attempts += rec.attempts;
                stats.split_accepts += rec.accepts;
            }
            TransitionKind::Merge => {
                stats.merge_attempts += rec.attempts;
                stats.merge_accepts += rec.accepts;
            }
        }
        if let Some(which) = rec.codebook {
            let lambda = config.lambda(which);
            for p in &rec.proposals {
                stats.proposals.push(ProbeProposal {
                    kind: rec.kind,
                    codebook: which,
                    sq_norm: p.sq_norm,
                    dim: p.dim,
                    lambda,
                    log_likelihood_ratio: p.log_likelihood_ratio,
                    probability: p.probability,
                    accepted: p.accepted,
                });
            }
        }
        stats.sh.push(rec.live_sh);
        stats.sr.push(rec.live_sr);
        stats.gaussians.push(rec.gaussians);
    }
    Ok(stats)
}
