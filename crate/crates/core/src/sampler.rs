//! Metropolis-Hastings chain over the compressed state.
//!
//! Each step draws one transition from the mixture `(update, split, merge)`:
//!
//! * **update**: an SGLD move on every continuous parameter, accepted with
//!   probability one;
//! * **split**: a Gaussian whose row is shared moves onto a perturbed copy
//!   `c + u`, `u ~ N(0, ε_split² I)`, accepted with `min(1, e^{-λ} / q_sm(u))`;
//! * **merge**: a split-lineage pair `(c', c)` drawn with weight
//!   `exp(-|c - c'|² / 2ε_merge²)` collapses onto the parent `c`, accepted with
//!   `min(1, e^{λ} q_sm(c - c'))`;
//!
//! where `q_sm(u) = exp(-|u|²/2 · (1/ε_split² - 1/ε_merge²))`. The posterior
//! ratio of a split or merge is approximated by the codebook-size penalty alone
//! unless `exact_ratio` is set.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::loss::{self, ReconTerms};
use crate::model::{CodebookKind, ModelState, SR_DIM};
use crate::render::{self, GradientSet};

/// A training view: camera plus ground-truth image.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransitionKind {
    Update,
    Split,
    Merge,
}

impl TransitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransitionKind::Update => "update",
            TransitionKind::Split => "split",
            TransitionKind::Merge => "merge",
        }
    }
}

/// Proposal widths for one codebook.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitMergeRates {
    pub eps_split: f64,
    pub eps_merge: f64,
}

impl Default for SplitMergeRates {
    fn default() -> Self {
        Self {
            eps_split: 0.1,
            eps_merge: 0.05,
        }
    }
}

/// Step size `ε` and noise multiplier for one SGLD parameter group. The move is
/// `θ ← θ - (ε/2) ∇L_recon + noise · √ε · η`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgldGroup {
    pub step: f64,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub p_update: f64,
    pub p_split: f64,
    pub p_merge: f64,
    pub sh_rates: SplitMergeRates,
    pub sr_rates: SplitMergeRates,
    pub lambda_sh: f64,
    pub lambda_sr: f64,
    pub lambda_ssim: f64,
    pub sgld_position: SgldGroup,
    pub sgld_opacity: SgldGroup,
    pub sgld_sh: SgldGroup,
    pub sgld_sr: SgldGroup,
    /// Fraction of eligible Gaussians proposed in one split step.
    pub split_fraction: f64,
    /// Fraction of lineage pairs proposed in one merge step.
    pub merge_fraction: f64,
    /// Densify after every this many iterations; 0 disables.
    pub densify_every: u64,
    pub growth_rate: f64,
    pub gaussian_cap: usize,
    /// Std of the positional jitter given to densified clones.
    pub densify_jitter: f64,
    /// Multiply `q_sm` by `(ε_merge/ε_split)^d`, restoring the Gaussian
    /// normalization ratio of the split and merge proposal densities.
    pub normalization_correction: bool,
    /// Render one view to include the true reconstruction-loss change in split
    /// and merge acceptance instead of the penalty-only approximation.
    pub exact_ratio: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            p_update: 0.98,
            p_split: 0.01,
            p_merge: 0.01,
            sh_rates: SplitMergeRates::default(),
            sr_rates: SplitMergeRates::default(),
            lambda_sh: 2.3,
            lambda_sr: 3.0,
            lambda_ssim: loss::DEFAULT_LAMBDA_SSIM,
            sgld_position: SgldGroup { step: 0.5, noise: 1e-3 },
            sgld_opacity: SgldGroup { step: 100.0, noise: 0.0 },
            sgld_sh: SgldGroup { step: 50.0, noise: 0.0 },
            sgld_sr: SgldGroup { step: 15.0, noise: 0.0 },
            split_fraction: 0.01,
            merge_fraction: 0.01,
            densify_every: 100,
            growth_rate: 0.05,
            gaussian_cap: 2_000_000,
            densify_jitter: 0.01,
            normalization_correction: false,
            exact_ratio: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn rates(&self, which: CodebookKind) -> SplitMergeRates {
        match which {
            CodebookKind::Sh => self.sh_rates,
            CodebookKind::Sr => self.sr_rates,
        }
    }

    pub fn lambda(&self, which: CodebookKind) -> f64 {
        match which {
            CodebookKind::Sh => self.lambda_sh,
            CodebookKind::Sr => self.lambda_sr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_update, self.p_split, self.p_merge];
        if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture probabilities must be non-negative and sum to 1"));
        }
        for (name, r) in [("sh", self.sh_rates), ("sr", self.sr_rates)] {
            if !(r.eps_split > 0.0 && r.eps_merge > 0.0) {
                return Err(Error::invalid(format!("{name} split/merge widths must be positive")));
            }
        }
        for (name, g) in [
            ("position", self.sgld_position),
            ("opacity", self.sgld_opacity),
            ("sh", self.sgld_sh),
            ("sr", self.sgld_sr),
        ] {
            if !(g.step >= 0.0 && g.noise >= 0.0 && g.step.is_finite() && g.noise.is_finite()) {
                return Err(Error::invalid(format!("SGLD {name} step and noise must be finite and non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.split_fraction) || !(0.0..=1.0).contains(&self.merge_fraction) {
            return Err(Error::invalid("split/merge fractions must lie in [0, 1]"));
        }
        if !(self.growth_rate > 0.0) {
            return Err(Error::invalid("growth rate must be positive"));
        }
        if !(self.densify_jitter >= 0.0) {
            return Err(Error::invalid("densify jitter must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::invalid("lambda_ssim must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Categorical draw over the transition mixture.
pub fn choose_transition(config: &SamplerConfig, rng: &mut impl Rng) -> TransitionKind {
    let u: f64 = rng.random();
    if u < config.p_update {
        TransitionKind::Update
    } else if u < config.p_update + config.p_split {
        TransitionKind::Split
    } else {
        TransitionKind::Merge
    }
}

/// `q_sm` for a vector with squared norm `u_sq` in `dim` dimensions.
pub fn q_sm(u_sq: f64, dim: usize, rates: SplitMergeRates, normalization_correction: bool) -> f64 {
    log_q_sm(u_sq, dim, rates, normalization_correction).exp()
}

fn log_q_sm(u_sq: f64, dim: usize, rates: SplitMergeRates, correction: bool) -> f64 {
    let s2 = rates.eps_split * rates.eps_split;
    let m2 = rates.eps_merge * rates.eps_merge;
    let mut log_q = -0.5 * u_sq * (1.0 / s2 - 1.0 / m2);
    if correction {
        log_q += dim as f64 * (rates.eps_merge / rates.eps_split).ln();
    }
    log_q
}

/// `min(1, e^{-λ + Δ} / q_sm(u))`, with `Δ` an optional log-likelihood ratio.
pub fn split_acceptance(
    u_sq: f64,
    dim: usize,
    lambda: f64,
    rates: SplitMergeRates,
    normalization_correction: bool,
    log_likelihood_ratio: f64,
) -> f64 {
    let log_a = -lambda + log_likelihood_ratio - log_q_sm(u_sq, dim, rates, normalization_correction);
    log_a.min(0.0).exp()
}

/// `min(1, e^{λ + Δ} q_sm(c - c'))`, with `Δ` an optional log-likelihood ratio.
pub fn merge_acceptance(
    diff_sq: f64,
    dim: usize,
    lambda: f64,
    rates: SplitMergeRates,
    normalization_correction: bool,
    log_likelihood_ratio: f64,
) -> f64 {
    let log_a = lambda + log_likelihood_ratio + log_q_sm(diff_sq, dim, rates, normalization_correction);
    log_a.min(0.0).exp()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// A pending split of Gaussian `gaussian` off `row` onto a new row `new_values`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitProposal {
    pub which: CodebookKind,
    pub gaussian: usize,
    pub row: u32,
    pub new_values: Vec<f32>,
    /// Effective offset `c'' - c` after rounding to storage precision.
    pub u: Vec<f64>,
}

impl SplitProposal {
    /// Proposal with a caller-chosen offset. `None` when the row is not shared.
    pub fn with_offset(state: &ModelState, which: CodebookKind, gaussian: usize, offset: &[f64]) -> Option<Self> {
        if gaussian >= state.len() {
            return None;
        }
        let row = state.row_of(gaussian, which);
        let book = state.codebook(which);
        if book.refcount(row) < 2 || offset.len() != book.dim() {
            return None;
        }
        let base = book.row(row);
        let new_values: Vec<f32> = base.iter().zip(offset).map(|(&c, &u)| (c as f64 + u) as f32).collect();
        let u = new_values.iter().zip(base).map(|(&n, &c)| n as f64 - c as f64).collect();
        Some(Self {
            which,
            gaussian,
            row,
            new_values,
            u,
        })
    }
}

/// Draws `u ~ N(0, ε_split² I)` for Gaussian `i`'s row. `None` unless the row
/// is referenced by at least two Gaussians.
pub fn propose_split(
    state: &ModelState,
    which: CodebookKind,
    i: usize,
    rates: SplitMergeRates,
    rng: &mut impl Rng,
) -> Option<SplitProposal> {
    if i >= state.len() || state.codebook(which).refcount(state.row_of(i, which)) < 2 {
        return None;
    }
    let normal = Normal::new(0.0, rates.eps_split).ok()?;
    let offset: Vec<f64> = (0..state.codebook(which).dim()).map(|_| normal.sample(rng)).collect();
    SplitProposal::with_offset(state, which, i, &offset)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub probability: f64,
    pub accepted: bool,
}

/// Acceptance test for a split; applies it to `state` on acceptance and
/// returns the decision plus the new row.
pub fn accept_split(
    state: &mut ModelState,
    proposal: &SplitProposal,
    config: &SamplerConfig,
    log_likelihood_ratio: f64,
    rng: &mut impl Rng,
) -> Result<(Decision, Option<u32>)> {
    let which = proposal.which;
    let probability = split_acceptance(
        sq_norm(&proposal.u),
        proposal.u.len(),
        config.lambda(which),
        config.rates(which),
        config.normalization_correction,
        log_likelihood_ratio,
    );
    let accepted = rng.random::<f64>() < probability;
    let new_row = if accepted {
        Some(state.split_row(proposal.gaussian, which, &proposal.new_values)?)
    } else {
        None
    };
    Ok((Decision { probability, accepted }, new_row))
}

/// A pending merge of `child` (value `c'`) into its lineage parent (value `c`).
#[derive(Clone, Debug, PartialEq)]
pub struct MergeProposal {
    pub which: CodebookKind,
    pub child: u32,
    pub parent: u32,
    /// `c - c'`.
    pub diff: Vec<f64>,
}

impl MergeProposal {
    pub fn for_pair(state: &ModelState, which: CodebookKind, child: u32, parent: u32) -> Self {
        let book = state.codebook(which);
        let diff = book
            .row(parent)
            .iter()
            .zip(book.row(child))
            .map(|(&c, &cp)| c as f64 - cp as f64)
            .collect();
        Self {
            which,
            child,
            parent,
            diff,
        }
    }
}

/// Selection weights `exp(-|c - c'|² / 2ε²)` over `pairs`, normalized.
pub fn merge_weights(state: &ModelState, which: CodebookKind, pairs: &[(u32, u32)], eps_merge: f64) -> Vec<f64> {
    let book = state.codebook(which);
    let d2: Vec<f64> = pairs
        .iter()
        .map(|&(c, p)| {
            book.row(c)
                .iter()
                .zip(book.row(p))
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum()
        })
        .collect();
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d2.iter().map(|&d| (-(d - min) / (2.0 * eps_merge * eps_merge)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Draws a lineage pair with probability proportional to the merge weight.
/// `None` when no row has a live parent.
pub fn propose_merge(
    state: &ModelState,
    which: CodebookKind,
    rates: SplitMergeRates,
    rng: &mut impl Rng,
) -> Option<MergeProposal> {
    let pairs = state.codebook(which).lineage_pairs();
    if pairs.is_empty() {
        return None;
    }
    let weights = merge_weights(state, which, &pairs, rates.eps_merge);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = pairs.len() - 1;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            pick = k;
            break;
        }
    }
    let (child, parent) = pairs[pick];
    Some(MergeProposal::for_pair(state, which, child, parent))
}

/// Acceptance test for a merge; on acceptance every Gaussian on the child row
/// moves to the parent and the child is freed.
pub fn accept_merge(
    state: &mut ModelState,
    proposal: &MergeProposal,
    config: &SamplerConfig,
    log_likelihood_ratio: f64,
    rng: &mut impl Rng,
) -> Result<Decision> {
    let which = proposal.which;
    let probability = merge_acceptance(
        sq_norm(&proposal.diff),
        proposal.diff.len(),
        config.lambda(which),
        config.rates(which),
        config.normalization_correction,
        log_likelihood_ratio,
    );
    let accepted = rng.random::<f64>() < probability;
    if accepted {
        state.merge_rows(which, proposal.child, proposal.parent)?;
    }
    Ok(Decision { probability, accepted })
}

fn langevin(value: &mut f32, grad: f64, group: SgldGroup, rng: &mut impl Rng) {
    let mut v = *value as f64 - 0.5 * group.step * grad;
    if group.noise > 0.0 && group.step > 0.0 {
        let eta: f64 = StandardNormal.sample(rng);
        v += group.noise * group.step.sqrt() * eta;
    }
    *value = v as f32;
}

/// One SGLD move on every continuous parameter given `∇L_recon`. The codebook
/// penalty has no continuous gradient, so `∇log p = -∇L_recon`.
pub fn sgld_update(
    state: &mut ModelState,
    grads: &GradientSet,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    if !grads.all_finite()
        || grads.positions.len() != state.len()
        || grads.sh.len() != state.sh().values().len()
        || grads.sr.len() != state.sr().values().len()
    {
        return Err(Error::NonFiniteGradient {
            iteration: state.iteration,
        });
    }
    let pos = config.sgld_position;
    if pos.step > 0.0 {
        for (p, g) in state.positions_mut().iter_mut().zip(&grads.positions) {
            for k in 0..3 {
                langevin(&mut p[k], g[k], pos, rng);
            }
        }
    }
    let op = config.sgld_opacity;
    if op.step > 0.0 {
        for (l, g) in state.opacity_logits_mut().iter_mut().zip(&grads.opacity_logits) {
            langevin(l, *g, op, rng);
        }
    }
    for which in CodebookKind::ALL {
        let group = match which {
            CodebookKind::Sh => config.sgld_sh,
            CodebookKind::Sr => config.sgld_sr,
        };
        if group.step == 0.0 {
            continue;
        }
        let rows: Vec<u32> = state.codebook(which).live_rows().collect();
        let book = state.codebook_mut(which);
        let dim = book.dim();
        for r in rows {
            let g = &grads.codebook(which)[r as usize * dim..(r as usize + 1) * dim];
            let row = book.row_mut(r);
            for (v, &gv) in row.iter_mut().zip(g) {
                langevin(v, gv, group, rng);
            }
            if which == CodebookKind::Sr {
                normalize_quaternion(&mut row[3..SR_DIM]);
            }
        }
    }
    Ok(())
}

fn normalize_quaternion(q: &mut [f32]) {
    let n = q.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        for v in q.iter_mut() {
            *v = (*v as f64 / n) as f32;
        }
    } else {
        q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
    }
}

/// One proposal evaluated during a split or merge step.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalLog {
    /// `|u|²` for splits, `|c - c'|²` for merges.
    pub sq_norm: f64,
    pub dim: usize,
    pub log_likelihood_ratio: f64,
    pub probability: f64,
    pub accepted: bool,
}

/// Outcome of one [`train_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub iteration: u64,
    pub kind: TransitionKind,
    pub codebook: Option<CodebookKind>,
    pub attempts: usize,
    pub accepts: usize,
    pub delta_sh: i64,
    pub delta_sr: i64,
    pub live_sh: usize,
    pub live_sr: usize,
    pub gaussians: usize,
    pub densified: usize,
    pub recon: Option<f64>,
    pub total: Option<f64>,
    pub proposals: Vec<ProposalLog>,
}

/// Reconstruction loss of `state` on `view`.
pub fn view_recon(state: &ModelState, view: &View, lambda_ssim: f64) -> Result<ReconTerms> {
    let img = render::render(state, &view.camera);
    loss::recon_loss(&img, &view.image, lambda_ssim)
}

fn batch_size(fraction: f64, available: usize) -> usize {
    if available == 0 {
        0
    } else {
        ((fraction * available as f64).ceil() as usize).clamp(1, available)
    }
}

/// Runs one transition of the chain and, on schedule, densification.
pub fn train_step(
    state: &mut ModelState,
    views: &[View],
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<TransitionRecord> {
    if views.is_empty() {
        return Err(Error::invalid("training needs at least one view"));
    }
    let iteration = state.iteration;
    let live_before = (state.sh().live_count() as i64, state.sr().live_count() as i64);
    let kind = choose_transition(config, rng);
    let mut record = TransitionRecord {
        iteration,
        kind,
        codebook: None,
        attempts: 0,
        accepts: 0,
        delta_sh: 0,
        delta_sr: 0,
        live_sh: 0,
        live_sr: 0,
        gaussians: 0,
        densified: 0,
        recon: None,
        total: None,
        proposals: Vec::new(),
    };
    match kind {
        TransitionKind::Update => {
            let view = &views[rng.random_range(0..views.len())];
            let art = render::rasterize_forward(state, &view.camera);
            let (terms, dl) = loss::recon_loss_with_grad(&art.image, &view.image, config.lambda_ssim)?;
            let grads = render::rasterize_backward(state, &view.camera, &art, &dl)?;
            sgld_update(state, &grads, config, rng)?;
            let total = loss::total_loss(
                terms,
                state.sh().live_count(),
                state.sr().live_count(),
                config.lambda_sh,
                config.lambda_sr,
            );
            record.attempts = 1;
            record.accepts = 1;
            record.recon = Some(terms.recon);
            record.total = Some(total.total);
        }
        TransitionKind::Split => {
            let which = if rng.random_bool(0.5) { CodebookKind::Sh } else { CodebookKind::Sr };
            record.codebook = Some(which);
            let eligible: Vec<usize> = (0..state.len())
                .filter(|&i| state.codebook(which).refcount(state.row_of(i, which)) >= 2)
                .collect();
            let k = batch_size(config.split_fraction, eligible.len());
            let picks = index::sample(rng, eligible.len(), k).into_vec();
            for pick in picks {
                let i = eligible[pick];
                let Some(proposal) = propose_split(state, which, i, config.rates(which), rng) else {
                    continue;
                };
                let delta = if config.exact_ratio {
                    let view = &views[rng.random_range(0..views.len())];
                    let mut trial = state.clone();
                    trial.split_row(i, which, &proposal.new_values)?;
                    -(view_recon(&trial, view, config.lambda_ssim)?.recon
                        - view_recon(state, view, config.lambda_ssim)?.recon)
                } else {
                    0.0
                };
                let (decision, _) = accept_split(state, &proposal, config, delta, rng)?;
                record.attempts += 1;
                record.accepts += decision.accepted as usize;
                record.proposals.push(ProposalLog {
                    sq_norm: sq_norm(&proposal.u),
                    dim: proposal.u.len(),
                    log_likelihood_ratio: delta,
                    probability: decision.probability,
                    accepted: decision.accepted,
                });
            }
        }
        TransitionKind::Merge => {
            let which = if rng.random_bool(0.5) { CodebookKind::Sh } else { CodebookKind::Sr };
            record.codebook = Some(which);
            let k = batch_size(config.merge_fraction, state.codebook(which).lineage_pairs().len());
            for _ in 0..k {
                let Some(proposal) = propose_merge(state, which, config.rates(which), rng) else {
                    break;
                };
                let delta = if config.exact_ratio {
                    let view = &views[rng.random_range(0..views.len())];
                    let mut trial = state.clone();
                    trial.merge_rows(which, proposal.child, proposal.parent)?;
                    -(view_recon(&trial, view, config.lambda_ssim)?.recon
                        - view_recon(state, view, config.lambda_ssim)?.recon)
                } else {
                    0.0
                };
                let decision = accept_merge(state, &proposal, config, delta, rng)?;
                record.attempts += 1;
                record.accepts += decision.accepted as usize;
                record.proposals.push(ProposalLog {
                    sq_norm: sq_norm(&proposal.diff),
                    dim: proposal.diff.len(),
                    log_likelihood_ratio: delta,
                    probability: decision.probability,
                    accepted: decision.accepted,
                });
            }
        }
    }
    state.iteration += 1;
    if config.densify_every > 0 && state.iteration % config.densify_every == 0 {
        let cap = config.gaussian_cap.max(state.len());
        record.densified = state.densify(config.growth_rate, cap, config.densify_jitter, rng)?;
    }
    record.live_sh = state.sh().live_count();
    record.live_sr = state.sr().live_count();
    record.delta_sh = record.live_sh as i64 - live_before.0;
    record.delta_sr = record.live_sr as i64 - live_before.1;
    record.gaussians = state.len();
    Ok(record)
}
