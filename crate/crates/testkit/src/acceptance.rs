#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    Split,
    Merge,
}

/// Direct evaluation of the split and merge acceptance probabilities, with
/// `q_sm(u) = exp(+|u|²/2 · (1/ε_merge² - 1/ε_split²))`. For a split `u` is the
/// proposal offset; for a merge it is `c - c'`.
pub fn acceptance_oracle(
    kind: MoveKind,
    u: &[f64],
    lambda: f64,
    eps_split: f64,
    eps_merge: f64,
    normalization_correction: bool,
) -> f64 {
    let u2: f64 = u.iter().map(|v| v * v).sum();
    let mut q = (u2 / 2.0 * (1.0 / (eps_merge * eps_merge) - 1.0 / (eps_split * eps_split))).exp();
    if normalization_correction {
        q *= (eps_merge / eps_split).powi(u.len() as i32);
    }
    let a = match kind {
        MoveKind::Split => (-lambda).exp() / q,
        MoveKind::Merge => lambda.exp() * q,
    };
    a.min(1.0)
}
