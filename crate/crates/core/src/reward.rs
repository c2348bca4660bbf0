//! Immediate rewards and their spatial propagation over a finished parse.

use crate::atoms::{ActionKind, NodeId, ParseTree};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RewardConfig {
    pub alpha_anchor: f64,
    pub alpha_subgrammar: f64,
    pub lambda: f64,
    /// Fixed reward of the integer action, see [`integer_reward_constant`].
    pub integer_reward: f64,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_anchor", self.alpha_anchor),
            ("alpha_subgrammar", self.alpha_subgrammar),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !self.integer_reward.is_finite() {
            return Err(Error::invalid("integer reward must be finite"));
        }
        Ok(())
    }
}

/// Log frequency of the counted representation, plus the log of the
/// matching alpha for anchored and subgrammar merges.
pub fn immediate_reward(kind: ActionKind, effective_frequency: f64, cfg: &RewardConfig) -> f64 {
    let base = effective_frequency.ln();
    match kind {
        ActionKind::Merge => base,
        ActionKind::AnchorLeft | ActionKind::AnchorRight => base + cfg.alpha_anchor.ln(),
        ActionKind::SubgramLeft | ActionKind::SubgramRight => base + cfg.alpha_subgrammar.ln(),
        ActionKind::ParseInteger => cfg.integer_reward,
    }
}

/// Number of maximal ASCII digit runs across all sentences.
pub fn count_digit_runs<S: AsRef<[u8]>>(corpus: &[S]) -> usize {
    corpus
        .iter()
        .map(|s| {
            let s = s.as_ref();
            (0..s.len())
                .filter(|&i| s[i].is_ascii_digit() && (i == 0 || !s[i - 1].is_ascii_digit()))
                .count()
        })
        .sum()
}

/// Reward of the integer action: the log of half the number of integers in
/// the corpus, expressed as a steady-state count over a `T_freq` character
/// window (`count · T_freq / corpus characters`). Falls back to
/// `ln(1/T_freq)` when the corpus has no digits.
pub fn integer_reward_constant<S: AsRef<[u8]>>(corpus: &[S], t_freq: f64) -> f64 {
    let runs = count_digit_runs(corpus);
    let chars: usize = corpus.iter().map(|s| s.as_ref().len()).sum();
    if runs == 0 || chars == 0 {
        return (1.0 / t_freq).ln();
    }
    (0.5 * runs as f64 * t_freq / chars as f64).ln()
}

/// Spatially discounted value of every action node.
///
/// For action node `n`, `value(n) = Σ_m λ^d(n,m) I_m / Σ_m λ^d(n,m)` over all
/// action nodes `m` of the same tree, `d` counting parent-child edges.
/// Computed in two sweeps: subtree sums bottom-up, then rerooting top-down.
/// Returns one entry per tree node; leaves get `None`.
pub fn spatial_values(tree: &ParseTree, lambda: f64) -> Result<Vec<Option<f64>>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    let nodes = tree.nodes();
    let n = nodes.len();
    let mut reward = vec![0.0; n];
    for (i, node) in nodes.iter().enumerate() {
        if node.is_action() {
            reward[i] = node
                .reward
                .ok_or_else(|| Error::InvalidState(format!("action node {i} has no reward")))?;
        }
    }
    // (weighted reward sum, weight sum) restricted to the subtree
    let mut sub = vec![(0.0f64, 0.0f64); n];
    for i in 0..n {
        if !nodes[i].is_action() {
            continue;
        }
        let mut acc = (reward[i], 1.0);
        for c in &nodes[i].children {
            if nodes[c.0].is_action() {
                acc.0 += lambda * sub[c.0].0;
                acc.1 += lambda * sub[c.0].1;
            }
        }
        sub[i] = acc;
    }
    // parents come after children, so walk in reverse for the top-down pass
    let mut full = vec![(0.0f64, 0.0f64); n];
    for i in (0..n).rev() {
        if !nodes[i].is_action() {
            continue;
        }
        full[i] = match nodes[i].parent {
            Some(p) => {
                let up = (
                    full[p.0].0 - lambda * sub[i].0,
                    full[p.0].1 - lambda * sub[i].1,
                );
                (sub[i].0 + lambda * up.0, sub[i].1 + lambda * up.1)
            }
            None => sub[i],
        };
    }
    Ok((0..n)
        .map(|i| nodes[i].is_action().then(|| full[i].0 / full[i].1))
        .collect())
}

/// Spatial value of a single node.
pub fn spatial_value(tree: &ParseTree, lambda: f64, node: NodeId) -> Result<Option<f64>> {
    Ok(spatial_values(tree, lambda)?[node.0])
}
