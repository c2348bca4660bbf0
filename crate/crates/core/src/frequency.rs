//! Policy-robust frequency estimation for atom types.
//!
//! Each action produces four count statistics for its result atom (see
//! [`CStats`]). The outer count is logged into a [`FrequencyTable`] that keeps
//! exponential averages over a character clock: a decay of `e^-1` every
//! `T_freq` input characters, limited to `e^(-1/N_freq)` between two
//! consecutive observations of the same type.

use std::collections::HashMap;
use std::sync::Arc;

use crate::atoms::{ActionKind, ActionRef, SentenceState, TokenId, TypeId, TypeTable};
use crate::error::{Error, Result};

/// Count statistics carried by an atom and inherited by its ancestors.
///
/// `outer` is the count of the atom's own representation, `left` applies to
/// ancestors that only add atoms on the right, `right` to ancestors that only
/// add atoms on the left, and `inner` to ancestors that add on both sides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CStats {
    pub outer: f64,
    pub left: f64,
    pub right: f64,
    pub inner: f64,
}

impl CStats {
    pub const ONE: CStats = CStats {
        outer: 1.0,
        left: 1.0,
        right: 1.0,
        inner: 1.0,
    };

    pub fn scale(self, f: f64) -> CStats {
        CStats {
            outer: self.outer * f,
            left: self.left * f,
            right: self.right * f,
            inner: self.inner * f,
        }
    }

    pub fn as_array(self) -> [f64; 4] {
        [self.outer, self.left, self.right, self.inner]
    }
}

/// Multiplier applied to the stats of anchored and subgrammar results.
pub const ANCHOR_PENALTY: f64 = 0.606_530_659_712_633_4; // e^(-1/2)

/// Scale stats by `e^(-1/2)` when the action is an anchored or subgrammar
/// merge; other kinds pass through unchanged.
pub fn apply_anchor_penalty(kind: ActionKind, stats: CStats) -> CStats {
    if kind.is_anchor() || kind.is_subgram() {
        stats.scale(ANCHOR_PENALTY)
    } else {
        stats
    }
}

const OUTER: usize = 0;
const LEFT: usize = 1;
const RIGHT: usize = 2;
const INNER: usize = 3;

/// Estimate the count statistics of the atom `chosen` would create.
///
/// `candidates` is every currently valid action in the sentence; only those
/// sharing an atom with `chosen` are considered. `policy_prob` must be
/// proportional to the policy's probability within that comparison set.
pub fn estimate_counts(
    state: &SentenceState,
    types: &TypeTable,
    chosen: ActionRef,
    candidates: &[ActionRef],
    policy_prob: impl Fn(ActionRef) -> f64,
) -> CStats {
    let atoms = state.atoms();
    let p = chosen.position;
    match chosen.kind {
        // single-constituent results inherit the kept atom's statistics
        ActionKind::AnchorLeft => return atoms[p].stats,
        ActionKind::AnchorRight => return atoms[p + 1].stats,
        // the integer action has a fixed reward and starts a fresh count
        ActionKind::ParseInteger => return CStats::ONE,
        _ => {}
    }

    let (l, r) = (&atoms[p], &atoms[p + 1]);
    let mut c = [1.0f64; 4];
    let leftmost = |c: &mut [f64; 4], t: CStats| {
        c[OUTER] *= t.left;
        c[LEFT] *= t.left;
        c[RIGHT] *= t.inner;
        c[INNER] *= t.inner;
    };
    let rightmost = |c: &mut [f64; 4], t: CStats| {
        c[OUTER] *= t.right;
        c[RIGHT] *= t.right;
        c[LEFT] *= t.inner;
        c[INNER] *= t.inner;
    };
    // the subgrammar token stands in for the replaced atom and carries no stats
    if chosen.kind != ActionKind::SubgramRight {
        leftmost(&mut c, l.stats);
    }
    if chosen.kind != ActionKind::SubgramLeft {
        rightmost(&mut c, r.stats);
    }

    let chosen_result = types.result_tokens(chosen.kind, l.ty, r.ty);
    let pair = p..p + 2;
    let mut good = [policy_prob(chosen); 4];
    let mut bad = [0.0f64; 4];
    for &z in candidates {
        if z == chosen {
            continue;
        }
        let Some(za) = state.affected(types, z) else {
            continue;
        };
        let lo = za.start.max(pair.start);
        let hi = za.end.min(pair.end);
        if lo >= hi {
            continue;
        }
        let pz = policy_prob(z);
        if z.kind == ActionKind::ParseInteger {
            bad.iter_mut().for_each(|b| *b += pz);
            continue;
        }
        let (zl, zr) = (atoms[z.position].ty, atoms[z.position + 1].ty);
        let z_result = types.result_tokens(z.kind, zl, zr);
        if za == pair {
            if z_result == chosen_result {
                good.iter_mut().for_each(|g| *g += pz);
            } else {
                bad.iter_mut().for_each(|b| *b += pz);
            }
            continue;
        }
        // exactly one shared atom
        let overlapped = lo;
        if z_result[..] == types.tokens(atoms[overlapped].ty)[..] {
            // the overlapped atom survives as an equivalent atom
            continue;
        }
        let overlapped_is_zleft = overlapped == z.position;
        let keeps_overlapped = match z.kind {
            ActionKind::Merge => true,
            ActionKind::SubgramLeft | ActionKind::AnchorLeft => overlapped_is_zleft,
            ActionKind::SubgramRight | ActionKind::AnchorRight => !overlapped_is_zleft,
            ActionKind::ParseInteger => false,
        };
        if keeps_overlapped {
            let side = if z.position < p { LEFT } else { RIGHT };
            bad[OUTER] += pz;
            bad[side] += pz;
        } else {
            bad.iter_mut().for_each(|b| *b += pz);
        }
    }
    debug_assert!(good.iter().all(|&g| g > 0.0), "chosen action must be in G");
    for i in 0..4 {
        c[i] *= 1.0 + bad[i] / good[i];
    }
    CStats {
        outer: c[OUTER],
        left: c[LEFT],
        right: c[RIGHT],
        inner: c[INNER],
    }
}

/// Exponential averages kept for one atom type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencyEntry {
    pub corrected: f64,
    pub uncorrected: f64,
    pub high_water: f64,
    pub snapshot_corrected: f64,
    pub last_clock: u64,
    /// Batch in which the type was first observed.
    pub first_batch: u64,
}

/// A single pending observation, buffered during a parse and committed
/// afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub ty: TypeId,
    pub c_outer: f64,
}

#[derive(Clone, Debug)]
pub struct FrequencyTable {
    entries: HashMap<TypeId, FrequencyEntry>,
    clock: u64,
    batch: u64,
    t_freq: f64,
    n_freq: f64,
}

impl FrequencyTable {
    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(t_freq: f64, n_freq: f64) -> Result<Self> {
        if !(t_freq > 0.0) || !(n_freq > 0.0) {
            return Err(Error::invalid("T_freq and N_freq must be positive"));
        }
        Ok(FrequencyTable {
            entries: HashMap::new(),
            clock: 0,
            batch: 0,
            t_freq,
            n_freq,
        })
    }

    pub fn t_freq(&self) -> f64 {
        self.t_freq
    }

    pub fn n_freq(&self) -> f64 {
        self.n_freq
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn batch(&self) -> u64 {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, ty: TypeId) -> Option<&FrequencyEntry> {
        self.entries.get(&ty)
    }

    /// Advance the character clock as input streams in.
    pub fn advance(&mut self, chars: u64) {
        self.clock += chars;
    }

    /// Close the current training batch. Types first seen in it start
    /// reporting their snapshot from the next batch on.
    pub fn end_batch(&mut self) {
        self.batch += 1;
    }

    /// Decay factor between an observation at `last` and one at the current
    /// clock.
    pub fn observation_decay(&self, last: u64) -> f64 {
        let elapsed = self.clock.saturating_sub(last) as f64;
        (-elapsed / self.t_freq).exp().max((-1.0 / self.n_freq).exp())
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn observe(&mut self, ty: TypeId, c_outer: f64) -> Result<()> {
        if !(c_outer >= 0.0) {
            return Err(Error::invalid(format!("negative count {c_outer}")));
        }
        let clock = self.clock;
        let batch = self.batch;
        let decay = match self.entries.get(&ty) {
            Some(e) => self.observation_decay(e.last_clock),
            None => 0.0,
        };
        let e = self.entries.entry(ty).or_insert(FrequencyEntry {
            corrected: 0.0,
            uncorrected: 0.0,
            high_water: 0.0,
            snapshot_corrected: 0.0,
            last_clock: clock,
            first_batch: batch,
        });
        e.corrected = e.corrected * decay + c_outer;
        e.uncorrected = e.uncorrected * decay + 1.0;
        e.high_water *= decay;
        e.snapshot_corrected *= decay;
        if e.uncorrected > e.high_water {
            e.high_water = e.uncorrected;
            e.snapshot_corrected = e.corrected;
        }
        e.last_clock = clock;
        Ok(())
    }

    pub fn commit(&mut self, observations: &[Observation]) -> Result<()> {
        for o in observations {
            self.observe(o.ty, o.c_outer)?;
        }
        Ok(())
    }

    /// `(corrected, uncorrected)` decayed without limit to the current clock.
    pub fn averages_now(&self, ty: TypeId) -> Option<(f64, f64)> {
        self.entries.get(&ty).map(|e| {
            let f = (-(self.clock.saturating_sub(e.last_clock) as f64) / self.t_freq).exp();
            (e.corrected * f, e.uncorrected * f)
        })
    }

    /// Frequency used for rewards: the high-water snapshot, decayed to the
    /// current clock, once the type has survived a completed batch;
    /// `1/T_freq` otherwise. Never below `1/T_freq`.
    pub fn effective_frequency(&self, ty: TypeId) -> f64 {
        let floor = 1.0 / self.t_freq;
        match self.entries.get(&ty) {
            Some(e) if e.first_batch < self.batch => {
                let elapsed = self.clock.saturating_sub(e.last_clock) as f64;
                (e.snapshot_corrected * (-elapsed / self.t_freq).exp()).max(floor)
            }
            _ => floor,
        }
    }

    /// Entries keyed by token sequence, sorted, for persistence and reports.
    pub fn export(&self, types: &TypeTable) -> Vec<(Arc<[TokenId]>, FrequencyEntry)> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .map(|(&ty, &e)| (types.tokens(ty), e))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn import(
        types: &TypeTable,
        t_freq: f64,
        n_freq: f64,
        clock: u64,
        batch: u64,
        entries: impl IntoIterator<Item = (Vec<TokenId>, FrequencyEntry)>,
    ) -> Result<Self> {
        let mut table = FrequencyTable::new(t_freq, n_freq)?;
        table.clock = clock;
        table.batch = batch;
        for (tokens, e) in entries {
            table.entries.insert(types.intern(&tokens)?, e);
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Embedder;
    use approx::assert_abs_diff_eq;

    fn table() -> TypeTable {
        TypeTable::new(Arc::new(Embedder::new(0, 4, 1.0).unwrap()))
    }

    #[test]
    fn lone_action_keeps_unit_stats() {
        let t = table();
        let s = SentenceState::new(&t, b"ab").unwrap();
        let chosen = ActionRef::new(ActionKind::Merge, 0);
        let stats = estimate_counts(&s, &t, chosen, &[chosen], |_| 1.0);
        assert_eq!(stats, CStats::ONE);
    }

    #[test]
    fn full_overlap_competitor_doubles_counts() {
        let t = table();
        let s = SentenceState::new(&t, b"ab").unwrap();
        let chosen = ActionRef::new(ActionKind::Merge, 0);
        let other = ActionRef::new(ActionKind::SubgramLeft, 0);
        let stats = estimate_counts(&s, &t, chosen, &[chosen, other], |_| 0.3);
        assert_eq!(stats, CStats::ONE.scale(2.0));
    }

    #[test]
    fn distinct_results_are_bad() {
        let t = table();
        let s = SentenceState::new(&t, b"aa").unwrap();
        let chosen = ActionRef::new(ActionKind::SubgramLeft, 0);
        let cands = [
            chosen,
            ActionRef::new(ActionKind::SubgramRight, 0),
            ActionRef::new(ActionKind::Merge, 0),
        ];
        // "a~G~" vs "~G~a" differ, so both competitors are bad
        let stats = estimate_counts(&s, &t, chosen, &cands, |_| 1.0);
        assert_abs_diff_eq!(stats.outer, 3.0);
    }

    #[test]
    fn single_overlap_extension_is_side_specific() {
        let t = table();
        let s = SentenceState::new(&t, b"xab").unwrap();
        let chosen = ActionRef::new(ActionKind::Merge, 1);
        // merging x with a keeps "a" inside its result and extends left
        let ext = ActionRef::new(ActionKind::Merge, 0);
        let stats = estimate_counts(&s, &t, chosen, &[chosen, ext], |_| 1.0);
        assert_eq!(stats.outer, 2.0);
        assert_eq!(stats.left, 2.0);
        assert_eq!(stats.right, 1.0);
        assert_eq!(stats.inner, 1.0);

        // replacing "a" with the subgrammar token does not keep it
        let sub = ActionRef::new(ActionKind::SubgramLeft, 0);
        let stats = estimate_counts(&s, &t, chosen, &[chosen, sub], |_| 1.0);
        assert_eq!(stats, CStats::ONE.scale(2.0));

        // keeping "a" via an anchor replaces it with an equivalent atom
        let keep = ActionRef::new(ActionKind::AnchorRight, 0);
        let stats = estimate_counts(&s, &t, chosen, &[chosen, keep], |_| 1.0);
        assert_eq!(stats, CStats::ONE);
    }

    #[test]
    fn anchored_results_pass_stats_through() {
        let t = table();
        let mut s = SentenceState::new(&t, b"ab").unwrap();
        let left = CStats { outer: 2.0, left: 3.0, right: 4.0, inner: 5.0 };
        s.set_stats(0, left);
        let chosen = ActionRef::new(ActionKind::AnchorLeft, 0);
        let others = [chosen, ActionRef::new(ActionKind::Merge, 0)];
        assert_eq!(estimate_counts(&s, &t, chosen, &others, |_| 1.0), left);
    }

    #[test]
    fn child_stats_feed_parent() {
        let t = table();
        let mut s = SentenceState::new(&t, b"ab").unwrap();
        s.set_stats(0, CStats { outer: 9.0, left: 2.0, right: 7.0, inner: 3.0 });
        s.set_stats(1, CStats { outer: 9.0, left: 7.0, right: 5.0, inner: 11.0 });
        let chosen = ActionRef::new(ActionKind::Merge, 0);
        let stats = estimate_counts(&s, &t, chosen, &[chosen], |_| 1.0);
        assert_eq!(stats.outer, 2.0 * 5.0);
        assert_eq!(stats.left, 2.0 * 11.0);
        assert_eq!(stats.right, 3.0 * 5.0);
        assert_eq!(stats.inner, 3.0 * 11.0);

        let sub = ActionRef::new(ActionKind::SubgramLeft, 0);
        let stats = estimate_counts(&s, &t, sub, &[sub], |_| 1.0);
        assert_eq!(stats, CStats { outer: 2.0, left: 2.0, right: 3.0, inner: 3.0 });
    }

    #[test]
    fn penalty() {
        let once = apply_anchor_penalty(ActionKind::AnchorLeft, CStats::ONE);
        assert_abs_diff_eq!(once.outer, (-0.5f64).exp(), epsilon = 1e-15);
        let twice = apply_anchor_penalty(ActionKind::SubgramRight, once);
        assert_abs_diff_eq!(twice.inner, (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(apply_anchor_penalty(ActionKind::Merge, CStats::ONE), CStats::ONE);
    }

    #[test]
    fn first_observation() {
        let mut f = FrequencyTable::new(10_000.0, 20.0).unwrap();
        f.observe(TypeId(0), 1.0).unwrap();
        let e = f.entry(TypeId(0)).unwrap();
        assert_eq!((e.corrected, e.uncorrected, e.snapshot_corrected), (1.0, 1.0, 1.0));
        assert!(f.observe(TypeId(0), -1.0).is_err());
    }

    #[test]
    fn decay_one_period_apart() {
        let mut f = FrequencyTable::new(100.0, 1.0).unwrap();
        f.observe(TypeId(0), 1.0).unwrap();
        f.advance(100);
        f.observe(TypeId(0), 1.0).unwrap();
        assert_abs_diff_eq!(f.entry(TypeId(0)).unwrap().corrected, 1.0 + (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn decay_is_clamped_between_observations() {
        let mut f = FrequencyTable::new(100.0, 5.0).unwrap();
        f.observe(TypeId(0), 1.0).unwrap();
        f.advance(1000);
        f.observe(TypeId(0), 1.0).unwrap();
        assert_abs_diff_eq!(f.entry(TypeId(0)).unwrap().corrected, 1.0 + (-0.2f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn silent_period_decays_by_e() {
        let mut f = FrequencyTable::new(250.0, 20.0).unwrap();
        f.observe(TypeId(3), 2.0).unwrap();
        f.advance(250);
        let (c, u) = f.averages_now(TypeId(3)).unwrap();
        assert_abs_diff_eq!(c, 2.0 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(u, (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn effective_frequency_waits_for_a_completed_batch() {
        let mut f = FrequencyTable::new(10_000.0, 20.0).unwrap();
        assert_abs_diff_eq!(f.effective_frequency(TypeId(1)), 1e-4);
        for _ in 0..5 {
            f.observe(TypeId(1), 1.0).unwrap();
        }
        assert_abs_diff_eq!(f.effective_frequency(TypeId(1)), 1e-4);
        f.end_batch();
        assert_abs_diff_eq!(f.effective_frequency(TypeId(1)), 5.0);
        f.advance(10_000);
        assert_abs_diff_eq!(f.effective_frequency(TypeId(1)), 5.0 * (-1.0f64).exp(), epsilon = 1e-12);
        f.advance(1_000_000);
        assert_eq!(f.effective_frequency(TypeId(1)), 1e-4);
    }
}
