//! The sliding-window parsing agent.
//!
//! Every boundary between two adjacent atoms is scored from a window of
//! atom embeddings centered on it. Scores are cached in a [`CandidateQueue`];
//! after each action only the windows overlapping the changed atoms are
//! evaluated again, so a parse costs a linear number of network evaluations.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use ndarray::Array2;
use ordered_float::OrderedFloat;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atoms::{ActionKind, ActionRef, NodeId, ParseTree, SentenceState, TypeId, TypeTable};
use crate::error::{Error, Result};
use crate::frequency::{apply_anchor_penalty, estimate_counts, FrequencyTable, Observation};
use crate::nn::DenseResNet;
use crate::reward::{immediate_reward, spatial_values, RewardConfig};
use crate::trainer::Memory;

/// Identifies a window by the source offset of its left center atom, which
/// stays fixed while atoms elsewhere are merged. `None` is the boundary in
/// front of the first atom, where only `ParseInteger` can apply.
pub type WindowKey = Option<usize>;

/// The atoms feeding one evaluation: `context` atoms on each side of the
/// center pair. Slots outside the sentence are `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub slots: Vec<Option<TypeId>>,
}

impl Window {
    pub fn context(&self) -> usize {
        (self.slots.len() - 2) / 2
    }

    pub fn left(&self) -> Option<TypeId> {
        self.slots[self.context()]
    }

    pub fn right(&self) -> Option<TypeId> {
        self.slots[self.context() + 1]
    }
}

/// Critic values and actor logits for the six kinds, indexed by
/// [`ActionKind::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WindowScores {
    pub critic: [f64; ActionKind::COUNT],
    pub actor: [f64; ActionKind::COUNT],
}

/// Anything that can score windows. The network pair is the usual one;
/// tests plug in hand-written policies.
pub trait Scorer {
    fn context(&self) -> usize;
    fn score(&self, types: &TypeTable, windows: &[Window]) -> Result<Vec<WindowScores>>;
}

/// Network input for a window: normalized embeddings of the slots laid end
/// to end, zeros for empty slots.
pub fn window_input(types: &TypeTable, window: &Window) -> Vec<f32> {
    let dim = types.embedder().dim();
    let mut out = vec![0.0f32; dim * window.slots.len()];
    for (slot, ty) in window.slots.iter().enumerate() {
        if let Some(ty) = ty {
            let e = types.embedding(*ty);
            for (o, v) in out[slot * dim..(slot + 1) * dim].iter_mut().zip(e.iter()) {
                *o = *v as f32;
            }
        }
    }
    out
}

pub fn input_width(n_emb: usize, context: usize) -> usize {
    (2 + 2 * context) * n_emb
}

/// Critic and actor networks scoring windows in eval mode.
pub struct NetScorer<'a> {
    pub critic: &'a DenseResNet<f32>,
    pub actor: &'a DenseResNet<f32>,
    pub context: usize,
}

impl Scorer for NetScorer<'_> {
    fn context(&self) -> usize {
        self.context
    }

    fn score(&self, types: &TypeTable, windows: &[Window]) -> Result<Vec<WindowScores>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let width = input_width(types.embedder().dim(), self.context);
        let mut x = Array2::<f32>::zeros((windows.len(), width));
        for (mut row, w) in x.rows_mut().into_iter().zip(windows) {
            row.assign(&ndarray::ArrayView1::from(&window_input(types, w)[..]));
        }
        let critic = self.critic.infer(&x)?;
        let actor = self.actor.infer(&x)?;
        Ok((0..windows.len())
            .map(|i| {
                let mut s = WindowScores::default();
                for k in 0..ActionKind::COUNT {
                    s.critic[k] = critic.q[[i, k]] as f64;
                    s.actor[k] = actor.q[[i, k]] as f64;
                }
                s
            })
            .collect())
    }
}

/// A scored action available in the current sentence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub key: WindowKey,
    pub kind: ActionKind,
    pub critic: f64,
    pub actor: f64,
}

type ActorKey = (Reverse<OrderedFloat<f64>>, WindowKey, ActionKind);
type CriticKey = (OrderedFloat<f64>, WindowKey, ActionKind);

#[derive(Clone, Debug)]
struct Entry {
    window: Window,
    scores: WindowScores,
    valid: [bool; ActionKind::COUNT],
}

/// Valid candidates ordered by actor logit (for acting) and by critic value
/// (for finding better alternatives).
#[derive(Clone, Debug, Default)]
pub struct CandidateQueue {
    entries: BTreeMap<WindowKey, Entry>,
    by_actor: BTreeSet<ActorKey>,
    by_critic: BTreeSet<CriticKey>,
}

impl CandidateQueue {
    pub fn len(&self) -> usize {
        self.by_actor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_actor.is_empty()
    }

    pub fn windows(&self) -> usize {
        self.entries.len()
    }

    pub fn insert(&mut self, key: WindowKey, window: Window, scores: WindowScores, valid: [bool; 6]) {
        self.remove(key);
        for kind in ActionKind::ALL {
            if valid[kind.index()] {
                let i = kind.index();
                self.by_actor
                    .insert((Reverse(OrderedFloat(scores.actor[i])), key, kind));
                self.by_critic.insert((OrderedFloat(scores.critic[i]), key, kind));
            }
        }
        self.entries.insert(key, Entry { window, scores, valid });
    }

    pub fn remove(&mut self, key: WindowKey) {
        if let Some(e) = self.entries.remove(&key) {
            for kind in ActionKind::ALL {
                let i = kind.index();
                if e.valid[i] {
                    self.by_actor
                        .remove(&(Reverse(OrderedFloat(e.scores.actor[i])), key, kind));
                    self.by_critic
                        .remove(&(OrderedFloat(e.scores.critic[i]), key, kind));
                }
            }
        }
    }

    pub fn get(&self, key: WindowKey, kind: ActionKind) -> Option<Candidate> {
        let e = self.entries.get(&key)?;
        let i = kind.index();
        e.valid[i].then(|| Candidate {
            key,
            kind,
            critic: e.scores.critic[i],
            actor: e.scores.actor[i],
        })
    }

    pub fn window(&self, key: WindowKey) -> Option<&Window> {
        self.entries.get(&key).map(|e| &e.window)
    }

    pub fn scores(&self, key: WindowKey) -> Option<&WindowScores> {
        self.entries.get(&key).map(|e| &e.scores)
    }

    fn actor_candidate(&self, k: &ActorKey) -> Candidate {
        self.get(k.1, k.2).expect("ordered sets mirror the entries")
    }

    /// Highest actor logit; ties go to the leftmost window, then the lowest
    /// kind index.
    pub fn best(&self) -> Option<Candidate> {
        self.by_actor.first().map(|k| self.actor_candidate(k))
    }

    pub fn max_critic(&self) -> Option<f64> {
        self.by_critic.last().map(|k| k.0 .0)
    }

    /// Candidates in position order.
    pub fn iter(&self) -> impl Iterator<Item = Candidate> + '_ {
        self.entries.iter().flat_map(|(&key, e)| {
            ActionKind::ALL.into_iter().filter_map(move |kind| {
                let i = kind.index();
                e.valid[i].then(|| Candidate {
                    key,
                    kind,
                    critic: e.scores.critic[i],
                    actor: e.scores.actor[i],
                })
            })
        })
    }

    pub fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Candidate> {
        if self.is_empty() {
            return None;
        }
        let n = rng.random_range(0..self.len());
        self.by_actor.iter().nth(n).map(|k| self.actor_candidate(k))
    }

    /// A uniformly drawn candidate whose critic value is strictly above
    /// `chosen`'s, if any.
    pub fn sample_better<R: Rng + ?Sized>(&self, chosen: &Candidate, rng: &mut R) -> Option<Candidate> {
        let above = |k: &&CriticKey| k.0 .0 > chosen.critic;
        let start = (OrderedFloat(chosen.critic), None, ActionKind::Merge);
        let count = self.by_critic.range(start..).filter(above).count();
        if count == 0 {
            return None;
        }
        let n = rng.random_range(0..count);
        self.by_critic
            .range(start..)
            .filter(above)
            .nth(n)
            .map(|k| self.get(k.1, k.2).expect("ordered sets mirror the entries"))
    }
}

/// ε-greedy choice plus the better alternative used by the policy loss.
pub fn select_action<R: Rng + ?Sized>(
    queue: &CandidateQueue,
    epsilon: f64,
    rng: &mut R,
) -> Result<(Candidate, Option<Candidate>)> {
    if queue.is_empty() {
        return Err(Error::InvalidState("no candidate actions".into()));
    }
    let chosen = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        queue.uniform(rng)
    } else {
        queue.best()
    }
    .expect("queue is non-empty");
    let better = queue.sample_better(&chosen, rng);
    Ok((chosen, better))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseConfig {
    pub reward: RewardConfig,
    /// Exploration rate; also enables memory collection when positive or
    /// when `explore` is set.
    pub epsilon: f64,
    /// Collect memories and sample better alternatives.
    pub explore: bool,
    /// Stop once no candidate's critic value exceeds this.
    pub critic_floor: Option<f64>,
}

/// One applied action, in application order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: ActionKind,
    /// Atom index at application time: the left atom for binary kinds, the
    /// first atom of the digit run for `ParseInteger`.
    pub position: usize,
    pub span: Range<usize>,
    pub result: String,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct ParseOutcome {
    pub tree: ParseTree,
    pub actions: Vec<ActionRecord>,
    pub memories: Vec<Memory>,
    /// Frequency observations to commit after the round.
    pub observations: Vec<Observation>,
    /// Windows scored; each costs one forward pass per network.
    pub windows_evaluated: usize,
}

impl ParseOutcome {
    pub fn mean_reward(&self) -> f64 {
        if self.actions.is_empty() {
            0.0
        } else {
            self.actions.iter().map(|a| a.reward).sum::<f64>() / self.actions.len() as f64
        }
    }
}

fn boundary_key(state: &SentenceState, b: isize) -> WindowKey {
    (b >= 0).then(|| state.atoms()[b as usize].span.start)
}

fn boundary_of(state: &SentenceState, key: WindowKey) -> isize {
    match key {
        None => -1,
        Some(start) => state.index_of_start(start).expect("key names a live atom") as isize,
    }
}

fn window_at(state: &SentenceState, b: isize, context: usize) -> Window {
    let n = state.len() as isize;
    let c = context as isize;
    Window {
        slots: (b - c..=b + 1 + c)
            .map(|i| (0..n).contains(&i).then(|| state.atoms()[i as usize].ty))
            .collect(),
    }
}

fn valid_kinds(state: &SentenceState, types: &TypeTable, b: isize) -> [bool; 6] {
    let n = state.len() as isize;
    let mut valid = [false; 6];
    if b + 1 >= n {
        return valid;
    }
    if b >= 0 {
        for k in ActionKind::BINARY {
            valid[k.index()] = true;
        }
    }
    let right_digit = state.is_digit_atom(types, (b + 1) as usize);
    let left_digit = b >= 0 && state.is_digit_atom(types, b as usize);
    valid[ActionKind::ParseInteger.index()] = right_digit && !left_digit;
    valid
}

/// Probabilities of the ε-greedy-smoothed policy restricted to a set of
/// competing actions: `ε/m + (1-ε)·softmax(logits)`.
pub fn policy_probabilities(logits: &[f64], epsilon: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let m = logits.len() as f64;
    exp.into_iter()
        .map(|e| epsilon / m + (1.0 - epsilon) * e / total)
        .collect()
}

/// Concrete action for a candidate in the current state.
pub fn action_ref(state: &SentenceState, c: &Candidate) -> ActionRef {
    let b = boundary_of(state, c.key);
    match c.kind {
        ActionKind::ParseInteger => ActionRef::new(c.kind, (b + 1) as usize),
        _ => ActionRef::new(c.kind, b as usize),
    }
}

/// Parses one sentence at a time against a frozen scorer and frequency
/// table.
pub struct Parser<'a, S: Scorer> {
    pub types: &'a TypeTable,
    pub scorer: &'a S,
    pub freq: &'a FrequencyTable,
    pub config: &'a ParseConfig,
}

impl<'a, S: Scorer> Parser<'a, S> {
    pub fn new(types: &'a TypeTable, scorer: &'a S, freq: &'a FrequencyTable, config: &'a ParseConfig) -> Self {
        Parser {
            types,
            scorer,
            freq,
            config,
        }
    }

    fn evaluate(
        &self,
        state: &SentenceState,
        queue: &mut CandidateQueue,
        boundaries: Range<isize>,
    ) -> Result<usize> {
        let context = self.scorer.context();
        let mut keys = Vec::new();
        let mut windows = Vec::new();
        let mut masks = Vec::new();
        for b in boundaries {
            let valid = valid_kinds(state, self.types, b);
            let key = boundary_key(state, b);
            if valid.iter().any(|&v| v) {
                keys.push(key);
                windows.push(window_at(state, b, context));
                masks.push(valid);
            } else {
                queue.remove(key);
            }
        }
        let scores = self.scorer.score(self.types, &windows)?;
        let count = windows.len();
        for ((key, window), (s, valid)) in keys.into_iter().zip(windows).zip(scores.into_iter().zip(masks)) {
            queue.insert(key, window, s, valid);
        }
        Ok(count)
    }

    /// Candidates sharing an atom with `chosen`, with their actor logits.
    fn competitors(&self, state: &SentenceState, queue: &CandidateQueue, p: usize) -> Vec<(ActionRef, f64)> {
        let mut out = Vec::new();
        let n = state.len() as isize;
        let p = p as isize;
        for b in (p - 1).max(0)..=(p + 1).min(n - 2) {
            let key = boundary_key(state, b);
            for k in ActionKind::BINARY {
                if let Some(c) = queue.get(key, k) {
                    out.push((ActionRef::new(k, b as usize), c.actor));
                }
            }
        }
        let mut seen = Vec::new();
        for idx in [p as usize, p as usize + 1] {
            if let Some(run) = state.digit_run(self.types, idx) {
                if seen.contains(&run.start) {
                    continue;
                }
                seen.push(run.start);
                let key = boundary_key(state, run.start as isize - 1);
                if let Some(c) = queue.get(key, ActionKind::ParseInteger) {
                    out.push((ActionRef::new(ActionKind::ParseInteger, run.start), c.actor));
                }
            }
        }
        out
    }

    pub fn parse<R: Rng + ?Sized>(&self, sentence: &[u8], rng: &mut R) -> Result<ParseOutcome> {
        self.parse_observed(sentence, rng, |_, _| {})
    }

    /// [`Parser::parse`], calling `observe` with the live state and queue
    /// before every selection and once more when the parse ends.
    pub fn parse_observed<R: Rng + ?Sized>(
        &self,
        sentence: &[u8],
        rng: &mut R,
        mut observe: impl FnMut(&SentenceState, &CandidateQueue),
    ) -> Result<ParseOutcome> {
        let types = self.types;
        let cfg = self.config;
        let context = self.scorer.context() as isize;
        let mut state = SentenceState::new(types, sentence)?;
        let mut queue = CandidateQueue::default();
        let mut evaluated = self.evaluate(&state, &mut queue, -1..state.len() as isize - 1)?;
        let mut actions = Vec::new();
        let mut memories: Vec<(Memory, NodeId)> = Vec::new();
        let mut observations = Vec::new();
        let epsilon = if cfg.explore { cfg.epsilon } else { 0.0 };

        while state.len() > 1 && !queue.is_empty() {
            observe(&state, &queue);
            if let (Some(floor), Some(max)) = (cfg.critic_floor, queue.max_critic()) {
                if max <= floor {
                    break;
                }
            }
            let (chosen, better) = if cfg.explore {
                select_action(&queue, epsilon, rng)?
            } else {
                (queue.best().expect("queue is non-empty"), None)
            };
            let action = action_ref(&state, &chosen);
            let snapshot = cfg.explore.then(|| {
                let w = queue.window(chosen.key).expect("chosen window is cached");
                let better = better.map(|b| {
                    let bw = queue.window(b.key).expect("better window is cached");
                    (window_input(types, bw), b.kind)
                });
                (window_input(types, w), better)
            });

            let p = action.position;
            let (stats, reward, result_span) = if action.kind == ActionKind::ParseInteger {
                let run = state.digit_run(types, p).expect("valid integer candidate");
                (crate::frequency::CStats::ONE, cfg.reward.integer_reward, run)
            } else {
                let comp = self.competitors(&state, &queue, p);
                let logits: Vec<f64> = comp.iter().map(|c| c.1).collect();
                let probs = policy_probabilities(&logits, epsilon);
                let refs: Vec<ActionRef> = comp.iter().map(|c| c.0).collect();
                let prob = |a: ActionRef| refs.iter().position(|&r| r == a).map_or(0.0, |i| probs[i]);
                let stats = estimate_counts(&state, types, action, &refs, prob);
                let stats = apply_anchor_penalty(action.kind, stats);
                let (l, r) = (state.atoms()[p].ty, state.atoms()[p + 1].ty);
                let counted = types.intern(&types.counted_tokens(action.kind, l, r))?;
                observations.push(Observation {
                    ty: counted,
                    c_outer: stats.outer,
                });
                let reward = immediate_reward(action.kind, self.freq.effective_frequency(counted), &cfg.reward);
                (stats, reward, p..p + 2)
            };

            // windows overlapping the consumed atoms, in pre-action indices
            let (s, e) = (result_span.start as isize, result_span.end as isize);
            let old_n = state.len() as isize;
            for b in (s - 1 - context).max(-1)..=(e - 1 + context).min(old_n - 2) {
                queue.remove(boundary_key(&state, b));
            }

            let applied = state.apply(types, p, action.kind)?;
            state.set_stats(applied.index, stats);
            state.tree_mut().set_reward(applied.node, reward);
            let node = state.tree().node(applied.node);
            actions.push(ActionRecord {
                kind: action.kind,
                position: applied.consumed.start,
                span: node.span.clone(),
                result: types.render(node.ty),
                reward,
            });
            if let Some((chosen_window, better)) = snapshot {
                let (better_window, better_kind) = match better {
                    Some((w, k)) => (Some(w), Some(k)),
                    None => (None, None),
                };
                memories.push((
                    Memory {
                        chosen_window,
                        chosen_kind: action.kind,
                        better_window,
                        better_kind,
                        value: 0.0,
                    },
                    applied.node,
                ));
            }

            let new_n = state.len() as isize;
            let lo = (s - 1 - context).max(-1);
            let hi = (s + context).min(new_n - 2);
            if lo <= hi {
                evaluated += self.evaluate(&state, &mut queue, lo..hi + 1)?;
            }
        }

        observe(&state, &queue);
        let tree = state.into_tree();
        let memories = if memories.is_empty() {
            Vec::new()
        } else {
            let values = spatial_values(&tree, cfg.reward.lambda)?;
            memories
                .into_iter()
                .map(|(mut m, node)| {
                    m.value = values[node.0].expect("action node has a value");
                    m
                })
                .collect()
        };
        Ok(ParseOutcome {
            tree,
            actions,
            memories,
            observations,
            windows_evaluated: evaluated,
        })
    }

    /// Scores of every window computed from scratch for the given state.
    pub fn full_scores(&self, state: &SentenceState) -> Result<CandidateQueue> {
        let mut q = CandidateQueue::default();
        self.evaluate(state, &mut q, -1..state.len() as isize - 1)?;
        Ok(q)
    }
}

/// Re-apply a recorded action trace to a sentence.
pub fn replay(types: &TypeTable, sentence: &[u8], actions: &[ActionRecord]) -> Result<SentenceState> {
    let mut state = SentenceState::new(types, sentence)?;
    for a in actions {
        let applied = state.apply(types, a.position, a.kind)?;
        state.tree_mut().set_reward(applied.node, a.reward);
    }
    Ok(state)
}

/// A policy given by a function of the window contents, for tests and
/// demonstrations. The critic value of each kind equals its logit.
pub struct FnScorer<F> {
    pub context: usize,
    pub f: F,
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&TypeTable, &Window) -> [f64; ActionKind::COUNT],
{
    fn context(&self) -> usize {
        self.context
    }

    fn score(&self, types: &TypeTable, windows: &[Window]) -> Result<Vec<WindowScores>> {
        Ok(windows
            .iter()
            .map(|w| {
                let a = (self.f)(types, w);
                WindowScores { critic: a, actor: a }
            })
            .collect())
    }
}

/// Hand-set policy that builds the recursive `{~G~}` block: replace a lone
/// value after `{` with the subgrammar token, close it, and absorb repeated
/// blocks into one with an anchored merge. Closing and absorbing outrank
/// opening, and an opening brace takes a finished block last, so sibling
/// blocks are joined before their parent wraps them.
pub fn nested_block_policy() -> FnScorer<impl Fn(&TypeTable, &Window) -> [f64; 6]> {
    FnScorer {
        context: 0,
        f: |types: &TypeTable, w: &Window| {
            let mut s = [0.0; 6];
            let (Some(l), Some(r)) = (w.left(), w.right()) else {
                return s;
            };
            let (l, r) = (types.render(l), types.render(r));
            match (l.as_str(), r.as_str()) {
                ("{", "a" | "b" | "c") => s[ActionKind::SubgramLeft.index()] = 10.0,
                ("{", "{~G~}") => s[ActionKind::SubgramLeft.index()] = 5.0,
                ("{~G~", "}") => s[ActionKind::Merge.index()] = 12.0,
                ("{~G~}", "{~G~}") => s[ActionKind::AnchorLeft.index()] = 11.0,
                _ => {}
            }
            s
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Embedder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup() -> (TypeTable, FrequencyTable, ParseConfig) {
        let types = TypeTable::new(Arc::new(Embedder::new(1, 8, 1.0).unwrap()));
        let freq = FrequencyTable::new(10_000.0, 20.0).unwrap();
        let cfg = ParseConfig {
            reward: RewardConfig {
                alpha_anchor: 0.4,
                alpha_subgrammar: 0.5,
                lambda: 0.8,
                integer_reward: 0.0,
            },
            epsilon: 0.0,
            explore: false,
            critic_floor: None,
        };
        (types, freq, cfg)
    }

    #[test]
    fn oracle_policy_closes_a_block() {
        let (types, freq, cfg) = setup();
        let policy = nested_block_policy();
        let parser = Parser::new(&types, &policy, &freq, &cfg);
        let out = parser.parse(b"{a}", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let kinds: Vec<_> = out.actions.iter().map(|a| a.kind).collect();
        assert_eq!(kinds, [ActionKind::SubgramLeft, ActionKind::Merge]);
        assert_eq!(out.actions[1].result, "{~G~}");
        assert_eq!(out.tree.roots().len(), 1);
    }

    #[test]
    fn single_character_has_no_actions() {
        let (types, freq, cfg) = setup();
        let policy = nested_block_policy();
        let out = Parser::new(&types, &policy, &freq, &cfg)
            .parse(b"x", &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!(out.actions.is_empty());
        assert_eq!(out.tree.len(), 1);
    }

    #[test]
    fn integer_candidates_sit_left_of_digit_runs() {
        let (types, _, _) = setup();
        let s = SentenceState::new(&types, b"12 0 R").unwrap();
        assert!(valid_kinds(&s, &types, -1)[ActionKind::ParseInteger.index()]);
        assert!(!valid_kinds(&s, &types, 0)[ActionKind::ParseInteger.index()]);
        assert!(valid_kinds(&s, &types, 2)[ActionKind::ParseInteger.index()]);
        assert!(!valid_kinds(&s, &types, -1)[ActionKind::Merge.index()]);
    }

    #[test]
    fn window_padding_at_sentence_start() {
        let (types, _, _) = setup();
        let s = SentenceState::new(&types, b"{a}").unwrap();
        let w = window_at(&s, 0, 2);
        assert_eq!(w.slots.len(), 6);
        assert_eq!(&w.slots[..2], &[None, None]);
        let x = window_input(&types, &w);
        assert!(x[..16].iter().all(|&v| v == 0.0));
        assert!(x[16..24].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn select_on_empty_queue_fails() {
        let q = CandidateQueue::default();
        let r = select_action(&q, 0.5, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::InvalidState(_))));
    }

    #[test]
    fn better_is_strictly_higher() {
        let mut q = CandidateQueue::default();
        let w = Window { slots: vec![None, None] };
        let s = WindowScores {
            critic: [1.0, 2.0, 2.0, 0.5, 3.0, 0.0],
            ..WindowScores::default()
        };
        q.insert(Some(0), w, s, [true, true, true, true, true, false]);
        let chosen = q.get(Some(0), ActionKind::AnchorLeft).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let b = q.sample_better(&chosen, &mut rng).unwrap();
            assert_eq!(b.kind, ActionKind::SubgramRight);
        }
        let top = q.get(Some(0), ActionKind::SubgramRight).unwrap();
        assert!(q.sample_better(&top, &mut rng).is_none());
    }

    #[test]
    fn replay_reproduces_the_tree() {
        let (types, freq, cfg) = setup();
        let policy = nested_block_policy();
        let out = Parser::new(&types, &policy, &freq, &cfg)
            .parse(b"{{a}{b}}", &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let again = replay(&types, b"{{a}{b}}", &out.actions).unwrap();
        let a: Vec<_> = out.tree.nodes().iter().map(|n| (n.ty, n.span.clone(), n.children.clone())).collect();
        let b: Vec<_> = again.tree().nodes().iter().map(|n| (n.ty, n.span.clone(), n.children.clone())).collect();
        assert_eq!(a, b);
    }
}
