//! Atoms, interned atom types, parsing actions, sentence state and parse trees.
//!
//! A sentence starts as one atom per input byte. Every action replaces a
//! group of adjacent atoms with a single atom whose *type* is an interned
//! token sequence. Types are compared by identity of their [`TypeId`], which
//! is how recursion shows up: an anchored merge hands back the very same id
//! as its kept constituent.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::frequency::CStats;

/// Index into the extended vocabulary: every byte value, plus two reserved
/// replacement tokens that never occur in input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u16);

impl TokenId {
    pub const SUBGRAMMAR: TokenId = TokenId(256);
    pub const INTEGER: TokenId = TokenId(257);
    /// Size of the extended vocabulary.
    pub const COUNT: usize = 258;

    pub fn from_byte(b: u8) -> Self {
        TokenId(b as u16)
    }

    pub fn byte(self) -> Option<u8> {
        u8::try_from(self.0).ok()
    }

    pub fn is_digit(self) -> bool {
        matches!(self.byte(), Some(b'0'..=b'9'))
    }

    pub fn is_reserved(self) -> bool {
        self.0 >= 256
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TokenId::SUBGRAMMAR => f.write_str("~G~"),
            TokenId::INTEGER => f.write_str("~INT~"),
            t => write!(f, "{}", char::from(t.0 as u8)),
        }
    }
}

/// Render a token sequence as text. Bytes map to the code point of the same
/// value, so the rendering is lossless for arbitrary input.
pub fn render_tokens(tokens: &[TokenId]) -> String {
    tokens.iter().map(|t| t.to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub u32);

/// The six parsing actions. The order fixes the layout of the network's
/// action head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Merge,
    AnchorLeft,
    AnchorRight,
    SubgramLeft,
    SubgramRight,
    ParseInteger,
}

impl ActionKind {
    pub const COUNT: usize = 6;
    pub const ALL: [ActionKind; 6] = [
        ActionKind::Merge,
        ActionKind::AnchorLeft,
        ActionKind::AnchorRight,
        ActionKind::SubgramLeft,
        ActionKind::SubgramRight,
        ActionKind::ParseInteger,
    ];
    /// Kinds that act on an adjacent pair of atoms.
    pub const BINARY: [ActionKind; 5] = [
        ActionKind::Merge,
        ActionKind::AnchorLeft,
        ActionKind::AnchorRight,
        ActionKind::SubgramLeft,
        ActionKind::SubgramRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_anchor(self) -> bool {
        matches!(self, ActionKind::AnchorLeft | ActionKind::AnchorRight)
    }

    pub fn is_subgram(self) -> bool {
        matches!(self, ActionKind::SubgramLeft | ActionKind::SubgramRight)
    }

    pub fn is_binary(self) -> bool {
        self != ActionKind::ParseInteger
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Merge => "Merge",
            ActionKind::AnchorLeft => "AnchorLeft",
            ActionKind::AnchorRight => "AnchorRight",
            ActionKind::SubgramLeft => "SubgramLeft",
            ActionKind::SubgramRight => "SubgramRight",
            ActionKind::ParseInteger => "ParseInteger",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An interned constituent type.
#[derive(Debug)]
pub struct AtomType {
    id: TypeId,
    tokens: Arc<[TokenId]>,
    digits_only: bool,
    raw: OnceLock<Arc<[f64]>>,
    normalized: OnceLock<Arc<[f64]>>,
}

impl AtomType {
    pub fn id(&self) -> TypeId {
        self.id
    }

    pub fn tokens(&self) -> &Arc<[TokenId]> {
        &self.tokens
    }

    /// Each token, literal or reserved, contributes one unit.
    pub fn symbolic_length(&self) -> usize {
        self.tokens.len()
    }

    /// True when every token is an ASCII digit.
    pub fn is_digits(&self) -> bool {
        self.digits_only
    }
}

#[derive(Default)]
struct Interner {
    ids: HashMap<Arc<[TokenId]>, TypeId>,
    types: Vec<Arc<AtomType>>,
}

/// Concurrent interning table for atom types, with lazily cached embeddings.
pub struct TypeTable {
    inner: RwLock<Interner>,
    embedder: Arc<Embedder>,
}

impl TypeTable {
    pub fn new(embedder: Arc<Embedder>) -> Self {
        TypeTable {
            inner: RwLock::new(Interner::default()),
            embedder,
        }
    }

    pub fn embedder(&self) -> &Arc<Embedder> {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn intern(&self, tokens: &[TokenId]) -> Result<TypeId> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot intern an empty token sequence"));
        }
        if let Some(&id) = self.inner.read().unwrap().ids.get(tokens) {
            return Ok(id);
        }
        let mut inner = self.inner.write().unwrap();
        if let Some(&id) = inner.ids.get(tokens) {
            return Ok(id);
        }
        let id = TypeId(inner.types.len() as u32);
        let tokens: Arc<[TokenId]> = Arc::from(tokens);
        inner.ids.insert(tokens.clone(), id);
        inner.types.push(Arc::new(AtomType {
            id,
            digits_only: tokens.iter().all(|t| t.is_digit()),
            tokens,
            raw: OnceLock::new(),
            normalized: OnceLock::new(),
        }));
        Ok(id)
    }

    pub fn intern_bytes(&self, bytes: &[u8]) -> Result<TypeId> {
        let tokens: Vec<TokenId> = bytes.iter().map(|&b| TokenId::from_byte(b)).collect();
        self.intern(&tokens)
    }

    pub fn lookup(&self, tokens: &[TokenId]) -> Option<TypeId> {
        self.inner.read().unwrap().ids.get(tokens).copied()
    }

    pub fn get(&self, id: TypeId) -> Arc<AtomType> {
        self.inner.read().unwrap().types[id.0 as usize].clone()
    }

    pub fn tokens(&self, id: TypeId) -> Arc<[TokenId]> {
        self.get(id).tokens.clone()
    }

    pub fn render(&self, id: TypeId) -> String {
        render_tokens(&self.tokens(id))
    }

    pub fn integer_type(&self) -> TypeId {
        self.intern(&[TokenId::INTEGER]).expect("non-empty")
    }

    /// Token sequence produced by a binary action, without interning it.
    pub fn result_tokens(&self, kind: ActionKind, left: TypeId, right: TypeId) -> Vec<TokenId> {
        let l = self.tokens(left);
        let r = self.tokens(right);
        match kind {
            ActionKind::Merge => l.iter().chain(r.iter()).copied().collect(),
            ActionKind::AnchorLeft => l.to_vec(),
            ActionKind::AnchorRight => r.to_vec(),
            ActionKind::SubgramLeft => l.iter().copied().chain([TokenId::SUBGRAMMAR]).collect(),
            ActionKind::SubgramRight => [TokenId::SUBGRAMMAR].into_iter().chain(r.iter().copied()).collect(),
            ActionKind::ParseInteger => vec![TokenId::INTEGER],
        }
    }

    /// Type produced by a binary action. Anchored kinds return the kept
    /// constituent's id unchanged.
    pub fn result_type(&self, kind: ActionKind, left: TypeId, right: TypeId) -> Result<TypeId> {
        match kind {
            ActionKind::AnchorLeft => Ok(left),
            ActionKind::AnchorRight => Ok(right),
            ActionKind::ParseInteger => Err(Error::invalid(
                "ParseInteger has no pairwise result; apply it to a digit run",
            )),
            _ => self.intern(&self.result_tokens(kind, left, right)),
        }
    }

    /// The representation whose frequency an action is rewarded with: both
    /// constituents concatenated for merges and anchored merges, the
    /// replaced form for subgrammar merges.
    pub fn counted_tokens(&self, kind: ActionKind, left: TypeId, right: TypeId) -> Vec<TokenId> {
        match kind {
            ActionKind::AnchorLeft | ActionKind::AnchorRight => {
                self.result_tokens(ActionKind::Merge, left, right)
            }
            _ => self.result_tokens(kind, left, right),
        }
    }

    /// Unnormalized compositional embedding, computed on first use.
    pub fn raw_embedding(&self, id: TypeId) -> Arc<[f64]> {
        let ty = self.get(id);
        ty.raw
            .get_or_init(|| Arc::from(self.embedder.raw(&ty.tokens)))
            .clone()
    }

    /// Embedding scaled by the inverse square root of the symbolic length.
    pub fn embedding(&self, id: TypeId) -> Arc<[f64]> {
        let ty = self.get(id);
        if let Some(e) = ty.normalized.get() {
            return e.clone();
        }
        let raw = self.raw_embedding(id);
        let scale = 1.0 / (ty.symbolic_length() as f64).sqrt();
        ty.normalized
            .get_or_init(|| raw.iter().map(|x| x * scale).collect())
            .clone()
    }

    /// Snapshot of every interned type's tokens, in id order.
    pub fn all_tokens(&self) -> Vec<Arc<[TokenId]>> {
        self.inner
            .read()
            .unwrap()
            .types
            .iter()
            .map(|t| t.tokens.clone())
            .collect()
    }
}

/// A concrete action in a sentence: a boundary index for binary kinds, or
/// any atom index inside the digit run for `ParseInteger`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionRef {
    pub kind: ActionKind,
    pub position: usize,
}

impl ActionRef {
    pub fn new(kind: ActionKind, position: usize) -> Self {
        ActionRef { kind, position }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Leaf,
    Action(ActionKind),
}

#[derive(Clone, Debug)]
pub struct Node {
    pub kind: NodeKind,
    pub ty: TypeId,
    pub span: Range<usize>,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    /// Immediate reward recorded when the action was taken.
    pub reward: Option<f64>,
}

impl Node {
    pub fn is_action(&self) -> bool {
        matches!(self.kind, NodeKind::Action(_))
    }

    pub fn action(&self) -> Option<ActionKind> {
        match self.kind {
            NodeKind::Action(k) => Some(k),
            NodeKind::Leaf => None,
        }
    }
}

/// A parse forest: leaves for the initial atoms, one internal node per
/// applied action, in application order.
#[derive(Clone, Debug, Default)]
pub struct ParseTree {
    nodes: Vec<Node>,
}

impl ParseTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].parent.is_none())
            .map(NodeId)
            .collect()
    }

    pub fn action_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].is_action())
            .map(NodeId)
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_action()).count()
    }

    /// Edges from the node up to its root.
    pub fn depth(&self, id: NodeId) -> usize {
        let mut d = 0;
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            d += 1;
            cur = p;
        }
        d
    }

    /// Length of the longest downward path to a leaf.
    pub fn height(&self, id: NodeId) -> usize {
        // children always precede their parent, so one forward pass suffices
        let mut h = vec![0usize; id.0 + 1];
        for i in 0..=id.0 {
            h[i] = self.nodes[i]
                .children
                .iter()
                .map(|c| h[c.0] + 1)
                .max()
                .unwrap_or(0);
        }
        h[id.0]
    }

    pub fn heights(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.nodes.len()];
        for i in 0..self.nodes.len() {
            h[i] = self.nodes[i]
                .children
                .iter()
                .map(|c| h[c.0] + 1)
                .max()
                .unwrap_or(0);
        }
        h
    }

    pub fn set_reward(&mut self, id: NodeId, reward: f64) {
        self.nodes[id.0].reward = Some(reward);
    }

    fn push(&mut self, node: Node) -> NodeId {
        let id = NodeId(self.nodes.len());
        for c in &node.children {
            self.nodes[c.0].parent = Some(id);
        }
        self.nodes.push(node);
        id
    }
}

#[derive(Clone, Debug)]
pub struct Atom {
    pub ty: TypeId,
    pub span: Range<usize>,
    pub stats: CStats,
    pub node: NodeId,
}

/// Outcome of [`SentenceState::apply`].
#[derive(Clone, Debug)]
pub struct Applied {
    pub node: NodeId,
    /// Index of the new atom in the sentence.
    pub index: usize,
    /// Atom indices (before the action) that were consumed.
    pub consumed: Range<usize>,
}

/// The sequence of atoms of one sentence during a parse.
#[derive(Clone, Debug)]
pub struct SentenceState {
    atoms: Vec<Atom>,
    tree: ParseTree,
    char_length: usize,
}

impl SentenceState {
    pub fn new(types: &TypeTable, sentence: &[u8]) -> Result<Self> {
        if sentence.is_empty() {
            return Err(Error::invalid("sentence is empty"));
        }
        let mut tree = ParseTree::default();
        let mut atoms = Vec::with_capacity(sentence.len());
        for (i, &b) in sentence.iter().enumerate() {
            let ty = types.intern_bytes(&[b])?;
            let node = tree.push(Node {
                kind: NodeKind::Leaf,
                ty,
                span: i..i + 1,
                children: Vec::new(),
                parent: None,
                reward: None,
            });
            atoms.push(Atom {
                ty,
                span: i..i + 1,
                stats: CStats::ONE,
                node,
            });
        }
        Ok(SentenceState {
            atoms,
            tree,
            char_length: sentence.len(),
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn char_length(&self) -> usize {
        self.char_length
    }

    pub fn tree(&self) -> &ParseTree {
        &self.tree
    }

    pub fn tree_mut(&mut self) -> &mut ParseTree {
        &mut self.tree
    }

    pub fn into_tree(self) -> ParseTree {
        self.tree
    }

    pub fn set_stats(&mut self, index: usize, stats: CStats) {
        self.atoms[index].stats = stats;
    }

    /// Index of the atom whose span starts at `start`.
    pub fn index_of_start(&self, start: usize) -> Option<usize> {
        self.atoms
            .binary_search_by_key(&start, |a| a.span.start)
            .ok()
    }

    pub fn is_digit_atom(&self, types: &TypeTable, index: usize) -> bool {
        types.get(self.atoms[index].ty).is_digits()
    }

    /// Maximal run of digit-only atoms containing `index`.
    pub fn digit_run(&self, types: &TypeTable, index: usize) -> Option<Range<usize>> {
        if index >= self.atoms.len() || !self.is_digit_atom(types, index) {
            return None;
        }
        let mut start = index;
        while start > 0 && self.is_digit_atom(types, start - 1) {
            start -= 1;
        }
        let mut end = index + 1;
        while end < self.atoms.len() && self.is_digit_atom(types, end) {
            end += 1;
        }
        Some(start..end)
    }

    /// Atom indices an action would consume, or `None` if it is not
    /// applicable.
    pub fn affected(&self, types: &TypeTable, action: ActionRef) -> Option<Range<usize>> {
        if action.kind == ActionKind::ParseInteger {
            self.digit_run(types, action.position)
        } else if action.position + 1 < self.atoms.len() {
            Some(action.position..action.position + 2)
        } else {
            None
        }
    }

    /// Apply an action. Binary kinds act on atoms `position` and
    /// `position + 1`; `ParseInteger` collapses the digit run containing
    /// atom `position`.
    pub fn apply(&mut self, types: &TypeTable, position: usize, kind: ActionKind) -> Result<Applied> {
        let consumed = if kind == ActionKind::ParseInteger {
            if position >= self.atoms.len() {
                return Err(Error::invalid(format!(
                    "atom {position} out of range for {} atoms",
                    self.atoms.len()
                )));
            }
            self.digit_run(types, position).ok_or_else(|| {
                Error::invalid(format!("ParseInteger on non-digit atom {position}"))
            })?
        } else {
            if position + 1 >= self.atoms.len() {
                return Err(Error::invalid(format!(
                    "boundary {position} out of range for {} atoms",
                    self.atoms.len()
                )));
            }
            position..position + 2
        };
        let ty = match kind {
            ActionKind::ParseInteger => types.integer_type(),
            _ => types.result_type(kind, self.atoms[position].ty, self.atoms[position + 1].ty)?,
        };
        let span = self.atoms[consumed.start].span.start..self.atoms[consumed.end - 1].span.end;
        let children = self.atoms[consumed.clone()].iter().map(|a| a.node).collect();
        let node = self.tree.push(Node {
            kind: NodeKind::Action(kind),
            ty,
            span: span.clone(),
            children,
            parent: None,
            reward: None,
        });
        let atom = Atom {
            ty,
            span,
            stats: CStats::ONE,
            node,
        };
        self.atoms.splice(consumed.clone(), [atom]);
        Ok(Applied {
            node,
            index: consumed.start,
            consumed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> TypeTable {
        TypeTable::new(Arc::new(Embedder::new(7, 8, 1.0).unwrap()))
    }

    fn texts(types: &TypeTable, s: &SentenceState) -> Vec<String> {
        s.atoms().iter().map(|a| types.render(a.ty)).collect()
    }

    #[test]
    fn interning_is_idempotent_and_order_sensitive() {
        let t = table();
        assert_eq!(t.intern_bytes(b"{a}").unwrap(), t.intern_bytes(b"{a}").unwrap());
        assert_ne!(t.intern_bytes(b"AB").unwrap(), t.intern_bytes(b"BA").unwrap());
        assert!(matches!(t.intern(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn substrings_of_nested_braces() {
        let t = table();
        let s = b"{{a}}";
        let mut ids = std::collections::HashSet::new();
        let mut distinct = std::collections::HashSet::new();
        for i in 0..s.len() {
            for j in i + 1..=s.len() {
                ids.insert(t.intern_bytes(&s[i..j]).unwrap());
                distinct.insert(s[i..j].to_vec());
            }
        }
        // n(n+1)/2 positions, deduplicated by content
        assert_eq!(ids.len(), distinct.len());
        assert_eq!(t.len(), distinct.len());
    }

    #[test]
    fn result_types() {
        let t = table();
        let open = t.intern_bytes(b"{").unwrap();
        let close = t.intern_bytes(b"}").unwrap();
        let a = t.intern_bytes(b"a").unwrap();
        assert_eq!(t.render(t.result_type(ActionKind::Merge, open, close).unwrap()), "{}");
        assert_eq!(t.result_type(ActionKind::AnchorLeft, open, a).unwrap(), open);
        assert_eq!(t.result_type(ActionKind::AnchorRight, open, a).unwrap(), a);
        assert_eq!(t.render(t.result_type(ActionKind::SubgramLeft, open, a).unwrap()), "{~G~");
        assert_eq!(t.render(t.result_type(ActionKind::SubgramRight, open, a).unwrap()), "~G~a");
        assert!(t.result_type(ActionKind::ParseInteger, open, a).is_err());
    }

    #[test]
    fn merge_then_close() {
        let t = table();
        let mut s = SentenceState::new(&t, b"{a}").unwrap();
        s.apply(&t, 0, ActionKind::Merge).unwrap();
        assert_eq!(texts(&t, &s), ["{a", "}"]);
        assert_eq!(s.atoms()[0].span, 0..2);
    }

    #[test]
    fn nested_parse_reaches_recursive_root() {
        let t = table();
        let mut s = SentenceState::new(&t, b"{{a}}").unwrap();
        s.apply(&t, 1, ActionKind::SubgramLeft).unwrap();
        assert_eq!(texts(&t, &s), ["{", "{~G~", "}", "}"]);
        s.apply(&t, 1, ActionKind::Merge).unwrap();
        assert_eq!(texts(&t, &s), ["{", "{~G~}", "}"]);
        s.apply(&t, 0, ActionKind::SubgramLeft).unwrap();
        s.apply(&t, 0, ActionKind::Merge).unwrap();
        assert_eq!(texts(&t, &s), ["{~G~}"]);
        let tree = s.tree();
        assert_eq!(tree.roots().len(), 1);
        assert_eq!(tree.node(tree.roots()[0]).ty, tree.node(NodeId(6)).ty);
    }

    #[test]
    fn parse_integer_collapses_maximal_run() {
        let t = table();
        let mut s = SentenceState::new(&t, b"12 0 R").unwrap();
        let applied = s.apply(&t, 0, ActionKind::ParseInteger).unwrap();
        assert_eq!(applied.consumed, 0..2);
        assert_eq!(texts(&t, &s), ["~INT~", " ", "0", " ", "R"]);
        assert_eq!(s.tree().node(applied.node).children.len(), 2);
        // a single digit is a run of length one
        s.apply(&t, 2, ActionKind::ParseInteger).unwrap();
        assert_eq!(texts(&t, &s), ["~INT~", " ", "~INT~", " ", "R"]);
        assert!(matches!(
            s.apply(&t, 4, ActionKind::ParseInteger),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn merged_digits_still_count_as_digits() {
        let t = table();
        let mut s = SentenceState::new(&t, b"x123").unwrap();
        s.apply(&t, 1, ActionKind::Merge).unwrap();
        assert_eq!(s.digit_run(&t, 2), Some(1..3));
        s.apply(&t, 2, ActionKind::ParseInteger).unwrap();
        assert_eq!(texts(&t, &s), ["x", "~INT~"]);
    }

    #[test]
    fn out_of_range_positions() {
        let t = table();
        let mut s = SentenceState::new(&t, b"ab").unwrap();
        assert!(s.apply(&t, 1, ActionKind::Merge).is_err());
        assert!(s.apply(&t, 5, ActionKind::ParseInteger).is_err());
        assert!(SentenceState::new(&t, b"").is_err());
    }
}
