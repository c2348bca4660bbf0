//! Evaluation of a parser on held-out sentences.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::atoms::{NodeId, ParseTree, TypeId, TypeTable};
use crate::error::Result;
use crate::frequency::FrequencyTable;
use crate::reward::spatial_values;
use crate::trainer::Trainer;

/// Types that recur inside themselves: a node made by a merge or subgrammar
/// merge whose subtree holds another such node of the same type, for types of
/// symbolic length two or more, with some differently typed node on the path
/// between them.
///
/// Anchored merges are left out because they copy their kept child's type by
/// construction, and single tokens because leaves repeat trivially. A type
/// directly wrapping itself (`~G~{` replacing a `~G~{`) is absorption in the
/// same way, so the two occurrences must be separated by another type, as
/// `{~G~` separates the two `{~G~}` in a nested block.
pub fn recursive_types(tree: &ParseTree, types: &TypeTable) -> Vec<TypeId> {
    let nodes = tree.nodes();
    let counts = |id: NodeId| {
        let n = &nodes[id.0];
        n.action().is_some_and(|k| !k.is_anchor()) && types.get(n.ty).symbolic_length() >= 2
    };
    let mut found = BTreeSet::new();
    for i in 0..nodes.len() {
        if !counts(NodeId(i)) {
            continue;
        }
        let mut cur = nodes[i].parent;
        let mut separated = false;
        while let Some(p) = cur {
            if nodes[p.0].ty != nodes[i].ty {
                separated = true;
            } else if separated && counts(p) {
                found.insert(nodes[i].ty);
                break;
            }
            cur = nodes[p.0].parent;
        }
    }
    found.into_iter().collect()
}

/// Depths at which each type occurs as a counted node.
pub fn type_depths(tree: &ParseTree) -> HashMap<TypeId, BTreeSet<usize>> {
    let mut out: HashMap<TypeId, BTreeSet<usize>> = HashMap::new();
    for (i, n) in tree.nodes().iter().enumerate() {
        out.entry(n.ty).or_default().insert(tree.depth(NodeId(i)));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SentenceReport {
    pub sentence: String,
    pub roots: usize,
    pub root_types: Vec<String>,
    pub actions: usize,
    pub recursion: bool,
    pub recursive_types: Vec<String>,
    pub mean_spatial_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrequencyRow {
    pub atom: String,
    pub effective: f64,
    pub corrected: f64,
    pub uncorrected: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub sentences: Vec<SentenceReport>,
    pub recursion_rate: f64,
    pub mean_roots: f64,
    pub mean_spatial_value: f64,
    pub top_atoms: Vec<FrequencyRow>,
}

pub fn sentence_report(sentence: &[u8], tree: &ParseTree, types: &TypeTable, lambda: f64) -> Result<SentenceReport> {
    let values = spatial_values(tree, lambda)?;
    let vals: Vec<f64> = values.iter().flatten().copied().collect();
    let roots = tree.roots();
    let rec = recursive_types(tree, types);
    Ok(SentenceReport {
        sentence: sentence.iter().map(|&b| b as char).collect(),
        roots: roots.len(),
        root_types: roots.iter().map(|r| types.render(tree.node(*r).ty)).collect(),
        actions: vals.len(),
        recursion: !rec.is_empty(),
        recursive_types: rec.iter().map(|&t| types.render(t)).collect(),
        mean_spatial_value: if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        },
    })
}

/// Atoms with the highest effective frequency.
pub fn top_atoms(freq: &FrequencyTable, types: &TypeTable, k: usize) -> Vec<FrequencyRow> {
    let mut rows: Vec<FrequencyRow> = freq
        .export(types)
        .into_iter()
        .map(|(tokens, e)| {
            let id = types.intern(&tokens).expect("exported tokens are non-empty");
            FrequencyRow {
                atom: crate::atoms::render_tokens(&tokens),
                effective: freq.effective_frequency(id),
                corrected: e.corrected,
                uncorrected: e.uncorrected,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.effective.total_cmp(&a.effective).then_with(|| a.atom.cmp(&b.atom)));
    rows.truncate(k);
    rows
}

/// Greedy parses of `sentences` with a trained state.
pub fn evaluate<S: AsRef<[u8]>>(trainer: &Trainer, sentences: &[S], top_k: usize) -> Result<EvalReport> {
    let mut reports = Vec::with_capacity(sentences.len());
    for s in sentences {
        let out = trainer.parse(s.as_ref())?;
        reports.push(sentence_report(s.as_ref(), &out.tree, &trainer.types, trainer.config.lambda)?);
    }
    let n = reports.len().max(1) as f64;
    Ok(EvalReport {
        recursion_rate: reports.iter().filter(|r| r.recursion).count() as f64 / n,
        mean_roots: reports.iter().map(|r| r.roots as f64).sum::<f64>() / n,
        mean_spatial_value: reports.iter().map(|r| r.mean_spatial_value).sum::<f64>() / n,
        top_atoms: top_atoms(&trainer.freq, &trainer.types, top_k),
        sentences: reports,
    })
}
