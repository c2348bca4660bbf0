//! Parse diagrams: characters on a baseline with one bar per action stacked
//! above by height in the tree, as ASCII art or SVG, plus a JSON action trace.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::agent::{replay, ActionRecord};
use crate::atoms::{ActionKind, NodeId, ParseTree, TypeTable};
use crate::error::{Error, Result};

/// Part of a bar drawn differently from a plain merge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    /// Constituent replaced by the subgrammar token.
    Replaced,
    /// Constituent dropped by an anchored merge.
    Omitted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub node: NodeId,
    pub kind: ActionKind,
    /// Source characters covered.
    pub span: Range<usize>,
    /// 1 for actions on leaves, one more than the highest child bar otherwise.
    pub level: usize,
    /// Marked sub-range of `span` and how it is drawn.
    pub mark: Option<(Range<usize>, Mark)>,
}

/// One bar per action node in application order.
pub fn bars(tree: &ParseTree) -> Vec<Bar> {
    let heights = tree.heights();
    tree.nodes()
        .iter()
        .enumerate()
        .filter_map(|(i, n)| {
            let kind = n.action()?;
            let child = |k: usize| tree.node(n.children[k]).span.clone();
            let mark = match kind {
                ActionKind::SubgramLeft => Some((child(1), Mark::Replaced)),
                ActionKind::SubgramRight => Some((child(0), Mark::Replaced)),
                ActionKind::AnchorLeft => Some((child(1), Mark::Omitted)),
                ActionKind::AnchorRight => Some((child(0), Mark::Omitted)),
                ActionKind::Merge | ActionKind::ParseInteger => None,
            };
            Some(Bar {
                node: NodeId(i),
                kind,
                span: n.span.clone(),
                level: heights[i],
                mark,
            })
        })
        .collect()
}

fn display_char(b: u8) -> char {
    if (0x20..0x7f).contains(&b) {
        b as char
    } else {
        '.'
    }
}

fn fill(bar: &Bar, pos: usize) -> char {
    if bar.kind == ActionKind::ParseInteger {
        return '#';
    }
    match &bar.mark {
        Some((r, Mark::Replaced)) if r.contains(&pos) => '~',
        Some((r, Mark::Omitted)) if r.contains(&pos) => '-',
        _ => '=',
    }
}

/// Text diagram. Every source character takes two columns (the character and
/// a space); a bar over characters `s..e` fills columns `2s..2e-1`, so bars
/// side by side on one row are always separated by a blank.
///
/// Fill: `=` merged or kept, `~` replaced by the subgrammar token, `-`
/// omitted by an anchored merge, `#` integer.
pub fn ascii(sentence: &[u8], tree: &ParseTree) -> String {
    let bars = bars(tree);
    let top = bars.iter().map(|b| b.level).max().unwrap_or(0);
    let width = (2 * sentence.len()).saturating_sub(1);
    let mut rows = vec![vec![' '; width]; top];
    for b in &bars {
        let row = &mut rows[top - b.level];
        for pos in b.span.clone() {
            row[2 * pos] = fill(b, pos);
            if pos + 1 < b.span.end {
                let c = fill(b, pos);
                let next = fill(b, pos + 1);
                row[2 * pos + 1] = if c == next { c } else { '=' };
            }
        }
    }
    let mut out = String::new();
    for r in rows {
        out.push_str(r.iter().collect::<String>().trim_end());
        out.push('\n');
    }
    let base: Vec<String> = sentence.iter().map(|&b| display_char(b).to_string()).collect();
    out.push_str(&base.join(" "));
    out.push('\n');
    out
}

/// Bar spans read back from an [`ascii`] diagram, row by row from the top.
pub fn ascii_spans(diagram: &str) -> Vec<Vec<Range<usize>>> {
    let lines: Vec<&str> = diagram.lines().collect();
    let mut out = Vec::new();
    for line in &lines[..lines.len().saturating_sub(1)] {
        let cols: Vec<char> = line.chars().collect();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < cols.len() {
            if cols[i] == ' ' {
                i += 1;
                continue;
            }
            let start = i;
            while i < cols.len() && cols[i] != ' ' {
                i += 1;
            }
            spans.push(start / 2..i.div_ceil(2));
        }
        out.push(spans);
    }
    out
}

const CELL: f64 = 12.0;
const BAR: f64 = 6.0;
const GAP: f64 = 3.0;
const PAD: f64 = 8.0;

const BLUE: &str = "#1f5fd6";
const RED: &str = "#d62728";
const GRAY: &str = "#9a9a9a";
const FUCHSIA: &str = "#d61fc8";

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 => out.push('.'),
            c => out.push(c),
        }
    }
    out
}

/// SVG diagram: blue for merged content, red for the side replaced by a
/// subgrammar merge, gray for the side omitted by an anchored merge and
/// fuchsia for integer parses. Each bar has a `<title>` with its result type.
pub fn svg(sentence: &[u8], tree: &ParseTree, types: &TypeTable) -> String {
    let bars = bars(tree);
    let top = bars.iter().map(|b| b.level).max().unwrap_or(0) as f64;
    let width = 2.0 * PAD + CELL * sentence.len() as f64;
    let baseline = PAD + top * (BAR + GAP) + CELL;
    let height = baseline + PAD;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    for b in &bars {
        let y = PAD + (top - b.level as f64) * (BAR + GAP);
        let x = |pos: usize| PAD + CELL * pos as f64 + 1.0;
        let w = |r: &Range<usize>| CELL * r.len() as f64 - 2.0;
        let title = xml_escape(&types.render(tree.node(b.node).ty));
        writeln!(s, r#"<g class="{}"><title>{title}</title>"#, b.kind.name()).unwrap();
        let base = if b.kind == ActionKind::ParseInteger { FUCHSIA } else { BLUE };
        writeln!(
            s,
            r#"<rect x="{}" y="{y}" width="{}" height="{BAR}" fill="{base}"/>"#,
            x(b.span.start),
            w(&b.span)
        )
        .unwrap();
        if let Some((r, mark)) = &b.mark {
            let (class, color) = match mark {
                Mark::Replaced => ("replaced", RED),
                Mark::Omitted => ("omitted", GRAY),
            };
            writeln!(
                s,
                r#"<rect class="{class}" x="{}" y="{y}" width="{}" height="{BAR}" fill="{color}"/>"#,
                x(r.start),
                w(r)
            )
            .unwrap();
        }
        s.push_str("</g>\n");
    }
    for (i, &c) in sentence.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{}" y="{baseline}" font-family="monospace" font-size="11" text-anchor="middle">{}</text>"#,
            PAD + CELL * (i as f64 + 0.5),
            xml_escape(&display_char(c).to_string())
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Machine-readable parse: the sentence (bytes as code points) and its
/// actions in application order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub sentence: String,
    pub actions: Vec<ActionRecord>,
}

impl Trace {
    pub fn new(sentence: &[u8], actions: &[ActionRecord]) -> Self {
        Trace {
            sentence: sentence.iter().map(|&b| b as char).collect(),
            actions: actions.to_vec(),
        }
    }

    pub fn sentence_bytes(&self) -> Result<Vec<u8>> {
        self.sentence
            .chars()
            .map(|c| u8::try_from(c as u32).map_err(|_| Error::invalid(format!("character {c:?} is not a byte"))))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("traces always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad trace: {e}")))
    }

    /// Re-apply the actions to rebuild the parse tree.
    pub fn replay(&self, types: &TypeTable) -> Result<ParseTree> {
        Ok(replay(types, &self.sentence_bytes()?, &self.actions)?.into_tree())
    }
}
