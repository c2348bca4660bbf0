//! Corpora: synthetic JSON-like generators, dictionary extraction from raw
//! PDF bytes, and a JSON-lines file format.
//!
//! Sentences are byte strings. On disk each byte is written as the Unicode
//! code point of the same value, so arbitrary bytes survive a JSON string.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Vec<u8>>,
    /// Sorted indices of the held-out sentences.
    pub eval: Vec<usize>,
    pub provenance: String,
}

impl Corpus {
    /// Hold out the last `eval_count` sentences.
    pub fn with_tail_split(sentences: Vec<Vec<u8>>, eval_count: usize, provenance: impl Into<String>) -> Self {
        let n = sentences.len();
        let k = eval_count.min(n);
        Corpus {
            sentences,
            eval: (n - k..n).collect(),
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        let mut eval = self.eval.iter().peekable();
        (0..self.sentences.len())
            .filter(|i| {
                if eval.peek() == Some(&i) {
                    eval.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }

    pub fn train(&self) -> Vec<&[u8]> {
        self.train_indices().into_iter().map(|i| &self.sentences[i][..]).collect()
    }

    pub fn eval_sentences(&self) -> Vec<&[u8]> {
        self.eval.iter().map(|&i| &self.sentences[i][..]).collect()
    }
}

/// Standard held-out size: 8 of 128, 32 of 512.
pub fn json_eval_count(count: usize) -> usize {
    count / 16
}

/// Standard held-out size for extracted dictionaries: 50 of 1000.
pub fn pdf_eval_count(count: usize) -> usize {
    count / 20
}

/// Probability of expanding a structure at depth `d` into nested children.
pub fn nest_probability(depth: u32) -> f64 {
    0.6f64.powi(depth as i32)
}

fn json_structure<R: Rng + ?Sized>(rng: &mut R, depth: u32, out: &mut Vec<u8>) {
    out.push(b'{');
    let p = nest_probability(depth);
    if rng.random::<f64>() < p {
        loop {
            json_structure(rng, depth + 1, out);
            if rng.random::<f64>() >= p {
                break;
            }
        }
    } else {
        out.push(b"abc"[rng.random_range(0..3)]);
    }
    out.push(b'}');
}

/// One sentence of `S -> '{' ('a' | 'b' | 'c' | S+) '}'`.
pub fn simple_json_sentence<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    let mut out = Vec::new();
    json_structure(rng, 1, &mut out);
    out
}

pub fn gen_simple_json(count: usize, seed: u64) -> Result<Corpus> {
    if count == 0 {
        return Err(Error::invalid("count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..count).map(|_| simple_json_sentence(&mut rng)).collect();
    Ok(Corpus::with_tail_split(
        sentences,
        json_eval_count(count),
        format!("simple-json count={count} seed={seed}"),
    ))
}

pub const NOISE_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz{}";

/// A stream sentence split into its parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSentence {
    pub prefix: Vec<u8>,
    pub core: Vec<u8>,
    pub suffix: Vec<u8>,
}

impl StreamSentence {
    pub fn joined(&self) -> Vec<u8> {
        [&self.prefix[..], &self.core, &self.suffix].concat()
    }
}

fn noise<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    let len = rng.random_range(5..=20);
    (0..len)
        .map(|_| NOISE_ALPHABET[rng.random_range(0..NOISE_ALPHABET.len())])
        .collect()
}

pub fn stream_sentence<R: Rng + ?Sized>(rng: &mut R) -> StreamSentence {
    let prefix = noise(rng);
    let core = simple_json_sentence(rng);
    let suffix = noise(rng);
    StreamSentence { prefix, core, suffix }
}

pub fn gen_stream_parts(count: usize, seed: u64) -> Vec<StreamSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| stream_sentence(&mut rng)).collect()
}

pub fn gen_stream(count: usize, seed: u64) -> Result<Corpus> {
    if count == 0 {
        return Err(Error::invalid("count must be positive"));
    }
    let sentences = gen_stream_parts(count, seed).iter().map(|s| s.joined()).collect();
    Ok(Corpus::with_tail_split(
        sentences,
        json_eval_count(count),
        format!("simple-json-stream count={count} seed={seed}"),
    ))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Extraction {
    pub dictionaries: Vec<Vec<u8>>,
    /// Dictionaries still open at the end of the input.
    pub dropped: usize,
}

fn skip_stream(bytes: &[u8], i: usize) -> Option<usize> {
    // `stream` followed by an end of line opens binary data up to `endstream`
    let rest = &bytes[i + 6..];
    if !(rest.starts_with(b"\n") || rest.starts_with(b"\r\n")) {
        return None;
    }
    let body = i + 6;
    bytes[body..]
        .windows(9)
        .position(|w| w == b"endstream")
        .map(|p| body + p + 9)
        .or(Some(bytes.len()))
}

/// Top-level `<<` … `>>` dictionaries in raw PDF bytes. Nested dictionaries
/// stay inside their parent. Stream bodies between top-level objects are
/// skipped.
pub fn extract_pdf_dictionaries(bytes: &[u8]) -> Extraction {
    let mut out = Extraction::default();
    let mut depth = 0usize;
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let rest = &bytes[i..];
        if rest.starts_with(b"<<") {
            if depth == 0 {
                start = i;
            }
            depth += 1;
            i += 2;
        } else if rest.starts_with(b">>") && depth > 0 {
            depth -= 1;
            i += 2;
            if depth == 0 {
                out.dictionaries.push(bytes[start..i].to_vec());
            }
        } else if depth == 0 && rest.starts_with(b"stream") && (i == 0 || !bytes[i - 1].is_ascii_alphabetic()) {
            i = skip_stream(bytes, i).unwrap_or(i + 6);
        } else {
            i += 1;
        }
    }
    if depth > 0 {
        out.dropped = 1;
        log::warn!("dropped an unterminated dictionary at offset {start}");
    }
    out
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    provenance: String,
    count: usize,
    eval: Vec<usize>,
}

const FORMAT: &str = "gramlearn-corpus";
const VERSION: u32 = 1;

pub fn encode_sentence(bytes: &[u8]) -> String {
    let s: String = bytes.iter().map(|&b| b as char).collect();
    serde_json::to_string(&s).expect("strings always serialize")
}

pub fn decode_sentence(line: &str) -> std::result::Result<Vec<u8>, String> {
    let s: String = serde_json::from_str(line).map_err(|e| e.to_string())?;
    s.chars()
        .map(|c| u8::try_from(c as u32).map_err(|_| format!("character {c:?} is outside the byte range")))
        .collect()
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        provenance: corpus.provenance.clone(),
        count: corpus.sentences.len(),
        eval: corpus.eval.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for s in &corpus.sentences {
        writeln!(w, "{}", encode_sentence(s))?;
    }
    w.flush()
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Corpus> {
    let syntax = |line: usize, message: String| Error::Syntax { line, message };
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| syntax(1, "missing header".into()))?
        .map_err(|e| syntax(1, e.to_string()))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| syntax(1, format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(syntax(1, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut sentences = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| syntax(n, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        sentences.push(decode_sentence(&line).map_err(|m| syntax(n, m))?);
    }
    if sentences.len() != header.count {
        return Err(syntax(
            sentences.len() + 2,
            format!("header announces {} sentences, found {}", header.count, sentences.len()),
        ));
    }
    let mut eval = header.eval;
    eval.sort_unstable();
    eval.dedup();
    if eval.last().is_some_and(|&i| i >= sentences.len()) {
        return Err(syntax(1, "held-out index out of range".into()));
    }
    Ok(Corpus {
        sentences,
        eval,
        provenance: header.provenance,
    })
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(corpus, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_split_sizes() {
        let c = gen_simple_json(128, 0).unwrap();
        assert_eq!((c.train().len(), c.eval.len()), (120, 8));
        let c = gen_simple_json(1, 0).unwrap();
        assert_eq!((c.train().len(), c.eval.len()), (1, 0));
        assert_eq!(gen_stream(512, 0).unwrap().eval.len(), 32);
        assert_eq!(pdf_eval_count(1000), 50);
        assert!(gen_simple_json(0, 0).is_err());
    }

    #[test]
    fn extraction_examples() {
        let pdf = b"1 0 obj\n<<\n/Type /Page\n/Parent 447 0 R\n>>\nendobj\n<<a<<b>>c>> >> <<x";
        let ex = extract_pdf_dictionaries(pdf);
        assert_eq!(
            ex.dictionaries,
            vec![b"<<\n/Type /Page\n/Parent 447 0 R\n>>".to_vec(), b"<<a<<b>>c>>".to_vec()]
        );
        assert_eq!(ex.dropped, 1);
    }

    #[test]
    fn stream_bodies_are_skipped() {
        let pdf = b"<</Length 9>>\nstream\n<<junk>>\nendstream\n<</A 1>>";
        let ex = extract_pdf_dictionaries(pdf);
        assert_eq!(ex.dictionaries, vec![b"<</Length 9>>".to_vec(), b"<</A 1>>".to_vec()]);
    }

    #[test]
    fn bytes_survive_the_line_format() {
        let c = Corpus::with_tail_split(vec![b"a\nb".to_vec(), vec![0, 255, b'"', b'\\', 0x80]], 1, "t");
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        assert_eq!(read_corpus(&buf[..]).unwrap(), c);
    }

    #[test]
    fn empty_corpus_is_header_only() {
        let c = Corpus::with_tail_split(Vec::new(), 0, "empty");
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        assert_eq!(read_corpus(&buf[..]).unwrap(), c);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = "{\"format\":\"gramlearn-corpus\",\"version\":1,\"provenance\":\"\",\"count\":2,\"eval\":[]}\n\"ok\"\nnot json\n";
        match read_corpus(text.as_bytes()) {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let wide = "{\"format\":\"gramlearn-corpus\",\"version\":1,\"provenance\":\"\",\"count\":1,\"eval\":[]}\n\"\u{263a}\"\n";
        assert!(matches!(read_corpus(wide.as_bytes()), Err(Error::Syntax { line: 2, .. })));
    }
}
