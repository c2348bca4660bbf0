//! Binary checkpoints of a complete training state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "GRLNCKPT" | u32 version
//! section*: [u8; 4] tag | u64 payload length | payload | u32 crc32(payload)
//! ```
//!
//! Sections appear in a fixed order: `CONF` (config text), `CRIT` and `ACTR`
//! (trainable tensors), `OPTM` (both optimizers), `NORM` (batch-norm running
//! statistics, critic then actor), `FREQ` (frequency table keyed by token
//! sequence), `EMBD` (rotation seed and angle bound), `EPCH` (epoch counter
//! and integer reward) and `BUFR` (replay buffer).

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::atoms::{ActionKind, TokenId};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::frequency::{FrequencyEntry, FrequencyTable};
use crate::nn::{AdaBelief, DenseResNet};
use crate::trainer::{Memory, ReplayBuffer, Trainer};

pub const MAGIC: &[u8; 8] = b"GRLNCKPT";
pub const VERSION: u32 = 1;

const SECTIONS: [(&[u8; 4], &str); 9] = [
    (b"CONF", "config"),
    (b"CRIT", "critic"),
    (b"ACTR", "actor"),
    (b"OPTM", "optimizer"),
    (b"NORM", "batchnorm"),
    (b"FREQ", "frequency"),
    (b"EMBD", "embedding"),
    (b"EPCH", "epoch"),
    (b"BUFR", "buffer"),
];

fn put_section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.write_u64::<LE>(payload.len() as u64).unwrap();
    out.extend_from_slice(payload);
    out.write_u32::<LE>(crc32fast::hash(payload)).unwrap();
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    out.write_u64::<LE>(xs.len() as u64).unwrap();
    for &x in xs {
        out.write_f32::<LE>(x).unwrap();
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.write_u64::<LE>(xs.len() as u64).unwrap();
    for &x in xs {
        out.write_f64::<LE>(x).unwrap();
    }
}

fn put_tensors(out: &mut Vec<u8>, ts: &[&[f32]]) {
    out.write_u32::<LE>(ts.len() as u32).unwrap();
    for t in ts {
        put_f32s(out, t);
    }
}

fn put_optimizer(out: &mut Vec<u8>, o: &AdaBelief) {
    out.write_f64::<LE>(o.beta1).unwrap();
    out.write_f64::<LE>(o.beta2).unwrap();
    out.write_f64::<LE>(o.eps).unwrap();
    out.write_u64::<LE>(o.step).unwrap();
    out.write_u32::<LE>(o.m.len() as u32).unwrap();
    for (m, s) in o.m.iter().zip(&o.s) {
        put_f64s(out, m);
        put_f64s(out, s);
    }
}

fn put_memory(out: &mut Vec<u8>, m: &Memory) {
    out.write_u8(m.chosen_kind.index() as u8).unwrap();
    put_f32s(out, &m.chosen_window);
    match (&m.better_window, m.better_kind) {
        (Some(w), Some(k)) => {
            out.write_u8(1).unwrap();
            out.write_u8(k.index() as u8).unwrap();
            put_f32s(out, w);
        }
        _ => out.write_u8(0).unwrap(),
    }
    out.write_f64::<LE>(m.value).unwrap();
}

/// Serialize the full training state.
pub fn encode(t: &Trainer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();

    put_section(&mut out, SECTIONS[0].0, t.config.to_text().as_bytes());

    for (i, net) in [&t.critic, &t.actor].into_iter().enumerate() {
        let mut p = Vec::new();
        put_tensors(&mut p, &net.parameters());
        put_section(&mut out, SECTIONS[1 + i].0, &p);
    }

    let mut p = Vec::new();
    put_optimizer(&mut p, &t.opt_critic);
    put_optimizer(&mut p, &t.opt_actor);
    put_section(&mut out, SECTIONS[3].0, &p);

    let mut p = Vec::new();
    put_tensors(&mut p, &t.critic.running_stats());
    put_tensors(&mut p, &t.actor.running_stats());
    put_section(&mut out, SECTIONS[4].0, &p);

    let mut p = Vec::new();
    p.write_f64::<LE>(t.freq.t_freq()).unwrap();
    p.write_f64::<LE>(t.freq.n_freq()).unwrap();
    p.write_u64::<LE>(t.freq.clock()).unwrap();
    p.write_u64::<LE>(t.freq.batch()).unwrap();
    let entries = t.freq.export(&t.types);
    p.write_u64::<LE>(entries.len() as u64).unwrap();
    for (tokens, e) in entries {
        p.write_u32::<LE>(tokens.len() as u32).unwrap();
        for tok in tokens.iter() {
            p.write_u16::<LE>(tok.0).unwrap();
        }
        for x in [e.corrected, e.uncorrected, e.high_water, e.snapshot_corrected] {
            p.write_f64::<LE>(x).unwrap();
        }
        p.write_u64::<LE>(e.last_clock).unwrap();
        p.write_u64::<LE>(e.first_batch).unwrap();
    }
    put_section(&mut out, SECTIONS[5].0, &p);

    let mut p = Vec::new();
    let emb = t.types.embedder();
    p.write_u64::<LE>(emb.seed()).unwrap();
    p.write_f64::<LE>(emb.rotation().theta()).unwrap();
    p.write_u32::<LE>(emb.dim() as u32).unwrap();
    put_section(&mut out, SECTIONS[6].0, &p);

    let mut p = Vec::new();
    p.write_u64::<LE>(t.epoch as u64).unwrap();
    p.write_f64::<LE>(t.integer_reward).unwrap();
    put_section(&mut out, SECTIONS[7].0, &p);

    let mut p = Vec::new();
    p.write_u64::<LE>(t.buffer.capacity() as u64).unwrap();
    p.write_u64::<LE>(t.buffer.len() as u64).unwrap();
    for m in t.buffer.iter() {
        put_memory(&mut p, m);
    }
    put_section(&mut out, SECTIONS[8].0, &p);
    out
}

/// Reader for one section's payload; every failure names the section.
struct Section<'a> {
    name: &'static str,
    cur: Cursor<&'a [u8]>,
}

impl<'a> Section<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            section: self.name.to_string(),
            message: message.into(),
        }
    }

    fn io<T>(&self, r: std::io::Result<T>) -> Result<T> {
        r.map_err(|e| self.err(e.to_string()))
    }

    fn u8(&mut self) -> Result<u8> {
        let r = self.cur.read_u8();
        self.io(r)
    }

    fn u16(&mut self) -> Result<u16> {
        let r = self.cur.read_u16::<LE>();
        self.io(r)
    }

    fn u32(&mut self) -> Result<u32> {
        let r = self.cur.read_u32::<LE>();
        self.io(r)
    }

    fn u64(&mut self) -> Result<u64> {
        let r = self.cur.read_u64::<LE>();
        self.io(r)
    }

    fn f64(&mut self) -> Result<f64> {
        let r = self.cur.read_f64::<LE>();
        self.io(r)
    }

    /// A length prefix, checked against the bytes left so corrupt lengths
    /// cannot trigger huge allocations.
    fn len(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = self.cur.get_ref().len() as u64 - self.cur.position();
        if n.saturating_mul(item_bytes as u64) > left {
            return Err(self.err(format!("length {n} exceeds remaining {left} bytes")));
        }
        Ok(n as usize)
    }

    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len(4)?;
        let mut v = vec![0f32; n];
        let r = self.cur.read_f32_into::<LE>(&mut v);
        self.io(r)?;
        Ok(v)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        let mut v = vec![0f64; n];
        let r = self.cur.read_f64_into::<LE>(&mut v);
        self.io(r)?;
        Ok(v)
    }

    fn kind(&mut self) -> Result<ActionKind> {
        let k = self.u8()?;
        ActionKind::from_index(k as usize).ok_or_else(|| self.err(format!("unknown action kind {k}")))
    }

    fn tensors_into(&mut self, dst: Vec<&mut [f32]>) -> Result<()> {
        let n = self.u32()? as usize;
        if n != dst.len() {
            return Err(self.err(format!("expected {} tensors, found {n}", dst.len())));
        }
        for (i, d) in dst.into_iter().enumerate() {
            let v = self.f32s()?;
            if v.len() != d.len() {
                return Err(self.err(format!("tensor {i}: expected {} values, found {}", d.len(), v.len())));
            }
            d.copy_from_slice(&v);
        }
        Ok(())
    }

    fn optimizer(&mut self) -> Result<AdaBelief> {
        let mut o = AdaBelief::new(self.f64()?, self.f64()?, self.f64()?);
        o.step = self.u64()?;
        let n = self.u32()? as usize;
        for _ in 0..n {
            o.m.push(self.f64s()?);
            o.s.push(self.f64s()?);
        }
        Ok(o)
    }

    fn finish(&self) -> Result<()> {
        let left = self.cur.get_ref().len() as u64 - self.cur.position();
        if left != 0 {
            return Err(self.err(format!("{left} trailing bytes")));
        }
        Ok(())
    }
}

fn split_sections(bytes: &[u8]) -> Result<Vec<Section<'_>>> {
    let header = |message: String| Error::Checkpoint {
        section: "header".into(),
        message,
    };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(header("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(header(format!("unsupported version {version}")));
    }
    let mut cur = Cursor::new(&bytes[12..]);
    let mut out = Vec::with_capacity(SECTIONS.len());
    for (tag, name) in SECTIONS {
        let bad = |message: String| Error::Checkpoint {
            section: name.to_string(),
            message,
        };
        let mut got = [0u8; 4];
        cur.read_exact(&mut got).map_err(|_| bad("missing".into()))?;
        if &got != tag {
            return Err(bad(format!("expected tag {:?}, found {:?}", String::from_utf8_lossy(tag), String::from_utf8_lossy(&got))));
        }
        let len = cur.read_u64::<LE>().map_err(|e| bad(e.to_string()))?;
        let start = cur.position() as usize;
        let rest = cur.get_ref().len() - start;
        if len > rest as u64 || rest - (len as usize) < 4 {
            return Err(bad(format!("truncated: length {len}, {rest} bytes left")));
        }
        let payload = &cur.get_ref()[start..start + len as usize];
        cur.set_position((start + len as usize) as u64);
        let crc = cur.read_u32::<LE>().map_err(|e| bad(e.to_string()))?;
        if crc != crc32fast::hash(payload) {
            return Err(bad("checksum mismatch".into()));
        }
        out.push(Section {
            name,
            cur: Cursor::new(payload),
        });
    }
    if cur.position() as usize != cur.get_ref().len() {
        return Err(header("trailing bytes after last section".into()));
    }
    Ok(out)
}

/// Rebuild a training state written by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    let mut s = split_sections(bytes)?.into_iter();
    let mut next = || s.next().expect("one reader per section");

    let conf = next();
    let text = std::str::from_utf8(conf.cur.get_ref()).map_err(|e| conf.err(e.to_string()))?;
    let config = RunConfig::parse(text).map_err(|e| conf.err(e.to_string()))?;

    let net = Trainer::net_config(&config);
    let mut critic = DenseResNet::<f32>::zeros(net);
    let mut actor = DenseResNet::<f32>::zeros(net);
    for target in [&mut critic, &mut actor] {
        let mut sec = next();
        sec.tensors_into(target.parameters_mut())?;
        sec.finish()?;
    }

    let mut sec = next();
    let opt_critic = sec.optimizer()?;
    let opt_actor = sec.optimizer()?;
    sec.finish()?;

    let mut sec = next();
    sec.tensors_into(critic.running_stats_mut())?;
    sec.tensors_into(actor.running_stats_mut())?;
    sec.finish()?;

    let types = Trainer::types_for(&config).map_err(|e| conf.err(e.to_string()))?;
    let mut sec = next();
    let (t_freq, n_freq) = (sec.f64()?, sec.f64()?);
    let (clock, batch) = (sec.u64()?, sec.u64()?);
    let n = sec.len(2)?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let len = sec.u32()? as usize;
        let mut tokens = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            let t = sec.u16()?;
            if t as usize >= TokenId::COUNT {
                return Err(sec.err(format!("token {t} out of range")));
            }
            tokens.push(TokenId(t));
        }
        let e = FrequencyEntry {
            corrected: sec.f64()?,
            uncorrected: sec.f64()?,
            high_water: sec.f64()?,
            snapshot_corrected: sec.f64()?,
            last_clock: sec.u64()?,
            first_batch: sec.u64()?,
        };
        entries.push((tokens, e));
    }
    sec.finish()?;
    let freq = FrequencyTable::import(&types, t_freq, n_freq, clock, batch, entries).map_err(|e| sec.err(e.to_string()))?;

    let mut sec = next();
    let (seed, theta, dim) = (sec.u64()?, sec.f64()?, sec.u32()? as usize);
    sec.finish()?;
    if seed != config.embedding_seed || theta != config.theta_emb || dim != config.n_emb {
        return Err(sec.err("embedding parameters disagree with the config"));
    }

    let mut sec = next();
    let epoch = sec.u64()? as usize;
    let integer_reward = sec.f64()?;
    sec.finish()?;

    let mut sec = next();
    let capacity = sec.u64()? as usize;
    let n = sec.len(1)?;
    let mut buffer = ReplayBuffer::new(capacity);
    for _ in 0..n {
        let chosen_kind = sec.kind()?;
        let chosen_window = sec.f32s()?;
        let (better_kind, better_window) = match sec.u8()? {
            0 => (None, None),
            1 => (Some(sec.kind()?), Some(sec.f32s()?)),
            f => return Err(sec.err(format!("bad flag {f}"))),
        };
        buffer.push(Memory {
            chosen_window,
            chosen_kind,
            better_window,
            better_kind,
            value: sec.f64()?,
        });
    }
    sec.finish()?;

    Ok(Trainer {
        config,
        types,
        critic,
        actor,
        opt_critic,
        opt_actor,
        freq,
        buffer,
        integer_reward,
        epoch,
    })
}

pub fn save(t: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
