//! Run configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::reward::RewardConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n_emb: usize,
    /// Extra atoms on each side of the scored pair.
    pub context_atoms: usize,
    pub residual_blocks: usize,
    pub alpha_anchor: f64,
    pub alpha_subgrammar: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub t_freq: f64,
    pub n_freq: f64,
    pub theta_emb: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub epochs: usize,
    pub round_size: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Network initialization, sentence order, exploration and sampling.
    pub seed: u64,
    /// Base vectors and rotation of the embedding.
    pub embedding_seed: u64,
    /// Stop a parse once no critic value exceeds this; unset parses to the
    /// end.
    pub critic_floor: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_emb: 64,
            context_atoms: 0,
            residual_blocks: 3,
            alpha_anchor: 0.4,
            alpha_subgrammar: 0.5,
            lambda: 0.8,
            epsilon: 0.1,
            beta: 0.5,
            t_freq: 10_000.0,
            n_freq: 20.0,
            theta_emb: 1.0,
            lr_critic: 5e-4,
            lr_actor: 5e-5,
            epochs: 200,
            round_size: 32,
            buffer_capacity: 10_000,
            batch_size: 64,
            seed: 0,
            embedding_seed: 0,
            critic_floor: None,
        }
    }
}

/// Settings tuned per dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    SimpleJson,
    SimpleJsonStream,
    PdfDictionaries,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple-json" => Ok(Preset::SimpleJson),
            "simple-json-stream" => Ok(Preset::SimpleJsonStream),
            "pdf" => Ok(Preset::PdfDictionaries),
            _ => Err(Error::invalid(format!("unknown dataset `{s}`"))),
        }
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let base = RunConfig::default();
        match p {
            Preset::SimpleJson => base,
            Preset::SimpleJsonStream => RunConfig {
                round_size: 16,
                ..base
            },
            Preset::PdfDictionaries => RunConfig {
                round_size: 4,
                t_freq: 50_000.0,
                alpha_anchor: 0.008,
                alpha_subgrammar: 0.01,
                context_atoms: 2,
                ..base
            },
        }
    }

    pub fn hidden(&self) -> usize {
        2 * self.n_emb
    }

    pub fn reward(&self, integer_reward: f64) -> RewardConfig {
        RewardConfig {
            alpha_anchor: self.alpha_anchor,
            alpha_subgrammar: self.alpha_subgrammar,
            lambda: self.lambda,
            integer_reward,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(what.to_string()))
            }
        };
        check(self.n_emb >= 1, "n_emb must be positive")?;
        check(self.residual_blocks >= 1, "residual_blocks must be positive")?;
        check((0.0..1.0).contains(&self.epsilon), "epsilon must lie in [0, 1)")?;
        check(self.beta > 0.0, "beta must be positive")?;
        check(self.t_freq > 0.0 && self.n_freq > 0.0, "t_freq and n_freq must be positive")?;
        check(self.theta_emb > 0.0 && self.theta_emb <= 1.0, "theta_emb must lie in (0, 1]")?;
        check(self.lr_critic >= 0.0 && self.lr_actor >= 0.0, "learning rates must be non-negative")?;
        check(self.epochs >= 1, "epochs must be positive")?;
        check(self.round_size >= 1, "round_size must be positive")?;
        check(self.buffer_capacity >= 1, "buffer_capacity must be positive")?;
        check(self.batch_size >= 1, "batch_size must be positive")?;
        self.reward(0.0).validate()
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        match key {
            "n_emb" => self.n_emb = num(value)?,
            "context_atoms" => self.context_atoms = num(value)?,
            "residual_blocks" => self.residual_blocks = num(value)?,
            "alpha_anchor" => self.alpha_anchor = num(value)?,
            "alpha_subgrammar" => self.alpha_subgrammar = num(value)?,
            "lambda" => self.lambda = num(value)?,
            "epsilon" => self.epsilon = num(value)?,
            "beta" => self.beta = num(value)?,
            "t_freq" => self.t_freq = num(value)?,
            "n_freq" => self.n_freq = num(value)?,
            "theta_emb" => self.theta_emb = num(value)?,
            "lr_critic" => self.lr_critic = num(value)?,
            "lr_actor" => self.lr_actor = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "round_size" => self.round_size = num(value)?,
            "buffer_capacity" => self.buffer_capacity = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "seed" => self.seed = num(value)?,
            "embedding_seed" => self.embedding_seed = num(value)?,
            "critic_floor" => {
                self.critic_floor = match value {
                    "none" => None,
                    v => Some(num(v)?),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are rejected.
    pub fn parse_overrides(mut self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| Error::Syntax {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(syntax)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        RunConfig::default().parse_overrides(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// Every field in file syntax; `parse(to_text())` gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("n_emb", self.n_emb.to_string());
        put("context_atoms", self.context_atoms.to_string());
        put("residual_blocks", self.residual_blocks.to_string());
        put("alpha_anchor", format!("{:?}", self.alpha_anchor));
        put("alpha_subgrammar", format!("{:?}", self.alpha_subgrammar));
        put("lambda", format!("{:?}", self.lambda));
        put("epsilon", format!("{:?}", self.epsilon));
        put("beta", format!("{:?}", self.beta));
        put("t_freq", format!("{:?}", self.t_freq));
        put("n_freq", format!("{:?}", self.n_freq));
        put("theta_emb", format!("{:?}", self.theta_emb));
        put("lr_critic", format!("{:?}", self.lr_critic));
        put("lr_actor", format!("{:?}", self.lr_actor));
        put("epochs", self.epochs.to_string());
        put("round_size", self.round_size.to_string());
        put("buffer_capacity", self.buffer_capacity.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("embedding_seed", self.embedding_seed.to_string());
        put(
            "critic_floor",
            self.critic_floor.map_or("none".into(), |f| format!("{f:?}")),
        );
        s
    }
}
