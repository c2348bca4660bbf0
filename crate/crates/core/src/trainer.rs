//! Replay memories, the critic and pairwise policy losses, and the training
//! loop.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{input_width, NetScorer, ParseConfig, ParseOutcome, Parser};
use crate::atoms::{ActionKind, TypeTable};
use crate::config::RunConfig;
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::frequency::FrequencyTable;
use crate::nn::{AdaBelief, DenseResNet, LrSchedule, Mode, NetConfig};
use crate::reward::integer_reward_constant;

/// One applied action kept for training: the network input around the
/// chosen action and, when one existed, around a candidate the critic rated
/// higher.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    pub chosen_window: Vec<f32>,
    pub chosen_kind: ActionKind,
    pub better_window: Option<Vec<f32>>,
    pub better_kind: Option<ActionKind>,
    /// Spatially discounted value realized by the parse.
    pub value: f64,
}

/// FIFO of memories with a fixed capacity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Memory>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, m: Memory) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(m);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Memory> {
        self.items.iter()
    }

    /// `n` memories drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Memory> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grad_a: f64,
    pub grad_a_star: f64,
}

/// Pairwise policy loss between the chosen action's logit `a` and a better
/// action's logit `a_star`. The weight `η` is held constant when
/// differentiating, so the gradients are `+η` and `-η`.
pub fn pairwise_policy_loss(a: f64, a_star: f64, v: f64, v_star: f64, beta: f64, epsilon: f64) -> PolicyLoss {
    let p = 1.0 / (1.0 + (a_star - a).exp());
    let eta = (v_star - v).max(0.0) * p.powf(beta) / (epsilon / 2.0 + (1.0 - epsilon) * p);
    if eta == 0.0 {
        return PolicyLoss {
            loss: 0.0,
            grad_a: 0.0,
            grad_a_star: 0.0,
        };
    }
    PolicyLoss {
        loss: eta * (a - a_star),
        grad_a: eta,
        grad_a_star: -eta,
    }
}

pub fn critic_loss(predicted: f64, realized: f64) -> f64 {
    (predicted - realized).powi(2)
}

pub fn critic_loss_grad(predicted: f64, realized: f64) -> f64 {
    2.0 * (predicted - realized)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub beta: f64,
    pub epsilon: f64,
}

fn stack(rows: &[&[f32]]) -> Array2<f32> {
    let width = rows[0].len();
    let mut x = Array2::zeros((rows.len(), width));
    for (mut r, src) in x.rows_mut().into_iter().zip(rows) {
        r.assign(&ndarray::ArrayView1::from(*src));
    }
    x
}

/// One optimization step of both networks on a minibatch. Returns the mean
/// critic loss and the mean policy loss over memories with a better
/// alternative.
pub fn train_step(
    critic: &mut DenseResNet<f32>,
    actor: &mut DenseResNet<f32>,
    batch: &[&Memory],
    opt_critic: &mut AdaBelief,
    opt_actor: &mut AdaBelief,
    cfg: &StepConfig,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let n = batch.len();
    let chosen: Vec<&[f32]> = batch.iter().map(|m| &m.chosen_window[..]).collect();
    let x = stack(&chosen);

    // critic values for the policy weight, taken before this step's update
    let paired: Vec<&Memory> = batch.iter().copied().filter(|m| m.better_window.is_some()).collect();
    let values = if paired.is_empty() {
        None
    } else {
        let mut rows: Vec<&[f32]> = paired.iter().map(|m| &m.chosen_window[..]).collect();
        rows.extend(paired.iter().map(|m| &m.better_window.as_ref().unwrap()[..]));
        Some(critic.infer(&stack(&rows))?.q)
    };

    critic.zero_grad();
    let out = critic.forward(&x, Mode::Train)?;
    let mut d_q = Array2::<f32>::zeros(out.q.raw_dim());
    let mut c_loss = 0.0;
    for (i, m) in batch.iter().enumerate() {
        let k = m.chosen_kind.index();
        let pred = out.q[[i, k]] as f64;
        c_loss += critic_loss(pred, m.value);
        d_q[[i, k]] = (critic_loss_grad(pred, m.value) / n as f64) as f32;
    }
    critic.backward(&Array1::zeros(n), &d_q)?;
    opt_critic.step(critic, cfg.lr_critic);

    let mut p_loss = 0.0;
    if let Some(v) = values {
        let m = paired.len();
        let mut rows: Vec<&[f32]> = paired.iter().map(|p| &p.chosen_window[..]).collect();
        rows.extend(paired.iter().map(|p| &p.better_window.as_ref().unwrap()[..]));
        actor.zero_grad();
        let a_out = actor.forward(&stack(&rows), Mode::Train)?;
        let mut d_a = Array2::<f32>::zeros(a_out.q.raw_dim());
        for (i, mem) in paired.iter().enumerate() {
            let k = mem.chosen_kind.index();
            let ks = mem.better_kind.expect("better window has a kind").index();
            let l = pairwise_policy_loss(
                a_out.q[[i, k]] as f64,
                a_out.q[[m + i, ks]] as f64,
                v[[i, k]] as f64,
                v[[m + i, ks]] as f64,
                cfg.beta,
                cfg.epsilon,
            );
            p_loss += l.loss;
            d_a[[i, k]] += (l.grad_a / m as f64) as f32;
            d_a[[m + i, ks]] += (l.grad_a_star / m as f64) as f32;
        }
        actor.backward(&Array1::zeros(2 * m), &d_a)?;
        opt_actor.step(actor, cfg.lr_actor);
        p_loss /= m as f64;
    }
    Ok((c_loss / n as f64, p_loss))
}

/// Per-epoch training metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub mean_reward: f64,
    pub atom_types: usize,
    pub memories: usize,
    pub train_steps: usize,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,critic_loss,policy_loss,mean_reward,atom_types,memories,train_steps";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{},{},{}",
            self.epoch,
            self.critic_loss,
            self.policy_loss,
            self.mean_reward,
            self.atom_types,
            self.memories,
            self.train_steps
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(EpochMetrics::CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

/// Number of minibatches after a round that produced `memories` memories.
pub fn steps_for(memories: usize, batch_size: usize) -> usize {
    (2 * memories).div_ceil(batch_size)
}

/// Complete training state.
pub struct Trainer {
    pub config: RunConfig,
    pub types: Arc<TypeTable>,
    pub critic: DenseResNet<f32>,
    pub actor: DenseResNet<f32>,
    pub opt_critic: AdaBelief,
    pub opt_actor: AdaBelief,
    pub freq: FrequencyTable,
    pub buffer: ReplayBuffer,
    pub integer_reward: f64,
    /// Epochs completed.
    pub epoch: usize,
}

impl Trainer {
    pub fn net_config(config: &RunConfig) -> NetConfig {
        NetConfig {
            input_width: input_width(config.n_emb, config.context_atoms),
            hidden: config.hidden(),
            blocks: config.residual_blocks,
            actions: ActionKind::COUNT,
        }
    }

    pub fn types_for(config: &RunConfig) -> Result<Arc<TypeTable>> {
        let embedder = Embedder::new(config.embedding_seed, config.n_emb, config.theta_emb)?;
        Ok(Arc::new(TypeTable::new(Arc::new(embedder))))
    }

    /// Fresh networks; the integer reward is fixed from the training corpus.
    pub fn new<S: AsRef<[u8]>>(config: RunConfig, train: &[S]) -> Result<Self> {
        config.validate()?;
        let net = Self::net_config(&config);
        let context_width = config.context_atoms * config.n_emb;
        let critic = DenseResNet::new(net, config.seed.wrapping_mul(2).wrapping_add(1), context_width);
        let actor = DenseResNet::new(net, config.seed.wrapping_mul(2).wrapping_add(2), context_width);
        Ok(Trainer {
            types: Self::types_for(&config)?,
            critic,
            actor,
            opt_critic: AdaBelief::default(),
            opt_actor: AdaBelief::default(),
            freq: FrequencyTable::new(config.t_freq, config.n_freq)?,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            integer_reward: integer_reward_constant(train, config.t_freq),
            epoch: 0,
            config,
        })
    }

    pub fn parse_config(&self, explore: bool) -> ParseConfig {
        ParseConfig {
            reward: self.config.reward(self.integer_reward),
            epsilon: if explore { self.config.epsilon } else { 0.0 },
            explore,
            critic_floor: self.config.critic_floor,
        }
    }

    /// Greedy parse with the current networks.
    pub fn parse(&self, sentence: &[u8]) -> Result<ParseOutcome> {
        let cfg = self.parse_config(false);
        let scorer = NetScorer {
            critic: &self.critic,
            actor: &self.actor,
            context: self.config.context_atoms,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Parser::new(&self.types, &scorer, &self.freq, &cfg).parse(sentence, &mut rng)
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// One pass over the training sentences in rounds.
    pub fn run_epoch<S: AsRef<[u8]>>(&mut self, train: &[S]) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::invalid("training corpus is empty"));
        }
        let epoch = self.epoch;
        let schedule_c = LrSchedule::new(self.config.lr_critic, self.config.epochs);
        let schedule_a = LrSchedule::new(self.config.lr_actor, self.config.epochs);
        let step_cfg = StepConfig {
            lr_critic: schedule_c.lr_at(epoch.min(self.config.epochs - 1))?,
            lr_actor: schedule_a.lr_at(epoch.min(self.config.epochs - 1))?,
            beta: self.config.beta,
            epsilon: self.config.epsilon,
        };
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let parse_cfg = self.parse_config(true);

        let (mut c_sum, mut p_sum, mut steps) = (0.0, 0.0, 0usize);
        let (mut reward_sum, mut parsed, mut memories) = (0.0, 0usize, 0usize);
        for round in order.chunks(self.config.round_size) {
            let mut outcomes = Vec::with_capacity(round.len());
            {
                let scorer = NetScorer {
                    critic: &self.critic,
                    actor: &self.actor,
                    context: self.config.context_atoms,
                };
                let parser = Parser::new(&self.types, &scorer, &self.freq, &parse_cfg);
                for &i in round {
                    let s = train[i].as_ref();
                    outcomes.push((s.len(), parser.parse(s, &mut rng)?));
                }
            }
            let mut added = 0;
            for (len, out) in outcomes {
                self.freq.advance(len as u64);
                self.freq.commit(&out.observations)?;
                reward_sum += out.mean_reward();
                parsed += 1;
                added += out.memories.len();
                for m in out.memories {
                    self.buffer.push(m);
                }
            }
            self.freq.end_batch();
            memories += added;
            for _ in 0..steps_for(added, self.config.batch_size) {
                let batch = self.buffer.sample(self.config.batch_size, &mut rng);
                let (c, p) = train_step(
                    &mut self.critic,
                    &mut self.actor,
                    &batch,
                    &mut self.opt_critic,
                    &mut self.opt_actor,
                    &step_cfg,
                )?;
                c_sum += c;
                p_sum += p;
                steps += 1;
            }
        }
        self.epoch += 1;
        let per_step = |x: f64| if steps == 0 { 0.0 } else { x / steps as f64 };
        let metrics = EpochMetrics {
            epoch,
            critic_loss: per_step(c_sum),
            policy_loss: per_step(p_sum),
            mean_reward: reward_sum / parsed as f64,
            atom_types: self.freq.len(),
            memories,
            train_steps: steps,
        };
        log::info!(
            "epoch {} critic {:.4} policy {:.4} reward {:.3} types {}",
            metrics.epoch,
            metrics.critic_loss,
            metrics.policy_loss,
            metrics.mean_reward,
            metrics.atom_types
        );
        Ok(metrics)
    }

    /// Run the remaining epochs, calling `on_epoch` after each.
    pub fn run<S: AsRef<[u8]>>(
        &mut self,
        train: &[S],
        mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut out = Vec::new();
        while self.epoch < self.config.epochs {
            let m = self.run_epoch(train)?;
            on_epoch(self, &m)?;
            out.push(m);
        }
        Ok(out)
    }
}
