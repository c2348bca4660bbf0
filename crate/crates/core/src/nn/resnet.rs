use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{relu, relu_back, BnCache};
use super::{BatchNorm, Linear, Mode, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub input_width: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub actions: usize,
}

/// Pre-activation residual block: `h + W2 relu(bn2(W1 relu(bn1(h))))`.
#[derive(Clone, Debug)]
struct ResidualBlock<F: Real> {
    bn1: BatchNorm<F>,
    lin1: Linear<F>,
    bn2: BatchNorm<F>,
    lin2: Linear<F>,
}

struct BlockTape<F: Real> {
    bn1: BnCache<F>,
    a1: Array2<F>,
    bn2: BnCache<F>,
    a2: Array2<F>,
}

struct Tape<F: Real> {
    x: Array2<F>,
    blocks: Vec<BlockTape<F>>,
    head_bn: BnCache<F>,
    a_head: Array2<F>,
    widen_bn: BnCache<F>,
    a_wide: Array2<F>,
}

#[derive(Clone, Debug)]
pub struct NetOutput<F: Real> {
    /// State value per batch row.
    pub state: Array1<F>,
    /// `state + advantage - mean(advantage)`, one column per action.
    pub q: Array2<F>,
}

/// Dense residual network ending in a dueling head.
pub struct DenseResNet<F: Real> {
    config: NetConfig,
    stem: Linear<F>,
    blocks: Vec<ResidualBlock<F>>,
    head_bn: BatchNorm<F>,
    widen: Linear<F>,
    widen_bn: BatchNorm<F>,
    state_head: Linear<F>,
    action_head: Linear<F>,
    tape: Option<Tape<F>>,
}

impl<F: Real> Clone for DenseResNet<F> {
    fn clone(&self) -> Self {
        DenseResNet {
            config: self.config,
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            head_bn: self.head_bn.clone(),
            widen: self.widen.clone(),
            widen_bn: self.widen_bn.clone(),
            state_head: self.state_head.clone(),
            action_head: self.action_head.clone(),
            tape: None,
        }
    }
}

impl<F: Real> DenseResNet<F> {
    /// All weights zero, batch norms at identity.
    pub fn zeros(config: NetConfig) -> Self {
        let h = config.hidden;
        DenseResNet {
            config,
            stem: Linear::zeros(config.input_width, h),
            blocks: (0..config.blocks)
                .map(|_| ResidualBlock {
                    bn1: BatchNorm::new(h),
                    lin1: Linear::zeros(h, h),
                    bn2: BatchNorm::new(h),
                    lin2: Linear::zeros(h, h),
                })
                .collect(),
            head_bn: BatchNorm::new(h),
            widen: Linear::zeros(h, 2 * h),
            widen_bn: BatchNorm::new(2 * h),
            state_head: Linear::zeros(2 * h, 1),
            action_head: Linear::zeros(2 * h, config.actions),
            tape: None,
        }
    }

    /// Kaiming-uniform network. The first `context_width` and last
    /// `context_width` input columns start at zero and are left out of the
    /// first layer's fan-in.
    pub fn new(config: NetConfig, seed: u64, context_width: usize) -> Self {
        let mut net = Self::zeros(config);
        net.kaiming_init(seed, context_width);
        net
    }

    pub fn kaiming_init(&mut self, seed: u64, context_width: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = self.config.input_width;
        let context_width = context_width.min(n_in / 2);
        let fan_in = n_in - 2 * context_width;
        fill_kaiming(&mut self.stem, fan_in, &mut rng);
        for c in (0..context_width).chain(n_in - context_width..n_in) {
            self.stem.weight.column_mut(c).fill(F::zero());
        }
        for b in &mut self.blocks {
            let fan = b.lin1.inputs();
            fill_kaiming(&mut b.lin1, fan, &mut rng);
            // residual branches start as the identity mapping
            b.lin2.weight.fill(F::zero());
            b.lin2.bias.fill(F::zero());
        }
        let fan = self.widen.inputs();
        fill_kaiming(&mut self.widen, fan, &mut rng);
        let fan = self.state_head.inputs();
        fill_kaiming(&mut self.state_head, fan, &mut rng);
        let fan = self.action_head.inputs();
        fill_kaiming(&mut self.action_head, fan, &mut rng);
    }

    pub fn config(&self) -> NetConfig {
        self.config
    }

    pub fn stem(&self) -> &Linear<F> {
        &self.stem
    }

    pub fn stem_mut(&mut self) -> &mut Linear<F> {
        &mut self.stem
    }

    pub fn widen_mut(&mut self) -> &mut Linear<F> {
        &mut self.widen
    }

    pub fn state_head_mut(&mut self) -> &mut Linear<F> {
        &mut self.state_head
    }

    pub fn action_head_mut(&mut self) -> &mut Linear<F> {
        &mut self.action_head
    }

    fn check_width(&self, x: &Array2<F>) -> Result<()> {
        if x.ncols() != self.config.input_width {
            return Err(Error::invalid(format!(
                "input width {} does not match network width {}",
                x.ncols(),
                self.config.input_width
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        Ok(())
    }

    fn dueling(state: Array2<F>, adv: Array2<F>) -> NetOutput<F> {
        let state = state.column(0).to_owned();
        let mean = adv.mean_axis(Axis(1)).unwrap();
        let mut q = adv;
        for (mut row, (&s, &m)) in q.axis_iter_mut(Axis(0)).zip(state.iter().zip(mean.iter())) {
            row.mapv_inplace(|a| s + a - m);
        }
        NetOutput { state, q }
    }

    /// Eval-mode forward pass that records nothing.
    pub fn infer(&self, x: &Array2<F>) -> Result<NetOutput<F>> {
        self.check_width(x)?;
        let mut h = self.stem.forward(x);
        for b in &self.blocks {
            let a1 = relu(b.bn1.infer(&h));
            let a2 = relu(b.bn2.infer(&b.lin1.forward(&a1)));
            h += &b.lin2.forward(&a2);
        }
        let a = relu(self.head_bn.infer(&h));
        let w = relu(self.widen_bn.infer(&self.widen.forward(&a)));
        Ok(Self::dueling(self.state_head.forward(&w), self.action_head.forward(&w)))
    }

    /// Forward pass that records activations for [`backward`](Self::backward).
    /// Train mode also folds the batch statistics into the running averages.
    pub fn forward(&mut self, x: &Array2<F>, mode: Mode) -> Result<NetOutput<F>> {
        self.check_width(x)?;
        let mut h = self.stem.forward(x);
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (z1, bn1) = b.bn1.forward(&h, mode);
            let a1 = relu(z1);
            let (z2, bn2) = b.bn2.forward(&b.lin1.forward(&a1), mode);
            let a2 = relu(z2);
            h += &b.lin2.forward(&a2);
            tapes.push(BlockTape { bn1, a1, bn2, a2 });
        }
        let (zh, head_bn) = self.head_bn.forward(&h, mode);
        let a_head = relu(zh);
        let (zw, widen_bn) = self.widen_bn.forward(&self.widen.forward(&a_head), mode);
        let a_wide = relu(zw);
        let out = Self::dueling(self.state_head.forward(&a_wide), self.action_head.forward(&a_wide));
        self.tape = Some(Tape {
            x: x.clone(),
            blocks: tapes,
            head_bn,
            a_head,
            widen_bn,
            a_wide,
        });
        Ok(out)
    }

    /// Accumulate parameter gradients for the recorded forward pass, given
    /// gradients with respect to the state value and the per-action outputs.
    /// Returns the gradient with respect to the input.
    pub fn backward(&mut self, d_state: &Array1<F>, d_q: &Array2<F>) -> Result<Array2<F>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::InvalidState("backward without a recorded forward pass".into()))?;
        let rows = tape.x.nrows();
        if d_state.len() != rows || d_q.nrows() != rows || d_q.ncols() != self.config.actions {
            return Err(Error::invalid("output gradient shape does not match the recorded batch"));
        }
        let d_state_total = d_state + &d_q.sum_axis(Axis(1));
        let d_mean = d_q.mean_axis(Axis(1)).unwrap();
        let d_adv = d_q - &d_mean.insert_axis(Axis(1));
        let d_state_col = d_state_total.insert_axis(Axis(1));

        let mut d_wide = self.state_head.backward(&tape.a_wide, &d_state_col);
        d_wide += &self.action_head.backward(&tape.a_wide, &d_adv);
        let d_zw = relu_back(&tape.a_wide, d_wide);
        let d_w = self.widen_bn.backward(&tape.widen_bn, &d_zw);
        let d_head = self.widen.backward(&tape.a_head, &d_w);
        let d_zh = relu_back(&tape.a_head, d_head);
        let mut d_h = self.head_bn.backward(&tape.head_bn, &d_zh);

        for (b, t) in self.blocks.iter_mut().zip(&tape.blocks).rev() {
            let d_a2 = b.lin2.backward(&t.a2, &d_h);
            let d_u = b.bn2.backward(&t.bn2, &relu_back(&t.a2, d_a2));
            let d_a1 = b.lin1.backward(&t.a1, &d_u);
            let d_skip = b.bn1.backward(&t.bn1, &relu_back(&t.a1, d_a1));
            d_h += &d_skip;
        }
        Ok(self.stem.backward(&tape.x, &d_h))
    }

    pub fn zero_grad(&mut self) {
        self.stem.zero_grad();
        for b in &mut self.blocks {
            b.bn1.zero_grad();
            b.lin1.zero_grad();
            b.bn2.zero_grad();
            b.lin2.zero_grad();
        }
        self.head_bn.zero_grad();
        self.widen.zero_grad();
        self.widen_bn.zero_grad();
        self.state_head.zero_grad();
        self.action_head.zero_grad();
    }

    /// Visit `(parameter, gradient)` pairs in a fixed order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [F], &[F])) {
        self.stem.visit(f);
        for b in &mut self.blocks {
            b.bn1.visit(f);
            b.lin1.visit(f);
            b.bn2.visit(f);
            b.lin2.visit(f);
        }
        self.head_bn.visit(f);
        self.widen.visit(f);
        self.widen_bn.visit(f);
        self.state_head.visit(f);
        self.action_head.visit(f);
    }

    /// Every tensor in a fixed order, batch-norm running statistics included
    /// right after each layer's scale and shift.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        out.extend(self.stem.params());
        for b in &self.blocks {
            out.extend(b.bn1.params());
            out.extend(b.bn1.buffers());
            out.extend(b.lin1.params());
            out.extend(b.bn2.params());
            out.extend(b.bn2.buffers());
            out.extend(b.lin2.params());
        }
        out.extend(self.head_bn.params());
        out.extend(self.head_bn.buffers());
        out.extend(self.widen.params());
        out.extend(self.widen_bn.params());
        out.extend(self.widen_bn.buffers());
        out.extend(self.state_head.params());
        out.extend(self.action_head.params());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        out.extend(self.stem.params_mut());
        for b in &mut self.blocks {
            out.extend(b.bn1.all_mut());
            out.extend(b.lin1.params_mut());
            out.extend(b.bn2.all_mut());
            out.extend(b.lin2.params_mut());
        }
        out.extend(self.head_bn.all_mut());
        out.extend(self.widen.params_mut());
        out.extend(self.widen_bn.all_mut());
        out.extend(self.state_head.params_mut());
        out.extend(self.action_head.params_mut());
        out
    }

    /// Trainable tensors in the order `visit_params` walks them.
    pub fn parameters(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        out.extend(self.stem.params());
        for b in &self.blocks {
            out.extend(b.bn1.params());
            out.extend(b.lin1.params());
            out.extend(b.bn2.params());
            out.extend(b.lin2.params());
        }
        out.extend(self.head_bn.params());
        out.extend(self.widen.params());
        out.extend(self.widen_bn.params());
        out.extend(self.state_head.params());
        out.extend(self.action_head.params());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        out.extend(self.stem.params_mut());
        for b in &mut self.blocks {
            out.extend(b.bn1.params_mut());
            out.extend(b.lin1.params_mut());
            out.extend(b.bn2.params_mut());
            out.extend(b.lin2.params_mut());
        }
        out.extend(self.head_bn.params_mut());
        out.extend(self.widen.params_mut());
        out.extend(self.widen_bn.params_mut());
        out.extend(self.state_head.params_mut());
        out.extend(self.action_head.params_mut());
        out
    }

    /// Running mean and variance of every batch norm, layer by layer.
    pub fn running_stats(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        for b in &self.blocks {
            out.extend(b.bn1.buffers());
            out.extend(b.bn2.buffers());
        }
        out.extend(self.head_bn.buffers());
        out.extend(self.widen_bn.buffers());
        out
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.bn1.buffers_mut());
            out.extend(b.bn2.buffers_mut());
        }
        out.extend(self.head_bn.buffers_mut());
        out.extend(self.widen_bn.buffers_mut());
        out
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let lin = |l: &Linear<F>| l.weight.len() + l.bias.len();
        let bn = |b: &BatchNorm<F>| 2 * b.gamma.len();
        let mut n = lin(&self.stem) + bn(&self.head_bn) + lin(&self.widen) + bn(&self.widen_bn);
        n += lin(&self.state_head) + lin(&self.action_head);
        for b in &self.blocks {
            n += bn(&b.bn1) + lin(&b.lin1) + bn(&b.bn2) + lin(&b.lin2);
        }
        n
    }

    /// Copy of the network in another float type.
    pub fn cast<G: Real>(&self) -> DenseResNet<G> {
        let mut out = DenseResNet::<G>::zeros(self.config);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = G::of(s.f64());
            }
        }
        out
    }
}

fn fill_kaiming<F: Real>(layer: &mut Linear<F>, fan_in: usize, rng: &mut ChaCha8Rng) {
    // ReLU gain: bound = sqrt(2) * sqrt(3 / fan_in)
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    layer
        .weight
        .mapv_inplace(|_| F::of(rng.random_range(-bound..bound)));
    layer.bias.fill(F::zero());
}
