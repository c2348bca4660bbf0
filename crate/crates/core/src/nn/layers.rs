use ndarray::{Array1, Array2, Axis};

use super::{Mode, Real};

/// Affine layer `y = x Wᵀ + b` over row-major batches.
#[derive(Clone, Debug)]
pub struct Linear<F: Real> {
    /// `out × in`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub grad_weight: Array2<F>,
    pub grad_bias: Array1<F>,
}

impl<F: Real> Linear<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            grad_weight: Array2::zeros((outputs, inputs)),
            grad_bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        self.grad_weight += &dy.t().dot(x);
        self.grad_bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(F::zero());
        self.grad_bias.fill(F::zero());
    }

    pub(crate) fn visit(&mut self, f: &mut dyn FnMut(&mut [F], &[F])) {
        f(
            self.weight.as_slice_mut().unwrap(),
            self.grad_weight.as_slice().unwrap(),
        );
        f(self.bias.as_slice_mut().unwrap(), self.grad_bias.as_slice().unwrap());
    }

    pub(crate) fn params(&self) -> [&[F]; 2] {
        [self.weight.as_slice().unwrap(), self.bias.as_slice().unwrap()]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [F]; 2] {
        [
            self.weight.as_slice_mut().unwrap(),
            self.bias.as_slice_mut().unwrap(),
        ]
    }
}

/// Per-feature batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm<F: Real> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub grad_gamma: Array1<F>,
    pub grad_beta: Array1<F>,
    pub momentum: f64,
    pub eps: f64,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<F: Real> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
    mode: Mode,
}

impl<F: Real> BatchNorm<F> {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            grad_gamma: Array1::zeros(features),
            grad_beta: Array1::zeros(features),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&mut self, x: &Array2<F>, mode: Mode) -> (Array2<F>, BnCache<F>) {
        let eps = F::of(self.eps);
        let (mean, inv_std) = match mode {
            Mode::Train => {
                let n = x.nrows();
                let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
                let centered = x - &mean;
                let var = (&centered * &centered).mean_axis(Axis(0)).unwrap();
                let m = F::of(self.momentum);
                let unbiased = if n > 1 {
                    &var * F::of(n as f64 / (n as f64 - 1.0))
                } else {
                    var.clone()
                };
                self.running_mean = &self.running_mean * (F::one() - m) + &mean * m;
                self.running_var = &self.running_var * (F::one() - m) + &unbiased * m;
                (mean, var.mapv(|v| F::one() / (v + eps).sqrt()))
            }
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var.mapv(|v| F::one() / (v + eps).sqrt()),
            ),
        };
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (y, BnCache { xhat, inv_std, mode })
    }

    /// Eval-mode forward without recording.
    pub fn infer(&self, x: &Array2<F>) -> Array2<F> {
        let eps = F::of(self.eps);
        let scale = self
            .running_var
            .mapv(|v| F::one() / (v + eps).sqrt())
            * &self.gamma;
        let shift = &self.beta - &(&self.running_mean * &scale);
        x * &scale + &shift
    }

    pub fn backward(&mut self, cache: &BnCache<F>, dy: &Array2<F>) -> Array2<F> {
        self.grad_gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        self.grad_beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        match cache.mode {
            Mode::Eval => dxhat * &cache.inv_std,
            Mode::Train => {
                let n = F::of(dy.nrows() as f64);
                let sum = dxhat.sum_axis(Axis(0));
                let dot = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                let inner = &dxhat * n - &sum - &(&cache.xhat * &dot);
                inner * &(&cache.inv_std / n)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.fill(F::zero());
        self.grad_beta.fill(F::zero());
    }

    pub(crate) fn visit(&mut self, f: &mut dyn FnMut(&mut [F], &[F])) {
        f(self.gamma.as_slice_mut().unwrap(), self.grad_gamma.as_slice().unwrap());
        f(self.beta.as_slice_mut().unwrap(), self.grad_beta.as_slice().unwrap());
    }

    pub(crate) fn params(&self) -> [&[F]; 2] {
        [self.gamma.as_slice().unwrap(), self.beta.as_slice().unwrap()]
    }

    pub(crate) fn buffers(&self) -> [&[F]; 2] {
        [
            self.running_mean.as_slice().unwrap(),
            self.running_var.as_slice().unwrap(),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [F]; 2] {
        [self.gamma.as_slice_mut().unwrap(), self.beta.as_slice_mut().unwrap()]
    }

    pub(crate) fn buffers_mut(&mut self) -> [&mut [F]; 2] {
        [
            self.running_mean.as_slice_mut().unwrap(),
            self.running_var.as_slice_mut().unwrap(),
        ]
    }

    /// Scale, shift, running mean, running variance.
    pub(crate) fn all_mut(&mut self) -> [&mut [F]; 4] {
        [
            self.gamma.as_slice_mut().unwrap(),
            self.beta.as_slice_mut().unwrap(),
            self.running_mean.as_slice_mut().unwrap(),
            self.running_var.as_slice_mut().unwrap(),
        ]
    }
}

pub(crate) fn relu<F: Real>(x: Array2<F>) -> Array2<F> {
    x.mapv_into(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient through a ReLU given its output.
pub(crate) fn relu_back<F: Real>(out: &Array2<F>, dy: Array2<F>) -> Array2<F> {
    let mut dx = dy;
    ndarray::Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}
