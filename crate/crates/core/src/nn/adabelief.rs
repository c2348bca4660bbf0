use super::{DenseResNet, Real};

/// One AdaBelief update of a single scalar. `t` is the 1-based step count.
///
/// The second moment tracks the squared deviation of the gradient from its
/// running mean rather than the squared gradient.
#[allow(clippy::too_many_arguments)]
pub fn adabelief_update(
    param: &mut f64,
    grad: f64,
    m: &mut f64,
    s: &mut f64,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    *m = beta1 * *m + (1.0 - beta1) * grad;
    let dev = grad - *m;
    *s = beta2 * *s + (1.0 - beta2) * dev * dev + eps;
    let m_hat = *m / (1.0 - beta1.powi(t as i32));
    let s_hat = *s / (1.0 - beta2.powi(t as i32));
    *param -= lr * m_hat / (s_hat.sqrt() + eps);
}

/// AdaBelief state for one network. Moments are kept in `f64` whatever the
/// network's float type.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaBelief {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
}

impl Default for AdaBelief {
    fn default() -> Self {
        AdaBelief::new(0.9, 0.999, 1e-16)
    }
}

impl AdaBelief {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdaBelief {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            s: Vec::new(),
        }
    }

    /// Apply one step to every parameter of `net` using its accumulated
    /// gradients.
    pub fn step<F: Real>(&mut self, net: &mut DenseResNet<F>, lr: f64) {
        self.step += 1;
        let t = self.step;
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        let (ms, ss) = (&mut self.m, &mut self.s);
        let mut idx = 0;
        net.visit_params(&mut |params, grads| {
            if ms.len() <= idx {
                ms.push(vec![0.0; params.len()]);
                ss.push(vec![0.0; params.len()]);
            }
            let (m, s) = (&mut ms[idx], &mut ss[idx]);
            for i in 0..params.len() {
                let mut p = params[i].f64();
                adabelief_update(&mut p, grads[i].f64(), &mut m[i], &mut s[i], t, lr, beta1, beta2, eps);
                params[i] = F::of(p);
            }
            idx += 1;
        });
    }
}
