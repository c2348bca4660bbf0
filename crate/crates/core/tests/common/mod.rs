//! Test-side oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::Arc;

use gramlearn::atoms::{ActionKind, NodeId, ParseTree, SentenceState, TypeTable};
use gramlearn::embedding::Embedder;
use gramlearn::nn::{BatchNorm, DenseResNet, Linear, Mode, NetConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn types(dim: usize) -> TypeTable {
    TypeTable::new(Arc::new(Embedder::new(7, dim, 1.0).unwrap()))
}

/// Spatial values by breadth-first search from every action node.
pub fn bfs_spatial_values(tree: &ParseTree, lambda: f64) -> Vec<Option<f64>> {
    let nodes = tree.nodes();
    let n = nodes.len();
    let mut adj = vec![Vec::new(); n];
    for (i, node) in nodes.iter().enumerate() {
        if let Some(p) = node.parent {
            adj[i].push(p.0);
            adj[p.0].push(i);
        }
    }
    (0..n)
        .map(|src| {
            if !nodes[src].is_action() {
                return None;
            }
            let mut dist = vec![usize::MAX; n];
            dist[src] = 0;
            let mut q = VecDeque::from([src]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            let (mut num, mut den) = (0.0, 0.0);
            for m in 0..n {
                if nodes[m].is_action() && dist[m] != usize::MAX {
                    let w = lambda.powi(dist[m] as i32);
                    num += w * nodes[m].reward.unwrap();
                    den += w;
                }
            }
            Some(num / den)
        })
        .collect()
}

/// A random parse forest over a random sentence, with up to `max_actions`
/// actions and random immediate rewards.
pub fn random_tree(types: &TypeTable, rng: &mut ChaCha8Rng, max_actions: usize) -> ParseTree {
    let len = rng.random_range(1..=max_actions + 1);
    let sentence: Vec<u8> = (0..len).map(|_| b"ab{}1"[rng.random_range(0..5)]).collect();
    let mut s = SentenceState::new(types, &sentence).unwrap();
    let actions = rng.random_range(0..=max_actions);
    for _ in 0..actions {
        if s.len() < 2 {
            break;
        }
        let pos = rng.random_range(0..s.len() - 1);
        let kind = ActionKind::BINARY[rng.random_range(0..5)];
        let applied = s.apply(types, pos, kind).unwrap();
        s.tree_mut().set_reward(applied.node, rng.random_range(-5.0..5.0));
    }
    s.into_tree()
}

pub fn node_depth(tree: &ParseTree, id: NodeId) -> usize {
    tree.depth(id)
}

/// Largest relative error between an analytic and a numeric gradient, with
/// `floor` as the smallest denominator so values near zero compare
/// absolutely.
pub fn rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-6;
/// Central differences carry round-off near 1e-9 here; gradients that are
/// exactly zero (biases feeding a training-mode batch norm) would otherwise
/// read as relative errors near 1e-3.
pub const FD_FLOOR: f64 = 1e-4;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Central differences of `loss` with respect to every entry of `x`.
fn numeric_grad(x: &mut [f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = loss(x);
        x[i] = orig - FD_STEP;
        let down = loss(x);
        x[i] = orig;
        out[i] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

/// Gradient check of an affine layer: inputs, weights and bias.
pub fn check_linear(width: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lin = Linear::<f64>::zeros(width, width);
    lin.weight = random_matrix(&mut rng, width, width);
    lin.bias = Array1::from_shape_fn(width, |_| rng.random_range(-1.0..1.0));
    let x = random_matrix(&mut rng, 5, width);
    let r = random_matrix(&mut rng, 5, width);
    let dx = lin.backward(&x, &r);
    let loss = |l: &Linear<f64>, x: &Array2<f64>| (l.forward(x) * &r).sum();

    let mut worst = 0.0f64;
    let mut xv = x.clone();
    let num = numeric_grad(xv.as_slice_mut().unwrap(), |v| {
        loss(&lin, &Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap())
    });
    worst = worst.max(rel_error(dx.as_slice().unwrap(), &num, FD_FLOOR));
    let gw = lin.grad_weight.clone();
    let mut probe = lin.clone();
    let mut w = lin.weight.clone();
    let num = numeric_grad(w.as_slice_mut().unwrap(), |v| {
        probe.weight = Array2::from_shape_vec(lin.weight.raw_dim(), v.to_vec()).unwrap();
        loss(&probe, &x)
    });
    worst = worst.max(rel_error(gw.as_slice().unwrap(), &num, FD_FLOOR));
    let gb = lin.grad_bias.clone();
    let mut b = lin.bias.clone();
    let mut probe = lin.clone();
    let num = numeric_grad(b.as_slice_mut().unwrap(), |v| {
        probe.bias = Array1::from_vec(v.to_vec());
        loss(&probe, &x)
    });
    worst.max(rel_error(gb.as_slice().unwrap(), &num, FD_FLOOR))
}

/// Gradient check of batch normalization in the given mode: inputs, scale
/// and shift.
pub fn check_batchnorm(width: usize, mode: Mode, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bn = BatchNorm::<f64>::new(width);
    bn.gamma = Array1::from_shape_fn(width, |_| rng.random_range(0.5..1.5));
    bn.beta = Array1::from_shape_fn(width, |_| rng.random_range(-1.0..1.0));
    bn.running_mean = Array1::from_shape_fn(width, |_| rng.random_range(-0.5..0.5));
    bn.running_var = Array1::from_shape_fn(width, |_| rng.random_range(0.5..2.0));
    let x = random_matrix(&mut rng, 6, width);
    let r = random_matrix(&mut rng, 6, width);
    let loss = |bn: &BatchNorm<f64>, x: &Array2<f64>| {
        let mut b = bn.clone();
        (b.forward(x, mode).0 * &r).sum()
    };
    let mut work = bn.clone();
    let (_, cache) = work.forward(&x, mode);
    let dx = work.backward(&cache, &r);

    let mut worst = 0.0f64;
    let mut xv = x.clone();
    let num = numeric_grad(xv.as_slice_mut().unwrap(), |v| {
        loss(&bn, &Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap())
    });
    worst = worst.max(rel_error(dx.as_slice().unwrap(), &num, FD_FLOOR));
    let mut probe = bn.clone();
    let mut g = bn.gamma.clone();
    let num = numeric_grad(g.as_slice_mut().unwrap(), |v| {
        probe.gamma = Array1::from_vec(v.to_vec());
        loss(&probe, &x)
    });
    worst = worst.max(rel_error(work.grad_gamma.as_slice().unwrap(), &num, FD_FLOOR));
    let mut probe = bn.clone();
    let mut b = bn.beta.clone();
    let num = numeric_grad(b.as_slice_mut().unwrap(), |v| {
        probe.beta = Array1::from_vec(v.to_vec());
        loss(&probe, &x)
    });
    worst.max(rel_error(work.grad_beta.as_slice().unwrap(), &num, FD_FLOOR))
}

/// A network with every parameter and running statistic randomized, so no
/// path is switched off by the zero-initialized block outputs.
pub fn random_net(width: usize, blocks: usize, seed: u64) -> DenseResNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetConfig {
        input_width: width,
        hidden: width,
        blocks,
        actions: ActionKind::COUNT,
    };
    let mut net = DenseResNet::<f64>::zeros(config);
    for t in net.parameters_mut() {
        t.iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
    }
    for (i, t) in net.running_stats_mut().into_iter().enumerate() {
        // running means and variances alternate
        let range = if i % 2 == 0 { -0.3..0.3 } else { 0.5..1.5 };
        t.iter_mut().for_each(|v| *v = rng.random_range(range.clone()));
    }
    net
}

/// Gradient check of the composed network in `mode` with respect to its
/// input and every parameter, through both dueling outputs.
pub fn check_network(width: usize, mode: Mode, seed: u64) -> f64 {
    let mut net = random_net(width, 2, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let rows = 5;
    let x = random_matrix(&mut rng, rows, width);
    let rs = Array1::from_shape_fn(rows, |_| rng.random_range(-1.0..1.0));
    let rq = random_matrix(&mut rng, rows, ActionKind::COUNT);
    let loss = |net: &DenseResNet<f64>, x: &Array2<f64>| {
        let mut n = net.clone();
        let out = n.forward(x, mode).unwrap();
        (&out.state * &rs).sum() + (&out.q * &rq).sum()
    };

    let mut work = net.clone();
    work.zero_grad();
    work.forward(&x, mode).unwrap();
    let dx = work.backward(&rs, &rq).unwrap();
    let mut analytic = Vec::new();
    work.visit_params(&mut |_, g| analytic.push(g.to_vec()));

    let mut worst = 0.0f64;
    let mut xv = x.clone();
    let num = numeric_grad(xv.as_slice_mut().unwrap(), |v| {
        loss(&net, &Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap())
    });
    worst = worst.max(rel_error(dx.as_slice().unwrap(), &num, FD_FLOOR));

    for (t, grad) in analytic.iter().enumerate() {
        let num: Vec<f64> = (0..grad.len())
            .map(|i| {
                let orig = net.parameters()[t][i];
                net.parameters_mut()[t][i] = orig + FD_STEP;
                let up = loss(&net, &x);
                net.parameters_mut()[t][i] = orig - FD_STEP;
                let down = loss(&net, &x);
                net.parameters_mut()[t][i] = orig;
                (up - down) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(rel_error(grad, &num, FD_FLOOR));
    }
    worst
}

/// Grammar checker for `S -> '{' ('a' | 'b' | 'c' | S+) '}'`.
pub fn is_simple_json(s: &[u8]) -> bool {
    fn block(s: &[u8], i: usize) -> Option<usize> {
        if s.get(i) != Some(&b'{') {
            return None;
        }
        let mut j = i + 1;
        match s.get(j)? {
            b'a' | b'b' | b'c' => j += 1,
            b'{' => {
                while s.get(j) == Some(&b'{') {
                    j = block(s, j)?;
                }
            }
            _ => return None,
        }
        (s.get(j) == Some(&b'}')).then_some(j + 1)
    }
    block(s, 0) == Some(s.len())
}
