//! Deterministic compositional embeddings.
//!
//! Every vocabulary token gets a frozen random unit vector. A compound type
//! `L·R` is embedded as `Φ^|R| · raw(L) + raw(R)`, where `Φ` is a fixed
//! special-orthogonal operator and `|R|` the right constituent's symbolic
//! length. Unrolled, `raw(t_1..t_n) = Σ_i Φ^(n-i) · base(t_i)`, so the result
//! depends only on the token sequence and never on the order of composition.
//!
//! `Φ` is stored as `Q · blockdiag(R(θφ_1), …) · Qᵀ` with `Q` orthogonal, which
//! makes real powers exact: `Φ^p` just scales every block angle by `p`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::atoms::TokenId;
use crate::error::{Error, Result};

/// RNG stream reserved for the rotation basis; token streams start at 1.
const ROTATION_STREAM: u64 = 0;

#[derive(Clone, Debug)]
pub struct RotationOperator {
    dim: usize,
    /// Block angles with the exponent scale already applied.
    angles: Vec<f64>,
    /// Row-major `dim × dim` orthogonal basis.
    basis: Vec<f64>,
    theta: f64,
}

impl RotationOperator {
    pub fn generate(seed: u64, dim: usize, theta: f64) -> Result<Self> {
        if dim < 1 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::invalid(format!("theta_emb must lie in (0, 1], got {theta}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ROTATION_STREAM);
        let gaussian = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
        let qr = gaussian.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let angles = (0..dim / 2)
            .map(|_| theta * rng.random_range(0.0..std::f64::consts::PI))
            .collect();
        let mut basis = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                basis[i * dim + j] = q[(i, j)];
            }
        }
        Ok(RotationOperator {
            dim,
            angles,
            basis,
            theta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn block_angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// `Qᵀ v`: coordinates in the rotation's block basis.
    pub fn to_blocks(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for (i, &vi) in v.iter().enumerate() {
            let row = &self.basis[i * n..(i + 1) * n];
            for (o, q) in out.iter_mut().zip(row) {
                *o += q * vi;
            }
        }
        out
    }

    /// `Q w`: back to standard coordinates.
    pub fn from_blocks(&self, w: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                self.basis[i * n..(i + 1) * n]
                    .iter()
                    .zip(w)
                    .map(|(q, x)| q * x)
                    .sum()
            })
            .collect()
    }

    /// Rotate block coordinates in place by `Φ^p`.
    pub fn rotate_blocks(&self, w: &mut [f64], p: f64) {
        for (k, &phi) in self.angles.iter().enumerate() {
            let (s, c) = (p * phi).sin_cos();
            let (x, y) = (w[2 * k], w[2 * k + 1]);
            w[2 * k] = c * x - s * y;
            w[2 * k + 1] = s * x + c * y;
        }
    }

    /// `Φ^p v` for real `p ≥ 0`.
    pub fn apply_power(&self, p: f64, v: &[f64]) -> Vec<f64> {
        if p == 0.0 {
            return v.to_vec();
        }
        let mut w = self.to_blocks(v);
        self.rotate_blocks(&mut w, p);
        self.from_blocks(&w)
    }

    /// Dense row-major `Φ^p`.
    pub fn power_matrix(&self, p: f64) -> Vec<f64> {
        let n = self.dim;
        let mut m = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.apply_power(p, &e);
            for i in 0..n {
                m[i * n + j] = col[i];
            }
        }
        m
    }
}

/// An unnormalized embedding together with its symbolic length.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeEmbedding {
    pub raw: Vec<f64>,
    pub symbolic_length: usize,
}

impl TypeEmbedding {
    pub fn normalized(&self) -> Vec<f64> {
        let s = 1.0 / (self.symbolic_length as f64).sqrt();
        self.raw.iter().map(|x| x * s).collect()
    }
}

/// Frozen unit vector for one vocabulary token.
pub fn base_embedding(token: TokenId, seed: u64, dim: usize) -> TypeEmbedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(token.0 as u64 + 1);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    TypeEmbedding {
        raw: v,
        symbolic_length: 1,
    }
}

/// Embedding of the concatenation `left · right`.
pub fn compose(left: &TypeEmbedding, right: &TypeEmbedding, rot: &RotationOperator) -> Result<TypeEmbedding> {
    if left.raw.len() != rot.dim() || right.raw.len() != rot.dim() {
        return Err(Error::invalid(format!(
            "embedding dimensions {} and {} do not match operator dimension {}",
            left.raw.len(),
            right.raw.len(),
            rot.dim()
        )));
    }
    let mut raw = rot.apply_power(right.symbolic_length as f64, &left.raw);
    raw.iter_mut().zip(&right.raw).for_each(|(a, b)| *a += b);
    Ok(TypeEmbedding {
        raw,
        symbolic_length: left.symbolic_length + right.symbolic_length,
    })
}

/// Embeds token sequences using a fixed operator and frozen base vectors.
#[derive(Clone, Debug)]
pub struct Embedder {
    seed: u64,
    rotation: RotationOperator,
    /// Base vectors in block coordinates, indexed by token id.
    base_blocks: Vec<Vec<f64>>,
}

impl Embedder {
    pub fn new(seed: u64, dim: usize, theta: f64) -> Result<Self> {
        let rotation = RotationOperator::generate(seed, dim, theta)?;
        let base_blocks = (0..TokenId::COUNT)
            .map(|t| rotation.to_blocks(&base_embedding(TokenId(t as u16), seed, dim).raw))
            .collect();
        Ok(Embedder {
            seed,
            rotation,
            base_blocks,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.rotation.dim()
    }

    pub fn rotation(&self) -> &RotationOperator {
        &self.rotation
    }

    pub fn base(&self, token: TokenId) -> TypeEmbedding {
        base_embedding(token, self.seed, self.dim())
    }

    /// Raw embedding of a token sequence, folded left to right in block
    /// coordinates. The arithmetic depends only on the tokens, so every
    /// caller gets bit-identical vectors for the same type.
    pub fn raw(&self, tokens: &[TokenId]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                self.rotation.rotate_blocks(&mut acc, 1.0);
            }
            acc.iter_mut()
                .zip(&self.base_blocks[t.0 as usize])
                .for_each(|(a, b)| *a += b);
        }
        self.rotation.from_blocks(&acc)
    }

    pub fn embed(&self, tokens: &[TokenId]) -> TypeEmbedding {
        TypeEmbedding {
            raw: self.raw(tokens),
            symbolic_length: tokens.len(),
        }
    }
}
