//! Transformer building blocks on the tape (post-LN, as in the original
//! encoder-decoder architecture).

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::{xavier, ParamSet};
use crate::tape::{cast, Scalar, Tape, Var};

const LN_EPS: f64 = 1e-5;

/// A tape bound to a parameter set. Parameter leaves are created once per
/// graph and reused.
pub struct Graph<'p, T> {
    pub tape: Tape<T>,
    params: &'p ParamSet<T>,
    cache: HashMap<usize, Var>,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Inference graph: dropout disabled.
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            cache: HashMap::new(),
            dropout: 0.0,
            rng: None,
        }
    }

    /// Training graph with dropout rate `p` drawn from `rng`.
    pub fn training(params: &'p ParamSet<T>, p: f64, rng: ChaCha8Rng) -> Self {
        Graph {
            dropout: p,
            rng: Some(rng),
            ..Self::new(params)
        }
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(&v) = self.cache.get(&id) {
            return v;
        }
        let v = self.tape.param(id, self.params.get(id).clone());
        self.cache.insert(id, v);
        v
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        let p = self.dropout;
        let Some(rng) = self.rng.as_mut().filter(|_| p > 0.0) else {
            return x;
        };
        let keep: T = cast(1.0 / (1.0 - p));
        let (r, c) = self.tape.shape(x);
        let mask = Array2::from_shape_simple_fn((r, c), || if rng.gen::<f64>() < p { T::zero() } else { keep });
        self.tape.mul_const(x, mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, din: usize, dout: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let w = ps.add(format!("{name}.w"), xavier(rng, din, dout));
        let b = bias.then(|| ps.add(format!("{name}.b"), Array2::zeros((1, dout))));
        Linear { w, b }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: ps.add(format!("{name}.gamma"), Array2::ones((1, d))),
            beta: ps.add(format!("{name}.beta"), Array2::zeros((1, d))),
        }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.tape.layer_norm(x, gamma, beta, LN_EPS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        MultiHeadAttention {
            q: Linear::new(ps, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, true, rng),
            heads,
        }
    }

    /// Queries from `x`, keys and values from `memory`.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, memory: Var, causal: bool) -> Var {
        let d = g.tape.shape(x).1;
        let dh = d / self.heads;
        let q = self.q.apply(g, x);
        let k = self.k.apply(g, memory);
        let v = self.v.apply(g, memory);
        let scale: T = cast(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.tape.slice_cols(q, h * dh, (h + 1) * dh);
            let kh = g.tape.slice_cols(k, h * dh, (h + 1) * dh);
            let vh = g.tape.slice_cols(v, h * dh, (h + 1) * dh);
            let s = g.tape.matmul_nt(qh, kh);
            let s = g.tape.scale(s, scale);
            let a = g.tape.softmax_rows(s, causal);
            outs.push(g.tape.matmul(a, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.tape.concat_cols(&outs) };
        self.o.apply(g, cat)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, d: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            up: Linear::new(ps, &format!("{name}.up"), d, ff, true, rng),
            down: Linear::new(ps, &format!("{name}.down"), ff, d, true, rng),
        }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.up.apply(g, x);
        let h = g.tape.relu(h);
        self.down.apply(g, h)
    }
}

fn residual<T: Scalar>(g: &mut Graph<'_, T>, x: Var, sub: Var, ln: &LayerNorm) -> Var {
    let sub = g.dropout(sub);
    let y = g.tape.add(x, sub);
    ln.apply(g, y)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, d: usize, heads: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), d, heads, rng),
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d),
            ff: FeedForward::new(ps, &format!("{name}.ff"), d, ff, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d),
        }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let a = self.attn.apply(g, x, x, false);
        let x = residual(g, x, a, &self.ln1);
        let f = self.ff.apply(g, x);
        residual(g, x, f, &self.ln2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
}

impl DecoderLayer {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, d: usize, heads: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self"), d, heads, rng),
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d),
            cross: MultiHeadAttention::new(ps, &format!("{name}.cross"), d, heads, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d),
            ff: FeedForward::new(ps, &format!("{name}.ff"), d, ff, rng),
            ln3: LayerNorm::new(ps, &format!("{name}.ln3"), d),
        }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, memory: Var) -> Var {
        let a = self.self_attn.apply(g, x, x, true);
        let x = residual(g, x, a, &self.ln1);
        let c = self.cross.apply(g, x, memory, false);
        let x = residual(g, x, c, &self.ln2);
        let f = self.ff.apply(g, x);
        residual(g, x, f, &self.ln3)
    }
}

/// Fixed sinusoidal encodings, `len x d`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Array2<T> {
    Array2::from_shape_fn((len, d), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * rate;
        cast(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}
