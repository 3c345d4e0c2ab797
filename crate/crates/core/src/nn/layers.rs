//! Parameterized building blocks. Each layer owns only parameter ids; values
//! live in a `ParamStore` so several models can share one tape.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{init, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{ensure, Result};

pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = ps.add(&format!("{name}.weight"), init::uniform(rng, &[in_dim, out_dim], bound));
        let b = bias.then(|| ps.add(&format!("{name}.bias"), init::uniform(rng, &[out_dim], bound)));
        Self { w, b, in_dim, out_dim }
    }

    /// `[..., in] -> [..., out]`.
    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var) -> Var {
        let y = g.matmul(x, g.param(ps, self.w));
        match self.b {
            Some(b) => g.add(y, g.param(ps, b)),
            None => y,
        }
    }
}

pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub padding: (usize, usize),
}

impl Conv2d {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, ci: usize, co: usize, k: usize, bias: bool) -> Self {
        let fan_in = ci * k * k;
        let w = ps.add(&format!("{name}.weight"), init::kaiming(rng, &[co, ci, k, k], fan_in));
        let b = bias.then(|| ps.add(&format!("{name}.bias"), Tensor::zeros(vec![co])));
        Self { w, b, padding: (k / 2, k / 2) }
    }

    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var) -> Var {
        let b = self.b.map(|b| g.param(ps, b));
        g.conv2d(x, g.param(ps, self.w), b, self.padding)
    }
}

/// Batch normalization over channel `axis` with running statistics.
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub axis: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, axis: usize) -> Self {
        Self {
            gamma: ps.add(&format!("{name}.gamma"), Tensor::full(vec![channels], 1.0)),
            beta: ps.add(&format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: ps.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(vec![channels])),
            running_var: ps.add_buffer(&format!("{name}.running_var"), Tensor::full(vec![channels], 1.0)),
            axis,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var) -> Var {
        let (gamma, beta) = (g.param(ps, self.gamma), g.param(ps, self.beta));
        if g.is_training() {
            let (y, stats) = g.batch_norm_train(x, gamma, beta, self.axis, self.eps);
            let m = self.momentum;
            let blend = |old: &Tensor, new: &Tensor| old.zip_map(new, |o, n| (1.0 - m) * o + m * n);
            g.record_buffer_update(self.running_mean, blend(ps.get(self.running_mean), &stats.mean));
            g.record_buffer_update(self.running_var, blend(ps.get(self.running_var), &stats.var));
            y
        } else {
            g.batch_norm_eval(x, gamma, beta, ps.get(self.running_mean), ps.get(self.running_var), self.axis, self.eps)
        }
    }
}

pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: ps.add(&format!("{name}.gamma"), Tensor::full(vec![width], 1.0)),
            beta: ps.add(&format!("{name}.beta"), Tensor::zeros(vec![width])),
        }
    }

    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var) -> Var {
        g.layer_norm(x, g.param(ps, self.gamma), g.param(ps, self.beta), 1e-5)
    }
}

/// `γ ⊙ x + β` with per-example, per-channel `γ, β` of shape `[B, C]`,
/// broadcast over every axis after the channel axis 1.
pub fn film(g: &Graph, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let xs = g.shape(x);
    let (gs, bs) = (g.shape(gamma), g.shape(beta));
    ensure!(xs.len() >= 2, "FiLM input needs a channel axis, got shape {xs:?}");
    ensure!(gs == bs && gs.len() == 2, "FiLM gamma/beta must both be [B, C], got {gs:?} and {bs:?}");
    ensure!(gs[1] == xs[1], "FiLM has {} channels but the features have {}", gs[1], xs[1]);
    ensure!(gs[0] == xs[0] || gs[0] == 1, "FiLM batch {} does not match features batch {}", gs[0], xs[0]);
    let mut bshape = gs.clone();
    bshape.resize(xs.len(), 1);
    let (gm, bt) = (g.reshape(gamma, &bshape), g.reshape(beta, &bshape));
    Ok(g.add(g.mul(x, gm), bt))
}

/// Maps a condition embedding to `(γ, β)` for one feature block. The bias
/// starts at `γ = 1, β = 0` so an untrained layer is close to identity.
pub struct Film {
    pub proj: Linear,
    pub channels: usize,
}

impl Film {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, embed_dim: usize, channels: usize) -> Self {
        let w = ps.add(&format!("{name}.weight"), init::normal(rng, &[embed_dim, 2 * channels], 0.1));
        let mut bias = vec![0.0; 2 * channels];
        bias[..channels].iter_mut().for_each(|v| *v = 1.0);
        let b = ps.add(&format!("{name}.bias"), Tensor::new(vec![2 * channels], bias));
        Self { proj: Linear { w, b: Some(b), in_dim: embed_dim, out_dim: 2 * channels }, channels }
    }

    pub fn gamma_beta(&self, g: &Graph, ps: &ParamStore, emb: Var) -> (Var, Var) {
        let gb = self.proj.forward(g, ps, emb);
        (g.narrow(gb, 1, 0, self.channels), g.narrow(gb, 1, self.channels, self.channels))
    }

    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var, emb: Var) -> Var {
        let (gamma, beta) = self.gamma_beta(g, ps, emb);
        film(g, x, gamma, beta).expect("FiLM layer built for this channel count")
    }
}

struct GruDirection {
    input: Linear,
    w_hh: ParamId,
    b_hh: ParamId,
}

/// Bidirectional GRU: `[B, T, I] -> [B, T, 2H]` (forward half first).
pub struct BiGru {
    dirs: [GruDirection; 2],
    pub hidden: usize,
}

impl BiGru {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut dir = |d: &str| GruDirection {
            input: Linear::new(ps, rng, &format!("{name}.{d}.ih"), input, 3 * hidden, true),
            w_hh: ps.add(&format!("{name}.{d}.hh.weight"), init::uniform(rng, &[hidden, 3 * hidden], bound)),
            b_hh: ps.add(&format!("{name}.{d}.hh.bias"), init::uniform(rng, &[3 * hidden], bound)),
        };
        let fwd = dir("fwd");
        let bwd = dir("bwd");
        Self { dirs: [fwd, bwd], hidden }
    }

    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var) -> Var {
        let outs: Vec<Var> = self
            .dirs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let gx = d.input.forward(g, ps, x);
                g.gru_scan(gx, g.param(ps, d.w_hh), g.param(ps, d.b_hh), i == 1)
            })
            .collect();
        g.concat(&outs, 2)
    }
}

pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, d_model: usize, heads: usize) -> Self {
        assert!(d_model % heads == 0, "d_model {d_model} not divisible by {heads} heads");
        Self {
            q: Linear::new(ps, rng, &format!("{name}.q"), d_model, d_model, true),
            k: Linear::new(ps, rng, &format!("{name}.k"), d_model, d_model, true),
            v: Linear::new(ps, rng, &format!("{name}.v"), d_model, d_model, true),
            o: Linear::new(ps, rng, &format!("{name}.o"), d_model, d_model, true),
            heads,
        }
    }

    /// Self-attention over `[B, L, D]`.
    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var) -> Var {
        let s = g.shape(x);
        let (b, l, d) = (s[0], s[1], s[2]);
        let (h, dh) = (self.heads, d / self.heads);
        let split = |y: Var| {
            let y = g.reshape(y, &[b, l, h, dh]);
            let y = g.permute(y, &[0, 2, 1, 3]);
            g.reshape(y, &[b * h, l, dh])
        };
        let q = split(self.q.forward(g, ps, x));
        let k = split(self.k.forward(g, ps, x));
        let v = split(self.v.forward(g, ps, x));
        let scores = g.scale(g.bmm(q, k, true), 1.0 / (dh as f64).sqrt());
        let attn = g.softmax_last(scores);
        let ctx = g.bmm(attn, v, false);
        let ctx = g.reshape(ctx, &[b, h, l, dh]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[b, l, d]);
        self.o.forward(g, ps, ctx)
    }
}

/// Pre-norm transformer encoder layer.
pub struct TransformerLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    dropout: f64,
}

impl TransformerLayer {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, d_model: usize, heads: usize, ff_dim: usize, dropout: f64) -> Self {
        Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d_model),
            attn: MultiHeadAttention::new(ps, rng, &format!("{name}.attn"), d_model, heads),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d_model),
            ff1: Linear::new(ps, rng, &format!("{name}.ff1"), d_model, ff_dim, true),
            ff2: Linear::new(ps, rng, &format!("{name}.ff2"), ff_dim, d_model, true),
            dropout,
        }
    }

    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var) -> Var {
        let a = self.attn.forward(g, ps, self.ln1.forward(g, ps, x));
        let x = g.add(x, g.dropout(a, self.dropout));
        let f = self.ff2.forward(g, ps, g.relu(self.ff1.forward(g, ps, self.ln2.forward(g, ps, x))));
        g.add(x, g.dropout(f, self.dropout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn film_identity_and_zero_gain() {
        let g = Graph::inference();
        let x = g.constant(Tensor::from_fn(vec![2, 3, 4, 5], |i| i as f64 * 0.1 - 3.0));
        let ones = g.constant(Tensor::full(vec![2, 3], 1.0));
        let zeros = g.constant(Tensor::zeros(vec![2, 3]));
        let y = film(&g, x, ones, zeros).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        let beta = g.constant(Tensor::from_fn(vec![2, 3], |i| i as f64));
        let y = film(&g, x, zeros, beta).unwrap();
        let v = g.value(y);
        for (i, val) in v.data().iter().enumerate() {
            assert_eq!(*val, (i / 20) as f64);
        }
    }

    #[test]
    fn film_is_affine_in_features() {
        let g = Graph::inference();
        let gm = g.constant(Tensor::new(vec![1, 2], vec![0.5, -2.0]));
        let bt = g.constant(Tensor::new(vec![1, 2], vec![1.0, 3.0]));
        let a = Tensor::from_fn(vec![1, 2, 3], |i| i as f64);
        let b = Tensor::from_fn(vec![1, 2, 3], |i| (i * i) as f64 * 0.3);
        let f = |t: &Tensor| g.value(film(&g, g.constant(t.clone()), gm, bt).unwrap()).as_ref().clone();
        let mix = a.zip_map(&b, |x, y| 2.0 * x + 3.0 * y);
        // f(2a + 3b) = 2 f(a) + 3 f(b) - 4 β
        let lhs = f(&mix);
        let (fa, fb) = (f(&a), f(&b));
        for i in 0..6 {
            let beta = if i < 3 { 1.0 } else { 3.0 };
            assert!((lhs.data()[i] - (2.0 * fa.data()[i] + 3.0 * fb.data()[i] - 4.0 * beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn film_rejects_channel_mismatch() {
        let g = Graph::inference();
        let x = g.constant(Tensor::zeros(vec![1, 3, 2]));
        let p = g.constant(Tensor::zeros(vec![1, 4]));
        assert!(film(&g, x, p, p).is_err());
    }

    #[test]
    fn bigru_shapes() {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = BiGru::new(&mut ps, &mut rng, "gru", 5, 7);
        let g = Graph::inference();
        let y = gru.forward(&g, &ps, g.constant(Tensor::zeros(vec![2, 9, 5])));
        assert_eq!(g.shape(y), vec![2, 9, 14]);
    }

    #[test]
    fn batch_norm_records_running_stats_only_in_training() {
        let mut ps = ParamStore::new();
        let bn = BatchNorm::new(&mut ps, "bn", 2, 1);
        let x = Tensor::from_fn(vec![3, 2, 4], |i| i as f64);
        let g = Graph::training(0);
        bn.forward(&g, &ps, g.constant(x.clone()));
        assert_eq!(g.take_buffer_updates().len(), 2);
        let g = Graph::inference();
        bn.forward(&g, &ps, g.constant(x));
        assert!(g.take_buffer_updates().is_empty());
    }
}
