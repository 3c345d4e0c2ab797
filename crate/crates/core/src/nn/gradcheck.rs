//! Central finite-difference verification of tape gradients.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `name[index]: analytic vs numeric` of the worst entry.
    pub worst: String,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries checked per tensor; smaller tensors are checked exhaustively.
    pub per_tensor: usize,
    /// Denominator floor so near-zero gradients are compared absolutely.
    /// The effective floor is raised to the rounding noise of the central
    /// difference, about `1000 * eps * |loss| / step`.
    pub floor: f64,
    pub training: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, per_tensor: 6, floor: 1e-6, training: true, seed: 0 }
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare analytic gradients of `loss` against central differences for
/// every parameter in `ids`. Each evaluation builds a fresh graph with the
/// same seed, so dropout masks are identical across evaluations.
pub fn check_gradients(
    ps: &mut ParamStore,
    ids: &[ParamId],
    opts: &GradCheckOptions,
    loss: impl Fn(&Graph, &ParamStore) -> Var,
) -> GradCheckReport {
    let eval = |ps: &ParamStore| {
        let g = Graph::new(opts.training, opts.seed);
        let l = loss(&g, ps);
        g.value(l).item()
    };
    let g = Graph::new(opts.training, opts.seed);
    let l = loss(&g, ps);
    let floor = opts.floor.max(1e3 * f64::EPSILON * g.value(l).item().abs() / opts.step);
    let grads = g.backward(l);
    let analytic: HashMap<ParamId, Vec<f64>> =
        grads.params().into_iter().map(|(id, t)| (id, t.data().to_vec())).collect();
    drop(grads);
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: String::new() };
    for &id in ids {
        let n = ps.get(id).numel();
        let picks: Vec<usize> =
            if n <= opts.per_tensor { (0..n).collect() } else { sample(&mut rng, n, opts.per_tensor).into_vec() };
        for i in picks {
            let orig = ps.get(id).data()[i];
            ps.get_mut(id).data_mut()[i] = orig + opts.step;
            let up = eval(ps);
            ps.get_mut(id).data_mut()[i] = orig - opts.step;
            let down = eval(ps);
            ps.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.get(&id).map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = format!("{}[{i}]: analytic {a:.6e} vs numeric {numeric:.6e}", ps.name(id));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init, Tensor};
    use rustfft::num_complex::Complex64;
    use std::sync::Arc;

    const TOL: f64 = 1e-6;

    fn store(shapes: &[(&str, Vec<usize>)], seed: u64) -> (ParamStore, Vec<ParamId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let ids = shapes.iter().map(|(n, s)| ps.add(n, init::normal(&mut rng, s, 1.0))).collect();
        (ps, ids)
    }

    fn opts() -> GradCheckOptions {
        GradCheckOptions { per_tensor: 64, ..Default::default() }
    }

    /// Weighted sum so every output element gets a distinct upstream gradient.
    fn probe(g: &Graph, y: Var) -> Var {
        let n = g.value(y).numel();
        let w = Tensor::from_fn(g.shape(y), |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4 + 1.0 / (n as f64 + 1.0));
        g.sum_all(g.mul(y, g.constant(w)))
    }

    #[test]
    fn elementwise_and_broadcast() {
        let (mut ps, ids) = store(&[("a", vec![3, 4]), ("b", vec![4]), ("c", vec![3, 1])], 1);
        let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| {
            let (a, b, c) = (g.param(ps, ids[0]), g.param(ps, ids[1]), g.param(ps, ids[2]));
            let y = g.mul(g.add(a, b), g.sigmoid(c));
            let y = g.sub(g.tanh(y), g.exp(g.scale(c, 0.3)));
            probe(g, g.add_scalar(y, 0.5))
        });
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn shapes_reductions_and_matmul() {
        let (mut ps, ids) = store(&[("a", vec![2, 3, 4]), ("w", vec![4, 5]), ("b", vec![2, 3, 4])], 2);
        let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| {
            let (a, w, b) = (g.param(ps, ids[0]), g.param(ps, ids[1]), g.param(ps, ids[2]));
            let c = g.concat(&[a, b], 1);
            let c = g.narrow(c, 1, 1, 4);
            let m = g.matmul(c, w);
            let p = g.permute(m, &[2, 0, 1]);
            let r = g.reshape(p, &[5, 8]);
            let s = g.mean_axis(r, 1);
            g.add(probe(g, s), g.mean_all(g.relu(a)))
        });
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn attention_pieces() {
        let (mut ps, ids) = store(&[("q", vec![2, 3, 4]), ("k", vec![2, 5, 4]), ("v", vec![2, 5, 3])], 3);
        let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| {
            let (q, k, v) = (g.param(ps, ids[0]), g.param(ps, ids[1]), g.param(ps, ids[2]));
            let a = g.softmax_last(g.bmm(q, k, true));
            probe(g, g.bmm(a, v, false))
        });
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn conv_pool_and_upsample() {
        let (mut ps, ids) = store(&[("x", vec![2, 2, 6, 7]), ("w", vec![3, 2, 3, 3]), ("b", vec![3])], 4);
        let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| {
            let (x, w, b) = (g.param(ps, ids[0]), g.param(ps, ids[1]), g.param(ps, ids[2]));
            let y = g.conv2d(x, w, Some(b), (1, 1));
            let a = g.avg_pool2d(y, 2, 2);
            let m = g.max_pool2d(y, 1, 2);
            let u = g.upsample_to(a, 2, 2, 7, 5);
            g.add(probe(g, u), probe(g, m))
        });
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn normalization() {
        let (mut ps, ids) =
            store(&[("x", vec![3, 4, 5]), ("g", vec![4]), ("b", vec![4]), ("lg", vec![5]), ("lb", vec![5])], 5);
        let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| {
            let p: Vec<Var> = ids.iter().map(|&i| g.param(ps, i)).collect();
            let (y, _) = g.batch_norm_train(p[0], p[1], p[2], 1, 1e-5);
            let z = g.layer_norm(p[0], p[3], p[4], 1e-5);
            let mean = Tensor::new(vec![4], vec![0.1, -0.2, 0.3, 0.0]);
            let var = Tensor::new(vec![4], vec![1.5, 0.5, 2.0, 1.0]);
            let e = g.batch_norm_eval(p[0], p[1], p[2], &mean, &var, 1, 1e-5);
            g.add(g.add(probe(g, y), probe(g, z)), probe(g, e))
        });
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn gru_both_directions() {
        let (mut ps, ids) = store(&[("gx", vec![2, 5, 9]), ("w", vec![3, 9]), ("b", vec![9])], 6);
        for reverse in [false, true] {
            let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| {
                let p: Vec<Var> = ids.iter().map(|&i| g.param(ps, i)).collect();
                probe(g, g.gru_scan(p[0], p[1], p[2], reverse))
            });
            assert!(r.max_rel_err < TOL, "reverse={reverse}: {r:?}");
        }
    }

    #[test]
    fn losses() {
        let (mut ps, ids) = store(&[("z", vec![4, 6])], 7);
        let t = Tensor::from_fn(vec![4, 6], |i| (i % 3 == 0) as u8 as f64);
        let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| {
            let z = g.param(ps, ids[0]);
            g.add(g.bce_with_logits(z, &t), g.mse(g.sigmoid(z), &t))
        });
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn dropout_with_fixed_seed() {
        let (mut ps, ids) = store(&[("x", vec![30])], 8);
        let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| probe(g, g.dropout(g.param(ps, ids[0]), 0.3)));
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn istft_from_magnitude() {
        use crate::dsp::{Stft, StftConfig};
        let stft = Stft::new(StftConfig { n_fft: 16, hop: 4 });
        let (mut ps, ids) = store(&[("m", vec![2, 6, 9])], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let phase: Vec<Vec<Complex64>> = (0..2)
            .map(|_| (0..54).map(|_| Complex64::from_polar(1.0, rand::Rng::random_range(&mut rng, -3.0..3.0))).collect())
            .collect();
        let phase = Arc::new(phase);
        let r = check_gradients(&mut ps, &ids, &opts(), |g, ps| {
            probe(g, g.istft_magnitude(g.param(ps, ids[0]), phase.clone(), &stft, 24))
        });
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn istft_matches_plain_inverse() {
        use crate::dsp::{Stft, StftConfig};
        let stft = Stft::new(StftConfig::SEPARATION);
        let x: Vec<f64> = (0..3200).map(|i| ((i * 37 % 101) as f64 / 50.0 - 1.0) * 0.5).collect();
        let spec = stft.forward(&x).unwrap();
        let g = Graph::inference();
        let mag = g.constant(Tensor::new(vec![1, spec.frames, spec.bins()], spec.magnitude()));
        let y = g.istft_magnitude(mag, Arc::new(vec![spec.phase()]), &stft, x.len());
        let err = g.value(y).data().iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "{err}");
    }
}
