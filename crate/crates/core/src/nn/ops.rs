//! Elementwise, shape, reduction, matrix and loss operations.

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{broadcast_zip, gemm, strides, sum_to_shape, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = broadcast_zip(&va, &vb, |x, y| x + y);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        self.op(
            out,
            &[a, b],
            Box::new(move |g, need| {
                vec![need[0].then(|| sum_to_shape(g, &sa)), need[1].then(|| sum_to_shape(g, &sb))]
            }),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = broadcast_zip(&va, &vb, |x, y| x - y);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        self.op(
            out,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| sum_to_shape(g, &sa)),
                    need[1].then(|| sum_to_shape(&g.scale(-1.0), &sb)),
                ]
            }),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = broadcast_zip(&va, &vb, |x, y| x * y);
        self.op(
            out,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| sum_to_shape(&broadcast_zip(g, &vb, |x, y| x * y), va.shape())),
                    need[1].then(|| sum_to_shape(&broadcast_zip(g, &va, |x, y| x * y), vb.shape())),
                ]
            }),
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.op(out, &[a], Box::new(move |g, _| vec![Some(g.scale(s))]))
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.op(out, &[a], Box::new(|g, _| vec![Some(g.clone())]))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let y = out.clone();
        self.op(out, &[a], Box::new(move |g, _| vec![Some(g.zip_map(&y, |g, y| g * y * (1.0 - y)))]))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let y = out.clone();
        self.op(out, &[a], Box::new(move |g, _| vec![Some(g.zip_map(&y, |g, y| g * (1.0 - y * y)))]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let x = self.value(a);
        let out = x.map(|v| v.max(0.0));
        self.op(
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.zip_map(&x, |g, x| if x > 0.0 { g } else { 0.0 }))]),
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let y = out.clone();
        self.op(out, &[a], Box::new(move |g, _| vec![Some(g.zip_map(&y, |g, y| g * y))]))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let x = self.value(a);
        let old = x.shape().to_vec();
        let out = (*x).clone().reshape(shape.to_vec());
        self.op(out, &[a], Box::new(move |g, _| vec![Some(g.clone().reshape(old.clone()))]))
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Var {
        let out = self.value(a).permute(axes);
        let mut inv = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inv[ax] = i;
        }
        self.op(out, &[a], Box::new(move |g, _| vec![Some(g.permute(&inv))]))
    }

    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let full = x.shape().to_vec();
        let out = x.narrow(axis, start, len);
        self.op(
            out,
            &[a],
            Box::new(move |g, _| {
                let outer: usize = full[..axis].iter().product();
                let inner: usize = full[axis + 1..].iter().product();
                let mut gx = Tensor::zeros(full.clone());
                let dim = full[axis];
                let d = gx.data_mut();
                for o in 0..outer {
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    let base = o * dim * inner + start * inner;
                    d[base..base + len * inner].copy_from_slice(src);
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat(&refs, axis);
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.op(
            out,
            parts,
            Box::new(move |g, need| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(need)
                    .map(|(&len, &n)| {
                        let r = n.then(|| g.narrow(axis, start, len));
                        start += len;
                        r
                    })
                    .collect()
            }),
        )
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        self.op(Tensor::scalar(x.sum()), &[a], Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item()))]))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&self, a: Var, axis: usize) -> Var {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..dim {
                let row = &x.data()[(o * dim + k) * inner..(o * dim + k + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let inv = 1.0 / dim as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut oshape = shape.clone();
        oshape.remove(axis);
        self.op(
            Tensor::new(oshape, out),
            &[a],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for k in 0..dim {
                        let dst = &mut gx[(o * dim + k) * inner..(o * dim + k + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), gx))]
            }),
        )
    }

    /// `[..., K] x [K, N] -> [..., N]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.ndim(), 2, "matmul rhs must be 2-D");
        let k = *va.shape().last().expect("matmul lhs must have rank >= 1");
        assert_eq!(vb.shape()[0], k, "matmul inner dims {:?} x {:?}", va.shape(), vb.shape());
        let n = vb.shape()[1];
        let m = va.numel() / k.max(1);
        let mut oshape = va.shape().to_vec();
        *oshape.last_mut().unwrap() = n;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, va.data(), k as isize, 1, vb.data(), n as isize, 1, 0.0, &mut out, n as isize, 1);
        self.op(
            Tensor::new(oshape, out),
            &[a, b],
            Box::new(move |g, need| {
                let ga = need[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    // dA = dC B^T
                    gemm(m, n, k, 1.0, g.data(), n as isize, 1, vb.data(), 1, n as isize, 0.0, &mut d, k as isize, 1);
                    Tensor::new(va.shape().to_vec(), d)
                });
                let gb = need[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    // dB = A^T dC
                    gemm(k, m, n, 1.0, va.data(), 1, k as isize, g.data(), n as isize, 1, 0.0, &mut d, n as isize, 1);
                    Tensor::new(vec![k, n], d)
                });
                vec![ga, gb]
            }),
        )
    }

    /// Batched `[B,M,K] x [B,K,N]`, or `[B,M,K] x [B,N,K]^T` when `transpose_b`.
    pub fn bmm(&self, a: Var, b: Var, transpose_b: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (bsz, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        assert_eq!(vb.shape()[0], bsz);
        let n = if transpose_b { vb.shape()[1] } else { vb.shape()[2] };
        let kb = if transpose_b { vb.shape()[2] } else { vb.shape()[1] };
        assert_eq!(k, kb, "bmm inner dims {:?} x {:?}", va.shape(), vb.shape());
        // element (r, c) of op(B) lives at r*rsb + c*csb
        let (rsb, csb) = if transpose_b { (1isize, k as isize) } else { (n as isize, 1isize) };
        let mut out = vec![0.0; bsz * m * n];
        for i in 0..bsz {
            gemm(
                m,
                k,
                n,
                1.0,
                &va.data()[i * m * k..(i + 1) * m * k],
                k as isize,
                1,
                &vb.data()[i * k * n..(i + 1) * k * n],
                rsb,
                csb,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
            );
        }
        self.op(
            Tensor::new(vec![bsz, m, n], out),
            &[a, b],
            Box::new(move |g, need| {
                let ga = need[0].then(|| {
                    let mut d = vec![0.0; bsz * m * k];
                    for i in 0..bsz {
                        // dA = dC op(B)^T ; op(B)^T(c, r) = op(B)(r, c)
                        gemm(
                            m,
                            n,
                            k,
                            1.0,
                            &g.data()[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            &vb.data()[i * k * n..(i + 1) * k * n],
                            csb,
                            rsb,
                            0.0,
                            &mut d[i * m * k..(i + 1) * m * k],
                            k as isize,
                            1,
                        );
                    }
                    Tensor::new(va.shape().to_vec(), d)
                });
                let gb = need[1].then(|| {
                    let mut d = vec![0.0; bsz * k * n];
                    for i in 0..bsz {
                        // d op(B) = A^T dC, written back through op's strides
                        gemm(
                            k,
                            m,
                            n,
                            1.0,
                            &va.data()[i * m * k..(i + 1) * m * k],
                            1,
                            k as isize,
                            &g.data()[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            0.0,
                            &mut d[i * k * n..(i + 1) * k * n],
                            rsb,
                            csb,
                        );
                    }
                    Tensor::new(vb.shape().to_vec(), d)
                });
                vec![ga, gb]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self, a: Var) -> Var {
        let x = self.value(a);
        let n = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let y = Tensor::new(x.shape().to_vec(), out);
        let yc = y.clone();
        self.op(
            y,
            &[a],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; yc.numel()];
                for ((gr, yr), dr) in g.data().chunks(n).zip(yc.data().chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![Some(Tensor::new(yc.shape().to_vec(), gx))]
            }),
        )
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&self, a: Var, p: f64) -> Var {
        if !self.is_training() || p <= 0.0 {
            return a;
        }
        let x = self.value(a);
        let keep = 1.0 - p;
        let mask = self.with_rng(|rng| {
            Tensor::from_fn(x.shape().to_vec(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        });
        let out = x.zip_map(&mask, |a, m| a * m);
        self.op(out, &[a], Box::new(move |g, _| vec![Some(g.zip_map(&mask, |g, m| g * m))]))
    }

    /// Hard threshold in the forward pass, identity gradient in the backward pass.
    pub fn binarize_ste(&self, a: Var, threshold: f64) -> Var {
        let out = self.value(a).map(|x| if x >= threshold { 1.0 } else { 0.0 });
        self.op(out, &[a], Box::new(|g, _| vec![Some(g.clone())]))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and constant targets.
    pub fn bce_with_logits(&self, logits: Var, targets: &Tensor) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), targets.shape(), "bce shape mismatch");
        let n = z.numel() as f64;
        let loss: f64 =
            z.data().iter().zip(targets.data()).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / n;
        let t = targets.clone();
        self.op(
            Tensor::scalar(loss),
            &[logits],
            Box::new(move |g, _| {
                let s = g.item() / n;
                vec![Some(z.zip_map(&t, |z, y| (sigmoid(z) - y) * s))]
            }),
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&self, a: Var, target: &Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), target.shape(), "mse shape mismatch");
        let n = x.numel() as f64;
        let loss = x.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let t = target.clone();
        self.op(
            Tensor::scalar(loss),
            &[a],
            Box::new(move |g, _| {
                let s = 2.0 * g.item() / n;
                vec![Some(x.zip_map(&t, |a, b| (a - b) * s))]
            }),
        )
    }
}

/// Row-major index helper for tests and small kernels.
pub fn flat_index(shape: &[usize], idx: &[usize]) -> usize {
    strides(shape).iter().zip(idx).map(|(s, i)| s * i).sum()
}
