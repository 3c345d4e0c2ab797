//! Batch and layer normalization with fused backward passes.

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Split a shape into `(outer, channels, inner)` around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product())
}

pub struct BatchStats {
    pub mean: Tensor,
    /// Unbiased variance, as used for running estimates.
    pub var: Tensor,
}

impl Graph {
    /// Normalize with batch statistics over every axis except `axis`.
    pub fn batch_norm_train(&self, x: Var, gamma: Var, beta: Var, axis: usize, eps: f64) -> (Var, BatchStats) {
        let vx = self.value(x);
        let vg = self.value(gamma);
        let shape = vx.shape().to_vec();
        let (outer, c, inner) = split(&shape, axis);
        assert_eq!(vg.numel(), c, "batch norm channel mismatch");
        let m = (outer * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for o in 0..outer {
            for ch in 0..c {
                let s = (o * c + ch) * inner;
                mean[ch] += vx.data()[s..s + inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for o in 0..outer {
            for ch in 0..c {
                let s = (o * c + ch) * inner;
                var[ch] += vx.data()[s..s + inner].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; vx.numel()];
        let mut out = vec![0.0; vx.numel()];
        let vb = self.value(beta);
        for o in 0..outer {
            for ch in 0..c {
                let s = (o * c + ch) * inner;
                for i in s..s + inner {
                    xhat[i] = (vx.data()[i] - mean[ch]) * inv_std[ch];
                    out[i] = vg.data()[ch] * xhat[i] + vb.data()[ch];
                }
            }
        }
        let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let stats = BatchStats {
            mean: Tensor::new(vec![c], mean),
            var: Tensor::new(vec![c], var.iter().map(|v| v * unbiased).collect()),
        };
        let gshape = vg.shape().to_vec();
        let y = self.op(
            Tensor::new(shape.clone(), out),
            &[x, gamma, beta],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let s = (o * c + ch) * inner;
                        for i in s..s + inner {
                            sum_dy[ch] += gd[i];
                            sum_dy_xhat[ch] += gd[i] * xhat[i];
                        }
                    }
                }
                let dx = need[0].then(|| {
                    let mut dx = vec![0.0; gd.len()];
                    for o in 0..outer {
                        for ch in 0..c {
                            let s = (o * c + ch) * inner;
                            let k = vg.data()[ch] * inv_std[ch] / m;
                            for i in s..s + inner {
                                dx[i] = k * (m * gd[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]);
                            }
                        }
                    }
                    Tensor::new(shape.clone(), dx)
                });
                vec![
                    dx,
                    need[1].then(|| Tensor::new(gshape.clone(), sum_dy_xhat.clone())),
                    need[2].then(|| Tensor::new(gshape.clone(), sum_dy.clone())),
                ]
            }),
        );
        (y, stats)
    }

    /// Normalize with fixed statistics (inference).
    pub fn batch_norm_eval(&self, x: Var, gamma: Var, beta: Var, mean: &Tensor, var: &Tensor, axis: usize, eps: f64) -> Var {
        let vx = self.value(x);
        let shape = vx.shape().to_vec();
        let (outer, c, inner) = split(&shape, axis);
        let vg = self.value(gamma);
        let vb = self.value(beta);
        let inv_std: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; vx.numel()];
        let mut out = vec![0.0; vx.numel()];
        for o in 0..outer {
            for ch in 0..c {
                let s = (o * c + ch) * inner;
                for i in s..s + inner {
                    xhat[i] = (vx.data()[i] - mean.data()[ch]) * inv_std[ch];
                    out[i] = vg.data()[ch] * xhat[i] + vb.data()[ch];
                }
            }
        }
        let gshape = vg.shape().to_vec();
        self.op(
            Tensor::new(shape.clone(), out),
            &[x, gamma, beta],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut dx = vec![0.0; gd.len()];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let s = (o * c + ch) * inner;
                        for i in s..s + inner {
                            dx[i] = gd[i] * vg.data()[ch] * inv_std[ch];
                            dg[ch] += gd[i] * xhat[i];
                            db[ch] += gd[i];
                        }
                    }
                }
                vec![
                    need[0].then(|| Tensor::new(shape.clone(), dx)),
                    need[1].then(|| Tensor::new(gshape.clone(), dg)),
                    need[2].then(|| Tensor::new(gshape.clone(), db)),
                ]
            }),
        )
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let vg = self.value(gamma);
        let vb = self.value(beta);
        let n = *vx.shape().last().unwrap();
        assert_eq!(vg.numel(), n, "layer norm width mismatch");
        let rows = vx.numel() / n;
        let mut xhat = vec![0.0; vx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.numel()];
        for r in 0..rows {
            let row = &vx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            inv_std[r] = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                let xh = (row[j] - mean) * inv_std[r];
                xhat[r * n + j] = xh;
                out[r * n + j] = vg.data()[j] * xh + vb.data()[j];
            }
        }
        let shape = vx.shape().to_vec();
        self.op(
            Tensor::new(shape.clone(), out),
            &[x, gamma, beta],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut dx = vec![0.0; gd.len()];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                let nf = n as f64;
                for r in 0..rows {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..n {
                        let i = r * n + j;
                        let dxh = gd[i] * vg.data()[j];
                        s1 += dxh;
                        s2 += dxh * xhat[i];
                        dg[j] += gd[i] * xhat[i];
                        db[j] += gd[i];
                    }
                    for j in 0..n {
                        let i = r * n + j;
                        let dxh = gd[i] * vg.data()[j];
                        dx[i] = inv_std[r] / nf * (nf * dxh - s1 - xhat[i] * s2);
                    }
                }
                vec![
                    need[0].then(|| Tensor::new(shape.clone(), dx)),
                    need[1].then(|| Tensor::new(vec![n], dg)),
                    need[2].then(|| Tensor::new(vec![n], db)),
                ]
            }),
        )
    }
}
