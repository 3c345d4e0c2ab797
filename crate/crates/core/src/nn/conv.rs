//! 2-D convolution (im2col + GEMM), pooling and nearest-neighbour resizing.
//! All tensors are NCHW.

use super::graph::{Graph, Var};
use super::tensor::{gemm, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.ci * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let n = g.cols();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &mut cols[r * n..(r + 1) * n];
                // valid output x-range for this kernel column
                let x_lo = g.pw.saturating_sub(kj);
                let x_hi = (g.w + g.pw).saturating_sub(kj).min(g.wo);
                for oy in 0..g.ho {
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    let iy = oy as isize + ki as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize || x_lo >= x_hi {
                        dst.fill(0.0);
                        continue;
                    }
                    dst[..x_lo].fill(0.0);
                    dst[x_hi..].fill(0.0);
                    let src_start = x_lo + kj - g.pw;
                    let src = &plane[iy as usize * g.w + src_start..iy as usize * g.w + src_start + (x_hi - x_lo)];
                    dst[x_lo..x_hi].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let n = g.cols();
    for c in 0..g.ci {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &cols[r * n..(r + 1) * n];
                let x_lo = g.pw.saturating_sub(kj);
                let x_hi = (g.w + g.pw).saturating_sub(kj).min(g.wo);
                if x_lo >= x_hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = oy as isize + ki as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &row[oy * g.wo + x_lo..oy * g.wo + x_hi];
                    let start = c * g.h * g.w + iy as usize * g.w + x_lo + kj - g.pw;
                    for (d, s) in dx[start..start + (x_hi - x_lo)].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Stride-1 convolution with zero padding `(ph, pw)`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, padding: (usize, usize)) -> Var {
        let vx = self.value(x);
        let vw = self.value(weight);
        assert_eq!(vx.ndim(), 4, "conv2d input must be NCHW, got {:?}", vx.shape());
        let (b, ci, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
        let (co, wci, kh, kw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
        assert_eq!(ci, wci, "conv2d channel mismatch: input {ci}, weight {wci}");
        let (ph, pw) = padding;
        assert!(h + 2 * ph >= kh && w + 2 * pw >= kw, "conv2d kernel larger than padded input");
        let g = ConvGeom { ci, h, w, kh, kw, ph, pw, ho: h + 2 * ph - kh + 1, wo: w + 2 * pw - kw + 1 };
        let (rows, ncols) = (g.rows(), g.cols());
        let mut cols = vec![0.0; rows * ncols];
        let mut out = vec![0.0; b * co * ncols];
        let vb = bias.map(|bv| self.value(bv));
        for bi in 0..b {
            im2col(&vx.data()[bi * ci * h * w..(bi + 1) * ci * h * w], &g, &mut cols);
            let o = &mut out[bi * co * ncols..(bi + 1) * co * ncols];
            if let Some(bias) = &vb {
                for (c, chunk) in o.chunks_mut(ncols).enumerate() {
                    chunk.fill(bias.data()[c]);
                }
            }
            let beta = if vb.is_some() { 1.0 } else { 0.0 };
            gemm(co, rows, ncols, 1.0, vw.data(), rows as isize, 1, &cols, ncols as isize, 1, beta, o, ncols as isize, 1);
        }
        drop(cols);
        let mut parents = vec![x, weight];
        if let Some(bv) = bias {
            parents.push(bv);
        }
        self.op(
            Tensor::new(vec![b, co, g.ho, g.wo], out),
            &parents,
            Box::new(move |grad, need| {
                let mut dx = need[0].then(|| vec![0.0; b * ci * h * w]);
                let mut dw = need[1].then(|| vec![0.0; co * rows]);
                let mut cols = vec![0.0; rows * ncols];
                for bi in 0..b {
                    let go = &grad.data()[bi * co * ncols..(bi + 1) * co * ncols];
                    if let Some(dw) = dw.as_mut() {
                        im2col(&vx.data()[bi * ci * h * w..(bi + 1) * ci * h * w], &g, &mut cols);
                        // dW += dOut cols^T
                        gemm(co, ncols, rows, 1.0, go, ncols as isize, 1, &cols, 1, ncols as isize, 1.0, dw, rows as isize, 1);
                    }
                    if let Some(dx) = dx.as_mut() {
                        // dcols = W^T dOut
                        gemm(rows, co, ncols, 1.0, vw.data(), 1, rows as isize, go, ncols as isize, 1, 0.0, &mut cols, ncols as isize, 1);
                        col2im(&cols, &g, &mut dx[bi * ci * h * w..(bi + 1) * ci * h * w]);
                    }
                }
                let mut res = vec![
                    dx.map(|d| Tensor::new(vx.shape().to_vec(), d)),
                    dw.map(|d| Tensor::new(vw.shape().to_vec(), d)),
                ];
                if need.len() > 2 {
                    res.push(need[2].then(|| {
                        let mut db = vec![0.0; co];
                        for bi in 0..b {
                            for (c, acc) in db.iter_mut().enumerate() {
                                let s = (bi * co + c) * ncols;
                                *acc += grad.data()[s..s + ncols].iter().sum::<f64>();
                            }
                        }
                        Tensor::new(vec![co], db)
                    }));
                }
                res
            }),
        )
    }

    /// Non-overlapping average pooling with window `(kh, kw)`; remainders are dropped.
    pub fn avg_pool2d(&self, x: Var, kh: usize, kw: usize) -> Var {
        let vx = self.value(x);
        let s = vx.shape().to_vec();
        let (n, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / kh, w / kw);
        assert!(ho > 0 && wo > 0, "avg_pool2d input {s:?} smaller than window ({kh},{kw})");
        let inv = 1.0 / (kh * kw) as f64;
        let mut out = vec![0.0; n * ho * wo];
        for p in 0..n {
            let src = &vx.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                for i in 0..kh {
                    let row = &src[(oy * kh + i) * w..(oy * kh + i) * w + wo * kw];
                    for (ox, d) in dst[oy * wo..(oy + 1) * wo].iter_mut().enumerate() {
                        *d += row[ox * kw..(ox + 1) * kw].iter().sum::<f64>() * inv;
                    }
                }
            }
        }
        self.op(
            Tensor::new(vec![s[0], s[1], ho, wo], out),
            &[x],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; n * h * w];
                for p in 0..n {
                    let go = &g.data()[p * ho * wo..(p + 1) * ho * wo];
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for oy in 0..ho {
                        for i in 0..kh {
                            let row = &mut d[(oy * kh + i) * w..(oy * kh + i) * w + wo * kw];
                            for ox in 0..wo {
                                let v = go[oy * wo + ox] * inv;
                                row[ox * kw..(ox + 1) * kw].iter_mut().for_each(|r| *r = v);
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(s.clone(), dx))]
            }),
        )
    }

    /// Non-overlapping max pooling with window `(kh, kw)`.
    pub fn max_pool2d(&self, x: Var, kh: usize, kw: usize) -> Var {
        let vx = self.value(x);
        let s = vx.shape().to_vec();
        let (n, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / kh, w / kw);
        assert!(ho > 0 && wo > 0, "max_pool2d input {s:?} smaller than window ({kh},{kw})");
        let mut out = vec![0.0; n * ho * wo];
        let mut arg = vec![0usize; n * ho * wo];
        for p in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut bi = 0;
                    for i in 0..kh {
                        for j in 0..kw {
                            let idx = p * h * w + (oy * kh + i) * w + ox * kw + j;
                            if vx.data()[idx] > best {
                                best = vx.data()[idx];
                                bi = idx;
                            }
                        }
                    }
                    out[p * ho * wo + oy * wo + ox] = best;
                    arg[p * ho * wo + oy * wo + ox] = bi;
                }
            }
        }
        self.op(
            Tensor::new(vec![s[0], s[1], ho, wo], out),
            &[x],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; n * h * w];
                for (gv, &a) in g.data().iter().zip(&arg) {
                    dx[a] += gv;
                }
                vec![Some(Tensor::new(s.clone(), dx))]
            }),
        )
    }

    /// Nearest-neighbour upsampling by integer factors, then zero-pad or crop
    /// (bottom/right) to exactly `(h_out, w_out)`.
    pub fn upsample_to(&self, x: Var, sh: usize, sw: usize, h_out: usize, w_out: usize) -> Var {
        let vx = self.value(x);
        let s = vx.shape().to_vec();
        let (n, h, w) = (s[0] * s[1], s[2], s[3]);
        let mut out = vec![0.0; n * h_out * w_out];
        for p in 0..n {
            for oy in 0..h_out.min(h * sh) {
                let iy = oy / sh;
                for ox in 0..w_out.min(w * sw) {
                    out[p * h_out * w_out + oy * w_out + ox] = vx.data()[p * h * w + iy * w + ox / sw];
                }
            }
        }
        self.op(
            Tensor::new(vec![s[0], s[1], h_out, w_out], out),
            &[x],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; n * h * w];
                for p in 0..n {
                    for oy in 0..h_out.min(h * sh) {
                        let iy = oy / sh;
                        for ox in 0..w_out.min(w * sw) {
                            dx[p * h * w + iy * w + ox / sw] += g.data()[p * h_out * w_out + oy * w_out + ox];
                        }
                    }
                }
                vec![Some(Tensor::new(s.clone(), dx))]
            }),
        )
    }
}
