//! Gated recurrent unit scanned over time with hand-written backpropagation
//! through time. Gate layout is `[reset | update | new]`.

use super::graph::{Graph, Var};
use super::ops::sigmoid;
use super::tensor::{gemm, Tensor};

impl Graph {
    /// Run one GRU direction.
    ///
    /// `gx` holds the precomputed input projections `x W_ih + b_ih` with shape
    /// `[B, T, 3H]`; the result is the hidden sequence `[B, T, H]` (in input
    /// time order even when `reverse` is set). The initial state is zero.
    pub fn gru_scan(&self, gx: Var, w_hh: Var, b_hh: Var, reverse: bool) -> Var {
        let vgx = self.value(gx);
        let vw = self.value(w_hh);
        let vb = self.value(b_hh);
        let (b, t, h3) = (vgx.shape()[0], vgx.shape()[1], vgx.shape()[2]);
        let h = h3 / 3;
        assert_eq!(vw.shape(), &[h, h3], "gru recurrent weight must be [H, 3H]");
        assert_eq!(vb.numel(), h3);
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };

        // per processing step s: [B, H] blocks
        let mut r_all = vec![0.0; t * b * h];
        let mut z_all = vec![0.0; t * b * h];
        let mut n_all = vec![0.0; t * b * h];
        let mut ghn_all = vec![0.0; t * b * h];
        let mut hprev_all = vec![0.0; t * b * h];
        let mut out = vec![0.0; b * t * h];
        let mut hcur = vec![0.0; b * h];
        let mut gh = vec![0.0; b * h3];
        for (s, &ti) in order.iter().enumerate() {
            for bi in 0..b {
                gh[bi * h3..(bi + 1) * h3].copy_from_slice(vb.data());
            }
            gemm(b, h, h3, 1.0, &hcur, h as isize, 1, vw.data(), h3 as isize, 1, 1.0, &mut gh, h3 as isize, 1);
            let blk = s * b * h;
            hprev_all[blk..blk + b * h].copy_from_slice(&hcur);
            for bi in 0..b {
                let gxr = &vgx.data()[(bi * t + ti) * h3..(bi * t + ti + 1) * h3];
                let ghr = &gh[bi * h3..(bi + 1) * h3];
                for j in 0..h {
                    let r = sigmoid(gxr[j] + ghr[j]);
                    let z = sigmoid(gxr[h + j] + ghr[h + j]);
                    let n = (gxr[2 * h + j] + r * ghr[2 * h + j]).tanh();
                    let k = blk + bi * h + j;
                    r_all[k] = r;
                    z_all[k] = z;
                    n_all[k] = n;
                    ghn_all[k] = ghr[2 * h + j];
                    let hn = (1.0 - z) * n + z * hcur[bi * h + j];
                    hcur[bi * h + j] = hn;
                    out[(bi * t + ti) * h + j] = hn;
                }
            }
        }

        self.op(
            Tensor::new(vec![b, t, h], out),
            &[gx, w_hh, b_hh],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut dgx = vec![0.0; b * t * h3];
                let mut dw = vec![0.0; h * h3];
                let mut db = vec![0.0; h3];
                let mut dcarry = vec![0.0; b * h];
                let mut dgh = vec![0.0; b * h3];
                for (s, &ti) in order.iter().enumerate().rev() {
                    let blk = s * b * h;
                    for bi in 0..b {
                        for j in 0..h {
                            let k = blk + bi * h + j;
                            let dh = gd[(bi * t + ti) * h + j] + dcarry[bi * h + j];
                            let (r, z, n, ghn, hp) = (r_all[k], z_all[k], n_all[k], ghn_all[k], hprev_all[k]);
                            let dn = dh * (1.0 - z);
                            let dz = dh * (hp - n);
                            let dan = dn * (1.0 - n * n);
                            let dr = dan * ghn;
                            let dar = dr * r * (1.0 - r);
                            let daz = dz * z * (1.0 - z);
                            let gxo = (bi * t + ti) * h3;
                            dgx[gxo + j] = dar;
                            dgx[gxo + h + j] = daz;
                            dgx[gxo + 2 * h + j] = dan;
                            dgh[bi * h3 + j] = dar;
                            dgh[bi * h3 + h + j] = daz;
                            dgh[bi * h3 + 2 * h + j] = dan * r;
                            dcarry[bi * h + j] = dh * z;
                        }
                    }
                    let hp = &hprev_all[blk..blk + b * h];
                    // dW += h_prev^T dgh
                    gemm(h, b, h3, 1.0, hp, 1, h as isize, &dgh, h3 as isize, 1, 1.0, &mut dw, h3 as isize, 1);
                    for bi in 0..b {
                        for (d, v) in db.iter_mut().zip(&dgh[bi * h3..(bi + 1) * h3]) {
                            *d += v;
                        }
                    }
                    // dh_prev += dgh W^T
                    gemm(b, h3, h, 1.0, &dgh, h3 as isize, 1, vw.data(), 1, h3 as isize, 1.0, &mut dcarry, h as isize, 1);
                }
                vec![
                    Some(Tensor::new(vec![b, t, h3], dgx)),
                    Some(Tensor::new(vec![h, h3], dw)),
                    Some(Tensor::new(vec![h3], db)),
                ]
            }),
        )
    }
}
