//! Waveform synthesis from a masked magnitude and a fixed phase.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::dsp::Stft;

impl Graph {
    /// Inverse STFT of `mag ⊙ phase` for a batch.
    ///
    /// `mag` is `[B, T, F]`; `phase[b]` holds `T * F` unit phasors. Returns
    /// `[B, length]`. The magnitude may be any real value (negative entries
    /// flip the phase).
    pub fn istft_magnitude(&self, mag: Var, phase: Arc<Vec<Vec<Complex64>>>, stft: &Stft, length: usize) -> Var {
        let vm = self.value(mag);
        let (b, t, f) = (vm.shape()[0], vm.shape()[1], vm.shape()[2]);
        let cfg = stft.config();
        assert_eq!(f, cfg.bins(), "magnitude has {f} bins, STFT expects {}", cfg.bins());
        assert_eq!(phase.len(), b);
        assert!(phase.iter().all(|p| p.len() == t * f));
        let mut out = Vec::with_capacity(b * length);
        for bi in 0..b {
            let spec: Vec<Complex64> =
                vm.data()[bi * t * f..(bi + 1) * t * f].iter().zip(&phase[bi]).map(|(&m, &p)| p * m).collect();
            out.extend(stft.inverse_unchecked(&spec, t, length));
        }
        let stft = stft.clone();
        self.op(
            Tensor::new(vec![b, length], out),
            &[mag],
            Box::new(move |g, _| {
                let n = cfg.n_fft;
                let hop = cfg.hop;
                let pad = n / 2;
                let env = stft.envelope(t);
                let win = stft.window();
                let mut gm = vec![0.0; b * t * f];
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                let mut ga = vec![0.0; env.len()];
                for bi in 0..b {
                    // gradient w.r.t. the overlap-added (pre-normalization) signal
                    ga.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..length {
                        let p = i + pad;
                        if p < env.len() && env[p] > 1e-11 {
                            ga[p] = g.data()[bi * length + i] / env[p];
                        }
                    }
                    for ti in 0..t {
                        for j in 0..n {
                            buf[j] = Complex64::new(win[j] * ga[ti * hop + j], 0.0);
                        }
                        stft.fft_forward(&mut buf);
                        let base = (bi * t + ti) * f;
                        for k in 0..f {
                            let c = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
                            let ph = phase[bi][ti * f + k];
                            gm[base + k] = c / n as f64 * (ph * buf[k].conj()).re;
                        }
                    }
                }
                vec![Some(Tensor::new(vec![b, t, f], gm))]
            }),
        )
    }
}
