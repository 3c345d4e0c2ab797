use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Short-time Fourier transform geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl StftConfig {
    /// Separator front end: 1024-point window, 160-sample hop (100 fps at 16 kHz).
    pub const SEPARATION: StftConfig = StftConfig { n_fft: 1024, hop: 160 };
    /// Recognition/transcription front end: 2048-point window, 160-sample hop.
    pub const MEL: StftConfig = StftConfig { n_fft: 2048, hop: 160 };

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Complex spectrogram stored frame-major: `values[t * bins + k]`.
#[derive(Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub config: StftConfig,
    pub frames: usize,
    pub values: Vec<Complex64>,
}

impl fmt::Debug for ComplexSpectrogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexSpectrogram({} x {}, {:?})", self.frames, self.bins(), self.config)
    }
}

impl ComplexSpectrogram {
    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins())
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    /// Unit phasors `X / |X|`; zero bins get phase 1.
    pub fn phase(&self) -> Vec<Complex64> {
        self.values
            .iter()
            .map(|c| {
                let m = c.norm();
                if m > 0.0 {
                    c / m
                } else {
                    Complex64::new(1.0, 0.0)
                }
            })
            .collect()
    }
}

/// Mirror an index into `[0, n)` the way numpy's "reflect" padding does,
/// repeating the reflection for signals shorter than the pad.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Planned forward/inverse transforms with a periodic Hann window.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Stft({:?})", self.config)
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Self {
        let n = config.n_fft;
        let window = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
        let mut planner = FftPlanner::new();
        Self { config, window, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub(crate) fn fft_forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Number of frames kept for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        len / self.config.hop
    }

    fn check_len(&self, len: usize) -> Result<()> {
        ensure!(len > 0, "empty waveform");
        ensure!(
            len % self.config.hop == 0,
            "waveform length {len} is not a multiple of the hop size {}",
            self.config.hop
        );
        Ok(())
    }

    /// Centered (reflect-padded) analysis keeping exactly `len / hop` frames.
    pub fn forward(&self, samples: &[f64]) -> Result<ComplexSpectrogram> {
        self.check_len(samples.len())?;
        let n = self.config.n_fft;
        let bins = self.config.bins();
        let frames = self.frames_for(samples.len());
        let pad = (n / 2) as isize;
        let mut values = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            let start = (t * self.config.hop) as isize - pad;
            for (j, b) in buf.iter_mut().enumerate() {
                let idx = reflect_index(start + j as isize, samples.len());
                *b = Complex64::new(samples[idx] * self.window[j], 0.0);
            }
            self.forward.process(&mut buf);
            values.extend_from_slice(&buf[..bins]);
        }
        Ok(ComplexSpectrogram { config: self.config, frames, values })
    }

    /// Sum of squared windows at each padded position, for `frames` frames.
    pub(crate) fn envelope(&self, frames: usize) -> Vec<f64> {
        let n = self.config.n_fft;
        let mut env = vec![0.0; (frames - 1) * self.config.hop + n];
        for t in 0..frames {
            for (j, w) in self.window.iter().enumerate() {
                env[t * self.config.hop + j] += w * w;
            }
        }
        env
    }

    /// Real inverse transform of one half spectrum (length `n_fft / 2 + 1`).
    pub(crate) fn irfft_frame(&self, half: &[Complex64], buf: &mut [Complex64]) {
        let n = self.config.n_fft;
        let bins = self.config.bins();
        buf[..bins].copy_from_slice(half);
        for k in 1..n - bins + 1 {
            buf[n - k] = half[k].conj();
        }
        self.inverse.process(buf);
        let inv = 1.0 / n as f64;
        for b in buf.iter_mut() {
            *b = Complex64::new(b.re * inv, 0.0);
        }
    }

    /// Weighted overlap-add inverse; returns `length` samples.
    pub fn inverse(&self, spec: &ComplexSpectrogram, length: usize) -> Result<Vec<f64>> {
        ensure!(spec.config == self.config, "spectrogram config {:?} does not match {:?}", spec.config, self.config);
        self.check_len(length)?;
        ensure!(
            spec.frames == self.frames_for(length),
            "spectrogram has {} frames but a {length}-sample signal needs {}",
            spec.frames,
            self.frames_for(length)
        );
        ensure!(spec.values.len() == spec.frames * spec.bins(), "spectrogram data length mismatch");
        Ok(self.inverse_unchecked(&spec.values, spec.frames, length))
    }

    pub(crate) fn inverse_unchecked(&self, values: &[Complex64], frames: usize, length: usize) -> Vec<f64> {
        let n = self.config.n_fft;
        let bins = self.config.bins();
        let env = self.envelope(frames);
        let mut acc = vec![0.0; env.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            self.irfft_frame(&values[t * bins..(t + 1) * bins], &mut buf);
            for j in 0..n {
                acc[t * self.config.hop + j] += buf[j].re * self.window[j];
            }
        }
        let pad = n / 2;
        (0..length)
            .map(|i| {
                let p = i + pad;
                if p < acc.len() && env[p] > 1e-11 {
                    acc[p] / env[p]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn ten_seconds_gives_thousand_frames_of_513_bins() {
        let stft = Stft::new(StftConfig::SEPARATION);
        let spec = stft.forward(&vec![0.0; 160_000]).unwrap();
        assert_eq!(spec.shape(), (1000, 513));
        assert!(spec.values.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn roundtrip_is_exact_to_numerical_precision() {
        let stft = Stft::new(StftConfig::SEPARATION);
        let x = noise(16_000, 3);
        let y = stft.inverse(&stft.forward(&x).unwrap(), x.len()).unwrap();
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = x.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err / peak < 1e-10, "relative error {}", err / peak);
    }

    #[test]
    fn parseval_per_frame() {
        // one-sided spectrum energy equals windowed frame energy
        let stft = Stft::new(StftConfig::SEPARATION);
        let x = noise(3_200, 9);
        let spec = stft.forward(&x).unwrap();
        let n = 1024usize;
        let mut spec_energy = 0.0;
        for t in 0..spec.frames {
            for k in 0..spec.bins() {
                let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                spec_energy += c * spec.values[t * spec.bins() + k].norm_sqr() / n as f64;
            }
        }
        let mut frame_energy = 0.0;
        for t in 0..spec.frames {
            for j in 0..n {
                let idx = reflect_index((t * 160) as isize - 512 + j as isize, x.len());
                frame_energy += (x[idx] * stft.window()[j]).powi(2);
            }
        }
        assert!((spec_energy - frame_energy).abs() / frame_energy < 1e-6);
    }

    #[test]
    fn rejects_unaligned_and_empty_input() {
        let stft = Stft::new(StftConfig::SEPARATION);
        assert!(stft.forward(&[]).is_err());
        assert!(stft.forward(&vec![0.0; 161]).is_err());
        let spec = stft.forward(&vec![0.0; 320]).unwrap();
        assert!(stft.inverse(&spec, 480).is_err());
    }

    #[test]
    fn reflect_index_handles_short_signals() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-9, 3), 1);
        assert_eq!(reflect_index(7, 1), 0);
    }
}
