use rustfft::num_complex::Complex64;

use super::stft::{reflect_index, Stft, StftConfig};
use super::{Waveform, SAMPLE_RATE};
use crate::error::{ensure, Result};

pub const N_MELS: usize = 229;
pub const LOG_EPS: f64 = 1e-10;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8000.0;

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Log-mel spectrogram, frame-major: `values[t * bins + m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

/// Triangular filters stored sparsely as `(first_fft_bin, weights)`.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Self {
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges_hz: Vec<f64> =
            (0..n_mels + 2).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64)).collect();
        let bins = n_fft / 2 + 1;
        let bin_hz = |k: usize| k as f64 * sample_rate / n_fft as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, c, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let mut first = None;
                let mut w = Vec::new();
                for k in 0..bins {
                    let f = bin_hz(k);
                    let v = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
                    if v > 0.0 {
                        first.get_or_insert(k);
                        w.push(v);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), w)
            })
            .collect();
        let centers_hz = edges_hz[1..=n_mels].to_vec();
        Self { filters, centers_hz, edges_hz }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    /// Filters whose triangle has non-zero support at `hz`.
    pub fn filters_containing(&self, hz: f64) -> Vec<usize> {
        (0..self.len()).filter(|&m| self.edges_hz[m] < hz && hz < self.edges_hz[m + 2]).collect()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Log-mel front end shared by the recognizer and transcriber.
#[derive(Clone, Debug)]
pub struct MelExtractor {
    stft: Stft,
    filterbank: MelFilterbank,
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let cfg = StftConfig::MEL;
        Self {
            stft: Stft::new(cfg),
            filterbank: MelFilterbank::new(N_MELS, cfg.n_fft, SAMPLE_RATE as f64, F_MIN, F_MAX),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn logmel(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        ensure!(w.sample_rate == SAMPLE_RATE, "log-mel expects {SAMPLE_RATE} Hz audio, got {}", w.sample_rate);
        self.logmel_samples(&w.samples_f64())
    }

    /// Power-spectrum mel energies compressed with `ln(x + 1e-10)`.
    pub fn logmel_samples(&self, samples: &[f64]) -> Result<LogMelSpectrogram> {
        let cfg = self.stft.config();
        ensure!(!samples.is_empty(), "empty waveform");
        ensure!(samples.len() % cfg.hop == 0, "waveform length {} is not a multiple of {}", samples.len(), cfg.hop);
        let frames = samples.len() / cfg.hop;
        let n = cfg.n_fft;
        let bins = cfg.bins();
        let pad = (n / 2) as isize;
        let window = self.stft.window();
        let mut values = vec![0.0; frames * N_MELS];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut power = vec![0.0; bins];
        for t in 0..frames {
            let start = (t * cfg.hop) as isize - pad;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(samples[reflect_index(start + j as isize, samples.len())] * window[j], 0.0);
            }
            self.stft.fft_forward(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf[..bins]) {
                *p = c.norm_sqr();
            }
            let row = &mut values[t * N_MELS..(t + 1) * N_MELS];
            self.filterbank.apply(&power, row);
            row.iter_mut().for_each(|v| *v = (*v + LOG_EPS).ln());
        }
        Ok(LogMelSpectrogram { frames, bins: N_MELS, values })
    }
}
