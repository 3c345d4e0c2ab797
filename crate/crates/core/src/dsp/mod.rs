//! Audio front ends: log-mel features, STFT/iSTFT, WAV I/O, resampling and
//! the piano-roll + spectrogram hybrid feature.

pub mod hybrid;
pub mod mel;
pub mod resample;
pub mod stft;
pub mod wav;

pub use hybrid::HybridProjector;
pub use mel::{LogMelSpectrogram, MelExtractor, N_MELS};
pub use stft::{ComplexSpectrogram, Stft, StftConfig};
pub use wav::{read_wav, write_wav, WavFormat};

pub const SAMPLE_RATE: u32 = 16_000;
/// Hop between feature frames; 160 samples at 16 kHz is 100 frames per second.
pub const HOP: usize = 160;
pub const FRAMES_PER_SECOND: usize = SAMPLE_RATE as usize / HOP;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence(len: usize) -> Self {
        Self::new(vec![0.0; len], SAMPLE_RATE)
    }

    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Self {
        Self::new(samples.iter().map(|&v| v as f32).collect(), sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }

    /// Convert to the system rate (pass-through when already 16 kHz).
    pub fn to_system_rate(&self) -> Waveform {
        resample::resample(self, SAMPLE_RATE)
    }

    /// Zero-pad or truncate to `len` samples.
    pub fn fit_to(&self, len: usize) -> Waveform {
        let mut s = self.samples.clone();
        s.resize(len, 0.0);
        Waveform::new(s, self.sample_rate)
    }

    /// Zero-pad to a whole number of hops.
    pub fn pad_to_hop(&self) -> Waveform {
        self.fit_to(self.len().div_ceil(HOP) * HOP)
    }

    /// Samples `[start, start + len)`, zero-padded past the end.
    pub fn segment(&self, start: usize, len: usize) -> Waveform {
        let mut s: Vec<f32> = self.samples.iter().skip(start).take(len).copied().collect();
        s.resize(len, 0.0);
        Waveform::new(s, self.sample_rate)
    }
}
