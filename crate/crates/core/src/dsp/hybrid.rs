//! Piano-roll + spectrogram hybrid feature for downstream tasks.
//!
//! Instrument rolls are collapsed into two channels (pitched classes 0-37 and
//! drums), each projected from 88 pitches to the spectrogram's bin count by
//! one linear map shared across time, then stacked under the spectrogram
//! channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::nn::{init, Tensor};
use crate::symbolic::{PianoRoll, N_PITCHES};

#[derive(Clone, Debug, PartialEq)]
pub struct HybridProjector {
    bins: usize,
    /// `[88, bins]`, row-major.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl HybridProjector {
    /// Randomly initialized projection (for use without a trained one).
    pub fn new(bins: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = init::xavier(&mut rng, &[N_PITCHES, bins], N_PITCHES, bins).into_data();
        let bias = init::normal(&mut rng, &[bins], 0.1).into_data();
        Self { bins, weight, bias }
    }

    pub fn from_parts(weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let bins = bias.len();
        ensure!(bins > 0, "projection needs at least one output bin");
        ensure!(weight.len() == N_PITCHES * bins, "projection weight must be 88 x {bins}, got {} values", weight.len());
        Ok(Self { bins, weight, bias })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `[T, 88]` roll to `[T, bins]`.
    pub fn project(&self, roll: &[f64]) -> Vec<f64> {
        let frames = roll.len() / N_PITCHES;
        let mut out = Vec::with_capacity(frames * self.bins);
        for t in 0..frames {
            out.extend_from_slice(&self.bias);
            let row = &mut out[t * self.bins..];
            for (p, &v) in roll[t * N_PITCHES..(t + 1) * N_PITCHES].iter().enumerate() {
                if v != 0.0 {
                    for (o, w) in row.iter_mut().zip(&self.weight[p * self.bins..(p + 1) * self.bins]) {
                        *o += v * w;
                    }
                }
            }
        }
        out
    }

    /// Spectrogram `[C, T, bins]` (or `[T, bins]`) plus rolls to `[C + 2, T, bins]`.
    pub fn features(&self, spec: &Tensor, rolls: &[PianoRoll]) -> Result<Tensor> {
        let (c, t, f) = match *spec.shape() {
            [t, f] => (1, t, f),
            [c, t, f] => (c, t, f),
            ref s => return Err(crate::error::Error::domain(format!("spectrogram must be 2-D or 3-D, got {s:?}"))),
        };
        ensure!(f == self.bins, "spectrogram has {f} bins but the projection produces {}", self.bins);
        let [pitched, drums] = collapse_rolls(rolls, t)?;
        let mut data = spec.data().to_vec();
        data.extend(self.project(&pitched));
        data.extend(self.project(&drums));
        Ok(Tensor::new(vec![c + 2, t, f], data))
    }
}

/// Frame rolls merged into `[pitched, drums]` by element-wise maximum.
pub fn collapse_rolls(rolls: &[PianoRoll], frames: usize) -> Result<[Vec<f64>; 2]> {
    let mut out = [vec![0.0; frames * N_PITCHES], vec![0.0; frames * N_PITCHES]];
    for r in rolls {
        ensure!(r.frames == frames, "roll for {} has {} frames, spectrogram has {frames}", r.instrument, r.frames);
        let ch = &mut out[r.instrument.is_unpitched() as usize];
        for (o, &v) in ch.iter_mut().zip(&r.frame) {
            *o = f64::max(*o, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::{render_rolls, NoteEvent};
    use crate::taxonomy::{map_program, DRUMS};

    #[test]
    fn zero_rolls_give_spec_plus_bias_rows() {
        let proj = HybridProjector::new(229, 1);
        let spec = Tensor::from_fn(vec![1000, 229], |i| i as f64 * 1e-3);
        let rolls = [PianoRoll::zeros(1000, DRUMS), PianoRoll::zeros(1000, map_program(0).unwrap())];
        let out = proj.features(&spec, &rolls).unwrap();
        assert_eq!(out.shape(), &[3, 1000, 229]);
        assert_eq!(&out.data()[..229_000], spec.data());
        for ch in 1..3 {
            for t in [0, 500, 999] {
                let at = (ch * 1000 + t) * 229;
                assert_eq!(&out.data()[at..at + 229], proj.bias());
            }
        }
    }

    #[test]
    fn drums_land_in_the_second_channel() {
        let proj = HybridProjector::new(16, 2);
        let hit = NoteEvent::new(38, 0.0, 0.01, DRUMS).unwrap();
        let r = render_rolls(&[hit], 0.05, DRUMS).unwrap();
        let spec = Tensor::zeros(vec![5, 16]);
        let out = proj.features(&spec, &[r]).unwrap();
        let pitched = &out.data()[5 * 16..5 * 16 + 16];
        let drums = &out.data()[10 * 16..10 * 16 + 16];
        assert_eq!(pitched, proj.bias());
        assert_ne!(drums, proj.bias());
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let proj = HybridProjector::new(8, 0);
        let err = proj.features(&Tensor::zeros(vec![10, 8]), &[PianoRoll::zeros(9, DRUMS)]);
        assert!(err.is_err());
        assert!(proj.features(&Tensor::zeros(vec![10, 7]), &[]).is_err());
    }
}
