//! Instrument- and roll-conditioned source separation by magnitude masking.
//! A U-Net over the mixture spectrogram is FiLM-modulated by the instrument
//! condition at every encoder block; the piano roll enters through a learned
//! 88-to-bins projection fused with the spectrogram.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{Stft, StftConfig, Waveform, SAMPLE_RATE};
use crate::error::{ensure, Error, Result};
use crate::nn::layers::{BatchNorm, Conv2d, Film, Linear};
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::symbolic::{PianoRoll, N_PITCHES};
use crate::taxonomy::{ConditionVector, InstrumentIndex, NUM_CLASSES};

pub const PREFIX: &str = "s.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Sum,
    Concat,
    SpecPatch,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Sum => "sum",
            FusionMode::Concat => "concat",
            FusionMode::SpecPatch => "spec_patch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(FusionMode::Sum),
            "concat" => Ok(FusionMode::Concat),
            "spec_patch" => Ok(FusionMode::SpecPatch),
            _ => Err(Error::domain(format!("unknown fusion mode '{s}' (expected sum, concat or spec_patch)"))),
        }
    }

    fn channels(self) -> usize {
        match self {
            FusionMode::Concat => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollForm {
    Posterior,
    Binary,
}

impl RollForm {
    pub fn as_str(self) -> &'static str {
        match self {
            RollForm::Posterior => "posterior",
            RollForm::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(RollForm::Posterior),
            "binary" => Ok(RollForm::Binary),
            _ => Err(Error::domain(format!("unknown roll form '{s}' (expected posterior or binary)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparatorConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub embed_dim: usize,
    pub fusion: FusionMode,
    pub roll_form: RollForm,
    /// Binarize the roll with a straight-through gradient during training.
    pub ste: bool,
    pub threshold: f64,
    pub stft: StftConfig,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            embed_dim: 16,
            fusion: FusionMode::Sum,
            roll_form: RollForm::Posterior,
            ste: false,
            threshold: 0.5,
            stft: StftConfig::SEPARATION,
        }
    }
}

impl SeparatorConfig {
    pub fn tiny() -> Self {
        Self { depth: 2, base_channels: 2, embed_dim: 3, ..Self::default() }
    }

    pub fn small() -> Self {
        Self { depth: 4, base_channels: 4, embed_dim: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!((1..=6).contains(&self.depth), "U-Net depth must be 1..=6, got {}", self.depth);
        ensure!(self.base_channels > 0 && self.embed_dim > 0, "layer sizes must be positive");
        ensure!(self.threshold > 0.0 && self.threshold < 1.0, "threshold must lie in (0, 1)");
        ensure!(self.stft.hop > 0 && self.stft.n_fft >= self.stft.hop, "invalid STFT geometry {:?}", self.stft);
        ensure!(self.stft.bins() >> self.depth > 0, "too deep for {} bins", self.stft.bins());
        Ok(())
    }

    /// Fewest frames the U-Net accepts.
    pub fn min_frames(&self) -> usize {
        1 << self.depth
    }
}

/// Network input from the spectral feature and the projected roll:
/// `[B, T, F]` each, to `[B, 1, T, F]` (sum, spec_patch) or `[B, 2, T, F]`.
pub fn fuse(g: &Graph, spec: Var, roll_feat: Var, mode: FusionMode) -> Result<Var> {
    let (a, b) = (g.shape(spec), g.shape(roll_feat));
    ensure!(a.len() == 3 && a == b, "fusion needs equal [B, T, F] shapes, got {a:?} and {b:?}");
    let one = |v: Var| g.reshape(v, &[a[0], 1, a[1], a[2]]);
    Ok(match mode {
        FusionMode::Sum | FusionMode::SpecPatch => one(g.add(spec, roll_feat)),
        FusionMode::Concat => g.concat(&[one(spec), one(roll_feat)], 1),
    })
}

/// Mixture analysis for one waveform.
#[derive(Clone, Debug)]
pub struct MixtureSpec {
    pub frames: usize,
    pub length: usize,
    /// `[T * F]` magnitudes.
    pub magnitude: Vec<f64>,
    /// `[T * F]` unit phasors.
    pub phase: Vec<Complex64>,
}

struct EncBlock {
    c1: Conv2d,
    b1: BatchNorm,
    c2: Conv2d,
    b2: BatchNorm,
    film: Film,
}

struct DecBlock {
    c1: Conv2d,
    b1: BatchNorm,
    c2: Conv2d,
    b2: BatchNorm,
}

/// Masks and masked magnitudes, each `[B, T, F]`.
pub struct SeparatorOutput {
    pub mask: Var,
    pub magnitude: Var,
}

/// One estimated source.
#[derive(Clone, Debug)]
pub struct SeparationOutput {
    pub waveform: Waveform,
    /// `[T * F]`, values in `[0, 1]`.
    pub mask: Vec<f64>,
}

pub struct Separator {
    pub cfg: SeparatorConfig,
    stft: Stft,
    proj: Linear,
    embed: Linear,
    input_bn: BatchNorm,
    enc: Vec<EncBlock>,
    mid_conv: Conv2d,
    mid_bn: BatchNorm,
    dec: Vec<DecBlock>,
    out: Conv2d,
}

impl Separator {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, cfg: SeparatorConfig) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.stft.bins();
        let ch = |i: usize| cfg.base_channels << i;
        let conv = |ps: &mut ParamStore, rng: &mut _, n: String, ci, co| Conv2d::new(ps, rng, &n, ci, co, 3, false);
        let mut enc = Vec::new();
        let mut ci = cfg.fusion.channels();
        for i in 0..cfg.depth {
            let n = format!("{PREFIX}enc{i}");
            enc.push(EncBlock {
                c1: conv(ps, rng, format!("{n}.conv1"), ci, ch(i)),
                b1: BatchNorm::new(ps, &format!("{n}.bn1"), ch(i), 1),
                c2: conv(ps, rng, format!("{n}.conv2"), ch(i), ch(i)),
                b2: BatchNorm::new(ps, &format!("{n}.bn2"), ch(i), 1),
                film: Film::new(ps, rng, &format!("{n}.film"), cfg.embed_dim, ch(i)),
            });
            ci = ch(i);
        }
        let mid_conv = conv(ps, rng, format!("{PREFIX}mid.conv"), ci, ch(cfg.depth));
        let mid_bn = BatchNorm::new(ps, &format!("{PREFIX}mid.bn"), ch(cfg.depth), 1);
        let mut dec = Vec::new();
        for i in (0..cfg.depth).rev() {
            let n = format!("{PREFIX}dec{i}");
            dec.push(DecBlock {
                c1: conv(ps, rng, format!("{n}.conv1"), ch(i + 1) + ch(i), ch(i)),
                b1: BatchNorm::new(ps, &format!("{n}.bn1"), ch(i), 1),
                c2: conv(ps, rng, format!("{n}.conv2"), ch(i), ch(i)),
                b2: BatchNorm::new(ps, &format!("{n}.bn2"), ch(i), 1),
            });
        }
        Ok(Self {
            stft: Stft::new(cfg.stft),
            proj: Linear::new(ps, rng, &format!("{PREFIX}roll_proj"), N_PITCHES, bins, true),
            embed: Linear::new(ps, rng, &format!("{PREFIX}embed"), NUM_CLASSES, cfg.embed_dim, false),
            input_bn: BatchNorm::new(ps, &format!("{PREFIX}input_bn"), bins, 3),
            enc,
            mid_conv,
            mid_bn,
            dec,
            out: Conv2d::new(ps, rng, &format!("{PREFIX}out"), ch(0), 1, 1, true),
            cfg,
        })
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn analyze(&self, mix: &Waveform) -> Result<MixtureSpec> {
        ensure!(mix.sample_rate == SAMPLE_RATE, "separator expects {SAMPLE_RATE} Hz audio, got {}", mix.sample_rate);
        let spec = self.stft.forward(&mix.samples_f64())?;
        Ok(MixtureSpec { frames: spec.frames, length: mix.len(), magnitude: spec.magnitude(), phase: spec.phase() })
    }

    /// The learned linear map `g`: `[B, T, 88] -> [B, T, F]`.
    pub fn project_roll(&self, g: &Graph, ps: &ParamStore, roll: Var) -> Var {
        self.proj.forward(g, ps, roll)
    }

    /// Roll as fed to `g` during training: a posterior, a detached hard
    /// threshold, or a straight-through binarization.
    pub fn prepare_roll(&self, g: &Graph, posterior: Var) -> Var {
        if self.cfg.ste {
            g.binarize_ste(posterior, self.cfg.threshold)
        } else {
            match self.cfg.roll_form {
                RollForm::Posterior => posterior,
                RollForm::Binary => {
                    let t = self.cfg.threshold;
                    g.constant(g.value(posterior).map(|v| if v >= t { 1.0 } else { 0.0 }))
                }
            }
        }
    }

    /// Same conversion outside the tape, for inference.
    pub fn prepare_roll_values(&self, posterior: &[f64]) -> Vec<f64> {
        let t = self.cfg.threshold;
        if self.cfg.ste || self.cfg.roll_form == RollForm::Binary {
            posterior.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect()
        } else {
            posterior.to_vec()
        }
    }

    /// `mag` is the mixture magnitude `[B, T, F]`, `roll` the prepared
    /// frame roll `[B, T, 88]`, `cond` the condition `[B, 39]`.
    pub fn forward(&self, g: &Graph, ps: &ParamStore, mag: &Tensor, roll: Var, cond: &Tensor) -> Result<SeparatorOutput> {
        let bins = self.cfg.stft.bins();
        let s = mag.shape().to_vec();
        ensure!(s.len() == 3 && s[2] == bins, "magnitude must be [B, T, {bins}], got {s:?}");
        let (b, t) = (s[0], s[1]);
        ensure!(t >= self.cfg.min_frames(), "separator needs at least {} frames, got {t}", self.cfg.min_frames());
        ensure!(g.shape(roll) == [b, t, N_PITCHES], "roll must be [{b}, {t}, 88], got {:?}", g.shape(roll));
        ensure!(cond.shape() == [b, NUM_CLASSES], "condition must be [{b}, {NUM_CLASSES}], got {:?}", cond.shape());

        let roll_feat = self.project_roll(g, ps, roll);
        let logmag = g.constant(mag.map(f64::ln_1p).reshape(vec![b, 1, t, bins]));
        let spec = g.reshape(self.input_bn.forward(g, ps, logmag), &[b, t, bins]);
        let x = fuse(g, spec, roll_feat, self.cfg.fusion)?;
        let emb = self.embed.forward(g, ps, g.constant(cond.clone()));

        let mut h = x;
        let mut skips = Vec::new();
        for e in &self.enc {
            h = g.relu(e.b1.forward(g, ps, e.c1.forward(g, ps, h)));
            h = g.relu(e.b2.forward(g, ps, e.c2.forward(g, ps, h)));
            h = e.film.forward(g, ps, h, emb);
            skips.push(h);
            h = g.avg_pool2d(h, 2, 2);
        }
        h = g.relu(self.mid_bn.forward(g, ps, self.mid_conv.forward(g, ps, h)));
        for d in &self.dec {
            let skip = skips.pop().expect("one skip per level");
            let ss = g.shape(skip);
            let up = g.upsample_to(h, 2, 2, ss[2], ss[3]);
            h = g.concat(&[up, skip], 1);
            h = g.relu(d.b1.forward(g, ps, d.c1.forward(g, ps, h)));
            h = g.relu(d.b2.forward(g, ps, d.c2.forward(g, ps, h)));
        }
        let mask = g.reshape(g.sigmoid(self.out.forward(g, ps, h)), &[b, t, bins]);
        let base = g.constant(mag.clone());
        let magnitude = match self.cfg.fusion {
            FusionMode::SpecPatch => g.mul(mask, g.add(base, roll_feat)),
            _ => g.mul(mask, base),
        };
        Ok(SeparatorOutput { mask, magnitude })
    }

    /// Waveforms `[B, length]` from masked magnitudes and mixture phases.
    pub fn synthesize(&self, g: &Graph, magnitude: Var, phases: Vec<Vec<Complex64>>, length: usize) -> Var {
        g.istft_magnitude(magnitude, Arc::new(phases), &self.stft, length)
    }

    /// Separate one instrument from a mixture given its frame roll.
    pub fn separate(
        &self,
        ps: &ParamStore,
        mix: &Waveform,
        instrument: InstrumentIndex,
        frame_roll: &PianoRoll,
    ) -> Result<SeparationOutput> {
        let spec = self.analyze(mix)?;
        ensure!(
            frame_roll.frames == spec.frames,
            "roll has {} frames but the mixture has {}",
            frame_roll.frames,
            spec.frames
        );
        let bins = self.cfg.stft.bins();
        let g = Graph::inference();
        let mag = Tensor::new(vec![1, spec.frames, bins], spec.magnitude);
        let roll = g.constant(Tensor::new(vec![1, spec.frames, N_PITCHES], self.prepare_roll_values(&frame_roll.frame)));
        let cond = Tensor::new(vec![1, NUM_CLASSES], ConditionVector::one_hot(instrument).values().to_vec());
        let out = self.forward(&g, ps, &mag, roll, &cond)?;
        let wave = self.synthesize(&g, out.magnitude, vec![spec.phase], spec.length);
        Ok(SeparationOutput {
            waveform: Waveform::from_f64(g.value(wave).data(), SAMPLE_RATE),
            mask: g.value(out.mask).data().to_vec(),
        })
    }
}

/// Mean squared error between waveforms.
pub fn loss_mss(pred: &[f32], target: &[f32]) -> Result<f64> {
    ensure!(pred.len() == target.len(), "prediction has {} samples, target {}", pred.len(), target.len());
    ensure!(!pred.is_empty(), "empty waveform");
    Ok(pred.iter().zip(target).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / pred.len() as f64)
}
