//! Deterministic synthetic multi-instrument pieces: monophonic note lines per
//! instrument rendered with additive synthesis, drum hits as noise bursts,
//! and the exact ground truth (stems, notes, labels).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{read_wav, write_wav, WavFormat, Waveform, SAMPLE_RATE};
use crate::error::{ensure, Error, Result};
use crate::symbolic::{frame_to_time, frames_for_duration, load_midi, save_midi, time_to_frame, NoteEvent, NoteMap, PitchPolicy};
use crate::taxonomy::{condition_vector, ConditionVector, InstrumentIndex, DRUMS};

const RELEASE_GAP_S: f64 = 0.03;
const MAX_PARTIALS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub pool: Vec<usize>,
    /// Inclusive range for the number of instruments per piece.
    pub k_range: (usize, usize),
    pub grid_s: f64,
    /// Probability that a grid step starts a note (pitched) or hit (drums).
    pub density: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { duration_s: 10.0, pool: vec![0, 8, 10, 19, 29, 38], k_range: (2, 4), grid_s: 0.125, density: 0.5 }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<Vec<InstrumentIndex>> {
        ensure!(!self.pool.is_empty(), "instrument pool is empty");
        let mut pool = self.pool.iter().map(|&i| InstrumentIndex::new(i)).collect::<Result<Vec<_>>>()?;
        pool.sort();
        pool.dedup();
        let (lo, hi) = self.k_range;
        ensure!(lo >= 1 && lo <= hi, "invalid instrument count range {lo}..={hi}");
        ensure!(lo <= pool.len(), "cannot draw {lo} instruments from a pool of {}", pool.len());
        frames_for_duration(self.duration_s)?;
        ensure!(self.duration_s > 0.0, "duration must be positive");
        ensure!(self.grid_s > 0.0 && (0.0..=1.0).contains(&self.density), "invalid grid or density");
        Ok(pool)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPiece {
    pub name: String,
    pub seed: u64,
    pub mix: Waveform,
    pub stems: BTreeMap<InstrumentIndex, Waveform>,
    pub notes: NoteMap,
    pub labels: ConditionVector,
}

impl ToyPiece {
    pub fn instruments(&self) -> Vec<InstrumentIndex> {
        self.notes.iter().filter(|(_, n)| !n.is_empty()).map(|(i, _)| *i).collect()
    }

    pub fn duration_s(&self) -> f64 {
        self.mix.duration_s()
    }
}

/// Timbre: partial amplitudes, ADSR and pitch range.
#[derive(Clone, Debug)]
struct Recipe {
    partials: Vec<f64>,
    attack: f64,
    decay: f64,
    sustain: f64,
    release: f64,
    pitch_lo: u8,
    pitch_hi: u8,
    gain: f64,
}

fn recipe(inst: InstrumentIndex) -> Recipe {
    let r = |partials: &[f64], a, d, s, rel, lo, hi, gain| Recipe {
        partials: partials.to_vec(),
        attack: a,
        decay: d,
        sustain: s,
        release: rel,
        pitch_lo: lo,
        pitch_hi: hi,
        gain,
    };
    match inst.get() {
        0 => r(&[1.0, 0.5, 0.33, 0.25, 0.2, 0.12, 0.08, 0.05], 0.005, 0.3, 0.3, 0.05, 48, 72, 0.25),
        8 => r(&[1.0, 0.7, 0.5, 0.4, 0.3, 0.2], 0.003, 0.15, 0.15, 0.03, 52, 69, 0.25),
        10 => r(&[1.0, 0.35, 0.1], 0.01, 0.1, 0.8, 0.03, 28, 45, 0.35),
        19 => r(&[0.6, 0.9, 1.0, 0.9, 0.7, 0.5, 0.35, 0.25], 0.03, 0.05, 0.85, 0.03, 60, 76, 0.18),
        29 => r(&[1.0, 0.1, 0.04], 0.04, 0.05, 0.9, 0.03, 76, 93, 0.22),
        i => {
            // other classes: a recipe derived from the index
            let mut rng = ChaCha8Rng::seed_from_u64(0x7157_0000 + i as u64);
            let n = rng.random_range(2..=MAX_PARTIALS);
            let partials: Vec<f64> = (0..n).map(|k| rng.random_range(0.1..1.0) / (k as f64 + 1.0).sqrt()).collect();
            let lo = rng.random_range(36..=72u8);
            r(&partials, 0.01, 0.1, rng.random_range(0.3..0.9), 0.03, lo, lo + 14, 0.2)
        }
    }
}

fn adsr(t: f64, dur: f64, rc: &Recipe) -> f64 {
    let on = if t < rc.attack {
        t / rc.attack
    } else if t < rc.attack + rc.decay {
        1.0 - (1.0 - rc.sustain) * (t - rc.attack) / rc.decay
    } else {
        rc.sustain
    };
    if t < dur {
        on
    } else {
        let level = adsr(dur.min(t) - 1e-12, dur, rc).max(0.0);
        (level * (1.0 - (t - dur) / rc.release)).max(0.0)
    }
}

fn midi_hz(p: u8) -> f64 {
    440.0 * 2f64.powf((p as f64 - 69.0) / 12.0)
}

/// Quantize to the 10 ms frame grid so note times are exactly representable.
fn q(s: f64) -> f64 {
    frame_to_time(time_to_frame(s))
}

fn pitched_notes(inst: InstrumentIndex, rc: &Recipe, cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<NoteEvent> {
    let steps = (cfg.duration_s / cfg.grid_s).floor() as usize;
    let mut notes = Vec::new();
    let mut k = 0;
    while k < steps {
        if rng.random::<f64>() < cfg.density {
            let len = rng.random_range(1..=4usize).min(steps - k);
            let onset = q(k as f64 * cfg.grid_s);
            let offset = q((k + len) as f64 * cfg.grid_s - RELEASE_GAP_S).min(cfg.duration_s);
            let pitch = rng.random_range(rc.pitch_lo..=rc.pitch_hi);
            if offset > onset {
                notes.push(NoteEvent { pitch, onset_s: onset, offset_s: offset, instrument: inst });
            }
            k += len;
        } else {
            k += 1;
        }
    }
    notes
}

fn drum_notes(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<NoteEvent> {
    let steps = (cfg.duration_s / cfg.grid_s).floor() as usize;
    let mut notes = Vec::new();
    for k in 0..steps {
        let onset = q(k as f64 * cfg.grid_s);
        if onset + 0.01 > cfg.duration_s {
            break;
        }
        // kick on strong beats, snare on off-beats, hi-hat anywhere
        let key = match k % 4 {
            0 => 36,
            2 => 38,
            _ => 42,
        };
        if rng.random::<f64>() < cfg.density {
            notes.push(NoteEvent { pitch: key, onset_s: onset, offset_s: q(onset + 0.01), instrument: DRUMS });
        }
    }
    notes
}

fn render_pitched(notes: &[NoteEvent], rc: &Recipe, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    for n in notes {
        let f0 = midi_hz(n.pitch);
        let dur = n.duration_s();
        let start = (n.onset_s * sr).round() as usize;
        let total = ((dur + rc.release) * sr).ceil() as usize;
        let phases: Vec<f64> = rc.partials.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let parts: Vec<(f64, f64, f64)> = rc
            .partials
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(k, (&a, &ph))| (f0 * (k + 1) as f64, a, ph))
            .filter(|&(f, _, _)| f < 0.47 * sr)
            .collect();
        for i in 0..total.min(len.saturating_sub(start)) {
            let t = i as f64 / sr;
            let env = adsr(t, dur, rc);
            if env == 0.0 {
                continue;
            }
            let s: f64 = parts.iter().map(|&(f, a, ph)| a * (std::f64::consts::TAU * f * t + ph).sin()).sum();
            out[start + i] += rc.gain * env * s;
        }
    }
    out
}

fn render_drums(notes: &[NoteEvent], len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    for n in notes {
        let start = (n.onset_s * sr).round() as usize;
        let (decay, total_s) = match n.pitch {
            36 => (0.12, 0.35),
            38 => (0.08, 0.25),
            _ => (0.03, 0.1),
        };
        let mut prev = 0.0;
        let mut phase = 0.0;
        for i in 0..((total_s * sr) as usize).min(len.saturating_sub(start)) {
            let t = i as f64 / sr;
            let env = (-t / decay).exp();
            let noise: f64 = rng.random_range(-1.0..1.0);
            let v = match n.pitch {
                36 => {
                    let f = 50.0 + 70.0 * (-t / 0.03).exp();
                    phase += std::f64::consts::TAU * f / sr;
                    0.8 * phase.sin() + 0.05 * noise
                }
                38 => 0.6 * noise + 0.3 * (std::f64::consts::TAU * 185.0 * t).sin(),
                _ => {
                    // first difference pushes the noise toward high frequencies
                    let hp = noise - prev;
                    prev = noise;
                    0.4 * hp
                }
            };
            out[start + i] += 0.3 * env * v;
        }
    }
    out
}

/// Derive an independent per-piece seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_piece(seed: u64, cfg: &SynthConfig) -> Result<ToyPiece> {
    let pool = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.k_range;
    let k = rng.random_range(lo..=hi.min(pool.len()));
    let chosen = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
    let mut chosen: Vec<InstrumentIndex> = chosen.into_iter().map(|i| pool[i]).collect();
    chosen.sort();
    let len = (cfg.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut stems = BTreeMap::new();
    let mut notes = NoteMap::new();
    for inst in chosen {
        let mut list = if inst.is_unpitched() {
            drum_notes(cfg, &mut rng)
        } else {
            pitched_notes(inst, &recipe(inst), cfg, &mut rng)
        };
        if list.is_empty() {
            // guarantee every drawn instrument plays at least once
            list = if inst.is_unpitched() {
                vec![NoteEvent { pitch: 36, onset_s: 0.0, offset_s: 0.01, instrument: inst }]
            } else {
                let rc = recipe(inst);
                vec![NoteEvent { pitch: rc.pitch_lo, onset_s: 0.0, offset_s: q(cfg.grid_s.min(cfg.duration_s)), instrument: inst }]
            };
        }
        let audio = if inst.is_unpitched() {
            render_drums(&list, len, &mut rng)
        } else {
            render_pitched(&list, &recipe(inst), len, &mut rng)
        };
        stems.insert(inst, Waveform::from_f64(&audio, SAMPLE_RATE));
        notes.insert(inst, list);
    }
    let mut mix = vec![0.0f64; len];
    for s in stems.values() {
        for (m, &v) in mix.iter_mut().zip(&s.samples) {
            *m += v as f64;
        }
    }
    let labels = condition_vector(&notes.keys().copied().collect::<Vec<_>>());
    Ok(ToyPiece { name: format!("piece_{seed:016x}"), seed, mix: Waveform::from_f64(&mix, SAMPLE_RATE), stems, notes, labels })
}

/// In-memory pieces with seeds derived from `seed`.
pub fn generate_pieces(seed: u64, n: usize, cfg: &SynthConfig) -> Result<Vec<ToyPiece>> {
    (0..n)
        .map(|i| {
            let mut p = generate_piece(derive_seed(seed, i as u64), cfg)?;
            p.name = format!("piece_{i:04}");
            Ok(p)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::domain(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub split: Split,
    pub seed: u64,
    /// Piece directory, relative to the manifest's directory.
    pub dir: PathBuf,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Split sizes for `n` pieces: train and validation are rounded, test takes the rest.
pub fn split_counts(n: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3]> {
    let (a, b, c) = ratios;
    ensure!(a >= 0.0 && b >= 0.0 && c >= 0.0, "split ratios must be non-negative");
    ensure!((a + b + c - 1.0).abs() < 1e-9, "split ratios sum to {} instead of 1", a + b + c);
    let train = ((n as f64) * a).round() as usize;
    let val = (((n as f64) * b).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    Ok([train, val, n - train - val])
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::Format { path: file.clone(), what: "manifest", offset: i as u64, msg: m.to_string() };
            if f.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            entries.push(ManifestEntry {
                name: f[0].to_string(),
                split: Split::parse(f[1]).map_err(|_| bad("unknown split"))?,
                seed: f[2].parse().map_err(|_| bad("bad seed"))?,
                dir: PathBuf::from(f[3]),
                duration_s: f[4].parse().map_err(|_| bad("bad duration"))?,
            });
        }
        Ok(Manifest { root, entries })
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn piece_dir(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.dir)
    }

    pub fn load_piece(&self, e: &ManifestEntry) -> Result<ToyPiece> {
        read_piece(&self.piece_dir(e), &e.name, e.seed)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<ToyPiece>> {
        self.split(split).into_iter().map(|e| self.load_piece(e)).collect()
    }
}

pub fn write_piece(dir: &Path, piece: &ToyPiece) -> Result<()> {
    let stems = dir.join("stems");
    fs::create_dir_all(&stems).map_err(|e| Error::io(&stems, e))?;
    write_wav(&dir.join("mix.wav"), &piece.mix, WavFormat::Float32)?;
    for (inst, w) in &piece.stems {
        write_wav(&stems.join(format!("{}.wav", inst.slug())), w, WavFormat::Float32)?;
    }
    save_midi(&piece.notes, &dir.join("notes.mid"))
}

pub fn read_piece(dir: &Path, name: &str, seed: u64) -> Result<ToyPiece> {
    let mix = read_wav(&dir.join("mix.wav"))?.to_system_rate();
    let notes = load_midi(&dir.join("notes.mid"), PitchPolicy::Drop)?;
    let mut stems = BTreeMap::new();
    for inst in notes.keys() {
        let p = dir.join("stems").join(format!("{}.wav", inst.slug()));
        if p.exists() {
            stems.insert(*inst, read_wav(&p)?.to_system_rate());
        }
    }
    let labels = condition_vector(&notes.iter().filter(|(_, n)| !n.is_empty()).map(|(i, _)| *i).collect::<Vec<_>>());
    Ok(ToyPiece { name: name.to_string(), seed, mix, stems, notes, labels })
}

/// Write `n` pieces plus a manifest under `dir`, generating up to `jobs`
/// pieces at a time. Output does not depend on `jobs`.
pub fn generate_corpus(
    dir: &Path,
    seed: u64,
    n: usize,
    ratios: (f64, f64, f64),
    cfg: &SynthConfig,
    jobs: usize,
) -> Result<Manifest> {
    cfg.validate()?;
    let counts = split_counts(n, ratios)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = crate::par::map(jobs, n, |i| {
        let split = if i < counts[0] {
            Split::Train
        } else if i < counts[0] + counts[1] {
            Split::Validation
        } else {
            Split::Test
        };
        let pseed = derive_seed(seed, i as u64);
        let mut piece = generate_piece(pseed, cfg)?;
        piece.name = format!("piece_{i:04}");
        let rel = PathBuf::from(split.as_str()).join(&piece.name);
        write_piece(&dir.join(&rel), &piece)?;
        Ok(ManifestEntry { name: piece.name, split, seed: pseed, dir: rel, duration_s: cfg.duration_s })
    })?;
    let mut tsv = String::from("name\tsplit\tseed\tdir\tduration_s\n");
    for e in &entries {
        let _ = writeln!(tsv, "{}\t{}\t{}\t{}\t{}", e.name, e.split.as_str(), e.seed, e.dir.display(), e.duration_s);
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, tsv).map_err(|e| Error::io(&mpath, e))?;
    Ok(Manifest { root: dir.to_path_buf(), entries })
}
