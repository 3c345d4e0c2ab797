//! Model bundles and their checkpoint file.
//!
//! Layout (little-endian): `AMTK`, u32 version, u64 JSON length, JSON
//! metadata (configuration echo), u32 array count, then per array: u16 name
//! length, name, u8 kind (0 parameter, 1 buffer), u32 rank, u64 dims, f64
//! values.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RollSource, TrainScheme};
use crate::dsp::LogMelSpectrogram;
use crate::error::{ensure, Error, Result};
use crate::nn::{ParamStore, Tensor};
use crate::recognizer::{Recognizer, RecognizerConfig};
use crate::separator::{Separator, SeparatorConfig};
use crate::symbolic::PianoRoll;
use crate::taxonomy::InstrumentIndex;
use crate::transcriber::{Transcriber, TranscriberConfig};

const MAGIC: &[u8; 4] = b"AMTK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub recognizer: Option<RecognizerConfig>,
    pub transcriber: Option<TranscriberConfig>,
    pub separator: Option<SeparatorConfig>,
    pub scheme: Option<TrainScheme>,
    /// Initialization seed.
    pub seed: u64,
}

/// Models sharing one parameter store (names are prefixed per model).
pub struct ModelBundle {
    pub meta: BundleMeta,
    pub ps: ParamStore,
    pub recognizer: Option<Recognizer>,
    pub transcriber: Option<Transcriber>,
    pub separator: Option<Separator>,
}

impl ModelBundle {
    /// Freshly initialized models for every configuration present in `meta`.
    pub fn new(meta: BundleMeta) -> Result<Self> {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        let recognizer = meta.recognizer.clone().map(|c| Recognizer::new(&mut ps, &mut rng, c)).transpose()?;
        let transcriber = meta.transcriber.clone().map(|c| Transcriber::new(&mut ps, &mut rng, c)).transpose()?;
        let separator = meta.separator.clone().map(|c| Separator::new(&mut ps, &mut rng, c)).transpose()?;
        Ok(Self { meta, ps, recognizer, transcriber, separator })
    }

    pub fn recognizer(&self) -> Result<&Recognizer> {
        self.recognizer.as_ref().ok_or_else(|| Error::domain("checkpoint has no recognizer"))
    }

    pub fn transcriber(&self) -> Result<&Transcriber> {
        self.transcriber.as_ref().ok_or_else(|| Error::domain("checkpoint has no transcriber"))
    }

    pub fn separator(&self) -> Result<&Separator> {
        self.separator.as_ref().ok_or_else(|| Error::domain("checkpoint has no separator"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let ids: Vec<_> = self.ps.ids().collect();
        out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
        for id in ids {
            let name = self.ps.name(id).as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(u8::from(!self.ps.is_trainable(id)));
            let t = self.ps.get(id);
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.err(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(4, &format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let at = r.pos;
        let meta: BundleMeta =
            serde_json::from_slice(r.take(len)?).map_err(|e| r.err(at, &format!("bad metadata: {e}")))?;
        let mut bundle = Self::new(meta).map_err(|e| r.err(at, &format!("inconsistent metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut seen = 0;
        for _ in 0..count {
            let at = r.pos;
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.err(at, "parameter name is not UTF-8"))?;
            let _kind = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r.take(numel.checked_mul(8).ok_or_else(|| r.err(at, "array too large"))?)?;
            let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let id = bundle.ps.id(&name).ok_or_else(|| r.err(at, &format!("unexpected parameter {name}")))?;
            if bundle.ps.get(id).shape() != shape.as_slice() {
                return Err(r.err(at, &format!("{name} has shape {shape:?}, expected {:?}", bundle.ps.get(id).shape())));
            }
            bundle.ps.set(id, Tensor::new(shape, values));
            seen += 1;
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes"));
        }
        if seen != bundle.ps.len() {
            return Err(r.err(r.pos, &format!("{} of {} parameters present", seen, bundle.ps.len())));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Copy the transcriber weights of `other` into this bundle.
    pub fn load_transcriber_from(&mut self, other: &ModelBundle) -> Result<()> {
        let mine = self.meta.transcriber.as_ref().ok_or_else(|| Error::domain("bundle has no transcriber"))?;
        let theirs = other.meta.transcriber.as_ref().ok_or_else(|| Error::domain("checkpoint has no transcriber"))?;
        ensure!(mine == theirs, "pretrained transcriber configuration differs from the requested one");
        let prefix = crate::transcriber::PREFIX;
        let expected = self.ps.ids_with_prefix(prefix).count();
        let copied = self.ps.copy_from(&other.ps, prefix);
        ensure!(copied == expected, "copied {copied} of {expected} transcriber arrays");
        Ok(())
    }

    /// Where this bundle's separator expects its roll from.
    pub fn roll_source(&self) -> RollSource {
        self.meta.scheme.as_ref().map_or(RollSource::Transcriber, |s| s.id.roll_source())
    }

    /// The roll that conditions the separator for `instrument` when no
    /// reference notes are at hand: transcriber posteriors or zeros,
    /// following the training scheme.
    pub fn separation_roll(&self, mel: &LogMelSpectrogram, instrument: InstrumentIndex) -> Result<PianoRoll> {
        match self.roll_source() {
            RollSource::Transcriber => self.transcriber()?.posteriors(&self.ps, mel, instrument),
            RollSource::Zero => Ok(PianoRoll::zeros(mel.frames, instrument)),
            RollSource::GroundTruth => {
                Err(Error::domain("this separator was trained on ground-truth rolls; reference notes are required"))
            }
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: &str) -> Error {
        Error::Format { path: self.path.to_path_buf(), what: "checkpoint", offset: offset as u64, msg: msg.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(self.err(self.pos, "unexpected end of file"));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> BundleMeta {
        BundleMeta {
            recognizer: None,
            transcriber: Some(TranscriberConfig::tiny()),
            separator: Some(SeparatorConfig::tiny()),
            scheme: Some(TrainScheme::default()),
            seed: 3,
        }
    }

    #[test]
    fn roundtrip_preserves_every_array() {
        let mut b = ModelBundle::new(meta()).unwrap();
        let id = b.ps.id("t.out.bias").unwrap();
        b.ps.get_mut(id).data_mut()[0] = 42.5;
        let back = ModelBundle::from_bytes(&b.to_bytes(), Path::new("m.ckpt")).unwrap();
        assert_eq!(back.meta, b.meta);
        assert_eq!(back.ps.fingerprint(""), b.ps.fingerprint(""));
        assert_eq!(back.to_bytes(), b.to_bytes());
    }

    #[test]
    fn corruption_is_a_format_error_with_offset() {
        let b = ModelBundle::new(meta()).unwrap();
        let bytes = b.to_bytes();
        let e = ModelBundle::from_bytes(&bytes[..bytes.len() - 3], Path::new("m.ckpt")).err().unwrap();
        assert!(matches!(e, Error::Format { offset, .. } if offset > 0));
        assert_eq!(e.exit_code(), 2);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelBundle::from_bytes(&bad, Path::new("m.ckpt")).is_err());
    }

    #[test]
    fn transcriber_transfer_requires_matching_config() {
        let src = ModelBundle::new(BundleMeta { seed: 9, ..meta() }).unwrap();
        let mut dst = ModelBundle::new(meta()).unwrap();
        dst.load_transcriber_from(&src).unwrap();
        assert_eq!(dst.ps.fingerprint("t."), src.ps.fingerprint("t."));
        assert_ne!(dst.ps.fingerprint("s."), src.ps.fingerprint("s."));
        let other = ModelBundle::new(BundleMeta { transcriber: Some(TranscriberConfig::small()), ..meta() }).unwrap();
        assert!(dst.load_transcriber_from(&other).is_err());
    }
}
