//! C ABI for amt-core.
//!
//! Models and note lists are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns an
//! `AmtStatus`; on failure `amt_last_error` describes the problem. Handles are
//! not thread-safe: use one handle per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::OnceLock;

use amt_core::dsp::resample::resample;
use amt_core::dsp::{MelExtractor, Waveform, SAMPLE_RATE};
use amt_core::metrics::sdr;
use amt_core::recognizer::predict_conditions;
use amt_core::symbolic::{save_midi, NoteEvent, NoteMap};
use amt_core::taxonomy::{InstrumentIndex, NUM_CLASSES};
use amt_core::trainer::ModelBundle;
use amt_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmtStatus {
    Ok = 0,
    /// Invalid argument or input outside an operation's domain.
    Domain = 1,
    /// File could not be read or written, or its contents are malformed.
    Io = 2,
    /// A required pointer argument was null.
    Null = 3,
    /// Internal failure; the handle involved should be discarded.
    Panic = 4,
}

/// Bits reported by `amt_model_components`.
pub const AMT_COMPONENT_RECOGNIZER: u32 = 1;
pub const AMT_COMPONENT_TRANSCRIBER: u32 = 2;
pub const AMT_COMPONENT_SEPARATOR: u32 = 4;

/// Default threshold on recognizer probabilities.
pub const AMT_DEFAULT_THRESHOLD: f64 = 0.5;

/// One transcribed note.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmtNote {
    /// Instrument class index in `[0, amt_num_classes())`.
    pub instrument: u32,
    /// MIDI pitch in `[21, 108]`.
    pub pitch: u32,
    pub onset_s: f64,
    pub offset_s: f64,
}

/// A loaded checkpoint.
pub struct AmtModel {
    bundle: ModelBundle,
}

/// Notes produced by `amt_transcribe`, sorted by instrument then onset.
pub struct AmtNotes {
    notes: Vec<AmtNote>,
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn domain(msg: impl Into<String>) -> Failure {
    Failure::Core(Error::domain(msg))
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AmtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AmtStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is null"));
            AmtStatus::Null
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            if e.exit_code() == 2 {
                AmtStatus::Io
            } else {
                AmtStatus::Domain
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal error: {msg}"));
            AmtStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| domain(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Audio at the system rate, zero-padded to whole hops.
unsafe fn audio_arg(samples: *const f32, len: usize, sample_rate: u32) -> Result<Waveform, Failure> {
    if samples.is_null() {
        return Err(Failure::Null("samples"));
    }
    if len == 0 {
        return Err(domain("no audio samples"));
    }
    if sample_rate == 0 {
        return Err(domain("sample rate must be positive"));
    }
    let w = Waveform::new(std::slice::from_raw_parts(samples, len).to_vec(), sample_rate);
    if !w.is_finite() {
        return Err(domain("audio contains non-finite samples"));
    }
    Ok(resample(&w, SAMPLE_RATE).pad_to_hop())
}

fn instrument(i: u32) -> Result<InstrumentIndex, Failure> {
    Ok(InstrumentIndex::new(i as usize)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn amt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread (empty after a success).
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn amt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Number of instrument classes (39).
#[no_mangle]
pub extern "C" fn amt_num_classes() -> u32 {
    NUM_CLASSES as u32
}

/// Static name of an instrument class, or null when out of range.
#[no_mangle]
pub extern "C" fn amt_instrument_name(index: u32) -> *const c_char {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    let names = NAMES.get_or_init(|| InstrumentIndex::all().map(|i| CString::new(i.name()).unwrap()).collect());
    names.get(index as usize).map_or(ptr::null(), |n| n.as_ptr())
}

/// Load a checkpoint written by `amt train-ir` or `amt train-amt`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn amt_model_load(path: *const c_char, out: *mut *mut AmtModel) -> AmtStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let bundle = ModelBundle::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AmtModel { bundle }));
        Ok(())
    })
}

/// Release a model; null is ignored.
///
/// # Safety
/// `model` must come from `amt_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amt_model_free(model: *mut AmtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Bitmask of `AMT_COMPONENT_*` values present in the model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn amt_model_components(model: *const AmtModel, out: *mut u32) -> AmtStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let b = &m.bundle;
        *out = (b.recognizer.is_some() as u32) * AMT_COMPONENT_RECOGNIZER
            | (b.transcriber.is_some() as u32) * AMT_COMPONENT_TRANSCRIBER
            | (b.separator.is_some() as u32) * AMT_COMPONENT_SEPARATOR;
        Ok(())
    })
}

/// Per-class presence probabilities for a recording.
///
/// # Safety
/// `samples` must hold `len` floats; `probs` must have room for
/// `probs_len >= amt_num_classes()` doubles.
#[no_mangle]
pub unsafe extern "C" fn amt_recognize(
    model: *const AmtModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    probs: *mut f64,
    probs_len: usize,
) -> AmtStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if probs.is_null() {
            return Err(Failure::Null("probs"));
        }
        if probs_len < NUM_CLASSES {
            return Err(domain(format!("probability buffer holds {probs_len} values, need {NUM_CLASSES}")));
        }
        let audio = audio_arg(samples, len, sample_rate)?;
        let ir = m.bundle.recognizer()?;
        let p = ir.predict(&m.bundle.ps, &MelExtractor::new().logmel(&audio)?)?;
        std::slice::from_raw_parts_mut(probs, NUM_CLASSES).copy_from_slice(&p);
        Ok(())
    })
}

/// Transcribe a recording for the given instrument classes. With
/// `n_conditions == 0` the classes are predicted by the model's recognizer
/// at `AMT_DEFAULT_THRESHOLD`.
///
/// # Safety
/// `samples` must hold `len` floats, `conditions` must hold `n_conditions`
/// values (it may be null when `n_conditions == 0`), `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn amt_transcribe(
    model: *const AmtModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    conditions: *const u32,
    n_conditions: usize,
    onset_threshold: f64,
    frame_threshold: f64,
    out: *mut *mut AmtNotes,
) -> AmtStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        if n_conditions > 0 && conditions.is_null() {
            return Err(Failure::Null("conditions"));
        }
        let given: Vec<InstrumentIndex> = if n_conditions == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(conditions, n_conditions).iter().map(|&c| instrument(c)).collect::<Result<_, _>>()?
        };
        let audio = audio_arg(samples, len, sample_rate)?;
        let t = m.bundle.transcriber()?;
        let mel = MelExtractor::new().logmel(&audio)?;
        let conds = if given.is_empty() {
            let ir = m.bundle.recognizer().map_err(|_| domain("no conditions given and the model has no recognizer"))?;
            predict_conditions(&ir.predict(&m.bundle.ps, &mel)?, AMT_DEFAULT_THRESHOLD)
        } else {
            given
        };
        let notes = t.transcribe_piece(&m.bundle.ps, &mel, &conds, onset_threshold, frame_threshold)?;
        let flat = notes
            .values()
            .flatten()
            .map(|n| AmtNote { instrument: n.instrument.get() as u32, pitch: n.pitch as u32, onset_s: n.onset_s, offset_s: n.offset_s })
            .collect();
        *out = Box::into_raw(Box::new(AmtNotes { notes: flat }));
        Ok(())
    })
}

/// Number of notes in a list (0 for null).
///
/// # Safety
/// `notes` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amt_notes_len(notes: *const AmtNotes) -> usize {
    notes.as_ref().map_or(0, |n| n.notes.len())
}

/// Copy note `index` into `out`.
///
/// # Safety
/// `notes` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn amt_notes_get(notes: *const AmtNotes, index: usize, out: *mut AmtNote) -> AmtStatus {
    guard(|| {
        let n = non_null(notes, "notes")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let note = n.notes.get(index).ok_or_else(|| domain(format!("note index {index} out of range ({})", n.notes.len())))?;
        *out = *note;
        Ok(())
    })
}

/// Write the notes as a Standard MIDI File, one track per instrument.
///
/// # Safety
/// `notes` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn amt_notes_write_midi(notes: *const AmtNotes, path: *const c_char) -> AmtStatus {
    guard(|| {
        let n = non_null(notes, "notes")?;
        let path = path_arg(path, "path")?;
        let mut map = NoteMap::new();
        for note in &n.notes {
            let inst = instrument(note.instrument)?;
            let ev = NoteEvent::new(note.pitch.min(255) as u8, note.onset_s, note.offset_s, inst)?;
            map.entry(inst).or_default().push(ev);
        }
        Ok(save_midi(&map, &path)?)
    })
}

/// Release a note list; null is ignored.
///
/// # Safety
/// `notes` must come from `amt_transcribe` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amt_notes_free(notes: *mut AmtNotes) {
    if !notes.is_null() {
        drop(Box::from_raw(notes));
    }
}

/// Separate one instrument. The output has the input's length and sample
/// rate. The separator is conditioned the way it was trained (transcriber
/// posteriors or no roll); models trained on ground-truth rolls are
/// rejected.
///
/// # Safety
/// `samples` must hold `len` floats and `out` must have room for `out_len`
/// floats.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn amt_separate(
    model: *const AmtModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    instrument_index: u32,
    out: *mut f32,
    out_len: usize,
) -> AmtStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if out_len != len {
            return Err(domain(format!("output buffer holds {out_len} samples, input has {len}")));
        }
        let inst = instrument(instrument_index)?;
        let audio = audio_arg(samples, len, sample_rate)?;
        let sep = m.bundle.separator()?;
        let mel = MelExtractor::new().logmel(&audio)?;
        let roll = m.bundle.separation_roll(&mel, inst)?;
        let est = sep.separate(&m.bundle.ps, &audio, inst, &roll)?.waveform;
        let est = resample(&est, sample_rate).fit_to(len);
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&est.samples);
        Ok(())
    })
}

/// Source-to-distortion ratio in dB (capped at 100).
///
/// # Safety
/// `reference` and `estimate` must each hold `len` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amt_sdr(reference: *const f32, estimate: *const f32, len: usize, out: *mut f64) -> AmtStatus {
    guard(|| {
        if reference.is_null() {
            return Err(Failure::Null("reference"));
        }
        if estimate.is_null() {
            return Err(Failure::Null("estimate"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let r = std::slice::from_raw_parts(reference, len);
        let e = std::slice::from_raw_parts(estimate, len);
        *out = sdr(r, e)?.ok_or_else(|| domain("SDR is undefined for a silent reference"))?;
        Ok(())
    })
}
