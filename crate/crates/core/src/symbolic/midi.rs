//! Standard MIDI File reading and writing (formats 0 and 1).
//!
//! Reading tracks the current program per (track, channel); channel 10
//! (index 9) is the drum channel and maps to program 128. Writing emits one
//! track per instrument at 500 ticks per quarter and 120 bpm, so one tick is
//! one millisecond.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use super::{sort_notes, NoteEvent, NoteMap, MAX_PITCH, MIN_PITCH};
use crate::error::{Error, Result};
use crate::taxonomy::{map_program, InstrumentIndex, DRUM_PROGRAM};

const DRUM_CHANNEL: u8 = 9;
const WRITE_PPQ: u16 = 500;
const WRITE_TEMPO: u32 = 500_000;
const DEFAULT_TEMPO: u32 = 500_000;
const DRUM_LENGTH_S: f64 = 0.01;

/// What to do with notes outside the 88-key range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PitchPolicy {
    #[default]
    Drop,
    Clamp,
}

fn fmt_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), what: "MIDI", offset: offset as u64, msg: msg.into() }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn need(&self, n: usize) -> Result<()> {
        if self.pos + n > self.b.len() {
            return Err(fmt_err(self.path, self.pos, "unexpected end of data"));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        self.need(1)?;
        self.pos += 1;
        Ok(self.b[self.pos - 1])
    }

    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        self.need(n)?;
        self.pos += n;
        Ok(&self.b[self.pos - n..self.pos])
    }

    fn u16(&mut self) -> Result<u16> {
        let s = self.bytes(2)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.bytes(4)?;
        Ok(u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn varlen(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut v: u32 = 0;
        for _ in 0..4 {
            let byte = self.u8()?;
            v = (v << 7) | (byte & 0x7f) as u32;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(fmt_err(self.path, start, "variable-length quantity longer than 4 bytes"))
    }
}

enum Timing {
    Ppq(u16),
    /// Ticks per second for SMPTE division.
    Smpte(f64),
}

#[derive(Debug)]
enum RawKind {
    On { channel: u8, key: u8 },
    Off { channel: u8, key: u8 },
    Program { channel: u8, program: u8 },
}

struct RawEvent {
    tick: u64,
    track: usize,
    seq: usize,
    kind: RawKind,
}

fn parse_track(r: &mut Reader, end: usize, track: usize, events: &mut Vec<RawEvent>, tempos: &mut Vec<(u64, u32)>) -> Result<()> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    while r.pos < end {
        tick += r.varlen()? as u64;
        let at = r.pos;
        let mut status = r.u8()?;
        let first_data = if status < 0x80 {
            let s = running.ok_or_else(|| fmt_err(r.path, at, "running status without a previous status byte"))?;
            let d = status;
            status = s;
            Some(d)
        } else {
            None
        };
        match status {
            0xFF => {
                let kind = r.u8()?;
                let len = r.varlen()? as usize;
                let data = r.bytes(len)?;
                if kind == 0x51 && len == 3 {
                    tempos.push((tick, u32::from_be_bytes([0, data[0], data[1], data[2]])));
                }
                if kind == 0x2F {
                    break;
                }
            }
            0xF0 | 0xF7 => {
                let len = r.varlen()? as usize;
                r.bytes(len)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let channel = status & 0x0f;
                let d1 = match first_data {
                    Some(d) => d,
                    None => r.u8()?,
                };
                let two = !matches!(status & 0xf0, 0xC0 | 0xD0);
                let d2 = if two { r.u8()? } else { 0 };
                let kind = match status & 0xf0 {
                    0x90 if d2 > 0 => Some(RawKind::On { channel, key: d1 }),
                    0x90 | 0x80 => Some(RawKind::Off { channel, key: d1 }),
                    0xC0 => Some(RawKind::Program { channel, program: d1 }),
                    _ => None,
                };
                if let Some(kind) = kind {
                    events.push(RawEvent { tick, track, seq: events.len(), kind });
                }
            }
            _ => return Err(fmt_err(r.path, at, format!("unexpected status byte 0x{status:02X}"))),
        }
    }
    r.pos = end;
    Ok(())
}

/// Converts ticks to seconds through a tempo map.
struct TempoMap {
    timing: Timing,
    /// `(tick, seconds at tick, microseconds per quarter from tick on)`
    segments: Vec<(u64, f64, u32)>,
}

impl TempoMap {
    fn new(timing: Timing, mut tempos: Vec<(u64, u32)>) -> Self {
        tempos.sort_by_key(|&(t, _)| t);
        let mut segments = vec![(0u64, 0.0f64, DEFAULT_TEMPO)];
        for (tick, tempo) in tempos {
            let &(t0, s0, q0) = segments.last().unwrap();
            let s = s0 + Self::span(&timing, tick - t0, q0);
            if tick == t0 {
                segments.last_mut().unwrap().2 = tempo;
            } else {
                segments.push((tick, s, tempo));
            }
        }
        Self { timing, segments }
    }

    fn span(timing: &Timing, ticks: u64, tempo: u32) -> f64 {
        match timing {
            Timing::Ppq(ppq) => ticks as f64 * tempo as f64 / (1e6 * *ppq as f64),
            Timing::Smpte(tps) => ticks as f64 / tps,
        }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let i = self.segments.partition_point(|&(t, _, _)| t <= tick) - 1;
        let (t0, s0, q) = self.segments[i];
        s0 + Self::span(&self.timing, tick - t0, q)
    }
}

/// `t + 10 ms`, landing exactly on the frame grid when `t` is on it.
fn one_frame_after(t: f64) -> f64 {
    let f = t * super::FRAME_RATE;
    if (f - f.round()).abs() < 1e-9 {
        super::frame_to_time(f.round() as usize + 1)
    } else {
        t + DRUM_LENGTH_S
    }
}

/// Parse SMF bytes into notes grouped by instrument class.
pub fn parse_midi(b: &[u8], path: &Path, policy: PitchPolicy) -> Result<NoteMap> {
    let mut r = Reader { b, pos: 0, path };
    if r.bytes(4).map_err(|_| fmt_err(path, 0, "missing MThd header"))? != b"MThd" {
        return Err(fmt_err(path, 0, "missing MThd header"));
    }
    let hlen = r.u32()? as usize;
    if hlen < 6 {
        return Err(fmt_err(path, 4, "header chunk shorter than 6 bytes"));
    }
    let format = r.u16()?;
    let ntracks = r.u16()? as usize;
    let division = r.u16()?;
    r.bytes(hlen - 6)?;
    if format > 2 {
        return Err(fmt_err(path, 8, format!("unknown SMF format {format}")));
    }
    let timing = if division & 0x8000 != 0 {
        let fps = -((division >> 8) as u8 as i8) as f64;
        let fps = if fps == 29.0 { 29.97 } else { fps };
        Timing::Smpte(fps * (division & 0xff) as f64)
    } else if division == 0 {
        return Err(fmt_err(path, 12, "zero ticks per quarter note"));
    } else {
        Timing::Ppq(division)
    };

    let mut events = Vec::new();
    let mut tempos = Vec::new();
    let mut track = 0;
    while track < ntracks && r.pos < b.len() {
        let at = r.pos;
        let id: [u8; 4] = r.bytes(4)?.try_into().unwrap();
        let len = r.u32()? as usize;
        let end = r.pos + len;
        if end > b.len() {
            return Err(fmt_err(path, at, format!("chunk length {len} overruns file")));
        }
        if &id == b"MTrk" {
            parse_track(&mut r, end, track, &mut events, &mut tempos)?;
            track += 1;
        } else {
            r.pos = end;
        }
    }
    if track < ntracks {
        return Err(fmt_err(path, r.pos, format!("header announces {ntracks} tracks, found {track}")));
    }

    let tmap = TempoMap::new(timing, tempos);
    events.sort_by_key(|e| (e.tick, e.track, e.seq));
    let mut programs: HashMap<(usize, u8), u8> = HashMap::new();
    let mut open: HashMap<(usize, u8, u8), VecDeque<(f64, InstrumentIndex)>> = HashMap::new();
    let mut out: NoteMap = BTreeMap::new();
    let mut push = |key: u8, on: f64, off: f64, inst: InstrumentIndex, drum: bool| {
        let pitch = if (MIN_PITCH..=MAX_PITCH).contains(&key) {
            key
        } else {
            match policy {
                PitchPolicy::Drop => return,
                PitchPolicy::Clamp => key.clamp(MIN_PITCH, MAX_PITCH),
            }
        };
        let off = if drum { one_frame_after(on) } else { off.max(one_frame_after(on)) };
        out.entry(inst).or_default().push(NoteEvent { pitch, onset_s: on, offset_s: off, instrument: inst });
    };
    for e in &events {
        match e.kind {
            RawKind::Program { channel, program } => {
                programs.insert((e.track, channel), program);
            }
            RawKind::On { channel, key } => {
                let program = if channel == DRUM_CHANNEL {
                    DRUM_PROGRAM
                } else {
                    programs.get(&(e.track, channel)).copied().unwrap_or(0)
                };
                let inst = map_program(program as usize)?;
                open.entry((e.track, channel, key)).or_default().push_back((tmap.seconds(e.tick), inst));
            }
            RawKind::Off { channel, key } => {
                if let Some((on, inst)) = open.get_mut(&(e.track, channel, key)).and_then(|q| q.pop_front()) {
                    push(key, on, tmap.seconds(e.tick), inst, channel == DRUM_CHANNEL);
                }
            }
        }
    }
    // Unterminated notes end at the last event time.
    let last = events.last().map(|e| tmap.seconds(e.tick)).unwrap_or(0.0);
    let mut rest: Vec<_> = open.into_iter().collect();
    rest.sort_by_key(|((t, c, k), _)| (*t, *c, *k));
    for ((_, channel, key), q) in rest {
        for (on, inst) in q {
            push(key, on, last, inst, channel == DRUM_CHANNEL);
        }
    }
    for notes in out.values_mut() {
        sort_notes(notes);
    }
    Ok(out)
}

pub fn load_midi(path: &Path, policy: PitchPolicy) -> Result<NoteMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_midi(&bytes, path, policy)
}

fn write_varlen(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = (v & 0x7f) as u8 | 0x80;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

fn chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

fn seconds_to_ticks(s: f64) -> u64 {
    (s * 1000.0).round().max(0.0) as u64
}

/// Encode notes as a format-1 SMF: a tempo track plus one track per instrument.
pub fn encode_midi(notes: &NoteMap) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header = Vec::new();
    header.extend_from_slice(&1u16.to_be_bytes());
    header.extend_from_slice(&((notes.len() + 1) as u16).to_be_bytes());
    header.extend_from_slice(&WRITE_PPQ.to_be_bytes());
    chunk(&mut out, b"MThd", &header);

    let mut tempo = vec![0x00, 0xFF, 0x51, 0x03];
    tempo.extend_from_slice(&WRITE_TEMPO.to_be_bytes()[1..]);
    tempo.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
    chunk(&mut out, b"MTrk", &tempo);

    let mut melodic_channels = (0u8..16).filter(|&c| c != DRUM_CHANNEL).cycle();
    for (inst, list) in notes {
        let channel = if inst.is_unpitched() { DRUM_CHANNEL } else { melodic_channels.next().unwrap() };
        let mut body = Vec::new();
        let name = inst.name().as_bytes();
        body.extend_from_slice(&[0x00, 0xFF, 0x03]);
        write_varlen(&mut body, name.len() as u32);
        body.extend_from_slice(name);
        if channel != DRUM_CHANNEL {
            body.extend_from_slice(&[0x00, 0xC0 | channel, inst.program()]);
        }
        // (tick, is_on, pitch); offs sort before ons at equal ticks
        let mut evs: Vec<(u64, bool, u8)> = Vec::with_capacity(list.len() * 2);
        for n in list {
            let on = seconds_to_ticks(n.onset_s);
            let off = seconds_to_ticks(n.offset_s).max(on + 1);
            evs.push((on, true, n.pitch));
            evs.push((off, false, n.pitch));
        }
        evs.sort();
        let mut last = 0u64;
        for (tick, is_on, pitch) in evs {
            write_varlen(&mut body, (tick - last) as u32);
            last = tick;
            if is_on {
                body.extend_from_slice(&[0x90 | channel, pitch, 100]);
            } else {
                body.extend_from_slice(&[0x80 | channel, pitch, 0]);
            }
        }
        body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
        chunk(&mut out, b"MTrk", &body);
    }
    out
}

pub fn save_midi(notes: &NoteMap, path: &Path) -> Result<()> {
    fs::write(path, encode_midi(notes)).map_err(|e| Error::io(path, e))
}
