use std::path::Path;

use amt_core::symbolic::midi::parse_midi;
use amt_core::symbolic::{NoteEvent, PitchPolicy};
use amt_core::taxonomy::{instrument_name, map_program, InstrumentIndex, NUM_CLASSES, NUM_PROGRAMS};

/// The program map matches a checked-in transcription of the mapping table,
/// row by row.
#[test]
fn program_map_matches_golden_file() {
    let golden = include_str!("golden/program_map.tsv");
    let rows: Vec<(usize, usize, &str)> = golden
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2])
        })
        .collect();
    assert_eq!(rows.len(), NUM_PROGRAMS);
    for (program, class, name) in rows {
        let got = map_program(program).unwrap();
        assert_eq!(got.get(), class, "program {program}");
        assert_eq!(instrument_name(class).unwrap(), name, "class {class}");
    }
    let classes: std::collections::BTreeSet<usize> = (0..NUM_PROGRAMS).map(|p| map_program(p).unwrap().get()).collect();
    assert_eq!(classes.len(), NUM_CLASSES);
}

fn track(body: &[u8]) -> Vec<u8> {
    let mut t = b"MTrk".to_vec();
    t.extend_from_slice(&(body.len() as u32).to_be_bytes());
    t.extend_from_slice(body);
    t
}

/// A hand-assembled format-1 file with a tempo change, running status,
/// a note-on of velocity 0 as note-off, and a drum channel.
#[test]
fn hand_assembled_midi_decodes_to_known_notes() {
    let mut smf = b"MThd".to_vec();
    smf.extend_from_slice(&[0, 0, 0, 6, 0, 1, 0, 3, 0x01, 0xE0]); // format 1, 3 tracks, 480 ppq
    // tempo: 120 bpm, then 60 bpm from tick 960
    smf.extend(track(&[
        0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, //
        0x87, 0x40, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40, // delta 960
        0x00, 0xFF, 0x2F, 0x00,
    ]));
    // channel 0: violin (program 40); A4 from 0.5 s to 1.0 s, C4 from 1.0 s
    // to 2.0 s (480 ticks at 60 bpm) using running status and velocity 0
    smf.extend(track(&[
        0x00, 0xC0, 40, //
        0x83, 0x60, 0x90, 69, 90, // delta 480
        0x83, 0x60, 69, 0, // running status, velocity 0 ends it at tick 960
        0x00, 60, 80, //
        0x83, 0x60, 0x80, 60, 0, //
        0x00, 0xFF, 0x2F, 0x00,
    ]));
    // channel 9: a kick at 0.25 s
    smf.extend(track(&[0x81, 0x70, 0x99, 36, 100, 0x3C, 0x89, 36, 0, 0x00, 0xFF, 0x2F, 0x00]));

    let notes = parse_midi(&smf, Path::new("hand.mid"), PitchPolicy::Drop).unwrap();
    let violin = map_program(40).unwrap();
    let drums = map_program(128).unwrap();
    assert_eq!(violin, InstrumentIndex::new(11).unwrap());
    assert_eq!(notes.len(), 2);
    let v = &notes[&violin];
    assert_eq!(v.len(), 2);
    let close = |n: &NoteEvent, p: u8, a: f64, b: f64| n.pitch == p && (n.onset_s - a).abs() < 1e-9 && (n.offset_s - b).abs() < 1e-9;
    assert!(close(&v[0], 69, 0.5, 1.0), "{:?}", v[0]);
    assert!(close(&v[1], 60, 1.0, 2.0), "{:?}", v[1]);
    let d = &notes[&drums];
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].pitch, 36);
    assert!((d[0].onset_s - 0.25).abs() < 1e-9);
    assert!(d[0].offset_s > d[0].onset_s);
}
