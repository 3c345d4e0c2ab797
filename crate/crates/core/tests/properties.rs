mod common;

use amt_core::dsp::{Stft, StftConfig};
use amt_core::metrics::{match_notes, sdr, MatchConfig, OffsetMode};
use amt_core::symbolic::{decode_notes, render_rolls, time_to_frame, PianoRoll, N_PITCHES, MIN_PITCH};
use amt_core::taxonomy::{map_program, InstrumentIndex, NUM_CLASSES};
use common::{brute_force_matching, crowded_notes, grid_notes, piano};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #[test]
    fn every_program_maps_to_a_class(p in 0usize..=128) {
        let i = map_program(p).unwrap();
        prop_assert!(i.get() < NUM_CLASSES);
        prop_assert_eq!(i.is_unpitched(), p == 128);
    }

    #[test]
    fn out_of_range_programs_are_rejected(p in 129usize..100_000) {
        prop_assert!(map_program(p).is_err());
    }

    #[test]
    fn render_then_decode_is_identity(seed in any::<u64>()) {
        let notes = grid_notes(&mut rng(seed), 300, 40, 2);
        let roll = render_rolls(&notes, 3.0, piano()).unwrap();
        prop_assert_eq!(decode_notes(&roll, 0.5, 0.5).unwrap(), notes);
    }

    /// Each cell against a direct reading of the rendering rule.
    #[test]
    fn rendered_cells_match_a_brute_force_roll(seed in any::<u64>()) {
        // gap 0 allows touching and overlapping notes on one pitch
        let notes = grid_notes(&mut rng(seed), 120, 25, 0);
        let roll = render_rolls(&notes, 1.2, piano()).unwrap();
        for t in 0..roll.frames {
            for k in 0..N_PITCHES {
                let here: Vec<_> = notes.iter().filter(|n| (n.pitch - MIN_PITCH) as usize == k).collect();
                let onset = here.iter().any(|n| time_to_frame(n.onset_s) == t);
                let active = here.iter().any(|n| {
                    let on = time_to_frame(n.onset_s);
                    (on..time_to_frame(n.offset_s).max(on + 1)).contains(&t)
                });
                prop_assert_eq!(roll.onset_at(t, k), onset as u8 as f64);
                prop_assert_eq!(roll.frame_at(t, k), active as u8 as f64);
            }
        }
    }

    /// Raising the onset threshold never adds notes; raising the frame
    /// threshold never lengthens the transcription.
    #[test]
    fn decoding_is_monotone_in_thresholds(seed in any::<u64>(), a in 0.05f64..0.95, b in 0.05f64..0.95) {
        use rand::Rng;
        let mut r = rng(seed);
        let frames = 60;
        let cells = frames * N_PITCHES;
        // sparse random posteriors so peaks and sustains both occur
        let onset = (0..cells).map(|_| if r.random_bool(0.05) { r.random::<f64>() } else { 0.0 }).collect();
        let frame = (0..cells).map(|_| if r.random_bool(0.3) { r.random::<f64>() } else { 0.0 }).collect();
        let roll = PianoRoll::new(frames, onset, frame, piano()).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let n = |t: f64| decode_notes(&roll, t, 0.5).unwrap().len();
        prop_assert!(n(hi) <= n(lo));
        let total = |t: f64| decode_notes(&roll, 0.5, t).unwrap().iter().map(|n| n.duration_s()).sum::<f64>();
        prop_assert!(total(hi) <= total(lo) + 1e-9);
    }

    #[test]
    fn matching_is_maximum_and_valid(seed in any::<u64>(), with_offsets in any::<bool>()) {
        let mut r = rng(seed);
        let (refs, est) = (crowded_notes(&mut r, 6), crowded_notes(&mut r, 6));
        let cfg = MatchConfig::default();
        let mode = if with_offsets { OffsetMode::OnsetOffset } else { OffsetMode::Onset };
        let pairs = match_notes(&refs, &est, &cfg, mode);
        prop_assert_eq!(pairs.len(), brute_force_matching(&refs, &est, &cfg, mode));
        let mut used_r = vec![false; refs.len()];
        let mut used_e = vec![false; est.len()];
        for &(i, j) in &pairs {
            prop_assert!(common::admissible(&refs[i], &est[j], &cfg, mode));
            prop_assert!(!used_r[i] && !used_e[j]);
            used_r[i] = true;
            used_e[j] = true;
        }
    }

    #[test]
    fn sdr_of_a_scaled_reference_is_closed_form(seed in any::<u64>(), gain in -3.0f32..0.99) {
        use rand::Rng;
        let mut r = rng(seed);
        let x: Vec<f32> = (0..500).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f32> = x.iter().map(|v| v * gain).collect();
        let want = (-20.0 * ((1.0 - gain) as f64).abs().log10()).min(100.0);
        prop_assert!((sdr(&x, &y).unwrap().unwrap() - want).abs() < 1e-4);
    }

    #[test]
    fn stft_inverts(seed in any::<u64>(), hops in 8usize..60, mel in any::<bool>()) {
        use rand::Rng;
        let mut r = rng(seed);
        let cfg = if mel { StftConfig::MEL } else { StftConfig::SEPARATION };
        let x: Vec<f64> = (0..hops * cfg.hop).map(|_| r.random_range(-1.0..1.0)).collect();
        let s = Stft::new(cfg);
        let spec = s.forward(&x).unwrap();
        prop_assert_eq!(spec.shape().0, hops);
        let y = s.inverse(&spec, x.len()).unwrap();
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(err / norm < 1e-9, "relative error {}", err / norm);
    }

    #[test]
    fn condition_names_round_trip(i in 0usize..NUM_CLASSES) {
        let idx = InstrumentIndex::new(i).unwrap();
        prop_assert_eq!(amt_core::taxonomy::instrument_by_name(idx.name()), Some(idx));
    }
}
