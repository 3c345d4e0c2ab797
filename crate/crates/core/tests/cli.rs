//! End-to-end runs of the `amt` binary on a tiny synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use amt_core::metrics::REQUIRED_KEYS;
use amt_core::metrics::MetricReport;

fn amt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amt")).args(args).env_remove("AMT_CONFIG").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = amt(args);
    assert!(
        out.status.success(),
        "amt {args:?} exited with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `(piece name, piece dir)` of every manifest row in `split`.
fn pieces(corpus: &Path, split: &str) -> Vec<(String, PathBuf)> {
    fs::read_to_string(corpus.join("manifest.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .filter(|f| f[1] == split)
        .map(|f| (f[0].to_string(), corpus.join(f[3])))
        .collect()
}

fn report(stem: &Path) -> std::collections::BTreeMap<String, String> {
    let kv = MetricReport::parse_text(&fs::read_to_string(stem.with_extension("txt")).unwrap());
    for k in REQUIRED_KEYS {
        assert!(kv.contains_key(*k), "report lacks {k}");
    }
    assert!(stem.with_extension("tsv").exists());
    kv
}

#[test]
fn synth_train_infer_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = t.join("data");
    let common = ["--seed", "5", "--jobs", "2"];
    let synth = |out: &Path| {
        let mut a = vec!["synth-data", "--n", "5", "--duration", "2", "--split", "0.6,0.2,0.2", "--out", s(out)];
        a.extend(common);
        ok(&a);
    };
    synth(&data);
    // same seed, same bytes
    let again = t.join("again");
    synth(&again);
    assert_eq!(fs::read(data.join("manifest.tsv")).unwrap(), fs::read(again.join("manifest.tsv")).unwrap());
    let (name, dir) = pieces(&data, "test").remove(0);
    let (_, dir2) = pieces(&again, "test").remove(0);
    assert_eq!(fs::read(dir.join("mix.wav")).unwrap(), fs::read(dir2.join("mix.wav")).unwrap());
    assert_eq!(fs::read(dir.join("notes.mid")).unwrap(), fs::read(dir2.join("notes.mid")).unwrap());
    assert_eq!(pieces(&data, "train").len(), 3);

    let ir = t.join("ir.ckpt");
    ok(&["train-ir", "--data", s(&data), "--out", s(&ir), "--max-steps", "2", "--seed", "5"]);
    assert!(ir.exists() && ir.with_extension("log").exists());
    let amt_ckpt = t.join("ts.ckpt");
    ok(&["train-amt", "--data", s(&data), "--out", s(&amt_ckpt), "--scheme", "TS(s)", "--max-steps", "2", "--seed", "5"]);

    let mix = dir.join("mix.wav");
    let table = ok(&["recognize", s(&mix), "--ckpt", s(&ir)]);
    assert_eq!(table.lines().filter(|l| !l.trim().is_empty()).count(), 40, "{table}");

    // transcribe into the `<piece>/<instrument>.mid` layout evaluate reads
    let pred = t.join("pred");
    let piece_pred = pred.join(&name);
    ok(&["transcribe", s(&mix), "--ckpt", s(&amt_ckpt), "--conditions", "0,drums", "--out", s(&piece_pred)]);
    let mids: Vec<_> = fs::read_dir(&piece_pred).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(mids.len(), 2, "{mids:?}");
    ok(&["transcribe", s(&mix), "--ckpt", s(&amt_ckpt), "--use-ir", "--ir-ckpt", s(&ir), "--out", s(&t.join("by_ir"))]);

    let sep = t.join("sep");
    ok(&["separate", s(&mix), "--ckpt", s(&amt_ckpt), "--conditions", "piano", "--out", s(&sep)]);
    let wav = amt_core::dsp::read_wav(&sep.join(format!("{}.wav", amt_core::taxonomy::InstrumentIndex::new(0).unwrap().slug()))).unwrap();
    assert_eq!(wav.len(), amt_core::dsp::read_wav(&mix).unwrap().len());

    let rep = t.join("rep");
    ok(&["evaluate", "--ckpt", s(&amt_ckpt), "--ir-ckpt", s(&ir), "--data", s(&data), "--out", s(&rep)]);
    let kv = report(&rep);
    assert_ne!(kv["f1.flat.N"], "absent");
    assert_ne!(kv["sdr.source"], "absent");
    assert_ne!(kv["recognition.map.macro"], "absent");

    let frep = t.join("files");
    ok(&["evaluate", "--pred", s(&pred), "--ref", s(&data), "--split", "test", "--out", s(&frep)]);
    report(&frep);

    let hybrid = t.join("h.bin");
    ok(&["export-hybrid", s(&mix), "--midi", s(&dir.join("notes.mid")), "--out", s(&hybrid)]);
    let a = amt_core::symbolic::container::read_array(&hybrid).unwrap();
    assert_eq!(a.shape.len(), 3);
    assert_eq!(a.shape[1], 200);
}

#[test]
fn usage_and_io_errors_have_distinct_codes() {
    assert_eq!(amt(&["transcribe"]).status.code(), Some(1));
    assert_eq!(amt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(amt(&["--help"]).status.code(), Some(0));
    let out = amt(&["recognize", "/nonexistent/a.wav", "--ckpt", "/nonexistent/m.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let out = amt(&["synth-data", "--n", "2", "--out", "/tmp/x", "--split", "0.5,0.5,0.5"]);
    assert_eq!(out.status.code(), Some(1));
}
