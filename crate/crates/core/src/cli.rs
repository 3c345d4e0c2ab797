//! Command-line front end (`amt <verb> ...`).
//!
//! Every verb parses and validates its flags before reading or writing any
//! file. Exit codes: 0 success, 1 usage or domain error, 2 I/O or malformed
//! input file.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dsp::{read_wav, write_wav, HybridProjector, MelExtractor, Stft, StftConfig, WavFormat, Waveform};
use crate::error::{ensure, Error, Result};
use crate::metrics::{sdr, MetricReport, SdrCell, SdrSummary};
use crate::nn::Tensor;
use crate::recognizer::predict_conditions;
use crate::separator::RollForm;
use crate::symbolic::container::{write_array, ArrayF32};
use crate::symbolic::{frame_to_time, load_midi, render_rolls, save_midi, NoteMap, PianoRoll, PitchPolicy};
use crate::synthdata::{generate_corpus, Manifest, Split, SynthConfig, MANIFEST_FILE};
use crate::taxonomy::{instrument_by_name, InstrumentIndex};
use crate::trainer::{
    evaluate, score_transcriptions, train_amt, train_recognizer, EvalOptions, ModelBundle, RollSource, RunLog,
    ToolkitConfig, TrainScheme, TranscriptionItem,
};

#[derive(Parser, Debug)]
#[command(name = "amt", version, about = "Multi-instrument transcription, recognition and separation toolkit")]
pub struct Cli {
    /// Seed for all randomness; overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file. Falls back to $AMT_CONFIG, then to built-in small presets.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-piece work (corpus generation, file-based evaluation).
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multitrack corpus with a manifest.
    SynthData(SynthDataArgs),
    /// Train the instrument recognizer.
    TrainIr(TrainIrArgs),
    /// Train transcriber and/or separator under a training scheme.
    TrainAmt(TrainAmtArgs),
    /// Print per-instrument presence probabilities for a recording.
    Recognize(RecognizeArgs),
    /// Transcribe a recording to one MIDI file per instrument.
    Transcribe(TranscribeArgs),
    /// Separate one waveform per instrument from a mixture.
    Separate(SeparateArgs),
    /// Score checkpoints on a corpus, or prediction files against references.
    Evaluate(EvaluateArgs),
    /// Write the piano-roll + spectrogram hybrid feature of a recording.
    ExportHybrid(ExportHybridArgs),
}

#[derive(Args, Debug)]
pub struct SynthDataArgs {
    /// Number of pieces.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Piece length in seconds (default from the configuration).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
    pub split: (f64, f64, f64),
}

#[derive(Args, Debug)]
pub struct TrainIrArgs {
    /// Corpus directory (or its manifest).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Run log (default: checkpoint path with a `.log` extension).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainAmtArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Scheme such as `T`, `TS(c)`, `pTS(s)`, `S_only`, `GT_upper_bound`
    /// (default from the configuration).
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<TrainScheme>,
    /// Checkpoint holding a trained transcriber (for pTS/ipTS).
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub roll_form: Option<RollFormArg>,
    /// Binarize the roll with a straight-through estimator.
    #[arg(long)]
    pub ste: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub joint_epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RollFormArg {
    Posterior,
    Binary,
}

#[derive(Args, Debug)]
pub struct RecognizeArgs {
    pub audio: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write the table as TSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where instrument conditions come from.
#[derive(Args, Debug)]
pub struct ConditionArgs {
    /// Comma-separated class indices or names, e.g. `0,38` or `piano,drums`.
    #[arg(long, value_parser = parse_condition_list, conflicts_with = "use_ir")]
    pub conditions: Option<ConditionList>,
    /// Predict conditions with the recognizer.
    #[arg(long)]
    pub use_ir: bool,
    /// Recognizer checkpoint (default: the main checkpoint, if it has one).
    #[arg(long)]
    pub ir_ckpt: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TranscribeArgs {
    pub audio: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub cond: ConditionArgs,
    /// Output directory; receives `<instrument>.mid` per condition.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub onset_threshold: Option<f64>,
    #[arg(long)]
    pub frame_threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SeparateArgs {
    pub audio: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub cond: ConditionArgs,
    /// Reference MIDI whose rolls condition the separator (required for
    /// GT_upper_bound checkpoints, optional otherwise).
    #[arg(long)]
    pub midi: Option<PathBuf>,
    /// Output directory; receives `<instrument>.wav` per condition.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Transcription/separation checkpoint.
    #[arg(long, requires = "data", conflicts_with_all = ["pred", "reference"])]
    pub ckpt: Option<PathBuf>,
    /// Recognizer checkpoint.
    #[arg(long, requires = "data", conflicts_with_all = ["pred", "reference"])]
    pub ir_ckpt: Option<PathBuf>,
    /// Corpus to evaluate checkpoints on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Corpus split (default: test with checkpoints, all with files).
    #[arg(long, value_parser = Split::parse)]
    pub split: Option<Split>,
    /// Use recognizer conditions instead of ground truth.
    #[arg(long, requires = "ir_ckpt")]
    pub use_ir: bool,
    /// Predictions: `<piece>/<instrument>.mid` and optionally `<piece>/<instrument>.wav`.
    #[arg(long, requires = "reference", conflicts_with = "data")]
    pub pred: Option<PathBuf>,
    /// References: a corpus, or piece directories with `notes.mid` and `stems/<instrument>.wav`.
    #[arg(long = "ref", requires = "pred")]
    pub reference: Option<PathBuf>,
    /// Report path stem; `.txt` and `.tsv` are written.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeatureArg {
    Mel,
    Stft,
}

#[derive(Args, Debug)]
pub struct ExportHybridArgs {
    pub audio: PathBuf,
    /// Transcriber checkpoint supplying the rolls (unless --midi is given).
    #[arg(long, required_unless_present = "midi")]
    pub ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub cond: ConditionArgs,
    /// Take rolls from a MIDI file instead of a transcriber.
    #[arg(long)]
    pub midi: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mel")]
    pub feature: FeatureArg,
    /// Output array file `[channels, frames, bins]`.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] if a >= 0.0 && b >= 0.0 && c >= 0.0 && (a + b + c - 1.0).abs() < 1e-9 => Ok((a, b, c)),
        _ => Err("expected three non-negative fractions summing to 1".into()),
    }
}

fn parse_scheme(s: &str) -> Result<TrainScheme, String> {
    TrainScheme::parse(s).map_err(|e| e.to_string())
}

/// Parsed `--conditions` value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionList(pub Vec<InstrumentIndex>);

fn parse_condition_list(s: &str) -> Result<ConditionList, String> {
    parse_conditions(s).map(ConditionList)
}

/// Class indices or names, comma-separated; duplicates are dropped.
pub fn parse_conditions(s: &str) -> Result<Vec<InstrumentIndex>, String> {
    let mut out = BTreeSet::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let inst = match tok.parse::<usize>() {
            Ok(i) => InstrumentIndex::new(i).map_err(|e| e.to_string())?,
            Err(_) => instrument_by_name(tok).ok_or_else(|| format!("unknown instrument {tok:?}"))?,
        };
        out.insert(inst);
    }
    if out.is_empty() {
        return Err("no instruments given".into());
    }
    Ok(out.into_iter().collect())
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn config(cli: &Cli) -> Result<ToolkitConfig> {
    let mut cfg = ToolkitConfig::resolve(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let jobs = cli.jobs as usize;
    match &cli.command {
        Command::SynthData(a) => synth_data(cli, a, jobs),
        Command::TrainIr(a) => train_ir_cmd(cli, a),
        Command::TrainAmt(a) => train_amt_cmd(cli, a),
        Command::Recognize(a) => recognize_cmd(cli, a),
        Command::Transcribe(a) => transcribe_cmd(cli, a),
        Command::Separate(a) => separate_cmd(cli, a),
        Command::Evaluate(a) => evaluate_cmd(cli, a, jobs),
        Command::ExportHybrid(a) => export_hybrid_cmd(cli, a),
    }
}

fn synth_data(cli: &Cli, a: &SynthDataArgs, jobs: usize) -> Result<()> {
    let mut cfg = config(cli)?;
    if let Some(d) = a.duration {
        cfg.synth = SynthConfig { duration_s: d, ..cfg.synth };
    }
    ensure!(a.n > 0, "--n must be positive");
    let m = generate_corpus(&a.out, cfg.train.seed, a.n, a.split, &cfg.synth, jobs)?;
    let count = |s| m.split(s).len();
    println!(
        "wrote {} pieces to {} (train {}, validation {}, test {})",
        m.entries.len(),
        a.out.join(MANIFEST_FILE).display(),
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test)
    );
    Ok(())
}

fn run_log(explicit: &Option<PathBuf>, ckpt: &Path) -> Result<RunLog> {
    let path = explicit.clone().unwrap_or_else(|| ckpt.with_extension("log"));
    RunLog::append_to(&path)
}

fn print_outcome(out: &crate::trainer::TrainOutcome, path: &Path) -> Result<()> {
    out.bundle.save(path)?;
    match out.best_metric {
        Some(m) => println!("{} steps, best validation metric {m:.4}; saved {}", out.steps, path.display()),
        None => println!("{} steps; saved {}", out.steps, path.display()),
    }
    Ok(())
}

fn train_ir_cmd(cli: &Cli, a: &TrainIrArgs) -> Result<()> {
    let mut cfg = config(cli)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if a.max_steps.is_some() {
        cfg.train.max_steps = a.max_steps;
    }
    cfg.validate()?;
    let m = Manifest::load(&a.data)?;
    let train = m.load_split(Split::Train)?;
    let val = m.load_split(Split::Validation)?;
    let mut log = run_log(&a.log, &a.out)?;
    let out = train_recognizer(&train, &val, &cfg, &mut log)?;
    print_outcome(&out, &a.out)
}

fn train_amt_cmd(cli: &Cli, a: &TrainAmtArgs) -> Result<()> {
    let mut cfg = config(cli)?;
    let mut scheme = a.scheme.clone().unwrap_or_else(|| cfg.scheme.clone());
    if let Some(r) = a.roll_form {
        scheme.roll_form = match r {
            RollFormArg::Posterior => RollForm::Posterior,
            RollFormArg::Binary => RollForm::Binary,
        };
    }
    scheme.ste |= a.ste;
    if let Some(e) = a.pretrain_epochs {
        scheme.pretrain_epochs = e;
    }
    if let Some(e) = a.joint_epochs {
        scheme.joint_epochs = e;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if a.max_steps.is_some() {
        cfg.train.max_steps = a.max_steps;
    }
    cfg.validate()?;
    ensure!(
        a.pretrained.is_none() || scheme.id.needs_pretrained_transcriber(),
        "--pretrained only applies to pTS and ipTS schemes, not {}",
        scheme.label()
    );
    let m = Manifest::load(&a.data)?;
    let pretrained = a.pretrained.as_deref().map(ModelBundle::load).transpose()?;
    let train = m.load_split(Split::Train)?;
    let val = m.load_split(Split::Validation)?;
    let mut log = run_log(&a.log, &a.out)?;
    let out = train_amt(&train, &val, &scheme, &cfg, pretrained.as_ref(), &mut log)?;
    print_outcome(&out, &a.out)
}

/// WAV at the system rate, zero-padded to a whole number of hops; also
/// returns the original length.
pub fn load_audio(path: &Path) -> Result<(Waveform, usize)> {
    let w = read_wav(path)?.to_system_rate();
    ensure!(!w.is_empty(), "{}: no audio samples", path.display());
    ensure!(w.is_finite(), "{}: non-finite samples", path.display());
    let len = w.len();
    Ok((w.pad_to_hop(), len))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn check_thresholds(vals: &[(&str, Option<f64>)]) -> Result<()> {
    for (n, v) in vals {
        if let Some(v) = v {
            ensure!(*v > 0.0 && *v < 1.0, "--{n} must lie in (0, 1), got {v}");
        }
    }
    Ok(())
}

fn recognize_cmd(cli: &Cli, a: &RecognizeArgs) -> Result<()> {
    let cfg = config(cli)?;
    check_thresholds(&[("threshold", a.threshold)])?;
    let thr = a.threshold.unwrap_or(cfg.eval.ir_threshold);
    let bundle = ModelBundle::load(&a.ckpt)?;
    let ir = bundle.recognizer()?;
    let (audio, _) = load_audio(&a.audio)?;
    let probs = ir.predict(&bundle.ps, &MelExtractor::new().logmel(&audio)?)?;
    let mut table = String::from("index\tinstrument\tprobability\tpresent\n");
    for (i, p) in probs.iter().enumerate() {
        let inst = InstrumentIndex::new(i)?;
        let _ = writeln!(table, "{i}\t{}\t{p:.6}\t{}", inst.name(), (*p >= thr) as u8);
    }
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, &table).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

/// Conditions from the flags, or from a recognizer when `--use-ir` is set.
fn resolve_conditions(c: &ConditionArgs, main: Option<&ModelBundle>, mel: &crate::dsp::LogMelSpectrogram, thr: f64) -> Result<Vec<InstrumentIndex>> {
    if let Some(list) = &c.conditions {
        return Ok(list.0.clone());
    }
    ensure!(c.use_ir, "give --conditions or --use-ir");
    let loaded;
    let ir_bundle = match (&c.ir_ckpt, main) {
        (Some(p), _) => {
            loaded = ModelBundle::load(p)?;
            &loaded
        }
        (None, Some(b)) if b.recognizer.is_some() => b,
        _ => return Err(Error::domain("--use-ir needs a recognizer: pass --ir-ckpt")),
    };
    let probs = ir_bundle.recognizer()?.predict(&ir_bundle.ps, mel)?;
    let conds = predict_conditions(&probs, thr);
    let names: Vec<&str> = conds.iter().map(|i| i.name()).collect();
    log::info!("recognized instruments: {}", names.join(", "));
    if conds.is_empty() {
        log::warn!("the recognizer found no instrument above threshold {thr}");
    }
    Ok(conds)
}

fn check_condition_flags(c: &ConditionArgs) -> Result<()> {
    ensure!(c.conditions.is_some() || c.use_ir, "give --conditions or --use-ir");
    ensure!(c.ir_ckpt.is_none() || c.use_ir, "--ir-ckpt only applies with --use-ir");
    Ok(())
}

fn transcribe_cmd(cli: &Cli, a: &TranscribeArgs) -> Result<()> {
    let cfg = config(cli)?;
    check_condition_flags(&a.cond)?;
    check_thresholds(&[("onset-threshold", a.onset_threshold), ("frame-threshold", a.frame_threshold)])?;
    let bundle = ModelBundle::load(&a.ckpt)?;
    let t = bundle.transcriber()?;
    let (audio, _) = load_audio(&a.audio)?;
    let mel = MelExtractor::new().logmel(&audio)?;
    let conds = resolve_conditions(&a.cond, Some(&bundle), &mel, cfg.eval.ir_threshold)?;
    let on = a.onset_threshold.unwrap_or(cfg.eval.onset_threshold);
    let fr = a.frame_threshold.unwrap_or(cfg.eval.frame_threshold);
    let notes = t.transcribe_piece(&bundle.ps, &mel, &conds, on, fr)?;
    create_dir(&a.out)?;
    for (inst, list) in &notes {
        let path = a.out.join(format!("{}.mid", inst.slug()));
        save_midi(&NoteMap::from([(*inst, list.clone())]), &path)?;
        println!("{}\t{} notes", path.display(), list.len());
    }
    Ok(())
}

fn midi_rolls(path: &Path, frames: usize) -> Result<NoteMap> {
    let notes = load_midi(path, PitchPolicy::Drop)?;
    let dur = frame_to_time(frames);
    let mut clipped = NoteMap::new();
    for (inst, list) in notes {
        let kept = list.into_iter().filter(|n| n.onset_s < dur).map(|mut n| {
            n.offset_s = n.offset_s.min(dur);
            n
        });
        clipped.insert(inst, kept.filter(|n| n.offset_s > n.onset_s).collect());
    }
    Ok(clipped)
}

fn roll_from_notes(notes: &NoteMap, inst: InstrumentIndex, frames: usize) -> Result<PianoRoll> {
    let list = notes.get(&inst).map(Vec::as_slice).unwrap_or_default();
    render_rolls(list, frame_to_time(frames), inst)
}

fn separate_cmd(cli: &Cli, a: &SeparateArgs) -> Result<()> {
    let cfg = config(cli)?;
    check_condition_flags(&a.cond)?;
    let bundle = ModelBundle::load(&a.ckpt)?;
    let sep = bundle.separator()?;
    ensure!(
        bundle.roll_source() != RollSource::GroundTruth || a.midi.is_some(),
        "this separator was trained on ground-truth rolls: pass --midi"
    );
    let (audio, len) = load_audio(&a.audio)?;
    let mel = MelExtractor::new().logmel(&audio)?;
    let conds = resolve_conditions(&a.cond, Some(&bundle), &mel, cfg.eval.ir_threshold)?;
    let reference = a.midi.as_deref().map(|p| midi_rolls(p, mel.frames)).transpose()?;
    create_dir(&a.out)?;
    for inst in conds {
        let roll = match &reference {
            Some(notes) => roll_from_notes(notes, inst, mel.frames)?,
            None => bundle.separation_roll(&mel, inst)?,
        };
        let out = sep.separate(&bundle.ps, &audio, inst, &roll)?;
        let path = a.out.join(format!("{}.wav", inst.slug()));
        write_wav(&path, &out.waveform.fit_to(len), WavFormat::Float32)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn evaluate_cmd(cli: &Cli, a: &EvaluateArgs, jobs: usize) -> Result<()> {
    let cfg = config(cli)?;
    cfg.eval.validate()?;
    let report = match (&a.pred, &a.reference, &a.data) {
        (Some(pred), Some(reference), None) => evaluate_files(pred, reference, a.split, &cfg, jobs)?,
        (None, None, Some(data)) => {
            ensure!(a.ckpt.is_some() || a.ir_ckpt.is_some(), "give --ckpt and/or --ir-ckpt to evaluate on --data");
            let amt = a.ckpt.as_deref().map(ModelBundle::load).transpose()?;
            let ir = a.ir_ckpt.as_deref().map(ModelBundle::load).transpose()?;
            let pieces = Manifest::load(data)?.load_split(a.split.unwrap_or(Split::Test))?;
            ensure!(!pieces.is_empty(), "the selected split has no pieces");
            let opts = EvalOptions { use_ir: a.use_ir, eval: cfg.eval.clone() };
            let mut r = evaluate(amt.as_ref(), ir.as_ref(), &pieces, &opts)?;
            r.meta.insert("source".into(), "checkpoint".into());
            r
        }
        _ => return Err(Error::domain("evaluate needs either --pred with --ref, or --data with checkpoints")),
    };
    report.write(&a.out)?;
    print!("{}", report.summary());
    Ok(())
}

/// Reference piece loaded from disk: notes plus whatever stems exist.
struct RefPiece {
    name: String,
    dir: PathBuf,
    notes: NoteMap,
    stems: BTreeMap<InstrumentIndex, Waveform>,
}

fn reference_dirs(root: &Path, split: Option<Split>) -> Result<Vec<(String, PathBuf)>> {
    let manifest = if root.is_file() { Some(root.to_path_buf()) } else { Some(root.join(MANIFEST_FILE)).filter(|p| p.exists()) };
    if let Some(mf) = manifest {
        let m = Manifest::load(&mf)?;
        return Ok(m
            .entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| (e.name.clone(), m.piece_dir(e)))
            .collect());
    }
    ensure!(split.is_none(), "--split needs a corpus with {MANIFEST_FILE}");
    if root.join("notes.mid").exists() {
        let name = root.file_name().map_or_else(|| "piece".to_string(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, root.to_path_buf())]);
    }
    let rd = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let p = entry.path();
        if p.join("notes.mid").exists() {
            out.push((entry.file_name().to_string_lossy().into_owned(), p));
        }
    }
    out.sort();
    Ok(out)
}

fn load_reference(name: &str, dir: &Path) -> Result<RefPiece> {
    let notes = load_midi(&dir.join("notes.mid"), PitchPolicy::Drop)?;
    let mut stems = BTreeMap::new();
    for inst in notes.keys() {
        let p = dir.join("stems").join(format!("{}.wav", inst.slug()));
        if p.exists() {
            stems.insert(*inst, read_wav(&p)?.to_system_rate());
        }
    }
    Ok(RefPiece { name: name.to_string(), dir: dir.to_path_buf(), notes, stems })
}

/// Predicted notes and stems for one piece. Conditions are the instruments
/// that have a prediction file, including empty ones.
struct PredPiece {
    notes: NoteMap,
    stems: BTreeMap<InstrumentIndex, Waveform>,
}

fn load_prediction(dir: &Path) -> Result<PredPiece> {
    let mut pred = PredPiece { notes: NoteMap::new(), stems: BTreeMap::new() };
    if !dir.is_dir() {
        log::warn!("{}: no predictions for this piece", dir.display());
        return Ok(pred);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    files.sort();
    for p in files {
        let (Some(stem), Some(ext)) = (p.file_stem().and_then(|s| s.to_str()), p.extension().and_then(|s| s.to_str())) else {
            continue;
        };
        match (ext, stem) {
            ("mid", "notes") => {
                for (inst, list) in load_midi(&p, PitchPolicy::Drop)? {
                    pred.notes.entry(inst).or_default().extend(list);
                }
            }
            ("mid", _) | ("wav", _) => {
                let Some(inst) = instrument_by_name(stem) else {
                    log::warn!("{}: file name is not an instrument; skipped", p.display());
                    continue;
                };
                if ext == "mid" {
                    let mut list: Vec<_> = load_midi(&p, PitchPolicy::Drop)?.into_values().flatten().collect();
                    for n in &mut list {
                        n.instrument = inst;
                    }
                    pred.notes.entry(inst).or_default().extend(list);
                } else {
                    pred.stems.insert(inst, read_wav(&p)?.to_system_rate());
                }
            }
            _ => {}
        }
    }
    for list in pred.notes.values_mut() {
        crate::symbolic::sort_notes(list);
    }
    Ok(pred)
}

/// Score prediction files against reference files with the same cell
/// rules as checkpoint evaluation.
pub fn evaluate_files(pred_root: &Path, ref_root: &Path, split: Option<Split>, cfg: &ToolkitConfig, jobs: usize) -> Result<MetricReport> {
    let dirs = reference_dirs(ref_root, split)?;
    ensure!(!dirs.is_empty(), "{}: no reference pieces found", ref_root.display());
    let single = dirs.len() == 1 && dirs[0].1 == ref_root;
    let loaded = crate::par::map(jobs, dirs.len(), |i| {
        let (name, dir) = &dirs[i];
        let r = load_reference(name, dir)?;
        let pdir = if single && !pred_root.join(name).is_dir() { pred_root.to_path_buf() } else { pred_root.join(name) };
        Ok::<_, Error>((r, load_prediction(&pdir)?))
    })?;
    let mut items = Vec::new();
    let mut sdr_cells = Vec::new();
    for (r, p) in &loaded {
        items.push(TranscriptionItem {
            piece: r.name.clone(),
            reference: r.notes.clone(),
            estimate: p.notes.clone(),
            conditions: p.notes.keys().chain(p.stems.keys()).copied().collect(),
        });
        for (inst, est) in &p.stems {
            let Some(reference) = r.stems.get(inst) else { continue };
            ensure!(
                est.sample_rate == reference.sample_rate,
                "{}: estimate for {} has a different sample rate",
                r.dir.display(),
                inst.name()
            );
            if let Some(v) = sdr(&reference.samples, &est.fit_to(reference.len()).samples)? {
                sdr_cells.push(SdrCell { piece: r.name.clone(), instrument: *inst, sdr: v });
            }
        }
    }
    let mut report = MetricReport { matching: cfg.eval.matching, ..Default::default() };
    report.meta.insert("source".into(), "files".into());
    report.meta.insert("pieces".into(), loaded.len().to_string());
    report.set_transcription(&score_transcriptions(&items, &cfg.eval.matching));
    if !sdr_cells.is_empty() {
        report.sdr = Some(SdrSummary::from_cells(&sdr_cells));
    }
    Ok(report)
}

fn export_hybrid_cmd(cli: &Cli, a: &ExportHybridArgs) -> Result<()> {
    let cfg = config(cli)?;
    ensure!(a.midi.is_some() || a.cond.conditions.is_some() || a.cond.use_ir, "give --conditions, --use-ir or --midi");
    ensure!(a.cond.ir_ckpt.is_none() || a.cond.use_ir, "--ir-ckpt only applies with --use-ir");
    let bundle = a.ckpt.as_deref().map(ModelBundle::load).transpose()?;
    let (audio, _) = load_audio(&a.audio)?;
    let mel = MelExtractor::new().logmel(&audio)?;
    let frames = mel.frames;
    let rolls: Vec<PianoRoll> = match &a.midi {
        Some(p) => {
            let notes = midi_rolls(p, frames)?;
            let keep: Option<BTreeSet<InstrumentIndex>> = a.cond.conditions.as_ref().map(|c| c.0.iter().copied().collect());
            notes
                .keys()
                .filter(|i| keep.as_ref().is_none_or(|k| k.contains(i)))
                .map(|&i| roll_from_notes(&notes, i, frames))
                .collect::<Result<_>>()?
        }
        None => {
            let b = bundle.as_ref().ok_or_else(|| Error::domain("--ckpt is required without --midi"))?;
            let t = b.transcriber()?;
            let conds = resolve_conditions(&a.cond, Some(b), &mel, cfg.eval.ir_threshold)?;
            conds.into_iter().map(|c| t.posteriors(&b.ps, &mel, c)).collect::<Result<_>>()?
        }
    };
    let spec = match a.feature {
        FeatureArg::Mel => Tensor::new(vec![frames, mel.bins], mel.values),
        FeatureArg::Stft => {
            let stft = Stft::new(StftConfig::SEPARATION);
            let s = stft.forward(&audio.samples_f64())?;
            Tensor::new(vec![s.frames, s.bins()], s.magnitude())
        }
    };
    let bins = spec.shape()[1];
    let proj = HybridProjector::new(bins, cfg.train.seed);
    let out = proj.features(&spec, &rolls)?;
    write_array(&a.out, &ArrayF32::from_f64(out.shape().to_vec(), out.data())?)?;
    println!("{}\t{:?}", a.out.display(), out.shape());
    Ok(())
}
