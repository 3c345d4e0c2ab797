//! Optimization loops for the recognizer and for the transcriber/separator
//! schemes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{BundleMeta, ModelBundle};
use super::config::{RollSource, SchemeId, ToolkitConfig, TrainScheme};
use super::data::{epoch_items, prepare, Assembler, Item, Prepared};
use super::evaluate::{evaluate, EvalOptions};
use super::RunLog;
use crate::error::{ensure, Error, Result};
use crate::metrics::map_scores;
use crate::nn::{apply_buffer_updates, Adam, Graph, ParamStore, Tensor};
use crate::recognizer::{self, MIN_FRAMES};
use crate::separator;
use crate::synthdata::{derive_seed, ToyPiece};
use crate::transcriber::{self, loss_t_graph};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub phase: &'static str,
    pub epoch: usize,
    pub loss: f64,
    pub metric: Option<f64>,
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub history: Vec<EpochStats>,
    pub steps: usize,
    pub best_metric: Option<f64>,
}

fn crop_frames(cfg: &ToolkitConfig, prepared: &[Prepared], min: usize) -> Result<usize> {
    let shortest = prepared.iter().map(|p| p.frames).min().unwrap_or(0);
    let crop = cfg.train.crop_frames().min(shortest);
    ensure!(crop >= min, "crops of {crop} frames are shorter than the required {min}");
    Ok(crop)
}

fn optimizer(ps: &ParamStore, prefix: &str, lr: f64, clip: Option<f64>) -> Adam {
    let ids = ps.ids_with_prefix(prefix).filter(|&id| ps.is_trainable(id)).collect();
    let mut opt = Adam::new(lr, ids);
    opt.clip_norm = clip;
    opt
}

/// Tracks the best validation metric and the parameters that achieved it.
struct Best {
    metric: Option<f64>,
    ps: Option<ParamStore>,
}

impl Best {
    fn offer(&mut self, metric: f64, ps: &ParamStore) {
        if self.metric.is_none_or(|m| metric > m) {
            self.metric = Some(metric);
            self.ps = Some(ps.clone());
        }
    }
}

/// Train the recognizer alone on random crops with BCE against piece labels.
/// Validation (macro mAP) runs on `val`, or on `train` when `val` is empty;
/// the best-scoring parameters are returned.
pub fn train_recognizer(train: &[ToyPiece], val: &[ToyPiece], cfg: &ToolkitConfig, log: &mut RunLog) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(!train.is_empty(), "training corpus is empty");
    let prepared = prepare(train)?;
    let crop = crop_frames(cfg, &prepared, MIN_FRAMES)?;
    let meta = BundleMeta { recognizer: Some(cfg.recognizer.clone()), seed: cfg.train.seed, ..Default::default() };
    let mut bundle = ModelBundle::new(meta)?;
    let mut opt = optimizer(&bundle.ps, recognizer::PREFIX, cfg.train.lr_ir, cfg.train.clip_norm);
    let asm = Assembler::new(cfg.separator.stft);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, 1));
    let val_set = if val.is_empty() { train } else { val };
    let mut history = Vec::new();
    let mut best = Best { metric: None, ps: None };
    let mut steps = 0;
    'outer: for epoch in 0..cfg.train.epochs {
        let items = epoch_items(&mut rng, &prepared, crop, false, false);
        let mut total = 0.0;
        let mut n = 0;
        for chunk in items.chunks(cfg.train.batch_size) {
            if cfg.train.max_steps.is_some_and(|m| steps >= m) {
                break 'outer;
            }
            let b = asm.batch(&prepared, chunk, crop, true, false)?;
            let g = Graph::training(derive_seed(cfg.train.seed, 1_000_000 + steps as u64));
            let rec = bundle.recognizer()?;
            let x = g.constant(b.mel);
            let loss = g.bce_with_logits(rec.logits(&g, &bundle.ps, x)?, &b.labels);
            total += g.value(loss).item();
            n += 1;
            let grads = g.backward(loss);
            opt.step(&mut bundle.ps, &grads);
            apply_buffer_updates(&mut bundle.ps, g.take_buffer_updates());
            steps += 1;
        }
        let mut metric = None;
        let last = epoch + 1 == cfg.train.epochs;
        if cfg.train.eval_every > 0 && ((epoch + 1) % cfg.train.eval_every == 0 || last) {
            let rec = bundle.recognizer()?;
            let mel = crate::dsp::MelExtractor::new();
            let mut probs = Vec::new();
            let mut labels = Vec::new();
            for p in val_set {
                probs.push(rec.predict(&bundle.ps, &mel.logmel(&p.mix)?)?);
                labels.push(p.labels.values().iter().map(|&v| v > 0.5).collect());
            }
            let m = map_scores(&probs, &labels, cfg.eval.ir_threshold)?.macro_map.unwrap_or(0.0);
            best.offer(m, &bundle.ps);
            metric = Some(m);
        }
        let loss = if n > 0 { total / n as f64 } else { f64::NAN };
        log.record(format!("phase=recognizer epoch={epoch} steps={steps} loss={loss:.6} map={}", fmt(metric)));
        history.push(EpochStats { phase: "recognizer", epoch, loss, metric });
        if let (Some(m), Some(t)) = (metric, cfg.train.stop_at) {
            if m >= t {
                break;
            }
        }
    }
    if let Some(ps) = best.ps {
        bundle.ps = ps;
    }
    Ok(TrainOutcome { bundle, history, steps, best_metric: best.metric })
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Pretrain,
    Transcriber,
    Joint,
    Separator,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Transcriber => "transcriber",
            Phase::Joint => "joint",
            Phase::Separator => "separator",
        }
    }

    fn runs_transcriber(self, source: RollSource) -> bool {
        match self {
            Phase::Pretrain | Phase::Transcriber | Phase::Joint => true,
            Phase::Separator => source == RollSource::Transcriber,
        }
    }

    fn trains_separator(self) -> bool {
        matches!(self, Phase::Joint | Phase::Separator)
    }
}

/// Train a transcription/separation scheme.
///
/// Every scheme runs `pretrain_epochs + joint_epochs` epochs of its own
/// objective, except `pTS`/`ipTS`: these copy the transcriber from
/// `pretrained` and train jointly for `joint_epochs`, or, without a
/// checkpoint, pretrain the transcriber for `pretrain_epochs` first.
pub fn train_amt(
    train: &[ToyPiece],
    val: &[ToyPiece],
    scheme: &TrainScheme,
    cfg: &ToolkitConfig,
    pretrained: Option<&ModelBundle>,
    log: &mut RunLog,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(!train.is_empty(), "training corpus is empty");
    let id = scheme.id;
    let prepared = prepare(train)?;
    let scfg = scheme.separator_config(&cfg.separator);
    let min = if id.trains_separator() { scfg.min_frames() } else { 1 };
    let crop = crop_frames(cfg, &prepared, min)?;
    let meta = BundleMeta {
        recognizer: None,
        transcriber: Some(cfg.transcriber.clone()),
        separator: Some(scfg.clone()),
        scheme: Some(scheme.clone()),
        seed: cfg.train.seed,
    };
    let mut bundle = ModelBundle::new(meta)?;
    let total = scheme.pretrain_epochs + scheme.joint_epochs;
    let phases: Vec<(Phase, usize)> = match id {
        SchemeId::PTS | SchemeId::IPTS => match pretrained {
            Some(p) => {
                bundle.load_transcriber_from(p)?;
                vec![(Phase::Joint, scheme.joint_epochs)]
            }
            None if scheme.pretrain_epochs > 0 => {
                vec![(Phase::Pretrain, scheme.pretrain_epochs), (Phase::Joint, scheme.joint_epochs)]
            }
            None => {
                return Err(Error::domain(format!(
                    "scheme {id} needs a pretrained transcriber checkpoint or pretrain_epochs > 0"
                )))
            }
        },
        _ if pretrained.is_some() => {
            return Err(Error::domain(format!("scheme {id} does not take a pretrained transcriber")));
        }
        SchemeId::T | SchemeId::IT => vec![(Phase::Transcriber, total)],
        SchemeId::TS => vec![(Phase::Joint, total)],
        SchemeId::SOnly | SchemeId::GtUpperBound => vec![(Phase::Separator, total)],
    };

    let mut opt_t = optimizer(&bundle.ps, transcriber::PREFIX, cfg.train.lr_t, cfg.train.clip_norm);
    let mut opt_s = optimizer(&bundle.ps, separator::PREFIX, cfg.train.lr_mss, cfg.train.clip_norm);
    let asm = Assembler::new(scfg.stft);
    let source = id.roll_source();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, 2));
    let val_set = if val.is_empty() { train } else { val };
    let mut history = Vec::new();
    let mut best = Best { metric: None, ps: None };
    let mut steps = 0;
    let n_phases = phases.len();
    'outer: for (pi, (phase, epochs)) in phases.into_iter().enumerate() {
        let final_phase = pi + 1 == n_phases;
        for epoch in 0..epochs {
            let items = epoch_items(&mut rng, &prepared, crop, true, cfg.train.all_conditions);
            let mut total = 0.0;
            let mut n = 0;
            for chunk in items.chunks(cfg.train.batch_size) {
                if cfg.train.max_steps.is_some_and(|m| steps >= m) {
                    break 'outer;
                }
                let loss = amt_step(&mut bundle, &asm, &prepared, chunk, crop, phase, source, cfg, steps, &mut opt_t, &mut opt_s)?;
                total += loss;
                n += 1;
                steps += 1;
            }
            let mut metric = None;
            let last = epoch + 1 == epochs;
            if final_phase && cfg.train.eval_every > 0 && ((epoch + 1) % cfg.train.eval_every == 0 || last) {
                let opts = EvalOptions { use_ir: false, eval: cfg.eval.clone() };
                let report = evaluate(Some(&bundle), None, val_set, &opts)?;
                let m = if id.trains_transcriber() { report.flat_f1.n } else { report.sdr.and_then(|s| s.source) };
                if let Some(m) = m {
                    best.offer(m, &bundle.ps);
                }
                metric = m;
            }
            let loss = if n > 0 { total / n as f64 } else { f64::NAN };
            log.record(format!(
                "scheme={} phase={} epoch={epoch} steps={steps} loss={loss:.6} metric={}",
                scheme.label(),
                phase.name(),
                fmt(metric)
            ));
            history.push(EpochStats { phase: phase.name(), epoch, loss, metric });
            if let (Some(m), Some(t)) = (metric, cfg.train.stop_at) {
                if m >= t {
                    break 'outer;
                }
            }
        }
    }
    if let Some(ps) = best.ps {
        bundle.ps = ps;
    }
    Ok(TrainOutcome { bundle, history, steps, best_metric: best.metric })
}

#[allow(clippy::too_many_arguments)]
fn amt_step(
    bundle: &mut ModelBundle,
    asm: &Assembler,
    prepared: &[Prepared],
    items: &[Item],
    crop: usize,
    phase: Phase,
    source: RollSource,
    cfg: &ToolkitConfig,
    step: usize,
    opt_t: &mut Adam,
    opt_s: &mut Adam,
) -> Result<f64> {
    let run_t = phase.runs_transcriber(source);
    let run_s = phase.trains_separator();
    let b = asm.batch(prepared, items, crop, run_t, run_s)?;
    let g = Graph::training(derive_seed(cfg.train.seed, 2_000_000 + step as u64));
    let tr = bundle.transcriber()?;
    let mut terms = Vec::new();
    let mut posterior = None;
    if run_t {
        let out = tr.forward(&g, &bundle.ps, g.constant(b.mel.clone()), &b.cond)?;
        terms.push(loss_t_graph(&g, &out, &b.onset, &b.frame));
        posterior = Some(g.sigmoid(out.frame));
    }
    if run_s {
        let sep = bundle.separator()?;
        let roll = match source {
            RollSource::Transcriber => sep.prepare_roll(&g, posterior.expect("transcriber ran")),
            RollSource::Zero => g.constant(Tensor::zeros(vec![b.size, crop, crate::symbolic::N_PITCHES])),
            RollSource::GroundTruth => g.constant(b.frame.clone()),
        };
        let out = sep.forward(&g, &bundle.ps, &b.magnitude, roll, &b.cond)?;
        let wave = sep.synthesize(&g, out.magnitude, b.phase.clone(), b.samples);
        terms.push(g.mse(wave, &b.target));
    }
    let loss = terms.into_iter().reduce(|a, c| g.add(a, c)).expect("at least one active term");
    let value = g.value(loss).item();
    ensure!(value.is_finite(), "loss diverged at step {step}");
    let grads = g.backward(loss);
    // L_T only feeds the transcriber; the separator term may reach it too
    if phase != Phase::Separator {
        opt_t.step(&mut bundle.ps, &grads);
    }
    if run_s {
        opt_s.step(&mut bundle.ps, &grads);
    }
    apply_buffer_updates(&mut bundle.ps, g.take_buffer_updates());
    Ok(value)
}
