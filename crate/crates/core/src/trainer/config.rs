//! Training schemes and the TOML configuration file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::metrics::MatchConfig;
use crate::recognizer::RecognizerConfig;
use crate::separator::{FusionMode, RollForm, SeparatorConfig};
use crate::synthdata::SynthConfig;
use crate::transcriber::TranscriberConfig;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "AMT_CONFIG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "T")]
    T,
    #[serde(rename = "iT")]
    IT,
    #[serde(rename = "TS")]
    TS,
    #[serde(rename = "pTS")]
    PTS,
    #[serde(rename = "ipTS")]
    IPTS,
    #[serde(rename = "S_only")]
    SOnly,
    #[serde(rename = "GT_upper_bound")]
    GtUpperBound,
}

/// Where the separator's roll comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RollSource {
    Transcriber,
    Zero,
    GroundTruth,
}

impl SchemeId {
    pub const ALL: [SchemeId; 7] =
        [SchemeId::T, SchemeId::IT, SchemeId::TS, SchemeId::PTS, SchemeId::IPTS, SchemeId::SOnly, SchemeId::GtUpperBound];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::T => "T",
            SchemeId::IT => "iT",
            SchemeId::TS => "TS",
            SchemeId::PTS => "pTS",
            SchemeId::IPTS => "ipTS",
            SchemeId::SOnly => "S_only",
            SchemeId::GtUpperBound => "GT_upper_bound",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown scheme '{s}'")))
    }

    pub fn trains_transcriber(self) -> bool {
        matches!(self, SchemeId::T | SchemeId::IT | SchemeId::TS | SchemeId::PTS | SchemeId::IPTS)
    }

    pub fn trains_separator(self) -> bool {
        !matches!(self, SchemeId::T | SchemeId::IT)
    }

    /// Conditions at evaluation come from the recognizer.
    pub fn uses_recognizer(self) -> bool {
        matches!(self, SchemeId::IT | SchemeId::IPTS)
    }

    pub fn needs_pretrained_transcriber(self) -> bool {
        matches!(self, SchemeId::PTS | SchemeId::IPTS)
    }

    pub fn roll_source(self) -> RollSource {
        match self {
            SchemeId::SOnly => RollSource::Zero,
            SchemeId::GtUpperBound => RollSource::GroundTruth,
            _ => RollSource::Transcriber,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainScheme {
    pub id: SchemeId,
    pub fusion: FusionMode,
    pub roll_form: RollForm,
    pub ste: bool,
    /// Transcriber-only epochs run before joint training when a pretrained
    /// transcriber is required but not supplied.
    pub pretrain_epochs: usize,
    pub joint_epochs: usize,
}

impl Default for TrainScheme {
    fn default() -> Self {
        Self { id: SchemeId::TS, fusion: FusionMode::Sum, roll_form: RollForm::Posterior, ste: false, pretrain_epochs: 5, joint_epochs: 5 }
    }
}

impl TrainScheme {
    pub fn new(id: SchemeId) -> Self {
        Self { id, ..Self::default() }
    }

    /// Grid names such as `T`, `TS(s)`, `pTS(c)`, `ipTS(s)` or `S_only`;
    /// the suffix picks the fusion (`s` sum, `c` concat, `p` spec_patch).
    pub fn parse(name: &str) -> Result<Self> {
        let (base, fusion) = match name.strip_suffix(')').and_then(|n| n.split_once('(')) {
            Some((b, "s")) => (b, FusionMode::Sum),
            Some((b, "c")) => (b, FusionMode::Concat),
            Some((b, "p")) => (b, FusionMode::SpecPatch),
            Some((_, f)) => return Err(Error::domain(format!("unknown fusion suffix '({f})' in scheme '{name}'"))),
            None => (name, FusionMode::Sum),
        };
        Ok(Self { id: SchemeId::parse(base)?, fusion, ..Self::default() })
    }

    /// Display name in grid notation.
    pub fn label(&self) -> String {
        let mut s = self.id.as_str().to_string();
        if self.id.trains_separator() {
            s.push_str(match self.fusion {
                FusionMode::Sum => "(s)",
                FusionMode::Concat => "(c)",
                FusionMode::SpecPatch => "(p)",
            });
            if self.id.roll_source() == RollSource::Transcriber {
                s.push_str(&format!(" {}", self.roll_form.as_str()));
                if self.ste {
                    s.push_str("+ste");
                }
            }
        }
        s
    }

    /// Separator configuration with this scheme's fusion and roll handling.
    pub fn separator_config(&self, base: &SeparatorConfig) -> SeparatorConfig {
        SeparatorConfig { fusion: self.fusion, roll_form: self.roll_form, ste: self.ste, ..base.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_ir: f64,
    pub lr_t: f64,
    pub lr_mss: f64,
    pub batch_size: usize,
    /// Crop length in seconds; must be a whole number of 10 ms frames.
    pub crop_s: f64,
    /// Recognizer epochs.
    pub epochs: usize,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Condition on every present instrument per step instead of one.
    pub all_conditions: bool,
    /// Validate every this many epochs (0 disables validation).
    pub eval_every: usize,
    /// Stop once the validation metric reaches this value.
    pub stop_at: Option<f64>,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_ir: 1e-3,
            lr_t: 1e-3,
            lr_mss: 1e-4,
            batch_size: 1,
            crop_s: 10.0,
            epochs: 10,
            max_steps: None,
            seed: 0,
            all_conditions: false,
            eval_every: 1,
            stop_at: None,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("lr_ir", self.lr_ir), ("lr_t", self.lr_t), ("lr_mss", self.lr_mss)] {
            ensure!(v > 0.0 && v.is_finite(), "{n} must be positive, got {v}");
        }
        ensure!(self.batch_size > 0, "batch size must be positive");
        crate::symbolic::frames_for_duration(self.crop_s)?;
        ensure!(self.crop_s > 0.0, "crop length must be positive");
        Ok(())
    }

    pub fn crop_frames(&self) -> usize {
        crate::symbolic::time_to_frame(self.crop_s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub onset_threshold: f64,
    pub frame_threshold: f64,
    /// Recognizer probability threshold for predicted conditions.
    pub ir_threshold: f64,
    pub matching: MatchConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { onset_threshold: 0.5, frame_threshold: 0.5, ir_threshold: 0.5, matching: MatchConfig::default() }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("onset", self.onset_threshold), ("frame", self.frame_threshold), ("recognizer", self.ir_threshold)] {
            ensure!(v > 0.0 && v < 1.0, "{n} threshold must lie in (0, 1), got {v}");
        }
        Ok(())
    }
}

/// Whole-toolkit configuration, one section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolkitConfig {
    pub train: TrainConfig,
    pub scheme: TrainScheme,
    pub recognizer: RecognizerConfig,
    pub transcriber: TranscriberConfig,
    pub separator: SeparatorConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl ToolkitConfig {
    /// Desk-scale model sizes.
    pub fn small() -> Self {
        Self {
            recognizer: RecognizerConfig::small(),
            transcriber: TranscriberConfig::small(),
            separator: SeparatorConfig::small(),
            ..Self::default()
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: ToolkitConfig = toml::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            what: "configuration",
            offset: e.span().map_or(0, |s| s.start as u64),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// An explicit path, else `$AMT_CONFIG`, else the desk-scale defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(env) {
            Some(p) => Self::load(&p),
            None => Ok(Self::small()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.recognizer.validate()?;
        self.transcriber.validate()?;
        self.separator.validate()?;
        self.eval.validate()
    }
}
