//! Experiment configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored; every key must be known.
//! `sigma_s` and `ot_reg` accept `auto`; `message` accepts `random` (drawn
//! from `message_seed` with `bits` bits) or an explicit bit string;
//! `attack_suite` accepts `default` or a path to a suite file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kinematics::{DEFAULT_EPS, DEFAULT_TAU};
use crate::transport;
use crate::watermark::{LossWeights, WatermarkMessage, DEFAULT_BITS};

use super::scene::SceneSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum MessageSource {
    Random,
    Bits(WatermarkMessage),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SuiteSource {
    Default,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub image_size: usize,
    pub extent: f64,
    /// Angle between adjacent views, in degrees.
    pub view_interval: f64,
    /// Supervise even-indexed views only and evaluate the odd ones as held out.
    pub holdout_views: bool,
    pub bits: usize,
    pub message: MessageSource,
    pub message_seed: u64,
    pub decoder_seed: u64,
    pub lambdas: LossWeights,
    pub step: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub double_gate: bool,
    pub tau: f64,
    pub eps: f64,
    pub k_neighbors: usize,
    /// `None` picks the median neighbour distance per frame.
    pub sigma_s: Option<f64>,
    /// `None` picks a fraction of the median transport cost.
    pub ot_reg: Option<f64>,
    pub ot_tol: f64,
    pub ot_max_iter: usize,
    /// Previous-frame subsample size for alignment; 0 keeps every point.
    pub ot_subsample: usize,
    pub ot_seed: u64,
    pub temporal: bool,
    pub spatial: bool,
    pub curvature: bool,
    pub attack_seed: u64,
    pub attack_suite: SuiteSource,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            image_size: 64,
            extent: 1.0,
            view_interval: 15.0,
            holdout_views: false,
            bits: DEFAULT_BITS,
            message: MessageSource::Random,
            message_seed: 1,
            decoder_seed: 2,
            lambdas: LossWeights::default(),
            step: 0.05,
            max_epochs: 2000,
            patience: 3,
            double_gate: false,
            tau: DEFAULT_TAU,
            eps: DEFAULT_EPS,
            k_neighbors: crate::energy::DEFAULT_K,
            sigma_s: None,
            ot_reg: None,
            ot_tol: transport::DEFAULT_TOL,
            ot_max_iter: transport::DEFAULT_MAX_ITER,
            ot_subsample: 0,
            ot_seed: 3,
            temporal: true,
            spatial: true,
            curvature: true,
            attack_seed: 4,
            attack_suite: SuiteSource::Default,
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: [&str; 37] = [
    "scene_kind",
    "n",
    "frames",
    "scene_seed",
    "channels",
    "resample_change",
    "shuffle",
    "image_size",
    "extent",
    "view_interval",
    "holdout_views",
    "bits",
    "message",
    "message_seed",
    "decoder_seed",
    "lambda_wm",
    "lambda_wav",
    "lambda_con",
    "lambda_rec",
    "step",
    "max_epochs",
    "patience",
    "double_gate",
    "tau",
    "eps",
    "k_neighbors",
    "sigma_s",
    "ot_reg",
    "ot_tol",
    "ot_max_iter",
    "ot_subsample",
    "ot_seed",
    "temporal",
    "spatial",
    "curvature",
    "attack_seed",
    "attack_suite",
];

fn num<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::param(key, format!("cannot parse {v:?}")))
}

fn flag(key: &'static str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::param(key, format!("expected true/false, got {v:?}"))),
    }
}

fn auto(key: &'static str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn show_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl ExperimentConfig {
    /// Sets one key from its text value. `output_dir` is accepted too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "scene_kind" => self.scene.kind = v.parse()?,
            "n" => self.scene.n = num("n", v)?,
            "frames" => self.scene.frames = num("frames", v)?,
            "scene_seed" => self.scene.seed = num("scene_seed", v)?,
            "channels" => self.scene.channels = num("channels", v)?,
            "resample_change" => self.scene.resample_change = num("resample_change", v)?,
            "shuffle" => self.scene.shuffle = flag("shuffle", v)?,
            "image_size" => self.image_size = num("image_size", v)?,
            "extent" => self.extent = num("extent", v)?,
            "view_interval" => self.view_interval = num("view_interval", v)?,
            "holdout_views" => self.holdout_views = flag("holdout_views", v)?,
            "bits" => self.bits = num("bits", v)?,
            "message" => {
                self.message = if v == "random" { MessageSource::Random } else { MessageSource::Bits(v.parse()?) };
            }
            "message_seed" => self.message_seed = num("message_seed", v)?,
            "decoder_seed" => self.decoder_seed = num("decoder_seed", v)?,
            "lambda_wm" => self.lambdas.wm = num("lambda_wm", v)?,
            "lambda_wav" => self.lambdas.wav = num("lambda_wav", v)?,
            "lambda_con" => self.lambdas.con = num("lambda_con", v)?,
            "lambda_rec" => self.lambdas.rec = num("lambda_rec", v)?,
            "step" => self.step = num("step", v)?,
            "max_epochs" => self.max_epochs = num("max_epochs", v)?,
            "patience" => self.patience = num("patience", v)?,
            "double_gate" => self.double_gate = flag("double_gate", v)?,
            "tau" => self.tau = num("tau", v)?,
            "eps" => self.eps = num("eps", v)?,
            "k_neighbors" => self.k_neighbors = num("k_neighbors", v)?,
            "sigma_s" => self.sigma_s = auto("sigma_s", v)?,
            "ot_reg" => self.ot_reg = auto("ot_reg", v)?,
            "ot_tol" => self.ot_tol = num("ot_tol", v)?,
            "ot_max_iter" => self.ot_max_iter = num("ot_max_iter", v)?,
            "ot_subsample" => self.ot_subsample = num("ot_subsample", v)?,
            "ot_seed" => self.ot_seed = num("ot_seed", v)?,
            "temporal" => self.temporal = flag("temporal", v)?,
            "spatial" => self.spatial = flag("spatial", v)?,
            "curvature" => self.curvature = flag("curvature", v)?,
            "attack_seed" => self.attack_seed = num("attack_seed", v)?,
            "attack_suite" => {
                self.attack_suite = if v == "default" { SuiteSource::Default } else { SuiteSource::File(PathBuf::from(v)) };
            }
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(Error::param("config", format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
            cfg.set(k.trim(), v).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        cfg.validate().map_err(|e| Error::parse(path, 0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Every key except `output_dir`, one per line, in [`KEYS`] order. Parsing
    /// the result reproduces the config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value(key));
        }
        out
    }

    fn value(&self, key: &str) -> String {
        match key {
            "scene_kind" => self.scene.kind.to_string(),
            "n" => self.scene.n.to_string(),
            "frames" => self.scene.frames.to_string(),
            "scene_seed" => self.scene.seed.to_string(),
            "channels" => self.scene.channels.to_string(),
            "resample_change" => self.scene.resample_change.to_string(),
            "shuffle" => self.scene.shuffle.to_string(),
            "image_size" => self.image_size.to_string(),
            "extent" => self.extent.to_string(),
            "view_interval" => self.view_interval.to_string(),
            "holdout_views" => self.holdout_views.to_string(),
            "bits" => self.bits.to_string(),
            "message" => match &self.message {
                MessageSource::Random => "random".to_string(),
                MessageSource::Bits(m) => m.to_string(),
            },
            "message_seed" => self.message_seed.to_string(),
            "decoder_seed" => self.decoder_seed.to_string(),
            "lambda_wm" => self.lambdas.wm.to_string(),
            "lambda_wav" => self.lambdas.wav.to_string(),
            "lambda_con" => self.lambdas.con.to_string(),
            "lambda_rec" => self.lambdas.rec.to_string(),
            "step" => self.step.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "double_gate" => self.double_gate.to_string(),
            "tau" => self.tau.to_string(),
            "eps" => self.eps.to_string(),
            "k_neighbors" => self.k_neighbors.to_string(),
            "sigma_s" => show_auto(self.sigma_s),
            "ot_reg" => show_auto(self.ot_reg),
            "ot_tol" => self.ot_tol.to_string(),
            "ot_max_iter" => self.ot_max_iter.to_string(),
            "ot_subsample" => self.ot_subsample.to_string(),
            "ot_seed" => self.ot_seed.to_string(),
            "temporal" => self.temporal.to_string(),
            "spatial" => self.spatial.to_string(),
            "curvature" => self.curvature.to_string(),
            "attack_seed" => self.attack_seed.to_string(),
            "attack_suite" => match &self.attack_suite {
                SuiteSource::Default => "default".to_string(),
                SuiteSource::File(p) => p.display().to_string(),
            },
            _ => unreachable!("KEYS and value() cover the same keys"),
        }
    }

    /// The message to embed.
    pub fn resolve_message(&self) -> Result<WatermarkMessage> {
        match &self.message {
            MessageSource::Random => WatermarkMessage::random(self.message_seed, self.bits),
            MessageSource::Bits(m) => Ok(m.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let MessageSource::Bits(m) = &self.message {
            if m.len() != self.bits {
                return Err(Error::param("message", format!("has {} bits but `bits` is {}", m.len(), self.bits)));
            }
        }
        if self.bits == 0 {
            return Err(Error::param("bits", "must be at least 1"));
        }
        if !(self.extent > 0.0) {
            return Err(Error::param("extent", format!("must be positive, got {}", self.extent)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::param("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::param("eps", format!("must be positive, got {}", self.eps)));
        }
        if self.k_neighbors == 0 {
            return Err(Error::param("k_neighbors", "must be at least 1"));
        }
        for (name, v) in [("sigma_s", self.sigma_s), ("ot_reg", self.ot_reg)] {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(Error::param(name, format!("must be positive, got {x}")));
                }
            }
        }
        if !(self.ot_tol > 0.0) {
            return Err(Error::param("ot_tol", format!("must be positive, got {}", self.ot_tol)));
        }
        self.lambdas.validate()
    }

    /// Ablation variant name used in reports.
    pub fn variant(&self) -> &'static str {
        match (self.temporal, self.spatial, self.curvature) {
            (true, true, true) => "full",
            (false, true, true) => "no_temporal",
            (true, false, true) => "no_spatial",
            (true, true, false) => "no_curvature",
            _ => "custom",
        }
    }
}
