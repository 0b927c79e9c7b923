//! Run settings and the line-oriented `key = value` config format.
//!
//! Blank lines and `#` comments are ignored. Lists are comma-separated.
//! Unknown keys are errors so typos do not silently fall back to defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::{EvalConfig, Method};
use crate::discretize::{GridAnchor, DEFAULT_T_MAX};
use crate::entropy::SegmentRule;
use crate::ingest::BuildingPattern;
use crate::neural::Arch;
use crate::synth::{ClassModel, SynthConfig};
use crate::trace::{DeviceClass, SpatialResolution, TemporalResolution};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Which per-device accuracies feed the correlation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrSource {
    pub method: Method,
    pub spatial: SpatialResolution,
    pub window_s: u64,
    /// Ignored for bound methods.
    pub seq_len: usize,
}

impl Default for CorrSource {
    fn default() -> Self {
        CorrSource {
            method: Method::Mc,
            spatial: SpatialResolution::Building,
            window_s: 900,
            seq_len: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    /// Worker threads; `None` lets the pool decide.
    pub jobs: Option<usize>,
    pub eval: EvalConfig,
    /// Neural architectures allowed in the matrix.
    pub nn_archs: Vec<Arch>,
    pub t_max: u64,
    pub anchor: GridAnchor,
    pub tz_offset_s: i64,
    pub building_pattern: String,
    pub corr: CorrSource,
    pub synth: SynthConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            jobs: None,
            eval: EvalConfig::default(),
            nn_archs: vec![Arch::Lstm, Arch::Cnn1d],
            t_max: DEFAULT_T_MAX,
            anchor: GridAnchor::Epoch,
            tz_offset_s: 0,
            building_pattern: BuildingPattern::DEFAULT.to_string(),
            corr: CorrSource::default(),
            synth: SynthConfig::with_population(0, 200, 200),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| ConfigError::BadValue {
            key: key.to_string(),
            reason: e.to_string(),
        })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: "empty list".into(),
        });
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("`{value}` is not a boolean"),
        }),
    }
}

fn parse_arch(key: &str, value: &str) -> Result<Arch, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "lstm" => Ok(Arch::Lstm),
        "cnn" | "cnn1d" => Ok(Arch::Cnn1d),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("unknown architecture `{value}`"),
        }),
    }
}

fn bad(key: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

impl Settings {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: idx + 1 })?;
            s.apply(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.eval.seed = seed;
        self.synth.seed = seed;
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.set_seed(parse(key, value)?),
            "jobs" => {
                let n: usize = parse(key, value)?;
                if n == 0 {
                    return Err(bad(key, "must be at least 1"));
                }
                self.jobs = Some(n);
            }
            "eval.methods" => self.eval.methods = parse_list(key, value)?,
            "eval.seq_lens" => {
                let v: Vec<usize> = parse_list(key, value)?;
                if v.contains(&0) {
                    return Err(bad(key, "sequence lengths must be at least 1"));
                }
                self.eval.seq_lens = v;
            }
            "eval.windows" => {
                let secs: Vec<i64> = parse_list(key, value)?;
                self.eval.windows = secs
                    .into_iter()
                    .map(|w| TemporalResolution::new(w).map_err(|e| bad(key, &e.to_string())))
                    .collect::<Result<_, _>>()?;
            }
            "eval.spatial" => self.eval.spatial = parse_list(key, value)?,
            "eval.skip_unknown" => self.eval.eval.skip_unknown = parse_bool(key, value)?,
            "eval.transitions_only" => self.eval.eval.transitions_only = parse_bool(key, value)?,
            "nn.arch" => {
                self.nn_archs = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|a| parse_arch(key, a))
                    .collect::<Result<_, _>>()?;
            }
            "nn.hidden" => self.eval.nn.hidden = parse(key, value)?,
            "nn.layers" => self.eval.nn.layers = parse(key, value)?,
            "nn.embed" => self.eval.nn.embed = parse(key, value)?,
            "nn.kernel" => self.eval.nn.kernel = parse(key, value)?,
            "nn.lr" => self.eval.nn.lr = parse(key, value)?,
            "nn.beta1" => self.eval.nn.beta1 = parse(key, value)?,
            "nn.beta2" => self.eval.nn.beta2 = parse(key, value)?,
            "nn.eps" => self.eval.nn.eps = parse(key, value)?,
            "nn.seed" => self.eval.nn.seed = parse(key, value)?,
            "nn.device_sample" => self.eval.nn_device_sample = parse(key, value)?,
            "discretize.t_max" => self.t_max = parse(key, value)?,
            "discretize.anchor" => {
                self.anchor = match value.to_ascii_lowercase().as_str() {
                    "epoch" => GridAnchor::Epoch,
                    "midnight" => GridAnchor::LocalMidnight {
                        tz_offset_s: self.tz_offset_s,
                    },
                    _ => return Err(bad(key, "expected `epoch` or `midnight`")),
                }
            }
            "tz_offset_s" => {
                self.tz_offset_s = parse(key, value)?;
                if let GridAnchor::LocalMidnight { tz_offset_s } = &mut self.anchor {
                    *tz_offset_s = self.tz_offset_s;
                }
                self.synth.tz_offset_s = self.tz_offset_s;
            }
            "ingest.building_pattern" => {
                BuildingPattern::new(value).map_err(|e| bad(key, &e.to_string()))?;
                self.building_pattern = value.to_string();
            }
            "entropy.keep_unknown" => self.eval.entropy.keep_unknown = parse_bool(key, value)?,
            "entropy.segments" => {
                self.eval.entropy.segments = if value.eq_ignore_ascii_case("sqrt") {
                    SegmentRule::Sqrt
                } else {
                    let n: usize = parse(key, value)?;
                    if n == 0 {
                        return Err(bad(key, "segment count must be at least 1"));
                    }
                    SegmentRule::Fixed(n)
                }
            }
            "corr.method" => self.corr.method = parse(key, value)?,
            "corr.spatial" => self.corr.spatial = parse(key, value)?,
            "corr.window" => self.corr.window_s = parse(key, value)?,
            "corr.seq_len" => self.corr.seq_len = parse(key, value)?,
            _ if key.starts_with("synth.") => self.apply_synth(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn apply_synth(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let sub = &key["synth.".len()..];
        match sub {
            "days" => self.synth.n_days = parse(key, value)?,
            "start_epoch" => self.synth.start_epoch = parse(key, value)?,
            "distance_scale" => self.synth.distance_scale_m = parse(key, value)?,
            "grid_side" => {
                let side: usize = parse(key, value)?;
                let aps = self.synth.campus.first().map_or(6, |b| b.n_aps);
                self.synth.campus = SynthConfig::grid_campus(side);
                for b in &mut self.synth.campus {
                    b.n_aps = aps;
                }
            }
            "aps_per_building" => {
                let n: usize = parse(key, value)?;
                for b in &mut self.synth.campus {
                    b.n_aps = n;
                }
            }
            _ => {
                let (class, field) = sub
                    .split_once('.')
                    .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
                let class: DeviceClass = parse(key, class)?;
                let idx = match self.synth.classes.iter().position(|c| c.class == class) {
                    Some(i) => i,
                    None => {
                        self.synth.classes.push(ClassModel {
                            class,
                            ..ClassModel::flute(0)
                        });
                        self.synth.classes.len() - 1
                    }
                };
                let c = &mut self.synth.classes[idx];
                match field {
                    "devices" => c.n_devices = parse(key, value)?,
                    "oui" => c.oui = value.to_string(),
                    "stay" => c.stay = parse(key, value)?,
                    "dwell_median" => c.dwell_median_s = parse(key, value)?,
                    "dwell_sigma" => c.dwell_sigma = parse(key, value)?,
                    "reassoc" => c.reassoc_s = parse(key, value)?,
                    "ap_stickiness" => c.ap_stickiness = parse(key, value)?,
                    "active_from" => c.active_from_h = parse(key, value)?,
                    "active_to" => c.active_to_h = parse(key, value)?,
                    "weekday_active" => c.weekday_active = parse(key, value)?,
                    "weekend_active" => c.weekend_active = parse(key, value)?,
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
            }
        }
        Ok(())
    }

    /// Evaluation config with the neural architecture filter applied.
    pub fn eval_config(&self) -> EvalConfig {
        let mut e = self.eval.clone();
        e.seed = self.seed;
        e.methods.retain(|m| match m {
            Method::Lstm => self.nn_archs.contains(&Arch::Lstm),
            Method::Cnn => self.nn_archs.contains(&Arch::Cnn1d),
            _ => true,
        });
        e
    }

    /// `key = value` dump of the settings that shape results.
    pub fn describe(&self) -> String {
        let e = self.eval_config();
        let join = |v: Vec<String>| v.join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv(
            "eval.methods",
            join(e.methods.iter().map(|m| m.to_string()).collect()),
        );
        kv(
            "eval.seq_lens",
            join(e.seq_lens.iter().map(|k| k.to_string()).collect()),
        );
        kv(
            "eval.windows",
            join(e.windows.iter().map(|w| w.to_string()).collect()),
        );
        kv(
            "eval.spatial",
            join(e.spatial.iter().map(|s| s.to_string()).collect()),
        );
        kv("eval.skip_unknown", e.eval.skip_unknown.to_string());
        kv("eval.transitions_only", e.eval.transitions_only.to_string());
        kv("nn.hidden", e.nn.hidden.to_string());
        kv("nn.layers", e.nn.layers.to_string());
        kv("nn.embed", e.nn.embed.to_string());
        kv("nn.kernel", e.nn.kernel.to_string());
        kv("nn.lr", e.nn.lr.to_string());
        kv("nn.beta1", e.nn.beta1.to_string());
        kv("nn.beta2", e.nn.beta2.to_string());
        kv("nn.eps", e.nn.eps.to_string());
        kv("nn.seed", e.nn.seed.to_string());
        kv("nn.device_sample", e.nn_device_sample.to_string());
        kv("discretize.t_max", self.t_max.to_string());
        kv(
            "discretize.anchor",
            match self.anchor {
                GridAnchor::Epoch => "epoch".into(),
                GridAnchor::LocalMidnight { .. } => "midnight".into(),
            },
        );
        kv("tz_offset_s", self.tz_offset_s.to_string());
        kv("ingest.building_pattern", self.building_pattern.clone());
        kv("entropy.keep_unknown", e.entropy.keep_unknown.to_string());
        kv(
            "entropy.segments",
            match e.entropy.segments {
                SegmentRule::Sqrt => "sqrt".into(),
                SegmentRule::Fixed(n) => n.to_string(),
            },
        );
        kv("corr.method", self.corr.method.to_string());
        kv("corr.spatial", self.corr.spatial.to_string());
        kv("corr.window", self.corr.window_s.to_string());
        kv("corr.seq_len", self.corr.seq_len.to_string());
        out
    }
}
