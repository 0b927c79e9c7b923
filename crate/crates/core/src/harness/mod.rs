//! Experiment matrix: every (class, spatial, window, method, k) combination,
//! evaluated online per device and summarized as median accuracy.

pub mod config;
pub mod eval;
pub mod pipeline;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use eval::{evaluate_device, neural_for, DeviceScore, EvalError, EvalOptions, OnlinePredictor};

use crate::entropy::{
    entropy_bwt_with, entropy_lz, entropy_unconditional, estimation_input, max_predictability,
    EntropyOptions, EntropyReport,
};
use crate::markov::MarkovModel;
use crate::neural::{Arch, NeuralConfig};
use crate::trace::{DeviceClass, DiscreteSeries, SpatialResolution, TemporalResolution};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarnessError {
    #[error("empty input")]
    EmptyInput,
    #[error("unknown method `{0}`")]
    BadMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mc,
    Lstm,
    Cnn,
    Lz,
    Bwt,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mc,
        Method::Lstm,
        Method::Cnn,
        Method::Lz,
        Method::Bwt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mc => "MC",
            Method::Lstm => "LSTM",
            Method::Cnn => "CNN",
            Method::Lz => "LZ",
            Method::Bwt => "BWT",
        }
    }

    /// Methods whose rows are entropy bounds rather than measured accuracy.
    pub fn is_bound(self) -> bool {
        matches!(self, Method::Lz | Method::Bwt)
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Method::Lstm | Method::Cnn)
    }

    fn arch(self) -> Option<Arch> {
        match self {
            Method::Lstm => Some(Arch::Lstm),
            Method::Cnn => Some(Arch::Cnn1d),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| HarnessError::BadMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub seq_lens: Vec<usize>,
    pub windows: Vec<TemporalResolution>,
    pub spatial: Vec<SpatialResolution>,
    /// Devices per class given to the neural methods.
    pub nn_device_sample: usize,
    pub eval: EvalOptions,
    /// Template for neural models; arch, seq_len and seed are set per run.
    pub nn: NeuralConfig,
    pub entropy: EntropyOptions,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: Method::ALL.to_vec(),
            seq_lens: vec![5, 10, 20, 40],
            windows: TemporalResolution::canonical(),
            spatial: SpatialResolution::ALL.to_vec(),
            nn_device_sample: 50,
            eval: EvalOptions::default(),
            nn: NeuralConfig::new(Arch::Lstm, 1),
            entropy: EntropyOptions::default(),
            seed: 0,
        }
    }
}

/// Discretized series of every device at one (spatial, window) resolution.
pub type SeriesTable = BTreeMap<(SpatialResolution, u64), Vec<DiscreteSeries>>;

/// Per-device outcome of one combination. For bound methods `value` is
/// `Π_max`; otherwise it is the measured accuracy. Both are fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub device: String,
    pub class: DeviceClass,
    pub spatial: SpatialResolution,
    pub window_s: u64,
    pub method: Method,
    pub seq_len: Option<usize>,
    pub value: f64,
    pub score: Option<DeviceScore>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SkippedDevice {
    pub device: String,
    pub spatial: SpatialResolution,
    pub window_s: u64,
    pub method: Method,
    pub seq_len: Option<usize>,
    pub reason: String,
}

/// Total per-device compute time of one (method, spatial, window, k) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Runtime {
    pub method: Method,
    pub spatial: SpatialResolution,
    pub window_s: u64,
    pub seq_len: Option<usize>,
    pub n_jobs: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub class: DeviceClass,
    pub spatial: SpatialResolution,
    pub window_s: u64,
    pub method: Method,
    pub seq_len: Option<usize>,
    pub n_devices: usize,
    /// Percent.
    pub median_acc: f64,
    pub mean_acc: f64,
    /// Cello minus Flute median, when both classes are present.
    pub diff: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOutput {
    pub rows: Vec<MatrixRow>,
    pub accuracies: Vec<AccuracyRow>,
    pub entropy: Vec<(SpatialResolution, u64, EntropyReport)>,
    pub skipped: Vec<SkippedDevice>,
    pub runtimes: Vec<Runtime>,
}

/// Median with the mid-point convention for even lengths.
pub fn median(values: &[f64]) -> Result<f64, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Empirical CDF as `(value, fraction <= value)`, one point per distinct value.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.into_iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    Ok(out)
}

/// Deterministic per-class sample of at most `n` devices for the neural
/// methods, drawn from the sorted device list.
pub fn nn_sample(series: &[DiscreteSeries], n: usize, seed: u64) -> Vec<String> {
    let mut by_class: BTreeMap<DeviceClass, Vec<&str>> = BTreeMap::new();
    for s in series {
        by_class.entry(s.class).or_default().push(&s.device);
    }
    let mut out = Vec::new();
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        ids.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        ids.shuffle(&mut rng);
        out.extend(ids.into_iter().take(n).map(str::to_string));
    }
    out.sort();
    out
}

/// Seed of a device's neural model: fixed by the run seed and device id.
fn device_seed(seed: u64, device: &str) -> u64 {
    // FNV-1a of the id, mixed with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in device.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

enum Job<'a> {
    Predict {
        series: &'a DiscreteSeries,
        method: Method,
        k: usize,
    },
    Entropy {
        series: &'a DiscreteSeries,
    },
}

enum JobResult {
    Rows(
        Vec<(AccuracyRow, f64)>,
        Option<(SpatialResolution, u64, EntropyReport)>,
    ),
    Skipped(Vec<SkippedDevice>),
}

fn run_predict(
    series: &DiscreteSeries,
    method: Method,
    k: usize,
    cfg: &EvalConfig,
) -> Result<DeviceScore, EvalError> {
    match method.arch() {
        Some(arch) => {
            let nn_cfg = NeuralConfig {
                arch,
                seq_len: k,
                seed: device_seed(cfg.nn.seed ^ cfg.seed, &series.device),
                ..cfg.nn.clone()
            };
            let mut model = neural_for(series, nn_cfg)?;
            evaluate_device(series, &mut model, k, cfg.eval)
        }
        None => {
            let mut model = MarkovModel::new(k);
            evaluate_device(series, &mut model, k, cfg.eval)
        }
    }
}

fn run_job(job: &Job, cfg: &EvalConfig) -> JobResult {
    match *job {
        Job::Predict { series, method, k } => {
            let t0 = Instant::now();
            let res = run_predict(series, method, k, cfg);
            let secs = t0.elapsed().as_secs_f64();
            match res {
                Ok(score) => JobResult::Rows(
                    vec![(
                        AccuracyRow {
                            device: series.device.clone(),
                            class: series.class,
                            spatial: series.spatial,
                            window_s: series.window.seconds(),
                            method,
                            seq_len: Some(k),
                            value: score.accuracy(),
                            score: Some(score),
                        },
                        secs,
                    )],
                    None,
                ),
                Err(e) => JobResult::Skipped(vec![skip(series, method, Some(k), e.to_string())]),
            }
        }
        Job::Entropy { series } => {
            let bounds: Vec<Method> = cfg
                .methods
                .iter()
                .copied()
                .filter(|m| m.is_bound())
                .collect();
            match entropy_job(series, cfg, &bounds) {
                Ok((rows, report)) => JobResult::Rows(
                    rows,
                    Some((series.spatial, series.window.seconds(), report)),
                ),
                Err(e) => JobResult::Skipped(
                    bounds
                        .iter()
                        .map(|&m| skip(series, m, None, e.to_string()))
                        .collect(),
                ),
            }
        }
    }
}

fn skip(
    series: &DiscreteSeries,
    method: Method,
    seq_len: Option<usize>,
    reason: String,
) -> SkippedDevice {
    SkippedDevice {
        device: series.device.clone(),
        spatial: series.spatial,
        window_s: series.window.seconds(),
        method,
        seq_len,
        reason,
    }
}

type EntropyJobOutput = (Vec<(AccuracyRow, f64)>, EntropyReport);

fn entropy_job(
    series: &DiscreteSeries,
    cfg: &EvalConfig,
    bounds: &[Method],
) -> Result<EntropyJobOutput, EvalError> {
    let seq = estimation_input(series, cfg.entropy.keep_unknown);
    let mut distinct = seq.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let n_loc = distinct.len();

    let s_unc = entropy_unconditional(&seq)?;
    let t0 = Instant::now();
    let s_lz = entropy_lz(&seq)?;
    let lz_secs = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let s_bwt = entropy_bwt_with(&seq, cfg.entropy.segments)?;
    let bwt_secs = t0.elapsed().as_secs_f64();
    let report = EntropyReport {
        device: series.device.clone(),
        class: series.class,
        n_symbols: seq.len(),
        n_locations: n_loc,
        s_unc,
        s_lz,
        s_bwt,
        pi_unc: max_predictability(s_unc, n_loc),
        pi_lz: max_predictability(s_lz, n_loc),
        pi_bwt: max_predictability(s_bwt, n_loc),
    };
    let rows = bounds
        .iter()
        .map(|&m| {
            let (value, secs) = if m == Method::Lz {
                (report.pi_lz, lz_secs)
            } else {
                (report.pi_bwt, bwt_secs)
            };
            (
                AccuracyRow {
                    device: series.device.clone(),
                    class: series.class,
                    spatial: series.spatial,
                    window_s: series.window.seconds(),
                    method: m,
                    seq_len: None,
                    value,
                    score: None,
                },
                secs,
            )
        })
        .collect();
    Ok((rows, report))
}

/// Runs every requested combination over the prepared series. Per-device
/// failures are collected as skips; the matrix itself never aborts.
pub fn run_matrix(table: &SeriesTable, cfg: &EvalConfig) -> MatrixOutput {
    let mut jobs = Vec::new();
    for ((spatial, window), series) in table {
        if !cfg.spatial.contains(spatial) || !cfg.windows.iter().any(|w| w.seconds() == *window) {
            continue;
        }
        let sample = nn_sample(series, cfg.nn_device_sample, cfg.seed);
        for s in series {
            for &method in &cfg.methods {
                if method.is_bound() {
                    continue;
                }
                if method.is_neural() && sample.binary_search(&s.device).is_err() {
                    continue;
                }
                for &k in &cfg.seq_lens {
                    jobs.push(Job::Predict {
                        series: s,
                        method,
                        k,
                    });
                }
            }
            // entropy is computed even without bound methods, for entropy.csv
            jobs.push(Job::Entropy { series: s });
        }
    }

    let results: Vec<JobResult> = jobs.par_iter().map(|j| run_job(j, cfg)).collect();

    let mut out = MatrixOutput::default();
    let mut times: BTreeMap<(Method, SpatialResolution, u64, Option<usize>), (usize, f64)> =
        BTreeMap::new();
    for r in results {
        match r {
            JobResult::Rows(rows, report) => {
                for (row, secs) in rows {
                    let t = times
                        .entry((row.method, row.spatial, row.window_s, row.seq_len))
                        .or_default();
                    t.0 += 1;
                    t.1 += secs;
                    out.accuracies.push(row);
                }
                out.entropy.extend(report);
            }
            JobResult::Skipped(s) => out.skipped.extend(s),
        }
    }
    out.runtimes = times
        .into_iter()
        .map(
            |((method, spatial, window_s, seq_len), (n_jobs, seconds))| Runtime {
                method,
                spatial,
                window_s,
                seq_len,
                n_jobs,
                seconds,
            },
        )
        .collect();
    out.accuracies.sort_by(accuracy_order);
    out.skipped.sort();
    out.entropy.sort_by(|a, b| {
        (a.0, a.1, a.2.class, &a.2.device).cmp(&(b.0, b.1, b.2.class, &b.2.device))
    });
    out.rows = aggregate(&out.accuracies, &out.runtimes);
    out
}

fn accuracy_order(a: &AccuracyRow, b: &AccuracyRow) -> std::cmp::Ordering {
    (
        a.spatial, a.window_s, a.method, a.seq_len, a.class, &a.device,
    )
        .cmp(&(
            b.spatial, b.window_s, b.method, b.seq_len, b.class, &b.device,
        ))
}

type CellKey = (SpatialResolution, u64, Method, Option<usize>);

/// Median/mean per (class, cell) in percent, plus the Cello - Flute diff.
pub fn aggregate(accuracies: &[AccuracyRow], runtimes: &[Runtime]) -> Vec<MatrixRow> {
    let mut cells: BTreeMap<(CellKey, DeviceClass), Vec<f64>> = BTreeMap::new();
    for a in accuracies {
        cells
            .entry(((a.spatial, a.window_s, a.method, a.seq_len), a.class))
            .or_default()
            .push(100.0 * a.value);
    }
    let medians: BTreeMap<(CellKey, DeviceClass), f64> = cells
        .iter()
        .map(|(k, v)| (*k, median(v).expect("cells are non-empty")))
        .collect();
    let mut rows: Vec<MatrixRow> = cells
        .iter()
        .map(|(&(key, class), values)| {
            let (spatial, window_s, method, seq_len) = key;
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let diff = match (
                medians.get(&(key, DeviceClass::Cello)),
                medians.get(&(key, DeviceClass::Flute)),
            ) {
                (Some(c), Some(f)) => Some(c - f),
                _ => None,
            };
            MatrixRow {
                class,
                spatial,
                window_s,
                method,
                seq_len,
                n_devices: values.len(),
                median_acc: medians[&(key, class)],
                mean_acc: sorted.iter().sum::<f64>() / sorted.len() as f64,
                diff,
                wall_time_s: runtimes
                    .iter()
                    .find(|r| (r.spatial, r.window_s, r.method, r.seq_len) == key)
                    .map_or(0.0, |r| r.seconds),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.class, a.spatial, a.window_s, a.method, a.seq_len)
            .cmp(&(b.class, b.spatial, b.window_s, b.method, b.seq_len))
    });
    rows
}
