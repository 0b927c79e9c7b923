//! Synthetic association traces with known building-level entropy rates.
//!
//! Every device walks a first-order Markov chain over campus buildings. Each
//! visit lasts a log-normal dwell and is broken into re-association records
//! every `reassoc_s` seconds, each at an AP of the current building. Devices
//! are only active inside a daily window, on a random subset of days.

use std::collections::BTreeSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{AssociationRecord, OuiMap};
use crate::trace::DeviceClass;

/// Longest single lease.
pub const SESSION_CAP_S: i64 = 4 * 3600;
const ROW_TOL: f64 = 1e-9;
const WALK_SPEED_MPS: f64 = 1.4;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub name: String,
    pub x_m: f64,
    pub y_m: f64,
    pub n_aps: usize,
}

impl Building {
    pub fn ap_name(&self, j: usize) -> String {
        format!("{}r{}-ap-{}", self.name, 10 + j, j + 1)
    }
}

/// Movement and activity parameters of one device class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub class: DeviceClass,
    pub n_devices: usize,
    /// `xx:xx:xx` prefix shared by the class.
    pub oui: String,
    /// Probability that a visit is followed by another in the same building.
    pub stay: f64,
    /// Explicit transition matrix; when absent it is built from `stay` and
    /// distance-decaying weights over the other buildings.
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Median visit length in seconds.
    pub dwell_median_s: f64,
    /// Log-scale spread of visit lengths.
    pub dwell_sigma: f64,
    pub reassoc_s: i64,
    /// Chance a re-association stays on the same AP.
    pub ap_stickiness: f64,
    /// Local hours of the daily activity window.
    pub active_from_h: f64,
    pub active_to_h: f64,
    pub weekday_active: f64,
    pub weekend_active: f64,
}

impl ClassModel {
    pub fn flute(n_devices: usize) -> Self {
        ClassModel {
            class: DeviceClass::Flute,
            n_devices,
            oui: "f0:0f:01".into(),
            stay: 0.6,
            matrix: None,
            dwell_median_s: 1200.0,
            dwell_sigma: 0.7,
            reassoc_s: 600,
            ap_stickiness: 0.5,
            active_from_h: 8.0,
            active_to_h: 22.0,
            weekday_active: 0.95,
            weekend_active: 0.6,
        }
    }

    pub fn cello(n_devices: usize) -> Self {
        ClassModel {
            class: DeviceClass::Cello,
            n_devices,
            oui: "ce:11:0a".into(),
            stay: 0.95,
            matrix: None,
            dwell_median_s: 7200.0,
            dwell_sigma: 0.5,
            reassoc_s: 1800,
            ap_stickiness: 0.9,
            active_from_h: 9.0,
            active_to_h: 18.0,
            weekday_active: 0.95,
            weekend_active: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_days: u32,
    /// Local midnight of the first day.
    pub start_epoch: i64,
    pub tz_offset_s: i64,
    pub campus: Vec<Building>,
    pub classes: Vec<ClassModel>,
    /// Length scale of the distance decay in default matrices.
    pub distance_scale_m: f64,
}

/// 2015-01-05, a Monday, 00:00 UTC.
pub const DEFAULT_START: i64 = 1_420_416_000;

impl SynthConfig {
    /// A `side x side` grid of buildings, 250 m apart, six APs each.
    pub fn grid_campus(side: usize) -> Vec<Building> {
        (0..side * side)
            .map(|i| Building {
                name: format!("b{}", 101 + i),
                x_m: 250.0 * (i % side) as f64,
                y_m: 250.0 * (i / side) as f64,
                n_aps: 6,
            })
            .collect()
    }

    pub fn with_population(seed: u64, n_flute: usize, n_cello: usize) -> Self {
        SynthConfig {
            seed,
            n_days: 14,
            start_epoch: DEFAULT_START,
            tz_offset_s: 0,
            campus: Self::grid_campus(3),
            classes: vec![ClassModel::flute(n_flute), ClassModel::cello(n_cello)],
            distance_scale_m: 400.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::ConfigInvalid(m));
        if self.n_days == 0 {
            return bad("n_days must be at least 1".into());
        }
        if self.campus.is_empty() {
            return bad("campus has no buildings".into());
        }
        let mut names = BTreeSet::new();
        for b in &self.campus {
            if b.n_aps == 0 {
                return bad(format!("building {} has no APs", b.name));
            }
            if b.n_aps > 255 {
                return bad(format!("building {} has more than 255 APs", b.name));
            }
            if crate::ingest::building_of(&b.ap_name(0)).ok().as_deref() != Some(b.name.as_str()) {
                return bad(format!(
                    "building name `{}` is not of the form b<digits>",
                    b.name
                ));
            }
            if !names.insert(&b.name) {
                return bad(format!("duplicate building {}", b.name));
            }
        }
        if self.campus.len() > 255 {
            return bad("more than 255 buildings".into());
        }
        if !(self.distance_scale_m > 0.0) {
            return bad("distance scale must be positive".into());
        }
        for c in &self.classes {
            let name = c.class;
            if crate::ingest::oui_of(&format!("{}:00:00:00", c.oui)).is_none() {
                return bad(format!("{name}: bad OUI `{}`", c.oui));
            }
            if !(0.0..=1.0).contains(&c.stay) {
                return bad(format!("{name}: stay probability outside [0, 1]"));
            }
            if !(c.dwell_median_s > 0.0 && c.dwell_sigma > 0.0) {
                return bad(format!("{name}: dwell parameters must be positive"));
            }
            if c.reassoc_s <= 0 {
                return bad(format!("{name}: re-association interval must be positive"));
            }
            if !(0.0..=1.0).contains(&c.ap_stickiness)
                || !(0.0..=1.0).contains(&c.weekday_active)
                || !(0.0..=1.0).contains(&c.weekend_active)
            {
                return bad(format!("{name}: probabilities must lie in [0, 1]"));
            }
            if !(0.0 <= c.active_from_h && c.active_from_h < c.active_to_h && c.active_to_h <= 24.0)
            {
                return bad(format!(
                    "{name}: activity window must satisfy 0 <= from < to <= 24"
                ));
            }
            if let Some(m) = &c.matrix {
                check_matrix(m, self.campus.len())
                    .map_err(|e| SynthError::ConfigInvalid(format!("{name}: {e}")))?;
            }
        }
        let ouis: BTreeSet<_> = self
            .classes
            .iter()
            .map(|c| c.oui.to_ascii_lowercase())
            .collect();
        if ouis.len() != self.classes.len() {
            return bad("classes must use distinct OUIs".into());
        }
        Ok(())
    }

    /// Transition matrix used for class `c`.
    pub fn matrix_for(&self, c: &ClassModel) -> Vec<Vec<f64>> {
        if let Some(m) = &c.matrix {
            return m.clone();
        }
        let n = self.campus.len();
        if n == 1 {
            return vec![vec![1.0]];
        }
        (0..n)
            .map(|i| {
                let weights: Vec<f64> = (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            (-distance(&self.campus[i], &self.campus[j]) / self.distance_scale_m)
                                .exp()
                        }
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                (0..n)
                    .map(|j| {
                        if i == j {
                            c.stay
                        } else {
                            (1.0 - c.stay) * weights[j] / total
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

fn check_matrix(m: &[Vec<f64>], n: usize) -> Result<(), String> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(format!("transition matrix must be {n} x {n}"));
    }
    for (i, row) in m.iter().enumerate() {
        if row.iter().any(|&p| !(p >= 0.0)) {
            return Err(format!("row {i} has a negative or NaN entry"));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_TOL {
            return Err(format!("row {i} sums to {s}, not 1"));
        }
    }
    Ok(())
}

pub fn distance(a: &Building, b: &Building) -> f64 {
    (a.x_m - b.x_m).hypot(a.y_m - b.y_m)
}

/// Stationary distribution by power iteration on the lazy chain
/// `(I + P) / 2`, which converges for any irreducible chain.
pub fn stationary(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        for (i, row) in m.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                next[j] += 0.5 * pi[i] * p;
            }
            next[i] += 0.5 * pi[i];
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    pi
}

/// `Σ_i π_i H(P_i)` in bits per transition.
pub fn entropy_rate(m: &[Vec<f64>]) -> f64 {
    let pi = stationary(m);
    m.iter()
        .zip(&pi)
        .map(|(row, &w)| {
            let h: f64 = row
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.log2())
                .sum();
            w * h
        })
        .sum()
}

fn sample_row(row: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left a sliver; land on the last reachable state
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `n` successive states of the chain started at `start`.
pub fn building_chain(m: &[Vec<f64>], start: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut s = start;
    for _ in 0..n {
        out.push(s);
        s = sample_row(&m[s], rng);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SynthDevice {
    pub uuid: String,
    pub class: DeviceClass,
    /// Buildings visited, in order (one entry per visit).
    pub visits: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ClassTruth {
    pub class: DeviceClass,
    pub entropy_rate: f64,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// All records, sorted by lease begin then device.
    pub records: Vec<AssociationRecord>,
    pub devices: Vec<SynthDevice>,
    pub oui_map: OuiMap,
    pub truth: Vec<ClassTruth>,
}

fn device_mac(oui: &str, idx: usize) -> String {
    format!(
        "{}:{:02x}:{:02x}:{:02x}",
        oui.to_ascii_lowercase(),
        (idx >> 16) & 0xff,
        (idx >> 8) & 0xff,
        idx & 0xff
    )
}

fn weekday(day_start_local: i64) -> u32 {
    // 1970-01-01 was a Thursday; 0 = Sunday
    ((day_start_local.div_euclid(86_400) + 4).rem_euclid(7)) as u32
}

struct DeviceGen<'a> {
    cfg: &'a SynthConfig,
    model: &'a ClassModel,
    matrix: &'a [Vec<f64>],
    uuid: String,
    ip: String,
}

impl DeviceGen<'_> {
    fn run(&self, rng: &mut ChaCha8Rng) -> (Vec<AssociationRecord>, Vec<usize>) {
        let dwell = LogNormal::new(self.model.dwell_median_s.ln(), self.model.dwell_sigma)
            .expect("validated dwell parameters");
        let pi = stationary(self.matrix);
        let mut building = sample_row(&pi, rng);
        let mut ap = rng.random_range(0..self.cfg.campus[building].n_aps);
        let mut records = Vec::new();
        let mut visits = Vec::new();
        for day in 0..self.cfg.n_days as i64 {
            let midnight = self.cfg.start_epoch + day * 86_400;
            let wd = weekday(midnight + self.cfg.tz_offset_s);
            let p_active = if wd == 0 || wd == 6 {
                self.model.weekend_active
            } else {
                self.model.weekday_active
            };
            if rng.random::<f64>() >= p_active {
                continue;
            }
            let from = midnight + (self.model.active_from_h * 3600.0) as i64;
            let to = midnight + (self.model.active_to_h * 3600.0) as i64;
            let mut t = from + rng.random_range(0..1800);
            while t < to {
                visits.push(building);
                let len = (dwell.sample(rng) as i64).max(60);
                let end = (t + len).min(to);
                let b = &self.cfg.campus[building];
                let mut s = t;
                while s < end {
                    records.push(AssociationRecord {
                        user_ip: self.ip.clone(),
                        uuid: self.uuid.clone(),
                        ap_name: b.ap_name(ap),
                        ap_mac: format!("02:00:00:{:02x}:{:02x}:01", building, ap),
                        lease_begin: s,
                        lease_end: s + (end - s).min(SESSION_CAP_S),
                    });
                    s += self.model.reassoc_s;
                    if rng.random::<f64>() >= self.model.ap_stickiness {
                        ap = rng.random_range(0..b.n_aps);
                    }
                }
                let next = sample_row(&self.matrix[building], rng);
                let travel = (distance(b, &self.cfg.campus[next]) / WALK_SPEED_MPS) as i64;
                if next != building {
                    ap = rng.random_range(0..self.cfg.campus[next].n_aps);
                }
                building = next;
                t = end + travel;
            }
        }
        (records, visits)
    }
}

/// Generates the whole population. Device `i` (counting across classes in
/// config order) draws from its own ChaCha stream, so the output does not
/// depend on scheduling.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let matrices: Vec<Vec<Vec<f64>>> = cfg.classes.iter().map(|c| cfg.matrix_for(c)).collect();
    let mut jobs = Vec::new();
    for (ci, c) in cfg.classes.iter().enumerate() {
        for _ in 0..c.n_devices {
            jobs.push(ci);
        }
    }
    let per_device: Vec<(Vec<AssociationRecord>, SynthDevice)> = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &ci)| {
            let model = &cfg.classes[ci];
            let gen = DeviceGen {
                cfg,
                model,
                matrix: &matrices[ci],
                uuid: device_mac(&model.oui, idx),
                ip: format!(
                    "10.{}.{}.{}",
                    (idx >> 16) & 0xff,
                    (idx >> 8) & 0xff,
                    idx & 0xff
                ),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(idx as u64);
            let (records, visits) = gen.run(&mut rng);
            let device = SynthDevice {
                uuid: gen.uuid,
                class: model.class,
                visits,
            };
            (records, device)
        })
        .collect();

    let mut records = Vec::new();
    let mut devices = Vec::new();
    for (r, d) in per_device {
        records.extend(r);
        devices.push(d);
    }
    records.sort_by(|a, b| {
        a.lease_begin
            .cmp(&b.lease_begin)
            .then_with(|| a.uuid.cmp(&b.uuid))
    });

    let mut oui_map = OuiMap::new();
    for c in &cfg.classes {
        oui_map.insert(&c.oui, c.class);
    }
    let truth = cfg
        .classes
        .iter()
        .zip(matrices)
        .map(|(c, m)| ClassTruth {
            class: c.class,
            entropy_rate: entropy_rate(&m),
            matrix: m,
        })
        .collect();
    Ok(SynthOutput {
        records,
        devices,
        oui_map,
        truth,
    })
}

/// Long-format truth table: one `entropy_rate` row per class, then one
/// `transition` row per matrix entry.
pub fn write_ground_truth<W: Write>(
    truth: &[ClassTruth],
    campus: &[Building],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "class,quantity,from,to,value")?;
    for t in truth {
        writeln!(out, "{},entropy_rate,,,{:.9}", t.class, t.entropy_rate)?;
        for (i, row) in t.matrix.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{},transition,{},{},{:.9}",
                    t.class, campus[i].name, campus[j].name, p
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_buildings<W: Write>(campus: &[Building], mut out: W) -> std::io::Result<()> {
    writeln!(out, "building,x_m,y_m")?;
    for b in campus {
        writeln!(out, "{},{},{}", b.name, b.x_m, b.y_m)?;
    }
    Ok(())
}
