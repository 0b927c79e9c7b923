//! Per-device mobility and traffic features, and their Pearson correlation
//! with prediction accuracy.
//!
//! Features are split by local day type (weekday `w`, weekend `e`):
//! preferred-building dwell (`pdt`), total jump distance (`tj`), mean
//! active time per day (`aat`) and mean inter-arrival time of association
//! records (`ai*_assoc`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::discretize::normalize_intervals;
use crate::ingest::{AssociationRecord, BuildingPattern};
use crate::trace::{DeviceClass, SymbolId};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no coordinates for buildings: {}", .0.join(", "))]
    MissingCoordinates(Vec<String>),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("coordinates line {line_no}: {reason}")]
    BadCoordinates { line_no: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeviceFeatures {
    pub pdtw: f64,
    pub pdte: f64,
    pub tjw: f64,
    pub tje: f64,
    pub aatw: f64,
    pub aate: f64,
    pub aiw_assoc: f64,
    pub aie_assoc: f64,
}

impl DeviceFeatures {
    pub const NAMES: [&'static str; 8] = [
        "pdtw",
        "pdte",
        "tjw",
        "tje",
        "aatw",
        "aate",
        "aiw_assoc",
        "aie_assoc",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.pdtw,
            self.pdte,
            self.tjw,
            self.tje,
            self.aatw,
            self.aate,
            self.aiw_assoc,
            self.aie_assoc,
        ]
    }
}

/// Planar building coordinates in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildingCoords {
    map: HashMap<String, (f64, f64)>,
}

impl BuildingCoords {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, building: &str, x: f64, y: f64) {
        self.map.insert(building.to_string(), (x, y));
    }

    pub fn get(&self, building: &str) -> Option<(f64, f64)> {
        self.map.get(building).copied()
    }

    /// Reads `building,x_m,y_m` rows; a header line starting with
    /// `building` and `#` comments are skipped.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self, FeatureError> {
        let mut out = BuildingCoords::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty()
                || line.starts_with('#')
                || (idx == 0 && line.starts_with("building"))
            {
                continue;
            }
            let bad = |reason: String| FeatureError::BadCoordinates {
                line_no: idx + 1,
                reason,
            };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", f.len())));
            }
            let x: f64 = f[1].parse().map_err(|_| bad(format!("bad x `{}`", f[1])))?;
            let y: f64 = f[2].parse().map_err(|_| bad(format!("bad y `{}`", f[2])))?;
            out.insert(f[0], x, y);
        }
        Ok(out)
    }

    fn distance(&self, a: &str, b: &str) -> f64 {
        let (ax, ay) = self.map[a];
        let (bx, by) = self.map[b];
        (ax - bx).hypot(ay - by)
    }
}

/// Local weekday, 0 = Sunday.
pub fn weekday(epoch: i64, tz_offset_s: i64) -> u32 {
    ((epoch + tz_offset_s).div_euclid(86_400) + 4).rem_euclid(7) as u32
}

pub fn is_weekend(epoch: i64, tz_offset_s: i64) -> bool {
    matches!(weekday(epoch, tz_offset_s), 0 | 6)
}

/// Feature context shared by all devices of a run.
#[derive(Debug, Clone)]
pub struct FeatureContext<'a> {
    pub coords: &'a BuildingCoords,
    pub pattern: &'a BuildingPattern,
    pub tz_offset_s: i64,
    /// Occupancy horizon used for the dwell feature.
    pub t_max: u64,
}

/// Features of one device. Record order does not matter.
pub fn compute_features(
    records: &[AssociationRecord],
    ctx: &FeatureContext,
) -> Result<DeviceFeatures, FeatureError> {
    let mut recs: Vec<&AssociationRecord> = records.iter().collect();
    recs.sort_by(|a, b| {
        (a.lease_begin, &a.ap_name, a.lease_end).cmp(&(b.lease_begin, &b.ap_name, b.lease_end))
    });
    let buildings: Vec<String> = recs
        .iter()
        .map(|r| ctx.pattern.building_or_fallback(&r.ap_name))
        .collect();
    let missing: BTreeSet<&String> = buildings
        .iter()
        .filter(|b| ctx.coords.get(b).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(FeatureError::MissingCoordinates(
            missing.into_iter().cloned().collect(),
        ));
    }
    let weekend: Vec<bool> = recs
        .iter()
        .map(|r| is_weekend(r.lease_begin, ctx.tz_offset_s))
        .collect();
    let idx = |we: bool| usize::from(we);

    // preferred-building dwell from occupancy intervals, by the day type of
    // each interval's start
    let mut ids: BTreeMap<&str, SymbolId> = BTreeMap::new();
    for b in &buildings {
        let next = ids.len() as SymbolId + 1;
        ids.entry(b.as_str()).or_insert(next);
    }
    let events: Vec<(SymbolId, i64)> = recs
        .iter()
        .zip(&buildings)
        .map(|(r, b)| (ids[b.as_str()], r.lease_begin))
        .collect();
    let mut occupancy = [vec![0i64; ids.len() + 1], vec![0i64; ids.len() + 1]];
    for iv in normalize_intervals(&events, ctx.t_max) {
        occupancy[idx(is_weekend(iv.begin, ctx.tz_offset_s))][iv.location as usize] +=
            iv.end - iv.begin;
    }
    // the modal building's total; ties do not change the value
    let pdt = |we: bool| *occupancy[idx(we)].iter().max().unwrap_or(&0) as f64;

    let mut tj = [0.0; 2];
    for i in 1..recs.len() {
        if buildings[i] != buildings[i - 1] {
            tj[idx(weekend[i])] += ctx.coords.distance(&buildings[i - 1], &buildings[i]);
        }
    }

    let mut active: [BTreeMap<i64, i64>; 2] = Default::default();
    let mut gaps = [(0.0, 0usize); 2];
    for (i, r) in recs.iter().enumerate() {
        let day = crate::ingest::day_index(r.lease_begin, ctx.tz_offset_s);
        *active[idx(weekend[i])].entry(day).or_default() += r.lease_end - r.lease_begin;
        if i > 0 && crate::ingest::day_index(recs[i - 1].lease_begin, ctx.tz_offset_s) == day {
            let g = &mut gaps[idx(weekend[i])];
            g.0 += (r.lease_begin - recs[i - 1].lease_begin) as f64;
            g.1 += 1;
        }
    }
    let aat = |we: bool| {
        let days = &active[idx(we)];
        if days.is_empty() {
            0.0
        } else {
            days.values().sum::<i64>() as f64 / days.len() as f64
        }
    };
    let ai = |we: bool| {
        let (sum, n) = gaps[idx(we)];
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };

    Ok(DeviceFeatures {
        pdtw: pdt(false),
        pdte: pdt(true),
        tjw: tj[0],
        tje: tj[1],
        aatw: aat(false),
        aate: aat(true),
        aiw_assoc: ai(false),
        aie_assoc: ai(true),
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, FeatureError> {
    if x.len() != y.len() {
        return Err(FeatureError::DegenerateInput(format!(
            "lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(FeatureError::DegenerateInput("fewer than 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(FeatureError::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceAccuracy {
    pub device: String,
    pub class: DeviceClass,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCell {
    pub class: DeviceClass,
    pub feature: &'static str,
    /// `None` when the inputs were degenerate.
    pub r: Option<f64>,
    pub n_devices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub cells: Vec<CorrelationCell>,
    /// Devices with an accuracy but no features (or the reverse).
    pub dropped: usize,
}

/// One coefficient per (class, feature) over devices present on both sides.
pub fn correlation_report(
    accuracies: &[DeviceAccuracy],
    features: &BTreeMap<String, DeviceFeatures>,
    classes: &[DeviceClass],
) -> CorrelationReport {
    let mut dropped = 0;
    let mut joined: BTreeMap<DeviceClass, Vec<(f64, DeviceFeatures)>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for a in accuracies {
        seen.insert(a.device.as_str());
        match features.get(&a.device) {
            Some(f) => joined.entry(a.class).or_default().push((a.accuracy, *f)),
            None => dropped += 1,
        }
    }
    dropped += features
        .keys()
        .filter(|d| !seen.contains(d.as_str()))
        .count();

    let mut cells = Vec::new();
    for &class in classes {
        let rows = joined.get(&class).map(Vec::as_slice).unwrap_or(&[]);
        let acc: Vec<f64> = rows.iter().map(|(a, _)| *a).collect();
        for (fi, feature) in DeviceFeatures::NAMES.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|(_, f)| f.values()[fi]).collect();
            cells.push(CorrelationCell {
                class,
                feature,
                r: pearson(&col, &acc).ok(),
                n_devices: rows.len(),
            });
        }
    }
    CorrelationReport { cells, dropped }
}

pub fn write_correlations<W: Write>(cells: &[CorrelationCell], mut out: W) -> std::io::Result<()> {
    writeln!(out, "class,feature,r,n_devices")?;
    for c in cells {
        let r = c.r.map(|r| format!("{r:.6}")).unwrap_or_default();
        writeln!(out, "{},{},{},{}", c.class, c.feature, r, c.n_devices)?;
    }
    Ok(())
}

pub fn write_features<W: Write>(
    features: &BTreeMap<String, DeviceFeatures>,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "device,{}", DeviceFeatures::NAMES.join(","))?;
    for (d, f) in features {
        let vals: Vec<String> = f.values().iter().map(|v| format!("{v:.3}")).collect();
        writeln!(out, "{d},{}", vals.join(","))?;
    }
    Ok(())
}
