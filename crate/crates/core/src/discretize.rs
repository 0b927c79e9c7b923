//! Turns a device's association records into a uniform-interval location series.
//!
//! Each association at time `t` claims the device for
//! `[t, min(next association, t + t_max))`. Every window of length `w` then
//! takes the location with the largest occupied duration inside it, or
//! Unknown when nothing overlaps.

use thiserror::Error;

use crate::ingest::{AssociationRecord, BuildingPattern};
use crate::trace::{
    DeviceClass, DiscreteSeries, LocationAlphabet, SpatialResolution, SymbolId, TemporalResolution,
    UNKNOWN,
};

pub const DEFAULT_T_MAX: u64 = 3600;
pub const DEFAULT_WINDOW: u64 = 900;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiscretizeError {
    #[error("device {0} has no usable records")]
    EmptyTrace(String),
}

/// Where the window grid is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAnchor {
    /// First lease begin floored to a multiple of `w` (epoch-aligned).
    Epoch,
    /// Local midnight of the first record's day, under a fixed UTC offset.
    LocalMidnight { tz_offset_s: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscretizerConfig {
    pub window: TemporalResolution,
    pub t_max: u64,
    pub spatial: SpatialResolution,
    pub anchor: GridAnchor,
}

impl Default for DiscretizerConfig {
    fn default() -> Self {
        DiscretizerConfig {
            window: TemporalResolution::new(DEFAULT_WINDOW as i64).unwrap(),
            t_max: DEFAULT_T_MAX,
            spatial: SpatialResolution::AccessPoint,
            anchor: GridAnchor::Epoch,
        }
    }
}

/// A half-open stay `[begin, end)` at one location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccupancyInterval {
    pub location: SymbolId,
    pub begin: i64,
    pub end: i64,
}

/// Builds occupancy from time-ordered `(location, association time)` events.
///
/// A later association truncates the occupancy of the one before it; no
/// occupancy extends past `t_max` after its association. Zero-length
/// intervals (simultaneous associations) are dropped, so the later one wins.
pub fn normalize_intervals(events: &[(SymbolId, i64)], t_max: u64) -> Vec<OccupancyInterval> {
    let mut out = Vec::with_capacity(events.len());
    for (i, &(location, begin)) in events.iter().enumerate() {
        let mut end = begin.saturating_add(t_max as i64);
        if let Some(&(_, next)) = events.get(i + 1) {
            end = end.min(next);
        }
        if end > begin {
            out.push(OccupancyInterval {
                location,
                begin,
                end,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Weight {
    location: SymbolId,
    duration: i64,
    first: i64,
}

fn pick(weights: &[Weight]) -> SymbolId {
    weights
        .iter()
        .min_by(|a, b| {
            b.duration
                .cmp(&a.duration)
                .then(a.first.cmp(&b.first))
                .then(a.location.cmp(&b.location))
        })
        .map_or(UNKNOWN, |w| w.location)
}

fn accumulate(weights: &mut Vec<Weight>, iv: &OccupancyInterval, t0: i64, t1: i64) {
    let lo = iv.begin.max(t0);
    let hi = iv.end.min(t1);
    if hi <= lo {
        return;
    }
    match weights.iter_mut().find(|w| w.location == iv.location) {
        Some(w) => {
            w.duration += hi - lo;
            w.first = w.first.min(lo);
        }
        None => weights.push(Weight {
            location: iv.location,
            duration: hi - lo,
            first: lo,
        }),
    }
}

/// Dominant location of `[window_start, window_start + w)`.
///
/// Ties go to the location occupied earliest within the window, then to the
/// smaller id. Returns [`UNKNOWN`] when no interval overlaps the window.
pub fn step_value(window_start: i64, w: u64, intervals: &[OccupancyInterval]) -> SymbolId {
    let t1 = window_start + w as i64;
    let mut weights = Vec::new();
    for iv in intervals {
        accumulate(&mut weights, iv, window_start, t1);
    }
    pick(&weights)
}

/// Step values for `n` consecutive windows starting at `start`.
/// `intervals` must be sorted and non-overlapping.
pub fn sample_intervals(
    intervals: &[OccupancyInterval],
    start: i64,
    w: u64,
    n: usize,
) -> Vec<SymbolId> {
    let mut out = Vec::with_capacity(n);
    let mut lo = 0;
    let mut weights = Vec::new();
    for i in 0..n {
        let t0 = start + (i as i64) * w as i64;
        let t1 = t0 + w as i64;
        while lo < intervals.len() && intervals[lo].end <= t0 {
            lo += 1;
        }
        weights.clear();
        for iv in intervals[lo..].iter().take_while(|iv| iv.begin < t1) {
            accumulate(&mut weights, iv, t0, t1);
        }
        out.push(pick(&weights));
    }
    out
}

fn grid_start(first: i64, w: u64, anchor: GridAnchor) -> i64 {
    let w = w as i64;
    match anchor {
        GridAnchor::Epoch => first.div_euclid(w) * w,
        GridAnchor::LocalMidnight { tz_offset_s } => {
            let day_start = (first + tz_offset_s).div_euclid(86_400) * 86_400 - tz_offset_s;
            day_start + (first - day_start).div_euclid(w) * w
        }
    }
}

/// Location name of a record at the requested spatial resolution.
pub fn location_name(
    record: &AssociationRecord,
    spatial: SpatialResolution,
    pattern: &BuildingPattern,
) -> String {
    match spatial {
        SpatialResolution::AccessPoint => record.ap_name.clone(),
        SpatialResolution::Building => pattern.building_or_fallback(&record.ap_name),
    }
}

/// Discretizes one device's records.
///
/// The resulting alphabet lists locations in order of first appearance in
/// the series, so the text form round-trips exactly.
pub fn discretize(
    device: &str,
    class: DeviceClass,
    records: &[AssociationRecord],
    config: &DiscretizerConfig,
    pattern: &BuildingPattern,
) -> Result<DiscreteSeries, DiscretizeError> {
    let mut sorted: Vec<&AssociationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.lease_begin);

    let mut raw = LocationAlphabet::new();
    let events: Vec<(SymbolId, i64)> = sorted
        .iter()
        .map(|r| {
            (
                raw.intern(&location_name(r, config.spatial, pattern)),
                r.lease_begin,
            )
        })
        .collect();
    let intervals = normalize_intervals(&events, config.t_max);
    let (first, last) = match (intervals.first(), intervals.last()) {
        (Some(f), Some(l)) => (f.begin, l.end),
        _ => return Err(DiscretizeError::EmptyTrace(device.to_string())),
    };

    let w = config.window.seconds();
    let start = grid_start(first, w, config.anchor);
    let n = ((last - start) as u64).div_ceil(w) as usize;
    let raw_symbols = sample_intervals(&intervals, start, w, n);

    let mut alphabet = LocationAlphabet::new();
    let mut remap = vec![None; raw.len()];
    let symbols = raw_symbols
        .into_iter()
        .map(|s| {
            if s == UNKNOWN {
                return UNKNOWN;
            }
            *remap[s as usize]
                .get_or_insert_with(|| alphabet.intern(raw.name(s).expect("raw id in range")))
        })
        .collect();

    Ok(DiscreteSeries {
        device: device.to_string(),
        class,
        spatial: config.spatial,
        window: config.window,
        start_time: start,
        symbols,
        alphabet,
    })
}
