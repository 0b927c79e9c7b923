//! Shared domain types: device classes, resolutions, per-device location
//! alphabets and the discrete-time location series.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

/// Dense index into a [`LocationAlphabet`]. Index 0 is always [`UNKNOWN`].
pub type SymbolId = u32;

/// The reserved "location not known" symbol.
pub const UNKNOWN: SymbolId = 0;

/// Text used for [`UNKNOWN`] in serialized series.
pub const UNKNOWN_NAME: &str = "?";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("unknown device class `{0}`")]
    BadClass(String),
    #[error("unknown spatial resolution `{0}`")]
    BadSpatial(String),
    #[error("window must be a positive number of seconds, got {0}")]
    BadWindow(i64),
    #[error("malformed series file: {0}")]
    MalformedSeries(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Device form factor: on-the-go (`Flute`), sit-to-use (`Cello`), or anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceClass {
    Flute,
    Cello,
    Other,
}

impl DeviceClass {
    /// Classes that take part in experiments.
    pub const STUDIED: [DeviceClass; 2] = [DeviceClass::Flute, DeviceClass::Cello];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceClass::Flute => "flute",
            DeviceClass::Cello => "cello",
            DeviceClass::Other => "other",
        }
    }

    pub fn is_studied(self) -> bool {
        self != DeviceClass::Other
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeviceClass {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flute" => Ok(DeviceClass::Flute),
            "cello" => Ok(DeviceClass::Cello),
            "other" => Ok(DeviceClass::Other),
            _ => Err(TraceError::BadClass(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpatialResolution {
    AccessPoint,
    Building,
}

impl SpatialResolution {
    pub const ALL: [SpatialResolution; 2] =
        [SpatialResolution::AccessPoint, SpatialResolution::Building];

    pub fn as_str(self) -> &'static str {
        match self {
            SpatialResolution::AccessPoint => "ap",
            SpatialResolution::Building => "building",
        }
    }
}

impl fmt::Display for SpatialResolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpatialResolution {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ap" | "accesspoint" | "access_point" => Ok(SpatialResolution::AccessPoint),
            "building" | "bldg" => Ok(SpatialResolution::Building),
            _ => Err(TraceError::BadSpatial(s.to_string())),
        }
    }
}

/// Sampling window length in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemporalResolution(u64);

impl TemporalResolution {
    /// 5 min, 15 min, 30 min, 1 h and 2 h.
    pub const CANONICAL_SECONDS: [u64; 5] = [300, 900, 1800, 3600, 7200];

    pub fn new(seconds: i64) -> Result<Self, TraceError> {
        if seconds <= 0 {
            return Err(TraceError::BadWindow(seconds));
        }
        Ok(TemporalResolution(seconds as u64))
    }

    pub fn seconds(self) -> u64 {
        self.0
    }

    pub fn canonical() -> Vec<TemporalResolution> {
        Self::CANONICAL_SECONDS
            .iter()
            .map(|&s| TemporalResolution(s))
            .collect()
    }
}

impl fmt::Display for TemporalResolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-device bijection between location names and dense symbol ids.
///
/// Id 0 is reserved for [`UNKNOWN`] and never maps to a physical location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationAlphabet {
    names: Vec<String>,
    index: HashMap<String, SymbolId>,
}

impl Default for LocationAlphabet {
    fn default() -> Self {
        Self::new()
    }
}

impl LocationAlphabet {
    pub fn new() -> Self {
        LocationAlphabet {
            names: vec![UNKNOWN_NAME.to_string()],
            index: HashMap::new(),
        }
    }

    /// Returns the id of `name`, appending it if it has not been seen.
    pub fn intern(&mut self, name: &str) -> SymbolId {
        debug_assert!(!name.is_empty(), "location names must be non-empty");
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as SymbolId;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn lookup(&self, name: &str) -> Option<SymbolId> {
        self.index.get(name).copied()
    }

    /// Location name for `id`; `None` for [`UNKNOWN`] and out-of-range ids.
    pub fn name(&self, id: SymbolId) -> Option<&str> {
        if id == UNKNOWN {
            return None;
        }
        self.names.get(id as usize).map(String::as_str)
    }

    /// Alphabet size including the Unknown slot.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    /// Number of physical locations (excludes Unknown).
    pub fn n_locations(&self) -> usize {
        self.names.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.n_locations() == 0
    }
}

/// A device's location sampled every `window` seconds from `start_time`.
///
/// `symbols[i]` covers `[start_time + i*w, start_time + (i+1)*w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteSeries {
    pub device: String,
    pub class: DeviceClass,
    pub spatial: SpatialResolution,
    pub window: TemporalResolution,
    pub start_time: i64,
    pub symbols: Vec<SymbolId>,
    pub alphabet: LocationAlphabet,
}

impl DiscreteSeries {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Distinct non-Unknown symbols that actually occur in the series.
    pub fn distinct_locations(&self) -> usize {
        let mut seen = vec![false; self.alphabet.len()];
        for &s in &self.symbols {
            seen[s as usize] = true;
        }
        seen.iter().skip(1).filter(|&&b| b).count()
    }

    /// Writes the columnar text form: one `device,class,spatial,window_s,start_epoch`
    /// line followed by one location name per window (`?` for Unknown).
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        writeln!(
            out,
            "{},{},{},{},{}",
            self.device, self.class, self.spatial, self.window, self.start_time
        )?;
        for &s in &self.symbols {
            writeln!(out, "{}", self.alphabet.name(s).unwrap_or(UNKNOWN_NAME))?;
        }
        Ok(())
    }

    /// Reads the form written by [`DiscreteSeries::write_to`]. The alphabet is
    /// rebuilt in order of first appearance.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| TraceError::MalformedSeries("empty file".into()))??;
        let fields: Vec<&str> = header.trim_end().split(',').collect();
        if fields.len() != 5 {
            return Err(TraceError::MalformedSeries(format!(
                "header has {} fields, expected 5",
                fields.len()
            )));
        }
        let bad = |what: &str| TraceError::MalformedSeries(format!("bad {what} in header"));
        let window: i64 = fields[3].parse().map_err(|_| bad("window_s"))?;
        let start_time: i64 = fields[4].parse().map_err(|_| bad("start_epoch"))?;
        let mut alphabet = LocationAlphabet::new();
        let mut symbols = Vec::new();
        for line in lines {
            let line = line?;
            let name = line.trim_end();
            if name.is_empty() {
                continue;
            }
            symbols.push(if name == UNKNOWN_NAME {
                UNKNOWN
            } else {
                alphabet.intern(name)
            });
        }
        Ok(DiscreteSeries {
            device: fields[0].to_string(),
            class: fields[1].parse()?,
            spatial: fields[2].parse()?,
            window: TemporalResolution::new(window)?,
            start_time,
            symbols,
            alphabet,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_intern_skips_unknown_slot() {
        let mut a = LocationAlphabet::new();
        assert_eq!(a.intern("ap1"), 1);
        assert_eq!(a.intern("ap1"), 1);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn intern_order() {
        let mut a = LocationAlphabet::new();
        let ids: Vec<_> = ["a", "b", "a", "c"].iter().map(|n| a.intern(n)).collect();
        assert_eq!(ids, vec![1, 2, 1, 3]);
        assert_eq!(a.name(2), Some("b"));
        assert_eq!(a.name(UNKNOWN), None);
        assert_eq!(a.lookup("c"), Some(3));
    }

    #[test]
    fn window_must_be_positive() {
        assert!(TemporalResolution::new(0).is_err());
        assert!(TemporalResolution::new(-5).is_err());
        assert_eq!(TemporalResolution::new(900).unwrap().seconds(), 900);
    }

    #[test]
    fn class_and_spatial_parse() {
        assert_eq!("Cello".parse::<DeviceClass>().unwrap(), DeviceClass::Cello);
        assert!("tuba".parse::<DeviceClass>().is_err());
        assert_eq!(
            "building".parse::<SpatialResolution>().unwrap(),
            SpatialResolution::Building
        );
    }

    #[test]
    fn series_text_round_trip() {
        let mut alphabet = LocationAlphabet::new();
        let a = alphabet.intern("b1");
        let b = alphabet.intern("b2");
        let s = DiscreteSeries {
            device: "00:11:22:00:00:01".into(),
            class: DeviceClass::Flute,
            spatial: SpatialResolution::Building,
            window: TemporalResolution::new(900).unwrap(),
            start_time: 1_333_238_400,
            symbols: vec![a, a, UNKNOWN, b, a],
            alphabet,
        };
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("00:11:22:00:00:01,flute,building,900,1333238400\nb1\nb1\n?\n"));
        let back = DiscreteSeries::read_from(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.distinct_locations(), 2);
    }
}
