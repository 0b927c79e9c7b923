//! Association-log parsing, OUI-based device typing, building extraction and
//! population filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use regex::Regex;
use thiserror::Error;

use crate::trace::DeviceClass;

/// Devices need at least this many distinct days with a record.
pub const MIN_DAYS: usize = 7;
/// Devices need strictly more than this many distinct APs.
pub const MIN_APS_EXCLUSIVE: usize = 5;

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("AP name `{0}` does not start with a building prefix")]
    NoBuildingPrefix(String),
    #[error("OUI map line {line_no}: {reason}")]
    BadOuiEntry { line_no: usize, reason: String },
    #[error("invalid building pattern: {0}")]
    BadPattern(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Field separator of a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Separator {
    Comma,
    Tab,
}

impl Separator {
    fn as_char(self) -> char {
        match self {
            Separator::Comma => ',',
            Separator::Tab => '\t',
        }
    }
}

/// One row of an AP association log.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssociationRecord {
    pub user_ip: String,
    /// Device MAC (possibly hashed below the OUI).
    pub uuid: String,
    pub ap_name: String,
    pub ap_mac: String,
    pub lease_begin: i64,
    pub lease_end: i64,
}

impl AssociationRecord {
    pub fn duration(&self) -> i64 {
        self.lease_end - self.lease_begin
    }
}

impl fmt::Display for AssociationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.user_ip, self.uuid, self.ap_name, self.ap_mac, self.lease_begin, self.lease_end
        )
    }
}

/// `xx:xx:xx:xx:xx:xx`, hex digits in either case.
pub fn is_mac(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 17
        && b.iter().enumerate().all(|(i, &c)| {
            if i % 3 == 2 {
                c == b':'
            } else {
                c.is_ascii_hexdigit()
            }
        })
}

/// Lower-cased first three octets of a MAC, e.g. `00:11:22`.
pub fn oui_of(mac: &str) -> Option<String> {
    if is_mac(mac) {
        Some(mac[..8].to_ascii_lowercase())
    } else {
        None
    }
}

fn detect_separator(line: &str) -> Option<Separator> {
    [Separator::Comma, Separator::Tab]
        .into_iter()
        .find(|sep| parse_fields(line, *sep).is_ok())
}

fn parse_fields(line: &str, sep: Separator) -> Result<AssociationRecord, String> {
    let fields: Vec<&str> = line.split(sep.as_char()).map(str::trim).collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    if !is_mac(fields[1]) {
        return Err(format!("bad device MAC `{}`", fields[1]));
    }
    if fields[2].is_empty() {
        return Err("empty AP name".into());
    }
    if !is_mac(fields[3]) {
        return Err(format!("bad AP MAC `{}`", fields[3]));
    }
    let begin: i64 = fields[4]
        .parse()
        .map_err(|_| format!("non-integer lease begin `{}`", fields[4]))?;
    let end: i64 = fields[5]
        .parse()
        .map_err(|_| format!("non-integer lease end `{}`", fields[5]))?;
    if end < begin {
        return Err(format!("lease ends ({end}) before it begins ({begin})"));
    }
    Ok(AssociationRecord {
        user_ip: fields[0].to_string(),
        uuid: fields[1].to_string(),
        ap_name: fields[2].to_string(),
        ap_mac: fields[3].to_string(),
        lease_begin: begin,
        lease_end: end,
    })
}

/// Parses one trace line. With `sep == None` both comma and tab are tried.
pub fn parse_record(
    line: &str,
    sep: Option<Separator>,
    line_no: usize,
) -> Result<AssociationRecord, IngestError> {
    let sep = match sep {
        Some(s) => s,
        None => detect_separator(line).unwrap_or(if line.contains('\t') {
            Separator::Tab
        } else {
            Separator::Comma
        }),
    };
    parse_fields(line, sep).map_err(|reason| IngestError::MalformedLine { line_no, reason })
}

/// Result of bulk-parsing one trace file.
#[derive(Debug, Default)]
pub struct ParsedTrace {
    pub records: Vec<AssociationRecord>,
    /// Malformed lines that were skipped.
    pub errors: Vec<IngestError>,
    pub duplicates: usize,
    pub separator: Option<Separator>,
}

/// Parses a whole trace. Comment (`#`) and blank lines are ignored; malformed
/// lines are collected and skipped. The separator is fixed by the first valid line.
pub fn parse_trace<R: BufRead>(input: R) -> Result<ParsedTrace, IngestError> {
    let mut out = ParsedTrace::default();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if out.separator.is_none() {
            out.separator = detect_separator(trimmed);
        }
        match parse_record(trimmed, out.separator, line_no) {
            Ok(r) => out.records.push(r),
            Err(e) => out.errors.push(e),
        }
    }
    out.duplicates = dedup_records(&mut out.records);
    Ok(out)
}

/// Removes rows repeating an earlier (uuid, ap, lease_begin); keeps the first.
/// Returns how many were dropped.
pub fn dedup_records(records: &mut Vec<AssociationRecord>) -> usize {
    let before = records.len();
    let mut seen = HashSet::with_capacity(records.len());
    records.retain(|r| seen.insert((r.uuid.clone(), r.ap_name.clone(), r.lease_begin)));
    before - records.len()
}

/// Sorts by device, then lease begin (stable for equal begins).
pub fn sort_records(records: &mut [AssociationRecord]) {
    records.sort_by(|a, b| a.uuid.cmp(&b.uuid).then(a.lease_begin.cmp(&b.lease_begin)));
}

/// Groups records by device id, each group sorted by lease begin.
pub fn group_by_device(records: &[AssociationRecord]) -> BTreeMap<String, Vec<AssociationRecord>> {
    let mut map: BTreeMap<String, Vec<AssociationRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.uuid.clone()).or_default().push(r.clone());
    }
    for v in map.values_mut() {
        v.sort_by_key(|r| r.lease_begin);
    }
    map
}

/// OUI prefix to device-class table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OuiMap {
    entries: HashMap<String, DeviceClass>,
}

impl OuiMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prefix: &str, class: DeviceClass) {
        self.entries.insert(prefix.to_ascii_lowercase(), class);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `xx:xx:xx,<flute|cello|other>` lines; `#` comments allowed.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self, IngestError> {
        let mut map = OuiMap::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |reason: String| IngestError::BadOuiEntry { line_no, reason };
            let (prefix, class) = t
                .split_once(',')
                .ok_or_else(|| bad("expected `prefix,class`".into()))?;
            let prefix = prefix.trim();
            if !is_mac(&format!("{prefix}:00:00:00")) {
                return Err(bad(format!("bad OUI prefix `{prefix}`")));
            }
            let class: DeviceClass = class
                .parse()
                .map_err(|_| bad(format!("bad class `{class}`")))?;
            if map.entries.contains_key(&prefix.to_ascii_lowercase()) {
                return Err(bad(format!("duplicate prefix `{prefix}`")));
            }
            map.insert(prefix, class);
        }
        Ok(map)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut entries: Vec<_> = self.entries.iter().collect();
        entries.sort();
        for (prefix, class) in entries {
            writeln!(out, "{prefix},{class}")?;
        }
        Ok(())
    }
}

/// Class of a device from its MAC's OUI; unmapped prefixes are `Other`.
pub fn classify_device(uuid: &str, oui_map: &OuiMap) -> DeviceClass {
    oui_of(uuid)
        .and_then(|p| oui_map.entries.get(&p).copied())
        .unwrap_or(DeviceClass::Other)
}

/// Extracts building ids from AP names.
#[derive(Debug, Clone)]
pub struct BuildingPattern {
    re: Regex,
}

impl Default for BuildingPattern {
    fn default() -> Self {
        BuildingPattern {
            re: Regex::new(Self::DEFAULT).expect("default pattern compiles"),
        }
    }
}

impl BuildingPattern {
    /// Leading `b` followed by digits.
    pub const DEFAULT: &'static str = r"^b[0-9]+";

    /// The pattern is anchored at the start of the AP name if it is not already.
    pub fn new(pattern: &str) -> Result<Self, IngestError> {
        let anchored = if pattern.starts_with('^') {
            pattern.to_string()
        } else {
            format!("^(?:{pattern})")
        };
        Regex::new(&anchored)
            .map(|re| BuildingPattern { re })
            .map_err(|e| IngestError::BadPattern(e.to_string()))
    }

    pub fn building_of(&self, ap_name: &str) -> Result<String, IngestError> {
        match self.re.find(ap_name) {
            Some(m) if !m.as_str().is_empty() => Ok(m.as_str().to_string()),
            _ => Err(IngestError::NoBuildingPrefix(ap_name.to_string())),
        }
    }

    /// Building id, or `unknown-bldg:<ap_name>` when the name has no prefix.
    pub fn building_or_fallback(&self, ap_name: &str) -> String {
        self.building_of(ap_name)
            .unwrap_or_else(|_| format!("unknown-bldg:{ap_name}"))
    }
}

/// Building id under the default `b<digits>` grammar.
pub fn building_of(ap_name: &str) -> Result<String, IngestError> {
    BuildingPattern::default().building_of(ap_name)
}

/// Calendar day index of an epoch time under a fixed UTC offset.
pub fn day_index(epoch: i64, tz_offset_s: i64) -> i64 {
    (epoch + tz_offset_s).div_euclid(SECONDS_PER_DAY)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceSummary {
    pub device: String,
    pub n_ap: usize,
    pub n_day: usize,
    pub n_rec: usize,
    pub class: DeviceClass,
}

/// Per-device counts of distinct APs, distinct days and records.
pub fn summarize(
    records: &[AssociationRecord],
    oui_map: &OuiMap,
    tz_offset_s: i64,
) -> Vec<DeviceSummary> {
    #[derive(Default)]
    struct Acc<'a> {
        aps: BTreeSet<&'a str>,
        days: BTreeSet<i64>,
        n: usize,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in records {
        let a = acc.entry(r.uuid.as_str()).or_default();
        a.aps.insert(r.ap_name.as_str());
        a.days.insert(day_index(r.lease_begin, tz_offset_s));
        a.n += 1;
    }
    acc.into_iter()
        .map(|(device, a)| DeviceSummary {
            device: device.to_string(),
            n_ap: a.aps.len(),
            n_day: a.days.len(),
            n_rec: a.n,
            class: classify_device(device, oui_map),
        })
        .collect()
}

/// Ids of devices seen on at least [`MIN_DAYS`] days, at more than
/// [`MIN_APS_EXCLUSIVE`] APs, and classed Flute or Cello. Output is sorted.
pub fn filter_population(summaries: &[DeviceSummary]) -> Vec<String> {
    let mut kept: Vec<String> = summaries
        .iter()
        .filter(|s| s.n_day >= MIN_DAYS && s.n_ap > MIN_APS_EXCLUSIVE && s.class.is_studied())
        .map(|s| s.device.clone())
        .collect();
    kept.sort();
    kept.dedup();
    kept
}

pub fn write_summaries<W: Write>(summaries: &[DeviceSummary], mut out: W) -> std::io::Result<()> {
    writeln!(out, "device,class,n_ap,n_day,n_rec")?;
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.device, s.class, s.n_ap, s.n_day, s.n_rec
        )?;
    }
    Ok(())
}

pub fn write_records<W: Write>(records: &[AssociationRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str =
        "10.130.90.3,00:11:22:00:00:00,b422r143-win-1,00:1d:e5:8f:1b:30,1333238737,1333238741";

    #[test]
    fn parses_sample_row() {
        let r = parse_record(SAMPLE, None, 1).unwrap();
        assert_eq!(r.user_ip, "10.130.90.3");
        assert_eq!(r.uuid, "00:11:22:00:00:00");
        assert_eq!(r.ap_name, "b422r143-win-1");
        assert_eq!(r.ap_mac, "00:1d:e5:8f:1b:30");
        assert_eq!(r.lease_begin, 1333238737);
        assert_eq!(r.lease_end, 1333238741);
        assert_eq!(r.to_string(), SAMPLE);
    }

    #[test]
    fn tab_separated() {
        let line = SAMPLE.replace(',', "\t");
        let r = parse_record(&line, None, 1).unwrap();
        assert_eq!(r.lease_end, 1333238741);
    }

    #[test]
    fn malformed_lines() {
        let five = "10.130.90.3,00:11:22:00:00:00,b422r143-win-1,00:1d:e5:8f:1b:30,1333238737";
        assert!(matches!(
            parse_record(five, None, 7),
            Err(IngestError::MalformedLine { line_no: 7, .. })
        ));
        let backwards =
            "10.130.90.3,00:11:22:00:00:00,b422r143-win-1,00:1d:e5:8f:1b:30,1333238741,1333238737";
        assert!(parse_record(backwards, None, 1).is_err());
        let bad_ts = "10.1.1.1,00:11:22:00:00:00,b1,00:1d:e5:8f:1b:30,12x,13";
        assert!(parse_record(bad_ts, None, 1).is_err());
        let bad_mac = "10.1.1.1,00:11:22:00:00,b1,00:1d:e5:8f:1b:30,12,13";
        assert!(parse_record(bad_mac, None, 1).is_err());
    }

    #[test]
    fn bulk_parse_skips_and_dedups() {
        let text = format!(
            "# header\n{SAMPLE}\nnot,a,record\n\n{SAMPLE}\n{}\n",
            SAMPLE
                .replace("1333238737,", "1333238800,")
                .replace("1333238741", "1333238900")
        );
        let parsed = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.duplicates, 1);
        assert_eq!(parsed.errors.len(), 1);
        assert!(matches!(
            parsed.errors[0],
            IngestError::MalformedLine { line_no: 3, .. }
        ));
        assert_eq!(parsed.separator, Some(Separator::Comma));
    }

    #[test]
    fn classify() {
        let mut m = OuiMap::new();
        m.insert("00:11:22", DeviceClass::Flute);
        m.insert("00:1d:e5", DeviceClass::Cello);
        assert_eq!(classify_device("00:11:22:00:00:00", &m), DeviceClass::Flute);
        assert_eq!(classify_device("00:1D:E5:8f:1b:30", &m), DeviceClass::Cello);
        assert_eq!(classify_device("aa:bb:cc:00:00:00", &m), DeviceClass::Other);
    }

    #[test]
    fn oui_file() {
        let text = "# map\n00:11:22,flute\n00:1d:e5,Cello\n";
        let m = OuiMap::read_from(text.as_bytes()).unwrap();
        assert_eq!(m.len(), 2);
        assert!(OuiMap::read_from("00:11,flute\n".as_bytes()).is_err());
        assert!(OuiMap::read_from("00:11:22,tuba\n".as_bytes()).is_err());
        assert!(OuiMap::read_from("00:11:22,flute\n00:11:22,cello\n".as_bytes()).is_err());
    }

    #[test]
    fn buildings() {
        assert_eq!(building_of("b422r143-win-1").unwrap(), "b422");
        assert_eq!(building_of("b7r1-x").unwrap(), "b7");
        assert!(matches!(
            building_of("libwest-ap3"),
            Err(IngestError::NoBuildingPrefix(_))
        ));
        let p = BuildingPattern::default();
        assert_eq!(
            p.building_or_fallback("libwest-ap3"),
            "unknown-bldg:libwest-ap3"
        );
        let custom = BuildingPattern::new("[a-z]+").unwrap();
        assert_eq!(custom.building_of("libwest-ap3").unwrap(), "libwest");
    }

    fn summary(n_day: usize, n_ap: usize, class: DeviceClass) -> DeviceSummary {
        DeviceSummary {
            device: format!("{n_day}-{n_ap}-{class}"),
            n_ap,
            n_day,
            n_rec: n_day * 3,
            class,
        }
    }

    #[test]
    fn filter_boundaries() {
        let s = vec![
            summary(7, 6, DeviceClass::Flute),
            summary(6, 100, DeviceClass::Cello),
            summary(30, 5, DeviceClass::Cello),
            summary(30, 30, DeviceClass::Other),
        ];
        assert_eq!(filter_population(&s), vec!["7-6-flute".to_string()]);
    }

    #[test]
    fn summaries_count_days_and_aps() {
        let mk = |ap: &str, t: i64| AssociationRecord {
            user_ip: "10.0.0.1".into(),
            uuid: "00:11:22:00:00:01".into(),
            ap_name: ap.into(),
            ap_mac: "00:1d:e5:00:00:01".into(),
            lease_begin: t,
            lease_end: t + 10,
        };
        let recs = vec![mk("b1r1", 0), mk("b1r2", 100), mk("b1r1", 86_400 * 2 + 5)];
        let mut m = OuiMap::new();
        m.insert("00:11:22", DeviceClass::Cello);
        let s = summarize(&recs, &m, 0);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].n_ap, s[0].n_day, s[0].n_rec), (2, 2, 3));
        assert_eq!(s[0].class, DeviceClass::Cello);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_summary() -> impl Strategy<Value = DeviceSummary> {
            (0usize..1000, 1usize..20, 1usize..20, 0u8..3).prop_map(|(id, d, a, c)| DeviceSummary {
                device: format!("dev{id}"),
                n_ap: a,
                n_day: d,
                n_rec: d,
                class: [DeviceClass::Flute, DeviceClass::Cello, DeviceClass::Other][c as usize],
            })
        }

        proptest! {
            #[test]
            fn filter_is_order_independent_subset(v in prop::collection::vec(arb_summary(), 0..40)) {
                let mut v: Vec<_> = v.into_iter().enumerate().map(|(i, mut s)| {
                    s.device = format!("{}-{i}", s.device);
                    s
                }).collect();
                let kept = filter_population(&v);
                v.reverse();
                prop_assert_eq!(&kept, &filter_population(&v));
                for id in &kept {
                    let s = v.iter().find(|s| &s.device == id).unwrap();
                    prop_assert!(s.class.is_studied());
                }
            }

            #[test]
            fn valid_lines_round_trip(
                ip in "[0-9]{1,3}\\.[0-9]{1,3}\\.[0-9]{1,3}\\.[0-9]{1,3}",
                mac in "([0-9a-f]{2}:){5}[0-9a-f]{2}",
                ap in "[a-z][a-z0-9-]{0,12}",
                begin in 0i64..2_000_000_000,
                len in 0i64..100_000,
            ) {
                let line = format!("{ip},{mac},{ap},{mac},{begin},{}", begin + len);
                let r = parse_record(&line, None, 1).unwrap();
                prop_assert_eq!(r.to_string(), line);
            }
        }
    }
}
