//! End-to-end run: records to population, series, matrix, features and
//! correlations.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::{CorrSource, Settings};
use super::{run_matrix, AccuracyRow, MatrixOutput, SeriesTable};
use crate::discretize::{discretize, DiscretizerConfig, GridAnchor};
use crate::features::{
    compute_features, correlation_report, BuildingCoords, CorrelationReport, DeviceAccuracy,
    DeviceFeatures, FeatureContext,
};
use crate::ingest::{
    filter_population, group_by_device, summarize, AssociationRecord, BuildingPattern,
    DeviceSummary, OuiMap,
};
use crate::trace::{DeviceClass, SpatialResolution, TemporalResolution};

#[derive(Debug, Clone)]
pub struct DeviceTrace {
    pub device: String,
    pub class: DeviceClass,
    pub records: Vec<AssociationRecord>,
}

#[derive(Debug, Clone)]
pub struct Population {
    pub summaries: Vec<DeviceSummary>,
    /// Devices passing the population filter, sorted by id.
    pub devices: Vec<DeviceTrace>,
}

pub fn population(records: &[AssociationRecord], oui: &OuiMap, tz_offset_s: i64) -> Population {
    let summaries = summarize(records, oui, tz_offset_s);
    let kept = filter_population(&summaries);
    let class_of: BTreeMap<&str, DeviceClass> = summaries
        .iter()
        .map(|s| (s.device.as_str(), s.class))
        .collect();
    let mut grouped = group_by_device(records);
    let devices = kept
        .iter()
        .map(|d| DeviceTrace {
            device: d.clone(),
            class: class_of[d.as_str()],
            records: grouped.remove(d).unwrap_or_default(),
        })
        .collect();
    Population { summaries, devices }
}

/// Discretizes every device at every requested resolution. Devices that fail
/// are returned with the reason.
pub fn build_series(
    pop: &Population,
    windows: &[TemporalResolution],
    spatial: &[SpatialResolution],
    t_max: u64,
    anchor: GridAnchor,
    pattern: &BuildingPattern,
) -> (SeriesTable, Vec<(String, String)>) {
    let mut table = SeriesTable::new();
    let mut failed = Vec::new();
    for &s in spatial {
        for &w in windows {
            let cfg = DiscretizerConfig {
                window: w,
                t_max,
                spatial: s,
                anchor,
            };
            let results: Vec<_> = pop
                .devices
                .par_iter()
                .map(|d| discretize(&d.device, d.class, &d.records, &cfg, pattern))
                .collect();
            let mut ok = Vec::new();
            for (d, r) in pop.devices.iter().zip(results) {
                match r {
                    Ok(series) => ok.push(series),
                    Err(e) => failed.push((d.device.clone(), e.to_string())),
                }
            }
            table.insert((s, w.seconds()), ok);
        }
    }
    (table, failed)
}

/// Features for every device; devices whose buildings lack coordinates are
/// returned with the error text.
pub fn all_features(
    pop: &Population,
    ctx: &FeatureContext,
) -> (BTreeMap<String, DeviceFeatures>, Vec<(String, String)>) {
    let results: Vec<_> = pop
        .devices
        .par_iter()
        .map(|d| (d.device.clone(), compute_features(&d.records, ctx)))
        .collect();
    let mut ok = BTreeMap::new();
    let mut failed = Vec::new();
    for (d, r) in results {
        match r {
            Ok(f) => {
                ok.insert(d, f);
            }
            Err(e) => failed.push((d, e.to_string())),
        }
    }
    (ok, failed)
}

/// The per-device accuracies selected by `source`.
pub fn select_accuracies(rows: &[AccuracyRow], source: &CorrSource) -> Vec<DeviceAccuracy> {
    rows.iter()
        .filter(|r| {
            r.method == source.method
                && r.spatial == source.spatial
                && r.window_s == source.window_s
                && (source.method.is_bound() || r.seq_len == Some(source.seq_len))
        })
        .map(|r| DeviceAccuracy {
            device: r.device.clone(),
            class: r.class,
            accuracy: r.value,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub population: Population,
    pub matrix: MatrixOutput,
    pub discretize_failures: Vec<(String, String)>,
    pub features: BTreeMap<String, DeviceFeatures>,
    pub feature_failures: Vec<(String, String)>,
    pub correlations: Option<CorrelationReport>,
}

/// Runs everything from cleaned records. Correlations need coordinates.
pub fn run_pipeline(
    records: &[AssociationRecord],
    oui: &OuiMap,
    coords: Option<&BuildingCoords>,
    settings: &Settings,
) -> Result<PipelineOutput, crate::ingest::IngestError> {
    let pattern = BuildingPattern::new(&settings.building_pattern)?;
    let eval = settings.eval_config();
    let pop = population(records, oui, settings.tz_offset_s);
    let (table, discretize_failures) = build_series(
        &pop,
        &eval.windows,
        &eval.spatial,
        settings.t_max,
        settings.anchor,
        &pattern,
    );
    let matrix = run_matrix(&table, &eval);

    let (features, feature_failures, correlations) = match coords {
        Some(c) => {
            let ctx = FeatureContext {
                coords: c,
                pattern: &pattern,
                tz_offset_s: settings.tz_offset_s,
                t_max: settings.t_max,
            };
            let (features, failures) = all_features(&pop, &ctx);
            let acc = select_accuracies(&matrix.accuracies, &settings.corr);
            let report = correlation_report(&acc, &features, &DeviceClass::STUDIED);
            (features, failures, Some(report))
        }
        None => (BTreeMap::new(), Vec::new(), None),
    };
    Ok(PipelineOutput {
        population: pop,
        matrix,
        discretize_failures,
        features,
        feature_failures,
        correlations,
    })
}
