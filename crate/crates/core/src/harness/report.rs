//! Report directory: matrix, ECDFs, entropy, correlations, runtimes and run
//! metadata as CSV/text files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ecdf, AccuracyRow, DeviceScore, MatrixRow, Method, Runtime, SkippedDevice};
use crate::entropy::EntropyReport;
use crate::features::{write_correlations, CorrelationCell};
use crate::trace::{DeviceClass, SpatialResolution};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0} exists and is not empty; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("nothing to report")]
    NothingToReport,
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("accuracies line {line_no}: {reason}")]
    BadAccuracies { line_no: usize, reason: String },
}

pub const MATRIX_HEADER: &str =
    "class,spatial,window_s,method,seq_len,n_devices,median_acc,mean_acc,diff";
pub const ACCURACY_HEADER: &str =
    "device,class,spatial,window_s,method,seq_len,value,correct,attempted";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_matrix<W: Write>(rows: &[MatrixRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{MATRIX_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.2},{:.2},{}",
            r.class,
            r.spatial,
            r.window_s,
            r.method,
            opt(r.seq_len),
            r.n_devices,
            r.median_acc,
            r.mean_acc,
            r.diff.map(|d| format!("{d:.2}")).unwrap_or_default()
        )?;
    }
    Ok(())
}

pub fn write_accuracies<W: Write>(rows: &[AccuracyRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{ACCURACY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.9},{},{}",
            r.device,
            r.class,
            r.spatial,
            r.window_s,
            r.method,
            opt(r.seq_len),
            r.value,
            opt(r.score.map(|s| s.correct)),
            opt(r.score.map(|s| s.attempted)),
        )?;
    }
    Ok(())
}

pub fn read_accuracies<R: BufRead>(input: R) -> Result<Vec<AccuracyRow>, ReportError> {
    let mut rows = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| ReportError::IoFailure {
            path: PathBuf::from("<accuracies>"),
            source,
        })?;
        if line.trim().is_empty() || line.starts_with("device,") {
            continue;
        }
        let bad = |reason: String| ReportError::BadAccuracies { line_no, reason };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(format!("expected 9 fields, found {}", f.len())));
        }
        let num = |s: &str| -> Result<Option<usize>, ReportError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| bad(format!("bad integer `{s}`")))
            }
        };
        let score = match (num(f[7])?, num(f[8])?) {
            (Some(correct), Some(attempted)) => Some(DeviceScore { correct, attempted }),
            _ => None,
        };
        rows.push(AccuracyRow {
            device: f[0].to_string(),
            class: f[1].parse().map_err(|e| bad(format!("{e}")))?,
            spatial: f[2].parse().map_err(|e| bad(format!("{e}")))?,
            window_s: f[3]
                .parse()
                .map_err(|_| bad(format!("bad window `{}`", f[3])))?,
            method: f[4].parse().map_err(|e| bad(format!("{e}")))?,
            seq_len: num(f[5])?,
            value: f[6]
                .parse()
                .map_err(|_| bad(format!("bad value `{}`", f[6])))?,
            score,
        });
    }
    Ok(rows)
}

pub fn write_entropy<W: Write>(
    rows: &[(SpatialResolution, u64, EntropyReport)],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "spatial,window_s,{}", crate::entropy::REPORT_HEADER)?;
    for (s, w, r) in rows {
        writeln!(
            out,
            "{s},{w},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.device,
            r.class,
            r.n_symbols,
            r.n_locations,
            r.s_unc,
            r.s_lz,
            r.s_bwt,
            r.pi_unc,
            r.pi_lz,
            r.pi_bwt
        )?;
    }
    Ok(())
}

pub fn write_runtimes<W: Write>(rows: &[Runtime], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "method,spatial,window_s,seq_len,n_jobs,total_s,mean_ms"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4}",
            r.method,
            r.spatial,
            r.window_s,
            opt(r.seq_len),
            r.n_jobs,
            r.seconds,
            1000.0 * r.seconds / r.n_jobs.max(1) as f64
        )?;
    }
    Ok(())
}

pub fn write_skipped<W: Write>(rows: &[SkippedDevice], mut out: W) -> std::io::Result<()> {
    writeln!(out, "device,spatial,window_s,method,seq_len,reason")?;
    for s in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.device,
            s.spatial,
            s.window_s,
            s.method,
            opt(s.seq_len),
            s.reason.replace(',', ";")
        )?;
    }
    Ok(())
}

/// Per-(class, spatial) ECDF points of every (method, window, k) cell.
pub fn ecdf_tables(
    rows: &[AccuracyRow],
) -> BTreeMap<(DeviceClass, SpatialResolution), Vec<(Method, u64, Option<usize>, Vec<(f64, f64)>)>>
{
    let mut cells: BTreeMap<
        (DeviceClass, SpatialResolution, Method, u64, Option<usize>),
        Vec<f64>,
    > = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.class, r.spatial, r.method, r.window_s, r.seq_len))
            .or_default()
            .push(r.value);
    }
    let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for ((c, s, m, w, k), values) in cells {
        let points = ecdf(&values).expect("cells are non-empty");
        out.entry((c, s)).or_default().push((m, w, k, points));
    }
    out
}

/// Everything a report can contain; absent pieces are skipped and noted.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportInput<'a> {
    pub rows: &'a [MatrixRow],
    pub accuracies: &'a [AccuracyRow],
    pub entropy: &'a [(SpatialResolution, u64, EntropyReport)],
    pub runtimes: &'a [Runtime],
    pub skipped: &'a [SkippedDevice],
    pub correlations: Option<&'a [CorrelationCell]>,
    /// Extra `key = value` lines for `run_meta.txt` (config, seed, counts).
    pub meta: &'a str,
}

const ARTIFACTS: [&str; 8] = [
    "matrix.csv",
    "accuracies.csv",
    "entropy.csv",
    "correlations.csv",
    "runtimes.csv",
    "skipped.csv",
    "features.csv",
    "run_meta.txt",
];

/// Creates `dir`, refusing a non-empty one unless `force`. With `force`,
/// earlier artifacts of this tool are removed first.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<(), ReportError> {
    let io = |source| ReportError::IoFailure {
        path: dir.to_path_buf(),
        source,
    };
    if dir.exists() {
        let entries: Vec<_> = fs::read_dir(dir)
            .map_err(io)?
            .collect::<Result<_, _>>()
            .map_err(io)?;
        if !entries.is_empty() {
            if !force {
                return Err(ReportError::Exists(dir.to_path_buf()));
            }
            for e in entries {
                let name = e.file_name().to_string_lossy().into_owned();
                let ours = ARTIFACTS.contains(&name.as_str())
                    || (name.starts_with("ecdf_") && name.ends_with(".csv"));
                if ours {
                    fs::remove_file(e.path()).map_err(io)?;
                }
            }
        }
    }
    fs::create_dir_all(dir).map_err(io)
}

pub fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    let io = |source| ReportError::IoFailure {
        path: path.clone(),
        source,
    };
    let mut w = BufWriter::new(File::create(&path).map_err(io)?);
    f(&mut w).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(path)
}

/// Writes the report into `dir` and returns the files written.
pub fn write_report(
    dir: &Path,
    input: &ReportInput,
    force: bool,
) -> Result<Vec<PathBuf>, ReportError> {
    if input.rows.is_empty()
        && input.accuracies.is_empty()
        && input.entropy.is_empty()
        && input.correlations.is_none()
    {
        return Err(ReportError::NothingToReport);
    }
    prepare_dir(dir, force)?;
    let mut written = Vec::new();
    let mut omitted = Vec::new();

    if input.rows.is_empty() {
        omitted.push("matrix.csv");
    } else {
        written.push(write_file(dir, "matrix.csv", |w| {
            write_matrix(input.rows, w)
        })?);
    }
    if input.accuracies.is_empty() {
        omitted.push("accuracies.csv");
        omitted.push("ecdf_*.csv");
    } else {
        written.push(write_file(dir, "accuracies.csv", |w| {
            write_accuracies(input.accuracies, w)
        })?);
        for ((class, spatial), cells) in ecdf_tables(input.accuracies) {
            let name = format!("ecdf_{class}_{spatial}.csv");
            written.push(write_file(dir, &name, |w| {
                writeln!(w, "method,window_s,seq_len,value,fraction")?;
                for (m, win, k, points) in &cells {
                    for (v, frac) in points {
                        writeln!(w, "{m},{win},{},{v:.6},{frac:.6}", opt(*k))?;
                    }
                }
                Ok(())
            })?);
        }
    }
    if input.entropy.is_empty() {
        omitted.push("entropy.csv");
    } else {
        written.push(write_file(dir, "entropy.csv", |w| {
            write_entropy(input.entropy, w)
        })?);
    }
    match input.correlations {
        Some(cells) => written.push(write_file(dir, "correlations.csv", |w| {
            write_correlations(cells, w)
        })?),
        None => omitted.push("correlations.csv"),
    }
    if input.runtimes.is_empty() {
        omitted.push("runtimes.csv");
    } else {
        written.push(write_file(dir, "runtimes.csv", |w| {
            write_runtimes(input.runtimes, w)
        })?);
    }
    written.push(write_file(dir, "skipped.csv", |w| {
        write_skipped(input.skipped, w)
    })?);
    written.push(write_file(dir, "run_meta.txt", |w| {
        writeln!(w, "tool = mobpred")?;
        writeln!(w, "version = {}", env!("CARGO_PKG_VERSION"))?;
        write!(w, "{}", input.meta)?;
        writeln!(w, "skipped = {}", input.skipped.len())?;
        writeln!(w, "omitted = {}", omitted.join(","))?;
        Ok(())
    })?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc(device: &str, class: DeviceClass, method: Method, value: f64) -> AccuracyRow {
        AccuracyRow {
            device: device.into(),
            class,
            spatial: SpatialResolution::Building,
            window_s: 900,
            method,
            seq_len: if method.is_bound() { None } else { Some(5) },
            value,
            score: if method.is_bound() {
                None
            } else {
                Some(DeviceScore {
                    correct: 3,
                    attempted: 4,
                })
            },
        }
    }

    #[test]
    fn accuracies_round_trip() {
        let rows = vec![
            acc("00:11:22:33:44:55", DeviceClass::Cello, Method::Mc, 0.75),
            acc("x", DeviceClass::Flute, Method::Bwt, 0.5),
        ];
        let mut buf = Vec::new();
        write_accuracies(&rows, &mut buf).unwrap();
        assert_eq!(read_accuracies(buf.as_slice()).unwrap(), rows);
        assert!(read_accuracies("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_formatting() {
        let rows = super::super::aggregate(
            &[
                acc("a", DeviceClass::Cello, Method::Mc, 0.9),
                acc("b", DeviceClass::Flute, Method::Mc, 0.5),
                acc("c", DeviceClass::Flute, Method::Mc, 0.6),
            ],
            &[],
        );
        let mut buf = Vec::new();
        write_matrix(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!(
                "{MATRIX_HEADER}\n\
                 flute,building,900,MC,5,2,55.00,55.00,35.00\n\
                 cello,building,900,MC,5,1,90.00,90.00,35.00\n"
            )
        );
    }

    #[test]
    fn refuses_existing_dir_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![acc("a", DeviceClass::Cello, Method::Mc, 0.9)];
        let input = ReportInput {
            accuracies: &rows,
            ..Default::default()
        };
        let out = dir.path().join("r");
        let files = write_report(&out, &input, false).unwrap();
        assert!(files.iter().any(|f| f.ends_with("ecdf_cello_building.csv")));
        let meta = fs::read_to_string(out.join("run_meta.txt")).unwrap();
        assert!(meta.contains("omitted = matrix.csv,entropy.csv,correlations.csv,runtimes.csv"));
        assert!(matches!(
            write_report(&out, &input, false),
            Err(ReportError::Exists(_))
        ));
        fs::write(out.join("notes.txt"), "keep").unwrap();
        write_report(&out, &input, true).unwrap();
        assert!(out.join("notes.txt").exists());
    }

    #[test]
    fn empty_input_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_report(&dir.path().join("x"), &ReportInput::default(), false),
            Err(ReportError::NothingToReport)
        ));
    }
}
