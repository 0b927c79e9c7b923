use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use mobpred_core::entropy::{entropy_report, write_reports};
use mobpred_core::features::{
    correlation_report, write_correlations, write_features, BuildingCoords, FeatureContext,
};
use mobpred_core::harness::config::Settings;
use mobpred_core::harness::pipeline::{
    all_features, build_series, population, run_pipeline, select_accuracies,
};
use mobpred_core::harness::report::{read_accuracies, write_report, ReportError, ReportInput};
use mobpred_core::harness::run_matrix;
use mobpred_core::ingest::{
    parse_trace, sort_records, write_records, write_summaries, AssociationRecord, BuildingPattern,
    OuiMap,
};
use mobpred_core::synth::{generate, write_buildings, write_ground_truth};
use mobpred_core::trace::{DeviceClass, DiscreteSeries, SpatialResolution, TemporalResolution};

#[derive(Parser, Debug)]
#[command(
    name = "mobpred",
    version,
    about = "Next-location predictability of WiFi association traces"
)]
struct Cli {
    /// `key = value` settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct TraceArgs {
    /// Association log(s), comma or tab separated
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    /// `prefix,class` lines
    #[arg(long)]
    oui: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic campus trace with known ground truth
    Synth {
        #[arg(long)]
        flutes: Option<usize>,
        #[arg(long)]
        cellos: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
    },
    /// Parse, validate and deduplicate traces into one clean file
    Ingest {
        #[command(flatten)]
        input: TraceArgs,
    },
    /// Per-device statistics and the population filter
    Summarize {
        #[command(flatten)]
        input: TraceArgs,
    },
    /// Write one discrete series file per kept device
    Discretize {
        #[command(flatten)]
        input: TraceArgs,
        /// Window in seconds
        #[arg(long, default_value_t = 900)]
        window: i64,
        #[arg(long, default_value = "building")]
        spatial: String,
    },
    /// Entropy and maximum predictability of series files
    Entropy {
        #[arg(required = true)]
        series: Vec<PathBuf>,
    },
    /// Run the prediction matrix
    Evaluate {
        #[command(flatten)]
        input: TraceArgs,
        #[arg(long)]
        transitions_only: bool,
    },
    /// Mobility features and their correlation with accuracy
    Correlate {
        #[command(flatten)]
        input: TraceArgs,
        /// Building coordinates, `building,x_m,y_m`
        #[arg(long)]
        coords: PathBuf,
        /// accuracies.csv from an earlier evaluate run
        #[arg(long)]
        accuracies: PathBuf,
    },
    /// Full run: matrix, ECDFs, entropy, correlations and metadata
    Report {
        #[command(flatten)]
        input: TraceArgs,
        #[arg(long)]
        coords: Option<PathBuf>,
        #[arg(long)]
        transitions_only: bool,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Internal(e) => e,
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn internal(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Internal(e.into())
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn settings(cli: &Cli) -> Res<Settings> {
    let mut s = match &cli.config {
        Some(p) => Settings::load(p).map_err(usage)?,
        None => Settings::default(),
    };
    if let Some(seed) = cli.seed {
        s.set_seed(seed);
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(usage(anyhow!("--jobs must be at least 1")));
        }
        s.jobs = Some(j);
    }
    Ok(s)
}

fn run(cli: Cli) -> Res<()> {
    let mut s = settings(&cli)?;
    if let Some(j) = s.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(internal)?;
    }
    match &cli.cmd {
        Command::Synth {
            flutes,
            cellos,
            days,
        } => {
            for c in &mut s.synth.classes {
                match c.class {
                    DeviceClass::Flute => c.n_devices = flutes.unwrap_or(c.n_devices),
                    DeviceClass::Cello => c.n_devices = cellos.unwrap_or(c.n_devices),
                    DeviceClass::Other => {}
                }
            }
            if let Some(d) = days {
                s.synth.n_days = *d;
            }
            synth(&cli, &s)
        }
        Command::Ingest { input } => {
            let (records, _) = load(input)?;
            emit(&cli, "records.csv", |w| write_records(&records, w))
        }
        Command::Summarize { input } => {
            let (records, oui) = load(input)?;
            let pop = population(&records, &oui, s.tz_offset_s);
            eprintln!(
                "{} devices, {} kept by the population filter",
                pop.summaries.len(),
                pop.devices.len()
            );
            emit(&cli, "summary.csv", |w| write_summaries(&pop.summaries, w))
        }
        Command::Discretize {
            input,
            window,
            spatial,
        } => {
            let window = TemporalResolution::new(*window).map_err(usage)?;
            let spatial: SpatialResolution = spatial.parse().map_err(usage)?;
            discretize_cmd(&cli, &s, input, window, spatial)
        }
        Command::Entropy { series } => entropy_cmd(&cli, &s, series),
        Command::Evaluate {
            input,
            transitions_only,
        } => {
            s.eval.eval.transitions_only |= transitions_only;
            let (records, oui) = load(input)?;
            let pattern = BuildingPattern::new(&s.building_pattern).map_err(usage)?;
            let eval = s.eval_config();
            let pop = population(&records, &oui, s.tz_offset_s);
            let (table, failures) = build_series(
                &pop,
                &eval.windows,
                &eval.spatial,
                s.t_max,
                s.anchor,
                &pattern,
            );
            for (d, e) in &failures {
                eprintln!("warning: {d}: {e}");
            }
            let m = run_matrix(&table, &eval);
            let meta = meta(&s, pop.devices.len());
            let input = ReportInput {
                rows: &m.rows,
                accuracies: &m.accuracies,
                entropy: &m.entropy,
                runtimes: &m.runtimes,
                skipped: &m.skipped,
                correlations: None,
                meta: &meta,
            };
            report_out(&cli, &input)
        }
        Command::Correlate {
            input,
            coords,
            accuracies,
        } => {
            let (records, oui) = load(input)?;
            let coords = read_coords(coords)?;
            let acc_file = File::open(accuracies)
                .with_context(|| accuracies.display().to_string())
                .map_err(data)?;
            let rows = read_accuracies(BufReader::new(acc_file)).map_err(data)?;
            let pattern = BuildingPattern::new(&s.building_pattern).map_err(usage)?;
            let pop = population(&records, &oui, s.tz_offset_s);
            let ctx = FeatureContext {
                coords: &coords,
                pattern: &pattern,
                tz_offset_s: s.tz_offset_s,
                t_max: s.t_max,
            };
            let (features, failures) = all_features(&pop, &ctx);
            for (d, e) in &failures {
                eprintln!("warning: {d}: {e}");
            }
            let report = correlation_report(
                &select_accuracies(&rows, &s.corr),
                &features,
                &DeviceClass::STUDIED,
            );
            if report.dropped > 0 {
                eprintln!(
                    "{} devices without both features and accuracy were dropped",
                    report.dropped
                );
            }
            emit(&cli, "features.csv", |w| write_features(&features, w))?;
            emit(&cli, "correlations.csv", |w| {
                write_correlations(&report.cells, w)
            })
        }
        Command::Report {
            input,
            coords,
            transitions_only,
        } => {
            s.eval.eval.transitions_only |= transitions_only;
            let (records, oui) = load(input)?;
            let coords = coords.as_deref().map(read_coords).transpose()?;
            let out = run_pipeline(&records, &oui, coords.as_ref(), &s).map_err(usage)?;
            for (d, e) in out.discretize_failures.iter().chain(&out.feature_failures) {
                eprintln!("warning: {d}: {e}");
            }
            let meta = meta(&s, out.population.devices.len());
            let m = &out.matrix;
            let input = ReportInput {
                rows: &m.rows,
                accuracies: &m.accuracies,
                entropy: &m.entropy,
                runtimes: &m.runtimes,
                skipped: &m.skipped,
                correlations: out.correlations.as_ref().map(|c| c.cells.as_slice()),
                meta: &meta,
            };
            report_out(&cli, &input)?;
            if coords.is_some() {
                let dir = cli.out.as_deref().expect("checked by report_out");
                write_to(&dir.join("features.csv"), true, |w| {
                    write_features(&out.features, w)
                })?;
            }
            Ok(())
        }
    }
}

fn meta(s: &Settings, n_devices: usize) -> String {
    format!("{}devices = {n_devices}\n", s.describe())
}

fn load(input: &TraceArgs) -> Res<(Vec<AssociationRecord>, OuiMap)> {
    let oui_file = File::open(&input.oui)
        .with_context(|| input.oui.display().to_string())
        .map_err(data)?;
    let oui = OuiMap::read_from(BufReader::new(oui_file))
        .with_context(|| input.oui.display().to_string())
        .map_err(data)?;
    let mut records = Vec::new();
    for path in &input.traces {
        let f = File::open(path)
            .with_context(|| path.display().to_string())
            .map_err(data)?;
        let parsed = parse_trace(BufReader::new(f))
            .with_context(|| path.display().to_string())
            .map_err(data)?;
        for e in &parsed.errors {
            eprintln!("{}: skipped {e}", path.display());
        }
        if parsed.duplicates > 0 {
            eprintln!(
                "{}: dropped {} duplicate rows",
                path.display(),
                parsed.duplicates
            );
        }
        records.extend(parsed.records);
    }
    if records.is_empty() {
        return Err(data(anyhow!("no valid records in the input traces")));
    }
    sort_records(&mut records);
    Ok((records, oui))
}

fn read_coords(path: &Path) -> Res<BuildingCoords> {
    let f = File::open(path)
        .with_context(|| path.display().to_string())
        .map_err(data)?;
    BuildingCoords::read_from(BufReader::new(f))
        .with_context(|| path.display().to_string())
        .map_err(data)
}

fn out_dir(cli: &Cli) -> Res<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| usage(anyhow!("this command needs --out <dir>")))
}

fn write_to(
    path: &Path,
    force: bool,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Res<()> {
    if path.exists() && !force {
        return Err(usage(anyhow!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    let f = File::create(path)
        .with_context(|| path.display().to_string())
        .map_err(internal)?;
    let mut w = BufWriter::new(f);
    body(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| path.display().to_string())
        .map_err(internal)
}

/// Writes `name` into `--out` when given, otherwise to stdout.
fn emit(cli: &Cli, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Res<()> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .with_context(|| dir.display().to_string())
                .map_err(internal)?;
            write_to(&dir.join(name), cli.force, body)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock).and_then(|_| lock.flush()).map_err(internal)
        }
    }
}

fn report_out(cli: &Cli, input: &ReportInput) -> Res<()> {
    let dir = out_dir(cli)?;
    match write_report(dir, input, cli.force) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Err(e @ ReportError::Exists(_)) => Err(usage(e)),
        Err(e @ ReportError::NothingToReport) => Err(data(e)),
        Err(e) => Err(internal(e)),
    }
}

fn synth(cli: &Cli, s: &Settings) -> Res<()> {
    let dir = out_dir(cli)?;
    let out = generate(&s.synth).map_err(usage)?;
    fs::create_dir_all(dir)
        .with_context(|| dir.display().to_string())
        .map_err(internal)?;
    let f = cli.force;
    write_to(&dir.join("trace.csv"), f, |w| {
        write_records(&out.records, w)
    })?;
    write_to(&dir.join("oui_map.csv"), f, |w| out.oui_map.write_to(w))?;
    write_to(&dir.join("ground_truth.csv"), f, |w| {
        write_ground_truth(&out.truth, &s.synth.campus, w)
    })?;
    write_to(&dir.join("buildings.csv"), f, |w| {
        write_buildings(&s.synth.campus, w)
    })?;
    eprintln!(
        "{} records for {} devices in {}",
        out.records.len(),
        out.devices.len(),
        dir.display()
    );
    Ok(())
}

fn series_file_name(device: &str) -> String {
    let safe: String = device
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect();
    format!("{safe}.series")
}

fn discretize_cmd(
    cli: &Cli,
    s: &Settings,
    input: &TraceArgs,
    window: TemporalResolution,
    spatial: SpatialResolution,
) -> Res<()> {
    let dir = out_dir(cli)?;
    let (records, oui) = load(input)?;
    let pattern = BuildingPattern::new(&s.building_pattern).map_err(usage)?;
    let pop = population(&records, &oui, s.tz_offset_s);
    let (table, failures) = build_series(&pop, &[window], &[spatial], s.t_max, s.anchor, &pattern);
    for (d, e) in &failures {
        eprintln!("warning: {d}: {e}");
    }
    fs::create_dir_all(dir)
        .with_context(|| dir.display().to_string())
        .map_err(internal)?;
    let mut n = 0;
    for series in table.values().flatten() {
        write_to(
            &dir.join(series_file_name(&series.device)),
            cli.force,
            |w| series.write_to(w).map_err(io::Error::other),
        )?;
        n += 1;
    }
    eprintln!("{n} series written to {}", dir.display());
    Ok(())
}

fn entropy_cmd(cli: &Cli, s: &Settings, paths: &[PathBuf]) -> Res<()> {
    let mut reports = Vec::new();
    for p in paths {
        let f = File::open(p)
            .with_context(|| p.display().to_string())
            .map_err(data)?;
        let series = DiscreteSeries::read_from(BufReader::new(f))
            .with_context(|| p.display().to_string())
            .map_err(data)?;
        match entropy_report(&series, &s.eval.entropy) {
            Ok(r) => reports.push(r),
            Err(e) => eprintln!("warning: {}: {e}", p.display()),
        }
    }
    if reports.is_empty() {
        return Err(data(anyhow!(
            "no series had enough data for entropy estimation"
        )));
    }
    emit(cli, "entropy.csv", |w| write_reports(&reports, w))
}
