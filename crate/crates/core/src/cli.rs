//! Command-line front end.
//!
//! Exit codes are shared by every command: 0 success, 2 configuration or
//! usage error, 3 I/O error, 4 degenerate result.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::report::{MeanStd, MetricAnova};
use crate::io::{self, Report, ReportFormat, SummaryRow, SummaryTable};
use crate::metrics::{self, MetricsReport};
use crate::phantom::{self, PhantomParams};
use crate::preprocess::{self, PreprocessParams};
use crate::segment::{self, MethodConfig, PostprocessPolicy};
use crate::stats;
use crate::volume::{connected_components, BBox, Connectivity};

pub const THREADS_ENV: &str = "BILISEG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "biliseg", version, about = "Bile-duct style tubular segmentation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom volume and its ground-truth mask.
    Phantom {
        #[arg(long)]
        config: PathBuf,
        /// Output intensity volume (.nii).
        #[arg(long)]
        out: PathBuf,
        /// Output ground-truth mask (.nii).
        #[arg(long)]
        truth: PathBuf,
    },
    /// Contrast-stretch (and optionally crop) a volume.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Preprocessing parameters (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run preprocess → segmentation → postprocess and write the mask.
    Segment {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        /// Expected method; must match the config when given.
        #[arg(long)]
        method: Option<String>,
    },
    /// Compare a predicted mask against ground truth.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: ReportArgs,
        /// Neighbourhood for the topology proxies.
        #[arg(long, default_value_t = 26, value_parser = parse_connectivity)]
        connectivity: u32,
        /// Label written in the method column.
        #[arg(long, default_value = "prediction")]
        method: String,
    },
    /// Summarise per-case reports by method with mean ±std and ANOVA.
    Compare {
        /// `method=report.json`, repeatable.
        #[arg(long = "in")]
        inputs: Vec<String>,
        /// JSON object mapping method name to a list of report paths.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: ReportArgs,
    },
    /// Export a mask surface as binary STL (mm).
    Mesh {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, default_value = "json")]
    format: String,
}

/// Full description of one segmentation run. A provenance sidecar written by
/// `segment` is itself a valid `RunConfig`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub segmentation: MethodConfig,
    #[serde(default)]
    pub preprocess: Option<PreprocessParams>,
    #[serde(default)]
    pub postprocess: Vec<PostprocessPolicy>,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Filled in by `segment`; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub crop_box: Option<BBox>,
    pub raw_voxels: usize,
    pub output_voxels: usize,
}

/// Path of the provenance sidecar for a mask written to `out`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_connectivity(s: &str) -> std::result::Result<u32, String> {
    match s {
        "6" | "18" | "26" => Ok(s.parse().unwrap()),
        _ => Err(format!("expected 6, 18 or 26, got {s}")),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV}={raw:?} is not a thread count")))?;
    if n > 0 {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Phantom { config, out, truth } => cmd_phantom(&config, &out, &truth),
        Command::Preprocess { input, out, config } => cmd_preprocess(&input, &out, config.as_deref()),
        Command::Segment {
            input,
            out,
            config,
            method,
        } => cmd_segment(input, out, &config, method.as_deref()),
        Command::Evaluate {
            input,
            truth,
            out,
            common,
            connectivity,
            method,
        } => {
            let conn = Connectivity::from_count(connectivity)?;
            cmd_evaluate(&input, &truth, &out, common.format.parse()?, conn, &method)
        }
        Command::Compare {
            inputs,
            config,
            out,
            common,
        } => cmd_compare(&inputs, config.as_deref(), &out, common.format.parse()?),
        Command::Mesh { input, out } => cmd_mesh(&input, &out),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_phantom(config: &Path, out: &Path, truth_out: &Path) -> Result<i32> {
    let params: PhantomParams = read_json(config)?;
    let ph = phantom::generate_phantom(&params)?;
    io::write_volume(&ph.volume, out)?;
    if let Err(e) = io::write_mask(&ph.truth, truth_out) {
        let _ = fs::remove_file(out);
        return Err(e);
    }
    let components = connected_components(&ph.truth, Connectivity::Vertex26).num_components();
    println!(
        "phantom {}: {} segments, {} components, {} foreground voxels",
        params.dims,
        ph.tree.len(),
        components,
        ph.truth.count()
    );
    Ok(0)
}

pub fn cmd_preprocess(input: &Path, out: &Path, config: Option<&Path>) -> Result<i32> {
    let params = match config {
        Some(p) => read_json(p)?,
        None => PreprocessParams::default(),
    };
    params.validate()?;
    let volume = io::read_volume(input)?;
    let (processed, bbox) = preprocess::preprocess(&volume, &params)?;
    io::write_volume(&processed, out)?;
    match bbox {
        Some(b) => println!("wrote {} (cropped to {:?}..{:?})", processed.dims(), b.min, b.max),
        None => println!("wrote {}", processed.dims()),
    }
    Ok(0)
}

pub fn cmd_segment(
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    config: &Path,
    method: Option<&str>,
) -> Result<i32> {
    let mut cfg: RunConfig = read_json(config)?;
    cfg.provenance = None;
    if let Some(i) = input {
        cfg.input = Some(i);
    }
    if let Some(o) = out {
        cfg.output = Some(o);
    }
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| Error::Config("no input volume given (--in or \"input\")".into()))?;
    let output = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output path given (--out or \"output\")".into()))?;
    if let Some(m) = method {
        if m != cfg.segmentation.name() {
            return Err(Error::Config(format!(
                "--method {m} disagrees with config method {}",
                cfg.segmentation.name()
            )));
        }
    }
    if let Some(p) = &cfg.preprocess {
        p.validate()?;
    }

    let volume = io::read_volume(&input)?;
    let dims = volume.dims();
    cfg.segmentation.validate(dims)?;

    let (work, bbox) = match &cfg.preprocess {
        Some(p) => preprocess::preprocess(&volume, p)?,
        None => (volume, None),
    };
    let raw = match &bbox {
        Some(b) => {
            let local = cfg.segmentation.relative_to(b)?;
            segment::segment(&work, &local)?.embed(b, dims)?
        }
        None => segment::segment(&work, &cfg.segmentation)?,
    };
    let mask = segment::postprocess(&raw, &cfg.postprocess)?;
    io::write_mask(&mask, &output)?;

    cfg.provenance = Some(Provenance {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        crop_box: bbox,
        raw_voxels: raw.count(),
        output_voxels: mask.count(),
    });
    io::write_atomic(&sidecar_path(&output), to_pretty_json(&cfg)?.as_bytes())?;

    println!(
        "{}: {} voxels segmented, {} after postprocessing",
        cfg.segmentation.name(),
        raw.count(),
        mask.count()
    );
    if mask.is_empty() {
        eprintln!("error: segmentation is empty after postprocessing");
        return Ok(4);
    }
    Ok(0)
}

pub fn cmd_evaluate(
    pred: &Path,
    truth: &Path,
    out: &Path,
    format: ReportFormat,
    conn: Connectivity,
    method: &str,
) -> Result<i32> {
    let p = io::read_mask(pred)?;
    let t = io::read_mask(truth)?;
    let report = metrics::evaluate(&p, &t, conn)?;
    io::write_report(
        &Report::Single {
            method: method.to_string(),
            metrics: report,
        },
        format,
        out,
    )?;
    println!(
        "DSC {:.4}  HD {:.3} mm  RVD {:.4}  outliers {}  false communicating {}  false non-communicating {}",
        report.dsc,
        report.hd_mm,
        report.rvd,
        report.outliers,
        report.false_communicating,
        report.false_non_communicating
    );
    Ok(0)
}

#[derive(Deserialize)]
struct StoredReport {
    #[serde(flatten)]
    metrics: MetricsReport,
}

/// Metric accessors in report column order.
const METRICS: [(&str, fn(&MetricsReport) -> f64); 6] = [
    ("DSC", |m| m.dsc),
    ("HD_mm", |m| m.hd_mm),
    ("RVD", |m| m.rvd),
    ("outliers", |m| m.outliers as f64),
    ("false_communicating_IHDs", |m| m.false_communicating as f64),
    ("false_non_communicating_IHDs", |m| m.false_non_communicating as f64),
];

/// Builds the per-method summary table. Groups keep their given order and
/// must have equal, >= 2 case counts.
pub fn summarize(groups: &[(String, Vec<MetricsReport>)]) -> Result<SummaryTable> {
    if groups.len() < 2 {
        return Err(Error::Config(format!(
            "comparison needs at least 2 methods, got {}",
            groups.len()
        )));
    }
    let cases = groups[0].1.len();
    for (name, g) in groups {
        if g.len() < 2 {
            return Err(Error::Config(format!("method {name} has {} case(s), need >= 2", g.len())));
        }
        if g.len() != cases {
            return Err(Error::Config(format!(
                "unbalanced groups: {name} has {} cases, {} has {cases}",
                g.len(),
                groups[0].0
            )));
        }
    }

    let mut rows = Vec::with_capacity(groups.len());
    for (name, g) in groups {
        let mut cells = Vec::with_capacity(METRICS.len());
        for (_, get) in METRICS {
            let values: Vec<f64> = g.iter().map(get).collect();
            let (mean, std) = stats::mean_std(&values)?;
            cells.push(MeanStd { mean, std });
        }
        rows.push(SummaryRow {
            method: name.clone(),
            cases: g.len(),
            dsc: cells[0],
            hd_mm: cells[1],
            rvd: cells[2],
            outliers: cells[3],
            false_communicating: cells[4],
            false_non_communicating: cells[5],
        });
    }

    let anova = METRICS
        .iter()
        .map(|(metric, get)| {
            let samples: Vec<Vec<f64>> = groups.iter().map(|(_, g)| g.iter().map(get).collect()).collect();
            match stats::one_way_anova(&samples) {
                Ok(r) => MetricAnova {
                    metric: metric.to_string(),
                    result: Some(r),
                    note: None,
                },
                Err(e) => MetricAnova {
                    metric: metric.to_string(),
                    result: None,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SummaryTable { rows, anova })
}

pub fn cmd_compare(inputs: &[String], config: Option<&Path>, out: &Path, format: ReportFormat) -> Result<i32> {
    let mut paths: Vec<(String, Vec<PathBuf>)> = Vec::new();
    let mut push = |method: &str, path: PathBuf| match paths.iter_mut().find(|(m, _)| m == method) {
        Some((_, v)) => v.push(path),
        None => paths.push((method.to_string(), vec![path])),
    };
    if let Some(c) = config {
        let grouped: BTreeMap<String, Vec<PathBuf>> = read_json(c)?;
        for (m, ps) in grouped {
            for p in ps {
                push(&m, p);
            }
        }
    }
    for spec in inputs {
        let (m, p) = spec
            .split_once('=')
            .filter(|(m, p)| !m.is_empty() && !p.is_empty())
            .ok_or_else(|| Error::Config(format!("--in expects method=path, got {spec:?}")))?;
        push(m, PathBuf::from(p));
    }

    let mut groups = Vec::with_capacity(paths.len());
    for (m, ps) in paths {
        let reports = ps
            .iter()
            .map(|p| read_json::<StoredReport>(p).map(|r| r.metrics))
            .collect::<Result<Vec<_>>>()?;
        groups.push((m, reports));
    }
    let table = summarize(&groups)?;
    io::write_report(&Report::Summary(table.clone()), format, out)?;
    for a in &table.anova {
        match &a.result {
            Some(r) => println!(
                "{:<30} F({}, {}) = {:.4}  p = {:.4}{}",
                a.metric,
                r.df_between,
                r.df_within,
                r.f_stat,
                r.p_value,
                if r.significant { " *" } else { "" }
            ),
            None => println!("{:<30} n/a", a.metric),
        }
    }
    Ok(0)
}

pub fn cmd_mesh(input: &Path, out: &Path) -> Result<i32> {
    let mask = io::read_mask(input)?;
    let mesh = io::extract_surface_mesh(&mask)?;
    io::write_stl(&mesh, out)?;
    println!(
        "{} triangles, surface area {:.2} mm^2",
        mesh.len(),
        io::surface_area(&mesh)
    );
    Ok(0)
}
