//! Command-line front end: argument parsing, run orchestration and the
//! machine-readable output files.
//!
//! Every data-producing subcommand resolves its flags into a [`Job`], runs it
//! on a thread pool of the requested size and writes its files plus a
//! `manifest.json` into `--out-dir`. The manifest stores the resolved job, so
//! `replay` reproduces the data files byte for byte.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    build_intensity_curve, dkw_bound, empirical_cdf, exact_exceedance_mean, gumbel_cdf, gumbel_quantile,
    histogram, ks_statistic, sorted_max_heights, tv_empirical_poisson, GofReport,
};
use crate::error::Error;
use crate::exceedance::{run_experiment, ExperimentConfig, ReplicationSummary, CELL_INDEX, DEFAULT_U_CAP};
use crate::geometry::{ball_volume, inverse_ball_volume, threshold, Dimension, ThresholdKind, ThresholdSpec};
use crate::knn::IndexRegistry;
use crate::lemma_verify::{
    difference_mc_row, difference_row, growth_rows, sandwich_rows, BallPairSpec, LemmaRow, RowStatus,
};
use crate::sampling::SeedSpec;

pub const THREADS_ENV: &str = "HYPNN_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARIES_FILE: &str = "summaries.csv";
pub const INTENSITY_FILE: &str = "intensity.csv";
pub const INTENSITY_GOF_FILE: &str = "intensity_gof.csv";
pub const GUMBEL_FILE: &str = "gumbel.csv";
pub const GUMBEL_GOF_FILE: &str = "gumbel_gof.csv";
pub const LEMMAS_FILE: &str = "lemmas.csv";

/// Smallest replication count accepted by `gumbel`.
pub const MIN_GUMBEL_REPS: u64 = 100;
/// Significance level of the default KS threshold.
pub const KS_ALPHA: f64 = 0.01;
const MAX_LEMMA_DIM: usize = 20;

#[derive(Parser, Debug)]
#[command(name = "hypnn", version, about = "Extreme k-NN balls of hyperbolic Poisson processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print a ball volume, an inverse volume or a threshold value.
    Volume(VolumeArgs),
    /// Simulate replications; writes records.jsonl and summaries.csv.
    Simulate(SimulateArgs),
    /// Compare mean exceedance counts with the exact intensity.
    Intensity(IntensityArgs),
    /// Compare the maximum height law with the Gumbel distribution.
    Gumbel(GumbelArgs),
    /// Evaluate the volume bounds on grids; writes lemmas.csv.
    LemmaCheck(LemmaArgs),
    /// Re-run the job recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("query").required(true).args(["r", "volume", "threshold"])))]
pub struct VolumeArgs {
    #[arg(long)]
    pub d: usize,
    /// Radius whose ball volume is printed.
    #[arg(long)]
    pub r: Option<f64>,
    /// Volume whose radius is printed.
    #[arg(long = "V")]
    pub volume: Option<f64>,
    /// Threshold kind (standard or logvolume); needs --k and --R.
    #[arg(long, requires_all = ["k", "big_r"])]
    pub threshold: Option<ThresholdKind>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "R")]
    pub big_r: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Radius of the observation ball.
    #[arg(long = "R")]
    pub big_r: f64,
    /// Restriction level: records are kept for heights above it.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub c: f64,
    /// Censoring level of the heights.
    #[arg(long, default_value_t = DEFAULT_U_CAP)]
    pub u_cap: f64,
    #[arg(long, default_value_t = ThresholdKind::Standard)]
    pub threshold: ThresholdKind,
    #[arg(long, default_value_t = 100)]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Neighbour search backend.
    #[arg(long, default_value = CELL_INDEX)]
    pub index: String,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Worker threads; falls back to HYPNN_THREADS, then to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct IntensityArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Comma-separated levels u, each in [c, u_cap).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,1,2")]
    pub u_grid: Vec<f64>,
    /// Also compare the law of N(c) with Poisson(Λ(c)) in total variation.
    #[arg(long)]
    pub tv_threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GumbelArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Comma-separated levels at which both CDFs are tabulated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-2,-1,0,1,2,3,4")]
    pub levels: Vec<f64>,
    /// Draw the maxima directly from the Gumbel law instead of simulating.
    #[arg(long)]
    pub synthetic: bool,
    /// KS acceptance threshold; defaults to the DKW band at level 0.01.
    #[arg(long)]
    pub ks_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Default,
    Coarse,
}

#[derive(Args, Debug)]
pub struct LemmaArgs {
    /// Dimension range, e.g. `2-8` or `3`.
    #[arg(long, default_value = "2-8")]
    pub d_range: String,
    #[arg(long, value_enum, default_value_t = GridKind::Default)]
    pub grids: GridKind,
    /// Monte Carlo samples per ball pair; 0 skips the Monte Carlo rows.
    #[arg(long, default_value_t = 0)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// A fully resolved data-producing run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Simulate {
        config: ExperimentConfig,
    },
    Intensity {
        config: ExperimentConfig,
        u_grid: Vec<f64>,
        tv_threshold: Option<f64>,
    },
    Gumbel {
        config: ExperimentConfig,
        levels: Vec<f64>,
        synthetic: bool,
        ks_threshold: f64,
    },
    LemmaCheck {
        d_min: usize,
        d_max: usize,
        grids: GridKind,
        mc_samples: usize,
        seed: u64,
    },
}

impl Job {
    pub fn master_seed(&self) -> u64 {
        match self {
            Job::Simulate { config } | Job::Intensity { config, .. } | Job::Gumbel { config, .. } => config.seed,
            Job::LemmaCheck { seed, .. } => *seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub master_seed: u64,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub job: Job,
    /// Data files written next to the manifest.
    pub outputs: Vec<String>,
}

/// Result of a data-producing run: its manifest and whether every check passed.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub pass: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Replication { .. } => CliError::Failure(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command, mapping the outcome to an exit status.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Runs one command; `Ok(false)` means a check failed.
pub fn run(command: Command) -> CliResult<bool> {
    let (job, output) = match command {
        Command::Volume(args) => return volume(&args).map(|_| true),
        Command::Simulate(args) => (
            Job::Simulate {
                config: resolve_config(&args.experiment)?,
            },
            args.output,
        ),
        Command::Intensity(args) => {
            let config = resolve_config(&args.experiment)?;
            if let Some(u) = args.u_grid.iter().find(|&&u| !(u >= config.c && u < config.u_cap)) {
                return Err(CliError::Usage(format!(
                    "u-grid value {u} outside [{}, {})",
                    config.c, config.u_cap
                )));
            }
            if args.u_grid.is_empty() {
                return Err(CliError::Usage("empty u-grid".into()));
            }
            (
                Job::Intensity {
                    config,
                    u_grid: args.u_grid,
                    tv_threshold: args.tv_threshold,
                },
                args.output,
            )
        }
        Command::Gumbel(args) => {
            let config = resolve_config(&args.experiment)?;
            if config.replications < MIN_GUMBEL_REPS {
                return Err(CliError::Usage(format!(
                    "gumbel needs at least {MIN_GUMBEL_REPS} replications, got {}",
                    config.replications
                )));
            }
            let ks_threshold = args
                .ks_threshold
                .unwrap_or_else(|| dkw_bound(config.replications as usize, KS_ALPHA));
            (
                Job::Gumbel {
                    config,
                    levels: args.levels,
                    synthetic: args.synthetic,
                    ks_threshold,
                },
                args.output,
            )
        }
        Command::LemmaCheck(args) => {
            let (d_min, d_max) = parse_d_range(&args.d_range)?;
            (
                Job::LemmaCheck {
                    d_min,
                    d_max,
                    grids: args.grids,
                    mc_samples: args.mc_samples,
                    seed: args.seed,
                },
                args.output,
            )
        }
        Command::Replay(args) => {
            let text = fs::read_to_string(&args.manifest)?;
            let manifest: RunManifest =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad manifest: {e}")))?;
            (
                manifest.job,
                OutputArgs {
                    threads: args.threads,
                    out_dir: args.out_dir,
                },
            )
        }
    };
    let threads = resolve_threads(output.threads)?;
    Ok(execute(&job, &output.out_dir, threads)?.pass)
}

fn volume(args: &VolumeArgs) -> CliResult<()> {
    let d = Dimension::new(args.d)?;
    let value = if let Some(r) = args.r {
        ball_volume(d, r)?
    } else if let Some(v) = args.volume {
        inverse_ball_volume(d, v)?
    } else {
        let kind = args.threshold.expect("argument group");
        let spec = ThresholdSpec::new(kind, args.k.expect("required with --threshold"))?;
        threshold(spec, d, args.big_r.expect("required with --threshold"))?
    };
    println!("{value}");
    Ok(())
}

pub fn resolve_config(args: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let config = ExperimentConfig::new(Dimension::new(args.d)?, args.k, args.big_r)
        .with_c(args.c)
        .with_u_cap(args.u_cap)
        .with_threshold(args.threshold)
        .with_seed(args.seed)
        .with_replications(args.reps)
        .with_index(&args.index);
    config.validate()?;
    if !IndexRegistry::default().contains(&config.index) {
        return Err(Error::UnknownIndex(config.index).into());
    }
    Ok(config)
}

/// `--threads`, else `HYPNN_THREADS`, else the available parallelism.
pub fn resolve_threads(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {s:?}")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be positive".into()));
    }
    Ok(n)
}

fn parse_d_range(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("d-range must look like 2-8, got {s:?}"));
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let d = s.trim().parse().map_err(|_| bad())?;
            (d, d)
        }
    };
    if lo < 2 || lo > hi || hi > MAX_LEMMA_DIM {
        return Err(CliError::Usage(format!(
            "d-range must satisfy 2 <= lo <= hi <= {MAX_LEMMA_DIM}, got {s:?}"
        )));
    }
    Ok((lo, hi))
}

/// Runs `job` on `threads` workers and writes its files into `out_dir`.
pub fn execute(job: &Job, out_dir: &Path, threads: usize) -> CliResult<Outcome> {
    fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Failure(e.to_string()))?;
    let start = Instant::now();
    let (outputs, pass) = pool.install(|| match job {
        Job::Simulate { config } => simulate(config, out_dir),
        Job::Intensity {
            config,
            u_grid,
            tv_threshold,
        } => intensity(config, u_grid, *tv_threshold, out_dir),
        Job::Gumbel {
            config,
            levels,
            synthetic,
            ks_threshold,
        } => gumbel(config, levels, *synthetic, *ks_threshold, out_dir),
        Job::LemmaCheck {
            d_min,
            d_max,
            grids,
            mc_samples,
            seed,
        } => lemma_check(*d_min, *d_max, *grids, *mc_samples, *seed, out_dir),
    })?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: job.master_seed(),
        threads,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        job: job.clone(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let mut w = BufWriter::new(File::create(out_dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(Outcome { manifest, pass })
}

type JobResult = CliResult<(Vec<&'static str>, bool)>;

#[derive(Serialize)]
struct RecordLine {
    replication_id: u64,
    height: f64,
    censored: bool,
    radial_distance: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    replication_id: u64,
    #[serde(rename = "n_points_in_BR")]
    n_points_in_br: usize,
    n_records: usize,
    max_height: Option<f64>,
    n_censored: usize,
}

#[derive(Serialize)]
struct IntensityRow {
    u: f64,
    exact: f64,
    empirical_mean: f64,
    ci_halfwidth: f64,
    pass: bool,
}

#[derive(Serialize)]
struct GumbelRow {
    c: f64,
    empirical_cdf: f64,
    gumbel_cdf: f64,
    abs_diff: f64,
}

#[derive(Serialize)]
struct LemmaCsvRow {
    lemma: &'static str,
    d: usize,
    r: f64,
    s: Option<f64>,
    value: f64,
    lower: Option<f64>,
    upper: Option<f64>,
    pass: &'static str,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_gof(path: &Path, reports: &[GofReport]) -> CliResult<()> {
    write_csv(path, reports)
}

fn simulate(config: &ExperimentConfig, out_dir: &Path) -> JobResult {
    let summaries = run_experiment(config)?;
    let mut w = BufWriter::new(File::create(out_dir.join(RECORDS_FILE))?);
    for s in &summaries {
        for rec in &s.records {
            let line = RecordLine {
                replication_id: s.replication_id,
                height: rec.height,
                censored: rec.censored,
                radial_distance: rec.position.radius(),
            };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    write_summaries(&out_dir.join(SUMMARIES_FILE), &summaries)?;
    Ok((vec![RECORDS_FILE, SUMMARIES_FILE], true))
}

fn write_summaries(path: &Path, summaries: &[ReplicationSummary]) -> CliResult<()> {
    write_csv(
        path,
        summaries.iter().map(|s| SummaryRow {
            replication_id: s.replication_id,
            n_points_in_br: s.n_points_in_br,
            n_records: s.records.len(),
            max_height: s.max_height,
            n_censored: s.n_censored,
        }),
    )
}

fn intensity(config: &ExperimentConfig, u_grid: &[f64], tv_threshold: Option<f64>, out_dir: &Path) -> JobResult {
    let summaries = run_experiment(config)?;
    let curve = build_intensity_curve(&summaries, config, u_grid)?;
    let n = summaries.len();
    let rows: Vec<IntensityRow> = (0..curve.grid.len())
        .map(|i| IntensityRow {
            u: curve.grid[i],
            exact: curve.exact[i],
            empirical_mean: curve.empirical_mean[i],
            ci_halfwidth: curve.empirical_ci_halfwidth[i],
            pass: curve.passes(i),
        })
        .collect();
    let mut reports: Vec<GofReport> = rows
        .iter()
        .map(|row| {
            GofReport::new(
                format!("intensity u={}", row.u),
                (row.empirical_mean - row.exact).abs(),
                n,
                row.ci_halfwidth,
            )
        })
        .collect();
    if let Some(t) = tv_threshold {
        let lambda = exact_exceedance_mean(config.d, config.threshold_spec()?, config.big_r, config.c)?;
        let hist = histogram(summaries.iter().map(|s| s.records.len()));
        let tv = tv_empirical_poisson(&hist, lambda)?;
        reports.push(GofReport::new(format!("tv poisson N({})", config.c), tv, n, t));
    }
    write_csv(&out_dir.join(INTENSITY_FILE), &rows)?;
    write_gof(&out_dir.join(INTENSITY_GOF_FILE), &reports)?;
    Ok((vec![INTENSITY_FILE, INTENSITY_GOF_FILE], reports.iter().all(|r| r.pass)))
}

/// Maximum heights of a simulation, or Gumbel draws when `synthetic`, sorted.
pub fn gumbel_sample(config: &ExperimentConfig, synthetic: bool) -> CliResult<Vec<f64>> {
    if synthetic {
        let mut rng = SeedSpec::new(config.seed, 0).rng();
        let mut m: Vec<f64> = (0..config.replications)
            .map(|_| gumbel_quantile(rng.sample::<f64, _>(Open01)))
            .collect();
        m.sort_by(f64::total_cmp);
        Ok(m)
    } else {
        Ok(sorted_max_heights(&run_experiment(config)?))
    }
}

fn gumbel(config: &ExperimentConfig, levels: &[f64], synthetic: bool, ks_threshold: f64, out_dir: &Path) -> JobResult {
    let sample = gumbel_sample(config, synthetic)?;
    let ks = ks_statistic(&sample, gumbel_cdf)?;
    let rows = levels.iter().map(|&c| {
        let (e, g) = (empirical_cdf(&sample, c), gumbel_cdf(c));
        GumbelRow {
            c,
            empirical_cdf: e,
            gumbel_cdf: g,
            abs_diff: (e - g).abs(),
        }
    });
    write_csv(&out_dir.join(GUMBEL_FILE), rows)?;
    let report = GofReport::new("ks max height vs gumbel", ks, sample.len(), ks_threshold);
    let dropped = config.replications as usize - sample.len();
    println!(
        "ks = {ks} (threshold {ks_threshold}) over {} maxima; {dropped} empty replications dropped",
        sample.len()
    );
    write_gof(&out_dir.join(GUMBEL_GOF_FILE), std::slice::from_ref(&report))?;
    Ok((vec![GUMBEL_FILE, GUMBEL_GOF_FILE], report.pass))
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Grids of the lemma checks: growth radii, sandwich radii, ball pairs
/// `(r, s)` and the pairs that also get a Monte Carlo row.
pub struct LemmaGrids {
    pub growth: Vec<f64>,
    pub sandwich: Vec<f64>,
    pub pairs: Vec<(f64, f64)>,
    pub mc_pairs: Vec<(f64, f64)>,
}

impl LemmaGrids {
    pub fn new(kind: GridKind) -> Self {
        let (growth, sandwich, rs, ss): (_, _, &[f64], &[f64]) = match kind {
            GridKind::Default => (
                steps(2.0, 20.0, 0.25),
                steps(0.5, 15.0, 0.25),
                &[2.0, 2.5, 3.0, 4.0, 6.0, 8.0, 10.0, 12.0],
                &[0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            ),
            GridKind::Coarse => (steps(2.0, 20.0, 2.0), steps(0.5, 15.0, 1.45), &[3.0, 6.0], &[0.5, 2.0, 4.0]),
        };
        let pairs = rs
            .iter()
            .flat_map(|&r| ss.iter().filter(move |&&s| s <= r).map(move |&s| (r, s)))
            .collect();
        Self {
            growth,
            sandwich,
            pairs,
            mc_pairs: vec![(3.0, 1.0), (5.0, 2.0)],
        }
    }
}

/// All lemma rows for dimension `d`; MC streams are keyed by `(d, pair index)`.
pub fn lemma_rows(d: Dimension, grids: &LemmaGrids, mc_samples: usize, seed: u64) -> CliResult<Vec<LemmaRow>> {
    let mut rows = growth_rows(d, &grids.growth)?;
    rows.extend(sandwich_rows(d, &grids.sandwich)?);
    for &(r, s) in &grids.pairs {
        rows.push(difference_row(BallPairSpec::new(d, r, s)?));
    }
    if mc_samples > 0 {
        for (j, &(r, s)) in grids.mc_pairs.iter().enumerate() {
            let stream = (d.get() as u64) << 32 | j as u64;
            rows.push(difference_mc_row(
                BallPairSpec::new(d, r, s)?,
                mc_samples,
                SeedSpec::new(seed, stream),
            )?);
        }
    }
    Ok(rows)
}

fn lemma_check(d_min: usize, d_max: usize, kind: GridKind, mc_samples: usize, seed: u64, out_dir: &Path) -> JobResult {
    let grids = LemmaGrids::new(kind);
    let per_dim: Vec<CliResult<Vec<LemmaRow>>> = (d_min..=d_max)
        .into_par_iter()
        .map(|d| lemma_rows(Dimension::new(d)?, &grids, mc_samples, seed))
        .collect();
    let mut rows = Vec::new();
    for r in per_dim {
        rows.extend(r?);
    }
    let pass = rows.iter().all(|r| r.status != RowStatus::Fail);
    write_csv(
        &out_dir.join(LEMMAS_FILE),
        rows.iter().map(|r| LemmaCsvRow {
            lemma: r.lemma,
            d: r.d,
            r: r.r,
            s: r.s,
            value: r.value,
            lower: r.lower,
            upper: r.upper,
            pass: r.status.as_str(),
        }),
    )?;
    Ok((vec![LEMMAS_FILE], pass))
}
