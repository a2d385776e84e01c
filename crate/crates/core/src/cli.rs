//! The `privot` command line: data generation, fitting, sweeps, the
//! verification suites and density export. Every output carries the
//! resolved configuration, inline for NDJSON and JSON, in a `.meta.json`
//! sidecar for CSV.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::candidates::{
    generate_family, sample_random_params, AttractionRepulsionParams, CandidateFamily, CandidateLabel, FamilyMode,
};
use crate::config::{GridConfig, PackingConfig, RunConfig, VerifyConfig};
use crate::covering::{
    covering_log_cardinality, delta_grid_covering, screen_covering, select_resolution, WaveletBasisSpec,
};
use crate::dp::{verify_dp_ratio, DpRatioReport, SeededRng};
use crate::error::{Error, Result};
use crate::estimator::{fit_nonprivate, fit_private, score_family, write_map_csv, Diagnostics, FitConfig, PrivacyCertificate};
use crate::grid::{BoxDomain, GridPotential, GridSpec};
use crate::metrics::{
    derive_seed, kde_grid, median, run_sweep, scott_bandwidth, SweepSetup, STREAM_DATA, STREAM_FAMILY, STREAM_FIT,
    STREAM_TRUTH,
};
use crate::models::{
    default_amplitude, generate_samples, packing_pairwise_distance, packing_tv_distance_1d, ExperimentModel,
    PackingSpec,
};
use crate::semidual::{sensitivity_clipped, Dataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "privot", version, about = "Differentially private transport map estimation on grids")]
pub struct Cli {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `data.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Writes raw and noisy scores to the fit record. These are NOT private.
    #[arg(long, global = true)]
    pub unsafe_diagnostics: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Samples a synthetic dataset into X.csv and Y.csv.
    Generate,
    /// Selects a family member privately from a dataset directory.
    Fit {
        /// Directory holding X.csv and Y.csv (defaults to the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Family labels JSON; generated from the config when absent.
        #[arg(long)]
        family: Option<PathBuf>,
        /// Uses the exact minimizer instead of the private mechanism.
        #[arg(long)]
        non_private: bool,
    },
    /// Runs the (n, eps, seed) grid and writes NDJSON rows.
    Sweep,
    /// Empirical privacy-ratio check on neighboring toy datasets.
    VerifyDp,
    /// Distance and total-variation scaling of the packing family.
    VerifyPacking,
    /// Wavelet covering dimensions, log-cardinalities and screening rates.
    CoveringStats,
    /// Kernel density of a point CSV on the configured grid.
    Kde {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to Scott's rule.
        #[arg(long)]
        bandwidth: Option<f64>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn verification_failed(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_VERIFY,
        message: msg.into(),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("privot: {e}");
            e.code
        }
    }
}

pub fn run(cli: &Cli) -> std::result::Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref()).map_err(|e| CliError {
        code: EXIT_CONFIG,
        message: e.to_string(),
    })?;
    if let Some(seed) = cli.seed {
        config.data.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    std::fs::create_dir_all(&config.output.dir).map_err(Error::from)?;
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError {
            code: EXIT_CONFIG,
            message: format!("cannot build worker pool: {e}"),
        })?;
    pool.install(|| dispatch(cli, &config))
}

fn dispatch(cli: &Cli, config: &RunConfig) -> std::result::Result<(), CliError> {
    match &cli.command {
        Command::Generate => cmd_generate(config).map_err(Into::into),
        Command::Fit {
            data,
            family,
            non_private,
        } => {
            let dir = data.clone().unwrap_or_else(|| config.output.dir.clone());
            cmd_fit(config, &dir, family.as_deref(), *non_private, cli.unsafe_diagnostics, cli.threads)
                .map_err(Into::into)
        }
        Command::Sweep => cmd_sweep(config).map_err(Into::into),
        Command::VerifyDp => {
            let outcome = cmd_verify_dp(config)?;
            if outcome.pass {
                Ok(())
            } else {
                Err(verification_failed(format!(
                    "privacy ratio exceeded on {} of {} pairs",
                    outcome.failed_pairs, outcome.pairs
                )))
            }
        }
        Command::VerifyPacking => {
            let summary = cmd_verify_packing(config)?;
            if summary.pass {
                Ok(())
            } else {
                Err(verification_failed(format!("packing checks failed: {summary:?}")))
            }
        }
        Command::CoveringStats => cmd_covering_stats(config).map_err(Into::into),
        Command::Kde { data, bandwidth } => cmd_kde(config, data, *bandwidth).map_err(Into::into),
    }
}

/// Provenance block written next to every CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar<T> {
    pub command: String,
    pub config: RunConfig,
    pub details: T,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_sidecar<T: Serialize>(csv: &Path, command: &str, config: &RunConfig, details: T) -> Result<()> {
    let meta = Sidecar {
        command: command.to_string(),
        config: config.clone(),
        details,
    };
    std::fs::write(sidecar_path(csv), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Writes point-major `points` as CSV with header `x1..xd`.
pub fn write_points_csv<W: Write>(points: &[f64], d: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=d).map(|a| format!("x{a}")))?;
    for p in points.chunks(d) {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_points_csv`]; returns the flat points and `d`.
pub fn read_points_csv<R: Read>(input: R) -> Result<(Vec<f64>, usize)> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let d = headers.len();
    if d == 0 || headers.iter().enumerate().any(|(a, h)| h != format!("x{}", a + 1)) {
        return Err(Error::InvalidArgument(format!(
            "point CSV header must be x1..xd, got {headers:?}"
        )));
    }
    let mut points = Vec::new();
    for record in r.records() {
        for field in record?.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite("point CSV"));
            }
            points.push(v);
        }
    }
    Ok((points, d))
}

fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_points_file(path: &Path) -> Result<(Vec<f64>, usize)> {
    read_points_csv(open_input(path)?)
}

/// Sidecar details of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub true_params: AttractionRepulsionParams,
}

/// True parameters drawn from the truth stream of `seed`.
pub fn true_params_for(config: &RunConfig, seed: u64) -> Result<AttractionRepulsionParams> {
    sample_random_params(&mut SeededRng::new(seed, STREAM_TRUTH), config.grid.d, &config.model)
}

pub fn cmd_generate(config: &RunConfig) -> Result<()> {
    let seed = config.data.seed;
    let model = ExperimentModel {
        true_params: true_params_for(config, seed)?,
        domain: config.grid.domain()?,
        n: config.data.n,
    };
    let (x, _, y) = generate_samples(&model, &mut SeededRng::new(seed, STREAM_DATA))?;
    let d = config.grid.d;
    let meta = DatasetMeta {
        seed,
        n: config.data.n,
        d,
        true_params: model.true_params.clone(),
    };
    for (name, pts) in [("X.csv", &x), ("Y.csv", &y)] {
        let path = config.output.dir.join(name);
        write_points_csv(pts, d, BufWriter::new(File::create(&path)?))?;
        write_sidecar(&path, "generate", config, &meta)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Loads `X.csv` and `Y.csv` from `dir` onto the configured grid.
pub fn load_dataset(dir: &Path, spec: &GridSpec) -> Result<Dataset> {
    let (x, dx) = read_points_file(&dir.join("X.csv"))?;
    let (y, dy) = read_points_file(&dir.join("Y.csv"))?;
    for d in [dx, dy] {
        if d != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                got: d,
            });
        }
    }
    Dataset::from_flat(spec, x, y)
}

/// Released fields of a fit plus the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub config: RunConfig,
    pub chosen_index: usize,
    pub chosen_label: CandidateLabel,
    pub noise_scale: f64,
    pub certificate: PrivacyCertificate,
    /// Sibling CSV holding the fitted map.
    pub map_csv: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

/// The family named by the config: member 0 is the truth recorded next to
/// the dataset in include-true mode.
fn family_for(config: &RunConfig, dir: &Path, spec: &GridSpec) -> Result<CandidateFamily> {
    let truth = match config.family.mode {
        FamilyMode::DecoysOnly => None,
        FamilyMode::IncludeTrue => {
            let path = sidecar_path(&dir.join("X.csv"));
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("include-true mode needs {}: {e}", path.display()),
                ))
            })?;
            let meta: Sidecar<DatasetMeta> = serde_json::from_str(&text)?;
            if meta.config.grid != config.grid {
                return Err(Error::GridMismatch(format!(
                    "dataset was generated on {:?}, config uses {:?}",
                    meta.config.grid, config.grid
                )));
            }
            Some(meta.details.true_params)
        }
    };
    generate_family(
        &mut SeededRng::new(config.data.seed, STREAM_FAMILY),
        config.family.size,
        &config.model,
        spec,
        config.family.mode,
        truth.as_ref(),
    )
}

pub fn cmd_fit(
    config: &RunConfig,
    dir: &Path,
    family_file: Option<&Path>,
    non_private: bool,
    unsafe_diagnostics: bool,
    threads: Option<usize>,
) -> Result<()> {
    let spec = config.grid.spec()?;
    let family = match family_file {
        Some(path) => CandidateFamily::load_labels(path)?,
        None => family_for(config, dir, &spec)?,
    };
    if *family.spec() != spec {
        return Err(Error::GridMismatch(format!(
            "family grid {:?} differs from configured grid {:?}",
            family.spec(),
            spec
        )));
    }
    let data = load_dataset(dir, &spec)?;
    let fit_config = FitConfig {
        budget: config.privacy.budget()?,
        clip: config.privacy.clip()?,
        seed: derive_seed(config.data.seed, STREAM_FIT),
        threads,
    };
    let result = if non_private {
        fit_nonprivate(&data, &family, &fit_config)?
    } else {
        fit_private(&data, &family, &fit_config)?
    };
    let released = if unsafe_diagnostics { result } else { result.redacted() };
    let out = &config.output.dir;
    let map_path = out.join("map.csv");
    write_map_csv(&released.chosen_map, BufWriter::new(File::create(&map_path)?))?;
    write_sidecar(&map_path, "fit", config, json!({ "chosen_index": released.chosen_index }))?;
    family.save_labels(&out.join("family.json"))?;
    let record = FitRecord {
        config: config.clone(),
        chosen_index: released.chosen_index,
        chosen_label: released.chosen_label,
        noise_scale: released.noise_scale,
        certificate: released.certificate,
        map_csv: "map.csv".into(),
        diagnostics: released.diagnostics,
    };
    let fit_path = out.join("fit.json");
    std::fs::write(&fit_path, serde_json::to_string_pretty(&record)? + "\n")?;
    println!("wrote {}", fit_path.display());
    println!("wrote {}", map_path.display());
    Ok(())
}

fn write_ndjson(path: &Path, records: &[serde_json::Value]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn config_record(config: &RunConfig, command: &str) -> serde_json::Value {
    json!({ "record": "config", "command": command, "config": config })
}

fn tagged<T: Serialize>(kind: &str, value: &T) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("record".into(), kind.into());
    }
    Ok(v)
}

pub fn sweep_setup(config: &RunConfig) -> Result<SweepSetup> {
    Ok(SweepSetup {
        model: config.model,
        domain: config.grid.domain()?,
        grid: config.grid.spec()?,
        family_size: config.family.size,
        family_mode: config.family.mode,
        clip: config.privacy.clip()?,
        n_mc: config.sweep.n_mc,
    })
}

pub fn cmd_sweep(config: &RunConfig) -> Result<()> {
    let s = &config.sweep;
    let seeds: Vec<u64> = (0..s.replicates).map(|k| config.data.seed + k).collect();
    let rows = run_sweep(&sweep_setup(config)?, &s.n_values, &s.epsilons, &seeds)?;
    let mut records = vec![config_record(config, "sweep")];
    for row in &rows {
        records.push(tagged("row", row)?);
    }
    for &n in &s.n_values {
        for &eps in &s.epsilons {
            let cell: Vec<_> = rows.iter().filter(|r| r.n == n && r.epsilon == eps).collect();
            let med = |f: fn(&crate::metrics::SweepRow) -> f64| median(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            records.push(json!({
                "record": "summary",
                "n": n,
                "epsilon": eps,
                "seeds": cell.len(),
                "median_error_private": med(|r| r.error_private),
                "median_error_nonprivate": med(|r| r.error_nonprivate),
                "median_error_identity": med(|r| r.error_identity),
            }));
        }
    }
    write_ndjson(&config.output.dir.join("sweep.ndjson"), &records)
}

/// A single-record replacement: `side` is `"x"` or `"y"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub side: char,
    pub record: usize,
    pub grid_point: usize,
}

/// Toy instance for the privacy check: `n` uniform points on the verify
/// grid and a family whose first two members are `+-2C` on the two halves
/// of the first axis (so moving one point across flips both scores by the
/// full sensitivity), followed by members with uniform values in `[-2C, 2C]`.
pub fn dp_toy_instance(
    verify: &VerifyConfig,
    grid: &GridConfig,
    clip: f64,
    seed: u64,
) -> Result<(Dataset, CandidateFamily)> {
    let spec = GridSpec::uniform(grid.lo, grid.hi, verify.m, grid.d)?;
    let domain = spec.domain().clone();
    let mut rng = SeededRng::new(seed, STREAM_DATA);
    let x: Vec<Vec<f64>> = (0..verify.n).map(|_| domain.sample_uniform(&mut rng)).collect();
    let y: Vec<Vec<f64>> = (0..verify.n).map(|_| domain.sample_uniform(&mut rng)).collect();
    let data = Dataset::new(&spec, &x, &y)?;
    let a = 2.0 * clip;
    let mid = 0.5 * (grid.lo + grid.hi);
    let split = GridPotential::from_fn(&spec, |p| if p[0] < mid { a } else { -a })?;
    let flipped = GridPotential::from_fn(&spec, |p| if p[0] < mid { -a } else { a })?;
    let mut members = vec![split, flipped];
    let mut labels = vec![
        CandidateLabel::Named { name: "split".into() },
        CandidateLabel::Named { name: "split-flipped".into() },
    ];
    let mut frng = SeededRng::new(seed, STREAM_FAMILY);
    for k in 2..verify.candidates {
        let values = (0..spec.len()).map(|_| frng.gen_range(-a..=a)).collect();
        members.push(GridPotential::new(spec.clone(), values)?);
        labels.push(CandidateLabel::Named {
            name: format!("random-{k}"),
        });
    }
    Ok((data, CandidateFamily::new(members, labels)?))
}

/// Every single-record replacement by a grid point, in `(side, record, point)` order.
pub fn all_replacements(data: &Dataset) -> Vec<Replacement> {
    let g = data.spec().len();
    ['x', 'y']
        .into_iter()
        .flat_map(|side| (0..data.len()).flat_map(move |record| (0..g).map(move |grid_point| Replacement { side, record, grid_point })))
        .collect()
}

pub fn apply_replacement(data: &Dataset, r: Replacement) -> Result<Dataset> {
    let p = data.spec().point(r.grid_point);
    match r.side {
        'x' => data.replace_x(r.record, &p),
        _ => data.replace_y(r.record, &p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyDpOutcome {
    pub pairs: usize,
    pub failed_pairs: usize,
    pub max_ratio: f64,
    pub pass: bool,
    pub reports: Vec<(Replacement, DpRatioReport)>,
}

/// Runs the privacy ratio test on `verify.pairs` neighbors sampled from the
/// exhaustive replacement list, with sensitivity `noise_factor * 2C/n`.
pub fn run_verify_dp(verify: &VerifyConfig, grid: &GridConfig, clip: f64, seed: u64) -> Result<VerifyDpOutcome> {
    let (data, family) = dp_toy_instance(verify, grid, clip, seed)?;
    let clip_cfg = crate::semidual::ClipConfig::new(clip)?;
    let delta = verify.noise_factor * sensitivity_clipped(data.len(), clip_cfg)?;
    let all = all_replacements(&data);
    let mut rng = SeededRng::new(seed, STREAM_FIT);
    let picked = sample(&mut rng, all.len(), verify.pairs.min(all.len())).into_vec();
    let scores = |ds: &Dataset| -> Result<Vec<f64>> {
        Ok(score_family(ds, &family, clip_cfg)?.into_iter().map(|s| s.value).collect())
    };
    let mut reports = Vec::with_capacity(picked.len());
    for k in picked {
        let r = all[k];
        let neighbor = apply_replacement(&data, r)?;
        let report = verify_dp_ratio(scores, &data, &neighbor, delta, verify.epsilon, verify.trials, &mut rng)?;
        reports.push((r, report));
    }
    let failed_pairs = reports.iter().filter(|(_, rep)| !rep.pass).count();
    Ok(VerifyDpOutcome {
        pairs: reports.len(),
        failed_pairs,
        max_ratio: reports.iter().map(|(_, r)| r.max_ratio()).fold(0.0, f64::max),
        pass: failed_pairs == 0,
        reports,
    })
}

pub fn cmd_verify_dp(config: &RunConfig) -> Result<VerifyDpOutcome> {
    let outcome = run_verify_dp(&config.verify, &config.grid, config.privacy.clip, config.data.seed)?;
    let mut records = vec![config_record(config, "verify-dp")];
    for (pair, (r, report)) in outcome.reports.iter().enumerate() {
        for row in &report.rows {
            let mut v = tagged("index", row)?;
            v["pair"] = pair.into();
            v["side"] = r.side.to_string().into();
            v["replaced_record"] = r.record.into();
            v["grid_point"] = r.grid_point.into();
            records.push(v);
        }
    }
    records.push(json!({
        "record": "summary",
        "pairs": outcome.pairs,
        "failed_pairs": outcome.failed_pairs,
        "max_ratio": outcome.max_ratio,
        "bound": config.verify.epsilon.exp(),
        "pass": outcome.pass,
    }));
    write_ndjson(&config.output.dir.join("verify_dp.ndjson"), &records)?;
    Ok(outcome)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSummary {
    pub amplitude: f64,
    pub distance_slope: f64,
    pub expected_distance_slope: f64,
    /// Largest `|d(a,c) - d(a,b) - d(b,c)| / d(a,c)` over the bandwidths.
    pub additivity_rel_err: f64,
    /// `max/min - 1` of `tv / h^{alpha - 1 + d}`; `None` when `d > 1`.
    pub tv_ratio_variation: Option<f64>,
    pub pass: bool,
}

/// Distance rows for one differing bit, Ham-additivity with two bits, and
/// (in one dimension) TV rows; returns the row records and the summary.
pub fn run_verify_packing(p: &PackingConfig) -> Result<(Vec<serde_json::Value>, PackingSummary)> {
    let a = if p.amplitude > 0.0 { p.amplitude } else { default_amplitude(p.d) };
    let centers = p.m.pow(p.d as u32);
    let bits = |on: &[usize]| -> Vec<bool> { (0..centers).map(|i| on.contains(&i)).collect() };
    let base = |h: f64| PackingSpec::new(p.m, h, a, p.alpha, p.d, bits(&[]));
    let mut rows = Vec::new();
    let mut dists = Vec::new();
    let mut additivity: f64 = 0.0;
    for &h in &p.bandwidths {
        let s0 = base(h)?;
        let s1 = s0.with_theta(bits(&[0]))?;
        let s2 = s0.with_theta(bits(&[1]))?;
        let s12 = s0.with_theta(bits(&[0, 1]))?;
        let d1 = packing_pairwise_distance(&s1, &s0, p.cells_per_h)?;
        let d2 = packing_pairwise_distance(&s2, &s0, p.cells_per_h)?;
        let d12 = packing_pairwise_distance(&s12, &s0, p.cells_per_h)?;
        additivity = additivity.max((d12 - d1 - d2).abs() / d12);
        dists.push(d1);
        rows.push(json!({ "record": "distance", "h": h, "ham": 1, "distance": d1 }));
        rows.push(json!({ "record": "distance", "h": h, "ham": 2, "distance": d12 }));
    }
    let expected = 2.0 * p.alpha + p.d as f64;
    let distance_slope = log_log_slope(&p.bandwidths, &dists);
    let tv_ratio_variation = if p.d == 1 && !p.tv_bandwidths.is_empty() {
        let mut ratios = Vec::new();
        for &h in &p.tv_bandwidths {
            let s0 = base(h)?;
            let tv = packing_tv_distance_1d(&s0.with_theta(bits(&[0]))?, &s0, p.cells_per_h)?;
            let ratio = tv / h.powf(p.alpha - 1.0 + p.d as f64);
            ratios.push(ratio);
            rows.push(json!({ "record": "tv", "h": h, "ham": 1, "tv": tv, "ratio": ratio }));
        }
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max / min - 1.0)
    } else {
        None
    };
    let pass = (distance_slope - expected).abs() <= p.slope_tolerance
        && additivity <= 1e-12
        && tv_ratio_variation.is_none_or(|v| v <= p.tv_variation);
    Ok((
        rows,
        PackingSummary {
            amplitude: a,
            distance_slope,
            expected_distance_slope: expected,
            additivity_rel_err: additivity,
            tv_ratio_variation,
            pass,
        },
    ))
}

pub fn cmd_verify_packing(config: &RunConfig) -> Result<PackingSummary> {
    let (rows, summary) = run_verify_packing(&config.packing)?;
    let mut records = vec![config_record(config, "verify-packing")];
    records.extend(rows);
    records.push(tagged("summary", &summary)?);
    write_ndjson(&config.output.dir.join("verify_packing.ndjson"), &records)?;
    Ok(summary)
}

pub fn cmd_covering_stats(config: &RunConfig) -> Result<()> {
    let c = &config.covering;
    let params = c.params()?;
    let domain = BoxDomain::cube(0.0, 1.0, c.d)?;
    let grid = GridSpec::from_domain(domain.clone(), c.screen_m)?;
    let mut records = vec![config_record(config, "covering-stats")];
    for &j in &c.resolutions {
        let card = covering_log_cardinality(c.generator, j, c.delta, &params)?;
        let mut row = tagged("resolution", &card)?;
        let count = (card.per_coordinate as f64).powi(card.dimension as i32);
        row["count"] = count.into();
        if count <= c.cap as f64 {
            let basis = WaveletBasisSpec::new(c.generator, j, domain.clone())?;
            let cover = delta_grid_covering(basis.len(), c.delta, 2.0 * params.m * params.m, c.cap)?;
            let report = screen_covering(&cover, &basis, &grid, &params)?;
            row["acceptance_rate"] = report.acceptance_rate().into();
            row["screening"] = serde_json::to_value(&report)?;
        } else {
            row["acceptance_rate"] = serde_json::Value::Null;
        }
        records.push(row);
    }
    let budget = config.privacy.budget()?;
    let selected = select_resolution(config.data.n, budget, &params)?;
    records.push(json!({
        "record": "selected-resolution",
        "n": config.data.n,
        "epsilon": config.privacy.epsilon,
        "resolution": selected,
    }));
    write_ndjson(&config.output.dir.join("covering_stats.ndjson"), &records)
}

pub fn cmd_kde(config: &RunConfig, data: &Path, bandwidth: Option<f64>) -> Result<()> {
    let spec = config.grid.spec()?;
    let (points, d) = read_points_file(data)?;
    if d != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: d,
        });
    }
    let h = match bandwidth {
        Some(h) => h,
        None => scott_bandwidth(&points, d)?,
    };
    let density = kde_grid(&points, h, &spec)?;
    let path = config.output.dir.join("kde.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    w.write_record((1..=d).map(|a| format!("x{a}")).chain(["density".to_string()]))?;
    for (i, v) in density.values().iter().enumerate() {
        w.write_record(spec.point(i).iter().chain([v]).map(|c| c.to_string()))?;
    }
    w.flush()?;
    write_sidecar(&path, "kde", config, json!({ "input": data, "bandwidth": h, "points": points.len() / d }))?;
    println!("wrote {}", path.display());
    Ok(())
}
