//! Command-line front end: config loading, figure presets, CSV and manifest
//! emission. Exit codes are 0 on success, 1 when a validation fails and 2 for
//! usage or configuration errors.

use crate::keyrate::{scan_distance, write_csv, KeyRateError, KeyRateResult, Mode};
use crate::mermin::{mermin_scan, write_mermin_csv, MerminError};
use crate::model::{ModelError, ProtocolConfig};
use crate::pairing::{
    monte_carlo_pair_count, pair_stream, read_clicks, simulate_clicks, write_clicks, MonteCarloSetup, PairingError,
};
use crate::sift::CountModel;
use crate::validation;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    KeyRate(#[from] KeyRateError),
    #[error(transparent)]
    Mermin(#[from] MerminError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            _ => 2,
        }
    }
}

/// Inclusive distance grid `A:B:STEP`, or a single distance `A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl DistanceRange {
    pub const fn new(start: f64, end: f64, step: f64) -> Self {
        Self { start, end, step }
    }

    pub fn points(&self) -> Vec<f64> {
        if self.step == 0.0 {
            vec![self.start]
        } else {
            crate::keyrate::distance_grid(self.start, self.end, self.step)
        }
    }
}

pub fn parse_range(s: &str) -> Result<DistanceRange, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
        .collect::<Result<_, _>>()?;
    let r = match parts.as_slice() {
        [a] => DistanceRange::new(*a, *a, 0.0),
        [a, b, step] => DistanceRange::new(*a, *b, *step),
        _ => return Err("expected A:B:STEP or a single distance".into()),
    };
    if r.start < 0.0 || r.end < r.start || r.step < 0.0 || (r.step == 0.0 && r.end != r.start) {
        return Err(format!("invalid distance range '{s}'"));
    }
    if !r.start.is_finite() || !r.end.is_finite() || !r.step.is_finite() {
        return Err(format!("invalid distance range '{s}'"));
    }
    Ok(r)
}

/// Non-negative integer, also accepting float notation such as `1e8`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a count"))?;
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(format!("'{s}' is not a non-negative integer"));
    }
    Ok(v as u64)
}

fn parse_pulses(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("pulses must be positive".into())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "amdi-qcka",
    version,
    about = "Key rates, pairing simulation and Mermin bounds for asynchronous MDI conference key agreement"
)]
pub struct Cli {
    /// Worker threads; defaults to every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Key rate against distance.
    Scan(ScanArgs),
    /// Monte Carlo check of the analytic pairing count.
    Montecarlo(MonteCarloArgs),
    /// Lower bound on the Mermin value against distance.
    Mermin(MerminArgs),
    /// Run the built-in invariant and oracle checks.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML protocol config; built-in defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Distance grid A:B:STEP in km, or a single distance.
    #[arg(long, value_parser = parse_range)]
    pub distance_km: Option<DistanceRange>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long, overrides_with = "no_phase_locked")]
    pub phase_locked: bool,
    #[arg(long, overrides_with = "phase_locked")]
    pub no_phase_locked: bool,
    /// Discard time bins with mismatched neighbouring intensities.
    #[arg(long, overrides_with = "no_filtering")]
    pub filtering: bool,
    #[arg(long, overrides_with = "filtering")]
    pub no_filtering: bool,
    /// Total pulses sent by each user.
    #[arg(long, value_parser = parse_pulses)]
    pub pulses: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV; presets with several series write <stem>_<series>.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ScanArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// asymptotic, decoy or finite.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Optimize source parameters at every distance (on by default for presets).
    #[arg(long, overrides_with = "no_optimize")]
    pub optimize: bool,
    #[arg(long, overrides_with = "optimize")]
    pub no_optimize: bool,
    #[arg(long, value_enum)]
    pub fig: Option<Figure>,
    /// Drop rows whose rate falls below this value.
    #[arg(long)]
    pub rate_cutoff: Option<f64>,
    /// Also write a gnuplot script plotting the output.
    #[arg(long)]
    pub gnuplot: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct MerminArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value = "finite")]
    pub mode: Mode,
    /// Keep the configured source parameters instead of maximizing the bound.
    #[arg(long)]
    pub no_optimize: bool,
    #[arg(long, value_enum)]
    pub fig: Option<Figure>,
    #[arg(long)]
    pub gnuplot: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Simulated time bins per parameter set.
    #[arg(long, value_parser = parse_count, default_value = "1e8")]
    pub bins: u64,
    /// Largest tolerated relative deviation from the analytic count.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Built-in parameter set instead of the config-derived one.
    #[arg(long, value_parser = ["saturated", "sparse"])]
    pub set: Option<String>,
    /// Per-port click probability, overriding the config.
    #[arg(long)]
    pub q: Option<f64>,
    /// Pairing window in bins, overriding the config.
    #[arg(long, value_parser = parse_count)]
    pub tc_bins: Option<u64>,
    #[arg(long, value_parser = parse_count)]
    pub shard_bins: Option<u64>,
    /// Write the simulated click stream of the first parameter set.
    #[arg(long)]
    pub clicks_out: Option<PathBuf>,
    /// Pair a recorded click stream instead of simulating.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ValidateArgs {
    /// Smaller grids and sample counts.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    #[value(name = "3a")]
    F3a,
    #[value(name = "3b")]
    F3b,
    #[value(name = "4")]
    F4,
    #[value(name = "6")]
    F6,
    #[value(name = "7")]
    F7,
}

impl Figure {
    pub fn id(self) -> &'static str {
        match self {
            Figure::F3a => "3a",
            Figure::F3b => "3b",
            Figure::F4 => "4",
            Figure::F6 => "6",
            Figure::F7 => "7",
        }
    }
}

/// Settings a series pins or the command line forces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub users: Option<usize>,
    pub phase_locked: Option<bool>,
    pub filtering: Option<bool>,
    pub pulses: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ProtocolConfig) {
        if let Some(n) = self.users {
            c.n_users = n;
        }
        if let Some(p) = self.phase_locked {
            c.timing.phase_locked = p;
        }
        if let Some(f) = self.filtering {
            c.click_filtering = f;
        }
        if let Some(p) = self.pulses {
            c.security.total_pulses = p;
        }
    }

    fn conflicts(&self, other: &Overrides) -> bool {
        fn differ<T: PartialEq>(a: &Option<T>, b: &Option<T>) -> bool {
            matches!((a, b), (Some(x), Some(y)) if x != y)
        }
        differ(&self.users, &other.users)
            || differ(&self.phase_locked, &other.phase_locked)
            || differ(&self.filtering, &other.filtering)
            || differ(&self.pulses, &other.pulses)
    }
}

impl ConfigArgs {
    pub fn overrides(&self) -> Overrides {
        let flag = |on: bool, off: bool| if on { Some(true) } else if off { Some(false) } else { None };
        Overrides {
            users: self.users,
            phase_locked: flag(self.phase_locked, self.no_phase_locked),
            filtering: flag(self.filtering, self.no_filtering),
            pulses: self.pulses,
        }
    }

    pub fn load(&self) -> Result<ProtocolConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
                ProtocolConfig::from_toml_str(&text)?
            }
            None => ProtocolConfig::default(),
        };
        self.overrides().apply(&mut c);
        c.validate()?;
        Ok(c)
    }
}

/// Parameter bundle reproducing one figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub figure: Figure,
    pub mode: Mode,
    pub grid: DistanceRange,
    pub series: Vec<(&'static str, Overrides)>,
    pub rate_cutoff: Option<f64>,
}

pub fn preset(figure: Figure) -> Preset {
    let o = |users, phase_locked, filtering, pulses| Overrides { users, phase_locked, filtering, pulses };
    match figure {
        Figure::F3a | Figure::F3b => Preset {
            figure,
            mode: Mode::Asymptotic,
            grid: DistanceRange::new(0.0, 450.0, 10.0),
            series: vec![("n3", o(Some(3), Some(true), None, None)), ("n4", o(Some(4), Some(true), None, None))],
            rate_cutoff: None,
        },
        Figure::F4 => Preset {
            figure,
            mode: Mode::Decoy,
            grid: DistanceRange::new(0.0, 450.0, 10.0),
            series: vec![
                ("locked", o(Some(3), Some(true), None, None)),
                ("unlocked", o(Some(3), Some(false), None, None)),
            ],
            rate_cutoff: Some(1e-10),
        },
        Figure::F6 => Preset {
            figure,
            mode: Mode::Finite,
            grid: DistanceRange::new(0.0, 350.0, 10.0),
            series: [1e14, 1e16]
                .iter()
                .flat_map(|&p| {
                    let tag = if p == 1e14 { "1e14" } else { "1e16" };
                    [(false, ""), (true, "_filtered")].map(|(f, suffix)| {
                        let name: &'static str = match (tag, suffix) {
                            ("1e14", "") => "n1e14",
                            ("1e14", _) => "n1e14_filtered",
                            ("1e16", "") => "n1e16",
                            _ => "n1e16_filtered",
                        };
                        (name, o(Some(3), Some(false), Some(f), Some(p)))
                    })
                })
                .collect(),
            rate_cutoff: None,
        },
        Figure::F7 => Preset {
            figure,
            mode: Mode::Finite,
            grid: DistanceRange::new(0.0, 300.0, 10.0),
            series: vec![("mermin", o(Some(3), None, None, Some(1e16)))],
            rate_cutoff: None,
        },
    }
}

/// One output curve with its fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub config: ProtocolConfig,
}

/// Combines the preset series with explicit flags. Series pinning a value that
/// contradicts an explicit flag are dropped.
pub fn resolve_series(base: &ProtocolConfig, explicit: &Overrides, preset: Option<&Preset>) -> Result<Vec<Series>, CliError> {
    let Some(p) = preset else {
        return Ok(vec![Series { name: "scan".into(), config: base.clone() }]);
    };
    let out: Vec<Series> = p
        .series
        .iter()
        .filter(|(_, fixed)| !fixed.conflicts(explicit))
        .map(|(name, fixed)| {
            let mut c = base.clone();
            fixed.apply(&mut c);
            Series { name: (*name).to_string(), config: c }
        })
        .collect();
    if out.is_empty() {
        return Err(CliError::Usage(format!("no series of figure {} matches the given flags", p.figure.id())));
    }
    Ok(out)
}

/// Destination for each series; `None` means stdout.
pub fn output_paths(out: Option<&Path>, figure: Option<Figure>, names: &[String]) -> Vec<Option<PathBuf>> {
    if names.len() == 1 {
        return vec![out.map(Path::to_path_buf)];
    }
    let (dir, stem) = match out {
        Some(p) => (
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into()),
        ),
        None => (PathBuf::new(), format!("fig{}", figure.map(Figure::id).unwrap_or("scan"))),
    };
    names.iter().map(|n| Some(dir.join(format!("{stem}_{n}.csv")))).collect()
}

/// Inputs that fully determine one output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub series: String,
    pub mode: String,
    pub seed: u64,
    pub optimize: bool,
    pub distances_km: Vec<f64>,
    pub version: String,
    /// SHA-256 of this manifest with the hash and timestamp blanked.
    pub input_hash: String,
    pub created_unix_s: u64,
    pub config: ProtocolConfig,
}

impl RunManifest {
    pub fn new(command: &str, series: &Series, mode: Mode, seed: u64, optimize: bool, distances: &[f64]) -> Self {
        let mut m = RunManifest {
            command: command.into(),
            series: series.name.clone(),
            mode: mode.to_string(),
            seed,
            optimize,
            distances_km: distances.to_vec(),
            version: env!("CARGO_PKG_VERSION").into(),
            input_hash: String::new(),
            created_unix_s: 0,
            config: series.config.clone(),
        };
        let digest = Sha256::digest(m.to_toml().as_bytes());
        m.input_hash = digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        m.created_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        m
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.toml")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, bytes).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn emit(path: Option<&Path>, bytes: &[u8], manifest: Option<&RunManifest>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            write_file(p, bytes)?;
            if let Some(m) = manifest {
                write_file(&manifest_path(p), m.to_toml().as_bytes())?;
            }
            Ok(())
        }
        None => std::io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|source| CliError::Write { path: "<stdout>".into(), source }),
    }
}

fn gnuplot_script(files: &[(String, PathBuf)], mermin: bool) -> String {
    let mut s = String::from("set datafile separator ','\nset key top right\nset xlabel 'distance (km)'\n");
    if mermin {
        s.push_str("set ylabel 'Mermin lower bound'\nplot ");
        let mut parts: Vec<String> = files
            .iter()
            .map(|(n, p)| format!("'{}' using 1:2 skip 1 with lines title '{n}'", p.display()))
            .collect();
        parts.push("2 with lines dashtype 2 title 'classical'".into());
        s.push_str(&parts.join(", \\\n     "));
    } else {
        s.push_str("set ylabel 'key rate per pulse'\nset logscale y\nset format y '10^{%T}'\nplot ");
        let mut parts: Vec<String> = files
            .iter()
            .map(|(n, p)| format!("'{}' using 1:3 skip 1 with lines title '{n}'", p.display()))
            .collect();
        if let Some((_, p)) = files.first() {
            parts.push(format!("'{}' using 1:5 skip 1 with lines dashtype 2 title 'PLOB'", p.display()));
        }
        s.push_str(&parts.join(", \\\n     "));
    }
    s.push('\n');
    s
}

struct Plan {
    series: Vec<Series>,
    paths: Vec<Option<PathBuf>>,
    distances: Vec<f64>,
}

fn plan(cfg: &ConfigArgs, figure: Option<Figure>, default_grid: DistanceRange) -> Result<Plan, CliError> {
    let base = cfg.load()?;
    let p = figure.map(preset);
    let series = resolve_series(&base, &cfg.overrides(), p.as_ref())?;
    let grid = cfg.distance_km.or(p.as_ref().map(|p| p.grid)).unwrap_or(default_grid);
    let names: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    Ok(Plan { paths: output_paths(cfg.out.as_deref(), figure, &names), series, distances: grid.points() })
}

fn write_gnuplot(path: &Path, plan: &Plan, mermin: bool) -> Result<(), CliError> {
    let files: Vec<(String, PathBuf)> = plan
        .series
        .iter()
        .zip(&plan.paths)
        .filter_map(|(s, p)| p.clone().map(|p| (s.name.clone(), p)))
        .collect();
    if files.is_empty() {
        return Err(CliError::Usage("--gnuplot needs --out".into()));
    }
    write_file(path, gnuplot_script(&files, mermin).as_bytes())
}

pub fn cmd_scan(args: &ScanArgs) -> Result<(), CliError> {
    if args.fig == Some(Figure::F7) {
        return Err(CliError::Usage("figure 7 is a Mermin preset; use the mermin subcommand".into()));
    }
    let plan = plan(&args.cfg, args.fig, DistanceRange::new(0.0, 400.0, 10.0))?;
    let p = args.fig.map(preset);
    let mode = args.mode.or(p.as_ref().map(|p| p.mode)).unwrap_or(Mode::Asymptotic);
    let optimize = if p.is_some() { !args.no_optimize } else { args.optimize };
    let cutoff = args.rate_cutoff.or(p.as_ref().and_then(|p| p.rate_cutoff));
    for (s, path) in plan.series.iter().zip(&plan.paths) {
        let mut rows: Vec<KeyRateResult> = scan_distance(&s.config, &plan.distances, mode, optimize, args.cfg.seed)?;
        if let Some(c) = cutoff {
            rows.retain(|r| r.rate_per_pulse >= c);
        }
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows)?;
        let manifest = RunManifest::new("scan", s, mode, args.cfg.seed, optimize, &plan.distances);
        emit(path.as_deref(), &buf, Some(&manifest))?;
    }
    if let Some(g) = &args.gnuplot {
        write_gnuplot(g, &plan, false)?;
    }
    Ok(())
}

pub fn cmd_mermin(args: &MerminArgs) -> Result<(), CliError> {
    if matches!(args.fig, Some(f) if f != Figure::F7) {
        return Err(CliError::Usage("only figure 7 is a Mermin preset".into()));
    }
    let plan = plan(&args.cfg, args.fig, DistanceRange::new(0.0, 300.0, 10.0))?;
    let optimize = !args.no_optimize;
    for (s, path) in plan.series.iter().zip(&plan.paths) {
        let rows = mermin_scan(&s.config, &plan.distances, args.mode, optimize, args.cfg.seed)?;
        let mut buf = Vec::new();
        write_mermin_csv(&mut buf, &rows)?;
        let manifest = RunManifest::new("mermin", s, args.mode, args.cfg.seed, optimize, &plan.distances);
        emit(path.as_deref(), &buf, Some(&manifest))?;
    }
    if let Some(g) = &args.gnuplot {
        write_gnuplot(g, &plan, true)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct McRow {
    label: String,
    q_port: f64,
    t_c_bins: u64,
    bins: u64,
    pairs_mc: u64,
    pairs_analytic: f64,
    rel_dev: f64,
    sigma: f64,
    within_3sigma: bool,
    mean_span: f64,
    passed: bool,
}

#[derive(Serialize)]
struct ReplayRow {
    clicks: usize,
    t_c_bins: u64,
    events: usize,
    leftover: usize,
    mean_span: f64,
}

pub fn cmd_montecarlo(args: &MonteCarloArgs) -> Result<(), CliError> {
    if args.bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    if !(args.threshold > 0.0) {
        return Err(CliError::Usage("--threshold must be positive".into()));
    }
    let config = args.cfg.load()?;
    let out = args.cfg.out.as_deref();
    let locked_window = |c: &ProtocolConfig| c.timing.n_tc().map(|n| n.round().max(1.0) as u64).unwrap_or(args.bins);

    if let Some(path) = &args.replay {
        let file = std::fs::File::open(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
        let clicks = read_clicks(std::io::BufReader::new(file), config.n_users)?;
        let t_c = args.tc_bins.unwrap_or_else(|| locked_window(&config));
        let outcome = pair_stream(&clicks, config.n_users, t_c);
        let spans: u64 = outcome.events.iter().map(|e| e.span()).sum();
        let row = ReplayRow {
            clicks: clicks.len(),
            t_c_bins: t_c,
            events: outcome.events.len(),
            leftover: outcome.leftover,
            mean_span: if outcome.events.is_empty() { 0.0 } else { spans as f64 / outcome.events.len() as f64 },
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row).map_err(KeyRateError::from)?;
        let buf = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
        return emit(out, &buf, None);
    }

    let mut sets: Vec<(String, f64, u64)> = Vec::new();
    if let Some(name) = &args.set {
        let &(n, q, t) = validation::PAIRING_SETS.iter().find(|(n, _, _)| n == name).expect("clap restricts names");
        sets.push((n.into(), args.q.unwrap_or(q), args.tc_bins.unwrap_or(t)));
    } else if let Some(q) = args.q {
        sets.push(("custom".into(), q, args.tc_bins.unwrap_or_else(|| locked_window(&config))));
    } else {
        let grid = args.cfg.distance_km.unwrap_or(DistanceRange::new(config.channel.distance_km, config.channel.distance_km, 0.0));
        for d in grid.points() {
            let mut c = config.clone();
            c.channel.distance_km = d;
            let m = CountModel::new(&c, c.eta()?);
            sets.push((format!("{d}km"), m.ports.q_port * m.p_s, args.tc_bins.unwrap_or_else(|| locked_window(&c))));
        }
    }
    if !sets.iter().all(|(_, q, _)| (0.0..=1.0).contains(q)) {
        return Err(CliError::Usage("click probability must lie in [0,1]".into()));
    }

    let shard_bins = args.shard_bins.unwrap_or((args.bins / 100).max(1));
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (i, (label, q, t_c)) in sets.iter().enumerate() {
        let setup = MonteCarloSetup { q_ports: vec![*q; config.n_users], bins: args.bins, t_c_bins: *t_c, seed: args.cfg.seed, shard_bins };
        if i == 0 {
            if let Some(path) = &args.clicks_out {
                let mut buf = Vec::new();
                write_clicks(&mut buf, &simulate_clicks(&setup))?;
                write_file(path, &buf)?;
            }
        }
        let r = monte_carlo_pair_count(&setup)?;
        let dev = r.relative_deviation();
        let passed = dev.abs() <= args.threshold;
        if !passed {
            failed.push(format!("{label}: {:+.2}%", 100.0 * dev));
        }
        rows.push(McRow {
            label: label.clone(),
            q_port: *q,
            t_c_bins: *t_c,
            bins: args.bins,
            pairs_mc: r.pairs,
            pairs_analytic: r.analytic,
            rel_dev: dev,
            sigma: r.sigma,
            within_3sigma: (r.pairs as f64 - r.analytic).abs() <= 3.0 * r.sigma,
            mean_span: r.mean_span,
            passed,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(KeyRateError::from)?;
    }
    let buf = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    let series = Series { name: "montecarlo".into(), config: config.clone() };
    let distances: Vec<f64> = args.cfg.distance_km.map(|g| g.points()).unwrap_or_default();
    let manifest = RunManifest::new("montecarlo", &series, Mode::Asymptotic, args.cfg.seed, false, &distances);
    emit(out, &buf, Some(&manifest))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "deviation above {:.1}% for {}",
            100.0 * args.threshold,
            failed.join(", ")
        )))
    }
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<(), CliError> {
    let checks = validation::run_all(args.quick, args.seed);
    let mut out = std::io::stdout().lock();
    for c in &checks {
        let _ = writeln!(out, "{c}");
    }
    let bad: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("failed: {}", bad.join(", "))))
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Scan(a) => cmd_scan(a),
        Command::Montecarlo(a) => cmd_montecarlo(a),
        Command::Mermin(a) => cmd_mermin(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be positive".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(CliError::Usage(e.to_string())),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
