//! Command-line front end: configuration parsing, scenario dispatch and
//! artifact emission.
//!
//! Configuration comes from an optional flat `key = value` file (`#` starts
//! a comment) overlaid with command-line flags. Every run writes
//! `config.json` with the fully resolved configuration next to its results;
//! failures write `error.json` and exit with 2 (configuration) or 3
//! (numerical).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ess::{
    self, classify, compute_constants, fitness, Classification, DiscreteEss, KernelConstants, Regime,
    TrimorphicBranch,
};
use crate::kernels::{default_sample_grid, make_kernel, validate_h1, H1Report, ModelParams, TransferKernel};
use crate::pde::{self, Grid1D, SimConfig, SimReport};
use crate::spectral::{self, EigenResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ess,
    Simulate,
    Eigen,
    Sweep,
    VerifyKernel,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Ess => "ess",
            Mode::Simulate => "simulate",
            Mode::Eigen => "eigen",
            Mode::Sweep => "sweep",
            Mode::VerifyKernel => "verify-kernel",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "ess" => Ok(Mode::Ess),
            "simulate" => Ok(Mode::Simulate),
            "eigen" => Ok(Mode::Eigen),
            "sweep" => Ok(Mode::Sweep),
            "verify-kernel" => Ok(Mode::VerifyKernel),
            other => Err(Error::config(
                "mode",
                format!("unknown mode '{other}', expected one of ess, simulate, eigen, sweep, verify-kernel"),
            )),
        }
    }
}

/// Sampling interval `[z_min, z_max]` with spacing `dz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub dz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeSpec {
    pub dt: f64,
    pub t_max: f64,
    pub steady_tol: f64,
    pub z_init: f64,
    #[serde(rename = "A")]
    pub curvature: f64,
    /// Write every `mass_stride`-th entry of the mass history.
    pub mass_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    /// Ascending.
    pub mu: Vec<f64>,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub kernel: String,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "kernel",
    "out",
    "tau",
    "g",
    "epsilon",
    "z_min",
    "z_max",
    "dz",
    "dt",
    "t_max",
    "steady_tol",
    "z_init",
    "A",
    "mass_stride",
    "mu_min",
    "mu_max",
    "mu_step",
    "mu_list",
];

/// Rows kept in the mass CSV when no stride is given.
const MASS_ROWS_TARGET: usize = 20_000;

/// Parse `key = value` lines. Later duplicates override earlier ones.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(
                "config",
                format!("line {}: expected 'key = value', got '{line}'", lineno + 1),
            ));
        };
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::config(
                key,
                format!("line {}: unknown key; accepted keys: {}", lineno + 1, KNOWN_KEYS.join(", ")),
            ));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text)
}

struct Values<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Values<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::config(key, format!("expected a number, got '{s}'")))?;
                if !v.is_finite() {
                    return Err(Error::config(key, format!("must be finite, got '{s}'")));
                }
                Ok(Some(v))
            }
        }
    }

    fn positive(&self, key: &str) -> Result<Option<f64>> {
        match self.f64(key)? {
            Some(v) if v <= 0.0 => Err(Error::config(key, format!("must be > 0, got {v}"))),
            other => Ok(other),
        }
    }

    fn required_positive(&self, key: &str, mode: Mode) -> Result<f64> {
        self.positive(key)?
            .ok_or_else(|| Error::config(key, format!("required for mode '{}' (must be > 0)", mode.as_str())))
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::config(key, format!("expected a non-negative integer, got '{s}'"))),
        }
    }
}

/// Resolve a configuration map into a validated [`RunConfig`].
///
/// `mode` wins over a `mode` key in the map.
pub fn resolve_config(mode: Option<Mode>, map: &BTreeMap<String, String>) -> Result<RunConfig> {
    let v = Values { map };
    let mode = match (mode, v.raw("mode")) {
        (Some(m), _) => m,
        (None, Some(s)) => Mode::parse(s)?,
        (None, None) => return Err(Error::config("mode", "required")),
    };
    let kernel = v.raw("kernel").unwrap_or("tanh-kernel").to_string();
    let kernel = make_kernel(&kernel)?.name().to_string();
    let out = PathBuf::from(v.raw("out").unwrap_or("out"));

    let tau = match v.f64("tau")? {
        Some(t) if t < 0.0 => return Err(Error::config("tau", format!("must be >= 0, got {t}"))),
        other => other,
    };
    let epsilon = v.positive("epsilon")?;

    let mut cfg = RunConfig {
        mode,
        kernel,
        out,
        tau: None,
        g: None,
        epsilon: None,
        grid: None,
        time: None,
        sweep: None,
    };

    match mode {
        Mode::VerifyKernel => {}
        Mode::Ess => {
            let tau = tau.ok_or_else(|| Error::config("tau", "required for mode 'ess' (must be >= 0)"))?;
            let g = v.required_positive("g", mode)?;
            let mu = tau / (2.0 * g);
            cfg.tau = Some(tau);
            cfg.g = Some(g);
            cfg.grid = Some(grid_spec(&v, -2.0, mu + 5.0, 1e-3)?);
        }
        Mode::Simulate => {
            let tau = tau.ok_or_else(|| Error::config("tau", "required for mode 'simulate' (must be >= 0)"))?;
            let g = v.required_positive("g", mode)?;
            let eps = epsilon.unwrap_or(5e-5);
            cfg.tau = Some(tau);
            cfg.g = Some(g);
            cfg.epsilon = Some(eps);
            let grid = grid_spec(&v, -2.0, 6.0, pde::DEFAULT_DZ)?;
            let time = TimeSpec {
                dt: v.positive("dt")?.unwrap_or(pde::DEFAULT_DT),
                t_max: v.positive("t_max")?.unwrap_or(1000.0),
                steady_tol: v.positive("steady_tol")?.unwrap_or(pde::DEFAULT_STEADY_TOL),
                z_init: v.f64("z_init")?.unwrap_or(0.0),
                curvature: v.positive("A")?.unwrap_or(1.0),
                mass_stride: v.usize("mass_stride")?.unwrap_or(0),
            };
            if !(time.z_init >= grid.z_min && time.z_init <= grid.z_max) {
                return Err(Error::config(
                    "z_init",
                    format!("must lie in [{}, {}], got {}", grid.z_min, grid.z_max, time.z_init),
                ));
            }
            Grid1D::new(grid.z_min, grid.z_max, grid.dz)?;
            cfg.grid = Some(grid);
            cfg.time = Some(time);
        }
        Mode::Eigen => {
            let g = v.required_positive("g", mode)?;
            let eps = v.required_positive("epsilon", mode)?;
            let half = 1.0 / g.sqrt() + 3.0;
            let grid = grid_spec(&v, -half, half, spectral::DEFAULT_SPACING)?;
            cfg.g = Some(g);
            cfg.epsilon = Some(eps);
            cfg.grid = Some(grid);
        }
        Mode::Sweep => {
            let tau = tau.unwrap_or(0.5);
            if tau <= 0.0 {
                return Err(Error::config("tau", "must be > 0 for a sweep"));
            }
            cfg.tau = Some(tau);
            cfg.sweep = Some(sweep_spec(&v)?);
        }
    }
    Ok(cfg)
}

fn grid_spec(v: &Values<'_>, z_min: f64, z_max: f64, dz: f64) -> Result<GridSpec> {
    let spec = GridSpec {
        z_min: v.f64("z_min")?.unwrap_or(z_min),
        z_max: v.f64("z_max")?.unwrap_or(z_max),
        dz: v.positive("dz")?.unwrap_or(dz),
    };
    if spec.z_max <= spec.z_min {
        return Err(Error::config(
            "z_max",
            format!("must be > z_min = {}, got {}", spec.z_min, spec.z_max),
        ));
    }
    Ok(spec)
}

fn sweep_spec(v: &Values<'_>) -> Result<SweepSpec> {
    let mut mu = if let Some(list) = v.raw("mu_list") {
        list.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite() && *x > 0.0)
                    .ok_or_else(|| Error::config("mu_list", format!("entries must be numbers > 0, got '{s}'")))
            })
            .collect::<Result<Vec<f64>>>()?
    } else {
        let lo = v
            .positive("mu_min")?
            .ok_or_else(|| Error::config("mu_min", "required for mode 'sweep' unless mu_list is given"))?;
        let hi = v
            .positive("mu_max")?
            .ok_or_else(|| Error::config("mu_max", "required for mode 'sweep' unless mu_list is given"))?;
        let step = v.positive("mu_step")?.unwrap_or(0.05);
        if hi < lo {
            return Err(Error::config("mu_max", format!("must be >= mu_min = {lo}, got {hi}")));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| lo + i as f64 * step).collect()
    };
    if mu.is_empty() {
        return Err(Error::config("mu_list", "must not be empty"));
    }
    mu.sort_by(f64::total_cmp);
    mu.dedup();
    Ok(SweepSpec { mu })
}

#[derive(Debug, Parser)]
#[command(name = "hgt", version, about = "Selection, mutation and horizontal transfer: equilibria and simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolutionarily stable strategy and fitness profile for (tau, g)
    Ess(CommonArgs),
    /// Run the time-dependent solver to steady state
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Principal eigenvalue of the no-transfer problem
    Eigen {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// ESS family and values over a range of mu at fixed tau
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Check the transfer kernel's shape hypotheses
    VerifyKernel(CommonArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Flat key = value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub g: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub kernel: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct GridArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub zmin: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub zmax: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub dz: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct SimArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub dt: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub tmax: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub zinit: Option<String>,
    /// Curvature of the initial profile
    #[arg(long = "A", allow_negative_numbers = true)]
    pub curvature: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub steady_tol: Option<String>,
    #[arg(long)]
    pub mass_stride: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub mu_min: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu_max: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu_step: Option<String>,
    /// Comma-separated mu values; replaces the range
    #[arg(long)]
    pub mu_list: Option<String>,
}

fn put(map: &mut BTreeMap<String, String>, key: &str, value: &Option<String>) {
    if let Some(v) = value {
        map.insert(key.to_string(), v.clone());
    }
}

impl CommonArgs {
    fn overlay(&self, map: &mut BTreeMap<String, String>) {
        if let Some(out) = &self.out {
            map.insert("out".into(), out.display().to_string());
        }
        put(map, "tau", &self.tau);
        put(map, "g", &self.g);
        put(map, "epsilon", &self.epsilon);
        put(map, "kernel", &self.kernel);
    }
}

impl GridArgs {
    fn overlay(&self, map: &mut BTreeMap<String, String>) {
        put(map, "z_min", &self.zmin);
        put(map, "z_max", &self.zmax);
        put(map, "dz", &self.dz);
    }
}

impl Cli {
    /// Configuration file contents overlaid with the flags.
    pub fn into_config(self) -> Result<RunConfig> {
        let (mode, common) = match &self.command {
            Command::Ess(c) => (Mode::Ess, c),
            Command::Simulate { common, .. } => (Mode::Simulate, common),
            Command::Eigen { common, .. } => (Mode::Eigen, common),
            Command::Sweep { common, .. } => (Mode::Sweep, common),
            Command::VerifyKernel(c) => (Mode::VerifyKernel, c),
        };
        let mut map = match &common.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        common.overlay(&mut map);
        match &self.command {
            Command::Simulate { sim, .. } => {
                sim.grid.overlay(&mut map);
                put(&mut map, "dt", &sim.dt);
                put(&mut map, "t_max", &sim.tmax);
                put(&mut map, "z_init", &sim.zinit);
                put(&mut map, "A", &sim.curvature);
                put(&mut map, "steady_tol", &sim.steady_tol);
                put(&mut map, "mass_stride", &sim.mass_stride);
            }
            Command::Eigen { grid, .. } => grid.overlay(&mut map),
            Command::Sweep { sweep, .. } => {
                put(&mut map, "mu_min", &sweep.mu_min);
                put(&mut map, "mu_max", &sweep.mu_max);
                put(&mut map, "mu_step", &sweep.mu_step);
                put(&mut map, "mu_list", &sweep.mu_list);
            }
            _ => {}
        }
        resolve_config(Some(mode), &map)
    }
}

/// Parse arguments, run, and report. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let fallback_out = match &cli.command {
        Command::Ess(c) | Command::VerifyKernel(c) => c.out.clone(),
        Command::Simulate { common, .. } | Command::Eigen { common, .. } | Command::Sweep { common, .. } => {
            common.out.clone()
        }
    };
    let mut out_dir = fallback_out.unwrap_or_else(|| PathBuf::from("out"));
    let result = cli.into_config().and_then(|cfg| {
        out_dir = cfg.out.clone();
        run_scenario(&cfg)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(write_err) = write_error(&out_dir, &e) {
                eprintln!("error: could not write error record: {write_err}");
            }
            e.exit_code()
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
    exit_code: i32,
}

fn write_error(dir: &Path, e: &Error) -> Result<()> {
    let (kind, field) = match e {
        Error::Config { field, .. } => ("config", Some(field.as_str())),
        Error::Domain(_) => ("domain", None),
        Error::Precondition(_) => ("precondition", None),
        Error::Kernel(_) => ("kernel", None),
        Error::Numerical { .. } => ("numerical", None),
        Error::Io(_) => ("io", None),
        Error::Json(_) => ("json", None),
    };
    let record = ErrorRecord {
        kind,
        field,
        message: e.to_string(),
        exit_code: e.exit_code(),
    };
    fs::create_dir_all(dir)?;
    write_json(&dir.join("error.json"), &record)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn model_params(cfg: &RunConfig) -> Result<ModelParams> {
    ModelParams::new(
        cfg.tau.unwrap_or(0.0),
        cfg.g.unwrap_or(1.0),
        cfg.epsilon.unwrap_or(5e-5),
    )
}

/// Execute a resolved configuration and write its artifacts into `cfg.out`.
pub fn run_scenario(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    let kernel = make_kernel(&cfg.kernel)?;
    match cfg.mode {
        Mode::Ess => run_ess(cfg, &kernel),
        Mode::Simulate => run_simulate(cfg, &kernel),
        Mode::Eigen => run_eigen(cfg),
        Mode::Sweep => run_sweep(cfg, &kernel),
        Mode::VerifyKernel => run_verify_kernel(cfg, &kernel),
    }
}

#[derive(Serialize)]
struct EssArtifact<'a> {
    kernel: &'a str,
    tau: f64,
    g: f64,
    mu: f64,
    constants: &'a KernelConstants,
    regime: Regime,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidate: Option<CandidateView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<&'a ess::VerifyReport>,
}

#[derive(Serialize)]
struct CandidateView {
    points: Vec<f64>,
    weights: Vec<f64>,
    fractions: Vec<f64>,
    rho0: f64,
}

impl From<&DiscreteEss> for CandidateView {
    fn from(e: &DiscreteEss) -> Self {
        Self {
            points: e.points.clone(),
            weights: e.weights.clone(),
            fractions: e.fractions(),
            rho0: e.rho0,
        }
    }
}

fn run_ess(cfg: &RunConfig, kernel: &TransferKernel) -> Result<()> {
    let params = model_params(cfg)?;
    let constants = compute_constants(kernel)?;
    let class: Classification = classify(&params, kernel, &constants, None);
    let artifact = EssArtifact {
        kernel: kernel.name(),
        tau: params.tau,
        g: params.g,
        mu: params.mu(),
        constants: &constants,
        regime: class.regime,
        reason: class.reason.as_deref(),
        candidate: class.candidate.as_ref().map(CandidateView::from),
        verification: class.verification.as_ref(),
    };
    write_json(&cfg.out.join("ess.json"), &artifact)?;
    let Some(candidate) = &class.candidate else {
        return Err(Error::numerical(format!(
            "no equilibrium candidate could be computed: {}",
            class.reason.unwrap_or_default()
        )));
    };
    let spec = cfg.grid.expect("ess mode resolves a grid");
    let n = ((spec.z_max - spec.z_min) / spec.dz + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| spec.z_min + i as f64 * spec.dz).collect();
    let profile = fitness(candidate, &params, kernel, &grid)?;
    let mut csv = String::from("z,F\n");
    for (z, f) in profile.grid.iter().zip(&profile.values) {
        writeln!(csv, "{z},{f}").unwrap();
    }
    fs::write(cfg.out.join("fitness.csv"), csv)?;
    Ok(())
}

/// Build the solver configuration of a `simulate` run.
pub fn sim_config(cfg: &RunConfig, kernel: &TransferKernel) -> Result<SimConfig> {
    let params = model_params(cfg)?;
    let g = cfg.grid.expect("simulate mode resolves a grid");
    let t = cfg.time.expect("simulate mode resolves time settings");
    let grid = Grid1D::new(g.z_min, g.z_max, g.dz)?;
    let mut sim = SimConfig::new(params, kernel.clone(), grid, t.dt, t.t_max)?;
    sim.z_init = t.z_init;
    sim.curvature = t.curvature;
    sim.steady_tol = t.steady_tol;
    sim.validate()?;
    Ok(sim)
}

fn run_simulate(cfg: &RunConfig, kernel: &TransferKernel) -> Result<()> {
    let sim = sim_config(cfg, kernel)?;
    let report = pde::run(&sim)?;
    write_sim_outputs(&cfg.out, &report, cfg.time.map_or(0, |t| t.mass_stride))
}

/// Write `mass.csv`, `profile.csv` and `report.json`.
///
/// A `stride` of 0 picks one that keeps about 20000 rows; the final entry
/// is always written.
pub fn write_sim_outputs(dir: &Path, report: &SimReport, stride: usize) -> Result<()> {
    let h = &report.rho_history;
    let stride = if stride == 0 {
        h.len().div_ceil(MASS_ROWS_TARGET).max(1)
    } else {
        stride
    };
    let mut mass = String::from("t,rho\n");
    for (i, rho) in h.iter().enumerate() {
        if i % stride == 0 || i + 1 == h.len() {
            writeln!(mass, "{},{rho}", i as f64 * report.dt).unwrap();
        }
    }
    fs::write(dir.join("mass.csv"), mass)?;

    let mut profile = String::from("z,u,n_rescaled\n");
    for (j, (u, n)) in report.final_u.iter().zip(&report.n_rescaled).enumerate() {
        writeln!(profile, "{},{u},{n}", report.grid.node(j)).unwrap();
    }
    fs::write(dir.join("profile.csv"), profile)?;

    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        report: &'a SimReport,
        mass_stride: usize,
    }
    write_json(&dir.join("report.json"), &Report { report, mass_stride: stride })
}

fn run_eigen(cfg: &RunConfig) -> Result<()> {
    let g = cfg.g.expect("eigen mode resolves g");
    let eps = cfg.epsilon.expect("eigen mode resolves epsilon");
    let spec = cfg.grid.expect("eigen mode resolves a grid");
    let n_points = ((spec.z_max - spec.z_min) / spec.dz).round() as usize + 1;
    let result: EigenResult = spectral::principal_eigen(eps, g, (spec.z_min, spec.z_max), n_points)?;
    write_json(&cfg.out.join("eigen.json"), &result)
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    pub g: f64,
    pub regime: Regime,
    /// Descending; fewer than three for lower morphisms.
    pub points: Vec<f64>,
    pub fractions: Vec<f64>,
    pub rho0: Option<f64>,
    pub reason: Option<String>,
}

pub const SWEEP_HEADER: &str = "mu,g,regime,z1,z2,z3,a1/rho0,a2/rho0,a3/rho0,rho0";

/// Classify each `mu` at fixed `tau`, reusing the trimorphic continuation
/// along the (ascending) list.
pub fn sweep(tau: f64, mus: &[f64], kernel: &TransferKernel) -> Result<Vec<SweepRow>> {
    let constants = compute_constants(kernel)?;
    let mut branch = TrimorphicBranch::new(kernel, &constants)?;
    let mut rows = Vec::with_capacity(mus.len());
    for &mu in mus {
        let g = tau / (2.0 * mu);
        let params = ModelParams::new(tau, g, 5e-5)?;
        let class = classify(&params, kernel, &constants, Some(&mut branch));
        let (points, fractions, rho0) = match &class.candidate {
            Some(c) => (c.points.clone(), c.fractions(), Some(c.rho0)),
            None => (Vec::new(), Vec::new(), None),
        };
        rows.push(SweepRow {
            mu,
            g,
            regime: class.regime,
            points,
            fractions,
            rho0,
            reason: class.reason,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let frac = |i: usize| {
            if r.rho0.is_none() {
                String::new()
            } else {
                r.fractions.get(i).copied().unwrap_or(0.0).to_string()
            }
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.mu,
            r.g,
            r.regime.as_str(),
            cell(r.points.first()),
            cell(r.points.get(1)),
            cell(r.points.get(2)),
            frac(0),
            frac(1),
            frac(2),
            cell(r.rho0.as_ref()),
        )
        .unwrap();
    }
    out
}

fn run_sweep(cfg: &RunConfig, kernel: &TransferKernel) -> Result<()> {
    let tau = cfg.tau.expect("sweep mode resolves tau");
    let spec = cfg.sweep.as_ref().expect("sweep mode resolves mu values");
    let rows = sweep(tau, &spec.mu, kernel)?;
    fs::write(cfg.out.join("sweep.csv"), sweep_csv(&rows))?;
    Ok(())
}

#[derive(Serialize)]
struct KernelArtifact<'a> {
    #[serde(flatten)]
    report: &'a H1Report,
    #[serde(skip_serializing_if = "Option::is_none")]
    constants: Option<KernelConstants>,
}

fn run_verify_kernel(cfg: &RunConfig, kernel: &TransferKernel) -> Result<()> {
    let report = validate_h1(kernel, &default_sample_grid());
    let constants = if report.all_pass {
        Some(compute_constants(kernel)?)
    } else {
        None
    };
    write_json(
        &cfg.out.join("kernel_report.json"),
        &KernelArtifact {
            report: &report,
            constants,
        },
    )?;
    if !report.all_pass {
        return Err(Error::Kernel(format!("kernel '{}' violates the shape hypotheses", kernel.name())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn minimal_ess_config_gets_defaults() {
        let cfg = resolve_config(None, &map(&[("mode", "ess"), ("tau", "0.5"), ("g", "1")])).unwrap();
        assert_eq!(cfg.mode, Mode::Ess);
        assert_eq!(cfg.kernel, "tanh-kernel");
        let grid = cfg.grid.unwrap();
        assert_eq!((grid.z_min, grid.z_max, grid.dz), (-2.0, 5.25, 1e-3));
    }

    #[test]
    fn negative_g_names_field_and_range() {
        let err = resolve_config(Some(Mode::Ess), &map(&[("tau", "0.5"), ("g", "-1")])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("g") && msg.contains("> 0"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_kernel_lists_supported() {
        let err =
            resolve_config(Some(Mode::Ess), &map(&[("tau", "0.5"), ("g", "1"), ("kernel", "erf")])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tanh-kernel") && msg.contains("arctan-kernel"), "{msg}");
    }

    #[test]
    fn config_text_parsing() {
        let m = parse_config_text("# comment\nmode = simulate\n\ntau=0.5 # trailing\ng = 1\n").unwrap();
        assert_eq!(m["tau"], "0.5");
        assert_eq!(m["mode"], "simulate");
        assert!(parse_config_text("tau 0.5").is_err());
        assert!(parse_config_text("taux = 0.5").is_err());
    }

    #[test]
    fn bad_number_is_config_error() {
        let err = resolve_config(Some(Mode::Ess), &map(&[("tau", "half"), ("g", "1")])).unwrap_err();
        assert!(err.to_string().contains("tau"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn simulate_defaults_and_grid_check() {
        let cfg = resolve_config(Some(Mode::Simulate), &map(&[("tau", "0.5"), ("g", "1")])).unwrap();
        let t = cfg.time.unwrap();
        assert_eq!((t.dt, t.steady_tol, t.curvature, t.z_init), (1e-4, 1e-7, 1.0, 0.0));
        assert_eq!(cfg.epsilon, Some(5e-5));
        let err = resolve_config(Some(Mode::Simulate), &map(&[("tau", "0.5"), ("g", "1"), ("dz", "0.3")]));
        assert!(err.is_err());
        let err = resolve_config(Some(Mode::Simulate), &map(&[("tau", "0.5"), ("g", "1"), ("z_init", "9")]));
        assert!(err.unwrap_err().to_string().contains("z_init"));
    }

    #[test]
    fn sweep_range_is_ascending_and_inclusive() {
        let cfg = resolve_config(
            Some(Mode::Sweep),
            &map(&[("mu_min", "1"), ("mu_max", "1.2"), ("mu_step", "0.05")]),
        )
        .unwrap();
        let mu = &cfg.sweep.unwrap().mu;
        assert_eq!(mu.len(), 5);
        assert!((mu[4] - 1.2).abs() < 1e-12);
        let cfg = resolve_config(Some(Mode::Sweep), &map(&[("mu_list", "5, 4.16,6.25")])).unwrap();
        assert_eq!(cfg.sweep.unwrap().mu, vec![4.16, 5.0, 6.25]);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "tau = 0.5\ng = 2\n").unwrap();
        let cli = Cli::try_parse_from([
            "hgt",
            "ess",
            "--config",
            path.to_str().unwrap(),
            "--g",
            "1",
        ])
        .unwrap();
        let cfg = cli.into_config().unwrap();
        assert_eq!(cfg.g, Some(1.0));
        assert_eq!(cfg.tau, Some(0.5));
    }

    #[test]
    fn sweep_rows_follow_regimes() {
        let kernel = make_kernel("tanh").unwrap();
        let rows = sweep(0.5, &[1.0, 3.0, 5.0], &kernel).unwrap();
        let regimes: Vec<Regime> = rows.iter().map(|r| r.regime).collect();
        assert_eq!(regimes, vec![Regime::Mono, Regime::Di, Regime::Tri]);
        let csv = sweep_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        let mono: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(mono[4], "");
        assert_eq!(mono[5], "");
        assert_eq!(mono[7], "0");
        let di: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(di[5], "");
        assert_eq!(di[8], "0");
    }
}
