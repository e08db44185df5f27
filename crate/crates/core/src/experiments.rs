//! Configuration-driven experiments.
//!
//! Every command is a pure function of the configuration, seed included;
//! only the `timings` section of a report varies between runs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::besov::{besov_report, commensurate_lags, compare_to_theorem, estimate_density, BesovReport, DensityMethod, Verdict};
use crate::error::{Error, Result};
use crate::fit::t_quantile;
use crate::kernels::{fit_condition_cc1, fit_condition_cc2, log_space, ConditionFit, KernelParams, KernelSpec};
use crate::mc::{accumulate, map_blocks, Estimate, Moments};
use crate::paths::{NoiseSampler, Scheme, TimeGrid};
use crate::rng::{stream_rng, Purpose};
use crate::sde::{euler_solve, path_dependent_solve, Drift, DriftSpec, PathSimulator, VProcessSpec};
use crate::smoothing::{
    scaling_regression, smoothing_sweep, theorem_exponents, write_sweep_csv, ScalingFit, ScalingPoint, SmoothingReport,
    Streamed, SweepSpec, TestFunction, TestFunctionSpec,
};

/// Paths per work unit when streaming terminal values.
const STREAM_BLOCK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CheckConditions,
    Simulate,
    Solve,
    PeAeSweep,
    DensityVerify,
    /// Condition fits, plus the sweep when configured and the density check
    /// in dimension one.
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CheckConditions => "check-conditions",
            Command::Simulate => "simulate",
            Command::Solve => "solve",
            Command::PeAeSweep => "pe-ae-sweep",
            Command::DensityVerify => "density-verify",
            Command::All => "all",
        }
    }
}

fn default_dim() -> usize {
    1
}
fn default_scheme() -> Scheme {
    Scheme::KernelDiscretized
}
fn default_paths() -> usize {
    10_000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("vlab-out")
}
fn yes() -> bool {
    true
}

fn d_eps_min() -> f64 {
    1e-4
}
fn d_eps_max() -> f64 {
    1e-2
}
fn d_n_points() -> usize {
    12
}
fn d_mc_paths() -> usize {
    10_000
}
fn d_mc_steps() -> usize {
    256
}

/// Grids for the kernel condition fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsSpec {
    /// Time of the tail-variance fit; defaults to the grid horizon.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default = "d_eps_min")]
    pub eps_min: f64,
    #[serde(default = "d_eps_max")]
    pub eps_max: f64,
    #[serde(default = "d_eps_min")]
    pub gap_min: f64,
    #[serde(default = "d_eps_max")]
    pub gap_max: f64,
    /// Midpoint of the increment pairs; defaults to half the horizon.
    #[serde(default)]
    pub gap_center: Option<f64>,
    #[serde(default = "d_n_points")]
    pub n_points: usize,
    /// Paths of the Monte Carlo increment fit.
    #[serde(default = "d_mc_paths")]
    pub mc_paths: usize,
    /// Steps of the Monte Carlo grid; 0 skips the Monte Carlo fit.
    #[serde(default = "d_mc_steps")]
    pub mc_steps: usize,
}

impl Default for ConditionsSpec {
    fn default() -> Self {
        ConditionsSpec {
            t: None,
            eps_min: d_eps_min(),
            eps_max: d_eps_max(),
            gap_min: d_eps_min(),
            gap_max: d_eps_max(),
            gap_center: None,
            n_points: d_n_points(),
            mc_paths: d_mc_paths(),
            mc_steps: d_mc_steps(),
        }
    }
}

fn d_resolution() -> f64 {
    0.05
}
fn d_order() -> usize {
    2
}
fn d_h_max() -> f64 {
    1.0
}
fn d_n_lags() -> usize {
    8
}
fn d_tolerance() -> f64 {
    0.1
}

/// Settings of the density regularity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    /// Time of the marginal; defaults to the grid horizon.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default = "d_method")]
    pub method: DensityMethod,
    /// Bin width or bandwidth.
    #[serde(default = "d_resolution")]
    pub resolution: f64,
    #[serde(default = "d_order")]
    pub m: usize,
    /// Smallest lag; defaults to four times the resolution.
    #[serde(default)]
    pub h_min: Option<f64>,
    #[serde(default = "d_h_max")]
    pub h_max: f64,
    #[serde(default = "d_n_lags")]
    pub n_lags: usize,
    #[serde(default = "d_tolerance")]
    pub tolerance: f64,
}

fn d_method() -> DensityMethod {
    DensityMethod::Histogram
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec {
            t: None,
            method: d_method(),
            resolution: d_resolution(),
            m: d_order(),
            h_min: None,
            h_max: d_h_max(),
            n_lags: d_n_lags(),
            tolerance: d_tolerance(),
        }
    }
}

impl DensitySpec {
    pub fn h_min(&self) -> f64 {
        self.h_min.unwrap_or(4.0 * self.resolution)
    }
}

fn d_sample_paths() -> usize {
    10
}

/// Which artifacts to write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitSpec {
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json: bool,
    /// Binary ensembles from `simulate` and `solve`.
    #[serde(default = "yes")]
    pub binary: bool,
    /// Paths written to the CSV preview of an ensemble.
    #[serde(default = "d_sample_paths")]
    pub sample_paths: usize,
}

impl Default for EmitSpec {
    fn default() -> Self {
        EmitSpec { csv: true, json: true, binary: true, sample_paths: d_sample_paths() }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required, either here or on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Command run by `reproduce`; defaults to `all`.
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Initial value; empty means the origin.
    #[serde(default)]
    pub x0: Vec<f64>,
    pub kernel: KernelParams,
    pub grid: TimeGrid,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Defaults to the zero drift.
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    #[serde(default)]
    pub v_process: Option<VProcessSpec>,
    #[serde(default)]
    pub test_function: Option<TestFunctionSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub conditions: ConditionsSpec,
    #[serde(default)]
    pub density: DensitySpec,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit: EmitSpec,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

fn as_field<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Domain(msg) => Error::validation(field, msg),
        other => other,
    })
}

fn check(cond: bool, field: &str, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::validation(field, msg))
    }
}

impl ExperimentConfig {
    /// Parses TOML; errors carry line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(s) = overrides.seed {
            self.seed = Some(s);
        }
        if let Some(dir) = &overrides.output_dir {
            self.output_dir = dir.clone();
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::validation("seed", "missing; set it in the config or pass --seed"))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        as_field("kernel", KernelSpec::new(self.kernel.clone()))
    }

    pub fn drift_spec(&self) -> DriftSpec {
        self.drift.clone().unwrap_or_else(DriftSpec::zero)
    }

    pub fn drift(&self) -> Result<Drift> {
        as_field("drift", Drift::new(self.drift_spec(), self.dim))
    }

    pub fn initial_value(&self) -> Vec<f64> {
        if self.x0.is_empty() {
            vec![0.0; self.dim]
        } else {
            self.x0.clone()
        }
    }

    pub fn conditions_time(&self) -> f64 {
        self.conditions.t.unwrap_or(self.grid.horizon)
    }

    pub fn density_time(&self) -> f64 {
        self.density.t.unwrap_or(self.grid.horizon)
    }

    /// Streaming simulator of the configured equation.
    pub fn simulator(&self, kernel: &KernelSpec) -> Result<PathSimulator> {
        let sampler = NoiseSampler::new(kernel, self.grid, self.scheme)?;
        PathSimulator::new(sampler, self.drift()?, self.v_process, self.initial_value(), self.seed()?)
    }

    /// Checks every section, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        check(self.dim >= 1, "dim", "must be at least 1")?;
        check(
            self.x0.is_empty() || self.x0.len() == self.dim,
            "x0",
            format!("has {} entries for dimension {}", self.x0.len(), self.dim),
        )?;
        check(self.x0.iter().all(|v| v.is_finite()), "x0", "must be finite")?;
        check(self.n_paths >= 1, "n_paths", "must be at least 1")?;
        let kernel = self.kernel_spec()?;
        self.grid.validate()?;
        check(
            self.grid.horizon <= kernel.horizon() * (1.0 + 1e-12),
            "grid.horizon",
            format!("exceeds the kernel horizon {}", kernel.horizon()),
        )?;
        let drift = self.drift()?;
        if let Some(vp) = &self.v_process {
            vp.validate(drift.beta().min(1.0), kernel.regularity_exponent())?;
        }
        check(
            !drift.uses_v() || self.v_process.is_some(),
            "v_process",
            "the drift reads V but no V process is configured",
        )?;
        if let Some(tf) = &self.test_function {
            TestFunction::new(tf.clone(), self.dim)?;
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
            let i = as_field("sweep.t", self.grid.node_index(sweep.t))?;
            let windows = sweep.eps_grid.iter().chain(sweep.pe_eps.iter());
            for &e in windows {
                let k = as_field("sweep.eps_grid", self.grid.steps_in(e))?;
                check(k <= i, "sweep.eps_grid", format!("window {e} exceeds t = {}", sweep.t))?;
            }
        }
        self.validate_conditions()?;
        self.validate_density()
    }

    fn validate_conditions(&self) -> Result<()> {
        let c = &self.conditions;
        let t = self.conditions_time();
        check(t > 0.0 && t <= self.grid.horizon, "conditions.t", "must lie in (0, horizon]")?;
        check(c.eps_min > 0.0 && c.eps_max > c.eps_min, "conditions.eps_min", "need 0 < eps_min < eps_max")?;
        check(c.eps_max < t, "conditions.eps_max", format!("must be below t = {t}"))?;
        check(c.gap_min > 0.0 && c.gap_max > c.gap_min, "conditions.gap_min", "need 0 < gap_min < gap_max")?;
        let center = c.gap_center.unwrap_or(self.grid.horizon / 2.0);
        check(
            center - c.gap_max / 2.0 >= 0.0 && center + c.gap_max / 2.0 <= self.grid.horizon,
            "conditions.gap_center",
            "increment pairs must stay inside [0, horizon]",
        )?;
        check(c.n_points >= 4, "conditions.n_points", "must be at least 4")?;
        check(c.mc_steps == 0 || c.mc_steps >= 16, "conditions.mc_steps", "must be 0 or at least 16")?;
        check(c.mc_steps == 0 || c.mc_paths >= 2, "conditions.mc_paths", "must be at least 2")
    }

    fn validate_density(&self) -> Result<()> {
        let d = &self.density;
        as_field("density.t", self.grid.node_index(self.density_time()))?;
        check(self.density_time() > 0.0, "density.t", "must be positive")?;
        check(d.resolution > 0.0 && d.resolution.is_finite(), "density.resolution", "must be positive")?;
        check(d.m >= 1, "density.m", "must be at least 1")?;
        check(d.h_min() >= 2.0 * d.resolution, "density.h_min", "must be at least twice the resolution")?;
        check(d.h_max > d.h_min(), "density.h_max", "must exceed h_min")?;
        check(d.n_lags >= 4, "density.n_lags", "must be at least 4")?;
        check(d.tolerance >= 0.0, "density.tolerance", "must be nonnegative")
    }
}

/// An exponent with its uncertainty and, when known, its exact value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Two-sided 95% interval.
    pub ci: (f64, f64),
    pub expected: f64,
    pub r_squared: f64,
}

impl ExponentEstimate {
    fn from_condition(fit: &ConditionFit, expected: f64) -> Self {
        let se = fit.slope_std_error / 2.0;
        let half = t_quantile(0.95, fit.grid.len() as f64 - 2.0) * se;
        ExponentEstimate {
            estimate: fit.exponent_estimate,
            std_error: se,
            ci: (fit.exponent_estimate - half, fit.exponent_estimate + half),
            expected,
            r_squared: fit.r_squared,
        }
    }
}

/// Monte Carlo fit of the increment exponent from sampled paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McIncrementFit {
    pub n_paths: usize,
    pub n_steps: usize,
    /// `(gap, E|B_t - B_s|², std_error)`.
    pub points: Vec<ScalingPoint>,
    pub fit: ScalingFit,
    pub exponent: ExponentEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub t: f64,
    /// Nondegeneracy exponent `A` from the tail variance.
    pub a: ExponentEstimate,
    /// Increment exponent `H`.
    pub h: ExponentEstimate,
    pub cc1: ConditionFit,
    pub cc2: ConditionFit,
    pub cc2_monte_carlo: Option<McIncrementFit>,
}

/// Summary of a stored ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dim: usize,
    pub terminal_time: f64,
    /// Pooled over components.
    pub terminal_mean: Estimate,
    pub terminal_variance: Estimate,
    /// Exact variance of the noise at the terminal time.
    pub reference_variance: Option<f64>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub t: f64,
    pub n_samples: usize,
    pub besov: BesovReport,
    pub verdict: Verdict,
}

/// Everything a command produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<ConditionsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<EnsembleSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<EnsembleSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<Vec<SmoothingReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityReport>,
    /// Wall-clock seconds per phase; excluded from reproducibility.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(command: Command, config: &ExperimentConfig) -> Self {
        RunReport {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config: config.clone(),
            conditions: None,
            simulation: None,
            solution: None,
            smoothing: None,
            density: None,
            timings: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report with its timings cleared, for reproducibility checks.
    pub fn without_timings(&self) -> RunReport {
        RunReport { timings: BTreeMap::new(), ..self.clone() }
    }
}

/// Artifact sink rooted at the output directory.
struct Outputs {
    dir: PathBuf,
    emit: EmitSpec,
}

impl Outputs {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let emit = cfg.emit.clone();
        if emit.csv || emit.json || emit.binary {
            fs::create_dir_all(&cfg.output_dir)?;
        }
        Ok(Outputs { dir: cfg.output_dir.clone(), emit })
    }

    fn csv<F>(&self, name: &str, files: &mut Vec<String>, write: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        if !self.emit.csv {
            return Ok(());
        }
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        write(&mut w)?;
        w.flush()?;
        files.push(name.to_string());
        Ok(())
    }

    fn sample_paths(&self, n_paths: usize) -> Vec<usize> {
        (0..n_paths.min(self.emit.sample_paths)).collect()
    }
}

struct Timer<'a> {
    timings: &'a mut BTreeMap<String, f64>,
}

impl Timer<'_> {
    fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.insert(phase.to_string(), start.elapsed().as_secs_f64());
        out
    }
}

/// Runs `command`, writing artifacts under `output_dir`.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = Outputs::new(cfg)?;
    let mut report = RunReport::new(command, cfg);
    let kernel = cfg.kernel_spec()?;
    let mut files = Vec::new();
    let mut timings = BTreeMap::new();
    let mut timer = Timer { timings: &mut timings };
    match command {
        Command::CheckConditions => {
            report.conditions = Some(timer.time("conditions", || conditions(cfg, &kernel, &out, &mut files))?);
        }
        Command::Simulate => {
            report.simulation = Some(timer.time("simulate", || simulate(cfg, &kernel, &out))?);
        }
        Command::Solve => {
            report.solution = Some(timer.time("solve", || solve(cfg, &kernel, &out))?);
        }
        Command::PeAeSweep => {
            report.smoothing = Some(timer.time("sweep", || sweep(cfg, &kernel, &out, &mut files))?);
        }
        Command::DensityVerify => {
            report.density = Some(timer.time("density", || density(cfg, &kernel, &out, &mut files))?);
        }
        Command::All => {
            report.conditions = Some(timer.time("conditions", || conditions(cfg, &kernel, &out, &mut files))?);
            if cfg.sweep.is_some() && cfg.test_function.is_some() {
                report.smoothing = Some(timer.time("sweep", || sweep(cfg, &kernel, &out, &mut files))?);
            }
            if cfg.dim == 1 {
                report.density = Some(timer.time("density", || density(cfg, &kernel, &out, &mut files))?);
            }
        }
    }
    report.timings = timings;
    if out.emit.json {
        fs::write(out.dir.join("report.json"), report.to_json()?)?;
    }
    Ok(report)
}

pub fn cmd_check_conditions(cfg: &ExperimentConfig) -> Result<RunReport> {
    run(Command::CheckConditions, cfg)
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<RunReport> {
    run(Command::Simulate, cfg)
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<RunReport> {
    run(Command::Solve, cfg)
}

pub fn cmd_pe_ae_sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    run(Command::PeAeSweep, cfg)
}

pub fn cmd_density_verify(cfg: &ExperimentConfig) -> Result<RunReport> {
    run(Command::DensityVerify, cfg)
}

/// Reruns a TOML config, or the config and command embedded in a report.
pub fn cmd_reproduce(path: &Path, overrides: &Overrides) -> Result<RunReport> {
    let text = fs::read_to_string(path)?;
    let (mut cfg, command) = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(value) if value.get("config").is_some() => {
            let cfg: ExperimentConfig = serde_json::from_value(value["config"].clone())
                .map_err(|e| Error::Parse(format!("{}: embedded config: {e}", path.display())))?;
            let command = match value.get("command") {
                Some(c) => serde_json::from_value(c.clone())
                    .map_err(|e| Error::Parse(format!("{}: command: {e}", path.display())))?,
                None => cfg.command.unwrap_or(Command::All),
            };
            (cfg, command)
        }
        _ => {
            let cfg = ExperimentConfig::load(path)?;
            let command = cfg.command.unwrap_or(Command::All);
            (cfg, command)
        }
    };
    cfg.apply(overrides);
    run(command, &cfg)
}

fn conditions(cfg: &ExperimentConfig, kernel: &KernelSpec, out: &Outputs, files: &mut Vec<String>) -> Result<ConditionsReport> {
    let c = &cfg.conditions;
    let t = cfg.conditions_time();
    let cc1 = fit_condition_cc1(kernel, t, &log_space(c.eps_min, c.eps_max, c.n_points))?;
    let center = c.gap_center.unwrap_or(cfg.grid.horizon / 2.0);
    let pairs: Vec<(f64, f64)> = log_space(c.gap_min, c.gap_max, c.n_points)
        .into_iter()
        .map(|g| (center - g / 2.0, center + g / 2.0))
        .collect();
    let cc2 = fit_condition_cc2(kernel, &pairs)?;
    let a = ExponentEstimate::from_condition(&cc1, kernel.nondegeneracy_exponent());
    let h = ExponentEstimate::from_condition(&cc2, kernel.regularity_exponent());
    let cc2_monte_carlo = if c.mc_steps > 0 {
        Some(increment_fit_mc(kernel, cfg.grid.horizon, c.mc_steps, c.mc_paths, c.n_points, cfg.seed()?)?)
    } else {
        None
    };
    out.csv("cc1.csv", files, |w| {
        writeln!(w, "eps,tail_variance")?;
        for (e, v) in &cc1.grid {
            writeln!(w, "{e},{v}")?;
        }
        Ok(())
    })?;
    out.csv("cc2.csv", files, |w| {
        writeln!(w, "gap,increment_variance")?;
        for (g, v) in &cc2.grid {
            writeln!(w, "{g},{v}")?;
        }
        Ok(())
    })?;
    if let Some(mc) = &cc2_monte_carlo {
        out.csv("cc2_mc.csv", files, |w| {
            writeln!(w, "gap,increment_variance,std_error")?;
            for p in &mc.points {
                writeln!(w, "{},{},{}", p.abscissa, p.value, p.std_error)?;
            }
            Ok(())
        })?;
    }
    Ok(ConditionsReport { t, a, h, cc1, cc2, cc2_monte_carlo })
}

/// `E|B_T - B_{T-kΔt}|²` from exact samples over log-spaced `k`.
fn increment_fit_mc(
    kernel: &KernelSpec,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    n_points: usize,
    seed: u64,
) -> Result<McIncrementFit> {
    let grid = TimeGrid::new(horizon, n_steps)?;
    let sampler = NoiseSampler::new(kernel, grid, Scheme::Exact)?;
    let mut lags: Vec<usize> = log_space(1.0, (n_steps / 2) as f64, n_points)
        .into_iter()
        .map(|k| k.round() as usize)
        .collect();
    lags.dedup();
    let moments = accumulate(n_paths, lags.len(), |p, row| {
        let mut rng = stream_rng(seed, Purpose::Samples, p as u64, 0);
        let z: Vec<f64> = (0..n_steps).map(|_| rng.sample(StandardNormal)).collect();
        let mut b = vec![0.0; n_steps + 1];
        sampler.map_normals(&z, &mut b);
        for (r, &k) in row.iter_mut().zip(&lags) {
            *r = (b[n_steps] - b[n_steps - k]).powi(2);
        }
        Ok(())
    })?;
    let points: Vec<ScalingPoint> = lags
        .iter()
        .zip(&moments)
        .map(|(&k, m)| ScalingPoint { abscissa: k as f64 * grid.dt(), value: m.mean, std_error: m.std_error() })
        .collect();
    let fit = scaling_regression(&points)?;
    let exponent = ExponentEstimate {
        estimate: fit.slope / 2.0,
        std_error: fit.slope_std_error / 2.0,
        ci: (fit.slope_ci.0 / 2.0, fit.slope_ci.1 / 2.0),
        expected: kernel.regularity_exponent(),
        r_squared: fit.r_squared,
    };
    Ok(McIncrementFit { n_paths, n_steps, points, fit, exponent })
}

fn terminal_stats(values: impl Iterator<Item = f64> + Clone) -> (Estimate, Estimate) {
    let mut first = Moments::default();
    for v in values.clone() {
        first.push(v);
    }
    let mut second = Moments::default();
    for v in values {
        second.push((v - first.mean).powi(2));
    }
    let n = first.count as f64;
    let scale = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    let var = second.estimate();
    (first.estimate(), Estimate { value: var.value * scale, std_error: var.std_error * scale })
}

fn simulate(cfg: &ExperimentConfig, kernel: &KernelSpec, out: &Outputs) -> Result<EnsembleSummary> {
    let sampler = NoiseSampler::new(kernel, cfg.grid, cfg.scheme)?;
    let ens = sampler.sample(cfg.dim, cfg.n_paths, cfg.seed()?)?;
    let n = cfg.grid.n_steps;
    let d = cfg.dim;
    let stride = (n + 1) * d;
    let terminal = (0..ens.n_paths).flat_map(|p| ens.values[p * stride + n * d..(p + 1) * stride].iter().copied());
    let (terminal_mean, terminal_variance) = terminal_stats(terminal);
    let mut files = Vec::new();
    if out.emit.binary {
        ens.write_binary(&out.dir.join("noise.bin"))?;
        files.push("noise.bin".to_string());
    }
    out.csv("noise_paths.csv", &mut files, |w| ens.write_csv(w, &out.sample_paths(ens.n_paths), 0))?;
    Ok(EnsembleSummary {
        n_paths: ens.n_paths,
        n_steps: n,
        dim: d,
        terminal_time: cfg.grid.horizon,
        terminal_mean,
        terminal_variance,
        reference_variance: Some(kernel.covariance(cfg.grid.horizon, cfg.grid.horizon)?),
        files,
    })
}

fn solve(cfg: &ExperimentConfig, kernel: &KernelSpec, out: &Outputs) -> Result<EnsembleSummary> {
    let sampler = NoiseSampler::new(kernel, cfg.grid, cfg.scheme)?;
    let noise = Arc::new(sampler.sample(cfg.dim, cfg.n_paths, cfg.seed()?)?);
    let drift = cfg.drift()?;
    let x0 = cfg.initial_value();
    let sol = match cfg.v_process {
        Some(vp) => path_dependent_solve(&drift, vp, noise, &x0)?,
        None => euler_solve(&drift, noise, &x0)?,
    };
    let n = cfg.grid.n_steps;
    let d = cfg.dim;
    let terminal = (0..sol.n_paths()).flat_map(|p| sol.path(p)[n * d..].iter().copied());
    let (terminal_mean, terminal_variance) = terminal_stats(terminal);
    let mut files = Vec::new();
    if out.emit.binary {
        sol.write_binary(&out.dir.join("solution.bin"))?;
        files.push("solution.bin".to_string());
    }
    out.csv("solution_paths.csv", &mut files, |w| sol.write_csv(w, &out.sample_paths(sol.n_paths()), 0))?;
    Ok(EnsembleSummary {
        n_paths: sol.n_paths(),
        n_steps: n,
        dim: d,
        terminal_time: cfg.grid.horizon,
        terminal_mean,
        terminal_variance,
        reference_variance: None,
        files,
    })
}

fn sweep(cfg: &ExperimentConfig, kernel: &KernelSpec, out: &Outputs, files: &mut Vec<String>) -> Result<Vec<SmoothingReport>> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::validation("sweep", "required by pe-ae-sweep"))?;
    let tf = cfg
        .test_function
        .clone()
        .ok_or_else(|| Error::validation("test_function", "required by pe-ae-sweep"))?;
    let phi = TestFunction::new(tf, cfg.dim)?;
    let simulator = cfg.simulator(kernel)?;
    let source = Streamed { simulator: &simulator, n_paths: cfg.n_paths };
    let reports = smoothing_sweep(&source, kernel, &phi, spec)?;
    for r in &reports {
        out.csv(&format!("pe_m{}.csv", r.m), files, |w| write_sweep_csv(w, &r.pe_estimates))?;
        out.csv(&format!("ae_m{}.csv", r.m), files, |w| write_sweep_csv(w, &r.ae_estimates))?;
        out.csv(&format!("coupled_m{}.csv", r.m), files, |w| write_sweep_csv(w, &r.coupled_estimates))?;
    }
    if let Some(r) = reports.first() {
        out.csv("gap_moments.csv", files, |w| {
            writeln!(w, "eps,estimate,std_error")?;
            for g in &r.gap_moments {
                writeln!(w, "{},{},{}", g.eps, g.estimate, g.std_error)?;
            }
            Ok(())
        })?;
    }
    Ok(reports)
}

/// First component of `X_t` for paths `0..n`, in path order.
fn terminal_samples(simulator: &PathSimulator, t: f64, n: usize) -> Result<Vec<f64>> {
    let i = simulator.grid().node_index(t)?;
    let d = simulator.dim();
    let blocks = map_blocks(n, STREAM_BLOCK, |range| {
        let mut buf = simulator.buffers();
        range
            .map(|p| {
                simulator.simulate(p, &mut buf);
                buf.x[i * d]
            })
            .collect::<Vec<f64>>()
    });
    Ok(blocks.concat())
}

fn density(cfg: &ExperimentConfig, kernel: &KernelSpec, out: &Outputs, files: &mut Vec<String>) -> Result<DensityReport> {
    if cfg.dim != 1 {
        return Err(Error::validation("dim", "density-verify needs dimension 1"));
    }
    let spec = &cfg.density;
    let t = cfg.density_time();
    let simulator = cfg.simulator(kernel)?;
    let samples = terminal_samples(&simulator, t, cfg.n_paths)?;
    let f = estimate_density(&samples, spec.method, spec.resolution)?;
    let lags = commensurate_lags(f.spacing, spec.h_min(), spec.h_max, spec.n_lags);
    let a = kernel.nondegeneracy_exponent();
    let beta = simulator.drift.beta().min(1.0);
    let hurst = kernel.regularity_exponent();
    let delta = cfg.v_process.map(|v| v.delta);
    let eta = theorem_exponents(a, beta, hurst, delta, spec.m, 1.0)?.eta();
    let besov = besov_report(&f, spec.m, &lags, eta)?;
    let verdict = compare_to_theorem(&besov, a, beta, hurst, delta, spec.tolerance)?;
    out.csv("density.csv", files, |w| {
        writeln!(w, "x,density")?;
        for (x, v) in f.grid().iter().zip(&f.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    })?;
    out.csv("lag_profile.csv", files, |w| besov.write_profile_csv(w))?;
    Ok(DensityReport { t, n_samples: samples.len(), besov, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml(extra: &str) -> String {
        format!(
            r#"
seed = 5
n_paths = 400
[kernel]
family = "brownian"
horizon = 1.0
[grid]
horizon = 1.0
n_steps = 32
[emit]
csv = false
json = false
binary = false
{extra}
"#
        )
    }

    fn config(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&base_toml(extra)).unwrap()
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ExperimentConfig::from_toml_str("seed = 1\n[kernel\nfamily = 3").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse(_)));
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn missing_required_field_is_named() {
        let err = ExperimentConfig::from_toml_str("seed = 1\n[grid]\nhorizon = 1.0\nn_steps = 4\n").unwrap_err();
        assert!(err.to_string().contains("kernel"), "{err}");
        let mut cfg = config("");
        cfg.seed = None;
        match cfg.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "seed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::from_toml_str(&base_toml("[density]\nbins = 3")).unwrap_err();
        assert!(err.to_string().contains("bins"), "{err}");
    }

    #[test]
    fn validation_names_nested_fields() {
        let cases = [
            ("[drift]\nkind = \"holder_power\"\nbeta = 1.5", "drift.beta"),
            ("[density]\nresolution = 0.05\nh_min = 0.06", "density.h_min"),
            ("[sweep]\nt = 1.0\nm = [1]\nh_grid = [0.1]\neps_grid = [0.01]", "sweep.eps_grid"),
            ("[conditions]\ngap_center = 0.001", "conditions.gap_center"),
        ];
        for (extra, field) in cases {
            match config(extra).validate() {
                Err(Error::Validation { field: f, .. }) => assert_eq!(f, field, "{extra}"),
                other => panic!("{extra}: {other:?}"),
            }
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = config("");
        cfg.apply(&Overrides { seed: Some(99), output_dir: Some("elsewhere".into()) });
        assert_eq!(cfg.seed, Some(99));
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn brownian_conditions_are_exact() {
        let cfg = config("[conditions]\nmc_paths = 2000\nmc_steps = 64");
        let r = run(Command::CheckConditions, &cfg).unwrap().conditions.unwrap();
        assert!((r.a.estimate - 0.5).abs() < 1e-9);
        assert!((r.h.estimate - 0.5).abs() < 1e-9);
        let mc = r.cc2_monte_carlo.unwrap();
        assert!((mc.exponent.estimate - 0.5).abs() < 0.1, "{:?}", mc.exponent);
    }

    #[test]
    fn zero_drift_sweep_has_zero_ae() {
        let cfg = config(
            "[test_function]\nkind = \"cosine\"\nalpha = 0.9\n\
             [sweep]\nt = 1.0\nm = [1, 2]\nh_grid = [0.01, 0.02, 0.04, 0.08]\neps_grid = [0.125, 0.25, 0.5]",
        );
        let reports = run(Command::PeAeSweep, &cfg).unwrap().smoothing.unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert!(r.ae_estimates.iter().all(|p| p.estimate == 0.0 && p.std_error == 0.0));
        }
    }

    #[test]
    fn reports_are_reproducible_and_thread_independent() {
        let cfg = config("[drift]\nkind = \"holder_power\"\nbeta = 0.5\n[density]\nresolution = 0.1\nh_max = 1.0");
        let one = crate::mc::with_threads(1, || run(Command::DensityVerify, &cfg)).unwrap().unwrap();
        let four = crate::mc::with_threads(4, || run(Command::DensityVerify, &cfg)).unwrap().unwrap();
        assert_eq!(one.without_timings().to_json().unwrap(), four.without_timings().to_json().unwrap());
    }

    #[test]
    fn reproduce_from_report_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config("");
        cfg.emit = EmitSpec { csv: true, json: true, binary: true, sample_paths: 3 };
        cfg.output_dir = dir.path().join("first");
        let first = run(Command::Solve, &cfg).unwrap();
        let again = cmd_reproduce(
            &dir.path().join("first/report.json"),
            &Overrides { seed: None, output_dir: Some(dir.path().join("first")) },
        )
        .unwrap();
        assert_eq!(first.without_timings(), again.without_timings());
        assert!(dir.path().join("first/solution.bin").exists());
        assert!(dir.path().join("first/solution_paths.csv").exists());
    }
}
