//! Scenario files, the single-scenario runner and the batch runner.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::format::fmt_g;
use crate::integrator::{integrate, IntegratorConfig, StepStats, Trajectory};
use crate::observables::{extract_series, particle_count, total_mass, TimeSeries};
use crate::operator::{build_generator, ClusterState};
use crate::rates::{classify_regime, KernelSpec, RateModel, RegimeReport};
use crate::spectral::{gap_series, GapSeries, RateFit, SpectralData};

/// Env var capping the worker count of [`run_all`].
pub const THREADS_ENV: &str = "FRAGSIM_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monodisperse {
    pub size: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Initial {
    Monodisperse { monodisperse: Monodisperse },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub enabled: bool,
    pub fit_window: Option<(f64, f64)>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            enabled: true,
            fit_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub rates: RateModel,
    pub kernel: KernelSpec,
    #[serde(rename = "N")]
    pub n: usize,
    pub initial: Initial,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub t_end: Option<f64>,
    pub dump_generator: bool,
}

#[derive(Debug)]
pub enum RunError {
    /// Unreadable or malformed scenario, or a model that fails validation.
    Invalid(String),
    Integration(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Invalid(_) => 2,
            RunError::Integration(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Invalid(m) => write!(f, "invalid scenario: {m}"),
            RunError::Integration(m) => write!(f, "integration failed: {m}"),
            RunError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::IntegrationFailure { .. } => RunError::Integration(e.to_string()),
            other => RunError::Invalid(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

/// Parses scenario JSON, reporting the field path and line/column of the first problem.
pub fn parse_scenario(text: &str) -> Result<Scenario, RunError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            RunError::Invalid(inner.to_string())
        } else {
            RunError::Invalid(format!("{path}: {inner}"))
        }
    })?;
    de.end().map_err(|e| RunError::Invalid(e.to_string()))?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::Invalid(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        RunError::Invalid(m) => RunError::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Scenario {
    pub fn apply_overrides(&mut self, opts: &RunOptions) {
        if let Some(r) = opts.rtol {
            self.integrator.rtol = r;
        }
        if let Some(a) = opts.atol {
            self.integrator.atol = a;
        }
        if let Some(t) = opts.t_end {
            self.integrator.t_end = t;
        }
    }

    /// Checks everything the schema alone cannot express.
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Invalid(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return bad(format!("name: {:?} is not usable as a directory name", self.name));
        }
        if self.n == 0 {
            return bad("N: must be at least 1".into());
        }
        self.rates
            .check_size(self.n)
            .map_err(|e| RunError::Invalid(format!("rates: {e}")))?;
        match &self.initial {
            Initial::Monodisperse { monodisperse: m } => {
                if m.size == 0 || m.size > self.n {
                    return bad(format!("initial.monodisperse.size: {} outside 1..={}", m.size, self.n));
                }
                if !(m.amount.is_finite() && m.amount >= 0.0) {
                    return bad(format!(
                        "initial.monodisperse.amount: {} must be finite and nonnegative",
                        m.amount
                    ));
                }
            }
            Initial::Explicit(v) => {
                if v.len() != self.n {
                    return bad(format!("initial: length {} but N = {}", v.len(), self.n));
                }
                if let Some(k) = v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                    return bad(format!("initial[{k}]: {} must be finite and nonnegative", v[k]));
                }
            }
        }
        self.integrator
            .validate()
            .map_err(|e| RunError::Invalid(format!("integrator: {e}")))?;
        if let Some((lo, hi)) = self.spectral.fit_window {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
                return bad(format!(
                    "spectral.fit_window: [{lo}, {hi}] is not an increasing nonnegative interval"
                ));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> ClusterState {
        match &self.initial {
            Initial::Monodisperse { monodisperse: m } => ClusterState::monodisperse(self.n, m.size, m.amount),
            Initial::Explicit(v) => ClusterState::new(0.0, v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub lambda1: f64,
    pub n0: usize,
    pub gap: Option<f64>,
    /// `<e*, f0>`.
    pub coefficient: f64,
    pub near_ties: Vec<usize>,
    pub e_left: Vec<f64>,
    pub e_right: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSummary {
    pub fit_window: (f64, f64),
    pub fit: Option<RateFit>,
    /// `-(second smallest theta - smallest theta)`.
    pub expected_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub scenario: Scenario,
    pub classification: RegimeReport,
    pub spectral: Option<SpectralSummary>,
    pub gap: Option<GapSummary>,
    /// Why spectral or gap outputs were skipped.
    pub notes: Vec<String>,
    pub steps: StepStats,
    pub final_time: f64,
    pub final_mass: f64,
    pub final_count: f64,
}

/// Everything a run produces, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub trajectory: Trajectory,
    pub series: Vec<TimeSeries>,
    pub gap: Option<GapSeries>,
    pub generator_dump: Option<String>,
}

impl RunOutcome {
    pub fn lambda1(&self) -> Option<f64> {
        self.manifest.spectral.as_ref().map(|s| s.lambda1)
    }

    pub fn fitted_rate(&self) -> Option<f64> {
        self.gap.as_ref().and_then(|g| g.fitted_rate())
    }
}

/// Runs a validated scenario in memory.
pub fn execute(scenario: &Scenario, dump_generator: bool) -> Result<RunOutcome, RunError> {
    scenario.validate()?;
    let n = scenario.n;
    let g = build_generator(&scenario.rates, &scenario.kernel, n)?;
    let classification = classify_regime(&scenario.rates, n)?;
    let f0 = scenario.initial_state();
    let trajectory = integrate(&g, &f0, &scenario.integrator)?;

    let mut notes = Vec::new();
    let mut spectral = None;
    let mut gap_summary = None;
    let mut gap = None;
    if scenario.spectral.enabled {
        match SpectralData::compute(&scenario.rates, &scenario.kernel, n) {
            Ok(sd) => {
                if classification.growth_preconditions() {
                    let gs = gap_series(&trajectory, &sd, &f0.f, scenario.spectral.fit_window)?;
                    if gs.fit.is_none() {
                        notes.push(
                            "gap: fit unavailable (too few points above the roundoff floor in the window)".into(),
                        );
                    }
                    gap_summary = Some(GapSummary {
                        fit_window: gs.fit_window,
                        fit: gs.fit.clone(),
                        expected_rate: sd.gap.map(|x| -x),
                    });
                    gap = Some(gs);
                } else {
                    notes.push(format!(
                        "gap: skipped, growth preconditions unmet ({})",
                        unmet(&classification)
                    ));
                }
                spectral = Some(SpectralSummary {
                    lambda1: sd.lambda1,
                    n0: sd.n0,
                    gap: sd.gap,
                    coefficient: sd.coefficient(&f0.f),
                    near_ties: sd.near_ties.clone(),
                    e_left: sd.e_left,
                    e_right: sd.e_right,
                });
            }
            Err(e @ (Error::Multiplicity { .. } | Error::EigenOverflow { .. })) => {
                notes.push(format!("spectral: skipped, {e}"));
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        notes.push("spectral: disabled".into());
    }

    let obs = extract_series(&trajectory, &scenario.rates);
    let last = trajectory.last();
    let manifest = Manifest {
        scenario: scenario.clone(),
        classification,
        spectral,
        gap: gap_summary,
        notes,
        steps: trajectory.stats,
        final_time: last.t,
        final_mass: total_mass(&last.f),
        final_count: particle_count(&last.f),
    };
    let generator_dump = dump_generator.then(|| {
        let mut buf = Vec::new();
        g.write_dense(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii output")
    });
    Ok(RunOutcome {
        manifest,
        trajectory,
        series: vec![obs.mass, obs.count, obs.loss_rate],
        gap,
        generator_dump,
    })
}

fn unmet(c: &RegimeReport) -> String {
    let flags = [
        ("analytic_domination", c.analytic_domination.holds),
        ("frag_death_ratio_bounded", c.frag_death_ratio_bounded),
        ("theta_divergent", c.theta_divergent),
        ("strict_min_unique", c.strict_min_unique),
    ];
    flags
        .iter()
        .filter(|(_, v)| !v)
        .map(|(k, _)| format!("{k} = false"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.samples.first().map_or(0, |s| s.len());
    let mut out = String::from("t");
    for k in 1..=n {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for s in &traj.samples {
        out.push_str(&fmt_g(s.t, 12));
        for &v in &s.f {
            out.push(',');
            out.push_str(&fmt_g(v, 12));
        }
        out.push('\n');
    }
    out
}

/// Writes all outputs of `outcome` into `dir`, creating it if needed.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let put = |name: &str, body: &str| -> Result<(), RunError> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| io_err(&p, e))
    };
    let mut manifest = serde_json::to_string_pretty(&outcome.manifest).map_err(|e| RunError::Io(e.to_string()))?;
    manifest.push('\n');
    put("manifest.json", &manifest)?;
    put("trajectory.csv", &trajectory_csv(&outcome.trajectory))?;
    for s in &outcome.series {
        put(&format!("{}.csv", s.name), &s.to_csv())?;
    }
    if let Some(gs) = &outcome.gap {
        put(
            "gap.csv",
            &TimeSeries::new("gap", "monomers", gs.points.clone()).to_csv(),
        )?;
        let mut summary =
            serde_json::to_string_pretty(&outcome.manifest.gap).map_err(|e| RunError::Io(e.to_string()))?;
        summary.push('\n');
        put("gap_summary.json", &summary)?;
    }
    if let Some(dump) = &outcome.generator_dump {
        put("generator.txt", dump)?;
    }
    Ok(())
}

pub fn default_out_dir(name: &str) -> PathBuf {
    Path::new("results").join(name)
}

/// Loads, runs and writes one scenario file. Returns the results directory.
pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<(PathBuf, RunOutcome), RunError> {
    let mut scenario = load_scenario(path)?;
    scenario.apply_overrides(opts);
    let outcome = execute(&scenario, opts.dump_generator)?;
    let dir = opts.out.clone().unwrap_or_else(|| default_out_dir(&scenario.name));
    write_outputs(&outcome, &dir)?;
    Ok((dir, outcome))
}

#[derive(Debug)]
pub struct SummaryRow {
    pub file: PathBuf,
    pub name: String,
    pub result: Result<RunOutcome, RunError>,
    pub wall_seconds: f64,
}

impl SummaryRow {
    pub fn failed(&self) -> bool {
        self.result.is_err()
    }
}

fn opt_g(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| fmt_g(v, 6))
}

pub fn write_table<W: Write>(rows: &[SummaryRow], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "{:<20} {:>10} {:>14} {:>12} {:>9}  status",
        "name", "lambda1", "final_mass", "fitted_rate", "wall_s"
    )?;
    for row in rows {
        let (l1, mass, rate, status) = match &row.result {
            Ok(o) => (
                opt_g(o.lambda1()),
                fmt_g(o.manifest.final_mass, 6),
                opt_g(o.fitted_rate()),
                "ok".to_string(),
            ),
            Err(e) => ("n/a".into(), "n/a".into(), "n/a".into(), format!("FAILED ({e})")),
        };
        writeln!(
            out,
            "{:<20} {:>10} {:>14} {:>12} {:>9.3}  {status}",
            row.name, l1, mass, rate, row.wall_seconds
        )?;
    }
    Ok(())
}

fn thread_count(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0);
    cap.unwrap_or(jobs).min(jobs).max(1)
}

/// Runs every `*.json` in `dir` (sorted by file name). Each scenario writes to
/// `<out_root>/<name>`; rows come back in input order.
pub fn run_all(dir: &Path, opts: &RunOptions) -> Result<Vec<SummaryRow>, RunError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| RunError::Invalid(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let out_root = opts.out.clone().unwrap_or_else(|| PathBuf::from("results"));

    let mut seen = std::collections::HashSet::new();
    let parsed: Vec<(PathBuf, String, Result<Scenario, RunError>)> = files
        .into_iter()
        .map(|file| {
            let stem = file
                .file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            match load_scenario(&file) {
                Ok(mut sc) => {
                    sc.apply_overrides(opts);
                    let name = sc.name.clone();
                    if seen.insert(name.clone()) {
                        (file, name, Ok(sc))
                    } else {
                        (
                            file,
                            name.clone(),
                            Err(RunError::Invalid(format!("duplicate scenario name {name:?}"))),
                        )
                    }
                }
                Err(e) => (file, stem, Err(e)),
            }
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(parsed.len()))
        .build()
        .map_err(|e| RunError::Io(e.to_string()))?;
    let rows = pool.install(|| {
        parsed
            .into_par_iter()
            .map(|(file, name, sc)| {
                let start = Instant::now();
                let result = sc.and_then(|sc| {
                    let outcome = execute(&sc, opts.dump_generator)?;
                    write_outputs(&outcome, &out_root.join(&sc.name))?;
                    Ok(outcome)
                });
                SummaryRow {
                    file,
                    name,
                    result,
                    wall_seconds: start.elapsed().as_secs_f64(),
                }
            })
            .collect()
    });
    Ok(rows)
}
