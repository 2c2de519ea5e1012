//! Experiment harness: macro-replicated solver comparisons under common
//! random numbers, budget-indexed progress curves with holdout
//! post-evaluation, selection-frequency reports, and hyperparameter sweeps.
//!
//! All outputs are plain CSV plus a TOML manifest echoing the configuration
//! and master seed; identical seeds reproduce byte-identical files.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::conv::{ConcomitantCandidate, ConvMode, ConvStrataBuilder};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::rng::RandomStream;
use crate::solver::{run, RunResult, SolverConfig, StrataMode};
use crate::strata::{Covariate, CovariateSource, NoStrataBuilder, StrataBuilder, Transform};
use crate::tree::TreeStrataBuilder;
use crate::wake::{
    generate_synthetic_dataset, quadratic_dataset, two_regime_dataset, wake_real_candidates,
    wake_simulated_candidates, wake_tree_variables, FarmLayout, QuadraticProblem,
    TwoRegimeProblem, WakeProblem, REFERENCE_DECAY,
};

fn default_problem() -> String {
    "wake".into()
}
fn default_modes() -> Vec<String> {
    vec!["ns".into(), "bt".into(), "conv-r".into(), "conv-s".into()]
}
fn default_macroreps() -> usize {
    20
}
fn default_seed() -> u64 {
    20240 // arbitrary fixed default so bare runs reproduce
}
fn default_budget() -> usize {
    10_000
}
fn default_theta0() -> Vec<f64> {
    vec![0.1]
}
fn default_delta0() -> f64 {
    0.08
}
fn default_lambda0() -> usize {
    80
}
fn default_kappa() -> f64 {
    1.0
}
fn default_eta() -> f64 {
    0.1
}
fn default_gamma_inc() -> f64 {
    1.5
}
fn default_gamma_dec() -> f64 {
    0.5
}
fn default_tau() -> usize {
    5
}
fn default_z_max() -> usize {
    4
}
fn default_boundary_epsilon() -> f64 {
    1e-6
}
fn default_rho_screen() -> f64 {
    0.1
}
fn default_n_boot() -> usize {
    50
}
fn default_split_fraction() -> f64 {
    0.7
}
fn default_n_points() -> usize {
    20_000
}
fn default_noise_scale() -> f64 {
    1.0
}
fn default_theta_star() -> f64 {
    0.05
}
fn default_quad_noise() -> f64 {
    0.1
}
fn default_checkpoints() -> usize {
    21
}
fn default_turbine_grid() -> (usize, usize) {
    (5, 2)
}
fn default_rotor_radius() -> f64 {
    40.0
}
fn default_thrust_coefficient() -> f64 {
    0.8
}
fn default_cut_in() -> f64 {
    3.0
}
fn default_rated() -> f64 {
    16.0
}
fn default_cut_out() -> f64 {
    25.0
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

/// Experiment configuration; the flat key-value config file mirrors these
/// fields one to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_problem")]
    pub problem: String,
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(default = "default_macroreps")]
    pub macroreps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_theta0")]
    pub theta0: Vec<f64>,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0: usize,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_gamma_inc")]
    pub gamma_inc: f64,
    #[serde(default = "default_gamma_dec")]
    pub gamma_dec: f64,
    /// Per-evaluation sample cap; defaults to `ceil(0.05 * budget)`.
    #[serde(default)]
    pub n_max: Option<usize>,
    /// Trust-region radius ceiling; defaults to `10 * delta0`.
    #[serde(default)]
    pub delta_max: Option<f64>,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_z_max")]
    pub z_max: usize,
    #[serde(default = "default_boundary_epsilon")]
    pub boundary_epsilon: f64,
    #[serde(default = "default_rho_screen")]
    pub rho_screen: f64,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
    /// Synthetic dataset size (ignored when `data_csv` is given).
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    /// Noise multiplier for the wake generator.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// Ground-truth wake decay planted in the synthetic data.
    #[serde(default = "default_theta_star")]
    pub theta_star: f64,
    /// Noise level of the quadratic test problem.
    #[serde(default = "default_quad_noise")]
    pub quad_noise: f64,
    /// Load the dataset from this CSV instead of generating it.
    #[serde(default)]
    pub data_csv: Option<PathBuf>,
    /// Export the (generated or loaded) dataset as `dataset.csv` in the run
    /// directory.
    #[serde(default)]
    pub export_data: bool,
    /// Farm layout of the wake benchmark: turbine grid (columns, rows) at
    /// ten rotor radii spacing, rotor radius in meters, thrust coefficient,
    /// and the power-curve speeds in m/s.
    #[serde(default = "default_turbine_grid")]
    pub turbine_grid: (usize, usize),
    #[serde(default = "default_rotor_radius")]
    pub rotor_radius: f64,
    #[serde(default = "default_thrust_coefficient")]
    pub thrust_coefficient: f64,
    #[serde(default = "default_cut_in")]
    pub cut_in: f64,
    #[serde(default = "default_rated")]
    pub rated: f64,
    #[serde(default = "default_cut_out")]
    pub cut_out: f64,
    /// Number of evenly spaced budget checkpoints in the summary.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes to defaults")
    }
}

impl ExperimentConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN inputs too
    pub fn farm_layout(&self) -> Result<FarmLayout> {
        let (cols, rows) = self.turbine_grid;
        if cols * rows < 1 {
            return Err(Error::Config("turbine grid must hold a turbine".into()));
        }
        if !(self.rotor_radius > 0.0) {
            return Err(Error::Config("rotor radius must be positive".into()));
        }
        if !(self.thrust_coefficient > 0.0 && self.thrust_coefficient < 1.0) {
            return Err(Error::Config("thrust coefficient must lie in (0, 1)".into()));
        }
        if !(self.cut_in < self.rated && self.rated <= self.cut_out) {
            return Err(Error::Config(
                "need cut_in < rated <= cut_out".into(),
            ));
        }
        let spacing = 10.0 * self.rotor_radius;
        let mut positions = Vec::with_capacity(cols * rows);
        for col in 0..cols {
            for row in 0..rows {
                positions.push((col as f64 * spacing, row as f64 * spacing));
            }
        }
        Ok(FarmLayout {
            positions,
            rotor_radius: self.rotor_radius,
            thrust_coefficient: self.thrust_coefficient,
            cut_in: self.cut_in,
            rated: self.rated,
            cut_out: self.cut_out,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn parsed_modes(&self) -> Result<Vec<StrataMode>> {
        self.modes.iter().map(|m| StrataMode::parse(m)).collect()
    }

    pub fn solver_config(&self, mode: StrataMode) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.theta0.clone(), self.delta0, self.budget);
        cfg.lambda0 = self.lambda0;
        cfg.kappa = self.kappa;
        cfg.eta = self.eta;
        cfg.gamma_inc = self.gamma_inc;
        cfg.gamma_dec = self.gamma_dec;
        if let Some(n_max) = self.n_max {
            cfg.n_max = n_max;
        }
        if let Some(delta_max) = self.delta_max {
            cfg.delta_max = delta_max;
        }
        cfg.strata_mode = mode;
        cfg.tau = self.tau;
        cfg.z_max = self.z_max;
        cfg.boundary_epsilon = self.boundary_epsilon;
        cfg.rho_screen = self.rho_screen;
        cfg.n_boot = self.n_boot;
        cfg
    }

    /// Evenly spaced budget checkpoints, including 0 and the full budget.
    pub fn checkpoint_grid(&self) -> Vec<usize> {
        checkpoint_grid(self.budget, self.checkpoints)
    }
}

pub fn checkpoint_grid(budget: usize, count: usize) -> Vec<usize> {
    if count <= 1 {
        return vec![budget];
    }
    (0..count)
        .map(|i| ((budget as f64) * i as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

/// A problem instance with its dataset and stratification wiring.
pub struct ProblemSetup {
    pub problem: Box<dyn Problem + Send + Sync>,
    pub dataset: Dataset,
    pub tree_variables: Vec<usize>,
    pub real_candidates: Vec<ConcomitantCandidate>,
    pub simulated_candidates: Vec<ConcomitantCandidate>,
}

/// Instantiates the registered problem named by the config, generating or
/// loading its dataset.
pub fn build_problem(config: &ExperimentConfig) -> Result<ProblemSetup> {
    let mut data_stream = RandomStream::derive(config.seed, 0, "data");
    let identity = |i: usize| Covariate {
        source: CovariateSource::RealInput(i),
        transform: Transform::Identity,
    };
    match config.problem.as_str() {
        "wake" => {
            let layout = config.farm_layout()?;
            let dataset = match &config.data_csv {
                Some(path) => Dataset::from_csv_path(path)?,
                None => generate_synthetic_dataset(
                    &layout,
                    config.n_points,
                    config.theta_star,
                    config.noise_scale,
                    &mut data_stream,
                ),
            };
            Ok(ProblemSetup {
                problem: Box::new(WakeProblem::new(layout)),
                dataset,
                tree_variables: wake_tree_variables(),
                real_candidates: wake_real_candidates(),
                simulated_candidates: wake_simulated_candidates(),
            })
        }
        "quad" => Ok(ProblemSetup {
            problem: Box::new(QuadraticProblem::new(config.quad_noise)),
            dataset: quadratic_dataset(config.n_points, &mut data_stream),
            tree_variables: vec![0],
            real_candidates: vec![ConcomitantCandidate::new("x1", identity(0))],
            simulated_candidates: vec![ConcomitantCandidate::new(
                "noise_input",
                Covariate {
                    source: CovariateSource::SimulatedAux(0),
                    transform: Transform::Identity,
                },
            )],
        }),
        "two-regime" => Ok(ProblemSetup {
            problem: Box::new(TwoRegimeProblem),
            dataset: two_regime_dataset(config.n_points, &mut data_stream),
            tree_variables: vec![0],
            real_candidates: vec![
                ConcomitantCandidate::new("x1", identity(0)),
                ConcomitantCandidate::new(
                    "x1^2",
                    Covariate {
                        source: CovariateSource::RealInput(0),
                        transform: Transform::Square,
                    },
                ),
            ],
            simulated_candidates: Vec::new(),
        }),
        other => Err(Error::Config(format!("unknown problem `{other}`"))),
    }
}

/// Builds the strata strategy for one solver run.
pub fn make_builder(
    mode: StrataMode,
    setup: &ProblemSetup,
    cfg: &SolverConfig,
) -> Box<dyn StrataBuilder> {
    match mode {
        StrataMode::None => Box::new(NoStrataBuilder),
        StrataMode::Tree => Box::new(TreeStrataBuilder {
            tau: cfg.tau,
            variables: Some(setup.tree_variables.clone()),
        }),
        StrataMode::ConvReal => Box::new(ConvStrataBuilder::new(
            ConvMode::Real,
            setup.real_candidates.clone(),
            cfg.z_max,
            cfg.boundary_epsilon,
            cfg.rho_screen,
            cfg.n_boot,
        )),
        StrataMode::ConvSim => Box::new(ConvStrataBuilder::new(
            ConvMode::Simulated,
            setup.simulated_candidates.clone(),
            cfg.z_max,
            cfg.boundary_epsilon,
            cfg.rho_screen,
            cfg.n_boot,
        )),
    }
}

/// One point of a progress curve.
#[derive(Debug, Clone)]
pub struct ProgressRecord {
    pub macro_rep: usize,
    pub mode: StrataMode,
    pub calls: usize,
    pub theta: Vec<f64>,
    pub holdout: f64,
}

/// Aggregated holdout objective at one budget checkpoint.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub mode: StrataMode,
    pub checkpoint: usize,
    pub mean: f64,
    pub ci_half_width: f64,
    pub n_reps: usize,
}

/// Mean selection count of one concomitant candidate across macro-reps.
#[derive(Debug, Clone)]
pub struct SelectionRow {
    pub mode: StrataMode,
    pub candidate: String,
    pub mean_count: f64,
    pub std_error: f64,
    pub n_reps: usize,
}

/// Full deterministic pass over the validation set; consumes no budget.
/// Accumulates exactly like the SAA estimator.
pub fn post_evaluate(problem: &dyn Problem, theta: &[f64], validation: &Dataset) -> f64 {
    let mut stats = crate::stats::RunningStats::new();
    for point in validation.points() {
        stats.push(problem.evaluate(theta, point).0);
    }
    stats.mean()
}

/// Latest-at-or-before-checkpoint aggregation with a t-distribution 95%
/// confidence interval across macro-reps. Modes with fewer than two
/// successful reps are omitted.
pub fn summarize(records: &[ProgressRecord], checkpoints: &[usize]) -> Vec<SummaryRow> {
    type Series = BTreeMap<usize, Vec<(usize, f64)>>;
    let mut by_mode: BTreeMap<&'static str, Series> = BTreeMap::new();
    for r in records {
        by_mode
            .entry(r.mode.name())
            .or_default()
            .entry(r.macro_rep)
            .or_default()
            .push((r.calls, r.holdout));
    }
    let mut rows = Vec::new();
    for (mode_name, reps) in &by_mode {
        let mode = StrataMode::parse(mode_name).expect("mode names round-trip");
        if reps.len() < 2 {
            continue;
        }
        for &checkpoint in checkpoints {
            let mut values = Vec::new();
            for series in reps.values() {
                // Records arrive in call order per (rep, mode) series.
                if let Some(&(_, holdout)) =
                    series.iter().rev().find(|(calls, _)| *calls <= checkpoint)
                {
                    values.push(holdout);
                }
            }
            if values.len() < 2 {
                continue;
            }
            let m = values.len() as f64;
            let mean = values.iter().sum::<f64>() / m;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
            let t = StudentsT::new(0.0, 1.0, m - 1.0)
                .expect("valid dof")
                .inverse_cdf(0.975);
            rows.push(SummaryRow {
                mode,
                checkpoint,
                mean,
                ci_half_width: t * (var / m).sqrt(),
                n_reps: values.len(),
            });
        }
    }
    rows
}

/// One strata-construction event, as logged.
#[derive(Debug, Clone)]
pub struct StrataLogRow {
    pub macro_rep: usize,
    pub mode: StrataMode,
    pub iteration: usize,
    pub eval: String,
    pub delta: f64,
    pub n: usize,
    pub lambda: usize,
    pub strata_count: usize,
    pub stop: &'static str,
    pub std_error: Option<f64>,
    pub threshold: f64,
    pub provenance: &'static str,
    pub candidate: Option<String>,
    pub variance_ratio: Option<f64>,
    pub structure: String,
}

/// Counts how often each candidate was selected per macro-rep (one count per
/// structure-build event) and reports the mean and standard error across
/// macro-reps, separately per mode.
pub fn selection_frequency_report(rows: &[StrataLogRow]) -> Vec<SelectionRow> {
    // mode -> candidate -> rep -> count
    let mut acc: BTreeMap<&'static str, BTreeMap<String, BTreeMap<usize, usize>>> =
        BTreeMap::new();
    let mut reps_per_mode: BTreeMap<&'static str, std::collections::BTreeSet<usize>> =
        BTreeMap::new();
    for row in rows {
        reps_per_mode
            .entry(row.mode.name())
            .or_default()
            .insert(row.macro_rep);
        if let Some(cand) = &row.candidate {
            *acc.entry(row.mode.name())
                .or_default()
                .entry(cand.clone())
                .or_default()
                .entry(row.macro_rep)
                .or_insert(0) += 1;
        }
    }
    let mut out = Vec::new();
    for (mode_name, candidates) in &acc {
        let mode = StrataMode::parse(mode_name).expect("mode names round-trip");
        let reps = &reps_per_mode[mode_name];
        let m = reps.len();
        for (candidate, counts) in candidates {
            let values: Vec<f64> = reps
                .iter()
                .map(|rep| *counts.get(rep).unwrap_or(&0) as f64)
                .collect();
            let mean = values.iter().sum::<f64>() / m as f64;
            let std_error = if m >= 2 {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (m as f64 - 1.0);
                (var / m as f64).sqrt()
            } else {
                0.0
            };
            out.push(SelectionRow {
                mode,
                candidate: candidate.clone(),
                mean_count: mean,
                std_error,
                n_reps: m,
            });
        }
    }
    out
}

/// Everything one experiment produces, before CSV serialization.
pub struct RunArtifacts {
    pub progress: Vec<ProgressRecord>,
    pub summary: Vec<SummaryRow>,
    pub strata_log: Vec<StrataLogRow>,
    pub selection: Vec<SelectionRow>,
    /// `(macro_rep, mode, diagnostic)` of failed runs.
    pub failures: Vec<(usize, String, String)>,
    /// Per-(rep, mode) run results, in deterministic order.
    pub runs: Vec<(usize, StrataMode, RunResult)>,
}

/// Runs every (macro-rep, mode) cell under common random numbers and writes
/// `progress.csv`, `summary.csv`, `strata_log.csv`, `selection_freq.csv`,
/// and `manifest.toml` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let modes = config.parsed_modes()?;
    if config.macroreps == 0 {
        return Err(Error::Config("need at least one macro-replication".into()));
    }
    std::fs::create_dir_all(&config.out_dir)?;
    let setup = build_problem(config)?;
    if config.export_data {
        setup.dataset.to_csv_path(config.out_dir.join("dataset.csv"))?;
    }
    let artifacts = execute(config, &setup, &modes)?;
    write_artifacts(config, &artifacts)?;
    Ok(artifacts)
}

/// Runs the experiment without touching the filesystem.
/// `(calls, theta, holdout)` points of one run's trajectory.
type Holdouts = Vec<(usize, Vec<f64>, f64)>;
type RepOutcome = Vec<(StrataMode, std::result::Result<(RunResult, Holdouts), String>)>;

pub fn execute(
    config: &ExperimentConfig,
    setup: &ProblemSetup,
    modes: &[StrataMode],
) -> Result<RunArtifacts> {
    let rep_results: Vec<RepOutcome> = (0..config.macroreps)
        .into_par_iter()
        .map(|rep| {
            let mut split_stream = RandomStream::derive(config.seed, rep as u64, "split");
            let (modeling, validation) = setup
                .dataset
                .split(&mut split_stream, config.split_fraction)
                .expect("dataset splits");
            modes
                .iter()
                .map(|&mode| {
                    let solver_cfg = config.solver_config(mode);
                    let builder = make_builder(mode, setup, &solver_cfg);
                    let mut draw_stream =
                        RandomStream::derive(config.seed, rep as u64, "draws");
                    let mut strata_stream =
                        RandomStream::derive(config.seed, rep as u64, "strata");
                    let outcome = catch_unwind(AssertUnwindSafe(|| {
                        run(
                            setup.problem.as_ref(),
                            &modeling,
                            &solver_cfg,
                            builder.as_ref(),
                            &mut draw_stream,
                            &mut strata_stream,
                        )
                    }));
                    let result = match outcome {
                        Ok(Ok(result)) => {
                            let holdouts: Holdouts = result
                                .trajectory
                                .iter()
                                .map(|(calls, theta)| {
                                    let h =
                                        post_evaluate(setup.problem.as_ref(), theta, &validation);
                                    (*calls, theta.clone(), h)
                                })
                                .collect();
                            Ok((result, holdouts))
                        }
                        Ok(Err(e)) => Err(e.to_string()),
                        Err(_) => Err("solver panic".to_string()),
                    };
                    (mode, result)
                })
                .collect()
        })
        .collect();

    let mut artifacts = RunArtifacts {
        progress: Vec::new(),
        summary: Vec::new(),
        strata_log: Vec::new(),
        selection: Vec::new(),
        failures: Vec::new(),
        runs: Vec::new(),
    };
    for (rep, rep_outcome) in rep_results.into_iter().enumerate() {
        for (mode, outcome) in rep_outcome {
            match outcome {
                Ok((result, holdouts)) => {
                    for (calls, theta, holdout) in holdouts {
                        artifacts.progress.push(ProgressRecord {
                            macro_rep: rep,
                            mode,
                            calls,
                            theta,
                            holdout,
                        });
                    }
                    for it in &result.iterations {
                        for ev in &it.evals {
                            artifacts.strata_log.push(StrataLogRow {
                                macro_rep: rep,
                                mode,
                                iteration: it.k,
                                eval: ev.kind.label(),
                                delta: it.delta,
                                n: ev.n,
                                lambda: ev.lambda,
                                strata_count: ev.strata_count,
                                stop: ev.stop.as_str(),
                                std_error: ev.std_error,
                                threshold: ev.threshold,
                                provenance: ev.provenance,
                                candidate: ev.candidate.clone(),
                                variance_ratio: ev.variance_ratio,
                                structure: ev.structure_desc.clone(),
                            });
                        }
                    }
                    artifacts.runs.push((rep, mode, result));
                }
                Err(diag) => {
                    artifacts
                        .failures
                        .push((rep, mode.name().to_string(), diag));
                }
            }
        }
    }
    let checkpoints = config.checkpoint_grid();
    artifacts.summary = summarize(&artifacts.progress, &checkpoints);
    artifacts.selection = selection_frequency_report(&artifacts.strata_log);
    Ok(artifacts)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_theta(theta: &[f64]) -> String {
    theta
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes the four CSV files and the manifest.
pub fn write_artifacts(config: &ExperimentConfig, artifacts: &RunArtifacts) -> Result<()> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("progress.csv"))?;
    w.write_record(["macrorep", "mode", "calls", "theta", "holdout"])?;
    for r in &artifacts.progress {
        w.write_record([
            r.macro_rep.to_string(),
            r.mode.name().to_string(),
            r.calls.to_string(),
            fmt_theta(&r.theta),
            fmt_f64(r.holdout),
        ])?;
    }
    w.flush()?;

    write_summary_csv(&dir.join("summary.csv"), &artifacts.summary)?;

    let mut w = csv::Writer::from_path(dir.join("strata_log.csv"))?;
    w.write_record([
        "macrorep",
        "mode",
        "iteration",
        "eval",
        "delta",
        "n",
        "lambda",
        "strata",
        "stop",
        "std_error",
        "threshold",
        "provenance",
        "candidate",
        "variance_ratio",
        "structure",
    ])?;
    for r in &artifacts.strata_log {
        w.write_record([
            r.macro_rep.to_string(),
            r.mode.name().to_string(),
            r.iteration.to_string(),
            r.eval.clone(),
            fmt_f64(r.delta),
            r.n.to_string(),
            r.lambda.to_string(),
            r.strata_count.to_string(),
            r.stop.to_string(),
            r.std_error.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.threshold),
            r.provenance.to_string(),
            r.candidate.clone().unwrap_or_default(),
            r.variance_ratio.map(fmt_f64).unwrap_or_default(),
            r.structure.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("selection_freq.csv"))?;
    w.write_record(["mode", "candidate", "mean_count", "std_error", "n_reps"])?;
    for r in &artifacts.selection {
        w.write_record([
            r.mode.name().to_string(),
            r.candidate.clone(),
            fmt_f64(r.mean_count),
            fmt_f64(r.std_error),
            r.n_reps.to_string(),
        ])?;
    }
    w.flush()?;

    write_manifest(config, artifacts, &dir.join("manifest.toml"))?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    reference_decay: f64,
    config: &'a ExperimentConfig,
    failed_runs: Vec<String>,
}

fn write_manifest(
    config: &ExperimentConfig,
    artifacts: &RunArtifacts,
    path: &Path,
) -> Result<()> {
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        reference_decay: REFERENCE_DECAY,
        config,
        failed_runs: artifacts
            .failures
            .iter()
            .map(|(rep, mode, diag)| format!("rep {rep} mode {mode}: {diag}"))
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes `summary.csv` rows.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "checkpoint", "mean_holdout", "ci_half_width", "n_reps"])?;
    for r in rows {
        w.write_record([
            r.mode.name().to_string(),
            r.checkpoint.to_string(),
            fmt_f64(r.mean),
            fmt_f64(r.ci_half_width),
            r.n_reps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `progress.csv` back into records (for `report`).
pub fn read_progress_csv<P: AsRef<Path>>(path: P) -> Result<Vec<ProgressRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let parse_err = |field: &str| Error::Config(format!("bad progress.csv field `{field}`"));
        let theta: std::result::Result<Vec<f64>, _> = record[3]
            .split(';')
            .map(|v| v.parse::<f64>().map_err(|_| parse_err("theta")))
            .collect();
        out.push(ProgressRecord {
            macro_rep: record[0].parse().map_err(|_| parse_err("macrorep"))?,
            mode: StrataMode::parse(&record[1])?,
            calls: record[2].parse().map_err(|_| parse_err("calls"))?,
            theta: theta?,
            holdout: record[4].parse().map_err(|_| parse_err("holdout"))?,
        });
    }
    Ok(out)
}

/// One hyperparameter perturbed to one value, other parameters at baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepCell {
    Baseline,
    Theta0(f64),
    Delta0(f64),
    Lambda0(usize),
}

impl SweepCell {
    pub fn label(&self) -> String {
        match self {
            SweepCell::Baseline => "baseline".into(),
            SweepCell::Theta0(v) => format!("theta0-{v}"),
            SweepCell::Delta0(v) => format!("delta0-{v}"),
            SweepCell::Lambda0(v) => format!("lambda0-{v}"),
        }
    }

    fn apply(&self, config: &mut ExperimentConfig) {
        match self {
            SweepCell::Baseline => {}
            SweepCell::Theta0(v) => config.theta0 = vec![*v],
            SweepCell::Delta0(v) => config.delta0 = *v,
            SweepCell::Lambda0(v) => config.lambda0 = *v,
        }
    }
}

/// Grid over subsets of `{theta0, delta0, lambda0}`, each varied on its own.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub theta0: Vec<f64>,
    pub delta0: Vec<f64>,
    pub lambda0: Vec<usize>,
}

impl SweepGrid {
    /// Parses `"theta0=0.02,0.2;delta0=0.04,0.16;lambda0=40,80"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut grid = SweepGrid::default();
        for part in spec.split(';').filter(|p| !p.trim().is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad grid entry `{part}`")))?;
            let nums: std::result::Result<Vec<f64>, Error> = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad grid value `{v}`")))
                })
                .collect();
            let nums = nums?;
            match key.trim() {
                "theta0" => grid.theta0 = nums,
                "delta0" => grid.delta0 = nums,
                "lambda0" => grid.lambda0 = nums.iter().map(|&v| v as usize).collect(),
                other => return Err(Error::Config(format!("unknown grid key `{other}`"))),
            }
        }
        Ok(grid)
    }

    pub fn is_empty(&self) -> bool {
        self.theta0.is_empty() && self.delta0.is_empty() && self.lambda0.is_empty()
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        if self.is_empty() {
            return vec![SweepCell::Baseline];
        }
        let mut cells = Vec::new();
        for &v in &self.theta0 {
            cells.push(SweepCell::Theta0(v));
        }
        for &v in &self.delta0 {
            cells.push(SweepCell::Delta0(v));
        }
        for &v in &self.lambda0 {
            cells.push(SweepCell::Lambda0(v));
        }
        cells
    }
}

/// Terminal-value error-bar data for one sweep cell and mode.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub cell: String,
    pub mode: StrataMode,
    pub mean_terminal: f64,
    pub ci_half_width: f64,
    pub n_reps: usize,
}

/// Runs one experiment per grid cell (each parameter perturbed alone, others
/// at baseline) under per-cell subdirectories, and writes
/// `sweep_summary.csv` with terminal error bars.
pub fn sweep(config: &ExperimentConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let base_dir = config.out_dir.clone();
    std::fs::create_dir_all(&base_dir)?;
    let mut rows = Vec::new();
    for cell in grid.cells() {
        let mut cell_config = config.clone();
        cell.apply(&mut cell_config);
        cell_config.out_dir = base_dir.join(cell.label());
        let artifacts = run_experiment(&cell_config)?;
        // Terminal holdout per (rep, mode): the last record of each series.
        let mut terminal: BTreeMap<&'static str, BTreeMap<usize, f64>> = BTreeMap::new();
        for r in &artifacts.progress {
            terminal
                .entry(r.mode.name())
                .or_default()
                .insert(r.macro_rep, r.holdout);
        }
        for (mode_name, by_rep) in &terminal {
            let values: Vec<f64> = by_rep.values().copied().collect();
            let m = values.len() as f64;
            let mean = values.iter().sum::<f64>() / m;
            let ci = if values.len() >= 2 {
                let var =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
                StudentsT::new(0.0, 1.0, m - 1.0)
                    .expect("valid dof")
                    .inverse_cdf(0.975)
                    * (var / m).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                cell: cell.label(),
                mode: StrataMode::parse(mode_name).expect("round-trip"),
                mean_terminal: mean,
                ci_half_width: ci,
                n_reps: values.len(),
            });
        }
    }
    let mut w = csv::Writer::from_path(base_dir.join("sweep_summary.csv"))?;
    w.write_record(["cell", "mode", "mean_terminal", "ci_half_width", "n_reps"])?;
    for r in &rows {
        w.write_record([
            r.cell.clone(),
            r.mode.name().to_string(),
            fmt_f64(r.mean_terminal),
            fmt_f64(r.ci_half_width),
            r.n_reps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
