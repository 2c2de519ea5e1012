//! Derivative-free trust-region solver with post-stratified adaptive
//! sampling.
//!
//! Each iteration estimates the incumbent, the 2d coordinate-basis points,
//! and the model minimizer with independently built stratification
//! structures.
//! Every estimate runs a pilot of `lambda_k = ceil(lambda0 * ln(k+1)^1.5)`
//! simulations (never below `lambda0`), builds its structure from the pilot,
//! then adds one i.i.d. draw at a time until the post-stratified standard
//! error drops to `kappa * delta_k^2 / sqrt(lambda_k)`.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::rng::RandomStream;
use crate::strata::{
    post_stratified_estimate, Observation, PostStratifiedEstimate, StrataBuild, StrataBuilder,
    StratificationStructure, StratumStats,
};

/// Which strata-construction strategy a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrataMode {
    None,
    Tree,
    ConvReal,
    ConvSim,
}

impl StrataMode {
    pub fn name(&self) -> &'static str {
        match self {
            StrataMode::None => "ns",
            StrataMode::Tree => "bt",
            StrataMode::ConvReal => "conv-r",
            StrataMode::ConvSim => "conv-s",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ns" | "none" => Ok(StrataMode::None),
            "bt" | "tree" => Ok(StrataMode::Tree),
            "conv-r" | "convr" => Ok(StrataMode::ConvReal),
            "conv-s" | "convs" => Ok(StrataMode::ConvSim),
            other => Err(Error::Config(format!("unknown strata mode `{other}`"))),
        }
    }

    pub fn all() -> [StrataMode; 4] {
        [
            StrataMode::None,
            StrataMode::Tree,
            StrataMode::ConvReal,
            StrataMode::ConvSim,
        ]
    }
}

/// Solver hyperparameters, including the strata-construction knobs.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub theta0: Vec<f64>,
    pub delta0: f64,
    /// Minimum (and initial) pilot sample size.
    pub lambda0: usize,
    /// Standard-error threshold multiplier in the stopping rule.
    pub kappa: f64,
    /// Success-ratio acceptance threshold.
    pub eta: f64,
    pub gamma_inc: f64,
    pub gamma_dec: f64,
    pub delta_max: f64,
    /// Per-evaluation cap on the adaptive sample size.
    pub n_max: usize,
    /// Total simulation budget.
    pub budget: usize,
    pub strata_mode: StrataMode,
    /// Minimum tree leaf size.
    pub tau: usize,
    pub z_max: usize,
    /// Fixed-point tolerance for concomitant boundaries.
    pub boundary_epsilon: f64,
    /// Residual-correlation screen for candidate selection.
    pub rho_screen: f64,
    pub n_boot: usize,
}

impl SolverConfig {
    pub fn new(theta0: Vec<f64>, delta0: f64, budget: usize) -> Self {
        Self {
            theta0,
            delta0,
            lambda0: 80,
            kappa: 1.0,
            eta: 0.1,
            gamma_inc: 1.5,
            gamma_dec: 0.5,
            delta_max: 10.0 * delta0,
            n_max: (0.05 * budget as f64).ceil() as usize,
            budget,
            strata_mode: StrataMode::None,
            tau: 5,
            z_max: 4,
            boundary_epsilon: 1e-6,
            rho_screen: 0.1,
            n_boot: 50,
        }
    }

    // Negated comparisons are deliberate: they also reject NaN inputs.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0) {
            return Err(Error::Config("delta0 must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config("eta must lie in (0, 1)".into()));
        }
        if !(self.gamma_dec < 1.0 && 1.0 < self.gamma_inc) {
            return Err(Error::Config(
                "need gamma_dec < 1 < gamma_inc".into(),
            ));
        }
        if self.lambda0 < 2 {
            return Err(Error::Config("lambda0 must be at least 2".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        if !(self.delta_max >= self.delta0) {
            return Err(Error::Config("delta_max must be >= delta0".into()));
        }
        if self.n_max < 2 {
            return Err(Error::Config("n_max must be at least 2".into()));
        }
        Ok(())
    }
}

/// Pilot size at iteration `k`: `max(lambda0, ceil(lambda0 * ln(k+1)^1.5))`.
///
/// The raw `log k` rule degenerates at k <= 1; shifting the argument keeps
/// the logarithmic growth while making `lambda0` the binding floor early on.
pub fn pilot_size(k: usize, lambda0: usize) -> usize {
    let grown = (lambda0 as f64 * ((k as f64 + 1.0).ln()).powf(1.5)).ceil();
    (grown as usize).max(lambda0)
}

/// Why one adaptive-sampling evaluation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ThresholdMet,
    CapHit,
    BudgetExhausted,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::ThresholdMet => "threshold-met",
            StopReason::CapHit => "cap-hit",
            StopReason::BudgetExhausted => "budget-exhausted",
        }
    }
}

/// Result of one adaptive-sampling evaluation.
#[derive(Debug, Clone)]
pub struct SamplingOutcome {
    /// Simulations actually spent (the budget decrement).
    pub n: usize,
    /// Target pilot size for this iteration.
    pub lambda: usize,
    /// Post-stratified estimate; absent only when fewer than two samples fit
    /// in the remaining budget.
    pub estimate: Option<PostStratifiedEstimate>,
    pub stop: StopReason,
    pub structure: StratificationStructure,
    pub candidate: Option<String>,
    pub variance_ratio: Option<f64>,
    /// Standard-error threshold `kappa * delta^2 / sqrt(lambda)`.
    pub threshold: f64,
    /// Standard error just before the final added point, when any point was
    /// added past the pilot.
    pub penultimate_se: Option<f64>,
}

/// Runs one post-stratified adaptive-sampling evaluation at `theta`.
///
/// The pilot (truncated at the remaining budget and at `n_max`) feeds the
/// strata builder; afterwards one i.i.d. draw is added at a time until the
/// standard error meets the threshold, the cap is reached, or the budget runs
/// out. Every simulation consumes exactly one unit of `budget_left`.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_sample(
    problem: &dyn Problem,
    dataset: &Dataset,
    theta: &[f64],
    delta: f64,
    iteration: usize,
    builder: &dyn StrataBuilder,
    budget_left: usize,
    config: &SolverConfig,
    draw_stream: &mut RandomStream,
    strata_stream: &mut RandomStream,
) -> SamplingOutcome {
    let lambda = pilot_size(iteration, config.lambda0);
    let threshold = config.kappa * delta * delta / (lambda as f64).sqrt();
    if budget_left == 0 {
        return SamplingOutcome {
            n: 0,
            lambda,
            estimate: None,
            stop: StopReason::BudgetExhausted,
            structure: StratificationStructure::trivial(),
            candidate: None,
            variance_ratio: None,
            threshold,
            penultimate_se: None,
        };
    }

    let pilot_target = lambda.min(config.n_max).min(budget_left);
    let mut observations = Vec::with_capacity(pilot_target);
    for _ in 0..pilot_target {
        let index = dataset.draw_index(draw_stream);
        let (loss, aux) = problem.evaluate(theta, dataset.point(index));
        debug_assert!(loss.is_finite(), "non-finite loss at point {index}");
        observations.push(Observation {
            dataset_index: index,
            loss,
            aux,
        });
    }

    let StrataBuild {
        structure,
        candidate,
        variance_ratio,
    } = builder.build(dataset, &observations, strata_stream);

    let mut per_stratum = vec![StratumStats::new(); structure.len()];
    for obs in &observations {
        let z = structure.stratum_of(dataset.point(obs.dataset_index), &obs.aux);
        per_stratum[z].push(obs.loss);
    }

    let mut n = observations.len();
    let mut budget_left = budget_left - n;
    let mut penultimate_se = None;
    let mut estimate = post_stratified_estimate(&structure, per_stratum.clone()).ok();
    let stop = loop {
        if n >= lambda {
            if let Some(est) = &estimate {
                if est.std_error() <= threshold {
                    break StopReason::ThresholdMet;
                }
            }
        }
        if n >= config.n_max {
            break StopReason::CapHit;
        }
        if budget_left == 0 {
            break StopReason::BudgetExhausted;
        }
        penultimate_se = estimate.as_ref().map(|e| e.std_error());
        let index = dataset.draw_index(draw_stream);
        let (loss, aux) = problem.evaluate(theta, dataset.point(index));
        debug_assert!(loss.is_finite(), "non-finite loss at point {index}");
        let z = structure.stratum_of(dataset.point(index), &aux);
        per_stratum[z].push(loss);
        n += 1;
        budget_left -= 1;
        estimate = post_stratified_estimate(&structure, per_stratum.clone()).ok();
    };

    SamplingOutcome {
        n,
        lambda,
        estimate,
        stop,
        structure,
        candidate,
        variance_ratio,
        threshold,
        penultimate_se,
    }
}

/// Estimated values flanking the incumbent along one coordinate axis, with
/// the actual (possibly clamped) offsets.
#[derive(Debug, Clone, Copy)]
pub struct AxisEstimates {
    pub plus_offset: f64,
    pub plus_value: f64,
    pub minus_offset: f64,
    pub minus_value: f64,
}

/// Diagonal quadratic interpolation model around the incumbent.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub center_value: f64,
    pub gradient: Vec<f64>,
    pub curvature: Vec<f64>,
    pub radius: f64,
    /// Some interpolation point was clamped to the domain boundary, so the
    /// axis spacing is uneven (or one-sided).
    pub clamped: bool,
}

impl LocalModel {
    pub fn value(&self, step: &[f64]) -> f64 {
        let mut v = self.center_value;
        for (i, &s) in step.iter().enumerate() {
            v += self.gradient[i] * s + 0.5 * self.curvature[i] * s * s;
        }
        v
    }
}

/// Interpolates the `2d + 1` estimates with a diagonal quadratic. Evenly
/// spaced axes use central differences; clamped axes fall back to the
/// unevenly spaced (or one-sided) formulas, which still reproduce the
/// supplied values exactly.
pub fn build_model(center_value: f64, axes: &[AxisEstimates], delta: f64) -> LocalModel {
    let mut gradient = Vec::with_capacity(axes.len());
    let mut curvature = Vec::with_capacity(axes.len());
    let mut clamped = false;
    for ax in axes {
        let (ap, am) = (ax.plus_offset, ax.minus_offset);
        if ap != delta || am != delta {
            clamped = true;
        }
        let dp = ax.plus_value - center_value;
        let dm = ax.minus_value - center_value;
        let (g, h) = if ap > 0.0 && am > 0.0 {
            let g = (dp * am * am - dm * ap * ap) / (ap * am * (ap + am));
            let h = 2.0 * (dp / ap + dm / am) / (ap + am);
            (g, h)
        } else if ap > 0.0 {
            (dp / ap, 0.0)
        } else if am > 0.0 {
            (-dm / am, 0.0)
        } else {
            (0.0, 0.0)
        };
        gradient.push(g);
        curvature.push(h);
    }
    LocalModel {
        center_value,
        gradient,
        curvature,
        radius: delta,
        clamped,
    }
}

/// Exact minimizer of the diagonal quadratic over the ball `|s| <= delta`.
///
/// The interior stationary point is used when it is feasible with positive
/// curvature; otherwise the boundary multiplier is found by monotone
/// bisection, with the usual hard-case correction along a most-negative
/// curvature axis. Returns the step and the (non-negative) predicted
/// reduction.
pub fn solve_subproblem(model: &LocalModel, delta: f64) -> (Vec<f64>, f64) {
    let g = &model.gradient;
    let h = &model.curvature;
    let d = g.len();
    let norm = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>().sqrt();
    let reduction = |s: &[f64]| {
        let q: f64 = s
            .iter()
            .zip(g.iter().zip(h))
            .map(|(&si, (&gi, &hi))| gi * si + 0.5 * hi * si * si)
            .sum();
        (-q).max(0.0)
    };

    let nu_lo = h.iter().fold(0.0f64, |m, &hi| m.max(-hi));
    if nu_lo == 0.0 {
        // Convex with nonnegative curvature: try the interior point.
        let mut interior = Some(vec![0.0; d]);
        if let Some(s) = interior.as_mut() {
            for i in 0..d {
                if h[i] > 0.0 {
                    s[i] = -g[i] / h[i];
                } else if g[i] != 0.0 {
                    interior = None;
                    break;
                }
            }
        }
        if let Some(s) = interior {
            if norm(&s) <= delta {
                let red = reduction(&s);
                return (s, red);
            }
        }
    }

    // Step as a function of the boundary multiplier.
    let step_at = |nu: f64| -> Vec<f64> {
        (0..d)
            .map(|i| {
                let denom = h[i] + nu;
                if denom > 0.0 {
                    -g[i] / denom
                } else {
                    0.0
                }
            })
            .collect()
    };
    // Norm diverges near nu_lo iff some axis at the critical curvature has a
    // gradient component; otherwise we may be in the hard case.
    let critical_gradient = (0..d).any(|i| h[i] + nu_lo == 0.0 && g[i] != 0.0);
    if !critical_gradient {
        let s_base = step_at(nu_lo);
        let base_norm = norm(&s_base);
        if base_norm < delta && nu_lo > 0.0 {
            // Hard case: pad along a most-negative-curvature axis.
            let j = (0..d)
                .find(|&i| h[i] + nu_lo == 0.0)
                .expect("nu_lo attained by some axis");
            let mut s = s_base;
            s[j] += (delta * delta - base_norm * base_norm).sqrt();
            let red = reduction(&s);
            return (s, red);
        }
        if base_norm <= delta {
            // nu_lo == 0 with a feasible limit step (flat axes carry no
            // gradient); this is the interior solution.
            let red = reduction(&s_base);
            return (s_base, red);
        }
    }

    // Bisection on ||s(nu)|| = delta over nu > nu_lo.
    let g_norm = norm(g);
    let mut hi = nu_lo.max(1e-12) * 2.0 + g_norm / delta + 1.0;
    while norm(&step_at(hi)) > delta {
        hi *= 2.0;
    }
    let mut lo = nu_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm(&step_at(mid)) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = step_at(hi);
    let red = reduction(&s);
    (s, red)
}

/// Incumbent, radius, iteration counter, and the budget ledger.
#[derive(Debug, Clone)]
pub struct TrustRegionState {
    pub theta: Vec<f64>,
    pub delta: f64,
    pub k: usize,
    pub calls: usize,
}

/// Which evaluation inside an iteration an [`EvalRecord`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    Incumbent,
    /// Coordinate-basis point `theta +/- delta * e_i`; sign is +1 or -1.
    Interpolation { coordinate: usize, sign: i8 },
    Candidate,
}

impl EvalKind {
    pub fn label(&self) -> String {
        match self {
            EvalKind::Incumbent => "incumbent".into(),
            EvalKind::Interpolation { coordinate, sign } => {
                format!("interp{}{}", if *sign > 0 { "+" } else { "-" }, coordinate)
            }
            EvalKind::Candidate => "candidate".into(),
        }
    }
}

/// Per-evaluation trace row.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub kind: EvalKind,
    pub n: usize,
    pub lambda: usize,
    pub strata_count: usize,
    pub stop: StopReason,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
    pub threshold: f64,
    pub provenance: &'static str,
    pub structure_desc: String,
    pub candidate: Option<String>,
    pub variance_ratio: Option<f64>,
}

impl EvalRecord {
    fn from_outcome(kind: EvalKind, outcome: &SamplingOutcome) -> Self {
        EvalRecord {
            kind,
            n: outcome.n,
            lambda: outcome.lambda,
            strata_count: outcome.structure.len(),
            stop: outcome.stop,
            mean: outcome.estimate.as_ref().map(|e| e.mean),
            std_error: outcome.estimate.as_ref().map(|e| e.std_error()),
            threshold: outcome.threshold,
            provenance: outcome.structure.provenance().as_str(),
            structure_desc: outcome.structure.describe(),
            candidate: outcome.candidate.clone(),
            variance_ratio: outcome.variance_ratio,
        }
    }
}

/// Per-iteration trace row.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    /// Incumbent and radius at the start of the iteration.
    pub theta: Vec<f64>,
    pub delta: f64,
    pub rho: Option<f64>,
    pub accepted: bool,
    /// The budget ran out mid-iteration; no accept/reject decision was made.
    pub abandoned: bool,
    pub calls_after: usize,
    pub evals: Vec<EvalRecord>,
}

/// Full run output: the recommendation trajectory and the iteration trace.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// `(cumulative calls, incumbent)` after every iteration, starting at
    /// `(0, theta0)`.
    pub trajectory: Vec<(usize, Vec<f64>)>,
    pub iterations: Vec<IterationRecord>,
    pub final_theta: Vec<f64>,
    pub total_calls: usize,
}

const MIN_PREDICTED_REDUCTION: f64 = 1e-14;

/// Executes one trust-region iteration, mutating `state` and returning the
/// trace record. Budget exhaustion inside any evaluation abandons the
/// iteration: the incumbent stands and only the spent budget is recorded.
#[allow(clippy::too_many_arguments)]
pub fn astrodf_step(
    problem: &dyn Problem,
    dataset: &Dataset,
    config: &SolverConfig,
    builder: &dyn StrataBuilder,
    state: &mut TrustRegionState,
    draw_stream: &mut RandomStream,
    strata_stream: &mut RandomStream,
) -> IterationRecord {
    let d = problem.theta_dim();
    let mut record = IterationRecord {
        k: state.k,
        theta: state.theta.clone(),
        delta: state.delta,
        rho: None,
        accepted: false,
        abandoned: false,
        calls_after: state.calls,
        evals: Vec::with_capacity(2 * d + 2),
    };
    let mut sample = |theta: &[f64], kind: EvalKind, state: &mut TrustRegionState| {
        let outcome = adaptive_sample(
            problem,
            dataset,
            theta,
            state.delta,
            state.k,
            builder,
            config.budget - state.calls,
            config,
            draw_stream,
            strata_stream,
        );
        state.calls += outcome.n;
        record.evals.push(EvalRecord::from_outcome(kind, &outcome));
        outcome
    };

    // Incumbent estimate.
    let incumbent = sample(&state.theta.clone(), EvalKind::Incumbent, state);
    if incumbent.stop == StopReason::BudgetExhausted {
        record.abandoned = true;
        record.calls_after = state.calls;
        return record;
    }
    let incumbent_mean = incumbent
        .estimate
        .as_ref()
        .expect("non-exhausted evaluation carries an estimate")
        .mean;

    // Coordinate-basis interpolation points, clamped into the domain.
    let bounds = problem.bounds();
    let mut axes = Vec::with_capacity(d);
    for i in 0..d {
        let mut plus = state.theta.clone();
        plus[i] = (plus[i] + state.delta).clamp(bounds[i].0, bounds[i].1);
        let plus_offset = plus[i] - state.theta[i];
        let plus_out = sample(&plus, EvalKind::Interpolation { coordinate: i, sign: 1 }, state);
        if plus_out.stop == StopReason::BudgetExhausted {
            record.abandoned = true;
            record.calls_after = state.calls;
            return record;
        }
        let mut minus = state.theta.clone();
        minus[i] = (minus[i] - state.delta).clamp(bounds[i].0, bounds[i].1);
        let minus_offset = state.theta[i] - minus[i];
        let minus_out = sample(&minus, EvalKind::Interpolation { coordinate: i, sign: -1 }, state);
        if minus_out.stop == StopReason::BudgetExhausted {
            record.abandoned = true;
            record.calls_after = state.calls;
            return record;
        }
        axes.push(AxisEstimates {
            plus_offset,
            plus_value: plus_out.estimate.as_ref().unwrap().mean,
            minus_offset,
            minus_value: minus_out.estimate.as_ref().unwrap().mean,
        });
    }

    let model = build_model(incumbent_mean, &axes, state.delta);
    let (step, _) = solve_subproblem(&model, state.delta);

    let candidate_theta: Vec<f64> = problem.clamp(
        &state
            .theta
            .iter()
            .zip(&step)
            .map(|(&t, &s)| t + s)
            .collect::<Vec<f64>>(),
    );
    // Predicted reduction at the step actually taken (the minimizer may have
    // been clamped back into the domain box).
    let actual_step: Vec<f64> = candidate_theta
        .iter()
        .zip(&state.theta)
        .map(|(&c, &t)| c - t)
        .collect();
    let predicted = incumbent_mean - model.value(&actual_step);

    if predicted <= MIN_PREDICTED_REDUCTION {
        // No usable model decrease; count the iteration unsuccessful.
        state.delta *= config.gamma_dec;
        state.k += 1;
        record.calls_after = state.calls;
        return record;
    }
    let candidate = sample(&candidate_theta, EvalKind::Candidate, state);
    if candidate.stop == StopReason::BudgetExhausted {
        record.abandoned = true;
        record.calls_after = state.calls;
        return record;
    }
    let candidate_mean = candidate.estimate.as_ref().unwrap().mean;

    let rho = (incumbent_mean - candidate_mean) / predicted;
    record.rho = Some(rho);
    if rho > config.eta {
        record.accepted = true;
        state.theta = candidate_theta;
        state.delta = (state.delta * config.gamma_inc).min(config.delta_max);
    } else {
        state.delta *= config.gamma_dec;
    }
    state.k += 1;
    record.calls_after = state.calls;
    record
}

/// Runs the trust-region loop until the budget is exhausted.
pub fn run(
    problem: &dyn Problem,
    dataset: &Dataset,
    config: &SolverConfig,
    builder: &dyn StrataBuilder,
    draw_stream: &mut RandomStream,
    strata_stream: &mut RandomStream,
) -> Result<RunResult> {
    config.validate()?;
    if config.theta0.len() != problem.theta_dim() {
        return Err(Error::Config("theta0 dimension mismatch".into()));
    }
    if !problem.contains(&config.theta0) {
        return Err(Error::Config("theta0 lies outside the domain".into()));
    }
    let mut state = TrustRegionState {
        theta: config.theta0.clone(),
        delta: config.delta0,
        k: 0,
        calls: 0,
    };
    let mut trajectory = vec![(0usize, state.theta.clone())];
    let mut iterations = Vec::new();
    while state.calls < config.budget {
        let record = astrodf_step(
            problem,
            dataset,
            config,
            builder,
            &mut state,
            draw_stream,
            strata_stream,
        );
        let abandoned = record.abandoned;
        trajectory.push((state.calls, state.theta.clone()));
        iterations.push(record);
        if abandoned {
            break;
        }
    }
    Ok(RunResult {
        trajectory,
        iterations,
        final_theta: state.theta.clone(),
        total_calls: state.calls,
    })
}
