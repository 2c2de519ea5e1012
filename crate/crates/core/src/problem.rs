//! The black-box per-datapoint loss abstraction and its SAA estimator.

use crate::data::DataPoint;
use crate::error::{Error, Result};
use crate::stats::RunningStats;

/// Named auxiliary values emitted by one simulation run. The key set is fixed
/// per problem and published through [`Problem::aux_keys`]; the record stores
/// the values in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuxiliaryRecord {
    values: Vec<f64>,
}

impl AuxiliaryRecord {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }
}

/// A simulation model exposed as a deterministic per-datapoint loss.
///
/// `evaluate` must be a pure function of `(theta, point)`; each call is
/// exactly one simulation replication and one unit of optimization budget.
pub trait Problem: Sync {
    /// Dimension of the calibration parameter.
    fn theta_dim(&self) -> usize;

    /// Per-coordinate inclusive box bounds of the feasible domain.
    fn bounds(&self) -> Vec<(f64, f64)>;

    /// Names of the auxiliary values produced per evaluation, in record order.
    fn aux_keys(&self) -> &'static [&'static str] {
        &[]
    }

    /// Runs the simulation at `theta` on one data point, returning the loss
    /// and the auxiliary record.
    fn evaluate(&self, theta: &[f64], point: &DataPoint) -> (f64, AuxiliaryRecord);

    fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.theta_dim()
            && theta
                .iter()
                .zip(self.bounds())
                .all(|(&t, (lo, hi))| t >= lo && t <= hi)
    }

    /// Projects `theta` onto the box domain.
    fn clamp(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.bounds())
            .map(|(&t, (lo, hi))| t.clamp(lo, hi))
            .collect()
    }
}

/// Sample-average approximation over an explicit sample.
#[derive(Debug, Clone)]
pub struct SaaEstimate {
    pub mean: f64,
    /// Unbiased sample variance; `None` for a single-point sample.
    pub variance: Option<f64>,
    /// Per-point losses in sample order, retained so stratification builders
    /// can re-bin without re-simulation.
    pub losses: Vec<f64>,
}

/// Estimates the objective at `theta` by averaging the loss over `sample`.
pub fn saa_estimate<P: Problem + ?Sized>(
    problem: &P,
    theta: &[f64],
    sample: &[&DataPoint],
) -> Result<SaaEstimate> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("saa sample must be non-empty".into()));
    }
    if !problem.contains(theta) {
        return Err(Error::InvalidArgument(
            "theta lies outside the problem domain".into(),
        ));
    }
    let mut stats = RunningStats::new();
    let mut losses = Vec::with_capacity(sample.len());
    for (index, point) in sample.iter().enumerate() {
        let (loss, _) = problem.evaluate(theta, point);
        if !loss.is_finite() {
            return Err(Error::EvaluationFailure { index });
        }
        stats.push(loss);
        losses.push(loss);
    }
    Ok(SaaEstimate {
        mean: stats.mean(),
        variance: stats.variance(),
        losses,
    })
}
