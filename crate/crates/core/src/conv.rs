//! Concomitant-variable stratification.
//!
//! A candidate list of transformed real inputs or simulated auxiliaries is
//! screened with robust linear regressions against the pilot losses; the most
//! linear candidate (smallest residual variance, residuals uncorrelated with
//! the covariate) drives interval boundaries placed by the Dalenius
//! fixed-point condition `c_z = (mu_z + mu_{z+1}) / 2`. The number of strata
//! is picked by bootstrapping the pilot and voting for the stratum count with
//! the smallest post-stratified variance.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::stats::{pearson_correlation, RunningStats};
use crate::strata::{
    post_stratified_estimate, Covariate, Observation, Provenance, StrataBuild, StrataBuilder,
    StratificationStructure, StratumStats,
};

/// A named candidate for the stratification variable.
#[derive(Debug, Clone)]
pub struct ConcomitantCandidate {
    pub name: String,
    pub covariate: Covariate,
}

impl ConcomitantCandidate {
    pub fn new(name: impl Into<String>, covariate: Covariate) -> Self {
        Self {
            name: name.into(),
            covariate,
        }
    }
}

/// Robust simple linear regression of the loss on a covariate.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub intercept: f64,
    pub slope: f64,
    /// Mean-centered residuals in sample order.
    pub residuals: Vec<f64>,
    pub residual_variance: f64,
    /// |Pearson correlation| between covariate and residuals; zero when
    /// either side is constant.
    pub residual_correlation: f64,
    /// `Var(E) / Var(F)`; zero for a constant response.
    pub variance_ratio: f64,
    pub converged: bool,
}

const TUKEY_C: f64 = 4.685;
const IRLS_PASSES: usize = 10;

fn weighted_line(c: &[f64], f: &[f64], w: &[f64]) -> Option<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return None;
    }
    let cm: f64 = w.iter().zip(c).map(|(&wi, &ci)| wi * ci).sum::<f64>() / sw;
    let fm: f64 = w.iter().zip(f).map(|(&wi, &fi)| wi * fi).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..c.len() {
        let dc = c[i] - cm;
        sxx += w[i] * dc * dc;
        sxy += w[i] * dc * (f[i] - fm);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((fm - slope * cm, slope))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Iteratively reweighted least squares with the Tukey bisquare weight
/// (tuning constant 4.685), initialized from ordinary least squares. The
/// returned intercept is re-centered so that the residual mean is zero.
pub fn robust_linear_fit(c: &[f64], f: &[f64]) -> Result<RegressionFit> {
    assert_eq!(c.len(), f.len());
    let n = c.len();
    if n < 10 {
        return Err(Error::InvalidArgument(
            "robust fit needs at least 10 points".into(),
        ));
    }
    if c.iter().all(|&v| v == c[0]) {
        return Err(Error::DegenerateCovariate(
            "covariate is constant over the pilot".into(),
        ));
    }

    let ones = vec![1.0; n];
    let (mut intercept, mut slope) =
        weighted_line(c, f, &ones).expect("non-constant covariate admits an OLS line");
    let mut weights = ones;
    let mut converged = false;
    let loss_scale = f.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1.0);

    for _ in 0..IRLS_PASSES {
        let residuals: Vec<f64> = (0..n).map(|i| f[i] - intercept - slope * c[i]).collect();
        let mut abs_dev: Vec<f64> = {
            let mut r = residuals.clone();
            let med = median(&mut r);
            residuals.iter().map(|&v| (v - med).abs()).collect()
        };
        let scale = median(&mut abs_dev) / 0.6745;
        if scale <= 1e-14 * loss_scale {
            converged = true;
            break;
        }
        for i in 0..n {
            let u = residuals[i] / (TUKEY_C * scale);
            weights[i] = if u.abs() < 1.0 {
                let t = 1.0 - u * u;
                t * t
            } else {
                0.0
            };
        }
        let Some((a, b)) = weighted_line(c, f, &weights) else {
            break; // all weight collapsed; keep the last iterate, flagged
        };
        let moved = (a - intercept).abs() + (b - slope).abs();
        intercept = a;
        slope = b;
        if moved <= 1e-10 * (1.0 + intercept.abs() + slope.abs()) {
            converged = true;
            break;
        }
    }

    // Center the residuals exactly; the variance and correlation reported
    // below are invariant to this shift.
    let mut residuals: Vec<f64> = (0..n).map(|i| f[i] - intercept - slope * c[i]).collect();
    let shift = residuals.iter().sum::<f64>() / n as f64;
    intercept += shift;
    for r in &mut residuals {
        *r -= shift;
    }

    let residual_variance = RunningStats::from_slice(&residuals).variance().unwrap_or(0.0);
    let response_variance = RunningStats::from_slice(f).variance().unwrap_or(0.0);
    let variance_ratio = if response_variance > 0.0 {
        residual_variance / response_variance
    } else {
        0.0
    };
    // Residuals at rounding-noise level carry no correlation information.
    let residual_correlation = if residual_variance <= (1e-12 * loss_scale) * (1e-12 * loss_scale)
    {
        0.0
    } else {
        pearson_correlation(c, &residuals).map(f64::abs).unwrap_or(0.0)
    };
    Ok(RegressionFit {
        intercept,
        slope,
        residuals,
        residual_variance,
        residual_correlation,
        variance_ratio,
        converged,
    })
}

/// A candidate that passed the correlation screen, with its fit.
#[derive(Debug, Clone)]
pub struct SelectedCandidate {
    pub index: usize,
    pub fit: RegressionFit,
}

/// Picks the candidate minimizing residual variance among those whose
/// residual-covariate correlation clears the screen `|corr| < rho`. Candidates
/// with degenerate fits are skipped; `None` means no candidate qualifies.
pub fn select_concomitant(
    candidate_values: &[Vec<f64>],
    losses: &[f64],
    rho: f64,
) -> Option<SelectedCandidate> {
    let mut best: Option<SelectedCandidate> = None;
    for (index, values) in candidate_values.iter().enumerate() {
        let Ok(fit) = robust_linear_fit(values, losses) else {
            continue;
        };
        if fit.residual_correlation >= rho {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => fit.residual_variance < b.fit.residual_variance,
        };
        if better {
            best = Some(SelectedCandidate { index, fit });
        }
    }
    best
}

/// Distribution the boundary iteration draws its conditional means from.
#[derive(Debug, Clone, Copy)]
pub enum BoundarySource<'a> {
    /// Empirical values; conditional means come from a sorted scan.
    Empirical(&'a [f64]),
    /// Uniform(a, b): conditional means are interval midpoints.
    Uniform { a: f64, b: f64 },
    /// Standard normal: conditional means from the Mills-ratio form.
    StandardNormal,
}

/// Converged strata boundaries with fixed-point metadata.
#[derive(Debug, Clone)]
pub struct BoundarySet {
    /// Interior cuts `c_1 < ... < c_{Z-1}`; sentinels at +-infinity are
    /// implicit.
    pub cuts: Vec<f64>,
    pub iterations: usize,
    pub final_displacement: f64,
    pub converged: bool,
}

struct EmpiricalIndex {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl EmpiricalIndex {
    fn new(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        for &v in &sorted {
            prefix.push(prefix.last().unwrap() + v);
        }
        Self { sorted, prefix }
    }

    fn count_below(&self, cut: f64) -> usize {
        self.sorted.partition_point(|&v| v < cut)
    }

    /// Mean over `[lo, hi)`; `None` when empty.
    fn interval_mean(&self, lo: f64, hi: f64) -> Option<f64> {
        let i = if lo == f64::NEG_INFINITY {
            0
        } else {
            self.count_below(lo)
        };
        let j = if hi == f64::INFINITY {
            self.sorted.len()
        } else {
            self.count_below(hi)
        };
        if j > i {
            Some((self.prefix[j] - self.prefix[i]) / (j - i) as f64)
        } else {
            None
        }
    }

    /// Empirical quantile as the midpoint between the order statistics
    /// flanking the nearest-rank mass split, so the seeded cut puts
    /// `round(q * n)` points below it.
    fn quantile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        let m = ((q * n as f64).round() as usize).clamp(1, n - 1);
        0.5 * (self.sorted[m - 1] + self.sorted[m])
    }

    fn min(&self) -> f64 {
        self.sorted[0]
    }

    fn max(&self) -> f64 {
        *self.sorted.last().unwrap()
    }
}

enum MeanSource {
    Empirical(EmpiricalIndex),
    Uniform { a: f64, b: f64 },
    StandardNormal(Normal),
}

impl MeanSource {
    fn interval_mean(&self, lo: f64, hi: f64) -> Option<f64> {
        match self {
            MeanSource::Empirical(e) => e.interval_mean(lo, hi),
            MeanSource::Uniform { a, b } => {
                let lo = lo.max(*a);
                let hi = hi.min(*b);
                (hi > lo).then_some(0.5 * (lo + hi))
            }
            MeanSource::StandardNormal(n) => {
                let phi = |x: f64| {
                    if x.is_finite() {
                        n.pdf(x)
                    } else {
                        0.0
                    }
                };
                let cdf = |x: f64| {
                    if x == f64::NEG_INFINITY {
                        0.0
                    } else if x == f64::INFINITY {
                        1.0
                    } else {
                        n.cdf(x)
                    }
                };
                let mass = cdf(hi) - cdf(lo);
                (mass > 0.0).then_some((phi(lo) - phi(hi)) / mass)
            }
        }
    }

    fn quantile(&self, q: f64) -> f64 {
        match self {
            MeanSource::Empirical(e) => e.quantile(q),
            MeanSource::Uniform { a, b } => a + (b - a) * q,
            MeanSource::StandardNormal(n) => n.inverse_cdf(q),
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            MeanSource::Empirical(e) => (e.min(), e.max()),
            MeanSource::Uniform { a, b } => (*a, *b),
            MeanSource::StandardNormal(_) => (-8.0, 8.0),
        }
    }
}

/// Solves the fixed point `c_z = (mu_z + mu_{z+1}) / 2` for `z_strata`
/// intervals, starting from the distribution quantiles. An interval that
/// empties mid-iteration has its cut re-seeded at the midpoint of its
/// neighbors; persistent emptiness fails with a boundary-degenerate error.
pub fn dalenius_boundaries(
    source: BoundarySource,
    z_strata: usize,
    epsilon: f64,
    max_iters: usize,
) -> Result<BoundarySet> {
    if z_strata < 2 {
        return Err(Error::InvalidArgument("need at least two strata".into()));
    }
    if let BoundarySource::Empirical(values) = source {
        let mut distinct = values.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < z_strata {
            return Err(Error::InvalidArgument(format!(
                "need at least {z_strata} distinct values, found {}",
                distinct.len()
            )));
        }
    }
    let source = match source {
        BoundarySource::Empirical(v) => MeanSource::Empirical(EmpiricalIndex::new(v)),
        BoundarySource::Uniform { a, b } => MeanSource::Uniform { a, b },
        BoundarySource::StandardNormal => {
            MeanSource::StandardNormal(Normal::new(0.0, 1.0).unwrap())
        }
    };

    let z = z_strata;
    let mut cuts: Vec<f64> = (1..z).map(|i| source.quantile(i as f64 / z as f64)).collect();
    let (support_lo, support_hi) = source.support();
    let mut reseeds = 0usize;
    let reseed_budget = 8 * z;
    let mut displacement = f64::INFINITY;

    let mut iterations = 0usize;
    while iterations < max_iters {
        iterations += 1;
        // Conditional means of the Z intervals under the current cuts.
        let mut means = Vec::with_capacity(z);
        let mut empty_interval = None;
        for i in 0..z {
            let lo = if i == 0 { f64::NEG_INFINITY } else { cuts[i - 1] };
            let hi = if i == z - 1 { f64::INFINITY } else { cuts[i] };
            match source.interval_mean(lo, hi) {
                Some(m) => means.push(m),
                None => {
                    empty_interval = Some(i);
                    break;
                }
            }
        }
        if let Some(i) = empty_interval {
            // Re-seed the cut bounding the empty interval: the upper cut for
            // the first interval, otherwise the lower cut.
            let j = if i == 0 { 0 } else { i - 1 };
            let left = if j == 0 { support_lo } else { cuts[j - 1] };
            let right = if j + 1 == cuts.len() { support_hi } else { cuts[j + 1] };
            cuts[j] = 0.5 * (left + right);
            reseeds += 1;
            if reseeds > reseed_budget {
                return Err(Error::BoundaryDegenerate(format!(
                    "interval {i} of {z} stays empty after {reseeds} re-seeds"
                )));
            }
            continue;
        }
        let new_cuts: Vec<f64> = (0..z - 1).map(|i| 0.5 * (means[i] + means[i + 1])).collect();
        displacement = cuts
            .iter()
            .zip(&new_cuts)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        cuts = new_cuts;
        if displacement <= epsilon {
            if cuts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::BoundaryDegenerate(
                    "converged cuts are not strictly increasing".into(),
                ));
            }
            return Ok(BoundarySet {
                cuts,
                iterations,
                final_displacement: displacement,
                converged: true,
            });
        }
    }
    Ok(BoundarySet {
        cuts,
        iterations,
        final_displacement: displacement,
        converged: false,
    })
}

/// One candidate stratification paired with its stratum probabilities.
#[derive(Debug, Clone)]
pub struct CandidateStructure {
    pub z: usize,
    pub structure: StratificationStructure,
}

/// Votes over bootstrap resamples of the pilot for the stratum count whose
/// structure yields the smallest post-stratified variance. Ties inside a
/// bootstrap and across the vote go to the smaller stratum count. `None`
/// means no bootstrap produced a usable variance for any structure.
pub fn choose_strata_count(
    c_values: &[f64],
    losses: &[f64],
    candidates: &[CandidateStructure],
    n_boot: usize,
    stream: &mut RandomStream,
) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    let n = losses.len();
    let mut votes = vec![0usize; candidates.len()];
    let mut any_vote = false;
    for _ in 0..n_boot {
        let resample: Vec<usize> = (0..n).map(|_| stream.random_range(0..n)).collect();
        let mut best: Option<(usize, f64)> = None;
        for (ci, cand) in candidates.iter().enumerate() {
            let cuts = interval_cuts(&cand.structure);
            let mut per = vec![StratumStats::new(); cand.structure.len()];
            for &i in &resample {
                let z = cuts.partition_point(|&c| c <= c_values[i]);
                per[z].push(losses[i]);
            }
            let Ok(est) = post_stratified_estimate(&cand.structure, per) else {
                continue;
            };
            if best.is_none_or(|(_, v)| est.variance < v) {
                best = Some((ci, est.variance));
            }
        }
        if let Some((ci, _)) = best {
            votes[ci] += 1;
            any_vote = true;
        }
    }
    if !any_vote {
        return None;
    }
    let mut winner = 0usize;
    for (ci, &v) in votes.iter().enumerate() {
        if v > votes[winner] {
            winner = ci;
        }
    }
    Some(winner)
}

fn interval_cuts(structure: &StratificationStructure) -> &[f64] {
    match structure.regions() {
        crate::strata::Regions::Intervals { cuts, .. } => cuts,
        _ => &[],
    }
}

/// Which data feed the boundaries and probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Boundaries and probabilities from the full modeling dataset.
    Real,
    /// Boundaries from pilot values; probabilities from pilot shares.
    Simulated,
}

type BoundaryCache = RefCell<HashMap<(usize, usize), Option<(Vec<f64>, Vec<f64>)>>>;

/// Concomitant-variable strata builder.
pub struct ConvStrataBuilder {
    pub mode: ConvMode,
    pub candidates: Vec<ConcomitantCandidate>,
    pub z_max: usize,
    pub epsilon: f64,
    pub rho: f64,
    pub n_boot: usize,
    pub max_iters: usize,
    /// Real-mode boundary cache: identical (candidate, Z) requests return the
    /// same structure regardless of the iterate.
    boundary_cache: BoundaryCache,
    full_values_cache: RefCell<HashMap<usize, Vec<f64>>>,
}

impl ConvStrataBuilder {
    pub fn new(
        mode: ConvMode,
        candidates: Vec<ConcomitantCandidate>,
        z_max: usize,
        epsilon: f64,
        rho: f64,
        n_boot: usize,
    ) -> Self {
        Self {
            mode,
            candidates,
            z_max,
            epsilon,
            rho,
            n_boot,
            max_iters: 200,
            boundary_cache: RefCell::new(HashMap::new()),
            full_values_cache: RefCell::new(HashMap::new()),
        }
    }

    fn provenance(&self) -> Provenance {
        match self.mode {
            ConvMode::Real => Provenance::ConcomitantReal,
            ConvMode::Simulated => Provenance::ConcomitantSimulated,
        }
    }

    /// Cuts plus probabilities for `(candidate, z)`, or `None` when the
    /// boundaries degenerate.
    fn real_boundaries(
        &self,
        dataset: &Dataset,
        cand_index: usize,
        z: usize,
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        if let Some(hit) = self.boundary_cache.borrow().get(&(cand_index, z)) {
            return hit.clone();
        }
        let computed = self.compute_real_boundaries(dataset, cand_index, z);
        self.boundary_cache
            .borrow_mut()
            .insert((cand_index, z), computed.clone());
        computed
    }

    fn compute_real_boundaries(
        &self,
        dataset: &Dataset,
        cand_index: usize,
        z: usize,
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let covariate = self.candidates[cand_index].covariate;
        {
            let mut cache = self.full_values_cache.borrow_mut();
            cache.entry(cand_index).or_insert_with(|| {
                dataset
                    .points()
                    .iter()
                    .map(|p| {
                        covariate
                            .value_from_input(&p.x)
                            .expect("real-mode candidates use input features")
                    })
                    .collect()
            });
        }
        let cache = self.full_values_cache.borrow();
        let values = cache.get(&cand_index).unwrap();
        let set =
            dalenius_boundaries(BoundarySource::Empirical(values), z, self.epsilon, self.max_iters)
                .ok()?;
        let p = interval_probabilities(values, &set.cuts)?;
        Some((set.cuts, p))
    }

    fn simulated_boundaries(&self, pilot_values: &[f64], z: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let set = dalenius_boundaries(
            BoundarySource::Empirical(pilot_values),
            z,
            self.epsilon,
            self.max_iters,
        )
        .ok()?;
        let p = interval_probabilities(pilot_values, &set.cuts)?;
        Some((set.cuts, p))
    }
}

/// Interval shares of `values` under `cuts`; `None` when an interval is
/// empty.
fn interval_probabilities(values: &[f64], cuts: &[f64]) -> Option<Vec<f64>> {
    let mut counts = vec![0usize; cuts.len() + 1];
    for &v in values {
        counts[cuts.partition_point(|&c| c <= v)] += 1;
    }
    if counts.contains(&0) {
        return None;
    }
    Some(
        counts
            .iter()
            .map(|&c| c as f64 / values.len() as f64)
            .collect(),
    )
}

impl StrataBuilder for ConvStrataBuilder {
    fn mode_name(&self) -> &'static str {
        match self.mode {
            ConvMode::Real => "conv-r",
            ConvMode::Simulated => "conv-s",
        }
    }

    fn build(
        &self,
        dataset: &Dataset,
        pilot: &[Observation],
        stream: &mut RandomStream,
    ) -> StrataBuild {
        if pilot.len() < 10 || self.candidates.is_empty() {
            return StrataBuild::plain(StratificationStructure::trivial());
        }
        let losses: Vec<f64> = pilot.iter().map(|o| o.loss).collect();
        let candidate_values: Vec<Vec<f64>> = self
            .candidates
            .iter()
            .map(|cand| {
                pilot
                    .iter()
                    .map(|o| {
                        cand.covariate
                            .value(dataset.point(o.dataset_index), &o.aux)
                    })
                    .collect()
            })
            .collect();
        let Some(selected) = select_concomitant(&candidate_values, &losses, self.rho) else {
            return StrataBuild::plain(StratificationStructure::trivial());
        };
        let cand = &self.candidates[selected.index];
        let pilot_values = &candidate_values[selected.index];

        let mut structures = Vec::new();
        for z in 2..=self.z_max {
            let bounds = match self.mode {
                ConvMode::Real => self.real_boundaries(dataset, selected.index, z),
                ConvMode::Simulated => self.simulated_boundaries(pilot_values, z),
            };
            let Some((cuts, p)) = bounds else { continue };
            let Ok(structure) =
                StratificationStructure::intervals(cand.covariate, cuts, p, self.provenance())
            else {
                continue;
            };
            structures.push(CandidateStructure { z, structure });
        }
        let chosen = choose_strata_count(pilot_values, &losses, &structures, self.n_boot, stream);
        let structure = match chosen {
            Some(index) => structures[index].structure.clone(),
            None => StratificationStructure::trivial(),
        };
        StrataBuild {
            structure,
            candidate: Some(cand.name.clone()),
            variance_ratio: Some(selected.fit.variance_ratio),
        }
    }
}
