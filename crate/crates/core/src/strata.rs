//! Stratification structures, stratified and post-stratified estimators, and
//! allocation schemes.
//!
//! The estimators follow the survey-sampling forms: the stratified mean is
//! `sum_z p_z * mean_z`, and the post-stratified variance is
//! `(1/N) sum_z p_z s2_z + (1/N^2) sum_z (1 - p_z) s2_z`, dropping the
//! `O(N^-3)` remainder. Strata that hold fewer than two samples at estimation
//! time are merged with a neighbor before either formula is applied.

use rand::Rng;

use crate::data::{DataPoint, Dataset};
use crate::error::{Error, Result};
use crate::problem::AuxiliaryRecord;
use crate::rng::RandomStream;
use crate::stats::RunningStats;

/// Per-stratum sample statistics (count, running mean, centered second
/// moment).
pub type StratumStats = RunningStats;

/// How a structure was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Trivial single stratum (no stratification).
    None,
    /// Binary-tree construction on input features.
    Tree,
    /// Concomitant variable computed from real inputs.
    ConcomitantReal,
    /// Concomitant variable computed from simulated auxiliaries.
    ConcomitantSimulated,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::None => "none",
            Provenance::Tree => "tree",
            Provenance::ConcomitantReal => "concomitant-real",
            Provenance::ConcomitantSimulated => "concomitant-simulated",
        }
    }
}

/// Power transform applied to a covariate's base value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Square,
    Cube,
}

impl Transform {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Square => v * v,
            Transform::Cube => v * v * v,
        }
    }

    pub fn suffix(&self) -> &'static str {
        match self {
            Transform::Identity => "",
            Transform::Square => "^2",
            Transform::Cube => "^3",
        }
    }
}

/// Where a covariate's base value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateSource {
    /// An input feature column; computable without simulation.
    RealInput(usize),
    /// An auxiliary value emitted by the simulation run.
    SimulatedAux(usize),
}

/// A scalar stratification variable: a transformed real input or simulated
/// auxiliary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Covariate {
    pub source: CovariateSource,
    pub transform: Transform,
}

impl Covariate {
    pub fn value(&self, point: &DataPoint, aux: &AuxiliaryRecord) -> f64 {
        let base = match self.source {
            CovariateSource::RealInput(i) => point.x[i],
            CovariateSource::SimulatedAux(i) => aux.get(i),
        };
        self.transform.apply(base)
    }

    /// Value from inputs alone; `None` for simulated sources.
    pub fn value_from_input(&self, x: &[f64]) -> Option<f64> {
        match self.source {
            CovariateSource::RealInput(i) => Some(self.transform.apply(x[i])),
            CovariateSource::SimulatedAux(_) => None,
        }
    }
}

impl std::fmt::Display for Covariate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.source {
            CovariateSource::RealInput(i) => write!(f, "x{}{}", i + 1, self.transform.suffix()),
            CovariateSource::SimulatedAux(i) => write!(f, "aux{}{}", i, self.transform.suffix()),
        }
    }
}

/// A node of a binary splitting tree over input features. Left holds
/// `x[variable] <= value`, right holds the rest.
#[derive(Debug, Clone)]
pub enum SplitNode {
    Leaf { stratum: usize },
    Split {
        variable: usize,
        value: f64,
        left: Box<SplitNode>,
        right: Box<SplitNode>,
    },
}

impl SplitNode {
    pub fn stratum_of(&self, x: &[f64]) -> usize {
        match self {
            SplitNode::Leaf { stratum } => *stratum,
            SplitNode::Split {
                variable,
                value,
                left,
                right,
            } => {
                if x[*variable] <= *value {
                    left.stratum_of(x)
                } else {
                    right.stratum_of(x)
                }
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            SplitNode::Leaf { stratum } => format!("#{stratum}"),
            SplitNode::Split {
                variable,
                value,
                left,
                right,
            } => format!(
                "(x{},{:?},{},{})",
                variable + 1,
                value,
                left.describe(),
                right.describe()
            ),
        }
    }
}

/// Geometry of a stratification structure.
#[derive(Debug, Clone)]
pub enum Regions {
    /// One stratum covering everything.
    Single,
    /// Half-open intervals `[c_z, c_{z+1})` on a covariate, with outer
    /// sentinels at +-infinity.
    Intervals { covariate: Covariate, cuts: Vec<f64> },
    /// Axis-aligned leaf cells of a binary tree; `siblings[z]` is the leaf
    /// that shared z's final split, used when merging degenerate strata.
    Tree {
        root: SplitNode,
        siblings: Vec<usize>,
    },
}

/// A partition of the input space into `Z` disjoint strata with membership
/// test and per-stratum probabilities. There is always at least one stratum.
#[derive(Debug, Clone)]
#[allow(clippy::len_without_is_empty)]
pub struct StratificationStructure {
    regions: Regions,
    probabilities: Vec<f64>,
    provenance: Provenance,
}

impl StratificationStructure {
    /// The single-stratum structure; estimation under it reduces to plain SAA.
    pub fn trivial() -> Self {
        Self {
            regions: Regions::Single,
            probabilities: vec![1.0],
            provenance: Provenance::None,
        }
    }

    pub fn intervals(
        covariate: Covariate,
        cuts: Vec<f64>,
        probabilities: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if probabilities.len() != cuts.len() + 1 {
            return Err(Error::InvalidArgument(
                "interval structure needs Z-1 cuts for Z probabilities".into(),
            ));
        }
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "interval cuts must be strictly increasing".into(),
            ));
        }
        Self::validated(
            Regions::Intervals { covariate, cuts },
            probabilities,
            provenance,
        )
    }

    pub fn tree(root: SplitNode, siblings: Vec<usize>, probabilities: Vec<f64>) -> Result<Self> {
        if siblings.len() != probabilities.len() {
            return Err(Error::InvalidArgument(
                "tree structure needs one sibling entry per leaf".into(),
            ));
        }
        Self::validated(Regions::Tree { root, siblings }, probabilities, Provenance::Tree)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN probabilities too
    fn validated(
        regions: Regions,
        probabilities: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if probabilities.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidArgument(
                "stratum probabilities must be positive".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "stratum probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            regions,
            probabilities,
            provenance,
        })
    }

    /// Number of strata `Z`.
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_trivial(&self) -> bool {
        self.probabilities.len() == 1
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn regions(&self) -> &Regions {
        &self.regions
    }

    /// Stratum membership of an evaluated point.
    pub fn stratum_of(&self, point: &DataPoint, aux: &AuxiliaryRecord) -> usize {
        match &self.regions {
            Regions::Single => 0,
            Regions::Intervals { covariate, cuts } => {
                let v = covariate.value(point, aux);
                cuts.partition_point(|&c| c <= v)
            }
            Regions::Tree { root, .. } => root.stratum_of(&point.x),
        }
    }

    /// Membership from inputs alone; `None` when the structure keys on
    /// simulated auxiliaries.
    pub fn stratum_of_input(&self, x: &[f64]) -> Option<usize> {
        match &self.regions {
            Regions::Single => Some(0),
            Regions::Intervals { covariate, cuts } => covariate
                .value_from_input(x)
                .map(|v| cuts.partition_point(|&c| c <= v)),
            Regions::Tree { root, .. } => Some(root.stratum_of(x)),
        }
    }

    /// One-line structured record for the strata log.
    pub fn describe(&self) -> String {
        let p: Vec<String> = self.probabilities.iter().map(|v| format!("{v:?}")).collect();
        match &self.regions {
            Regions::Single => format!("{} Z=1 p=[1]", self.provenance.as_str()),
            Regions::Intervals { covariate, cuts } => {
                let c: Vec<String> = cuts.iter().map(|v| format!("{v:?}")).collect();
                format!(
                    "{} Z={} on {} cuts=[{}] p=[{}]",
                    self.provenance.as_str(),
                    self.len(),
                    covariate,
                    c.join(";"),
                    p.join(";")
                )
            }
            Regions::Tree { root, .. } => format!(
                "{} Z={} splits={} p=[{}]",
                self.provenance.as_str(),
                self.len(),
                root.describe(),
                p.join(";")
            ),
        }
    }
}

/// Estimated stratified sampling mean `sum_z p_z * mean_z`.
///
/// Every stratum with positive probability must hold at least one sample.
pub fn stratified_mean(stats: &[StratumStats], p: &[f64]) -> Result<f64> {
    assert_eq!(stats.len(), p.len());
    let mut mean = 0.0;
    for (s, &pz) in stats.iter().zip(p) {
        if pz > 0.0 {
            if s.count() == 0 {
                return Err(Error::EstimationFailure(
                    "stratum with positive probability holds no samples".into(),
                ));
            }
            mean += pz * s.mean();
        }
    }
    Ok(mean)
}

/// Variance of the post-stratified estimator, truncated at the `1/N^2` term.
///
/// Every included stratum needs at least two samples for its conditional
/// variance estimate.
pub fn post_stratified_variance(stats: &[StratumStats], p: &[f64], n: usize) -> Result<f64> {
    assert_eq!(stats.len(), p.len());
    let mut term1 = 0.0;
    let mut term2 = 0.0;
    for (s, &pz) in stats.iter().zip(p) {
        if pz > 0.0 {
            let var = s.variance().ok_or_else(|| {
                Error::EstimationFailure(
                    "stratum needs at least two samples for a variance estimate".into(),
                )
            })?;
            term1 += pz * var;
            term2 += (1.0 - pz) * var;
        }
    }
    let n = n as f64;
    Ok(term1 / n + term2 / (n * n))
}

/// Optimal (Neyman) allocation weights `w_z = p_z sigma_z / sum p sigma`.
pub fn neyman_weights(p: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(p.len(), sigma.len());
    let denom: f64 = p.iter().zip(sigma).map(|(&pz, &sz)| pz * sz).sum();
    if denom <= 0.0 {
        return Err(Error::DegenerateAllocation);
    }
    Ok(p.iter().zip(sigma).map(|(&pz, &sz)| pz * sz / denom).collect())
}

/// Variances of the optimal and proportional stratified estimators:
/// `(sum p sigma)^2 / N` and `(sum p sigma^2) / N`.
pub fn analytic_variances(p: &[f64], sigma: &[f64], n: usize) -> (f64, f64) {
    assert_eq!(p.len(), sigma.len());
    let weighted_sd: f64 = p.iter().zip(sigma).map(|(&pz, &sz)| pz * sz).sum();
    let weighted_var: f64 = p.iter().zip(sigma).map(|(&pz, &sz)| pz * sz * sz).sum();
    let n = n as f64;
    (weighted_sd * weighted_sd / n, weighted_var / n)
}

/// Variance inflation from mis-estimated optimal sample sizes:
/// `1 + (1/N) sum (hat_N_z - N'_z)^2 / hat_N_z`.
pub fn allocation_inflation(n_hat: &[f64], n_prime: &[f64], n: f64) -> f64 {
    assert_eq!(n_hat.len(), n_prime.len());
    debug_assert!(n_hat.iter().all(|&v| v > 0.0));
    let mismatch: f64 = n_hat
        .iter()
        .zip(n_prime)
        .map(|(&h, &t)| (h - t) * (h - t) / h)
        .sum();
    1.0 + mismatch / n
}

/// Selective randomized allocation: samples stratum `z` with probability
/// proportional to `v_z` among strata whose current share `n_z / n` still
/// trails `v_z`.
pub fn selective_random_stratum(
    v: &[f64],
    n_z: &[usize],
    n: usize,
    stream: &mut RandomStream,
) -> Result<usize> {
    assert_eq!(v.len(), n_z.len());
    let n = n as f64;
    let weights: Vec<f64> = v
        .iter()
        .zip(n_z)
        .map(|(&vz, &nz)| if vz > nz as f64 / n { vz } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllocationExhausted);
    }
    let u: f64 = stream.random_range(0.0..total);
    let mut acc = 0.0;
    for (z, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Ok(z);
        }
    }
    Ok(weights.iter().rposition(|&w| w > 0.0).expect("non-zero total"))
}

/// One evaluated sample: which dataset point was drawn, its loss, and the
/// auxiliary record the simulation emitted.
#[derive(Debug, Clone)]
pub struct Observation {
    pub dataset_index: usize,
    pub loss: f64,
    pub aux: AuxiliaryRecord,
}

/// Post-stratified estimate of the objective from binned samples.
#[derive(Debug, Clone)]
pub struct PostStratifiedEstimate {
    /// Statistics per original stratum (before degenerate merging).
    pub per_stratum: Vec<StratumStats>,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

impl PostStratifiedEstimate {
    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Merge preference when a stratum holds fewer than two samples.
enum MergeTopology<'a> {
    /// No adjacency information: merge into the largest stratum.
    Pooled,
    /// Interval strata: merge with the adjacent interval.
    Chain,
    /// Tree strata: merge with the sibling leaf if it is still distinct.
    Siblings(&'a [usize]),
}

struct MergedGroup {
    stats: StratumStats,
    p: f64,
    members: Vec<usize>,
}

fn choose_partner(groups: &[MergedGroup], gi: usize, topology: &MergeTopology) -> usize {
    match topology {
        MergeTopology::Chain => {
            // Groups of intervals stay contiguous, so neighbors in list order
            // are the adjacent intervals.
            let left = gi.checked_sub(1);
            let right = if gi + 1 < groups.len() { Some(gi + 1) } else { None };
            match (left, right) {
                (Some(l), Some(r)) => {
                    if groups[r].stats.count() > groups[l].stats.count() {
                        r
                    } else {
                        l
                    }
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => unreachable!("caller guarantees at least two groups"),
            }
        }
        MergeTopology::Siblings(siblings) => {
            for &z in &groups[gi].members {
                let s = siblings[z];
                if let Some(j) = groups.iter().position(|g| g.members.contains(&s)) {
                    if j != gi {
                        return j;
                    }
                }
            }
            largest_other(groups, gi)
        }
        MergeTopology::Pooled => largest_other(groups, gi),
    }
}

fn largest_other(groups: &[MergedGroup], gi: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_count = 0usize;
    for (j, g) in groups.iter().enumerate() {
        if j != gi && (best == usize::MAX || g.stats.count() > best_count) {
            best = j;
            best_count = g.stats.count();
        }
    }
    best
}

fn merge_degenerate(
    stats: &[StratumStats],
    p: &[f64],
    topology: MergeTopology,
) -> Result<Vec<MergedGroup>> {
    let mut groups: Vec<MergedGroup> = stats
        .iter()
        .zip(p)
        .enumerate()
        .map(|(z, (s, &pz))| MergedGroup {
            stats: *s,
            p: pz,
            members: vec![z],
        })
        .collect();
    loop {
        let Some(gi) = groups.iter().position(|g| g.stats.count() < 2) else {
            return Ok(groups);
        };
        if groups.len() == 1 {
            return Err(Error::EstimationFailure(
                "cannot merge strata into a usable estimate: too few samples".into(),
            ));
        }
        let gj = choose_partner(&groups, gi, &topology);
        let (keep, gone) = (gi.min(gj), gi.max(gj));
        let removed = groups.remove(gone);
        let target = &mut groups[keep];
        target.stats = target.stats.merge(&removed.stats);
        target.p += removed.p;
        target.members.extend(removed.members);
        target.members.sort_unstable();
    }
}

/// Post-stratified mean and variance for samples already binned per stratum,
/// applying degenerate-stratum merging dictated by the structure's geometry.
pub fn post_stratified_estimate(
    structure: &StratificationStructure,
    per_stratum: Vec<StratumStats>,
) -> Result<PostStratifiedEstimate> {
    assert_eq!(per_stratum.len(), structure.len());
    let topology = match structure.regions() {
        Regions::Single => MergeTopology::Pooled,
        Regions::Intervals { .. } => MergeTopology::Chain,
        Regions::Tree { siblings, .. } => MergeTopology::Siblings(siblings),
    };
    let groups = merge_degenerate(&per_stratum, structure.probabilities(), topology)?;
    let n: usize = groups.iter().map(|g| g.stats.count()).sum();
    let merged_stats: Vec<StratumStats> = groups.iter().map(|g| g.stats).collect();
    let merged_p: Vec<f64> = groups.iter().map(|g| g.p).collect();
    let mean = stratified_mean(&merged_stats, &merged_p)?;
    let variance = post_stratified_variance(&merged_stats, &merged_p, n)?;
    Ok(PostStratifiedEstimate {
        per_stratum,
        n,
        mean,
        variance,
    })
}

/// Bins whole-population draws into the structure's strata and evaluates the
/// post-stratified estimator.
pub fn post_stratify_sample(
    structure: &StratificationStructure,
    dataset: &Dataset,
    observations: &[Observation],
) -> Result<PostStratifiedEstimate> {
    let mut per_stratum = vec![StratumStats::new(); structure.len()];
    for obs in observations {
        let z = structure.stratum_of(dataset.point(obs.dataset_index), &obs.aux);
        per_stratum[z].push(obs.loss);
    }
    post_stratified_estimate(structure, per_stratum)
}

/// A run-time strategy for constructing a stratification structure from the
/// pilot sample of one evaluation.
pub trait StrataBuilder {
    /// Human-readable mode tag for logs ("ns", "bt", "conv-r", "conv-s").
    fn mode_name(&self) -> &'static str;

    fn build(
        &self,
        dataset: &Dataset,
        pilot: &[Observation],
        stream: &mut RandomStream,
    ) -> StrataBuild;
}

/// Builder output: the structure plus selection metadata for the strata log.
#[derive(Debug, Clone)]
pub struct StrataBuild {
    pub structure: StratificationStructure,
    /// Chosen concomitant candidate, when the mode selects one.
    pub candidate: Option<String>,
    /// Residual-to-response variance ratio of the chosen candidate.
    pub variance_ratio: Option<f64>,
}

impl StrataBuild {
    pub fn plain(structure: StratificationStructure) -> Self {
        Self {
            structure,
            candidate: None,
            variance_ratio: None,
        }
    }
}

/// The no-stratification baseline: always the trivial structure.
pub struct NoStrataBuilder;

impl StrataBuilder for NoStrataBuilder {
    fn mode_name(&self) -> &'static str {
        "ns"
    }

    fn build(
        &self,
        _dataset: &Dataset,
        _pilot: &[Observation],
        _stream: &mut RandomStream,
    ) -> StrataBuild {
        StrataBuild::plain(StratificationStructure::trivial())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn stats_of(values: &[&[f64]]) -> Vec<StratumStats> {
        values.iter().map(|v| StratumStats::from_slice(v)).collect()
    }

    #[test]
    fn stratified_mean_examples() {
        let single = stats_of(&[&[1.0, 2.0, 3.0]]);
        assert_abs_diff_eq!(stratified_mean(&single, &[1.0]).unwrap(), 2.0);

        let two = stats_of(&[&[1.0, 1.0], &[3.0, 3.0]]);
        assert_abs_diff_eq!(stratified_mean(&two, &[0.5, 0.5]).unwrap(), 2.0);

        let skew = stats_of(&[&[0.0, 0.0], &[10.0, 10.0]]);
        assert_abs_diff_eq!(stratified_mean(&skew, &[0.9, 0.1]).unwrap(), 1.0);

        let empty = vec![StratumStats::new()];
        assert!(stratified_mean(&empty, &[1.0]).is_err());
    }

    #[test]
    fn post_stratified_variance_examples() {
        let flat = stats_of(&[&[2.0, 2.0], &[5.0, 5.0]]);
        assert_eq!(
            post_stratified_variance(&flat, &[0.5, 0.5], 4).unwrap(),
            0.0
        );

        // Z=1 with sample variance 4 at N=100: second term vanishes exactly.
        let single = stats_of(&[&[0.0, 4.0, 2.0]]); // variance = 4
        assert_eq!(single[0].variance(), Some(4.0));
        assert_eq!(
            post_stratified_variance(&single, &[1.0], 100).unwrap(),
            0.04
        );

        // p=(.5,.5), s2=(1,9), N=100 -> 0.05 + 0.0005.
        let two = stats_of(&[&[1.0, 2.0, 3.0], &[0.0, 6.0, 3.0]]);
        assert_eq!(two[0].variance(), Some(1.0));
        assert_eq!(two[1].variance(), Some(9.0));
        assert_abs_diff_eq!(
            post_stratified_variance(&two, &[0.5, 0.5], 100).unwrap(),
            0.0505,
            epsilon = 1e-15
        );

        let thin = stats_of(&[&[1.0], &[2.0, 3.0]]);
        assert!(post_stratified_variance(&thin, &[0.5, 0.5], 3).is_err());
    }

    #[test]
    fn neyman_weight_examples() {
        let w = neyman_weights(&[0.3, 0.7], &[2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.7, epsilon = 1e-15);

        let w = neyman_weights(&[0.5, 0.5], &[1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.75, epsilon = 1e-15);

        let w = neyman_weights(&[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);

        assert!(matches!(
            neyman_weights(&[0.5, 0.5], &[0.0, 0.0]),
            Err(Error::DegenerateAllocation)
        ));
    }

    #[test]
    fn analytic_variance_examples() {
        let (opt, prop) = analytic_variances(&[0.4, 0.6], &[2.0, 2.0], 10);
        assert_abs_diff_eq!(opt, prop, epsilon = 1e-15);

        let (opt, prop) = analytic_variances(&[0.5, 0.5], &[1.0, 3.0], 1);
        assert_abs_diff_eq!(opt, 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(prop, 5.0, epsilon = 1e-15);

        let (opt, prop) = analytic_variances(&[1.0], &[3.0], 4);
        assert_abs_diff_eq!(opt, 2.25, epsilon = 1e-15);
        assert_abs_diff_eq!(prop, 2.25, epsilon = 1e-15);
    }

    #[test]
    fn allocation_inflation_examples() {
        assert_eq!(allocation_inflation(&[5.0, 5.0], &[5.0, 5.0], 10.0), 1.0);
        assert_abs_diff_eq!(
            allocation_inflation(&[5.0, 5.0], &[8.0, 2.0], 10.0),
            1.36,
            epsilon = 1e-12
        );
        // Same absolute mismatch at doubled N: inflation shrinks toward 1.
        let small = allocation_inflation(&[5.0, 5.0], &[8.0, 2.0], 10.0);
        let large = allocation_inflation(&[10.0, 10.0], &[13.0, 7.0], 20.0);
        assert!(large < small && large > 1.0);
    }

    #[test]
    fn selective_allocation_indicator() {
        let mut stream = RandomStream::derive(1, 0, "alloc");
        // Stratum 1 already holds its full share; only stratum 2 is eligible.
        for _ in 0..20 {
            let z = selective_random_stratum(&[0.5, 0.5], &[10, 0], 10, &mut stream).unwrap();
            assert_eq!(z, 1);
        }
        assert!(matches!(
            selective_random_stratum(&[0.2, 0.3], &[5, 5], 10, &mut stream),
            Err(Error::AllocationExhausted)
        ));
    }

    #[test]
    fn selective_allocation_frequencies() {
        let mut stream = RandomStream::derive(2, 0, "alloc");
        let v = [0.3, 0.7];
        let draws = 10_000usize;
        let mut count1 = 0usize;
        for _ in 0..draws {
            // Both eligible: shares kept at zero.
            if selective_random_stratum(&v, &[0, 0], 10, &mut stream).unwrap() == 1 {
                count1 += 1;
            }
        }
        // Binomial(10^4, 0.7): sd ~ 45.8; 5 sigma band.
        let expected = 7000.0;
        let sd = (draws as f64 * 0.3 * 0.7).sqrt();
        assert!(
            ((count1 as f64) - expected).abs() < 5.0 * sd,
            "count = {count1}"
        );
    }

    fn interval_structure(cuts: Vec<f64>, p: Vec<f64>) -> StratificationStructure {
        let cov = Covariate {
            source: CovariateSource::RealInput(0),
            transform: Transform::Identity,
        };
        StratificationStructure::intervals(cov, cuts, p, Provenance::ConcomitantReal).unwrap()
    }

    #[test]
    fn structure_validation_and_membership() {
        assert!(StratificationStructure::intervals(
            Covariate {
                source: CovariateSource::RealInput(0),
                transform: Transform::Identity
            },
            vec![0.5, 0.4],
            vec![0.3, 0.3, 0.4],
            Provenance::ConcomitantReal,
        )
        .is_err());

        let s = interval_structure(vec![0.3, 0.7], vec![0.3, 0.4, 0.3]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.stratum_of_input(&[0.1]), Some(0));
        assert_eq!(s.stratum_of_input(&[0.3]), Some(1)); // cut belongs right
        assert_eq!(s.stratum_of_input(&[0.9]), Some(2));

        let bad_p = StratificationStructure::intervals(
            Covariate {
                source: CovariateSource::RealInput(0),
                transform: Transform::Identity,
            },
            vec![0.5],
            vec![0.6, 0.6],
            Provenance::ConcomitantReal,
        );
        assert!(bad_p.is_err());
    }

    #[test]
    fn trivial_post_stratification_is_bit_identical_to_saa() {
        let losses = [0.25, 1.5, 2.0, 0.125, 3.5, 0.75];
        let ds = Dataset::new(
            losses
                .iter()
                .map(|&l| DataPoint::new(vec![l], vec![0.0]).unwrap())
                .collect(),
        )
        .unwrap();
        let observations: Vec<Observation> = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| Observation {
                dataset_index: i,
                loss: l,
                aux: AuxiliaryRecord::empty(),
            })
            .collect();
        let est = post_stratify_sample(&StratificationStructure::trivial(), &ds, &observations)
            .unwrap();
        let saa = RunningStats::from_slice(&losses);
        assert_eq!(est.mean, saa.mean());
        assert_eq!(est.variance, saa.variance().unwrap() / losses.len() as f64);
    }

    #[test]
    fn constant_within_strata_gives_zero_variance() {
        let s = interval_structure(vec![0.5], vec![0.5, 0.5]);
        let ds = Dataset::new(
            [0.1, 0.2, 0.8, 0.9]
                .iter()
                .map(|&x| DataPoint::new(vec![x], vec![0.0]).unwrap())
                .collect(),
        )
        .unwrap();
        let observations: Vec<Observation> = (0..4)
            .map(|i| Observation {
                dataset_index: i,
                loss: if i < 2 { 1.0 } else { 5.0 },
                aux: AuxiliaryRecord::empty(),
            })
            .collect();
        let est = post_stratify_sample(&s, &ds, &observations).unwrap();
        assert_eq!(est.variance, 0.0);
        assert_abs_diff_eq!(est.mean, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_stratum_merges_with_adjacent_interval() {
        // Middle stratum has one sample; it must merge with a neighbor and
        // the p values must sum.
        let stats = stats_of(&[&[1.0, 2.0, 3.0], &[10.0], &[5.0, 6.0]]);
        let groups = merge_degenerate(&stats, &[0.5, 0.2, 0.3], MergeTopology::Chain).unwrap();
        assert_eq!(groups.len(), 2);
        // Left neighbor has 3 samples vs right's 2: merge goes left.
        assert_eq!(groups[0].members, vec![0, 1]);
        assert_abs_diff_eq!(groups[0].p, 0.7, epsilon = 1e-15);
        assert_eq!(groups[0].stats.count(), 4);
        assert_eq!(groups[1].members, vec![2]);
    }

    #[test]
    fn unmergeable_structure_fails() {
        let stats = stats_of(&[&[1.0]]);
        assert!(post_stratified_estimate(
            &StratificationStructure::trivial(),
            stats
        )
        .is_err());
    }

    #[test]
    fn multinomial_bin_counts_pass_chi_square() {
        // Dataset with stratum masses (0.2, 0.3, 0.5).
        let mut points = Vec::new();
        for _ in 0..2 {
            points.push(DataPoint::new(vec![0.1], vec![0.0]).unwrap());
        }
        for _ in 0..3 {
            points.push(DataPoint::new(vec![0.5], vec![0.0]).unwrap());
        }
        for _ in 0..5 {
            points.push(DataPoint::new(vec![0.9], vec![0.0]).unwrap());
        }
        let ds = Dataset::new(points).unwrap();
        let s = interval_structure(vec![0.3, 0.7], vec![0.2, 0.3, 0.5]);
        let mut stream = RandomStream::derive(17, 0, "gof");
        let trials = 10_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..trials {
            let i = ds.draw_index(&mut stream);
            let z = s
                .stratum_of(ds.point(i), &AuxiliaryRecord::empty());
            counts[z] += 1;
        }
        let expected = [0.2, 0.3, 0.5].map(|p| p * trials as f64);
        let chi2: f64 = counts
            .iter()
            .zip(expected)
            .map(|(&o, e)| (o as f64 - e) * (o as f64 - e) / e)
            .sum();
        // chi-square df=2 critical value at alpha = 0.001.
        assert!(chi2 < 13.8155, "chi2 = {chi2}, counts = {counts:?}");
    }

    proptest! {
        // Law of total variance ordering: optimal <= proportional <=
        // unstratified.
        #[test]
        fn variance_ordering(
            z in 1usize..=6,
            seed in 0u64..1000,
        ) {
            let mut stream = RandomStream::derive(seed, 0, "fixture");
            let raw: Vec<f64> = (0..z).map(|_| stream.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let sigma: Vec<f64> = (0..z).map(|_| stream.random_range(0.0..5.0)).collect();
            let means: Vec<f64> = (0..z).map(|_| stream.random_range(-3.0..3.0)).collect();
            let n = 100;
            let (opt, prop) = analytic_variances(&p, &sigma, n);
            let grand: f64 = p.iter().zip(&means).map(|(&pz, &m)| pz * m).sum();
            let unstrat: f64 = p
                .iter()
                .zip(&sigma)
                .zip(&means)
                .map(|((&pz, &sz), &m)| pz * (sz * sz + (m - grand) * (m - grand)))
                .sum::<f64>()
                / n as f64;
            prop_assert!(opt <= prop * (1.0 + 1e-12));
            prop_assert!(prop <= unstrat * (1.0 + 1e-12));
        }

        // Neyman weights always form a probability vector.
        #[test]
        fn neyman_weights_normalize(
            z in 1usize..=6,
            seed in 0u64..1000,
        ) {
            let mut stream = RandomStream::derive(seed, 1, "fixture");
            let raw: Vec<f64> = (0..z).map(|_| stream.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let sigma: Vec<f64> = (0..z).map(|_| stream.random_range(0.01..5.0)).collect();
            let w = neyman_weights(&p, &sigma).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }
}
