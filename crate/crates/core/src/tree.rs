//! Greedy binary-tree stratification.
//!
//! Each leaf's best split minimizes the sample-weighted child variance
//! `s2_l * Q_l + s2_r * Q_r` over every variable and every midpoint between
//! consecutive distinct sample values. A split's worth is measured by the
//! information gain `G = -delta * ln(delta)` of the fractional reduction
//! `delta` it produces in the post-stratified variance; growth continues only
//! while each accepted gain beats the previous one.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::stats::RunningStats;
use crate::strata::{
    Observation, SplitNode, StrataBuild, StrataBuilder, StratificationStructure, StratumStats,
};

/// One pilot sample as seen by the splitting scan.
#[derive(Debug, Clone, Copy)]
pub struct LeafSample<'a> {
    pub x: &'a [f64],
    pub loss: f64,
}

/// A candidate split of one leaf: variable, split value, and the child
/// statistics behind the objective value.
#[derive(Debug, Clone)]
pub struct SplitEvaluation {
    pub variable: usize,
    pub value: f64,
    /// Child sample weights relative to the whole pilot; they sum to the
    /// parent's weight.
    pub left_weight: f64,
    pub right_weight: f64,
    pub left_stats: StratumStats,
    pub right_stats: StratumStats,
    /// `s2_l * Q_l + s2_r * Q_r`.
    pub objective: f64,
}

/// Scans every candidate variable and admissible split value of a leaf,
/// minimizing the weighted child variance. Returns `None` when no split
/// leaves more than `tau` samples (and at least two) on both sides.
///
/// `total_n` is the whole pilot size; ties break toward the lowest variable
/// index, then the smallest split value.
pub fn best_split(
    samples: &[LeafSample],
    variables: &[usize],
    total_n: usize,
    tau: usize,
) -> Option<SplitEvaluation> {
    let n = samples.len();
    let min_child = (tau + 1).max(2);
    if n < 2 * min_child {
        return None;
    }
    let mut best: Option<SplitEvaluation> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for &var in variables {
        order.sort_by(|&a, &b| samples[a].x[var].total_cmp(&samples[b].x[var]));
        // Prefix statistics of the sorted losses; suffix built in reverse.
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(RunningStats::new());
        for &i in &order {
            let mut s = *prefix.last().unwrap();
            s.push(samples[i].loss);
            prefix.push(s);
        }
        let mut suffix = vec![RunningStats::new(); n + 1];
        for k in (0..n).rev() {
            let mut s = suffix[k + 1];
            s.push(samples[order[k]].loss);
            suffix[k] = s;
        }
        for k in min_child..=(n - min_child) {
            let lo = samples[order[k - 1]].x[var];
            let hi = samples[order[k]].x[var];
            if lo == hi {
                continue; // not a boundary between distinct values
            }
            let value = 0.5 * (lo + hi);
            let left = prefix[k];
            let right = suffix[k];
            let (Some(var_l), Some(var_r)) = (left.variance(), right.variance()) else {
                continue;
            };
            let q_l = k as f64 / total_n as f64;
            let q_r = (n - k) as f64 / total_n as f64;
            let objective = var_l * q_l + var_r * q_r;
            let better = best
                .as_ref()
                .is_none_or(|b| objective < b.objective);
            if better {
                best = Some(SplitEvaluation {
                    variable: var,
                    value,
                    left_weight: q_l,
                    right_weight: q_r,
                    left_stats: left,
                    right_stats: right,
                    objective,
                });
            }
        }
    }
    best
}

/// Information gained by a split producing fractional variance reduction
/// `delta`: `-delta * ln(delta)` on (0, 1), negative infinity otherwise.
pub fn information_gain(delta: f64) -> f64 {
    if delta > 0.0 && delta < 1.0 {
        -delta * delta.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Contribution of one stratum to the post-stratified variance, scaled by N:
/// `(p + (1-p)/N) * s2`.
fn stratum_contribution(p: f64, variance: f64, n: f64) -> f64 {
    (p + (1.0 - p) / n) * variance
}

/// Post-stratified variance after splitting one stratum, with true (whole
/// dataset) probabilities for the parent and both children and the pilot
/// size `n`.
#[allow(clippy::too_many_arguments)]
pub fn variance_if_split(
    structure_variance: f64,
    n: usize,
    parent_p: f64,
    parent_stats: &StratumStats,
    left_p: f64,
    left_stats: &StratumStats,
    right_p: f64,
    right_stats: &StratumStats,
) -> Result<f64> {
    let nf = n as f64;
    let parent_var = parent_stats.variance().ok_or_else(|| {
        Error::InvalidSplit("parent stratum needs at least two samples".into())
    })?;
    let left_var = left_stats
        .variance()
        .ok_or_else(|| Error::InvalidSplit("left child has fewer than two samples".into()))?;
    let right_var = right_stats
        .variance()
        .ok_or_else(|| Error::InvalidSplit("right child has fewer than two samples".into()))?;
    let reduction = (stratum_contribution(parent_p, parent_var, nf)
        - stratum_contribution(left_p, left_var, nf)
        - stratum_contribution(right_p, right_var, nf))
        / nf;
    Ok(structure_variance - reduction)
}

/// Running variance/gain bookkeeping while the tree grows.
#[derive(Debug, Clone, Copy)]
pub struct GainLedger {
    /// Post-stratified variance estimate of the current structure.
    pub structure_variance: f64,
    /// Gain of the most recently accepted split.
    pub prev_gain: f64,
}

/// Per-leaf evaluation against the current ledger.
#[derive(Debug, Clone, Copy)]
pub struct LeafGain {
    pub leaf: usize,
    pub gain: f64,
    pub delta: f64,
    pub variance_if_split: f64,
}

struct CachedSplit {
    eval: SplitEvaluation,
    left_p: f64,
    right_p: f64,
    /// Absolute variance reduction the split would produce.
    reduction: f64,
}

struct Leaf {
    pilot: Vec<usize>,
    data: Vec<u32>,
    p: f64,
    split: Option<CachedSplit>,
}

/// Result of tree construction: the structure plus the gain of each accepted
/// split in acceptance order.
#[derive(Debug, Clone)]
pub struct TreeBuild {
    pub structure: StratificationStructure,
    pub accepted_gains: Vec<f64>,
}

impl TreeBuild {
    fn trivial() -> Self {
        Self {
            structure: StratificationStructure::trivial(),
            accepted_gains: Vec::new(),
        }
    }
}

/// Builds a stratification from the pilot sample: a mandatory first split,
/// then repeated acceptance of the leaf whose information gain beats the
/// previous accepted gain. Returns the trivial structure when the pilot is
/// too small, has no loss variance, or admits no first split.
pub fn build_tree_strata(
    dataset: &Dataset,
    pilot: &[Observation],
    variables: &[usize],
    tau: usize,
) -> TreeBuild {
    let n_pilot = pilot.len();
    let n_data = dataset.len() as f64;
    if n_pilot < 2 * tau + 2 {
        return TreeBuild::trivial();
    }
    let losses: Vec<f64> = pilot.iter().map(|o| o.loss).collect();
    let xs: Vec<&[f64]> = pilot
        .iter()
        .map(|o| dataset.point(o.dataset_index).x.as_slice())
        .collect();
    let root_stats = RunningStats::from_slice(&losses);
    let root_var = root_stats.variance().unwrap_or(0.0);
    if root_var <= 0.0 {
        return TreeBuild::trivial();
    }

    let leaf_samples = |indices: &[usize]| -> Vec<LeafSample> {
        indices
            .iter()
            .map(|&i| LeafSample {
                x: xs[i],
                loss: losses[i],
            })
            .collect()
    };
    let evaluate_leaf = |pilot_idx: &[usize], data_idx: &[u32]| -> Option<CachedSplit> {
        if pilot_idx.len() <= 2 * tau {
            return None;
        }
        let eval = best_split(&leaf_samples(pilot_idx), variables, n_pilot, tau)?;
        // True child probabilities over the whole modeling dataset, computed
        // once per candidate leaf rather than per scanned split value.
        let left_count = data_idx
            .iter()
            .filter(|&&i| dataset.point(i as usize).x[eval.variable] <= eval.value)
            .count();
        let left_p = left_count as f64 / n_data;
        let right_p = (data_idx.len() - left_count) as f64 / n_data;
        let parent_p = data_idx.len() as f64 / n_data;
        let parent_stats = RunningStats::from_slice(
            &pilot_idx.iter().map(|&i| losses[i]).collect::<Vec<_>>(),
        );
        let nf = n_pilot as f64;
        let reduction = (stratum_contribution(parent_p, parent_stats.variance()?, nf)
            - stratum_contribution(left_p, eval.left_stats.variance()?, nf)
            - stratum_contribution(right_p, eval.right_stats.variance()?, nf))
            / nf;
        Some(CachedSplit {
            eval,
            left_p,
            right_p,
            reduction,
        })
    };

    // Baseline: trivial structure variance on the pilot.
    let mut ledger = GainLedger {
        structure_variance: root_var / n_pilot as f64,
        prev_gain: f64::NEG_INFINITY,
    };

    let all_pilot: Vec<usize> = (0..n_pilot).collect();
    let all_data: Vec<u32> = (0..dataset.len() as u32).collect();
    let Some(first) = evaluate_leaf(&all_pilot, &all_data) else {
        return TreeBuild::trivial();
    };

    // The first split is mandatory whenever it is admissible.
    let mut leaves: Vec<Leaf> = Vec::new();
    let mut siblings: Vec<usize> = vec![1, 0];
    let mut accepted: Vec<(usize, usize, f64)> = Vec::new(); // (leaf, variable, value)
    let mut accepted_gains: Vec<f64> = Vec::new();
    {
        let delta = first.reduction / ledger.structure_variance;
        ledger.prev_gain = information_gain(delta);
        ledger.structure_variance -= first.reduction;
        accepted_gains.push(ledger.prev_gain);
        let (lp, ld, rp, rd) = partition(&all_pilot, &all_data, &xs, dataset, &first.eval);
        accepted.push((0, first.eval.variable, first.eval.value));
        let left_split = evaluate_leaf(&lp, &ld);
        let right_split = evaluate_leaf(&rp, &rd);
        leaves.push(Leaf {
            p: first.left_p,
            pilot: lp,
            data: ld,
            split: left_split,
        });
        leaves.push(Leaf {
            p: first.right_p,
            pilot: rp,
            data: rd,
            split: right_split,
        });
    }

    loop {
        // Evaluate each leaf's gain against the current structure variance.
        let mut chosen: Option<LeafGain> = None;
        for (z, leaf) in leaves.iter().enumerate() {
            let Some(split) = &leaf.split else { continue };
            let delta = split.reduction / ledger.structure_variance;
            let gain = information_gain(delta);
            if gain <= ledger.prev_gain {
                continue;
            }
            let candidate = LeafGain {
                leaf: z,
                gain,
                delta,
                variance_if_split: ledger.structure_variance - split.reduction,
            };
            if chosen.is_none_or(|c| gain > c.gain) {
                chosen = Some(candidate);
            }
        }
        let Some(pick) = chosen else { break };
        let z = pick.leaf;
        let split = leaves[z].split.take().expect("chosen leaf has a split");
        ledger.prev_gain = pick.gain;
        ledger.structure_variance = pick.variance_if_split;
        accepted_gains.push(pick.gain);
        let (lp, ld, rp, rd) = partition(&leaves[z].pilot, &leaves[z].data, &xs, dataset, &split.eval);
        accepted.push((z, split.eval.variable, split.eval.value));
        let new_index = leaves.len();
        siblings[z] = new_index;
        siblings.push(z);
        let left_split = evaluate_leaf(&lp, &ld);
        let right_split = evaluate_leaf(&rp, &rd);
        leaves[z] = Leaf {
            p: split.left_p,
            pilot: lp,
            data: ld,
            split: left_split,
        };
        leaves.push(Leaf {
            p: split.right_p,
            pilot: rp,
            data: rd,
            split: right_split,
        });
    }

    let probabilities: Vec<f64> = leaves.iter().map(|l| l.p).collect();
    let root = replay_splits(&accepted);
    let structure = StratificationStructure::tree(root, siblings, probabilities)
        .expect("tree construction yields a valid partition");
    TreeBuild {
        structure,
        accepted_gains,
    }
}

fn partition(
    pilot_idx: &[usize],
    data_idx: &[u32],
    xs: &[&[f64]],
    dataset: &Dataset,
    eval: &SplitEvaluation,
) -> (Vec<usize>, Vec<u32>, Vec<usize>, Vec<u32>) {
    let (mut lp, mut rp) = (Vec::new(), Vec::new());
    for &i in pilot_idx {
        if xs[i][eval.variable] <= eval.value {
            lp.push(i);
        } else {
            rp.push(i);
        }
    }
    let (mut ld, mut rd) = (Vec::new(), Vec::new());
    for &i in data_idx {
        if dataset.point(i as usize).x[eval.variable] <= eval.value {
            ld.push(i);
        } else {
            rd.push(i);
        }
    }
    (lp, ld, rp, rd)
}

/// Rebuilds the split tree from the accepted-split log. The left child keeps
/// the parent's stratum index; the right child takes the next fresh index.
fn replay_splits(accepted: &[(usize, usize, f64)]) -> SplitNode {
    fn replace(node: &mut SplitNode, target: usize, variable: usize, value: f64, fresh: usize) {
        match node {
            SplitNode::Leaf { stratum } if *stratum == target => {
                *node = SplitNode::Split {
                    variable,
                    value,
                    left: Box::new(SplitNode::Leaf { stratum: target }),
                    right: Box::new(SplitNode::Leaf { stratum: fresh }),
                };
            }
            SplitNode::Leaf { .. } => {}
            SplitNode::Split { left, right, .. } => {
                replace(left, target, variable, value, fresh);
                replace(right, target, variable, value, fresh);
            }
        }
    }
    let mut root = SplitNode::Leaf { stratum: 0 };
    for (round, &(target, variable, value)) in accepted.iter().enumerate() {
        replace(&mut root, target, variable, value, round + 1);
    }
    root
}

/// Strata-builder strategy wrapping [`build_tree_strata`].
pub struct TreeStrataBuilder {
    pub tau: usize,
    /// Input feature indices considered for splitting; `None` means all.
    pub variables: Option<Vec<usize>>,
}

impl StrataBuilder for TreeStrataBuilder {
    fn mode_name(&self) -> &'static str {
        "bt"
    }

    fn build(
        &self,
        dataset: &Dataset,
        pilot: &[Observation],
        _stream: &mut RandomStream,
    ) -> StrataBuild {
        let all: Vec<usize>;
        let variables: &[usize] = match &self.variables {
            Some(v) => v,
            None => {
                all = (0..dataset.input_dim()).collect();
                &all
            }
        };
        StrataBuild::plain(build_tree_strata(dataset, pilot, variables, self.tau).structure)
    }
}
