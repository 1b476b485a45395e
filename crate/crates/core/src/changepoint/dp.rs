//! Penalized optimal partitioning, with and without PELT pruning.
//!
//! Both solvers minimize `sum_i C(segment_i) + beta * m` over segmentations
//! whose segments all have at least `min_size` rows. `F(0) = -beta`, so
//! `F(t)` charges one penalty per changepoint.
//!
//! Pruning removes candidate `s` once some later `t` satisfies
//! `F(s) + C(s..t) > F(t)`. Such an `s` cannot be optimal for any end point
//! `>= t + min_size`, but it may still be the best admissible choice for end
//! points in `(t, t + min_size)` where `t` itself is not yet admissible, so
//! the removal only takes effect at `t + min_size`. With strict inequality
//! no tied optimum is ever discarded, and both solvers break ties the same
//! way: lower cost, then fewer changepoints, then the earlier previous
//! changepoint.

use super::cost::SegmentCost;

const NO_POINTER: usize = usize::MAX;

/// A candidate dropped from the admissible set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrunedCandidate {
    pub candidate: usize,
    /// End point whose optimal cost triggered the rule.
    pub dominated_by: usize,
    /// First end point at which the candidate is no longer considered.
    pub removed_from: usize,
}

/// Full dynamic-programming state after a solve.
#[derive(Debug, Clone)]
pub struct DpTrace {
    /// `F(t)` for `t = 0..=n`; infinite where no admissible segmentation of
    /// the prefix exists.
    pub optimal_cost: Vec<f64>,
    /// Optimal previous changepoint for each end point (`usize::MAX` if undefined).
    pub back_pointer: Vec<usize>,
    /// Changepoint count of the optimal segmentation of each prefix.
    pub changepoint_count: Vec<usize>,
    /// Empty for the unpruned solver.
    pub pruned: Vec<PrunedCandidate>,
    /// Largest admissible-set size seen during the solve.
    pub max_candidates: usize,
}

impl DpTrace {
    pub fn changepoints(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut t = self.optimal_cost.len() - 1;
        while t > 0 {
            let s = self.back_pointer[t];
            debug_assert_ne!(s, NO_POINTER);
            if s > 0 {
                out.push(s);
            }
            t = s;
        }
        out.reverse();
        out
    }

    pub fn total_cost(&self) -> f64 {
        *self.optimal_cost.last().expect("non-empty trace")
    }

    pub fn is_defined(&self, t: usize) -> bool {
        self.back_pointer[t] != NO_POINTER
    }
}

/// Solves the penalized problem. Caller guarantees `n >= min_size >= 1`.
pub(crate) fn solve<C: SegmentCost>(cost: &C, beta: f64, min_size: usize, prune: bool) -> DpTrace {
    let n = cost.n();
    let m = min_size.max(1);
    debug_assert!(n >= m);

    let mut f = vec![f64::INFINITY; n + 1];
    let mut count = vec![0usize; n + 1];
    let mut back = vec![NO_POINTER; n + 1];
    f[0] = -beta;

    let mut candidates: Vec<usize> = vec![0];
    let mut removal_due: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    let mut doomed = vec![false; n + 1];
    let mut removed = vec![false; n + 1];
    let mut pruned = Vec::new();
    let mut partial = Vec::new();
    let mut max_candidates = 1;

    for t in m..=n {
        if t >= 2 * m {
            candidates.push(t - m);
        }
        if prune && !removal_due[t].is_empty() {
            for &s in &removal_due[t] {
                removed[s] = true;
            }
            candidates.retain(|&s| !removed[s]);
        }
        max_candidates = max_candidates.max(candidates.len());

        // candidates are sorted ascending, so strict comparisons keep the
        // earliest of fully tied options.
        partial.clear();
        let mut best = f64::INFINITY;
        let mut best_count = usize::MAX;
        let mut best_s = NO_POINTER;
        for &s in &candidates {
            let without_penalty = f[s] + cost.cost(s, t);
            partial.push(without_penalty);
            let value = without_penalty + beta;
            let c = count[s] + usize::from(s > 0);
            if value < best || (value == best && c < best_count) {
                best = value;
                best_count = c;
                best_s = s;
            }
        }
        f[t] = best;
        count[t] = best_count;
        back[t] = best_s;

        if prune && t + m <= n {
            for (&s, &p) in candidates.iter().zip(&partial) {
                if !doomed[s] && p > best {
                    doomed[s] = true;
                    removal_due[t + m].push(s);
                    pruned.push(PrunedCandidate { candidate: s, dominated_by: t, removed_from: t + m });
                }
            }
        }
    }

    DpTrace { optimal_cost: f, back_pointer: back, changepoint_count: count, pruned, max_candidates }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::changepoint::cost::{CostModel, PrefixCost};

    /// Enumerates every segmentation with segments of at least `m` rows.
    fn brute_force(values: &[f64], beta: f64, m: usize) -> (f64, Vec<usize>) {
        let table = PrefixCost::new(values, CostModel::L2Mean).unwrap();
        let n = values.len();
        let inner: Vec<usize> = (1..n).collect();
        let mut best = (f64::INFINITY, usize::MAX, Vec::new());
        for mask in 0u32..(1 << inner.len()) {
            let cps: Vec<usize> = inner.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &c)| c).collect();
            let mut bounds = vec![0];
            bounds.extend(&cps);
            bounds.push(n);
            if bounds.windows(2).any(|w| w[1] - w[0] < m) {
                continue;
            }
            let total: f64 = bounds.windows(2).map(|w| table.cost(w[0], w[1])).sum::<f64>() + beta * cps.len() as f64;
            if total < best.0 - 1e-12 || ((total - best.0).abs() <= 1e-12 && cps.len() < best.1) {
                best = (total, cps.len(), cps);
            }
        }
        (best.0, best.2)
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let series: [&[f64]; 4] = [
            &[0.0, 0.1, -0.1, 5.0, 5.2, 4.9, 5.1, 0.0, 0.2, 0.1, -0.2, 0.0],
            &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            &[0.0, 3.0, 0.0, 3.0, 0.0, 3.0, 0.0, 3.0, 0.0, 3.0],
            &[2.0, 2.5, 1.8, 2.2, 9.0, 9.1, 8.7, 9.4, 9.0, 3.0, 3.3, 2.9, 3.1],
        ];
        for values in series {
            for &(beta, m) in &[(0.5, 1), (1.0, 2), (4.0, 2), (0.1, 3), (25.0, 2)] {
                let table = PrefixCost::new(values, CostModel::L2Mean).unwrap();
                let (cost, cps) = brute_force(values, beta, m);
                for prune in [false, true] {
                    let trace = solve(&table, beta, m, prune);
                    assert!((trace.total_cost() - cost).abs() < 1e-9, "prune={prune} beta={beta} m={m}");
                    assert_eq!(trace.changepoints(), cps, "prune={prune} beta={beta} m={m} {values:?}");
                }
            }
        }
    }

    #[test]
    fn two_level_step_found_by_enumeration() {
        for k in 2..18 {
            let values: Vec<f64> = (0..20).map(|i| if i < k { 1.0 } else { 4.0 }).collect();
            let (_, cps) = brute_force(&values, 1.0, 2);
            assert_eq!(cps, vec![k]);
            let table = PrefixCost::new(&values, CostModel::L2Mean).unwrap();
            assert_eq!(solve(&table, 1.0, 2, false).changepoints(), vec![k]);
        }
    }
}
