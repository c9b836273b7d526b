use super::{check_state_count, Provenance, QuantizationSolution, QuantizerError, Result};
use crate::scenario::{barycentre, ScenarioSet};

/// Exact optimum for a one-dimensional measure.
///
/// Optimal cells are contiguous in sorted order, so the best split into
/// `states` runs is found by dynamic programming in `O(L^2 S)`. Run costs
/// are accumulated with a weighted Welford update while the run grows
/// leftwards.
pub fn solve_dp_1d(set: &ScenarioSet, states: usize) -> Result<QuantizationSolution> {
    if set.dim() != 1 {
        return Err(QuantizerError::DimensionNotOne(set.dim()));
    }
    check_state_count(set, states)?;

    let n = set.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| set.point(a)[0].total_cmp(&set.point(b)[0]).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&l| set.point(l)[0]).collect();
    let ws: Vec<f64> = order.iter().map(|&l| set.weight(l)).collect();

    // cost[s][j]: best cost of the first j sorted points in s runs.
    // start[s][j]: first index of the last run in that optimum.
    let mut cost = vec![vec![f64::INFINITY; n + 1]; states + 1];
    let mut start = vec![vec![0usize; n + 1]; states + 1];
    cost[0][0] = 0.0;
    for s in 1..=states {
        for j in s..=n {
            let (mut weight, mut mean, mut run_cost) = (0.0, 0.0, 0.0);
            // run = xs[i..j], grown from the right end
            for i in (s - 1..j).rev() {
                let total = weight + ws[i];
                let delta = xs[i] - mean;
                run_cost += ws[i] * weight / total * delta * delta;
                mean += ws[i] / total * delta;
                weight = total;
                let candidate = cost[s - 1][i] + run_cost;
                if candidate < cost[s][j] || (candidate == cost[s][j] && i < start[s][j]) {
                    cost[s][j] = candidate;
                    start[s][j] = i;
                }
            }
        }
    }

    let mut bounds = Vec::with_capacity(states);
    let mut j = n;
    for s in (1..=states).rev() {
        let i = start[s][j];
        bounds.push((i, j));
        j = i;
    }
    bounds.reverse();
    let centers = bounds
        .iter()
        .map(|&(i, j)| barycentre(set, &order[i..j]))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut solution = QuantizationSolution::from_centers(set, centers, Provenance::Dp1d, None)?;
    solution.lower_bound = Some(solution.objective);
    Ok(solution)
}
