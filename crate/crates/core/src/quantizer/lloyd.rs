use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_state_count, nearest, Provenance, QuantizationSolution, Result};
use crate::scenario::{squared_distance, ScenarioSet};

pub const MAX_LLOYD_ITERATIONS: usize = 1000;

/// Outcome of a single seeded Lloyd run.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub solution: QuantizationSolution,
    /// Objective after every assignment step; non-increasing.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Best of `restarts` independent Lloyd runs.
///
/// Run `r` draws from stream `r` of a ChaCha generator keyed by `seed`, so
/// the result does not depend on how runs are scheduled. Ties between runs
/// go to the lowest restart index.
pub fn solve_lloyd(set: &ScenarioSet, states: usize, restarts: usize, seed: u64) -> Result<QuantizationSolution> {
    check_state_count(set, states)?;
    let runs: Vec<LloydRun> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| lloyd_run(set, states, seed, r))
        .collect::<Result<_>>()?;
    let best = runs
        .into_iter()
        .reduce(|best, run| {
            if run.solution.objective < best.solution.objective {
                run
            } else {
                best
            }
        })
        .expect("at least one restart");
    Ok(best.solution)
}

pub fn lloyd_run(set: &ScenarioSet, states: usize, seed: u64, stream: u64) -> Result<LloydRun> {
    check_state_count(set, states)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let mut centers = seed_centers(set, states, &mut rng);
    let mut previous: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let converged = loop {
        let (assignment, distances, repaired) = assign_with_repair(set, &mut centers);
        trace.push(
            distances
                .iter()
                .zip(set.weights())
                .map(|(d, w)| d * w)
                .sum::<f64>(),
        );
        if !repaired && previous.as_ref() == Some(&assignment) {
            break true;
        }
        if iterations == MAX_LLOYD_ITERATIONS {
            break false;
        }
        update_centers(set, &assignment, &mut centers);
        previous = Some(assignment);
        iterations += 1;
    };

    let mut solution = QuantizationSolution::from_centers(set, centers, Provenance::Lloyd, None)?;
    solution.converged = converged;
    Ok(LloydRun {
        solution,
        objective_trace: trace,
        iterations,
    })
}

/// Weighted k-means++: first center drawn by probability mass, each next
/// one proportionally to `pi_l` times the squared distance to the nearest
/// chosen center.
fn seed_centers(set: &ScenarioSet, states: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = WeightedIndex::new(set.weights())
        .expect("weights are positive")
        .sample(rng);
    let mut centers = vec![set.point(first).to_vec()];
    let mut nearest_sq: Vec<f64> = set.points().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < states {
        let scores: Vec<f64> = nearest_sq.iter().zip(set.weights()).map(|(d, w)| d * w).collect();
        // at least `states` distinct points exist, so some score is positive
        let next = WeightedIndex::new(&scores).expect("positive total score").sample(rng);
        let c = set.point(next).to_vec();
        for (d, p) in nearest_sq.iter_mut().zip(set.points()) {
            *d = d.min(squared_distance(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Nearest-center assignment; a center left without scenarios is moved onto
/// the worst-served scenario and the assignment is redone.
fn assign_with_repair(set: &ScenarioSet, centers: &mut [Vec<f64>]) -> (Vec<usize>, Vec<f64>, bool) {
    let states = centers.len();
    for attempt in 0..=states * set.len() {
        let (assignment, distances): (Vec<usize>, Vec<f64>) =
            set.points().map(|p| nearest(centers, p)).unzip();
        let mut owned = vec![false; states];
        assignment.iter().for_each(|&s| owned[s] = true);
        let Some(empty) = owned.iter().position(|o| !o) else {
            return (assignment, distances, attempt > 0);
        };
        let worst = distances
            .iter()
            .enumerate()
            .fold(0, |w, (l, &d)| if d > distances[w] { l } else { w });
        centers[empty] = set.point(worst).to_vec();
    }
    unreachable!("empty-cell repair always terminates when S <= distinct points")
}

fn update_centers(set: &ScenarioSet, assignment: &[usize], centers: &mut [Vec<f64>]) {
    let dim = set.dim();
    let mut sums = vec![vec![0.0; dim]; centers.len()];
    let mut mass = vec![0.0; centers.len()];
    for (l, &s) in assignment.iter().enumerate() {
        let w = set.weight(l);
        mass[s] += w;
        for (acc, v) in sums[s].iter_mut().zip(set.point(l)) {
            *acc += w * v;
        }
    }
    for (s, c) in centers.iter_mut().enumerate() {
        if mass[s] > 0.0 {
            for (cj, acc) in c.iter_mut().zip(&sums[s]) {
                *cj = acc / mass[s];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{solve_exact, QuantizerError};
    use super::*;
    use rand::Rng;

    fn random_set(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> ScenarioSet {
        let pts = (0..len).map(|_| (0..dim).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let w: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum: f64 = w.iter().sum();
        ScenarioSet::new(pts, w.iter().map(|x| x / sum).collect()).unwrap()
    }

    #[test]
    fn single_state_converges_to_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_set(&mut rng, 9, 2);
        let sol = solve_lloyd(&s, 1, 4, 0).unwrap();
        let mean = s.mean();
        for (a, b) in sol.partition.center(0).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((sol.objective - s.variance()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_set(&mut rng, 30, 2);
        assert_eq!(solve_lloyd(&s, 3, 16, 42).unwrap(), solve_lloyd(&s, 3, 16, 42).unwrap());
    }

    #[test]
    fn trace_is_monotone_and_fixed_point_is_centroidal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let s = random_set(&mut rng, 25, 1 + trial % 3);
            let run = lloyd_run(&s, 4, 11, trial as u64).unwrap();
            for pair in run.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "{:?}", run.objective_trace);
            }
            assert!(run.solution.converged);
            assert!(run.solution.centroid_residual(&s).unwrap() < 1e-9);
            assert!((run.objective_trace.last().unwrap() - run.solution.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn never_beats_the_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let s = random_set(&mut rng, 8, 2);
            let exact = solve_exact(&s, 3).unwrap();
            let lloyd = solve_lloyd(&s, 3, 8, 5).unwrap();
            assert!(lloyd.objective >= exact.objective - 1e-9);
        }
    }

    #[test]
    fn too_many_states() {
        let s = ScenarioSet::new(vec![vec![1.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            solve_lloyd(&s, 2, 1, 0),
            Err(QuantizerError::SExceedsSupport { states: 2, distinct: 1 })
        ));
    }
}
