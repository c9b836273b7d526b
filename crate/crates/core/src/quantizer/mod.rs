//! Minimal-size state partitions of a discrete measure.
//!
//! A partition is generated by `S` distinct centers; a point belongs to the
//! state of its nearest center, with ties going to the smallest index. The
//! size of a state is `sum_l pi_l |xi_l - omega|^2` over its scenarios, with
//! `omega` the state's barycentre, and optimal partitions are centroidal
//! Voronoi partitions of a global solution to the location problem.
//!
//! Solvers:
//!
//! * [`solve_exact`]: exhaustive set-partition enumeration (small `L`);
//! * [`solve_dp_1d`]: exact dynamic program for one-dimensional measures;
//! * [`solve_lloyd`]: seeded Lloyd iterations with restarts.

mod dp1d;
mod exact;
mod lloyd;
pub mod miqp;
mod report;
pub mod svg;

pub use dp1d::solve_dp_1d;
pub use exact::{solve_exact, solve_exact_with_limit, DEFAULT_EXACT_LIMIT};
pub use lloyd::{lloyd_run, solve_lloyd, LloydRun, MAX_LLOYD_ITERATIONS};
pub use miqp::{export_miqp, BigM, MiqpModel};
pub use report::{describe_states, StateDescription, StateReport};
pub use svg::{export_partition_svg, render_partition_svg};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{barycentre, squared_distance, ScenarioError, ScenarioSet};

/// Minimum Euclidean separation between two centers.
pub const CENTER_SEPARATION: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QuantizerError {
    #[error("number of states must be at least one")]
    NoStates,
    #[error("{states} states requested but the support has only {distinct} distinct points")]
    SExceedsSupport { states: usize, distinct: usize },
    #[error("{len} scenarios exceed the exact-solver limit of {limit}")]
    InstanceTooLarge { len: usize, limit: usize },
    #[error("operation requires a one-dimensional measure, got dimension {0}")]
    DimensionNotOne(usize),
    #[error("operation requires a two-dimensional measure, got dimension {0}")]
    DimensionNotTwo(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state {0} owns no scenario")]
    EmptyState(usize),
    #[error("centers {0} and {1} coincide")]
    CoincidentCenters(usize, usize),
    #[error("big-M must be positive, got {0}")]
    NonPositiveM(f64),
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = QuantizerError> = std::result::Result<T, E>;

/// Voronoi partition generated by distinct centers, smallest-index ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePartition {
    centers: Vec<Vec<f64>>,
}

impl StatePartition {
    pub fn new(centers: Vec<Vec<f64>>) -> Result<Self> {
        let dim = centers.first().map(Vec::len).ok_or(QuantizerError::NoStates)?;
        for c in &centers {
            if c.len() != dim {
                return Err(QuantizerError::DimensionMismatch {
                    expected: dim,
                    found: c.len(),
                });
            }
        }
        for a in 0..centers.len() {
            for b in a + 1..centers.len() {
                if squared_distance(&centers[a], &centers[b]).sqrt() <= CENTER_SEPARATION {
                    return Err(QuantizerError::CoincidentCenters(a, b));
                }
            }
        }
        Ok(Self { centers })
    }

    pub fn num_states(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn center(&self, s: usize) -> &[f64] {
        &self.centers[s]
    }

    /// Zero-based index of the state containing `xi`: the smallest `s`
    /// attaining `min_j |xi - omega_j|^2`.
    pub fn classify(&self, xi: &[f64]) -> usize {
        nearest(&self.centers, xi).0
    }
}

/// Index and squared distance of the nearest center; strict `<` keeps the
/// smallest index on ties.
pub(crate) fn nearest(centers: &[Vec<f64>], xi: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (s, c) in centers.iter().enumerate() {
        let d = squared_distance(xi, c);
        if d < best.1 {
            best = (s, d);
        }
    }
    best
}

/// Free-function form of [`StatePartition::classify`].
pub fn classify(partition: &StatePartition, xi: &[f64]) -> usize {
    partition.classify(xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Oracle,
    Lloyd,
    Dp1d,
    External,
}

/// Partition together with the assignment it induces on the scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSolution {
    pub partition: StatePartition,
    /// Zero-based state of each scenario (`z_ls = 1` iff `assignment[l] == s`).
    pub assignment: Vec<usize>,
    /// Squared distance of each scenario to its center.
    pub distances: Vec<f64>,
    pub objective: f64,
    pub lower_bound: Option<f64>,
    pub provenance: Provenance,
    pub state_masses: Vec<f64>,
    pub converged: bool,
    /// SHA-256 of the generating scenario set's CSV form.
    pub scenario_digest: String,
}

impl QuantizationSolution {
    /// Classifies every scenario against `centers` and fills in distances,
    /// objective and masses. Fails if a center owns no scenario.
    pub fn from_centers(
        set: &ScenarioSet,
        centers: Vec<Vec<f64>>,
        provenance: Provenance,
        lower_bound: Option<f64>,
    ) -> Result<Self> {
        let partition = StatePartition::new(centers)?;
        if partition.dim() != set.dim() {
            return Err(QuantizerError::DimensionMismatch {
                expected: set.dim(),
                found: partition.dim(),
            });
        }
        let mut assignment = Vec::with_capacity(set.len());
        let mut distances = Vec::with_capacity(set.len());
        let mut masses = vec![0.0; partition.num_states()];
        for (l, p) in set.points().enumerate() {
            let (s, d) = nearest(partition.centers(), p);
            assignment.push(s);
            distances.push(d);
            masses[s] += set.weight(l);
        }
        if let Some(empty) = (0..partition.num_states()).find(|&s| !assignment.contains(&s)) {
            return Err(QuantizerError::EmptyState(empty));
        }
        let objective = distances.iter().zip(set.weights()).map(|(d, w)| d * w).sum();
        Ok(Self {
            partition,
            assignment,
            distances,
            objective,
            lower_bound,
            provenance,
            state_masses: masses,
            converged: true,
            scenario_digest: set.digest(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.partition.num_states()
    }

    pub fn z(&self, l: usize, s: usize) -> bool {
        self.assignment[l] == s
    }

    /// Scenario indices owned by each state.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.num_states()];
        for (l, &s) in self.assignment.iter().enumerate() {
            cells[s].push(l);
        }
        cells
    }

    /// Largest distance between a center and the barycentre of its cell.
    pub fn centroid_residual(&self, set: &ScenarioSet) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (s, cell) in self.cells().iter().enumerate() {
            let b = barycentre(set, cell)?;
            worst = worst.max(squared_distance(&b, self.partition.center(s)).sqrt());
        }
        Ok(worst)
    }
}

pub(crate) fn check_state_count(set: &ScenarioSet, states: usize) -> Result<()> {
    if states == 0 {
        return Err(QuantizerError::NoStates);
    }
    let distinct = set.distinct_points();
    if states > distinct {
        return Err(QuantizerError::SExceedsSupport { states, distinct });
    }
    Ok(())
}

/// `sum_{l in subset} pi_l |xi_l - omega|^2`, `omega` the subset's barycentre.
pub fn size_of_state(set: &ScenarioSet, subset: &[usize]) -> Result<f64> {
    let centre = barycentre(set, subset)?;
    Ok(subset
        .iter()
        .map(|&l| set.weight(l) * squared_distance(set.point(l), &centre))
        .sum())
}

/// Total size of the cells the partition induces on the scenarios. Cell
/// barycentres are recomputed, so this matches the quantization objective
/// only for centroidal partitions.
pub fn partition_objective(set: &ScenarioSet, partition: &StatePartition) -> Result<f64> {
    if partition.dim() != set.dim() {
        return Err(QuantizerError::DimensionMismatch {
            expected: set.dim(),
            found: partition.dim(),
        });
    }
    let mut cells = vec![Vec::new(); partition.num_states()];
    for (l, p) in set.points().enumerate() {
        cells[partition.classify(p)].push(l);
    }
    cells
        .iter()
        .enumerate()
        .map(|(s, cell)| {
            if cell.is_empty() {
                Err(QuantizerError::EmptyState(s))
            } else {
                size_of_state(set, cell)
            }
        })
        .sum()
}
