//! Discrete probability measures over the uncertain parameter vector.
//!
//! A [`ScenarioSet`] is the auctioneer's forecast: finitely many support
//! points in `R^k` with strictly positive weights summing to one. Sets are
//! loaded from CSV files or fetched from an ensemble-forecast endpoint
//! (see [`fetch`]).

pub mod fetch;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weight sums further than this from one are rejected on load.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Weight sums closer than this to one are kept as written.
pub const WEIGHT_SUM_EXACT: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("scenario {row}: weight {weight} is not strictly positive")]
    NonPositiveWeight { row: usize, weight: f64 },
    #[error("weights sum to {0}, expected 1 within {WEIGHT_SUM_TOLERANCE}")]
    WeightSumMismatch(f64),
    #[error("scenario {row}: coordinate {coord} is not finite")]
    NonFiniteCoordinate { row: usize, coord: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("scenario set is empty")]
    Empty,
    #[error("empty subset")]
    EmptySubset,
    #[error("subset index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("invalid random variable: {0}")]
    InvalidVariable(String),
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("locations disagree on ensemble size: {0:?}")]
    MemberCountMismatch(Vec<usize>),
    #[error("cache entry {path} failed verification: {reason}")]
    CacheCorrupt { path: String, reason: String },
    #[error("no cached response for request {0}")]
    CacheMiss(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ScenarioError> = std::result::Result<T, E>;

/// Description of the uncertain parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomVariableSpec {
    labels: Vec<String>,
    realization_time: DateTime<Utc>,
    announcement_time: DateTime<Utc>,
}

impl RandomVariableSpec {
    pub fn new(
        labels: Vec<String>,
        realization_time: DateTime<Utc>,
        announcement_time: DateTime<Utc>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(ScenarioError::InvalidVariable(
                "at least one coordinate label is required".into(),
            ));
        }
        if realization_time <= announcement_time {
            return Err(ScenarioError::InvalidVariable(format!(
                "realization time {realization_time} is not after announcement time {announcement_time}"
            )));
        }
        Ok(Self {
            labels,
            realization_time,
            announcement_time,
        })
    }

    pub fn dimension(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn realization_time(&self) -> DateTime<Utc> {
        self.realization_time
    }

    pub fn announcement_time(&self) -> DateTime<Utc> {
        self.announcement_time
    }
}

/// Where a scenario set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMetadata {
    pub endpoint: String,
    pub fetched_at: DateTime<Utc>,
    /// Content hashes of the cached raw responses, one per location.
    pub response_sha256: Vec<String>,
    pub variable: Option<RandomVariableSpec>,
    /// Free-form notes, e.g. how ensemble members were weighted.
    pub notes: Vec<String>,
}

/// Finitely supported probability measure on `R^k`.
///
/// Points are stored row-major; duplicate points are kept as separate
/// scenarios with their own weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    dim: usize,
    ids: Vec<String>,
    coords: Vec<f64>,
    weights: Vec<f64>,
    source: Option<SourceMetadata>,
}

impl ScenarioSet {
    /// Builds a validated set. Weights within [`WEIGHT_SUM_TOLERANCE`] of one
    /// are renormalized; anything further off is an error.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let ids = (1..=points.len()).map(|l| l.to_string()).collect();
        Self::with_ids(ids, points, weights)
    }

    pub fn with_ids(ids: Vec<String>, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(ScenarioError::Empty);
        }
        if weights.len() != points.len() {
            return Err(ScenarioError::DimensionMismatch {
                expected: points.len(),
                found: weights.len(),
            });
        }
        if ids.len() != points.len() {
            return Err(ScenarioError::DimensionMismatch {
                expected: points.len(),
                found: ids.len(),
            });
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(ScenarioError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (row, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(ScenarioError::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if let Some(coord) = p.iter().position(|v| !v.is_finite()) {
                return Err(ScenarioError::NonFiniteCoordinate { row, coord });
            }
            coords.extend_from_slice(p);
        }
        let weights = normalize_weights(weights)?;
        Ok(Self {
            dim,
            ids,
            coords,
            weights,
            source: None,
        })
    }

    pub fn with_source(mut self, source: SourceMetadata) -> Self {
        self.source = Some(source);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of scenarios `L`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, l: usize) -> &[f64] {
        &self.coords[l * self.dim..(l + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn weight(&self, l: usize) -> f64 {
        self.weights[l]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn source(&self) -> Option<&SourceMetadata> {
        self.source.as_ref()
    }

    /// Number of pairwise distinct support points.
    pub fn distinct_points(&self) -> usize {
        let keys: BTreeSet<Vec<u64>> = self
            .points()
            .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
            .collect();
        keys.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        barycentre(self, &all).expect("scenario sets are never empty")
    }

    /// Total variance `sum_l pi_l |xi_l - mean|^2`.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.points()
            .zip(&self.weights)
            .map(|(p, w)| w * squared_distance(p, &mean))
            .sum()
    }

    /// Coordinate-wise minimum and maximum of the support.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.points() {
            for j in 0..self.dim {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        (lo, hi)
    }

    /// Lowercase hex SHA-256 of the CSV serialization.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("scenario_id,weight");
        for j in 1..=self.dim {
            let _ = write!(out, ",xi_{j}");
        }
        out.push('\n');
        for (l, p) in self.points().enumerate() {
            out.push_str(&self.ids[l]);
            let _ = write!(out, ",{}", self.weights[l]);
            for v in p {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn normalize_weights(mut weights: Vec<f64>) -> Result<Vec<f64>> {
    for (row, &w) in weights.iter().enumerate() {
        if !(w > 0.0 && w.is_finite()) {
            return Err(ScenarioError::NonPositiveWeight { row, weight: w });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(ScenarioError::WeightSumMismatch(sum));
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_EXACT {
        weights.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(weights)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Probability-weighted mean of the scenarios in `subset`.
pub fn barycentre(set: &ScenarioSet, subset: &[usize]) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(ScenarioError::EmptySubset);
    }
    if let [l] = subset {
        return if *l < set.len() {
            Ok(set.point(*l).to_vec())
        } else {
            Err(ScenarioError::IndexOutOfRange(*l))
        };
    }
    let mut acc = vec![0.0; set.dim()];
    let mut mass = 0.0;
    for &l in subset {
        if l >= set.len() {
            return Err(ScenarioError::IndexOutOfRange(l));
        }
        let w = set.weight(l);
        mass += w;
        for (a, v) in acc.iter_mut().zip(set.point(l)) {
            *a += w * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= mass);
    Ok(acc)
}

/// Reads `scenario_id,weight,xi_1,...,xi_k`.
pub fn load_scenarios_csv(path: impl AsRef<Path>, k: usize) -> Result<ScenarioSet> {
    let text = fs::read_to_string(path)?;
    parse_scenarios_csv(&text, k)
}

pub fn parse_scenarios_csv(text: &str, k: usize) -> Result<ScenarioSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| ScenarioError::Parse(e.to_string()))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ScenarioError::MissingColumn(name.to_string()))
    };
    let id_col = column("scenario_id")?;
    let weight_col = column("weight")?;
    let xi_cols = (1..=k)
        .map(|j| column(&format!("xi_{j}")))
        .collect::<Result<Vec<_>>>()?;
    let extra = headers.iter().filter(|h| h.starts_with("xi_")).count();
    if extra != k {
        return Err(ScenarioError::DimensionMismatch {
            expected: k,
            found: extra,
        });
    }

    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let number = |c: usize| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .map_err(|e| ScenarioError::Parse(format!("row {row}: `{}`: {e}", field(c))))
        };
        ids.push(field(id_col).to_string());
        weights.push(number(weight_col)?);
        points.push(xi_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?);
    }
    ScenarioSet::with_ids(ids, points, weights)
}

/// Number of `xi_*` columns in a scenario CSV header.
pub fn csv_dimension(text: &str) -> Result<usize> {
    let header = text.lines().next().ok_or(ScenarioError::Empty)?;
    let k = header.split(',').filter(|h| h.trim().starts_with("xi_")).count();
    if k == 0 {
        return Err(ScenarioError::MissingColumn("xi_1".to_string()));
    }
    Ok(k)
}

/// Like [`load_scenarios_csv`], taking the dimension from the header.
pub fn read_scenarios_csv(path: impl AsRef<Path>) -> Result<ScenarioSet> {
    let text = fs::read_to_string(path)?;
    parse_scenarios_csv(&text, csv_dimension(&text)?)
}

pub fn write_scenarios_csv(set: &ScenarioSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, set.to_csv_string())?;
    Ok(())
}
