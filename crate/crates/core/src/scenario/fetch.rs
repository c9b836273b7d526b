//! Ensemble-forecast ingestion with an on-disk response cache.
//!
//! Each location is requested separately with the query parameters
//! `latitude`, `longitude`, `hourly` (variable name), `models`,
//! `start_hour`/`end_hour` (the target timestamp) and `wind_speed_unit`.
//! Every raw body is written to `<cache>/<sha256-of-request>.json` together
//! with the request and a hash of the body, so later runs replay offline.
//!
//! Two response shapes are understood:
//!
//! * `{"members": [v0, v1, ...]}`: one value per ensemble member;
//! * the hourly layout `{"hourly": {"time": [...], "<var>": [...],
//!   "<var>_member01": [...], ...}}`, where the un-suffixed series is the
//!   control member.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{RandomVariableSpec, Result, ScenarioError, ScenarioSet, SourceMetadata};

pub const DEFAULT_ENDPOINT: &str = "https://ensemble-api.open-meteo.com/v1/ensemble";
pub const DEFAULT_MODEL: &str = "icon_seamless";
pub const DEFAULT_VARIABLE: &str = "wind_speed_10m";

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub latitude: f64,
    pub longitude: f64,
}

impl Location {
    pub fn new(latitude: f64, longitude: f64) -> Self {
        Self {
            latitude,
            longitude,
        }
    }

    fn label(&self, variable: &str) -> String {
        let ns = if self.latitude >= 0.0 { 'N' } else { 'S' };
        let ew = if self.longitude >= 0.0 { 'E' } else { 'W' };
        format!(
            "{variable} at {}{ns},{}{ew}",
            self.latitude.abs(),
            self.longitude.abs()
        )
    }
}

/// How the cache is consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FetchMode {
    /// Replay the cached response when present, otherwise fetch and store.
    #[default]
    CacheFirst,
    /// Always fetch and overwrite the cache entry.
    Refresh,
    /// Never touch the network.
    Offline,
}

#[derive(Debug, Clone)]
pub struct EnsembleQuery {
    pub endpoint: String,
    pub locations: Vec<Location>,
    pub target_time: DateTime<Utc>,
    pub variable: String,
    pub model: String,
    /// Defaults to 14 hours before the target when absent.
    pub announcement_time: Option<DateTime<Utc>>,
}

impl EnsembleQuery {
    pub fn new(endpoint: impl Into<String>, locations: Vec<Location>, target_time: DateTime<Utc>) -> Self {
        Self {
            endpoint: endpoint.into(),
            locations,
            target_time,
            variable: DEFAULT_VARIABLE.to_string(),
            model: DEFAULT_MODEL.to_string(),
            announcement_time: None,
        }
    }

    fn params(&self, loc: &Location) -> Vec<(String, String)> {
        let hour = self.target_time.format(TIME_FORMAT).to_string();
        let mut params = vec![
            ("end_hour".to_string(), hour.clone()),
            ("hourly".to_string(), self.variable.clone()),
            ("latitude".to_string(), loc.latitude.to_string()),
            ("longitude".to_string(), loc.longitude.to_string()),
            ("models".to_string(), self.model.clone()),
            ("start_hour".to_string(), hour),
            ("wind_speed_unit".to_string(), "ms".to_string()),
        ];
        params.sort();
        params
    }
}

/// Minimal GET abstraction so the cache logic can be exercised without
/// a live endpoint.
pub trait Transport {
    fn get(&self, url: &str, params: &[(String, String)]) -> Result<String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ScenarioError::NetworkError(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, params: &[(String, String)]) -> Result<String> {
        let response = self
            .client
            .get(url)
            .query(params)
            .send()
            .map_err(|e| ScenarioError::NetworkError(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| ScenarioError::NetworkError(e.to_string()))?;
        if !status.is_success() {
            return Err(ScenarioError::NetworkError(format!("HTTP {status}: {body}")));
        }
        Ok(body)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRequest {
    url: String,
    params: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    request: CacheRequest,
    fetched_at: DateTime<Utc>,
    body_sha256: String,
    body: String,
}

/// Directory of cached raw responses keyed by request hash.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// SHA-256 over `GET <url>?<k=v&...>` with parameters sorted.
    pub fn request_key(url: &str, params: &[(String, String)]) -> String {
        let mut sorted = params.to_vec();
        sorted.sort();
        let query: Vec<String> = sorted.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let canonical = format!("GET {url}?{}", query.join("&"));
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn entry_path(&self, url: &str, params: &[(String, String)]) -> PathBuf {
        self.dir
            .join(format!("{}.json", Self::request_key(url, params)))
    }

    fn load(&self, url: &str, params: &[(String, String)]) -> Result<Option<CacheEntry>> {
        let path = self.entry_path(url, params);
        if !path.exists() {
            return Ok(None);
        }
        let corrupt = |reason: String| ScenarioError::CacheCorrupt {
            path: path.display().to_string(),
            reason,
        };
        let entry: CacheEntry =
            serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| corrupt(e.to_string()))?;
        let actual = hex::encode(Sha256::digest(entry.body.as_bytes()));
        if actual != entry.body_sha256 {
            return Err(corrupt(format!(
                "body hash {actual} does not match recorded {}",
                entry.body_sha256
            )));
        }
        Ok(Some(entry))
    }

    fn store(&self, entry: &CacheEntry) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.entry_path(&entry.request.url, &entry.request.params);
        let text = serde_json::to_string_pretty(entry).expect("cache entry serializes");
        fs::write(path, text)?;
        Ok(())
    }
}

/// Fetches (or replays) one ensemble per location and stacks the members
/// into a scenario set with equal weights.
pub fn fetch_ensemble(
    query: &EnsembleQuery,
    transport: &dyn Transport,
    cache: &ResponseCache,
    mode: FetchMode,
) -> Result<ScenarioSet> {
    if query.locations.is_empty() {
        return Err(ScenarioError::InvalidVariable("no locations requested".into()));
    }
    let mut series = Vec::with_capacity(query.locations.len());
    let mut hashes = Vec::new();
    let mut fetched_at = None;
    let mut control_seen = false;
    for loc in &query.locations {
        let params = query.params(loc);
        let cached = match mode {
            FetchMode::Refresh => None,
            FetchMode::CacheFirst | FetchMode::Offline => cache.load(&query.endpoint, &params)?,
        };
        let entry = match cached {
            Some(entry) => entry,
            None if mode == FetchMode::Offline => {
                return Err(ScenarioError::CacheMiss(
                    cache.entry_path(&query.endpoint, &params).display().to_string(),
                ))
            }
            None => {
                let body = transport.get(&query.endpoint, &params)?;
                let entry = CacheEntry {
                    request: CacheRequest {
                        url: query.endpoint.clone(),
                        params: params.clone(),
                    },
                    fetched_at: Utc::now(),
                    body_sha256: hex::encode(Sha256::digest(body.as_bytes())),
                    body,
                };
                cache.store(&entry)?;
                entry
            }
        };
        let (members, has_control) = parse_members(&entry.body, &query.variable, query.target_time)?;
        control_seen |= has_control;
        fetched_at.get_or_insert(entry.fetched_at);
        hashes.push(entry.body_sha256);
        series.push(members);
    }

    let counts: Vec<usize> = series.iter().map(Vec::len).collect();
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(ScenarioError::MemberCountMismatch(counts));
    }
    let members = counts[0];
    if members == 0 {
        return Err(ScenarioError::MalformedResponse("no ensemble members".into()));
    }
    let points: Vec<Vec<f64>> = (0..members)
        .map(|m| series.iter().map(|s| s[m]).collect())
        .collect();
    let ids = (0..members).map(|m| format!("member{m:02}")).collect();
    let weights = vec![1.0 / members as f64; members];

    let labels = query
        .locations
        .iter()
        .map(|loc| loc.label(&query.variable))
        .collect();
    let announcement = query
        .announcement_time
        .unwrap_or(query.target_time - chrono::Duration::hours(14));
    let variable = RandomVariableSpec::new(labels, query.target_time, announcement)?;
    let mut notes = vec![format!("{members} ensemble members, equally weighted")];
    if control_seen {
        notes.push("control member included as member00 with equal weight".to_string());
    }
    let source = SourceMetadata {
        endpoint: query.endpoint.clone(),
        fetched_at: fetched_at.expect("at least one location"),
        response_sha256: hashes,
        variable: Some(variable),
        notes,
    };
    Ok(ScenarioSet::with_ids(ids, points, weights)?.with_source(source))
}

/// Extracts member values at `target` from a response body. The flag is
/// true when an un-suffixed control series was present.
pub fn parse_members(body: &str, variable: &str, target: DateTime<Utc>) -> Result<(Vec<f64>, bool)> {
    let malformed = |m: String| ScenarioError::MalformedResponse(m);
    let json: Value = serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
    if let Some(members) = json.get("members") {
        let values = members
            .as_array()
            .ok_or_else(|| malformed("`members` is not an array".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| malformed(format!("non-numeric member value {v}"))))
            .collect::<Result<Vec<_>>>()?;
        return Ok((values, false));
    }

    let hourly = json
        .get("hourly")
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("missing `hourly` object".into()))?;
    let times = hourly
        .get("time")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing `hourly.time`".into()))?;
    let index = times
        .iter()
        .position(|t| {
            t.as_str()
                .and_then(|s| NaiveDateTime::parse_from_str(s, TIME_FORMAT).ok())
                .map(|dt| dt.and_utc() == target)
                .unwrap_or(false)
        })
        .ok_or_else(|| malformed(format!("target time {} not in response", target.format(TIME_FORMAT))))?;

    let prefix = format!("{variable}_member");
    let mut members: Vec<(u32, f64)> = Vec::new();
    let mut has_control = false;
    for (key, series) in hourly {
        let number = if key == variable {
            has_control = true;
            0
        } else if let Some(suffix) = key.strip_prefix(&prefix) {
            suffix
                .parse::<u32>()
                .map_err(|_| malformed(format!("bad member key `{key}`")))?
        } else {
            continue;
        };
        let value = series
            .as_array()
            .and_then(|a| a.get(index))
            .and_then(Value::as_f64)
            .ok_or_else(|| malformed(format!("`{key}` has no numeric value at the target time")))?;
        members.push((number, value));
    }
    members.sort_by_key(|(n, _)| *n);
    Ok((members.into_iter().map(|(_, v)| v).collect(), has_control))
}
