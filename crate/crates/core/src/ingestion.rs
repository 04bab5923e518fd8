//! Raw check-in parsing, trajectory segmentation, frequency filtering and the
//! chronological database/test split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CheckIn, GeoPoint, ModelError, PoiId, Trajectory, UserId};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown dataset format `{0}`")]
    UnknownFormat(String),
    #[error("invalid preprocessing config: {0}")]
    Config(String),
    #[error("user {0} has a single trajectory and cannot be split")]
    SingleTrajectory(UserId),
    #[error("POI {0} has no coordinates in the vocabulary")]
    UnresolvedPoi(PoiId),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("dataset JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no check-ins in input")]
    NoCheckins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    FoursquareTsv,
}

impl FromStr for DatasetFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "foursquare-tsv" => Ok(Self::FoursquareTsv),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCheckins {
    pub checkins: Vec<CheckIn>,
    /// Lines skipped in lenient mode.
    pub malformed: usize,
}

const FOURSQUARE_TIME_FORMAT: &str = "%a %b %d %H:%M:%S %z %Y";

fn parse_foursquare_line(line: &str) -> Result<CheckIn, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 8 {
        return Err(format!(
            "expected 8 tab-separated fields, found {}",
            fields.len()
        ));
    }
    let user = fields[0].trim();
    if user.is_empty() {
        return Err("empty user id".into());
    }
    let poi = PoiId::new(fields[1]).map_err(|e| e.to_string())?;
    let category = Some(fields[3].trim())
        .filter(|c| !c.is_empty())
        .map(str::to_string);
    let lat: f64 = fields[4]
        .trim()
        .parse()
        .map_err(|_| format!("unparsable latitude `{}`", fields[4]))?;
    let lon: f64 = fields[5]
        .trim()
        .parse()
        .map_err(|_| format!("unparsable longitude `{}`", fields[5]))?;
    let point = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    let tz_offset_min: i32 = fields[6]
        .trim()
        .parse()
        .map_err(|_| format!("unparsable timezone offset `{}`", fields[6]))?;
    let timestamp = DateTime::parse_from_str(fields[7].trim(), FOURSQUARE_TIME_FORMAT)
        .map_err(|e| format!("unparsable time `{}`: {e}", fields[7]))?
        .with_timezone(&Utc);
    Ok(CheckIn {
        user: UserId::new(user),
        poi,
        point,
        timestamp,
        tz_offset_min,
        category,
    })
}

/// Parses one check-in per non-blank line, preserving file order.
pub fn parse_checkins<R: BufRead>(
    source: R,
    format: DatasetFormat,
    mode: ParseMode,
) -> Result<ParsedCheckins, IngestError> {
    let mut out = ParsedCheckins::default();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            DatasetFormat::FoursquareTsv => parse_foursquare_line(line),
        };
        match parsed {
            Ok(c) => out.checkins.push(c),
            Err(reason) if mode == ParseMode::Strict => {
                return Err(IngestError::Malformed {
                    line: i + 1,
                    reason,
                });
            }
            Err(reason) => {
                tracing::debug!(line = i + 1, %reason, "skipping malformed check-in");
                out.malformed += 1;
            }
        }
    }
    Ok(out)
}

/// Pins every POI to the coordinates of its first occurrence. Returns how many
/// check-ins carried divergent coordinates.
pub fn canonicalize_coordinates(checkins: &mut [CheckIn]) -> usize {
    let mut canonical: HashMap<PoiId, GeoPoint> = HashMap::new();
    let mut divergent = 0;
    for c in checkins.iter_mut() {
        match canonical.get(&c.poi) {
            Some(&p) if p != c.point => {
                tracing::warn!(
                    poi = %c.poi,
                    first = ?(p.lat(), p.lon()),
                    seen = ?(c.point.lat(), c.point.lon()),
                    "divergent coordinates; keeping first occurrence"
                );
                c.point = p;
                divergent += 1;
            }
            Some(_) => {}
            None => {
                canonical.insert(c.poi.clone(), c.point);
            }
        }
    }
    divergent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub min_poi_interactions: usize,
    pub min_user_trajectories: usize,
    pub min_trajectory_len: usize,
    pub split_ratio: f64,
    pub session_gap_hours: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_poi_interactions: 10,
            min_user_trajectories: 5,
            min_trajectory_len: 4,
            split_ratio: 0.8,
            session_gap_hours: 24.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.min_poi_interactions == 0
            || self.min_user_trajectories == 0
            || self.min_trajectory_len == 0
        {
            return Err(IngestError::Config("thresholds must be positive".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(IngestError::Config(format!(
                "split_ratio {} not in (0, 1)",
                self.split_ratio
            )));
        }
        if !(self.session_gap_hours.is_finite() && self.session_gap_hours > 0.0) {
            return Err(IngestError::Config(format!(
                "session_gap_hours {} must be positive",
                self.session_gap_hours
            )));
        }
        Ok(())
    }

    fn session_gap(&self) -> Duration {
        Duration::milliseconds((self.session_gap_hours * 3_600_000.0).round() as i64)
    }
}

/// Groups check-ins per user, sorts them chronologically (stable, so file
/// order breaks timestamp ties) and cuts a new session whenever the gap to the
/// previous check-in exceeds the configured inactivity window.
///
/// Output is ordered by user id, then by session start.
pub fn segment_sessions(checkins: Vec<CheckIn>, cfg: &PreprocessConfig) -> Vec<Trajectory> {
    let gap = cfg.session_gap();
    let mut per_user: BTreeMap<UserId, Vec<CheckIn>> = BTreeMap::new();
    for c in checkins {
        per_user.entry(c.user.clone()).or_default().push(c);
    }

    let mut out = Vec::new();
    for (user, mut list) in per_user {
        list.sort_by_key(|c| c.timestamp);
        let mut current: Vec<CheckIn> = Vec::new();
        for c in list {
            if let Some(prev) = current.last() {
                if c.timestamp - prev.timestamp > gap {
                    let steps = std::mem::take(&mut current);
                    out.push(
                        Trajectory::new(user.clone(), steps, None).expect("sorted, single user"),
                    );
                }
            }
            current.push(c);
        }
        if !current.is_empty() {
            out.push(Trajectory::new(user.clone(), current, None).expect("sorted, single user"));
        }
    }
    out
}

/// What one filtering pass removed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterPass {
    pub checkins_dropped: usize,
    pub trajectories_dropped: usize,
    pub users_dropped: usize,
}

impl FilterPass {
    fn is_noop(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterStats {
    /// Every pass that changed something; the final no-op pass is omitted.
    pub passes: Vec<FilterPass>,
}

pub fn apply_filters(trajs: Vec<Trajectory>, cfg: &PreprocessConfig) -> Vec<Trajectory> {
    apply_filters_with_stats(trajs, cfg).0
}

/// Applies POI-frequency, trajectory-length and user-activity filters
/// repeatedly until none of them removes anything.
pub fn apply_filters_with_stats(
    mut trajs: Vec<Trajectory>,
    cfg: &PreprocessConfig,
) -> (Vec<Trajectory>, FilterStats) {
    let mut stats = FilterStats::default();
    loop {
        let mut pass = FilterPass::default();

        let mut poi_counts: HashMap<PoiId, usize> = HashMap::new();
        for t in &trajs {
            for poi in t.pois() {
                *poi_counts.entry(poi.clone()).or_default() += 1;
            }
        }
        for t in trajs.iter_mut() {
            let before = t.len();
            t.retain_steps(|c| poi_counts[&c.poi] >= cfg.min_poi_interactions);
            pass.checkins_dropped += before - t.len();
        }

        let before = trajs.len();
        trajs.retain(|t| t.len() >= cfg.min_trajectory_len);
        pass.trajectories_dropped += before - trajs.len();

        let mut per_user: HashMap<UserId, usize> = HashMap::new();
        for t in &trajs {
            *per_user.entry(t.user().clone()).or_default() += 1;
        }
        pass.users_dropped = per_user
            .values()
            .filter(|&&n| n < cfg.min_user_trajectories)
            .count();
        let before = trajs.len();
        trajs.retain(|t| per_user[t.user()] >= cfg.min_user_trajectories);
        pass.trajectories_dropped += before - trajs.len();

        if pass.is_noop() {
            return (trajs, stats);
        }
        stats.passes.push(pass);
    }
}

/// Preprocessed corpus: the retrieval database, the held-out queries and the
/// POI vocabulary with canonical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub database: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub vocabulary: BTreeMap<PoiId, GeoPoint>,
    pub users: BTreeSet<UserId>,
}

/// Splits each user's trajectories chronologically into database and test
/// parts and assigns next-POI targets.
pub fn split_dataset(
    trajs: Vec<Trajectory>,
    cfg: &PreprocessConfig,
) -> Result<Dataset, IngestError> {
    cfg.validate()?;
    let mut per_user: BTreeMap<UserId, Vec<Trajectory>> = BTreeMap::new();
    for t in trajs {
        if t.is_empty() {
            continue;
        }
        per_user.entry(t.user().clone()).or_default().push(t);
    }

    let mut database = Vec::new();
    let mut test = Vec::new();
    let mut vocabulary = BTreeMap::new();
    for (user, mut list) in per_user {
        if list.len() < 2 {
            return Err(IngestError::SingleTrajectory(user));
        }
        list.sort_by_key(|t| t.start());
        let n = list.len();
        let n_db = ((cfg.split_ratio * n as f64).floor() as usize).clamp(1, n - 1);
        let successors: Vec<Option<CheckIn>> = (0..n)
            .map(|i| list.get(i + 1).map(|next| next.steps()[0].clone()))
            .collect();

        for (i, mut t) in list.into_iter().enumerate() {
            let held_out = if i < n_db && successors[i].is_some() {
                successors[i].clone()
            } else {
                t.pop_last()
            };
            // A one-step trajectory without successor has nothing to hold out.
            let Some(target) = held_out else { continue };
            vocabulary.entry(target.poi.clone()).or_insert(target.point);
            let t = t.with_target(target.poi);
            if i < n_db {
                database.push(t);
            } else {
                test.push(t);
            }
        }
    }

    let mut users = BTreeSet::new();
    for t in database.iter().chain(test.iter()) {
        users.insert(t.user().clone());
        for step in t.steps() {
            vocabulary.entry(step.poi.clone()).or_insert(step.point);
        }
    }
    Ok(Dataset {
        database,
        test,
        vocabulary,
        users,
    })
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    poi: PoiId,
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    poi: PoiId,
    ts: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "is_zero")]
    tz: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
}

fn is_zero(v: &i32) -> bool {
    *v == 0
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    user: UserId,
    steps: Vec<StepRecord>,
    target: Option<PoiId>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    vocabulary: Vec<VocabRecord>,
    database: Vec<TrajectoryRecord>,
    test: Vec<TrajectoryRecord>,
}

impl TrajectoryRecord {
    fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            user: t.user().clone(),
            steps: t
                .steps()
                .iter()
                .map(|c| StepRecord {
                    poi: c.poi.clone(),
                    ts: c.timestamp,
                    tz: c.tz_offset_min,
                    category: c.category.clone(),
                })
                .collect(),
            target: t.target().cloned(),
        }
    }

    fn into_trajectory(
        self,
        vocabulary: &BTreeMap<PoiId, GeoPoint>,
    ) -> Result<Trajectory, IngestError> {
        let steps = self
            .steps
            .into_iter()
            .map(|s| {
                let point = *vocabulary
                    .get(&s.poi)
                    .ok_or_else(|| IngestError::UnresolvedPoi(s.poi.clone()))?;
                Ok(CheckIn {
                    user: self.user.clone(),
                    poi: s.poi,
                    point,
                    timestamp: s.ts,
                    tz_offset_min: s.tz,
                    category: s.category,
                })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        if let Some(target) = &self.target {
            if !vocabulary.contains_key(target) {
                return Err(IngestError::UnresolvedPoi(target.clone()));
            }
        }
        Trajectory::new(self.user, steps, self.target)
            .map_err(|e| IngestError::Invalid(ModelError::from(e).to_string()))
    }
}

/// Counts from one preprocessing run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PreprocessReport {
    pub checkins_read: usize,
    pub malformed: usize,
    pub divergent_coordinates: usize,
    pub sessions: usize,
    pub filters: FilterStats,
    pub users: usize,
    pub pois: usize,
    pub database: usize,
    pub test: usize,
}

/// Parse, canonicalize, segment, filter and split in one call.
pub fn preprocess<R: BufRead>(
    source: R,
    format: DatasetFormat,
    mode: ParseMode,
    cfg: &PreprocessConfig,
) -> Result<(Dataset, PreprocessReport), IngestError> {
    cfg.validate()?;
    let ParsedCheckins {
        mut checkins,
        malformed,
    } = parse_checkins(source, format, mode)?;
    if checkins.is_empty() {
        return Err(IngestError::NoCheckins);
    }
    let mut report = PreprocessReport {
        checkins_read: checkins.len(),
        malformed,
        divergent_coordinates: canonicalize_coordinates(&mut checkins),
        ..PreprocessReport::default()
    };
    let sessions = segment_sessions(checkins, cfg);
    report.sessions = sessions.len();
    let (kept, filters) = apply_filters_with_stats(sessions, cfg);
    report.filters = filters;
    let dataset = split_dataset(kept, cfg)?;
    report.users = dataset.users.len();
    report.pois = dataset.vocabulary.len();
    report.database = dataset.database.len();
    report.test = dataset.test.len();
    Ok((dataset, report))
}

impl Dataset {
    pub fn write_json<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let file = DatasetFile {
            vocabulary: self
                .vocabulary
                .iter()
                .map(|(poi, p)| VocabRecord {
                    poi: poi.clone(),
                    lat: p.lat(),
                    lon: p.lon(),
                })
                .collect(),
            database: self
                .database
                .iter()
                .map(TrajectoryRecord::from_trajectory)
                .collect(),
            test: self
                .test
                .iter()
                .map(TrajectoryRecord::from_trajectory)
                .collect(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String, IngestError> {
        let mut buf = Vec::new();
        self.write_json(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    /// Loads a dataset file, resolving step coordinates through the
    /// vocabulary.
    pub fn read_json<R: Read>(reader: R) -> Result<Self, IngestError> {
        let file: DatasetFile = serde_json::from_reader(reader)?;
        let mut vocabulary = BTreeMap::new();
        for v in file.vocabulary {
            let point = GeoPoint::new(v.lat, v.lon)
                .map_err(|e| IngestError::Invalid(format!("POI {}: {e}", v.poi)))?;
            vocabulary.insert(v.poi, point);
        }
        let convert = |records: Vec<TrajectoryRecord>, require_target: bool| {
            records
                .into_iter()
                .map(|r| {
                    if require_target && r.target.is_none() {
                        return Err(IngestError::Invalid(format!(
                            "trajectory of user {} has no target",
                            r.user
                        )));
                    }
                    r.into_trajectory(&vocabulary)
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let database = convert(file.database, true)?;
        let test = convert(file.test, true)?;
        let users = database
            .iter()
            .chain(test.iter())
            .map(|t| t.user().clone())
            .collect();
        Ok(Self {
            database,
            test,
            vocabulary,
            users,
        })
    }

    pub fn poi_set(&self) -> std::collections::HashSet<PoiId> {
        self.vocabulary.keys().cloned().collect()
    }
}
