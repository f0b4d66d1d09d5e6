//! Episodes on the 5-minute grid: ingestion, resampling, partitioning and the
//! per-step model input representation.
//!
//! Raw CGM exports are irregular. Every reading is snapped to the nearest
//! 5-minute grid point (the later reading wins on a collision), exogenous
//! events landing on the same grid point are summed (carbs, bolus) or replaced
//! (basal rate), and a new episode starts whenever two consecutive glucose
//! observations are further apart than the partition threshold. Episodes are
//! trimmed to their first and last glucose observation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minutes between consecutive grid points.
pub const STEP_MINUTES: i64 = 5;
pub const MINUTES_PER_DAY: i64 = 1440;
/// Grid points in one day (`T_day`).
pub const SAMPLES_PER_DAY: usize = 288;
pub const SAMPLES_PER_HOUR: usize = 12;

/// Physical range accepted for a sensor reading, mg/dL.
pub const GLUCOSE_RANGE: (f64, f64) = (20.0, 500.0);

pub const CGM_HEADER: [&str; 6] = ["patient_id", "timestamp", "glucose", "carbs", "bolus", "basal"];
pub const INPUTS_HEADER: [&str; 7] = [
    "t",
    "masked_glucose",
    "carbs",
    "bolus",
    "basal",
    "sin_t",
    "cos_t",
];

/// One raw row of a CGM export.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Grid minute since the Unix epoch, taken as local time.
    pub timestamp: i64,
    pub glucose: Option<f64>,
    pub carbs: Option<f64>,
    pub bolus: Option<f64>,
    pub basal: Option<f64>,
}

/// Exogenous inputs at one grid point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Exog {
    /// Grams of carbohydrate.
    pub carbs: f64,
    /// Bolus insulin, units.
    pub bolus: f64,
    /// Basal rate, units/hour.
    pub basal: f64,
}

impl Exog {
    pub fn as_array(&self) -> [f64; 3] {
        [self.carbs, self.bolus, self.basal]
    }

    /// Meal or bolus event at this step.
    pub fn has_event(&self) -> bool {
        self.carbs > 0.0 || self.bolus > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeKey {
    pub patient_id: String,
    pub episode_id: usize,
}

impl fmt::Display for EpisodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.patient_id, self.episode_id)
    }
}

/// Calendar day of one patient, counted in whole days since the epoch.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DayKey {
    pub patient_id: String,
    pub day: i64,
}

/// A contiguous, uniformly sampled trace. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    patient_id: String,
    episode_id: usize,
    start_minute: i64,
    glucose: Vec<Option<f64>>,
    exog: Vec<Exog>,
}

impl Episode {
    pub fn new(
        patient_id: impl Into<String>,
        episode_id: usize,
        start_minute: i64,
        glucose: Vec<Option<f64>>,
        exog: Vec<Exog>,
    ) -> Result<Self> {
        if glucose.is_empty() {
            return Err(Error::EmptyEpisode);
        }
        if exog.len() != glucose.len() {
            return Err(Error::Dimension {
                expected: glucose.len(),
                actual: exog.len(),
            });
        }
        if start_minute.rem_euclid(STEP_MINUTES) != 0 {
            return Err(Error::Config(format!(
                "episode start {start_minute} is not on the 5-minute grid"
            )));
        }
        if let Some(t) = glucose.iter().position(|g| g.is_some_and(|v| !v.is_finite())) {
            return Err(Error::Config(format!("non-finite glucose at index {t}")));
        }
        Ok(Episode {
            patient_id: patient_id.into(),
            episode_id,
            start_minute,
            glucose,
            exog,
        })
    }

    /// Fully observed trace with no exogenous inputs.
    pub fn from_values(
        patient_id: impl Into<String>,
        episode_id: usize,
        start_minute: i64,
        values: &[f64],
    ) -> Result<Self> {
        let exog = vec![Exog::default(); values.len()];
        Episode::new(
            patient_id,
            episode_id,
            start_minute,
            values.iter().copied().map(Some).collect(),
            exog,
        )
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn episode_id(&self) -> usize {
        self.episode_id
    }

    pub fn key(&self) -> EpisodeKey {
        EpisodeKey {
            patient_id: self.patient_id.clone(),
            episode_id: self.episode_id,
        }
    }

    pub fn start_minute(&self) -> i64 {
        self.start_minute
    }

    /// Minutes after local midnight of the first sample, in `[0, 1440)`.
    pub fn start_time_of_day(&self) -> i64 {
        self.start_minute.rem_euclid(MINUTES_PER_DAY)
    }

    pub fn len(&self) -> usize {
        self.glucose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glucose.is_empty()
    }

    pub fn glucose(&self) -> &[Option<f64>] {
        &self.glucose
    }

    pub fn exog(&self) -> &[Exog] {
        &self.exog
    }

    pub fn is_observed(&self, t: usize) -> bool {
        self.glucose[t].is_some()
    }

    pub fn observed(&self) -> Vec<bool> {
        self.glucose.iter().map(Option::is_some).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.glucose.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.glucose.iter().all(Option::is_some)
    }

    /// Glucose values, failing on the first missing sample.
    pub fn complete_values(&self) -> Result<Vec<f64>> {
        self.glucose
            .iter()
            .enumerate()
            .map(|(index, g)| g.ok_or(Error::MissingValue { index }))
            .collect()
    }

    pub fn minute_at(&self, t: usize) -> i64 {
        self.start_minute + t as i64 * STEP_MINUTES
    }

    /// Grid slot within the day, `0..288`.
    pub fn slot_of_day(&self, t: usize) -> usize {
        (self.minute_at(t).rem_euclid(MINUTES_PER_DAY) / STEP_MINUTES) as usize
    }

    pub fn hour_of(&self, t: usize) -> usize {
        self.slot_of_day(t) / SAMPLES_PER_HOUR
    }

    pub fn day_of(&self, t: usize) -> i64 {
        self.minute_at(t).div_euclid(MINUTES_PER_DAY)
    }

    pub fn day_key(&self, t: usize) -> DayKey {
        DayKey {
            patient_id: self.patient_id.clone(),
            day: self.day_of(t),
        }
    }

    pub fn encoding(&self, t: usize) -> TimeEncoding {
        time_encoding(self.start_time_of_day(), t)
    }

    /// Copy with the glucose channel replaced; exogenous inputs are kept.
    pub fn with_glucose(&self, glucose: Vec<Option<f64>>) -> Result<Self> {
        if glucose.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                actual: glucose.len(),
            });
        }
        Episode::new(
            self.patient_id.clone(),
            self.episode_id,
            self.start_minute,
            glucose,
            self.exog.clone(),
        )
    }

    /// Sub-episode over `start..end`, renumbered from zero.
    fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Episode::new(
            self.patient_id.clone(),
            self.episode_id,
            self.minute_at(start),
            self.glucose[start..end].to_vec(),
            self.exog[start..end].to_vec(),
        )
    }
}

/// Sinusoidal time-of-day embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoding {
    pub sin_component: f64,
    pub cos_component: f64,
}

/// Encoding of grid index `t` for an episode starting `start_time_of_day`
/// minutes after midnight. Periodic in `t` with period 288.
pub fn time_encoding(start_time_of_day: i64, t: usize) -> TimeEncoding {
    let offset = start_time_of_day.rem_euclid(MINUTES_PER_DAY) / STEP_MINUTES;
    let slot = (offset as u64 + t as u64) % SAMPLES_PER_DAY as u64;
    let phase = std::f64::consts::TAU * (slot as f64 / SAMPLES_PER_DAY as f64);
    let (sin_component, cos_component) = phase.sin_cos();
    TimeEncoding {
        sin_component,
        cos_component,
    }
}

/// Per-step model input `[g·m, c, φ(t)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputVector {
    pub masked_glucose: f64,
    pub exog: [f64; 3],
    pub encoding: TimeEncoding,
}

impl InputVector {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.masked_glucose,
            self.exog[0],
            self.exog[1],
            self.exog[2],
            self.encoding.sin_component,
            self.encoding.cos_component,
        ]
    }
}

/// Builds the model input sequence. `mask[t] == true` retains the reading.
pub fn build_inputs(episode: &Episode, mask: &[bool]) -> Result<Vec<InputVector>> {
    if mask.len() != episode.len() {
        return Err(Error::Dimension {
            expected: episode.len(),
            actual: mask.len(),
        });
    }
    mask.iter()
        .enumerate()
        .map(|(t, &keep)| {
            let masked_glucose = if keep {
                episode.glucose[t].ok_or(Error::MissingValue { index: t })?
            } else {
                0.0
            };
            Ok(InputVector {
                masked_glucose,
                exog: episode.exog[t].as_array(),
                encoding: episode.encoding(t),
            })
        })
        .collect()
}

pub fn write_inputs<W: Write>(writer: W, inputs: &[InputVector]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(INPUTS_HEADER)?;
    for (t, x) in inputs.iter().enumerate() {
        let mut record = vec![t.to_string()];
        record.extend(x.to_array().iter().map(|v| v.to_string()));
        out.write_record(&record)?;
    }
    out.flush().map_err(|e| Error::io("<inputs>", e))?;
    Ok(())
}

/// Writes one inputs CSV for an episode.
pub fn export_inputs(path: &Path, episode: &Episode, mask: &[bool]) -> Result<()> {
    let inputs = build_inputs(episode, mask)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_inputs(file, &inputs)
}

/// Point `step` of `span` on the chord from `left` to `right`. Exact whenever
/// the chord values are representable.
pub fn interpolate(left: f64, right: f64, step: usize, span: usize) -> f64 {
    left + (right - left) * step as f64 / span as f64
}

/// Interpolates interior gaps and trims unobserved leading/trailing samples.
pub fn linear_fill(episode: &Episode) -> Result<Episode> {
    let first = episode
        .glucose
        .iter()
        .position(Option::is_some)
        .ok_or(Error::EmptyEpisode)?;
    let last = episode.glucose.iter().rposition(Option::is_some).unwrap();
    let trimmed = episode.slice(first, last + 1)?;
    let mut glucose = trimmed.glucose.clone();
    let mut left = 0usize;
    for t in 1..glucose.len() {
        if let Some(right_value) = glucose[t] {
            let left_value = glucose[left].unwrap();
            let span = t - left;
            for (k, slot) in glucose[left + 1..t].iter_mut().enumerate() {
                *slot = Some(interpolate(left_value, right_value, k + 1, span));
            }
            left = t;
        }
    }
    trimmed.with_glucose(glucose)
}

fn parse_optional(field: &str, line: usize, name: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let value: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {name} value {field:?}")))?;
    if !value.is_finite() {
        return Err(Error::parse(line, format!("non-finite {name} value")));
    }
    Ok(Some(value))
}

/// Parses an integer-minute or ISO-8601 timestamp into seconds since the epoch.
fn parse_timestamp_seconds(field: &str, line: usize) -> Result<i64> {
    let field = field.trim();
    if let Ok(minutes) = field.parse::<i64>() {
        return Ok(minutes * 60);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
        return Ok(dt.naive_local().and_utc().timestamp());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(field, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
        .ok_or_else(|| Error::parse(line, format!("unrecognised timestamp {field:?}")))
}

/// Nearest grid minute; exact half-way points round up.
fn snap_seconds(seconds: i64) -> i64 {
    (seconds + 150).div_euclid(300) * STEP_MINUTES
}

/// One CSV row: patient, raw seconds (for the ordering check) and the
/// sample snapped to the grid.
fn parse_record(record: &csv::StringRecord, line: usize) -> Result<(String, i64, Sample)> {
    let patient_id = record[0].to_string();
    if patient_id.is_empty() {
        return Err(Error::parse(line, "empty patient_id"));
    }
    let seconds = parse_timestamp_seconds(&record[1], line)?;
    let glucose = parse_optional(&record[2], line, "glucose")?;
    if let Some(g) = glucose {
        if !(GLUCOSE_RANGE.0..=GLUCOSE_RANGE.1).contains(&g) {
            return Err(Error::parse(line, format!("glucose {g} outside sensor range")));
        }
    }
    let mut exog = [None; 3];
    for (k, name) in ["carbs", "bolus", "basal"].iter().enumerate() {
        let value = parse_optional(&record[3 + k], line, name)?;
        if value.is_some_and(|v| v < 0.0) {
            return Err(Error::parse(line, format!("negative {name}")));
        }
        exog[k] = value;
    }
    let sample = Sample {
        timestamp: snap_seconds(seconds),
        glucose,
        carbs: exog[0],
        bolus: exog[1],
        basal: exog[2],
    };
    Ok((patient_id, seconds, sample))
}

#[derive(Default, Clone)]
struct GridPoint {
    glucose: Option<f64>,
    carbs: f64,
    bolus: f64,
    basal: Option<f64>,
}

/// Reads a CGM CSV into episodes, sorted by `(patient_id, episode_id)`.
pub fn ingest_csv(path: &Path, partition_gap_minutes: i64) -> Result<Vec<Episode>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, partition_gap_minutes)
}

pub fn ingest_reader<R: Read>(reader: R, partition_gap_minutes: i64) -> Result<Vec<Episode>> {
    if partition_gap_minutes <= 0 {
        return Err(Error::Config("partition gap must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    let header: Vec<&str> = headers.iter().collect();
    if header != CGM_HEADER {
        return Err(Error::parse(
            1,
            format!("expected header {:?}, found {:?}", CGM_HEADER.join(","), header.join(",")),
        ));
    }

    let mut grids: BTreeMap<String, (i64, BTreeMap<i64, GridPoint>)> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(line, e.to_string()))?;
        let (patient_id, seconds, sample) = parse_record(&record, line)?;
        let (last_seconds, grid) = grids
            .entry(patient_id.clone())
            .or_insert_with(|| (i64::MIN, BTreeMap::new()));
        if seconds < *last_seconds {
            return Err(Error::Ordering { line, patient_id });
        }
        *last_seconds = seconds;
        let point = grid.entry(sample.timestamp).or_default();
        if sample.glucose.is_some() {
            point.glucose = sample.glucose;
        }
        point.carbs += sample.carbs.unwrap_or(0.0);
        point.bolus += sample.bolus.unwrap_or(0.0);
        if sample.basal.is_some() {
            point.basal = sample.basal;
        }
    }

    let mut episodes = Vec::new();
    for (patient_id, (_, grid)) in grids {
        let observed: Vec<i64> = grid
            .iter()
            .filter(|(_, p)| p.glucose.is_some())
            .map(|(&m, _)| m)
            .collect();
        let Some(&first) = observed.first() else {
            continue;
        };
        let mut spans = Vec::new();
        let mut span_start = first;
        for pair in observed.windows(2) {
            if pair[1] - pair[0] > partition_gap_minutes {
                spans.push((span_start, pair[0]));
                span_start = pair[1];
            }
        }
        spans.push((span_start, *observed.last().unwrap()));

        for (episode_id, (start, end)) in spans.into_iter().enumerate() {
            let len = ((end - start) / STEP_MINUTES) as usize + 1;
            let mut glucose = vec![None; len];
            let mut exog = vec![Exog::default(); len];
            for (&minute, point) in grid.range(start..=end) {
                let t = ((minute - start) / STEP_MINUTES) as usize;
                glucose[t] = point.glucose;
                exog[t] = Exog {
                    carbs: point.carbs,
                    bolus: point.bolus,
                    basal: point.basal.unwrap_or(0.0),
                };
            }
            episodes.push(Episode::new(patient_id.clone(), episode_id, start, glucose, exog)?);
        }
    }
    Ok(episodes)
}

/// Writes episodes back out in the CGM CSV format with integer-minute
/// timestamps, one row per grid point.
pub fn write_cgm_csv<W: Write>(writer: W, episodes: &[Episode]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(CGM_HEADER)?;
    for ep in episodes {
        for t in 0..ep.len() {
            let e = ep.exog[t];
            out.write_record([
                ep.patient_id.clone(),
                ep.minute_at(t).to_string(),
                ep.glucose[t].map(|g| g.to_string()).unwrap_or_default(),
                e.carbs.to_string(),
                e.bolus.to_string(),
                e.basal.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<cgm>", e))?;
    Ok(())
}

pub fn export_cgm_csv(path: &Path, episodes: &[Episode]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cgm_csv(file, episodes)
}
