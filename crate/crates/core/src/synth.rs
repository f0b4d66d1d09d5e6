//! Deterministic CGM-like fixtures.
//!
//! A trace is a flat baseline with triangular meal excursions and, after one
//! meal per day, a reduced-basal TCR interval that contains a hypoglycemic
//! dip. Every sample carries the regime it was generated in. This is geometry,
//! not physiology.

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Episode, Exog, GLUCOSE_RANGE, MINUTES_PER_DAY, SAMPLES_PER_DAY, STEP_MINUTES};
use crate::error::{Error, Result};
use crate::mask::{apply_mask, generate_mask};
use crate::missingness::{DurationMixture, MissingnessModel, MixtureParams, RegimeModel, HOURS};
use crate::protocols::TcrRecord;
use crate::rng::{derive_seed, rng_from_seed};

/// 2024-01-01T00:00 in minutes since the Unix epoch.
pub const DEFAULT_START_MINUTE: i64 = 28_401_120;
pub const HYPO_THRESHOLD: f64 = 70.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub patient_id: String,
    pub days: usize,
    pub start_minute: i64,
    /// mg/dL.
    pub baseline: f64,
    /// Minutes after midnight.
    pub meal_times: Vec<i64>,
    pub meal_carbs: f64,
    pub meal_bolus: f64,
    pub basal_rate: f64,
    pub peak_amplitude: f64,
    pub peak_rise_minutes: i64,
    pub peak_fall_minutes: i64,
    /// Index into `meal_times` of the meal that triggers TCR each day.
    pub tcr_meal: Option<usize>,
    pub tcr_delay_minutes: i64,
    pub tcr_duration_minutes: i64,
    pub tcr_basal_factor: f64,
    /// Minimum of the dip sits this far below 70 mg/dL.
    pub hypo_depth: f64,
    /// Dip onset after TCR activation.
    pub hypo_onset_minutes: i64,
    pub hypo_descent_minutes: i64,
    pub hypo_recovery_minutes: i64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patient_id: "synth".into(),
            days: 7,
            start_minute: DEFAULT_START_MINUTE,
            baseline: 100.0,
            meal_times: vec![7 * 60, 12 * 60, 18 * 60],
            meal_carbs: 50.0,
            meal_bolus: 5.0,
            basal_rate: 1.0,
            peak_amplitude: 80.0,
            peak_rise_minutes: 60,
            peak_fall_minutes: 120,
            tcr_meal: Some(2),
            tcr_delay_minutes: 150,
            tcr_duration_minutes: 240,
            tcr_basal_factor: 0.05,
            hypo_depth: 15.0,
            hypo_onset_minutes: 60,
            hypo_descent_minutes: 30,
            hypo_recovery_minutes: 60,
            noise_std: 0.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeLabel {
    Stationary,
    Peak,
    Hypo,
}

impl RegimeLabel {
    pub fn name(&self) -> &'static str {
        match self {
            RegimeLabel::Stationary => "stationary",
            RegimeLabel::Peak => "peak",
            RegimeLabel::Hypo => "hypo",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub episode: Episode,
    pub tcr: Vec<TcrRecord>,
    pub labels: Vec<RegimeLabel>,
}

/// Excursion within one day, minutes after midnight.
#[derive(Clone, Copy, Debug)]
struct Excursion {
    start: i64,
    rise: i64,
    fall: i64,
    /// Signed height at the apex.
    height: f64,
    label: RegimeLabel,
}

impl Excursion {
    fn end(&self) -> i64 {
        self.start + self.rise + self.fall
    }

    /// Offset at `minute` after the excursion start.
    fn offset(&self, minute: i64) -> f64 {
        if minute < 0 || minute >= self.rise + self.fall {
            0.0
        } else if minute < self.rise {
            self.height * minute as f64 / self.rise as f64
        } else {
            self.height * (self.rise + self.fall - minute) as f64 / self.fall as f64
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl SynthConfig {
    fn tcr_start(&self) -> Option<i64> {
        self.tcr_meal.map(|m| self.meal_times[m] + self.tcr_delay_minutes)
    }

    fn excursions(&self) -> Result<Vec<Excursion>> {
        let mut out: Vec<Excursion> = self
            .meal_times
            .iter()
            .map(|&m| Excursion {
                start: m,
                rise: self.peak_rise_minutes,
                fall: self.peak_fall_minutes,
                height: self.peak_amplitude,
                label: RegimeLabel::Peak,
            })
            .collect();
        if let Some(tcr) = self.tcr_start() {
            out.push(Excursion {
                start: tcr + self.hypo_onset_minutes,
                rise: self.hypo_descent_minutes,
                fall: self.hypo_recovery_minutes,
                height: HYPO_THRESHOLD - self.hypo_depth - self.baseline,
                label: RegimeLabel::Hypo,
            });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(config_error("days must be positive"));
        }
        if !(70.0..=140.0).contains(&self.baseline) {
            return Err(config_error(format!("baseline {} outside [70, 140]", self.baseline)));
        }
        if !(self.peak_amplitude >= 0.0) || self.baseline + self.peak_amplitude > GLUCOSE_RANGE.1 {
            return Err(config_error(format!("invalid peak amplitude {}", self.peak_amplitude)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(config_error(format!("invalid noise_std {}", self.noise_std)));
        }
        if self.meal_carbs < 0.0 || self.meal_bolus < 0.0 || self.basal_rate < 0.0 || !(0.0..=1.0).contains(&self.tcr_basal_factor) {
            return Err(config_error("insulin and carb settings must be non-negative"));
        }
        let minutes = [
            self.peak_rise_minutes,
            self.peak_fall_minutes,
            self.tcr_delay_minutes,
            self.tcr_duration_minutes,
            self.hypo_onset_minutes,
            self.hypo_descent_minutes,
            self.hypo_recovery_minutes,
        ];
        if minutes.iter().chain(&self.meal_times).any(|m| m % STEP_MINUTES != 0 || *m < 0) {
            return Err(config_error("times must be non-negative multiples of 5 minutes"));
        }
        if self.peak_rise_minutes == 0 || self.peak_fall_minutes == 0 {
            return Err(config_error("excursion phases must be positive"));
        }
        if self.meal_times.iter().any(|&m| m >= MINUTES_PER_DAY) {
            return Err(config_error("meal times must fall within the day"));
        }
        if let Some(m) = self.tcr_meal {
            if m >= self.meal_times.len() {
                return Err(config_error(format!("tcr_meal {m} does not name a meal")));
            }
            let min = HYPO_THRESHOLD - self.hypo_depth;
            if !(self.hypo_depth > 0.0) || min < GLUCOSE_RANGE.0 {
                return Err(config_error(format!("invalid hypo depth {}", self.hypo_depth)));
            }
            if self.hypo_descent_minutes == 0 || self.hypo_recovery_minutes == 0 {
                return Err(config_error("dip phases must be positive"));
            }
            let dip_end = self.hypo_onset_minutes + self.hypo_descent_minutes + self.hypo_recovery_minutes;
            if dip_end > self.tcr_duration_minutes {
                return Err(config_error("hypoglycemic dip must end inside the TCR interval"));
            }
        }
        let ex = self.excursions()?;
        for (i, a) in ex.iter().enumerate() {
            if a.end() - a.start > MINUTES_PER_DAY {
                return Err(config_error("excursion longer than a day"));
            }
            for (j, b) in ex.iter().enumerate() {
                for shift in [-MINUTES_PER_DAY, 0, MINUTES_PER_DAY] {
                    if i == j && shift == 0 {
                        continue;
                    }
                    let (bs, be) = (b.start + shift, b.end() + shift);
                    if a.start < be && bs < a.end() {
                        return Err(config_error(format!(
                            "excursions at minute {} and {} overlap",
                            a.start,
                            b.start.rem_euclid(MINUTES_PER_DAY)
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn index_of(minute: i64) -> usize {
    (minute / STEP_MINUTES) as usize
}

/// Builds the trace described by `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let len = config.days * SAMPLES_PER_DAY;
    let mut clean = vec![config.baseline; len];
    let mut labels = vec![RegimeLabel::Stationary; len];
    let mut exog = vec![
        Exog {
            basal: config.basal_rate,
            ..Exog::default()
        };
        len
    ];
    let mut tcr = Vec::new();

    for day in 0..config.days as i64 {
        let day_start = day * MINUTES_PER_DAY;
        for ex in config.excursions()? {
            let start = day_start + ex.start;
            let first = index_of(start);
            let last = index_of(start + ex.rise + ex.fall).min(len);
            for t in first..last {
                clean[t] += ex.offset(t as i64 * STEP_MINUTES - start);
                // the dip's first sample is still at baseline; a meal's carries the event
                if ex.label == RegimeLabel::Peak || t > first {
                    labels[t] = ex.label;
                }
            }
        }
        for &m in &config.meal_times {
            let t = index_of(day_start + m);
            exog[t].carbs = config.meal_carbs;
            exog[t].bolus = config.meal_bolus;
        }
        if let Some(start) = config.tcr_start() {
            let first = index_of(day_start + start);
            let last = index_of(day_start + start + config.tcr_duration_minutes).min(len);
            if first < len {
                for e in &mut exog[first..last] {
                    e.basal = config.basal_rate * config.tcr_basal_factor;
                }
                tcr.push(TcrRecord {
                    patient_id: config.patient_id.clone(),
                    episode_id: 0,
                    tcr_start_index: first,
                    tcr_end_index: last,
                });
            }
        }
    }

    let glucose: Vec<Option<f64>> = if config.noise_std > 0.0 {
        let noise = Normal::new(0.0, config.noise_std).map_err(|e| config_error(e.to_string()))?;
        let mut rng = rng_from_seed(derive_seed(config.seed, "synth", &config.patient_id, 0));
        clean
            .iter()
            .map(|&g| Some((g + noise.sample(&mut rng)).clamp(GLUCOSE_RANGE.0, GLUCOSE_RANGE.1)))
            .collect()
    } else {
        clean.into_iter().map(Some).collect()
    };
    let episode = Episode::new(config.patient_id.clone(), 0, config.start_minute, glucose, exog)?;
    Ok(SynthOutput { episode, tcr, labels })
}

/// Drops readings from `episode` following the gap process of `model`.
pub fn inject_missingness(episode: &Episode, model: &MissingnessModel, seed: u64) -> Result<Episode> {
    let sub = derive_seed(seed, "synth-gaps", episode.patient_id(), episode.episode_id());
    let mask = generate_mask(episode.len(), episode.start_time_of_day(), model, sub);
    apply_mask(episode, &mask)
}

/// Gap process used to create fixtures with realistic sensor dropouts:
/// frequent short night-time dropouts and daytime gaps with a warm-up bump
/// near two hours.
pub fn reference_model() -> MissingnessModel {
    let mut onset = [0.08; HOURS];
    onset[..6].fill(0.2);
    let day = DurationMixture::from_params(MixtureParams {
        a: 0.03,
        k: 0.04,
        b: 0.008,
        mu: 120.0,
        sigma: 12.0,
        gamma: 0.0005,
    })
    .expect("reference day mixture has mass");
    let night = DurationMixture::from_params(MixtureParams {
        a: 0.05,
        k: 0.06,
        b: 0.004,
        mu: 45.0,
        sigma: 10.0,
        gamma: 0.0003,
    })
    .expect("reference night mixture has mass");
    MissingnessModel::new(
        onset,
        RegimeModel {
            pi_short: 0.35,
            mixture: day,
        },
        RegimeModel {
            pi_short: 0.5,
            mixture: night,
        },
    )
    .expect("reference probabilities are valid")
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    episode_id: usize,
    t: usize,
    regime: RegimeLabel,
}

pub fn write_labels<W: Write>(writer: W, episode_id: usize, labels: &[RegimeLabel]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for (t, &regime) in labels.iter().enumerate() {
        out.serialize(LabelRow { episode_id, t, regime })?;
    }
    out.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

pub fn save_labels(path: &Path, episode_id: usize, labels: &[RegimeLabel]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_labels(file, episode_id, labels)
}

/// Labels per episode id, in index order.
pub fn read_labels<R: Read>(reader: R) -> Result<Vec<(usize, Vec<RegimeLabel>)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<(usize, Vec<RegimeLabel>)> = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let row: LabelRow = row.map_err(|e| Error::parse(i + 2, e.to_string()))?;
        if out.last().is_none_or(|(id, _)| *id != row.episode_id) {
            out.push((row.episode_id, Vec::new()));
        }
        let series = &mut out.last_mut().unwrap().1;
        if row.t != series.len() {
            return Err(Error::parse(i + 2, format!("expected t={}, found {}", series.len(), row.t)));
        }
        series.push(row.regime);
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<(usize, Vec<RegimeLabel>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(file)
}
