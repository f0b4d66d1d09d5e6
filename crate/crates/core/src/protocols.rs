//! Regime-specific evaluation windows.
//!
//! * Protocol A masks stable 30-minute windows (euglycemic, flat, no recent
//!   meal or bolus) up to a target fraction of the episode.
//! * Protocol B masks a 3.5–4 h window around the peak following a meal.
//! * Protocol C masks one hour centred on the first hypoglycemic sample inside
//!   each temporal-control-reset (TCR) interval.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Episode, EpisodeKey, SAMPLES_PER_HOUR, STEP_MINUTES};
use crate::error::{Error, Result};
use crate::mask::{Mask, Provenance};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    A,
    B,
    C,
}

impl Protocol {
    pub fn provenance(self) -> Provenance {
        match self {
            Protocol::A => Provenance::ProtocolA,
            Protocol::B => Provenance::ProtocolB,
            Protocol::C => Provenance::ProtocolC,
        }
    }
}

/// Aggregated meal: index of the first constituent and the summed carbs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealEvent {
    pub index: usize,
    pub carbs: f64,
}

/// Protocol-labelled evaluation interval `[start_index, end_index)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeWindow {
    pub patient_id: String,
    pub episode_id: usize,
    pub protocol: Protocol,
    pub start_index: usize,
    pub end_index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anchor_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub meal_event: Option<MealEvent>,
}

impl RegimeWindow {
    fn new(ep: &Episode, protocol: Protocol, start_index: usize, end_index: usize) -> Self {
        RegimeWindow {
            patient_id: ep.patient_id().to_string(),
            episode_id: ep.episode_id(),
            protocol,
            start_index,
            end_index,
            anchor_index: None,
            meal_event: None,
        }
    }

    pub fn key(&self) -> EpisodeKey {
        EpisodeKey {
            patient_id: self.patient_id.clone(),
            episode_id: self.episode_id,
        }
    }

    pub fn len(&self) -> usize {
        self.end_index - self.start_index
    }

    pub fn is_empty(&self) -> bool {
        self.end_index == self.start_index
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start_index..self.end_index).contains(&t)
    }
}

/// Thresholds defining a homeostatic window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCriteria {
    /// mg/dL, inclusive.
    pub glucose_low: f64,
    /// mg/dL, inclusive.
    pub glucose_high: f64,
    /// mg/dL/min, strict.
    pub gradient_threshold: f64,
    pub gradient_quorum: f64,
    pub washout_minutes: i64,
    /// mg/dL, strict.
    pub max_range: f64,
    pub window_minutes: i64,
}

impl Default for StabilityCriteria {
    fn default() -> Self {
        StabilityCriteria {
            glucose_low: 70.0,
            glucose_high: 140.0,
            gradient_threshold: 0.6,
            gradient_quorum: 0.85,
            washout_minutes: 60,
            max_range: 25.0,
            window_minutes: 30,
        }
    }
}

impl StabilityCriteria {
    pub fn window_samples(&self) -> usize {
        (self.window_minutes / STEP_MINUTES) as usize
    }

    pub fn washout_samples(&self) -> usize {
        (self.washout_minutes / STEP_MINUTES) as usize
    }

    pub fn in_band(&self, g: f64) -> bool {
        (self.glucose_low..=self.glucose_high).contains(&g)
    }

    /// Share of gradients strictly below the threshold meets the quorum.
    pub fn gradients_stable(&self, gradients: &[f64]) -> bool {
        if gradients.is_empty() {
            return false;
        }
        let ok = gradients
            .iter()
            .filter(|g| g.abs() < self.gradient_threshold)
            .count();
        ok as f64 / gradients.len() as f64 >= self.gradient_quorum
    }
}

/// Rate of change in mg/dL/min: central differences inside, one-sided at the
/// ends.
pub fn gradient(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Dimension {
            expected: 2,
            actual: n,
        });
    }
    let step = STEP_MINUTES as f64;
    Ok((0..n)
        .map(|t| match t {
            0 => (values[1] - values[0]) / step,
            t if t == n - 1 => (values[t] - values[t - 1]) / step,
            t => (values[t + 1] - values[t - 1]) / (2.0 * step),
        })
        .collect())
}

/// Checks all five homeostasis criteria for the window starting at `start`.
pub fn is_stable_window(episode: &Episode, start: usize, criteria: &StabilityCriteria) -> bool {
    let len = criteria.window_samples();
    let washout = criteria.washout_samples();
    let end = start + len;
    if start < washout || end > episode.len() || len < 2 {
        return false;
    }
    let Some(values) = episode.glucose()[start..end].iter().copied().collect::<Option<Vec<f64>>>() else {
        return false;
    };
    if !values.iter().all(|&g| criteria.in_band(g)) {
        return false;
    }
    let grads = gradient(&values).expect("window has at least two samples");
    if !criteria.gradients_stable(&grads) {
        return false;
    }
    if episode.exog()[start - washout..end].iter().any(|e| e.has_event()) {
        return false;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min < criteria.max_range
}

/// Every window start satisfying the homeostasis criteria. Windows overlap.
pub fn find_stable_windows(episode: &Episode, criteria: &StabilityCriteria) -> Vec<RegimeWindow> {
    let len = criteria.window_samples();
    if episode.len() < len {
        return Vec::new();
    }
    (0..=episode.len() - len)
        .filter(|&s| is_stable_window(episode, s, criteria))
        .map(|s| RegimeWindow::new(episode, Protocol::A, s, s + len))
        .collect()
}

fn overlaps_with_gap(a: usize, b: usize, len: usize) -> bool {
    // windows must be separated by at least one retained sample
    a.abs_diff(b) < len + 1
}

/// Greedy packing by start index; optimal for equal-length intervals.
fn max_packing(starts: &[usize], len: usize) -> Vec<usize> {
    let mut sorted = starts.to_vec();
    sorted.sort_unstable();
    let mut chosen: Vec<usize> = Vec::new();
    for s in sorted {
        if chosen.last().is_none_or(|&c| !overlaps_with_gap(c, s, len)) {
            chosen.push(s);
        }
    }
    chosen
}

/// Masks `round(ratio·T)` samples in stable windows: whole windows first, then
/// the leading samples of one more window for the remainder.
pub fn allocate_stationary_mask(
    episode: &Episode,
    windows: &[RegimeWindow],
    ratio: f64,
    seed: u64,
) -> Result<(Mask, Vec<RegimeWindow>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("masking ratio {ratio} outside [0, 1]")));
    }
    let t_len = episode.len();
    let target = (ratio * t_len as f64 + 0.5).floor() as usize;
    let mut mask = Mask::all_retained(t_len, seed, Provenance::ProtocolA);
    if target == 0 {
        return Ok((mask, Vec::new()));
    }
    let len = windows.first().map_or(6, |w| w.len());
    let full = target / len;
    let residual = target % len;
    let needed = full + usize::from(residual > 0);

    let mut starts: Vec<usize> = windows.iter().map(|w| w.start_index).collect();
    starts.sort_unstable();
    starts.dedup();
    let mut rng = rng_from_seed(seed);
    starts.shuffle(&mut rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(needed);
    for &s in &starts {
        if chosen.len() == needed {
            break;
        }
        if chosen.iter().all(|&c| !overlaps_with_gap(c, s, len)) {
            chosen.push(s);
        }
    }
    if chosen.len() < needed {
        let mut packing = max_packing(&starts, len);
        let achievable = (packing.len() * len).min(target);
        if packing.len() < needed {
            return Err(Error::Allocation {
                requested: target,
                achievable: packing.len() * len,
                max_ratio: (packing.len() * len) as f64 / t_len as f64,
            });
        }
        debug_assert!(achievable == target);
        packing.shuffle(&mut rng);
        packing.truncate(needed);
        chosen = packing;
    }

    let mut selected = Vec::with_capacity(needed);
    for (i, &s) in chosen.iter().enumerate() {
        let masked = if i < full { len } else { residual };
        mask.hide(s, s + masked);
        selected.push(RegimeWindow::new(episode, Protocol::A, s, s + len));
    }
    selected.sort_by_key(|w| w.start_index);
    Ok((mask, selected))
}

/// Carb events merged while consecutive events are less than an hour apart.
pub fn aggregate_meals(episode: &Episode) -> Vec<MealEvent> {
    let mut events: Vec<MealEvent> = Vec::new();
    let mut last_index = None;
    for (t, e) in episode.exog().iter().enumerate() {
        if e.carbs <= 0.0 {
            continue;
        }
        match (events.last_mut(), last_index) {
            (Some(ev), Some(prev)) if t - prev < SAMPLES_PER_HOUR => ev.carbs += e.carbs,
            _ => events.push(MealEvent {
                index: t,
                carbs: e.carbs,
            }),
        }
        last_index = Some(t);
    }
    events
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeakConfig {
    pub n_peaks: usize,
    /// Post-meal span scanned for the peak.
    pub search_minutes: i64,
    pub min_window_minutes: i64,
    pub max_window_minutes: i64,
}

impl PeakConfig {
    pub fn new(n_peaks: usize) -> Self {
        PeakConfig {
            n_peaks,
            search_minutes: 240,
            min_window_minutes: 210,
            max_window_minutes: 240,
        }
    }
}

/// Window of `duration` samples centred on `peak`, moved after the meal and
/// kept before `limit`. `None` if it no longer fits.
fn place_peak_window(meal: usize, peak: usize, duration: usize, limit: usize, min_len: usize) -> Option<(usize, usize)> {
    let mut start = peak.saturating_sub(duration / 2).max(meal + 1);
    let mut end = start + duration;
    if end > limit {
        end = limit;
        start = limit.saturating_sub(duration).max(meal + 1);
    }
    (end > start && end - start >= min_len).then_some((start, end))
}

/// Protocol-B mask over the first `n_peaks` eligible meals of each day.
pub fn build_peak_masks(episode: &Episode, config: &PeakConfig, seed: u64) -> Result<(Mask, Vec<RegimeWindow>)> {
    if config.n_peaks == 0 {
        return Err(Error::Config("n_peaks must be at least 1".into()));
    }
    let values = episode.complete_values()?;
    let search = (config.search_minutes / STEP_MINUTES) as usize;
    let min_len = (config.min_window_minutes / STEP_MINUTES) as usize;
    let mut rng = rng_from_seed(seed);

    let mut per_day: Vec<(i64, Vec<RegimeWindow>)> = Vec::new();
    for meal in aggregate_meals(episode) {
        if meal.index + search >= episode.len() {
            continue;
        }
        let day = episode.day_of(meal.index);
        let mut peak = meal.index + 1;
        for t in meal.index + 1..=meal.index + search {
            if values[t] > values[peak] {
                peak = t;
            }
        }
        let minutes = rng.random_range(config.min_window_minutes as f64..=config.max_window_minutes as f64);
        let duration = (minutes / STEP_MINUTES as f64).round() as usize;
        let slot = episode.slot_of_day(meal.index);
        let day_end = meal.index + (crate::data::SAMPLES_PER_DAY - slot);
        let limit = day_end.min(episode.len());
        let Some((start, end)) = place_peak_window(meal.index, peak, duration, limit, min_len) else {
            continue;
        };
        let mut w = RegimeWindow::new(episode, Protocol::B, start, end);
        w.anchor_index = Some(peak);
        w.meal_event = Some(meal);
        match per_day.last_mut() {
            Some((d, ws)) if *d == day => ws.push(w),
            _ => per_day.push((day, vec![w])),
        }
    }

    let found = per_day.iter().map(|(_, ws)| ws.len()).max().unwrap_or(0);
    let selected: Vec<RegimeWindow> = per_day
        .into_iter()
        .filter(|(_, ws)| ws.len() >= config.n_peaks)
        .flat_map(|(_, ws)| ws.into_iter().take(config.n_peaks))
        .collect();
    if selected.is_empty() {
        return Err(Error::Selection {
            requested: config.n_peaks,
            found,
        });
    }
    let mut mask = Mask::all_retained(episode.len(), seed, Provenance::ProtocolB);
    for w in &selected {
        mask.hide(w.start_index, w.end_index);
    }
    Ok((mask, selected))
}

/// Interval `[start_index, end_index)` with reduced basal delivery.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TcrInterval {
    pub start_index: usize,
    pub end_index: usize,
}

/// Protocol-C mask: `window_minutes` centred on the first sample below
/// `threshold` inside each TCR interval.
pub fn build_hypo_masks(
    episode: &Episode,
    tcr: &[TcrInterval],
    window_minutes: i64,
    threshold: f64,
) -> Result<(Mask, Vec<RegimeWindow>)> {
    let len = (window_minutes / STEP_MINUTES) as usize;
    if len == 0 {
        return Err(Error::Config("hypoglycemia window must be at least 5 minutes".into()));
    }
    let mut mask = Mask::all_retained(episode.len(), 0, Provenance::ProtocolC);
    let mut windows = Vec::new();
    for interval in tcr {
        let end = interval.end_index.min(episode.len());
        let mut anchor = None;
        for t in interval.start_index..end {
            let g = episode.glucose()[t].ok_or(Error::MissingValue { index: t })?;
            if g < threshold {
                anchor = Some(t);
                break;
            }
        }
        let Some(anchor) = anchor else { continue };
        let start = anchor.saturating_sub(len / 2);
        let stop = (anchor + len - len / 2).min(episode.len());
        mask.hide(start, stop);
        let mut w = RegimeWindow::new(episode, Protocol::C, start, stop);
        w.anchor_index = Some(anchor);
        windows.push(w);
    }
    Ok((mask, windows))
}

/// Row of the TCR metadata CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcrRecord {
    pub patient_id: String,
    pub episode_id: usize,
    pub tcr_start_index: usize,
    pub tcr_end_index: usize,
}

impl TcrRecord {
    pub fn interval(&self) -> TcrInterval {
        TcrInterval {
            start_index: self.tcr_start_index,
            end_index: self.tcr_end_index,
        }
    }
}

pub fn read_tcr_csv(path: &Path) -> Result<Vec<TcrRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let rec: TcrRecord = rec.map_err(|e| Error::parse(i + 2, e.to_string()))?;
        if rec.tcr_end_index <= rec.tcr_start_index {
            return Err(Error::parse(i + 2, "empty TCR interval"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_tcr_csv(path: &Path, records: &[TcrRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_windows(path: &Path, windows: &[RegimeWindow]) -> Result<()> {
    let text = serde_json::to_string_pretty(windows)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_windows(path: &Path) -> Result<Vec<RegimeWindow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Exog;

    fn episode_with(values: &[f64], events: &[(usize, f64, f64)]) -> Episode {
        let mut exog = vec![Exog::default(); values.len()];
        for &(t, carbs, bolus) in events {
            exog[t].carbs = carbs;
            exog[t].bolus = bolus;
        }
        Episode::new("p", 0, 0, values.iter().copied().map(Some).collect(), exog).unwrap()
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(gradient(&[100.0; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(gradient(&[100.0, 105.0, 110.0]).unwrap()[1], 1.0);
        let ramp: Vec<f64> = (0..10).map(|i| 80.0 + 2.5 * i as f64).collect();
        assert!(gradient(&ramp).unwrap().iter().all(|&g| (g - 0.5).abs() < 1e-12));
        assert!(gradient(&[1.0]).is_err());
    }

    #[test]
    fn flat_trace_qualifies_everywhere_after_washout() {
        let ep = episode_with(&[100.0; 60], &[]);
        let ws = find_stable_windows(&ep, &StabilityCriteria::default());
        let starts: Vec<usize> = ws.iter().map(|w| w.start_index).collect();
        assert_eq!(starts, (12..=54).collect::<Vec<_>>());
        assert!(ws.iter().all(|w| w.len() == 6 && w.protocol == Protocol::A));
    }

    #[test]
    fn hyperglycemic_sample_excludes_window() {
        let mut v = vec![100.0; 40];
        v[20] = 145.0;
        let ep = episode_with(&v, &[]);
        let ws = find_stable_windows(&ep, &StabilityCriteria::default());
        assert!(ws.iter().all(|w| !w.contains(20)));
        assert!(!ws.is_empty());
    }

    #[test]
    fn bolus_inside_washout_excludes_window() {
        // bolus 45 min (9 samples) before a window starting at 30
        let ep = episode_with(&[100.0; 50], &[(21, 0.0, 2.0)]);
        let crit = StabilityCriteria::default();
        assert!(!is_stable_window(&ep, 30, &crit));
        // 65 min before is fine
        assert!(is_stable_window(&ep, 34, &crit));
    }

    #[test]
    fn range_and_gradient_criteria() {
        let crit = StabilityCriteria::default();
        // rising 2.5 per sample: gradient 0.5 < 0.6, range 12.5 < 25
        let ramp: Vec<f64> = (0..30).map(|i| 80.0 + 2.5 * i as f64).collect();
        assert!(is_stable_window(&episode_with(&ramp, &[]), 12, &crit));
        // 3.5 per sample: gradient 0.7
        let steep: Vec<f64> = (0..30).map(|i| 75.0 + 2.0 * i as f64 + (i % 2) as f64 * 3.0).collect();
        assert!(!is_stable_window(&episode_with(&steep, &[]), 12, &crit));
    }

    #[test]
    fn allocation_rounds_half_up_and_uses_partial_segment() {
        let ep = episode_with(&[100.0; 288], &[]);
        let windows = find_stable_windows(&ep, &StabilityCriteria::default());
        let (mask, selected) = allocate_stationary_mask(&ep, &windows, 0.1, 7).unwrap();
        // round(28.8) = 29 = 4·6 + 5
        assert_eq!(mask.n_masked(), 29);
        assert_eq!(selected.len(), 5);
        let runs = mask.runs();
        let mut lens: Vec<usize> = runs.iter().map(|r| r.length_samples).collect();
        lens.sort_unstable();
        assert_eq!(lens, vec![5, 6, 6, 6, 6]);

        // 0.125 · 288 = 36 = 6 full windows, no partial
        let (mask, selected) = allocate_stationary_mask(&ep, &windows, 0.125, 7).unwrap();
        assert_eq!(mask.n_masked(), 36);
        assert_eq!(selected.len(), 6);
        assert!(mask.runs().iter().all(|r| r.length_samples == 6));

        let (a, _) = allocate_stationary_mask(&ep, &windows, 0.3, 11).unwrap();
        let (b, _) = allocate_stationary_mask(&ep, &windows, 0.3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn allocation_errors_without_candidates() {
        let ep = episode_with(&[100.0; 100], &[]);
        match allocate_stationary_mask(&ep, &[], 0.1, 1) {
            Err(Error::Allocation { requested, achievable, .. }) => {
                assert_eq!(requested, 10);
                assert_eq!(achievable, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let windows = find_stable_windows(&ep, &StabilityCriteria::default());
        // starts 12..=94 pack into 12 separated windows (stride 7) = 72 samples
        match allocate_stationary_mask(&ep, &windows, 0.9, 1) {
            Err(Error::Allocation { achievable, .. }) => assert_eq!(achievable, 72),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn meal_aggregation() {
        // 08:00 = index 96, 08:40 = 104, 09:00 = 108
        let ep = episode_with(&[100.0; 200], &[(96, 30.0, 0.0), (104, 20.0, 0.0)]);
        assert_eq!(aggregate_meals(&ep), vec![MealEvent { index: 96, carbs: 50.0 }]);
        let ep = episode_with(&[100.0; 200], &[(96, 30.0, 0.0), (108, 20.0, 0.0)]);
        assert_eq!(aggregate_meals(&ep).len(), 2);
        assert!(aggregate_meals(&episode_with(&[100.0; 10], &[])).is_empty());
    }

    fn meal_day(peak_offset: usize, meals: &[usize]) -> Episode {
        let mut v = vec![100.0f64; 288];
        for &m in meals {
            for t in m + 1..(m + 48).min(288) {
                let d = t as f64 - (m + peak_offset) as f64;
                v[t] = v[t].max(100.0 + 80.0 - 4.0 * d.abs());
            }
        }
        let events: Vec<_> = meals.iter().map(|&m| (m, 40.0, 3.0)).collect();
        episode_with(&v, &events)
    }

    #[test]
    fn peak_anchor_is_argmax() {
        let ep = meal_day(18, &[96]);
        let (mask, ws) = build_peak_masks(&ep, &PeakConfig::new(1), 3).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].anchor_index, Some(96 + 18));
        assert!((42..=48).contains(&ws[0].len()));
        assert!(ws[0].start_index > 96);
        assert_eq!(mask.n_masked(), ws[0].len());
    }

    #[test]
    fn early_peak_window_shifted_after_meal() {
        // peak 30 min after the meal: a centred 42..48 sample window would
        // start before the meal, so it starts at meal + 1 with full length
        let ep = meal_day(6, &[96]);
        let (_, ws) = build_peak_masks(&ep, &PeakConfig::new(1), 5).unwrap();
        let w = &ws[0];
        assert_eq!(w.start_index, 97);
        assert!((42..=48).contains(&w.len()));
    }

    #[test]
    fn close_meals_give_one_candidate() {
        let ep = meal_day(12, &[96, 102]);
        assert_eq!(aggregate_meals(&ep).len(), 1);
        assert!(matches!(
            build_peak_masks(&ep, &PeakConfig::new(2), 1),
            Err(Error::Selection { requested: 2, found: 1 })
        ));
    }

    #[test]
    fn late_peak_window_is_moved_before_day_end() {
        // meal at 19:00, peak at 22:20: a centred window would cross midnight
        let ep = meal_day(40, &[228]);
        let (_, ws) = build_peak_masks(&ep, &PeakConfig::new(1), 2).unwrap();
        let w = &ws[0];
        assert_eq!(w.end_index, 288);
        assert!((42..=48).contains(&w.len()));
        assert!(w.start_index > 228);
    }

    #[test]
    fn hypo_examples() {
        let mut v = vec![100.0; 200];
        v[100] = 65.0;
        v[101] = 60.0;
        let ep = episode_with(&v, &[]);
        let tcr = [TcrInterval {
            start_index: 90,
            end_index: 140,
        }];
        let (mask, ws) = build_hypo_masks(&ep, &tcr, 60, 70.0).unwrap();
        assert_eq!((ws[0].start_index, ws[0].end_index), (94, 106));
        assert_eq!(ws[0].anchor_index, Some(100));
        assert_eq!(mask.n_masked(), 12);

        let ep = episode_with(&[100.0; 200], &[]);
        let (mask, ws) = build_hypo_masks(&ep, &tcr, 60, 70.0).unwrap();
        assert!(ws.is_empty() && mask.n_masked() == 0);

        let mut v = vec![100.0; 50];
        v[3] = 60.0;
        let ep = episode_with(&v, &[]);
        let tcr = [TcrInterval {
            start_index: 0,
            end_index: 20,
        }];
        let (_, ws) = build_hypo_masks(&ep, &tcr, 60, 70.0).unwrap();
        assert_eq!((ws[0].start_index, ws[0].end_index), (0, 9));
    }
}
