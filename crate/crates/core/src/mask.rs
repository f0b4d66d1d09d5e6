//! Binary retention masks and the realistic gap generator.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::data::{Episode, EpisodeKey, MINUTES_PER_DAY, SAMPLES_PER_DAY, SAMPLES_PER_HOUR, STEP_MINUTES};
use crate::error::{Error, Result};
use crate::missingness::{DurationMixture, MissingnessModel, Regime, DELTA_MAX, DELTA_MIN};
use crate::rng::{rng_from_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "empirical")]
    Empirical,
    #[serde(rename = "protocol_A")]
    ProtocolA,
    #[serde(rename = "protocol_B")]
    ProtocolB,
    #[serde(rename = "protocol_C")]
    ProtocolC,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::Empirical => "empirical",
            Provenance::ProtocolA => "A",
            Provenance::ProtocolB => "B",
            Provenance::ProtocolC => "C",
        }
    }
}

/// Contiguous masked interval in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start_index: usize,
    pub length_samples: usize,
}

impl Run {
    pub fn end(&self) -> usize {
        self.start_index + self.length_samples
    }
}

/// `true` retains a sample, `false` masks it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
    seed: u64,
    provenance: Provenance,
}

impl Mask {
    pub fn new(bits: Vec<bool>, seed: u64, provenance: Provenance) -> Self {
        Mask {
            bits,
            seed,
            provenance,
        }
    }

    pub fn all_retained(len: usize, seed: u64, provenance: Provenance) -> Self {
        Mask::new(vec![true; len], seed, provenance)
    }

    pub fn from_runs(len: usize, runs: &[Run], seed: u64, provenance: Provenance) -> Result<Self> {
        let mut bits = vec![true; len];
        for run in runs {
            if run.length_samples == 0 || run.end() > len {
                return Err(Error::Dimension {
                    expected: len,
                    actual: run.end(),
                });
            }
            bits[run.start_index..run.end()].fill(false);
        }
        Ok(Mask::new(bits, seed, provenance))
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_retained(&self, t: usize) -> bool {
        self.bits[t]
    }

    pub fn n_masked(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    /// Masks `start..end` (clipped to the mask length).
    pub fn hide(&mut self, start: usize, end: usize) {
        let end = end.min(self.bits.len());
        if start < end {
            self.bits[start..end].fill(false);
        }
    }

    /// Maximal masked runs in index order.
    pub fn runs(&self) -> Vec<Run> {
        masked_runs(&self.bits)
    }
}

pub fn masked_runs(bits: &[bool]) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut t = 0;
    while t < bits.len() {
        if bits[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < bits.len() && !bits[t] {
            t += 1;
        }
        runs.push(Run {
            start_index: start,
            length_samples: t - start,
        });
    }
    runs
}

fn round_to_grid(minutes: f64) -> f64 {
    let step = STEP_MINUTES as f64;
    ((minutes / step).round() * step).clamp(DELTA_MIN, DELTA_MAX)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Exponential with rate `k` shifted to start at 10 and truncated at 240.
pub fn sample_truncated_exp(k: f64, rng: &mut Rng) -> f64 {
    let v: f64 = rng.random();
    let x = DELTA_MIN - (v * (-k * (DELTA_MAX - DELTA_MIN)).exp_m1()).ln_1p() / k;
    x.clamp(DELTA_MIN, DELTA_MAX)
}

/// Normal(mu, sigma) truncated to `[10, 240]`, by inverse CDF.
pub fn sample_truncated_normal(mu: f64, sigma: f64, rng: &mut Rng) -> f64 {
    let lo = std_normal_cdf((DELTA_MIN - mu) / sigma);
    let hi = std_normal_cdf((DELTA_MAX - mu) / sigma);
    let v: f64 = rng.random();
    if hi - lo <= 0.0 {
        return mu.clamp(DELTA_MIN, DELTA_MAX);
    }
    let x = mu + sigma * std_normal_quantile(lo + v * (hi - lo));
    if x.is_finite() {
        x.clamp(DELTA_MIN, DELTA_MAX)
    } else {
        mu.clamp(DELTA_MIN, DELTA_MAX)
    }
}

/// Continuous sustained-gap duration from the three-way mixture.
pub fn sample_mixture(mixture: &DurationMixture, rng: &mut Rng) -> f64 {
    let u: f64 = rng.random();
    if u < mixture.w_exp {
        sample_truncated_exp(mixture.params.k, rng)
    } else if u < mixture.w_exp + mixture.w_gauss {
        sample_truncated_normal(mixture.params.mu, mixture.params.sigma, rng)
    } else {
        rng.random_range(DELTA_MIN..=DELTA_MAX)
    }
}

/// Sustained-gap duration in minutes, on the 5-minute grid within `[10, 240]`.
pub fn sample_duration(model: &MissingnessModel, regime: Regime, rng: &mut Rng) -> f64 {
    round_to_grid(sample_mixture(&model.regime(regime).mixture, rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GapKind {
    Short,
    Sustained,
}

/// One event drawn by the generator, before truncation at the sequence end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrawnGap {
    pub start_index: usize,
    pub hour: usize,
    pub regime: Regime,
    pub kind: GapKind,
    pub duration_minutes: f64,
    pub length_samples: usize,
}

/// Walks the sequence hour by hour, returning the retention bits and the log
/// of drawn events.
///
/// Each hour gets one Bernoulli onset trial. On success the event starts at a
/// uniform grid index inside the remainder of the hour and the walk resumes at
/// its end, or at the next hour boundary if the event ends first.
pub fn generate_bits(
    len: usize,
    start_time_of_day: i64,
    model: &MissingnessModel,
    rng: &mut Rng,
) -> (Vec<bool>, Vec<DrawnGap>) {
    let mut bits = vec![true; len];
    let mut log = Vec::new();
    let slot0 = (start_time_of_day.rem_euclid(MINUTES_PER_DAY) / STEP_MINUTES) as usize;
    let mut t = 0;
    while t < len {
        let slot = (slot0 + t) % SAMPLES_PER_DAY;
        let hour = slot / SAMPLES_PER_HOUR;
        let t_next = t + (SAMPLES_PER_HOUR - slot % SAMPLES_PER_HOUR);
        let p: f64 = rng.random();
        if p >= model.onset_prob[hour] {
            t = t_next;
            continue;
        }
        let regime = Regime::of_hour(hour);
        let u: f64 = rng.random();
        let (kind, duration) = if u < model.regime(regime).pi_short {
            (GapKind::Short, STEP_MINUTES as f64)
        } else {
            (GapKind::Sustained, sample_duration(model, regime, rng))
        };
        let length = (duration / STEP_MINUTES as f64).ceil() as usize;
        let t_start = t + rng.random_range(0..t_next.min(len) - t);
        bits[t_start..(t_start + length).min(len)].fill(false);
        log.push(DrawnGap {
            start_index: t_start,
            hour,
            regime,
            kind,
            duration_minutes: duration,
            length_samples: length,
        });
        t = (t_start + length).max(t_next);
    }
    (bits, log)
}

/// Empirical mask for a sequence of `len` samples.
pub fn generate_mask(len: usize, start_time_of_day: i64, model: &MissingnessModel, seed: u64) -> Mask {
    let mut rng = rng_from_seed(seed);
    let (bits, _) = generate_bits(len, start_time_of_day, model, &mut rng);
    Mask::new(bits, seed, Provenance::Empirical)
}

/// Hides glucose where the mask is 0. The masked positions must be observed
/// so the hidden values remain available as ground truth.
pub fn apply_mask(episode: &Episode, mask: &Mask) -> Result<Episode> {
    if mask.len() != episode.len() {
        return Err(Error::Dimension {
            expected: episode.len(),
            actual: mask.len(),
        });
    }
    let glucose = episode
        .glucose()
        .iter()
        .zip(mask.bits())
        .enumerate()
        .map(|(index, (g, &keep))| match (keep, g) {
            (true, g) => Ok(*g),
            (false, Some(_)) => Ok(None),
            (false, None) => Err(Error::MissingValue { index }),
        })
        .collect::<Result<Vec<_>>>()?;
    episode.with_glucose(glucose)
}

/// Run-length encoded mask as stored in mask files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub patient_id: String,
    pub episode_id: usize,
    #[serde(rename = "T")]
    pub len: usize,
    pub seed: u64,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
    pub gaps: Vec<Run>,
}

fn default_provenance() -> Provenance {
    Provenance::Empirical
}

impl MaskRecord {
    pub fn from_mask(key: &EpisodeKey, mask: &Mask) -> Self {
        MaskRecord {
            patient_id: key.patient_id.clone(),
            episode_id: key.episode_id,
            len: mask.len(),
            seed: mask.seed(),
            provenance: mask.provenance(),
            gaps: mask.runs(),
        }
    }

    pub fn key(&self) -> EpisodeKey {
        EpisodeKey {
            patient_id: self.patient_id.clone(),
            episode_id: self.episode_id,
        }
    }

    pub fn to_mask(&self) -> Result<Mask> {
        Mask::from_runs(self.len, &self.gaps, self.seed, self.provenance)
    }
}

/// Writes records sorted by `(patient_id, episode_id)`.
pub fn write_mask_file(path: &Path, records: &[MaskRecord]) -> Result<()> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(MaskRecord::key);
    let text = serde_json::to_string_pretty(&sorted)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_mask_file(path: &Path) -> Result<Vec<MaskRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::missingness::{MixtureParams, RegimeModel};
    use proptest::prelude::*;

    fn params() -> MixtureParams {
        MixtureParams {
            a: 0.02,
            k: 0.05,
            b: 0.01,
            mu: 120.0,
            sigma: 15.0,
            gamma: 0.0005,
        }
    }

    fn model_with(onset: f64, pi_short: f64, mixture: DurationMixture) -> MissingnessModel {
        let r = RegimeModel { pi_short, mixture };
        MissingnessModel::new([onset; 24], r, r).unwrap()
    }

    fn fitted_like() -> MissingnessModel {
        model_with(0.1, 0.5, DurationMixture::from_params(params()).unwrap())
    }

    #[test]
    fn uniform_branch_mean() {
        let mix = DurationMixture::with_weights(params(), 0.0, 0.0, 1.0).unwrap();
        let model = model_with(0.0, 0.0, mix);
        let mut rng = rng_from_seed(1);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = sample_duration(&model, Regime::Day, &mut rng);
            assert!(d % 5.0 == 0.0 && (10.0..=240.0).contains(&d));
            sum += d;
        }
        assert!((sum / n as f64 - 125.0).abs() < 2.0);
    }

    #[test]
    fn point_mass_gaussian() {
        let p = MixtureParams {
            mu: 120.0,
            sigma: 1e-9,
            ..params()
        };
        let mix = DurationMixture::with_weights(p, 0.0, 1.0, 0.0).unwrap();
        let model = model_with(0.0, 0.0, mix);
        let mut rng = rng_from_seed(2);
        for _ in 0..1000 {
            assert_eq!(sample_duration(&model, Regime::Night, &mut rng), 120.0);
        }
    }

    #[test]
    fn truncated_exponential_mean_matches_quadrature() {
        let k = 0.05;
        // mean of the rounded variable: Σ d·P(round(X) = d) with P from the
        // density integrated over each rounding cell
        let n_steps = 460_000;
        let h = 230.0 / n_steps as f64;
        let (mut z, mut m) = (0.0, 0.0);
        for i in 0..n_steps {
            let x = 10.0 + (i as f64 + 0.5) * h;
            let w = (-k * (x - 10.0)).exp() * h;
            z += w;
            m += round_to_grid(x) * w;
        }
        let expected = m / z;

        let mix = DurationMixture::with_weights(MixtureParams { k, ..params() }, 1.0, 0.0, 0.0).unwrap();
        let model = model_with(0.0, 0.0, mix);
        let mut rng = rng_from_seed(3);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_duration(&model, Regime::Day, &mut rng)).sum::<f64>() / n as f64;
        assert!(((mean - expected) / expected).abs() < 0.02, "{mean} vs {expected}");
    }

    #[test]
    fn zero_onset_gives_all_ones() {
        let model = model_with(0.0, 0.5, DurationMixture::from_params(params()).unwrap());
        let mask = generate_mask(1000, 0, &model, 9);
        assert_eq!(mask.n_masked(), 0);
        assert!(mask.runs().is_empty());
    }

    #[test]
    fn forced_short_gaps_once_per_hour() {
        let model = model_with(1.0, 1.0, DurationMixture::from_params(params()).unwrap());
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let (bits, log) = generate_bits(288, 0, &model, &mut rng);
            assert_eq!(log.len(), 24);
            for (h, g) in log.iter().enumerate() {
                assert_eq!(g.hour, h);
                assert_eq!(g.start_index / 12, h);
                assert_eq!(g.kind, GapKind::Short);
            }
            assert_eq!(bits.iter().filter(|b| !**b).count(), 24);
        }
    }

    #[test]
    fn start_time_of_day_shifts_hours() {
        // only hour 5 can start gaps
        let mut onset = [0.0; 24];
        onset[5] = 1.0;
        let r = RegimeModel {
            pi_short: 1.0,
            mixture: DurationMixture::from_params(params()).unwrap(),
        };
        let model = MissingnessModel::new(onset, r, r).unwrap();
        let mut rng = rng_from_seed(4);
        // starting at 04:00, hour 5 covers indices 12..24
        let (_, log) = generate_bits(48, 240, &model, &mut rng);
        assert_eq!(log.len(), 1);
        assert!((12..24).contains(&log[0].start_index));
        assert_eq!(log[0].regime, Regime::Night);
    }

    #[test]
    fn apply_mask_examples() {
        let ep = Episode::from_values("p", 0, 0, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let ones = Mask::all_retained(6, 0, Provenance::Empirical);
        assert_eq!(apply_mask(&ep, &ones).unwrap(), ep);
        let zeros = Mask::new(vec![false; 6], 0, Provenance::Empirical);
        assert_eq!(apply_mask(&ep, &zeros).unwrap().n_observed(), 0);
        let mut m = Mask::all_retained(6, 0, Provenance::Empirical);
        m.hide(3, 5);
        let masked = apply_mask(&ep, &m).unwrap();
        assert_eq!(masked.observed(), vec![true, true, true, false, false, true]);
        assert!(matches!(
            apply_mask(&ep, &Mask::all_retained(5, 0, Provenance::Empirical)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn mask_record_round_trip() {
        let mut m = Mask::all_retained(20, 42, Provenance::ProtocolB);
        m.hide(2, 5);
        m.hide(10, 11);
        let key = EpisodeKey {
            patient_id: "p".into(),
            episode_id: 3,
        };
        let rec = MaskRecord::from_mask(&key, &m);
        assert_eq!(rec.gaps.len(), 2);
        let text = serde_json::to_string(&rec).unwrap();
        assert!(text.contains("\"T\":20") && text.contains("\"protocol_B\""));
        let back: MaskRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_mask().unwrap(), m);
    }

    proptest! {
        #[test]
        fn generation_is_deterministic_and_well_formed(seed in any::<u64>(), len in 1usize..2000, tod in 0i64..288) {
            let model = fitted_like();
            let start = tod * 5;
            let a = generate_mask(len, start, &model, seed);
            let b = generate_mask(len, start, &model, seed);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), len);

            let mut rng = rng_from_seed(seed);
            let (bits, log) = generate_bits(len, start, &model, &mut rng);
            prop_assert_eq!(&bits, a.bits());
            for g in log {
                let d = g.duration_minutes;
                prop_assert!(d == 5.0 || ((10.0..=240.0).contains(&d) && d % 5.0 == 0.0));
                prop_assert_eq!(g.length_samples, (d / 5.0).ceil() as usize);
                prop_assert!(bits[g.start_index..(g.start_index + g.length_samples).min(len)].iter().all(|b| !b));
            }
        }

        #[test]
        fn runs_reconstruct_bits(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
            let m = Mask::new(bits.clone(), 0, Provenance::Empirical);
            let back = Mask::from_runs(bits.len(), &m.runs(), 0, Provenance::Empirical).unwrap();
            prop_assert_eq!(back.bits(), &bits[..]);
        }
    }
}
