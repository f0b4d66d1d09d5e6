//! Empirical model of CGM data loss.
//!
//! Gaps are collected from valid monitoring days (at least half of the 288
//! daily samples observed) and summarised by three pieces: per-hour onset
//! probabilities, the probability that a gap is a single 5-minute dropout,
//! and a duration density for longer gaps,
//!
//! ```text
//! f(δ) = A·exp(−k(δ−10)) + B·exp(−(δ−μ)²/2σ²) + γ,   10 ≤ δ ≤ 240
//! ```
//!
//! fitted by bounded Levenberg–Marquardt on the duration histogram. The last
//! two pieces are estimated separately for night (onset hour in `[0, 6)`) and
//! day (`[6, 24)`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{DayKey, Episode, SAMPLES_PER_DAY, STEP_MINUTES};
use crate::error::{Error, Result};

/// Shortest sustained gap, minutes.
pub const DELTA_MIN: f64 = 10.0;
/// Longest modelled gap, minutes.
pub const DELTA_MAX: f64 = 240.0;
/// Duration of a single-sample dropout, minutes.
pub const SHORT_GAP_MINUTES: u32 = 5;
pub const HOURS: usize = 24;
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Day,
    Night,
}

impl Regime {
    pub fn of_hour(hour: usize) -> Regime {
        if hour < 6 {
            Regime::Night
        } else {
            Regime::Day
        }
    }
}

/// One maximal run of missing samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapEvent {
    /// Day on which the gap starts.
    pub day: DayKey,
    pub episode_id: usize,
    pub start_index: usize,
    pub start_hour: usize,
    /// Minutes, a positive multiple of 5.
    pub duration: u32,
}

impl GapEvent {
    pub fn regime(&self) -> Regime {
        Regime::of_hour(self.start_hour)
    }
}

/// Days whose observed fraction is at least one half.
pub fn valid_days(episodes: &[Episode]) -> BTreeSet<DayKey> {
    let mut counts: BTreeMap<DayKey, usize> = BTreeMap::new();
    for ep in episodes {
        for t in (0..ep.len()).filter(|&t| ep.is_observed(t)) {
            *counts.entry(ep.day_key(t)).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|(_, n)| 2 * n >= SAMPLES_PER_DAY)
        .map(|(day, _)| day)
        .collect()
}

/// Maximal missing runs that start on a valid day.
pub fn extract_gaps(episodes: &[Episode], valid: &BTreeSet<DayKey>) -> Vec<GapEvent> {
    let mut gaps = Vec::new();
    for ep in episodes {
        let mut t = 0;
        while t < ep.len() {
            if ep.is_observed(t) {
                t += 1;
                continue;
            }
            let start = t;
            while t < ep.len() && !ep.is_observed(t) {
                t += 1;
            }
            let day = ep.day_key(start);
            if valid.contains(&day) {
                gaps.push(GapEvent {
                    day,
                    episode_id: ep.episode_id(),
                    start_index: start,
                    start_hour: ep.hour_of(start),
                    duration: ((t - start) as i64 * STEP_MINUTES) as u32,
                });
            }
        }
    }
    gaps
}

/// Fraction of valid days on which at least one gap starts in each hour.
pub fn onset_probabilities(gaps: &[GapEvent], valid: &BTreeSet<DayKey>) -> Result<[f64; HOURS]> {
    if valid.is_empty() {
        return Err(Error::Estimation("no valid days".into()));
    }
    let mut days_per_hour: [BTreeSet<&DayKey>; HOURS] = std::array::from_fn(|_| BTreeSet::new());
    for gap in gaps.iter().filter(|g| valid.contains(&g.day)) {
        days_per_hour[gap.start_hour].insert(&gap.day);
    }
    let n = valid.len() as f64;
    Ok(std::array::from_fn(|h| days_per_hour[h].len() as f64 / n))
}

/// Fraction of the regime's gaps that are single 5-minute dropouts.
pub fn short_gap_probability(gaps: &[GapEvent], regime: Regime) -> Result<f64> {
    let (short, total) = gaps
        .iter()
        .filter(|g| g.regime() == regime)
        .fold((0usize, 0usize), |(s, n), g| {
            (s + usize::from(g.duration == SHORT_GAP_MINUTES), n + 1)
        });
    if total == 0 {
        return Err(Error::Estimation(format!("no {regime:?} gaps")));
    }
    Ok(short as f64 / total as f64)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Parameters `{A, k, B, μ, σ, γ}` of the sustained-gap duration density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    #[serde(rename = "A")]
    pub a: f64,
    pub k: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
}

impl MixtureParams {
    pub fn exp_term(&self, delta: f64) -> f64 {
        self.a * (-self.k * (delta - DELTA_MIN)).exp()
    }

    pub fn gauss_term(&self, delta: f64) -> f64 {
        let z = (delta - self.mu) / self.sigma;
        self.b * (-0.5 * z * z).exp()
    }

    pub fn density(&self, delta: f64) -> f64 {
        let offset = if (DELTA_MIN..=DELTA_MAX).contains(&delta) {
            self.gamma
        } else {
            0.0
        };
        self.exp_term(delta) + self.gauss_term(delta) + offset
    }

    /// Integrals of the three terms over `[10, 240]`.
    pub fn component_masses(&self) -> [f64; 3] {
        let span = DELTA_MAX - DELTA_MIN;
        let exp_mass = self.a * -(-self.k * span).exp_m1() / self.k;
        let lo = (DELTA_MIN - self.mu) / self.sigma;
        let hi = (DELTA_MAX - self.mu) / self.sigma;
        let gauss_mass = self.b
            * self.sigma
            * (2.0 * std::f64::consts::PI).sqrt()
            * (std_normal_cdf(hi) - std_normal_cdf(lo));
        [exp_mass, gauss_mass, self.gamma * span]
    }

    fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.a, self.k, self.b, self.mu, self.sigma, self.gamma])
    }

    fn from_slice(p: &[f64]) -> Self {
        MixtureParams {
            a: p[0],
            k: p[1],
            b: p[2],
            mu: p[3],
            sigma: p[4],
            gamma: p[5],
        }
    }

    /// Partial derivatives of the density with respect to each parameter.
    fn gradient(&self, delta: f64) -> [f64; 6] {
        let e = (-self.k * (delta - DELTA_MIN)).exp();
        let d = delta - self.mu;
        let g = (-0.5 * d * d / (self.sigma * self.sigma)).exp();
        let s2 = self.sigma * self.sigma;
        [
            e,
            -self.a * (delta - DELTA_MIN) * e,
            g,
            self.b * g * d / s2,
            self.b * g * d * d / (s2 * self.sigma),
            1.0,
        ]
    }
}

/// Fitted density plus the sampling weights of its three components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DurationMixture {
    pub params: MixtureParams,
    pub w_exp: f64,
    pub w_gauss: f64,
    pub w_unif: f64,
}

impl DurationMixture {
    /// Weights proportional to each component's mass on `[10, 240]`.
    pub fn from_params(params: MixtureParams) -> Result<Self> {
        let masses = params.component_masses();
        let total: f64 = masses.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Fit(format!("mixture has no mass on [10, 240]: {params:?}")));
        }
        let w_exp = masses[0] / total;
        let w_gauss = masses[1] / total;
        let w_unif = masses[2] / total;
        DurationMixture::with_weights(params, w_exp, w_gauss, w_unif)
    }

    pub fn with_weights(params: MixtureParams, w_exp: f64, w_gauss: f64, w_unif: f64) -> Result<Self> {
        let weights = [w_exp, w_gauss, w_unif];
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config(format!("mixture weights out of range: {weights:?}")));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights do not sum to 1: {weights:?}")));
        }
        if !(params.k > 0.0 && params.sigma > 0.0) {
            return Err(Error::Config("mixture requires k > 0 and sigma > 0".into()));
        }
        Ok(DurationMixture {
            params,
            w_exp,
            w_gauss,
            w_unif,
        })
    }

    /// CDF of the truncated exponential component on `[10, 240]`.
    pub fn exp_cdf(&self, x: f64) -> f64 {
        let x = x.clamp(DELTA_MIN, DELTA_MAX);
        let k = self.params.k;
        (-k * (x - DELTA_MIN)).exp_m1() / (-k * (DELTA_MAX - DELTA_MIN)).exp_m1()
    }

    /// CDF of the truncated Gaussian component on `[10, 240]`.
    pub fn gauss_cdf(&self, x: f64) -> f64 {
        let x = x.clamp(DELTA_MIN, DELTA_MAX);
        let (mu, sigma) = (self.params.mu, self.params.sigma);
        let lo = std_normal_cdf((DELTA_MIN - mu) / sigma);
        let hi = std_normal_cdf((DELTA_MAX - mu) / sigma);
        if hi - lo <= 0.0 {
            // all mass collapsed onto one bound
            return if mu <= DELTA_MIN || x >= mu { 1.0 } else { 0.0 };
        }
        ((std_normal_cdf((x - mu) / sigma) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn unif_cdf(&self, x: f64) -> f64 {
        (x.clamp(DELTA_MIN, DELTA_MAX) - DELTA_MIN) / (DELTA_MAX - DELTA_MIN)
    }

    /// CDF of the continuous (unrounded) sustained-gap duration.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < DELTA_MIN {
            return 0.0;
        }
        self.w_exp * self.exp_cdf(x) + self.w_gauss * self.gauss_cdf(x) + self.w_unif * self.unif_cdf(x)
    }
}

/// Per-duration histogram on the grid durations 10, 15, ..., 240.
#[derive(Clone, Debug, PartialEq)]
pub struct DurationHistogram {
    pub centers: Vec<f64>,
    pub values: Vec<f64>,
    pub n_gaps: usize,
}

impl DurationHistogram {
    pub fn bin_centers() -> Vec<f64> {
        let n = ((DELTA_MAX - DELTA_MIN) / STEP_MINUTES as f64) as usize + 1;
        (0..n).map(|i| DELTA_MIN + (i as i64 * STEP_MINUTES) as f64).collect()
    }

    /// Unit-mass histogram of the durations in `[10, 240]`; others are ignored.
    pub fn from_durations(durations: impl IntoIterator<Item = u32>) -> Self {
        let centers = Self::bin_centers();
        let mut counts = vec![0usize; centers.len()];
        for d in durations {
            let d = d as f64;
            if (DELTA_MIN..=DELTA_MAX).contains(&d) {
                let bin = ((d - DELTA_MIN) / STEP_MINUTES as f64).round() as usize;
                counts[bin] += 1;
            }
        }
        let n: usize = counts.iter().sum();
        let values = counts
            .iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect();
        DurationHistogram {
            centers,
            values,
            n_gaps: n,
        }
    }

    /// Density values evaluated at the bin centers.
    pub fn from_density(params: &MixtureParams) -> Self {
        let centers = Self::bin_centers();
        let values = centers.iter().map(|&d| params.density(d)).collect();
        DurationHistogram {
            n_gaps: 0,
            centers,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    /// Minimum number of regime gaps with duration in `[10, 240]`.
    pub min_gaps: usize,
    pub max_iterations: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            min_gaps: 30,
            max_iterations: 2000,
            ftol: 1e-15,
            xtol: 1e-12,
            gtol: 1e-18,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub residual_norm: f64,
}

const LOWER: [f64; 6] = [0.0, 1e-6, 0.0, DELTA_MIN, 1e-3, 0.0];
const UPPER: [f64; 6] = [f64::INFINITY, 1.0, f64::INFINITY, DELTA_MAX, 120.0, f64::INFINITY];

fn project(p: &mut DVector<f64>) {
    for i in 0..6 {
        p[i] = p[i].clamp(LOWER[i], UPPER[i]);
    }
}

fn initial_guess(hist: &DurationHistogram) -> MixtureParams {
    let max = hist.values.iter().copied().fold(0.0, f64::max);
    let min = hist.values.iter().copied().fold(f64::INFINITY, f64::min);
    let near_peak = hist
        .centers
        .iter()
        .zip(&hist.values)
        .filter(|(c, _)| (110.0..=130.0).contains(*c))
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    MixtureParams {
        a: max,
        k: 0.02,
        b: near_peak,
        mu: 120.0,
        sigma: 20.0,
        gamma: if min.is_finite() { min } else { 0.0 },
    }
}

fn residuals(params: &MixtureParams, hist: &DurationHistogram) -> DVector<f64> {
    DVector::from_iterator(
        hist.centers.len(),
        hist.centers
            .iter()
            .zip(&hist.values)
            .map(|(&d, &y)| params.density(d) - y),
    )
}

fn finish(p: &DVector<f64>, cost: f64, iterations: usize) -> (MixtureParams, FitReport) {
    (
        MixtureParams::from_slice(p.as_slice()),
        FitReport {
            iterations,
            residual_norm: (2.0 * cost).sqrt(),
        },
    )
}

/// Bounded Levenberg–Marquardt fit of the duration density to a histogram.
pub fn fit_histogram(hist: &DurationHistogram, config: &FitConfig) -> Result<(MixtureParams, FitReport)> {
    let m = hist.centers.len();
    let mut p = initial_guess(hist).to_vector();
    project(&mut p);
    let mut params = MixtureParams::from_slice(p.as_slice());
    let mut r = residuals(&params, hist);
    let mut cost = 0.5 * r.norm_squared();
    let scale = 0.5 * hist.values.iter().map(|v| v * v).sum::<f64>();
    let mut lambda = 1e-3;

    for iteration in 0..config.max_iterations {
        let mut jac = DMatrix::zeros(m, 6);
        for (i, &d) in hist.centers.iter().enumerate() {
            for (j, g) in params.gradient(d).into_iter().enumerate() {
                jac[(i, j)] = g;
            }
        }
        let grad = jac.transpose() * &r;
        let hess = jac.transpose() * &jac;

        // gradient components pushing against an active bound do not count
        let projected_grad = (0..6)
            .map(|j| {
                let at_lower = p[j] <= LOWER[j] && grad[j] > 0.0;
                let at_upper = p[j] >= UPPER[j] && grad[j] < 0.0;
                if at_lower || at_upper {
                    0.0
                } else {
                    grad[j].abs()
                }
            })
            .fold(0.0, f64::max);
        if projected_grad <= config.gtol || cost <= 1e-30 * scale {
            return Ok(finish(&p, cost, iteration));
        }

        let diag_floor = hess.diagonal().max() * 1e-12;
        loop {
            let mut damped = hess.clone();
            for j in 0..6 {
                damped[(j, j)] += lambda * hess[(j, j)].max(diag_floor).max(f64::MIN_POSITIVE);
            }
            let step = damped.lu().solve(&(-&grad));
            let accepted = step.and_then(|step| {
                let mut candidate = &p + &step;
                project(&mut candidate);
                let cand_params = MixtureParams::from_slice(candidate.as_slice());
                let cand_r = residuals(&cand_params, hist);
                let cand_cost = 0.5 * cand_r.norm_squared();
                (cand_cost.is_finite() && cand_cost < cost)
                    .then_some((candidate, cand_params, cand_r, cand_cost))
            });
            match accepted {
                Some((candidate, cand_params, cand_r, cand_cost)) => {
                    let reduction = cost - cand_cost;
                    let step_norm = (&candidate - &p).norm();
                    let small_step = step_norm <= config.xtol * (p.norm() + config.xtol);
                    p = candidate;
                    params = cand_params;
                    r = cand_r;
                    let converged = reduction <= config.ftol * cost || small_step;
                    cost = cand_cost;
                    lambda = (lambda / 10.0).max(1e-15);
                    if converged {
                        return Ok(finish(&p, cost, iteration + 1));
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        // no descent direction left: a (bounded) stationary point
                        return Ok(finish(&p, cost, iteration + 1));
                    }
                }
            }
        }
    }
    Err(Error::Convergence {
        iterations: config.max_iterations,
        residual_norm: (2.0 * cost).sqrt(),
    })
}

/// Fits the sustained-gap duration mixture for one regime.
pub fn fit_mixture(gaps: &[GapEvent], regime: Regime, config: &FitConfig) -> Result<DurationMixture> {
    let hist = DurationHistogram::from_durations(
        gaps.iter()
            .filter(|g| g.regime() == regime && g.duration > SHORT_GAP_MINUTES)
            .map(|g| g.duration),
    );
    if hist.n_gaps < config.min_gaps {
        return Err(Error::Fit(format!(
            "{regime:?}: {} sustained gaps, need at least {}",
            hist.n_gaps, config.min_gaps
        )));
    }
    let (params, _) = fit_histogram(&hist, config)?;
    DurationMixture::from_params(params)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeModel {
    pub pi_short: f64,
    pub mixture: DurationMixture,
}

/// Fitted stochastic gap process.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingnessModel {
    pub onset_prob: [f64; HOURS],
    pub day: RegimeModel,
    pub night: RegimeModel,
}

impl MissingnessModel {
    pub fn new(onset_prob: [f64; HOURS], day: RegimeModel, night: RegimeModel) -> Result<Self> {
        let probs = onset_prob.iter().chain([&day.pi_short, &night.pi_short]);
        for p in probs {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(MissingnessModel {
            onset_prob,
            day,
            night,
        })
    }

    pub fn regime(&self, regime: Regime) -> &RegimeModel {
        match regime {
            Regime::Day => &self.day,
            Regime::Night => &self.night,
        }
    }

    pub fn delta_max(&self) -> f64 {
        DELTA_MAX
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct RegimeDocument {
    pi_short: f64,
    #[serde(flatten)]
    params: MixtureParams,
    w_exp: f64,
    w_gauss: f64,
    w_unif: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    schema_version: u32,
    delta_max: f64,
    onset_prob: Vec<f64>,
    day: RegimeDocument,
    night: RegimeDocument,
}

impl From<&RegimeModel> for RegimeDocument {
    fn from(r: &RegimeModel) -> Self {
        RegimeDocument {
            pi_short: r.pi_short,
            params: r.mixture.params,
            w_exp: r.mixture.w_exp,
            w_gauss: r.mixture.w_gauss,
            w_unif: r.mixture.w_unif,
        }
    }
}

impl TryFrom<RegimeDocument> for RegimeModel {
    type Error = Error;
    fn try_from(d: RegimeDocument) -> Result<Self> {
        Ok(RegimeModel {
            pi_short: d.pi_short,
            mixture: DurationMixture::with_weights(d.params, d.w_exp, d.w_gauss, d.w_unif)?,
        })
    }
}

impl From<&MissingnessModel> for ModelDocument {
    fn from(m: &MissingnessModel) -> Self {
        ModelDocument {
            schema_version: MODEL_SCHEMA_VERSION,
            delta_max: DELTA_MAX,
            onset_prob: m.onset_prob.to_vec(),
            day: (&m.day).into(),
            night: (&m.night).into(),
        }
    }
}

impl TryFrom<ModelDocument> for MissingnessModel {
    type Error = Error;
    fn try_from(d: ModelDocument) -> Result<Self> {
        if d.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema version {}", d.schema_version)));
        }
        if d.delta_max != DELTA_MAX {
            return Err(Error::Config(format!("delta_max must be {DELTA_MAX}")));
        }
        let onset: [f64; HOURS] = d
            .onset_prob
            .try_into()
            .map_err(|v: Vec<f64>| Error::Config(format!("expected 24 onset probabilities, got {}", v.len())))?;
        MissingnessModel::new(onset, d.day.try_into()?, d.night.try_into()?)
    }
}

/// Intermediate products of model estimation, kept for reporting.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub valid_days: BTreeSet<DayKey>,
    pub gaps: Vec<GapEvent>,
    pub onset_prob: [f64; HOURS],
}

/// Valid days, gaps and onset probabilities.
pub fn estimate_onsets(episodes: &[Episode]) -> Result<Estimate> {
    let valid = valid_days(episodes);
    let gaps = extract_gaps(episodes, &valid);
    let onset_prob = onset_probabilities(&gaps, &valid)?;
    Ok(Estimate {
        valid_days: valid,
        gaps,
        onset_prob,
    })
}

fn regime_model(gaps: &[GapEvent], regime: Regime, config: &FitConfig) -> Result<RegimeModel> {
    Ok(RegimeModel {
        pi_short: short_gap_probability(gaps, regime)?,
        mixture: fit_mixture(gaps, regime, config)?,
    })
}

/// Estimates the full missingness model from gapped episodes.
pub fn estimate_model(episodes: &[Episode], config: &FitConfig) -> Result<MissingnessModel> {
    let est = estimate_onsets(episodes)?;
    MissingnessModel::new(
        est.onset_prob,
        regime_model(&est.gaps, Regime::Day, config)?,
        regime_model(&est.gaps, Regime::Night, config)?,
    )
}

pub fn load_model(path: &Path) -> Result<MissingnessModel> {
    MissingnessModel::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Exog;

    fn episode(patient: &str, start_minute: i64, glucose: Vec<Option<f64>>) -> Episode {
        let n = glucose.len();
        Episode::new(patient, 0, start_minute, glucose, vec![Exog::default(); n]).unwrap()
    }

    fn day_with_missing(day: i64, missing: &[usize]) -> Episode {
        let mut g = vec![Some(100.0); SAMPLES_PER_DAY];
        for &i in missing {
            g[i] = None;
        }
        episode("p", day * 1440, g)
    }

    #[test]
    fn valid_day_threshold_is_inclusive() {
        let half: Vec<usize> = (0..144).collect();
        let ep = day_with_missing(0, &half);
        assert_eq!(ep.n_observed(), 144);
        assert_eq!(valid_days(&[ep]).len(), 1);
        let more: Vec<usize> = (0..145).collect();
        assert!(valid_days(&[day_with_missing(0, &more)]).is_empty());
        assert_eq!(valid_days(&[day_with_missing(3, &[])]).len(), 1);
        assert!(valid_days(&[]).is_empty());
    }

    #[test]
    fn gap_extraction_examples() {
        let ep = day_with_missing(0, &[10, 11, 12]);
        let valid = valid_days(std::slice::from_ref(&ep));
        let gaps = extract_gaps(std::slice::from_ref(&ep), &valid);
        assert_eq!(gaps.len(), 1);
        assert_eq!(gaps[0].duration, 15);
        assert_eq!(gaps[0].start_index, 10);
        assert_eq!(gaps[0].start_hour, 0);

        let ep = day_with_missing(0, &[]);
        assert!(extract_gaps(std::slice::from_ref(&ep), &valid_days(std::slice::from_ref(&ep))).is_empty());

        let ep = day_with_missing(0, &[40, 41, 43]);
        let gaps = extract_gaps(std::slice::from_ref(&ep), &valid_days(std::slice::from_ref(&ep)));
        assert_eq!(gaps.iter().map(|g| g.duration).collect::<Vec<_>>(), vec![10, 5]);
        assert_eq!(gaps[1].start_hour, 3);
    }

    #[test]
    fn gaps_on_invalid_days_are_dropped() {
        let missing: Vec<usize> = (0..200).collect();
        let ep = day_with_missing(0, &missing);
        let valid = valid_days(std::slice::from_ref(&ep));
        assert!(extract_gaps(&[ep], &valid).is_empty());
    }

    #[test]
    fn onset_counts_days_not_gaps() {
        // 10 valid days; gaps at hour 3 on two days, twice on one of them
        let mut eps = Vec::new();
        for d in 0..10 {
            let missing: Vec<usize> = match d {
                0 => vec![36, 40],
                1 => vec![38],
                _ => vec![],
            };
            eps.push(day_with_missing(d, &missing));
        }
        let valid = valid_days(&eps);
        let gaps = extract_gaps(&eps, &valid);
        assert_eq!(gaps.len(), 3);
        let p = onset_probabilities(&gaps, &valid).unwrap();
        assert_eq!(p[3], 0.2);
        assert_eq!(p.iter().filter(|&&x| x > 0.0).count(), 1);

        // brute-force per-day scan: for each day and hour, does any missing run start there
        let mut oracle = [0.0; 24];
        for ep in &eps {
            for h in 0..24 {
                let starts = (h * 12..(h + 1) * 12)
                    .any(|t| !ep.is_observed(t) && (t == 0 || ep.is_observed(t - 1)));
                if starts {
                    oracle[h] += 1.0 / 10.0;
                }
            }
        }
        assert_eq!(p, oracle);
    }

    #[test]
    fn onset_errors_and_zeros() {
        assert!(onset_probabilities(&[], &BTreeSet::new()).is_err());
        let ep = day_with_missing(0, &[]);
        let valid = valid_days(std::slice::from_ref(&ep));
        assert_eq!(onset_probabilities(&[], &valid).unwrap(), [0.0; 24]);
    }

    fn gaps_with(durations: &[u32], hour: usize) -> Vec<GapEvent> {
        durations
            .iter()
            .map(|&duration| GapEvent {
                day: DayKey {
                    patient_id: "p".into(),
                    day: 0,
                },
                episode_id: 0,
                start_index: hour * 12,
                start_hour: hour,
                duration,
            })
            .collect()
    }

    #[test]
    fn short_gap_examples() {
        assert_eq!(short_gap_probability(&gaps_with(&[5, 5, 10, 20], 12), Regime::Day).unwrap(), 0.5);
        assert_eq!(short_gap_probability(&gaps_with(&[5, 5], 2), Regime::Night).unwrap(), 1.0);
        assert_eq!(short_gap_probability(&gaps_with(&[10, 120], 8), Regime::Day).unwrap(), 0.0);
        assert!(short_gap_probability(&gaps_with(&[10, 120], 8), Regime::Night).is_err());
    }

    const THETA0: MixtureParams = MixtureParams {
        a: 0.02,
        k: 0.05,
        b: 0.01,
        mu: 120.0,
        sigma: 15.0,
        gamma: 0.0005,
    };

    #[test]
    fn recovers_known_parameters() {
        let hist = DurationHistogram::from_density(&THETA0);
        let (fit, _) = fit_histogram(&hist, &FitConfig::default()).unwrap();
        let pairs = [
            (fit.a, THETA0.a),
            (fit.k, THETA0.k),
            (fit.b, THETA0.b),
            (fit.mu, THETA0.mu),
            (fit.sigma, THETA0.sigma),
            (fit.gamma, THETA0.gamma),
        ];
        for (got, want) in pairs {
            assert!(((got - want) / want).abs() < 0.10, "{got} vs {want}");
        }
    }

    #[test]
    fn pure_exponential_has_negligible_gaussian_mass() {
        let theta = MixtureParams {
            b: 0.0,
            gamma: 0.0,
            ..THETA0
        };
        let hist = DurationHistogram::from_density(&theta);
        let (fit, _) = fit_histogram(&hist, &FitConfig::default()).unwrap();
        let masses = fit.component_masses();
        let total: f64 = masses.iter().sum();
        assert!(masses[1] / total < 0.05, "{fit:?}");
    }

    #[test]
    fn warm_up_spike_sets_mu() {
        let mut durations = Vec::new();
        for d in (10..=240).step_by(5) {
            let n = (200.0 * (-(d as f64 - 10.0) * 0.04).exp()) as usize + 1;
            durations.extend(std::iter::repeat_n(d, n));
        }
        durations.extend(std::iter::repeat_n(120, 60));
        durations.extend(std::iter::repeat_n(115, 25));
        durations.extend(std::iter::repeat_n(125, 25));
        let hist = DurationHistogram::from_durations(durations);
        let (fit, _) = fit_histogram(&hist, &FitConfig::default()).unwrap();
        assert!((110.0..=130.0).contains(&fit.mu), "{fit:?}");
    }

    #[test]
    fn fit_is_deterministic() {
        let hist = DurationHistogram::from_density(&THETA0);
        let a = fit_histogram(&hist, &FitConfig::default()).unwrap();
        let b = fit_histogram(&hist, &FitConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn insufficient_data_is_a_fit_error() {
        let gaps = gaps_with(&[10, 20, 30], 12);
        assert!(matches!(
            fit_mixture(&gaps, Regime::Day, &FitConfig::default()),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_convergence_error() {
        let hist = DurationHistogram::from_density(&THETA0);
        let config = FitConfig {
            max_iterations: 1,
            ftol: 0.0,
            xtol: 0.0,
            gtol: 0.0,
            ..FitConfig::default()
        };
        assert!(matches!(
            fit_histogram(&hist, &config),
            Err(Error::Convergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn weights_match_component_integrals() {
        let mix = DurationMixture::from_params(THETA0).unwrap();
        assert!((mix.w_exp + mix.w_gauss + mix.w_unif - 1.0).abs() < 1e-12);
        // midpoint-rule quadrature of each term on [10, 240]
        let n = 230_000;
        let h = 230.0 / n as f64;
        let (mut e, mut g) = (0.0, 0.0);
        for i in 0..n {
            let x = 10.0 + (i as f64 + 0.5) * h;
            e += THETA0.exp_term(x) * h;
            g += THETA0.gauss_term(x) * h;
        }
        let u = THETA0.gamma * 230.0;
        let total = e + g + u;
        assert!((mix.w_exp - e / total).abs() < 1e-8);
        assert!((mix.w_gauss - g / total).abs() < 1e-8);
        assert!(mix.cdf(240.0) > 1.0 - 1e-12 && mix.cdf(10.0) == 0.0);

        // a fit pinned at gamma = 0 must not produce a negative uniform weight
        let pinned = DurationMixture::from_params(MixtureParams { gamma: 0.0, ..THETA0 }).unwrap();
        assert_eq!(pinned.w_unif, 0.0);
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let mix = DurationMixture::from_params(THETA0).unwrap();
        let mut onset = [0.0; 24];
        for (h, p) in onset.iter_mut().enumerate() {
            *p = (h as f64 + 0.1) / 97.0;
        }
        let model = MissingnessModel::new(
            onset,
            RegimeModel {
                pi_short: 1.0 / 3.0,
                mixture: mix,
            },
            RegimeModel {
                pi_short: 0.7,
                mixture: mix,
            },
        )
        .unwrap();
        let text = model.to_json().unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("\"A\""));
        let back = MissingnessModel::from_json(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_bad_documents() {
        let mix = DurationMixture::from_params(THETA0).unwrap();
        let r = RegimeModel {
            pi_short: 0.5,
            mixture: mix,
        };
        let model = MissingnessModel::new([0.1; 24], r, r).unwrap();
        let text = model.to_json().unwrap();
        let bad = text.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
        assert!(MissingnessModel::from_json(&bad).is_err());
        assert!(MissingnessModel::new([1.5; 24], r, r).is_err());
    }
}
