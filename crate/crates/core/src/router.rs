//! Regime-conditional imputation: stationary gaps go to linear
//! interpolation, transient gaps to an external model.
//!
//! A gap is judged only from the retained samples within a context window on
//! either side. The detector is
//! conservative: anything it cannot vouch for is transient.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Episode, STEP_MINUTES};
use crate::error::{Error, Result};
use crate::imputers::{impute_lerp, known_values, Imputation};
use crate::mask::{Mask, Run};
use crate::protocols::StabilityCriteria;

pub const DEFAULT_CONTEXT_MINUTES: i64 = 30;
pub const ADAPTIVE_METHOD: &str = "Adaptive";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapLabel {
    Stationary,
    Transient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Share of context gradients below the threshold; absent when there
    /// were none.
    pub stable_fraction: Option<f64>,
    pub n_gradients: usize,
    pub left_boundary: Option<f64>,
    pub right_boundary: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub patient_id: String,
    pub episode_id: usize,
    pub gap: Run,
    pub label: GapLabel,
    pub evidence: Evidence,
}

/// Known samples `(index, value)` in `range`.
fn known_in(known: &[Option<f64>], range: std::ops::Range<usize>) -> Vec<(usize, f64)> {
    range.filter_map(|t| known[t].map(|g| (t, g))).collect()
}

/// Rate of change in mg/dL/min at each known sample, using the actual spacing
/// between neighbours: central differences inside, one-sided at the ends.
/// Matches the uniform-grid gradient when nothing is missing.
fn spaced_gradient(points: &[(usize, f64)]) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let slope = |a: (usize, f64), b: (usize, f64)| (b.1 - a.1) / ((b.0 - a.0) as i64 * STEP_MINUTES) as f64;
    (0..n)
        .map(|i| match i {
            0 => slope(points[0], points[1]),
            i if i == n - 1 => slope(points[i - 1], points[i]),
            i => slope(points[i - 1], points[i + 1]),
        })
        .collect()
}

pub fn classify_gap(
    episode: &Episode,
    mask: &Mask,
    gap: Run,
    criteria: &StabilityCriteria,
    context_minutes: i64,
) -> Result<RoutingDecision> {
    let known = known_values(episode, mask)?;
    let end = gap.end();
    if end > known.len() || gap.length_samples == 0 {
        return Err(Error::Routing {
            start: gap.start_index,
            len: gap.length_samples,
        });
    }
    let limit = (context_minutes / STEP_MINUTES).max(0) as usize;
    let left = known_in(&known, gap.start_index.saturating_sub(limit)..gap.start_index);
    let right = known_in(&known, end..(end + limit).min(known.len()));

    let mut grads = spaced_gradient(&left);
    grads.extend(spaced_gradient(&right));
    let left_boundary = left.last().map(|p| p.1);
    let right_boundary = right.first().map(|p| p.1);
    let stable_fraction = (!grads.is_empty()).then(|| {
        grads.iter().filter(|g| g.abs() < criteria.gradient_threshold).count() as f64 / grads.len() as f64
    });
    let boundaries_ok = (left_boundary.is_some() || right_boundary.is_some())
        && [left_boundary, right_boundary].iter().flatten().all(|&g| criteria.in_band(g));
    let stationary = boundaries_ok && criteria.gradients_stable(&grads);

    Ok(RoutingDecision {
        patient_id: episode.patient_id().to_string(),
        episode_id: episode.episode_id(),
        gap,
        label: if stationary { GapLabel::Stationary } else { GapLabel::Transient },
        evidence: Evidence {
            stable_fraction,
            n_gradients: grads.len(),
            left_boundary,
            right_boundary,
        },
    })
}

/// Lerp everywhere, then transient gaps overwritten from `external`.
pub fn adaptive_impute(
    episode: &Episode,
    mask: &Mask,
    external: Option<&Imputation>,
    criteria: &StabilityCriteria,
    context_minutes: i64,
) -> Result<(Imputation, Vec<RoutingDecision>)> {
    let mut out = impute_lerp(episode, mask)?;
    out.method = ADAPTIVE_METHOD.to_string();
    if let Some(ext) = external {
        if ext.values.len() != episode.len() {
            return Err(Error::Dimension {
                expected: episode.len(),
                actual: ext.values.len(),
            });
        }
    }
    let mut decisions = Vec::new();
    for run in mask.runs() {
        let decision = classify_gap(episode, mask, run, criteria, context_minutes)?;
        if decision.label == GapLabel::Transient {
            let Some(ext) = external else {
                return Err(Error::Routing {
                    start: run.start_index,
                    len: run.length_samples,
                });
            };
            out.values[run.start_index..run.end()].copy_from_slice(&ext.values[run.start_index..run.end()]);
        }
        decisions.push(decision);
    }
    Ok((out, decisions))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub n_gaps: usize,
    pub stationary_fraction: f64,
    pub transient_fraction: f64,
}

impl RoutingSummary {
    pub fn from_decisions(decisions: &[RoutingDecision]) -> Self {
        let n = decisions.len();
        let stationary = decisions.iter().filter(|d| d.label == GapLabel::Stationary).count();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        RoutingSummary {
            n_gaps: n,
            stationary_fraction: frac(stationary),
            transient_fraction: frac(n - stationary),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub summary: RoutingSummary,
    pub decisions: Vec<RoutingDecision>,
}

impl RoutingReport {
    pub fn new(mut decisions: Vec<RoutingDecision>) -> Self {
        decisions.sort_by(|a, b| {
            (&a.patient_id, a.episode_id, a.gap.start_index).cmp(&(&b.patient_id, b.episode_id, b.gap.start_index))
        });
        RoutingReport {
            summary: RoutingSummary::from_decisions(&decisions),
            decisions,
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(file))
    }
}
