//! Classical baselines and the file boundary to external models.
//!
//! A sample is "known" to an imputer when the mask retains it and the episode
//! observed it. Every other index is filled. Known indices are echoed
//! unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{interpolate, Episode, EpisodeKey};
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Tolerance for external models echoing retained values.
pub const ECHO_TOLERANCE: f64 = 1e-6;

pub const IMPUTATION_HEADER: [&str; 5] = ["patient_id", "episode_id", "t", "value", "method"];

#[derive(Clone, Debug, PartialEq)]
pub struct Imputation {
    pub episode: EpisodeKey,
    pub method: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mean,
    Median,
    Locf,
    Lerp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mean, Method::Median, Method::Locf, Method::Lerp];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mean => "Mean",
            Method::Median => "Median",
            Method::Locf => "LOCF",
            Method::Lerp => "Lerp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Method::Mean),
            "median" => Ok(Method::Median),
            "locf" => Ok(Method::Locf),
            "lerp" => Ok(Method::Lerp),
            other => Err(Error::Config(format!("unknown imputation method {other:?}"))),
        }
    }
}

/// Values visible to an imputer.
pub fn known_values(episode: &Episode, mask: &Mask) -> Result<Vec<Option<f64>>> {
    if mask.len() != episode.len() {
        return Err(Error::Dimension {
            expected: episode.len(),
            actual: mask.len(),
        });
    }
    Ok(episode
        .glucose()
        .iter()
        .zip(mask.bits())
        .map(|(g, &keep)| if keep { *g } else { None })
        .collect())
}

fn fill_constant(known: &[Option<f64>], value: f64) -> Vec<f64> {
    known.iter().map(|g| g.unwrap_or(value)).collect()
}

fn present(known: &[Option<f64>]) -> Result<Vec<f64>> {
    let values: Vec<f64> = known.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(Error::NoObservations);
    }
    Ok(values)
}

pub fn mean_fill(known: &[Option<f64>]) -> Result<Vec<f64>> {
    let values = present(known)?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(fill_constant(known, mean))
}

pub fn median_fill(known: &[Option<f64>]) -> Result<Vec<f64>> {
    let mut values = present(known)?;
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    Ok(fill_constant(known, median))
}

/// Last observation carried forward; a leading gap takes the next observation.
pub fn locf_fill(known: &[Option<f64>]) -> Result<Vec<f64>> {
    let first = present(known)?[0];
    let mut last = first;
    Ok(known
        .iter()
        .map(|g| {
            if let Some(v) = g {
                last = *v;
            }
            last
        })
        .collect())
}

/// Linear interpolation between bracketing observations; edges take the
/// nearest observation.
pub fn lerp_fill(known: &[Option<f64>]) -> Result<Vec<f64>> {
    present(known)?;
    let anchors: Vec<usize> = (0..known.len()).filter(|&t| known[t].is_some()).collect();
    let mut out = vec![0.0; known.len()];
    let first = anchors[0];
    let last = *anchors.last().unwrap();
    out[..=first].fill(known[first].unwrap());
    out[last..].fill(known[last].unwrap());
    for pair in anchors.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        let (lv, rv) = (known[l].unwrap(), known[r].unwrap());
        out[l] = lv;
        for t in l + 1..r {
            out[t] = interpolate(lv, rv, t - l, r - l);
        }
    }
    Ok(out)
}

pub fn impute(method: Method, episode: &Episode, mask: &Mask) -> Result<Imputation> {
    let known = known_values(episode, mask)?;
    let values = match method {
        Method::Mean => mean_fill(&known)?,
        Method::Median => median_fill(&known)?,
        Method::Locf => locf_fill(&known)?,
        Method::Lerp => lerp_fill(&known)?,
    };
    Ok(Imputation {
        episode: episode.key(),
        method: method.name().to_string(),
        values,
    })
}

pub fn impute_mean(episode: &Episode, mask: &Mask) -> Result<Imputation> {
    impute(Method::Mean, episode, mask)
}

pub fn impute_median(episode: &Episode, mask: &Mask) -> Result<Imputation> {
    impute(Method::Median, episode, mask)
}

pub fn impute_locf(episode: &Episode, mask: &Mask) -> Result<Imputation> {
    impute(Method::Locf, episode, mask)
}

pub fn impute_lerp(episode: &Episode, mask: &Mask) -> Result<Imputation> {
    impute(Method::Lerp, episode, mask)
}

#[derive(Debug, Serialize, Deserialize)]
struct ImputationRow {
    patient_id: String,
    episode_id: usize,
    t: usize,
    value: f64,
    method: String,
}

/// Writes imputations in the external-imputation CSV layout.
pub fn write_imputations<W: Write>(writer: W, imputations: &[Imputation]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for imp in imputations {
        for (t, &value) in imp.values.iter().enumerate() {
            out.serialize(ImputationRow {
                patient_id: imp.episode.patient_id.clone(),
                episode_id: imp.episode.episode_id,
                t,
                value,
                method: imp.method.clone(),
            })?;
        }
    }
    out.flush().map_err(|e| Error::io("<imputations>", e))?;
    Ok(())
}

pub fn save_imputations(path: &Path, imputations: &[Imputation]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_imputations(file, imputations)
}

/// Parses external imputations and checks them against the ground truth.
///
/// `episodes` and `masks` are aligned. Every method in the file must cover
/// every episode at every index, and must reproduce each retained observation
/// within [`ECHO_TOLERANCE`].
pub fn read_external<R: Read>(reader: R, episodes: &[Episode], masks: &[Mask]) -> Result<Vec<Imputation>> {
    if episodes.len() != masks.len() {
        return Err(Error::Dimension {
            expected: episodes.len(),
            actual: masks.len(),
        });
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != IMPUTATION_HEADER {
        return Err(Error::parse(1, format!("expected header {}", IMPUTATION_HEADER.join(","))));
    }
    let index: BTreeMap<EpisodeKey, usize> = episodes.iter().enumerate().map(|(i, e)| (e.key(), i)).collect();
    let mut grouped: BTreeMap<(String, EpisodeKey), BTreeMap<usize, f64>> = BTreeMap::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let line = i + 2;
        let row: ImputationRow = row.map_err(|e| Error::parse(line, e.to_string()))?;
        let key = EpisodeKey {
            patient_id: row.patient_id,
            episode_id: row.episode_id,
        };
        let Some(&ep) = index.get(&key) else {
            return Err(Error::parse(line, format!("unknown episode {key}")));
        };
        if row.t >= episodes[ep].len() {
            return Err(Error::parse(line, format!("t={} beyond episode {key}", row.t)));
        }
        if !row.value.is_finite() {
            return Err(Error::parse(line, "non-finite imputed value"));
        }
        grouped.entry((row.method, key)).or_default().insert(row.t, row.value);
    }

    let methods: BTreeSet<String> = grouped.keys().map(|(m, _)| m.clone()).collect();
    if methods.is_empty() {
        return Err(Error::Coverage(episodes.iter().map(|e| e.key().to_string()).collect()));
    }
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for method in &methods {
        for (ep, mask) in episodes.iter().zip(masks) {
            let key = ep.key();
            let series = grouped.remove(&(method.clone(), key.clone()));
            let Some(series) = series.filter(|s| s.len() == ep.len()) else {
                missing.push(format!("{key} [{method}]"));
                continue;
            };
            let values: Vec<f64> = series.into_values().collect();
            let known = known_values(ep, mask)?;
            for (t, (k, &v)) in known.iter().zip(&values).enumerate() {
                if let Some(truth) = k {
                    if (truth - v).abs() > ECHO_TOLERANCE {
                        return Err(Error::Integrity {
                            episode: key.to_string(),
                            t,
                            expected: *truth,
                            found: v,
                        });
                    }
                }
            }
            out.push(Imputation {
                episode: key,
                method: method.clone(),
                values,
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(missing));
    }
    Ok(out)
}

pub fn load_external(path: &Path, episodes: &[Episode], masks: &[Mask]) -> Result<Vec<Imputation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_external(file, episodes, masks)
}
