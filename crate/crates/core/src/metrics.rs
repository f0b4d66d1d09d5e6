//! Scoring on masked indices: pointwise errors, DTW and distributional
//! calibration, plus the grouped summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::masked_runs;

pub const HIST_LOW: f64 = 20.0;
pub const HIST_HIGH: f64 = 500.0;
pub const HIST_BIN: f64 = 5.0;
pub const HIST_BINS: usize = 96;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pointwise {
    pub rmse: f64,
    pub bias: f64,
    pub emp_se: f64,
    pub mard: f64,
    pub n_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub bias: f64,
    pub emp_se: f64,
    pub mard: f64,
    pub dtw: f64,
    pub n_points: usize,
    pub n_gaps: usize,
}

fn check_lengths(truth: &[f64], imputed: &[f64], mask: &[bool]) -> Result<()> {
    for len in [imputed.len(), mask.len()] {
        if len != truth.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                actual: len,
            });
        }
    }
    Ok(())
}

/// RMSE, bias, EmpSE and MARD over the indices where `mask` is false.
pub fn pointwise_metrics(truth: &[f64], imputed: &[f64], mask: &[bool]) -> Result<Pointwise> {
    check_lengths(truth, imputed, mask)?;
    let mut n = 0usize;
    let (mut sum, mut sq, mut rel) = (0.0, 0.0, 0.0);
    for t in (0..truth.len()).filter(|&t| !mask[t]) {
        let (y, yh) = (truth[t], imputed[t]);
        if !(y > 0.0) {
            return Err(Error::MetricDomain(format!("truth {y} at masked index {t}")));
        }
        let r = yh - y;
        n += 1;
        sum += r;
        sq += r * r;
        rel += (r / y).abs();
    }
    if n == 0 {
        return Err(Error::Empty("no masked indices to score".into()));
    }
    let nf = n as f64;
    let bias = sum / nf;
    let mse = sq / nf;
    let rmse = mse.sqrt();
    let emp_se = (mse - bias * bias).max(0.0).sqrt();
    Ok(Pointwise {
        rmse,
        bias,
        emp_se,
        mard: 100.0 * rel / nf,
        n_points: n,
    })
}

/// Unconstrained DTW with absolute-difference cost.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw of an empty sequence".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
        prev[0] = f64::INFINITY;
    }
    Ok(prev[m])
}

/// DTW per masked run, summed over the episode.
pub fn segment_dtw(truth: &[f64], imputed: &[f64], mask: &[bool]) -> Result<f64> {
    check_lengths(truth, imputed, mask)?;
    let runs = masked_runs(mask);
    if runs.is_empty() {
        return Err(Error::Empty("no masked runs".into()));
    }
    runs.iter()
        .map(|r| dtw_distance(&truth[r.start_index..r.end()], &imputed[r.start_index..r.end()]))
        .sum()
}

pub fn evaluate(truth: &[f64], imputed: &[f64], mask: &[bool]) -> Result<MetricsReport> {
    let p = pointwise_metrics(truth, imputed, mask)?;
    let dtw = segment_dtw(truth, imputed, mask)?;
    Ok(MetricsReport {
        rmse: p.rmse,
        bias: p.bias,
        emp_se: p.emp_se,
        mard: p.mard,
        dtw,
        n_points: p.n_points,
        n_gaps: masked_runs(mask).len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub truth_mean: f64,
    pub truth_std: f64,
    pub imputed_mean: f64,
    pub imputed_std: f64,
    pub delta: f64,
    pub n_points: usize,
    pub truth_histogram: Vec<u64>,
    pub imputed_histogram: Vec<u64>,
}

/// Histogram bin for a glucose value. Out-of-range values land in the edge bins.
pub fn hist_bin(value: f64) -> usize {
    let idx = ((value - HIST_LOW) / HIST_BIN).floor();
    idx.clamp(0.0, (HIST_BINS - 1) as f64) as usize
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Conditional distribution of imputed values against truth on the masked
/// indices selected by `regime(t, truth[t])`.
pub fn calibration<F>(truth: &[f64], imputed: &[f64], mask: &[bool], regime: F) -> Result<CalibrationSummary>
where
    F: Fn(usize, f64) -> bool,
{
    check_lengths(truth, imputed, mask)?;
    let idx: Vec<usize> = (0..truth.len()).filter(|&t| !mask[t] && regime(t, truth[t])).collect();
    calibration_from_pairs(idx.iter().map(|&t| (truth[t], imputed[t])))
}

/// Calibration over already-selected `(truth, imputed)` pairs, used when
/// pooling several episodes.
pub fn calibration_from_pairs<I>(pairs: I) -> Result<CalibrationSummary>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (ys, yh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    if ys.is_empty() {
        return Err(Error::Empty("no masked samples in the regime".into()));
    }
    let (truth_mean, truth_std) = mean_std(&ys);
    let (imputed_mean, imputed_std) = mean_std(&yh);
    let mut truth_histogram = vec![0u64; HIST_BINS];
    let mut imputed_histogram = vec![0u64; HIST_BINS];
    for (&y, &h) in ys.iter().zip(&yh) {
        truth_histogram[hist_bin(y)] += 1;
        imputed_histogram[hist_bin(h)] += 1;
    }
    Ok(CalibrationSummary {
        truth_mean,
        truth_std,
        imputed_mean,
        imputed_std,
        delta: imputed_mean - truth_mean,
        n_points: ys.len(),
        truth_histogram,
        imputed_histogram,
    })
}

/// Histogram CSV: `bin_low,bin_high,truth,imputed`.
pub fn write_calibration_csv<W: Write>(writer: W, summary: &CalibrationSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["bin_low", "bin_high", "truth", "imputed"])?;
    for b in 0..HIST_BINS {
        let low = HIST_LOW + b as f64 * HIST_BIN;
        out.write_record([
            format!("{low}"),
            format!("{}", low + HIST_BIN),
            summary.truth_histogram[b].to_string(),
            summary.imputed_histogram[b].to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<calibration>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub model: String,
    pub protocol: String,
    pub condition: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rank {
    Best,
    Second,
    #[default]
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub protocol: String,
    pub condition: String,
    pub n_episodes: usize,
    pub rmse: f64,
    pub bias: f64,
    pub emp_se: f64,
    pub mard: f64,
    pub dtw: f64,
    /// Ranks for rmse, bias, emp_se, mard, dtw within the protocol and condition.
    pub ranks: [Rank; 5],
}

impl TableRow {
    fn scores(&self) -> [f64; 5] {
        [self.rmse, self.bias.abs(), self.emp_se, self.mard, self.dtw]
    }
}

pub const METRIC_NAMES: [&str; 5] = ["RMSE", "Bias", "EmpSE", "MARD", "DTW"];

/// Episode-unweighted means per group, with best and second-best flags per
/// metric among models sharing a protocol and condition. Bias ranks by
/// magnitude.
pub fn aggregate(reports: &[(GroupKey, MetricsReport)]) -> Vec<TableRow> {
    let mut groups: BTreeMap<&GroupKey, Vec<&MetricsReport>> = BTreeMap::new();
    for (key, report) in reports {
        groups.entry(key).or_default().push(report);
    }
    let mut rows: Vec<TableRow> = groups
        .into_iter()
        .map(|(key, rs)| {
            let n = rs.len() as f64;
            let mean = |f: fn(&MetricsReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            TableRow {
                model: key.model.clone(),
                protocol: key.protocol.clone(),
                condition: key.condition.clone(),
                n_episodes: rs.len(),
                rmse: mean(|r| r.rmse),
                bias: mean(|r| r.bias),
                emp_se: mean(|r| r.emp_se),
                mard: mean(|r| r.mard),
                dtw: mean(|r| r.dtw),
                ranks: [Rank::None; 5],
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.protocol, &a.condition, &a.model).cmp(&(&b.protocol, &b.condition, &b.model))
    });

    let mut start = 0;
    while start < rows.len() {
        let mut end = start + 1;
        while end < rows.len() && rows[end].protocol == rows[start].protocol && rows[end].condition == rows[start].condition {
            end += 1;
        }
        if end - start > 1 {
            for m in 0..5 {
                let mut vals: Vec<f64> = rows[start..end].iter().map(|r| r.scores()[m]).collect();
                vals.sort_by(f64::total_cmp);
                vals.dedup();
                for row in &mut rows[start..end] {
                    let s = row.scores()[m];
                    row.ranks[m] = if s == vals[0] {
                        Rank::Best
                    } else if vals.len() > 1 && s == vals[1] {
                        Rank::Second
                    } else {
                        Rank::None
                    };
                }
            }
        }
        start = end;
    }
    rows
}

/// Plain-text rendering; `*` marks the best value, `_` the second best.
pub fn render_table(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<10} {:<16} {:>4} {:>10} {:>10} {:>10} {:>10} {:>11}",
        "protocol", "condition", "model", "n", METRIC_NAMES[0], METRIC_NAMES[1], METRIC_NAMES[2], METRIC_NAMES[3], METRIC_NAMES[4]
    );
    for row in rows {
        let vals = [row.rmse, row.bias, row.emp_se, row.mard, row.dtw];
        let cells: Vec<String> = vals
            .iter()
            .zip(&row.ranks)
            .map(|(v, r)| {
                let flag = match r {
                    Rank::Best => "*",
                    Rank::Second => "_",
                    Rank::None => " ",
                };
                format!("{v:.2}{flag}")
            })
            .collect();
        let _ = writeln!(
            out,
            "{:<10} {:<10} {:<16} {:>4} {:>10} {:>10} {:>10} {:>10} {:>11}",
            row.protocol, row.condition, row.model, row.n_episodes, cells[0], cells[1], cells[2], cells[3], cells[4]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Exhaustive minimum over monotone alignment paths.
    fn brute_dtw(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let here = (a[i] - b[j]).abs();
            if i + 1 == a.len() && j + 1 == b.len() {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() {
                best = best.min(go(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(go(a, b, i, j + 1));
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            here + best
        }
        go(a, b, 0, 0)
    }

    #[test]
    fn pointwise_examples() {
        let p = pointwise_metrics(&[100.0, 50.0], &[100.0, 50.0], &[false, false]).unwrap();
        assert_eq!((p.rmse, p.bias, p.emp_se, p.mard), (0.0, 0.0, 0.0, 0.0));
        let p = pointwise_metrics(&[100.0], &[110.0], &[false]).unwrap();
        assert_relative_eq!(p.rmse, 10.0);
        assert_relative_eq!(p.bias, 10.0);
        assert_eq!(p.emp_se, 0.0);
        assert_relative_eq!(p.mard, 10.0);
        // retained index is ignored
        let p = pointwise_metrics(&[100.0, 1.0], &[110.0, 900.0], &[false, true]).unwrap();
        assert_eq!(p.n_points, 1);
        assert!(matches!(
            pointwise_metrics(&[0.0], &[1.0], &[false]),
            Err(Error::MetricDomain(_))
        ));
        assert!(pointwise_metrics(&[1.0], &[1.0], &[true]).is_err());
    }

    #[test]
    fn table_three_decomposition() {
        let (rmse, bias, emp_se) = (23.26f64, 14.08f64, 18.51f64);
        assert!(((rmse * rmse - bias * bias).sqrt() - emp_se).abs() < 0.01);
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw_distance(&[0.0], &[5.0]).unwrap(), 5.0);
        assert!(dtw_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn segment_dtw_examples() {
        let truth = [0.0, 40.0, 80.0, 40.0, 0.0];
        let chord = [0.0; 5];
        let mask = [false; 5];
        assert_eq!(segment_dtw(&truth, &chord, &mask).unwrap(), 160.0);
        assert_eq!(brute_dtw(&truth, &chord), 160.0);
        assert_eq!(segment_dtw(&truth, &truth, &mask).unwrap(), 0.0);

        // two runs costing 3 and 4
        let truth = [0.0, 3.0, 9.0, 0.0, 9.0];
        let imp = [0.0, 0.0, 9.0, 4.0, 9.0];
        let mask = [true, false, true, false, true];
        assert_eq!(segment_dtw(&truth, &imp, &mask).unwrap(), 7.0);
        assert!(segment_dtw(&truth, &imp, &[true; 5]).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_identity(res in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let truth: Vec<f64> = vec![120.0; res.len()];
            let imp: Vec<f64> = res.iter().map(|r| 120.0 + r).collect();
            let p = pointwise_metrics(&truth, &imp, &vec![false; res.len()]).unwrap();
            let lhs = p.rmse * p.rmse;
            let rhs = p.bias * p.bias + p.emp_se * p.emp_se;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1e-12));
        }

        #[test]
        fn dtw_matches_brute_force(
            a in proptest::collection::vec(-20i32..20, 1..=6),
            b in proptest::collection::vec(-20i32..20, 1..=6),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = dtw_distance(&a, &b).unwrap();
            prop_assert_eq!(d, brute_dtw(&a, &b));
            prop_assert_eq!(d, dtw_distance(&b, &a).unwrap());
            prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn mard_is_scale_invariant(
            ys in proptest::collection::vec(40.0f64..300.0, 1..20),
            err in proptest::collection::vec(-30.0f64..30.0, 20),
            c in 0.1f64..10.0,
        ) {
            let yh: Vec<f64> = ys.iter().zip(&err).map(|(y, e)| y + e).collect();
            let mask = vec![false; ys.len()];
            let base = pointwise_metrics(&ys, &yh, &mask).unwrap().mard;
            let ys2: Vec<f64> = ys.iter().map(|y| y * c).collect();
            let yh2: Vec<f64> = yh.iter().map(|y| y * c).collect();
            let scaled = pointwise_metrics(&ys2, &yh2, &mask).unwrap().mard;
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
        }
    }

    #[test]
    fn calibration_identity_and_chord() {
        let truth = [100.0, 130.0, 160.0, 190.0, 160.0, 130.0, 100.0];
        let c = calibration(&truth, &truth, &[false; 7], |_, _| true).unwrap();
        assert_eq!(c.delta, 0.0);
        assert_eq!(c.truth_histogram, c.imputed_histogram);
        assert_eq!(c.truth_histogram.iter().sum::<u64>(), 7);

        let chord = [100.0; 7];
        let mut mask = [false; 7];
        mask[0] = true;
        mask[6] = true;
        let c = calibration(&truth, &chord, &mask, |_, _| true).unwrap();
        assert!(c.delta < 0.0);
        assert_eq!(c.n_points, 5);
        assert!(calibration(&truth, &chord, &mask, |_, y| y < 70.0).is_err());
    }

    #[test]
    fn histogram_edges_clamp() {
        assert_eq!(hist_bin(5.0), 0);
        assert_eq!(hist_bin(20.0), 0);
        assert_eq!(hist_bin(24.99), 0);
        assert_eq!(hist_bin(25.0), 1);
        assert_eq!(hist_bin(499.0), 95);
        assert_eq!(hist_bin(900.0), 95);
    }

    fn report(rmse: f64, bias: f64) -> MetricsReport {
        MetricsReport {
            rmse,
            bias,
            emp_se: (rmse * rmse - bias * bias).sqrt(),
            mard: rmse,
            dtw: rmse,
            n_points: 1,
            n_gaps: 1,
        }
    }

    fn key(model: &str) -> GroupKey {
        GroupKey {
            model: model.into(),
            protocol: "A".into(),
            condition: "0.1".into(),
        }
    }

    #[test]
    fn aggregation() {
        assert!(aggregate(&[]).is_empty());
        let rows = aggregate(&[(key("Lerp"), report(2.0, 0.0))]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].rmse, 2.0);
        let rows = aggregate(&[(key("Lerp"), report(2.0, 1.0)), (key("Lerp"), report(4.0, 1.0))]);
        assert_eq!(rows[0].rmse, 3.0);
        assert_eq!(rows[0].n_episodes, 2);

        let rows = aggregate(&[
            (key("Mean"), report(9.0, -1.0)),
            (key("Lerp"), report(2.0, 1.5)),
            (key("LOCF"), report(5.0, -3.0)),
        ]);
        let by = |m: &str| rows.iter().find(|r| r.model == m).unwrap();
        assert_eq!(by("Lerp").ranks[0], Rank::Best);
        assert_eq!(by("LOCF").ranks[0], Rank::Second);
        assert_eq!(by("Mean").ranks[1], Rank::Best);
        assert_eq!(by("Lerp").ranks[1], Rank::Second);
        let text = render_table(&rows);
        assert!(text.contains("2.00*"));
        assert_eq!(text.lines().count(), 4);
    }
}
