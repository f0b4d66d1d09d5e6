use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use regime_bench::data::{export_cgm_csv, ingest_csv};
use regime_bench::imputers::{impute, load_external, save_imputations, Imputation};
use regime_bench::mask::{generate_mask, read_mask_file, write_mask_file, MaskRecord};
use regime_bench::metrics::{
    aggregate, calibration_from_pairs, evaluate, render_table, write_calibration_csv, CalibrationSummary, GroupKey,
    MetricsReport, TableRow,
};
use regime_bench::missingness::{estimate_onsets, FitConfig, MissingnessModel};
use regime_bench::protocols::{
    allocate_stationary_mask, build_hypo_masks, build_peak_masks, find_stable_windows, read_tcr_csv, read_windows,
    write_tcr_csv, write_windows, PeakConfig, RegimeWindow, StabilityCriteria,
};
use regime_bench::rng::derive_seed;
use regime_bench::router::{adaptive_impute, RoutingReport};
use regime_bench::synth::{generate, inject_missingness, reference_model, save_labels, SynthConfig};
use regime_bench::{Episode, EpisodeKey, Mask};

use crate::{Cli, Command, InputArgs, ProtocolArg};

pub const THREADS_ENV: &str = "REGIME_BENCH_THREADS";

/// Caps the worker pool when `REGIME_BENCH_THREADS` is set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            days,
            noise_std,
            seed,
            gaps,
            model,
            out,
        } => synth(days, noise_std, seed, gaps, model.as_deref(), &out),
        Command::Fit { input, min_gaps, out } => fit(&input, min_gaps, &out),
        Command::Mask { input, model, seed, out } => mask(&input, &model, seed, &out),
        Command::Stress {
            input,
            protocol,
            ratio,
            n_peaks,
            hypo_window_min,
            tcr,
            seed,
            out,
        } => stress(&input, protocol, ratio, n_peaks, hypo_window_min, tcr.as_deref(), seed, &out),
        Command::Impute {
            input,
            masks,
            method,
            external,
            out,
        } => impute_cmd(&input, &masks, &method, external.as_deref(), &out),
        Command::Evaluate {
            input,
            imputed,
            masks,
            windows,
            condition,
            out,
        } => evaluate_cmd(&input, &imputed, &masks, windows.as_deref(), &condition, &out),
        Command::Calibrate {
            input,
            imputed,
            masks,
            windows,
            below,
            above,
            out,
        } => calibrate(&input, &imputed, &masks, windows.as_deref(), below, above, &out),
        Command::Route {
            input,
            masks,
            external,
            external_method,
            threshold,
            context_min,
            out,
        } => route(&input, &masks, external.as_deref(), external_method.as_deref(), threshold, context_min, &out),
        Command::Report { input, out } => report(&input, &out),
    }
}

fn load_episodes(input: &InputArgs) -> Result<Vec<Episode>> {
    let eps = ingest_csv(&input.input, input.partition_gap)
        .with_context(|| format!("reading {}", input.input.display()))?;
    if eps.is_empty() {
        bail!("{} holds no glucose observations", input.input.display());
    }
    Ok(eps)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Episodes paired with their masks, in mask-file order.
fn masked_episodes(episodes: Vec<Episode>, masks_path: &Path) -> Result<Vec<(Episode, Mask)>> {
    let records = read_mask_file(masks_path).with_context(|| format!("reading {}", masks_path.display()))?;
    let mut by_key: BTreeMap<EpisodeKey, Episode> = episodes.into_iter().map(|e| (e.key(), e)).collect();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let key = rec.key();
        let ep = by_key
            .remove(&key)
            .ok_or_else(|| anyhow!("mask for unknown episode {key}"))?;
        let mask = rec.to_mask().with_context(|| format!("mask for {key}"))?;
        if mask.len() != ep.len() {
            bail!("mask for {key} has length {}, episode has {}", mask.len(), ep.len());
        }
        out.push((ep, mask));
    }
    out.sort_by(|a, b| a.0.key().cmp(&b.0.key()));
    Ok(out)
}

fn synth(days: usize, noise_std: f64, seed: u64, gaps: bool, model: Option<&Path>, out: &Path) -> Result<()> {
    let config = SynthConfig {
        days,
        noise_std,
        seed,
        ..SynthConfig::default()
    };
    let fixture = generate(&config)?;
    create_dir(out)?;
    export_cgm_csv(&out.join("truth.csv"), std::slice::from_ref(&fixture.episode))?;
    write_tcr_csv(&out.join("tcr.csv"), &fixture.tcr)?;
    save_labels(&out.join("labels.csv"), fixture.episode.episode_id(), &fixture.labels)?;
    if gaps {
        let model = match model {
            Some(path) => MissingnessModel::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => reference_model(),
        };
        let gapped = inject_missingness(&fixture.episode, &model, seed)?;
        export_cgm_csv(&out.join("gapped.csv"), &[gapped])?;
    }
    Ok(())
}

fn fit(input: &InputArgs, min_gaps: usize, out: &Path) -> Result<()> {
    let episodes = load_episodes(input)?;
    let est = estimate_onsets(&episodes)?;
    eprintln!(
        "{} valid days, {} gaps; onset probabilities by hour: {:?}",
        est.valid_days.len(),
        est.gaps.len(),
        est.onset_prob
    );
    let config = FitConfig {
        min_gaps,
        ..FitConfig::default()
    };
    let model = regime_bench::missingness::estimate_model(&episodes, &config).context("fitting gap durations")?;
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn mask(input: &InputArgs, model_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let episodes = load_episodes(input)?;
    let model = MissingnessModel::load(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let records: Vec<MaskRecord> = episodes
        .par_iter()
        .map(|ep| {
            let sub = derive_seed(seed, "mask", ep.patient_id(), ep.episode_id());
            let mask = generate_mask(ep.len(), ep.start_time_of_day(), &model, sub);
            MaskRecord::from_mask(&ep.key(), &mask)
        })
        .collect();
    write_mask_file(out, &records)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn stress(
    input: &InputArgs,
    protocol: ProtocolArg,
    ratio: f64,
    n_peaks: usize,
    hypo_window_min: i64,
    tcr: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let episodes = load_episodes(input)?;
    let tcr = match (protocol, tcr) {
        (ProtocolArg::C, None) => {
            use clap::CommandFactory;
            Cli::command()
                .error(clap::error::ErrorKind::MissingRequiredArgument, "protocol C requires --tcr")
                .exit()
        }
        (ProtocolArg::C, Some(path)) => read_tcr_csv(path).with_context(|| format!("reading {}", path.display()))?,
        _ => Vec::new(),
    };
    let criteria = StabilityCriteria::default();
    let results: Vec<Result<Option<(Mask, Vec<RegimeWindow>)>>> = episodes
        .par_iter()
        .map(|ep| {
            let key = ep.key();
            let built = match protocol {
                ProtocolArg::A => {
                    let sub = derive_seed(seed, "stress-A", ep.patient_id(), ep.episode_id());
                    let windows = find_stable_windows(ep, &criteria);
                    Some(allocate_stationary_mask(ep, &windows, ratio, sub))
                }
                ProtocolArg::B => {
                    let sub = derive_seed(seed, "stress-B", ep.patient_id(), ep.episode_id());
                    Some(build_peak_masks(ep, &PeakConfig::new(n_peaks), sub))
                }
                ProtocolArg::C => {
                    let intervals: Vec<_> = tcr.iter().filter(|r| r_key(r) == key).map(|r| r.interval()).collect();
                    (!intervals.is_empty()).then(|| build_hypo_masks(ep, &intervals, hypo_window_min, 70.0))
                }
            };
            match built {
                None => Ok(None),
                Some(r) => {
                    let (mask, windows) = r.with_context(|| format!("protocol {protocol:?} on episode {key}"))?;
                    Ok((!windows.is_empty()).then_some((mask, windows)))
                }
            }
        })
        .collect();

    let mut records = Vec::new();
    let mut windows = Vec::new();
    for (ep, r) in episodes.iter().zip(results) {
        if let Some((mask, ws)) = r? {
            records.push(MaskRecord::from_mask(&ep.key(), &mask));
            windows.extend(ws);
        }
    }
    if records.is_empty() {
        bail!("protocol {protocol:?} produced no evaluation windows");
    }
    create_dir(out)?;
    write_mask_file(&out.join("masks.json"), &records)?;
    write_windows(&out.join("windows.json"), &windows)?;
    Ok(())
}

fn r_key(r: &regime_bench::protocols::TcrRecord) -> EpisodeKey {
    EpisodeKey {
        patient_id: r.patient_id.clone(),
        episode_id: r.episode_id,
    }
}

fn impute_cmd(
    input: &InputArgs,
    masks: &Path,
    methods: &[regime_bench::Method],
    external: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let pairs = masked_episodes(load_episodes(input)?, masks)?;
    let imputations: Vec<Imputation> = match external {
        Some(path) => {
            let (eps, ms): (Vec<Episode>, Vec<Mask>) = pairs.into_iter().unzip();
            load_external(path, &eps, &ms).with_context(|| format!("validating {}", path.display()))?
        }
        None => {
            let per_method: Result<Vec<Vec<Imputation>>> = methods
                .iter()
                .map(|&m| {
                    pairs
                        .par_iter()
                        .map(|(ep, mask)| impute(m, ep, mask).with_context(|| format!("{m} on episode {}", ep.key())))
                        .collect()
                })
                .collect();
            per_method?.into_iter().flatten().collect()
        }
    };
    save_imputations(out, &imputations)?;
    Ok(())
}

/// Imputations from several files, grouped by method name.
fn load_imputation_files(
    files: &[PathBuf],
    pairs: &[(Episode, Mask)],
) -> Result<BTreeMap<String, Vec<Imputation>>> {
    let eps: Vec<Episode> = pairs.iter().map(|(e, _)| e.clone()).collect();
    let ms: Vec<Mask> = pairs.iter().map(|(_, m)| m.clone()).collect();
    let mut by_method: BTreeMap<String, Vec<Imputation>> = BTreeMap::new();
    for path in files {
        for imp in load_external(path, &eps, &ms).with_context(|| format!("reading {}", path.display()))? {
            by_method.entry(imp.method.clone()).or_default().push(imp);
        }
    }
    for (method, imps) in &by_method {
        if imps.len() != pairs.len() {
            bail!("method {method} appears in more than one imputation file");
        }
    }
    Ok(by_method)
}

fn load_windows(path: Option<&Path>) -> Result<Option<BTreeMap<EpisodeKey, Vec<RegimeWindow>>>> {
    let Some(path) = path else { return Ok(None) };
    let mut map: BTreeMap<EpisodeKey, Vec<RegimeWindow>> = BTreeMap::new();
    for w in read_windows(path).with_context(|| format!("reading {}", path.display()))? {
        map.entry(w.key()).or_default().push(w);
    }
    Ok(Some(map))
}

/// Mask bits with masked samples outside the windows treated as retained, so
/// they are not scored.
fn scored_bits(key: &EpisodeKey, mask: &Mask, windows: Option<&BTreeMap<EpisodeKey, Vec<RegimeWindow>>>) -> Vec<bool> {
    let bits = mask.bits().to_vec();
    let Some(windows) = windows else { return bits };
    let ws = windows.get(key).map(Vec::as_slice).unwrap_or(&[]);
    bits.iter()
        .enumerate()
        .map(|(t, &keep)| keep || !ws.iter().any(|w| w.contains(t)))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub model: String,
    pub protocol: String,
    pub condition: String,
    pub patient_id: String,
    pub episode_id: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub table: Vec<TableRow>,
    pub episodes: Vec<EpisodeScore>,
}

impl EvaluationReport {
    fn from_scores(mut episodes: Vec<EpisodeScore>) -> Self {
        episodes.sort_by(|a, b| {
            (&a.protocol, &a.condition, &a.model, &a.patient_id, a.episode_id)
                .cmp(&(&b.protocol, &b.condition, &b.model, &b.patient_id, b.episode_id))
        });
        let keyed: Vec<(GroupKey, MetricsReport)> = episodes
            .iter()
            .map(|s| {
                (
                    GroupKey {
                        model: s.model.clone(),
                        protocol: s.protocol.clone(),
                        condition: s.condition.clone(),
                    },
                    s.metrics,
                )
            })
            .collect();
        EvaluationReport {
            table: aggregate(&keyed),
            episodes,
        }
    }

    fn save(&self, out: &Path) -> Result<()> {
        create_dir(out)?;
        write_json(&out.join("report.json"), self)?;
        fs::write(out.join("table.txt"), render_table(&self.table))?;
        Ok(())
    }
}

fn evaluate_cmd(
    input: &InputArgs,
    imputed: &[PathBuf],
    masks: &Path,
    windows: Option<&Path>,
    condition: &str,
    out: &Path,
) -> Result<()> {
    let pairs = masked_episodes(load_episodes(input)?, masks)?;
    let by_method = load_imputation_files(imputed, &pairs)?;
    let windows = load_windows(windows)?;
    let truth: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(ep, _)| {
            ep.complete_values()
                .with_context(|| format!("episode {} needs complete ground truth", ep.key()))
        })
        .collect::<Result<_>>()?;

    let mut scores = Vec::new();
    let mut skipped = 0;
    for (method, imps) in &by_method {
        let rows: Vec<Result<Option<EpisodeScore>>> = pairs
            .par_iter()
            .zip(imps)
            .zip(&truth)
            .map(|(((ep, mask), imp), y)| {
                let key = ep.key();
                let bits = scored_bits(&key, mask, windows.as_ref());
                if bits.iter().all(|&b| b) {
                    return Ok(None);
                }
                let metrics = evaluate(y, &imp.values, &bits).with_context(|| format!("{method} on {key}"))?;
                Ok(Some(EpisodeScore {
                    model: method.clone(),
                    protocol: mask.provenance().label().to_string(),
                    condition: condition.to_string(),
                    patient_id: key.patient_id,
                    episode_id: key.episode_id,
                    metrics,
                }))
            })
            .collect();
        for r in rows {
            match r? {
                Some(s) => scores.push(s),
                None => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} episode scores with nothing masked");
    }
    let report = EvaluationReport::from_scores(scores);
    report.save(out)?;
    print!("{}", render_table(&report.table));
    Ok(())
}

fn calibrate(
    input: &InputArgs,
    imputed: &[PathBuf],
    masks: &Path,
    windows: Option<&Path>,
    below: Option<f64>,
    above: Option<f64>,
    out: &Path,
) -> Result<()> {
    let pairs = masked_episodes(load_episodes(input)?, masks)?;
    let by_method = load_imputation_files(imputed, &pairs)?;
    let windows = load_windows(windows)?;
    let mut summaries: BTreeMap<String, CalibrationSummary> = BTreeMap::new();
    for (method, imps) in &by_method {
        let mut selected = Vec::new();
        for ((ep, mask), imp) in pairs.iter().zip(imps) {
            let y = ep.complete_values()?;
            let bits = scored_bits(&ep.key(), mask, windows.as_ref());
            selected.extend(
                (0..y.len())
                    .filter(|&t| !bits[t] && below.is_none_or(|b| y[t] < b) && above.is_none_or(|a| y[t] > a))
                    .map(|t| (y[t], imp.values[t])),
            );
        }
        let summary = calibration_from_pairs(selected).with_context(|| format!("calibrating {method}"))?;
        summaries.insert(method.clone(), summary);
    }
    create_dir(out)?;
    write_json(&out.join("calibration.json"), &summaries)?;
    for (method, summary) in &summaries {
        let path = out.join(format!("calibration_{method}.csv"));
        let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        write_calibration_csv(file, summary)?;
        println!("{method}: delta {:+.2} mg/dL over {} samples", summary.delta, summary.n_points);
    }
    Ok(())
}

fn route(
    input: &InputArgs,
    masks: &Path,
    external: Option<&Path>,
    external_method: Option<&str>,
    threshold: f64,
    context_min: i64,
    out: &Path,
) -> Result<()> {
    let pairs = masked_episodes(load_episodes(input)?, masks)?;
    let external: Option<Vec<Imputation>> = match external {
        None => None,
        Some(path) => {
            let by_method = load_imputation_files(&[path.to_path_buf()], &pairs)?;
            let name = match external_method {
                Some(m) => m.to_string(),
                None if by_method.len() == 1 => by_method.keys().next().unwrap().clone(),
                None => bail!("{} holds several methods; pick one with --external-method", path.display()),
            };
            Some(
                by_method
                    .get(&name)
                    .cloned()
                    .ok_or_else(|| anyhow!("method {name} not found in {}", path.display()))?,
            )
        }
    };
    let criteria = StabilityCriteria {
        gradient_threshold: threshold,
        ..StabilityCriteria::default()
    };
    let results: Vec<Result<_>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (ep, mask))| {
            let ext = external.as_ref().map(|v| &v[i]);
            adaptive_impute(ep, mask, ext, &criteria, context_min).with_context(|| format!("routing episode {}", ep.key()))
        })
        .collect();
    let mut imputations = Vec::new();
    let mut decisions = Vec::new();
    for r in results {
        let (imp, ds) = r?;
        imputations.push(imp);
        decisions.extend(ds);
    }
    let report = RoutingReport::new(decisions);
    create_dir(out)?;
    save_imputations(&out.join("routed.csv"), &imputations)?;
    report.save(&out.join("routing.json"))?;
    println!(
        "{} gaps: {:.1}% stationary, {:.1}% transient",
        report.summary.n_gaps,
        100.0 * report.summary.stationary_fraction,
        100.0 * report.summary.transient_fraction
    );
    Ok(())
}

fn report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut scores = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: EvaluationReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        scores.extend(r.episodes);
    }
    let merged = EvaluationReport::from_scores(scores);
    merged.save(out)?;
    print!("{}", render_table(&merged.table));
    Ok(())
}
