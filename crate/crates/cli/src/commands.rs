use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::Context;
use cmbe_core::benchgen::{generate as generate_dataset, load_vocab, verify_dataset, GenConfig, Vocab};
use cmbe_core::bias::{feature_set_serde, parse_type_list};
use cmbe_core::calib::{
    calibrate as fit_profile, debias as debias_one, report_probabilities, CalibrationProfile, CoverageStats,
    SelectionConfig, SolverOptions,
};
use cmbe_core::eval::{
    compare_runs, evaluate, probe_polarity, probe_samples, EvalError, EvalReport, PolarityReport, Prediction, RunMeta,
};
use cmbe_core::oracle::{calibration_pool_groups, synthetic_pool, PoolGroup};
use cmbe_core::source::predict_all;
use cmbe_core::{BiasFeature, BiasType, Label, NliSample, ProbDist, ScoreVector};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{required, PoolKind, RunConfig};
use crate::exit::Coded;
use crate::files::{
    read_json, read_jsonl, read_meta, read_samples, stem, tagged, write_atomic, write_json, write_jsonl, RunInfo,
};
use crate::runtime;

const DEFAULT_CALIBRATION_PER_LABEL: usize = 60;
const DEFAULT_PROBE_PER_LABEL: usize = 1000;

pub fn generate(cfg: &RunConfig) -> anyhow::Result<()> {
    let g = &cfg.generate;
    let out = required(&g.out, "generate.out (--out)")?;
    let mut run = RunInfo::new("generate", cfg.hash(), g.seed);

    if let Some(kind) = g.oracle_pool {
        let (groups, per_label) = match kind {
            PoolKind::Calibration => {
                let per = g.per_label.unwrap_or(DEFAULT_CALIBRATION_PER_LABEL);
                (calibration_pool_groups(per), per)
            }
            PoolKind::Probe => {
                let per = g.per_label.unwrap_or(DEFAULT_PROBE_PER_LABEL);
                let groups = BiasFeature::ALL
                    .into_iter()
                    .map(|f| PoolGroup { features: [f].into(), per_label: per })
                    .collect();
                (groups, per)
            }
        };
        if per_label == 0 {
            return Err(Coded::validation("per_label must be positive").into());
        }
        let pool = synthetic_pool(&groups, g.seed);
        run.details = json!({ "oracle_pool": kind, "per_label": per_label, "groups": groups.len(), "samples": pool.len() });
        write_jsonl(out, &pool, &run)?;
        println!("wrote {} synthetic samples in {} feature groups to {}", pool.len(), groups.len(), out.display());
        return Ok(());
    }

    let mut gen = GenConfig::balanced(g.total, g.seed).map_err(|e| Coded::validation(e.to_string()))?;
    if let Some(a) = g.max_attempts {
        gen.max_attempts = a;
    }
    let vocab = match &g.vocab_dir {
        Some(dir) if !dir.is_dir() => {
            return Err(Coded::io(format!("vocabulary directory {} does not exist", dir.display())).into())
        }
        Some(dir) => load_vocab(dir).with_context(|| format!("loading vocabulary from {}", dir.display()))?,
        None => Vocab::builtin(),
    };
    let detectors = runtime::detectors(cfg, g.vocab_dir.is_some().then(|| vocab.lexicons.clone()))?;
    let dataset = generate_dataset(&gen, &vocab, &detectors).context("generating benchmark")?;
    let samples: Vec<NliSample> = dataset.samples().cloned().collect();
    let mut report = verify_dataset(&samples, &detectors);
    report.acceptance_rate = Some(dataset.stats.acceptance_rate());

    run.details = json!({ "stats": dataset.stats, "all_pass": report.all_pass() });
    write_jsonl(out, &dataset.records, &run)?;
    let verify_path = out.with_extension("verify.json");
    write_json(&verify_path, &report, &run)?;

    println!("wrote {} samples to {}", samples.len(), out.display());
    for (label, n) in &report.label_counts {
        println!("  {:<13} {n}", label.as_str());
    }
    for (feature, n) in &report.feature_pass {
        println!("  {feature:<22} {n}/{} detected", report.total);
    }
    println!("  acceptance rate {:.4}", dataset.stats.acceptance_rate());
    if !report.all_pass() {
        return Err(Coded::validation(format!(
            "verification failed: {} missing feature(s), {} duplicate(s), {} detector error(s); see {}",
            report.failure_count(),
            report.duplicates,
            report.detector_errors.len(),
            verify_path.display()
        ))
        .into());
    }
    Ok(())
}

fn parse_features(selector: &str) -> anyhow::Result<Vec<BiasFeature>> {
    if selector.trim() == "all" {
        return Ok(BiasFeature::ALL.to_vec());
    }
    let features: Vec<BiasFeature> = selector
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Coded::validation(format!("{e}"))))
        .collect::<Result<_, _>>()?;
    if features.is_empty() {
        return Err(Coded::validation("no feature given").into());
    }
    Ok(features)
}

pub fn probe(cfg: &RunConfig) -> anyhow::Result<()> {
    let p = &cfg.probe;
    let pool_path = required(&p.pool, "probe.pool (--pool)")?;
    let out_dir = required(&p.out_dir, "probe.out_dir (--out-dir)")?;
    let features = parse_features(p.feature.as_deref().unwrap_or("all"))?;
    let pool = read_samples(pool_path)?;
    let detectors = runtime::detectors(cfg, None)?;
    let mode = runtime::prompt_mode(cfg)?;

    let reports = runtime::with_source(cfg, |source, parallelism| {
        let mut reports: Vec<PolarityReport> = Vec::new();
        for f in &features {
            let samples = probe_samples(&pool, *f, &detectors).with_context(|| format!("selecting probe samples for {f}"))?;
            if samples.is_empty() {
                return Err(anyhow::Error::from(EvalError::Empty).context(format!("feature {f} in {}", pool_path.display())));
            }
            let mut report = probe_polarity(*f, &samples, source, &mode, parallelism).with_context(|| format!("probing {f}"))?;
            report.pool = Some(pool_path.display().to_string());
            reports.push(report);
        }
        Ok(reports)
    })?;

    println!("{:<22} {:>7} {:>7} {:>7}   {:>7} {:>7} {:>7}  {:<13} {:>6}", "feature", "E%", "N%", "C%", "gold E", "gold N", "gold C", "polarity", "n");
    for r in &reports {
        let mut run = RunInfo::new("probe", cfg.hash(), cfg.prompt.demo_seed);
        run.source_id = Some(r.source_id.clone());
        run.prompt_mode = Some(mode.id().into());
        run.dataset = Some(pool_path.clone());
        write_json(&out_dir.join(format!("{}.json", r.feature.id())), r, &run)?;
        println!(
            "{:<22} {:>7.2} {:>7.2} {:>7.2}   {:>7.2} {:>7.2} {:>7.2}  {:<13} {:>6}",
            r.feature.id(),
            r.predicted[0],
            r.predicted[1],
            r.predicted[2],
            r.dataset[0],
            r.dataset[1],
            r.dataset[2],
            r.polarity.map_or("none", |l| l.as_str()),
            r.sample_count
        );
    }
    Ok(())
}

/// All `k`-element subsets of `items`, in lexicographic order.
fn subsets<T: Copy>(items: &[T], k: usize) -> Vec<Vec<T>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut with: Vec<Vec<T>> = subsets(&items[1..], k - 1)
        .into_iter()
        .map(|mut rest| {
            rest.insert(0, items[0]);
            rest
        })
        .collect();
    with.extend(subsets(&items[1..], k));
    with
}

/// The known-type sets to calibrate, each with an optional output tag.
fn known_sets(cfg: &RunConfig) -> anyhow::Result<Vec<(Option<String>, BTreeSet<BiasType>)>> {
    let c = &cfg.calibrate;
    let known = parse_type_list(&c.known).map_err(|e| Coded::validation(e.to_string()))?;
    if known.is_empty() {
        return Err(Coded::validation("no known bias types given").into());
    }
    let Some(k) = c.random_known else {
        return Ok(vec![(None, known)]);
    };
    let all: Vec<BiasType> = known.into_iter().collect();
    if k == 0 || k > all.len() {
        return Err(Coded::validation(format!("cannot draw {k} of {} known types", all.len())).into());
    }
    let mut choices = subsets(&all, k);
    if c.draws == 0 || c.draws > choices.len() {
        return Err(Coded::validation(format!(
            "{} draw(s) requested but there are {} distinct {k}-type subsets",
            c.draws,
            choices.len()
        ))
        .into());
    }
    choices.shuffle(&mut ChaCha8Rng::seed_from_u64(c.seed));
    Ok(choices
        .into_iter()
        .take(c.draws)
        .enumerate()
        .map(|(i, s)| (Some(format!("draw{}", i + 1)), s.into_iter().collect()))
        .collect())
}

pub fn calibrate(cfg: &RunConfig) -> anyhow::Result<()> {
    let c = &cfg.calibrate;
    let pool_path = required(&c.pool, "calibrate.pool (--pool)")?;
    let out = required(&c.out, "calibrate.out (--out)")?;
    let sets = known_sets(cfg)?;
    let pool = read_samples(pool_path)?;
    let detectors = runtime::detectors(cfg, None)?;
    let mode = runtime::prompt_mode(cfg)?;
    let opts = SolverOptions {
        ridge: c.ridge,
        rank_tolerance: c.rank_tolerance,
        ..SolverOptions::default()
    };

    runtime::with_source(cfg, |source, parallelism| {
        for (tag, known) in &sets {
            let selection = SelectionConfig::new(known.clone(), c.n, c.m, c.seed);
            let (profile, _) = fit_profile(&pool, &selection, &detectors, source, &mode, &opts, parallelism)
                .with_context(|| format!("calibrating with known types {}", type_list(known)))?;
            let path = tag.as_deref().map_or_else(|| out.clone(), |t| tagged(out, t));
            let mut run = RunInfo::new("calibrate", cfg.hash(), c.seed);
            run.source_id = Some(source.source_id());
            run.prompt_mode = Some(mode.id().into());
            run.method = Some(format!("cmbe-{}", known.len()));
            run.dataset = Some(pool_path.clone());
            write_json(&path, &profile, &run)?;
            print_profile(&path, &profile);
        }
        Ok(())
    })
}

fn type_list(types: &BTreeSet<BiasType>) -> String {
    types.iter().map(|t| t.id()).collect::<Vec<_>>().join(",")
}

fn print_profile(path: &Path, p: &CalibrationProfile) {
    println!("profile {} (known: {})", path.display(), type_list(&p.known_types));
    for (t, l) in &p.lambdas {
        println!("  lambda {:<12} {l:>10.6}", t.id());
    }
    for (f, nie) in &p.feature_nies {
        let v = nie.nie.values();
        println!("  effect {:<22} {:>8.4} {:>8.4} {:>8.4}  (n={})", f.id(), v[0], v[1], v[2], nie.n_used);
    }
    let d = &p.diagnostics;
    println!(
        "  {} group(s), {} equation(s), rank {}/{}, residual {:.3e}, condition {}",
        d.group_count,
        d.equation_count,
        d.rank,
        d.unknowns,
        d.residual_norm,
        d.condition_number.map_or("inf".to_string(), |c| format!("{c:.3e}"))
    );
    if d.rank_deficient {
        warn!("{}: weight system is rank deficient; minimum-norm weights reported", path.display());
    }
}

/// One line of the debias output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
    pub raw: ProbDist,
    #[serde(with = "feature_set_serde")]
    pub features: BTreeSet<BiasFeature>,
    pub debiased: ScoreVector,
    pub probabilities: ProbDist,
    pub label: Label,
}

pub fn debias(cfg: &RunConfig) -> anyhow::Result<()> {
    let d = &cfg.debias;
    let dataset_path = required(&d.dataset, "debias.dataset (--dataset)")?;
    let out = required(&d.out, "debias.out (--out)")?;
    let (profile, method) = if d.vanilla {
        (CalibrationProfile::zero(BTreeSet::new()), d.method.clone().unwrap_or_else(|| "vanilla".into()))
    } else {
        let path = required(&d.profile, "debias.profile (--profile), or --vanilla")?;
        let profile: CalibrationProfile = read_json(path)?;
        profile.validate().with_context(|| format!("checking {}", path.display()))?;
        let method = d.method.clone().unwrap_or_else(|| format!("cmbe-{}", profile.known_types.len()));
        (profile, method)
    };
    let samples = read_samples(dataset_path)?;
    let detectors = runtime::detectors(cfg, None)?;
    let mode = runtime::prompt_mode(cfg)?;

    let (raw, source_id) = runtime::with_source(cfg, |source, parallelism| {
        let raw = predict_all(source, &samples, &mode, parallelism).context("predicting dataset")?;
        Ok((raw, source.source_id()))
    })?;

    let mut coverage = CoverageStats::default();
    let mut rows = Vec::with_capacity(samples.len());
    for (s, dist) in samples.iter().zip(raw) {
        let features = detectors.features_of(s).with_context(|| format!("detecting features of {}", s.id))?;
        let out = debias_one(&dist, &features, &profile);
        coverage.record(&out, &features);
        rows.push(PredictionRow {
            id: s.id.clone(),
            gold: s.gold,
            raw: dist,
            features,
            debiased: out.scores,
            probabilities: report_probabilities(&out.scores),
            label: out.label,
        });
    }

    let mut run = RunInfo::new("debias", cfg.hash(), cfg.prompt.demo_seed);
    run.source_id = Some(source_id);
    run.prompt_mode = Some(mode.id().into());
    run.method = Some(method.clone());
    run.dataset = Some(dataset_path.clone());
    run.details = json!({
        "profile": d.profile.as_ref().filter(|_| !d.vanilla),
        "known_types": profile.known_types,
        "coverage": coverage,
    });
    write_jsonl(out, &rows, &run)?;

    println!("wrote {} {method} predictions to {}", rows.len(), out.display());
    println!(
        "  rows without calibrated features: {}; ignored features of unknown type: {}; without an estimated effect: {}",
        coverage.rows_without_known_features, coverage.ignored_unknown_type, coverage.ignored_uncalibrated
    );
    let scored: Vec<&PredictionRow> = rows.iter().filter(|r| r.gold.is_some()).collect();
    if !scored.is_empty() {
        let correct = scored.iter().filter(|r| r.gold == Some(r.label)).count();
        println!("  accuracy {:.2}% on {} labeled rows", 100.0 * correct as f64 / scored.len() as f64, scored.len());
    }
    Ok(())
}

#[derive(Deserialize)]
struct LabelRow {
    id: String,
    label: Label,
}

pub fn eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let e = &cfg.eval;
    if e.predictions.is_empty() {
        return Err(Coded::io("missing required setting: eval.predictions (--predictions)").into());
    }
    let mut datasets: BTreeMap<PathBuf, Vec<NliSample>> = BTreeMap::new();
    let mut reports = Vec::with_capacity(e.predictions.len());
    for path in &e.predictions {
        let meta = read_meta(path)?.unwrap_or_default();
        let dataset_path = e
            .dataset
            .clone()
            .or_else(|| meta.dataset.clone())
            .ok_or_else(|| Coded::io(format!("no dataset given for {} and none recorded with it", path.display())))?;
        if !datasets.contains_key(&dataset_path) {
            let samples = read_samples(&dataset_path)?;
            datasets.insert(dataset_path.clone(), samples);
        }
        let rows: Vec<LabelRow> = read_jsonl(path)?;
        let predictions: Vec<Prediction> = rows.into_iter().map(|r| Prediction { id: r.id, label: r.label }).collect();
        let run_meta = RunMeta {
            model: meta.source_id.clone().unwrap_or_else(|| "unknown".into()),
            mode: meta.prompt_mode.clone().unwrap_or_else(|| "unknown".into()),
            method: e.method.clone().or(meta.method.clone()).unwrap_or_else(|| stem(path)),
            dataset: stem(&dataset_path),
            seed: (!meta.command.is_empty()).then_some(meta.seed),
        };
        let report = evaluate(&datasets[&dataset_path], &predictions, run_meta)
            .with_context(|| format!("evaluating {} against {}", path.display(), dataset_path.display()))?;
        info!("{}: accuracy {:.2}%", path.display(), 100.0 * report.accuracy);
        reports.push(report);
    }

    let run = RunInfo::new("eval", cfg.hash(), 0);
    if e.compare {
        let table = compare_runs(&reports);
        print!("{table}");
        if let Some(out) = &e.out {
            write_json(out, &table, &run)?;
        }
        if let Some(csv) = &e.csv {
            write_atomic(csv, |w| table.write_csv(w).map_err(std::io::Error::other))?;
        }
        return Ok(());
    }

    for r in &reports {
        print_report(r);
    }
    if let Some(out) = &e.out {
        match reports.as_slice() {
            [one] => write_json(out, one, &run)?,
            many => write_json(out, &json!({ "reports": many }), &run)?,
        }
    }
    if let Some(csv) = &e.csv {
        write_atomic(csv, |w| EvalReport::write_csv(&reports, w).map_err(std::io::Error::other))?;
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "{} | {} | {} | {}: accuracy {:.2}% ({}/{})",
        r.meta.model,
        r.meta.mode,
        r.meta.method,
        r.meta.dataset,
        100.0 * r.accuracy,
        r.correct,
        r.total
    );
    for b in &r.per_label {
        match b.error_rate {
            Some(rate) => println!("  {:<13} error {:>6.2}% ({}/{})", b.label.as_str(), 100.0 * rate, b.wrong, b.total),
            None => println!("  {:<13} no samples", b.label.as_str()),
        }
    }
}
