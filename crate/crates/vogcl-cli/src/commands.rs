//! Subcommand implementations. Every command is a deterministic function of
//! the config and the files it reads; progress and timing go to stderr only,
//! so primary outputs are byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use vogcl::curriculum::{
    ranks_for_dataset, schedule_preview_csv, CurriculumMode, CurriculumSampler,
};
use vogcl::data::{
    balanced_test_subsets, generate_synthetic, load_directory, load_idx, stratified_split,
    write_directory, Dataset, SplitTag,
};
use vogcl::metrics::{mean_std, MetricsOptions, MetricsReport, Prediction};
use vogcl::model::Model;
use vogcl::rng::derive_seed;
use vogcl::trainer::{
    load_checkpoint, save_checkpoint, train, write_loss_log_csv, EpochSampler, ShuffleSampler,
    TrainMode, TrainOutput,
};
use vogcl::vog::{
    class_level_scores, class_normalized_scores, class_scores_csv, compute_gradient_maps,
    compute_vog_with, rank_samples, read_scores_csv, write_scores_csv, VogResult,
};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::CliError;

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Internal(format!("mkdir {}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Internal(format!("write {}: {e}", path.display())))
}

/// Loads (train, test) from the configured source. Synthetic data is
/// regenerated in memory, which is bit-identical to what `generate-data`
/// writes to disk.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset), CliError> {
    match &config.dataset {
        DatasetSource::Synthetic {
            knob_range,
            data_seed,
            ..
        } => {
            let train = generate_synthetic(
                &config.train_profile()?,
                *knob_range,
                *data_seed,
                SplitTag::Train,
            )?;
            let test = generate_synthetic(
                &config.test_profile()?,
                *knob_range,
                *data_seed,
                SplitTag::Test,
            )?;
            Ok((train, test))
        }
        DatasetSource::Directory {
            train_root,
            test_root,
            train_fraction,
        } => match test_root {
            Some(test_root) => Ok((load_directory(train_root)?, load_directory(test_root)?)),
            None => {
                let full = load_directory(train_root)?;
                let out = stratified_split(&full, *train_fraction, config.train.seed)?;
                for w in &out.warnings {
                    eprintln!("split: {w}");
                }
                Ok((out.train, out.test))
            }
        },
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_fraction,
        } => match (test_images, test_labels) {
            (Some(ti), Some(tl)) => Ok((load_idx(train_images, train_labels)?, load_idx(ti, tl)?)),
            _ => {
                let full = load_idx(train_images, train_labels)?;
                let out = stratified_split(&full, *train_fraction, config.train.seed)?;
                for w in &out.warnings {
                    eprintln!("split: {w}");
                }
                Ok((out.train, out.test))
            }
        },
    }
}

/// Generates the synthetic train/test datasets, writes them under
/// `output_dir/data/`, and prints the per-class count table.
pub fn cmd_generate_data(config: &ExperimentConfig) -> Result<(), CliError> {
    if !matches!(config.dataset, DatasetSource::Synthetic { .. }) {
        return Err(CliError::Config(
            "generate-data only applies to synthetic dataset sources".into(),
        ));
    }
    let (train, test) = load_datasets(config)?;
    write_directory(&train, &config.train_data_dir())?;
    write_directory(&test, &config.test_data_dir())?;

    let train_counts = train.class_counts();
    let test_counts = test.class_counts();
    println!("{:<14}{:>8}{:>8}{:>8}", "type", "train", "test", "total");
    let mut fracture = (0usize, 0usize);
    for (c, name) in train.class_names().iter().enumerate() {
        let tr = train_counts[c];
        let te = test_counts.get(c).copied().unwrap_or(0);
        println!("{name:<14}{tr:>8}{te:>8}{:>8}", tr + te);
        if c > 0 {
            fracture.0 += tr;
            fracture.1 += te;
        }
    }
    println!(
        "{:<14}{:>8}{:>8}{:>8}",
        "fracture",
        fracture.0,
        fracture.1,
        fracture.0 + fracture.1
    );
    println!(
        "{:<14}{:>8}{:>8}{:>8}",
        "total",
        train.len(),
        test.len(),
        train.len() + test.len()
    );
    eprintln!(
        "wrote {} train / {} test samples under {}",
        train.len(),
        test.len(),
        config.output_dir.join("data").display()
    );
    Ok(())
}

/// Ranked difficulty results from a scores CSV, or the actionable error
/// naming the command that produces it.
fn load_ranked_scores(path: &Path, produce_with: &str) -> Result<Vec<VogResult>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingPrerequisite {
            missing: path.display().to_string(),
            produce_with: produce_with.to_string(),
        });
    }
    let scores = read_scores_csv(path)?;
    Ok(rank_samples(&scores)?)
}

fn sampler_for(
    config: &ExperimentConfig,
    dataset: &Dataset,
    mode: TrainMode,
    seed: u64,
) -> Result<Box<dyn EpochSampler>, CliError> {
    match mode {
        TrainMode::Baseline => Ok(Box::new(ShuffleSampler::new(seed))),
        TrainMode::Curriculum | TrainMode::AntiCurriculum => {
            let ranked = load_ranked_scores(&config.scores_path(), "vogcl vog")?;
            let ranks = ranks_for_dataset(&ranked, dataset)?;
            let cmode = if mode == TrainMode::AntiCurriculum {
                CurriculumMode::AntiCurriculum
            } else {
                CurriculumMode::Curriculum
            };
            Ok(Box::new(CurriculumSampler::new(
                &ranks,
                cmode,
                config.train.curriculum_horizon,
                seed,
            )?))
        }
        TrainMode::ExternalScores => {
            let path = config.external_scores_path.as_ref().ok_or_else(|| {
                CliError::Config("mode external_scores requires external_scores_path".into())
            })?;
            let ranked = load_ranked_scores(path, "provide an external difficulty CSV")?;
            let ranks = ranks_for_dataset(&ranked, dataset)?;
            Ok(Box::new(CurriculumSampler::new(
                &ranks,
                CurriculumMode::Curriculum,
                config.train.curriculum_horizon,
                seed,
            )?))
        }
    }
}

fn train_once(
    config: &ExperimentConfig,
    dataset: &Dataset,
    mode: TrainMode,
    seed: u64,
) -> Result<TrainOutput, CliError> {
    let mut train_config = config.train.clone();
    train_config.mode = mode;
    train_config.seed = seed;
    let mut sampler = sampler_for(config, dataset, mode, seed)?;
    Ok(train(&train_config, dataset, sampler.as_mut())?)
}

/// Trains the configured mode, writing checkpoints and the loss log.
pub fn cmd_train(config: &ExperimentConfig) -> Result<(), CliError> {
    let (train_data, _) = load_datasets(config)?;
    let mode = config.train.mode;
    let started = Instant::now();
    let out = train_once(config, &train_data, mode, config.train.seed)?;
    for ckpt in &out.checkpoints {
        let path = config.checkpoint_path(mode, ckpt.epoch);
        save_checkpoint(ckpt, &path)?;
        eprintln!("checkpoint epoch {} -> {}", ckpt.epoch, path.display());
    }
    let log_path = config
        .output_dir
        .join("logs")
        .join(format!("{}_loss.csv", mode.as_str()));
    write_loss_log_csv(&out.loss_log, &log_path)?;
    eprintln!(
        "trained {} for {} epochs in {:.1?}; loss log at {}",
        mode.as_str(),
        config.train.epochs,
        started.elapsed(),
        log_path.display()
    );
    Ok(())
}

/// Scores every training sample from the phase-1 baseline checkpoints and
/// writes `vog_scores.csv`.
pub fn cmd_vog(config: &ExperimentConfig) -> Result<(), CliError> {
    if config.vog.checkpoint_epochs.len() < 2 {
        return Err(CliError::Config(format!(
            "vog needs at least 2 checkpoint epochs, got {:?}",
            config.vog.checkpoint_epochs
        )));
    }
    let (train_data, _) = load_datasets(config)?;
    let mut checkpoints = Vec::new();
    for &epoch in &config.vog.checkpoint_epochs {
        let path = config.checkpoint_path(TrainMode::Baseline, epoch);
        if !path.exists() {
            return Err(CliError::MissingPrerequisite {
                missing: path.display().to_string(),
                produce_with: "vogcl train --mode baseline".to_string(),
            });
        }
        checkpoints.push(load_checkpoint(&path)?);
    }
    let started = Instant::now();
    let maps = compute_gradient_maps(&checkpoints, &train_data, config.vog.class_choice)?;
    let scores: Vec<(String, f64)> = maps
        .iter()
        .map(|m| {
            Ok((
                m.sample_id.clone(),
                compute_vog_with(&m.maps, config.vog.formula)?,
            ))
        })
        .collect::<Result<_, vogcl::vog::VogError>>()?;
    let scores = if config.vog.class_normalize {
        let labels: BTreeMap<String, usize> = train_data
            .samples()
            .iter()
            .map(|s| (s.id.clone(), s.label))
            .collect();
        class_normalized_scores(&scores, &labels)?
    } else {
        scores
    };
    let ranked = rank_samples(&scores)?;
    write_scores_csv(&ranked, &config.scores_path())?;
    eprintln!(
        "scored {} samples over {} checkpoints in {:.1?} -> {}",
        train_data.len(),
        checkpoints.len(),
        started.elapsed(),
        config.scores_path().display()
    );
    Ok(())
}

/// Metric means over the balanced test subsets.
#[derive(Debug, Clone, Serialize)]
pub struct AveragedMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub recall_positive: Option<f64>,
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub auc: f64,
    pub binary_accuracy: Option<f64>,
    pub binary_auc: Option<f64>,
}

fn average_reports(reports: &[MetricsReport]) -> AveragedMetrics {
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        if vals.len() == reports.len() {
            Some(vals.iter().sum::<f64>() / n)
        } else {
            None
        }
    };
    AveragedMetrics {
        accuracy: mean(&|r| r.accuracy),
        recall: mean(&|r| r.recall),
        recall_positive: mean_opt(&|r| r.recall_positive),
        f1: mean(&|r| r.f1),
        balanced_accuracy: mean(&|r| r.balanced_accuracy),
        auc: mean(&|r| r.auc),
        binary_accuracy: mean_opt(&|r| r.binary_accuracy),
        binary_auc: mean_opt(&|r| r.binary_auc),
    }
}

fn predictions_for(model: &Model, data: &Dataset) -> Result<Vec<Prediction>, CliError> {
    let mut preds = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(64) {
        let batch = data.batch(chunk);
        let pass = model.forward_pass(&batch, false, false)?;
        let probs = pass.graph.softmax_rows(pass.logits);
        for (&idx, scores) in chunk.iter().zip(probs) {
            let s = &data.samples()[idx];
            preds.push(Prediction::new(s.id.clone(), s.label, scores)?);
        }
    }
    Ok(preds)
}

/// Evaluates a model over the balanced repeated subsets of the test set.
pub fn evaluate_model(
    config: &ExperimentConfig,
    model: &Model,
    test: &Dataset,
) -> Result<(AveragedMetrics, Vec<MetricsReport>), CliError> {
    let eval = &config.evaluation;
    let outcome = balanced_test_subsets(test, eval.majority_class, eval.subsets, eval.subset_seed)?;
    for w in &outcome.warnings {
        eprintln!("subsets: {w}");
    }
    let options = MetricsOptions {
        normal_class: eval.normal_class,
        auc_method: eval.auc_method,
    };
    let mut reports = Vec::with_capacity(outcome.subsets.len());
    for subset in &outcome.subsets {
        let preds = predictions_for(model, subset)?;
        reports.push(MetricsReport::compute(&preds, options)?);
    }
    Ok((average_reports(&reports), reports))
}

#[derive(Serialize)]
struct EvaluationDocument<'a> {
    mode: &'a str,
    checkpoint_epoch: usize,
    n_subsets: usize,
    mean: &'a AveragedMetrics,
    subsets: &'a [MetricsReport],
}

fn latest_checkpoint(config: &ExperimentConfig, mode: TrainMode) -> Result<PathBuf, CliError> {
    let dir = config.checkpoint_dir(mode);
    let missing = || CliError::MissingPrerequisite {
        missing: dir.display().to_string(),
        produce_with: format!("vogcl train --mode {}", mode.as_str().replace('_', "-")),
    };
    let entries = fs::read_dir(&dir).map_err(|_| missing())?;
    let mut best: Option<PathBuf> = None;
    for entry in entries.flatten() {
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "ckpt") && best.as_ref().is_none_or(|b| path > *b)
        {
            best = Some(path);
        }
    }
    best.ok_or_else(missing)
}

/// Evaluates the configured mode's latest checkpoint on the balanced test
/// subsets and writes `metrics_<mode>.json`.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<(), CliError> {
    let mode = config.train.mode;
    let path = latest_checkpoint(config, mode)?;
    let ckpt = load_checkpoint(&path)?;
    let model = ckpt.to_model()?;
    let (_, test) = load_datasets(config)?;
    let (mean, subsets) = evaluate_model(config, &model, &test)?;
    let doc = EvaluationDocument {
        mode: mode.as_str(),
        checkpoint_epoch: ckpt.epoch,
        n_subsets: subsets.len(),
        mean: &mean,
        subsets: &subsets,
    };
    let out = config
        .output_dir
        .join(format!("metrics_{}.json", mode.as_str()));
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Internal(format!("serialize metrics: {e}")))?;
    write_text(&out, &json)?;
    eprintln!(
        "evaluated {} ({}) -> {}",
        mode.as_str(),
        path.display(),
        out.display()
    );
    Ok(())
}

fn display_name(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Baseline => "Baseline",
        TrainMode::ExternalScores => "RS-CL",
        TrainMode::Curriculum => "VoG-CL",
        TrainMode::AntiCurriculum => "Anti-VoG-CL",
    }
}

pub fn parse_modes(list: &str) -> Result<Vec<TrainMode>, CliError> {
    list.split(',')
        .map(|m| match m.trim().replace('-', "_").as_str() {
            "baseline" => Ok(TrainMode::Baseline),
            "curriculum" => Ok(TrainMode::Curriculum),
            "anti_curriculum" => Ok(TrainMode::AntiCurriculum),
            "external_scores" => Ok(TrainMode::ExternalScores),
            other => Err(CliError::Config(format!("unknown mode '{other}'"))),
        })
        .collect()
}

/// Runs every requested mode `runs` times with derived seeds, evaluates each
/// run on the balanced subsets, and writes the mean/std comparison tables.
pub fn cmd_compare(
    config: &ExperimentConfig,
    modes: Option<Vec<TrainMode>>,
) -> Result<(), CliError> {
    let modes = match modes {
        Some(m) => m,
        None => {
            // Table row order; external scores only when a file is configured.
            let mut m = vec![TrainMode::Baseline];
            if config.external_scores_path.is_some() {
                m.push(TrainMode::ExternalScores);
            }
            m.push(TrainMode::Curriculum);
            m.push(TrainMode::AntiCurriculum);
            m
        }
    };
    if modes.is_empty() {
        return Err(CliError::Config("no modes to compare".into()));
    }
    let (train_data, test_data) = load_datasets(config)?;

    // Resolve samplers' rank inputs up front so a missing scores file fails
    // fast; a baseline-only mode set never reads the scores path.
    for &mode in &modes {
        if mode != TrainMode::Baseline {
            sampler_for(config, &train_data, mode, 0)?;
        }
    }

    struct Job {
        mode: TrainMode,
        run: usize,
        seed: u64,
    }
    let jobs: Vec<Job> = modes
        .iter()
        .flat_map(|&mode| {
            (0..config.runs).map(move |run| Job {
                mode,
                run,
                seed: derive_seed(config.train.seed, mode.as_str(), run as u64),
            })
        })
        .collect();

    let started = Instant::now();
    let results: Mutex<Vec<Option<AveragedMetrics>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next_job = AtomicUsize::new(0);
    let threads = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(jobs.len());
    let worker_error: Mutex<Option<CliError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let idx = next_job.fetch_add(1, Ordering::SeqCst);
                if idx >= jobs.len() {
                    return;
                }
                let job = &jobs[idx];
                let outcome = train_once(config, &train_data, job.mode, job.seed)
                    .and_then(|out| evaluate_model(config, &out.model, &test_data));
                match outcome {
                    Ok((mean, _)) => {
                        results.lock().expect("results lock")[idx] = Some(mean);
                        eprintln!(
                            "compare: {} run {} done ({:.1?} elapsed)",
                            job.mode.as_str(),
                            job.run,
                            started.elapsed()
                        );
                    }
                    Err(e) => {
                        worker_error.lock().expect("error lock").get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = worker_error.into_inner().expect("error lock") {
        return Err(e);
    }
    let results = results.into_inner().expect("results lock");
    let per_run: Vec<AveragedMetrics> = results
        .into_iter()
        .map(|r| r.expect("all jobs completed"))
        .collect();

    // Aggregate mean/std per mode in fixed mode order.
    let mut table = String::from(
        "mode,accuracy_mean,accuracy_std,recall_mean,recall_std,auc_mean,auc_std,f1_mean,f1_std\n",
    );
    let mut extended = String::from(
        "mode,accuracy_mean,accuracy_std,recall_mean,recall_std,auc_mean,auc_std,f1_mean,f1_std,balanced_accuracy_mean,balanced_accuracy_std,binary_accuracy_mean,binary_accuracy_std,binary_auc_mean,binary_auc_std\n",
    );
    for (m, &mode) in modes.iter().enumerate() {
        let runs = &per_run[m * config.runs..(m + 1) * config.runs];
        let col = |f: &dyn Fn(&AveragedMetrics) -> f64| -> (f64, f64) {
            mean_std(&runs.iter().map(f).collect::<Vec<_>>())
        };
        let col_opt = |f: &dyn Fn(&AveragedMetrics) -> Option<f64>| -> (f64, f64) {
            let vals: Vec<f64> = runs.iter().filter_map(f).collect();
            if vals.len() == runs.len() {
                mean_std(&vals)
            } else {
                (f64::NAN, f64::NAN)
            }
        };
        let (acc_m, acc_s) = col(&|r| r.accuracy);
        let (rec_m, rec_s) = col(&|r| r.recall);
        let (auc_m, auc_s) = col(&|r| r.auc);
        let (f1_m, f1_s) = col(&|r| r.f1);
        let (ba_m, ba_s) = col(&|r| r.balanced_accuracy);
        let (bacc_m, bacc_s) = col_opt(&|r| r.binary_accuracy);
        let (bauc_m, bauc_s) = col_opt(&|r| r.binary_auc);
        table.push_str(&format!(
            "{},{acc_m:.6},{acc_s:.6},{rec_m:.6},{rec_s:.6},{auc_m:.6},{auc_s:.6},{f1_m:.6},{f1_s:.6}\n",
            display_name(mode)
        ));
        extended.push_str(&format!(
            "{},{acc_m:.6},{acc_s:.6},{rec_m:.6},{rec_s:.6},{auc_m:.6},{auc_s:.6},{f1_m:.6},{f1_s:.6},{ba_m:.6},{ba_s:.6},{bacc_m:.6},{bacc_s:.6},{bauc_m:.6},{bauc_s:.6}\n",
            display_name(mode)
        ));
    }
    write_text(&config.output_dir.join("comparison.csv"), &table)?;
    write_text(
        &config.output_dir.join("comparison_extended.csv"),
        &extended,
    )?;
    eprintln!(
        "compared {} modes x {} runs in {:.1?} -> {}",
        modes.len(),
        config.runs,
        started.elapsed(),
        config.output_dir.join("comparison.csv").display()
    );
    print!("{table}");
    Ok(())
}

/// Writes the probability-trajectory CSV for plotting the easy-to-uniform
/// transition. Ranks come either from `--ranks` or from the scores file.
pub fn cmd_schedule_preview(
    config: &ExperimentConfig,
    ranks_arg: Option<String>,
    epochs: Option<usize>,
) -> Result<(), CliError> {
    let mode = if config.train.mode == TrainMode::AntiCurriculum {
        CurriculumMode::AntiCurriculum
    } else {
        CurriculumMode::Curriculum
    };
    let horizon = config.train.curriculum_horizon;
    let epochs = epochs.unwrap_or(horizon + 1);
    let (ranks, ids): (Vec<usize>, Vec<String>) = match ranks_arg {
        Some(spec) => {
            let ranks: Vec<usize> = spec
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad rank '{t}' in --ranks")))
                })
                .collect::<Result<_, _>>()?;
            let ids = (0..ranks.len()).map(|i| format!("s{i}")).collect();
            (ranks, ids)
        }
        None => {
            let (train_data, _) = load_datasets(config)?;
            let ranked = load_ranked_scores(&config.scores_path(), "vogcl vog")?;
            let ranks = ranks_for_dataset(&ranked, &train_data)?;
            let ids = train_data.samples().iter().map(|s| s.id.clone()).collect();
            (ranks, ids)
        }
    };
    let csv = schedule_preview_csv(&ranks, &ids, mode, horizon, epochs)?;
    let path = config.output_dir.join("schedule_preview.csv");
    write_text(&path, &csv)?;
    eprintln!("schedule preview -> {}", path.display());
    Ok(())
}

/// Class-level mean difficulty per scores file, for side-by-side histograms.
pub fn cmd_histogram(config: &ExperimentConfig, scores: &[PathBuf]) -> Result<(), CliError> {
    let paths: Vec<PathBuf> = if scores.is_empty() {
        vec![config.scores_path()]
    } else {
        scores.to_vec()
    };
    let (train_data, _) = load_datasets(config)?;
    let labels: BTreeMap<String, usize> = train_data
        .samples()
        .iter()
        .map(|s| (s.id.clone(), s.label))
        .collect();
    let mut out = String::from("source,class,class_name,mean_difficulty\n");
    for path in &paths {
        let ranked = load_ranked_scores(path, "vogcl vog")?;
        let by_class = class_level_scores(&ranked, &labels)?;
        let source = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        for line in class_scores_csv(&by_class, train_data.class_names())
            .lines()
            .skip(1)
        {
            out.push_str(&format!("{source},{line}\n"));
        }
    }
    let path = config.output_dir.join("class_difficulty.csv");
    write_text(&path, &out)?;
    eprintln!("class-level difficulty -> {}", path.display());
    Ok(())
}
