//! Subcommand implementations: dataset generation, the per-variant/per-seed
//! training driver with checkpoint resume, and report merging.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use jioc::checkpoint::{load_checkpoint, save_checkpoint, stream_fingerprint, Checkpoint};
use jioc::data::{
    export_stream, generate_stream, import_stream, load_idx_dataset, ReplayMemory, TaskStream,
};
use jioc::error::{Error, Result};
use jioc::metrics::METRICS_SCHEMA_VERSION;
use jioc::nn::init_backbone;
use jioc::report::{emit_merged_report, emit_report, load_metrics};
use jioc::trainer::{resume_stream_with, run_stream_with, LossVariant, StreamOutcome};
use jioc::RunMetrics;

use crate::config::{RunConfig, SCHEMA};

/// Memory sampling streams must not reuse the run seed verbatim, so shift it
/// into a namespace of its own (the constant spells MEMORY in ASCII).
fn memory_seed(run_seed: u64) -> u64 {
    run_seed.wrapping_add(0x4D45_4D4F_5259)
}

/// Materializes the task stream: IDX files, record files or the synthetic
/// generator, in that priority order.
pub fn resolve_stream(config: &RunConfig) -> Result<TaskStream> {
    if let (Some(images), Some(labels)) = (&config.idx_train_images, &config.idx_train_labels) {
        let class_to_task: BTreeMap<usize, usize> = (0..config.idx_num_classes)
            .map(|c| (c, c / config.classes_per_task))
            .collect();
        let mut stream = load_idx_dataset(images, labels, &class_to_task)?;
        if let (Some(eval_images), Some(eval_labels)) =
            (&config.idx_eval_images, &config.idx_eval_labels)
        {
            let eval = load_idx_dataset(eval_images, eval_labels, &class_to_task)?;
            stream.attach_eval_from(eval)?;
        }
        return Ok(stream);
    }
    if let Some(train) = &config.train_data {
        return import_stream(train, config.eval_data.as_deref());
    }
    generate_stream(&config.stream_config())
}

/// `generate`: writes the synthetic stream as record files and prints the
/// per-class count table.
pub fn cmd_generate(config: &RunConfig) -> Result<()> {
    let stream = generate_stream(&config.stream_config())?;
    let dataset_dir = config.out_dir.join("dataset");
    fs::create_dir_all(&dataset_dir).map_err(|e| Error::io(dataset_dir.display(), e))?;
    let train_path = dataset_dir.join("train.records");
    let eval_path = dataset_dir.join("eval.records");
    export_stream(&stream, &train_path, &eval_path)?;

    let counts = stream.class_counts();
    let total: usize = counts.iter().sum();
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    println!("classes: {}", stream.total_classes());
    println!("training examples: {total}");
    println!("max per class: {max}");
    println!("min per class: {min}");
    if min > 0 {
        println!("imbalance factor: {:.2}", max as f64 / min as f64);
    }
    println!(
        "per-class counts: {}",
        counts
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    println!("wrote {}", train_path.display());
    println!("wrote {}", eval_path.display());
    Ok(())
}

/// Per-variant aggregate over the seed sweep.
#[derive(Debug, Serialize)]
struct Summary {
    schema_version: u32,
    variant: String,
    seeds: Vec<u64>,
    rounds: usize,
    final_average_mean: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    final_average_stddev: f64,
    per_seed_final_average: Vec<f64>,
    per_round_average_mean: Vec<f64>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Averages per-task accuracies across same-shape seed runs into one
/// summary-level RunMetrics (aggregates are recomputed, so the consistency
/// identities keep holding).
pub fn mean_metrics(label: &str, runs: &[RunMetrics]) -> Result<RunMetrics> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Domain(format!("no runs to average for {label}")))?;
    let rounds = first.num_rounds();
    let mut out = RunMetrics::new();
    out.config_echo
        .insert("variant".to_string(), label.to_string());
    out.config_echo
        .insert("aggregated_runs".to_string(), runs.len().to_string());
    for r in 0..rounds {
        let width = first.per_round[r].per_task_accuracy.len();
        let mut acc = vec![0.0; width];
        for run in runs {
            let round = run.per_round.get(r).ok_or_else(|| {
                Error::Config(format!(
                    "runs for {label} disagree on round count ({rounds} vs {})",
                    run.num_rounds()
                ))
            })?;
            if round.per_task_accuracy.len() != width {
                return Err(Error::Config(format!(
                    "runs for {label} disagree on task count at round {}",
                    r + 1
                )));
            }
            for (a, &v) in acc.iter_mut().zip(&round.per_task_accuracy) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= runs.len() as f64;
        }
        out.push_round(acc)?;
    }
    Ok(out)
}

fn add_config_echo(metrics: &mut RunMetrics, config: &RunConfig, variant: LossVariant, seed: u64) {
    let mut resolved = config.clone();
    resolved.loss_variants = vec![variant];
    resolved.seeds = vec![seed];
    for entry in SCHEMA {
        metrics
            .config_echo
            .insert(entry.key.to_string(), echo_value(&resolved, entry.key));
    }
}

fn echo_value(config: &RunConfig, key: &str) -> String {
    fn join<T: ToString>(items: &[T]) -> String {
        items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
    }
    fn path(p: &Option<PathBuf>) -> String {
        p.as_ref()
            .map_or(String::new(), |p| p.display().to_string())
    }
    match key {
        "num_tasks" => config.num_tasks.to_string(),
        "classes_per_task" => config.classes_per_task.to_string(),
        "samples_per_class" => config.samples_per_class.to_string(),
        "imbalance_factor" => config.imbalance_factor.to_string(),
        "profile" => config.profile.name().to_string(),
        "feature_dim" => config.feature_dim.to_string(),
        "cluster_separation" => config.cluster_separation.to_string(),
        "cluster_std" => config.cluster_std.to_string(),
        "eval_per_class" => config.eval_per_class.to_string(),
        "data_seed" => config.data_seed.to_string(),
        "train_data" => path(&config.train_data),
        "eval_data" => path(&config.eval_data),
        "idx_train_images" => path(&config.idx_train_images),
        "idx_train_labels" => path(&config.idx_train_labels),
        "idx_eval_images" => path(&config.idx_eval_images),
        "idx_eval_labels" => path(&config.idx_eval_labels),
        "idx_num_classes" => config.idx_num_classes.to_string(),
        "hidden_layers" => join(&config.hidden_layers),
        "activation" => config.activation.name().to_string(),
        "memory_capacity" => config.memory_capacity.to_string(),
        "replay_policy" => config.replay_policy.name().to_string(),
        "epochs_per_task" => config.epochs_per_task.to_string(),
        "batch_size" => config.batch_size.to_string(),
        "lr_initial" => config.lr_initial.to_string(),
        "lr_milestones" => join(&config.lr_milestones),
        "lr_decay" => config.lr_decay.to_string(),
        "gamma1" => config.gamma1.to_string(),
        "gamma2" => config.gamma2.to_string(),
        "temperature" => config.temperature.to_string(),
        "loss_variants" => config
            .loss_variants
            .iter()
            .map(|v| v.name())
            .collect::<Vec<_>>()
            .join(","),
        "suppress_norm" => config.suppress_norm.name().to_string(),
        "seeds" => join(&config.seeds),
        "out_dir" => config.out_dir.display().to_string(),
        "resume" => config.resume.to_string(),
        other => format!("<unmapped key {other}>"),
    }
}

fn run_one(
    config: &RunConfig,
    stream: &TaskStream,
    variant: LossVariant,
    seed: u64,
    run_dir: &Path,
) -> Result<RunMetrics> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir.display(), e))?;
    let mut trainer_config = config.trainer_config(seed);
    trainer_config.loss_variant = variant;
    let checkpoint_path = run_dir.join("checkpoint.bin");
    let fingerprint = stream_fingerprint(stream);
    let save_hook = |t: usize, model: &_, memory: &_, metrics: &RunMetrics| {
        save_checkpoint(
            &Checkpoint {
                next_task: t + 1,
                model: Clone::clone(model),
                memory: Clone::clone(memory),
                metrics: metrics.clone(),
                config: trainer_config.clone(),
                stream_fingerprint: fingerprint,
            },
            &checkpoint_path,
        )
    };

    let outcome: StreamOutcome = if config.resume && checkpoint_path.exists() {
        let checkpoint = load_checkpoint(&checkpoint_path)?;
        checkpoint.verify(stream, &trainer_config)?;
        info!(
            "{}/seed_{seed}: resuming after {} finished tasks",
            variant.name(),
            checkpoint.next_task
        );
        resume_stream_with(
            stream,
            checkpoint.model,
            checkpoint.memory,
            checkpoint.metrics,
            &trainer_config,
            save_hook,
        )?
    } else {
        let widths: Vec<usize> = std::iter::once(stream.feature_dim())
            .chain(config.hidden_layers.iter().copied())
            .collect();
        let backbone = init_backbone(&widths, config.activation, seed)?;
        let memory = ReplayMemory::new(
            config.memory_capacity,
            config.replay_policy,
            memory_seed(seed),
        );
        run_stream_with(stream, backbone, memory, &trainer_config, save_hook)?
    };

    let mut metrics = outcome.metrics;
    add_config_echo(&mut metrics, config, variant, seed);
    emit_report(&metrics, run_dir)?;
    Ok(metrics)
}

/// `train`: one full run per (variant, seed), each in its own directory with
/// metrics, charts and a resumable checkpoint, plus per-variant summaries
/// and, for sweeps, a merged comparison at the root.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let stream = resolve_stream(config)?;
    let mut variant_means: Vec<(String, RunMetrics)> = Vec::new();

    for &variant in &config.loss_variants {
        let variant_dir = config.out_dir.join(variant.name());
        let mut per_seed = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            let run_dir = variant_dir.join(format!("seed_{seed}"));
            let metrics = run_one(config, &stream, variant, seed, &run_dir)?;
            let final_avg = metrics.final_average().unwrap_or(0.0);
            println!(
                "{}/seed_{seed}: final average accuracy {:.2}%",
                variant.name(),
                final_avg * 100.0
            );
            per_seed.push(metrics);
        }

        let finals: Vec<f64> = per_seed
            .iter()
            .map(|m| m.final_average().unwrap_or(0.0))
            .collect();
        let rounds = per_seed.first().map_or(0, RunMetrics::num_rounds);
        let mean_run = mean_metrics(variant.name(), &per_seed)?;
        let summary = Summary {
            schema_version: METRICS_SCHEMA_VERSION,
            variant: variant.name().to_string(),
            seeds: config.seeds.clone(),
            rounds,
            final_average_mean: mean(&finals),
            final_average_stddev: sample_stddev(&finals),
            per_seed_final_average: finals,
            per_round_average_mean: mean_run.per_round.iter().map(|r| r.all_tasks_avg).collect(),
        };
        let summary_path = variant_dir.join("summary.json");
        let mut json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Domain(format!("summary serialization failed: {e}")))?;
        json.push('\n');
        fs::write(&summary_path, json).map_err(|e| Error::io(summary_path.display(), e))?;
        println!(
            "{}: mean {:.2}% stddev {:.2}% over {} seeds -> {}",
            variant.name(),
            summary.final_average_mean * 100.0,
            summary.final_average_stddev * 100.0,
            config.seeds.len(),
            summary_path.display()
        );
        variant_means.push((variant.name().to_string(), mean_run));
    }

    if variant_means.len() > 1 {
        let written = emit_merged_report(&variant_means, &config.out_dir)?;
        for path in written {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// `report`: merges run directories (each holding `seed_*/metrics.json`, or
/// a single `metrics.json`) into a comparison CSV and overlay chart.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<()> {
    let mut runs: Vec<(String, RunMetrics)> = Vec::new();
    for dir in dirs {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let per_seed = collect_metrics(dir)?;
        if per_seed.is_empty() {
            return Err(Error::Config(format!(
                "no metrics.json found under {}",
                dir.display()
            )));
        }
        let merged = mean_metrics(&label, &per_seed)?;
        runs.push((label, merged));
    }
    let written = emit_merged_report(&runs, out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn collect_metrics(dir: &Path) -> Result<Vec<RunMetrics>> {
    let direct = dir.join("metrics.json");
    if direct.exists() {
        return Ok(vec![load_metrics(&direct)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display(), e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("metrics.json").exists())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load_metrics(&p.join("metrics.json")))
        .collect()
}
