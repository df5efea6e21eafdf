//! Command line front end. Exit codes: 0 success, 2 usage errors
//! (including unknown --set keys), 3 data validation failures, 4 numeric
//! failures during training or evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use botscl::checkpoint::{load_params, save_params};
use botscl::dataset::{load_dataset, save_dataset};
use botscl::graph::{graph_stats, LabeledSplit, MultiRelationGraph};
use botscl::metrics::mean_std;
use botscl::model::ModelParams;
use botscl::pipeline::{
    create_run_dir, embed, evaluate, experiment_ablation, experiment_lambda_sweep,
    experiment_mask_sweep, export_embeddings, train_and_eval, write_json, PipelineError,
    TrainConfig,
};
use botscl::stage2::fit_logistic;
use botscl::synth::{builtin_profiles, generate, SynthProfile};
use botscl::tensor::Tensor;

#[derive(Parser)]
#[command(name = "botscl", version, about = "contrastive bot-detection encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonTrainArgs {
    /// dataset directory (nodes.jsonl, edges.csv, labels.csv, splits.json)
    #[arg(long)]
    data: PathBuf,
    /// base directory that receives append-only run-NNNN directories
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// training-config overrides as dotted key=value pairs
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// overrides the config seed (takes precedence over BOTSCL_SEED)
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads for sweeps
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a named or file-based profile
    Gen {
        /// builtin profile name; see --list
        #[arg(long, conflicts_with = "profile_file")]
        profile: Option<String>,
        /// JSON file holding a full profile
        #[arg(long)]
        profile_file: Option<PathBuf>,
        #[arg(long, required_unless_present = "list")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// profile overrides as dotted key=value pairs
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// list builtin profile names and exit
        #[arg(long)]
        list: bool,
    },
    /// Print dataset statistics and per-(relation, class) homophily
    Measure {
        #[arg(long)]
        data: PathBuf,
    },
    /// Two-stage training; writes config, metrics, history, checkpoint,
    /// and embeddings into a fresh run directory
    Train {
        #[command(flatten)]
        common: CommonTrainArgs,
    },
    /// Re-evaluate a finished run's checkpoint on a dataset
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// a run directory produced by `train`
        #[arg(long)]
        run: PathBuf,
    },
    /// Heterophilic-edge mask sweep or self-weight (lambda) grid
    Sweep {
        #[command(flatten)]
        common: CommonTrainArgs,
        /// "mask" or "lambda"
        #[arg(long)]
        kind: String,
        /// mask fractions (mask sweep) or lambda values (lambda grid)
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// repeat the whole sweep over this many seeds and aggregate
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Objective-variant and augmentor ablation table
    Ablate {
        #[command(flatten)]
        common: CommonTrainArgs,
    },
    /// Export a run's embeddings for a dataset as CSV
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
    fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Num(_) | PipelineError::Diverged { .. } => {
                CliError::numeric(e.to_string())
            }
            PipelineError::SingleClassTrain
            | PipelineError::BatchSampling { .. }
            | PipelineError::ConfigMismatch(_) => CliError::data(e.to_string()),
            PipelineError::Io(_) | PipelineError::Json(_) => CliError::data(e.to_string()),
        }
    }
}

/// Applies dotted-path overrides to any JSON-serializable config. Unknown
/// keys are usage errors, listing the keys available at that level.
fn apply_overrides<T: Serialize + DeserializeOwned>(
    value: T,
    sets: &[String],
) -> Result<T, CliError> {
    let mut root = serde_json::to_value(&value).map_err(|e| CliError::usage(e.to_string()))?;
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set needs KEY=VALUE, got {set:?}")))?;
        let mut cursor = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (depth, part) in parts.iter().enumerate() {
            let map = cursor.as_object_mut().ok_or_else(|| {
                CliError::usage(format!(
                    "key {key:?}: {} is not a config section",
                    parts[..depth].join(".")
                ))
            })?;
            if !map.contains_key(*part) {
                let known: Vec<&str> = map.keys().map(|k| k.as_str()).collect();
                return Err(CliError::usage(format!(
                    "unknown config key {key:?}; available here: {}",
                    known.join(", ")
                )));
            }
            cursor = map.get_mut(*part).unwrap();
        }
        *cursor = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    }
    serde_json::from_value(root).map_err(|e| CliError::usage(format!("invalid override: {e}")))
}

fn load_data(dir: &Path) -> Result<(MultiRelationGraph, LabeledSplit), CliError> {
    load_dataset(dir).map_err(|e| CliError::data(e.to_string()))
}

fn resolve_seed(cfg_seed: u64, flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("BOTSCL_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::usage(format!("BOTSCL_SEED must be an integer, got {v:?}"))),
        Err(_) => Ok(cfg_seed),
    }
}

fn build_config(common: &CommonTrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = apply_overrides(TrainConfig::defaults(), &common.sets)?;
    cfg.seed = resolve_seed(cfg.seed, common.seed)?;
    Ok(cfg)
}

fn cmd_gen(
    profile: Option<String>,
    profile_file: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: u64,
    sets: &[String],
    list: bool,
) -> Result<(), CliError> {
    let profiles = builtin_profiles();
    if list {
        for name in profiles.keys() {
            println!("{name}");
        }
        return Ok(());
    }
    let base: SynthProfile = if let Some(path) = profile_file {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("profile: {e}")))?
    } else {
        let name = profile.ok_or_else(|| CliError::usage("--profile or --profile-file required"))?;
        profiles.get(&name).cloned().ok_or_else(|| {
            CliError::usage(format!(
                "unknown profile {name:?}; known: {}",
                profiles.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?
    };
    let profile = apply_overrides(base, sets)?;
    let (g, split) = generate(&profile, seed).map_err(|e| CliError::data(e.to_string()))?;
    let out = out.expect("clap enforces --out");
    save_dataset(&out, &g, &split).map_err(|e| CliError::data(e.to_string()))?;
    println!("{}", graph_stats(&g, &split));
    println!("written to {}", out.display());
    Ok(())
}

fn cmd_measure(data: &Path) -> Result<(), CliError> {
    let (g, split) = load_data(data)?;
    println!("{}", graph_stats(&g, &split));
    Ok(())
}

fn cmd_train(common: &CommonTrainArgs) -> Result<(), CliError> {
    let (g, split) = load_data(&common.data)?;
    let cfg = build_config(common)?;
    let (enc, _head, h, report) = train_and_eval(&g, &split, &cfg)?;
    let run = create_run_dir(&common.out).map_err(|e| CliError::data(e.to_string()))?;
    write_json(&run.join("config.json"), &enc.config)?;
    write_json(&run.join("metrics.json"), &report)?;
    let mut hist = String::from("epoch,loss\n");
    for (e, l) in enc.loss_history.iter().enumerate() {
        hist.push_str(&format!("{e},{l}\n"));
    }
    std::fs::write(run.join("history.csv"), hist).map_err(PipelineError::Io)?;
    let mut val = String::from("epoch,val_accuracy\n");
    for (e, a) in &enc.val_history {
        val.push_str(&format!("{e},{a}\n"));
    }
    std::fs::write(run.join("val_history.csv"), val).map_err(PipelineError::Io)?;
    save_params(&run.join("checkpoint"), &enc.params.visit())
        .map_err(|e| CliError::data(e.to_string()))?;
    export_embeddings(&run.join("embeddings.csv"), &g, &h)?;
    println!("run: {}", run.display());
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

fn load_run(run: &Path, g: &MultiRelationGraph) -> Result<(TrainConfig, ModelParams), CliError> {
    let text = std::fs::read_to_string(run.join("config.json"))
        .map_err(|e| CliError::data(format!("{}: {e}", run.display())))?;
    let cfg: TrainConfig =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("config.json: {e}")))?;
    let resolved = cfg.resolved_for(g);
    if resolved.model != cfg.model {
        return Err(CliError::data(
            "dataset shape does not match the run's model config".to_string(),
        ));
    }
    let mut params = ModelParams::init(&cfg.model, &mut botscl::rng::stream(0, "load"));
    load_params(&run.join("checkpoint"), &mut params.visit_mut())
        .map_err(|e| CliError::data(e.to_string()))?;
    Ok((cfg, params))
}

fn run_embeddings(
    data: &Path,
    run: &Path,
) -> Result<(MultiRelationGraph, LabeledSplit, TrainConfig, Tensor), CliError> {
    let (g, split) = load_data(data)?;
    let (cfg, params) = load_run(run, &g)?;
    let h = embed(&botscl::augment::View::of(&g), &params, &cfg.model)
        .map_err(|e| CliError::numeric(e.to_string()))?;
    Ok((g, split, cfg, h))
}

fn cmd_eval(data: &Path, run: &Path) -> Result<(), CliError> {
    let (_g, split, cfg, h) = run_embeddings(data, run)?;
    let train_rows: Vec<Vec<f64>> = split.train.iter().map(|&i| h.row(i).to_vec()).collect();
    let train_labels: Vec<u8> = split
        .train
        .iter()
        .map(|&i| split.label(i).unwrap_or(0))
        .collect();
    let head = fit_logistic(&Tensor::from_rows(&train_rows), &train_labels, &cfg.stage2)
        .map_err(|e| CliError::numeric(e.to_string()))?;
    let report = evaluate(&h, &head, &split);
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

fn cmd_sweep(
    common: &CommonTrainArgs,
    kind: &str,
    values: Option<Vec<f64>>,
    seeds: u64,
) -> Result<(), CliError> {
    let (g, split) = load_data(&common.data)?;
    let cfg = build_config(common)?;
    let run = create_run_dir(&common.out).map_err(|e| CliError::data(e.to_string()))?;
    write_json(&run.join("config.json"), &cfg)?;
    match kind {
        "mask" => {
            let fractions =
                values.unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
            let mut per_seed = Vec::new();
            for s in 0..seeds.max(1) {
                let mut scfg = cfg.clone();
                scfg.seed = cfg.seed + s;
                per_seed.push(experiment_mask_sweep(
                    &g,
                    &split,
                    &fractions,
                    &scfg,
                    common.jobs,
                )?);
            }
            write_json(&run.join("mask_sweep.json"), &per_seed)?;
            println!("fraction,botscl_acc_mean,botscl_acc_std,baseline_acc_mean,baseline_acc_std");
            for (i, f) in fractions.iter().enumerate() {
                let b: Vec<f64> = per_seed.iter().map(|rows| rows[i].botscl.accuracy).collect();
                let base: Vec<f64> = per_seed
                    .iter()
                    .map(|rows| rows[i].baseline.accuracy)
                    .collect();
                let (bm, bs) = mean_std(&b);
                let (gm, gs) = mean_std(&base);
                println!("{f},{bm},{bs},{gm},{gs}");
            }
        }
        "lambda" => {
            let vals = values
                .unwrap_or_else(|| (0..10).map(|i| 0.2 * i as f64).collect());
            let cells =
                experiment_lambda_sweep(&g, &split, &vals, &vals, &cfg, common.jobs)?;
            write_json(&run.join("lambda_sweep.json"), &cells)?;
            println!("lambda1,lambda2,accuracy,f1");
            for c in &cells {
                println!("{},{},{},{}", c.lambda1, c.lambda2, c.accuracy, c.f1);
            }
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown sweep kind {other:?}; expected \"mask\" or \"lambda\""
            )))
        }
    }
    println!("run: {}", run.display());
    Ok(())
}

fn cmd_ablate(common: &CommonTrainArgs) -> Result<(), CliError> {
    let (g, split) = load_data(&common.data)?;
    let cfg = build_config(common)?;
    let rows = experiment_ablation(&g, &split, &cfg, common.jobs)?;
    let run = create_run_dir(&common.out).map_err(|e| CliError::data(e.to_string()))?;
    write_json(&run.join("config.json"), &cfg)?;
    write_json(&run.join("ablation.json"), &rows)?;
    println!("name,accuracy,f1");
    for r in &rows {
        println!("{},{},{}", r.name, r.accuracy, r.f1);
    }
    println!("run: {}", run.display());
    Ok(())
}

fn cmd_export(data: &Path, run: &Path, out: &Path) -> Result<(), CliError> {
    let (g, _split, _cfg, h) = run_embeddings(data, run)?;
    export_embeddings(out, &g, &h)?;
    println!("exported {} rows to {}", g.node_count(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen {
            profile,
            profile_file,
            out,
            seed,
            sets,
            list,
        } => cmd_gen(profile, profile_file, out, seed, &sets, list),
        Command::Measure { data } => cmd_measure(&data),
        Command::Train { common } => cmd_train(&common),
        Command::Eval { data, run } => cmd_eval(&data, &run),
        Command::Sweep {
            common,
            kind,
            values,
            seeds,
        } => cmd_sweep(&common, &kind, values, seeds),
        Command::Ablate { common } => cmd_ablate(&common),
        Command::Export { data, run, out } => cmd_export(&data, &run, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
