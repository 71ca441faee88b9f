mod settings;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gpn_core::eval::{
    accuracy, aggregate, brier, ece, left_out_class_setup, load_dataset, make_synthetic_benchmark,
    run_ood_experiment, run_seeds, run_shift_sweep, save_dataset, stratified_split, train_on_split, write_results,
    Baseline, Dataset, OodExperiment, ResultRecord, SplitSpec, UncertaintyModel, UNLABELED,
};
use gpn_core::model::Gpn;
use gpn_core::training::{load_checkpoint, save_checkpoint, EpochRecord, Phase};

use settings::Settings;

/// Graph posterior networks: training, uncertainty evaluation and baselines.
#[derive(Parser)]
#[command(name = "gpn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, history.csv and clean test metrics.
    Train(Common),
    /// Clean test metrics of a checkpoint, on the split it was trained with.
    Eval(Common),
    /// OOD or misclassification detection (config keys: kind, fraction, left_out).
    Ood(Common),
    /// Metrics over increasing perturbation (config keys: shift, levels).
    Shift(Common),
    /// GKDE or LP baseline on a detection experiment (config key: baseline).
    Baseline(Common),
    /// Generate a synthetic dataset into --out.
    Synth(Common),
}

#[derive(Args)]
struct Common {
    /// Dataset directory (meta.json, features.bin, labels.bin, edges.txt).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run configuration as `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to write (train) or read (eval, ood, shift).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn dataset(&self) -> Result<Dataset> {
        let dir = self.data.as_ref().context("--data is required")?;
        load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))
    }
}

/// Labels, split and class count the model is trained on; left-out classes
/// are removed from training when requested.
struct Prepared {
    split: SplitSpec,
    labels: Vec<usize>,
    train_split: SplitSpec,
    num_classes: usize,
}

fn prepare(ds: &Dataset, cfg: &Settings, seed: u64) -> gpn_core::Result<Prepared> {
    let split = stratified_split(ds, cfg.ratios().map_err(param)?, seed)?;
    let left_out = cfg.left_out().map_err(param)?;
    if left_out.is_empty() {
        return Ok(Prepared {
            labels: ds.labels.clone(),
            train_split: split.clone(),
            num_classes: ds.num_classes,
            split,
        });
    }
    let setup = left_out_class_setup(ds, &split, &left_out)?;
    Ok(Prepared {
        labels: setup.labels,
        train_split: setup.split,
        num_classes: setup.num_classes,
        split,
    })
}

fn param(e: anyhow::Error) -> gpn_core::GpnError {
    gpn_core::GpnError::Parameter(format!("{e:#}"))
}

fn train_model(ds: &Dataset, cfg: &Settings, p: &Prepared, seed: u64) -> gpn_core::Result<gpn_core::training::FitResult> {
    let model_cfg = cfg.model(ds.num_features(), p.num_classes).map_err(param)?;
    let train_cfg = cfg.training(seed).map_err(param)?;
    train_on_split(ds, &p.labels, &p.train_split, model_cfg, &train_cfg)
}

fn clean_record(model: &Gpn, ds: &Dataset, p: &Prepared, seed: u64) -> gpn_core::Result<ResultRecord> {
    let start = Instant::now();
    let pred = model.predict(ds)?;
    let test: Vec<usize> = p.train_split.test_idx().into_iter().filter(|&v| p.labels[v] != UNLABELED).collect();
    let probs = pred.probs();
    let mut rec = ResultRecord::new("clean", model.name(), seed, serde_json::to_value(model.config())?);
    rec.insert("acc", accuracy(&pred.classes(), &p.labels, &test)?);
    rec.insert("ece", ece(&probs, &p.labels, &test, 10)?);
    rec.insert("brier", brier(&probs, &p.labels, &test)?);
    let a0 = pred.posterior.alpha0();
    rec.insert("mean_alpha0", test.iter().map(|&v| a0[v]).sum::<f64>() / test.len() as f64);
    rec.runtime_secs = start.elapsed().as_secs_f64();
    Ok(rec)
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,phase,train_loss,val_loss\n");
    for r in history {
        let phase = match r.phase {
            Phase::Warmup => "warmup",
            Phase::Joint => "joint",
        };
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{phase},{},{val}", r.epoch, r.train_loss);
    }
    out
}

fn report(out: &Path, records: &[ResultRecord]) -> Result<()> {
    write_results(out, records)?;
    for (name, (mean, std)) in aggregate(records) {
        if records.len() > 1 {
            println!("{name:>24}  {mean:.4} ± {std:.4}");
        } else {
            println!("{name:>24}  {mean:.4}");
        }
    }
    println!("wrote {} record(s) to {}", records.len(), out.display());
    Ok(())
}

/// A checkpoint fixes the split seed; without one, each seed trains afresh.
fn model_for(
    ds: &Dataset,
    cfg: &Settings,
    checkpoint: &Option<(Gpn, u64)>,
    seed: u64,
) -> gpn_core::Result<(Gpn, Prepared)> {
    match checkpoint {
        Some((model, split_seed)) => Ok((model.clone(), prepare(ds, cfg, *split_seed)?)),
        None => {
            let p = prepare(ds, cfg, seed)?;
            Ok((train_model(ds, cfg, &p, seed)?.model, p))
        }
    }
}

fn read_checkpoint_arg(args: &Common) -> Result<Option<(Gpn, u64)>> {
    args.checkpoint
        .as_ref()
        .map(|path| {
            let (model, header) =
                load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
            Ok((model, header.seed))
        })
        .transpose()
}

fn cmd_train(args: &Common, cfg: &Settings) -> Result<()> {
    let ds = args.dataset()?;
    let p = prepare(&ds, cfg, args.seed)?;
    let fit = train_model(&ds, cfg, &p, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| args.out.join("model.ckpt"));
    save_checkpoint(&ckpt, &fit.model, args.seed, Some(&cfg.training(args.seed)?))?;
    std::fs::write(args.out.join("history.csv"), history_csv(&fit.history))?;
    let mut rec = clean_record(&fit.model, &ds, &p, args.seed)?;
    rec.experiment = "train".into();
    rec.insert("best_epoch", fit.best_epoch as f64);
    rec.insert("best_val_loss", fit.best_val_loss);
    rec.insert("epochs", fit.history.len() as f64);
    println!("checkpoint {}", ckpt.display());
    report(&args.out, &[rec])
}

fn cmd_eval(args: &Common, cfg: &Settings) -> Result<()> {
    let ds = args.dataset()?;
    let Some((model, split_seed)) = read_checkpoint_arg(args)? else {
        bail!("eval needs --checkpoint");
    };
    let p = prepare(&ds, cfg, split_seed)?;
    report(&args.out, &[clean_record(&model, &ds, &p, split_seed)?])
}

fn cmd_ood(args: &Common, cfg: &Settings) -> Result<()> {
    let ds = args.dataset()?;
    let checkpoint = read_checkpoint_arg(args)?;
    let (kind, fraction, left_out) = (cfg.ood_kind()?, cfg.fraction()?, cfg.left_out()?);
    let records = run_seeds(&cfg.seeds(args.seed)?, |seed| {
        let (model, p) = model_for(&ds, cfg, &checkpoint, seed)?;
        let exp = OodExperiment {
            left_out: left_out.clone(),
            ..OodExperiment::new(kind, fraction, seed)
        };
        run_ood_experiment(&model, &ds, &p.split, &exp)
    })?;
    report(&args.out, &records)
}

fn cmd_shift(args: &Common, cfg: &Settings) -> Result<()> {
    let ds = args.dataset()?;
    let checkpoint = read_checkpoint_arg(args)?;
    let (kind, levels) = (cfg.shift_kind()?, cfg.levels()?);
    let per_seed = run_seeds(&cfg.seeds(args.seed)?, |seed| {
        let (model, p) = model_for(&ds, cfg, &checkpoint, seed)?;
        run_shift_sweep(&model, &ds, &p.split, kind, &levels, seed)
    })?;
    report(&args.out, &per_seed.concat())
}

fn cmd_baseline(args: &Common, cfg: &Settings) -> Result<()> {
    let ds = args.dataset()?;
    let (which, gkde, lp) = cfg.baseline()?;
    let (kind, fraction, left_out) = (cfg.ood_kind()?, cfg.fraction()?, cfg.left_out()?);
    let records = run_seeds(&cfg.seeds(args.seed)?, |seed| {
        let p = prepare(&ds, cfg, seed)?;
        let model = Baseline {
            gkde,
            lp,
            ..Baseline::new(which, p.labels.clone(), p.train_split.train_idx(), p.num_classes)
        };
        let exp = OodExperiment {
            left_out: left_out.clone(),
            ..OodExperiment::new(kind, fraction, seed)
        };
        run_ood_experiment(&model, &ds, &p.split, &exp)
    })?;
    report(&args.out, &records)
}

fn cmd_synth(args: &Common, cfg: &Settings) -> Result<()> {
    let ds = make_synthetic_benchmark(&cfg.synthetic(args.seed)?)?;
    save_dataset(&args.out, &ds)?;
    let m = ds.meta();
    println!(
        "{}: {} nodes, {} edges, {} features, {} classes, homophily {:.3} -> {}",
        m.name,
        m.num_nodes,
        ds.graph.num_edges(),
        m.num_features,
        m.num_classes,
        ds.graph.homophily(&ds.labels),
        args.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Train(a)
        | Command::Eval(a)
        | Command::Ood(a)
        | Command::Shift(a)
        | Command::Baseline(a)
        | Command::Synth(a) => a,
    };
    let cfg = Settings::load(args.config.as_deref())?;
    match &cli.command {
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Ood(a) => cmd_ood(a, &cfg),
        Command::Shift(a) => cmd_shift(a, &cfg),
        Command::Baseline(a) => cmd_baseline(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
    }
}
