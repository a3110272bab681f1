use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eckpn::episode::io::{read_dataset, write_dataset};
use eckpn::episode::{gen_synthetic_dataset, sample_episode, DataConfig, Dataset, Split};
use eckpn::harness::ablation::{run_ablation_with_observer, AblationGrid};
use eckpn::harness::checkpoint::{load_checkpoint, save_checkpoint};
use eckpn::harness::heatmap::{default_layers, export_heatmap};
use eckpn::harness::seeds::{derive_seed, EVAL_STREAM};
use eckpn::harness::train::{train_with_observer, write_metrics};
use eckpn::harness::{evaluate, TrainConfig};
use eckpn::{Ablation, Error};

#[derive(Parser)]
#[command(name = "eckpn", version, about = "Transductive few-shot classification with class knowledge propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData(GenDataArgs),
    /// Meta-train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on sampled episodes.
    Eval(EvalArgs),
    /// Train and test a grid of variants, head counts, depths and seeds.
    Ablate(AblateArgs),
    /// Write support-query relation heatmaps for one episode.
    ExportHeatmap(HeatmapArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 100)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    raw_dim: usize,
    #[arg(long, default_value_t = 16)]
    semantic_dim: usize,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = 0.5)]
    stddev: f64,
    /// Coupling between class prototypes and semantic embeddings, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    coupling: f64,
    /// Materialize this many samples per class (0 samples on demand).
    #[arg(long, default_value_t = 0)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Flags that override [`TrainConfig`] fields.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    label_ratio: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Any other config key, as key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        let flags = [
            ("ways", self.ways.map(|v| v.to_string())),
            ("shots", self.shots.map(|v| v.to_string())),
            ("queries", self.queries.map(|v| v.to_string())),
            ("heads", self.heads.map(|v| v.to_string())),
            ("layers", self.layers.map(|v| v.to_string())),
            ("label_ratio", self.label_ratio.map(|v| v.to_string())),
            ("iterations", self.iterations.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("ablation", self.ablation.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file; a default synthetic dataset is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset, Error> {
        match &self.data {
            Some(path) => read_dataset(path),
            None => gen_synthetic_dataset(&DataConfig::default()),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for metrics and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Number of episodes; defaults to the config's eval_episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Per-episode accuracies are written here as CSV when given.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated variants; all five by default.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<Ablation>,
    /// Head counts to sweep; the config's value by default.
    #[arg(long, value_delimiter = ',')]
    head_sweep: Vec<usize>,
    /// Depths to sweep; the config's value by default.
    #[arg(long, value_delimiter = ',')]
    layer_sweep: Vec<usize>,
    /// Run seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Episode seed.
    #[arg(long, default_value_t = 0)]
    episode_seed: u64,
    /// Comma-separated layer numbers; first, third and last by default.
    #[arg(long, value_delimiter = ',')]
    select: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Episode(_) => 2,
        Error::Engine(_) | Error::NonFinite(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn gen_data(args: &GenDataArgs) -> Result<(), Error> {
    let ds = gen_synthetic_dataset(&DataConfig {
        class_count: args.classes,
        raw_dim: args.raw_dim,
        semantic_dim: args.semantic_dim,
        within_class_stddev: args.stddev,
        semantic_coupling: args.coupling,
        samples_per_class: args.samples_per_class,
        seed: args.seed,
        ..DataConfig::default()
    })?;
    write_dataset(&ds, &args.out)?;
    println!("wrote {} classes to {}", ds.class_count, args.out.display());
    Ok(())
}

/// Returns `Ok(false)` when the run is marked failed.
fn train_cmd(args: &TrainArgs) -> Result<bool, Error> {
    let cfg = args.config.resolve()?;
    let ds = args.data.load()?;
    create_dir(&args.out)?;
    let cfg_path = args.out.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let quiet = args.quiet;
    let outcome = train_with_observer(&cfg, &ds, |row| {
        if let (false, Some(val)) = (quiet, row.val_acc) {
            println!(
                "iter {:>6}  loss {:.4}  train_acc {:.3}  val_acc {val:.3}  lr {}",
                row.iteration, row.loss_total, row.train_acc, row.lr
            );
        }
    })?;
    write_metrics(&outcome.metrics, args.out.join("metrics.csv"))?;
    save_checkpoint(&outcome.best_params, args.out.join("best.ckpt"))?;
    save_checkpoint(&outcome.final_params, args.out.join("final.ckpt"))?;
    println!(
        "best val_acc {:.4} at iteration {}; {} skipped iterations",
        outcome.best_val_acc, outcome.best_iteration, outcome.skipped
    );
    if outcome.failed {
        eprintln!("run failed: too many skipped iterations");
    }
    Ok(!outcome.failed)
}

fn eval_cmd(args: &EvalArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    let ds = args.data.load()?;
    let params = load_checkpoint(&args.checkpoint)?;
    let mut spec = cfg.episode_spec();
    spec.ways = params.config.ways;
    let count = args.episodes.unwrap_or(cfg.eval_episodes);
    let report = evaluate(&params, &ds, args.split, &spec, count, cfg.seed)?;
    println!(
        "{} episodes on {}: accuracy {:.4} ± {:.4} ({:.2?})",
        report.episodes(),
        report.split,
        report.mean_accuracy,
        report.ci95,
        report.wall_time
    );
    if let Some(out) = &args.out {
        let mut csv = String::from("episode,accuracy\n");
        for (i, a) in report.accuracies.iter().enumerate() {
            csv.push_str(&format!("{i},{a}\n"));
        }
        std::fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn ablate_cmd(args: &AblateArgs) -> Result<(), Error> {
    let base = args.config.resolve()?;
    let ds = args.data.load()?;
    let grid = AblationGrid {
        variants: if args.variants.is_empty() {
            Ablation::ALL.to_vec()
        } else {
            args.variants.clone()
        },
        heads: if args.head_sweep.is_empty() {
            vec![base.heads]
        } else {
            args.head_sweep.clone()
        },
        layers: if args.layer_sweep.is_empty() {
            vec![base.layers]
        } else {
            args.layer_sweep.clone()
        },
        seeds: args.seeds.clone(),
        base,
    };
    let table = run_ablation_with_observer(&grid, &ds, |cell| match &cell.result {
        Ok((acc, ci)) => println!(
            "{} heads={} layers={} seed={}: {acc:.4} ± {ci:.4}",
            cell.variant, cell.heads, cell.layers, cell.seed
        ),
        Err(reason) => println!(
            "{} heads={} layers={} seed={}: failed ({reason})",
            cell.variant, cell.heads, cell.layers, cell.seed
        ),
    })?;
    table.write_csv(&args.out)?;
    for s in table.summaries() {
        println!(
            "{:<15} heads={} layers={}  mean {:.4} ± {:.4}  ({} ok, {} failed)",
            s.variant, s.heads, s.layers, s.mean, s.ci95, s.completed, s.failed
        );
    }
    Ok(())
}

fn heatmap_cmd(args: &HeatmapArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    let ds = args.data.load()?;
    let params = load_checkpoint(&args.checkpoint)?;
    let mut spec = cfg.episode_spec();
    spec.ways = params.config.ways;
    let seed = derive_seed(args.episode_seed, EVAL_STREAM, 0);
    let episode = sample_episode(&ds, args.split, &spec, seed)?;
    let layers = if args.select.is_empty() {
        default_layers(params.config.layers)
    } else {
        args.select.clone()
    };
    let written = export_heatmap(&params, &episode, &layers, &args.out)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Ablate(a) => ablate_cmd(a).map(|_| true),
        Command::ExportHeatmap(a) => heatmap_cmd(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
