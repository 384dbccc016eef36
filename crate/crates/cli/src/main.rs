use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use graspforge_cli::commands::{cmd_eval, cmd_infer, cmd_synth, EvalArgs, InferArgs, Split};
use graspforge_cli::{cmd_train, configure_threads, Command, RunConfig};
use graspforge_core::dataset::{AugmentParams, SynthSpec};
use graspforge_core::eval::{ExtractOptions, Smoothing};
use graspforge_core::network::{AuxTask, Variant};
use graspforge_core::LossKind;

#[derive(Parser)]
#[command(
    name = "graspforge",
    version,
    about = "Pixelwise antipodal grasp networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on one fold of a dataset.
    Train(TrainArgs),
    /// Score checkpoints on a fold split.
    Eval(EvalCli),
    /// Predict a grasp for one image.
    Infer(InferCli),
    /// Generate a synthetic dataset.
    Synth(SynthCli),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value = "ggcnn")]
    variant: Variant,
    #[arg(long, default_value = "none")]
    aux: AuxTask,
    #[arg(long, default_value = "standard")]
    loss: LossKind,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 300)]
    input_size: usize,
    /// Train on centred crops only.
    #[arg(long)]
    no_augment: bool,
    /// Post-filter width in pixels; scales with the input size by default.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value = "plain", value_parser = parse_smoothing)]
    smoothing: Smoothing,
}

fn parse_smoothing(s: &str) -> Result<Smoothing, String> {
    match s {
        "plain" => Ok(Smoothing::Plain),
        "quality-weighted" => Ok(Smoothing::QualityWeighted),
        other => Err(format!("unknown smoothing {other:?}")),
    }
}

#[derive(Args)]
struct EvalCli {
    /// Repeat once per fold to get per-fold statistics.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Drop the auxiliary head of multi-task checkpoints first.
    #[arg(long)]
    prune: bool,
    /// Expected architecture; checked against every checkpoint.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    aux: Option<AuxTask>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "validation" | "val" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?}")),
    }
}

#[derive(Args)]
struct InferCli {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Directory for grayscale map images.
    #[arg(long)]
    export_maps: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long)]
    prune: bool,
}

#[derive(Args)]
struct SynthCli {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON synthetic spec; defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut extract = ExtractOptions::for_input_size(a.input_size);
    if let Some(s) = a.sigma {
        extract.sigma = s;
    }
    extract.smoothing = a.smoothing;
    let config = RunConfig {
        command: Command::Train,
        data: a.data,
        out: a.out,
        variant: a.variant,
        aux: a.aux,
        loss: a.loss,
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        weight_decay: a.weight_decay,
        seed: a.seed,
        fold: a.fold,
        folds: a.folds,
        split_seed: a.split_seed,
        input_size: a.input_size,
        augment: (!a.no_augment).then(|| AugmentParams {
            output_size: a.input_size,
            ..AugmentParams::default()
        }),
        extract,
    }
    .resolve_paths()?;
    let outcome = cmd_train(&config)?;
    for r in &outcome.records {
        println!(
            "epoch {:>3} loss {:.6} val_success {:.2}%",
            r.epoch, r.loss.total, r.val_success
        );
    }
    println!(
        "best_epoch={} out={}",
        outcome.best_epoch,
        outcome.out.display()
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    configure_threads()?;
    match Cli::parse().command {
        Cmd::Train(a) => train(a)?,
        Cmd::Eval(a) => {
            let expect = match (a.variant, a.aux) {
                (None, None) => None,
                (v, x) => Some((v.unwrap_or(Variant::Ggcnn), x.unwrap_or(AuxTask::None))),
            };
            let args = EvalArgs {
                checkpoints: a.checkpoint,
                data: a.data,
                split: a.split,
                prune: a.prune,
                expect,
                out: a.out,
            };
            print!("{}", cmd_eval(&args)?.to_text());
        }
        Cmd::Infer(a) => {
            let args = InferArgs {
                checkpoint: a.checkpoint,
                image: a.image,
                export_maps: a.export_maps,
                repeat: a.repeat,
                prune: a.prune,
            };
            print!("{}", cmd_infer(&args)?.to_text());
        }
        Cmd::Synth(a) => {
            let mut spec = match &a.spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<SynthSpec>(&text)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                None => SynthSpec::default(),
            };
            if let Some(n) = a.image_size {
                spec.image_size = n;
            }
            let scenes = cmd_synth(&spec, a.count, a.seed, &a.out)?;
            println!("wrote {} scenes to {}", scenes.len(), a.out.display());
        }
    }
    Ok(())
}
