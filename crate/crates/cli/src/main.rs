//! Binary entry point: argument parsing and dispatch to the command layer.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use greenlight::lora;
use greenlight::nn::{ExtractorKind, NetConfig};
use greenlight::ppo::PpoConfig;
use greenlight_cli::commands::{self, EvalMethod, EvalSpec, FinetuneSpec, TrainSpec};
use greenlight_cli::scenario::ControllerSpec;
use greenlight_cli::HarnessError;

#[derive(Parser)]
#[command(
    name = "greenlight",
    version,
    about = "Train, evaluate and compare traffic signal controllers on simulated intersections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a signal policy with PPO on one or more scenarios.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a classic controller and write a report.
    Evaluate(EvaluateArgs),
    /// Fine-tune a trained checkpoint on one scenario with low-rank adapters.
    Finetune(FinetuneArgs),
    /// Tabulate two or more evaluation reports side by side.
    Compare(CompareArgs),
}

#[derive(Args)]
struct NetArgs {
    /// Convolution channels in the extractor.
    #[arg(long, default_value_t = NetConfig::default().channels)]
    channels: usize,
    /// Recurrent state width.
    #[arg(long, default_value_t = NetConfig::default().hidden)]
    hidden: usize,
    /// Extracted feature width.
    #[arg(long, default_value_t = NetConfig::default().feature)]
    feature: usize,
    /// Attention query/key width.
    #[arg(long, default_value_t = NetConfig::default().attn_dim)]
    attn_dim: usize,
    /// Hidden width of the actor and critic heads.
    #[arg(long, default_value_t = NetConfig::default().head_hidden)]
    head_hidden: usize,
}

impl NetArgs {
    fn to_config(&self) -> NetConfig {
        NetConfig {
            channels: self.channels,
            hidden: self.hidden,
            feature: self.feature,
            attn_dim: self.attn_dim,
            head_hidden: self.head_hidden,
        }
    }
}

#[derive(Args)]
struct PpoArgs {
    /// Learning rate.
    #[arg(long, default_value_t = PpoConfig::default().lr)]
    lr: f64,
    /// Transitions collected per update.
    #[arg(long, default_value_t = PpoConfig::default().buffer_size)]
    buffer: usize,
    /// Surrogate clip range.
    #[arg(long, default_value_t = PpoConfig::default().clip)]
    clip: f64,
    /// Reward discount.
    #[arg(long, default_value_t = PpoConfig::default().gamma)]
    gamma: f64,
    /// Value loss weight.
    #[arg(long, default_value_t = PpoConfig::default().value_coef)]
    value_coef: f64,
    /// Optimisation passes per buffer.
    #[arg(long, default_value_t = PpoConfig::default().epochs)]
    epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = PpoConfig::default().minibatch)]
    minibatch: usize,
    /// Entropy bonus weight.
    #[arg(long, default_value_t = PpoConfig::default().entropy_coef)]
    entropy_coef: f64,
    /// Clip gradients to this global norm.
    #[arg(long)]
    max_grad_norm: Option<f64>,
    /// Augment observations during updates.
    #[arg(long)]
    augment: bool,
    /// Keep the movement shuffle out of the augmentation pool.
    #[arg(long)]
    no_shuffle: bool,
    /// Keep the lane change out of the augmentation pool.
    #[arg(long)]
    no_lane_change: bool,
    /// Keep the flow scale out of the augmentation pool.
    #[arg(long)]
    no_flow_scale: bool,
    /// Keep the Gaussian noise out of the augmentation pool.
    #[arg(long)]
    no_noise: bool,
    /// Keep the history mask out of the augmentation pool.
    #[arg(long)]
    no_mask: bool,
}

impl PpoArgs {
    fn to_config(&self) -> PpoConfig {
        PpoConfig {
            lr: self.lr,
            buffer_size: self.buffer,
            clip: self.clip,
            gamma: self.gamma,
            value_coef: self.value_coef,
            epochs: self.epochs,
            minibatch: self.minibatch,
            entropy_coef: self.entropy_coef,
            max_grad_norm: self.max_grad_norm,
            augment: self.augment,
            aug_transforms: [
                !self.no_shuffle,
                !self.no_lane_change,
                !self.no_flow_scale,
                !self.no_noise,
                !self.no_mask,
            ],
            ..PpoConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Preset name or scenario file; repeat to train across several.
    #[arg(long = "scenario", required = true)]
    scenarios: Vec<String>,
    /// State extractor: cnn, rnn or transformer.
    #[arg(long, default_value = "rnn", value_parser = ExtractorKind::from_str)]
    extractor: ExtractorKind,
    /// Total environment steps.
    #[arg(long, default_value_t = 200_000)]
    steps: usize,
    /// Parallel environments, assigned round-robin over scenarios.
    #[arg(long, default_value_t = 4)]
    envs: usize,
    /// Master seed for init, sampling and arrivals.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for checkpoint, curve and config snapshot.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    ppo: PpoArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Classic controller: fixtime[-SECONDS], webster or sotl[-THETA].
    #[arg(long, conflicts_with = "checkpoint")]
    controller: Option<String>,
    /// Trained policy checkpoint, run greedily.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Row label for comparison tables; defaults to the method name.
    #[arg(long)]
    method: Option<String>,
    /// Reject the checkpoint unless it uses this extractor.
    #[arg(long, value_parser = ExtractorKind::from_str)]
    extractor: Option<ExtractorKind>,
    /// Preset name or scenario file; repeat to evaluate several.
    #[arg(long = "scenario", required = true)]
    scenarios: Vec<String>,
    /// Episodes per scenario, overriding the scenario's own setting.
    #[arg(long)]
    episodes: Option<usize>,
    /// First evaluation seed, overriding the scenario's own setting.
    #[arg(long)]
    eval_seed_base: Option<u64>,
    /// Report file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pretrained checkpoint to adapt.
    #[arg(long)]
    base: PathBuf,
    /// Preset name or scenario file to fine-tune on.
    #[arg(long)]
    scenario: String,
    /// Adapter rank.
    #[arg(long, default_value_t = lora::DEFAULT_RANK)]
    rank: usize,
    /// Adapter scale.
    #[arg(long, default_value_t = lora::DEFAULT_ALPHA)]
    alpha: f64,
    /// Fine-tuning environment steps.
    #[arg(long, default_value_t = 50_000)]
    steps: usize,
    /// Parallel environments.
    #[arg(long, default_value_t = 4)]
    envs: usize,
    /// Master seed; the scratch control reuses it for matched environments.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also train a from-scratch control for this many steps and write its
    /// curve next to the adapter's.
    #[arg(long)]
    scratch_steps: Option<usize>,
    /// Output directory for adapter and curves.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    ppo: PpoArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Evaluation reports to tabulate.
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    /// Also write the table to a file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run() -> Result<(), HarnessError> {
    match Cli::parse().command {
        Command::Train(args) => {
            let outputs = commands::train(&TrainSpec {
                scenarios: args.scenarios,
                extractor: args.extractor,
                net: args.net.to_config(),
                ppo: args.ppo.to_config(),
                total_steps: args.steps,
                n_envs: args.envs,
                seed: args.seed,
                out_dir: args.out,
            })?;
            println!(
                "trained {} steps over {} episodes",
                outputs.steps_done, outputs.episodes
            );
            println!("checkpoint: {}", outputs.checkpoint.display());
            println!("curve:      {}", outputs.curve.display());
            println!("snapshot:   {}", outputs.snapshot.display());
        }
        Command::Evaluate(args) => {
            let method = match (&args.controller, &args.checkpoint) {
                (Some(c), None) => EvalMethod::Baseline(ControllerSpec::parse(c)?),
                (None, Some(path)) => EvalMethod::Checkpoint(path.clone()),
                (None, None) => EvalMethod::FromScenario,
                (Some(_), Some(_)) => unreachable!("clap rejects the conflict"),
            };
            let report = commands::evaluate(&EvalSpec {
                method,
                method_label: args.method,
                expect_extractor: args.extractor,
                scenarios: args.scenarios,
                episodes: args.episodes,
                eval_seed_base: args.eval_seed_base,
                out: args.out.clone(),
            })?;
            for s in &report.scenarios {
                match (s.mean_wait_s, s.wait_ci95_s) {
                    (Some(w), Some(ci)) => println!(
                        "{}: mean wait {:.2} s (±{:.2}, {} episodes)",
                        s.scenario, w, ci, s.episodes
                    ),
                    (Some(w), None) => {
                        println!("{}: mean wait {:.2} s ({} episodes)", s.scenario, w, s.episodes)
                    }
                    _ => println!("{}: no vehicles arrived", s.scenario),
                }
            }
            println!("report: {}", args.out.display());
        }
        Command::Finetune(args) => {
            let outputs = commands::finetune(&FinetuneSpec {
                base: args.base,
                scenario: args.scenario,
                rank: args.rank,
                alpha: args.alpha,
                ppo: args.ppo.to_config(),
                total_steps: args.steps,
                n_envs: args.envs,
                seed: args.seed,
                scratch_steps: args.scratch_steps,
                out_dir: args.out,
            })?;
            println!("fine-tuned {} steps", outputs.steps_done);
            println!("adapter: {}", outputs.adapter.display());
            println!("curve:   {}", outputs.curve.display());
            if let Some(path) = outputs.scratch_curve {
                println!("scratch: {}", path.display());
            }
        }
        Command::Compare(args) => {
            let table = commands::compare(&args.reports, args.out.as_deref())?;
            print!("{table}");
            if let Some(path) = args.out {
                println!("table: {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
