//! The four commands behind the binary: train, evaluate, finetune, compare.
//!
//! Each command is a plain function over a spec struct, so tests drive them
//! without spawning processes. Every run is seeded; rerunning a command with
//! the same spec reproduces its outputs byte for byte apart from the wall
//! clock line in reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use greenlight::eval::{run_episodes, summarize, EpisodeStats, GreedyPolicy};
use greenlight::lora;
use greenlight::nn::{load_policy, save_policy, ExtractorKind, NetConfig, Policy};
use greenlight::ppo::{write_curve, PpoConfig, Trainer};
use greenlight::sim::Environment;
use serde::Serialize;

use crate::report::{self, EpisodeReport, RunReport, ScenarioReport};
use crate::scenario::{ControllerSpec, Scenario};
use crate::HarnessError;

pub const CHECKPOINT_FILE: &str = "checkpoint.gltc";
pub const ADAPTER_FILE: &str = "adapter.gltc";
pub const CURVE_FILE: &str = "curve.tsv";
pub const SCRATCH_CURVE_FILE: &str = "scratch_curve.tsv";
pub const SNAPSHOT_FILE: &str = "config.toml";

pub struct TrainSpec {
    pub scenarios: Vec<String>,
    pub extractor: ExtractorKind,
    pub net: NetConfig,
    pub ppo: PpoConfig,
    pub total_steps: usize,
    pub n_envs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub snapshot: PathBuf,
    pub steps_done: usize,
    pub episodes: usize,
}

pub enum EvalMethod {
    /// A classic controller given on the command line.
    Baseline(ControllerSpec),
    /// A trained policy checkpoint, run greedily.
    Checkpoint(PathBuf),
    /// Whatever controller each scenario file embeds; all must agree.
    FromScenario,
}

pub struct EvalSpec {
    pub method: EvalMethod,
    /// Row label override for comparison tables.
    pub method_label: Option<String>,
    /// Cross-check against the checkpoint's extractor; mismatch rejects.
    pub expect_extractor: Option<ExtractorKind>,
    pub scenarios: Vec<String>,
    pub episodes: Option<usize>,
    pub eval_seed_base: Option<u64>,
    pub out: PathBuf,
}

pub struct FinetuneSpec {
    pub base: PathBuf,
    pub scenario: String,
    pub rank: usize,
    pub alpha: f64,
    pub ppo: PpoConfig,
    pub total_steps: usize,
    pub n_envs: usize,
    pub seed: u64,
    /// Also run a from-scratch control for this many steps on the same
    /// environment seeds, and write its curve next to the adapter's.
    pub scratch_steps: Option<usize>,
    pub out_dir: PathBuf,
}

pub struct FinetuneOutputs {
    pub adapter: PathBuf,
    pub curve: PathBuf,
    pub scratch_curve: Option<PathBuf>,
    pub steps_done: usize,
}

fn resolve_all(args: &[String]) -> Result<Vec<Scenario>, HarnessError> {
    if args.is_empty() {
        return Err(HarnessError::Usage(
            "at least one scenario (preset name or file) is required".to_string(),
        ));
    }
    args.iter().map(|a| Scenario::resolve(a)).collect()
}

/// One environment per worker slot, scenarios assigned round-robin, each
/// worker on its own arrival seed.
fn build_envs(
    scenarios: &[Scenario],
    n_envs: usize,
    seed: u64,
) -> Result<Vec<Environment>, HarnessError> {
    (0..n_envs)
        .map(|i| {
            let s = &scenarios[i % scenarios.len()];
            Environment::new(s.config.clone(), s.demand.clone(), seed.wrapping_add(i as u64))
                .map_err(HarnessError::from)
        })
        .collect()
}

#[derive(Serialize)]
struct Snapshot<'a> {
    command: &'a str,
    extractor: &'a str,
    seed: u64,
    total_steps: usize,
    n_envs: usize,
    net: NetSnapshot,
    ppo: PpoSnapshot,
    scenarios: Vec<ScenarioSnapshot>,
}

#[derive(Serialize)]
struct NetSnapshot {
    channels: usize,
    hidden: usize,
    feature: usize,
    attn_dim: usize,
    head_hidden: usize,
}

#[derive(Serialize)]
struct PpoSnapshot {
    lr: f64,
    buffer_size: usize,
    clip: f64,
    gamma: f64,
    value_coef: f64,
    epochs: usize,
    minibatch: usize,
    entropy_coef: f64,
    augment: bool,
    aug_transforms: [bool; 5],
}

#[derive(Serialize)]
struct ScenarioSnapshot {
    name: String,
    config_sha256: String,
    horizon_s: u32,
}

fn write_snapshot(
    path: &Path,
    command: &str,
    extractor: ExtractorKind,
    seed: u64,
    total_steps: usize,
    n_envs: usize,
    net: &NetConfig,
    ppo: &PpoConfig,
    scenarios: &[Scenario],
) -> Result<(), HarnessError> {
    let snapshot = Snapshot {
        command,
        extractor: extractor.label(),
        seed,
        total_steps,
        n_envs,
        net: NetSnapshot {
            channels: net.channels,
            hidden: net.hidden,
            feature: net.feature,
            attn_dim: net.attn_dim,
            head_hidden: net.head_hidden,
        },
        ppo: PpoSnapshot {
            lr: ppo.lr,
            buffer_size: ppo.buffer_size,
            clip: ppo.clip,
            gamma: ppo.gamma,
            value_coef: ppo.value_coef,
            epochs: ppo.epochs,
            minibatch: ppo.minibatch,
            entropy_coef: ppo.entropy_coef,
            augment: ppo.augment,
            aug_transforms: ppo.aug_transforms,
        },
        scenarios: scenarios
            .iter()
            .map(|s| ScenarioSnapshot {
                name: s.name.clone(),
                config_sha256: s.fingerprint(),
                horizon_s: s.demand.horizon_s,
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&snapshot).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn train(spec: &TrainSpec) -> Result<TrainOutputs, HarnessError> {
    let scenarios = resolve_all(&spec.scenarios)?;
    if spec.n_envs == 0 {
        return Err(HarnessError::Usage("need at least one environment".to_string()));
    }
    std::fs::create_dir_all(&spec.out_dir).map_err(|e| HarnessError::io(&spec.out_dir, e))?;

    let policy = Policy::new(spec.extractor, spec.net, spec.seed);
    let envs = build_envs(&scenarios, spec.n_envs, spec.seed)?;
    let mut trainer = Trainer::new(policy, envs, spec.ppo.clone(), spec.seed)?;
    trainer.train(spec.total_steps)?;

    let checkpoint = spec.out_dir.join(CHECKPOINT_FILE);
    let mut extra = BTreeMap::new();
    extra.insert("train.seed".to_string(), spec.seed.to_string());
    extra.insert("train.steps".to_string(), trainer.steps_done().to_string());
    extra.insert(
        "train.scenarios".to_string(),
        scenarios
            .iter()
            .map(|s| s.name.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    save_policy(&checkpoint, &trainer.policy, &extra)?;

    let curve = spec.out_dir.join(CURVE_FILE);
    write_curve(&curve, &trainer.history)?;

    let snapshot = spec.out_dir.join(SNAPSHOT_FILE);
    write_snapshot(
        &snapshot,
        "train",
        spec.extractor,
        spec.seed,
        spec.total_steps,
        spec.n_envs,
        &spec.net,
        &spec.ppo,
        &scenarios,
    )?;

    Ok(TrainOutputs {
        checkpoint,
        curve,
        snapshot,
        steps_done: trainer.steps_done(),
        episodes: trainer.history.len(),
    })
}

fn episode_rows(stats: &[EpisodeStats]) -> Vec<EpisodeReport> {
    stats
        .iter()
        .map(|s| EpisodeReport {
            seed: s.seed,
            steps: s.steps,
            raw_return: s.raw_return,
            avg_wait_s: s.avg_wait_s,
            arrivals: s.arrivals,
            departures: s.departures,
            changes: s.changes,
        })
        .collect()
}

pub fn evaluate(spec: &EvalSpec) -> Result<RunReport, HarnessError> {
    let start = Instant::now();
    let scenarios = resolve_all(&spec.scenarios)?;

    let loaded = match &spec.method {
        EvalMethod::Checkpoint(path) => {
            let (policy, meta) = load_policy(path)?;
            if let Some(expected) = spec.expect_extractor {
                if policy.kind != expected {
                    return Err(HarnessError::ExtractorMismatch {
                        expected: expected.label().to_string(),
                        found: policy.kind.label().to_string(),
                    });
                }
            }
            Some((policy, meta))
        }
        _ => None,
    };
    let embedded = match &spec.method {
        EvalMethod::FromScenario => {
            let specs: Vec<&ControllerSpec> = scenarios
                .iter()
                .map(|s| {
                    s.controller.as_ref().ok_or_else(|| {
                        HarnessError::Scenario {
                            name: s.name.clone(),
                            message: "no controller given on the command line or in the file"
                                .to_string(),
                        }
                    })
                })
                .collect::<Result<_, _>>()?;
            if specs.windows(2).any(|w| w[0] != w[1]) {
                return Err(HarnessError::Usage(
                    "scenario files embed different controllers; pick one with --controller"
                        .to_string(),
                ));
            }
            Some(specs[0].clone())
        }
        _ => None,
    };

    let method = spec.method_label.clone().unwrap_or_else(|| match &spec.method {
        EvalMethod::Baseline(c) => c.label(),
        EvalMethod::Checkpoint(_) => {
            let (policy, _) = loaded.as_ref().unwrap();
            format!("{}-policy", policy.kind.label())
        }
        EvalMethod::FromScenario => embedded.as_ref().unwrap().label(),
    });

    let mut rows = Vec::new();
    for scenario in &scenarios {
        let episodes = spec.episodes.unwrap_or(scenario.episodes);
        let seed_base = spec.eval_seed_base.unwrap_or(scenario.eval_seed_base);
        let seeds: Vec<u64> = (0..episodes as u64).map(|i| seed_base + i).collect();
        let mut env = Environment::new(scenario.config.clone(), scenario.demand.clone(), 0)?;

        let stats = match &spec.method {
            EvalMethod::Baseline(c) => {
                let mut controller = c.build(&scenario.config)?;
                run_episodes(&mut env, &seeds, controller.as_mut())?
            }
            EvalMethod::FromScenario => {
                let mut controller =
                    embedded.as_ref().unwrap().build(&scenario.config)?;
                run_episodes(&mut env, &seeds, controller.as_mut())?
            }
            EvalMethod::Checkpoint(_) => {
                let (policy, _) = loaded.as_ref().unwrap();
                let mut controller = GreedyPolicy::new(policy, scenario.config.clone());
                run_episodes(&mut env, &seeds, &mut controller)?
            }
        };
        let summary = summarize(&stats);
        rows.push(ScenarioReport {
            scenario: scenario.name.clone(),
            config_sha256: scenario.fingerprint(),
            eval_seed_base: seed_base,
            episodes,
            mean_wait_s: summary.mean_wait_s,
            wait_ci95_s: summary.wait_ci95_s,
            mean_raw_return: summary.mean_raw_return,
            mean_steps: summary.mean_steps,
            episode: episode_rows(&stats),
        });
    }

    let report = RunReport {
        command: "evaluate".to_string(),
        method,
        wall_time_s: start.elapsed().as_secs_f64(),
        scenarios: rows,
    };
    if let Some(dir) = spec.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
    }
    report::write_report(&spec.out, &report)?;
    Ok(report)
}

pub fn finetune(spec: &FinetuneSpec) -> Result<FinetuneOutputs, HarnessError> {
    let scenario = Scenario::resolve(&spec.scenario)?;
    if spec.n_envs == 0 {
        return Err(HarnessError::Usage("need at least one environment".to_string()));
    }
    std::fs::create_dir_all(&spec.out_dir).map_err(|e| HarnessError::io(&spec.out_dir, e))?;
    let scenarios = std::slice::from_ref(&scenario);

    let (mut policy, _) = load_policy(&spec.base)?;
    let kind = policy.kind;
    let net = policy.cfg;
    lora::inject(&mut policy, spec.rank, spec.alpha, spec.seed)?;

    let envs = build_envs(scenarios, spec.n_envs, spec.seed)?;
    let mut trainer = Trainer::new(policy, envs, spec.ppo.clone(), spec.seed)?;
    trainer.train(spec.total_steps)?;

    let adapter = spec.out_dir.join(ADAPTER_FILE);
    let mut extra = BTreeMap::new();
    extra.insert("finetune.seed".to_string(), spec.seed.to_string());
    extra.insert("finetune.steps".to_string(), trainer.steps_done().to_string());
    extra.insert("finetune.scenario".to_string(), scenario.name.clone());
    lora::save_adapter(&adapter, &trainer.policy, &extra)?;

    let curve = spec.out_dir.join(CURVE_FILE);
    write_curve(&curve, &trainer.history)?;

    let scratch_curve = match spec.scratch_steps {
        None => None,
        Some(steps) => {
            let policy = Policy::new(kind, net, spec.seed);
            let envs = build_envs(scenarios, spec.n_envs, spec.seed)?;
            let mut scratch = Trainer::new(policy, envs, spec.ppo.clone(), spec.seed)?;
            scratch.train(steps)?;
            let path = spec.out_dir.join(SCRATCH_CURVE_FILE);
            write_curve(&path, &scratch.history)?;
            Some(path)
        }
    };

    Ok(FinetuneOutputs {
        adapter,
        curve,
        scratch_curve,
        steps_done: trainer.steps_done(),
    })
}

/// Loads the named reports and renders the comparison table, optionally
/// writing it to a file.
pub fn compare(paths: &[PathBuf], out: Option<&Path>) -> Result<String, HarnessError> {
    let reports: Vec<RunReport> = paths
        .iter()
        .map(|p| report::read_report(p))
        .collect::<Result<_, _>>()?;
    let table = report::compare(&reports)?;
    if let Some(path) = out {
        std::fs::write(path, &table).map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use greenlight::ppo::read_curve;

    fn toy_ppo() -> PpoConfig {
        PpoConfig {
            buffer_size: 60,
            minibatch: 30,
            epochs: 2,
            warmup_rewards: 16,
            ..PpoConfig::default()
        }
    }

    fn toy_net() -> NetConfig {
        NetConfig {
            channels: 2,
            hidden: 4,
            feature: 8,
            attn_dim: 4,
            head_hidden: 4,
        }
    }

    fn short_scenario(dir: &Path, name: &str) -> String {
        let path = dir.join(format!("{name}.toml"));
        std::fs::write(
            &path,
            r#"
[intersection]
preset = "INT-3"

[demand]
seed = 9
horizon_s = 300

[run]
episodes = 2
eval_seed_base = 400
"#,
        )
        .unwrap();
        path.to_string_lossy().into_owned()
    }

    #[test]
    fn train_writes_checkpoint_curve_and_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let arg = short_scenario(dir.path(), "toy");
        let out_dir = dir.path().join("run/out");
        let spec = TrainSpec {
            scenarios: vec![arg],
            extractor: ExtractorKind::Cnn,
            net: toy_net(),
            ppo: toy_ppo(),
            total_steps: 120,
            n_envs: 2,
            seed: 5,
            out_dir: out_dir.clone(),
        };
        let outputs = train(&spec).unwrap();
        assert_eq!(outputs.steps_done, 120);
        assert!(outputs.checkpoint.is_file());
        let (policy, meta) = load_policy(&outputs.checkpoint).unwrap();
        assert_eq!(policy.kind, ExtractorKind::Cnn);
        assert_eq!(meta["train.steps"], "120");
        let curve = read_curve(&outputs.curve).unwrap();
        assert_eq!(curve.len(), outputs.episodes);
        let snapshot = std::fs::read_to_string(&outputs.snapshot).unwrap();
        assert!(snapshot.contains("command = \"train\""));
        assert!(snapshot.contains("config_sha256"));
    }

    #[test]
    fn same_seed_training_reproduces_curves_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let arg = short_scenario(dir.path(), "toy");
        let run = |out: &Path| {
            let spec = TrainSpec {
                scenarios: vec![arg.clone()],
                extractor: ExtractorKind::Cnn,
                net: toy_net(),
                ppo: toy_ppo(),
                total_steps: 120,
                n_envs: 2,
                seed: 5,
                out_dir: out.to_path_buf(),
            };
            train(&spec).unwrap()
        };
        let a = run(&dir.path().join("a"));
        let b = run(&dir.path().join("b"));
        let curve_a = std::fs::read(&a.curve).unwrap();
        let curve_b = std::fs::read(&b.curve).unwrap();
        assert_eq!(curve_a, curve_b);
        let ck_a = std::fs::read(&a.checkpoint).unwrap();
        let ck_b = std::fs::read(&b.checkpoint).unwrap();
        assert_eq!(ck_a, ck_b);
    }

    #[test]
    fn evaluate_runs_baselines_and_checkpoints_on_matched_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let arg = short_scenario(dir.path(), "toy");
        let trained = train(&TrainSpec {
            scenarios: vec![arg.clone()],
            extractor: ExtractorKind::Cnn,
            net: toy_net(),
            ppo: toy_ppo(),
            total_steps: 60,
            n_envs: 1,
            seed: 3,
            out_dir: dir.path().join("train"),
        })
        .unwrap();

        let fix = evaluate(&EvalSpec {
            method: EvalMethod::Baseline(ControllerSpec::parse("fixtime-30").unwrap()),
            method_label: None,
            expect_extractor: None,
            scenarios: vec![arg.clone()],
            episodes: None,
            eval_seed_base: None,
            out: dir.path().join("fix.toml"),
        })
        .unwrap();
        assert_eq!(fix.method, "FixTime-30");
        assert_eq!(fix.scenarios.len(), 1);
        assert_eq!(fix.scenarios[0].episodes, 2);
        assert_eq!(fix.scenarios[0].episode[0].seed, 400);

        let learned = evaluate(&EvalSpec {
            method: EvalMethod::Checkpoint(trained.checkpoint.clone()),
            method_label: None,
            expect_extractor: Some(ExtractorKind::Cnn),
            scenarios: vec![arg.clone()],
            episodes: None,
            eval_seed_base: None,
            out: dir.path().join("learned.toml"),
        })
        .unwrap();
        assert_eq!(learned.method, "cnn-policy");
        assert_eq!(
            learned.scenarios[0].config_sha256,
            fix.scenarios[0].config_sha256
        );

        let table = compare(
            &[dir.path().join("fix.toml"), dir.path().join("learned.toml")],
            None,
        )
        .unwrap();
        assert!(table.contains("FixTime-30"));
        assert!(table.contains("cnn-policy"));
    }

    #[test]
    fn evaluate_rejects_extractor_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let arg = short_scenario(dir.path(), "toy");
        let trained = train(&TrainSpec {
            scenarios: vec![arg.clone()],
            extractor: ExtractorKind::Cnn,
            net: toy_net(),
            ppo: toy_ppo(),
            total_steps: 60,
            n_envs: 1,
            seed: 3,
            out_dir: dir.path().join("train"),
        })
        .unwrap();
        let err = evaluate(&EvalSpec {
            method: EvalMethod::Checkpoint(trained.checkpoint),
            method_label: None,
            expect_extractor: Some(ExtractorKind::Rnn),
            scenarios: vec![arg],
            episodes: None,
            eval_seed_base: None,
            out: dir.path().join("x.toml"),
        })
        .unwrap_err();
        assert!(err.to_string().contains("cnn"), "{err}");
    }

    #[test]
    fn zero_step_finetune_persists_a_zero_delta_adapter() {
        let dir = tempfile::tempdir().unwrap();
        let arg = short_scenario(dir.path(), "toy");
        let trained = train(&TrainSpec {
            scenarios: vec![arg.clone()],
            extractor: ExtractorKind::Cnn,
            net: toy_net(),
            ppo: toy_ppo(),
            total_steps: 60,
            n_envs: 1,
            seed: 3,
            out_dir: dir.path().join("train"),
        })
        .unwrap();

        let outputs = finetune(&FinetuneSpec {
            base: trained.checkpoint.clone(),
            scenario: arg,
            rank: 2,
            alpha: 1.0,
            ppo: toy_ppo(),
            total_steps: 0,
            n_envs: 1,
            seed: 7,
            scratch_steps: None,
            out_dir: dir.path().join("ft"),
        })
        .unwrap();
        assert_eq!(outputs.steps_done, 0);

        let (mut base, _) = load_policy(&trained.checkpoint).unwrap();
        let before = base.store.fingerprint_all();
        lora::load_adapter(&outputs.adapter, &mut base).unwrap();
        lora::merge(&mut base);
        assert_eq!(base.store.fingerprint_all(), before);
    }

    #[test]
    fn finetune_scratch_control_shares_environment_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let arg = short_scenario(dir.path(), "toy");
        let trained = train(&TrainSpec {
            scenarios: vec![arg.clone()],
            extractor: ExtractorKind::Cnn,
            net: toy_net(),
            ppo: toy_ppo(),
            total_steps: 60,
            n_envs: 1,
            seed: 3,
            out_dir: dir.path().join("train"),
        })
        .unwrap();
        let outputs = finetune(&FinetuneSpec {
            base: trained.checkpoint,
            scenario: arg,
            rank: 2,
            alpha: 1.0,
            ppo: toy_ppo(),
            total_steps: 120,
            n_envs: 2,
            seed: 11,
            scratch_steps: Some(120),
            out_dir: dir.path().join("ft"),
        })
        .unwrap();
        let tuned = read_curve(&outputs.curve).unwrap();
        let scratch = read_curve(&outputs.scratch_curve.unwrap()).unwrap();
        assert!(!tuned.is_empty() && !scratch.is_empty());
        let seeds = |records: &[greenlight::ppo::EpisodeRecord]| {
            records
                .iter()
                .map(|r| (r.env_id, r.seed))
                .collect::<Vec<_>>()
        };
        let shared = tuned.len().min(scratch.len());
        assert_eq!(seeds(&tuned[..shared]), seeds(&scratch[..shared]));
    }
}
