//! `tira`: train task-invariant abstract rewards from demonstrations, carry
//! them to new task variants, adapt them across state spaces, and inspect
//! the learned artifacts. Every command takes a JSON config (or a named
//! preset), writes its outputs under a run directory with a manifest, and
//! exits nonzero with a machine-readable JSON error on failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tira_core::adapt::{one_shot_adapt, zero_shot_adapt, TargetAdapter};
use tira_core::config::{preset, RunConfig, PRESET_NAMES};
use tira_core::critic::{fit_critic, w1_estimate, Critic};
use tira_core::diag::{
    compare_w1, export_embeddings, reward_correlation, semantic_profile, transferability_audit,
};
use tira_core::env::{make_environment, TaskSpec, Trajectory};
use tira_core::io::{
    load_json, load_trajectories, save_json, save_trajectories, RunManifest,
};
use tira_core::policy::AgentPolicy;
use tira_core::rng::module_stream;
use tira_core::trainer::{
    generate_preset_experts, train_trairl, transfer_test, LearnerSnapshot, TrainedBundle,
};
use tira_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tira", version, about = "Transferable abstract-reward laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that needs a configuration.
#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file (see README for the schema).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Override the master seed from the config or preset.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::MissingData(format!("cannot read {}: {e}", path.display()))
                })?;
                RunConfig::from_json(&text)?
            }
            (None, Some(name)) => preset(name, self.seed.unwrap_or(0))?,
            _ => {
                return Err(Error::Config(format!(
                    "exactly one of --config or --preset is required (presets: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations for every task of a configuration.
    GenExpert {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for the per-task trajectory files.
        #[arg(long)]
        out: PathBuf,
        /// Trajectories per task (default: the config's experts_per_task).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the shared abstraction, critic, reward, and per-task learners.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Directory of experts-<task>.jsonl files; generated when omitted.
        #[arg(long)]
        experts_dir: Option<PathBuf>,
    },
    /// Retrain a fresh policy in a target task from a trained bundle's reward.
    Transfer {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory holding bundle.json.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target task id (default: every target in the config).
        #[arg(long)]
        target: Option<String>,
    },
    /// Fit a target encoder/decoder for a state space the bundle cannot read.
    Adapt {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: AdaptMode,
        /// Trajectory file with exactly one target expert (one-shot mode).
        #[arg(long)]
        expert: Option<PathBuf>,
        /// Trajectory file of target learner rollouts.
        #[arg(long)]
        rollouts: PathBuf,
        /// Goal feature indices, comma separated (zero-shot mode).
        #[arg(long, value_delimiter = ',')]
        goal_dims: Vec<usize>,
        /// Expert-level values for the goal features (zero-shot mode).
        #[arg(long, value_delimiter = ',')]
        goal_values: Vec<f64>,
        /// Adaptation gradient steps.
        #[arg(long, default_value_t = 200)]
        budget: usize,
        /// Directory of experts-<task>.jsonl for head selection; generated
        /// when omitted.
        #[arg(long)]
        experts_dir: Option<PathBuf>,
    },
    /// Inspect a trained bundle.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        which: Diagnostic,
        /// First trajectory file (w1: side A; audit: target experts;
        /// semantic/embeddings/correlation: the states or rollouts).
        #[arg(long)]
        a: Option<PathBuf>,
        /// Second trajectory file (w1: side B; audit: source experts).
        #[arg(long)]
        b: Option<PathBuf>,
        /// Third trajectory file (audit: source learner rollouts).
        #[arg(long)]
        c: Option<PathBuf>,
        /// Audit tolerance ε (default: twice the measured source
        /// learner-expert distance).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Audit split α in (0,1).
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Perturbation size for the semantic profile.
        #[arg(long, default_value_t = 1.0)]
        perturbation: f64,
        /// Task id for reward correlation (must have a trained learner).
        #[arg(long)]
        task: Option<String>,
    },
    /// Emit (x, y) series files from a bundle's training history.
    PlotData {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train ablated variants and tabulate their transfer performance.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        which: Ablation,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AdaptMode {
    OneShot,
    ZeroShot,
}

#[derive(Clone, Copy, ValueEnum)]
enum Diagnostic {
    W1,
    Audit,
    Semantic,
    Correlation,
    Embeddings,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    NoVae,
    NoWgan,
    NoF,
    LambdaSweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let payload = serde_json::json!({
                "error": err.to_string(),
                "kind": kind,
                "code": code,
            });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}

/// Map error classes to distinct exit codes: 2 config/schema, 3 missing
/// inputs or checkpoints, 4 non-finite aborts, 5 anything else.
fn classify(err: &Error) -> (u8, &'static str) {
    match err {
        Error::Config(_) | Error::Dimension(_) | Error::Json(_) | Error::UnknownTask(_) => {
            (2, "config")
        }
        Error::MissingData(_) | Error::Io(_) | Error::Untrained(_) => (3, "missing-input"),
        Error::NonFinite(_) => (4, "non-finite"),
        Error::EmptyBatch(_) | Error::Unsupported(_) => (5, "internal"),
    }
}

/// Resolve an output directory against the optional output-root override.
fn out_dir(out: &Path) -> PathBuf {
    match std::env::var_os("TIRA_OUT_ROOT") {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

fn expert_path(dir: &Path, task_id: &str) -> PathBuf {
    dir.join(format!("experts-{task_id}.jsonl"))
}

/// Per-task expert sets: read from `dir` when given, generated otherwise.
fn source_experts(
    cfg: &RunConfig,
    dir: Option<&Path>,
) -> Result<BTreeMap<String, Vec<Trajectory>>> {
    let mut experts = BTreeMap::new();
    for spec in &cfg.sources {
        let trajs = match dir {
            Some(d) => load_trajectories(&expert_path(d, &spec.task_id))?,
            None => generate_preset_experts(spec, cfg.experts_per_task, cfg.master_seed)?,
        };
        experts.insert(spec.task_id.clone(), trajs);
    }
    Ok(experts)
}

fn load_bundle(dir: &Path) -> Result<TrainedBundle> {
    load_json(&dir.join("bundle.json"))
}

fn pooled_states(trajs: &[Trajectory]) -> Vec<Vec<f64>> {
    trajs.iter().flat_map(|t| t.states.iter().cloned()).collect()
}

fn encode_all(bundle: &TrainedBundle, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    states.iter().map(|s| bundle.vae.encode_mean(s)).collect()
}

fn require(path: &Option<PathBuf>, flag: &str, purpose: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("--{flag} is required for {purpose}")))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenExpert { cfg, out, n } => cmd_gen_expert(&cfg.load()?, &out_dir(&out), n),
        Command::Train {
            cfg,
            out,
            experts_dir,
        } => cmd_train(&cfg.load()?, &out_dir(&out), experts_dir.as_deref()).map(|_| ()),
        Command::Transfer {
            cfg,
            bundle,
            out,
            target,
        } => cmd_transfer(&cfg.load()?, &bundle, &out_dir(&out), target.as_deref()),
        Command::Adapt {
            cfg,
            bundle,
            out,
            mode,
            expert,
            rollouts,
            goal_dims,
            goal_values,
            budget,
            experts_dir,
        } => cmd_adapt(
            &cfg.load()?,
            &bundle,
            &out_dir(&out),
            mode,
            expert.as_deref(),
            &rollouts,
            &goal_dims,
            &goal_values,
            budget,
            experts_dir.as_deref(),
        ),
        Command::Diagnose {
            cfg,
            bundle,
            out,
            which,
            a,
            b,
            c,
            epsilon,
            alpha,
            perturbation,
            task,
        } => cmd_diagnose(
            &cfg.load()?,
            &bundle,
            &out_dir(&out),
            which,
            DiagnoseInputs {
                a,
                b,
                c,
                epsilon,
                alpha,
                perturbation,
                task,
            },
        ),
        Command::PlotData { bundle, out } => cmd_plot_data(&bundle, &out_dir(&out)),
        Command::Ablate { cfg, out, which } => cmd_ablate(&cfg.load()?, &out_dir(&out), which),
    }
}

fn cmd_gen_expert(cfg: &RunConfig, out: &Path, n: Option<usize>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let n = n.unwrap_or(cfg.experts_per_task);
    let mut manifest = RunManifest::new(cfg)?;
    for spec in cfg.sources.iter().chain(&cfg.targets) {
        let trajs = generate_preset_experts(spec, n, cfg.master_seed)?;
        let path = expert_path(out, &spec.task_id);
        save_trajectories(&trajs, &path)?;
        manifest.record_checkpoint(
            &format!("experts-{}", spec.task_id),
            path.file_name().unwrap().to_string_lossy().as_ref(),
        );
        println!("wrote {} trajectories to {}", trajs.len(), path.display());
    }
    manifest.finalize();
    manifest.write(out)?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, experts_dir: Option<&Path>) -> Result<TrainedBundle> {
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(cfg)?;
    let experts = source_experts(cfg, experts_dir)?;
    for spec in &cfg.sources {
        let path = expert_path(out, &spec.task_id);
        save_trajectories(&experts[&spec.task_id], &path)?;
        manifest.record_input(&format!("experts-{}", spec.task_id), &path)?;
    }
    manifest.record_checkpoint("bundle", "bundle.json");
    manifest.write(out)?;

    let bundle = train_trairl(cfg, &experts, Some(&out.join("nan_dump.json")))?;
    save_json(&bundle, &out.join("bundle.json"))?;
    manifest.finalize();
    manifest.write(out)?;
    println!(
        "trained {} iterations; bundle at {}",
        bundle.history.len(),
        out.join("bundle.json").display()
    );
    Ok(bundle)
}

fn cmd_transfer(cfg: &RunConfig, bundle_dir: &Path, out: &Path, target: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let bundle = load_bundle(bundle_dir)?;
    let targets: Vec<&TaskSpec> = match target {
        Some(id) => vec![cfg
            .targets
            .iter()
            .chain(&cfg.sources)
            .find(|t| t.task_id == id)
            .ok_or_else(|| Error::UnknownTask(id.into()))?],
        None => cfg.targets.iter().collect(),
    };
    if targets.is_empty() {
        return Err(Error::Config("no target tasks in the configuration".into()));
    }
    for spec in targets {
        let report = transfer_test(&bundle, spec, cfg)?;
        let path = out.join(format!("transfer-{}.json", spec.task_id));
        save_json(&report, &path)?;
        println!(
            "{}: mean return {:.3} ± {:.3} over {} episodes",
            report.task_id, report.mean, report.std, report.episodes
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_adapt(
    cfg: &RunConfig,
    bundle_dir: &Path,
    out: &Path,
    mode: AdaptMode,
    expert: Option<&Path>,
    rollouts: &Path,
    goal_dims: &[usize],
    goal_values: &[f64],
    budget: usize,
    experts_dir: Option<&Path>,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let bundle = load_bundle(bundle_dir)?;
    let rollouts = load_trajectories(rollouts)?;
    let target_state_dim = rollouts
        .first()
        .and_then(|t| t.states.first())
        .map(Vec::len)
        .ok_or_else(|| Error::MissingData("rollout file holds no states".into()))?;

    let mut rng = module_stream(cfg.master_seed, "adapt", &[]);
    let mut adapter = TargetAdapter::new(&bundle, target_state_dim, &cfg.encoder_hidden, &mut rng)?;
    let report = match mode {
        AdaptMode::OneShot => {
            let expert_file = expert.ok_or_else(|| {
                Error::Config("--expert is required for one-shot adaptation".into())
            })?;
            let expert_trajs = load_trajectories(expert_file)?;
            if let Some(t) = expert_trajs.first() {
                adapter.select_source_head(&source_experts(cfg, experts_dir)?, t)?;
            }
            one_shot_adapt(&mut adapter, &expert_trajs, &rollouts, cfg, budget, &mut rng)?
        }
        AdaptMode::ZeroShot => zero_shot_adapt(
            &mut adapter,
            &rollouts,
            goal_dims,
            goal_values,
            cfg,
            budget,
            &mut rng,
        )?,
    };
    save_json(&adapter, &out.join("adapter.json"))?;
    save_json(&report, &out.join("adapt-report.json"))?;
    println!(
        "adapted in {} steps (recon {:.4}, distance term {:.4}, cycle {:.4}); adapter at {}",
        report.steps,
        report.vae_loss,
        report.wgan_loss,
        report.cycle,
        out.join("adapter.json").display()
    );
    Ok(())
}

struct DiagnoseInputs {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    c: Option<PathBuf>,
    epsilon: Option<f64>,
    alpha: f64,
    perturbation: f64,
    task: Option<String>,
}

fn cmd_diagnose(
    cfg: &RunConfig,
    bundle_dir: &Path,
    out: &Path,
    which: Diagnostic,
    inputs: DiagnoseInputs,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let bundle = load_bundle(bundle_dir)?;
    let mut rng = module_stream(cfg.master_seed, "diagnose", &[]);
    match which {
        Diagnostic::W1 => {
            let ta = load_trajectories(&require(&inputs.a, "a", "the w1 comparison")?)?;
            let tb = load_trajectories(&require(&inputs.b, "b", "the w1 comparison")?)?;
            let sa = pooled_states(&ta);
            let sb = pooled_states(&tb);
            let za = encode_all(&bundle, &sa)?;
            let zb = encode_all(&bundle, &sb)?;
            let mut abstract_critic =
                Critic::new(bundle.vae.code_dim, &cfg.critic_hidden, cfg.weights.lambda_gp, &mut rng)?;
            let mut ground_critic = Critic::new(
                sa.first().map_or(1, Vec::len),
                &cfg.critic_hidden,
                cfg.weights.lambda_gp,
                &mut rng,
            )?;
            let steps = 400;
            fit_critic(&mut abstract_critic, &za, &zb, steps, cfg.critic_opt.lr, 0.0, &mut rng)?;
            fit_critic(&mut ground_critic, &sa, &sb, steps, cfg.critic_opt.lr, 0.0, &mut rng)?;
            let report = compare_w1(&bundle.vae, &abstract_critic, &ground_critic, &ta, &tb, &mut rng)?;
            save_json(&report, &out.join("w1.json"))?;
            println!(
                "abstract {:.4} ± {:.4}, ground {:.4} ± {:.4}",
                report.w1_abstract, report.w1_abstract_std, report.w1_ground, report.w1_ground_std
            );
        }
        Diagnostic::Audit => {
            let zt = encode_all(
                &bundle,
                &pooled_states(&load_trajectories(&require(&inputs.a, "a", "the audit")?)?),
            )?;
            let zse = encode_all(
                &bundle,
                &pooled_states(&load_trajectories(&require(&inputs.b, "b", "the audit")?)?),
            )?;
            let zsl = encode_all(
                &bundle,
                &pooled_states(&load_trajectories(&require(&inputs.c, "c", "the audit")?)?),
            )?;
            let epsilon = match inputs.epsilon {
                Some(e) => e,
                None => 2.0 * w1_estimate(&bundle.critic, &zse, &zsl)?.abs(),
            };
            let report =
                transferability_audit(&bundle.critic, &zt, &zse, &zsl, epsilon, inputs.alpha, &mut rng)?;
            save_json(&report, &out.join("audit.json"))?;
            println!(
                "eq7 {:.4}, eq8 {:.4}, eq9 {:.4}, ε {:.4}: transferable = {}",
                report.eq7_lhs, report.eq8_lhs, report.eq9_lhs, report.epsilon, report.transferable
            );
        }
        Diagnostic::Semantic => {
            let states = pooled_states(&load_trajectories(&require(
                &inputs.a,
                "a",
                "the semantic profile",
            )?)?);
            let profile = semantic_profile(&bundle.vae, &states, inputs.perturbation)?;
            save_json(&profile, &out.join("semantic.json"))?;
            println!("profile: {profile:?}");
        }
        Diagnostic::Correlation => {
            let task = inputs
                .task
                .ok_or_else(|| Error::Config("--task is required for correlation".into()))?;
            let spec = cfg
                .sources
                .iter()
                .chain(&cfg.targets)
                .find(|s| s.task_id == task)
                .ok_or_else(|| Error::UnknownTask(task.clone()))?;
            let snapshot = bundle.learners.get(&task).ok_or_else(|| {
                Error::MissingData(format!("bundle has no trained learner for task {task}"))
            })?;
            let policy = match snapshot {
                LearnerSnapshot::Tabular(p) => AgentPolicy::Tabular(p),
                LearnerSnapshot::SacActor(net) => AgentPolicy::Actor(net),
            };
            let mut env = make_environment(spec)?;
            let coeff = reward_correlation(
                &bundle.reward,
                &bundle.vae,
                &mut env,
                &policy,
                cfg.eval_episodes,
                &mut rng,
            )?;
            save_json(&coeff, &out.join("correlation.json"))?;
            match coeff {
                Some(r) => println!("Pearson correlation {r:.4}"),
                None => println!("correlation undefined: a series has zero variance"),
            }
        }
        Diagnostic::Embeddings => {
            let trajs = load_trajectories(&require(&inputs.a, "a", "the embedding export")?)?;
            let csv = export_embeddings(&bundle.vae, &trajs)?;
            std::fs::write(out.join("embeddings.csv"), &csv)?;
            println!("wrote {} rows", csv.lines().count().saturating_sub(1));
        }
    }
    Ok(())
}

fn cmd_plot_data(bundle_dir: &Path, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let bundle = load_bundle(bundle_dir)?;
    let series = |name: &str, rows: Vec<(usize, f64)>| -> Result<()> {
        let mut csv = String::from("x,y\n");
        for (x, y) in rows {
            csv.push_str(&format!("{x},{y}\n"));
        }
        std::fs::write(out.join(format!("{name}.csv")), csv)?;
        Ok(())
    };
    let h = &bundle.history;
    series("vae_loss", h.iter().map(|r| (r.iter, r.vae_loss)).collect())?;
    series("critic_loss", h.iter().map(|r| (r.iter, r.critic_loss)).collect())?;
    series("mean_return", h.iter().map(|r| (r.iter, r.mean_return)).collect())?;
    let tasks: Vec<String> = h
        .first()
        .map(|r| r.w1.keys().cloned().collect())
        .unwrap_or_default();
    for task in tasks {
        series(
            &format!("w1-{task}"),
            h.iter().map(|r| (r.iter, r.w1[&task])).collect(),
        )?;
    }
    println!("series files in {}", out.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, out: &Path, which: Ablation) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let variants: Vec<(String, RunConfig)> = match which {
        Ablation::NoVae => {
            let mut c = cfg.clone();
            c.weights.lambda_vae = 0.0;
            vec![("full".into(), cfg.clone()), ("no-vae".into(), c)]
        }
        Ablation::NoWgan => {
            let mut c = cfg.clone();
            c.weights.lambda_wgan = 0.0;
            vec![("full".into(), cfg.clone()), ("no-wgan".into(), c)]
        }
        Ablation::NoF => {
            let mut c = cfg.clone();
            c.weights.lambda_f = 0.0;
            vec![("full".into(), cfg.clone()), ("no-f".into(), c)]
        }
        Ablation::LambdaSweep => [1.0, 5.0, 10.0, 100.0]
            .into_iter()
            .map(|gp| {
                let mut c = cfg.clone();
                c.weights.lambda_gp = gp;
                (format!("gp-{gp}"), c)
            })
            .collect(),
    };

    let mut table = Vec::new();
    for (name, variant) in variants {
        let dir = out.join(&name);
        let bundle = cmd_train(&variant, &dir, None)?;
        let source_return = bundle.history.last().map(|r| r.mean_return);
        let mut transfers = BTreeMap::new();
        for spec in &variant.targets {
            let report = transfer_test(&bundle, spec, &variant)?;
            transfers.insert(spec.task_id.clone(), report.mean);
        }
        table.push(serde_json::json!({
            "variant": name,
            "weights": variant.weights,
            "final_source_return": source_return,
            "transfer_returns": transfers,
        }));
    }
    save_json(&table, &out.join("ablation.json"))?;
    println!("{}", serde_json::to_string_pretty(&table)?);
    Ok(())
}
