//! End-to-end checks of the `tira` binary: exit codes and machine-readable
//! errors, determinism of generated data, artifact layout, and the happy
//! path from training through transfer and plot export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tira_core::config::{preset, RunConfig};
use tira_core::critic::Critic;
use tira_core::env::{Role, Trajectory};
use tira_core::io::{load_json, save_json, save_trajectories, RunManifest};
use tira_core::reward::AbstractReward;
use tira_core::rng::module_stream;
use tira_core::trainer::{TrainedBundle, TransferReport};
use tira_core::vae::MultiHeadVae;

/// Run the built binary with the given arguments and environment overrides.
fn tira(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tira"));
    cmd.args(args);
    for (key, value) in envs {
        cmd.env(key, value);
    }
    cmd.output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A tabular configuration small enough to train inside a test.
fn tiny_config(seed: u64, iterations: usize) -> RunConfig {
    let mut cfg = preset("violation", seed).unwrap();
    cfg.iterations = iterations;
    cfg.batch_size = 32;
    cfg.experts_per_task = 4;
    cfg.learner_buffer_cap = 40;
    cfg.rollout_episodes_per_iteration = 2;
    cfg.eval_episodes = 2;
    cfg.vae_opt.steps_per_iteration = 2;
    cfg.critic_opt.steps_per_iteration = 2;
    cfg.reward_opt.steps_per_iteration = 2;
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

/// An untrained bundle over 3-dimensional states with 2-dimensional codes.
fn hand_bundle() -> TrainedBundle {
    let mut rng = module_stream(3, "cli-test", &[]);
    TrainedBundle {
        vae: MultiHeadVae::new(3, 2, &[4], &["t".into()], &mut rng).unwrap(),
        critic: Critic::new(2, &[4], 10.0, &mut rng).unwrap(),
        reward: AbstractReward::new(2, &[4], &mut rng).unwrap(),
        learners: BTreeMap::new(),
        history: Vec::new(),
    }
}

fn three_state_trajectory() -> Trajectory {
    Trajectory {
        task_id: "t".into(),
        role: Role::Expert,
        states: vec![vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.5], vec![0.4, 0.0, 2.0]],
        returns_true: None,
        actions: None,
    }
}

#[test]
fn unknown_preset_fails_with_config_code_and_json_error() {
    let out = tira(&["train", "--preset", "bogus", "--out", "/tmp/unused"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let payload: serde_json::Value =
        serde_json::from_slice(&out.stderr).expect("stderr is one JSON object");
    assert_eq!(payload["kind"], "config");
    assert_eq!(payload["code"], 2);
    assert!(payload["error"].as_str().unwrap().contains("unknown preset"));
}

#[test]
fn missing_bundle_fails_with_missing_input_code() {
    let tmp = tempfile::tempdir().unwrap();
    let nowhere = tmp.path().join("nowhere");
    let out = tira(
        &[
            "transfer",
            "--preset",
            "violation",
            "--bundle",
            nowhere.to_str().unwrap(),
            "--out",
            tmp.path().join("t").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    let payload: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(payload["kind"], "missing-input");
}

#[test]
fn config_and_preset_together_are_rejected() {
    let out = tira(
        &[
            "train",
            "--preset",
            "violation",
            "--config",
            "whatever.json",
            "--out",
            "/tmp/unused",
        ],
        &[],
    );
    assert!(!out.status.success());
}

#[test]
fn gen_expert_writes_identical_data_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        let out = tira(
            &[
                "gen-expert",
                "--preset",
                "violation",
                "--seed",
                "9",
                "--out",
                dir.to_str().unwrap(),
                "--n",
                "2",
            ],
            &[],
        );
        assert!(out.status.success(), "{}", stderr_of(&out));
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&a);
    run(&b);
    for task in ["grid-src-a", "grid-src-b", "grid-target"] {
        let name = format!("experts-{task}.jsonl");
        let fa = std::fs::read(a.join(&name)).unwrap();
        let fb = std::fs::read(b.join(&name)).unwrap();
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{task}");
    }
}

#[test]
fn train_zero_iterations_writes_bundle_and_finalized_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), &tiny_config(11, 0));
    let run_dir = tmp.path().join("run");
    let out = tira(
        &[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let bundle: TrainedBundle = load_json(&run_dir.join("bundle.json")).unwrap();
    assert!(bundle.history.is_empty());
    assert_eq!(bundle.vae.task_ids, ["grid-src-a", "grid-src-b"]);

    let manifest = RunManifest::read(&run_dir).unwrap();
    assert!(manifest.finished_unix.is_some());
    assert_eq!(manifest.input_hashes.len(), 2);
    assert!(manifest.checkpoints.contains_key("bundle"));
}

#[test]
fn train_transfer_and_plot_chain_produces_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), &tiny_config(13, 1));
    let run_dir = tmp.path().join("run");
    let out = tira(
        &[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));

    let tdir = tmp.path().join("transfer");
    let out = tira(
        &[
            "transfer",
            "--config",
            cfg_path.to_str().unwrap(),
            "--bundle",
            run_dir.to_str().unwrap(),
            "--out",
            tdir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report: TransferReport = load_json(&tdir.join("transfer-grid-target.json")).unwrap();
    assert_eq!(report.task_id, "grid-target");
    assert_eq!(report.episodes, 2);
    assert!(report.mean.is_finite());

    let pdir = tmp.path().join("plots");
    let out = tira(
        &[
            "plot-data",
            "--bundle",
            run_dir.to_str().unwrap(),
            "--out",
            pdir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    for name in [
        "vae_loss",
        "critic_loss",
        "mean_return",
        "w1-grid-src-a",
        "w1-grid-src-b",
    ] {
        let text = std::fs::read_to_string(pdir.join(format!("{name}.csv"))).unwrap();
        assert!(text.starts_with("x,y\n"), "{name}");
        assert_eq!(text.lines().count(), 2, "{name}: one header plus one row");
    }
}

#[test]
fn diagnose_w1_reports_exact_zero_for_identical_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    save_json(&hand_bundle(), &run_dir.join("bundle.json")).unwrap();
    let traj_path = tmp.path().join("states.jsonl");
    save_trajectories(&[three_state_trajectory()], &traj_path).unwrap();

    let ddir = tmp.path().join("diag");
    let out = tira(
        &[
            "diagnose",
            "--preset",
            "violation",
            "--bundle",
            run_dir.to_str().unwrap(),
            "--out",
            ddir.to_str().unwrap(),
            "--which",
            "w1",
            "--a",
            traj_path.to_str().unwrap(),
            "--b",
            traj_path.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report: serde_json::Value = load_json(&ddir.join("w1.json")).unwrap();
    assert_eq!(report["w1_abstract"], 0.0);
    assert_eq!(report["w1_ground"], 0.0);
}

#[test]
fn one_shot_adapt_without_expert_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    save_json(&hand_bundle(), &run_dir.join("bundle.json")).unwrap();
    let rollouts = tmp.path().join("rollouts.jsonl");
    save_trajectories(&[three_state_trajectory()], &rollouts).unwrap();

    let out = tira(
        &[
            "adapt",
            "--preset",
            "violation",
            "--bundle",
            run_dir.to_str().unwrap(),
            "--out",
            tmp.path().join("adapt").to_str().unwrap(),
            "--mode",
            "one-shot",
            "--rollouts",
            rollouts.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    let payload: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(payload["error"].as_str().unwrap().contains("--expert"));
}

#[test]
fn out_root_redirects_relative_output_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tira(
        &[
            "gen-expert",
            "--preset",
            "violation",
            "--out",
            "experts",
            "--n",
            "1",
        ],
        &[("TIRA_OUT_ROOT", tmp.path().to_str().unwrap())],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(tmp.path().join("experts").join("manifest.json").exists());
}
