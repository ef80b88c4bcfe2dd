//! Joint training loop: per iteration, collect learner rollouts into the
//! trajectory buffer, then update the shared abstraction (VAE), the
//! Wasserstein critic together with the encoder, the abstract reward, and
//! finally each source task's policy against the current reward; plus the
//! transfer procedure that retrains a fresh policy in a target task from the
//! learned reward alone.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::buffer::TrajectoryBuffer;
use crate::config::RunConfig;
use crate::critic::{critic_loss, w1_estimate, Critic};
use crate::env::{make_environment, Environment, Family, Role, TaskSpec, Trajectory};
use crate::error::{Error, Result};
use crate::net::{clip_global_norm, AdamW, Mlp};
use crate::policy::{
    evaluate_return, generate_experts, rollout, sac_step, soft_value_iteration, AgentPolicy,
    ActorCritic, TabularPolicy,
};
use crate::reward::{covariance_gradient_from_codes, shaped_reward, AbstractReward};
use crate::rng::module_stream;
use crate::vae::{
    abstract_samples, elbo_loss, encode_with_noise, encoder_grad_through_codes, MultiHeadVae,
};

/// Gradient-norm cap shared by all IRL parameter groups.
const IRL_GRAD_CLIP: f64 = 10.0;

/// Per-iteration log entry; serialized as one JSON line of the history.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Mean negated ELBO over the iteration's VAE steps.
    pub vae_loss: f64,
    /// Mean critic objective over the iteration's critic steps.
    pub critic_loss: f64,
    /// Duality-based distance estimate between expert and learner codes,
    /// per task, at the end of the iteration.
    pub w1: BTreeMap<String, f64>,
    /// True mean return of each source learner.
    pub returns: BTreeMap<String, f64>,
    /// Mean of `returns`, the early-stopping metric.
    pub mean_return: f64,
    /// Logged linear combination of the three objective terms.
    pub combined_loss: f64,
}

/// Serializable snapshot of a trained per-task policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum LearnerSnapshot {
    Tabular(TabularPolicy),
    /// Actor network of a continuous learner (outputs mean and log-std).
    SacActor(Mlp),
}

/// Everything the training loop produces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedBundle {
    pub vae: MultiHeadVae,
    pub critic: Critic,
    pub reward: AbstractReward,
    pub learners: BTreeMap<String, LearnerSnapshot>,
    pub history: Vec<IterationRecord>,
}

/// Evaluation report for a policy trained in a target task from the learned
/// reward alone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferReport {
    pub task_id: String,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

enum TaskLearner {
    Tabular(TabularPolicy),
    Sac(Box<ActorCritic>, Box<Environment>),
}

/// Expert demonstrations for one task from a converged controller: exact
/// soft-optimal stochastic policy for tabular tasks, full thrust plus action
/// noise for the thrust-bot (constant full thrust maximizes forward velocity,
/// so it is the converged controller for that family).
pub fn generate_preset_experts(spec: &TaskSpec, n: usize, master_seed: u64) -> Result<Vec<Trajectory>> {
    let mut rng = module_stream(master_seed, "experts", &[]);
    let mut env = make_environment(spec)?;
    match spec.family {
        Family::TabularGrid => {
            let mdp = crate::env::TabularMdp::from_grid_spec(spec)?;
            let policy =
                soft_value_iteration(&mdp, &mdp.true_reward, spec.discount, spec.horizon)?;
            generate_experts(&mut env, &AgentPolicy::Tabular(&policy), n, &mut rng)
        }
        Family::Pointbot => {
            let dim = spec.action_dim;
            let full = move |_: &[f64]| vec![1.0; dim];
            generate_experts(&mut env, &AgentPolicy::NoisyScript(&full, 0.1), n, &mut rng)
        }
    }
}

fn snapshot(learner: &TaskLearner) -> LearnerSnapshot {
    match learner {
        TaskLearner::Tabular(p) => LearnerSnapshot::Tabular(p.clone()),
        TaskLearner::Sac(ac, _) => LearnerSnapshot::SacActor(ac.actor.clone()),
    }
}

fn scaled(mut grad: Vec<f64>, weight: f64) -> Vec<f64> {
    if weight != 1.0 {
        for g in &mut grad {
            *g *= weight;
        }
    }
    clip_global_norm(&mut grad, IRL_GRAD_CLIP);
    grad
}

/// Write a diagnostic dump next to the failure and decorate the error.
fn nan_abort(dump_path: Option<&Path>, iter: usize, phase: &str, err: Error) -> Error {
    let msg = format!("iteration {iter}, {phase}: {err}");
    if let Some(path) = dump_path {
        let dump = serde_json::json!({
            "iteration": iter,
            "phase": phase,
            "error": err.to_string(),
        });
        let _ = std::fs::write(path, dump.to_string());
    }
    Error::NonFinite(msg)
}

/// Joint training over the configured source tasks. `experts` maps each
/// source task id to its demonstration set; `dump_path`, when given, receives
/// a diagnostic JSON if a loss turns non-finite.
pub fn train_trairl(
    cfg: &RunConfig,
    experts: &BTreeMap<String, Vec<Trajectory>>,
    dump_path: Option<&Path>,
) -> Result<TrainedBundle> {
    cfg.validate()?;
    let n = cfg.sources.len();
    for spec in &cfg.sources {
        let have = experts.get(&spec.task_id).map_or(0, Vec::len);
        if have == 0 {
            return Err(Error::MissingData(format!(
                "no expert trajectories for source task {}",
                spec.task_id
            )));
        }
    }
    let state_dim = cfg.sources[0].state_dim;
    if cfg.sources.iter().any(|s| s.state_dim != state_dim) {
        return Err(Error::Config(
            "source tasks must share one state dimension".into(),
        ));
    }

    let mut rng = module_stream(cfg.master_seed, "trainer", &[]);
    let task_ids = cfg.source_ids();

    // Shared abstraction, critic, and reward.
    let mut vae = MultiHeadVae::new(state_dim, cfg.d_z, &cfg.encoder_hidden, &task_ids, &mut rng)?;
    let mut critic = Critic::new(cfg.d_z, &cfg.critic_hidden, cfg.weights.lambda_gp, &mut rng)?;
    let mut reward = AbstractReward::new(cfg.d_z, &cfg.reward_hidden, &mut rng)?;

    let mut enc_opt = AdamW::new(cfg.vae_opt.lr, cfg.vae_opt.weight_decay, vae.encoder.params().len());
    let mut dec_opts: Vec<AdamW> = vae
        .decoders
        .iter()
        .map(|d| AdamW::new(cfg.vae_opt.lr, cfg.vae_opt.weight_decay, d.params().len()))
        .collect();
    let mut enc_wgan_opt = AdamW::new(
        cfg.critic_opt.lr,
        cfg.critic_opt.weight_decay,
        vae.encoder.params().len(),
    );
    let mut critic_opt = AdamW::new(
        cfg.critic_opt.lr,
        cfg.critic_opt.weight_decay,
        critic.net.params().len(),
    );
    let mut reward_opt = AdamW::new(
        cfg.reward_opt.lr,
        cfg.reward_opt.weight_decay,
        reward.net.params().len(),
    );

    // Buffer preloaded with the expert data; learners fill the rest as they go.
    let mut buffer = TrajectoryBuffer::new(cfg.learner_buffer_cap);
    for spec in &cfg.sources {
        for t in &experts[&spec.task_id] {
            let mut t = t.clone();
            t.role = Role::Expert;
            buffer.insert(t);
        }
    }

    // Per-task learners and their private environments.
    let mut learners: Vec<TaskLearner> = Vec::with_capacity(n);
    for spec in &cfg.sources {
        match spec.family {
            Family::TabularGrid => {
                let mdp = crate::env::TabularMdp::from_grid_spec(spec)?;
                learners.push(TaskLearner::Tabular(TabularPolicy::uniform(
                    mdp.num_states,
                    mdp.num_actions,
                )));
            }
            Family::Pointbot => {
                let mut ac = ActorCritic::new(
                    spec.state_dim,
                    spec.action_dim,
                    &cfg.sac.hidden,
                    cfg.sac.lr,
                    cfg.sac.entropy_coeff,
                    spec.discount,
                    cfg.sac.tau,
                    cfg.sac.replay_capacity,
                    cfg.sac.batch_size,
                    &mut rng,
                )?;
                ac.uniform_warmup = cfg.sac.uniform_warmup;
                ac.updates_per_step = cfg.sac.updates_per_step;
                learners.push(TaskLearner::Sac(Box::new(ac), Box::new(make_environment(spec)?)));
            }
        }
    }
    let mut rollout_envs: Vec<Environment> = cfg
        .sources
        .iter()
        .map(make_environment)
        .collect::<Result<_>>()?;

    // Per-(task, role) share of the balanced state batches.
    let share = (cfg.batch_size / (2 * n)).max(1);
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut best_return = f64::NEG_INFINITY;
    let mut stale_iters = 0usize;

    for iter in 0..cfg.iterations {
        // --- Learner rollouts into the buffer ---------------------------
        for (i, learner) in learners.iter().enumerate() {
            let policy = match learner {
                TaskLearner::Tabular(p) => AgentPolicy::Tabular(p),
                TaskLearner::Sac(ac, _) => AgentPolicy::Sac(ac),
            };
            let trajs = rollout(
                &mut rollout_envs[i],
                &policy,
                cfg.rollout_episodes_per_iteration,
                &mut rng,
            )?;
            buffer.insert_all(trajs);
        }

        // --- VAE: shared encoder + per-task decoders --------------------
        let mut vae_loss_acc = 0.0;
        if cfg.weights.lambda_vae > 0.0 {
            for _ in 0..cfg.vae_opt.steps_per_iteration {
                let mut enc_grad = vec![0.0; vae.encoder.params().len()];
                let mut step_loss = 0.0;
                for (i, spec) in cfg.sources.iter().enumerate() {
                    let mut states = buffer.sample_states(&spec.task_id, Role::Expert, share, &mut rng)?;
                    states.extend(buffer.sample_states(&spec.task_id, Role::Learner, share, &mut rng)?);
                    let g = elbo_loss(&vae, i, &states, cfg.weights.lambda_d, &mut rng)
                        .map_err(|e| nan_abort(dump_path, iter, "vae", e))?;
                    if !g.loss.is_finite() {
                        return Err(nan_abort(
                            dump_path,
                            iter,
                            "vae",
                            Error::NonFinite(format!("elbo loss {}", g.loss)),
                        ));
                    }
                    step_loss += g.loss / n as f64;
                    for (acc, v) in enc_grad.iter_mut().zip(&g.grad_encoder) {
                        *acc += cfg.weights.lambda_vae * v / n as f64;
                    }
                    let dg = scaled(g.grad_decoder, cfg.weights.lambda_vae);
                    dec_opts[i].step(vae.decoders[i].params_mut(), &dg)?;
                }
                clip_global_norm(&mut enc_grad, IRL_GRAD_CLIP);
                enc_opt.step(vae.encoder.params_mut(), &enc_grad)?;
                vae_loss_acc += step_loss / cfg.vae_opt.steps_per_iteration as f64;
            }
        }

        // --- Critic + encoder on the Wasserstein objective ---------------
        let mut critic_loss_acc = 0.0;
        if cfg.weights.lambda_wgan > 0.0 {
            for _ in 0..cfg.critic_opt.steps_per_iteration {
                // Balanced pooled batches with per-state provenance retained
                // so code gradients can flow back through the encoder.
                let mut exp_states = Vec::with_capacity(n * share);
                let mut lea_states = Vec::with_capacity(n * share);
                for spec in &cfg.sources {
                    exp_states.extend(buffer.sample_states(&spec.task_id, Role::Expert, share, &mut rng)?);
                    lea_states.extend(buffer.sample_states(&spec.task_id, Role::Learner, share, &mut rng)?);
                }
                let (z_e, noise_e) = encode_with_noise(&vae, &exp_states, &mut rng)?;
                let (z_l, noise_l) = encode_with_noise(&vae, &lea_states, &mut rng)?;

                // First iteration trains without the penalty so the critic
                // orients itself before the slope constraint binds.
                let warm = critic.steps_trained < cfg.critic_opt.steps_per_iteration as u64;
                let grads = if warm {
                    let mut unpenalized = critic.clone();
                    unpenalized.gp_weight = 0.0;
                    critic_loss(&unpenalized, &z_e, &z_l, &mut rng)
                } else {
                    critic_loss(&critic, &z_e, &z_l, &mut rng)
                }
                .map_err(|e| nan_abort(dump_path, iter, "critic", e))?;
                if !grads.loss.is_finite() {
                    return Err(nan_abort(
                        dump_path,
                        iter,
                        "critic",
                        Error::NonFinite(format!("critic loss {}", grads.loss)),
                    ));
                }
                critic_loss_acc += grads.loss / cfg.critic_opt.steps_per_iteration as f64;

                let cg = scaled(grads.d_params, cfg.weights.lambda_wgan);
                critic_opt.step(critic.net.params_mut(), &cg)?;
                critic.steps_trained += 1;

                let mut eg = encoder_grad_through_codes(&vae, &exp_states, &noise_e, &grads.d_z_expert)?;
                let eg_l = encoder_grad_through_codes(&vae, &lea_states, &noise_l, &grads.d_z_learner)?;
                for (a, b) in eg.iter_mut().zip(eg_l) {
                    *a += b;
                }
                let eg = scaled(eg, cfg.weights.lambda_wgan);
                enc_wgan_opt.step(vae.encoder.params_mut(), &eg)?;
            }
        }

        // --- Reward from the covariance form; abstraction frozen ---------
        let enc_before: Vec<f64> = vae.encoder.params().to_vec();
        let critic_before: Vec<f64> = critic.net.params().to_vec();
        if cfg.weights.lambda_f > 0.0 {
            for _ in 0..cfg.reward_opt.steps_per_iteration {
                let mut code_batches = Vec::with_capacity(n);
                for spec in &cfg.sources {
                    let mut states = buffer.sample_states(&spec.task_id, Role::Expert, share, &mut rng)?;
                    states.extend(buffer.sample_states(&spec.task_id, Role::Learner, share, &mut rng)?);
                    code_batches.push(abstract_samples(&vae, &states, true, &mut rng)?);
                }
                let grad = covariance_gradient_from_codes(&reward, &critic, &code_batches)
                    .map_err(|e| nan_abort(dump_path, iter, "reward", e))?;
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(nan_abort(
                        dump_path,
                        iter,
                        "reward",
                        Error::NonFinite("reward gradient".into()),
                    ));
                }
                let grad = scaled(grad, cfg.weights.lambda_f);
                reward_opt.step(reward.net.params_mut(), &grad)?;
            }
        }
        debug_assert_eq!(enc_before, vae.encoder.params(), "reward step touched encoder");
        debug_assert_eq!(critic_before, critic.net.params(), "reward step touched critic");
        if enc_before != vae.encoder.params() || critic_before != critic.net.params() {
            return Err(Error::NonFinite(
                "reward update changed frozen abstraction parameters".into(),
            ));
        }

        // --- Policy updates against the current reward -------------------
        for (i, spec) in cfg.sources.iter().enumerate() {
            match &mut learners[i] {
                TaskLearner::Tabular(policy) => {
                    let mdp = crate::env::TabularMdp::from_grid_spec(spec)?;
                    let mut r = vec![0.0; mdp.num_states];
                    for (s, ri) in r.iter_mut().enumerate() {
                        let z = vae.encode_mean(&crate::env::one_hot(s, mdp.num_states))?;
                        *ri = reward.value(&z)?;
                    }
                    *policy = soft_value_iteration(&mdp, &r, spec.discount, spec.horizon)?;
                }
                TaskLearner::Sac(ac, env) => {
                    let reward_fn = |s: &[f64]| shaped_reward(&reward, &vae, s, None, 0.0);
                    for _ in 0..cfg.sac.env_steps_per_iteration {
                        sac_step(ac, env, &reward_fn, &mut rng)
                            .map_err(|e| nan_abort(dump_path, iter, "sac", e))?;
                    }
                }
            }
        }

        // --- Evaluation, logging, early stopping -------------------------
        let mut w1 = BTreeMap::new();
        let mut returns = BTreeMap::new();
        for (i, spec) in cfg.sources.iter().enumerate() {
            let ze = abstract_samples(
                &vae,
                &buffer.sample_states(&spec.task_id, Role::Expert, share * 2, &mut rng)?,
                true,
                &mut rng,
            )?;
            let zl = abstract_samples(
                &vae,
                &buffer.sample_states(&spec.task_id, Role::Learner, share * 2, &mut rng)?,
                true,
                &mut rng,
            )?;
            let d = if critic.steps_trained > 0 {
                w1_estimate(&critic, &ze, &zl)?
            } else {
                0.0
            };
            w1.insert(spec.task_id.clone(), d);

            let mut eval_env = make_environment(spec)?;
            let policy = match &learners[i] {
                TaskLearner::Tabular(p) => AgentPolicy::Tabular(p),
                TaskLearner::Sac(ac, _) => AgentPolicy::SacMean(ac),
            };
            let (mean, _) = evaluate_return(&mut eval_env, &policy, cfg.eval_episodes, &mut rng)?;
            returns.insert(spec.task_id.clone(), mean);
        }
        let mean_return = returns.values().sum::<f64>() / n as f64;
        let f_loss = w1.values().sum::<f64>() / n as f64;
        let record = IterationRecord {
            iter,
            vae_loss: vae_loss_acc,
            critic_loss: critic_loss_acc,
            w1,
            returns,
            mean_return,
            combined_loss: combined_loss(
                (vae_loss_acc, f_loss, critic_loss_acc),
                &cfg.weights,
            ),
        };
        history.push(record);

        if mean_return > best_return {
            best_return = mean_return;
            stale_iters = 0;
        } else {
            stale_iters += 1;
            if stale_iters >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainedBundle {
        vae,
        critic,
        reward,
        learners: task_ids
            .iter()
            .cloned()
            .zip(learners.iter().map(snapshot))
            .collect(),
        history,
    })
}

/// Logged linear combination of the three objective terms; parameter groups
/// are updated from their own terms, so this is reporting only.
pub fn combined_loss(components: (f64, f64, f64), weights: &crate::config::LossWeights) -> f64 {
    let (l_vae, l_f, l_wgan) = components;
    weights.lambda_vae * l_vae - weights.lambda_f * l_f + weights.lambda_wgan * l_wgan
}

/// Train a fresh policy in `target` against the transferred reward (shaped
/// with the goal bonus when the target carries a goal region) and report its
/// true return. The target's own reward signal is never used for training.
pub fn transfer_test(
    bundle: &TrainedBundle,
    target: &TaskSpec,
    cfg: &RunConfig,
) -> Result<TransferReport> {
    target.validate()?;
    if target.state_dim != bundle.vae.state_dim {
        return Err(Error::Unsupported(format!(
            "target state dimension {} does not match the abstraction's {}; \
             adapt the encoder with the cross-domain transfer module first",
            target.state_dim, bundle.vae.state_dim
        )));
    }
    let mut rng = module_stream(cfg.master_seed, "transfer", &[]);
    let goal = target.goal_region.as_ref();
    let bonus = cfg.shaping_bonus;
    let reward_fn =
        |s: &[f64]| shaped_reward(&bundle.reward, &bundle.vae, s, goal, bonus);

    let mut env = make_environment(target)?;
    match target.family {
        Family::TabularGrid => {
            let mdp = crate::env::TabularMdp::from_grid_spec(target)?;
            let mut r = vec![0.0; mdp.num_states];
            for (s, ri) in r.iter_mut().enumerate() {
                *ri = reward_fn(&crate::env::one_hot(s, mdp.num_states))?;
            }
            let policy = soft_value_iteration(&mdp, &r, target.discount, target.horizon)?;
            let (mean, std) =
                evaluate_return(&mut env, &AgentPolicy::Tabular(&policy), cfg.eval_episodes, &mut rng)?;
            Ok(TransferReport {
                task_id: target.task_id.clone(),
                mean,
                std,
                episodes: cfg.eval_episodes,
            })
        }
        Family::Pointbot => {
            let mut ac = ActorCritic::new(
                target.state_dim,
                target.action_dim,
                &cfg.sac.hidden,
                cfg.sac.lr,
                cfg.sac.entropy_coeff,
                target.discount,
                cfg.sac.tau,
                cfg.sac.replay_capacity,
                cfg.sac.batch_size,
                &mut rng,
            )?;
            ac.uniform_warmup = cfg.sac.uniform_warmup;
            ac.updates_per_step = cfg.sac.transfer_updates_per_step;
            for _ in 0..cfg.sac.transfer_env_steps {
                sac_step(&mut ac, &mut env, &reward_fn, &mut rng)?;
            }
            let mut eval_env = make_environment(target)?;
            let (mean, std) = evaluate_return(
                &mut eval_env,
                &AgentPolicy::SacMean(&ac),
                cfg.eval_episodes,
                &mut rng,
            )?;
            Ok(TransferReport {
                task_id: target.task_id.clone(),
                mean,
                std,
                episodes: cfg.eval_episodes,
            })
        }
    }
}
