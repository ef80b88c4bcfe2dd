//! Cross-domain transfer when the target state space differs from the
//! sources': a fresh target encoder/decoder pair is fitted from a single
//! target expert trajectory (one-shot) or from goal-relabeled learner
//! rollouts (zero-shot), against three terms — the target reconstruction
//! objective, the Wasserstein objective under the frozen critic, and a cycle
//! loss that ties the target posterior to the source abstraction. The source
//! encoder, source decoders, critic, and reward are never updated here.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::critic::{w1_estimate, w1_input_grads, Critic};
use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::net::{clip_global_norm, AdamW};
use crate::reward::AbstractReward;
use crate::trainer::TrainedBundle;
use crate::vae::{
    elbo_loss, encode_with_noise, encoder_grad_through_codes, MultiHeadVae, LOG_VAR_MAX,
    LOG_VAR_MIN,
};

/// Gradient-norm cap for the adaptation updates.
const ADAPT_GRAD_CLIP: f64 = 10.0;

/// Trainable target encoder/decoder beside the frozen source artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetAdapter {
    /// Single-head VAE owning the target encoder and decoder (trainable).
    pub target_vae: MultiHeadVae,
    /// Source abstraction; read-only here.
    pub source_vae: MultiHeadVae,
    /// Index of the source decoder used in the cycle path.
    pub source_head: usize,
    /// Trained critic; read-only here.
    pub critic: Critic,
    /// Trained reward; read-only here, carried for the adapted bundle.
    pub reward: AbstractReward,
}

impl TargetAdapter {
    /// Fresh target encoder/decoder beside the bundle's frozen artifacts.
    pub fn new(
        bundle: &TrainedBundle,
        target_state_dim: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let target_vae = MultiHeadVae::new(
            target_state_dim,
            bundle.vae.code_dim,
            hidden,
            &["target".to_string()],
            rng,
        )?;
        Ok(TargetAdapter {
            target_vae,
            source_vae: bundle.vae.clone(),
            source_head: 0,
            critic: bundle.critic.clone(),
            reward: bundle.reward.clone(),
        })
    }

    /// Pick the source decoder whose task's expert codes sit closest (by the
    /// critic's distance estimate) to the target expert trajectory's codes
    /// under the current target encoder. Sets and returns the head index.
    pub fn select_source_head(
        &mut self,
        source_experts: &BTreeMap<String, Vec<Trajectory>>,
        target_expert: &Trajectory,
    ) -> Result<usize> {
        let z_target = target_expert
            .states
            .iter()
            .map(|s| self.target_vae.encode_mean(s))
            .collect::<Result<Vec<_>>>()?;
        let mut best = (0usize, f64::INFINITY);
        for (i, task_id) in self.source_vae.task_ids.iter().enumerate() {
            let trajs = source_experts
                .get(task_id)
                .ok_or_else(|| Error::UnknownTask(task_id.clone()))?;
            let z_source = trajs
                .iter()
                .flat_map(|t| t.states.iter())
                .map(|s| self.source_vae.encode_mean(s))
                .collect::<Result<Vec<_>>>()?;
            let score = w1_estimate(&self.critic, &z_source, &z_target)?.abs();
            if score < best.1 {
                best = (i, score);
            }
        }
        self.source_head = best.0;
        Ok(best.0)
    }
}

/// One adaptation run's mean per-term losses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptReport {
    pub steps: usize,
    pub vae_loss: f64,
    pub wgan_loss: f64,
    pub cycle: f64,
}

/// Cycle consistency between the target posterior and the source abstraction:
/// encode the target state to its posterior mean, decode it through the
/// chosen source decoder, re-encode with the frozen source encoder, and take
/// the Gaussian KL from the target posterior to that round-trip posterior,
/// averaged over the batch. Returns the loss and its gradient for the target
/// encoder parameters; the deterministic mean path makes both exact.
pub fn cycle_loss(
    adapter: &TargetAdapter,
    states: &[Vec<f64>],
    head: usize,
) -> Result<(f64, Vec<f64>)> {
    if states.is_empty() {
        return Err(Error::EmptyBatch("cycle_loss".into()));
    }
    if head >= adapter.source_vae.decoders.len() {
        return Err(Error::UnknownTask(format!(
            "no source decoder head {head} for the cycle path"
        )));
    }
    let d = adapter.target_vae.code_dim;
    if adapter.source_vae.code_dim != d {
        return Err(Error::Dimension(
            "target and source abstractions must share one code dimension".into(),
        ));
    }
    let enc_t = &adapter.target_vae.encoder;
    let enc_s = &adapter.source_vae.encoder;
    let dec_s = &adapter.source_vae.decoders[head];
    let b = states.len() as f64;

    let mut loss = 0.0;
    let mut upstreams = Vec::with_capacity(states.len());
    for s in states {
        let raw_t = enc_t.forward(s)?;
        let (mu, raw_lv) = raw_t.split_at(d);
        let lv: Vec<f64> = raw_lv.iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();

        let s_hat = dec_s.forward(mu)?;
        let raw_s = enc_s.forward(&s_hat)?;
        let (m, raw_q) = raw_s.split_at(d);
        let q: Vec<f64> = raw_q.iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();

        // KL(N(mu, e^lv) || N(m, e^q)), diagonal closed form.
        let mut kl = 0.0;
        let mut d_m = vec![0.0; d];
        let mut d_q = vec![0.0; d];
        let mut up_t = vec![0.0; 2 * d];
        for j in 0..d {
            let ratio = (lv[j] - q[j]).exp();
            let diff = mu[j] - m[j];
            let inv_var_q = (-q[j]).exp();
            kl += 0.5 * (ratio + diff * diff * inv_var_q + q[j] - lv[j] - 1.0);

            let d_mu_direct = diff * inv_var_q;
            d_m[j] = -d_mu_direct;
            d_q[j] = if raw_q[j] == q[j] {
                0.5 * (1.0 - ratio - diff * diff * inv_var_q)
            } else {
                0.0
            };
            up_t[j] = d_mu_direct;
            up_t[d + j] = if raw_lv[j] == lv[j] { 0.5 * (ratio - 1.0) } else { 0.0 };
        }
        loss += kl / b;

        // Chain the m/q dependence back through the frozen source nets to mu.
        let mut up_s = d_m;
        up_s.extend_from_slice(&d_q);
        let g_s_hat = enc_s.grad_input(&s_hat, &up_s)?;
        let g_mu_indirect = dec_s.grad_input(mu, &g_s_hat)?;
        for j in 0..d {
            up_t[j] += g_mu_indirect[j];
        }
        for v in &mut up_t {
            *v /= b;
        }
        upstreams.push(up_t);
    }
    let grad = enc_t.grad_params_batch(states, &upstreams)?;
    Ok((loss, grad))
}

fn pooled_states(trajs: &[Trajectory]) -> Vec<Vec<f64>> {
    trajs.iter().flat_map(|t| t.states.iter().cloned()).collect()
}

fn sample_batch(pool: &[Vec<f64>], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
}

/// Shared optimization loop for one-shot and zero-shot adaptation: `budget`
/// gradient steps on the target encoder/decoder against the weighted sum of
/// the reconstruction, Wasserstein (frozen critic), and cycle terms.
fn adapt_loop(
    adapter: &mut TargetAdapter,
    expert_states: &[Vec<f64>],
    learner_states: &[Vec<f64>],
    cfg: &RunConfig,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AdaptReport> {
    let mut report = AdaptReport {
        steps: budget,
        vae_loss: 0.0,
        wgan_loss: 0.0,
        cycle: 0.0,
    };
    if budget == 0 {
        return Ok(report);
    }
    if expert_states.is_empty() || learner_states.is_empty() {
        return Err(Error::EmptyBatch(
            "adaptation needs expert states and learner rollouts".into(),
        ));
    }
    let w = &cfg.weights;
    let share = (cfg.batch_size / 2).max(1);
    let mut enc_opt = AdamW::new(
        cfg.vae_opt.lr,
        cfg.vae_opt.weight_decay,
        adapter.target_vae.encoder.params().len(),
    );
    let mut dec_opt = AdamW::new(
        cfg.vae_opt.lr,
        cfg.vae_opt.weight_decay,
        adapter.target_vae.decoders[0].params().len(),
    );

    for _ in 0..budget {
        let expert_batch = sample_batch(expert_states, share, rng);
        let learner_batch = sample_batch(learner_states, share, rng);
        let mut enc_grad = vec![0.0; adapter.target_vae.encoder.params().len()];
        let mut dec_grad = vec![0.0; adapter.target_vae.decoders[0].params().len()];

        if w.lambda_vae > 0.0 {
            let mut mixed = expert_batch.clone();
            mixed.extend(learner_batch.iter().cloned());
            let g = elbo_loss(&adapter.target_vae, 0, &mixed, w.lambda_d, rng)?;
            report.vae_loss += g.loss / budget as f64;
            for (acc, v) in enc_grad.iter_mut().zip(&g.grad_encoder) {
                *acc += w.lambda_vae * v;
            }
            for (acc, v) in dec_grad.iter_mut().zip(&g.grad_decoder) {
                *acc += w.lambda_vae * v;
            }
        }

        if w.lambda_wgan > 0.0 {
            let (z_e, noise_e) = encode_with_noise(&adapter.target_vae, &expert_batch, rng)?;
            let (z_l, noise_l) = encode_with_noise(&adapter.target_vae, &learner_batch, rng)?;
            // The encoder descends mean D(learner) - mean D(expert) under the
            // frozen critic, pulling target expert codes into the high-score
            // region the source experts occupy.
            let (d_e, d_l) = w1_input_grads(&adapter.critic, &z_e, &z_l)?;
            let neg = |g: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                g.into_iter()
                    .map(|row| row.into_iter().map(|v| -v).collect())
                    .collect()
            };
            let g_e = encoder_grad_through_codes(
                &adapter.target_vae,
                &expert_batch,
                &noise_e,
                &neg(d_e),
            )?;
            let g_l = encoder_grad_through_codes(
                &adapter.target_vae,
                &learner_batch,
                &noise_l,
                &neg(d_l),
            )?;
            for (acc, (a, b)) in enc_grad.iter_mut().zip(g_e.iter().zip(&g_l)) {
                *acc += w.lambda_wgan * (a + b);
            }
            report.wgan_loss += -w1_estimate(&adapter.critic, &z_e, &z_l)? / budget as f64;
        }

        if w.lambda_cycle > 0.0 {
            let (lc, gc) = cycle_loss(adapter, &expert_batch, adapter.source_head)?;
            report.cycle += lc / budget as f64;
            for (acc, v) in enc_grad.iter_mut().zip(&gc) {
                *acc += w.lambda_cycle * v;
            }
        }

        clip_global_norm(&mut enc_grad, ADAPT_GRAD_CLIP);
        clip_global_norm(&mut dec_grad, ADAPT_GRAD_CLIP);
        enc_opt.step(adapter.target_vae.encoder.params_mut(), &enc_grad)?;
        dec_opt.step(adapter.target_vae.decoders[0].params_mut(), &dec_grad)?;
    }
    Ok(report)
}

/// One-shot adaptation: fit the target encoder/decoder from exactly one
/// target expert trajectory plus learner rollouts, critic and reward frozen.
pub fn one_shot_adapt(
    adapter: &mut TargetAdapter,
    target_expert: &[Trajectory],
    learner_rollouts: &[Trajectory],
    cfg: &RunConfig,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AdaptReport> {
    if target_expert.len() != 1 {
        return Err(Error::Config(format!(
            "one-shot adaptation takes exactly one expert trajectory, got {}",
            target_expert.len()
        )));
    }
    let expert_states = pooled_states(target_expert);
    let learner_states = pooled_states(learner_rollouts);
    adapt_loop(adapter, &expert_states, &learner_states, cfg, budget, rng)
}

/// Copy of `traj` with the goal-criterion state features overwritten by
/// expert-level values; every other feature is untouched.
pub fn zero_shot_relabel(
    traj: &Trajectory,
    dims: &[usize],
    expert_values: &[f64],
) -> Result<Trajectory> {
    if dims.len() != expert_values.len() {
        return Err(Error::Dimension(format!(
            "{} goal dims but {} expert values",
            dims.len(),
            expert_values.len()
        )));
    }
    let mut out = traj.clone();
    for state in &mut out.states {
        for (&dim, &value) in dims.iter().zip(expert_values) {
            if dim >= state.len() {
                return Err(Error::Dimension(format!(
                    "goal dim {dim} out of range for state width {}",
                    state.len()
                )));
            }
            state[dim] = value;
        }
    }
    Ok(out)
}

/// Zero-shot adaptation: no target expert exists, so learner rollouts
/// relabeled to expert-level goal features play the expert side of the same
/// objective used for one-shot adaptation.
pub fn zero_shot_adapt(
    adapter: &mut TargetAdapter,
    learner_rollouts: &[Trajectory],
    dims: &[usize],
    expert_values: &[f64],
    cfg: &RunConfig,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AdaptReport> {
    let relabeled = learner_rollouts
        .iter()
        .map(|t| zero_shot_relabel(t, dims, expert_values))
        .collect::<Result<Vec<_>>>()?;
    let expert_states = pooled_states(&relabeled);
    let learner_states = pooled_states(learner_rollouts);
    adapt_loop(adapter, &expert_states, &learner_states, cfg, budget, rng)
}

/// Bundle view of the adapted abstraction: the target encoder/decoder beside
/// the frozen critic and reward, ready for the standard transfer procedure.
pub fn adapted_bundle(adapter: &TargetAdapter) -> TrainedBundle {
    TrainedBundle {
        vae: adapter.target_vae.clone(),
        critic: adapter.critic.clone(),
        reward: adapter.reward.clone(),
        learners: BTreeMap::new(),
        history: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Role;
    use crate::net::{finite_diff_gradient, linear_mlp, Mlp};
    use crate::rng::module_stream;

    /// Swap map on R^2; its own inverse, exact in floating point.
    fn swap_rows() -> Vec<Vec<f64>> {
        vec![vec![0.0, 1.0], vec![1.0, 0.0]]
    }

    /// Encoder emitting mean = W·s and log-var = 0 (unit variance, unclamped).
    fn linear_encoder(w: &[Vec<f64>]) -> Mlp {
        let d = w.len();
        let in_dim = w[0].len();
        let mut rows = w.to_vec();
        rows.extend((0..d).map(|_| vec![0.0; in_dim]));
        linear_mlp(&rows).unwrap()
    }

    fn fixture_adapter(rng: &mut ChaCha8Rng) -> TargetAdapter {
        let enc = linear_encoder(&swap_rows());
        let dec = linear_mlp(&swap_rows()).unwrap();
        let source_vae = MultiHeadVae {
            encoder: enc.clone(),
            decoders: vec![dec.clone()],
            task_ids: vec!["src".into()],
            state_dim: 2,
            code_dim: 2,
        };
        let target_vae = MultiHeadVae {
            encoder: enc,
            decoders: vec![dec],
            task_ids: vec!["target".into()],
            state_dim: 2,
            code_dim: 2,
        };
        let mut critic = Critic::new(2, &[4], 10.0, rng).unwrap();
        critic.steps_trained = 1;
        let reward = AbstractReward::new(2, &[4], rng).unwrap();
        TargetAdapter {
            target_vae,
            source_vae,
            source_head: 0,
            critic,
            reward,
        }
    }

    fn random_adapter(state_dim: usize, code_dim: usize, rng: &mut ChaCha8Rng) -> TargetAdapter {
        let source_vae =
            MultiHeadVae::new(3, code_dim, &[6], &["a".into(), "b".into()], rng).unwrap();
        let target_vae =
            MultiHeadVae::new(state_dim, code_dim, &[5], &["target".into()], rng).unwrap();
        let mut critic = Critic::new(code_dim, &[4], 10.0, rng).unwrap();
        critic.steps_trained = 1;
        let reward = AbstractReward::new(code_dim, &[4], rng).unwrap();
        TargetAdapter {
            target_vae,
            source_vae,
            source_head: 0,
            critic,
            reward,
        }
    }

    fn traj(task_id: &str, role: Role, states: Vec<Vec<f64>>) -> Trajectory {
        Trajectory {
            task_id: task_id.into(),
            role,
            states,
            returns_true: None,
            actions: None,
        }
    }

    #[test]
    fn cycle_loss_is_exactly_zero_on_identity_round_trip() {
        let mut rng = module_stream(3, "adapt-fixture", &[]);
        let adapter = fixture_adapter(&mut rng);
        let states: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let (loss, grad) = cycle_loss(&adapter, &states, 0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn cycle_loss_is_nonnegative_for_random_adapters() {
        let mut rng = module_stream(4, "adapt-kl", &[]);
        for _ in 0..100 {
            let adapter = random_adapter(4, 2, &mut rng);
            for _ in 0..100 {
                let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let (loss, _) = cycle_loss(&adapter, &[s], 0).unwrap();
                assert!(loss >= -1e-12, "negative KL {loss}");
            }
        }
    }

    #[test]
    fn cycle_gradient_matches_finite_differences() {
        let mut rng = module_stream(5, "adapt-fd", &[]);
        let adapter = random_adapter(4, 3, &mut rng);
        let states: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let (_, grad) = cycle_loss(&adapter, &states, 0).unwrap();

        let base = adapter.target_vae.encoder.params().to_vec();
        let fd = finite_diff_gradient(
            |p| {
                let mut a = adapter.clone();
                a.target_vae.encoder.set_params(p.to_vec()).unwrap();
                cycle_loss(&a, &states, 0).unwrap().0
            },
            &base,
            1e-5,
        );
        let num: f64 = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den.max(1e-12) < 1e-3, "rel err {}", num / den.max(1e-12));
    }

    #[test]
    fn cycle_loss_rejects_missing_decoder_head() {
        let mut rng = module_stream(6, "adapt-head", &[]);
        let adapter = random_adapter(4, 2, &mut rng);
        let err = cycle_loss(&adapter, &[vec![0.0; 4]], 9).unwrap_err();
        assert!(err.to_string().contains("head"), "{err}");
    }

    #[test]
    fn one_shot_requires_exactly_one_expert_trajectory() {
        let mut rng = module_stream(7, "adapt-one", &[]);
        let mut adapter = random_adapter(4, 2, &mut rng);
        let cfg = crate::config::preset("cross-family", 7).unwrap();
        let two = vec![
            traj("t", Role::Expert, vec![vec![0.0; 4]]),
            traj("t", Role::Expert, vec![vec![0.0; 4]]),
        ];
        let err = one_shot_adapt(&mut adapter, &two, &[], &cfg, 1, &mut rng).unwrap_err();
        assert!(err.to_string().contains("one"), "{err}");
    }

    #[test]
    fn zero_budget_changes_nothing() {
        let mut rng = module_stream(8, "adapt-zero", &[]);
        let mut adapter = random_adapter(4, 2, &mut rng);
        let cfg = crate::config::preset("cross-family", 8).unwrap();
        let before_enc = adapter.target_vae.encoder.params().to_vec();
        let before_critic = adapter.critic.net.params().to_vec();
        let before_reward = adapter.reward.net.params().to_vec();
        let expert = vec![traj("t", Role::Expert, vec![vec![0.1; 4], vec![0.2; 4]])];
        let learner = vec![traj("t", Role::Learner, vec![vec![0.3; 4]])];
        let report = one_shot_adapt(&mut adapter, &expert, &learner, &cfg, 0, &mut rng).unwrap();
        assert_eq!(report.steps, 0);
        assert_eq!(adapter.target_vae.encoder.params(), &before_enc[..]);
        assert_eq!(adapter.critic.net.params(), &before_critic[..]);
        assert_eq!(adapter.reward.net.params(), &before_reward[..]);
    }

    #[test]
    fn adaptation_trains_target_nets_and_freezes_the_rest() {
        let mut rng = module_stream(9, "adapt-steps", &[]);
        let mut adapter = random_adapter(4, 2, &mut rng);
        let mut cfg = crate::config::preset("cross-family", 9).unwrap();
        cfg.batch_size = 8;
        let before_enc = adapter.target_vae.encoder.params().to_vec();
        let before_src = adapter.source_vae.encoder.params().to_vec();
        let before_critic = adapter.critic.net.params().to_vec();
        let before_reward = adapter.reward.net.params().to_vec();
        let expert = vec![traj(
            "t",
            Role::Expert,
            (0..6).map(|i| vec![i as f64 * 0.1; 4]).collect(),
        )];
        let learner = vec![traj(
            "t",
            Role::Learner,
            (0..6).map(|i| vec![-(i as f64) * 0.1; 4]).collect(),
        )];
        let report = one_shot_adapt(&mut adapter, &expert, &learner, &cfg, 3, &mut rng).unwrap();
        assert_eq!(report.steps, 3);
        assert!(report.cycle.is_finite() && report.vae_loss.is_finite());
        assert_ne!(adapter.target_vae.encoder.params(), &before_enc[..]);
        assert_eq!(adapter.source_vae.encoder.params(), &before_src[..]);
        assert_eq!(adapter.critic.net.params(), &before_critic[..]);
        assert_eq!(adapter.reward.net.params(), &before_reward[..]);
    }

    #[test]
    fn relabel_substitutes_goal_dims_only() {
        let t = traj(
            "t",
            Role::Learner,
            vec![vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 2.0, 3.0, 4.0]],
        );
        let out = zero_shot_relabel(&t, &[2], &[1.5]).unwrap();
        for (orig, new) in t.states.iter().zip(&out.states) {
            assert_eq!(new[2], 1.5);
            assert_eq!(new[0], orig[0]);
            assert_eq!(new[1], orig[1]);
            assert_eq!(new[3], orig[3]);
        }
        // Untouched original, identical copy for empty dims, range check.
        assert_eq!(t.states[0][2], 0.3);
        let same = zero_shot_relabel(&t, &[], &[]).unwrap();
        assert_eq!(same.states, t.states);
        assert!(zero_shot_relabel(&t, &[9], &[0.0]).is_err());
    }

    #[test]
    fn zero_shot_adapt_uses_relabeled_rollouts_as_expert_side() {
        let mut rng = module_stream(10, "adapt-zshot", &[]);
        let mut adapter = random_adapter(4, 2, &mut rng);
        let mut cfg = crate::config::preset("cross-family", 10).unwrap();
        cfg.batch_size = 8;
        let rollouts = vec![traj(
            "t",
            Role::Learner,
            (0..5).map(|i| vec![0.1 * i as f64; 4]).collect(),
        )];
        let before = adapter.target_vae.encoder.params().to_vec();
        let report =
            zero_shot_adapt(&mut adapter, &rollouts, &[1], &[2.0], &cfg, 2, &mut rng).unwrap();
        assert_eq!(report.steps, 2);
        assert_ne!(adapter.target_vae.encoder.params(), &before[..]);
    }

    #[test]
    fn source_head_selection_prefers_the_matching_task() {
        let mut rng = module_stream(11, "adapt-select", &[]);
        // Shared encoder for source and target: identical states give
        // identical codes, so the matching task scores an exact zero.
        let source_vae =
            MultiHeadVae::new(3, 2, &[6], &["a".into(), "b".into()], &mut rng).unwrap();
        let target_vae = MultiHeadVae {
            encoder: source_vae.encoder.clone(),
            decoders: vec![source_vae.decoders[0].clone()],
            task_ids: vec!["target".into()],
            state_dim: 3,
            code_dim: 2,
        };
        let mut critic = Critic::new(2, &[4], 10.0, &mut rng).unwrap();
        critic.steps_trained = 1;
        let reward = AbstractReward::new(2, &[4], &mut rng).unwrap();
        let mut adapter = TargetAdapter {
            target_vae,
            source_vae,
            source_head: 0,
            critic,
            reward,
        };
        let near: Vec<Vec<f64>> = (0..10).map(|i| vec![0.1 * i as f64; 3]).collect();
        let far: Vec<Vec<f64>> = (0..10).map(|i| vec![5.0 + 0.1 * i as f64; 3]).collect();
        let mut experts = BTreeMap::new();
        experts.insert("a".to_string(), vec![traj("a", Role::Expert, far)]);
        experts.insert("b".to_string(), vec![traj("b", Role::Expert, near.clone())]);
        let target = traj("target", Role::Expert, near);
        let head = adapter.select_source_head(&experts, &target).unwrap();
        assert_eq!(head, 1);
        assert_eq!(adapter.source_head, 1);
    }
}
