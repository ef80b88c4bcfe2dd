//! Maximum-entropy RL backbone. Tabular tasks get exact finite-horizon soft
//! value iteration; continuous tasks get a soft actor-critic learner with a
//! tanh-squashed Gaussian actor and twin Q networks. Rollout and evaluation
//! helpers are shared across both.

use crate::env::{ActionChoice, Environment, Role, TabularMdp, Trajectory};
use crate::error::{Error, Result};
use crate::net::{clip_global_norm, AdamW, Mlp, OutputTransform, LN_2PI};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const GRAD_CLIP: f64 = 10.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-major [state][action] probabilities.
    pub action_probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        TabularPolicy {
            num_states,
            num_actions,
            action_probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_probs.len() != self.num_states * self.num_actions {
            return Err(Error::Dimension("policy table size mismatch".into()));
        }
        for s in 0..self.num_states {
            let row = self.row(s);
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::Config("negative action probability".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.action_probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn sample(&self, s: usize, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in self.row(s).iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        self.num_actions - 1
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-step soft-optimal policies for t = 0..horizon-1, via the backward
/// recursion V_H(s) = r(s); Q_t(s,a) = r(s) + discount * E[V_{t+1}];
/// V_t = logsumexp_a Q_t; pi_t(a|s) = exp(Q_t - V_t).
pub fn soft_value_iteration_stages(
    mdp: &TabularMdp,
    reward_over_states: &[f64],
    discount: f64,
    horizon: usize,
) -> Result<Vec<TabularPolicy>> {
    if reward_over_states.len() != mdp.num_states {
        return Err(Error::Dimension(format!(
            "reward vector has {} entries for {} states",
            reward_over_states.len(),
            mdp.num_states
        )));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let (n, na) = (mdp.num_states, mdp.num_actions);
    let mut v: Vec<f64> = reward_over_states.to_vec();
    let mut stages: Vec<TabularPolicy> = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut probs = vec![0.0; n * na];
        let mut v_next = vec![0.0; n];
        for s in 0..n {
            let mut q = vec![0.0; na];
            for a in 0..na {
                let ev: f64 = mdp
                    .trans(s, a)
                    .iter()
                    .zip(v.iter())
                    .map(|(p, vv)| p * vv)
                    .sum();
                q[a] = reward_over_states[s] + discount * ev;
            }
            let vs = log_sum_exp(&q);
            v_next[s] = vs;
            for a in 0..na {
                probs[s * na + a] = (q[a] - vs).exp();
            }
        }
        v = v_next;
        stages.push(TabularPolicy {
            num_states: n,
            num_actions: na,
            action_probs: probs,
        });
    }
    stages.reverse(); // recursion runs backward; stages[0] acts at t = 0
    Ok(stages)
}

/// Time-averaged mixture of the per-step soft-optimal policies: one
/// stationary policy whose rows are the mean of the stage rows.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    reward_over_states: &[f64],
    discount: f64,
    horizon: usize,
) -> Result<TabularPolicy> {
    let stages = soft_value_iteration_stages(mdp, reward_over_states, discount, horizon)?;
    let (n, na) = (mdp.num_states, mdp.num_actions);
    let mut probs = vec![0.0; n * na];
    for st in &stages {
        for (p, q) in probs.iter_mut().zip(st.action_probs.iter()) {
            *p += q / stages.len() as f64;
        }
    }
    let pi = TabularPolicy {
        num_states: n,
        num_actions: na,
        action_probs: probs,
    };
    pi.validate()?;
    Ok(pi)
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Bounded FIFO of transitions with uniform sampling. Rewards are not stored;
/// they are recomputed from the current reward function at update time.
pub struct Replay {
    buf: VecDeque<Transition>,
    cap: usize,
}

impl Replay {
    pub fn new(cap: usize) -> Self {
        Replay {
            buf: VecDeque::with_capacity(cap.min(4096)),
            cap,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>> {
        if self.buf.is_empty() {
            return Err(Error::EmptyBatch("replay buffer".into()));
        }
        Ok((0..n)
            .map(|_| self.buf[rng.gen_range(0..self.buf.len())].clone())
            .collect())
    }
}

/// Soft actor-critic learner: tanh-squashed Gaussian actor, twin Q networks
/// with Polyak-averaged targets, fixed entropy coefficient.
pub struct ActorCritic {
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub entropy_coeff: f64,
    pub discount: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Environment steps that act uniformly at random before the actor takes
    /// over; cheap early state-space coverage.
    pub uniform_warmup: usize,
    /// Gradient updates per environment step once the replay holds a batch.
    pub updates_per_step: usize,
    pub replay: Replay,
    pub updates: u64,
    state_dim: usize,
    action_dim: usize,
    actor_opt: AdamW,
    q1_opt: AdamW,
    q2_opt: AdamW,
    cur_state: Option<Vec<f64>>,
}

/// Per-update loss values, for logging and health checks.
#[derive(Clone, Copy, Debug)]
pub struct SacLosses {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub actor_loss: f64,
    pub mean_log_std: f64,
}

struct SampledAction {
    action: Vec<f64>,
    log_prob: f64,
    // Everything the actor backward pass needs.
    sigma: Vec<f64>,
    eps: Vec<f64>,
    clamped: Vec<bool>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// log(1 - tanh(u)^2), stable for large |u|.
fn log1m_tanh2(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn sample_squashed(actor: &Mlp, state: &[f64], action_dim: usize, rng: &mut ChaCha8Rng) -> Result<SampledAction> {
    let out = actor.forward(state)?;
    let normal = rand_distr::StandardNormal;
    let mut action = vec![0.0; action_dim];
    let mut sigma = vec![0.0; action_dim];
    let mut eps = vec![0.0; action_dim];
    let mut clamped = vec![false; action_dim];
    let mut log_prob = 0.0;
    for j in 0..action_dim {
        let mean = out[j];
        let raw_ls = out[action_dim + j];
        clamped[j] = !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls);
        let ls = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let sd = ls.exp();
        let e: f64 = normal.sample(rng);
        let u = mean + sd * e;
        action[j] = u.tanh();
        sigma[j] = sd;
        eps[j] = e;
        log_prob += -0.5 * e * e - 0.5 * LN_2PI - ls - log1m_tanh2(u);
    }
    Ok(SampledAction {
        action,
        log_prob,
        sigma,
        eps,
        clamped,
    })
}

impl ActorCritic {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        lr: f64,
        entropy_coeff: f64,
        discount: f64,
        tau: f64,
        replay_cap: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(2 * action_dim);
        let mut q_sizes = vec![state_dim + action_dim];
        q_sizes.extend_from_slice(hidden);
        q_sizes.push(1);
        let actor = Mlp::init(&actor_sizes, OutputTransform::Identity, rng)?;
        let q1 = Mlp::init(&q_sizes, OutputTransform::Identity, rng)?;
        let q2 = Mlp::init(&q_sizes, OutputTransform::Identity, rng)?;
        let (na, nq) = (actor.params().len(), q1.params().len());
        Ok(ActorCritic {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            entropy_coeff,
            discount,
            tau,
            batch_size,
            uniform_warmup: 0,
            updates_per_step: 1,
            replay: Replay::new(replay_cap),
            updates: 0,
            state_dim,
            action_dim,
            actor_opt: AdamW::new(lr, 0.0, na),
            q1_opt: AdamW::new(lr, 0.0, nq),
            q2_opt: AdamW::new(lr, 0.0, nq),
            cur_state: None,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Sample an action for `state`; `deterministic` takes the squashed mean.
    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if deterministic {
            let out = self.actor.forward(state)?;
            Ok((0..self.action_dim).map(|j| out[j].tanh()).collect())
        } else {
            Ok(sample_squashed(&self.actor, state, self.action_dim, rng)?.action)
        }
    }

    fn q_input(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.state_dim + self.action_dim);
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        x
    }
}

/// One gradient update of the twin critics and the actor on an explicit
/// transition batch, followed by Polyak target averaging. Exposed separately
/// from `sac_step` so fixed-batch behavior can be tested.
pub fn sac_update_on_batch<F>(
    ac: &mut ActorCritic,
    batch: &[Transition],
    reward_fn: &F,
    rng: &mut ChaCha8Rng,
) -> Result<SacLosses>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch("sac update".into()));
    }
    let b = batch.len() as f64;
    let alpha = ac.entropy_coeff;

    // Soft Bellman targets from the delayed critics.
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        let r = reward_fn(&t.next_state)?;
        let next = sample_squashed(&ac.actor, &t.next_state, ac.action_dim, rng)?;
        let x = ac.q_input(&t.next_state, &next.action);
        let q1t = ac.q1_target.scalar(&x)?;
        let q2t = ac.q2_target.scalar(&x)?;
        let cont = if t.done { 0.0 } else { 1.0 };
        targets.push(r + ac.discount * cont * (q1t.min(q2t) - alpha * next.log_prob));
    }

    // Twin critic regression toward the shared targets.
    let mut q_losses = [0.0; 2];
    for (qi, (net, opt)) in [(&mut ac.q1, &mut ac.q1_opt), (&mut ac.q2, &mut ac.q2_opt)]
        .into_iter()
        .enumerate()
    {
        let mut xs = Vec::with_capacity(batch.len());
        let mut ups = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for (t, y) in batch.iter().zip(targets.iter()) {
            let x = self_q_input(ac.state_dim, ac.action_dim, &t.state, &t.action);
            let q = net.scalar(&x)?;
            loss += (q - y) * (q - y) / b;
            ups.push(vec![2.0 * (q - y) / b]);
            xs.push(x);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("critic {} loss", qi + 1)));
        }
        let mut grad = net.grad_params_batch(&xs, &ups)?;
        clip_global_norm(&mut grad, GRAD_CLIP);
        opt.step(net.params_mut(), &grad)?;
        q_losses[qi] = loss;
    }

    // Actor: minimize mean(alpha * log pi - min Q) through the
    // reparameterized squashed-Gaussian sample.
    let mut states = Vec::with_capacity(batch.len());
    let mut upstreams = Vec::with_capacity(batch.len());
    let mut actor_loss = 0.0;
    let mut log_std_sum = 0.0;
    for t in batch {
        let sa = sample_squashed(&ac.actor, &t.state, ac.action_dim, rng)?;
        let x = ac.q_input(&t.state, &sa.action);
        let q1 = ac.q1.scalar(&x)?;
        let q2 = ac.q2.scalar(&x)?;
        let (qmin, qnet) = if q1 <= q2 { (q1, &ac.q1) } else { (q2, &ac.q2) };
        actor_loss += (alpha * sa.log_prob - qmin) / b;
        let dq_dx = qnet.grad_input(&x, &[1.0])?;
        let dq_da = &dq_dx[ac.state_dim..];

        let mut up = vec![0.0; 2 * ac.action_dim];
        for j in 0..ac.action_dim {
            let a = sa.action[j];
            let dtanh = 1.0 - a * a;
            let se = sa.sigma[j] * sa.eps[j];
            // d log pi / d mean = 2a; d log pi / d log_std = -1 + 2a*sigma*eps
            // (reparameterized, noise held fixed).
            up[j] = (alpha * 2.0 * a - dq_da[j] * dtanh) / b;
            if !sa.clamped[j] {
                up[ac.action_dim + j] =
                    (alpha * (-1.0 + 2.0 * a * se) - dq_da[j] * dtanh * se) / b;
            }
            log_std_sum += sa.sigma[j].ln() / (b * ac.action_dim as f64);
        }
        states.push(t.state.clone());
        upstreams.push(up);
    }
    if !actor_loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    let mut agrad = ac.actor.grad_params_batch(&states, &upstreams)?;
    clip_global_norm(&mut agrad, GRAD_CLIP);
    ac.actor_opt.step(ac.actor.params_mut(), &agrad)?;

    // Polyak averaging of the target critics.
    for (target, online) in [(&mut ac.q1_target, &ac.q1), (&mut ac.q2_target, &ac.q2)] {
        let tp = target.params_mut();
        for (t, o) in tp.iter_mut().zip(online.params().iter()) {
            *t = (1.0 - ac.tau) * *t + ac.tau * o;
        }
    }
    ac.updates += 1;
    Ok(SacLosses {
        q1_loss: q_losses[0],
        q2_loss: q_losses[1],
        actor_loss,
        mean_log_std: log_std_sum,
    })
}

fn self_q_input(state_dim: usize, action_dim: usize, s: &[f64], a: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state_dim + action_dim);
    x.extend_from_slice(s);
    x.extend_from_slice(a);
    x
}

/// One environment interaction plus (once the replay holds a full batch) one
/// gradient update. The reward function is the learned or shaped reward;
/// the environment's true reward is never consulted here.
pub fn sac_step<F>(
    ac: &mut ActorCritic,
    env: &mut Environment,
    reward_fn: &F,
    rng: &mut ChaCha8Rng,
) -> Result<Option<SacLosses>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let state = match ac.cur_state.take() {
        Some(s) => s,
        None => env.reset(),
    };
    let action = if ac.replay.len() < ac.uniform_warmup {
        (0..ac.action_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    } else {
        ac.act(&state, false, rng)?
    };
    let step = env.step(&ActionChoice::Continuous(action.clone()))?;
    ac.replay.push(Transition {
        state,
        action,
        next_state: step.state.clone(),
        done: step.done,
    });
    ac.cur_state = if step.done { None } else { Some(step.state) };
    if ac.replay.len() >= ac.batch_size {
        let mut last = None;
        for _ in 0..ac.updates_per_step.max(1) {
            let batch = ac.replay.sample(ac.batch_size, rng)?;
            last = Some(sac_update_on_batch(ac, &batch, reward_fn, rng)?);
        }
        Ok(last)
    } else {
        Ok(None)
    }
}

/// A policy an environment can be rolled out with.
pub enum AgentPolicy<'a> {
    Tabular(&'a TabularPolicy),
    Sac(&'a ActorCritic),
    SacMean(&'a ActorCritic),
    /// Stochastic squashed-Gaussian sampling from a bare actor network, for
    /// rolling out checkpointed continuous learners.
    Actor(&'a Mlp),
    /// Fixed controller mapping state to action; used for reference experts
    /// and tests.
    Script(&'a dyn Fn(&[f64]) -> ActionChoice),
    /// Scripted continuous controller plus Gaussian action noise (clamped to
    /// [-1, 1]); used to generate smooth expert densities.
    NoisyScript(&'a dyn Fn(&[f64]) -> Vec<f64>, f64),
}

impl AgentPolicy<'_> {
    pub fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<ActionChoice> {
        match self {
            AgentPolicy::Tabular(p) => {
                let s = crate::env::one_hot_index(state)?;
                Ok(ActionChoice::Discrete(p.sample(s, rng)))
            }
            AgentPolicy::Sac(ac) => Ok(ActionChoice::Continuous(ac.act(state, false, rng)?)),
            AgentPolicy::SacMean(ac) => Ok(ActionChoice::Continuous(ac.act(state, true, rng)?)),
            AgentPolicy::Actor(net) => {
                let dim = net.out_dim() / 2;
                Ok(ActionChoice::Continuous(
                    sample_squashed(net, state, dim, rng)?.action,
                ))
            }
            AgentPolicy::Script(f) => Ok(f(state)),
            AgentPolicy::NoisyScript(f, sigma) => {
                let normal = rand_distr::StandardNormal;
                let a = f(state)
                    .into_iter()
                    .map(|v| {
                        let e: f64 = normal.sample(rng);
                        (v + sigma * e).clamp(-1.0, 1.0)
                    })
                    .collect();
                Ok(ActionChoice::Continuous(a))
            }
        }
    }
}

/// Roll `episodes` full episodes, recording state-only trajectories with the
/// true return stored for diagnostics.
pub fn rollout(
    env: &mut Environment,
    policy: &AgentPolicy,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut states = vec![state.clone()];
        let mut actions = Vec::with_capacity(env.horizon());
        let mut ret = env.state_reward(&state);
        loop {
            let action = policy.act(&state, rng)?;
            let step = env.step(&action)?;
            ret += step.reward;
            actions.push(action);
            states.push(step.state.clone());
            state = step.state;
            if step.done {
                break;
            }
        }
        out.push(Trajectory {
            task_id: env.task_id().to_string(),
            role: Role::Learner,
            states,
            returns_true: Some(ret),
            actions: Some(actions),
        });
    }
    Ok(out)
}

/// Expert trajectory set from a converged policy: state-only, role=expert.
pub fn generate_experts(
    env: &mut Environment,
    policy: &AgentPolicy,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    let mut trajs = rollout(env, policy, n, rng)?;
    for t in &mut trajs {
        t.role = Role::Expert;
    }
    Ok(trajs)
}

/// Monte-Carlo evaluation under the environment's true reward: mean and
/// (population) standard deviation of the undiscounted return.
pub fn evaluate_return(
    env: &mut Environment,
    policy: &AgentPolicy,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let trajs = rollout(env, policy, episodes, rng)?;
    let returns: Vec<f64> = trajs.iter().filter_map(|t| t.returns_true).collect();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / returns.len() as f64;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{
        make_environment, Family, GoalRegion, TaskSpec, GRID_ACTIONS, GRID_STATES,
    };
    use crate::rng::substream;

    fn grid_spec(goal: Option<usize>) -> TaskSpec {
        TaskSpec {
            task_id: "grid".into(),
            family: Family::TabularGrid,
            state_dim: GRID_STATES,
            action_dim: GRID_ACTIONS,
            horizon: 30,
            discount: 0.99,
            disabled_mask: vec![false; 4],
            goal_region: goal.map(GoalRegion::grid_cell),
            seed: 5,
        }
    }

    fn bot_spec(k: usize, horizon: usize) -> TaskSpec {
        TaskSpec {
            task_id: "bot".into(),
            family: Family::Pointbot,
            state_dim: 4 + k,
            action_dim: k,
            horizon,
            discount: 0.99,
            disabled_mask: vec![false; k],
            goal_region: None,
            seed: 5,
        }
    }

    #[test]
    fn zero_reward_gives_uniform_policy() {
        let mdp = TabularMdp::from_grid_spec(&grid_spec(Some(24))).unwrap();
        let pi = soft_value_iteration(&mdp, &vec![0.0; GRID_STATES], 0.99, 10).unwrap();
        for p in &pi.action_probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn single_action_mdp_is_certain() {
        let mdp = crate::env::chain_fixture();
        let pi = soft_value_iteration(&mdp, &[0.3, -0.1, 0.8], 0.9, 5).unwrap();
        for p in &pi.action_probs {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_vi_matches_path_enumeration() {
        // Deterministic 2-state, 2-action MDP: action 0 stays, action 1
        // toggles. Under the max-ent model at discount 1 the stage-0 policy
        // equals the conditional of the Boltzmann path distribution
        // P(path) ∝ exp(sum of state rewards along the path).
        let n = 2;
        let mut transition = vec![0.0; n * 2 * n];
        for s in 0..n {
            transition[(s * 2) * n + s] = 1.0;
            transition[(s * 2 + 1) * n + (1 - s)] = 1.0;
        }
        let mdp = TabularMdp {
            num_states: n,
            num_actions: 2,
            transition,
            true_reward: vec![0.0; n],
            initial_dist: vec![1.0, 0.0],
        };
        let reward = [0.2, 1.1];
        let horizon = 3;
        let stages = soft_value_iteration_stages(&mdp, &reward, 1.0, horizon).unwrap();

        // Enumerate all action sequences from each start state.
        for s0 in 0..n {
            let mut mass = [0.0; 2];
            for bits in 0..(1 << horizon) {
                let mut s = s0;
                let mut total = reward[s];
                for t in 0..horizon {
                    let a = (bits >> t) & 1;
                    s = if a == 0 { s } else { 1 - s };
                    total += reward[s];
                }
                mass[bits & 1] += total.exp();
            }
            let want0 = mass[0] / (mass[0] + mass[1]);
            let got0 = stages[0].row(s0)[0];
            assert!((got0 - want0).abs() < 1e-12, "state {s0}: {got0} vs {want0}");
        }
    }

    #[test]
    fn soft_vi_is_shift_invariant() {
        let mdp = TabularMdp::from_grid_spec(&grid_spec(Some(24))).unwrap();
        let reward: Vec<f64> = (0..GRID_STATES).map(|s| (s as f64 * 0.37).sin()).collect();
        let shifted: Vec<f64> = reward.iter().map(|r| r + 123.0).collect();
        let a = soft_value_iteration(&mdp, &reward, 0.99, 12).unwrap();
        let b = soft_value_iteration(&mdp, &shifted, 0.99, 12).unwrap();
        for (x, y) in a.action_probs.iter().zip(b.action_probs.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rollout_zero_episodes_is_empty() {
        let mut env = make_environment(&grid_spec(Some(24))).unwrap();
        let pi = TabularPolicy::uniform(GRID_STATES, GRID_ACTIONS);
        let mut rng = substream(1, &[0]);
        let trajs = rollout(&mut env, &AgentPolicy::Tabular(&pi), 0, &mut rng).unwrap();
        assert!(trajs.is_empty());
    }

    #[test]
    fn deterministic_policy_gives_identical_trajectories() {
        let mut env = make_environment(&grid_spec(Some(24))).unwrap();
        let script = |_: &[f64]| ActionChoice::Discrete(1); // always east
        let mut rng = substream(1, &[1]);
        let trajs = rollout(&mut env, &AgentPolicy::Script(&script), 3, &mut rng).unwrap();
        assert_eq!(trajs[0].states, trajs[1].states);
        assert_eq!(trajs[1].states, trajs[2].states);
        assert_eq!(trajs[0].states.len(), 31);
        // Moves east 4 cells, then sits at the east wall of the top row.
        assert_eq!(crate::env::one_hot_index(trajs[0].states.last().unwrap()).unwrap(), 4);
    }

    #[test]
    fn rollout_returns_match_occupancy_oracle() {
        let spec = grid_spec(Some(24));
        let mdp = TabularMdp::from_grid_spec(&spec).unwrap();
        let pi = soft_value_iteration(&mdp, &mdp.true_reward, 0.99, spec.horizon).unwrap();
        let occ = crate::env::exact_occupancy(&mdp, &pi.action_probs, spec.horizon).unwrap();
        let expect: f64 = occ
            .iter()
            .zip(mdp.true_reward.iter())
            .map(|(o, r)| o * r)
            .sum::<f64>()
            * (spec.horizon as f64 + 1.0);
        let mut env = make_environment(&spec).unwrap();
        let mut rng = substream(1, &[2]);
        let trajs = rollout(&mut env, &AgentPolicy::Tabular(&pi), 1000, &mut rng).unwrap();
        let mean: f64 =
            trajs.iter().map(|t| t.returns_true.unwrap()).sum::<f64>() / trajs.len() as f64;
        assert!(
            (mean - expect).abs() <= 0.02 * expect.max(1.0),
            "sampled {mean} vs exact {expect}"
        );
    }

    #[test]
    fn evaluate_return_edge_cases() {
        // No goal region -> true reward identically zero.
        let mut env = make_environment(&grid_spec(None)).unwrap();
        let pi = TabularPolicy::uniform(GRID_STATES, GRID_ACTIONS);
        let mut rng = substream(1, &[3]);
        let (mean, std) = evaluate_return(&mut env, &AgentPolicy::Tabular(&pi), 5, &mut rng).unwrap();
        assert_eq!((mean, std), (0.0, 0.0));
        // Deterministic policy on a deterministic env -> zero variance.
        let mut env = make_environment(&grid_spec(Some(4))).unwrap();
        let script = |_: &[f64]| ActionChoice::Discrete(1);
        let (mean, std) =
            evaluate_return(&mut env, &AgentPolicy::Script(&script), 4, &mut rng).unwrap();
        assert!(mean > 0.0);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn expert_generation_marks_role_and_handles_zero() {
        let mut env = make_environment(&grid_spec(Some(24))).unwrap();
        let pi = TabularPolicy::uniform(GRID_STATES, GRID_ACTIONS);
        let mut rng = substream(1, &[4]);
        assert!(generate_experts(&mut env, &AgentPolicy::Tabular(&pi), 0, &mut rng)
            .unwrap()
            .is_empty());
        let trajs = generate_experts(&mut env, &AgentPolicy::Tabular(&pi), 3, &mut rng).unwrap();
        assert!(trajs.iter().all(|t| t.role == Role::Expert));
    }

    fn filled_ac(rng: &mut ChaCha8Rng) -> (ActorCritic, Vec<Transition>) {
        let spec = bot_spec(2, 20);
        let mut env = make_environment(&spec).unwrap();
        let mut ac = ActorCritic::new(6, 2, &[16, 16], 1e-3, 0.2, 0.99, 0.005, 1000, 16, rng)
            .unwrap();
        let reward = |s: &[f64]| Ok(s[2]);
        for _ in 0..40 {
            sac_step(&mut ac, &mut env, &reward, rng).unwrap();
        }
        let batch = ac.replay.sample(16, rng).unwrap();
        (ac, batch)
    }

    #[test]
    fn critic_regression_decreases_on_fixed_batch() {
        let mut rng = substream(41, &[0]);
        let (mut ac, batch) = filled_ac(&mut rng);
        ac.tau = 0.0; // freeze targets
        let reward = |s: &[f64]| Ok(s[2]);
        let mut last = f64::INFINITY;
        for i in 0..50 {
            // Fixed actor and a fixed noise stream: the targets and the
            // regression problem stay put, only the critics move.
            let actor_params = ac.actor.params().to_vec();
            let mut step_rng = substream(41, &[1]);
            let losses = sac_update_on_batch(&mut ac, &batch, &reward, &mut step_rng).unwrap();
            ac.actor.set_params(actor_params).unwrap();
            let q = losses.q1_loss + losses.q2_loss;
            assert!(q < last, "update {i}: {q} !< {last}");
            last = q;
        }
    }

    #[test]
    fn huge_entropy_coefficient_inflates_log_std() {
        let mut rng = substream(41, &[1]);
        let (mut ac, batch) = filled_ac(&mut rng);
        ac.entropy_coeff = 50.0;
        // Start well below the squashed-Gaussian entropy optimum: push the
        // log-std output biases (the tail of the last layer) down to -3.
        let n = ac.actor.params().len();
        for p in ac.actor.params_mut()[n - 2..].iter_mut() {
            *p = -3.0;
        }
        let reward = |s: &[f64]| Ok(s[2]);
        let first = sac_update_on_batch(&mut ac, &batch, &reward, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = sac_update_on_batch(&mut ac, &batch, &reward, &mut rng).unwrap();
        }
        assert!(
            last.mean_log_std > first.mean_log_std + 0.05,
            "{} vs {}",
            last.mean_log_std,
            first.mean_log_std
        );
    }

    #[test]
    fn sac_runs_are_seed_deterministic() {
        let run = || {
            let spec = bot_spec(2, 25);
            let mut env = make_environment(&spec).unwrap();
            let mut rng = substream(41, &[2]);
            let mut ac =
                ActorCritic::new(6, 2, &[8], 3e-4, 0.2, 0.99, 0.005, 500, 8, &mut rng).unwrap();
            let reward = |s: &[f64]| Ok(s[2]);
            for _ in 0..100 {
                sac_step(&mut ac, &mut env, &reward, &mut rng).unwrap();
            }
            let states: Vec<Vec<f64>> = ac.replay.iter().map(|t| t.state.clone()).collect();
            let actions: Vec<Vec<f64>> = ac.replay.iter().map(|t| t.action.clone()).collect();
            (states, actions, ac.actor.params().to_vec())
        };
        let a = run();
        let b = run();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn replay_is_bounded_fifo() {
        let mut r = Replay::new(3);
        for i in 0..5 {
            r.push(Transition {
                state: vec![i as f64],
                action: vec![],
                next_state: vec![],
                done: false,
            });
        }
        assert_eq!(r.len(), 3);
        let kept: Vec<f64> = r.iter().map(|t| t.state[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn squashed_log_prob_matches_numeric_change_of_variables() {
        // For a 1-D action, compare log pi against the density of
        // a = tanh(mean + sigma * eps) computed by the analytic formula with
        // plain (unstable) arithmetic at moderate u.
        let mut rng = substream(41, &[3]);
        let actor = Mlp::init(&[2, 2], OutputTransform::Identity, &mut rng).unwrap();
        for _ in 0..50 {
            let s: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sa = sample_squashed(&actor, &s, 1, &mut rng).unwrap();
            let out = actor.forward(&s).unwrap();
            let ls = out[1].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let u = out[0] + ls.exp() * sa.eps[0];
            let gauss = -0.5 * sa.eps[0] * sa.eps[0] - 0.5 * LN_2PI - ls;
            let naive = gauss - (1.0 - u.tanh().powi(2)).ln();
            assert!((sa.log_prob - naive).abs() < 1e-9, "{} vs {naive}", sa.log_prob);
        }
    }
}
