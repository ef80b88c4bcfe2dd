//! State-only reward over the abstract code space, learned by matching the
//! learner's code distribution to the expert's: the gradient of the matching
//! objective reduces to a mean-centered covariance between critic scores and
//! per-sample reward-parameter gradients.

use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::net::{AdamW, Mlp, OutputTransform};
use crate::vae::{abstract_samples, MultiHeadVae};
use crate::env::GoalRegion;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbstractReward {
    pub net: Mlp,
}

impl AbstractReward {
    /// Reward head over codes, squashed into (-1, 1).
    pub fn new(code_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut sizes = vec![code_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(AbstractReward {
            net: Mlp::init(&sizes, OutputTransform::Tanh, rng)?,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        self.net.scalar(z)
    }

    pub fn value_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<f64>> {
        zs.iter().map(|z| self.net.scalar(z)).collect()
    }
}

/// Gradient of the distribution-matching objective with respect to the reward
/// parameters, computed from code batches directly. Per task batch the
/// contribution is -cov(D(z), grad_theta R(z)) with the unbiased 1/(B-1)
/// normalization; batches are centered independently and summed. Descending
/// the returned vector raises the learner's critic scores toward the
/// expert's.
pub fn covariance_gradient_from_codes(
    reward: &AbstractReward,
    critic: &Critic,
    task_code_batches: &[Vec<Vec<f64>>],
) -> Result<Vec<f64>> {
    let np = reward.net.params().len();
    let mut total = vec![0.0; np];
    for batch in task_code_batches {
        if batch.len() < 2 {
            return Err(Error::EmptyBatch(
                "covariance needs at least two samples per task".into(),
            ));
        }
        let b = batch.len() as f64;
        let mut scores = Vec::with_capacity(batch.len());
        let mut grads = Vec::with_capacity(batch.len());
        for z in batch {
            scores.push(critic.value(z)?);
            grads.push(reward.net.grad_params(z, &[1.0])?);
        }
        // A constant critic covaries with nothing; skip before rounding in the
        // mean can manufacture spurious residue.
        if scores.iter().all(|&s| s == scores[0]) {
            continue;
        }
        let score_mean: f64 = scores.iter().sum::<f64>() / b;
        let mut grad_mean = vec![0.0; np];
        for g in &grads {
            for (m, v) in grad_mean.iter_mut().zip(g.iter()) {
                *m += v / b;
            }
        }
        for (s, g) in scores.iter().zip(grads.iter()) {
            let w = (s - score_mean) / (b - 1.0);
            for j in 0..np {
                total[j] -= w * (g[j] - grad_mean[j]);
            }
        }
    }
    Ok(total)
}

/// As `covariance_gradient_from_codes`, but taking raw states: each task's
/// batch (drawn half from expert data, half from learner data) is encoded and
/// sampled through the frozen encoder first. Neither the critic nor the
/// encoder receives any gradient here.
pub fn covariance_gradient(
    reward: &AbstractReward,
    critic: &Critic,
    vae: &MultiHeadVae,
    task_state_batches: &[Vec<Vec<f64>>],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let code_batches = task_state_batches
        .iter()
        .map(|states| abstract_samples(vae, states, true, rng))
        .collect::<Result<Vec<_>>>()?;
    covariance_gradient_from_codes(reward, critic, &code_batches)
}

/// One adaptive-moment descent step on the reward parameters.
pub fn update_reward(reward: &mut AbstractReward, opt: &mut AdamW, grad: &[f64]) -> Result<()> {
    opt.step(reward.net.params_mut(), grad)
}

/// Deployed reward on raw states: learned code reward (through the encoder
/// mean) plus a goal bonus of `c` inside the goal region.
pub fn shaped_reward(
    reward: &AbstractReward,
    vae: &MultiHeadVae,
    state: &[f64],
    goal: Option<&GoalRegion>,
    c: f64,
) -> Result<f64> {
    let z = vae.encode_mean(state)?;
    let base = reward.value(&z)?;
    let bonus = match goal {
        Some(g) if g.contains(state) => c,
        _ => 0.0,
    };
    Ok(base + bonus)
}
