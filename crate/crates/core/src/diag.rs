//! Analysis procedures over trained artifacts: abstract-vs-ground distance
//! comparison, the transferability audit with its triangle-consistency check,
//! per-dimension semantic perturbation profiles, learned-vs-true reward
//! correlation, and embedding export for external visualization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{w1_estimate, Critic};
use crate::env::{Environment, Role, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{rollout, AgentPolicy};
use crate::reward::AbstractReward;
use crate::vae::MultiHeadVae;

/// Resamples behind every bootstrap standard deviation reported here.
pub const BOOTSTRAP_RESAMPLES: usize = 20;

/// Absolute critic-based distance estimate with a bootstrap std over
/// resampled bags.
fn bootstrap_w1(
    critic: &Critic,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let point = w1_estimate(critic, a, b)?.abs();
    let mut draws = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let ra: Vec<Vec<f64>> = (0..a.len()).map(|_| a[rng.gen_range(0..a.len())].clone()).collect();
        let rb: Vec<Vec<f64>> = (0..b.len()).map(|_| b[rng.gen_range(0..b.len())].clone()).collect();
        draws.push(w1_estimate(critic, &ra, &rb)?.abs());
    }
    Ok((point, sample_std(&draws)))
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn require_trained(critic: &Critic, which: &str) -> Result<()> {
    if critic.steps_trained == 0 {
        return Err(Error::Untrained(format!(
            "{which} critic has no training steps; fit it on the two sample \
             bags with fit_critic before comparing distances"
        )));
    }
    Ok(())
}

/// Distance between two expert densities measured twice: in the abstract
/// space (codes from the shared encoder) and in the ground state space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct W1Comparison {
    pub w1_abstract: f64,
    pub w1_abstract_std: f64,
    pub w1_ground: f64,
    pub w1_ground_std: f64,
}

/// Duality-based distance between two trajectory sets in abstract and ground
/// space, on the same data. Encodings are posterior means, so identical
/// inputs give exactly equal bags.
pub fn compare_w1(
    vae: &MultiHeadVae,
    critic_abstract: &Critic,
    critic_ground: &Critic,
    trajs_a: &[Trajectory],
    trajs_b: &[Trajectory],
    rng: &mut ChaCha8Rng,
) -> Result<W1Comparison> {
    require_trained(critic_abstract, "abstract-space")?;
    require_trained(critic_ground, "ground-space")?;
    let states = |trajs: &[Trajectory]| -> Vec<Vec<f64>> {
        trajs.iter().flat_map(|t| t.states.iter().cloned()).collect()
    };
    let s_a = states(trajs_a);
    let s_b = states(trajs_b);
    if s_a.is_empty() || s_b.is_empty() {
        return Err(Error::EmptyBatch("compare_w1".into()));
    }
    let encode = |ss: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        ss.iter().map(|s| vae.encode_mean(s)).collect()
    };
    let (w1_abstract, w1_abstract_std) = bootstrap_w1(critic_abstract, &encode(&s_a)?, &encode(&s_b)?, rng)?;
    let (w1_ground, w1_ground_std) = bootstrap_w1(critic_ground, &s_a, &s_b, rng)?;
    Ok(W1Comparison {
        w1_abstract,
        w1_abstract_std,
        w1_ground,
        w1_ground_std,
    })
}

/// The three distance estimates of the transferability condition plus the
/// resulting verdict and the estimator's triangle-consistency check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditReport {
    /// Distance target-expert ↔ source-learner codes.
    pub eq7_lhs: f64,
    /// Distance target-expert ↔ source-expert codes.
    pub eq8_lhs: f64,
    /// Distance source-learner ↔ source-expert codes.
    pub eq9_lhs: f64,
    pub eq7_std: f64,
    pub eq8_std: f64,
    pub eq9_std: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// eq8 ≤ α·ε and eq9 ≤ (1−α)·ε.
    pub transferable: bool,
    /// eq7 ≤ eq8 + eq9 + 2·(bootstrap std of the triangle slack).
    pub triangle_consistent: bool,
    pub triangle_slack_std: f64,
}

/// Audit whether a learned abstraction supports transfer: estimates the
/// target-expert/source-learner, target-expert/source-expert, and
/// source-learner/source-expert distances with the trained critic, applies
/// the ε-split verdict, and checks the estimator against the metric triangle
/// inequality within twice the bootstrap noise of the slack.
pub fn transferability_audit(
    critic: &Critic,
    z_target_expert: &[Vec<f64>],
    z_source_expert: &[Vec<f64>],
    z_source_learner: &[Vec<f64>],
    epsilon: f64,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AuditReport> {
    require_trained(critic, "audit")?;
    if z_target_expert.is_empty() || z_source_expert.is_empty() || z_source_learner.is_empty() {
        return Err(Error::EmptyBatch("transferability_audit".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if epsilon <= 0.0 {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let (eq7_lhs, eq7_std) = bootstrap_w1(critic, z_target_expert, z_source_learner, rng)?;
    let (eq8_lhs, eq8_std) = bootstrap_w1(critic, z_target_expert, z_source_expert, rng)?;
    let (eq9_lhs, eq9_std) = bootstrap_w1(critic, z_source_learner, z_source_expert, rng)?;

    // Bootstrap the triangle slack eq7 − eq8 − eq9 jointly so correlated
    // estimator noise cancels instead of inflating the tolerance.
    let mut slacks = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let res = |bag: &[Vec<f64>], rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..bag.len()).map(|_| bag[rng.gen_range(0..bag.len())].clone()).collect()
        };
        let te = res(z_target_expert, rng);
        let se = res(z_source_expert, rng);
        let sl = res(z_source_learner, rng);
        let e7 = w1_estimate(critic, &te, &sl)?.abs();
        let e8 = w1_estimate(critic, &te, &se)?.abs();
        let e9 = w1_estimate(critic, &sl, &se)?.abs();
        slacks.push(e7 - e8 - e9);
    }
    let triangle_slack_std = sample_std(&slacks);
    Ok(AuditReport {
        eq7_lhs,
        eq8_lhs,
        eq9_lhs,
        eq7_std,
        eq8_std,
        eq9_std,
        epsilon,
        alpha,
        transferable: eq8_lhs <= alpha * epsilon && eq9_lhs <= (1.0 - alpha) * epsilon,
        triangle_consistent: eq7_lhs <= eq8_lhs + eq9_lhs + 2.0 * triangle_slack_std,
        triangle_slack_std,
    })
}

/// Per-ground-dimension sensitivity of the encoder: mean over the batch of
/// the absolute cosine between the posterior means of s + p·e_d and
/// s − p·e_d. A value near 1 means the encoder ignores the dimension; the
/// minimum marks the feature the abstraction discriminates hardest. Samples
/// where either embedding is the zero vector have no defined cosine and are
/// dropped; a dimension with no defined samples reports `None`.
pub fn semantic_profile(
    vae: &MultiHeadVae,
    states: &[Vec<f64>],
    perturbation: f64,
) -> Result<Vec<Option<f64>>> {
    if states.is_empty() {
        return Err(Error::EmptyBatch("semantic_profile".into()));
    }
    let dim = vae.state_dim;
    let mut profile = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut acc = 0.0;
        let mut count = 0usize;
        for s in states {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus[d] += perturbation;
            minus[d] -= perturbation;
            let mu_p = vae.encode_mean(&plus)?;
            let mu_m = vae.encode_mean(&minus)?;
            let np = mu_p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nm = mu_m.iter().map(|v| v * v).sum::<f64>().sqrt();
            if np == 0.0 || nm == 0.0 {
                continue;
            }
            if mu_p == mu_m {
                acc += 1.0;
            } else {
                let dot: f64 = mu_p.iter().zip(&mu_m).map(|(a, b)| a * b).sum();
                acc += (dot / (np * nm)).abs().min(1.0);
            }
            count += 1;
        }
        profile.push(if count > 0 { Some(acc / count as f64) } else { None });
    }
    Ok(profile)
}

/// Pearson correlation; `None` when either series has zero variance or
/// fewer than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation between the learned reward of each visited state and
/// the task's true state reward, over fresh policy rollouts. `None` when one
/// of the series is constant (correlation undefined).
pub fn reward_correlation(
    reward: &AbstractReward,
    vae: &MultiHeadVae,
    env: &mut Environment,
    policy: &AgentPolicy,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    if episodes == 0 {
        return Err(Error::EmptyBatch("reward_correlation".into()));
    }
    let trajs = rollout(env, policy, episodes, rng)?;
    let mut learned = Vec::new();
    let mut truth = Vec::new();
    for t in &trajs {
        for s in &t.states {
            learned.push(reward.value(&vae.encode_mean(s)?)?);
            truth.push(env.state_reward(s));
        }
    }
    Ok(pearson(&learned, &truth))
}

/// CSV of posterior-mean coordinates: header `task_id,role,z0,...`, one row
/// per state of every trajectory, coordinates printed so they parse back to
/// the exact encoded values.
pub fn export_embeddings(vae: &MultiHeadVae, trajs: &[Trajectory]) -> Result<String> {
    let mut out = String::from("task_id,role");
    for j in 0..vae.code_dim {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for t in trajs {
        let role = match t.role {
            Role::Expert => "expert",
            Role::Learner => "learner",
        };
        for s in &t.states {
            let z = vae.encode_mean(s)?;
            out.push_str(&t.task_id);
            out.push(',');
            out.push_str(role);
            for v in &z {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}
