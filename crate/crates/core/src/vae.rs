//! Shared abstraction model: one encoder mapping task states to a diagonal
//! Gaussian code, and one decoder head per task variant reconstructing that
//! variant's states. Reconstruction uses a unit-variance Gaussian likelihood;
//! the code prior is standard normal.

use crate::error::{Error, Result};
use crate::net::{Mlp, OutputTransform, LN_2PI};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Log-variance outputs are clamped to this range before use; clamped slots
/// pass no gradient.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianPosterior {
    /// KL(N(mean, diag exp(log_var)) || N(0, I)), closed form per dimension.
    pub fn kl_to_standard_normal(&self) -> f64 {
        self.mean
            .iter()
            .zip(self.log_var.iter())
            .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.mean.len())
            .map(|_| rand_distr::StandardNormal.sample_from(rng))
            .collect();
        self.with_noise(&eps)
    }

    pub fn with_noise(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.log_var.iter())
            .zip(eps.iter())
            .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
            .collect()
    }
}

// Small shim so sampling reads naturally above without importing Distribution
// at every call site.
trait SampleFrom {
    fn sample_from(&self, rng: &mut ChaCha8Rng) -> f64;
}

impl SampleFrom for rand_distr::StandardNormal {
    fn sample_from(&self, rng: &mut ChaCha8Rng) -> f64 {
        rand_distr::Distribution::sample(self, rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiHeadVae {
    pub encoder: Mlp,
    pub decoders: Vec<Mlp>,
    pub task_ids: Vec<String>,
    pub state_dim: usize,
    pub code_dim: usize,
}

impl MultiHeadVae {
    pub fn new(
        state_dim: usize,
        code_dim: usize,
        hidden: &[usize],
        task_ids: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if task_ids.is_empty() {
            return Err(Error::Config("at least one decoder head required".into()));
        }
        let mut enc_sizes = vec![state_dim];
        enc_sizes.extend_from_slice(hidden);
        enc_sizes.push(2 * code_dim);
        let encoder = Mlp::init(&enc_sizes, OutputTransform::Identity, rng)?;
        let mut dec_sizes = vec![code_dim];
        dec_sizes.extend(hidden.iter().rev());
        dec_sizes.push(state_dim);
        let decoders = task_ids
            .iter()
            .map(|_| Mlp::init(&dec_sizes, OutputTransform::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiHeadVae {
            encoder,
            decoders,
            task_ids: task_ids.to_vec(),
            state_dim,
            code_dim,
        })
    }

    pub fn head_index(&self, task_id: &str) -> Result<usize> {
        self.task_ids
            .iter()
            .position(|t| t == task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.into()))
    }

    pub fn posterior(&self, state: &[f64]) -> Result<GaussianPosterior> {
        let out = self.encoder.forward(state)?;
        let d = self.code_dim;
        Ok(GaussianPosterior {
            mean: out[..d].to_vec(),
            log_var: out[d..].iter().map(|lv| lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect(),
        })
    }

    pub fn encode_mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.posterior(state)?.mean)
    }

    pub fn decode_mean(&self, head: usize, z: &[f64]) -> Result<Vec<f64>> {
        self.decoders
            .get(head)
            .ok_or_else(|| Error::Dimension(format!("no decoder head {head}")))?
            .forward(z)
    }

    pub fn validate(&self) -> Result<()> {
        if self.decoders.len() != self.task_ids.len() {
            return Err(Error::Config("decoder heads and task ids disagree".into()));
        }
        if self.encoder.out_dim() != 2 * self.code_dim || self.encoder.in_dim() != self.state_dim {
            return Err(Error::Dimension("encoder shape inconsistent".into()));
        }
        for d in &self.decoders {
            if d.in_dim() != self.code_dim || d.out_dim() != self.state_dim {
                return Err(Error::Dimension("decoder shape inconsistent".into()));
            }
        }
        Ok(())
    }
}

/// Per-head loss value and gradients from one training batch.
pub struct ElboGrads {
    pub loss: f64,
    pub recon_nll: f64,
    pub kl: f64,
    pub grad_encoder: Vec<f64>,
    pub grad_decoder: Vec<f64>,
}

/// Negated evidence lower bound for one task head, one reparameterized code
/// sample per state, averaged over the batch:
/// mean_i [ -log q(s_i | z_i) + kl_weight * KL(post_i || N(0, I)) ].
pub fn elbo_loss(
    vae: &MultiHeadVae,
    head: usize,
    states: &[Vec<f64>],
    kl_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ElboGrads> {
    let noise: Vec<Vec<f64>> = states
        .iter()
        .map(|_| {
            (0..vae.code_dim)
                .map(|_| rand_distr::StandardNormal.sample_from(rng))
                .collect()
        })
        .collect();
    elbo_loss_with_noise(vae, head, states, kl_weight, &noise)
}

/// Deterministic variant taking the reparameterization noise explicitly, so
/// gradients can be checked against finite differences.
pub fn elbo_loss_with_noise(
    vae: &MultiHeadVae,
    head: usize,
    states: &[Vec<f64>],
    kl_weight: f64,
    noise: &[Vec<f64>],
) -> Result<ElboGrads> {
    if states.is_empty() {
        return Err(Error::EmptyBatch("elbo_loss".into()));
    }
    if noise.len() != states.len() {
        return Err(Error::Dimension("one noise vector per state required".into()));
    }
    let decoder = vae
        .decoders
        .get(head)
        .ok_or_else(|| Error::Dimension(format!("no decoder head {head}")))?;
    let d = vae.code_dim;
    let mut grad_encoder = vec![0.0; vae.encoder.params().len()];
    let mut grad_decoder = vec![0.0; decoder.params().len()];
    let mut recon_sum = 0.0;
    let mut kl_sum = 0.0;
    for (s, eps) in states.iter().zip(noise.iter()) {
        let enc_out = vae.encoder.forward(s)?;
        let mean = &enc_out[..d];
        let raw_lv = &enc_out[d..];
        let clamped: Vec<bool> = raw_lv
            .iter()
            .map(|&lv| !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(&lv))
            .collect();
        let log_var: Vec<f64> = raw_lv.iter().map(|lv| lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();
        let sigma: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
        let z: Vec<f64> = (0..d).map(|j| mean[j] + sigma[j] * eps[j]).collect();

        let recon = decoder.forward(&z)?;
        let upstream: Vec<f64> = recon.iter().zip(s.iter()).map(|(r, t)| r - t).collect();
        let (_, dec_grads, dz) = decoder.vjp(&z, &upstream)?;
        recon_sum += 0.5
            * recon
                .iter()
                .zip(s.iter())
                .map(|(r, t)| (r - t) * (r - t))
                .sum::<f64>()
            + 0.5 * vae.state_dim as f64 * LN_2PI;
        let kl: f64 = (0..d)
            .map(|j| 0.5 * (mean[j] * mean[j] + log_var[j].exp() - 1.0 - log_var[j]))
            .sum();
        kl_sum += kl;

        // Upstream on the raw encoder outputs: code path plus KL path; clamped
        // log-variance slots are flat.
        let mut upstream_enc = vec![0.0; 2 * d];
        for j in 0..d {
            upstream_enc[j] = dz[j] + kl_weight * mean[j];
            if !clamped[j] {
                upstream_enc[d + j] = dz[j] * 0.5 * sigma[j] * eps[j]
                    + kl_weight * 0.5 * (log_var[j].exp() - 1.0);
            }
        }
        let enc_grads = vae.encoder.grad_params(s, &upstream_enc)?;
        for (g, v) in grad_encoder.iter_mut().zip(enc_grads.iter()) {
            *g += v;
        }
        for (g, v) in grad_decoder.iter_mut().zip(dec_grads.iter()) {
            *g += v;
        }
    }
    let b = states.len() as f64;
    for g in grad_encoder.iter_mut().chain(grad_decoder.iter_mut()) {
        *g /= b;
    }
    let recon_nll = recon_sum / b;
    let kl = kl_sum / b;
    Ok(ElboGrads {
        loss: recon_nll + kl_weight * kl,
        recon_nll,
        kl,
        grad_encoder,
        grad_decoder,
    })
}

/// Encode a batch of states into codes: posterior samples when `stochastic`,
/// posterior means otherwise.
pub fn abstract_samples(
    vae: &MultiHeadVae,
    states: &[Vec<f64>],
    stochastic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    states
        .iter()
        .map(|s| {
            let p = vae.posterior(s)?;
            Ok(if stochastic { p.sample(rng) } else { p.mean })
        })
        .collect()
}

/// Encode a batch stochastically, keeping the reparameterization noise so a
/// later backward pass can replay the exact same codes.
pub fn encode_with_noise(
    vae: &MultiHeadVae,
    states: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut codes = Vec::with_capacity(states.len());
    let mut noises = Vec::with_capacity(states.len());
    for s in states {
        let eps: Vec<f64> = (0..vae.code_dim)
            .map(|_| rand_distr::StandardNormal.sample_from(rng))
            .collect();
        codes.push(vae.posterior(s)?.with_noise(&eps));
        noises.push(eps);
    }
    Ok((codes, noises))
}

/// Chain per-code gradients back to encoder parameters through the
/// reparameterized samples z = mean + sigma * eps produced by
/// `encode_with_noise` (summed over the batch). Dimensions whose raw log
/// variance fell outside the clamp range contribute no variance gradient.
pub fn encoder_grad_through_codes(
    vae: &MultiHeadVae,
    states: &[Vec<f64>],
    noises: &[Vec<f64>],
    code_grads: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if states.len() != noises.len() || states.len() != code_grads.len() {
        return Err(Error::Dimension(
            "states, noises, and code gradients must align".into(),
        ));
    }
    let d = vae.code_dim;
    let mut grad = vec![0.0; vae.encoder.params().len()];
    for ((s, eps), gz) in states.iter().zip(noises).zip(code_grads) {
        let enc_out = vae.encoder.forward(s)?;
        let mut up = vec![0.0; 2 * d];
        for j in 0..d {
            let raw_lv = enc_out[d + j];
            let lv = raw_lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
            let sigma = (0.5 * lv).exp();
            up[j] = gz[j];
            if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw_lv) {
                up[d + j] = gz[j] * 0.5 * sigma * eps[j];
            }
        }
        let g = vae.encoder.grad_params(s, &up)?;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok(grad)
}

/// KL(N(mean_p, var_p) || N(mean_q, var_q)) for diagonal Gaussians, closed
/// form. Used by the cross-task consistency penalty.
pub fn gaussian_kl(p: &GaussianPosterior, q: &GaussianPosterior) -> Result<f64> {
    if p.mean.len() != q.mean.len() {
        return Err(Error::Dimension("posterior dims differ".into()));
    }
    let mut total = 0.0;
    for j in 0..p.mean.len() {
        let (lvp, lvq) = (p.log_var[j], q.log_var[j]);
        let dm = p.mean[j] - q.mean[j];
        total += 0.5 * (lvq - lvp + (lvp.exp() + dm * dm) / lvq.exp() - 1.0);
    }
    Ok(total)
}
