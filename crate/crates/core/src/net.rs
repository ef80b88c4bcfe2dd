//! Flat-parameter multilayer perceptrons with hand-rolled reverse-mode
//! gradients, a forward-over-reverse second-order path (for gradient
//! penalties), finite-difference checking, and a decoupled-weight-decay
//! adaptive-moment optimizer.
//!
//! Parameter layout per layer l (input width `in`, output width `out`):
//! weights row-major `[out][in]` followed by `out` biases. Hidden layers are
//! tanh; the output layer applies `OutputTransform`.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputTransform {
    Identity,
    Tanh,
    Softmax,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MlpRaw", into = "MlpRaw")]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_transform: OutputTransform,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpRaw {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_transform: OutputTransform,
    params: Vec<f64>,
}

impl TryFrom<MlpRaw> for Mlp {
    type Error = Error;
    fn try_from(r: MlpRaw) -> Result<Self> {
        let mut m = Mlp::zeros(&r.layer_sizes, r.output_transform)?;
        m.set_params(r.params)?;
        Ok(m)
    }
}

impl From<Mlp> for MlpRaw {
    fn from(m: Mlp) -> Self {
        MlpRaw {
            layer_sizes: m.layer_sizes,
            activation: m.activation,
            output_transform: m.output_transform,
            params: m.params,
        }
    }
}

/// Total parameter count for a layer-size chain: sum of (in+1)*out.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| (w[0] + 1) * w[1])
        .sum()
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least input and output widths, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!("zero layer width in {layer_sizes:?}")));
    }
    Ok(())
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], output_transform: OutputTransform) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation: Activation::Tanh,
            output_transform,
            params: vec![0.0; param_count(layer_sizes)],
        })
    }

    /// Uniform fan-in initialization: weights and biases of a layer with
    /// input width n drawn from U(-1/sqrt(n), 1/sqrt(n)).
    pub fn init<R: Rng>(
        layer_sizes: &[usize],
        output_transform: OutputTransform,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = Self::zeros(layer_sizes, output_transform)?;
        let mut off = 0;
        for w in m.layer_sizes.clone().windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            for p in &mut m.params[off..off + (n_in + 1) * n_out] {
                *p = rng.gen_range(-bound..bound);
            }
            off += (n_in + 1) * n_out;
        }
        Ok(m)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_transform(&self) -> OutputTransform {
        self.output_transform
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        let want = param_count(&self.layer_sizes);
        if params.len() != want {
            return Err(Error::Dimension(format!(
                "expected {want} params for {:?}, got {}",
                self.layer_sizes,
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "input width {} but net expects {}",
                x.len(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping post-activation values of every layer.
    /// acts[0] is the input; acts[L] is the transformed output.
    fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let n_layers = self.layer_sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[off..off + n_in * n_out];
            let biases = &self.params[off + n_in * n_out..off + (n_in + 1) * n_out];
            let h = &acts[l];
            let mut out = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = biases[o];
                for (wi, hi) in row.iter().zip(h.iter()) {
                    acc += wi * hi;
                }
                out[o] = acc;
            }
            if l + 1 < n_layers {
                for v in &mut out {
                    *v = v.tanh();
                }
            } else {
                apply_transform(self.output_transform, &mut out);
            }
            acts.push(out);
            off += (n_in + 1) * n_out;
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.pop().unwrap())
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    /// Scalar-output convenience.
    pub fn scalar(&self, x: &[f64]) -> Result<f64> {
        if self.out_dim() != 1 {
            return Err(Error::Dimension(format!(
                "scalar() on a net with output width {}",
                self.out_dim()
            )));
        }
        Ok(self.forward(x)?[0])
    }

    /// Reverse-mode vector-Jacobian product. Returns (output, d(upstream.y)/d params,
    /// d(upstream.y)/d input) for the given upstream cotangent.
    pub fn vjp(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if upstream.len() != self.out_dim() {
            return Err(Error::Dimension(format!(
                "upstream width {} but net outputs {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        let acts = self.forward_trace(x)?;
        let n_layers = self.layer_sizes.len() - 1;
        let y = acts[n_layers].clone();

        let mut grad = vec![0.0; self.params.len()];
        let mut delta = transform_backward(self.output_transform, &y, upstream);

        // Per-layer offsets, walked backwards.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(off);
            off += (w[0] + 1) * w[1];
        }

        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let h = &acts[l];
            let weights = &self.params[off..off + n_in * n_out];
            {
                let (gw, gb) = grad[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    gb[o] += d;
                    let grow = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, hi) in grow.iter_mut().zip(h.iter()) {
                        *g += d * hi;
                    }
                }
            }
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (p, wi) in prev.iter_mut().zip(row.iter()) {
                    *p += d * wi;
                }
            }
            if l > 0 {
                for (p, hi) in prev.iter_mut().zip(h.iter()) {
                    *p *= 1.0 - hi * hi;
                }
            }
            delta = prev;
        }
        Ok((y, grad, delta))
    }

    /// Gradient of `upstream . f(x)` with respect to the flat parameters.
    pub fn grad_params(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.vjp(x, upstream)?.1)
    }

    /// Gradient of `upstream . f(x)` with respect to the input.
    pub fn grad_input(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.vjp(x, upstream)?.2)
    }

    /// Summed parameter gradient over a batch (one upstream row per input).
    pub fn grad_params_batch(&self, xs: &[Vec<f64>], upstreams: &[Vec<f64>]) -> Result<Vec<f64>> {
        if xs.len() != upstreams.len() {
            return Err(Error::Dimension(format!(
                "{} inputs vs {} upstream rows",
                xs.len(),
                upstreams.len()
            )));
        }
        let mut total = vec![0.0; self.params.len()];
        for (x, u) in xs.iter().zip(upstreams.iter()) {
            let g = self.grad_params(x, u)?;
            for (t, gi) in total.iter_mut().zip(g.iter()) {
                *t += gi;
            }
        }
        Ok(total)
    }

    /// Second-order path: with J(params, x) = upstream . (df/dx . dir), i.e. the
    /// upstream-weighted directional derivative of the net at x along `dir`,
    /// returns (J, dJ/dparams, dJ/dx). dJ/dx is the Hessian-vector product when
    /// the output is scalar and upstream is [1]. Softmax outputs are not
    /// supported on this path.
    pub fn grad_directional(
        &self,
        x: &[f64],
        dir: &[f64],
        upstream: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if matches!(self.output_transform, OutputTransform::Softmax) {
            return Err(Error::Unsupported(
                "second-order path not defined for softmax outputs".into(),
            ));
        }
        self.check_input(x)?;
        if dir.len() != self.in_dim() || upstream.len() != self.out_dim() {
            return Err(Error::Dimension(
                "direction/upstream width mismatch in grad_directional".into(),
            ));
        }
        let n_layers = self.layer_sizes.len() - 1;
        let acts = self.forward_trace(x)?;

        // Forward tangent pass: th[l] is the tangent of acts[l]; ts[l] is the
        // tangent of layer l's pre-activation (indexed 1..=n_layers).
        let mut th: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut ts: Vec<Vec<f64>> = vec![Vec::new(); n_layers + 1];
        th.push(dir.to_vec());
        let mut offsets = Vec::with_capacity(n_layers);
        {
            let mut off = 0;
            for w in self.layer_sizes.windows(2) {
                offsets.push(off);
                off += (w[0] + 1) * w[1];
            }
        }
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weights = &self.params[offsets[l]..offsets[l] + n_in * n_out];
            let mut t = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = 0.0;
                for (wi, ti) in row.iter().zip(th[l].iter()) {
                    acc += wi * ti;
                }
                t[o] = acc;
            }
            ts[l + 1] = t.clone();
            let post = &acts[l + 1];
            if l + 1 < n_layers {
                for (tv, hv) in t.iter_mut().zip(post.iter()) {
                    *tv *= 1.0 - hv * hv;
                }
            } else if matches!(self.output_transform, OutputTransform::Tanh) {
                for (tv, yv) in t.iter_mut().zip(post.iter()) {
                    *tv *= 1.0 - yv * yv;
                }
            }
            th.push(t);
        }
        let j: f64 = th[n_layers]
            .iter()
            .zip(upstream.iter())
            .map(|(t, u)| t * u)
            .sum();

        // Reverse pass over the joint (primal, tangent) computation.
        let mut grad = vec![0.0; self.params.len()];
        let y = &acts[n_layers];
        let (mut bar_ts, mut bar_s): (Vec<f64>, Vec<f64>) = match self.output_transform {
            OutputTransform::Identity => (upstream.to_vec(), vec![0.0; self.out_dim()]),
            OutputTransform::Tanh => {
                let bts = upstream
                    .iter()
                    .zip(y.iter())
                    .map(|(u, yv)| u * (1.0 - yv * yv))
                    .collect();
                let bs = upstream
                    .iter()
                    .zip(y.iter())
                    .zip(ts[n_layers].iter())
                    .map(|((u, yv), tsv)| u * (-2.0 * yv * (1.0 - yv * yv)) * tsv)
                    .collect();
                (bts, bs)
            }
            OutputTransform::Softmax => unreachable!(),
        };

        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let weights = &self.params[off..off + n_in * n_out];
            {
                let (gw, gb) = grad[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let bt = bar_ts[o];
                    let bs = bar_s[o];
                    gb[o] += bs;
                    let grow = &mut gw[o * n_in..(o + 1) * n_in];
                    for ((g, thi), hi) in grow.iter_mut().zip(th[l].iter()).zip(acts[l].iter()) {
                        *g += bt * thi + bs * hi;
                    }
                }
            }
            let mut bar_th = vec![0.0; n_in];
            let mut bar_h = vec![0.0; n_in];
            for o in 0..n_out {
                let bt = bar_ts[o];
                let bs = bar_s[o];
                let row = &weights[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    bar_th[i] += bt * row[i];
                    bar_h[i] += bs * row[i];
                }
            }
            if l > 0 {
                let h = &acts[l];
                let tsl = &ts[l];
                let mut nts = vec![0.0; n_in];
                let mut ns = vec![0.0; n_in];
                for i in 0..n_in {
                    let d = 1.0 - h[i] * h[i];
                    nts[i] = d * bar_th[i];
                    ns[i] = d * bar_h[i] + (-2.0 * h[i] * d) * tsl[i] * bar_th[i];
                }
                bar_ts = nts;
                bar_s = ns;
            } else {
                // bar_h is dJ/dx; bar over the tangent seed is dJ/ddir (unused).
                return Ok((j, grad, bar_h));
            }
        }
        unreachable!()
    }
}

fn apply_transform(t: OutputTransform, out: &mut [f64]) {
    match t {
        OutputTransform::Identity => {}
        OutputTransform::Tanh => {
            for v in out {
                *v = v.tanh();
            }
        }
        OutputTransform::Softmax => {
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in out.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in out {
                *v /= sum;
            }
        }
    }
}

/// Backward through the output transform: given post-transform values y and
/// upstream cotangent, produce the cotangent of the pre-transform output.
fn transform_backward(t: OutputTransform, y: &[f64], upstream: &[f64]) -> Vec<f64> {
    match t {
        OutputTransform::Identity => upstream.to_vec(),
        OutputTransform::Tanh => y
            .iter()
            .zip(upstream.iter())
            .map(|(yv, u)| u * (1.0 - yv * yv))
            .collect(),
        OutputTransform::Softmax => {
            let dot: f64 = y.iter().zip(upstream.iter()).map(|(p, u)| p * u).sum();
            y.iter()
                .zip(upstream.iter())
                .map(|(p, u)| p * (u - dot))
                .collect()
        }
    }
}

/// Central finite differences of a scalar loss over a parameter vector.
/// Test oracle: kept independent of the reverse-mode path.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(
    mut loss: F,
    params: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut g = vec![0.0; p.len()];
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let hi = loss(&p);
        p[i] = orig - h;
        let lo = loss(&p);
        p[i] = orig;
        g[i] = (hi - lo) / (2.0 * h);
    }
    g
}

/// Exact linear map as a single-layer network: out = W·x, no bias, no
/// squashing. Useful for fixtures whose arithmetic must be bit-exact.
pub fn linear_mlp(weights: &[Vec<f64>]) -> Result<Mlp> {
    let out_dim = weights.len();
    let in_dim = weights.first().map_or(0, Vec::len);
    let mut net = Mlp::zeros(&[in_dim, out_dim], OutputTransform::Identity)?;
    let params = net.params_mut();
    for (o, row) in weights.iter().enumerate() {
        if row.len() != in_dim {
            return Err(Error::Dimension("ragged weight rows".into()));
        }
        params[o * in_dim..(o + 1) * in_dim].copy_from_slice(row);
    }
    Ok(net)
}

/// Rescale a gradient in place so its global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad {
            *g *= scale;
        }
    }
    norm
}

/// Adaptive-moment optimizer with bias correction and decoupled weight decay.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, n_params: usize) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update step. Non-finite gradient components are rejected with an
    /// error and the parameters are left untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient passed to optimizer".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
