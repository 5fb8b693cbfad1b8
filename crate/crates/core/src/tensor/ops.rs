use serde::{Deserialize, Serialize};

use super::{axpy, dot, Parameter, Tensor};
use crate::error::{Error, Result};

/// Lower/upper clamp applied to probabilities before the log in [`bce_loss`].
pub const PROB_CLAMP: f64 = 1e-7;
/// Guard added to the cosine denominator.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `y = act(x W + b)` for a `1×n` input, `n×k` weight and `1×k` bias.
pub fn dense_forward(
    x: &Tensor,
    w: &Parameter,
    b: &Parameter,
    activation: Activation,
) -> Result<Tensor> {
    let (n, k) = w.shape();
    if x.rows() != 1 || x.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "dense_forward",
            left: x.shape(),
            right: w.shape(),
        });
    }
    if b.shape() != (1, k) {
        return Err(Error::ShapeMismatch {
            op: "dense_forward(bias)",
            left: b.shape(),
            right: (1, k),
        });
    }
    let mut out = b.value.as_slice().to_vec();
    let wv = w.value.as_slice();
    for (i, &xi) in x.as_slice().iter().enumerate() {
        if xi != 0.0 {
            axpy(&mut out, xi, &wv[i * k..(i + 1) * k]);
        }
    }
    for v in &mut out {
        *v = activation.apply(*v);
    }
    Ok(Tensor::row_vector(out))
}

/// Backward of [`dense_forward`]: accumulates `dL/dW`, `dL/db` and returns `dL/dx`.
pub fn dense_backward(
    x: &Tensor,
    y: &Tensor,
    dy: &Tensor,
    w: &mut Parameter,
    b: &mut Parameter,
    activation: Activation,
) -> Tensor {
    let (n, k) = w.shape();
    debug_assert_eq!(dy.shape(), (1, k));
    let dz: Vec<f64> = dy
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(g, &out)| g * activation.derivative_from_output(out))
        .collect();
    axpy(b.grad.as_mut_slice(), 1.0, &dz);
    let wv = w.value.as_slice();
    let wg = w.grad.as_mut_slice();
    let mut dx = vec![0.0; n];
    for (i, &xi) in x.as_slice().iter().enumerate() {
        if xi != 0.0 {
            axpy(&mut wg[i * k..(i + 1) * k], xi, &dz);
        }
        dx[i] = dot(&wv[i * k..(i + 1) * k], &dz);
    }
    Tensor::row_vector(dx)
}

pub fn embedding_lookup(table: &Parameter, id: usize) -> Result<Tensor> {
    if id >= table.value.rows() {
        return Err(Error::IndexOutOfRange {
            index: id,
            rows: table.value.rows(),
        });
    }
    Ok(Tensor::row_vector(table.value.row(id).to_vec()))
}

/// Scatter-add of the upstream gradient into row `id`.
pub fn embedding_backward(table: &mut Parameter, id: usize, dy: &[f64]) {
    axpy(table.grad.row_mut(id), 1.0, dy);
}

/// Result of mean pooling; `empty` marks the zero vector produced for no rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub value: Tensor,
    pub empty: bool,
}

pub fn mean_pool(rows: &Tensor) -> Pooled {
    let (s, d) = rows.shape();
    let mut out = vec![0.0; d];
    if s == 0 {
        return Pooled {
            value: Tensor::row_vector(out),
            empty: true,
        };
    }
    for r in 0..s {
        axpy(&mut out, 1.0, rows.row(r));
    }
    let inv = 1.0 / s as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Pooled {
        value: Tensor::row_vector(out),
        empty: false,
    }
}

/// Gradient of [`mean_pool`] with respect to each input row (`dy / s`).
pub fn mean_pool_backward(rows: usize, dy: &Tensor) -> Tensor {
    let d = dy.cols();
    let mut out = Tensor::zeros(rows, d);
    if rows == 0 {
        return out;
    }
    let inv = 1.0 / rows as f64;
    for r in 0..rows {
        axpy(out.row_mut(r), inv, dy.as_slice());
    }
    out
}

/// Mean of the embedding rows selected by `ids`, without materialising them.
pub fn embedding_mean(table: &Parameter, ids: &[u32], dim: usize) -> Result<Pooled> {
    let mut out = vec![0.0; dim];
    if ids.is_empty() {
        return Ok(Pooled {
            value: Tensor::row_vector(out),
            empty: true,
        });
    }
    if table.value.cols() != dim {
        return Err(Error::ShapeMismatch {
            op: "embedding_mean",
            left: table.shape(),
            right: (1, dim),
        });
    }
    for &id in ids {
        let id = id as usize;
        if id >= table.value.rows() {
            return Err(Error::IndexOutOfRange {
                index: id,
                rows: table.value.rows(),
            });
        }
        axpy(&mut out, 1.0, table.value.row(id));
    }
    let inv = 1.0 / ids.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(Pooled {
        value: Tensor::row_vector(out),
        empty: false,
    })
}

pub fn embedding_mean_backward(table: &mut Parameter, ids: &[u32], dy: &[f64]) {
    if ids.is_empty() {
        return;
    }
    let inv = 1.0 / ids.len() as f64;
    for &id in ids {
        axpy(table.grad.row_mut(id as usize), inv, dy);
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `dL/dlogits` given softmax output `p` and `dL/dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, g)| pi * (g - inner)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub context: Tensor,
    pub weights: Tensor,
}

/// `weights = softmax(q Kᵀ / √d)`, `context = weights K`.
pub fn scaled_attention(query: &Tensor, keys: &Tensor) -> Result<Attention> {
    let d = keys.cols();
    if query.rows() != 1 || query.cols() != d {
        return Err(Error::ShapeMismatch {
            op: "scaled_attention",
            left: query.shape(),
            right: keys.shape(),
        });
    }
    let scale = 1.0 / (d as f64).sqrt();
    let q = query.as_slice();
    let logits: Vec<f64> = (0..keys.rows())
        .map(|j| dot(q, keys.row(j)) * scale)
        .collect();
    let weights = softmax(&logits);
    let mut context = vec![0.0; d];
    for (j, &p) in weights.iter().enumerate() {
        axpy(&mut context, p, keys.row(j));
    }
    Ok(Attention {
        context: Tensor::row_vector(context),
        weights: Tensor::row_vector(weights),
    })
}

/// Backward of [`scaled_attention`]. Returns `dL/dquery`; accumulates into
/// `dkeys` only when the keys are trainable.
pub fn scaled_attention_backward(
    query: &Tensor,
    keys: &Tensor,
    attention: &Attention,
    dcontext: &Tensor,
    mut dkeys: Option<&mut Tensor>,
) -> Tensor {
    let d = keys.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let p = attention.weights.as_slice();
    let dc = dcontext.as_slice();
    let dp: Vec<f64> = (0..keys.rows()).map(|j| dot(dc, keys.row(j))).collect();
    let dlogits = softmax_backward(p, &dp);
    let mut dq = vec![0.0; d];
    for j in 0..keys.rows() {
        axpy(&mut dq, dlogits[j] * scale, keys.row(j));
        if let Some(dk) = dkeys.as_deref_mut() {
            let row = dk.row_mut(j);
            axpy(row, p[j], dc);
            axpy(row, dlogits[j] * scale, query.as_slice());
        }
    }
    Tensor::row_vector(dq)
}

/// Cosine similarity with its intermediate norms kept for the backward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub dot: f64,
    pub norm_u: f64,
    pub norm_v: f64,
    /// Set when both inputs are zero and the guard alone defines the value.
    pub degenerate: bool,
}

/// `u·v / (‖u‖‖v‖ + ε)`.
pub fn cosine(u: &[f64], v: &[f64]) -> Cosine {
    let dot_uv = dot(u, v);
    let norm_u = dot(u, u).sqrt();
    let norm_v = dot(v, v).sqrt();
    Cosine {
        value: dot_uv / (norm_u * norm_v + COSINE_EPS),
        dot: dot_uv,
        norm_u,
        norm_v,
        degenerate: norm_u == 0.0 && norm_v == 0.0,
    }
}

/// Gradient of the guarded cosine with respect to `u` only, scaled by `dout`.
pub fn cosine_backward_u(u: &[f64], v: &[f64], c: &Cosine, dout: f64) -> Vec<f64> {
    let denom = c.norm_u * c.norm_v + COSINE_EPS;
    // d/du [dot / (|u||v| + eps)] = v/denom - dot * |v| * u/|u| / denom^2
    let radial = if c.norm_u > 0.0 {
        c.dot * c.norm_v / (c.norm_u * denom * denom)
    } else {
        0.0
    };
    u.iter()
        .zip(v)
        .map(|(&ui, &vi)| dout * (vi / denom - radial * ui))
        .collect()
}

/// Gradients of the guarded cosine with respect to both inputs.
pub fn cosine_backward(u: &[f64], v: &[f64], c: &Cosine, dout: f64) -> (Vec<f64>, Vec<f64>) {
    let du = cosine_backward_u(u, v, c, dout);
    let swapped = Cosine {
        norm_u: c.norm_v,
        norm_v: c.norm_u,
        ..*c
    };
    let dv = cosine_backward_u(v, u, &swapped, dout);
    (du, dv)
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross entropy with a (possibly soft) target.
pub fn bce_loss(prediction: f64, target: f64) -> f64 {
    let p = clamp_prob(prediction);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// `dL/dprediction` of [`bce_loss`]; zero where the clamp is active.
pub fn bce_grad(prediction: f64, target: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&prediction) {
        return 0.0;
    }
    -target / prediction + (1.0 - target) / (1.0 - prediction)
}

/// Gradient of `bce_loss(sigmoid(z), target)` with respect to the logit `z`.
pub fn bce_logit_grad(prediction: f64, target: f64) -> f64 {
    bce_grad(prediction, target) * prediction * (1.0 - prediction)
}

pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Tensor::row_vector(data)
}

pub fn concat_all(parts: &[&Tensor]) -> Tensor {
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        data.extend_from_slice(p.as_slice());
    }
    Tensor::row_vector(data)
}

/// Splits a row vector at `at`, the inverse of [`concat`].
pub fn split(t: &Tensor, at: usize) -> (Tensor, Tensor) {
    let (l, r) = t.as_slice().split_at(at);
    (Tensor::row_vector(l.to_vec()), Tensor::row_vector(r.to_vec()))
}
