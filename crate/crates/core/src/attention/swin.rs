//! Shifted-window transformer block.
//!
//! ```text
//! y   = x + Attn(LN1(x))
//! out = y + W_b gelu(W_a LN2(y))
//! ```
//!
//! `Attn` is window attention over `M x M` windows. With a non-zero shift
//! the grid is cyclically shifted first, cross-region pairs are masked and
//! the result is shifted back. There is no relative position bias.

use super::tensor::{matvec, matvec_t, Tensor};
use super::window::{
    attention_vjp, attention_weights, cyclic_shift, inverse_shift, shift_masks, window_merge,
    window_partition,
};
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-5;
pub const DEFAULT_WINDOW: usize = 4;
pub const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowAttnWeights {
    /// `[d, d]` projections, applied per token as `W t`.
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln1_scale: Tensor,
    pub ln1_shift: Tensor,
    pub ln2_scale: Tensor,
    pub ln2_shift: Tensor,
    /// `[hidden, d]`
    pub mlp_in: Tensor,
    /// `[d, hidden]`
    pub mlp_out: Tensor,
    pub window: usize,
    pub shift: usize,
    pub heads: usize,
}

impl WindowAttnWeights {
    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, t) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ] {
            t.expect_shape(&[d, d])
                .map_err(|e| Error::Shape(format!("{name}: {e}")))?;
        }
        for t in [
            &self.ln1_scale,
            &self.ln1_shift,
            &self.ln2_scale,
            &self.ln2_shift,
        ] {
            t.expect_shape(&[d])?;
        }
        let (hidden, d_in) = self.mlp_in.dims2()?;
        if d_in != d {
            return Err(Error::Shape(format!(
                "mlp_in {:?} for width {d}",
                self.mlp_in.shape()
            )));
        }
        self.mlp_out.expect_shape(&[d, hidden])?;
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Shape(format!(
                "{} heads do not divide width {d}",
                self.heads
            )));
        }
        if self.window == 0 || self.shift >= self.window {
            return Err(Error::InvalidConfig(format!(
                "shift {} must be below window {}",
                self.shift, self.window
            )));
        }
        Ok(())
    }

    /// Uniform `[-0.5, 0.5)` projections and MLP, LN scale 1 and shift 0,
    /// hidden width `4d`.
    pub fn seeded(
        dim: usize,
        window: usize,
        shift: usize,
        heads: usize,
        seed: u64,
    ) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut square = || Tensor::random_uniform(&[dim, dim], -0.5, 0.5, &mut rng);
        let (wq, wk, wv, wo) = (square(), square(), square(), square());
        let hidden = MLP_RATIO * dim;
        let mlp_in = Tensor::random_uniform(&[hidden, dim], -0.5, 0.5, &mut rng);
        let mlp_out = Tensor::random_uniform(&[dim, hidden], -0.5, 0.5, &mut rng);
        let w = Self {
            wq,
            wk,
            wv,
            wo,
            ln1_scale: Tensor::full(&[dim], 1.0),
            ln1_shift: Tensor::zeros(&[dim]),
            ln2_scale: Tensor::full(&[dim], 1.0),
            ln2_shift: Tensor::zeros(&[dim]),
            mlp_in,
            mlp_out,
            window,
            shift,
            heads,
        };
        w.validate()?;
        Ok(w)
    }

    /// Same as [`Self::seeded`] but with every projection and MLP matrix
    /// zeroed.
    pub fn zeros(dim: usize, window: usize, shift: usize, heads: usize) -> Result<Self> {
        let mut w = Self::seeded(dim, window, shift, heads, 0)?;
        for t in [
            &mut w.wq,
            &mut w.wk,
            &mut w.wv,
            &mut w.wo,
            &mut w.mlp_in,
            &mut w.mlp_out,
        ] {
            t.data_mut().fill(0.0);
        }
        Ok(w)
    }

    /// Random LN affine parameters, so gradient checks exercise them too.
    pub fn with_random_norms(mut self, seed: u64) -> Self {
        use rand::SeedableRng;
        let d = self.dim();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        self.ln1_scale = Tensor::random_uniform(&[d], 0.5, 1.5, &mut rng);
        self.ln1_shift = Tensor::random_uniform(&[d], -0.5, 0.5, &mut rng);
        self.ln2_scale = Tensor::random_uniform(&[d], 0.5, 1.5, &mut rng);
        self.ln2_shift = Tensor::random_uniform(&[d], -0.5, 0.5, &mut rng);
        self
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let (h, w, d) = x.dims3()?;
        if d != self.dim() {
            return Err(Error::Shape(format!(
                "token width {d}, weights expect {}",
                self.dim()
            )));
        }
        if h % self.window != 0 || w % self.window != 0 {
            return Err(Error::Shape(format!(
                "window {} does not divide {h}x{w}",
                self.window
            )));
        }
        Ok((h, w, d))
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

struct NormTrace {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

/// Per-token layer norm over the last axis.
fn layer_norm(x: &[f64], d: usize, scale: &Tensor, shift: &Tensor) -> (Vec<f64>, NormTrace) {
    let tokens = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; tokens];
    for t in 0..tokens {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        rstd[t] = 1.0 / (var + LN_EPS).sqrt();
        for c in 0..d {
            let n = (row[c] - mean) * rstd[t];
            xhat[t * d + c] = n;
            out[t * d + c] = scale.data()[c] * n + shift.data()[c];
        }
    }
    (out, NormTrace { xhat, rstd })
}

fn layer_norm_vjp(trace: &NormTrace, scale: &Tensor, g_out: &[f64], d: usize) -> Vec<f64> {
    let mut g = vec![0.0; g_out.len()];
    for (t, &rstd) in trace.rstd.iter().enumerate() {
        let range = t * d..(t + 1) * d;
        let xhat = &trace.xhat[range.clone()];
        let g_hat: Vec<f64> = g_out[range]
            .iter()
            .zip(scale.data())
            .map(|(a, b)| a * b)
            .collect();
        let mean_g = g_hat.iter().sum::<f64>() / d as f64;
        let mean_gx = g_hat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            g[t * d + c] = rstd * (g_hat[c] - mean_g - xhat[c] * mean_gx);
        }
    }
    g
}

fn project(w: &Tensor, rows: &[f64], d: usize) -> Vec<f64> {
    rows.chunks(d).flat_map(|r| matvec(w, r)).collect()
}

fn project_t(w: &Tensor, rows: &[f64], d: usize) -> Vec<f64> {
    rows.chunks(d).flat_map(|r| matvec_t(w, r)).collect()
}

fn head_slice(rows: &[f64], n: usize, d: usize, head: usize, dh: usize) -> Tensor {
    Tensor::from_fn(&[n, dh], |i| rows[(i / dh) * d + head * dh + i % dh])
}

fn head_scatter(dst: &mut [f64], src: &Tensor, d: usize, head: usize, dh: usize) {
    for (i, &v) in src.data().iter().enumerate() {
        dst[(i / dh) * d + head * dh + i % dh] += v;
    }
}

/// Attention weights of one window: the original flat grid index of each
/// window token, and one `[M^2, M^2]` weight matrix per head.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAttention {
    pub tokens: Vec<usize>,
    pub weights: Vec<Tensor>,
}

struct WindowPass {
    windows: Tensor,
    masks: Option<Vec<Tensor>>,
}

fn window_pass(t: &Tensor, w: &WindowAttnWeights) -> Result<WindowPass> {
    let (h, wd, _) = t.dims3()?;
    let shifted = cyclic_shift(t, w.shift)?;
    Ok(WindowPass {
        windows: window_partition(&shifted, w.window)?,
        masks: shift_masks(h, wd, w.window, w.shift)?,
    })
}

/// Window attention (W-MSA or SW-MSA by `w.shift`) on an already
/// normalized grid.
pub fn window_attention(t: &Tensor, w: &WindowAttnWeights) -> Result<Tensor> {
    let (h, wd, d) = w.check_input(t)?;
    let pass = window_pass(t, w)?;
    let n = w.window * w.window;
    let dh = d / w.heads;
    let mut out = Vec::with_capacity(t.len());
    for (wi, rows) in pass.windows.data().chunks(n * d).enumerate() {
        let mask = pass.masks.as_ref().map(|m| &m[wi]);
        let (q, k, v) = (
            project(&w.wq, rows, d),
            project(&w.wk, rows, d),
            project(&w.wv, rows, d),
        );
        let mut heads_out = vec![0.0; n * d];
        for head in 0..w.heads {
            let p = attention_weights(
                &head_slice(&q, n, d, head, dh),
                &head_slice(&k, n, d, head, dh),
                mask,
            )?;
            let vh = head_slice(&v, n, d, head, dh);
            let o = Tensor::from_fn(&[n, dh], |idx| {
                let (i, c) = (idx / dh, idx % dh);
                (0..n)
                    .map(|j| p.data()[i * n + j] * vh.data()[j * dh + c])
                    .sum()
            });
            head_scatter(&mut heads_out, &o, d, head, dh);
        }
        out.extend(project(&w.wo, &heads_out, d));
    }
    let merged = window_merge(&Tensor::new(pass.windows.shape().to_vec(), out)?, h, wd)?;
    inverse_shift(&merged, w.shift)
}

fn window_attention_vjp(t: &Tensor, w: &WindowAttnWeights, cot: &Tensor) -> Result<Tensor> {
    let (h, wd, d) = w.check_input(t)?;
    let pass = window_pass(t, w)?;
    let g_windows = window_partition(&cyclic_shift(cot, w.shift)?, w.window)?;
    let n = w.window * w.window;
    let dh = d / w.heads;
    let mut g_in = Vec::with_capacity(t.len());
    for (wi, (rows, g_rows)) in pass
        .windows
        .data()
        .chunks(n * d)
        .zip(g_windows.data().chunks(n * d))
        .enumerate()
    {
        let mask = pass.masks.as_ref().map(|m| &m[wi]);
        let (q, k, v) = (
            project(&w.wq, rows, d),
            project(&w.wk, rows, d),
            project(&w.wv, rows, d),
        );
        let g_heads = project_t(&w.wo, g_rows, d);
        let (mut g_q, mut g_k, mut g_v) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
        for head in 0..w.heads {
            let (qh, kh, vh) = (
                head_slice(&q, n, d, head, dh),
                head_slice(&k, n, d, head, dh),
                head_slice(&v, n, d, head, dh),
            );
            let p = attention_weights(&qh, &kh, mask)?;
            let (gq, gk, gv) =
                attention_vjp(&qh, &kh, &vh, &p, &head_slice(&g_heads, n, d, head, dh));
            head_scatter(&mut g_q, &gq, d, head, dh);
            head_scatter(&mut g_k, &gk, d, head, dh);
            head_scatter(&mut g_v, &gv, d, head, dh);
        }
        let (a, b, c) = (
            project_t(&w.wq, &g_q, d),
            project_t(&w.wk, &g_k, d),
            project_t(&w.wv, &g_v, d),
        );
        g_in.extend(a.iter().zip(&b).zip(&c).map(|((x, y), z)| x + y + z));
    }
    let merged = window_merge(&Tensor::new(g_windows.shape().to_vec(), g_in)?, h, wd)?;
    inverse_shift(&merged, w.shift)
}

/// Attention weights per window and head for input `x` (after LN1).
pub fn swin_attention_maps(x: &Tensor, w: &WindowAttnWeights) -> Result<Vec<WindowAttention>> {
    let (h, wd, d) = w.check_input(x)?;
    let (normed, _) = layer_norm(x.data(), d, &w.ln1_scale, &w.ln1_shift);
    let t = Tensor::new(vec![h, wd, d], normed)?;
    let pass = window_pass(&t, w)?;
    let index = Tensor::from_fn(&[h, wd, 1], |i| i as f64);
    let index_windows = window_partition(&cyclic_shift(&index, w.shift)?, w.window)?;
    let n = w.window * w.window;
    let dh = d / w.heads;
    pass.windows
        .data()
        .chunks(n * d)
        .zip(index_windows.data().chunks(n))
        .enumerate()
        .map(|(wi, (rows, ids))| {
            let mask = pass.masks.as_ref().map(|m| &m[wi]);
            let (q, k) = (project(&w.wq, rows, d), project(&w.wk, rows, d));
            let weights = (0..w.heads)
                .map(|head| {
                    attention_weights(
                        &head_slice(&q, n, d, head, dh),
                        &head_slice(&k, n, d, head, dh),
                        mask,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WindowAttention {
                tokens: ids.iter().map(|&i| i as usize).collect(),
                weights,
            })
        })
        .collect()
}

/// `x + Attn(LN1(x))`
pub fn attention_sublayer(x: &Tensor, w: &WindowAttnWeights) -> Result<Tensor> {
    let (h, wd, d) = w.check_input(x)?;
    let (normed, _) = layer_norm(x.data(), d, &w.ln1_scale, &w.ln1_shift);
    let a = window_attention(&Tensor::new(vec![h, wd, d], normed)?, w)?;
    x.zip_with(&a, |p, q| p + q)
}

pub fn attention_sublayer_vjp(x: &Tensor, w: &WindowAttnWeights, cot: &Tensor) -> Result<Tensor> {
    let (h, wd, d) = w.check_input(x)?;
    cot.expect_shape(x.shape())?;
    let (normed, trace) = layer_norm(x.data(), d, &w.ln1_scale, &w.ln1_shift);
    let g_t = window_attention_vjp(&Tensor::new(vec![h, wd, d], normed)?, w, cot)?;
    let g_x = layer_norm_vjp(&trace, &w.ln1_scale, g_t.data(), d);
    Tensor::new(
        x.shape().to_vec(),
        cot.data().iter().zip(&g_x).map(|(a, b)| a + b).collect(),
    )
}

/// `y + W_b gelu(W_a LN2(y))`
pub fn mlp_sublayer(y: &Tensor, w: &WindowAttnWeights) -> Result<Tensor> {
    let (_, _, d) = w.check_input(y)?;
    let (normed, _) = layer_norm(y.data(), d, &w.ln2_scale, &w.ln2_shift);
    let mut out = y.clone();
    for (o, u) in out.data_mut().chunks_mut(d).zip(normed.chunks(d)) {
        let act: Vec<f64> = matvec(&w.mlp_in, u).into_iter().map(gelu).collect();
        for (ov, m) in o.iter_mut().zip(matvec(&w.mlp_out, &act)) {
            *ov += m;
        }
    }
    Ok(out)
}

pub fn mlp_sublayer_vjp(y: &Tensor, w: &WindowAttnWeights, cot: &Tensor) -> Result<Tensor> {
    let (_, _, d) = w.check_input(y)?;
    cot.expect_shape(y.shape())?;
    let (normed, trace) = layer_norm(y.data(), d, &w.ln2_scale, &w.ln2_shift);
    let mut g_u = Vec::with_capacity(y.len());
    for (u, g) in normed.chunks(d).zip(cot.data().chunks(d)) {
        let pre = matvec(&w.mlp_in, u);
        let g_act = matvec_t(&w.mlp_out, g);
        let g_pre: Vec<f64> = g_act
            .iter()
            .zip(&pre)
            .map(|(ga, &p)| ga * gelu_grad(p))
            .collect();
        g_u.extend(matvec_t(&w.mlp_in, &g_pre));
    }
    let g_y = layer_norm_vjp(&trace, &w.ln2_scale, &g_u, d);
    Tensor::new(
        y.shape().to_vec(),
        cot.data().iter().zip(&g_y).map(|(a, b)| a + b).collect(),
    )
}

pub fn swin_block_forward(x: &Tensor, w: &WindowAttnWeights) -> Result<Tensor> {
    mlp_sublayer(&attention_sublayer(x, w)?, w)
}

/// Input gradient of [`swin_block_forward`] contracted with `cot`.
pub fn swin_block_vjp(x: &Tensor, w: &WindowAttnWeights, cot: &Tensor) -> Result<Tensor> {
    let y = attention_sublayer(x, w)?;
    let g_y = mlp_sublayer_vjp(&y, w, cot)?;
    attention_sublayer_vjp(x, w, &g_y)
}
