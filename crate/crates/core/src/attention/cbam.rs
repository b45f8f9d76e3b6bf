//! Convolutional block attention: a channel gate followed by a spatial gate.
//!
//! Channel gate: `M_c = sigmoid(W1 relu(W0 avg) + W1 relu(W0 max))` with the
//! pools taken over `H x W`. Spatial gate: per-pixel channel mean and max,
//! stacked `[mean, max]`, a 7x7 cross-correlation with zero padding 3 and a
//! sigmoid. No bias terms anywhere.

use super::tensor::{matvec, matvec_t, sigmoid, Tensor};
use crate::{Error, Result};

pub const KERNEL: usize = 7;
const PAD: isize = 3;
pub const DEFAULT_REDUCTION: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CbamWeights {
    /// `[C / r, C]`
    pub w0: Tensor,
    /// `[C, C / r]`
    pub w1: Tensor,
    /// `[2, 7, 7]`; plane 0 sees the channel mean, plane 1 the channel max.
    pub spatial_kernel: Tensor,
    pub reduction: usize,
}

impl CbamWeights {
    pub fn new(w0: Tensor, w1: Tensor, spatial_kernel: Tensor, reduction: usize) -> Result<Self> {
        let (hidden, c) = w0.dims2()?;
        if reduction == 0 || c % reduction != 0 || hidden != c / reduction {
            return Err(Error::Shape(format!(
                "w0 {:?} inconsistent with reduction {reduction}",
                w0.shape()
            )));
        }
        w1.expect_shape(&[c, hidden])?;
        spatial_kernel.expect_shape(&[2, KERNEL, KERNEL])?;
        Ok(Self {
            w0,
            w1,
            spatial_kernel,
            reduction,
        })
    }

    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let hidden = Self::hidden(channels, reduction)?;
        Self::new(
            Tensor::zeros(&[hidden, channels]),
            Tensor::zeros(&[channels, hidden]),
            Tensor::zeros(&[2, KERNEL, KERNEL]),
            reduction,
        )
    }

    /// Uniform `[-0.5, 0.5)` weights from `seed`.
    pub fn seeded(channels: usize, reduction: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let hidden = Self::hidden(channels, reduction)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::new(
            Tensor::random_uniform(&[hidden, channels], -0.5, 0.5, &mut rng),
            Tensor::random_uniform(&[channels, hidden], -0.5, 0.5, &mut rng),
            Tensor::random_uniform(&[2, KERNEL, KERNEL], -0.5, 0.5, &mut rng),
            reduction,
        )
    }

    fn hidden(channels: usize, reduction: usize) -> Result<usize> {
        if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Shape(format!(
                "reduction {reduction} must divide channel count {channels}"
            )));
        }
        Ok(channels / reduction)
    }

    pub fn channels(&self) -> usize {
        self.w0.shape()[1]
    }

    fn check_input(&self, f: &Tensor) -> Result<(usize, usize, usize)> {
        let (c, h, w) = f.dims3()?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "input has {c} channels, weights expect {}",
                self.channels()
            )));
        }
        Ok((c, h, w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Per-channel average or max over the spatial extent of a `C x H x W`
/// tensor.
pub fn global_pool(f: &Tensor, kind: PoolKind) -> Result<Vec<f64>> {
    let (_, h, w) = f.dims3()?;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::Shape("empty spatial extent".into()));
    }
    Ok(f.data()
        .chunks(hw)
        .map(|plane| match kind {
            PoolKind::Avg => plane.iter().sum::<f64>() / hw as f64,
            PoolKind::Max => plane.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

struct MlpTrace {
    pre: Vec<f64>,
    out: Vec<f64>,
}

fn shared_mlp(w: &CbamWeights, v: &[f64]) -> MlpTrace {
    let pre = matvec(&w.w0, v);
    let hidden: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
    let out = matvec(&w.w1, &hidden);
    MlpTrace { pre, out }
}

fn shared_mlp_vjp(w: &CbamWeights, trace: &MlpTrace, g_out: &[f64]) -> Vec<f64> {
    let g_hidden = matvec_t(&w.w1, g_out);
    let g_pre: Vec<f64> = g_hidden
        .iter()
        .zip(&trace.pre)
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect();
    matvec_t(&w.w0, &g_pre)
}

/// Channel attention vector `M_c`, length `C`, values in `(0, 1)`.
pub fn channel_attention(f: &Tensor, w: &CbamWeights) -> Result<Vec<f64>> {
    w.check_input(f)?;
    let avg = shared_mlp(w, &global_pool(f, PoolKind::Avg)?);
    let max = shared_mlp(w, &global_pool(f, PoolKind::Max)?);
    Ok(avg
        .out
        .iter()
        .zip(&max.out)
        .map(|(a, b)| sigmoid(a + b))
        .collect())
}

/// Channel mean and max at every pixel, as a `[2, H, W]` stack.
fn channel_stats(f: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = f.dims3()?;
    let hw = h * w;
    let d = f.data();
    let mut stack = vec![0.0; 2 * hw];
    let mut arg = vec![0; hw];
    for p in 0..hw {
        let column = (0..c).map(|ch| d[ch * hw + p]);
        stack[p] = column.clone().sum::<f64>() / c as f64;
        arg[p] = argmax(column);
        stack[hw + p] = d[arg[p] * hw + p];
    }
    Ok((Tensor::new(vec![2, h, w], stack)?, arg))
}

fn conv7(stack: &Tensor, kernel: &Tensor) -> Vec<f64> {
    let (planes, h, w) = (stack.shape()[0], stack.shape()[1], stack.shape()[2]);
    let (x, k) = (stack.data(), kernel.data());
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for c in 0..planes {
                for ki in 0..KERNEL {
                    let y = i as isize + ki as isize - PAD;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for kj in 0..KERNEL {
                        let xx = j as isize + kj as isize - PAD;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        acc += k[(c * KERNEL + ki) * KERNEL + kj]
                            * x[(c * h + y as usize) * w + xx as usize];
                    }
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

fn conv7_vjp(g_out: &[f64], kernel: &Tensor, h: usize, w: usize) -> Vec<f64> {
    let k = kernel.data();
    let mut g = vec![0.0; 2 * h * w];
    for i in 0..h {
        for j in 0..w {
            let go = g_out[i * w + j];
            for c in 0..2 {
                for ki in 0..KERNEL {
                    let y = i as isize + ki as isize - PAD;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for kj in 0..KERNEL {
                        let xx = j as isize + kj as isize - PAD;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        g[(c * h + y as usize) * w + xx as usize] +=
                            k[(c * KERNEL + ki) * KERNEL + kj] * go;
                    }
                }
            }
        }
    }
    g
}

/// Spatial attention map `M_s`, shape `[H, W]`, values in `(0, 1)`.
pub fn spatial_attention(f: &Tensor, w: &CbamWeights) -> Result<Tensor> {
    let (_, h, wd) = w.check_input(f)?;
    let (stack, _) = channel_stats(f)?;
    let logits = conv7(&stack, &w.spatial_kernel);
    Tensor::new(vec![h, wd], logits.into_iter().map(sigmoid).collect())
}

/// `F * M_c` broadcast over the spatial axes.
pub fn apply_channel_gate(f: &Tensor, mc: &[f64]) -> Result<Tensor> {
    let (c, h, w) = f.dims3()?;
    if mc.len() != c {
        return Err(Error::Shape(format!(
            "gate length {} for {c} channels",
            mc.len()
        )));
    }
    let hw = h * w;
    Ok(Tensor::from_fn(f.shape(), |i| f.data()[i] * mc[i / hw]))
}

/// `F * M_s` broadcast over channels.
pub fn apply_spatial_gate(f: &Tensor, ms: &Tensor) -> Result<Tensor> {
    let (_, h, w) = f.dims3()?;
    ms.expect_shape(&[h, w])?;
    let hw = h * w;
    Ok(Tensor::from_fn(f.shape(), |i| {
        f.data()[i] * ms.data()[i % hw]
    }))
}

pub fn channel_gate_forward(f: &Tensor, w: &CbamWeights) -> Result<Tensor> {
    apply_channel_gate(f, &channel_attention(f, w)?)
}

pub fn spatial_gate_forward(f: &Tensor, w: &CbamWeights) -> Result<Tensor> {
    apply_spatial_gate(f, &spatial_attention(f, w)?)
}

pub fn cbam_forward(f: &Tensor, w: &CbamWeights) -> Result<Tensor> {
    spatial_gate_forward(&channel_gate_forward(f, w)?, w)
}

/// Input gradient of [`channel_gate_forward`] contracted with `cot`.
pub fn channel_gate_vjp(f: &Tensor, w: &CbamWeights, cot: &Tensor) -> Result<Tensor> {
    let (c, h, wd) = w.check_input(f)?;
    cot.expect_shape(f.shape())?;
    let hw = h * wd;
    let avg_in = global_pool(f, PoolKind::Avg)?;
    let avg = shared_mlp(w, &avg_in);
    let max = shared_mlp(w, &global_pool(f, PoolKind::Max)?);
    let mc: Vec<f64> = avg
        .out
        .iter()
        .zip(&max.out)
        .map(|(a, b)| sigmoid(a + b))
        .collect();

    let (fd, gd) = (f.data(), cot.data());
    let mut g = Tensor::from_fn(f.shape(), |i| gd[i] * mc[i / hw]);
    let g_z: Vec<f64> = (0..c)
        .map(|ch| {
            let g_mc: f64 = (0..hw).map(|p| gd[ch * hw + p] * fd[ch * hw + p]).sum();
            g_mc * mc[ch] * (1.0 - mc[ch])
        })
        .collect();
    let g_avg = shared_mlp_vjp(w, &avg, &g_z);
    let g_max = shared_mlp_vjp(w, &max, &g_z);

    let out = g.data_mut();
    for ch in 0..c {
        let plane = &fd[ch * hw..(ch + 1) * hw];
        for p in 0..hw {
            out[ch * hw + p] += g_avg[ch] / hw as f64;
        }
        out[ch * hw + argmax(plane.iter().copied())] += g_max[ch];
    }
    Ok(g)
}

/// Input gradient of [`spatial_gate_forward`] contracted with `cot`.
pub fn spatial_gate_vjp(f: &Tensor, w: &CbamWeights, cot: &Tensor) -> Result<Tensor> {
    let (c, h, wd) = w.check_input(f)?;
    cot.expect_shape(f.shape())?;
    let hw = h * wd;
    let (stack, arg) = channel_stats(f)?;
    let ms: Vec<f64> = conv7(&stack, &w.spatial_kernel)
        .into_iter()
        .map(sigmoid)
        .collect();

    let (fd, gd) = (f.data(), cot.data());
    let g_logit: Vec<f64> = (0..hw)
        .map(|p| {
            let g_ms: f64 = (0..c).map(|ch| gd[ch * hw + p] * fd[ch * hw + p]).sum();
            g_ms * ms[p] * (1.0 - ms[p])
        })
        .collect();
    let g_stack = conv7_vjp(&g_logit, &w.spatial_kernel, h, wd);

    let mut g = Tensor::from_fn(f.shape(), |i| gd[i] * ms[i % hw]);
    let out = g.data_mut();
    for p in 0..hw {
        for ch in 0..c {
            out[ch * hw + p] += g_stack[p] / c as f64;
        }
        out[arg[p] * hw + p] += g_stack[hw + p];
    }
    Ok(g)
}

/// Input gradient of [`cbam_forward`] contracted with `cot`.
pub fn cbam_vjp(f: &Tensor, w: &CbamWeights, cot: &Tensor) -> Result<Tensor> {
    let gated = channel_gate_forward(f, w)?;
    let g_gated = spatial_gate_vjp(&gated, w, cot)?;
    channel_gate_vjp(f, w, &g_gated)
}
