//! Finite-difference verification of the reverse-mode input gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cbam::{
    cbam_forward, cbam_vjp, channel_gate_forward, channel_gate_vjp, spatial_gate_forward,
    spatial_gate_vjp, CbamWeights,
};
use super::swin::{
    attention_sublayer, attention_sublayer_vjp, mlp_sublayer, mlp_sublayer_vjp, swin_block_forward,
    swin_block_vjp, WindowAttnWeights,
};
use super::tensor::Tensor;
use crate::{Error, Execution, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// A map `x -> f(x)` with a vector-Jacobian product.
pub trait Differentiable: Sync {
    fn name(&self) -> String;
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    /// `(df/dx)^T cot`
    fn vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Tensor>;
}

pub struct Cbam(pub CbamWeights);
pub struct ChannelGate(pub CbamWeights);
pub struct SpatialGate(pub CbamWeights);
pub struct SwinBlock(pub WindowAttnWeights);
pub struct AttentionSublayer(pub WindowAttnWeights);
pub struct MlpSublayer(pub WindowAttnWeights);

/// `y = W vec(x)`, output shape `[rows]`.
pub struct LinearMap(pub Tensor);

impl Differentiable for Cbam {
    fn name(&self) -> String {
        "cbam".into()
    }
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        cbam_forward(x, &self.0)
    }
    fn vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Tensor> {
        cbam_vjp(x, &self.0, cot)
    }
}

impl Differentiable for ChannelGate {
    fn name(&self) -> String {
        "cbam.channel_gate".into()
    }
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        channel_gate_forward(x, &self.0)
    }
    fn vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Tensor> {
        channel_gate_vjp(x, &self.0, cot)
    }
}

impl Differentiable for SpatialGate {
    fn name(&self) -> String {
        "cbam.spatial_gate".into()
    }
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        spatial_gate_forward(x, &self.0)
    }
    fn vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Tensor> {
        spatial_gate_vjp(x, &self.0, cot)
    }
}

impl Differentiable for SwinBlock {
    fn name(&self) -> String {
        let kind = if self.0.shift == 0 { "w-msa" } else { "sw-msa" };
        format!("swin_block[{kind}]")
    }
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        swin_block_forward(x, &self.0)
    }
    fn vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Tensor> {
        swin_block_vjp(x, &self.0, cot)
    }
}

impl Differentiable for AttentionSublayer {
    fn name(&self) -> String {
        format!("swin.attention[shift={}]", self.0.shift)
    }
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        attention_sublayer(x, &self.0)
    }
    fn vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Tensor> {
        attention_sublayer_vjp(x, &self.0, cot)
    }
}

impl Differentiable for MlpSublayer {
    fn name(&self) -> String {
        "swin.mlp".into()
    }
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        mlp_sublayer(x, &self.0)
    }
    fn vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Tensor> {
        mlp_sublayer_vjp(x, &self.0, cot)
    }
}

impl Differentiable for LinearMap {
    fn name(&self) -> String {
        "linear".into()
    }
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = self.0.dims2()?;
        if cols != x.len() {
            return Err(Error::Shape(format!(
                "linear map takes {cols} inputs, got {}",
                x.len()
            )));
        }
        Tensor::new(vec![rows], super::tensor::matvec(&self.0, x.data()))
    }
    fn vjp(&self, x: &Tensor, cot: &Tensor) -> Result<Tensor> {
        let (rows, _) = self.0.dims2()?;
        cot.expect_shape(&[rows])?;
        Tensor::new(
            x.shape().to_vec(),
            super::tensor::matvec_t(&self.0, cot.data()),
        )
    }
}

/// Exact reverse-mode input gradient of `module` at `x`, contracted with
/// `cot`.
pub fn grad_input(module: &dyn Differentiable, x: &Tensor, cot: &Tensor) -> Result<Tensor> {
    let out = module.forward(x)?;
    cot.expect_shape(out.shape())?;
    module.vjp(x, cot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub module: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub components: Vec<ComponentError>,
}

impl GradCheckReport {
    fn from_components(module: String, tolerance: f64, components: Vec<ComponentError>) -> Self {
        let max_rel_error = components
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max);
        Self {
            module,
            max_rel_error,
            tolerance,
            pass: max_rel_error <= tolerance,
            components,
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences of `<cot, f(x)>` per input coordinate against
/// [`grad_input`]. `cot` is drawn from `cot_seed`.
pub fn finite_difference_check(
    module: &dyn Differentiable,
    x: &Tensor,
    step: f64,
    tolerance: f64,
    cot_seed: u64,
) -> Result<GradCheckReport> {
    let err = max_fd_error(module, x, step, cot_seed)?;
    Ok(GradCheckReport::from_components(
        module.name(),
        tolerance,
        vec![ComponentError {
            name: module.name(),
            max_rel_error: err,
        }],
    ))
}

fn max_fd_error(module: &dyn Differentiable, x: &Tensor, step: f64, cot_seed: u64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step {step} must be positive"
        )));
    }
    let out_shape = module.forward(x)?.shape().to_vec();
    let cot = Tensor::random_uniform(
        &out_shape,
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(cot_seed),
    );
    let analytic = grad_input(module, x, &cot)?;

    let numeric: Vec<Result<f64>> = Execution::default().map_range(x.len(), |i| {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let hi = module.forward(&plus)?.dot(&cot)?;
        let lo = module.forward(&minus)?.dot(&cot)?;
        Ok((hi - lo) / (2.0 * step))
    });
    let mut worst = 0.0f64;
    for (n, &a) in numeric.into_iter().zip(analytic.data()) {
        worst = worst.max(relative_error(a, n?));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    Cbam,
    SwinBlock,
}

impl std::str::FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cbam" => Ok(ModuleKind::Cbam),
            "swin" | "swin_block" | "swin-block" => Ok(ModuleKind::SwinBlock),
            other => Err(Error::InvalidConfig(format!("unknown module `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModuleKind::Cbam => "cbam",
            ModuleKind::SwinBlock => "swin_block",
        })
    }
}

/// CBAM gradient check on a `4 x 3 x 3` input with reduction 2. Covers
/// both gates separately and the composed module.
pub fn check_cbam(seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let w = CbamWeights::seeded(4, 2, seed)?;
    let x = Tensor::random_uniform(
        &[4, 3, 3],
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
    );
    let modules: [&dyn Differentiable; 3] =
        [&ChannelGate(w.clone()), &SpatialGate(w.clone()), &Cbam(w)];
    run_components("cbam", &modules, &x, step, tolerance, seed)
}

/// Swin block gradient check on a `4 x 4 x 4` grid, window 2, one head.
/// Runs the W-MSA and SW-MSA variants and each sublayer.
pub fn check_swin_block(seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let plain = WindowAttnWeights::seeded(4, 2, 0, 1, seed)?.with_random_norms(seed + 1);
    let shifted = WindowAttnWeights {
        shift: 1,
        ..plain.clone()
    };
    let x = Tensor::random_uniform(
        &[4, 4, 4],
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
    );
    let modules: [&dyn Differentiable; 5] = [
        &AttentionSublayer(plain.clone()),
        &AttentionSublayer(shifted.clone()),
        &MlpSublayer(plain.clone()),
        &SwinBlock(plain),
        &SwinBlock(shifted),
    ];
    run_components("swin_block", &modules, &x, step, tolerance, seed)
}

pub fn check_module(
    kind: ModuleKind,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    match kind {
        ModuleKind::Cbam => check_cbam(seed, step, tolerance),
        ModuleKind::SwinBlock => check_swin_block(seed, step, tolerance),
    }
}

fn run_components(
    name: &str,
    modules: &[&dyn Differentiable],
    x: &Tensor,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let components = modules
        .iter()
        .map(|m| {
            Ok(ComponentError {
                name: m.name(),
                max_rel_error: max_fd_error(*m, x, step, seed.wrapping_mul(31).wrapping_add(7))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport::from_components(
        name.into(),
        tolerance,
        components,
    ))
}
