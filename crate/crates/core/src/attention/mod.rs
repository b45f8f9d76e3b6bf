//! CBAM and shifted-window attention on small dense tensors, with exact
//! input gradients and a finite-difference checker.

pub mod cbam;
pub mod gradcheck;
pub mod swin;
pub mod tensor;
pub mod window;

pub use cbam::{
    cbam_forward, cbam_vjp, channel_attention, global_pool, spatial_attention, CbamWeights,
    PoolKind,
};
pub use gradcheck::{
    finite_difference_check, grad_input, Differentiable, GradCheckReport, ModuleKind,
};
pub use swin::{swin_attention_maps, swin_block_forward, swin_block_vjp, WindowAttnWeights};
pub use tensor::Tensor;
pub use window::{
    cyclic_shift, inverse_shift, scaled_softmax_attention, window_merge, window_partition,
};
