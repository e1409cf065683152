//! Frequency-tuned diagonal state-space denoiser.

mod backbone;
mod conv;
mod embedding;
mod input;
pub mod kernel;

pub use backbone::{
    param_group, s4dft_layer, Activation, BackboneConfig, BackboneTrace, CachedSsm, Gate, LayerVars, ParamGroup,
    SsmBackbone, TuningInit,
};
pub use conv::causal_conv;
pub use embedding::diffusion_time_embedding;
pub use input::{assemble_input, batch_input, write_input_row};
pub use kernel::{discretize, recurrence, s4d_lin_base, ssm_kernel, tune_frequencies, SsmLayerParams};
