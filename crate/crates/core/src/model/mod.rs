//! The attention network: configuration, parameters, forward pass.

pub mod config;
pub mod forward;
pub mod params;

pub use config::{Ablation, ModelConfig};
pub use forward::{
    classify, compress_channels, forward, multi_head_attention, position_encode, slice_time,
    spatial_attention, temporal_block, ForwardTrace,
};
pub use params::{ModelParams, RawTensor};
