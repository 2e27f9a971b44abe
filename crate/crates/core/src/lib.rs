//! Fast Window Attention and the LOLViT backbone.
//!
//! * [`tensor`]: dense `f32` tensors and the numeric kernels everything else uses.
//! * [`fawa`]: adaptive window aggregation of token sequences into short key
//!   sequences, plus the pooled-key baseline.
//! * [`attention`]: fast window attention with ReLU weighting and key caching,
//!   alongside softmax self-attention and pooled-key attention baselines.
//! * [`backbone`]: GhostNet bottlenecks, LOLViT blocks and the S/X networks.
//! * [`counters`]: thread-local operation and allocation counters.

pub mod attention;
pub mod backbone;
pub mod counters;
pub mod error;
pub mod fawa;
pub mod layers;
pub mod tensor;

pub use attention::{
    drelu, fwa_attention, mhsa_baseline, pooled_key_attention_baseline, FwaConfig, FwaWeights, KeyCache,
    MhsaWeights,
};
pub use backbone::{build_model, count_params, deserialize, serialize, Model, Patch, Variant};
pub use error::{Error, Result};
pub use fawa::{fawa_aggregate, pool_aggregate_baseline, PatchGeometry, TokenBatch};
pub use tensor::{conv2d, matmul, Conv2dParams, Tensor};
