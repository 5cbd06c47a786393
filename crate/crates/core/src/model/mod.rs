//! The four-stage backbone: LIF mixing blocks, patch merging, classifier.

pub mod block;
pub mod checkpoint;
pub mod config;
pub mod count;
pub mod grad;
mod net;

pub use block::{
    lif_module_backward, lif_module_forward, mlp_block_backward, mlp_block_forward, BlockInit,
    BlockParams, LifModuleParams, MlpParams,
};
pub use config::{ModelConfig, Variant, NUM_STAGES};
pub use count::{count_flops, count_params};
pub use net::{NetCache, Pass, SnnMlp, Stage};

#[cfg(test)]
mod tests;
