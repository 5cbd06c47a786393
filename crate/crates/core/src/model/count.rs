//! Closed-form parameter and multiply-accumulate counts.
//!
//! FLOPs follow the one-MAC-one-FLOP convention: a linear map costs
//! `c_in · c_out` per position (bias free), a 3×3 depthwise convolution
//! `9 · C` per position, a LIF step three scalar ops, and element-wise layers
//! the per-element costs below.

use super::config::{ModelConfig, NUM_STAGES};

pub const LIF_OPS: u64 = 3;
/// Normalise then scale-and-shift.
pub const NORM_OPS: u64 = 2;
pub const ACT_OPS: u64 = 1;
pub const ADD_OPS: u64 = 1;

fn linear(c_in: usize, c_out: usize) -> u64 {
    (c_in * c_out + c_out) as u64
}

fn lif_pairs(cfg: &ModelConfig) -> u64 {
    if cfg.learn_lif {
        4
    } else {
        0
    }
}

/// Learnable scalars of a single block at width `c`.
pub fn block_params(cfg: &ModelConfig, stage: usize) -> u64 {
    let c = cfg.width(stage);
    let hd = cfg.hidden(stage);
    let norm = 2 * c as u64;
    4 * linear(c, c)
        + 3 * norm
        + (9 * c + c) as u64
        + lif_pairs(cfg)
        + linear(c, hd)
        + linear(hd, c)
}

/// Every learnable scalar, including both LIF `(tau, v_th)` pairs per block.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let mut total = linear(3 * cfg.patch * cfg.patch, cfg.embed_dim);
    for s in 0..NUM_STAGES {
        total += cfg.depths[s] as u64 * block_params(cfg, s);
        if s + 1 < NUM_STAGES {
            let c = cfg.width(s);
            total += linear(4 * c, 2 * c);
        }
    }
    let c = cfg.width(NUM_STAGES - 1);
    total + 2 * c as u64 + linear(c, cfg.num_classes)
}

/// Multiply-accumulates of one block at width `c` over `hw` positions.
pub fn block_flops(cfg: &ModelConfig, stage: usize, hw: u64) -> u64 {
    let c = cfg.width(stage) as u64;
    let hd = cfg.hidden(stage) as u64;
    let proj = 4 * c * c;
    let dw = 9 * c;
    let lif = 2 * LIF_OPS * c;
    let norms = 3 * NORM_OPS * c;
    let acts = ACT_OPS * (4 * c + hd + c);
    let adds = ADD_OPS * 3 * c;
    let mlp = 2 * c * hd;
    hw * (proj + dw + lif + norms + acts + adds + mlp)
}

/// Forward cost for one `h×w` image.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> u64 {
    let mut hw = ((h / cfg.patch) * (w / cfg.patch)) as u64;
    let mut total = hw * (3 * cfg.patch * cfg.patch * cfg.embed_dim) as u64;
    for s in 0..NUM_STAGES {
        total += cfg.depths[s] as u64 * block_flops(cfg, s, hw);
        if s + 1 < NUM_STAGES {
            let c = cfg.width(s) as u64;
            hw /= 4;
            total += hw * 8 * c * c;
        }
    }
    let c = cfg.width(NUM_STAGES - 1) as u64;
    total + hw * c * (NORM_OPS + 1) + c * cfg.num_classes as u64
}
