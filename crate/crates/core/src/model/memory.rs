use serde::Serialize;

use super::{ModelSpec, ParallelConfig};
use crate::perfdb::{AttnKind, HardwareSpec};

/// Share of GPU memory held back for runtime buffers before anything else.
pub const RESERVED_MEM_FRACTION: f64 = 0.05;

const ACT_BYTES: f64 = 2.0;

/// Per-GPU memory demand of one instance, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryFootprint {
    pub weights: f64,
    pub kv_per_token: f64,
    /// Largest single activation tensor of an iteration.
    pub activation_peak: f64,
}

impl MemoryFootprint {
    /// Reserve for activations on a GPU with `gpu_memory` bytes.
    pub fn activation_reserve(&self, gpu_memory: f64) -> f64 {
        RESERVED_MEM_FRACTION * gpu_memory + self.activation_peak
    }

    pub fn kv_bytes(&self, batch: u64, seq: u64) -> f64 {
        self.kv_per_token * batch as f64 * seq as f64
    }

    /// Bytes the KV cache may use: `kv_fraction` of what weights and the
    /// activation reserve leave free. Never negative.
    pub fn kv_budget(&self, gpu_memory: f64, kv_fraction: f64) -> f64 {
        (gpu_memory - self.weights - self.activation_reserve(gpu_memory)).max(0.0) * kv_fraction
    }

    /// Inclusive: a cache exactly filling the budget fits.
    pub fn fits(&self, batch: u64, seq: u64, gpu_memory: f64, kv_fraction: f64) -> bool {
        let budget = self.kv_budget(gpu_memory, kv_fraction);
        budget > 0.0 && self.kv_bytes(batch, seq) <= budget
    }

    pub fn total(&self, batch: u64, seq: u64, gpu_memory: f64) -> f64 {
        self.weights + self.kv_bytes(batch, seq) + self.activation_reserve(gpu_memory)
    }
}

/// Assumes `cfg` is consistent with `model`.
pub fn memory_footprint(model: &ModelSpec, cfg: &ParallelConfig) -> MemoryFootprint {
    let wb = model.weight_quant.bytes();
    let (tp, pp, dp) = (cfg.tp as f64, cfg.pp as f64, cfg.dp as f64);
    let expert = model.expert_params();
    let dense = model.param_count as f64 - expert;
    let weights = dense * wb / (tp * pp) + expert * wb / (tp * dp * pp);

    let layers = cfg.layers_per_stage(model) as f64;
    let kvb = model.kv_quant.bytes();
    let kv_per_token = if model.attn_kind == AttnKind::Mla {
        layers * model.mla_latent_dim as f64 * kvb
    } else {
        2.0 * layers * (model.kv_heads / cfg.tp).max(1) as f64 * model.head_dim as f64 * kvb
    };

    let tokens = (cfg.ctx_capacity + cfg.batch) as f64;
    let heads = (model.num_heads / cfg.tp) as f64;
    let kv_heads = (model.kv_heads / cfg.tp).max(1) as f64;
    let mut widest = tokens * (heads + 2.0 * kv_heads) * model.head_dim as f64;
    widest = widest.max(cfg.batch as f64 * model.vocab.div_ceil(cfg.tp) as f64);
    match &model.moe {
        None => widest = widest.max(tokens * 2.0 * (model.intermediate / cfg.tp) as f64),
        Some(moe) => {
            let rows = (tokens * dp * moe.topk as f64 / cfg.ep as f64).ceil();
            let shard = (cfg.tp * cfg.dp / cfg.ep) as f64;
            widest = widest.max(rows * 2.0 * moe.expert_intermediate as f64 / shard);
        }
    }
    MemoryFootprint {
        weights,
        kv_per_token,
        activation_peak: widest * ACT_BYTES,
    }
}

/// True when weights, the activation reserve and the KV cache for
/// `batch` sequences of `isl + osl` tokens fit in one GPU. The KV cache may
/// use only `kv_mem_fraction` of what weights and activations leave free.
pub fn fits_memory(model: &ModelSpec, cfg: &ParallelConfig, isl: u64, osl: u64, hw: &HardwareSpec) -> bool {
    memory_footprint(model, cfg).fits(cfg.batch, isl + osl, hw.gpu_memory, cfg.kv_mem_fraction)
}
