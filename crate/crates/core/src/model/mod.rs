//! Model architectures, parallel layouts, and per-step operator plans.

mod decompose;
mod memory;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfdb::{AttnKind, Quant};

pub(crate) use decompose::moe_gemm_query;
pub use decompose::{decompose, required_queries, IterationPlan, OpRole, Phase, PlanOp, StepShape};
pub use memory::{fits_memory, memory_footprint, MemoryFootprint, RESERVED_MEM_FRACTION};

pub const DEFAULT_MLA_LATENT_DIM: u64 = 576;

fn default_mla_latent() -> u64 {
    DEFAULT_MLA_LATENT_DIM
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeSpec {
    pub num_experts: u64,
    pub topk: u64,
    pub expert_intermediate: u64,
    /// Width of the always-on shared expert MLP; 0 when absent.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shared_intermediate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub num_layers: u64,
    pub hidden: u64,
    pub num_heads: u64,
    pub kv_heads: u64,
    pub head_dim: u64,
    /// Dense MLP width. Ignored by MoE layers.
    pub intermediate: u64,
    pub vocab: u64,
    pub attn_kind: AttnKind,
    /// Compressed KV width per token and layer, used only by MLA.
    #[serde(default = "default_mla_latent")]
    pub mla_latent_dim: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moe: Option<MoeSpec>,
    pub weight_quant: Quant,
    pub kv_quant: Quant,
    pub param_count: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidModel(format!("{}: {m}", self.name)));
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden", self.hidden),
            ("num_heads", self.num_heads),
            ("kv_heads", self.kv_heads),
            ("head_dim", self.head_dim),
            ("intermediate", self.intermediate),
            ("vocab", self.vocab),
            ("mla_latent_dim", self.mla_latent_dim),
            ("param_count", self.param_count),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be at least 1"));
        }
        if !self.num_heads.is_multiple_of(self.kv_heads) {
            return err(format!(
                "kv_heads {} does not divide num_heads {}",
                self.kv_heads, self.num_heads
            ));
        }
        if self.attn_kind == AttnKind::Mha && self.kv_heads != self.num_heads {
            return err("MHA requires kv_heads == num_heads".into());
        }
        if let Some(moe) = &self.moe {
            if moe.num_experts == 0 || moe.topk == 0 || moe.expert_intermediate == 0 {
                return err("moe counts must be at least 1".into());
            }
            if moe.topk > moe.num_experts {
                return err(format!("topk {} exceeds num_experts {}", moe.topk, moe.num_experts));
            }
            if self.expert_params() >= self.param_count as f64 {
                return err("param_count smaller than the expert parameters alone".into());
            }
        }
        Ok(())
    }

    pub fn is_moe(&self) -> bool {
        self.moe.is_some()
    }

    /// Parameters held in routed experts across all layers.
    pub fn expert_params(&self) -> f64 {
        self.moe.as_ref().map_or(0.0, |m| {
            self.num_layers as f64 * m.num_experts as f64 * 3.0 * self.hidden as f64 * m.expert_intermediate as f64
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::InvalidModel(format!("{}: {}", e.path(), e.inner())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn default_ctx_capacity() -> u64 {
    2048
}
fn default_true() -> bool {
    true
}
fn default_kv_fraction() -> f64 {
    0.9
}
fn default_backend() -> String {
    "trtllm".into()
}

/// One serving instance: parallel degrees plus the engine knobs that matter
/// for estimation. `batch` is the concurrency of a single data-parallel rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelConfig {
    pub tp: u64,
    pub pp: u64,
    pub ep: u64,
    pub dp: u64,
    pub batch: u64,
    #[serde(default = "default_ctx_capacity")]
    pub ctx_capacity: u64,
    #[serde(default = "default_true")]
    pub chunked_prefill: bool,
    #[serde(default = "default_kv_fraction")]
    pub kv_mem_fraction: f64,
    #[serde(default = "default_true")]
    pub cuda_graph: bool,
    #[serde(default = "default_backend")]
    pub backend: String,
}

impl ParallelConfig {
    pub fn new(tp: u64, pp: u64, ep: u64, dp: u64, batch: u64) -> Self {
        Self {
            tp,
            pp,
            ep,
            dp,
            batch,
            ctx_capacity: default_ctx_capacity(),
            chunked_prefill: true,
            kv_mem_fraction: default_kv_fraction(),
            cuda_graph: true,
            backend: default_backend(),
        }
    }

    /// GPUs occupied by one instance. Expert parallelism reuses the tp x dp ranks.
    pub fn gpus(&self) -> u64 {
        self.tp * self.pp * self.dp
    }

    /// Requests in flight across all data-parallel ranks.
    pub fn concurrency(&self) -> u64 {
        self.batch * self.dp
    }

    /// Layers held by one pipeline stage.
    pub fn layers_per_stage(&self, model: &ModelSpec) -> u64 {
        model.num_layers.div_ceil(self.pp)
    }

    /// Checks that the layout can shard `model`.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let err = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("tp", self.tp),
            ("pp", self.pp),
            ("ep", self.ep),
            ("dp", self.dp),
            ("batch", self.batch),
            ("ctx_capacity", self.ctx_capacity),
        ] {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        if !(self.kv_mem_fraction > 0.0 && self.kv_mem_fraction <= 1.0) {
            return err(format!("kv_mem_fraction {} not in (0, 1]", self.kv_mem_fraction));
        }
        if self.pp > model.num_layers {
            return err(format!("pp {} exceeds num_layers {}", self.pp, model.num_layers));
        }
        if !model.num_heads.is_multiple_of(self.tp) {
            return err(format!("tp {} does not divide num_heads {}", self.tp, model.num_heads));
        }
        if !model.kv_heads.is_multiple_of(self.tp) && !self.tp.is_multiple_of(model.kv_heads) {
            return err(format!("tp {} and kv_heads {} do not nest", self.tp, model.kv_heads));
        }
        match &model.moe {
            None => {
                if self.ep != 1 {
                    return err("ep > 1 requires an MoE model".into());
                }
                if !model.intermediate.is_multiple_of(self.tp) {
                    return err(format!(
                        "tp {} does not divide intermediate {}",
                        self.tp, model.intermediate
                    ));
                }
            }
            Some(moe) => {
                let ranks = self.tp * self.dp;
                if moe.num_experts % self.ep != 0 {
                    return err(format!(
                        "ep {} does not divide num_experts {}",
                        self.ep, moe.num_experts
                    ));
                }
                if !ranks.is_multiple_of(self.ep) {
                    return err(format!("ep {} does not divide tp*dp = {ranks}", self.ep));
                }
                let shard = ranks / self.ep;
                if moe.expert_intermediate % shard != 0 {
                    return err(format!(
                        "expert_intermediate {} not divisible by tp*dp/ep = {shard}",
                        moe.expert_intermediate
                    ));
                }
                if moe.shared_intermediate % self.tp != 0 {
                    return err(format!("tp {} does not divide shared_intermediate", self.tp));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn dense_model() -> ModelSpec {
    ModelSpec {
        name: "dense-test".into(),
        num_layers: 32,
        hidden: 4096,
        num_heads: 32,
        kv_heads: 8,
        head_dim: 128,
        intermediate: 14336,
        vocab: 128256,
        attn_kind: AttnKind::Gqa,
        mla_latent_dim: DEFAULT_MLA_LATENT_DIM,
        moe: None,
        weight_quant: Quant::Fp16,
        kv_quant: Quant::Fp16,
        param_count: 8_000_000_000,
    }
}

#[cfg(test)]
pub(crate) fn moe_model() -> ModelSpec {
    ModelSpec {
        name: "moe-test".into(),
        num_layers: 24,
        hidden: 2048,
        num_heads: 32,
        kv_heads: 4,
        head_dim: 128,
        intermediate: 6144,
        vocab: 151936,
        attn_kind: AttnKind::Gqa,
        mla_latent_dim: DEFAULT_MLA_LATENT_DIM,
        moe: Some(MoeSpec {
            num_experts: 64,
            topk: 8,
            expert_intermediate: 768,
            shared_intermediate: 0,
        }),
        weight_quant: Quant::Fp8,
        kv_quant: Quant::Fp8,
        param_count: 16_000_000_000,
    }
}
