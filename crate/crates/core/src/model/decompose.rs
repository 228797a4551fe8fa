use serde::Serialize;

use super::{ModelSpec, ParallelConfig};
use crate::error::{Error, Result};
use crate::perfdb::{AttnKind, Dim, OperatorKind, OperatorQuery, Quant};

const ACT_BYTES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
    Mixed,
}

/// Token work of one engine iteration on one data-parallel rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StepShape {
    /// Prompt tokens processed this step.
    pub ctx_tokens: u64,
    /// Tokens per prompt sequence; `ctx_tokens / ctx_seq_len` rounded up is the
    /// number of prefill sequences.
    pub ctx_seq_len: u64,
    /// Sequences emitting one token each.
    pub gen_batch: u64,
    /// KV length seen by each generating sequence.
    pub gen_kv_len: u64,
}

impl StepShape {
    pub fn prefill(batch: u64, seq_len: u64) -> Self {
        Self {
            ctx_tokens: batch * seq_len,
            ctx_seq_len: seq_len,
            gen_batch: 0,
            gen_kv_len: 0,
        }
    }

    pub fn decode(batch: u64, kv_len: u64) -> Self {
        Self {
            ctx_tokens: 0,
            ctx_seq_len: 0,
            gen_batch: batch,
            gen_kv_len: kv_len,
        }
    }

    /// `n_ctx` prompt tokens drawn from sequences of `isl` tokens alongside
    /// `n_gen` decoding sequences at `kv_len`.
    pub fn mixed(n_ctx: u64, isl: u64, n_gen: u64, kv_len: u64) -> Self {
        Self {
            ctx_tokens: n_ctx,
            ctx_seq_len: if n_ctx == 0 { 0 } else { n_ctx.min(isl) },
            gen_batch: n_gen,
            gen_kv_len: if n_gen == 0 { 0 } else { kv_len },
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        match (self.ctx_tokens > 0, self.gen_batch > 0) {
            (true, false) => Some(Phase::Prefill),
            (false, true) => Some(Phase::Decode),
            (true, true) => Some(Phase::Mixed),
            (false, false) => None,
        }
    }

    pub fn tokens(&self) -> u64 {
        self.ctx_tokens + self.gen_batch
    }

    pub fn ctx_sequences(&self) -> u64 {
        if self.ctx_tokens == 0 {
            0
        } else {
            self.ctx_tokens.div_ceil(self.ctx_seq_len)
        }
    }

    /// Sequences producing logits this step.
    pub fn sequences(&self) -> u64 {
        self.ctx_sequences() + self.gen_batch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum OpRole {
    Embedding,
    QkvProj,
    ContextAttention,
    GenerationAttention,
    OutProj,
    AttnAllreduce,
    GateUpProj,
    DownProj,
    Router,
    Dispatch,
    /// Routed expert GEMMs; `group_tokens` is the step's token count summed
    /// over every rank that shares the experts.
    MoeExperts {
        group_tokens: u64,
    },
    Combine,
    SharedGateUp,
    SharedDown,
    MlpAllreduce,
    LmHead,
    LogitsAllgather,
    PipelineP2p,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOp {
    pub role: OpRole,
    pub query: OperatorQuery,
    pub repeat: u64,
}

/// Operators executed by one pipeline stage for one iteration, in order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationPlan {
    pub phase: Phase,
    pub ops: Vec<PlanOp>,
}

impl IterationPlan {
    /// Executions of `kind`, counting repeats.
    pub fn count_kind(&self, kind: OperatorKind) -> u64 {
        self.ops.iter().filter(|o| o.query.kind == kind).map(|o| o.repeat).sum()
    }

    pub fn count_role(&self, pred: impl Fn(&OpRole) -> bool) -> u64 {
        self.ops.iter().filter(|o| pred(&o.role)).map(|o| o.repeat).sum()
    }

    pub fn op_count(&self) -> u64 {
        self.ops.iter().map(|o| o.repeat).sum()
    }

    pub fn kinds(&self) -> Vec<OperatorKind> {
        let mut k: Vec<_> = self.ops.iter().map(|o| o.query.kind).collect();
        k.sort();
        k.dedup();
        k
    }
}

struct Builder {
    ops: Vec<PlanOp>,
}

impl Builder {
    fn push(&mut self, role: OpRole, query: OperatorQuery, repeat: u64) {
        if repeat > 0 {
            self.ops.push(PlanOp { role, query, repeat });
        }
    }
}

/// Splits one iteration into its operator sequence.
pub fn decompose(model: &ModelSpec, cfg: &ParallelConfig, shape: StepShape) -> Result<IterationPlan> {
    model.validate()?;
    cfg.validate(model)?;
    let phase = shape
        .phase()
        .ok_or_else(|| Error::InvalidQuery("step has no prompt or generation tokens".into()))?;
    if shape.ctx_tokens > 0 && shape.ctx_seq_len == 0 {
        return Err(Error::InvalidQuery("prompt tokens need a sequence length".into()));
    }
    if shape.gen_batch > 0 && shape.gen_kv_len == 0 {
        return Err(Error::InvalidQuery("generation needs a kv length".into()));
    }

    let (tp, wq) = (cfg.tp, model.weight_quant);
    let h = model.hidden;
    let tokens = shape.tokens();
    let layers = cfg.layers_per_stage(model);
    let heads = model.num_heads / tp;
    let mla = model.attn_kind == AttnKind::Mla;
    let kv_heads = (model.kv_heads / tp).max(1);
    let (attn_kv_heads, attn_head_dim) = if mla {
        (1, model.mla_latent_dim)
    } else {
        (kv_heads, model.head_dim)
    };
    let qkv_n = if mla {
        heads * model.head_dim + model.mla_latent_dim
    } else {
        (heads + 2 * kv_heads) * model.head_dim
    };
    let allreduce = OperatorQuery::comm(OperatorKind::Allreduce, tokens * h * ACT_BYTES, tp);

    let mut b = Builder { ops: Vec::new() };
    b.push(OpRole::Embedding, OperatorQuery::embedding(tokens, h, Quant::Fp16), 1);

    b.push(OpRole::QkvProj, OperatorQuery::gemm(tokens, qkv_n, h, wq), layers);
    if shape.ctx_tokens > 0 {
        let q = OperatorQuery::attention(
            OperatorKind::AttentionContext,
            model.attn_kind,
            model.kv_quant,
            shape.ctx_sequences(),
            shape.ctx_seq_len,
            heads,
            attn_kv_heads,
            attn_head_dim,
        );
        b.push(OpRole::ContextAttention, q, layers);
    }
    if shape.gen_batch > 0 {
        let q = OperatorQuery::attention(
            OperatorKind::AttentionGeneration,
            model.attn_kind,
            model.kv_quant,
            shape.gen_batch,
            shape.gen_kv_len,
            heads,
            attn_kv_heads,
            attn_head_dim,
        );
        b.push(OpRole::GenerationAttention, q, layers);
    }
    b.push(
        OpRole::OutProj,
        OperatorQuery::gemm(tokens, h, heads * model.head_dim, wq),
        layers,
    );
    if tp > 1 {
        b.push(OpRole::AttnAllreduce, allreduce.clone(), layers);
    }

    match &model.moe {
        None => {
            let inter = model.intermediate / tp;
            b.push(
                OpRole::GateUpProj,
                OperatorQuery::gemm(tokens, 2 * inter, h, wq),
                layers,
            );
            b.push(OpRole::DownProj, OperatorQuery::gemm(tokens, h, inter, wq), layers);
        }
        Some(moe) => {
            let (e, k, ep) = (moe.num_experts, moe.topk, cfg.ep);
            let group_tokens = tokens * cfg.dp;
            b.push(OpRole::Router, OperatorQuery::gemm(tokens, e, h, wq), layers);
            let route = |kind| {
                OperatorQuery::new(
                    kind,
                    wq,
                    None,
                    [
                        (Dim::Tokens, tokens),
                        (Dim::Experts, e),
                        (Dim::Topk, k),
                        (Dim::Hidden, h),
                        (Dim::ParticipantCount, ep),
                    ],
                )
            };
            if ep > 1 {
                b.push(OpRole::Dispatch, route(OperatorKind::MoeDispatch), layers);
            }
            b.push(
                OpRole::MoeExperts { group_tokens },
                moe_gemm_query(model, cfg, (group_tokens * k).div_ceil(ep)),
                layers,
            );
            if ep > 1 {
                b.push(OpRole::Combine, route(OperatorKind::MoeCombine), layers);
            }
            if moe.shared_intermediate > 0 {
                let s = moe.shared_intermediate / tp;
                b.push(OpRole::SharedGateUp, OperatorQuery::gemm(tokens, 2 * s, h, wq), layers);
                b.push(OpRole::SharedDown, OperatorQuery::gemm(tokens, h, s, wq), layers);
            }
        }
    }
    if tp > 1 {
        b.push(OpRole::MlpAllreduce, allreduce, layers);
    }

    let seqs = shape.sequences();
    let vocab_shard = model.vocab.div_ceil(tp);
    b.push(OpRole::LmHead, OperatorQuery::gemm(seqs, vocab_shard, h, wq), 1);
    if tp > 1 {
        let q = OperatorQuery::comm(OperatorKind::Allgather, seqs * model.vocab * ACT_BYTES, tp);
        b.push(OpRole::LogitsAllgather, q, 1);
    }
    if cfg.pp > 1 {
        let q = OperatorQuery::comm(OperatorKind::P2p, tokens * h * ACT_BYTES, 2);
        b.push(OpRole::PipelineP2p, q, cfg.pp - 1);
    }
    Ok(IterationPlan { phase, ops: b.ops })
}

/// Expert GEMM on one EP rank holding `num_experts / ep` experts and receiving
/// `rank_tokens` token-expert pairs.
pub(crate) fn moe_gemm_query(model: &ModelSpec, cfg: &ParallelConfig, rank_tokens: u64) -> OperatorQuery {
    let moe = model.moe.as_ref().expect("moe model");
    let shard = cfg.tp * cfg.dp / cfg.ep;
    OperatorQuery::new(
        OperatorKind::MoeGemm,
        model.weight_quant,
        None,
        [
            (Dim::Tokens, rank_tokens.max(1)),
            (Dim::Experts, moe.num_experts / cfg.ep),
            (Dim::Topk, moe.topk),
            (Dim::Hidden, model.hidden),
            (Dim::Intermediate, moe.expert_intermediate / shard),
        ],
    )
}

/// One representative query per grid a database needs to serve every
/// phase of `model` under each of `cfgs`.
pub fn required_queries(model: &ModelSpec, cfgs: &[ParallelConfig]) -> Result<Vec<OperatorQuery>> {
    let mut out = Vec::new();
    for cfg in cfgs {
        let plan = decompose(model, cfg, StepShape::mixed(64, 64, 1, 64))?;
        out.extend(plan.ops.into_iter().map(|o| o.query));
    }
    Ok(out)
}
