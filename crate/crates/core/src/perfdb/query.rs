//! Operator identity: kind, numeric format, and named shape dimensions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric format of an operator's weights/operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quant {
    Fp16,
    Fp8,
    Int8,
    Int4,
}

impl Quant {
    pub const ALL: [Quant; 4] = [Quant::Fp16, Quant::Fp8, Quant::Int8, Quant::Int4];

    /// Storage size of one element in bytes.
    pub fn bytes(self) -> f64 {
        match self {
            Quant::Fp16 => 2.0,
            Quant::Fp8 | Quant::Int8 => 1.0,
            Quant::Int4 => 0.5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quant::Fp16 => "fp16",
            Quant::Fp8 => "fp8",
            Quant::Int8 => "int8",
            Quant::Int4 => "int4",
        }
    }
}

impl fmt::Display for Quant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttnKind {
    #[serde(rename = "MHA")]
    Mha,
    #[serde(rename = "GQA")]
    Gqa,
    #[serde(rename = "MLA")]
    Mla,
}

impl fmt::Display for AttnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttnKind::Mha => "MHA",
            AttnKind::Gqa => "GQA",
            AttnKind::Mla => "MLA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Gemm,
    AttentionContext,
    AttentionGeneration,
    Allreduce,
    Allgather,
    Alltoall,
    P2p,
    MoeDispatch,
    MoeCombine,
    MoeGemm,
    Embedding,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 11] = [
        OperatorKind::Gemm,
        OperatorKind::AttentionContext,
        OperatorKind::AttentionGeneration,
        OperatorKind::Allreduce,
        OperatorKind::Allgather,
        OperatorKind::Alltoall,
        OperatorKind::P2p,
        OperatorKind::MoeDispatch,
        OperatorKind::MoeCombine,
        OperatorKind::MoeGemm,
        OperatorKind::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::Gemm => "gemm",
            OperatorKind::AttentionContext => "attention_context",
            OperatorKind::AttentionGeneration => "attention_generation",
            OperatorKind::Allreduce => "allreduce",
            OperatorKind::Allgather => "allgather",
            OperatorKind::Alltoall => "alltoall",
            OperatorKind::P2p => "p2p",
            OperatorKind::MoeDispatch => "moe_dispatch",
            OperatorKind::MoeCombine => "moe_combine",
            OperatorKind::MoeGemm => "moe_gemm",
            OperatorKind::Embedding => "embedding",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, OperatorKind::AttentionContext | OperatorKind::AttentionGeneration)
    }

    /// Communication kinds, including the MoE token shuffles.
    pub fn is_comm(self) -> bool {
        matches!(
            self,
            OperatorKind::Allreduce
                | OperatorKind::Allgather
                | OperatorKind::Alltoall
                | OperatorKind::P2p
                | OperatorKind::MoeDispatch
                | OperatorKind::MoeCombine
        )
    }

    /// Every dimension a query of this kind must carry.
    pub fn dims(self) -> &'static [Dim] {
        use Dim::*;
        match self {
            OperatorKind::Gemm => &[M, N, K],
            OperatorKind::AttentionContext | OperatorKind::AttentionGeneration => {
                &[Batch, SeqLen, NumHeads, KvHeads, HeadDim]
            }
            OperatorKind::Allreduce | OperatorKind::Allgather | OperatorKind::Alltoall | OperatorKind::P2p => {
                &[MessageBytes, ParticipantCount]
            }
            OperatorKind::MoeDispatch | OperatorKind::MoeCombine => &[Tokens, Experts, Topk, Hidden, ParticipantCount],
            OperatorKind::MoeGemm => &[Tokens, Experts, Topk, Hidden, Intermediate],
            OperatorKind::Embedding => &[Tokens, Hidden],
        }
    }

    /// Dimensions interpolated over; the rest are exact-match keys.
    pub fn interp_axes(self) -> &'static [Dim] {
        use Dim::*;
        match self {
            OperatorKind::Gemm => &[M],
            OperatorKind::AttentionContext | OperatorKind::AttentionGeneration => &[Batch, SeqLen],
            OperatorKind::Allreduce | OperatorKind::Allgather | OperatorKind::Alltoall | OperatorKind::P2p => {
                &[MessageBytes]
            }
            OperatorKind::MoeDispatch | OperatorKind::MoeCombine | OperatorKind::MoeGemm => &[Tokens],
            OperatorKind::Embedding => &[Tokens],
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Named shape dimension. Declaration order is the serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dim {
    M,
    N,
    K,
    Batch,
    SeqLen,
    NumHeads,
    KvHeads,
    HeadDim,
    MessageBytes,
    ParticipantCount,
    Tokens,
    Experts,
    Topk,
    Hidden,
    Intermediate,
}

impl Dim {
    pub fn as_str(self) -> &'static str {
        match self {
            Dim::M => "m",
            Dim::N => "n",
            Dim::K => "k",
            Dim::Batch => "batch",
            Dim::SeqLen => "seq_len",
            Dim::NumHeads => "num_heads",
            Dim::KvHeads => "kv_heads",
            Dim::HeadDim => "head_dim",
            Dim::MessageBytes => "message_bytes",
            Dim::ParticipantCount => "participant_count",
            Dim::Tokens => "tokens",
            Dim::Experts => "experts",
            Dim::Topk => "topk",
            Dim::Hidden => "hidden",
            Dim::Intermediate => "intermediate",
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Shape = BTreeMap<Dim, u64>;

/// One operator invocation to be costed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatorQuery {
    pub kind: OperatorKind,
    pub quant: Quant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn_kind: Option<AttnKind>,
    pub shape: Shape,
}

impl OperatorQuery {
    pub fn gemm(m: u64, n: u64, k: u64, quant: Quant) -> Self {
        Self::new(OperatorKind::Gemm, quant, None, [(Dim::M, m), (Dim::N, n), (Dim::K, k)])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        kind: OperatorKind,
        attn_kind: AttnKind,
        quant: Quant,
        batch: u64,
        seq_len: u64,
        num_heads: u64,
        kv_heads: u64,
        head_dim: u64,
    ) -> Self {
        Self::new(
            kind,
            quant,
            Some(attn_kind),
            [
                (Dim::Batch, batch),
                (Dim::SeqLen, seq_len),
                (Dim::NumHeads, num_heads),
                (Dim::KvHeads, kv_heads),
                (Dim::HeadDim, head_dim),
            ],
        )
    }

    pub fn comm(kind: OperatorKind, message_bytes: u64, participants: u64) -> Self {
        Self::new(
            kind,
            Quant::Fp16,
            None,
            [
                (Dim::MessageBytes, message_bytes),
                (Dim::ParticipantCount, participants),
            ],
        )
    }

    pub fn embedding(tokens: u64, hidden: u64, quant: Quant) -> Self {
        Self::new(
            OperatorKind::Embedding,
            quant,
            None,
            [(Dim::Tokens, tokens), (Dim::Hidden, hidden)],
        )
    }

    pub fn new<I>(kind: OperatorKind, quant: Quant, attn_kind: Option<AttnKind>, dims: I) -> Self
    where
        I: IntoIterator<Item = (Dim, u64)>,
    {
        Self {
            kind,
            quant,
            attn_kind,
            shape: dims.into_iter().collect(),
        }
    }

    /// Dimension value; panics if the query was not validated.
    pub fn dim(&self, dim: Dim) -> u64 {
        self.shape[&dim]
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.kind.dims();
        if self.shape.len() != expected.len() || expected.iter().any(|d| !self.shape.contains_key(d)) {
            let got: Vec<_> = self.shape.keys().map(|d| d.as_str()).collect();
            let want: Vec<_> = expected.iter().map(|d| d.as_str()).collect();
            return Err(Error::InvalidQuery(format!(
                "{} expects dims {:?}, got {:?}",
                self.kind, want, got
            )));
        }
        if let Some((d, _)) = self.shape.iter().find(|(_, v)| **v == 0) {
            return Err(Error::InvalidQuery(format!("{} has zero dimension {d}", self.kind)));
        }
        if self.kind.is_attention() != self.attn_kind.is_some() {
            return Err(Error::InvalidQuery(format!(
                "attn_kind must be present exactly for attention kinds ({})",
                self.kind
            )));
        }
        Ok(())
    }
}
