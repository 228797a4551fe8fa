//! Speed-of-light latency bounds.
//!
//! Compute operators take `max(bytes / mem_bandwidth, flops / compute_rate)`.
//! Communication operators move `message_bytes * factor` over one link, with
//! ring factors `2(n-1)/n` (allreduce), `(n-1)/n` (allgather, alltoall and the
//! MoE shuffles) and `1` (p2p).

use super::{AttnKind, Dim, HardwareSpec, OperatorKind, OperatorQuery};
use crate::error::{Error, Result};

/// Activations are kept in 16-bit regardless of the weight format.
const ACT_BYTES: f64 = 2.0;

/// Work performed by one operator invocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpCost {
    pub flops: f64,
    pub bytes: f64,
}

/// Ring-algorithm traffic multiplier applied to `message_bytes`.
pub fn comm_factor(kind: OperatorKind, participants: u64) -> Result<f64> {
    let n = participants as f64;
    let needs_peers = !matches!(kind, OperatorKind::P2p);
    if needs_peers && participants < 2 {
        return Err(Error::Unsupported(format!(
            "{kind} needs at least 2 participants, got {participants}"
        )));
    }
    Ok(match kind {
        OperatorKind::Allreduce => 2.0 * (n - 1.0) / n,
        OperatorKind::Allgather | OperatorKind::Alltoall | OperatorKind::MoeDispatch | OperatorKind::MoeCombine => {
            (n - 1.0) / n
        }
        OperatorKind::P2p => 1.0,
        other => return Err(Error::Unsupported(format!("{other} is not a collective"))),
    })
}

/// FLOPs and bytes for a compute operator.
pub fn compute_cost(q: &OperatorQuery) -> Result<OpCost> {
    let d = |dim: Dim| q.dim(dim) as f64;
    let wb = q.quant.bytes();
    let cost = match q.kind {
        OperatorKind::Gemm => {
            let (m, n, k) = (d(Dim::M), d(Dim::N), d(Dim::K));
            OpCost {
                flops: 2.0 * m * n * k,
                bytes: (m * k + k * n) * wb + m * n * ACT_BYTES,
            }
        }
        OperatorKind::AttentionContext => {
            let (b, s, h, g, hd) = attn_dims(q);
            OpCost {
                // QK^T and PV, halved for the causal mask.
                flops: 2.0 * b * h * s * s * hd,
                bytes: b * s * hd * (2.0 * h + 2.0 * g) * wb,
            }
        }
        OperatorKind::AttentionGeneration => {
            let (b, s, h, g, hd) = attn_dims(q);
            let kv_factor = if q.attn_kind == Some(AttnKind::Mla) { 1.0 } else { 2.0 };
            OpCost {
                flops: 4.0 * b * h * s * hd,
                bytes: b * s * kv_factor * g * hd * wb + 2.0 * b * h * hd * ACT_BYTES,
            }
        }
        OperatorKind::MoeGemm => {
            let (t, e, hid, inter) = (d(Dim::Tokens), d(Dim::Experts), d(Dim::Hidden), d(Dim::Intermediate));
            // gate, up and down projections; only experts that receive tokens are read
            let active = e.min(t);
            OpCost {
                flops: 2.0 * t * 3.0 * hid * inter,
                bytes: active * 3.0 * hid * inter * wb + 2.0 * t * hid * ACT_BYTES,
            }
        }
        OperatorKind::Embedding => {
            let (t, hid) = (d(Dim::Tokens), d(Dim::Hidden));
            OpCost {
                flops: 0.0,
                bytes: t * hid * (wb + ACT_BYTES),
            }
        }
        other => return Err(Error::Unsupported(format!("{other} is a communication operator"))),
    };
    Ok(cost)
}

fn attn_dims(q: &OperatorQuery) -> (f64, f64, f64, f64, f64) {
    (
        q.dim(Dim::Batch) as f64,
        q.dim(Dim::SeqLen) as f64,
        q.dim(Dim::NumHeads) as f64,
        q.dim(Dim::KvHeads) as f64,
        q.dim(Dim::HeadDim) as f64,
    )
}

/// Bytes put on the wire by a communication operator before the ring factor.
pub fn message_bytes(q: &OperatorQuery) -> f64 {
    match q.kind {
        OperatorKind::MoeDispatch | OperatorKind::MoeCombine => {
            (q.dim(Dim::Tokens) * q.dim(Dim::Topk) * q.dim(Dim::Hidden)) as f64 * q.quant.bytes()
        }
        _ => q.dim(Dim::MessageBytes) as f64,
    }
}

/// Roofline latency lower bound in microseconds.
pub fn sol_estimate(q: &OperatorQuery, hw: &HardwareSpec) -> Result<f64> {
    q.validate()?;
    let seconds = if q.kind.is_comm() {
        let n = q.dim(Dim::ParticipantCount);
        message_bytes(q) * comm_factor(q.kind, n)? / hw.link_bandwidth(n)
    } else {
        let cost = compute_cost(q)?;
        let memory_time = cost.bytes / hw.mem_bandwidth;
        if cost.flops == 0.0 {
            memory_time
        } else {
            let rate = hw
                .compute_rate(q.quant)
                .ok_or_else(|| Error::Unsupported(format!("{} has no compute rate for {}", hw.name, q.quant)))?;
            memory_time.max(cost.flops / rate)
        }
    };
    Ok(seconds * 1e6)
}
