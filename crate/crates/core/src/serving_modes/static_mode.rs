use serde::Serialize;

use super::{check_memory, derive_metrics, Breakdown, Mode, PerfEstimate, WorkloadSpec};
use crate::error::{Error, Result};
use crate::estimator::InferenceSession;
use crate::model::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StaticTiming {
    pub ttft: f64,
    pub tpot: f64,
    pub generation_ms: f64,
    /// Decode latencies looked up; each stands for up to `stride` steps.
    pub decode_queries: u64,
}

/// One prefill followed by `osl - 1` decode steps for a fixed batch.
///
/// `step(phase, seq)` returns the latency in ms of a prefill over `seq`
/// tokens or of a decode step at KV length `seq`. Decode latency is sampled
/// once per `stride` steps at the start of the block and reused for the rest.
pub fn static_timing<F>(isl: u64, osl: u64, prefix: u64, stride: u64, mut step: F) -> Result<StaticTiming>
where
    F: FnMut(Phase, u64) -> Result<f64>,
{
    if isl <= prefix || osl == 0 || stride == 0 {
        return Err(Error::InvalidWorkload(format!(
            "static timing needs isl > prefix, osl >= 1, stride >= 1 (isl {isl}, prefix {prefix}, osl {osl}, stride {stride})"
        )));
    }
    let ttft = step(Phase::Prefill, isl - prefix)?;
    let (mut gen, mut queries, mut k) = (0.0, 0, 0);
    while k < osl - 1 {
        let repeat = stride.min(osl - 1 - k);
        gen += step(Phase::Decode, isl + k + 1)? * repeat as f64;
        queries += 1;
        k += stride;
    }
    let tpot = if osl > 1 { gen / (osl - 1) as f64 } else { 0.0 };
    Ok(StaticTiming {
        ttft,
        tpot,
        generation_ms: gen,
        decode_queries: queries,
    })
}

/// Static batching: the whole batch is prefilled, then decoded to the end.
pub fn estimate_static(s: &InferenceSession<'_>, w: &WorkloadSpec) -> Result<PerfEstimate> {
    check_memory(s, w.isl, w.osl)?;
    let cfg = s.config();
    let t = static_timing(w.isl, w.osl, w.prefix, w.constants.stride, |phase, seq| {
        Ok(s.get_step_latency(cfg.batch, seq, phase)?.total)
    })?;
    let (speed, throughput_per_gpu) = derive_metrics(t.ttft, t.tpot, w.osl, cfg.concurrency(), cfg.gpus());
    Ok(PerfEstimate {
        mode: Mode::Static,
        ttft: t.ttft,
        tpot: t.tpot,
        speed,
        throughput_per_gpu,
        batch: cfg.concurrency(),
        gpus: cfg.gpus(),
        breakdown: Breakdown::Static {
            prefill_ms: t.ttft,
            generation_ms: t.generation_ms,
            decode_queries: t.decode_queries,
        },
    })
}
