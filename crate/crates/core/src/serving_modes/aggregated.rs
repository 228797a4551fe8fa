use serde::{Deserialize, Serialize};

use super::{check_memory, derive_metrics, Breakdown, Mode, ModeConstants, PerfEstimate, WorkloadSpec};
use crate::error::{Error, Result};
use crate::estimator::InferenceSession;

/// Steady-state iteration mix of a continuously batched engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggSchedule {
    /// Iterations needed to push every prompt of the batch through.
    pub t_total_ctx: u64,
    pub t_mix: u64,
    pub t_gen: u64,
    pub n_ctx: u64,
    pub n_gen: u64,
}

/// Splits a request's lifetime into mixed (prefill + decode) and pure
/// decode iterations for `batch` requests with `ctx_capacity` prompt tokens
/// per iteration.
pub fn agg_schedule(isl: u64, osl: u64, batch: u64, ctx_capacity: u64) -> Result<AggSchedule> {
    if isl == 0 || osl == 0 || batch == 0 || ctx_capacity == 0 {
        return Err(Error::InvalidWorkload(
            "isl, osl, batch and ctx_capacity must be at least 1".into(),
        ));
    }
    let t = (isl * batch).div_ceil(ctx_capacity);
    let c = ctx_capacity;
    if batch == 1 {
        return Ok(AggSchedule {
            t_total_ctx: t,
            t_mix: 1,
            t_gen: osl - 1,
            n_ctx: c,
            n_gen: 0,
        });
    }
    if t >= osl {
        return Ok(AggSchedule {
            t_total_ctx: t,
            t_mix: t,
            t_gen: 0,
            n_ctx: c,
            n_gen: (batch * osl / t).max(1),
        });
    }
    let prompts_per_step = c.div_ceil(isl);
    if batch <= prompts_per_step {
        return Err(Error::Infeasible(format!(
            "batch {batch} leaves no decode slots beside {prompts_per_step} prompts per step"
        )));
    }
    Ok(AggSchedule {
        t_total_ctx: t,
        t_mix: t,
        t_gen: osl - t,
        n_ctx: c,
        n_gen: batch - prompts_per_step,
    })
}

/// TTFT correction for queueing behind other prompts, growing with the
/// number of context iterations and bounded to `[base, cap]`.
pub fn f_corr(t_total_ctx: u64, c: &ModeConstants) -> f64 {
    (c.fcorr_base + (t_total_ctx as f64 - c.fcorr_offset) / c.fcorr_divisor)
        .min(c.fcorr_cap)
        .max(c.fcorr_base)
}

/// TTFT, TPOT and the correction factor from a schedule and the two step
/// latencies (ms).
#[allow(clippy::too_many_arguments)]
pub fn agg_timing(
    sched: &AggSchedule,
    mix_ms: f64,
    gen_ms: f64,
    batch: u64,
    isl: u64,
    osl: u64,
    ctx_capacity: u64,
    c: &ModeConstants,
) -> (f64, f64, f64) {
    let f = f_corr(sched.t_total_ctx, c);
    let ttft = mix_ms * isl.div_ceil(ctx_capacity) as f64 * f;
    let tpot = if osl == 1 {
        0.0
    } else if batch == 1 {
        gen_ms
    } else {
        let t_mix = sched.t_mix.saturating_sub(c.mix_warmup_steps).max(1) as f64;
        let t_gen = sched.t_gen as f64;
        (mix_ms * t_mix + gen_ms * t_gen) / (t_mix + t_gen)
    };
    (ttft, tpot, f)
}

/// Continuous batching with chunked prefill on one engine per DP rank.
pub fn estimate_aggregated(s: &InferenceSession<'_>, w: &WorkloadSpec) -> Result<PerfEstimate> {
    check_memory(s, w.isl, w.osl)?;
    let cfg = s.config();
    let c = cfg.ctx_capacity;
    if !cfg.chunked_prefill && c < w.isl {
        return Err(Error::InvalidConfig(format!(
            "ctx_capacity {c} below isl {} requires chunked prefill",
            w.isl
        )));
    }
    let b = cfg.batch;
    let sched = agg_schedule(w.isl, w.osl, b, c)?;
    let mix = s.get_mix_latency(sched.n_ctx, sched.n_gen, w.isl, w.osl)?.total;
    let gen = s.get_gen_latency(b, w.isl, w.osl)?.total;
    let (ttft, tpot, f) = agg_timing(&sched, mix, gen, b, w.isl, w.osl, c, &w.constants);
    let (speed, throughput_per_gpu) = derive_metrics(ttft, tpot, w.osl, cfg.concurrency(), cfg.gpus());
    Ok(PerfEstimate {
        mode: Mode::Aggregated,
        ttft,
        tpot,
        speed,
        throughput_per_gpu,
        batch: cfg.concurrency(),
        gpus: cfg.gpus(),
        breakdown: Breakdown::Aggregated {
            schedule: sched,
            mix_step_ms: mix,
            gen_step_ms: gen,
            f_corr: f,
        },
    })
}
