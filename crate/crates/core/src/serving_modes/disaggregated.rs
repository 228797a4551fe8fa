use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{check_memory, static_timing, Breakdown, Mode, ModeConstants, PerfEstimate, WorkloadSpec};
use crate::error::{Error, Result};
use crate::estimator::InferenceSession;
use crate::model::{ParallelConfig, Phase};

/// A prefill or decode worker as seen by rate matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateCandidate {
    /// Requests per second one worker sustains.
    pub seq_throughput: f64,
    pub gpus: u64,
    /// TTFT for prefill workers, TPOT for decode workers (ms).
    pub latency: f64,
}

/// Best pairing of `x` prefill workers with `y` decode workers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateMatch {
    pub prefill: usize,
    pub decode: usize,
    pub x: u64,
    pub y: u64,
    pub r_pre: f64,
    pub r_dec: f64,
    pub r_sys: f64,
    pub gpus: u64,
    /// Requests per second per GPU.
    pub score: f64,
    /// Prefill TTFT including the transfer allowance.
    pub ttft: f64,
}

/// Ranking: higher score, fewer GPUs, lower TTFT, then smaller (x, y),
/// decode index and prefill index.
fn rank(a: &RateMatch, b: &RateMatch) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.gpus.cmp(&b.gpus))
        .then(a.ttft.total_cmp(&b.ttft))
        .then((a.x, a.y).cmp(&(b.x, b.y)))
        .then(a.decode.cmp(&b.decode))
        .then(a.prefill.cmp(&b.prefill))
}

/// Prefill candidates that can still win: within a GPU count, drop any
/// worker another one matches on throughput and beats on TTFT, or matches on
/// both with a lower index.
fn prune_prefill(pre: &[RateCandidate], ok: &[usize]) -> Vec<usize> {
    ok.iter()
        .copied()
        .filter(|&i| {
            let a = &pre[i];
            !ok.iter().any(|&j| {
                let b = &pre[j];
                j != i
                    && b.gpus == a.gpus
                    && b.seq_throughput >= a.seq_throughput
                    && b.latency <= a.latency
                    && (b.latency < a.latency || j < i)
            })
        })
        .collect()
}

/// Decode latency does not enter the ranking, so within a GPU count only
/// workers faster than every lower-indexed one survive.
fn prune_decode(dec: &[RateCandidate], ok: &[usize]) -> Vec<usize> {
    ok.iter()
        .copied()
        .filter(|&i| {
            !ok.iter()
                .any(|&j| j < i && dec[j].gpus == dec[i].gpus && dec[j].seq_throughput >= dec[i].seq_throughput)
        })
        .collect()
}

/// Indices of prefill workers that meet the TTFT limit and are not beaten
/// by another worker of the same size; only these can appear in a
/// [`rate_match`] result.
pub fn viable_prefill(pre: &[RateCandidate], ttft_limit: f64, c: &ModeConstants) -> Vec<usize> {
    let ok: Vec<usize> = (0..pre.len())
        .filter(|&i| pre[i].latency * c.beta_ttft <= ttft_limit)
        .collect();
    prune_prefill(pre, &ok)
}

/// Sweeps worker pairs and replica counts for the highest request rate per
/// GPU whose total GPU count is in `gpus_valid`.
pub fn rate_match(
    pre: &[RateCandidate],
    dec: &[RateCandidate],
    ttft_limit: f64,
    tpot_limit: f64,
    gpus_valid: &[u64],
    c: &ModeConstants,
) -> Option<RateMatch> {
    let pre_ok = viable_prefill(pre, ttft_limit, c);
    let dec_ok: Vec<usize> = (0..dec.len()).filter(|&i| dec[i].latency <= tpot_limit).collect();
    let dec_ok = prune_decode(dec, &dec_ok);
    let g_max = gpus_valid.iter().copied().max()?;

    let mut best: Option<RateMatch> = None;
    for &d in &dec_ok {
        for &p in &pre_ok {
            let (cp, cd) = (&pre[p], &dec[d]);
            for x in 1..=c.max_prefill_workers {
                if x * cp.gpus + cd.gpus > g_max {
                    break;
                }
                for y in 1..=c.max_decode_workers {
                    let g = x * cp.gpus + y * cd.gpus;
                    if g > g_max {
                        break;
                    }
                    if !gpus_valid.contains(&g) {
                        continue;
                    }
                    let r_pre = cp.seq_throughput * x as f64 * c.alpha_pre;
                    let r_dec = cd.seq_throughput * y as f64 * c.alpha_dec;
                    let r_sys = r_pre.min(r_dec);
                    let m = RateMatch {
                        prefill: p,
                        decode: d,
                        x,
                        y,
                        r_pre,
                        r_dec,
                        r_sys,
                        gpus: g,
                        score: r_sys / g as f64,
                        ttft: cp.latency * c.beta_ttft,
                    };
                    if m.score > 0.0 && best.as_ref().is_none_or(|b| rank(&m, b) == Ordering::Less) {
                        best = Some(m);
                    }
                }
            }
        }
    }
    best
}

/// A single prefill or decode worker with its stand-alone performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerCandidate {
    pub config: ParallelConfig,
    /// TTFT (prefill) or TPOT (decode), ms.
    pub latency: f64,
    /// Requests per second.
    pub seq_throughput: f64,
}

impl WorkerCandidate {
    pub fn rate(&self) -> RateCandidate {
        RateCandidate {
            seq_throughput: self.seq_throughput,
            gpus: self.config.gpus(),
            latency: self.latency,
        }
    }
}

/// Prefill-only worker: one batch of prompts per TTFT.
pub fn prefill_worker(s: &InferenceSession<'_>, w: &WorkloadSpec) -> Result<WorkerCandidate> {
    check_memory(s, w.isl, 0)?;
    let cfg = s.config();
    let ttft = s.get_step_latency(cfg.batch, w.isl - w.prefix, Phase::Prefill)?.total;
    Ok(WorkerCandidate {
        config: cfg.clone(),
        latency: ttft,
        seq_throughput: 1000.0 * cfg.concurrency() as f64 / ttft,
    })
}

/// Decode-only worker: a full batch finishes every `(osl - 1) * TPOT`.
pub fn decode_worker(s: &InferenceSession<'_>, w: &WorkloadSpec) -> Result<WorkerCandidate> {
    if w.osl < 2 {
        return Err(Error::InvalidWorkload("decode workers need osl >= 2".into()));
    }
    check_memory(s, w.isl, w.osl)?;
    let cfg = s.config();
    let t = static_timing(w.isl, w.osl, 0, w.constants.stride, |phase, seq| match phase {
        Phase::Decode => Ok(s.get_step_latency(cfg.batch, seq, phase)?.total),
        _ => Ok(0.0),
    })?;
    Ok(WorkerCandidate {
        config: cfg.clone(),
        latency: t.tpot,
        seq_throughput: 1000.0 * cfg.concurrency() as f64 / t.generation_ms,
    })
}

/// Chosen prefill and decode pools: `x` replicas of `prefill_cfg` feeding
/// `y` replicas of `decode_cfg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisaggPlan {
    pub prefill_cfg: ParallelConfig,
    pub decode_cfg: ParallelConfig,
    pub x: u64,
    pub y: u64,
    pub r_pre: f64,
    pub r_dec: f64,
    /// Requests/s.
    pub r_sys: f64,
    pub gpus: u64,
    pub ttft: f64,
    pub tpot: f64,
    /// Tokens/s/GPU.
    pub throughput_per_gpu: f64,
}

impl DisaggPlan {
    pub fn estimate(&self) -> PerfEstimate {
        PerfEstimate {
            mode: Mode::Disaggregated,
            ttft: self.ttft,
            tpot: self.tpot,
            speed: (self.tpot > 0.0).then(|| 1000.0 / self.tpot),
            throughput_per_gpu: self.throughput_per_gpu,
            batch: self.y * self.decode_cfg.concurrency(),
            gpus: self.gpus,
            breakdown: Breakdown::Disaggregated {
                r_pre: self.r_pre,
                r_dec: self.r_dec,
                r_sys: self.r_sys,
            },
        }
    }
}

/// Best pairing of the given prefill and decode workers under the
/// workload's latency limits.
pub fn estimate_disaggregated(
    pre: &[WorkerCandidate],
    dec: &[WorkerCandidate],
    w: &WorkloadSpec,
) -> Result<DisaggPlan> {
    if w.osl < 2 {
        return Err(Error::InvalidWorkload("disaggregated serving needs osl >= 2".into()));
    }
    let pr: Vec<RateCandidate> = pre.iter().map(WorkerCandidate::rate).collect();
    let dr: Vec<RateCandidate> = dec.iter().map(WorkerCandidate::rate).collect();
    let m = rate_match(
        &pr,
        &dr,
        w.ttft_limit,
        w.tpot_limit_ms(),
        &w.total_gpus_valid,
        &w.constants,
    )
    .ok_or_else(|| Error::Infeasible("no prefill/decode pairing meets the limits".into()))?;
    Ok(DisaggPlan {
        prefill_cfg: pre[m.prefill].config.clone(),
        decode_cfg: dec[m.decode].config.clone(),
        x: m.x,
        y: m.y,
        r_pre: m.r_pre,
        r_dec: m.r_dec,
        r_sys: m.r_sys,
        gpus: m.gpus,
        ttft: m.ttft,
        tpot: dec[m.decode].latency,
        throughput_per_gpu: m.r_sys * w.osl as f64 / m.gpus as f64,
    })
}
