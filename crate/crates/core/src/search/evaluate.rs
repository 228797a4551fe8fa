use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Deployment, ParetoPoint};
use crate::error::Result;
use crate::estimator::InferenceSession;
use crate::model::{ModelSpec, ParallelConfig};
use crate::perfdb::PerfDatabase;
use crate::serving_modes::{
    decode_worker, estimate_aggregated, estimate_disaggregated, estimate_static, prefill_worker, viable_prefill, Mode,
    PerfEstimate, WorkerCandidate, WorkloadSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Static,
    Aggregated,
    PrefillWorker,
    DecodeWorker,
    RateMatch,
}

/// A configuration that could not be evaluated, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ParallelConfig>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub points: Vec<ParetoPoint>,
    pub skipped: Vec<Skip>,
    /// Wall time of each single-instance and worker evaluation.
    pub candidate_ms: Vec<f64>,
}

fn session<'a>(
    db: &'a PerfDatabase,
    model: &'a ModelSpec,
    cfg: &'a ParallelConfig,
    w: &WorkloadSpec,
) -> Result<InferenceSession<'a>> {
    InferenceSession::new(db, model, cfg, &w.moe_load)
}

fn skip(stage: Stage, cfg: &ParallelConfig, e: impl ToString) -> Skip {
    Skip {
        stage,
        config: Some(cfg.clone()),
        reason: e.to_string(),
    }
}

struct SingleOutcome {
    points: Vec<ParetoPoint>,
    skipped: Vec<Skip>,
    ms: f64,
}

fn eval_single(db: &PerfDatabase, model: &ModelSpec, cfg: &ParallelConfig, w: &WorkloadSpec) -> SingleOutcome {
    let start = Instant::now();
    let mut out = SingleOutcome {
        points: Vec::new(),
        skipped: Vec::new(),
        ms: 0.0,
    };
    let modes = [(Mode::Static, Stage::Static), (Mode::Aggregated, Stage::Aggregated)];
    let wanted: Vec<_> = modes.iter().filter(|(m, _)| w.modes.contains(m)).collect();
    match session(db, model, cfg, w) {
        Err(e) => out.skipped.extend(wanted.iter().map(|(_, st)| skip(*st, cfg, &e))),
        Ok(s) => {
            for (mode, stage) in wanted {
                let r: Result<PerfEstimate> = match mode {
                    Mode::Static => estimate_static(&s, w),
                    _ => estimate_aggregated(&s, w),
                };
                match r {
                    Ok(e) => out.points.push(ParetoPoint::new(e, Deployment::Single(cfg.clone()), w)),
                    Err(e) => out.skipped.push(skip(*stage, cfg, e)),
                }
            }
        }
    }
    out.ms = start.elapsed().as_secs_f64() * 1000.0;
    out
}

struct WorkerOutcome {
    prefill: Option<WorkerCandidate>,
    decode: Option<WorkerCandidate>,
    skipped: Vec<Skip>,
    ms: f64,
}

fn eval_worker(db: &PerfDatabase, model: &ModelSpec, cfg: &ParallelConfig, w: &WorkloadSpec) -> WorkerOutcome {
    let start = Instant::now();
    let mut out = WorkerOutcome {
        prefill: None,
        decode: None,
        skipped: Vec::new(),
        ms: 0.0,
    };
    match session(db, model, cfg, w) {
        Err(e) => {
            out.skipped.push(skip(Stage::PrefillWorker, cfg, &e));
            out.skipped.push(skip(Stage::DecodeWorker, cfg, &e));
        }
        Ok(s) => {
            match prefill_worker(&s, w) {
                Ok(c) => out.prefill = Some(c),
                Err(e) => out.skipped.push(skip(Stage::PrefillWorker, cfg, e)),
            }
            match decode_worker(&s, w) {
                Ok(c) => out.decode = Some(c),
                Err(e) => out.skipped.push(skip(Stage::DecodeWorker, cfg, e)),
            }
        }
    }
    out.ms = start.elapsed().as_secs_f64() * 1000.0;
    out
}

/// Evaluates every requested mode. `singles` serve static and aggregated
/// modes; `workers` form the prefill and decode pools, and each decode
/// worker contributes its best pairing as one disaggregated point.
///
/// Runs on the current rayon pool; results come back in input order.
pub fn evaluate_space(
    db: &PerfDatabase,
    model: &ModelSpec,
    singles: &[ParallelConfig],
    workers: &[ParallelConfig],
    w: &WorkloadSpec,
) -> Evaluation {
    let mut ev = Evaluation::default();
    if w.modes.iter().any(|m| *m != Mode::Disaggregated) {
        let outcomes: Vec<SingleOutcome> = singles.par_iter().map(|c| eval_single(db, model, c, w)).collect();
        for o in outcomes {
            ev.points.extend(o.points);
            ev.skipped.extend(o.skipped);
            ev.candidate_ms.push(o.ms);
        }
    }
    if !w.modes.contains(&Mode::Disaggregated) {
        return ev;
    }
    let outcomes: Vec<WorkerOutcome> = workers.par_iter().map(|c| eval_worker(db, model, c, w)).collect();
    let (mut pre, mut dec) = (Vec::new(), Vec::new());
    for o in outcomes {
        pre.extend(o.prefill);
        dec.extend(o.decode);
        ev.skipped.extend(o.skipped);
        ev.candidate_ms.push(o.ms);
    }

    // Prefill choice honours the TTFT limit; the decode side is judged by
    // the SLA flag so slow pools still show on the frontier.
    let rates: Vec<_> = pre.iter().map(WorkerCandidate::rate).collect();
    let viable: Vec<WorkerCandidate> = viable_prefill(&rates, w.ttft_limit, &w.constants)
        .into_iter()
        .map(|i| pre[i].clone())
        .collect();
    let mut open = w.clone();
    open.tpot_limit = None;
    open.min_speed = None;
    let plans: Vec<_> = dec
        .par_iter()
        .map(|d| estimate_disaggregated(&viable, std::slice::from_ref(d), &open).ok())
        .collect();
    let before = ev.points.len();
    for plan in plans.into_iter().flatten() {
        ev.points
            .push(ParetoPoint::new(plan.estimate(), Deployment::Disaggregated(plan), w));
    }
    if ev.points.len() == before {
        ev.skipped.push(Skip {
            stage: Stage::RateMatch,
            config: None,
            reason: format!(
                "no prefill/decode pairing fits the GPU counts {:?} within the TTFT limit ({} prefill, {} decode workers)",
                w.total_gpus_valid,
                pre.len(),
                dec.len()
            ),
        });
    }
    ev
}
