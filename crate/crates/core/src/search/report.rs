use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    enumerate_candidates, enumerate_workers, evaluate_space, nearest_miss, pareto_filter, select_best, CandidateSpace,
    NearestMiss, ParetoPoint, SearchInputs, Skip,
};
use crate::error::{Error, Result};
use crate::serving_modes::{Mode, WorkloadSpec};

pub const DEFAULT_MAX_CANDIDATES: usize = 10_000;

#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
    pub max_candidates: usize,
    /// Leave wall-clock figures out so reports compare byte for byte.
    pub omit_timing: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            jobs: None,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            omit_timing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub per_candidate_median_ms: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub workload: WorkloadSpec,
    pub model: String,
    pub hardware: String,
    pub backend: String,
    pub space: CandidateSpace,
    /// Single-instance configurations and disaggregated workers evaluated.
    pub candidates: usize,
    pub workers: usize,
    /// Non-dominated points within the TTFT limit, by descending speed.
    pub frontier: Vec<ParetoPoint>,
    /// The same frontier computed per serving mode.
    pub series: BTreeMap<Mode, Vec<ParetoPoint>>,
    /// SLA-satisfying frontier points, best first.
    pub best: Vec<ParetoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nearest_miss: Option<NearestMiss>,
    pub skipped: Vec<Skip>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl SearchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Document(format!("{}: {}", e.path(), e.inner())))
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn frontier_of<'a>(points: impl Iterator<Item = &'a ParetoPoint>, w: &WorkloadSpec) -> Vec<ParetoPoint> {
    let within: Vec<ParetoPoint> = points.filter(|p| p.estimate.ttft <= w.ttft_limit).cloned().collect();
    pareto_filter(&within)
}

/// Enumerates, evaluates and ranks the space. Per-candidate failures land
/// in `skipped`; only invalid inputs and oversized spaces are errors.
pub fn run_search(inputs: SearchInputs<'_>, opts: &SearchOptions) -> Result<SearchReport> {
    let start = Instant::now();
    let SearchInputs {
        db,
        model,
        workload,
        space,
    } = inputs;
    model.validate()?;
    space.validate()?;
    let mut w = workload.clone();
    w.modes = space.modes.clone();
    w.batch_sweep = space.batch_sweep.clone();
    w.validate()?;

    let hw = db.hardware();
    let wants_single = w.modes.iter().any(|m| *m != Mode::Disaggregated);
    let singles = if wants_single {
        enumerate_candidates(space, model, hw, &w)
    } else {
        Vec::new()
    };
    let workers = if w.modes.contains(&Mode::Disaggregated) {
        enumerate_workers(space, model, hw, &w)
    } else {
        Vec::new()
    };
    let total = singles.len() + workers.len();
    if total > opts.max_candidates {
        return Err(Error::TooManyCandidates {
            candidates: total,
            limit: opts.max_candidates,
        });
    }

    let mut ev = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidWorkload(format!("thread pool: {e}")))?
            .install(|| evaluate_space(db, model, &singles, &workers, &w)),
        None => evaluate_space(db, model, &singles, &workers, &w),
    };

    let frontier = frontier_of(ev.points.iter(), &w);
    let mut series = BTreeMap::new();
    for mode in &w.modes {
        series.insert(
            *mode,
            frontier_of(ev.points.iter().filter(|p| p.estimate.mode == *mode), &w),
        );
    }
    let sel = select_best(&frontier, &w);
    let miss = if sel.ranked.is_empty() {
        nearest_miss(&ev.points, &w)
    } else {
        None
    };
    let timing = (!opts.omit_timing).then(|| Timing {
        total_ms: start.elapsed().as_secs_f64() * 1000.0,
        per_candidate_median_ms: median(&mut ev.candidate_ms),
        evaluations: ev.candidate_ms.len(),
    });
    Ok(SearchReport {
        workload: w,
        model: model.name.clone(),
        hardware: hw.name.clone(),
        backend: space.backend.clone(),
        space: space.clone(),
        candidates: singles.len(),
        workers: workers.len(),
        frontier,
        series,
        best: sel.ranked,
        nearest_miss: miss,
        skipped: ev.skipped,
        timing,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    mode: Mode,
    label: &'a str,
    speed: Option<f64>,
    throughput_per_gpu: f64,
    ttft_ms: f64,
    tpot_ms: f64,
    gpus: u64,
    batch: u64,
    sla_ok: bool,
}

/// Plot-ready table of `points`, one row each.
pub fn frontier_csv(points: &[ParetoPoint]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "mode",
        "label",
        "speed",
        "throughput_per_gpu",
        "ttft_ms",
        "tpot_ms",
        "gpus",
        "batch",
        "sla_ok",
    ])
    .expect("in-memory csv write");
    for p in points {
        let e = &p.estimate;
        w.serialize(CsvRow {
            mode: e.mode,
            label: &p.label,
            speed: e.speed,
            throughput_per_gpu: e.throughput_per_gpu,
            ttft_ms: e.ttft,
            tpot_ms: e.tpot,
            gpus: e.gpus,
            batch: e.batch,
            sla_ok: p.sla_ok,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}
