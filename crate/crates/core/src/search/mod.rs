//! Candidate enumeration, parallel evaluation, Pareto analysis and reports.

mod evaluate;
mod pareto;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fits_memory, required_queries, ModelSpec, ParallelConfig};
use crate::perfdb::{generate_synthetic_db, GridSpec, HardwareSpec, OperatorQuery, PerfDatabase};
use crate::serving_modes::{DisaggPlan, Mode, PerfEstimate, WorkloadSpec};

pub use evaluate::{evaluate_space, Evaluation, Skip, Stage};
pub use pareto::{nearest_miss, pareto_filter, pareto_indices, select_best, sla_ok, NearestMiss, Selection};
pub use report::{frontier_csv, run_search, SearchOptions, SearchReport, Timing, DEFAULT_MAX_CANDIDATES};

fn pow2_upto(n: u64) -> Vec<u64> {
    std::iter::successors(Some(1u64), |v| Some(v * 2))
        .take_while(|v| *v <= n)
        .collect()
}

/// Parallel degrees, batch sizes and modes to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpace {
    pub tp_values: Vec<u64>,
    pub pp_values: Vec<u64>,
    pub ep_values: Vec<u64>,
    pub dp_values: Vec<u64>,
    pub batch_sweep: Vec<u64>,
    pub modes: Vec<Mode>,
    pub backend: String,
}

impl CandidateSpace {
    /// Default degrees with the workload's batch sweep and modes.
    pub fn for_workload(w: &WorkloadSpec) -> Self {
        Self {
            tp_values: pow2_upto(8),
            pp_values: pow2_upto(4),
            ep_values: pow2_upto(8),
            dp_values: pow2_upto(8),
            batch_sweep: w.batch_sweep.clone(),
            modes: w.modes.clone(),
            backend: "trtllm".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("tp_values", &self.tp_values),
            ("pp_values", &self.pp_values),
            ("ep_values", &self.ep_values),
            ("dp_values", &self.dp_values),
            ("batch_sweep", &self.batch_sweep),
        ];
        for (name, v) in lists {
            if v.is_empty() || v.contains(&0) {
                return Err(Error::InvalidWorkload(format!("{name} needs positive entries")));
            }
            if v.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::InvalidWorkload(format!("{name} must be strictly increasing")));
            }
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidWorkload("no serving modes requested".into()));
        }
        Ok(())
    }

    /// Upper bound on the number of configurations the space can produce.
    pub fn size(&self) -> usize {
        [
            &self.tp_values,
            &self.pp_values,
            &self.ep_values,
            &self.dp_values,
            &self.batch_sweep,
        ]
        .iter()
        .map(|v| v.len())
        .product()
    }

    fn configs(&self, w: &WorkloadSpec) -> impl Iterator<Item = ParallelConfig> + '_ {
        let ctx = w.ctx_capacity();
        let backend = self.backend.clone();
        self.tp_values.iter().flat_map(move |&tp| {
            let backend = backend.clone();
            self.pp_values.iter().flat_map(move |&pp| {
                let backend = backend.clone();
                self.ep_values.iter().flat_map(move |&ep| {
                    let backend = backend.clone();
                    self.dp_values.iter().flat_map(move |&dp| {
                        let backend = backend.clone();
                        self.batch_sweep.iter().map(move |&b| {
                            let mut c = ParallelConfig::new(tp, pp, ep, dp, b);
                            c.ctx_capacity = ctx;
                            c.backend = backend.clone();
                            c
                        })
                    })
                })
            })
        })
    }
}

/// Partial space given by a caller; unset fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceOverrides {
    pub tp_values: Option<Vec<u64>>,
    pub pp_values: Option<Vec<u64>>,
    pub ep_values: Option<Vec<u64>>,
    pub dp_values: Option<Vec<u64>>,
    pub batch_sweep: Option<Vec<u64>>,
    pub modes: Option<Vec<Mode>>,
    pub backend: Option<String>,
}

impl SpaceOverrides {
    pub fn apply(&self, mut space: CandidateSpace) -> CandidateSpace {
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { space.$f = v.clone(); })*};
        }
        take!(tp_values, pp_values, ep_values, dp_values, batch_sweep, modes, backend);
        space
    }
}

/// Single-instance configurations for static and aggregated serving: valid
/// for the model, within the GPU budget and fitting in memory.
pub fn enumerate_candidates(
    space: &CandidateSpace,
    model: &ModelSpec,
    hw: &HardwareSpec,
    w: &WorkloadSpec,
) -> Vec<ParallelConfig> {
    space
        .configs(w)
        .filter(|c| {
            w.total_gpus_valid.contains(&c.gpus())
                && c.validate(model).is_ok()
                && fits_memory(model, c, w.isl, w.osl, hw)
        })
        .collect()
}

/// Worker configurations for disaggregated pools; any worker small enough
/// to fit once inside the largest GPU budget.
pub fn enumerate_workers(
    space: &CandidateSpace,
    model: &ModelSpec,
    hw: &HardwareSpec,
    w: &WorkloadSpec,
) -> Vec<ParallelConfig> {
    let g_max = w.total_gpus_valid.iter().copied().max().unwrap_or(0);
    space
        .configs(w)
        .filter(|c| c.gpus() <= g_max && c.validate(model).is_ok() && fits_memory(model, c, w.isl, w.osl, hw))
        .collect()
}

impl CandidateSpace {
    /// Operator queries `model` issues under every valid layout of the
    /// space. Batch sizes share grids, so only the parallel degrees matter.
    pub fn required_queries(&self, model: &ModelSpec) -> Result<Vec<OperatorQuery>> {
        model.validate()?;
        let mut layout = self.clone();
        layout.batch_sweep = vec![1];
        let w = WorkloadSpec::new(1, 1, 1.0);
        let cfgs: Vec<ParallelConfig> = layout.configs(&w).filter(|c| c.validate(model).is_ok()).collect();
        required_queries(model, &cfgs)
    }
}

/// Synthetic database with a grid for every operator any of `models` runs
/// under any valid layout of `space`.
pub fn covering_db(
    models: &[ModelSpec],
    space: &CandidateSpace,
    hw: &HardwareSpec,
    backend_version: &str,
    seed: u64,
) -> Result<PerfDatabase> {
    let mut queries = Vec::new();
    for m in models {
        queries.extend(space.required_queries(m)?);
    }
    let spec = GridSpec::covering(space.backend.clone(), backend_version, &queries);
    generate_synthetic_db(hw, &spec, seed)
}

/// What a point deploys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deployment {
    Single(ParallelConfig),
    Disaggregated(DisaggPlan),
}

fn cfg_label(c: &ParallelConfig) -> String {
    let mut s = format!("TP{}", c.tp);
    for (name, v) in [("PP", c.pp), ("EP", c.ep), ("DP", c.dp)] {
        if v > 1 {
            s.push_str(&format!(" {name}{v}"));
        }
    }
    s
}

impl Deployment {
    /// Compact description such as `TP2 DP2 B32` or `P: 4 × TP1, D: 2 × TP2`.
    pub fn label(&self) -> String {
        match self {
            Deployment::Single(c) => format!("{} B{}", cfg_label(c), c.batch),
            Deployment::Disaggregated(p) => format!(
                "P: {} × {} B{}, D: {} × {} B{}",
                p.x,
                cfg_label(&p.prefill_cfg),
                p.prefill_cfg.batch,
                p.y,
                cfg_label(&p.decode_cfg),
                p.decode_cfg.batch
            ),
        }
    }

    pub fn gpus(&self) -> u64 {
        match self {
            Deployment::Single(c) => c.gpus(),
            Deployment::Disaggregated(p) => p.gpus,
        }
    }
}

/// One evaluated configuration in the speed/throughput plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub estimate: PerfEstimate,
    pub deployment: Deployment,
    pub sla_ok: bool,
}

impl ParetoPoint {
    pub fn new(estimate: PerfEstimate, deployment: Deployment, w: &WorkloadSpec) -> Self {
        Self {
            label: deployment.label(),
            sla_ok: sla_ok(&estimate, w),
            estimate,
            deployment,
        }
    }

    pub fn speed(&self) -> f64 {
        self.estimate.speed_or_inf()
    }

    pub fn throughput(&self) -> f64 {
        self.estimate.throughput_per_gpu
    }
}

/// Loads every input of a search at once; used by both front ends.
#[derive(Debug, Clone, Copy)]
pub struct SearchInputs<'a> {
    pub db: &'a PerfDatabase,
    pub model: &'a ModelSpec,
    pub workload: &'a WorkloadSpec,
    pub space: &'a CandidateSpace,
}
