//! Iteration latency from operator latencies.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{decompose, IterationPlan, ModelSpec, OpRole, ParallelConfig, Phase, StepShape};
use crate::moe_load::{imbalanced_moe_latency, sample_weights, tokens_per_expert, PowerLawParams};
use crate::perfdb::{OperatorKind, PerfDatabase};

/// Latency of one engine iteration, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLatency {
    pub total: f64,
    pub breakdown: BTreeMap<OperatorKind, f64>,
}

/// Pipeline fill/drain factor for `microbatches` in flight over `pp` stages.
pub fn pipeline_factor(pp: u64, microbatches: u64) -> f64 {
    let m = microbatches.max(1) as f64;
    (m + pp as f64 - 1.0) / m
}

/// Step-latency oracle for one model on one parallel layout.
///
/// Expert weights for MoE models are drawn once at construction; every step
/// re-derives per-expert token counts from them.
#[derive(Debug, Clone)]
pub struct InferenceSession<'a> {
    db: &'a PerfDatabase,
    model: &'a ModelSpec,
    cfg: &'a ParallelConfig,
    expert_weights: Option<Vec<f64>>,
}

impl<'a> InferenceSession<'a> {
    /// MoE layers use a skewed load drawn from `moe_load`.
    pub fn new(
        db: &'a PerfDatabase,
        model: &'a ModelSpec,
        cfg: &'a ParallelConfig,
        moe_load: &PowerLawParams,
    ) -> Result<Self> {
        let mut s = Self::balanced(db, model, cfg)?;
        if let Some(moe) = &model.moe {
            s.expert_weights = Some(sample_weights(moe.num_experts as usize, moe_load)?);
        }
        Ok(s)
    }

    /// MoE layers assume perfectly even routing.
    pub fn balanced(db: &'a PerfDatabase, model: &'a ModelSpec, cfg: &'a ParallelConfig) -> Result<Self> {
        model.validate()?;
        cfg.validate(model)?;
        Ok(Self {
            db,
            model,
            cfg,
            expert_weights: None,
        })
    }

    pub fn db(&self) -> &PerfDatabase {
        self.db
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    pub fn config(&self) -> &ParallelConfig {
        self.cfg
    }

    pub fn plan(&self, shape: StepShape) -> Result<IterationPlan> {
        decompose(self.model, self.cfg, shape)
    }

    /// Sums the plan for `shape`, scaled by the pipeline factor.
    pub fn step(&self, shape: StepShape) -> Result<StepLatency> {
        let plan = self.plan(shape)?;
        let factor = pipeline_factor(self.cfg.pp, shape.sequences());
        let mut micros: BTreeMap<OperatorKind, f64> = BTreeMap::new();
        for op in &plan.ops {
            let us = match (op.role, &self.expert_weights) {
                (OpRole::MoeExperts { group_tokens }, Some(w)) => {
                    let topk = self.model.moe.as_ref().map_or(1, |m| m.topk);
                    let profile = tokens_per_expert(w, group_tokens, topk)?;
                    imbalanced_moe_latency(self.db, self.model, self.cfg, &profile)?.expert_gemm_us
                }
                _ => self.db.query_latency(&op.query)?,
            };
            *micros.entry(op.query.kind).or_default() += us * op.repeat as f64;
        }
        // convert once so constant-latency sums stay exact
        let total = micros.values().sum::<f64>() * factor / 1000.0;
        let breakdown = micros.into_iter().map(|(k, us)| (k, us * factor / 1000.0)).collect();
        Ok(StepLatency { total, breakdown })
    }

    /// Prefill of `batch` prompts of `seq_len` tokens, or one decode step for
    /// `batch` sequences whose KV length is `seq_len`.
    pub fn get_step_latency(&self, batch: u64, seq_len: u64, phase: Phase) -> Result<StepLatency> {
        if batch == 0 || seq_len == 0 {
            return Err(Error::InvalidQuery("batch and seq_len must be at least 1".into()));
        }
        match phase {
            Phase::Prefill => self.step(StepShape::prefill(batch, seq_len)),
            Phase::Decode => self.step(StepShape::decode(batch, seq_len)),
            Phase::Mixed => Err(Error::InvalidQuery("use get_mix_latency for mixed steps".into())),
        }
    }

    /// `n_ctx` prompt tokens from `isl`-token prompts batched with `n_gen`
    /// decoding sequences at the mean KV length `isl + osl / 2`.
    pub fn get_mix_latency(&self, n_ctx: u64, n_gen: u64, isl: u64, osl: u64) -> Result<StepLatency> {
        if n_ctx == 0 && n_gen == 0 {
            return Err(Error::InvalidQuery("mixed step with no tokens".into()));
        }
        self.step(StepShape::mixed(n_ctx, isl, n_gen, mean_kv_len(isl, osl)))
    }

    pub fn get_gen_latency(&self, n_gen: u64, isl: u64, osl: u64) -> Result<StepLatency> {
        if n_gen == 0 {
            return Err(Error::InvalidQuery("generation step needs n_gen >= 1".into()));
        }
        self.step(StepShape::decode(n_gen, mean_kv_len(isl, osl)))
    }
}

/// KV length of an in-flight request halfway through its output.
pub fn mean_kv_len(isl: u64, osl: u64) -> u64 {
    isl + osl / 2
}
