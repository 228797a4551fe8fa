//! Static, aggregated (continuous batching) and disaggregated serving
//! estimates, plus the speed and per-GPU throughput metrics they share.

mod aggregated;
mod disaggregated;
mod static_mode;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::InferenceSession;
use crate::model::fits_memory;
use crate::moe_load::PowerLawParams;

pub use aggregated::{agg_schedule, agg_timing, estimate_aggregated, f_corr, AggSchedule};
pub use disaggregated::{
    decode_worker, estimate_disaggregated, prefill_worker, rate_match, viable_prefill, DisaggPlan, RateCandidate,
    RateMatch, WorkerCandidate,
};
pub use static_mode::{estimate_static, static_timing, StaticTiming};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Static,
    Aggregated,
    Disaggregated,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Static => "static",
            Mode::Aggregated => "aggregated",
            Mode::Disaggregated => "disaggregated",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Empirical constants of the three estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeConstants {
    /// Decode steps covered by one latency query in static mode.
    pub stride: u64,
    pub alpha_pre: f64,
    pub alpha_dec: f64,
    /// Prefill latency multiplier covering KV transfer in disaggregated mode.
    pub beta_ttft: f64,
    pub fcorr_base: f64,
    pub fcorr_offset: f64,
    pub fcorr_divisor: f64,
    pub fcorr_cap: f64,
    /// Leading mixed steps left out of the TPOT weighting.
    pub mix_warmup_steps: u64,
    pub max_prefill_workers: u64,
    pub max_decode_workers: u64,
}

impl Default for ModeConstants {
    fn default() -> Self {
        Self {
            stride: 32,
            alpha_pre: 0.9,
            alpha_dec: 0.92,
            beta_ttft: 1.8,
            fcorr_base: 2.0,
            fcorr_offset: 3.0,
            fcorr_divisor: 20.0,
            fcorr_cap: 4.0,
            mix_warmup_steps: 3,
            max_prefill_workers: 32,
            max_decode_workers: 64,
        }
    }
}

impl ModeConstants {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_pre", self.alpha_pre),
            ("alpha_dec", self.alpha_dec),
            ("beta_ttft", self.beta_ttft),
            ("fcorr_divisor", self.fcorr_divisor),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidWorkload(format!(
                "constants.{name} must be positive, got {v}"
            )));
        }
        if self.stride == 0 || self.max_prefill_workers == 0 || self.max_decode_workers == 0 {
            return Err(Error::InvalidWorkload(
                "stride and worker limits must be at least 1".into(),
            ));
        }
        if self.fcorr_cap < self.fcorr_base {
            return Err(Error::InvalidWorkload("fcorr_cap below fcorr_base".into()));
        }
        Ok(())
    }
}

fn default_gpus() -> Vec<u64> {
    vec![1, 2, 4, 8]
}
fn default_modes() -> Vec<Mode> {
    vec![Mode::Aggregated, Mode::Disaggregated]
}
pub fn default_batch_sweep() -> Vec<u64> {
    (0..10).map(|i| 1 << i).collect()
}

/// Traffic shape, latency targets and search knobs. Times are milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub isl: u64,
    pub osl: u64,
    /// Cached prompt prefix; skipped by prefill compute.
    #[serde(default)]
    pub prefix: u64,
    pub ttft_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpot_limit: Option<f64>,
    /// Tokens per second per user; the alternative to `tpot_limit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_speed: Option<f64>,
    #[serde(default = "default_gpus")]
    pub total_gpus_valid: Vec<u64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_batch_sweep")]
    pub batch_sweep: Vec<u64>,
    #[serde(default)]
    pub moe_load: PowerLawParams,
    /// Prompt tokens per engine step; `max(isl, 2048)` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctx_capacity: Option<u64>,
    #[serde(default)]
    pub constants: ModeConstants,
}

impl WorkloadSpec {
    pub fn new(isl: u64, osl: u64, ttft_limit: f64) -> Self {
        Self {
            isl,
            osl,
            prefix: 0,
            ttft_limit,
            tpot_limit: None,
            min_speed: None,
            total_gpus_valid: default_gpus(),
            modes: default_modes(),
            batch_sweep: default_batch_sweep(),
            moe_load: PowerLawParams::default(),
            ctx_capacity: None,
            constants: ModeConstants::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidWorkload(m));
        if self.isl == 0 || self.osl == 0 {
            return err("isl and osl must be at least 1".into());
        }
        if self.prefix >= self.isl {
            return err(format!("prefix {} must be below isl {}", self.prefix, self.isl));
        }
        if !(self.ttft_limit.is_finite() && self.ttft_limit > 0.0) {
            return err(format!("ttft_limit must be positive, got {}", self.ttft_limit));
        }
        match (self.tpot_limit, self.min_speed) {
            (Some(_), Some(_)) => return err("give tpot_limit or min_speed, not both".into()),
            (Some(v), None) | (None, Some(v)) if !(v.is_finite() && v > 0.0) => {
                return err(format!("latency target must be positive, got {v}"))
            }
            _ => {}
        }
        if self.total_gpus_valid.is_empty() || self.total_gpus_valid.contains(&0) {
            return err("total_gpus_valid needs positive entries".into());
        }
        if self.modes.is_empty() {
            return err("no serving modes requested".into());
        }
        if self.batch_sweep.is_empty() || self.batch_sweep.contains(&0) {
            return err("batch_sweep needs positive entries".into());
        }
        if self.ctx_capacity == Some(0) {
            return err("ctx_capacity must be at least 1".into());
        }
        self.moe_load.validate()?;
        self.constants.validate()
    }

    /// Per-token latency bound in ms; infinite when unconstrained.
    pub fn tpot_limit_ms(&self) -> f64 {
        match (self.tpot_limit, self.min_speed) {
            (Some(t), _) => t,
            (None, Some(s)) => 1000.0 / s,
            (None, None) => f64::INFINITY,
        }
    }

    /// Generation speed floor in tokens/s/user; 0 when unconstrained.
    pub fn speed_floor(&self) -> f64 {
        match (self.tpot_limit, self.min_speed) {
            (_, Some(s)) => s,
            (Some(t), None) => 1000.0 / t,
            (None, None) => 0.0,
        }
    }

    pub fn ctx_capacity(&self) -> u64 {
        self.ctx_capacity.unwrap_or(self.isl.max(2048))
    }

    /// Parses YAML (and therefore JSON), naming the offending field on error.
    pub fn from_yaml(text: &str) -> Result<Self> {
        let de = serde_yaml::Deserializer::from_str(text);
        let w: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::InvalidWorkload(format!("{}: {}", e.path(), e.inner())))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_yaml(&text)
    }
}

/// Phase-level figures behind an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Breakdown {
    Static {
        prefill_ms: f64,
        generation_ms: f64,
        decode_queries: u64,
    },
    Aggregated {
        #[serde(flatten)]
        schedule: AggSchedule,
        mix_step_ms: f64,
        gen_step_ms: f64,
        f_corr: f64,
    },
    Disaggregated {
        r_pre: f64,
        r_dec: f64,
        r_sys: f64,
    },
}

/// Predicted latency and throughput of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfEstimate {
    pub mode: Mode,
    pub ttft: f64,
    pub tpot: f64,
    /// Tokens/s/user; absent when no token follows the first.
    pub speed: Option<f64>,
    /// Tokens/s/GPU.
    pub throughput_per_gpu: f64,
    /// Requests in flight.
    pub batch: u64,
    pub gpus: u64,
    pub breakdown: Breakdown,
}

impl PerfEstimate {
    /// Speed used for ranking; a single-token output counts as infinitely fast.
    pub fn speed_or_inf(&self) -> f64 {
        self.speed.unwrap_or(f64::INFINITY)
    }
}

/// Speed in tokens/s/user (`None` when `tpot` is 0) and throughput in
/// tokens/s/GPU for a batch of `batch` requests each producing `osl` tokens.
pub fn derive_metrics(ttft: f64, tpot: f64, osl: u64, batch: u64, total_gpus: u64) -> (Option<f64>, f64) {
    let speed = (tpot > 0.0).then(|| 1000.0 / tpot);
    let request_ms = ttft + (osl - 1) as f64 * tpot;
    let throughput = 1000.0 / request_ms * batch as f64 * osl as f64 / total_gpus as f64;
    (speed, throughput)
}

fn check_memory(s: &InferenceSession<'_>, isl: u64, osl: u64) -> Result<()> {
    let hw = s.db().hardware();
    if fits_memory(s.model(), s.config(), isl, osl, hw) {
        return Ok(());
    }
    let fp = crate::model::memory_footprint(s.model(), s.config());
    Err(Error::OutOfMemory {
        needed: fp.kv_bytes(s.config().batch, isl + osl),
        budget: fp.kv_budget(hw.gpu_memory, s.config().kv_mem_fraction),
    })
}
