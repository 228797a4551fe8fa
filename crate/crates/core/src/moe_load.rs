//! Skewed expert-load profiles and the latency they induce.
//!
//! Raw expert weights follow a bounded power law drawn by inverse-transform
//! sampling. Weights become integer token counts per expert, then a concrete
//! token-to-expert matrix, and finally a per-rank expert GEMM latency where
//! the most loaded rank sets the pace.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{moe_gemm_query, ModelSpec, ParallelConfig};
use crate::perfdb::{Dim, OperatorKind, OperatorQuery, PerfDatabase};

fn default_alpha() -> f64 {
    1.2
}
fn default_x_min() -> f64 {
    1.0
}
fn default_x_max() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_x_min")]
    pub x_min: f64,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PowerLawParams {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            x_min: default_x_min(),
            x_max: default_x_max(),
            seed: 0,
        }
    }
}

impl PowerLawParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.alpha) {
            return Err(Error::InvalidLoad(format!("alpha {} outside [0, 2]", self.alpha)));
        }
        if self.alpha == 1.0 {
            return Err(Error::InvalidLoad("alpha = 1 makes the inverse CDF singular".into()));
        }
        if !(self.x_min > 0.0 && self.x_max > self.x_min && self.x_max.is_finite()) {
            return Err(Error::InvalidLoad(format!(
                "need 0 < x_min < x_max, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        Ok(())
    }

    /// Inverse CDF of the bounded power law at `u` in `[0, 1)`.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let e = 1.0 - self.alpha;
        let (lo, hi) = (self.x_min.powf(e), self.x_max.powf(e));
        ((hi - lo) * u + lo).powf(1.0 / e).clamp(self.x_min, self.x_max)
    }
}

/// One raw weight per expert, deterministic in `p.seed`.
pub fn sample_weights(num_experts: usize, p: &PowerLawParams) -> Result<Vec<f64>> {
    p.validate()?;
    if num_experts == 0 {
        return Err(Error::InvalidLoad("need at least one expert".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    Ok((0..num_experts).map(|_| p.inverse_cdf(rng.random::<f64>())).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpertLoadProfile {
    pub tokens_per_expert: Vec<u64>,
    pub total_tokens: u64,
    pub topk: u64,
}

impl ExpertLoadProfile {
    pub fn uniform(num_experts: usize, total_tokens: u64, topk: u64) -> Result<Self> {
        tokens_per_expert(&vec![1.0; num_experts], total_tokens, topk)
    }

    /// Fraction of all routed tokens landing on the busiest expert.
    pub fn top_share(&self) -> f64 {
        let max = self.tokens_per_expert.iter().copied().max().unwrap_or(0);
        max as f64 / (self.total_tokens * self.topk) as f64
    }

    /// Token sums of `ranks` contiguous expert blocks.
    pub fn rank_loads(&self, ranks: usize) -> Vec<u64> {
        let per = self.tokens_per_expert.len().div_ceil(ranks);
        self.tokens_per_expert.chunks(per).map(|c| c.iter().sum()).collect()
    }

    pub fn to_csv(&self) -> String {
        let routed = (self.total_tokens * self.topk) as f64;
        let mut out = String::from("expert,tokens,share\n");
        for (i, n) in self.tokens_per_expert.iter().enumerate() {
            let _ = writeln!(out, "{i},{n},{}", *n as f64 / routed);
        }
        out
    }
}

/// Splits `total_tokens * topk` routed tokens across experts in proportion
/// to `weights`. An expert can see each token at most once, so shares above
/// `total_tokens` are capped and the excess spread over the rest. Rounding
/// uses largest remainders (ties to the lower index), so the counts always
/// sum to `total_tokens * topk`.
pub fn tokens_per_expert(weights: &[f64], total_tokens: u64, topk: u64) -> Result<ExpertLoadProfile> {
    let e = weights.len();
    if e == 0 || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidLoad("weights must be non-empty and positive".into()));
    }
    if total_tokens == 0 || topk == 0 {
        return Err(Error::InvalidLoad("total_tokens and topk must be at least 1".into()));
    }
    if topk as usize > e {
        return Err(Error::InvalidLoad(format!("topk {topk} exceeds {e} experts")));
    }
    let routed = total_tokens * topk;
    let cap = total_tokens as f64;

    let mut capped = vec![false; e];
    let mut shares = vec![0.0; e];
    loop {
        let free: f64 = weights.iter().zip(&capped).filter(|(_, c)| !**c).map(|(w, _)| w).sum();
        let left = routed as f64 - cap * capped.iter().filter(|c| **c).count() as f64;
        let mut changed = false;
        for i in 0..e {
            if capped[i] {
                shares[i] = cap;
            } else {
                shares[i] = weights[i] / free * left;
                if shares[i] > cap {
                    capped[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut counts: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (shares[a] - shares[a].floor(), shares[b] - shares[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut residual = routed.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if residual == 0 {
            break;
        }
        if counts[i] < total_tokens {
            counts[i] += 1;
            residual -= 1;
        }
    }
    // Float error could overshoot by a token; take it back from the largest.
    let mut excess = counts.iter().sum::<u64>().saturating_sub(routed);
    while excess > 0 {
        let i = (0..e).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        counts[i] -= 1;
        excess -= 1;
    }
    Ok(ExpertLoadProfile {
        tokens_per_expert: counts,
        total_tokens,
        topk,
    })
}

/// Dense 0/1 token-by-expert routing matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    pub tokens: usize,
    pub experts: usize,
    cells: Vec<bool>,
}

impl AssignmentMatrix {
    pub fn get(&self, token: usize, expert: usize) -> bool {
        self.cells[token * self.experts + expert]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.cells
            .chunks(self.experts)
            .map(|r| r.iter().filter(|c| **c).count() as u64)
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.experts)
            .map(|j| (0..self.tokens).filter(|&i| self.get(i, j)).count() as u64)
            .collect()
    }
}

/// Routes every token to `topk` distinct experts so that expert `i` receives
/// exactly `tokens_per_expert[i]` tokens. Tokens are visited in a seeded
/// order and each takes the experts with the most outstanding demand, which
/// always succeeds when the margins are feasible.
pub fn build_assignment(profile: &ExpertLoadProfile, seed: u64) -> Result<AssignmentMatrix> {
    let t = profile.total_tokens as usize;
    let e = profile.tokens_per_expert.len();
    let k = profile.topk as usize;
    if k > e {
        return Err(Error::InvalidLoad(format!("topk {k} exceeds {e} experts")));
    }
    if profile.tokens_per_expert.iter().sum::<u64>() != profile.total_tokens * profile.topk {
        return Err(Error::InvalidLoad(
            "expert counts do not sum to total_tokens * topk".into(),
        ));
    }
    if let Some(n) = profile.tokens_per_expert.iter().find(|n| **n > profile.total_tokens) {
        return Err(Error::InvalidLoad(format!(
            "an expert needs {n} tokens but only {t} exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..t).collect();
    rows.shuffle(&mut rng);
    let mut remaining = profile.tokens_per_expert.clone();
    let mut cells = vec![false; t * e];
    let mut by_demand: Vec<usize> = (0..e).collect();
    for (visited, &row) in rows.iter().enumerate() {
        let rows_left = (t - visited) as u64;
        by_demand.sort_by_key(|&j| (std::cmp::Reverse(remaining[j]), j));
        for &j in &by_demand[..k] {
            if remaining[j] == 0 {
                return Err(Error::InvalidLoad("margins are not realisable".into()));
            }
            remaining[j] -= 1;
            cells[row * e + j] = true;
        }
        if remaining.iter().any(|r| *r > rows_left - 1) {
            return Err(Error::InvalidLoad("margins are not realisable".into()));
        }
    }
    Ok(AssignmentMatrix {
        tokens: t,
        experts: e,
        cells,
    })
}

/// MoE block latency on the slowest expert-parallel rank, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoeLatency {
    pub expert_gemm_us: f64,
    pub dispatch_us: f64,
    pub combine_us: f64,
}

impl MoeLatency {
    pub fn total_us(&self) -> f64 {
        self.expert_gemm_us + self.dispatch_us + self.combine_us
    }
}

/// Expert GEMM latency of the busiest of `cfg.ep` ranks, each owning a
/// contiguous block of experts, plus dispatch and combine when `ep > 1`.
/// `profile.total_tokens` counts tokens across all data-parallel ranks.
pub fn imbalanced_moe_latency(
    db: &PerfDatabase,
    model: &ModelSpec,
    cfg: &ParallelConfig,
    profile: &ExpertLoadProfile,
) -> Result<MoeLatency> {
    let moe = model
        .moe
        .as_ref()
        .ok_or_else(|| Error::InvalidModel(format!("{} has no MoE layers", model.name)))?;
    if profile.tokens_per_expert.len() as u64 != moe.num_experts || profile.topk != moe.topk {
        return Err(Error::InvalidLoad("profile does not match the model's experts".into()));
    }
    let mut expert_gemm_us: f64 = 0.0;
    for load in profile.rank_loads(cfg.ep as usize) {
        if load > 0 {
            expert_gemm_us = expert_gemm_us.max(db.query_latency(&moe_gemm_query(model, cfg, load))?);
        }
    }
    let (mut dispatch_us, mut combine_us) = (0.0, 0.0);
    if cfg.ep > 1 {
        let route = |kind| {
            OperatorQuery::new(
                kind,
                model.weight_quant,
                None,
                [
                    (Dim::Tokens, profile.total_tokens.div_ceil(cfg.dp)),
                    (Dim::Experts, moe.num_experts),
                    (Dim::Topk, moe.topk),
                    (Dim::Hidden, model.hidden),
                    (Dim::ParticipantCount, cfg.ep),
                ],
            )
        };
        dispatch_us = db.query_latency(&route(OperatorKind::MoeDispatch))?;
        combine_us = db.query_latency(&route(OperatorKind::MoeCombine))?;
    }
    Ok(MoeLatency {
        expert_gemm_us,
        dispatch_us,
        combine_us,
    })
}

#[cfg(test)]
mod tests;
