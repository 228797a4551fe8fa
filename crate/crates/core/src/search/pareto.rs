use serde::{Deserialize, Serialize};

use super::ParetoPoint;
use crate::serving_modes::{PerfEstimate, WorkloadSpec};

/// TTFT within the limit and speed at or above the floor.
pub fn sla_ok(e: &PerfEstimate, w: &WorkloadSpec) -> bool {
    e.ttft <= w.ttft_limit && e.speed_or_inf() >= w.speed_floor()
}

/// Indices of the non-dominated `(speed, throughput)` pairs, by descending
/// speed; equal speeds keep input order. A pair is dominated when another is
/// at least as good on both axes and strictly better on one.
pub fn pareto_indices(pts: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| {
        pts[b]
            .0
            .total_cmp(&pts[a].0)
            .then(pts[b].1.total_cmp(&pts[a].1))
            .then(a.cmp(&b))
    });
    let mut keep = Vec::new();
    let mut best_faster = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let speed = pts[order[i]].0;
        let group_max = pts[order[i]].1;
        let mut j = i;
        while j < order.len() && pts[order[j]].0 == speed {
            let t = pts[order[j]].1;
            if t == group_max && t > best_faster {
                keep.push(order[j]);
            }
            j += 1;
        }
        best_faster = best_faster.max(group_max);
        i = j;
    }
    // restore input order among equal speeds
    keep.sort_by(|&a, &b| pts[b].0.total_cmp(&pts[a].0).then(a.cmp(&b)));
    keep
}

/// Points no other point beats on both speed and throughput per GPU.
pub fn pareto_filter(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.speed(), p.throughput())).collect();
    pareto_indices(&pts).into_iter().map(|i| points[i].clone()).collect()
}

/// The point closest to meeting the SLA when none does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestMiss {
    pub point: ParetoPoint,
    /// TTFT over the limit, ms (0 when within).
    pub ttft_excess: f64,
    /// Tokens/s/user short of the floor (0 when met).
    pub speed_deficit: f64,
    /// Sum of both shortfalls relative to their limits.
    pub violation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ranked: Vec<ParetoPoint>,
    pub nearest_miss: Option<NearestMiss>,
}

fn miss(p: &ParetoPoint, w: &WorkloadSpec) -> NearestMiss {
    let ttft_excess = (p.estimate.ttft - w.ttft_limit).max(0.0);
    let floor = w.speed_floor();
    let speed_deficit = (floor - p.speed()).max(0.0);
    let violation = ttft_excess / w.ttft_limit + if floor > 0.0 { speed_deficit / floor } else { 0.0 };
    NearestMiss {
        point: p.clone(),
        ttft_excess,
        speed_deficit,
        violation,
    }
}

/// The point with the smallest relative SLA violation; ties go to the
/// earlier point.
pub fn nearest_miss(points: &[ParetoPoint], w: &WorkloadSpec) -> Option<NearestMiss> {
    points
        .iter()
        .map(|p| miss(p, w))
        .reduce(|a, b| if b.violation < a.violation { b } else { a })
}

/// SLA-satisfying points by throughput per GPU, then speed, then fewer GPUs.
/// When nothing qualifies, reports the nearest miss instead.
pub fn select_best(frontier: &[ParetoPoint], w: &WorkloadSpec) -> Selection {
    let mut ranked: Vec<ParetoPoint> = frontier.iter().filter(|p| sla_ok(&p.estimate, w)).cloned().collect();
    ranked.sort_by(|a, b| {
        b.throughput()
            .total_cmp(&a.throughput())
            .then(b.speed().total_cmp(&a.speed()))
            .then(a.estimate.gpus.cmp(&b.estimate.gpus))
    });
    let nearest_miss = if ranked.is_empty() {
        nearest_miss(frontier, w)
    } else {
        None
    };
    Selection { ranked, nearest_miss }
}
