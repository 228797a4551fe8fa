//! Operator latency database.
//!
//! Records are grouped by `(kind, quant, attn_kind, non-interpolated dims)`
//! into rectangular grids over each kind's interpolated axes (gemm: `m`;
//! attention: `batch`, `seq_len`; collectives: `message_bytes`; MoE and
//! embedding: `tokens`). Queries between grid points are answered by
//! multilinear interpolation of `ln(latency)` over `ln(coordinate)`; queries
//! outside a grid follow the [`ExtrapolationPolicy`].
//!
//! A database is immutable once built and can be shared freely across threads.

mod grid;
mod hardware;
mod io;
mod query;
mod roofline;
mod synth;
mod validate;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use grid::{AxisPos, Grid};

pub use hardware::HardwareSpec;
pub use io::{load_db, DbHeader, SCHEMA};
pub use query::{AttnKind, Dim, OperatorKind, OperatorQuery, Quant, Shape};
pub use roofline::{comm_factor, compute_cost, message_bytes, sol_estimate, OpCost};
pub use synth::{efficiency, generate_synthetic_db, GridBlock, GridSpec};
pub use validate::{validate_db, Finding, ValidationReport};

#[cfg(test)]
pub(crate) use hardware::test_hardware;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub query: OperatorQuery,
    pub latency_us: f64,
    pub provenance: Provenance,
}

/// What to do with a coordinate outside its grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extrapolation {
    /// Reject the query.
    Strict,
    /// Use the nearest edge value.
    Clamp,
    /// Scale the roofline estimate by the efficiency observed at the edge.
    Sol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtrapolationPolicy {
    pub below: Extrapolation,
    pub above: Extrapolation,
}

impl Default for ExtrapolationPolicy {
    fn default() -> Self {
        Self {
            below: Extrapolation::Clamp,
            above: Extrapolation::Sol,
        }
    }
}

impl ExtrapolationPolicy {
    pub fn uniform(mode: Extrapolation) -> Self {
        Self {
            below: mode,
            above: mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct GridKey {
    kind: OperatorKind,
    quant: Quant,
    attn_kind: Option<AttnKind>,
    fixed: Vec<(Dim, u64)>,
}

impl GridKey {
    pub(crate) fn of(q: &OperatorQuery) -> Self {
        let interp = q.kind.interp_axes();
        Self {
            kind: q.kind,
            quant: q.quant,
            attn_kind: q.attn_kind,
            fixed: q
                .shape
                .iter()
                .filter(|(d, _)| !interp.contains(d))
                .map(|(d, v)| (*d, *v))
                .collect(),
        }
    }
}

impl fmt::Display for GridKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.quant)?;
        if let Some(a) = self.attn_kind {
            write!(f, "/{a}")?;
        }
        f.write_str("{")?;
        for (i, (d, v)) in self.fixed.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}={v}")?;
        }
        f.write_str("}")
    }
}

/// Indexed, validated operator latency data for one hardware/backend pair.
#[derive(Debug, Clone)]
pub struct PerfDatabase {
    header: DbHeader,
    records: Vec<OperatorRecord>,
    grids: HashMap<GridKey, Grid>,
    policy: ExtrapolationPolicy,
}

/// Unindexed database contents, possibly violating invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct DbContents {
    pub header: DbHeader,
    pub records: Vec<OperatorRecord>,
}

impl PerfDatabase {
    /// Validates and indexes `contents`. The first invariant violation is
    /// returned with its file line (header is line 1, record `i` is line `i + 2`).
    pub fn new(contents: DbContents) -> Result<Self> {
        contents.header.hardware.validate()?;
        let grids = index(&contents.records)?;
        Ok(Self {
            header: contents.header,
            records: contents.records,
            grids,
            policy: ExtrapolationPolicy::default(),
        })
    }

    pub fn with_policy(mut self, policy: ExtrapolationPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn policy(&self) -> ExtrapolationPolicy {
        self.policy
    }

    pub fn header(&self) -> &DbHeader {
        &self.header
    }

    pub fn hardware(&self) -> &HardwareSpec {
        &self.header.hardware
    }

    pub fn backend(&self) -> &str {
        &self.header.backend
    }

    pub fn records(&self) -> &[OperatorRecord] {
        &self.records
    }

    pub fn contents(&self) -> DbContents {
        DbContents {
            header: self.header.clone(),
            records: self.records.clone(),
        }
    }

    pub fn grid_count(&self) -> usize {
        self.grids.len()
    }

    pub(crate) fn has_grid(&self, q: &OperatorQuery) -> bool {
        self.grids.contains_key(&GridKey::of(q))
    }

    /// Distinct operator kinds present.
    pub fn kinds(&self) -> Vec<OperatorKind> {
        let mut kinds: Vec<_> = self.grids.keys().map(|k| k.kind).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    /// Latency in microseconds for `q`.
    pub fn query_latency(&self, q: &OperatorQuery) -> Result<f64> {
        q.validate()?;
        let key = GridKey::of(q);
        let grid = self.grids.get(&key).ok_or_else(|| Error::MissingKey {
            kind: q.kind,
            quant: q.quant,
            key: key.to_string(),
        })?;

        let mut positions = Vec::with_capacity(grid.dims.len());
        let mut clamped = q.clone();
        let mut needs_sol = false;
        for (axis, dim) in grid.dims.iter().enumerate() {
            let v = q.dim(*dim);
            let pos = grid.locate(axis, v);
            let (lo, hi) = grid.bounds(axis);
            let (edge, mode, edge_pos) = match pos {
                AxisPos::Below => (lo, self.policy.below, AxisPos::At(0)),
                AxisPos::Above => (hi, self.policy.above, AxisPos::At(grid.axes[axis].len() - 1)),
                p => {
                    positions.push(p);
                    continue;
                }
            };
            match mode {
                Extrapolation::Strict => {
                    return Err(Error::OutOfBounds {
                        kind: q.kind,
                        axis: dim.to_string(),
                        value: v,
                        lo,
                        hi,
                    })
                }
                Extrapolation::Clamp => {}
                Extrapolation::Sol => needs_sol = true,
            }
            clamped.shape.insert(*dim, edge);
            positions.push(edge_pos);
        }

        let edge_latency = grid.interpolate(&positions);
        if !needs_sol {
            return Ok(edge_latency);
        }
        // Sol-mode axes keep the requested coordinate, clamp-mode axes the edge.
        let mut target = clamped.clone();
        for (axis, dim) in grid.dims.iter().enumerate() {
            let v = q.dim(*dim);
            let mode = match grid.locate(axis, v) {
                AxisPos::Below => self.policy.below,
                AxisPos::Above => self.policy.above,
                _ => continue,
            };
            if mode == Extrapolation::Sol {
                target.shape.insert(*dim, v);
            }
        }
        let hw = self.hardware();
        let efficiency = edge_latency / sol_estimate(&clamped, hw)?;
        Ok(sol_estimate(&target, hw)? * efficiency)
    }
}

fn index(records: &[OperatorRecord]) -> Result<HashMap<GridKey, Grid>> {
    let (grids, findings) = validate::analyze(records);
    match findings.into_iter().next() {
        Some(f) => Err(Error::Validation {
            line: f.line,
            message: f.message,
        }),
        None => Ok(grids),
    }
}

#[cfg(test)]
mod tests;
