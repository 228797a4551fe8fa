//! Synthetic databases built from roofline bounds and a smooth efficiency field.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    sol_estimate, AttnKind, DbContents, DbHeader, Dim, GridKey, HardwareSpec, OperatorKind, OperatorQuery,
    OperatorRecord, PerfDatabase, Provenance, Quant,
};
use crate::error::{Error, Result};

/// One cartesian block of grid coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub kind: OperatorKind,
    pub quants: Vec<Quant>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attn_kinds: Vec<AttnKind>,
    /// Values for every dimension of `kind`, strictly ascending.
    pub axes: BTreeMap<Dim, Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub backend: String,
    pub backend_version: String,
    pub blocks: Vec<GridBlock>,
}

fn powers(from: u64, to: u64, factor: u64) -> Vec<u64> {
    std::iter::successors(Some(from), |v| Some(v * factor))
        .take_while(|v| *v <= to)
        .collect()
}

/// Default interpolated-axis values for a kind.
pub fn default_axis(kind: OperatorKind, dim: Dim) -> Vec<u64> {
    match (kind, dim) {
        (_, Dim::M) => powers(1, 1 << 18, 2),
        (_, Dim::Batch) => powers(1, 512, 2),
        (_, Dim::SeqLen) => powers(16, 1 << 16, 2),
        (_, Dim::MessageBytes) => powers(1 << 10, 1 << 32, 4),
        (_, Dim::Tokens) => powers(1, 1 << 18, 2),
        _ => Vec::new(),
    }
}

impl GridSpec {
    /// One block per distinct grid key among `queries`, with the kind's
    /// default interpolated axes.
    pub fn covering<'a>(
        backend: impl Into<String>,
        backend_version: impl Into<String>,
        queries: impl IntoIterator<Item = &'a OperatorQuery>,
    ) -> Self {
        let mut seen = BTreeSet::new();
        let mut blocks = Vec::new();
        for q in queries {
            let key = GridKey::of(q);
            if !seen.insert(key.to_string()) {
                continue;
            }
            let interp = q.kind.interp_axes();
            let axes = q
                .shape
                .iter()
                .map(|(d, v)| {
                    if interp.contains(d) {
                        (*d, default_axis(q.kind, *d))
                    } else {
                        (*d, vec![*v])
                    }
                })
                .collect();
            blocks.push(GridBlock {
                kind: q.kind,
                quants: vec![q.quant],
                attn_kinds: q.attn_kind.into_iter().collect(),
                axes,
            });
        }
        Self {
            backend: backend.into(),
            backend_version: backend_version.into(),
            blocks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            let err = |m: String| Error::Document(format!("grid block {i} ({}): {m}", b.kind));
            if b.quants.is_empty() {
                return Err(err("no quants".into()));
            }
            if b.kind.is_attention() == b.attn_kinds.is_empty() {
                return Err(err("attn_kinds required exactly for attention kinds".into()));
            }
            let dims = b.kind.dims();
            if b.axes.len() != dims.len() || dims.iter().any(|d| !b.axes.contains_key(d)) {
                return Err(err(format!("axes must be exactly {dims:?}")));
            }
            for (d, vals) in &b.axes {
                if vals.is_empty() {
                    return Err(err(format!("axis {d} is empty")));
                }
                if vals.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(err(format!("axis {d} is not strictly ascending")));
                }
                if vals[0] == 0 {
                    return Err(err(format!("axis {d} contains 0")));
                }
            }
        }
        Ok(())
    }

    /// Every query the grids describe, in generation order.
    pub fn queries(&self) -> Vec<OperatorQuery> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let dims = b.kind.dims();
            let attn: Vec<Option<AttnKind>> = if b.attn_kinds.is_empty() {
                vec![None]
            } else {
                b.attn_kinds.iter().copied().map(Some).collect()
            };
            for &quant in &b.quants {
                for &attn_kind in &attn {
                    let lens: Vec<usize> = dims.iter().map(|d| b.axes[d].len()).collect();
                    let mut idx = vec![0usize; dims.len()];
                    'odometer: loop {
                        out.push(OperatorQuery::new(
                            b.kind,
                            quant,
                            attn_kind,
                            dims.iter().zip(&idx).map(|(d, i)| (*d, b.axes[d][*i])),
                        ));
                        for pos in (0..idx.len()).rev() {
                            idx[pos] += 1;
                            if idx[pos] < lens[pos] {
                                continue 'odometer;
                            }
                            idx[pos] = 0;
                        }
                        break;
                    }
                }
            }
        }
        out
    }
}

fn unit_hash(seed: u64, key: &str, salt: &str) -> f64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(key.as_bytes())
        .chain_update(salt.as_bytes())
        .finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic latency/roofline ratio in `[1, 3]`.
///
/// Constant part hashed from the grid key, plus a logistic ramp over the
/// log-coordinates of the interpolated axes with slopes at most 0.1, so the
/// factor changes by under 4% per unit of `ln(coordinate)` and never
/// decreases along an interpolated axis.
pub fn efficiency(q: &OperatorQuery, seed: u64) -> f64 {
    let key = GridKey::of(q).to_string();
    let offset = unit_hash(seed, &key, "offset");
    let center = 1.5 * unit_hash(seed, &key, "center");
    let ramp: f64 = q
        .kind
        .interp_axes()
        .iter()
        .map(|d| {
            let slope = 0.02 + 0.08 * unit_hash(seed, &key, d.as_str());
            slope * (q.dim(*d) as f64).ln()
        })
        .sum();
    let logistic = 1.0 / (1.0 + (center - ramp).exp());
    1.0 + 2.0 * (0.3 * offset + 0.7 * logistic)
}

/// Builds a database with `latency = sol_estimate * efficiency` at every
/// coordinate of `spec`. Output is a pure function of the arguments.
pub fn generate_synthetic_db(hw: &HardwareSpec, spec: &GridSpec, seed: u64) -> Result<PerfDatabase> {
    hw.validate()?;
    spec.validate()?;
    let records = spec
        .queries()
        .into_iter()
        .map(|q| {
            let latency_us = sol_estimate(&q, hw)? * efficiency(&q, seed);
            Ok(OperatorRecord {
                query: q,
                latency_us,
                provenance: Provenance::Synthetic,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PerfDatabase::new(DbContents {
        header: DbHeader::new(hw.clone(), &spec.backend, &spec.backend_version),
        records,
    })
}
