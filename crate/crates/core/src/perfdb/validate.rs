use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::grid::Grid;
use super::{DbContents, GridKey, OperatorQuery, OperatorRecord, PerfDatabase};

/// An invariant violation tied to a file line.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Finding {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Finding>,
    /// Grid keys needed by the supplied queries but absent from the database.
    pub gaps: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty() && self.gaps.is_empty()
    }
}

/// Grid coordinates to (latency, line).
type Points = BTreeMap<Vec<u64>, (f64, usize)>;

/// Builds grids from `records`, collecting every violation instead of stopping
/// at the first. Violating records are left out of the grids.
pub(crate) fn analyze(records: &[OperatorRecord]) -> (HashMap<GridKey, Grid>, Vec<Finding>) {
    let mut findings = Vec::new();
    let mut groups: HashMap<GridKey, (usize, Points)> = HashMap::new();
    for (i, rec) in records.iter().enumerate() {
        let line = i + 2;
        if let Err(e) = rec.query.validate() {
            findings.push(Finding {
                line,
                message: e.to_string(),
            });
            continue;
        }
        if !(rec.latency_us.is_finite() && rec.latency_us > 0.0) {
            findings.push(Finding {
                line,
                message: format!("latency_us must be positive, got {}", rec.latency_us),
            });
            continue;
        }
        let key = GridKey::of(&rec.query);
        let coord: Vec<u64> = rec.query.kind.interp_axes().iter().map(|d| rec.query.dim(*d)).collect();
        let (_, points) = groups.entry(key.clone()).or_insert((line, BTreeMap::new()));
        if let Some((_, prev)) = points.get(&coord) {
            findings.push(Finding {
                line,
                message: format!("duplicate coordinate {coord:?} for {key} (first at line {prev})"),
            });
            continue;
        }
        points.insert(coord, (rec.latency_us, line));
    }

    let mut grids = HashMap::with_capacity(groups.len());
    for (key, (first_line, points)) in groups {
        let dims = key.kind.interp_axes().to_vec();
        let mut axes: Vec<Vec<u64>> = vec![Vec::new(); dims.len()];
        for coord in points.keys() {
            for (a, v) in axes.iter_mut().zip(coord) {
                a.push(*v);
            }
        }
        for a in &mut axes {
            a.sort_unstable();
            a.dedup();
        }
        let cells: usize = axes.iter().map(Vec::len).product();
        if cells != points.len() {
            findings.push(Finding {
                line: first_line,
                message: format!(
                    "grid {key} is not rectangular: {} points for {cells} axis combinations",
                    points.len()
                ),
            });
            continue;
        }
        // BTreeMap iteration over coordinate vectors is row-major order.
        let values = points.values().map(|(v, _)| *v).collect();
        grids.insert(key, Grid { dims, axes, values });
    }
    findings.sort();
    (grids, findings)
}

impl DbContents {
    /// Lists invariant violations and the grids `required` would need but
    /// the contents lack. Empty iff the contents are valid and cover `required`.
    pub fn validate(&self, required: &[OperatorQuery]) -> ValidationReport {
        let mut violations = Vec::new();
        if let Err(e) = self.header.hardware.validate() {
            violations.push(Finding {
                line: 1,
                message: e.to_string(),
            });
        }
        let (grids, findings) = analyze(&self.records);
        violations.extend(findings);
        let gaps: BTreeSet<String> = required
            .iter()
            .map(GridKey::of)
            .filter(|k| !grids.contains_key(k))
            .map(|k| k.to_string())
            .collect();
        ValidationReport {
            violations,
            gaps: gaps.into_iter().collect(),
        }
    }
}

pub fn validate_db(db: &PerfDatabase, required: &[OperatorQuery]) -> ValidationReport {
    let gaps: BTreeSet<String> = required
        .iter()
        .filter(|q| !db.has_grid(q))
        .map(|q| GridKey::of(q).to_string())
        .collect();
    ValidationReport {
        violations: Vec::new(),
        gaps: gaps.into_iter().collect(),
    }
}
