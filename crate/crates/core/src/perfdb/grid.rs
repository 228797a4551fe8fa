//! Rectangular latency grids and log-space multilinear interpolation.

use super::Dim;

/// Where a coordinate falls relative to one grid axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum AxisPos {
    /// Exactly on grid value `idx`.
    At(usize),
    /// Strictly between `idx` and `idx + 1`; `t` is the log-space fraction.
    Between(usize, f64),
    Below,
    Above,
}

/// Latencies over the cartesian product of the interpolated axes of one key.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Grid {
    pub dims: Vec<Dim>,
    pub axes: Vec<Vec<u64>>,
    /// Row-major over `axes`, last axis fastest.
    pub values: Vec<f64>,
}

impl Grid {
    pub fn locate(&self, axis: usize, v: u64) -> AxisPos {
        let a = &self.axes[axis];
        match a.binary_search(&v) {
            Ok(i) => AxisPos::At(i),
            Err(0) => AxisPos::Below,
            Err(i) if i == a.len() => AxisPos::Above,
            Err(i) => {
                let (lo, hi) = (a[i - 1] as f64, a[i] as f64);
                let t = ((v as f64).ln() - lo.ln()) / (hi.ln() - lo.ln());
                AxisPos::Between(i - 1, t)
            }
        }
    }

    pub fn bounds(&self, axis: usize) -> (u64, u64) {
        let a = &self.axes[axis];
        (a[0], a[a.len() - 1])
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (i, a)| acc * a.len() + i)
    }

    pub fn value_at(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    /// Interpolates at in-range positions (no `Below`/`Above`).
    ///
    /// Exact grid hits return the stored value bit-for-bit. Otherwise the
    /// result is `exp` of the multilinear blend of `ln(latency)` with
    /// log-coordinate weights, clamped into the range of the contributing
    /// corners so rounding can never leave the cell.
    pub fn interpolate(&self, pos: &[AxisPos]) -> f64 {
        debug_assert_eq!(pos.len(), self.axes.len());
        let mut corners: Vec<(Vec<usize>, f64)> = vec![(Vec::with_capacity(pos.len()), 1.0)];
        for p in pos {
            let mut next = Vec::with_capacity(corners.len() * 2);
            for (idx, w) in corners {
                match *p {
                    AxisPos::At(i) => {
                        let mut j = idx;
                        j.push(i);
                        next.push((j, w));
                    }
                    AxisPos::Between(i, t) => {
                        let mut lo = idx.clone();
                        lo.push(i);
                        let mut hi = idx;
                        hi.push(i + 1);
                        next.push((lo, w * (1.0 - t)));
                        next.push((hi, w * t));
                    }
                    AxisPos::Below | AxisPos::Above => {
                        unreachable!("out-of-range position passed to interpolate")
                    }
                }
            }
            corners = next;
        }
        if corners.len() == 1 {
            return self.value_at(&corners[0].0);
        }
        let mut log_sum = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (idx, w) in &corners {
            let v = self.value_at(idx);
            log_sum += w * v.ln();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        log_sum.exp().clamp(lo, hi)
    }
}
