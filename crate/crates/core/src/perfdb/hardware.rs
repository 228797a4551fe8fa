use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Quant;
use crate::error::{Error, Result};

/// GPU platform description used by roofline estimates and memory pruning.
///
/// Rates are in bytes/s and FLOP/s; `gpu_memory` in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSpec {
    pub name: String,
    pub gpu_memory: f64,
    pub mem_bandwidth: f64,
    pub compute_throughput: BTreeMap<Quant, f64>,
    /// Per-link bandwidth inside a node.
    pub intra_node_bandwidth: f64,
    pub inter_node_bandwidth: f64,
    pub gpus_per_node: u32,
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gpu_memory", self.gpu_memory),
            ("mem_bandwidth", self.mem_bandwidth),
            ("intra_node_bandwidth", self.intra_node_bandwidth),
            ("inter_node_bandwidth", self.inter_node_bandwidth),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Document(format!(
                    "hardware {}: {name} must be positive, got {v}",
                    self.name
                )));
            }
        }
        if self.gpus_per_node == 0 {
            return Err(Error::Document(format!(
                "hardware {}: gpus_per_node must be >= 1",
                self.name
            )));
        }
        if self.compute_throughput.is_empty() {
            return Err(Error::Document(format!(
                "hardware {}: compute_throughput is empty",
                self.name
            )));
        }
        if let Some((q, v)) = self
            .compute_throughput
            .iter()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Document(format!(
                "hardware {}: compute_throughput[{q}] must be positive, got {v}",
                self.name
            )));
        }
        Ok(())
    }

    pub fn compute_rate(&self, quant: Quant) -> Option<f64> {
        self.compute_throughput.get(&quant).copied()
    }

    /// Link bandwidth for a collective spanning `participants` GPUs.
    pub fn link_bandwidth(&self, participants: u64) -> f64 {
        if participants > u64::from(self.gpus_per_node) {
            self.inter_node_bandwidth
        } else {
            self.intra_node_bandwidth
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let hw: HardwareSpec = serde_json::from_str(text).map_err(|e| Error::Document(format!("hardware: {e}")))?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
pub(crate) fn test_hardware() -> HardwareSpec {
    HardwareSpec {
        name: "test-gpu".into(),
        gpu_memory: 80e9,
        mem_bandwidth: 3.35e12,
        compute_throughput: [
            (Quant::Fp16, 989e12),
            (Quant::Fp8, 1979e12),
            (Quant::Int8, 1979e12),
            (Quant::Int4, 1979e12),
        ]
        .into_iter()
        .collect(),
        intra_node_bandwidth: 450e9,
        inter_node_bandwidth: 50e9,
        gpus_per_node: 8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_rates() {
        let mut hw = test_hardware();
        hw.mem_bandwidth = 0.0;
        assert!(hw.validate().is_err());
        let mut hw = test_hardware();
        hw.compute_throughput.clear();
        assert!(hw.validate().is_err());
        let mut hw = test_hardware();
        hw.gpus_per_node = 0;
        assert!(hw.validate().is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v = serde_json::to_value(test_hardware()).unwrap();
        v["tdp_watts"] = 700.into();
        assert!(HardwareSpec::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn inter_node_path_beyond_one_node() {
        let hw = test_hardware();
        assert_eq!(hw.link_bandwidth(8), hw.intra_node_bandwidth);
        assert_eq!(hw.link_bandwidth(16), hw.inter_node_bandwidth);
    }
}
