//! Launch files for a chosen configuration.
//!
//! Flag spellings live in per-backend profile files so a new engine version
//! is a data addition. Every profile must spell the cuda-graph, kv-cache
//! fraction and chunked-context knobs as [`CUDA_GRAPH_FLAG`],
//! [`KV_FRACTION_FLAG`] and [`CHUNKED_CONTEXT_FLAG`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParallelConfig;
use crate::search::{Deployment, ParetoPoint};
use crate::serving_modes::Mode;

pub const CUDA_GRAPH_FLAG: &str = "--enable_cuda_graph";
pub const KV_FRACTION_FLAG: &str = "--kv_cache_free_gpu_mem_fraction";
pub const CHUNKED_CONTEXT_FLAG: &str = "--enable_chunked_context";

const BUILTIN: [&str; 4] = [
    include_str!("../data/backends/trtllm-1.0.0.yaml"),
    include_str!("../data/backends/vllm-0.11.0.yaml"),
    include_str!("../data/backends/sglang-0.5.3.yaml"),
    include_str!("../data/backends/dynamo-0.5.0.yaml"),
];

/// Flag names for the values derived from a configuration. Optional knobs
/// are left out of the launch file when the engine has no such flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    pub model: String,
    pub tp: String,
    #[serde(default)]
    pub pp: Option<String>,
    #[serde(default)]
    pub ep: Option<String>,
    #[serde(default)]
    pub dp: Option<String>,
    pub max_batch_size: String,
    pub max_num_tokens: String,
    pub cuda_graph: String,
    pub kv_mem_fraction: String,
    pub chunked_context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlagValue {
    Bool(bool),
    Int(u64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    pub backend: String,
    pub version: String,
    pub knobs: Knobs,
    /// Fixed flags added to every pool.
    #[serde(default)]
    pub curated: BTreeMap<String, FlagValue>,
}

impl BackendProfile {
    pub fn from_yaml(text: &str) -> Result<Self> {
        let de = serde_yaml::Deserializer::from_str(text);
        let p: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Document(format!("backend profile {}: {}", e.path(), e.inner())))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.knobs;
        let required = [
            (CUDA_GRAPH_FLAG, &k.cuda_graph),
            (KV_FRACTION_FLAG, &k.kv_mem_fraction),
            (CHUNKED_CONTEXT_FLAG, &k.chunked_context),
        ];
        for (want, got) in required {
            if want != got {
                return Err(Error::Document(format!(
                    "{} {}: flag must be spelled {want}, found {got}",
                    self.backend, self.version
                )));
            }
        }
        let derived: Vec<&String> = [&k.model, &k.tp, &k.max_batch_size, &k.max_num_tokens]
            .into_iter()
            .chain([&k.pp, &k.ep, &k.dp].into_iter().flatten())
            .chain([&k.cuda_graph, &k.kv_mem_fraction, &k.chunked_context])
            .collect();
        if let Some(dup) = self.curated.keys().find(|c| derived.contains(c)) {
            return Err(Error::Document(format!("curated flag {dup} shadows a derived flag")));
        }
        Ok(())
    }

    fn flags(&self, model: &str, cfg: &ParallelConfig) -> BTreeMap<String, FlagValue> {
        let k = &self.knobs;
        let mut f = self.curated.clone();
        f.insert(k.model.clone(), FlagValue::Str(model.into()));
        f.insert(k.tp.clone(), FlagValue::Int(cfg.tp));
        for (knob, v) in [(&k.pp, cfg.pp), (&k.ep, cfg.ep), (&k.dp, cfg.dp)] {
            if let Some(name) = knob {
                f.insert(name.clone(), FlagValue::Int(v));
            }
        }
        f.insert(k.max_batch_size.clone(), FlagValue::Int(cfg.batch));
        f.insert(k.max_num_tokens.clone(), FlagValue::Int(cfg.ctx_capacity));
        f.insert(k.cuda_graph.clone(), FlagValue::Bool(cfg.cuda_graph));
        f.insert(k.kv_mem_fraction.clone(), FlagValue::Float(cfg.kv_mem_fraction));
        f.insert(k.chunked_context.clone(), FlagValue::Bool(cfg.chunked_prefill));
        f
    }
}

fn version_key(v: &str) -> Vec<u64> {
    v.split('.').map(|p| p.parse().unwrap_or(0)).collect()
}

/// Known backend profiles keyed by (backend, version).
#[derive(Debug, Clone, Default)]
pub struct BackendRegistry {
    profiles: BTreeMap<(String, String), BackendProfile>,
}

impl BackendRegistry {
    /// Profiles shipped with the crate.
    pub fn builtin() -> Self {
        let mut r = Self::default();
        for text in BUILTIN {
            r.insert(BackendProfile::from_yaml(text).expect("bundled backend profile is valid"));
        }
        r
    }

    pub fn insert(&mut self, p: BackendProfile) {
        self.profiles.insert((p.backend.clone(), p.version.clone()), p);
    }

    /// Adds every `*.yaml` profile in `dir`, replacing same-named ones.
    pub fn load_dir(&mut self, dir: &Path) -> Result<()> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "yaml" || x == "yml"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            self.insert(BackendProfile::from_yaml(&text)?);
        }
        Ok(())
    }

    /// The named version, or the newest one when `version` is `None`.
    pub fn get(&self, backend: &str, version: Option<&str>) -> Result<&BackendProfile> {
        let found = match version {
            Some(v) => self.profiles.get(&(backend.to_string(), v.to_string())),
            None => self
                .profiles
                .values()
                .filter(|p| p.backend == backend)
                .max_by_key(|p| version_key(&p.version)),
        };
        found.ok_or_else(|| Error::UnknownBackend {
            backend: backend.into(),
            version: version.unwrap_or("(any)").into(),
        })
    }

    pub fn profiles(&self) -> impl Iterator<Item = &BackendProfile> {
        self.profiles.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolRole {
    Aggregated,
    Prefill,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pool {
    pub role: PoolRole,
    pub replicas: u64,
    pub tp: u64,
    pub pp: u64,
    pub ep: u64,
    pub dp: u64,
    pub flags: BTreeMap<String, FlagValue>,
}

impl Pool {
    pub fn gpus(&self) -> u64 {
        self.replicas * self.tp * self.pp * self.dp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicted {
    pub mode: Mode,
    pub ttft_ms: f64,
    pub tpot_ms: f64,
    #[serde(default)]
    pub speed: Option<f64>,
    pub throughput_per_gpu: f64,
    pub gpus: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchPlan {
    pub backend: String,
    pub version: String,
    pub model: String,
    pub predicted: Predicted,
    pub pools: Vec<Pool>,
}

impl LaunchPlan {
    pub fn gpus(&self) -> u64 {
        self.pools.iter().map(Pool::gpus).sum()
    }

    /// YAML document preceded by a comment summarising the prediction.
    pub fn to_yaml(&self) -> String {
        let p = &self.predicted;
        let speed = p.speed.map_or("unbounded".to_string(), |s| format!("{s:.2}"));
        let mut out = format!(
            "# {} launch plan for {} ({} serving)\n# predicted TTFT {:.2} ms, TPOT {:.3} ms, {} tokens/s/user, {:.2} tokens/s/GPU on {} GPUs\n",
            self.backend, self.model, p.mode, p.ttft_ms, p.tpot_ms, speed, p.throughput_per_gpu, p.gpus
        );
        out.push_str(&serde_yaml::to_string(self).expect("launch plan serializes"));
        out
    }

    pub fn from_yaml(text: &str) -> Result<Self> {
        let de = serde_yaml::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Document(format!("launch plan {}: {}", e.path(), e.inner())))
    }
}

fn pool(role: PoolRole, replicas: u64, cfg: &ParallelConfig, model: &str, profile: &BackendProfile) -> Pool {
    Pool {
        role,
        replicas,
        tp: cfg.tp,
        pp: cfg.pp,
        ep: cfg.ep,
        dp: cfg.dp,
        flags: profile.flags(model, cfg),
    }
}

/// Checks that the point's label and GPU count agree with its deployment.
pub fn check_topology(point: &ParetoPoint) -> Result<()> {
    let est = &point.estimate;
    let label = point.deployment.label();
    if point.label != label {
        return Err(Error::Topology(format!(
            "label {:?} does not describe {label:?}",
            point.label
        )));
    }
    let implied = match &point.deployment {
        Deployment::Single(c) => {
            if est.mode == Mode::Disaggregated {
                return Err(Error::Topology(
                    "disaggregated estimate on a single-instance deployment".into(),
                ));
            }
            c.gpus()
        }
        Deployment::Disaggregated(p) => {
            if est.mode != Mode::Disaggregated {
                return Err(Error::Topology(format!(
                    "{} estimate on a disaggregated deployment",
                    est.mode
                )));
            }
            if !(1..=64).contains(&p.y) || !(1..=32).contains(&p.x) {
                return Err(Error::Topology(format!(
                    "worker counts x={} y={} out of range",
                    p.x, p.y
                )));
            }
            let sum = p.x * p.prefill_cfg.gpus() + p.y * p.decode_cfg.gpus();
            if sum != p.gpus {
                return Err(Error::Topology(format!(
                    "pools use {sum} GPUs but the plan claims {}",
                    p.gpus
                )));
            }
            sum
        }
    };
    if implied != est.gpus {
        return Err(Error::Topology(format!(
            "deployment uses {implied} GPUs but the estimate claims {}",
            est.gpus
        )));
    }
    Ok(())
}

/// Builds the launch plan for `point` on `profile`.
pub fn emit_launch(point: &ParetoPoint, model: &str, profile: &BackendProfile) -> Result<LaunchPlan> {
    check_topology(point)?;
    let pools = match &point.deployment {
        Deployment::Single(c) => vec![pool(PoolRole::Aggregated, 1, c, model, profile)],
        Deployment::Disaggregated(p) => vec![
            pool(PoolRole::Prefill, p.x, &p.prefill_cfg, model, profile),
            pool(PoolRole::Decode, p.y, &p.decode_cfg, model, profile),
        ],
    };
    let e = &point.estimate;
    let plan = LaunchPlan {
        backend: profile.backend.clone(),
        version: profile.version.clone(),
        model: model.into(),
        predicted: Predicted {
            mode: e.mode,
            ttft_ms: e.ttft,
            tpot_ms: e.tpot,
            speed: e.speed,
            throughput_per_gpu: e.throughput_per_gpu,
            gpus: e.gpus,
        },
        pools,
    };
    debug_assert_eq!(plan.gpus(), e.gpus);
    Ok(plan)
}
