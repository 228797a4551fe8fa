use crate::model::{required_queries, ModelSpec, ParallelConfig};
use crate::perfdb::{generate_synthetic_db, test_hardware, GridSpec, PerfDatabase};

/// Smooth synthetic database covering every grid `model` needs under `cfgs`.
pub(crate) fn synth_db(model: &ModelSpec, cfgs: &[ParallelConfig], seed: u64) -> PerfDatabase {
    let queries = required_queries(model, cfgs).unwrap();
    let spec = GridSpec::covering("trtllm", "1.0.0", &queries);
    generate_synthetic_db(&test_hardware(), &spec, seed).unwrap()
}

/// Same grids as [`synth_db`] with every latency set to `us`.
pub(crate) fn constant_db(model: &ModelSpec, cfgs: &[ParallelConfig], us: f64) -> PerfDatabase {
    let mut contents = synth_db(model, cfgs, 0).contents();
    for r in &mut contents.records {
        r.latency_us = us;
    }
    PerfDatabase::new(contents).unwrap()
}
