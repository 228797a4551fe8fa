//! Hand-built frontier points behind the golden launch files.

use llmconf_core::model::ParallelConfig;
use llmconf_core::search::{Deployment, ParetoPoint};
use llmconf_core::serving_modes::{agg_schedule, Breakdown, DisaggPlan, Mode, PerfEstimate};

pub fn aggregated() -> ParetoPoint {
    let mut c = ParallelConfig::new(2, 1, 1, 1, 32);
    c.ctx_capacity = 4000;
    let e = PerfEstimate {
        mode: Mode::Aggregated,
        ttft: 523.75,
        tpot: 18.5,
        speed: Some(1000.0 / 18.5),
        throughput_per_gpu: 812.25,
        batch: 32,
        gpus: 2,
        breakdown: Breakdown::Aggregated {
            schedule: agg_schedule(4000, 500, 32, 4000).unwrap(),
            mix_step_ms: 61.0,
            gen_step_ms: 15.5,
            f_corr: 3.0,
        },
    };
    let d = Deployment::Single(c);
    ParetoPoint {
        label: d.label(),
        estimate: e,
        deployment: d,
        sla_ok: true,
    }
}

pub fn disaggregated() -> ParetoPoint {
    let mut pre = ParallelConfig::new(1, 1, 1, 1, 1);
    pre.ctx_capacity = 4000;
    let mut dec = ParallelConfig::new(2, 1, 1, 1, 64);
    dec.ctx_capacity = 4000;
    let plan = DisaggPlan {
        prefill_cfg: pre,
        decode_cfg: dec,
        x: 4,
        y: 2,
        r_pre: 12.5,
        r_dec: 11.0,
        r_sys: 11.0,
        gpus: 8,
        ttft: 342.0,
        tpot: 24.0,
        throughput_per_gpu: 687.5,
    };
    let e = plan.estimate();
    let d = Deployment::Disaggregated(plan);
    ParetoPoint {
        label: d.label(),
        estimate: e,
        deployment: d,
        sla_ok: true,
    }
}
