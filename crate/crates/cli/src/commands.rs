use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde_yaml::{Mapping, Value};

use llmconf_core::estimator::InferenceSession;
use llmconf_core::generator::{emit_launch, BackendRegistry};
use llmconf_core::model::{ModelSpec, ParallelConfig, Phase};
use llmconf_core::moe_load::{sample_weights, tokens_per_expert, PowerLawParams};
use llmconf_core::perfdb::{load_db, DbContents, HardwareSpec};
use llmconf_core::search::{
    covering_db, frontier_csv, run_search, CandidateSpace, SearchInputs, SearchOptions, SearchReport, SpaceOverrides,
};
use llmconf_core::serving_modes::{
    decode_worker, estimate_aggregated, estimate_disaggregated, estimate_static, prefill_worker, Mode, WorkloadSpec,
};
use llmconf_service::{Catalog, ServiceConfig};

use crate::args::*;
use crate::{overrides, UsageError};

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn read_yaml(path: Option<&Path>) -> Result<Value> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let v: Value = serde_yaml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok(if v.is_null() { Value::Mapping(Mapping::new()) } else { v })
        }
        None => Ok(Value::Mapping(Mapping::new())),
    }
}

fn load_workload(path: &Path, sets: &[String]) -> Result<WorkloadSpec> {
    let mut doc = read_yaml(Some(path))?;
    overrides::apply(&mut doc, sets)?;
    let text = serde_yaml::to_string(&doc)?;
    WorkloadSpec::from_yaml(&text).with_context(|| format!("workload {}", path.display()))
}

fn load_space(path: Option<&Path>, sets: &[String], w: &WorkloadSpec) -> Result<CandidateSpace> {
    let mut doc = read_yaml(path)?;
    overrides::apply(&mut doc, sets)?;
    let o: SpaceOverrides = serde_yaml::from_value(doc).context("candidate space")?;
    Ok(o.apply(CandidateSpace::for_workload(w)))
}

fn load_model(path: &Path) -> Result<ModelSpec> {
    ModelSpec::load(path).with_context(|| format!("model {}", path.display()))
}

/// Parses `tp=2,dp=2,batch=32`; unset degrees are 1 and batch defaults to 1.
fn parse_layout(spec: &str, w: Option<&WorkloadSpec>) -> Result<ParallelConfig> {
    let mut c = ParallelConfig::new(1, 1, 1, 1, 1);
    if let Some(w) = w {
        c.ctx_capacity = w.ctx_capacity();
    }
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| UsageError(format!("layout entry {part:?} is not KEY=VALUE")))?;
        let int = || {
            v.parse::<u64>()
                .map_err(|_| UsageError(format!("{k}: {v:?} is not an integer")))
        };
        let flag = || {
            v.parse::<bool>()
                .map_err(|_| UsageError(format!("{k}: {v:?} is not true/false")))
        };
        match k {
            "tp" => c.tp = int()?,
            "pp" => c.pp = int()?,
            "ep" => c.ep = int()?,
            "dp" => c.dp = int()?,
            "batch" => c.batch = int()?,
            "ctx" => c.ctx_capacity = int()?,
            "chunked" => c.chunked_prefill = flag()?,
            "cuda_graph" => c.cuda_graph = flag()?,
            "kv_fraction" => {
                c.kv_mem_fraction = v
                    .parse()
                    .map_err(|_| UsageError(format!("kv_fraction: {v:?} is not a number")))?
            }
            _ => return Err(UsageError(format!("unknown layout key {k:?}")).into()),
        }
    }
    Ok(c)
}

pub fn dbgen(a: DbgenArgs) -> Result<()> {
    let hw = HardwareSpec::load(&a.hardware)?;
    let models = a.models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let base = WorkloadSpec::new(1, 1, 1.0);
    let mut space = load_space(a.space.as_deref(), &[], &base)?;
    space.backend = a.backend;
    let db = covering_db(&models, &space, &hw, &a.backend_version, a.seed)?;
    db.save(&a.out)?;
    eprintln!(
        "wrote {} records in {} grids to {}",
        db.records().len(),
        db.grid_count(),
        a.out.display()
    );
    Ok(())
}

pub fn dbcheck(a: DbcheckArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.db).with_context(|| format!("reading {}", a.db.display()))?;
    let contents = DbContents::parse(&text)?;
    let required = match &a.model {
        Some(p) => {
            let m = load_model(p)?;
            let w = match &a.workload {
                Some(wp) => load_workload(wp, &[])?,
                None => WorkloadSpec::new(1, 1, 1.0),
            };
            let mut space = CandidateSpace::for_workload(&w);
            space.backend = contents.header.backend.clone();
            space.required_queries(&m)?
        }
        None => Vec::new(),
    };
    let report = contents.validate(&required);
    let mut out = String::new();
    for f in &report.violations {
        out.push_str(&format!("line {}: {}\n", f.line, f.message));
    }
    for g in &report.gaps {
        out.push_str(&format!("missing grid: {g}\n"));
    }
    if report.is_empty() {
        out.push_str(&format!("ok: {} records\n", contents.records.len()));
    }
    write_output(None, &out)?;
    if !report.is_empty() {
        bail!(
            "{} violations and {} missing grids in {}",
            report.violations.len(),
            report.gaps.len(),
            a.db.display()
        );
    }
    Ok(())
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    match a.step {
        Some(StepCommand::Step(s)) => estimate_step(s),
        None => estimate_run(a.run),
    }
}

fn estimate_run(r: EstimateRun) -> Result<()> {
    let (Some(db), Some(model), Some(workload), Some(mode)) = (&r.db, &r.model, &r.workload, r.mode) else {
        return Err(UsageError("estimate needs --db, --model, --workload and --mode".into()).into());
    };
    let db = load_db(db)?;
    let model = load_model(model)?;
    let w = load_workload(workload, &r.sets)?;
    let mode = Mode::from(mode);
    let est = match mode {
        Mode::Static | Mode::Aggregated => {
            let spec = r
                .config
                .as_deref()
                .ok_or_else(|| UsageError(format!("{mode} mode needs --config")))?;
            let cfg = parse_layout(spec, Some(&w))?;
            let s = InferenceSession::new(&db, &model, &cfg, &w.moe_load)?;
            if mode == Mode::Static {
                estimate_static(&s, &w)?
            } else {
                estimate_aggregated(&s, &w)?
            }
        }
        Mode::Disaggregated => {
            let (Some(p), Some(d)) = (r.prefill.as_deref(), r.decode.as_deref()) else {
                return Err(UsageError("disaggregated mode needs --prefill and --decode".into()).into());
            };
            let pc = parse_layout(p, Some(&w))?;
            let dc = parse_layout(d, Some(&w))?;
            let pre = prefill_worker(&InferenceSession::new(&db, &model, &pc, &w.moe_load)?, &w)?;
            let dec = decode_worker(&InferenceSession::new(&db, &model, &dc, &w.moe_load)?, &w)?;
            estimate_disaggregated(&[pre], &[dec], &w)?.estimate()
        }
    };
    let mut text = serde_json::to_string_pretty(&est)?;
    text.push('\n');
    write_output(None, &text)
}

fn estimate_step(s: StepArgs) -> Result<()> {
    let db = load_db(&s.db)?;
    let model = load_model(&s.model)?;
    let cfg = parse_layout(&s.config, None)?;
    let sess = InferenceSession::new(&db, &model, &cfg, &PowerLawParams::default())?;
    let phase = match s.phase {
        PhaseArg::Prefill => Phase::Prefill,
        PhaseArg::Decode => Phase::Decode,
    };
    let step = sess.get_step_latency(s.batch, s.seq, phase)?;
    let mut out = format!("{:<16} {:>12} {:>7}\n", "operator", "ms", "share");
    for (kind, ms) in &step.breakdown {
        out.push_str(&format!(
            "{:<16} {:>12.4} {:>6.1}%\n",
            kind.as_str(),
            ms,
            100.0 * ms / step.total
        ));
    }
    out.push_str(&format!("{:<16} {:>12.4}\n", "total", step.total));
    write_output(None, &out)
}

pub fn search(a: SearchArgs) -> Result<()> {
    let (wsets, ssets) = overrides::partition(&a.inputs.sets);
    let db = load_db(&a.inputs.db)?;
    let model = load_model(&a.inputs.model)?;
    let w = load_workload(&a.inputs.workload, &wsets)?;
    let space = load_space(a.space.as_deref(), &ssets, &w)?;
    if a.jobs == Some(0) {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    let opts = SearchOptions {
        jobs: a.jobs,
        max_candidates: a.max_candidates,
        omit_timing: a.omit_timing,
    };
    let inputs = SearchInputs {
        db: &db,
        model: &model,
        workload: &w,
        space: &space,
    };
    let report = run_search(inputs, &opts)?;
    write_output(a.out.as_deref(), &report.to_json())?;
    if let Some(p) = &a.csv {
        write_output(Some(p), &frontier_csv(&report.frontier))?;
    }
    eprintln!(
        "{} candidates, {} workers, {} skipped; frontier {} points, {} meet the SLA",
        report.candidates,
        report.workers,
        report.skipped.len(),
        report.frontier.len(),
        report.best.len()
    );
    if let Some(t) = &report.timing {
        eprintln!(
            "search took {:.1} ms; median {:.3} ms per candidate over {} evaluations",
            t.total_ms, t.per_candidate_median_ms, t.evaluations
        );
    }
    match (report.best.first(), &report.nearest_miss) {
        (Some(b), _) => {
            eprintln!(
                "best: {} ({}) {:.1} tokens/s/GPU at {:.1} tokens/s/user",
                b.label,
                b.estimate.mode,
                b.throughput(),
                b.speed()
            );
            Ok(())
        }
        (None, Some(m)) => bail!(
            "no configuration meets the SLA; nearest miss {} ({}) with TTFT {:.1} ms over and speed {:.2} tokens/s/user short",
            m.point.label,
            m.point.estimate.mode,
            m.ttft_excess,
            m.speed_deficit
        ),
        (None, None) => bail!("no configuration could be evaluated"),
    }
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report = SearchReport::from_json(&text)?;
    let list = match a.pick {
        Pick::Best => &report.best,
        Pick::Frontier => &report.frontier,
    };
    let entry = list
        .get(a.index)
        .with_context(|| format!("report has {} {:?} entries, no index {}", list.len(), a.pick, a.index))?;
    let mut registry = BackendRegistry::builtin();
    if let Some(dir) = &a.backends_dir {
        registry.load_dir(dir)?;
    }
    let profile = registry.get(&a.backend, a.version.as_deref())?;
    let plan = emit_launch(entry, &report.model, profile)?;
    write_output(a.out.as_deref(), &plan.to_yaml())?;
    eprintln!(
        "{} on {} {}: {}",
        entry.label,
        profile.backend,
        profile.version,
        plan.gpus()
    );
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig::load(&a.config)?;
    let catalog = Catalog::from_config(&cfg)?;
    tracing::info!(
        databases = catalog.databases.len(),
        models = catalog.models.len(),
        "catalog loaded"
    );
    let addr = SocketAddr::new(a.bind, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(llmconf_service::serve(Arc::new(catalog), addr))
        .with_context(|| format!("serving on {addr}"))
}

pub fn export(a: ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report = SearchReport::from_json(&text)?;
    let points = match a.series {
        None => &report.frontier,
        Some(m) => {
            let mode = Mode::from(m);
            report
                .series
                .get(&mode)
                .with_context(|| format!("report has no {mode} series"))?
        }
    };
    write_output(a.out.as_deref(), &frontier_csv(points))
}

pub fn moe_load(a: MoeLoadArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let Some(moe) = &model.moe else {
        bail!("{} is not a mixture-of-experts model", model.name);
    };
    let mut doc = read_yaml(a.workload.as_deref())?;
    overrides::apply(&mut doc, &a.sets)?;
    let params: PowerLawParams = match doc.get("moe_load") {
        Some(v) => serde_yaml::from_value(v.clone()).context("moe_load")?,
        None => PowerLawParams::default(),
    };
    let weights = sample_weights(moe.num_experts as usize, &params)?;
    let profile = tokens_per_expert(&weights, a.tokens, moe.topk)?;
    write_output(None, &profile.to_csv())
}
