use proptest::prelude::*;

use super::*;

fn header() -> DbHeader {
    DbHeader::new(test_hardware(), "trtllm", "1.0.0")
}

fn gemm_record(m: u64, n: u64, k: u64, latency_us: f64) -> OperatorRecord {
    OperatorRecord {
        query: OperatorQuery::gemm(m, n, k, Quant::Fp8),
        latency_us,
        provenance: Provenance::Measured,
    }
}

fn db_from(records: Vec<OperatorRecord>) -> Result<PerfDatabase> {
    PerfDatabase::new(DbContents {
        header: header(),
        records,
    })
}

#[test]
fn three_record_file_round_trips() {
    let db = db_from(vec![
        gemm_record(16, 8192, 8192, 100.0),
        gemm_record(64, 8192, 8192, 400.0),
        gemm_record(256, 8192, 8192, 1500.5),
    ])
    .unwrap();
    let text = db.to_jsonl();
    assert_eq!(text.lines().count(), 4);
    let back = PerfDatabase::from_jsonl(&text).unwrap();
    assert_eq!(back.records().len(), 3);
    assert_eq!(back.records(), db.records());
    assert_eq!(back.to_jsonl(), text);
}

#[test]
fn record_line_format() {
    let db = db_from(vec![gemm_record(64, 8192, 8192, 412.5)]).unwrap();
    let text = db.to_jsonl();
    let line = text.lines().nth(1).unwrap();
    assert_eq!(
        line,
        r#"{"kind":"gemm","quant":"fp8","shape":{"m":64,"n":8192,"k":8192},"latency_us":412.5,"provenance":"measured"}"#
    );
    assert!(text.starts_with(r#"{"schema":"llmconf-perfdb/1","hardware":{"#));
}

#[test]
fn zero_latency_names_the_record() {
    let err = db_from(vec![gemm_record(16, 8, 8, 1.0), gemm_record(32, 8, 8, 0.0)]).unwrap_err();
    match err {
        Error::Validation { line, message } => {
            assert_eq!(line, 3);
            assert!(message.contains("latency_us"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn duplicate_coordinate_rejected() {
    let err = db_from(vec![gemm_record(16, 8, 8, 1.0), gemm_record(16, 8, 8, 2.0)]).unwrap_err();
    assert!(
        matches!(&err, Error::Validation { line: 3, message } if message.contains("duplicate")),
        "{err}"
    );
}

#[test]
fn non_rectangular_grid_rejected() {
    let q = |b, s| OperatorRecord {
        query: OperatorQuery::attention(
            OperatorKind::AttentionContext,
            AttnKind::Gqa,
            Quant::Fp16,
            b,
            s,
            32,
            8,
            128,
        ),
        latency_us: 10.0,
        provenance: Provenance::Measured,
    };
    let err = db_from(vec![q(1, 16), q(1, 32), q(2, 16)]).unwrap_err();
    assert!(err.to_string().contains("not rectangular"), "{err}");
}

#[test]
fn parse_errors_carry_line_numbers() {
    let good = db_from(vec![gemm_record(16, 8, 8, 1.0)]).unwrap().to_jsonl();
    let bad_kind = good.replace("\"gemm\"", "\"conv2d\"");
    match PerfDatabase::from_jsonl(&bad_kind).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
    let unknown_field = good.replace("\"provenance\"", "\"note\":1,\"provenance\"");
    assert!(matches!(
        PerfDatabase::from_jsonl(&unknown_field),
        Err(Error::Parse { line: 2, .. })
    ));
    let bad_quant = good.replace("\"quant\":\"fp8\"", "\"quant\":\"bf16\"");
    assert!(matches!(
        PerfDatabase::from_jsonl(&bad_quant),
        Err(Error::Parse { line: 2, .. })
    ));
    assert!(matches!(
        PerfDatabase::from_jsonl("not json\n"),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn grid_point_is_exact() {
    let db = db_from(vec![gemm_record(16, 64, 64, 120.0), gemm_record(64, 64, 64, 480.0)]).unwrap();
    assert_eq!(
        db.query_latency(&OperatorQuery::gemm(16, 64, 64, Quant::Fp8)).unwrap(),
        120.0
    );
}

#[test]
fn log_log_interpolation_between_points() {
    let db = db_from(vec![gemm_record(16, 64, 64, 100.0), gemm_record(64, 64, 64, 400.0)]).unwrap();
    let v = db.query_latency(&OperatorQuery::gemm(32, 64, 64, Quant::Fp8)).unwrap();
    assert!((v - 200.0).abs() < 1e-9, "{v}");
}

#[test]
fn missing_key_reported() {
    let db = db_from(vec![gemm_record(16, 64, 64, 100.0)]).unwrap();
    let err = db
        .query_latency(&OperatorQuery::gemm(16, 128, 64, Quant::Fp8))
        .unwrap_err();
    assert!(matches!(
        err,
        Error::MissingKey {
            kind: OperatorKind::Gemm,
            ..
        }
    ));
    let err = db
        .query_latency(&OperatorQuery::gemm(16, 64, 64, Quant::Fp16))
        .unwrap_err();
    assert!(matches!(err, Error::MissingKey { .. }));
}

#[test]
fn extrapolation_policies() {
    let db = db_from(vec![gemm_record(16, 64, 64, 100.0), gemm_record(64, 64, 64, 400.0)]).unwrap();
    let below = OperatorQuery::gemm(4, 64, 64, Quant::Fp8);
    let above = OperatorQuery::gemm(4096, 64, 64, Quant::Fp8);

    // defaults: clamp below, sol above
    assert_eq!(db.query_latency(&below).unwrap(), 100.0);
    let hw = test_hardware();
    let edge = OperatorQuery::gemm(64, 64, 64, Quant::Fp8);
    let expected = sol_estimate(&above, &hw).unwrap() * (400.0 / sol_estimate(&edge, &hw).unwrap());
    assert_eq!(db.query_latency(&above).unwrap(), expected);

    let strict = db
        .clone()
        .with_policy(ExtrapolationPolicy::uniform(Extrapolation::Strict));
    assert!(matches!(
        strict.query_latency(&below),
        Err(Error::OutOfBounds {
            value: 4,
            lo: 16,
            hi: 64,
            ..
        })
    ));
    assert!(strict.query_latency(&above).is_err());
    assert_eq!(
        strict
            .query_latency(&OperatorQuery::gemm(32, 64, 64, Quant::Fp8))
            .unwrap(),
        db.query_latency(&OperatorQuery::gemm(32, 64, 64, Quant::Fp8)).unwrap()
    );

    let clamp = db.with_policy(ExtrapolationPolicy::uniform(Extrapolation::Clamp));
    assert_eq!(clamp.query_latency(&above).unwrap(), 400.0);
}

#[test]
fn sol_extrapolation_mixed_axes() {
    // Attention grid over batch x seq; query below on batch, above on seq.
    let hw = test_hardware();
    let q = |b, s| {
        OperatorQuery::attention(
            OperatorKind::AttentionGeneration,
            AttnKind::Gqa,
            Quant::Fp16,
            b,
            s,
            8,
            2,
            128,
        )
    };
    let mut records = Vec::new();
    for b in [2, 4] {
        for s in [128, 256] {
            records.push(OperatorRecord {
                query: q(b, s),
                latency_us: sol_estimate(&q(b, s), &hw).unwrap() * 1.5,
                provenance: Provenance::Synthetic,
            });
        }
    }
    let db = db_from(records).unwrap();
    let got = db.query_latency(&q(1, 1024)).unwrap();
    // batch clamped to 2, seq scaled by roofline at constant efficiency 1.5
    let want = sol_estimate(&q(2, 1024), &hw).unwrap() * 1.5;
    assert!((got / want - 1.0).abs() < 1e-12, "{got} vs {want}");
}

fn synth_spec() -> GridSpec {
    let gemm = OperatorQuery::gemm(1, 4096, 4096, Quant::Fp8);
    let attn_ctx = OperatorQuery::attention(
        OperatorKind::AttentionContext,
        AttnKind::Gqa,
        Quant::Fp16,
        1,
        16,
        32,
        8,
        128,
    );
    let attn_gen = OperatorQuery {
        kind: OperatorKind::AttentionGeneration,
        ..attn_ctx.clone()
    };
    let ar = OperatorQuery::comm(OperatorKind::Allreduce, 1024, 4);
    let moe = OperatorQuery::new(
        OperatorKind::MoeGemm,
        Quant::Fp8,
        None,
        [
            (Dim::Tokens, 1),
            (Dim::Experts, 16),
            (Dim::Topk, 2),
            (Dim::Hidden, 2048),
            (Dim::Intermediate, 768),
        ],
    );
    let emb = OperatorQuery::embedding(1, 4096, Quant::Fp16);
    GridSpec::covering("trtllm", "1.0.0", [&gemm, &attn_ctx, &attn_gen, &ar, &moe, &emb])
}

#[test]
fn synthetic_db_is_deterministic() {
    let hw = test_hardware();
    let a = generate_synthetic_db(&hw, &synth_spec(), 7).unwrap().to_jsonl();
    let b = generate_synthetic_db(&hw, &synth_spec(), 7).unwrap().to_jsonl();
    assert_eq!(a, b);
    let c = generate_synthetic_db(&hw, &synth_spec(), 8).unwrap().to_jsonl();
    assert_ne!(a, c);
}

#[test]
fn synthetic_latency_dominates_roofline() {
    let hw = test_hardware();
    let db = generate_synthetic_db(&hw, &synth_spec(), 3).unwrap();
    assert!(db.records().iter().all(|r| r.provenance == Provenance::Synthetic));
    for r in db.records() {
        let sol = sol_estimate(&r.query, &hw).unwrap();
        assert!(r.latency_us >= sol, "{:?}", r.query);
        assert!(r.latency_us <= 3.0 * sol * (1.0 + 1e-12));
    }
}

#[test]
fn synthetic_efficiency_is_smooth() {
    let spec = synth_spec();
    for seed in 0..20 {
        for b in &spec.blocks {
            let qs = GridSpec {
                blocks: vec![b.clone()],
                ..spec.clone()
            }
            .queries();
            for axis in b.kind.interp_axes() {
                for q in &qs {
                    let vals = &b.axes[axis];
                    let i = vals.binary_search(&q.dim(*axis)).unwrap();
                    if i + 1 == vals.len() {
                        continue;
                    }
                    let mut next = q.clone();
                    next.shape.insert(*axis, vals[i + 1]);
                    let (e0, e1) = (efficiency(q, seed), efficiency(&next, seed));
                    assert!((1.0..=3.0).contains(&e0));
                    assert!((e1 - e0).abs() / e0 < 0.10, "{e0} -> {e1}");
                }
            }
        }
    }
}

#[test]
fn grid_spec_rejects_unsorted_axes() {
    let mut spec = synth_spec();
    spec.blocks[0].axes.insert(Dim::M, vec![4, 2]);
    assert!(generate_synthetic_db(&test_hardware(), &spec, 0).is_err());
    let mut spec = synth_spec();
    spec.blocks[0].axes.insert(Dim::M, vec![]);
    assert!(spec.validate().is_err());
}

#[test]
fn validation_report() {
    let hw = test_hardware();
    let db = generate_synthetic_db(&hw, &synth_spec(), 1).unwrap();
    let spec = synth_spec();
    let required = spec.queries();
    assert!(validate_db(&db, &required).is_empty());
    assert!(db.contents().validate(&required).is_empty());

    // drop generation attention: a model that decodes needs it
    let mut contents = db.contents();
    contents
        .records
        .retain(|r| r.query.kind != OperatorKind::AttentionGeneration);
    let report = contents.validate(&required);
    assert!(report.violations.is_empty());
    assert_eq!(report.gaps.len(), 1);
    assert!(report.gaps[0].starts_with("attention_generation"), "{:?}", report.gaps);
    let smaller = PerfDatabase::new(contents).unwrap();
    assert_eq!(validate_db(&smaller, &required).gaps.len(), 1);

    let mut contents = db.contents();
    contents.records[5].latency_us = -3.0;
    let report = contents.validate(&required);
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].line, 7);
}

fn random_grid_db(bs: &[u64], ss: &[u64], lat: &[f64]) -> (PerfDatabase, impl Fn(u64, u64) -> OperatorQuery) {
    let q = |b, s| {
        OperatorQuery::attention(
            OperatorKind::AttentionContext,
            AttnKind::Mha,
            Quant::Fp16,
            b,
            s,
            4,
            4,
            64,
        )
    };
    let mut records = Vec::new();
    for (i, b) in bs.iter().enumerate() {
        for (j, s) in ss.iter().enumerate() {
            records.push(OperatorRecord {
                query: q(*b, *s),
                latency_us: lat[i * ss.len() + j],
                provenance: Provenance::Measured,
            });
        }
    }
    (db_from(records).unwrap(), q)
}

fn sorted_axis(max_len: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::btree_set(1u64..5000, 2..max_len).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn interpolation_exact_and_bounded(
        bs in sorted_axis(5),
        ss in sorted_axis(6),
        lat in prop::collection::vec(0.01f64..1e5, 30),
        fb in 0.0f64..1.0,
        fs in 0.0f64..1.0,
    ) {
        let (db, q) = random_grid_db(&bs, &ss, &lat);
        for (i, b) in bs.iter().enumerate() {
            for (j, s) in ss.iter().enumerate() {
                let v = db.query_latency(&q(*b, *s)).unwrap();
                prop_assert_eq!(v.to_bits(), lat[i * ss.len() + j].to_bits());
            }
        }
        // random in-range query; enclosing cell found by linear scan
        let pick = |axis: &[u64], f: f64| axis[0] + ((axis[axis.len() - 1] - axis[0]) as f64 * f) as u64;
        let (b, s) = (pick(&bs, fb), pick(&ss, fs));
        let cell = |axis: &[u64], v: u64| {
            let hi = axis.iter().position(|a| *a >= v).unwrap();
            if axis[hi] == v { (hi, hi) } else { (hi - 1, hi) }
        };
        let (bi, si) = (cell(&bs, b), cell(&ss, s));
        let corners = [
            lat[bi.0 * ss.len() + si.0],
            lat[bi.0 * ss.len() + si.1],
            lat[bi.1 * ss.len() + si.0],
            lat[bi.1 * ss.len() + si.1],
        ];
        let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v = db.query_latency(&q(b, s)).unwrap();
        prop_assert!(v >= lo && v <= hi, "{} not in [{}, {}]", v, lo, hi);
    }

    #[test]
    fn interpolation_monotone_along_axis(
        bs in sorted_axis(4),
        ss in sorted_axis(4),
        lat in prop::collection::vec(0.01f64..1e5, 16),
        row in 0usize..4,
    ) {
        let (db, q) = random_grid_db(&bs, &ss, &lat);
        let b = bs[row.min(bs.len() - 1)];
        for w in ss.windows(2) {
            let (l0, l1) = (db.query_latency(&q(b, w[0])).unwrap(), db.query_latency(&q(b, w[1])).unwrap());
            let mut prev = l0;
            for s in w[0]..=w[1] {
                let v = db.query_latency(&q(b, s)).unwrap();
                if l1 >= l0 { prop_assert!(v >= prev) } else { prop_assert!(v <= prev) }
                prev = v;
            }
        }
    }
}
