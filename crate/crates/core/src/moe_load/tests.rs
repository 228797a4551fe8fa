use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{decompose, moe_model, OpRole, StepShape};
use crate::testutil::synth_db;

fn params(alpha: f64, seed: u64) -> PowerLawParams {
    PowerLawParams {
        alpha,
        seed,
        ..PowerLawParams::default()
    }
}

#[test]
fn alpha_zero_is_uniform_on_interval() {
    let p = params(0.0, 42);
    let w = sample_weights(1000, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for x in &w {
        let u: f64 = rng.random();
        let want = (100.0 - 1.0) * u + 1.0;
        assert!((x - want).abs() <= 1e-12 * want, "{x} vs {want}");
    }
}

#[test]
fn alpha_zero_passes_ks_uniformity() {
    let mut w = sample_weights(10_000, &params(0.0, 7)).unwrap();
    w.sort_by(f64::total_cmp);
    let n = w.len() as f64;
    let d = w
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - 1.0) / 99.0;
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // critical value at p = 0.01
    assert!(d < 1.628 / n.sqrt(), "D = {d}");
}

#[test]
fn draws_stay_in_bounds_and_repeat_per_seed() {
    let p = PowerLawParams::default();
    let w = sample_weights(10_000, &p).unwrap();
    assert!(w.iter().all(|x| (1.0..=100.0).contains(x)));
    assert_eq!(w, sample_weights(10_000, &p).unwrap());
    assert_ne!(w, sample_weights(10_000, &params(1.2, 1)).unwrap());
}

#[test]
fn alpha_one_and_bad_bounds_rejected() {
    assert!(sample_weights(4, &params(1.0, 0)).is_err());
    assert!(sample_weights(4, &params(2.5, 0)).is_err());
    let bad = PowerLawParams {
        x_min: 5.0,
        x_max: 5.0,
        ..PowerLawParams::default()
    };
    assert!(sample_weights(4, &bad).is_err());
    assert!(sample_weights(0, &PowerLawParams::default()).is_err());
}

#[test]
fn equal_weights_split_evenly() {
    let p = tokens_per_expert(&[2.5; 8], 64, 2).unwrap();
    assert_eq!(p.tokens_per_expert, vec![16; 8]);
}

#[test]
fn three_to_one() {
    let p = tokens_per_expert(&[3.0, 1.0], 4, 1).unwrap();
    assert_eq!(p.tokens_per_expert, vec![3, 1]);
}

#[test]
fn largest_remainder_breaks_ties_low_index() {
    // shares 10/3 each: floor 3,3,3 and one leftover token
    let p = tokens_per_expert(&[1.0, 1.0, 1.0], 10, 1).unwrap();
    assert_eq!(p.tokens_per_expert, vec![4, 3, 3]);
}

#[test]
fn hot_expert_capped_at_token_count() {
    let p = tokens_per_expert(&[100.0, 1.0, 1.0, 1.0], 4, 2).unwrap();
    assert_eq!(p.tokens_per_expert[0], 4);
    assert_eq!(p.tokens_per_expert.iter().sum::<u64>(), 8);
}

#[test]
fn assignment_small_cases() {
    let p = ExpertLoadProfile {
        tokens_per_expert: vec![2, 2],
        total_tokens: 4,
        topk: 1,
    };
    let m = build_assignment(&p, 0).unwrap();
    assert_eq!(m.row_sums(), vec![1; 4]);
    assert_eq!(m.col_sums(), vec![2, 2]);

    let all = ExpertLoadProfile {
        tokens_per_expert: vec![5; 3],
        total_tokens: 5,
        topk: 3,
    };
    let m = build_assignment(&all, 9).unwrap();
    assert!((0..5).all(|t| (0..3).all(|e| m.get(t, e))));
}

#[test]
fn infeasible_margins_reported() {
    let too_hot = ExpertLoadProfile {
        tokens_per_expert: vec![5, 1],
        total_tokens: 3,
        topk: 2,
    };
    assert!(build_assignment(&too_hot, 0).is_err());
    let bad_sum = ExpertLoadProfile {
        tokens_per_expert: vec![1, 1],
        total_tokens: 3,
        topk: 1,
    };
    assert!(build_assignment(&bad_sum, 0).is_err());
}

#[test]
fn assignment_is_seed_deterministic() {
    let p = tokens_per_expert(&sample_weights(16, &PowerLawParams::default()).unwrap(), 40, 4).unwrap();
    assert_eq!(build_assignment(&p, 3).unwrap(), build_assignment(&p, 3).unwrap());
}

#[test]
fn skew_raises_top_expert_share() {
    let mean_top = |alpha: f64| {
        (0..100)
            .map(|seed| {
                let w = sample_weights(8, &params(alpha, seed)).unwrap();
                tokens_per_expert(&w, 4096, 1).unwrap().top_share()
            })
            .sum::<f64>()
            / 100.0
    };
    let (skewed, flat) = (mean_top(1.2), mean_top(0.0));
    assert!(skewed > flat, "{skewed} <= {flat}");
}

#[test]
fn csv_export() {
    let p = tokens_per_expert(&[3.0, 1.0], 4, 1).unwrap();
    assert_eq!(p.to_csv(), "expert,tokens,share\n0,3,0.75\n1,1,0.25\n");
}

#[test]
fn uniform_single_rank_matches_balanced_plan() {
    let m = moe_model();
    let cfg = crate::model::ParallelConfig::new(2, 1, 1, 1, 32);
    let db = synth_db(&m, std::slice::from_ref(&cfg), 1);
    let plan = decompose(&m, &cfg, StepShape::decode(32, 1000)).unwrap();
    let op = plan
        .ops
        .iter()
        .find(|o| matches!(o.role, OpRole::MoeExperts { .. }))
        .unwrap();
    let balanced = db.query_latency(&op.query).unwrap();
    let profile = ExpertLoadProfile::uniform(64, 32, 8).unwrap();
    let lat = imbalanced_moe_latency(&db, &m, &cfg, &profile).unwrap();
    assert_eq!(lat.expert_gemm_us, balanced);
    assert_eq!((lat.dispatch_us, lat.combine_us), (0.0, 0.0));
}

#[test]
fn hottest_rank_sets_latency() {
    let m = moe_model();
    let cfg = crate::model::ParallelConfig::new(8, 1, 8, 1, 16);
    let db = synth_db(&m, std::slice::from_ref(&cfg), 2);
    let mut counts = vec![0u64; 64];
    counts[..8].fill(16); // every token lands on rank 0's experts
    let hot = ExpertLoadProfile {
        tokens_per_expert: counts,
        total_tokens: 16,
        topk: 8,
    };
    let lat = imbalanced_moe_latency(&db, &m, &cfg, &hot).unwrap();
    let rank0 = db.query_latency(&moe_gemm_query(&m, &cfg, 128)).unwrap();
    assert_eq!(lat.expert_gemm_us, rank0);
    assert!(lat.dispatch_us > 0.0 && lat.combine_us > 0.0);
}

#[test]
fn skewed_never_faster_than_uniform() {
    let m = moe_model();
    let cfg = crate::model::ParallelConfig::new(4, 1, 4, 1, 64);
    let db = synth_db(&m, std::slice::from_ref(&cfg), 3);
    for seed in 0..20 {
        for tokens in [1u64, 7, 64, 500, 512] {
            let w = sample_weights(64, &params(1.2, seed)).unwrap();
            let skewed = tokens_per_expert(&w, tokens, 8).unwrap();
            let s = imbalanced_moe_latency(&db, &m, &cfg, &skewed).unwrap();
            // perfectly balanced ranks
            let balanced = db
                .query_latency(&moe_gemm_query(&m, &cfg, (tokens * 8).div_ceil(4)))
                .unwrap();
            assert!(s.expert_gemm_us >= balanced, "seed {seed} tokens {tokens}");
            if tokens % 8 == 0 {
                let flat = ExpertLoadProfile::uniform(64, tokens, 8).unwrap();
                let f = imbalanced_moe_latency(&db, &m, &cfg, &flat).unwrap();
                assert_eq!(f.expert_gemm_us, balanced);
                assert!(s.expert_gemm_us >= f.expert_gemm_us);
            }
        }
    }
}

proptest! {
    #[test]
    fn counts_conserve_tokens(
        e in 1usize..64,
        alpha in prop::sample::select(vec![0.0, 0.5, 1.01, 1.2, 1.5, 2.0]),
        t in 1u64..5000,
        k_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let k = 1 + ((e - 1) as f64 * k_frac) as u64;
        let w = sample_weights(e, &params(alpha, seed)).unwrap();
        let p = tokens_per_expert(&w, t, k).unwrap();
        prop_assert_eq!(p.tokens_per_expert.iter().sum::<u64>(), t * k);
        prop_assert!(p.tokens_per_expert.iter().all(|n| *n <= t));
    }

    #[test]
    fn assignment_margins_exact(
        e in 1usize..24,
        t in 1u64..200,
        k_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let k = 1 + ((e - 1) as f64 * k_frac) as u64;
        let w = sample_weights(e, &params(1.2, seed)).unwrap();
        let p = tokens_per_expert(&w, t, k).unwrap();
        let m = build_assignment(&p, seed).unwrap();
        prop_assert_eq!(m.row_sums(), vec![k; t as usize]);
        prop_assert_eq!(m.col_sums(), p.tokens_per_expert);
    }
}
