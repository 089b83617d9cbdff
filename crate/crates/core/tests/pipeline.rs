use aqr_core::bench::{ground_truth, preset, recall_at_k, sweep, SweepAxis};
use aqr_core::dataset::{gen_clustered, gen_clustered_queries};
use aqr_core::density::{build_profile, DensityConfig};
use aqr_core::search::{asymmetric_refine, coarse_search, quantize_query, search_batch, Candidate, Stage};
use aqr_core::{BuildConfig, Dataset, GraphIndex, IdMatrix, IndexMode, SearchConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn build(ds: &Dataset, mode: IndexMode) -> GraphIndex {
    let cfg = BuildConfig {
        mode,
        m0: 12,
        ef0: 100,
        ..Default::default()
    };
    GraphIndex::build(ds.clone(), &cfg).unwrap()
}

fn exhaustive(n: usize, k: usize) -> SearchConfig {
    SearchConfig {
        k,
        n_coarse: n,
        m_ef: 1,
        n_rerank: n,
        early_termination: false,
        ef_search: Some(n),
        ..Default::default()
    }
}

/// Brute force in f64, sorted by (distance, id).
fn brute_force(base: &Dataset, q: &[f32]) -> Vec<(f64, u32)> {
    let mut all: Vec<(f64, u32)> = base
        .rows()
        .enumerate()
        .map(|(i, x)| {
            let d: f64 = x.iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            (d, i as u32)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

#[test]
fn exhaustive_search_equals_brute_force_in_every_mode() {
    let base = gen_clustered(1500, 24, 6, 12.0, 1).unwrap();
    let queries = gen_clustered_queries(30, 24, 6, 12.0, 1).unwrap();
    for mode in [IndexMode::Aqr, IndexMode::ScalarQuant, IndexMode::BaselineFp32] {
        let index = build(&base, mode);
        let results = search_batch(&index, &queries, &exhaustive(1500, 10), 1).unwrap();
        for (q, r) in queries.rows().zip(&results) {
            let want: Vec<u32> = brute_force(&base, q)[..10].iter().map(|p| p.1).collect();
            assert_eq!(r.ids(), want, "{mode}");
            assert!(r.results.iter().all(|c| c.stage == Stage::Exact));
        }
    }
}

#[test]
fn full_beam_coarse_search_equals_quantized_scan() {
    let base = gen_clustered(800, 16, 4, 8.0, 2).unwrap();
    let queries = gen_clustered_queries(20, 16, 4, 8.0, 2).unwrap();
    let index = build(&base, IndexMode::Aqr);
    let params = index.quant_params().unwrap();
    let codes = index.codes().unwrap();
    let config = SearchConfig {
        ef_search: Some(800),
        n_coarse: 40,
        ..Default::default()
    };
    for q in queries.rows() {
        let qhat = quantize_query(&index, q).unwrap();
        let mut scan: Vec<(f64, u32)> = (0..800)
            .map(|i| {
                let s: u64 = codes.row(i).iter().zip(&qhat).map(|(&a, &b)| (a as i64 - b as i64).pow(2) as u64).sum();
                (params.s_dist * s as f64, i as u32)
            })
            .collect();
        scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got = coarse_search(&index, &qhat, &config).unwrap();
        assert_eq!(got.len(), 40);
        for (c, w) in got.iter().zip(&scan) {
            assert_eq!(c.id, w.1);
            assert_eq!(c.distance, w.0);
            assert_eq!(c.stage, Stage::Quantized);
        }
    }
}

#[test]
fn asymmetric_distances_match_an_independent_decode() {
    let base = gen_clustered(3000, 32, 5, 10.0, 3).unwrap();
    let index = build(&base, IndexMode::Aqr);
    let params = index.quant_params().unwrap();
    let codes = index.codes().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q: Vec<f32> = gen_clustered_queries(1, 32, 5, 10.0, 3).unwrap().row(0).to_vec();
    let coarse: Vec<Candidate> = (0..1000)
        .map(|_| Candidate {
            id: rng.random_range(0..3000),
            distance: 0.0,
            stage: Stage::Quantized,
        })
        .collect();
    let refined = asymmetric_refine(&index, &q, &coarse).unwrap();
    assert_eq!(refined.len(), coarse.len());
    for c in &refined {
        let want: f64 = codes
            .row(c.id as usize)
            .iter()
            .enumerate()
            .map(|(j, &code)| {
                let x = params.mins[j] + code as f64 / params.scales[j];
                (q[j] as f64 - x).powi(2)
            })
            .sum();
        assert!((c.distance - want).abs() <= 1e-6 * want.max(1e-12), "{} vs {want}", c.distance);
        assert_eq!(c.stage, Stage::Asymmetric);
    }
    assert!(refined.windows(2).all(|w| (w[0].distance, w[0].id) <= (w[1].distance, w[1].id)));
}

#[test]
fn query_quantization_matches_the_scalar_encoder() {
    let base = gen_clustered(2000, 40, 4, 10.0, 4).unwrap();
    let index = build(&base, IndexMode::Aqr);
    let params = index.quant_params().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut q = vec![0f32; 40];
    for _ in 0..10_000 {
        for (j, v) in q.iter_mut().enumerate() {
            let span = params.maxs[j] - params.mins[j];
            // includes values beyond both ends of the trained range
            *v = (params.mins[j] + span * rng.random_range(-0.3..1.3)) as f32;
        }
        assert_eq!(quantize_query(&index, &q).unwrap(), params.encode(&q).unwrap());
    }
}

#[test]
fn lossless_grid_makes_asymmetric_order_exact() {
    // every dimension spans 0..=255 in integer steps, so full-range codes reconstruct exactly
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 8;
    let mut data: Vec<f32> = (0..600 * d).map(|_| rng.random_range(0..=255u8) as f32).collect();
    data[..d].fill(0.0);
    data[d..2 * d].fill(255.0);
    let base = Dataset::new(d, data).unwrap();
    let index = build(&base, IndexMode::ScalarQuant);
    for probe in 0..20 {
        let q: Vec<f32> = (0..d).map(|_| rng.random_range(0.0..255.0)).collect();
        let all: Vec<Candidate> = (0..600)
            .map(|id| Candidate {
                id,
                distance: 0.0,
                stage: Stage::Quantized,
            })
            .collect();
        let refined = asymmetric_refine(&index, &q, &all).unwrap();
        let exact = brute_force(&base, &q);
        for (a, e) in refined.iter().zip(&exact) {
            assert!((a.distance - e.0).abs() <= 1e-4 * e.0.max(1.0), "probe {probe}");
        }
        let ids: Vec<u32> = refined.iter().map(|c| c.id).collect();
        let want: Vec<u32> = exact.iter().map(|e| e.1).collect();
        assert_eq!(ids, want, "probe {probe}");
    }
}

struct Workload {
    base: Dataset,
    queries: Dataset,
    truth: IdMatrix,
}

fn workload() -> Workload {
    let base = gen_clustered(6000, 32, 8, 15.0, 6).unwrap();
    let queries = gen_clustered_queries(200, 32, 8, 15.0, 6).unwrap();
    let truth = ground_truth(&base, &queries, 10).unwrap();
    Workload { base, queries, truth }
}

#[test]
fn recall_never_drops_with_deeper_rerank() {
    let w = workload();
    let index = build(&w.base, IndexMode::Aqr);
    let mut config = preset("0.95-0.97").unwrap();
    config.early_termination = false;
    let values: Vec<f64> = (0..=55).step_by(5).map(f64::from).collect();
    let reports = sweep(&index, &w.queries, Some(&w.truth), &config, SweepAxis::NRerank, &values, 0, 1).unwrap();
    let recalls: Vec<f64> = reports.iter().map(|r| r.recall_at_k.unwrap()).collect();
    assert!(recalls.windows(2).all(|p| p[0] <= p[1]), "{recalls:?}");
    assert!(recalls[recalls.len() - 1] > recalls[0]);
}

#[test]
fn stage_counters_respect_the_pipeline_envelope() {
    let w = workload();
    let index = build(&w.base, IndexMode::Aqr);
    let config = preset("0.95-0.97").unwrap();
    let results = search_batch(&index, &w.queries, &config, 1).unwrap();
    let mut terminated = 0;
    for r in &results {
        let s = r.stats;
        assert_eq!(r.len(), 10);
        assert!(s.coarse_evaluated >= config.n_coarse as u64);
        assert_eq!(s.asymmetric_computed, config.n_coarse as u64);
        if s.early_terminated {
            terminated += 1;
            assert_eq!(s.exact_computed, config.k as u64);
        } else {
            assert_eq!(s.exact_computed, config.n_rerank as u64);
        }
    }
    assert!(terminated > 0);
}

#[test]
fn adaptive_mode_computes_fewer_exact_distances_than_plain_quantization() {
    let w = workload();
    let config = preset("0.95-0.97").unwrap();
    let aqr = search_batch(&build(&w.base, IndexMode::Aqr), &w.queries, &config, 1).unwrap();
    let sq = search_batch(&build(&w.base, IndexMode::ScalarQuant), &w.queries, &config, 1).unwrap();
    let mean = |rs: &[aqr_core::ResultSet]| rs.iter().map(|r| r.stats.exact_computed as f64).sum::<f64>() / rs.len() as f64;
    assert!(mean(&aqr) < mean(&sq));
    assert_eq!(mean(&sq), config.n_coarse as f64);
    assert!(recall_at_k(&sq, &w.truth, 10).unwrap() > 0.8);
}

#[test]
fn ground_truth_matches_a_naive_sort() {
    let base = gen_clustered(1000, 12, 3, 5.0, 7).unwrap();
    let queries = gen_clustered_queries(25, 12, 3, 5.0, 7).unwrap();
    let truth = ground_truth(&base, &queries, 15).unwrap();
    for (q, row) in queries.rows().zip(truth.rows()) {
        let want: Vec<u32> = brute_force(&base, q)[..15].iter().map(|p| p.1).collect();
        assert_eq!(row, &want[..]);
    }
}

#[test]
fn clustered_generator_yields_strong_density_variation() {
    let clustered = gen_clustered(10_000, 32, 10, 20.0, 8).unwrap();
    let single = gen_clustered(10_000, 32, 1, 1.0, 8).unwrap();
    let cfg = DensityConfig::default();
    let dc = build_profile(&clustered, &cfg).unwrap().delta;
    let ds = build_profile(&single, &cfg).unwrap().delta;
    assert!(dc > 0.5, "{dc}");
    assert!(ds < dc, "{ds} vs {dc}");
}

#[test]
fn save_load_preserves_transcripts_in_every_mode() {
    let base = gen_clustered(1200, 16, 4, 8.0, 9).unwrap();
    let queries = gen_clustered_queries(50, 16, 4, 8.0, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for mode in [IndexMode::Aqr, IndexMode::ScalarQuant, IndexMode::BaselineFp32] {
        let index = build(&base, mode);
        let path = dir.path().join(format!("{mode}.aqr"));
        index.save(&path).unwrap();
        let loaded = GraphIndex::load(&path).unwrap();
        assert_eq!(loaded, index);
        let config = preset("0.90-0.95").unwrap();
        assert_eq!(
            search_batch(&loaded, &queries, &config, 1).unwrap(),
            search_batch(&index, &queries, &config, 1).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn results_are_sorted_unique_and_full(
        n in 12usize..200,
        d in 1usize..10,
        k in 1usize..12,
        seed in any::<u64>(),
        terminate in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let base = Dataset::new(d, data).unwrap();
        let q: Vec<f32> = (0..d).map(|_| rng.random_range(-6.0f32..6.0)).collect();
        for mode in [IndexMode::Aqr, IndexMode::BaselineFp32] {
            let index = GraphIndex::build(base.clone(), &BuildConfig { mode, m0: 4, ef0: 16, ..Default::default() }).unwrap();
            let config = SearchConfig {
                k,
                n_coarse: k + 4,
                n_rerank: k,
                early_termination: terminate,
                ..Default::default()
            };
            let r = index.search(&q, &config).unwrap();
            prop_assert_eq!(r.len(), k);
            prop_assert!(r.results.windows(2).all(|w| (w[0].distance, w[0].id) < (w[1].distance, w[1].id)));
            let mut ids = r.ids();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), k);
            prop_assert!(r.results.iter().all(|c| c.distance >= 0.0 && (c.id as usize) < n));
        }
    }
}
