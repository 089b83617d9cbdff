//! Measurement: brute-force ground truth, Recall@k, single-threaded QPS and
//! latency percentiles, parameter sweeps and the named operating points.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, IdMatrix};
use crate::density::sq_dist_f64;
use crate::hnsw::{GraphIndex, Scored};
use crate::search::{search, search_batch, ResultSet, SearchConfig};
use crate::{Error, Result};

/// A named operating point for a target recall band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub n_coarse: usize,
    pub n_rerank: usize,
    pub tau_gap: f64,
    pub tau_ratio: f64,
    pub m_ef: usize,
}

pub const PRESETS: [Preset; 4] = [
    Preset {
        name: "0.85-0.90",
        n_coarse: 35,
        n_rerank: 12,
        tau_gap: 0.020,
        tau_ratio: 1.015,
        m_ef: 2,
    },
    Preset {
        name: "0.90-0.95",
        n_coarse: 45,
        n_rerank: 16,
        tau_gap: 0.015,
        tau_ratio: 1.012,
        m_ef: 2,
    },
    Preset {
        name: "0.95-0.97",
        n_coarse: 55,
        n_rerank: 20,
        tau_gap: 0.012,
        tau_ratio: 1.010,
        m_ef: 3,
    },
    Preset {
        name: "0.97+",
        n_coarse: 70,
        n_rerank: 28,
        tau_gap: 0.010,
        tau_ratio: 1.008,
        m_ef: 3,
    },
];

impl Preset {
    pub fn config(&self, k: usize) -> SearchConfig {
        SearchConfig {
            k,
            n_coarse: self.n_coarse,
            m_ef: self.m_ef,
            n_rerank: self.n_rerank,
            tau_gap: self.tau_gap,
            tau_ratio: self.tau_ratio,
            early_termination: true,
            ef_search: None,
        }
    }
}

/// The preset's parameters with k = 10 and termination on.
pub fn preset(name: &str) -> Result<SearchConfig> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .map(|p| p.config(10))
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

/// Exact top-`k` ids per query by squared distance (computed in `f64`),
/// ties broken by id. Queries are split across the available cores.
pub fn ground_truth(base: &Dataset, queries: &Dataset, k: usize) -> Result<IdMatrix> {
    if base.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            found: queries.dim(),
        });
    }
    if k == 0 || k > base.len() {
        return Err(Error::InsufficientPoints { n: base.len(), k });
    }
    let nq = queries.len();
    let threads = thread::available_parallelism().map_or(1, |t| t.get()).min(nq);
    let chunk = nq.div_ceil(threads);
    let mut ids = vec![0u32; nq * k];
    thread::scope(|scope| {
        for (c, out) in ids.chunks_mut(chunk * k).enumerate() {
            scope.spawn(move || {
                let mut scored = Vec::with_capacity(base.len());
                for (row, slot) in out.chunks_exact_mut(k).enumerate() {
                    let q = queries.row(c * chunk + row);
                    scored.clear();
                    scored.extend(base.rows().enumerate().map(|(i, x)| Scored {
                        dist: sq_dist_f64(q, x),
                        id: i as u32,
                    }));
                    if k < scored.len() {
                        scored.select_nth_unstable(k - 1);
                    }
                    let head = &mut scored[..k];
                    head.sort_unstable();
                    for (s, h) in slot.iter_mut().zip(head.iter()) {
                        *s = h.id;
                    }
                }
            });
        }
    });
    IdMatrix::new(k, ids)
}

/// Mean of `|returned ∩ truth[..k]| / k` over queries.
pub fn recall_at_k(results: &[ResultSet], truth: &IdMatrix, k: usize) -> Result<f64> {
    let ids: Vec<Vec<u32>> = results.iter().map(ResultSet::ids).collect();
    recall_of_ids(&ids, truth, k)
}

pub fn recall_of_ids(returned: &[Vec<u32>], truth: &IdMatrix, k: usize) -> Result<f64> {
    if returned.len() != truth.rows_len() {
        return Err(Error::Misaligned(format!(
            "{} result rows against {} truth rows",
            returned.len(),
            truth.rows_len()
        )));
    }
    if k == 0 || k > truth.width() {
        return Err(Error::Misaligned(format!("k = {k} with truth width {}", truth.width())));
    }
    if returned.is_empty() {
        return Err(Error::Empty("results"));
    }
    let mut hits = 0usize;
    for (got, want) in returned.iter().zip(truth.rows()) {
        let want = &want[..k];
        hits += got.iter().take(k).filter(|id| want.contains(id)).count();
    }
    Ok(hits as f64 / (k * returned.len()) as f64)
}

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Each query repeated `times` times in order, for query budgets larger
/// than the shipped query set.
pub fn repeat_queries(queries: &Dataset, times: usize) -> Result<Dataset> {
    if times == 0 {
        return Err(Error::InvalidConfig("repeat count must be at least 1".into()));
    }
    let mut data = Vec::with_capacity(queries.as_slice().len() * times);
    for _ in 0..times {
        data.extend_from_slice(queries.as_slice());
    }
    Dataset::new(queries.dim(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: String,
    pub dataset: String,
    pub kernel: String,
    pub n: usize,
    pub d: usize,
    pub build_seconds: Option<f64>,
    pub queries: usize,
    pub qps: f64,
    pub recall_at_k: Option<f64>,
    pub latency_p50_us: f64,
    pub latency_p90_us: f64,
    pub latency_p99_us: f64,
    pub mean_coarse_evaluated: f64,
    pub mean_asymmetric: f64,
    pub mean_exact: f64,
    pub early_termination_rate: f64,
    pub k: usize,
    pub n_coarse: usize,
    pub n_rerank: usize,
    pub tau_gap: f64,
    pub tau_ratio: f64,
    pub m_ef: usize,
    pub ef_search: usize,
    pub early_termination: bool,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} n={} d={} qps={:.1} p50={:.1}us p99={:.1}us exact/q={:.2} et={:.3}",
            self.mode,
            self.n,
            self.d,
            self.qps,
            self.latency_p50_us,
            self.latency_p99_us,
            self.mean_exact,
            self.early_termination_rate
        )?;
        if let Some(r) = self.recall_at_k {
            write!(f, " recall@{}={r:.4}", self.k)?;
        }
        Ok(())
    }
}

/// Warmup, then `repeats` timed single-threaded passes over the queries.
/// QPS is the best pass; latencies are pooled across passes. Recall and
/// counters come from the first pass.
pub fn measure(
    index: &GraphIndex,
    queries: &Dataset,
    config: &SearchConfig,
    warmup: usize,
    repeats: usize,
    truth: Option<&IdMatrix>,
) -> Result<BenchReport> {
    config.validate()?;
    if queries.is_empty() {
        return Err(Error::Empty("queries"));
    }
    let repeats = repeats.max(1);
    let nq = queries.len();
    for i in 0..warmup {
        search(index, queries.row(i % nq), config)?;
    }
    let mut latencies = Vec::with_capacity(nq * repeats);
    let mut best_qps = 0.0f64;
    let mut first: Vec<ResultSet> = Vec::new();
    for pass in 0..repeats {
        let mut results = Vec::with_capacity(if pass == 0 { nq } else { 0 });
        let start = Instant::now();
        for q in queries.rows() {
            let t = Instant::now();
            let r = search(index, q, config)?;
            latencies.push(t.elapsed().as_secs_f64() * 1e6);
            if pass == 0 {
                results.push(r);
            }
        }
        let wall = start.elapsed().as_secs_f64();
        best_qps = best_qps.max(nq as f64 / wall.max(1e-12));
        if pass == 0 {
            first = results;
        }
    }
    latencies.sort_unstable_by(f64::total_cmp);
    let recall = match truth {
        Some(t) => Some(recall_at_k(&first, t, config.k)?),
        None => None,
    };
    let mean = |f: &dyn Fn(&ResultSet) -> f64| first.iter().map(f).sum::<f64>() / nq as f64;
    Ok(BenchReport {
        mode: index.mode().name().to_string(),
        dataset: String::new(),
        kernel: index.kernels().tier().name().to_string(),
        n: index.len(),
        d: index.dim(),
        build_seconds: None,
        queries: nq,
        qps: best_qps,
        recall_at_k: recall,
        latency_p50_us: nearest_rank(&latencies, 50.0),
        latency_p90_us: nearest_rank(&latencies, 90.0),
        latency_p99_us: nearest_rank(&latencies, 99.0),
        mean_coarse_evaluated: mean(&|r| r.stats.coarse_evaluated as f64),
        mean_asymmetric: mean(&|r| r.stats.asymmetric_computed as f64),
        mean_exact: mean(&|r| r.stats.exact_computed as f64),
        early_termination_rate: mean(&|r| r.stats.early_terminated as u8 as f64),
        k: config.k,
        n_coarse: config.n_coarse,
        n_rerank: config.n_rerank,
        tau_gap: config.tau_gap,
        tau_ratio: config.tau_ratio,
        m_ef: config.m_ef,
        ef_search: config.ef(),
        early_termination: config.early_termination,
    })
}

/// Multi-threaded throughput. Not used for headline numbers.
pub fn measure_parallel(index: &GraphIndex, queries: &Dataset, config: &SearchConfig, threads: usize) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Empty("queries"));
    }
    let start = Instant::now();
    search_batch(index, queries, config, threads)?;
    Ok(queries.len() as f64 / start.elapsed().as_secs_f64().max(1e-12))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NCoarse,
    NRerank,
    TauGap,
    TauRatio,
    MEf,
    EfSearch,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NCoarse => "n_coarse",
            SweepAxis::NRerank => "n_rerank",
            SweepAxis::TauGap => "tau_gap",
            SweepAxis::TauRatio => "tau_ratio",
            SweepAxis::MEf => "m_ef",
            SweepAxis::EfSearch => "ef_search",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &SearchConfig, value: f64) -> Result<SearchConfig> {
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} needs a whole number, got {value}", self.name())))
            }
        };
        let mut c = *base;
        match self {
            SweepAxis::NCoarse => c.n_coarse = count()?,
            SweepAxis::NRerank => c.n_rerank = count()?,
            SweepAxis::TauGap => c.tau_gap = value,
            SweepAxis::TauRatio => c.tau_ratio = value,
            SweepAxis::MEf => c.m_ef = count()?,
            SweepAxis::EfSearch => c.ef_search = Some(count()?),
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_coarse" => Ok(SweepAxis::NCoarse),
            "n_rerank" => Ok(SweepAxis::NRerank),
            "tau_gap" => Ok(SweepAxis::TauGap),
            "tau_ratio" => Ok(SweepAxis::TauRatio),
            "m_ef" => Ok(SweepAxis::MEf),
            "ef_search" => Ok(SweepAxis::EfSearch),
            _ => Err(Error::UnknownAxis(s.to_string())),
        }
    }
}

/// One report per value along `axis`. Values must be ascending.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    index: &GraphIndex,
    queries: &Dataset,
    truth: Option<&IdMatrix>,
    base: &SearchConfig,
    axis: SweepAxis,
    values: &[f64],
    warmup: usize,
    repeats: usize,
) -> Result<Vec<BenchReport>> {
    if values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("sweep values must be sorted ascending".into()));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    configs
        .iter()
        .map(|c| measure(index, queries, c, warmup, repeats, truth))
        .collect()
}

pub fn write_csv<W: Write>(w: W, reports: &[BenchReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<BenchReport>> {
    let mut reader = csv::Reader::from_reader(r);
    let rows = reader.deserialize().collect::<std::result::Result<Vec<BenchReport>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_clustered;
    use crate::hnsw::{BuildConfig, IndexMode};
    use crate::search::{Candidate, SearchStats, Stage};

    fn rs(ids: &[u32]) -> ResultSet {
        ResultSet {
            results: ids
                .iter()
                .map(|&id| Candidate {
                    id,
                    distance: id as f64,
                    stage: Stage::Exact,
                })
                .collect(),
            stats: SearchStats::default(),
        }
    }

    #[test]
    fn presets_verbatim() {
        let c = preset("0.90-0.95").unwrap();
        assert_eq!((c.n_coarse, c.n_rerank, c.tau_gap, c.tau_ratio, c.m_ef), (45, 16, 0.015, 1.012, 2));
        let c = preset("0.97+").unwrap();
        assert_eq!((c.n_coarse, c.n_rerank, c.tau_gap, c.tau_ratio, c.m_ef), (70, 28, 0.010, 1.008, 3));
        let c = preset("0.85-0.90").unwrap();
        assert_eq!((c.n_coarse, c.n_rerank, c.tau_gap, c.tau_ratio, c.m_ef), (35, 12, 0.020, 1.015, 2));
        let c = preset("0.95-0.97").unwrap();
        assert_eq!((c.n_coarse, c.n_rerank, c.tau_gap, c.tau_ratio, c.m_ef), (55, 20, 0.012, 1.010, 3));
        assert_eq!(c.ef(), 165);
        assert!(matches!(preset("0.99"), Err(Error::UnknownPreset(_))));
        for p in PRESETS {
            assert!(p.config(10).validate().is_ok());
        }
    }

    #[test]
    fn recall_hand_counts() {
        let truth = IdMatrix::from_rows(&[(0..10).collect::<Vec<u32>>()]).unwrap();
        assert_eq!(recall_at_k(&[rs(&[9, 8, 7, 6, 5, 4, 3, 2, 1, 0])], &truth, 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[rs(&[0, 1, 2, 3, 4, 5, 6, 7, 50, 51])], &truth, 10).unwrap(), 0.8);
        assert_eq!(recall_at_k(&[rs(&[20, 21, 22, 23, 24, 25, 26, 27, 28, 29])], &truth, 10).unwrap(), 0.0);
        assert!(matches!(recall_at_k(&[], &truth, 10), Err(Error::Misaligned(_))));
        assert!(recall_at_k(&[rs(&[0])], &truth, 11).is_err());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50.0), 50.0);
        assert_eq!(nearest_rank(&v, 99.0), 99.0);
        assert_eq!(nearest_rank(&v, 100.0), 100.0);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&[3.0, 7.0, 9.0], 50.0), 7.0);
        assert_eq!(nearest_rank(&[3.0, 7.0, 9.0], 99.0), 9.0);
    }

    #[test]
    fn ground_truth_basics() {
        let base = gen_clustered(300, 5, 3, 4.0, 2).unwrap();
        let q = base.select(&[17, 204]).unwrap();
        let gt = ground_truth(&base, &q, 300).unwrap();
        assert_eq!(gt.row(0)[0], 17);
        assert_eq!(gt.row(1)[0], 204);
        for row in gt.rows() {
            let mut s = row.to_vec();
            s.sort_unstable();
            assert_eq!(s, (0..300).collect::<Vec<u32>>());
        }
        assert!(ground_truth(&base, &q, 301).is_err());
    }

    #[test]
    fn ground_truth_ties_by_id() {
        let base = Dataset::from_rows(&[[1.0f32], [-1.0], [1.0], [0.0]]).unwrap();
        let q = Dataset::from_rows(&[[0.0f32]]).unwrap();
        assert_eq!(ground_truth(&base, &q, 4).unwrap().row(0), &[3, 0, 1, 2]);
    }

    #[test]
    fn measure_and_csv_round_trip() {
        let base = gen_clustered(500, 8, 3, 6.0, 5).unwrap();
        let queries = gen_clustered(30, 8, 3, 6.0, 6).unwrap();
        let truth = ground_truth(&base, &queries, 10).unwrap();
        let idx = GraphIndex::build(
            base,
            &BuildConfig {
                mode: IndexMode::Aqr,
                m0: 8,
                ef0: 48,
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = preset("0.95-0.97").unwrap();
        let r = measure(&idx, &queries, &cfg, 5, 2, Some(&truth)).unwrap();
        assert!(r.latency_p50_us <= r.latency_p90_us && r.latency_p90_us <= r.latency_p99_us);
        assert!(r.qps > 0.0);
        let recall = r.recall_at_k.unwrap();
        assert!((0.0..=1.0).contains(&recall));

        let rows = sweep(&idx, &queries, Some(&truth), &cfg, SweepAxis::NCoarse, &[35.0, 45.0, 55.0, 70.0], 0, 1).unwrap();
        assert_eq!(rows.iter().map(|r| r.n_coarse).collect::<Vec<_>>(), vec![35, 45, 55, 70]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);

        assert!(sweep(&idx, &queries, None, &cfg, SweepAxis::NCoarse, &[45.0, 35.0], 0, 1).is_err());
        assert!(matches!("bogus".parse::<SweepAxis>(), Err(Error::UnknownAxis(_))));
        assert!(measure(&idx, &queries, &cfg, 0, 1, None).unwrap().recall_at_k.is_none());
    }

    #[test]
    fn query_repetition() {
        let q = gen_clustered(4, 3, 1, 1.0, 1).unwrap();
        let r = repeat_queries(&q, 3).unwrap();
        assert_eq!(r.len(), 12);
        assert_eq!(r.row(9), q.row(1));
        assert!(repeat_queries(&q, 0).is_err());
    }
}
