//! Query pipeline: quantize the query, beam-search the code graph, re-rank
//! the coarse candidates with asymmetric distances, decide whether the
//! boundary between rank k and k+1 is clear enough to stop early, rerank
//! the head with exact distances and merge.
//!
//! All distances are squared Euclidean. Every sort breaks ties by id.

use std::cell::RefCell;
use std::fmt;
use std::thread;

use crate::dataset::Dataset;
use crate::hnsw::graph::{Scratch, Space};
use crate::hnsw::{GraphIndex, IndexMode, Scored};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub k: usize,
    pub n_coarse: usize,
    pub m_ef: usize,
    pub n_rerank: usize,
    pub tau_gap: f64,
    pub tau_ratio: f64,
    pub early_termination: bool,
    /// Overrides the beam width `n_coarse * m_ef` (still floored at `k`).
    pub ef_search: Option<usize>,
}

impl Default for SearchConfig {
    /// The "0.95-0.97" operating point with k = 10.
    fn default() -> Self {
        Self {
            k: 10,
            n_coarse: 55,
            m_ef: 3,
            n_rerank: 20,
            tau_gap: 0.012,
            tau_ratio: 1.010,
            early_termination: true,
            ef_search: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.n_coarse < self.k {
            return bad(format!("n_coarse {} < k {}", self.n_coarse, self.k));
        }
        if self.n_rerank > self.n_coarse {
            return bad(format!("n_rerank {} > n_coarse {}", self.n_rerank, self.n_coarse));
        }
        if self.m_ef == 0 {
            return bad("m_ef must be at least 1".into());
        }
        if self.tau_gap.is_nan() || self.tau_gap < 0.0 {
            return bad(format!("tau_gap {} must be >= 0", self.tau_gap));
        }
        if self.tau_ratio.is_nan() || self.tau_ratio < 1.0 {
            return bad(format!("tau_ratio {} must be >= 1", self.tau_ratio));
        }
        if self.ef_search == Some(0) {
            return bad("ef_search must be at least 1".into());
        }
        Ok(())
    }

    pub fn ef(&self) -> usize {
        self.ef_search
            .unwrap_or(self.n_coarse.saturating_mul(self.m_ef))
            .max(self.k)
    }
}

/// Which distance function produced a candidate's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Quantized,
    Asymmetric,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub distance: f64,
    pub stage: Stage,
}

impl Candidate {
    fn key(&self) -> Scored {
        Scored {
            dist: self.distance,
            id: self.id,
        }
    }
}

fn sort_candidates(list: &mut [Candidate]) {
    list.sort_unstable_by_key(|a| a.key());
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Distance evaluations during graph traversal.
    pub coarse_evaluated: u64,
    pub asymmetric_computed: u64,
    pub exact_computed: u64,
    pub early_terminated: bool,
    /// Fewer than k results were available.
    pub short_result: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub results: Vec<Candidate>,
    pub stats: SearchStats,
}

impl ResultSet {
    pub fn ids(&self) -> Vec<u32> {
        self.results.iter().map(|c| c.id).collect()
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

impl fmt::Display for ResultSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.results.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}:{}", c.id, c.distance)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Terminate,
    Continue,
}

#[derive(Default)]
struct QueryScratch {
    graph: Scratch,
    qhat: Vec<u8>,
    recon: Vec<f32>,
}

thread_local! {
    static SCRATCH: RefCell<QueryScratch> = RefCell::new(QueryScratch::default());
}

fn with_scratch<T>(f: impl FnOnce(&mut QueryScratch) -> T) -> T {
    SCRATCH.with(|s| match s.try_borrow_mut() {
        Ok(mut s) => f(&mut s),
        Err(_) => f(&mut QueryScratch::default()),
    })
}

fn check_query(index: &GraphIndex, q: &[f32]) -> Result<()> {
    if q.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("query has non-finite components".into()));
    }
    Ok(())
}

fn require_quantized(index: &GraphIndex) -> Result<()> {
    if index.mode().is_quantized() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{} index has no quantizer", index.mode())))
    }
}

/// Encodes a query with the index's quantizer through the active kernels.
pub fn quantize_query(index: &GraphIndex, q: &[f32]) -> Result<Vec<u8>> {
    require_quantized(index)?;
    let params = index.quant_params().expect("quantized index");
    index.kernels().encode_query(q, params)
}

/// Descends the hierarchy and beam-searches layer 0 over codes. Returns the
/// `n_coarse` nearest by `d^q`, ascending.
pub fn coarse_search(index: &GraphIndex, qhat: &[u8], config: &SearchConfig) -> Result<Vec<Candidate>> {
    config.validate()?;
    require_quantized(index)?;
    with_scratch(|s| coarse_inner(index, qhat, config, &mut s.graph))
}

fn coarse_inner(index: &GraphIndex, qhat: &[u8], config: &SearchConfig, scratch: &mut Scratch) -> Result<Vec<Candidate>> {
    let space = index.code_space().expect("quantized index");
    if qhat.len() != space.d {
        return Err(Error::DimensionMismatch {
            expected: space.d,
            found: qhat.len(),
        });
    }
    let s_dist = index.quant_params().expect("quantized index").s_dist;
    let found = beam(index, &space, qhat, config.ef(), scratch)?;
    Ok(found
        .into_iter()
        .take(config.n_coarse)
        .map(|s| Candidate {
            id: s.id,
            distance: s_dist * s.dist,
            stage: Stage::Quantized,
        })
        .collect())
}

fn beam<S: Space>(index: &GraphIndex, space: &S, q: &[S::Elem], ef: usize, scratch: &mut Scratch) -> Result<Vec<Scored>> {
    let g = index.graph();
    let entry = g.descend(space, q, 0, scratch).ok_or(Error::Empty("index"))?;
    Ok(g.search_layer(space, q, &[entry], ef, 0, scratch))
}

/// Re-scores every coarse candidate against its reconstruction and
/// re-sorts by `(d^a, id)`. Never drops candidates.
pub fn asymmetric_refine(index: &GraphIndex, q: &[f32], coarse: &[Candidate]) -> Result<Vec<Candidate>> {
    require_quantized(index)?;
    check_query(index, q)?;
    with_scratch(|s| Ok(refine_inner(index, q, coarse, &mut s.recon)))
}

fn refine_inner(index: &GraphIndex, q: &[f32], coarse: &[Candidate], recon: &mut Vec<f32>) -> Vec<Candidate> {
    let params = index.quant_params().expect("quantized index");
    let codes = index.codes().expect("quantized index");
    let kernels = index.kernels();
    recon.resize(params.d, 0.0);
    let mut out: Vec<Candidate> = coarse
        .iter()
        .map(|c| {
            params.decode_into_f32(codes.row(c.id as usize), recon);
            Candidate {
                id: c.id,
                distance: kernels.sq_l2_f32(q, recon) as f64,
                stage: Stage::Asymmetric,
            }
        })
        .collect();
    sort_candidates(&mut out);
    out
}

/// Gap/ratio test between the k-th and (k+1)-th asymmetric distances.
/// Only meaningful when `refined.len() > k` and termination is enabled;
/// otherwise returns `Continue`.
pub fn early_termination_check(refined: &[Candidate], config: &SearchConfig, epsilon: f64) -> Decision {
    let k = config.k;
    if !config.early_termination || k == 0 || refined.len() <= k {
        return Decision::Continue;
    }
    let dk = refined[k - 1].distance;
    let dk1 = refined[k].distance;
    let gap = (dk1 - dk) / (dk + epsilon);
    let ratio = dk1 / (dk + epsilon);
    if gap > config.tau_gap || ratio > config.tau_ratio {
        Decision::Terminate
    } else {
        Decision::Continue
    }
}

/// Exact distances for the first `depth` refined candidates, ascending.
pub fn exact_rerank(index: &GraphIndex, q: &[f32], refined: &[Candidate], depth: usize) -> Result<Vec<Candidate>> {
    check_query(index, q)?;
    if depth > refined.len() {
        return Err(Error::InvalidConfig(format!(
            "rerank depth {depth} exceeds {} candidates",
            refined.len()
        )));
    }
    Ok(rerank_inner(index, q, &refined[..depth]))
}

fn rerank_inner(index: &GraphIndex, q: &[f32], head: &[Candidate]) -> Vec<Candidate> {
    let raw = index.raw();
    let kernels = index.kernels();
    let mut out: Vec<Candidate> = head
        .iter()
        .map(|c| Candidate {
            id: c.id,
            distance: kernels.sq_l2_f32(q, raw.row(c.id as usize)) as f64,
            stage: Stage::Exact,
        })
        .collect();
    sort_candidates(&mut out);
    out
}

/// Merges exact scores over the refined list (exact wins for shared ids)
/// and returns the first `k` by `(distance, id)`.
pub fn assemble(exact: &[Candidate], refined: &[Candidate], k: usize) -> ResultSet {
    let mut merged: Vec<Candidate> = Vec::with_capacity(refined.len().max(exact.len()));
    merged.extend_from_slice(exact);
    let exact_ids: Vec<u32> = exact.iter().map(|c| c.id).collect();
    for c in refined {
        if !exact_ids.contains(&c.id) {
            merged.push(*c);
        }
    }
    sort_candidates(&mut merged);
    let short_result = merged.len() < k;
    merged.truncate(k);
    ResultSet {
        results: merged,
        stats: SearchStats {
            exact_computed: exact.len() as u64,
            short_result,
            ..Default::default()
        },
    }
}

/// Runs the full pipeline for the index's mode.
pub fn search(index: &GraphIndex, q: &[f32], config: &SearchConfig) -> Result<ResultSet> {
    config.validate()?;
    check_query(index, q)?;
    with_scratch(|s| search_inner(index, q, config, s))
}

fn search_inner(index: &GraphIndex, q: &[f32], config: &SearchConfig, s: &mut QueryScratch) -> Result<ResultSet> {
    s.graph.evals = 0;
    if index.mode() == IndexMode::BaselineFp32 {
        let space = index.float_space();
        let found = beam(index, &space, q, config.ef(), &mut s.graph)?;
        let results: Vec<Candidate> = found
            .into_iter()
            .take(config.k)
            .map(|s| Candidate {
                id: s.id,
                distance: s.dist,
                stage: Stage::Exact,
            })
            .collect();
        let evals = s.graph.evals;
        return Ok(ResultSet {
            stats: SearchStats {
                coarse_evaluated: evals,
                exact_computed: evals,
                short_result: results.len() < config.k,
                ..Default::default()
            },
            results,
        });
    }

    let params = index.quant_params().expect("quantized index");
    s.qhat.resize(params.d, 0);
    index.kernels().encode_into(q, params, &mut s.qhat);
    let coarse = coarse_inner(index, &s.qhat, config, &mut s.graph)?;
    let coarse_evaluated = s.graph.evals;

    let mut result = if index.mode() == IndexMode::ScalarQuant {
        let exact = rerank_inner(index, q, &coarse);
        assemble(&exact, &[], config.k)
    } else {
        let refined = refine_inner(index, q, &coarse, &mut s.recon);
        let decision = early_termination_check(&refined, config, params.epsilon);
        let depth = match decision {
            Decision::Terminate => config.k.min(refined.len()),
            Decision::Continue => config.n_rerank.min(refined.len()),
        };
        let exact = rerank_inner(index, q, &refined[..depth]);
        let mut r = assemble(&exact, &refined, config.k);
        r.stats.asymmetric_computed = refined.len() as u64;
        r.stats.early_terminated = decision == Decision::Terminate;
        r
    };
    result.stats.coarse_evaluated = coarse_evaluated;
    Ok(result)
}

/// Searches every query row. `threads <= 1` runs inline; otherwise rows are
/// split into contiguous chunks, one per thread.
pub fn search_batch(index: &GraphIndex, queries: &Dataset, config: &SearchConfig, threads: usize) -> Result<Vec<ResultSet>> {
    config.validate()?;
    if queries.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: queries.dim(),
        });
    }
    let n = queries.len();
    if threads <= 1 || n < 2 {
        return queries.rows().map(|q| search(index, q, config)).collect();
    }
    let chunk = n.div_ceil(threads);
    let ids: Vec<usize> = (0..n).collect();
    thread::scope(|scope| {
        let handles: Vec<_> = ids
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&i| search(index, queries.row(i), config)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            out.extend(h.join().expect("search thread panicked")?);
        }
        Ok(out)
    })
}

impl GraphIndex {
    pub fn search(&self, q: &[f32], config: &SearchConfig) -> Result<ResultSet> {
        search(self, q, config)
    }
}
