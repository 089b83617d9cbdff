//! HNSW index over 8-bit codes (or raw floats for the baseline), retaining
//! full-precision vectors for reranking.
//!
//! Building an `aqr` index runs three stages: density profiling, quantizer
//! training with density-adaptive percentiles, and graph construction with
//! connectivity and construction depth adapted to the measured
//! heterogeneity. `scalar-quant` skips the adaptation (full-range min/max
//! codes, base parameters) and `baseline-fp32` builds directly on floats.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, QuantizedSet};
use crate::density::{self, DensityConfig};
use crate::kernels::{self, KernelSet};
use crate::quantizer::{GraphParams, QuantizationParams, DEFAULT_P_MAX};
use crate::{Error, Result};

pub mod graph;
mod persist;

pub use graph::{assign_level, Graph, NeighborSelection, Scored, MAX_M, MAX_M0};
pub use persist::{FORMAT_VERSION, MAGIC};

use graph::{Builder, CodeSpace, FloatSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexMode {
    BaselineFp32,
    ScalarQuant,
    Aqr,
}

impl IndexMode {
    pub fn name(self) -> &'static str {
        match self {
            IndexMode::BaselineFp32 => "baseline",
            IndexMode::ScalarQuant => "sq",
            IndexMode::Aqr => "aqr",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            IndexMode::BaselineFp32 => 0,
            IndexMode::ScalarQuant => 1,
            IndexMode::Aqr => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(IndexMode::BaselineFp32),
            1 => Some(IndexMode::ScalarQuant),
            2 => Some(IndexMode::Aqr),
            _ => None,
        }
    }

    pub fn is_quantized(self) -> bool {
        self != IndexMode::BaselineFp32
    }
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "baseline-fp32" => Ok(IndexMode::BaselineFp32),
            "sq" | "scalar-quant" => Ok(IndexMode::ScalarQuant),
            "aqr" => Ok(IndexMode::Aqr),
            _ => Err(Error::InvalidConfig(format!("unknown index mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub mode: IndexMode,
    pub m0: usize,
    pub ef0: usize,
    pub p_max: f64,
    pub density: DensityConfig,
    pub selection: NeighborSelection,
    /// Seeds both density sampling and level assignment.
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            mode: IndexMode::Aqr,
            m0: 16,
            ef0: 200,
            p_max: DEFAULT_P_MAX,
            density: DensityConfig::default(),
            selection: NeighborSelection::default(),
            seed: 42,
        }
    }
}

/// What a build measured and decided.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub mode: IndexMode,
    pub graph_params: GraphParams,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub density_seconds: f64,
    pub quantize_seconds: f64,
    pub graph_seconds: f64,
    pub total_seconds: f64,
    pub distance_evals: u64,
}

#[derive(Debug, Clone)]
pub struct GraphIndex {
    mode: IndexMode,
    graph_params: GraphParams,
    quant: Option<QuantizationParams>,
    codes: Option<QuantizedSet>,
    raw: Dataset,
    graph: Graph,
    kernels: KernelSet,
}

impl PartialEq for GraphIndex {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.graph_params == other.graph_params
            && self.quant == other.quant
            && self.codes == other.codes
            && self.raw == other.raw
            && self.graph == other.graph
    }
}

/// Structural audit of a graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StructureReport {
    pub layer_containment_violations: usize,
    pub degree_violations: usize,
    pub self_loops: usize,
    pub duplicate_edges: usize,
    pub dangling_edges: usize,
    pub reachable_at_layer0: usize,
    pub nodes: usize,
}

impl StructureReport {
    pub fn is_sound(&self) -> bool {
        self.layer_containment_violations == 0
            && self.degree_violations == 0
            && self.self_loops == 0
            && self.duplicate_edges == 0
            && self.dangling_edges == 0
    }

    pub fn isolated(&self) -> usize {
        self.nodes - self.reachable_at_layer0
    }

    pub fn reachable_fraction(&self) -> f64 {
        self.reachable_at_layer0 as f64 / self.nodes.max(1) as f64
    }
}

impl GraphIndex {
    pub fn build(dataset: Dataset, config: &BuildConfig) -> Result<Self> {
        Self::build_with_kernels(dataset, config, *kernels::active()).map(|(idx, _)| idx)
    }

    pub fn build_with_report(dataset: Dataset, config: &BuildConfig) -> Result<(Self, BuildReport)> {
        Self::build_with_kernels(dataset, config, *kernels::active())
    }

    pub fn build_with_kernels(
        dataset: Dataset,
        config: &BuildConfig,
        kernels: KernelSet,
    ) -> Result<(Self, BuildReport)> {
        if !(2..=MAX_M0).contains(&config.m0) {
            return Err(Error::InvalidConfig(format!("m0 must be in 2..={MAX_M0}, got {}", config.m0)));
        }
        if config.ef0 < 1 {
            return Err(Error::InvalidConfig("ef0 must be at least 1".into()));
        }
        if dataset.len() > u32::MAX as usize {
            return Err(Error::InvalidConfig("more than 2^32 vectors".into()));
        }
        let start = Instant::now();
        let n = dataset.len();
        let mut report = BuildReport {
            mode: config.mode,
            graph_params: GraphParams::base(config.m0, config.ef0),
            delta: None,
            eta: None,
            density_seconds: 0.0,
            quantize_seconds: 0.0,
            graph_seconds: 0.0,
            total_seconds: 0.0,
            distance_evals: 0,
        };

        let (quant, graph_params) = match config.mode {
            IndexMode::BaselineFp32 => (None, GraphParams::base(config.m0, config.ef0)),
            IndexMode::ScalarQuant => {
                let t = Instant::now();
                let q = QuantizationParams::train_full_range(&dataset, config.density.epsilon)?;
                report.quantize_seconds = t.elapsed().as_secs_f64();
                (Some(q), GraphParams::base(config.m0, config.ef0))
            }
            IndexMode::Aqr => {
                let t = Instant::now();
                let dcfg = DensityConfig {
                    seed: config.seed,
                    ..config.density.clone()
                };
                let profile = density::build_profile(&dataset, &dcfg)?;
                report.density_seconds = t.elapsed().as_secs_f64();
                report.delta = Some(profile.delta);
                report.eta = Some(profile.eta);
                let t = Instant::now();
                let q = QuantizationParams::train(&dataset, &profile, config.p_max)?;
                report.quantize_seconds = t.elapsed().as_secs_f64();
                (
                    Some(q),
                    GraphParams::adapted(config.m0, config.ef0, profile.delta, profile.eta),
                )
            }
        };
        report.graph_params = graph_params;

        let t = Instant::now();
        let codes = match &quant {
            Some(q) => {
                let mut codes = vec![0u8; n * q.d];
                for (row, out) in dataset.rows().zip(codes.chunks_exact_mut(q.d)) {
                    kernels.encode_into(row, q, out);
                }
                Some(QuantizedSet::new(q.d, codes)?)
            }
            None => None,
        };
        report.quantize_seconds += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(3);
        let (graph, evals) = match &codes {
            Some(c) => {
                let space = CodeSpace {
                    codes: c.as_slice(),
                    d: c.dim(),
                    kernels,
                };
                insert_all(Builder::new(space, n, graph_params.m, graph_params.ef_construction, rng).with_selection(config.selection))?
            }
            None => {
                let space = FloatSpace::new(&dataset, kernels);
                insert_all(Builder::new(space, n, graph_params.m, graph_params.ef_construction, rng).with_selection(config.selection))?
            }
        };
        report.graph_seconds = t.elapsed().as_secs_f64();
        report.distance_evals = evals;
        report.total_seconds = start.elapsed().as_secs_f64();

        Ok((
            Self {
                mode: config.mode,
                graph_params,
                quant,
                codes,
                raw: dataset,
                graph,
                kernels,
            },
            report,
        ))
    }

    pub(crate) fn from_parts(
        mode: IndexMode,
        graph_params: GraphParams,
        quant: Option<QuantizationParams>,
        codes: Option<QuantizedSet>,
        raw: Dataset,
        graph: Graph,
    ) -> Self {
        Self {
            mode,
            graph_params,
            quant,
            codes,
            raw,
            graph,
            kernels: *kernels::active(),
        }
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn graph_params(&self) -> GraphParams {
        self.graph_params
    }

    pub fn quant_params(&self) -> Option<&QuantizationParams> {
        self.quant.as_ref()
    }

    pub fn codes(&self) -> Option<&QuantizedSet> {
        self.codes.as_ref()
    }

    pub fn raw(&self) -> &Dataset {
        &self.raw
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.raw.dim()
    }

    pub fn kernels(&self) -> &KernelSet {
        &self.kernels
    }

    /// Same index, searched with different kernels.
    pub fn with_kernels(mut self, kernels: KernelSet) -> Self {
        self.kernels = kernels;
        self
    }

    pub(crate) fn code_space(&self) -> Option<CodeSpace<'_>> {
        self.codes.as_ref().map(|c| CodeSpace {
            codes: c.as_slice(),
            d: c.dim(),
            kernels: self.kernels,
        })
    }

    pub(crate) fn float_space(&self) -> FloatSpace<'_> {
        FloatSpace::new(&self.raw, self.kernels)
    }

    /// Full structural scan: layer containment, degree caps, self-loops,
    /// duplicate and dangling edges, and layer-0 reachability from the
    /// entry point.
    pub fn audit(&self) -> StructureReport {
        audit_graph(&self.graph)
    }
}

fn insert_all<S: graph::Space>(mut builder: Builder<S>) -> Result<(Graph, u64)> {
    let n = builder.graph().len() as u32;
    for id in 0..n {
        builder.insert(id)?;
    }
    let evals = builder.evals();
    Ok((builder.into_graph(), evals))
}

pub(crate) fn audit_graph(g: &Graph) -> StructureReport {
    let n = g.len();
    let mut report = StructureReport {
        nodes: n,
        ..Default::default()
    };
    let mut seen = vec![u32::MAX; n];
    for layer in 0..=g.max_layer() {
        for node in g.nodes_at(layer) {
            let nbrs = g.neighbors(node, layer);
            if nbrs.len() > g.cap(layer) {
                report.degree_violations += 1;
            }
            for &nb in nbrs {
                if nb as usize >= n {
                    report.dangling_edges += 1;
                    continue;
                }
                if nb == node {
                    report.self_loops += 1;
                }
                if g.level(nb) < layer {
                    report.layer_containment_violations += 1;
                }
                // stamp by (layer, node) to spot duplicates in one list
                let stamp = (layer * n + node as usize) as u32;
                if seen[nb as usize] == stamp {
                    report.duplicate_edges += 1;
                }
                seen[nb as usize] = stamp;
            }
        }
    }
    if let Some(ep) = g.entry_point() {
        if g.level(ep) != g.max_layer() {
            report.layer_containment_violations += 1;
        }
        let mut visited = vec![false; n];
        let mut stack = vec![ep];
        visited[ep as usize] = true;
        let mut count = 1;
        while let Some(node) = stack.pop() {
            for &nb in g.neighbors(node, 0) {
                if (nb as usize) < n && !visited[nb as usize] {
                    visited[nb as usize] = true;
                    count += 1;
                    stack.push(nb);
                }
            }
        }
        report.reachable_at_layer0 = count;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_clustered;

    fn small_config(mode: IndexMode) -> BuildConfig {
        BuildConfig {
            mode,
            m0: 8,
            ef0: 64,
            ..Default::default()
        }
    }

    #[test]
    fn structure_after_clustered_build() {
        let ds = gen_clustered(1000, 16, 5, 10.0, 3).unwrap();
        for mode in [IndexMode::BaselineFp32, IndexMode::ScalarQuant, IndexMode::Aqr] {
            let idx = GraphIndex::build(ds.clone(), &small_config(mode)).unwrap();
            let report = idx.audit();
            assert!(report.is_sound(), "{mode}: {report:?}");
            assert!(report.reachable_fraction() >= 0.99, "{mode}: {report:?}");
            let cap0 = 2 * idx.graph_params().m;
            for node in 0..1000 {
                assert!(idx.graph().neighbors(node, 0).len() <= cap0);
            }
        }
    }

    #[test]
    fn closest_only_selection_strands_clusters() {
        let ds = gen_clustered(800, 16, 4, 8.0, 21).unwrap();
        let cfg = |selection| BuildConfig {
            mode: IndexMode::ScalarQuant,
            selection,
            ..small_config(IndexMode::ScalarQuant)
        };
        let closest = GraphIndex::build(ds.clone(), &cfg(NeighborSelection::Closest)).unwrap().audit();
        let diverse = GraphIndex::build(ds, &cfg(NeighborSelection::Diverse)).unwrap().audit();
        assert!(closest.is_sound() && diverse.is_sound());
        assert!(closest.reachable_fraction() < 0.5, "{closest:?}");
        assert_eq!(diverse.isolated(), 0, "{diverse:?}");
    }

    #[test]
    fn modes_choose_parameters() {
        let ds = gen_clustered(600, 8, 4, 20.0, 9).unwrap();
        let (base, r) = GraphIndex::build_with_report(ds.clone(), &small_config(IndexMode::BaselineFp32)).unwrap();
        assert!(base.codes().is_none() && base.quant_params().is_none());
        assert_eq!(r.graph_params, GraphParams::base(8, 64));

        let (sq, _) = GraphIndex::build_with_report(ds.clone(), &small_config(IndexMode::ScalarQuant)).unwrap();
        let q = sq.quant_params().unwrap();
        assert_eq!((q.p_low, q.p_high), (0.0, 100.0));
        assert_eq!(sq.graph_params(), GraphParams::base(8, 64));
        assert_eq!(sq.codes().unwrap().byte_size(), 600 * 8);

        let (aqr, r) = GraphIndex::build_with_report(ds, &small_config(IndexMode::Aqr)).unwrap();
        let (delta, eta) = (r.delta.unwrap(), r.eta.unwrap());
        assert_eq!(aqr.graph_params(), GraphParams::adapted(8, 64, delta, eta));
        assert!(aqr.graph_params().m >= 8);
    }

    #[test]
    fn homogeneous_data_leaves_parameters_alone() {
        // every point has identical neighbor spacing: delta = 0
        let rows: Vec<[f32; 2]> = (0..200)
            .map(|i| {
                let t = i as f64 * std::f64::consts::TAU / 200.0;
                [(500.0 * t.cos()) as f32, (500.0 * t.sin()) as f32]
            })
            .collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        let (_, r) = GraphIndex::build_with_report(ds, &BuildConfig::default()).unwrap();
        assert!(r.delta.unwrap() < 1e-3);
        assert_eq!(r.graph_params.m, 16);
        assert_eq!(r.graph_params.ef_construction, 200);
    }

    #[test]
    fn build_is_deterministic() {
        let ds = gen_clustered(500, 12, 3, 5.0, 4).unwrap();
        let a = GraphIndex::build(ds.clone(), &small_config(IndexMode::Aqr)).unwrap();
        let b = GraphIndex::build(ds, &small_config(IndexMode::Aqr)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn rejects_bad_config() {
        let ds = gen_clustered(50, 4, 2, 2.0, 1).unwrap();
        let cfg = BuildConfig {
            m0: 1,
            ..Default::default()
        };
        assert!(GraphIndex::build(ds, &cfg).is_err());
        assert!("nope".parse::<IndexMode>().is_err());
        assert_eq!("sq".parse::<IndexMode>().unwrap(), IndexMode::ScalarQuant);
    }
}
