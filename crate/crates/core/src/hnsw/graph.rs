//! Layered proximity graph: topology, best-first layer search, and
//! incremental construction.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::kernels::KernelSet;
use crate::{Error, Result};

/// Levels above this are clamped; the draw would need probability below
/// `m^-MAX_LEVEL` to get here.
pub const MAX_LEVEL: usize = 48;

/// Largest base connectivity a build accepts. Adapted M is at most `3 * m0`.
pub const MAX_M0: usize = 512;
pub const MAX_M: usize = 3 * MAX_M0;

/// A distance paired with a node id, ordered by `(distance, id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub dist: f64,
    pub id: u32,
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

/// Vector storage the graph measures distances over.
pub trait Space {
    type Elem: Copy;

    fn vector(&self, id: u32) -> &[Self::Elem];

    fn dist(&self, q: &[Self::Elem], id: u32) -> f64;

    #[inline]
    fn prefetch(&self, _id: u32) {}
}

/// 8-bit codes; distances are the unscaled integer sums.
pub struct CodeSpace<'a> {
    pub codes: &'a [u8],
    pub d: usize,
    pub kernels: KernelSet,
}

impl Space for CodeSpace<'_> {
    type Elem = u8;

    #[inline]
    fn vector(&self, id: u32) -> &[u8] {
        let i = id as usize * self.d;
        &self.codes[i..i + self.d]
    }

    #[inline]
    fn dist(&self, q: &[u8], id: u32) -> f64 {
        self.kernels.sq_l2_u8(q, self.vector(id)) as f64
    }

    #[inline]
    fn prefetch(&self, id: u32) {
        prefetch_lines(self.codes.as_ptr().wrapping_add(id as usize * self.d), self.d);
    }
}

/// Full-precision vectors with exact squared distances.
pub struct FloatSpace<'a> {
    pub data: &'a [f32],
    pub d: usize,
    pub kernels: KernelSet,
}

impl<'a> FloatSpace<'a> {
    pub fn new(ds: &'a Dataset, kernels: KernelSet) -> Self {
        Self {
            data: ds.as_slice(),
            d: ds.dim(),
            kernels,
        }
    }
}

impl Space for FloatSpace<'_> {
    type Elem = f32;

    #[inline]
    fn vector(&self, id: u32) -> &[f32] {
        let i = id as usize * self.d;
        &self.data[i..i + self.d]
    }

    #[inline]
    fn dist(&self, q: &[f32], id: u32) -> f64 {
        self.kernels.sq_l2_f32(q, self.vector(id)) as f64
    }

    #[inline]
    fn prefetch(&self, id: u32) {
        prefetch_lines(self.data.as_ptr().wrapping_add(id as usize * self.d) as *const u8, self.d * 4);
    }
}

/// Prefetches every cache line of a `len`-byte vector.
#[inline(always)]
fn prefetch_lines(p: *const u8, len: usize) {
    let mut off = 0;
    while off < len {
        prefetch_ptr(p.wrapping_add(off));
        off += 64;
    }
}

#[inline(always)]
fn prefetch_ptr(p: *const u8) {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: prefetch never faults, whatever the address.
    unsafe {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        _mm_prefetch::<_MM_HINT_T0>(p as *const i8);
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = p;
}

/// Epoch-stamped visited set; clearing is O(1) amortized.
#[derive(Debug, Default)]
pub struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    pub fn clear(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// True when `id` was not yet visited.
    #[inline]
    pub fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

/// Reusable per-searcher buffers.
#[derive(Debug, Default)]
pub struct Scratch {
    pub visited: Visited,
    candidates: BinaryHeap<Reverse<Scored>>,
    results: BinaryHeap<Scored>,
    pending: Vec<u32>,
    /// Distance evaluations since the last reset by the caller.
    pub evals: u64,
}

/// Graph topology. Layer 0 holds every node in a flat, fixed-stride table;
/// upper layers are stored per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    m: usize,
    cap0: usize,
    n: usize,
    levels: Vec<u8>,
    links0: Vec<u32>,
    deg0: Vec<u32>,
    upper: Vec<Vec<Vec<u32>>>,
    entry_point: Option<u32>,
    max_layer: usize,
}

impl Graph {
    /// An edgeless graph over `n` node slots with connectivity `m`.
    pub fn new(n: usize, m: usize) -> Self {
        let cap0 = 2 * m;
        Self {
            m,
            cap0,
            n,
            levels: vec![0; n],
            links0: vec![0; n * cap0],
            deg0: vec![0; n],
            upper: vec![Vec::new(); n],
            entry_point: None,
            max_layer: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Degree cap at `layer`: `2m` at layer 0, `m` above.
    pub fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            self.cap0
        } else {
            self.m
        }
    }

    pub fn entry_point(&self) -> Option<u32> {
        self.entry_point
    }

    pub fn max_layer(&self) -> usize {
        self.max_layer
    }

    pub fn level(&self, node: u32) -> usize {
        self.levels[node as usize] as usize
    }

    #[inline]
    pub fn neighbors(&self, node: u32, layer: usize) -> &[u32] {
        let i = node as usize;
        if layer == 0 {
            let start = i * self.cap0;
            &self.links0[start..start + self.deg0[i] as usize]
        } else {
            &self.upper[i][layer - 1]
        }
    }

    /// Node ids present at `layer`, ascending.
    pub fn nodes_at(&self, layer: usize) -> impl Iterator<Item = u32> + '_ {
        (0..self.n as u32).filter(move |&i| self.levels[i as usize] as usize >= layer)
    }

    pub(crate) fn set_level(&mut self, node: u32, level: usize) {
        self.levels[node as usize] = level as u8;
        self.upper[node as usize] = vec![Vec::new(); level];
    }

    pub(crate) fn set_entry(&mut self, node: u32, max_layer: usize) {
        self.entry_point = Some(node);
        self.max_layer = max_layer;
    }

    pub(crate) fn set_neighbors(&mut self, node: u32, layer: usize, ids: &[u32]) {
        let i = node as usize;
        if layer == 0 {
            assert!(ids.len() <= self.cap0);
            let start = i * self.cap0;
            self.links0[start..start + ids.len()].copy_from_slice(ids);
            // unused slots stay zeroed so equal topologies compare equal
            self.links0[start + ids.len()..start + self.cap0].fill(0);
            self.deg0[i] = ids.len() as u32;
        } else {
            self.upper[i][layer - 1].clear();
            self.upper[i][layer - 1].extend_from_slice(ids);
        }
    }

    /// Best-first beam search at one layer. Returns up to `ef` nodes sorted
    /// ascending by `(distance, id)`.
    pub fn search_layer<S: Space>(
        &self,
        space: &S,
        q: &[S::Elem],
        entries: &[Scored],
        ef: usize,
        layer: usize,
        scratch: &mut Scratch,
    ) -> Vec<Scored> {
        let ef = ef.max(1);
        scratch.visited.clear(self.n);
        scratch.candidates.clear();
        scratch.results.clear();
        for &e in entries {
            if scratch.visited.insert(e.id) {
                scratch.candidates.push(Reverse(e));
                scratch.results.push(e);
                if scratch.results.len() > ef {
                    scratch.results.pop();
                }
            }
        }
        while let Some(Reverse(current)) = scratch.candidates.pop() {
            if scratch.results.len() >= ef {
                if let Some(worst) = scratch.results.peek() {
                    if current.dist > worst.dist {
                        break;
                    }
                }
            }
            if layer == 0 {
                if let Some(Reverse(next)) = scratch.candidates.peek() {
                    let start = next.id as usize * self.cap0;
                    prefetch_ptr(self.deg0.as_ptr().wrapping_add(next.id as usize) as *const u8);
                    prefetch_ptr(self.links0.as_ptr().wrapping_add(start) as *const u8);
                }
            }
            // unvisited neighbors are gathered and prefetched before any distance
            scratch.pending.clear();
            for &nb in self.neighbors(current.id, layer) {
                if scratch.visited.insert(nb) {
                    space.prefetch(nb);
                    scratch.pending.push(nb);
                }
            }
            for &nb in &scratch.pending {
                let s = Scored {
                    dist: space.dist(q, nb),
                    id: nb,
                };
                scratch.evals += 1;
                let admit = scratch.results.len() < ef || scratch.results.peek().is_some_and(|w| s < *w);
                if admit {
                    scratch.candidates.push(Reverse(s));
                    scratch.results.push(s);
                    if scratch.results.len() > ef {
                        scratch.results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = scratch.results.drain().collect();
        out.sort_unstable();
        out
    }

    /// Greedy descent from the entry point down to `stop_layer + 1`,
    /// returning the closest node found (the entry for `stop_layer`).
    pub fn descend<S: Space>(&self, space: &S, q: &[S::Elem], stop_layer: usize, scratch: &mut Scratch) -> Option<Scored> {
        let ep = self.entry_point?;
        let mut best = Scored {
            dist: space.dist(q, ep),
            id: ep,
        };
        scratch.evals += 1;
        let mut layer = self.max_layer;
        while layer > stop_layer {
            best = self.search_layer(space, q, &[best], 1, layer, scratch)[0];
            layer -= 1;
        }
        Some(best)
    }
}

/// Level for a uniform draw in `(0, 1]`: `floor(-ln(draw) / ln(m))`.
pub fn assign_level(draw: f64, m: usize) -> usize {
    let ml = 1.0 / (m.max(2) as f64).ln();
    let level = (-draw.ln() * ml).floor();
    if level.is_finite() && level > 0.0 {
        (level as usize).min(MAX_LEVEL)
    } else {
        0
    }
}

/// How a node's neighbor list is chosen from its candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborSelection {
    /// The `m` nearest candidates.
    Closest,
    /// Nearest-first, skipping candidates that are closer to an already
    /// kept neighbor than to the node itself.
    #[default]
    Diverse,
}

/// Incremental construction state. Keeps each edge's distance so pruning a
/// full neighbor list needs no extra distance evaluations.
pub struct Builder<S: Space> {
    graph: Graph,
    space: S,
    ef_construction: usize,
    rng: ChaCha8Rng,
    inserted: Vec<bool>,
    selection: NeighborSelection,
    dist0: Vec<f64>,
    dist_upper: Vec<Vec<Vec<f64>>>,
    scratch: Scratch,
}

impl<S: Space> Builder<S> {
    pub fn new(space: S, n: usize, m: usize, ef_construction: usize, rng: ChaCha8Rng) -> Self {
        let graph = Graph::new(n, m);
        Self {
            dist0: vec![0.0; n * graph.cap0],
            dist_upper: vec![Vec::new(); n],
            graph,
            space,
            ef_construction: ef_construction.max(1),
            rng,
            inserted: vec![false; n],
            selection: NeighborSelection::default(),
            scratch: Scratch::default(),
        }
    }

    pub fn with_selection(mut self, selection: NeighborSelection) -> Self {
        self.selection = selection;
        self
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    /// Distance evaluations performed so far.
    pub fn evals(&self) -> u64 {
        self.scratch.evals
    }

    /// Links node `id`, whose vector is already present in the space.
    pub fn insert(&mut self, id: u32) -> Result<()> {
        let idx = id as usize;
        if idx >= self.graph.n {
            return Err(Error::InvalidConfig(format!("node {id} out of range")));
        }
        if self.inserted[idx] {
            return Err(Error::DuplicateId(id));
        }
        self.inserted[idx] = true;

        // (0, 1]: never feeds ln(0)
        let draw = 1.0 - self.rng.random::<f64>();
        let level = assign_level(draw, self.graph.m);
        self.graph.set_level(id, level);
        self.dist_upper[idx] = vec![Vec::new(); level];

        let Some(_) = self.graph.entry_point else {
            self.graph.set_entry(id, level);
            return Ok(());
        };

        let q = self.space.vector(id);
        let top = self.graph.max_layer;
        let mut ep = vec![self
            .graph
            .descend(&self.space, q, level.min(top), &mut self.scratch)
            .expect("entry point exists")];

        let m = self.graph.m;
        let mut pending = Vec::with_capacity(level.min(top) + 1);
        for layer in (0..=level.min(top)).rev() {
            let found = self
                .graph
                .search_layer(&self.space, q, &ep, self.ef_construction, layer, &mut self.scratch);
            let selected = select_neighbors(&self.space, &mut self.scratch.evals, self.selection, &found, m);
            let ids: Vec<u32> = selected.iter().map(|s| s.id).collect();
            self.graph.set_neighbors(id, layer, &ids);
            let dists = selected.iter().map(|s| s.dist);
            if layer == 0 {
                let start = idx * self.graph.cap0;
                for (slot, d) in self.dist0[start..].iter_mut().zip(dists) {
                    *slot = d;
                }
            } else {
                self.dist_upper[idx][layer - 1] = dists.collect();
            }
            // reverse links on this layer never affect the search below it
            pending.push((layer, selected));
            ep = found;
        }
        for (layer, selected) in pending {
            for s in selected {
                self.add_reverse_link(s.id, id, s.dist, layer);
            }
        }
        if level > top {
            self.graph.set_entry(id, level);
        }
        Ok(())
    }

    /// Adds `new` to `node`'s list at `layer`. A full list is re-selected
    /// from its entries plus `new`.
    fn add_reverse_link(&mut self, node: u32, new: u32, dist: f64, layer: usize) {
        let i = node as usize;
        let cap = self.graph.cap(layer);
        let candidate = Scored { dist, id: new };
        let (links, dists): (&mut [u32], &mut [f64]) = if layer == 0 {
            let start = i * self.graph.cap0;
            let deg = self.graph.deg0[i] as usize;
            if deg < cap {
                self.graph.links0[start + deg] = new;
                self.dist0[start + deg] = dist;
                self.graph.deg0[i] += 1;
                return;
            }
            (
                &mut self.graph.links0[start..start + deg],
                &mut self.dist0[start..start + deg],
            )
        } else {
            let links = &mut self.graph.upper[i][layer - 1];
            let dists = &mut self.dist_upper[i][layer - 1];
            if links.len() < cap {
                links.push(new);
                dists.push(dist);
                return;
            }
            (links.as_mut_slice(), dists.as_mut_slice())
        };
        match self.selection {
            NeighborSelection::Closest => {
                let worst = (0..links.len())
                    .max_by_key(|&p| Scored {
                        dist: dists[p],
                        id: links[p],
                    })
                    .expect("full list is non-empty");
                if candidate
                    < (Scored {
                        dist: dists[worst],
                        id: links[worst],
                    })
                {
                    links[worst] = new;
                    dists[worst] = dist;
                }
            }
            NeighborSelection::Diverse => {
                let mut pool: Vec<Scored> = links
                    .iter()
                    .zip(dists.iter())
                    .map(|(&id, &dist)| Scored { dist, id })
                    .collect();
                pool.push(candidate);
                pool.sort_unstable();
                let kept = select_neighbors(&self.space, &mut self.scratch.evals, self.selection, &pool, cap);
                let ids: Vec<u32> = kept.iter().map(|s| s.id).collect();
                if layer == 0 {
                    let start = i * self.graph.cap0;
                    for (slot, s) in self.dist0[start..].iter_mut().zip(&kept) {
                        *slot = s.dist;
                    }
                } else {
                    self.dist_upper[i][layer - 1] = kept.iter().map(|s| s.dist).collect();
                }
                self.graph.set_neighbors(node, layer, &ids);
            }
        }
    }
}

/// Chooses up to `m` neighbors from `candidates` (ascending by distance to
/// the base node). `Diverse` keeps a candidate only if it is closer to the
/// base than to every neighbor already kept.
fn select_neighbors<S: Space>(
    space: &S,
    evals: &mut u64,
    selection: NeighborSelection,
    candidates: &[Scored],
    m: usize,
) -> Vec<Scored> {
    match selection {
        NeighborSelection::Closest => candidates[..candidates.len().min(m)].to_vec(),
        NeighborSelection::Diverse => {
            let mut kept: Vec<Scored> = Vec::with_capacity(m);
            for &c in candidates {
                if kept.len() >= m {
                    break;
                }
                let v = space.vector(c.id);
                let diverse = kept.iter().all(|r| {
                    *evals += 1;
                    space.dist(v, r.id) >= c.dist
                });
                if diverse {
                    kept.push(c);
                }
            }
            kept
        }
    }
}
