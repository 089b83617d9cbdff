//! Binary index format (little-endian):
//!
//! ```text
//! "AQR1" | version u32 | mode u8
//! m u32 | ef_construction u32 | m0 u32 | ef0 u32
//! d_q u32 | mins f64[d_q] | maxs f64[d_q] | scales f64[d_q]
//!         | s_dist f64 | p_low f64 | p_high f64 | p_max f64 | epsilon f64   (only if d_q > 0)
//! n u64 | d u32 | codes u8[n*d_q] | raw f32[n*d]
//! max_layer u32 | entry_point u32
//! per layer 0..=max_layer: count u32, then count x (node u32, degree u32, ids u32[degree])
//! crc32 u32 over everything before it
//! ```
//!
//! Layer 0 lists every node; each upper layer lists a subset of the one
//! below, in ascending node order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataset::{Dataset, QuantizedSet};
use crate::quantizer::{GraphParams, QuantizationParams};
use crate::{Error, Result};

use super::graph::{Graph, MAX_LEVEL, MAX_M, MAX_M0};
use super::{GraphIndex, IndexMode};

pub const MAGIC: &[u8; 4] = b"AQR1";
pub const FORMAT_VERSION: u32 = 1;

/// Bytes of layer-0 table a file may claim beyond 64 times its own size.
const LAYER0_ALLOWANCE: u64 = 1 << 26;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::Truncated(format!("{what} at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Bounds-checks `count * width` against what is left before allocating.
    fn reserve(&self, count: u64, width: u64, what: &str) -> Result<usize> {
        let left = (self.buf.len() - self.pos) as u64;
        match count.checked_mul(width) {
            Some(bytes) if bytes <= left => Ok(count as usize),
            _ => Err(Error::Truncated(format!("{what}: {count} entries exceed remaining {left} bytes"))),
        }
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        self.reserve(count as u64, 8, what)?;
        let bytes = self.take(count * 8, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl GraphIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let d = self.dim();
        let d_q = self.quant.as_ref().map_or(0, |q| q.d);
        let mut out = Vec::with_capacity(64 + n * (d_q + 4 * d + 8 * self.graph.m()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.mode.to_byte());
        let gp = self.graph_params;
        for v in [gp.m, gp.ef_construction, gp.m0, gp.ef0] {
            put_u32(&mut out, v);
        }
        put_u32(&mut out, d_q);
        if let Some(q) = &self.quant {
            for v in q.mins.iter().chain(&q.maxs).chain(&q.scales) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in [q.s_dist, q.p_low, q.p_high, q.p_max, q.epsilon] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(n as u64).to_le_bytes());
        put_u32(&mut out, d);
        if let Some(c) = &self.codes {
            out.extend_from_slice(c.as_slice());
        }
        for v in self.raw.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let g = &self.graph;
        put_u32(&mut out, g.max_layer());
        put_u32(&mut out, g.entry_point().unwrap_or(0) as usize);
        for layer in 0..=g.max_layer() {
            let count_at = out.len();
            put_u32(&mut out, 0);
            let mut count = 0;
            for node in g.nodes_at(layer) {
                let nbrs = g.neighbors(node, layer);
                put_u32(&mut out, node as usize);
                put_u32(&mut out, nbrs.len());
                for &nb in nbrs {
                    out.extend_from_slice(&nb.to_le_bytes());
                }
                count += 1;
            }
            out[count_at..count_at + 4].copy_from_slice(&(count as u32).to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Parses and fully validates a serialized index. Never panics on
    /// malformed input.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(Error::Truncated("header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        parse_body(body)
    }
}

fn parse_body(body: &[u8]) -> Result<GraphIndex> {
    let mut r = Reader { buf: body, pos: 8 };
    let mode_byte = r.u8("mode")?;
    let mode = IndexMode::from_byte(mode_byte).ok_or_else(|| corrupt(format!("unknown mode byte {mode_byte}")))?;

    let m = r.u32("m")? as usize;
    let ef_construction = r.u32("ef_construction")? as usize;
    let m0 = r.u32("m0")? as usize;
    let ef0 = r.u32("ef0")? as usize;
    if !(2..=MAX_M).contains(&m) || !(2..=MAX_M0).contains(&m0) || ef_construction == 0 || ef0 == 0 {
        return Err(corrupt("graph parameters out of range"));
    }
    let graph_params = GraphParams {
        m,
        ef_construction,
        m0,
        ef0,
    };

    let d_q = r.u32("d_q")? as usize;
    if mode.is_quantized() != (d_q > 0) {
        return Err(corrupt(format!("mode {mode} with quantizer dimension {d_q}")));
    }
    let quant = if d_q > 0 {
        r.reserve(d_q as u64, 24, "quantizer ranges")?;
        let mins = r.f64s(d_q, "mins")?;
        let maxs = r.f64s(d_q, "maxs")?;
        let scales = r.f64s(d_q, "scales")?;
        let s_dist = r.f64("s_dist")?;
        let p_low = r.f64("p_low")?;
        let p_high = r.f64("p_high")?;
        let p_max = r.f64("p_max")?;
        let epsilon = r.f64("epsilon")?;
        let q = QuantizationParams::from_parts(mins, maxs, scales, s_dist, p_low, p_high, p_max, epsilon)
            .map_err(|e| corrupt(format!("quantizer: {e}")))?;
        Some(q)
    } else {
        None
    };

    let n = r.u64("n")?;
    let d = r.u32("d")? as usize;
    if n == 0 || n > u32::MAX as u64 {
        return Err(corrupt(format!("vector count {n}")));
    }
    if d == 0 || (d_q > 0 && d_q != d) {
        return Err(corrupt(format!("dimension {d} with quantizer dimension {d_q}")));
    }
    let codes = if d_q > 0 {
        let len = r.reserve(n, d_q as u64, "codes")? * d_q;
        let bytes = r.take(len, "codes")?.to_vec();
        Some(QuantizedSet::new(d_q, bytes).map_err(|e| corrupt(format!("codes: {e}")))?)
    } else {
        None
    };
    let floats = r.reserve(n, 4 * d as u64, "vectors")? * d;
    let raw_bytes = r.take(floats * 4, "vectors")?;
    let data = raw_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let raw = Dataset::new(d, data).map_err(|e| corrupt(format!("vectors: {e}")))?;
    let n = n as usize;

    // the layer-0 table is dense, so bound it by what the file could plausibly describe
    if (n as u64) * 8 * m as u64 > LAYER0_ALLOWANCE + 64 * body.len() as u64 {
        return Err(corrupt(format!("layer-0 table for {n} nodes at M={m} is implausible for a {} byte file", body.len() + 4)));
    }

    let max_layer = r.u32("max_layer")? as usize;
    let entry = r.u32("entry_point")?;
    if max_layer > MAX_LEVEL {
        return Err(corrupt(format!("max layer {max_layer}")));
    }
    if entry as usize >= n {
        return Err(corrupt(format!("entry point {entry} out of range")));
    }

    // adjacency lists per layer, validated before the graph is assembled
    let mut levels = vec![0usize; n];
    let mut layers: Vec<Vec<(u32, Vec<u32>)>> = Vec::with_capacity(max_layer + 1);
    for layer in 0..=max_layer {
        let count = r.u32("layer size")? as usize;
        if layer == 0 && count != n {
            return Err(corrupt(format!("layer 0 lists {count} of {n} nodes")));
        }
        if layer > 0 && count == 0 {
            return Err(corrupt(format!("layer {layer} is empty")));
        }
        r.reserve(count as u64, 8, "layer")?;
        let cap = if layer == 0 { 2 * m } else { m };
        let mut lists = Vec::with_capacity(count);
        let mut prev: Option<u32> = None;
        for _ in 0..count {
            let node = r.u32("node id")?;
            if node as usize >= n || prev.is_some_and(|p| node <= p) {
                return Err(corrupt(format!("layer {layer}: node {node} out of order or range")));
            }
            if layer > 0 && levels[node as usize] != layer - 1 {
                return Err(corrupt(format!("layer {layer}: node {node} missing from layer below")));
            }
            prev = Some(node);
            levels[node as usize] = layer;
            let degree = r.u32("degree")? as usize;
            if degree > cap {
                return Err(corrupt(format!("layer {layer}: node {node} degree {degree} exceeds {cap}")));
            }
            r.reserve(degree as u64, 4, "neighbors")?;
            let ids: Vec<u32> = r
                .take(degree * 4, "neighbors")?
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            lists.push((node, ids));
        }
        layers.push(lists);
    }
    if r.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if levels[entry as usize] != max_layer {
        return Err(corrupt("entry point is not on the top layer"));
    }

    let mut graph = Graph::new(n, m);
    for (node, &level) in levels.iter().enumerate() {
        graph.set_level(node as u32, level);
    }
    let mut seen = vec![usize::MAX; n];
    for (layer, lists) in layers.iter().enumerate() {
        for (node, ids) in lists {
            for &nb in ids {
                let stamp = layer * n + *node as usize;
                if nb as usize >= n || nb == *node || levels[nb as usize] < layer || seen[nb as usize] == stamp {
                    return Err(corrupt(format!("layer {layer}: bad edge {node} -> {nb}")));
                }
                seen[nb as usize] = stamp;
            }
            graph.set_neighbors(*node, layer, ids);
        }
    }
    graph.set_entry(entry, max_layer);

    Ok(GraphIndex::from_parts(mode, graph_params, quant, codes, raw, graph))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_clustered;
    use crate::hnsw::BuildConfig;

    fn index(mode: IndexMode) -> GraphIndex {
        let ds = gen_clustered(300, 6, 3, 5.0, 11).unwrap();
        let cfg = BuildConfig {
            mode,
            m0: 6,
            ef0: 40,
            ..Default::default()
        };
        GraphIndex::build(ds, &cfg).unwrap()
    }

    fn reseal(body: &mut Vec<u8>) {
        body.truncate(body.len() - 4);
        let crc = crc32fast::hash(body);
        body.extend_from_slice(&crc.to_le_bytes());
    }

    #[test]
    fn round_trip_every_mode() {
        for mode in [IndexMode::BaselineFp32, IndexMode::ScalarQuant, IndexMode::Aqr] {
            let idx = index(mode);
            let bytes = idx.to_bytes();
            let back = GraphIndex::from_bytes(&bytes).unwrap();
            assert_eq!(back, idx);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn header_errors() {
        assert!(matches!(GraphIndex::from_bytes(b""), Err(Error::BadMagic)));
        assert!(matches!(GraphIndex::from_bytes(b"RIFF...."), Err(Error::BadMagic)));
        let mut bytes = index(IndexMode::Aqr).to_bytes();
        bytes[4] = 9;
        assert!(matches!(GraphIndex::from_bytes(&bytes), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn any_flipped_byte_is_caught() {
        let bytes = index(IndexMode::Aqr).to_bytes();
        for pos in (8..bytes.len()).step_by(97) {
            let mut b = bytes.clone();
            b[pos] ^= 0x40;
            assert!(GraphIndex::from_bytes(&b).is_err(), "flip at {pos}");
        }
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = index(IndexMode::ScalarQuant).to_bytes();
        for cut in [5, 13, 40, bytes.len() / 2, bytes.len() - 5] {
            let mut b = bytes[..cut].to_vec();
            if b.len() >= 12 {
                b.extend_from_slice(&[0; 4]);
                reseal(&mut b);
            }
            let err = GraphIndex::from_bytes(&b).unwrap_err();
            assert!(
                matches!(err, Error::Truncated(_) | Error::Corrupt(_)),
                "cut {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn structural_corruption_behind_valid_checksum() {
        let idx = index(IndexMode::BaselineFp32);
        let mut bytes = idx.to_bytes();
        // point the first layer-0 edge back at its own node
        let d = idx.dim();
        let graph_start = 4 + 4 + 1 + 16 + 4 + 8 + 4 + idx.len() * d * 4 + 8 + 4;
        let first_node = &bytes[graph_start..graph_start + 4].to_vec();
        bytes[graph_start + 8..graph_start + 12].copy_from_slice(first_node);
        reseal(&mut bytes);
        assert!(matches!(GraphIndex::from_bytes(&bytes), Err(Error::Corrupt(_))));

        // huge claimed sizes must not allocate
        let mut bytes = idx.to_bytes();
        bytes[29..37].copy_from_slice(&(u32::MAX as u64).to_le_bytes());
        reseal(&mut bytes);
        assert!(GraphIndex::from_bytes(&bytes).is_err());

        // connectivity drives a dense per-node table
        for m in [u32::MAX, MAX_M as u32 + 1] {
            let mut bytes = idx.to_bytes();
            bytes[9..13].copy_from_slice(&m.to_le_bytes());
            reseal(&mut bytes);
            assert!(matches!(GraphIndex::from_bytes(&bytes), Err(Error::Corrupt(_))), "m = {m}");
        }
    }

    #[test]
    fn implausible_layer0_table_is_rejected() {
        let ds = Dataset::new(1, (0..8000).map(|i| i as f32).collect()).unwrap();
        let cfg = BuildConfig {
            mode: IndexMode::BaselineFp32,
            m0: 2,
            ef0: 4,
            ..Default::default()
        };
        let idx = GraphIndex::build(ds, &cfg).unwrap();
        let mut bytes = idx.to_bytes();
        assert!(GraphIndex::from_bytes(&bytes).is_ok());
        bytes[9..13].copy_from_slice(&(MAX_M as u32).to_le_bytes());
        reseal(&mut bytes);
        let err = GraphIndex::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("implausible"), "{err}");
    }

    #[test]
    fn build_rejects_oversized_connectivity() {
        let ds = gen_clustered(50, 4, 2, 2.0, 1).unwrap();
        let cfg = BuildConfig {
            m0: MAX_M0 + 1,
            ..Default::default()
        };
        assert!(matches!(GraphIndex::build(ds, &cfg), Err(Error::InvalidConfig(_))));
    }
}
