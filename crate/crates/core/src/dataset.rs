//! Vector storage, the fvecs/ivecs/bvecs file formats, and a synthetic
//! clustered generator.
//!
//! All formats are little-endian sequences of length-prefixed records:
//!
//! ```text
//! fvecs: repeated (i32 d, d x f32)
//! ivecs: repeated (i32 k, k x i32)
//! bvecs: repeated (i32 d, d x u8)
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// A dense row-major matrix of finite `f32` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl Dataset {
    /// Wraps a row-major buffer. Rejects empty data and non-finite values.
    pub fn new(d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if data.is_empty() {
            return Err(Error::Empty("dataset has no vectors"));
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: d,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                component: pos % d,
            });
        }
        Ok(Self {
            n: data.len() / d,
            d,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("dataset has no vectors"))?;
        let d = first.as_ref().len();
        let mut data = Vec::with_capacity(d * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::InconsistentDimension {
                    record: i,
                    expected: d,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(d, data)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    /// Always false: a dataset holds at least one vector.
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.d)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Size of the float payload in bytes.
    pub fn byte_size(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    /// The rows at `ids`, in the given order.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.d, data)
    }
}

/// Row-major matrix of 8-bit codes, one byte per dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedSet {
    n: usize,
    d: usize,
    codes: Vec<u8>,
}

impl QuantizedSet {
    pub fn new(d: usize, codes: Vec<u8>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !codes.len().is_multiple_of(d) {
            return Err(Error::LengthMismatch {
                left: codes.len(),
                right: d,
            });
        }
        Ok(Self {
            n: codes.len() / d,
            d,
            codes,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        &self.codes[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn as_slice(&self) -> &[u8] {
        &self.codes
    }

    /// Exactly `n * d`.
    pub fn byte_size(&self) -> usize {
        self.codes.len()
    }
}

/// Neighbor-id table as stored in ivecs files: one row of `width` ids per query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdMatrix {
    width: usize,
    ids: Vec<u32>,
}

impl IdMatrix {
    pub fn new(width: usize, ids: Vec<u32>) -> Result<Self> {
        if width == 0 && !ids.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if width > 0 && !ids.len().is_multiple_of(width) {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: width,
            });
        }
        Ok(Self { width, ids })
    }

    pub fn from_rows<R: AsRef<[u32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Ok(Self::default());
        };
        let width = first.as_ref().len();
        let mut ids = Vec::with_capacity(width * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::InconsistentDimension {
                    record: i,
                    expected: width,
                    found: row.len(),
                });
            }
            ids.extend_from_slice(row);
        }
        Self::new(width, ids)
    }

    pub fn rows_len(&self) -> usize {
        self.ids.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.rows_len()).map(move |i| self.row(i))
    }
}

struct Records<'a> {
    bytes: &'a [u8],
    pos: usize,
    elem_size: usize,
    expected: Option<usize>,
    index: usize,
}

impl<'a> Records<'a> {
    fn new(bytes: &'a [u8], elem_size: usize) -> Self {
        Self {
            bytes,
            pos: 0,
            elem_size,
            expected: None,
            index: 0,
        }
    }

    /// Next record payload, or `None` at a clean end of input.
    fn next_record(&mut self) -> Result<Option<&'a [u8]>> {
        let rest = &self.bytes[self.pos..];
        if rest.is_empty() {
            return Ok(None);
        }
        let Some(header) = rest.get(..4) else {
            return Err(Error::Truncated(format!(
                "record {} header has {} of 4 bytes",
                self.index,
                rest.len()
            )));
        };
        let dim = i32::from_le_bytes(header.try_into().unwrap());
        if dim <= 0 {
            return Err(Error::InvalidDimension(dim as i64));
        }
        let dim = dim as usize;
        match self.expected {
            None => self.expected = Some(dim),
            Some(expected) if expected != dim => {
                return Err(Error::InconsistentDimension {
                    record: self.index,
                    expected,
                    found: dim,
                })
            }
            _ => {}
        }
        let len = dim * self.elem_size;
        let Some(payload) = rest[4..].get(..len) else {
            return Err(Error::Truncated(format!(
                "record {} payload has {} of {} bytes",
                self.index,
                rest.len() - 4,
                len
            )));
        };
        self.pos += 4 + len;
        self.index += 1;
        Ok(Some(payload))
    }
}

/// Parses an in-memory fvecs image.
pub fn parse_fvecs(bytes: &[u8]) -> Result<Dataset> {
    let mut records = Records::new(bytes, 4);
    let mut data = Vec::new();
    while let Some(payload) = records.next_record()? {
        data.extend(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        );
    }
    let d = records.expected.ok_or(Error::Empty("fvecs input has no records"))?;
    Dataset::new(d, data)
}

/// Parses an in-memory bvecs image, widening codes to `f32`.
pub fn parse_bvecs(bytes: &[u8]) -> Result<Dataset> {
    let mut records = Records::new(bytes, 1);
    let mut data = Vec::new();
    while let Some(payload) = records.next_record()? {
        data.extend(payload.iter().map(|&b| b as f32));
    }
    let d = records.expected.ok_or(Error::Empty("bvecs input has no records"))?;
    Dataset::new(d, data)
}

/// Parses an in-memory ivecs image. An empty input yields zero rows.
pub fn parse_ivecs(bytes: &[u8]) -> Result<IdMatrix> {
    let mut records = Records::new(bytes, 4);
    let mut ids = Vec::new();
    while let Some(payload) = records.next_record()? {
        let row = records.index - 1;
        for c in payload.chunks_exact(4) {
            let v = i32::from_le_bytes(c.try_into().unwrap());
            if v < 0 {
                return Err(Error::NegativeId { row, value: v });
            }
            ids.push(v as u32);
        }
    }
    IdMatrix::new(records.expected.unwrap_or(0), ids)
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_fvecs(&fs::read(path)?)
}

pub fn load_bvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_bvecs(&fs::read(path)?)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<IdMatrix> {
    parse_ivecs(&fs::read(path)?)
}

pub fn write_fvecs<W: Write>(mut w: W, data: &Dataset) -> Result<()> {
    let header = (data.dim() as i32).to_le_bytes();
    for row in data.rows() {
        w.write_all(&header)?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ivecs<W: Write>(mut w: W, ids: &IdMatrix) -> Result<()> {
    let header = (ids.width() as i32).to_le_bytes();
    for row in ids.rows() {
        w.write_all(&header)?;
        for &v in row {
            let v = i32::try_from(v).map_err(|_| {
                Error::InvalidConfig(format!("id {v} does not fit the ivecs int32 payload"))
            })?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_fvecs(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_fvecs(BufWriter::new(fs::File::create(path)?), data)
}

pub fn save_ivecs(path: impl AsRef<Path>, ids: &IdMatrix) -> Result<()> {
    write_ivecs(BufWriter::new(fs::File::create(path)?), ids)
}

/// Latent dimensionality of each generated cluster. Points live near a
/// low-dimensional random subspace, as real descriptor sets do.
const LATENT_DIM: usize = 32;
/// Per-dimension isotropic noise, relative to the cluster scale.
const NOISE_RATIO: f64 = 0.05;
/// Spread of cluster centers and the scale of the broadest cluster.
const CENTER_SCALE: f64 = 20.0;
const MAX_SIGMA: f64 = 10.0;

struct ClusterModel {
    d: usize,
    latent: usize,
    centers: Vec<f64>,
    sigmas: Vec<f64>,
    // per cluster: latent x d basis, row-major, already scaled by the
    // latent axis standard deviations
    bases: Vec<f64>,
}

impl ClusterModel {
    fn new(d: usize, n_clusters: usize, spread_ratio: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latent = LATENT_DIM.min(d);
        let center_std = CENTER_SCALE / (d as f64).sqrt();
        let centers = (0..n_clusters * d)
            .map(|_| center_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let min_sigma = MAX_SIGMA / spread_ratio;
        let sigmas = (0..n_clusters)
            .map(|c| {
                if n_clusters == 1 {
                    MAX_SIGMA
                } else {
                    let t = c as f64 / (n_clusters - 1) as f64;
                    min_sigma * spread_ratio.powf(t)
                }
            })
            .collect();
        let col_std = 1.0 / (d as f64).sqrt();
        let mut bases = Vec::with_capacity(n_clusters * latent * d);
        for _ in 0..n_clusters {
            for t in 0..latent {
                // power-law latent spectrum: variance of axis t is 1/(1+t)
                let axis = (1.0 + t as f64).powf(-0.5) * col_std;
                for _ in 0..d {
                    bases.push(axis * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        Self {
            d,
            latent,
            centers,
            sigmas,
            bases,
        }
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let (d, latent) = (self.d, self.latent);
        let n_clusters = self.sigmas.len();
        let mut out = Vec::with_capacity(n * d);
        let mut point = vec![0.0f64; d];
        let mut z = vec![0.0f64; latent];
        for _ in 0..n {
            let c = rng.random_range(0..n_clusters);
            let sigma = self.sigmas[c];
            point.copy_from_slice(&self.centers[c * d..(c + 1) * d]);
            for zt in z.iter_mut() {
                *zt = rng.sample::<f64, _>(StandardNormal);
            }
            let basis = &self.bases[c * latent * d..(c + 1) * latent * d];
            for (t, &zt) in z.iter().enumerate() {
                let s = sigma * zt;
                for (p, b) in point.iter_mut().zip(&basis[t * d..(t + 1) * d]) {
                    *p += s * b;
                }
            }
            let noise = sigma * NOISE_RATIO / (d as f64).sqrt();
            for p in point.iter_mut() {
                *p += noise * rng.sample::<f64, _>(StandardNormal);
                out.push(*p as f32);
            }
        }
        out
    }
}

fn check_cluster_args(n: usize, d: usize, n_clusters: usize, spread_ratio: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if n_clusters == 0 || n < n_clusters {
        return Err(Error::InvalidConfig(format!(
            "need n >= n_clusters >= 1, got n={n}, n_clusters={n_clusters}"
        )));
    }
    if !(spread_ratio.is_finite() && spread_ratio > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "spread_ratio must be positive, got {spread_ratio}"
        )));
    }
    Ok(())
}

/// Gaussian clusters whose per-cluster scales are geometrically spaced over
/// a factor of `spread_ratio`, so local density varies across the set.
///
/// Each cluster is an anisotropic Gaussian concentrated near a random
/// low-dimensional subspace plus a small isotropic component. The output is
/// a pure function of the arguments.
pub fn gen_clustered(
    n: usize,
    d: usize,
    n_clusters: usize,
    spread_ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    check_cluster_args(n, d, n_clusters, spread_ratio)?;
    let model = ClusterModel::new(d, n_clusters, spread_ratio, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Dataset::new(d, model.sample(n, &mut rng))
}

/// Queries drawn from the same cluster model as [`gen_clustered`] with the
/// same arguments, from an independent random stream.
pub fn gen_clustered_queries(
    n_queries: usize,
    d: usize,
    n_clusters: usize,
    spread_ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    check_cluster_args(n_queries.max(n_clusters), d, n_clusters, spread_ratio)?;
    if n_queries == 0 {
        return Err(Error::Empty("query count is zero"));
    }
    let model = ClusterModel::new(d, n_clusters, spread_ratio, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    Dataset::new(d, model.sample(n_queries, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fvecs_bytes(rows: &[&[f32]]) -> Vec<u8> {
        let mut out = Vec::new();
        for r in rows {
            out.extend_from_slice(&(r.len() as i32).to_le_bytes());
            for v in *r {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn single_fvecs_record() {
        let ds = parse_fvecs(&fvecs_bytes(&[&[1.0, 2.0]])).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn fvecs_inconsistent_dimension() {
        let err = parse_fvecs(&fvecs_bytes(&[&[1.0, 2.0], &[1.0, 2.0, 3.0]])).unwrap_err();
        assert!(matches!(err, Error::InconsistentDimension { record: 1, .. }));
        assert!(err.to_string().contains("inconsistent dimension"));
    }

    #[test]
    fn fvecs_truncated_and_bad_header() {
        let mut bytes = fvecs_bytes(&[&[1.0, 2.0]]);
        bytes.pop();
        assert!(matches!(parse_fvecs(&bytes), Err(Error::Truncated(_))));
        assert!(matches!(parse_fvecs(&[1, 0]), Err(Error::Truncated(_))));
        assert!(matches!(
            parse_fvecs(&0i32.to_le_bytes()),
            Err(Error::InvalidDimension(0))
        ));
        assert!(matches!(
            parse_fvecs(&(-3i32).to_le_bytes()),
            Err(Error::InvalidDimension(-3))
        ));
        assert!(matches!(parse_fvecs(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn fvecs_rejects_non_finite() {
        let err = parse_fvecs(&fvecs_bytes(&[&[1.0, 2.0], &[f32::NAN, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, component: 0 }));
        assert!(parse_fvecs(&fvecs_bytes(&[&[f32::INFINITY]])).is_err());
    }

    #[test]
    fn ivecs_cases() {
        let mut bytes = Vec::new();
        for v in [3i32, 5, 9, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = parse_ivecs(&bytes).unwrap();
        assert_eq!(m.rows_len(), 1);
        assert_eq!(m.row(0), &[5, 9, 2]);

        let empty = parse_ivecs(&[]).unwrap();
        assert_eq!(empty.rows_len(), 0);

        let mut neg = Vec::new();
        for v in [1i32, -1] {
            neg.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(parse_ivecs(&neg), Err(Error::NegativeId { .. })));
    }

    #[test]
    fn bvecs_widens() {
        let bytes = [3u8, 0, 0, 0, 0, 128, 255];
        let ds = parse_bvecs(&bytes).unwrap();
        assert_eq!(ds.row(0), &[0.0, 128.0, 255.0]);
    }

    #[test]
    fn quantized_set_is_one_byte_per_component() {
        let q = QuantizedSet::new(4, vec![0; 40]).unwrap();
        assert_eq!(q.len(), 10);
        assert_eq!(q.byte_size(), 40);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = gen_clustered(500, 16, 4, 10.0, 7).unwrap();
        let b = gen_clustered(500, 16, 4, 10.0, 7).unwrap();
        let c = gen_clustered(500, 16, 4, 10.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let q = gen_clustered_queries(50, 16, 4, 10.0, 7).unwrap();
        assert_ne!(q.row(0), a.row(0));
    }

    #[test]
    fn generator_preconditions() {
        assert!(gen_clustered(3, 4, 5, 2.0, 0).is_err());
        assert!(gen_clustered(10, 4, 0, 2.0, 0).is_err());
        assert!(gen_clustered(10, 4, 2, 0.0, 0).is_err());
        assert!(gen_clustered(10, 0, 2, 1.0, 0).is_err());
    }
}
