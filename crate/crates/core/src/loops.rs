//! Banks of unit Brownian bridges.
//!
//! Loop `i` of an ensemble is drawn from its own ChaCha8 stream
//! (`seed_from_u64(seed)`, stream `i`), so any single loop can be regenerated
//! without touching the others and generation parallelizes without changing
//! results. An ensemble can be fully materialized in memory or kept lazy, in
//! which case loops are regenerated on demand.
//!
//! # Cache file layout
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 8 | magic `b"WLLOOPS\0"` |
//! | 8 | 4 | format version (`u32`, currently 1) |
//! | 12 | 4 | scheme (`u32`: 0 incremental, 1 bisection) |
//! | 16 | 8 | count `L` (`u64`) |
//! | 24 | 8 | points `M` (`u64`) |
//! | 32 | 8 | dimension `d` (`u64`) |
//! | 40 | 8 | seed (`u64`) |
//! | 48 | `8·L·(M+1)·d` | samples as `f64`, loop-major, then point, then coordinate |

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::DiscretizedLoop;

const MAGIC: &[u8; 8] = b"WLLOOPS\0";
const VERSION: u32 = 1;

/// Materialized ensembles larger than this are refused.
pub const MAX_MATERIALIZED_BYTES: u64 = 2 << 30;

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("loop count must be at least 1")]
    EmptyEnsemble,
    #[error("a loop needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("bisection needs a power-of-two point count, got {0}")]
    NotPowerOfTwo(usize),
    #[error("ensemble of {count} loops x {points} points x {dimension} dims needs {bytes} bytes, above the {limit} byte limit")]
    ResourceExhausted { count: usize, points: usize, dimension: usize, bytes: u64, limit: u64 },
    #[error("loop index {index} out of range for {count} loops")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("base point has {got} coordinates, ensemble has {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("beta must be finite and nonnegative, got {0}")]
    InvalidBeta(f64),
    #[error("refinement requires the bisection scheme")]
    RefinementNeedsBisection,
    #[error("cache file: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Cumulative Gaussian increments with the endpoint drift removed.
    Incremental,
    /// Lévy midpoint displacement; refining to `2M` keeps the existing points.
    Bisection,
}

impl Scheme {
    fn code(self) -> u32 {
        match self {
            Scheme::Incremental => 0,
            Scheme::Bisection => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Scheme::Incremental),
            1 => Some(Scheme::Bisection),
            _ => None,
        }
    }
}

/// Per-loop random stream.
pub fn loop_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Writes unit loop `index` into `out`, which must hold `(points+1)·dim` values.
pub fn generate_unit_loop(seed: u64, index: usize, points: usize, dim: usize, scheme: Scheme, out: &mut [f64]) {
    assert_eq!(out.len(), (points + 1) * dim);
    let mut rng = loop_rng(seed, index);
    match scheme {
        Scheme::Incremental => {
            let sd = (1.0 / points as f64).sqrt();
            out[..dim].fill(0.0);
            for k in 1..=points {
                for c in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    out[k * dim + c] = out[(k - 1) * dim + c] + sd * z;
                }
            }
            for c in 0..dim {
                let end = out[points * dim + c];
                for k in 0..=points {
                    out[k * dim + c] -= k as f64 / points as f64 * end;
                }
                out[points * dim + c] = 0.0;
            }
        }
        Scheme::Bisection => {
            debug_assert!(points.is_power_of_two());
            out[..dim].fill(0.0);
            out[points * dim..].fill(0.0);
            // Level by level, left to right, so a longer run of the same
            // stream only appends finer levels.
            let mut span = points;
            while span > 1 {
                let half = span / 2;
                let sd = (span as f64 / points as f64 / 4.0).sqrt();
                let mut left = 0;
                while left < points {
                    let mid = left + half;
                    let right = left + span;
                    for c in 0..dim {
                        let z: f64 = rng.sample(StandardNormal);
                        out[mid * dim + c] = 0.5 * (out[left * dim + c] + out[right * dim + c]) + sd * z;
                    }
                    left = right;
                }
                span = half;
            }
        }
    }
}

/// A bank of `L` unit bridges with `M` steps in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopEnsemble {
    count: usize,
    points: usize,
    dim: usize,
    seed: u64,
    scheme: Scheme,
    samples: Option<Vec<f64>>,
}

impl LoopEnsemble {
    /// Generates and stores every loop.
    pub fn generate(count: usize, points: usize, dim: usize, seed: u64, scheme: Scheme) -> Result<Self, LoopError> {
        let mut e = Self::lazy(count, points, dim, seed, scheme)?;
        let bytes = e.storage_bytes().filter(|b| *b <= MAX_MATERIALIZED_BYTES).ok_or(LoopError::ResourceExhausted {
            count,
            points,
            dimension: dim,
            bytes: e.storage_bytes().unwrap_or(u64::MAX),
            limit: MAX_MATERIALIZED_BYTES,
        })?;
        let stride = (points + 1) * dim;
        let mut samples = Vec::new();
        samples.try_reserve_exact(bytes as usize / 8).map_err(|_| LoopError::ResourceExhausted {
            count,
            points,
            dimension: dim,
            bytes,
            limit: MAX_MATERIALIZED_BYTES,
        })?;
        samples.resize(count * stride, 0.0);
        samples.par_chunks_mut(stride).enumerate().for_each(|(i, chunk)| {
            generate_unit_loop(seed, i, points, dim, scheme, chunk);
        });
        e.samples = Some(samples);
        Ok(e)
    }

    /// Describes the ensemble without storing it; loops are regenerated on access.
    pub fn lazy(count: usize, points: usize, dim: usize, seed: u64, scheme: Scheme) -> Result<Self, LoopError> {
        if count == 0 {
            return Err(LoopError::EmptyEnsemble);
        }
        if points < 2 {
            return Err(LoopError::TooFewPoints(points));
        }
        if dim == 0 {
            return Err(LoopError::ZeroDimension);
        }
        if scheme == Scheme::Bisection && !points.is_power_of_two() {
            return Err(LoopError::NotPowerOfTwo(points));
        }
        Ok(LoopEnsemble { count, points, dim, seed, scheme, samples: None })
    }

    fn storage_bytes(&self) -> Option<u64> {
        (self.count as u64).checked_mul(self.points as u64 + 1)?.checked_mul(self.dim as u64)?.checked_mul(8)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn is_materialized(&self) -> bool {
        self.samples.is_some()
    }

    /// Values per loop, `(M+1)·d`.
    pub fn loop_len(&self) -> usize {
        (self.points + 1) * self.dim
    }

    /// Unit samples of loop `index`, borrowed when materialized.
    pub fn unit_loop(&self, index: usize) -> Result<Cow<'_, [f64]>, LoopError> {
        self.check_index(index)?;
        let n = self.loop_len();
        Ok(match &self.samples {
            Some(s) => Cow::Borrowed(&s[index * n..(index + 1) * n]),
            None => {
                let mut v = vec![0.0; n];
                generate_unit_loop(self.seed, index, self.points, self.dim, self.scheme, &mut v);
                Cow::Owned(v)
            }
        })
    }

    /// Like [`unit_loop`](Self::unit_loop) but reusing a caller buffer.
    pub fn unit_loop_into(&self, index: usize, out: &mut Vec<f64>) -> Result<(), LoopError> {
        self.check_index(index)?;
        let n = self.loop_len();
        out.resize(n, 0.0);
        match &self.samples {
            Some(s) => out.copy_from_slice(&s[index * n..(index + 1) * n]),
            None => generate_unit_loop(self.seed, index, self.points, self.dim, self.scheme, out),
        }
        Ok(())
    }

    /// Loop `index` placed at `x` with proper time `beta`.
    pub fn physical_loop(&self, index: usize, x: &[f64], beta: f64) -> Result<DiscretizedLoop<'_>, LoopError> {
        if x.len() != self.dim {
            return Err(LoopError::DimensionMismatch { got: x.len(), expected: self.dim });
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(LoopError::InvalidBeta(beta));
        }
        Ok(DiscretizedLoop::new(x.to_vec(), beta, self.unit_loop(index)?, 1))
    }

    /// The same loops at `2M` points; the even-indexed points reproduce this
    /// ensemble bitwise.
    pub fn refine(&self) -> Result<LoopEnsemble, LoopError> {
        if self.scheme != Scheme::Bisection {
            return Err(LoopError::RefinementNeedsBisection);
        }
        let fine = Self::lazy(self.count, self.points * 2, self.dim, self.seed, self.scheme)?;
        if self.is_materialized() {
            Self::generate(self.count, self.points * 2, self.dim, self.seed, self.scheme)
        } else {
            Ok(fine)
        }
    }

    fn check_index(&self, index: usize) -> Result<(), LoopError> {
        if index >= self.count {
            Err(LoopError::IndexOutOfRange { index, count: self.count })
        } else {
            Ok(())
        }
    }

    /// Writes the ensemble in the cache format described in the module docs.
    pub fn write_cache(&self, path: &Path) -> Result<(), LoopError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.scheme.code().to_le_bytes())?;
        for v in [self.count as u64, self.points as u64, self.dim as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::new();
        for i in 0..self.count {
            self.unit_loop_into(i, &mut buf)?;
            for v in &buf {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache file into a materialized ensemble.
    pub fn read_cache(path: &Path) -> Result<LoopEnsemble, LoopError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LoopError::Cache("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(LoopError::Cache(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b4)?;
        let scheme = Scheme::from_code(u32::from_le_bytes(b4)).ok_or(LoopError::Cache("unknown scheme".into()))?;
        let mut b8 = [0u8; 8];
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut b8)?;
            *h = u64::from_le_bytes(b8);
        }
        let [count, points, dim, seed] = header;
        let mut e = Self::lazy(count as usize, points as usize, dim as usize, seed, scheme)?;
        let bytes = e.storage_bytes().filter(|b| *b <= MAX_MATERIALIZED_BYTES).ok_or(LoopError::ResourceExhausted {
            count: count as usize,
            points: points as usize,
            dimension: dim as usize,
            bytes: e.storage_bytes().unwrap_or(u64::MAX),
            limit: MAX_MATERIALIZED_BYTES,
        })?;
        let mut raw = vec![0u8; bytes as usize];
        r.read_exact(&mut raw).map_err(|_| LoopError::Cache("truncated sample block".into()))?;
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(LoopError::Cache("trailing bytes after sample block".into()));
        }
        e.samples = Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loops_are_closed() {
        for scheme in [Scheme::Incremental, Scheme::Bisection] {
            let e = LoopEnsemble::generate(20, 64, 3, 9, scheme).unwrap();
            for i in 0..20 {
                let u = e.unit_loop(i).unwrap();
                assert!(u[..3].iter().all(|v| *v == 0.0));
                assert!(u[64 * 3..].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn midpoint_variance_is_one_quarter() {
        for scheme in [Scheme::Incremental, Scheme::Bisection] {
            let n = 40_000;
            let e = LoopEnsemble::generate(n, 2, 1, 123, scheme).unwrap();
            let xs: Vec<f64> = (0..n).map(|i| e.unit_loop(i).unwrap()[1]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 5.0 / (n as f64).sqrt());
            // Standard error of a Gaussian sample variance: var·√(2/(n-1)).
            assert!((var - 0.25).abs() < 5.0 * 0.25 * (2.0 / n as f64).sqrt(), "{scheme:?} {var}");
        }
    }

    #[test]
    fn bridge_covariance_at_interior_times() {
        let (n, m) = (20_000, 16);
        for scheme in [Scheme::Incremental, Scheme::Bisection] {
            let e = LoopEnsemble::lazy(n, m, 2, 77, scheme).unwrap();
            let mut buf = Vec::new();
            let mut sum = vec![0.0; (m + 1) * 2];
            let mut sq = vec![0.0; (m + 1) * 2];
            for i in 0..n {
                e.unit_loop_into(i, &mut buf).unwrap();
                for (j, v) in buf.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            for k in 1..m {
                let t = k as f64 / m as f64;
                for c in 0..2 {
                    let j = k * 2 + c;
                    let mean = sum[j] / n as f64;
                    let var = sq[j] / n as f64 - mean * mean;
                    let expected = t * (1.0 - t);
                    assert!(mean.abs() <= 5.0 / (n as f64).sqrt());
                    assert!((var - expected).abs() < 5.0 * expected * (2.0 / n as f64).sqrt());
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = LoopEnsemble::generate(50, 32, 2, 5, Scheme::Bisection).unwrap();
        let b = LoopEnsemble::generate(50, 32, 2, 5, Scheme::Bisection).unwrap();
        assert_eq!(a, b);
        let lazy = LoopEnsemble::lazy(50, 32, 2, 5, Scheme::Bisection).unwrap();
        for i in 0..50 {
            assert_eq!(a.unit_loop(i).unwrap(), lazy.unit_loop(i).unwrap());
        }
        let c = LoopEnsemble::generate(50, 32, 2, 6, Scheme::Bisection).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn refinement_keeps_coarse_points() {
        let coarse = LoopEnsemble::generate(30, 64, 2, 11, Scheme::Bisection).unwrap();
        let fine = coarse.refine().unwrap();
        assert_eq!(fine.points(), 128);
        for i in 0..30 {
            let c = coarse.unit_loop(i).unwrap();
            let f = fine.unit_loop(i).unwrap();
            for k in 0..=64 {
                assert_eq!(&c[k * 2..k * 2 + 2], &f[2 * k * 2..2 * k * 2 + 2]);
            }
        }
        assert!(LoopEnsemble::lazy(3, 10, 1, 0, Scheme::Incremental).unwrap().refine().is_err());
    }

    #[test]
    fn physical_loop_scaling_and_translation() {
        let e = LoopEnsemble::generate(3, 16, 2, 1, Scheme::Bisection).unwrap();
        let zero = e.physical_loop(0, &[1.0, 2.0], 0.0).unwrap();
        for k in 0..=16 {
            assert_eq!(zero.point(k), vec![1.0, 2.0]);
        }
        let one = e.physical_loop(1, &[0.0, 0.0], 1.0).unwrap();
        let four = e.physical_loop(1, &[0.0, 0.0], 4.0).unwrap();
        let moved = e.physical_loop(1, &[0.5, -3.0], 1.0).unwrap();
        for k in 0..=16 {
            let (a, b, c) = (one.point(k), four.point(k), moved.point(k));
            for i in 0..2 {
                assert!((b[i] - 2.0 * a[i]).abs() < 1e-15);
            }
            assert!((c[0] - a[0] - 0.5).abs() < 1e-15 && (c[1] - a[1] + 3.0).abs() < 1e-15);
        }
        assert!(e.physical_loop(3, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(LoopEnsemble::lazy(0, 4, 1, 0, Scheme::Bisection), Err(LoopError::EmptyEnsemble)));
        assert!(matches!(LoopEnsemble::lazy(1, 1, 1, 0, Scheme::Incremental), Err(LoopError::TooFewPoints(1))));
        assert!(matches!(LoopEnsemble::lazy(1, 12, 1, 0, Scheme::Bisection), Err(LoopError::NotPowerOfTwo(12))));
        assert!(matches!(
            LoopEnsemble::generate(usize::MAX / 4, 1 << 20, 3, 0, Scheme::Bisection),
            Err(LoopError::ResourceExhausted { .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let e = LoopEnsemble::generate(7, 8, 3, 42, Scheme::Bisection).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loops.bin");
        e.write_cache(&path).unwrap();
        let back = LoopEnsemble::read_cache(&path).unwrap();
        assert_eq!(e, back);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 48 + 7 * 9 * 3 * 8);
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(LoopEnsemble::read_cache(&path).is_err());
    }
}
