//! Seeded synthetic datasets.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Side length of the box blob centers are drawn from.
pub const BLOB_BOX: f64 = 100.0;

/// Gaussian blobs: `k_true` centers uniform in `[0, 100)^dim`, each point
/// drawn around a uniformly chosen center with per-coordinate deviation
/// `spread`.
pub fn blobs(n: usize, dim: usize, k_true: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 || k_true == 0 {
        return Err(Error::Config("blobs need n, dim and k_true >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..k_true * dim).map(|_| rng.gen_range(0.0..BLOB_BOX)).collect();
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Config(e.to_string()))?;
    let mut values = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.gen_range(0..k_true);
        for j in 0..dim {
            values.push(centers[c * dim + j] + noise.sample(&mut rng));
        }
    }
    Dataset::new(values, dim)
}

/// Uniform points in `[0, 1)^dim`.
pub fn uniform(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * dim).map(|_| rng.gen::<f64>()).collect();
    Dataset::new(values, dim)
}

/// Parsed form of `blobs:N,d,k_true,spread,seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub n: usize,
    pub dim: usize,
    pub k_true: usize,
    pub spread: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn generate(&self) -> Result<Dataset> {
        blobs(self.n, self.dim, self.k_true, self.spread, self.seed)
    }
}

impl FromStr for BlobSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected blobs:N,d,k_true,spread,seed, got {s:?}"));
        let args = s.strip_prefix("blobs:").ok_or_else(bad)?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(bad());
        }
        Ok(Self {
            n: parts[0].parse().map_err(|_| bad())?,
            dim: parts[1].parse().map_err(|_| bad())?,
            k_true: parts[2].parse().map_err(|_| bad())?,
            spread: parts[3].parse().map_err(|_| bad())?,
            seed: parts[4].parse().map_err(|_| bad())?,
        })
    }
}

impl std::fmt::Display for BlobSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "blobs:{},{},{},{},{}",
            self.n, self.dim, self.k_true, self.spread, self.seed
        )
    }
}
