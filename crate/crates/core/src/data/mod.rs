//! Synthetic Gaussian-process datasets, held-out query construction and splits.

mod format;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::quadtree::PointSet;
use crate::{HstError, Result};

pub use format::{load_dataset, read_dataset, save_dataset, sidecar_path, write_dataset, DATASET_VERSION};

/// Largest instance the dense kernel factorisation accepts.
pub const MAX_GP_POINTS: usize = 20_000;

const JITTERS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointDistribution {
    Uniform,
    /// Mixture of `k` isotropic Gaussians with standard deviation `spread`, centres
    /// uniform in `[0.1, 0.9]^2`.
    Clustered { k: usize, spread: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Points per instance.
    pub n: usize,
    pub instances: usize,
    pub feature_dim: usize,
    pub length_scale: f64,
    pub variance: f64,
    /// Observation noise variance added to targets and features.
    pub noise: f64,
    pub distribution: PointDistribution,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 400,
            instances: 200,
            feature_dim: 2,
            length_scale: 0.1,
            variance: 1.0,
            noise: 0.01,
            distribution: PointDistribution::Uniform,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HstError::InvalidArgument(m.to_string()));
        if self.n == 0 || self.instances == 0 || self.feature_dim == 0 {
            return bad("n, instances and feature_dim must be positive");
        }
        if self.n > MAX_GP_POINTS {
            return Err(HstError::InvalidArgument(format!(
                "n = {} exceeds the dense kernel limit of {MAX_GP_POINTS}",
                self.n
            )));
        }
        if !(self.length_scale > 0.0 && self.variance > 0.0) {
            return bad("length_scale and variance must be positive");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        if let PointDistribution::Clustered { k, spread } = self.distribution {
            if k == 0 || !(spread > 0.0) {
                return bad("clustered distribution needs k >= 1 and spread > 0");
            }
        }
        Ok(())
    }
}

/// A point set, optionally with one designated held-out query point.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub points: PointSet<f64>,
    pub query: Option<usize>,
}

impl Instance {
    pub fn raw(points: PointSet<f64>) -> Self {
        Self { points, query: None }
    }

    /// Context without the held-out point, and the held-out point itself.
    pub fn split_query(&self) -> Result<(PointSet<f64>, PointSet<f64>)> {
        let q = self.query.ok_or_else(|| HstError::InvalidArgument("instance has no query".into()))?;
        Ok((self.points.without(&[q])?, self.points.select(&[q])?))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of instance `index`, independent of generation order.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

/// RBF kernel `variance * exp(-|a - b|^2 / (2 l^2))`.
pub fn rbf_kernel(coords: &[[f64; 2]], length_scale: f64, variance: f64) -> DMatrix<f64> {
    let n = coords.len();
    let inv = 1.0 / (2.0 * length_scale * length_scale);
    DMatrix::from_fn(n, n, |i, j| {
        let dx = coords[i][0] - coords[j][0];
        let dy = coords[i][1] - coords[j][1];
        variance * (-(dx * dx + dy * dy) * inv).exp()
    })
}

/// Lower Cholesky factor of `k + jitter * variance * I`, escalating the jitter until the
/// factorisation succeeds.
pub fn jittered_cholesky(k: &DMatrix<f64>, variance: f64) -> Result<DMatrix<f64>> {
    for jitter in JITTERS {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter * variance;
        }
        if let Some(chol) = m.cholesky() {
            return Ok(chol.l());
        }
    }
    Err(HstError::Numerical(format!(
        "kernel factorisation failed with jitter up to {:e}",
        JITTERS[JITTERS.len() - 1]
    )))
}

fn sample_coords(rng: &mut ChaCha8Rng, n: usize, dist: PointDistribution) -> Vec<[f64; 2]> {
    match dist {
        PointDistribution::Uniform => (0..n).map(|_| [rng.random(), rng.random()]).collect(),
        PointDistribution::Clustered { k, spread } => {
            let centres: Vec<[f64; 2]> = (0..k).map(|_| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]).collect();
            (0..n)
                .map(|_| {
                    let c = centres[rng.random_range(0..k)];
                    let a: f64 = StandardNormal.sample(rng);
                    let b: f64 = StandardNormal.sample(rng);
                    [c[0] + spread * a, c[1] + spread * b]
                })
                .collect()
        }
    }
}

fn gp_draw(rng: &mut ChaCha8Rng, l: &DMatrix<f64>) -> Vec<f64> {
    let n = l.nrows();
    let z = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(rng));
    (l * z).column(0).iter().copied().collect()
}

/// Weight of the shared latent field in every feature.
const FEATURE_SHARED: f64 = 0.5;
/// Weight of the feature's own latent field.
const FEATURE_OWN: f64 = 0.85;

/// Distinct coordinates and, per input point, the index of its distinct coordinate.
fn dedup_coords(coords: &[[f64; 2]]) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut index = std::collections::HashMap::new();
    let mut unique = Vec::new();
    let map = coords
        .iter()
        .map(|c| {
            *index.entry((c[0].to_bits(), c[1].to_bits())).or_insert_with(|| {
                unique.push(*c);
                unique.len() - 1
            })
        })
        .collect();
    (unique, map)
}

/// Targets and features drawn over fixed locations. Coincident locations share one
/// latent value, so they differ only by observation noise.
pub fn sample_fields(coords: Vec<[f64; 2]>, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<PointSet<f64>> {
    let n = coords.len();
    let m = cfg.feature_dim;
    let (unique, map) = dedup_coords(&coords);
    let l = jittered_cholesky(&rbf_kernel(&unique, cfg.length_scale, cfg.variance), cfg.variance)?;
    let noise_sd = cfg.noise.sqrt();
    let f0 = gp_draw(rng, &l);
    let targets: Vec<f64> = map
        .iter()
        .map(|&u| {
            let e: f64 = StandardNormal.sample(rng);
            f0[u] + noise_sd * e
        })
        .collect();
    let mut features = vec![0.0; n * m];
    for k in 0..m {
        let g = gp_draw(rng, &l);
        for (i, &u) in map.iter().enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            features[i * m + k] = FEATURE_SHARED * f0[u] + FEATURE_OWN * g[u] + noise_sd * e;
        }
    }
    PointSet::new(coords, features, m, targets)
}

/// One instance from its own seed.
pub fn gen_instance(cfg: &SyntheticConfig, seed: u64) -> Result<PointSet<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = sample_coords(&mut rng, cfg.n, cfg.distribution);
    sample_fields(coords, cfg, &mut rng)
}

/// Raw instances, generated in parallel; output depends only on `cfg`.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Instance>> {
    cfg.validate()?;
    (0..cfg.instances)
        .into_par_iter()
        .map(|i| gen_instance(cfg, instance_seed(cfg.seed, i)).map(Instance::raw))
        .collect()
}

/// `count` distinct indices of `0..n`, seed-reproducible, in sampling order.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > n {
        return Err(HstError::InvalidArgument(format!("cannot hold out {count} of {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, n, count).into_vec())
}

/// `count` leave-one-out instances over `points`, each holding out a distinct index.
pub fn make_loo_instances(points: &PointSet<f64>, count: usize, seed: u64) -> Result<Vec<Instance>> {
    Ok(sample_indices(points.len(), count, seed)?
        .into_iter()
        .map(|q| Instance { points: points.clone(), query: Some(q) })
        .collect())
}

/// Several held-out queries sharing one context that contains none of them.
#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutBatch {
    pub context: PointSet<f64>,
    pub queries: PointSet<f64>,
    /// Indices of the queries in the original set.
    pub held_out: Vec<usize>,
}

pub fn holdout_batch(points: &PointSet<f64>, count: usize, seed: u64) -> Result<HoldoutBatch> {
    if count >= points.len() {
        return Err(HstError::InvalidArgument(format!(
            "holding out {count} of {} points leaves no context",
            points.len()
        )));
    }
    let held_out = sample_indices(points.len(), count, seed)?;
    Ok(HoldoutBatch { context: points.without(&held_out)?, queries: points.select(&held_out)?, held_out })
}

/// Index sets of a 7:1:2 split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(len: usize, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = sample(&mut rng, len, len).into_vec();
    let n_train = len * 7 / 10;
    let n_val = len / 10;
    Split {
        train: perm[..n_train].to_vec(),
        val: perm[n_train..n_train + n_val].to_vec(),
        test: perm[n_train + n_val..].to_vec(),
    }
}

/// Train, validation and test subsets in a 7:1:2 ratio.
pub fn split<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let s = split_indices(items.len(), seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    (pick(&s.train), pick(&s.val), pick(&s.test))
}
