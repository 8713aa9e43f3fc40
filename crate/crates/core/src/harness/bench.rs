use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{count_attention_pairs, encode, AttentionMode, ModelConfig, ModelParams};
use crate::quadtree::{PointSet, QuadTree};
use crate::{HstError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hst,
    AllPair,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hst => "hst",
            Method::AllPair => "all_pair",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = HstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hst" => Ok(Method::Hst),
            "all_pair" | "all-pair" => Ok(Method::AllPair),
            other => Err(HstError::InvalidArgument(format!("unknown method {other:?}; expected hst or all_pair"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub model: ModelConfig,
    /// Timed repetitions per size; the median is reported.
    pub reps: usize,
    /// Instances per forward pass.
    pub batch: usize,
    /// Largest `n` the all-pair method is run at.
    pub all_pair_cutoff: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), reps: 3, batch: 1, all_pair_cutoff: 8192, seed: 0 }
    }
}

/// One row of the scaling benchmark. `time_ms` is `None` for skipped runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub n: usize,
    pub method: Method,
    pub time_ms: Option<f64>,
    pub pair_count: u64,
    pub mem_estimate_bytes: u64,
    pub leaf_capacity: usize,
    pub peak_rss_bytes: Option<u64>,
    pub skipped: Option<String>,
}

/// Uniform points in the unit square with standard-normal features and targets.
pub fn uniform_points(n: usize, feature_dim: usize, seed: u64) -> Result<PointSet<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let feats = (0..n * feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointSet::new(coords, feats, feature_dim, targets)
}

/// Peak resident set size of this process, where the platform reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    }
}

/// Bytes of an attention tensor of `batch * heads * d * pairs` 64-bit values.
fn mem_estimate(cfg: &BenchConfig, pairs: u64) -> u64 {
    8 * cfg.batch as u64 * cfg.model.heads as u64 * cfg.model.d_model as u64 * pairs
}

fn time_forward(params: &ModelParams<f64>, sets: &[PointSet<f64>], trees: &[QuadTree<f64>], reps: usize) -> Result<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        for (pts, tree) in sets.iter().zip(trees) {
            let state = encode(params, pts, tree)?;
            std::hint::black_box(state.memory.data()[0]);
        }
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(times))
}

fn bench_one(n: usize, method: Method, cfg: &BenchConfig) -> Result<BenchRecord> {
    let sets = (0..cfg.batch.max(1))
        .map(|b| uniform_points(n, cfg.model.feature_dim, cfg.seed ^ ((n as u64) << 8) ^ b as u64))
        .collect::<Result<Vec<_>>>()?;
    let trees = sets
        .iter()
        .map(|p| QuadTree::build(p, cfg.model.leaf_capacity))
        .collect::<Result<Vec<_>>>()?;
    let pairs = match method {
        Method::Hst => count_attention_pairs(&trees[0]),
        Method::AllPair => (n as u64) * (n as u64),
    };
    let mut record = BenchRecord {
        n,
        method,
        time_ms: None,
        pair_count: pairs,
        mem_estimate_bytes: mem_estimate(cfg, pairs),
        leaf_capacity: cfg.model.leaf_capacity,
        peak_rss_bytes: None,
        skipped: None,
    };
    if method == Method::AllPair && n > cfg.all_pair_cutoff {
        record.skipped = Some("skipped: quadratic".into());
        return Ok(record);
    }
    let mode = match method {
        Method::Hst => AttentionMode::Hierarchical,
        Method::AllPair => AttentionMode::AllPair,
    };
    let params = ModelParams::init(&ModelConfig { mode, ..cfg.model.clone() })?;
    record.time_ms = Some(time_forward(&params, &sets, &trees, cfg.reps)?);
    record.peak_rss_bytes = peak_rss_bytes();
    Ok(record)
}

/// Forward-encode timing and pair counts for every size and method, sizes in order.
pub fn bench_scaling(sizes: &[usize], methods: &[Method], cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.model.validate()?;
    let mut out = Vec::new();
    for &n in sizes {
        if n == 0 {
            return Err(HstError::InvalidArgument("benchmark sizes must be positive".into()));
        }
        for &m in methods {
            out.push(bench_one(n, m, cfg)?);
        }
    }
    Ok(out)
}

/// Hierarchical forward time at one `n` for each leaf capacity.
pub fn bench_leaf_sizes(n: usize, capacities: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    capacities
        .iter()
        .map(|&m| {
            let cfg = BenchConfig { model: ModelConfig { leaf_capacity: m, ..cfg.model.clone() }, ..cfg.clone() };
            cfg.model.validate()?;
            bench_one(n, Method::Hst, &cfg)
        })
        .collect()
}

/// CSV with columns `n,method,time_ms,pair_count,mem_estimate_bytes`; skipped runs carry
/// their reason in the `time_ms` column.
pub fn write_bench_csv(records: &[BenchRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| HstError::Format(e.to_string());
    w.write_record(["n", "method", "time_ms", "pair_count", "mem_estimate_bytes"]).map_err(err)?;
    for r in records {
        let time = match (&r.time_ms, &r.skipped) {
            (Some(t), _) => format!("{t:.3}"),
            (None, Some(reason)) => reason.clone(),
            (None, None) => String::new(),
        };
        w.write_record([
            r.n.to_string(),
            r.method.as_str().to_string(),
            time,
            r.pair_count.to_string(),
            r.mem_estimate_bytes.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
