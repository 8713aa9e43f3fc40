//! Training, evaluation, scaling benchmarks and sensitivity sweeps.

mod bench;
mod schedule;
mod sweep;
mod train;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::{HstError, Result};

pub use bench::{bench_leaf_sizes, bench_scaling, peak_rss_bytes, uniform_points, write_bench_csv, BenchConfig, BenchRecord, Method};
pub use schedule::{run_schedule, write_history_csv, EpochModel, EpochRecord, History, PlateauScheduler};
pub use sweep::{sweep, write_sweep_csv, SweepParam, SweepRecord};
pub use train::{
    calibrate, default_tu_grid, evaluate, train, uq_report, EvalResult, QueryPlan, Trainer, TrainedModel,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "HST_THREADS";

/// Install a global thread pool sized by `HST_THREADS`, if set. Results never depend on
/// the thread count.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(None) };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| HstError::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    if threads == 0 {
        return Err(HstError::InvalidArgument(format!("{THREADS_ENV} must be positive")));
    }
    // A second call finds the pool already built; the first size wins.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(Some(threads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    /// Non-improving epochs before the learning rate halves.
    pub halving_patience: usize,
    /// Non-improving epochs before training stops.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    /// Most query points decoded per optimisation step.
    pub batch_size: usize,
    /// Held-out query points drawn from each instance per epoch.
    pub queries_per_instance: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-4,
            lr_min: 1e-7,
            halving_patience: 5,
            early_stop_patience: 10,
            max_epochs: 50,
            batch_size: 512,
            queries_per_instance: 40,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(HstError::InvalidArgument(m));
        if !(self.lr_init > 0.0 && self.lr_min > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.lr_min > self.lr_init {
            return bad(format!("lr_min {} exceeds lr_init {}", self.lr_min, self.lr_init));
        }
        if self.halving_patience == 0 || self.early_stop_patience == 0 || self.max_epochs == 0 {
            return bad("patience and epoch counts must be positive".into());
        }
        if self.batch_size == 0 || self.queries_per_instance == 0 {
            return bad("batch_size and queries_per_instance must be positive".into());
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("invalid optimizer constants".into());
        }
        Ok(())
    }
}
