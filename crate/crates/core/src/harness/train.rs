use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::{run_schedule, EpochModel, History};
use super::TrainConfig;
use crate::data::{holdout_batch, instance_seed, HoldoutBatch, Instance};
use crate::model::{decode_batch, encode, mse_loss, ModelParams};
use crate::quadtree::{PointSet, QuadTree};
use crate::tensor::{adam_step, AdamConfig, AdamState};
use crate::uq::{avu_report, calibrate_tu, compute_thresholds, AvUReport, UqConfig};
use crate::{HstError, Result};

const EVAL_SALT: u64 = 0xE7A1_5EED;

/// How held-out query points are drawn from an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryPlan {
    pub per_instance: usize,
    pub seed: u64,
}

impl QueryPlan {
    /// Evaluation plan for run seed `seed`.
    pub fn new(per_instance: usize, seed: u64) -> Self {
        Self { per_instance, seed: seed ^ EVAL_SALT }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.queries_per_instance, cfg.seed)
    }

    /// Held-out batch of instance `index`. An instance with a designated query holds out
    /// exactly that point.
    pub fn batch(&self, inst: &Instance, index: usize) -> Result<HoldoutBatch> {
        if let Some(q) = inst.query {
            let (context, queries) = inst.split_query()?;
            return Ok(HoldoutBatch { context, queries, held_out: vec![q] });
        }
        let count = self.per_instance.min(inst.points.len().saturating_sub(1));
        holdout_batch(&inst.points, count, instance_seed(self.seed, index))
    }
}

/// Predictions on held-out queries of a dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalResult {
    pub mse: f64,
    pub mae: f64,
    pub y_hat: Vec<f64>,
    pub targets: Vec<f64>,
    /// `y - y_hat` per query.
    pub errors: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub kq_sq: Vec<f64>,
}

impl EvalResult {
    fn finish(mut self) -> Self {
        let n = self.errors.len().max(1) as f64;
        self.mse = self.errors.iter().map(|e| e * e).sum::<f64>() / n;
        self.mae = self.errors.iter().map(|e| e.abs()).sum::<f64>() / n;
        self
    }
}

/// Forward-only predictions for one held-out batch, chunked by `batch_size`.
fn predict_batch(params: &ModelParams<f64>, batch: &HoldoutBatch, batch_size: usize, out: &mut EvalResult) -> Result<()> {
    let tree = QuadTree::build(&batch.context, params.config.leaf_capacity)?;
    let state = encode(params, &batch.context, &tree)?;
    let m = batch.queries.feature_dim();
    let n = batch.queries.len();
    for start in (0..n).step_by(batch_size.max(1)) {
        let end = (start + batch_size).min(n);
        let feats = &batch.queries.features()[start * m..end * m];
        let dec = decode_batch(params, &state, feats, &batch.queries.coords()[start..end])?;
        for (k, p) in dec.predictions(params).into_iter().enumerate() {
            let y = batch.queries.target(start + k);
            out.y_hat.push(p.y_hat);
            out.targets.push(y);
            out.errors.push(y - p.y_hat);
            out.uncertainties.push(p.u);
            out.kq_sq.push(p.kq_sq);
        }
    }
    Ok(())
}

/// MSE and MAE over the held-out queries of every instance.
pub fn evaluate(params: &ModelParams<f64>, instances: &[Instance], plan: QueryPlan, batch_size: usize) -> Result<EvalResult> {
    if instances.is_empty() {
        return Err(HstError::InvalidArgument("no instances to evaluate".into()));
    }
    let params = params.frozen();
    let mut out = EvalResult::default();
    for (i, inst) in instances.iter().enumerate() {
        predict_batch(&params, &plan.batch(inst, i)?, batch_size, &mut out)?;
    }
    Ok(out.finish())
}

/// Drives one model through the epoch loop.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub params: ModelParams<f64>,
    pub best: ModelParams<f64>,
    adam: AdamState<f64>,
    train: &'a [Instance],
    val: &'a [Instance],
    val_plan: QueryPlan,
    steps: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, train: &'a [Instance], val: &'a [Instance]) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(HstError::InvalidArgument("training and validation splits must be non-empty".into()));
        }
        let m = train[0].points.feature_dim();
        if m != cfg.model.feature_dim {
            return Err(HstError::Shape(format!("model expects {} features, data has {m}", cfg.model.feature_dim)));
        }
        let params = ModelParams::init(&cfg.model)?;
        let adam = AdamState::new(params.tensors().iter().map(|t| t.numel()));
        Ok(Self {
            cfg: cfg.clone(),
            best: params.clone(),
            params,
            adam,
            train,
            val,
            val_plan: QueryPlan::from_config(cfg),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One Adam step on the held-out `queries` of `context`; returns the batch MSE.
    pub fn step(&mut self, context: &PointSet<f64>, queries: &PointSet<f64>, lr: f64) -> Result<f64> {
        let tree = QuadTree::build(context, self.cfg.model.leaf_capacity)?;
        let p = self.params.trainable();
        let state = encode(&p, context, &tree)?;
        let out = decode_batch(&p, &state, queries.features(), queries.coords())?;
        let loss = mse_loss(&out.y, queries.targets())?;
        loss.backward()?;
        let grads = p.grads();
        drop(state);
        let mut values = self.params.values();
        let adam_cfg = AdamConfig {
            lr,
            beta1: self.cfg.beta1,
            beta2: self.cfg.beta2,
            eps: self.cfg.eps,
            weight_decay: self.cfg.weight_decay,
        };
        adam_step(&mut values, &grads, &mut self.adam, &adam_cfg)?;
        self.params = self.params.with_values(values, false)?;
        self.steps += 1;
        Ok(loss.item())
    }
}

impl EpochModel for Trainer<'_> {
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(self.cfg.seed, epoch));
        order.shuffle(&mut rng);
        let plan = QueryPlan { per_instance: self.cfg.queries_per_instance, seed: instance_seed(self.cfg.seed, epoch) };
        let (mut total, mut count) = (0.0, 0usize);
        for i in order {
            let batch = plan.batch(&self.train[i], i)?;
            let n = batch.queries.len();
            for start in (0..n).step_by(self.cfg.batch_size) {
                let idx: Vec<usize> = (start..(start + self.cfg.batch_size).min(n)).collect();
                let queries = batch.queries.select(&idx)?;
                let loss = self.step(&batch.context, &queries, lr)?;
                if !loss.is_finite() {
                    return Err(HstError::Diverged { epoch });
                }
                total += loss * idx.len() as f64;
                count += idx.len();
            }
        }
        Ok(total / count.max(1) as f64)
    }

    fn validate(&mut self) -> Result<(f64, f64)> {
        let r = evaluate(&self.params, self.val, self.val_plan, self.cfg.batch_size)?;
        Ok((r.mse, r.mae))
    }

    fn keep_best(&mut self, _: usize) {
        self.best = self.params.clone();
    }
}

/// Parameters of the best validation epoch with the training history.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ModelParams<f64>,
    pub history: History,
}

pub fn train(cfg: &TrainConfig, train: &[Instance], val: &[Instance]) -> Result<TrainedModel> {
    let mut trainer = Trainer::new(cfg, train, val)?;
    let history = run_schedule(&mut trainer, cfg)?;
    Ok(TrainedModel { params: trainer.best, history })
}

/// Geometric grid of temperatures around the scale at which `u` first reaches zero.
pub fn default_tu_grid(kq_sq: &[f64], sigma0_sq: f64) -> Vec<f64> {
    let max = kq_sq.iter().copied().fold(0.0, f64::max);
    let base = if max > 0.0 && sigma0_sq > 0.0 { (max / sigma0_sq).sqrt() } else { 1.0 };
    (-12..=24).map(|k| base * 1.25f64.powi(k)).collect()
}

/// Fit `t_u` on the validation split by minimum calibration error.
pub fn calibrate(params: &ModelParams<f64>, val: &EvalResult) -> Result<ModelParams<f64>> {
    let preds: Vec<(f64, f64)> = val.y_hat.iter().copied().zip(val.kq_sq.iter().copied()).collect();
    let grid = default_tu_grid(&val.kq_sq, params.uq.sigma0_sq);
    let t_u = calibrate_tu(&preds, &val.targets, &params.uq, &grid)?;
    let mut out = params.clone();
    out.uq = UqConfig { t_u, ..params.uq };
    Ok(out)
}

/// Thresholds from validation results and the AvU report on test results, both scored
/// with `uq`.
pub fn uq_report(val: &EvalResult, test: &EvalResult, uq: &UqConfig<f64>) -> Result<AvUReport> {
    let score = |r: &EvalResult| r.kq_sq.iter().map(|&k| uq.score(k)).collect::<Vec<f64>>();
    let thr = compute_thresholds(&val.errors, &score(val))?;
    avu_report(&test.errors, &score(test), &thr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticConfig};
    use crate::model::ModelConfig;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            model: ModelConfig { d_model: 16, heads: 2, enc_layers: 1, dec_layers: 1, leaf_capacity: 8, feature_dim: 2, ..ModelConfig::default() },
            max_epochs: 2,
            queries_per_instance: 8,
            lr_init: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Vec<Instance> {
        gen_synthetic(&SyntheticConfig { n: 40, instances: 4, ..SyntheticConfig::default() }).unwrap()
    }

    #[test]
    fn evaluate_metrics_are_consistent() {
        let data = tiny_data();
        let params = ModelParams::init(&tiny_cfg().model).unwrap();
        let r = evaluate(&params, &data, QueryPlan { per_instance: 5, seed: 1 }, 3).unwrap();
        assert_eq!(r.errors.len(), 20);
        assert!(r.mae * r.mae <= r.mse + 1e-15);
        assert!(r.uncertainties.iter().all(|&u| u >= 0.0));
        let again = evaluate(&params, &data, QueryPlan { per_instance: 5, seed: 1 }, 20).unwrap();
        for (a, b) in r.y_hat.iter().zip(&again.y_hat) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_predictor_metrics() {
        let mut r = EvalResult { errors: vec![1.0, -1.0], ..EvalResult::default() };
        r = r.finish();
        assert_eq!((r.mse, r.mae), (1.0, 1.0));
        let r = EvalResult { errors: vec![0.0; 3], ..EvalResult::default() }.finish();
        assert_eq!((r.mse, r.mae), (0.0, 0.0));
    }

    #[test]
    fn designated_query_is_used() {
        let data = tiny_data();
        let inst = Instance { points: data[0].points.clone(), query: Some(3) };
        let b = QueryPlan { per_instance: 5, seed: 0 }.batch(&inst, 0).unwrap();
        assert_eq!(b.held_out, vec![3]);
        assert_eq!(b.context.len(), 39);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let a = train(&cfg, &data[..3], &data[3..]).unwrap();
        let b = train(&cfg, &data[..3], &data[3..]).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.values(), b.params.values());
        assert_eq!(a.history.records.len(), 2);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let data = tiny_data();
        assert!(train(&tiny_cfg(), &[], &data).is_err());
        assert!(Trainer::new(&tiny_cfg(), &data, &[]).is_err());
    }
}
