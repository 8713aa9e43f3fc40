use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::{HstError, Result};

/// Halves the learning rate after `patience` epochs without a new best validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    lr_min: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr_init: f64, lr_min: f64, patience: usize) -> Self {
        Self { lr: lr_init, lr_min, patience, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Record one epoch's validation loss and return the learning rate for the next.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * 0.5).max(self.lr_min);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// One row of the training history. `lr` is the rate in effect after the epoch's
/// scheduler update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// What the epoch loop drives: anything that can train one epoch and validate.
pub trait EpochModel {
    /// One pass over the training data at learning rate `lr`; returns the mean loss.
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64>;
    /// Validation `(mse, mae)`.
    fn validate(&mut self) -> Result<(f64, f64)>;
    /// Called when `epoch` sets a new best validation loss.
    fn keep_best(&mut self, epoch: usize);
}

/// Epoch loop with learning-rate halving on plateaus and early stopping.
pub fn run_schedule<M: EpochModel>(model: &mut M, cfg: &TrainConfig) -> Result<History> {
    let mut sched = PlateauScheduler::new(cfg.lr_init, cfg.lr_min, cfg.halving_patience);
    let mut history = History::default();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = model.train_epoch(epoch, sched.lr())?;
        if !train_loss.is_finite() {
            return Err(HstError::Diverged { epoch });
        }
        let (val_mse, val_mae) = model.validate()?;
        if !val_mse.is_finite() {
            return Err(HstError::Diverged { epoch });
        }
        if val_mse < best {
            best = val_mse;
            since_best = 0;
            history.best_epoch = epoch;
            model.keep_best(epoch);
        } else {
            since_best += 1;
        }
        let lr = sched.step(val_mse);
        history.records.push(EpochRecord { epoch, train_loss, val_mse, val_mae, lr });
        if since_best >= cfg.early_stop_patience {
            history.stopped_early = true;
            break;
        }
    }
    Ok(history)
}

/// CSV with columns `epoch,train_loss,val_mse,val_mae,lr`.
pub fn write_history_csv(history: &History, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &history.records {
        w.serialize(r).map_err(|e| HstError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Replays a fixed validation-loss script.
    struct Scripted {
        losses: Vec<f64>,
        epoch: usize,
        lrs: Vec<f64>,
    }

    impl EpochModel for Scripted {
        fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64> {
            self.epoch = epoch;
            self.lrs.push(lr);
            Ok(1.0)
        }
        fn validate(&mut self) -> Result<(f64, f64)> {
            let v = self.losses[(self.epoch - 1).min(self.losses.len() - 1)];
            Ok((v, v))
        }
        fn keep_best(&mut self, _: usize) {}
    }

    #[test]
    fn six_flat_epochs_halve_at_epoch_six() {
        let mut s = PlateauScheduler::new(1e-4, 1e-7, 5);
        let lrs: Vec<f64> = (0..6).map(|_| s.step(1.0)).collect();
        assert_eq!(&lrs[..5], &[1e-4; 5]);
        assert_eq!(lrs[5], 5e-5);
    }

    #[test]
    fn floor_is_respected() {
        let mut s = PlateauScheduler::new(3e-7, 1e-7, 1);
        s.step(1.0);
        assert_eq!(s.step(1.0), 1.5e-7);
        assert_eq!(s.step(1.0), 1e-7);
        assert_eq!(s.step(1.0), 1e-7);
    }

    #[test]
    fn stalled_loss_stops_after_ten_epochs() {
        let mut m = Scripted { losses: vec![1.0], epoch: 0, lrs: vec![] };
        let h = run_schedule(&mut m, &TrainConfig::default()).unwrap();
        assert!(h.stopped_early);
        assert_eq!(h.records.len(), 11);
        assert_eq!(h.best_epoch, 1);
        assert_eq!(h.records[4].lr, 1e-4);
        assert_eq!(h.records[5].lr, 5e-5);
        assert_eq!(m.lrs[6], 5e-5);
    }

    #[test]
    fn nan_loss_aborts() {
        struct Nan;
        impl EpochModel for Nan {
            fn train_epoch(&mut self, _: usize, _: f64) -> Result<f64> {
                Ok(f64::NAN)
            }
            fn validate(&mut self) -> Result<(f64, f64)> {
                Ok((0.0, 0.0))
            }
            fn keep_best(&mut self, _: usize) {}
        }
        assert!(matches!(run_schedule(&mut Nan, &TrainConfig::default()), Err(HstError::Diverged { epoch: 1 })));
    }

    #[test]
    fn history_csv_header() {
        let h = History {
            records: vec![EpochRecord { epoch: 1, train_loss: 0.5, val_mse: 0.25, val_mae: 0.4, lr: 1e-4 }],
            best_epoch: 1,
            stopped_early: false,
        };
        let mut buf = Vec::new();
        write_history_csv(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_mse,val_mae,lr\n1,0.5,0.25,0.4,0.0001"));
    }
}
