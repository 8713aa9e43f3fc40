use std::io::Write;

use serde::{Deserialize, Serialize};

use super::train::{evaluate, train, QueryPlan};
use super::TrainConfig;
use crate::data::Instance;
use crate::{HstError, Result};

/// Hyperparameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Leaf capacity `M`.
    M,
    /// Positional length scale.
    Sigma,
    /// Encoder and decoder depth.
    Layers,
    /// Model width.
    D,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::M => "m",
            SweepParam::Sigma => "sigma",
            SweepParam::Layers => "layers",
            SweepParam::D => "d",
        }
    }

    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut out = cfg.clone();
        let as_count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(HstError::InvalidArgument(format!("{} must be a positive integer, got {value}", self.as_str())))
            }
        };
        match self {
            SweepParam::M => out.model.leaf_capacity = as_count()?,
            SweepParam::Sigma => out.model.length_scale = value,
            SweepParam::Layers => {
                out.model.enc_layers = as_count()?;
                out.model.dec_layers = out.model.enc_layers;
            }
            SweepParam::D => out.model.d_model = as_count()?,
        }
        out.validate()?;
        Ok(out)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = HstError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "leaf" => Ok(SweepParam::M),
            "sigma" => Ok(SweepParam::Sigma),
            "layers" => Ok(SweepParam::Layers),
            "d" => Ok(SweepParam::D),
            other => Err(HstError::InvalidArgument(format!("unknown sweep parameter {other:?}; expected m, sigma, layers or d"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub param: String,
    pub value: f64,
    pub mse: f64,
    pub mae: f64,
}

/// Train once per value and report test MSE and MAE.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    cfg: &TrainConfig,
    train_set: &[Instance],
    val_set: &[Instance],
    test_set: &[Instance],
) -> Result<Vec<SweepRecord>> {
    values
        .iter()
        .map(|&value| {
            let run = param.apply(cfg, value)?;
            let model = train(&run, train_set, val_set)?;
            let r = evaluate(&model.params, test_set, QueryPlan::from_config(&run), run.batch_size)?;
            Ok(SweepRecord { param: param.as_str().to_string(), value, mse: r.mse, mae: r.mae })
        })
        .collect()
}

/// CSV with columns `param,value,mse,mae`.
pub fn write_sweep_csv(records: &[SweepRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| HstError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
