//! Temporal encoders of the two ablation models: the last snapshot and an
//! exponentially weighted moving average over the window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::preprocess::ProcessedFeatures;

pub const DEFAULT_EWMA_DECAY: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EwmaConfig {
    /// Weight of the newest slice, in `(0, 1]`.
    pub decay: f64,
}

impl Default for EwmaConfig {
    fn default() -> Self {
        Self { decay: DEFAULT_EWMA_DECAY }
    }
}

impl EwmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig(format!("ewma decay must lie in (0, 1], got {}", self.decay)));
        }
        Ok(())
    }
}

/// `F''_T`, the last normalized slice.
pub fn snapshot_features(p: &ProcessedFeatures) -> Result<Tensor> {
    if p.window() == 0 {
        return Err(Error::EmptyInput("snapshot_features window"));
    }
    Ok(p.slice(p.window() - 1))
}

/// `E_1 = F_1`, `E_t = rho F_t + (1 - rho) E_{t-1}`; returns `E_T`.
pub fn ewma_encode(slices: &[Tensor], cfg: &EwmaConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (first, rest) = slices.split_first().ok_or(Error::EmptyInput("ewma_encode slices"))?;
    let mut acc = first.clone();
    for s in rest {
        acc.same_shape(s, "ewma_encode")?;
        for (a, &v) in acc.data_mut().iter_mut().zip(s.data()) {
            *a = cfg.decay * v + (1.0 - cfg.decay) * *a;
        }
    }
    Ok(acc)
}
