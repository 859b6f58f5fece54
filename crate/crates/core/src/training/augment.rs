use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::GraphSample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Probability of each of the two independent augmentations.
    pub probability: f64,
    pub edge_removal_fraction: f64,
    /// Standard deviation of the additive RSSI noise, dB.
    pub feature_noise_std: f64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("probability", self.probability), ("edge_removal_fraction", self.edge_removal_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("augmentation {name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.feature_noise_std >= 0.0) {
            return Err(Error::InvalidConfig("feature noise std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Independently, with probability `p` each: drop `round(f |E|)` random edges
/// (zeroing both directions' RSSI), and add Gaussian noise to every measured
/// RSSI entry. Coordinates, positions and anchor flags are never touched.
pub fn augment<R: Rng + ?Sized>(sample: &GraphSample, cfg: &AugmentConfig, rng: &mut R) -> Result<GraphSample> {
    cfg.validate()?;
    let drop_edges = rng.gen_bool(cfg.probability);
    let add_noise = rng.gen_bool(cfg.probability);
    let mut out = sample.clone();
    let mut features = out.feature_tensor()?;
    let n = out.nodes();

    if drop_edges && !out.edges.is_empty() {
        let remove = (cfg.edge_removal_fraction * out.edges.len() as f64).round() as usize;
        let mut picked = index::sample(rng, out.edges.len(), remove.min(out.edges.len())).into_vec();
        picked.sort_unstable();
        for &e in &picked {
            let [i, j] = out.edges[e];
            for t in 0..features.window() {
                for (a, b) in [(i, j), (j, i)] {
                    features.set(a, b, t, 0.0);
                    features.set_missing(a, b, t, false);
                }
            }
        }
        for &e in picked.iter().rev() {
            out.edges.remove(e);
        }
    }

    if add_noise && cfg.feature_noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.feature_noise_std).expect("validated std");
        let adjacency = out.adjacency()?;
        for i in (0..n).filter(|&i| !out.anchor_flags[i]) {
            for j in adjacency.neighbors(i) {
                for t in 0..features.window() {
                    if !features.is_missing(i, j, t) {
                        let v = features.get(i, j, t) + normal.sample(rng);
                        features.set(i, j, t, v);
                    }
                }
            }
        }
    }

    out.features = features.values().to_vec();
    out.missing = features.missing().to_vec();
    Ok(out)
}
