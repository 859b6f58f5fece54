use rand::Rng;
use rand_distr::StandardNormal;

use super::SimConfig;
use crate::error::{Error, Result};

/// Standard deviation of the density-dependent interference term, `kappa * sqrt(N)`.
pub fn interference_sigma(kappa: f64, node_count: usize) -> f64 {
    kappa * (node_count as f64).sqrt()
}

/// Deterministic part of the log-normal shadowing model, with the distance
/// clamped to `min_distance`.
pub fn mean_rssi(cfg: &SimConfig, distance: f64) -> f64 {
    let d = distance.max(cfg.min_distance);
    cfg.ref_rssi - 10.0 * cfg.path_loss_exponent * (d / cfg.ref_distance).log10()
}

/// One RSSI draw in dBm: the mean path loss minus shadowing `X ~ N(0, sigma)`
/// minus interference `I ~ N(0, kappa sqrt(N))`. Both normals are always
/// drawn so the stream advances identically whatever the variances.
pub fn sample_rssi<R: Rng + ?Sized>(cfg: &SimConfig, distance: f64, rng: &mut R) -> Result<f64> {
    if !(distance >= 0.0) || !distance.is_finite() {
        return Err(Error::InvalidConfig(format!("distance must be finite and non-negative, got {distance}")));
    }
    let shadow: f64 = rng.sample(StandardNormal);
    let interference: f64 = rng.sample(StandardNormal);
    let sigma = cfg.noise_variance.sqrt();
    let sigma_i = interference_sigma(cfg.interference_scale, cfg.node_count);
    Ok(mean_rssi(cfg, distance) - sigma * shadow - sigma_i * interference)
}
