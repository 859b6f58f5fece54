use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field, radio and channel parameters of one simulated network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Side of the square field, meters.
    pub field_side: f64,
    pub node_count: usize,
    pub anchor_fraction: f64,
    /// Radio range threshold, meters.
    pub radio_range: f64,
    /// Timestamps per acquisition window.
    pub window: usize,
    /// Shadowing variance, dB^2.
    pub noise_variance: f64,
    pub interference_scale: f64,
    pub path_loss_exponent: f64,
    /// Received power at the reference distance, dBm.
    pub ref_rssi: f64,
    pub ref_distance: f64,
    pub miss_probability: f64,
    /// Distances below this are clamped before the log term.
    pub min_distance: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            field_side: 100.0,
            node_count: 100,
            anchor_fraction: 0.2,
            radio_range: 20.0,
            window: 10,
            noise_variance: 0.5,
            interference_scale: 0.0,
            path_loss_exponent: 3.0,
            ref_rssi: -40.0,
            ref_distance: 1.0,
            miss_probability: 0.02,
            min_distance: 0.1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn anchor_count(&self) -> usize {
        (self.anchor_fraction * self.node_count as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.field_side > 0.0) {
            return fail("field_side must be positive");
        }
        if self.node_count < 2 {
            return fail("node_count must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.anchor_fraction) {
            return fail("anchor_fraction must lie in [0, 1]");
        }
        if self.anchor_count() >= self.node_count {
            return fail("anchor_fraction leaves no regular nodes");
        }
        if !(self.radio_range > 0.0) {
            return fail("radio_range must be positive");
        }
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if !(self.noise_variance >= 0.0) {
            return fail("noise_variance must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.interference_scale) {
            return fail("interference_scale must lie in [0, 1]");
        }
        if !(self.ref_distance > 0.0) {
            return fail("ref_distance must be positive");
        }
        if !(self.min_distance > 0.0) {
            return fail("min_distance must be positive");
        }
        if !(0.0..1.0).contains(&self.miss_probability) {
            return fail("miss_probability must lie in [0, 1)");
        }
        if !self.path_loss_exponent.is_finite() || !self.ref_rssi.is_finite() {
            return fail("channel constants must be finite");
        }
        Ok(())
    }
}
