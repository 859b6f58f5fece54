//! Mean imputation, per-feature z-scoring and per-timestep slicing.

use serde::{Deserialize, Serialize};

use crate::net_sim::FeatureTensor;
use crate::numcore::Tensor;

/// Features with a population standard deviation below this are zeroed.
pub const ZSCORE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Normalized `N x (N + 2) x T` features.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedFeatures {
    nodes: usize,
    window: usize,
    values: Vec<f64>,
}

impl ProcessedFeatures {
    pub fn from_parts(nodes: usize, window: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), nodes * (nodes + 2) * window);
        Self { nodes, window, values }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn width(&self) -> usize {
        self.nodes + 2
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn get(&self, i: usize, k: usize, t: usize) -> f64 {
        self.values[(i * self.width() + k) * self.window + t]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `N x (N + 2)` matrix at timestep `t` (zero-based).
    pub fn slice(&self, t: usize) -> Tensor {
        Tensor::from_fn(self.nodes, self.width(), |i, k| self.get(i, k, t))
    }
}

/// Replaces every missing entry with the mean of the observed entries of its
/// `(i, k)` time series; a fully missing series becomes zeros. The returned
/// tensor has no missing flags.
pub fn impute_mean(features: &FeatureTensor) -> FeatureTensor {
    let mut out = features.clone();
    let (n, w, t_len) = (features.nodes(), features.width(), features.window());
    for i in 0..n {
        for k in 0..w {
            let base = features.index(i, k, 0);
            let series = &features.values()[base..base + t_len];
            let flags = &features.missing()[base..base + t_len];
            if !flags.iter().any(|&m| m) {
                continue;
            }
            let (sum, count) =
                series.iter().zip(flags).filter(|(_, &m)| !m).fold((0.0, 0usize), |(s, c), (&v, _)| (s + v, c + 1));
            let fill = if count == 0 { 0.0 } else { sum / count as f64 };
            for t in 0..t_len {
                if flags[t] {
                    out.values_mut()[base + t] = fill;
                    out.missing_mut()[base + t] = false;
                }
            }
        }
    }
    out
}

/// Z-scores each feature column `k` over all `N * T` entries with the
/// population standard deviation. Missing flags are ignored; impute first.
pub fn zscore_normalize(features: &FeatureTensor) -> (ProcessedFeatures, NormalizationStats) {
    let (n, w, t_len) = (features.nodes(), features.width(), features.window());
    let count = (n * t_len) as f64;
    let mut mean = vec![0.0; w];
    let mut std = vec![0.0; w];
    for k in 0..w {
        let mut sum = 0.0;
        for i in 0..n {
            sum += features.series(i, k).iter().sum::<f64>();
        }
        let mu = sum / count;
        let mut sq = 0.0;
        for i in 0..n {
            sq += features.series(i, k).iter().map(|v| (v - mu).powi(2)).sum::<f64>();
        }
        mean[k] = mu;
        std[k] = (sq / count).sqrt();
    }
    let mut values = features.values().to_vec();
    for i in 0..n {
        for k in 0..w {
            let base = features.index(i, k, 0);
            for v in &mut values[base..base + t_len] {
                *v = if std[k] < ZSCORE_EPS { 0.0 } else { (*v - mean[k]) / std[k] };
            }
        }
    }
    (ProcessedFeatures::from_parts(n, t_len, values), NormalizationStats { mean, std })
}

/// `[F''_1, ..., F''_T]`.
pub fn slice_timesteps(p: &ProcessedFeatures) -> Vec<Tensor> {
    (0..p.window()).map(|t| p.slice(t)).collect()
}

/// Imputation, normalization and slicing in one call.
pub fn preprocess(features: &FeatureTensor) -> (ProcessedFeatures, NormalizationStats) {
    zscore_normalize(&impute_mean(features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor_1x1(series: &[f64], missing: &[bool]) -> FeatureTensor {
        // one node, width 3, only column 0 carries the series
        let t = series.len();
        let mut f = FeatureTensor::zeros(1, t);
        for (idx, (&v, &m)) in series.iter().zip(missing).enumerate() {
            f.set(0, 0, idx, v);
            f.set_missing(0, 0, idx, m);
        }
        f
    }

    #[test]
    fn gap_filled_with_series_mean() {
        let f = impute_mean(&tensor_1x1(&[2.0, 0.0, 4.0], &[false, true, false]));
        assert_eq!(f.series(0, 0), &[2.0, 3.0, 4.0]);
        assert_eq!(f.missing_count(), 0);
    }

    #[test]
    fn complete_input_is_unchanged() {
        let f = tensor_1x1(&[1.0, -2.0, 5.0], &[false; 3]);
        assert_eq!(impute_mean(&f), f);
    }

    #[test]
    fn all_missing_series_becomes_zero() {
        let f = impute_mean(&tensor_1x1(&[7.0, 8.0], &[true, true]));
        assert_eq!(f.series(0, 0), &[0.0, 0.0]);
    }

    #[test]
    fn two_point_zscore() {
        let mut f = FeatureTensor::zeros(1, 2);
        f.set(0, 0, 0, 1.0);
        f.set(0, 0, 1, 3.0);
        let (p, stats) = zscore_normalize(&f);
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.std[0], 1.0);
        assert_eq!(p.get(0, 0, 0), -1.0);
        assert_eq!(p.get(0, 0, 1), 1.0);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let mut f = FeatureTensor::zeros(2, 3);
        for i in 0..2 {
            for t in 0..3 {
                f.set(i, 1, t, -55.5);
            }
        }
        let (p, stats) = zscore_normalize(&f);
        assert_eq!(stats.std[1], 0.0);
        for i in 0..2 {
            for t in 0..3 {
                assert_eq!(p.get(i, 1, t), 0.0);
            }
        }
    }

    #[test]
    fn slice_indexing_and_single_step() {
        let values: Vec<f64> = (0..5 * 7 * 4).map(|v| v as f64 * 0.25).collect();
        let p = ProcessedFeatures::from_parts(5, 4, values);
        let slices = slice_timesteps(&p);
        assert_eq!(slices.len(), 4);
        assert_eq!(slices[2].get(3, 5), p.get(3, 5, 2));

        let single = ProcessedFeatures::from_parts(2, 1, (0..8).map(f64::from).collect());
        let s = slice_timesteps(&single);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].data(), single.values());
    }

    fn arb_tensor() -> impl Strategy<Value = FeatureTensor> {
        (1usize..5, 1usize..5).prop_flat_map(|(n, t)| {
            let len = n * (n + 2) * t;
            (
                proptest::collection::vec(-90.0f64..10.0, len),
                proptest::collection::vec(proptest::bool::weighted(0.3), len),
            )
                .prop_map(move |(v, m)| FeatureTensor::from_parts(n, t, v, m).unwrap())
        })
    }

    proptest! {
        #[test]
        fn imputation_is_idempotent_and_keeps_observed(f in arb_tensor()) {
            let once = impute_mean(&f);
            prop_assert_eq!(impute_mean(&once), once.clone());
            for (idx, &m) in f.missing().iter().enumerate() {
                if !m {
                    prop_assert_eq!(once.values()[idx], f.values()[idx]);
                }
            }
        }

        #[test]
        fn slices_reassemble_exactly(f in arb_tensor()) {
            let (p, _) = preprocess(&f);
            let slices = slice_timesteps(&p);
            let mut rebuilt = vec![0.0; p.values().len()];
            for (t, s) in slices.iter().enumerate() {
                for i in 0..p.nodes() {
                    for k in 0..p.width() {
                        rebuilt[(i * p.width() + k) * p.window() + t] = s.get(i, k);
                    }
                }
            }
            prop_assert_eq!(rebuilt, p.values().to_vec());
        }
    }
}
