use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::dataset::GraphSample;
use super::split::kfold_split;
use crate::error::{Error, Result};
use crate::global_synthesis::{masked_mse, mean_euclidean_error, per_node_errors};
use crate::model::{Model, ModelConfig, ModelKind, PreparedSample};
use crate::numcore::{adam_step, AdamState, Checkpoint};
use crate::seeding::{derive_seed, rng_for};
use crate::Mode;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;
const DROPOUT_STREAM: u64 = 4;
const CV_STREAM: u64 = 5;

/// One cross-validation candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub augmentation_probability: f64,
    pub edge_removal_fraction: f64,
    pub feature_noise_std: f64,
    pub folds: usize,
    pub seed: u64,
    pub hidden_temporal: usize,
    pub hidden_spatial: usize,
    pub heads: usize,
    pub dropout_after_second_layer: bool,
    pub ewma_decay: f64,
    /// Run k-fold model selection over `cv_grid` before the final fit.
    pub cross_validate: bool,
    /// Candidates; empty means the single point (`learning_rate`, `dropout`).
    pub cv_grid: Vec<GridPoint>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let base = ModelConfig::default();
        Self {
            model: ModelKind::Ubigtloc,
            batch_size: 16,
            epochs: 100,
            learning_rate: 0.001,
            dropout: 0.5,
            augmentation_probability: 0.5,
            edge_removal_fraction: 0.1,
            feature_noise_std: 0.1,
            folds: 5,
            seed: 0,
            hidden_temporal: base.hidden_temporal,
            hidden_spatial: base.hidden_spatial,
            heads: base.heads,
            dropout_after_second_layer: base.dropout_after_second_layer,
            ewma_decay: base.ewma_decay,
            cross_validate: true,
            cv_grid: vec![
                GridPoint { learning_rate: 0.001, dropout: 0.5 },
                GridPoint { learning_rate: 0.001, dropout: 0.3 },
            ],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("folds must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be non-negative".into()));
        }
        for p in self.candidates() {
            if !(0.0..1.0).contains(&p.dropout) || !(p.learning_rate >= 0.0) {
                return Err(Error::InvalidConfig(format!("invalid grid point {p:?}")));
            }
        }
        self.augment_config().validate()
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            probability: self.augmentation_probability,
            edge_removal_fraction: self.edge_removal_fraction,
            feature_noise_std: self.feature_noise_std,
        }
    }

    pub fn model_config(&self, nodes: usize, field_side: f64) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            nodes,
            hidden_temporal: self.hidden_temporal,
            hidden_spatial: self.hidden_spatial,
            heads: self.heads,
            dropout_after_second_layer: self.dropout_after_second_layer,
            ewma_decay: self.ewma_decay,
            field_side,
        }
    }

    pub fn candidates(&self) -> Vec<GridPoint> {
        if self.cv_grid.is_empty() {
            vec![GridPoint { learning_rate: self.learning_rate, dropout: self.dropout }]
        } else {
            self.cv_grid.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    /// Cross-validation average for the selected candidate, when run.
    pub mean_val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub selected: GridPoint,
    /// Final-epoch mean validation loss per candidate.
    pub cv_scores: Vec<(GridPoint, f64)>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, tc: &TrainConfig) -> Result<Checkpoint> {
        self.model.checkpoint(serde_json::json!({
            "train": serde_json::to_value(tc)?,
            "selected": serde_json::to_value(self.selected)?,
        }))
    }
}

struct FitResult {
    model: Model,
    train_losses: Vec<f64>,
    val_losses: Vec<f64>,
}

fn check_uniform(samples: &[GraphSample]) -> Result<(usize, f64)> {
    let first = samples.first().ok_or(Error::EmptyInput("training set"))?;
    for s in samples {
        if s.nodes() != first.nodes() || s.window() != first.window() {
            return Err(Error::DimensionMismatch {
                expected: format!("N={}, T={}", first.nodes(), first.window()),
                found: format!("N={}, T={}", s.nodes(), s.window()),
            });
        }
    }
    Ok((first.nodes(), first.config.field_side))
}

fn mean_eval_loss(model: &Model, prepared: &[PreparedSample]) -> Result<f64> {
    let mut total = 0.0;
    for p in prepared {
        total += masked_mse(&model.predict(p)?, &p.truth, &p.regular_mask)?;
    }
    Ok(total / prepared.len() as f64)
}

fn param_summary(model: &Model) -> String {
    model
        .params
        .names()
        .iter()
        .zip(model.params.values())
        .map(|(n, v)| {
            let max = v.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            format!("{n}: max|w|={max:e}")
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Mini-batch Adam over `train`, optionally scoring `val` after every epoch.
fn fit(
    train: &[&GraphSample],
    val: &[PreparedSample],
    tc: &TrainConfig,
    point: GridPoint,
    seed: u64,
) -> Result<FitResult> {
    let owned: Vec<GraphSample> = train.iter().map(|s| (*s).clone()).collect();
    let (nodes, field) = check_uniform(&owned)?;
    let mut model = Model::init(tc.model_config(nodes, field), derive_seed(seed, &[INIT_STREAM]))?;
    let mut adam = AdamState::new(model.params.values(), point.learning_rate);
    let aug = tc.augment_config();
    let static_prepared: Option<Vec<PreparedSample>> =
        if aug.probability == 0.0 { Some(train.iter().map(|s| s.prepare()).collect::<Result<_>>()?) } else { None };

    let mut train_losses = Vec::with_capacity(tc.epochs);
    let mut val_losses = Vec::new();
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng_for(seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut sample_loss = vec![0.0; train.len()];
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            // Membership comes from the shuffle; rows within a batch stay in
            // index order so pooled statistics do not depend on it.
            let mut chunk = chunk.to_vec();
            chunk.sort_unstable();
            let path = [epoch as u64, b as u64];
            let batch: Vec<PreparedSample> = match &static_prepared {
                Some(p) => chunk.iter().map(|&i| p[i].clone()).collect(),
                None => {
                    let mut rng = rng_for(seed, &[AUGMENT_STREAM, path[0], path[1]]);
                    chunk.iter().map(|&i| augment(train[i], &aug, &mut rng)?.prepare()).collect::<Result<_>>()?
                }
            };
            let refs: Vec<&PreparedSample> = batch.iter().collect();
            let mut rng = rng_for(seed, &[DROPOUT_STREAM, path[0], path[1]]);
            let out = model.forward_batch(&refs, Mode::Train, point.dropout, &mut rng, true)?;
            let grads = out.grads.expect("requested");
            if !out.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("loss {}; {}", out.loss, param_summary(&model)),
                });
            }
            for (&i, &l) in chunk.iter().zip(&out.sample_losses) {
                sample_loss[i] = l;
            }
            model.absorb_batch_stats(out.bn_stats.as_ref().expect("train mode"));
            adam_step(model.params.values_mut(), &grads, &mut adam)?;
        }
        train_losses.push(sample_loss.iter().sum::<f64>() / train.len() as f64);
        if !val.is_empty() {
            val_losses.push(mean_eval_loss(&model, val)?);
        }
    }
    Ok(FitResult { model, train_losses, val_losses })
}

/// Model selection by k-fold cross-validation (when enabled and there is
/// more than one candidate), then a final fit on the whole training set.
pub fn train(samples: &[GraphSample], tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    check_uniform(samples)?;
    let all: Vec<&GraphSample> = samples.iter().collect();
    let candidates = tc.candidates();
    let mut selected = candidates[0];
    let mut cv_scores = Vec::new();
    let mut selected_val: Option<Vec<f64>> = None;

    if tc.cross_validate {
        let ids: Vec<usize> = samples.iter().map(|s| s.topology_id).collect();
        let folds = kfold_split(&ids, tc.folds, derive_seed(tc.seed, &[CV_STREAM]))?;
        let mut best = f64::INFINITY;
        for (c, point) in candidates.iter().enumerate() {
            let mut curve = vec![0.0; tc.epochs];
            for (f, (tr, va)) in folds.iter().enumerate() {
                let train_part: Vec<&GraphSample> = tr.iter().map(|&i| &samples[i]).collect();
                let val_part: Vec<PreparedSample> = va.iter().map(|&i| samples[i].prepare()).collect::<Result<_>>()?;
                let fit_seed = derive_seed(tc.seed, &[CV_STREAM, c as u64, f as u64]);
                let r = fit(&train_part, &val_part, tc, *point, fit_seed)?;
                for (acc, v) in curve.iter_mut().zip(&r.val_losses) {
                    *acc += v / folds.len() as f64;
                }
            }
            let score = curve.last().copied().unwrap_or(f64::INFINITY);
            cv_scores.push((*point, score));
            if score < best {
                best = score;
                selected = *point;
                selected_val = Some(curve);
            }
        }
    }

    let r = fit(&all, &[], tc, selected, tc.seed)?;
    let history = r
        .train_losses
        .iter()
        .enumerate()
        .map(|(e, &l)| EpochRecord {
            epoch: e + 1,
            mean_train_loss: l,
            mean_val_loss: selected_val.as_ref().map(|v| v[e]),
        })
        .collect();
    Ok(TrainOutcome { model: r.model, history, selected, cv_scores })
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,mean_train_loss,mean_val_loss")?;
    for r in history {
        let val = r.mean_val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(w, "{},{:e},{}", r.epoch, r.mean_train_loss, val)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub topology_id: usize,
    pub noise_draw_id: usize,
    /// Masked MSE, m^2.
    pub mse: f64,
    /// Mean Euclidean error, m.
    pub mean_error: f64,
}

/// Per-sample metrics, pooled per-node errors and their aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub samples: Vec<SampleMetrics>,
    /// Euclidean errors of every regular node of every sample, in order.
    pub node_errors: Vec<f64>,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub error_mean: f64,
    pub error_std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsTable {
    pub fn from_predictions(samples: &[GraphSample], predictions: &[crate::numcore::Tensor]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("evaluation set"));
        }
        let mut rows = Vec::with_capacity(samples.len());
        let mut node_errors = Vec::new();
        for (s, pred) in samples.iter().zip(predictions) {
            let truth = crate::numcore::Tensor::from_fn(s.nodes(), 2, |i, k| s.positions[i][k]);
            let mask: Vec<bool> = s.anchor_flags.iter().map(|a| !a).collect();
            node_errors.extend(per_node_errors(pred, &truth, &mask)?);
            rows.push(SampleMetrics {
                topology_id: s.topology_id,
                noise_draw_id: s.noise_draw_id,
                mse: masked_mse(pred, &truth, &mask)?,
                mean_error: mean_euclidean_error(pred, &truth, &mask)?,
            });
        }
        let (mse_mean, mse_std) = mean_std(&rows.iter().map(|r| r.mse).collect::<Vec<_>>());
        let (error_mean, error_std) = mean_std(&rows.iter().map(|r| r.mean_error).collect::<Vec<_>>());
        Ok(Self { samples: rows, node_errors, mse_mean, mse_std, error_mean, error_std })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "topology_id,noise_draw_id,mse_m2,mean_error_m")?;
        for r in &self.samples {
            writeln!(w, "{},{},{:e},{:e}", r.topology_id, r.noise_draw_id, r.mse, r.mean_error)?;
        }
        writeln!(w, "mean,,{:e},{:e}", self.mse_mean, self.error_mean)?;
        writeln!(w, "std,,{:e},{:e}", self.mse_std, self.error_std)?;
        w.flush()?;
        Ok(())
    }
}

/// Eval-mode predictions on every sample, scored against the stored truth.
pub fn evaluate(model: &Model, samples: &[GraphSample]) -> Result<MetricsTable> {
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        if s.nodes() != model.config.nodes {
            return Err(Error::DimensionMismatch {
                expected: format!("{} nodes", model.config.nodes),
                found: format!("{} nodes", s.nodes()),
            });
        }
        predictions.push(model.predict(&s.prepare()?)?);
    }
    MetricsTable::from_predictions(samples, &predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_sim::SimConfig;
    use crate::training::build_dataset;

    fn tiny_data() -> Vec<GraphSample> {
        let cfg = SimConfig { node_count: 12, window: 3, radio_range: 40.0, ..SimConfig::default() };
        build_dataset(&cfg, 5, 4, 21).unwrap()
    }

    fn tiny_tc() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 30,
            hidden_temporal: 8,
            hidden_spatial: 8,
            heads: 2,
            cross_validate: false,
            cv_grid: Vec::new(),
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_reduces_loss() {
        let out = train(&tiny_data(), &tiny_tc()).unwrap();
        let first = out.history.first().unwrap().mean_train_loss;
        let last = out.history.last().unwrap().mean_train_loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let data = tiny_data();
        let tc = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            // Batch statistics pool the batch; one full batch keeps them fixed.
            batch_size: 20,
            augmentation_probability: 0.0,
            dropout: 0.0,
            ..tiny_tc()
        };
        let out = train(&data, &tc).unwrap();
        let init = Model::init(tc.model_config(12, 100.0), derive_seed(tc.seed, &[INIT_STREAM])).unwrap();
        assert_eq!(out.model.params, init.params);
        let losses: Vec<f64> = out.history.iter().map(|r| r.mean_train_loss).collect();
        assert!(losses.iter().all(|&l| l == losses[0]), "{losses:?}");
    }

    #[test]
    fn same_seed_same_history() {
        let data = tiny_data();
        let tc = TrainConfig { epochs: 4, ..tiny_tc() };
        let a = train(&data, &tc).unwrap();
        let b = train(&data, &tc).unwrap();
        let bits = |h: &[EpochRecord]| h.iter().map(|r| r.mean_train_loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.history), bits(&b.history));
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn cross_validation_records_val_curve() {
        let data = tiny_data();
        let tc = TrainConfig {
            epochs: 2,
            folds: 2,
            cross_validate: true,
            cv_grid: vec![
                GridPoint { learning_rate: 0.001, dropout: 0.5 },
                GridPoint { learning_rate: 0.01, dropout: 0.0 },
            ],
            ..tiny_tc()
        };
        let out = train(&data, &tc).unwrap();
        assert_eq!(out.cv_scores.len(), 2);
        assert!(out.history.iter().all(|r| r.mean_val_loss.is_some()));
        let best = out.cv_scores.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        assert!(out.cv_scores.iter().any(|c| c.0 == out.selected && c.1 == best));
    }

    #[test]
    fn oracle_predictions_score_zero_and_aggregates_match() {
        let data = tiny_data();
        let perfect: Vec<_> =
            data.iter().map(|s| crate::numcore::Tensor::from_fn(s.nodes(), 2, |i, k| s.positions[i][k])).collect();
        let m = MetricsTable::from_predictions(&data, &perfect).unwrap();
        assert_eq!((m.mse_mean, m.error_mean), (0.0, 0.0));

        let model = Model::init(tiny_tc().model_config(12, 100.0), 1).unwrap();
        let table = evaluate(&model, &data).unwrap();
        let regular = data[0].anchor_flags.iter().filter(|a| !**a).count();
        assert_eq!(table.node_errors.len(), regular * data.len());
        for (k, row) in table.samples.iter().enumerate() {
            let errs = &table.node_errors[k * regular..(k + 1) * regular];
            let mee = errs.iter().sum::<f64>() / regular as f64;
            let mse = errs.iter().map(|e| e * e).sum::<f64>() / regular as f64;
            assert!((row.mean_error - mee).abs() < 1e-9);
            assert!((row.mse - mse).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_network_size_is_reported() {
        let model = Model::init(tiny_tc().model_config(13, 100.0), 1).unwrap();
        assert!(matches!(evaluate(&model, &tiny_data()), Err(Error::DimensionMismatch { .. })));
    }
}
