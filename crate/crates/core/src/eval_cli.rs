//! Experiment configuration files, parameter sweeps and empirical CDFs.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::net_sim::SimConfig;
use crate::training::{build_dataset, evaluate, mean_std, train, train_test_split, GraphSample, TrainConfig};

/// Size of a generated dataset and its held-out share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub topologies: usize,
    pub draws: usize,
    pub test_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { topologies: 100, draws: 10, test_fraction: 0.2 }
    }
}

/// Contents of a `--config` file: `{"sim": {..}, "train": {..}, "dataset": {..}}`,
/// each section optional and keyed by the field names of its struct.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.sim.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Noise,
    Nodes,
    Kappa,
    Twindow,
    Dth,
    Alpha,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        SweepParam::Noise,
        SweepParam::Nodes,
        SweepParam::Kappa,
        SweepParam::Twindow,
        SweepParam::Dth,
        SweepParam::Alpha,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Noise => "noise",
            SweepParam::Nodes => "nodes",
            SweepParam::Kappa => "kappa",
            SweepParam::Twindow => "twindow",
            SweepParam::Dth => "dth",
            SweepParam::Alpha => "alpha",
        }
    }

    /// Range covered by the published experiments; values outside it are
    /// flagged as extrapolation.
    pub fn studied_range(self) -> (f64, f64) {
        match self {
            SweepParam::Noise => (0.04, 0.5),
            SweepParam::Nodes => (100.0, 500.0),
            SweepParam::Kappa => (0.0, 1.0),
            SweepParam::Twindow => (3.0, 30.0),
            SweepParam::Dth => (2.0, 100.0),
            SweepParam::Alpha => (0.0, 0.5),
        }
    }

    pub fn is_studied(self, value: f64) -> bool {
        let (lo, hi) = self.studied_range();
        (lo..=hi).contains(&value)
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &SimConfig, value: f64) -> Result<SimConfig> {
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} needs a whole number, got {v}", self.as_str())))
            }
        };
        let mut cfg = base.clone();
        match self {
            SweepParam::Noise => cfg.noise_variance = value,
            SweepParam::Nodes => cfg.node_count = as_count(value)?,
            SweepParam::Kappa => cfg.interference_scale = value,
            SweepParam::Twindow => cfg.window = as_count(value)?,
            SweepParam::Dth => cfg.radio_range = value,
            SweepParam::Alpha => cfg.anchor_fraction = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Unknown { kind: "sweep parameter", value: s.to_string() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub base: ExperimentConfig,
}

/// One `(model, value, seed)` run. `error` is set when the run failed; the
/// metrics are then NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model: ModelKind,
    pub value: f64,
    pub seed: u64,
    pub mse: f64,
    pub mean_error: f64,
    pub final_train_loss: f64,
    pub extrapolated: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepAggregate {
    pub model: ModelKind,
    pub value: f64,
    pub runs: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub error_mean: f64,
    pub error_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepResult {
    pub fn aggregate(&self, model: ModelKind, value: f64) -> Option<&SweepAggregate> {
        self.aggregates.iter().find(|a| a.model == model && a.value == value)
    }
}

/// Builds the dataset for one sweep point and splits it topology-disjointly.
pub fn sweep_point_data(
    base: &ExperimentConfig,
    param: SweepParam,
    value: f64,
    seed: u64,
) -> Result<(Vec<GraphSample>, Vec<GraphSample>)> {
    let sim = param.apply(&base.sim, value)?;
    let data = build_dataset(&sim, base.dataset.topologies, base.dataset.draws, seed)?;
    let ids: Vec<usize> = data.iter().map(|s| s.topology_id).collect();
    let (tr, te) = train_test_split(&ids, base.dataset.test_fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((pick(&tr), pick(&te)))
}

fn run_one(train_set: &[GraphSample], test_set: &[GraphSample], tc: &TrainConfig) -> Result<(f64, f64, f64)> {
    let out = train(train_set, tc)?;
    let m = evaluate(&out.model, test_set)?;
    let last = out.history.last().map(|r| r.mean_train_loss).unwrap_or(f64::NAN);
    Ok((m.mse_mean, m.error_mean, last))
}

/// Every value, seed and model in spec order. All models of one
/// `(value, seed)` see the same dataset. Failed runs are recorded and the
/// sweep continues.
pub fn run_sweep(spec: &SweepSpec, mut progress: impl FnMut(&SweepRow)) -> Result<SweepResult> {
    if spec.values.is_empty() || spec.models.is_empty() || spec.seeds.is_empty() {
        return Err(Error::EmptyInput("sweep values, models and seeds"));
    }
    let mut rows = Vec::new();
    for &value in &spec.values {
        for &seed in &spec.seeds {
            let data = sweep_point_data(&spec.base, spec.param, value, seed);
            for &model in &spec.models {
                let tc = TrainConfig { model, seed, ..spec.base.train.clone() };
                let result = data
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|(tr, te)| run_one(tr, te, &tc).map_err(|e| e.to_string()));
                let row = match result {
                    Ok((mse, mean_error, final_train_loss)) => SweepRow {
                        model,
                        value,
                        seed,
                        mse,
                        mean_error,
                        final_train_loss,
                        extrapolated: !spec.param.is_studied(value),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        model,
                        value,
                        seed,
                        mse: f64::NAN,
                        mean_error: f64::NAN,
                        final_train_loss: f64::NAN,
                        extrapolated: !spec.param.is_studied(value),
                        error: Some(e),
                    },
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    let mut aggregates = Vec::new();
    for &model in &spec.models {
        for &value in &spec.values {
            let ok: Vec<&SweepRow> =
                rows.iter().filter(|r| r.model == model && r.value == value && r.error.is_none()).collect();
            let (mse_mean, mse_std) = mean_std(&ok.iter().map(|r| r.mse).collect::<Vec<_>>());
            let (error_mean, error_std) = mean_std(&ok.iter().map(|r| r.mean_error).collect::<Vec<_>>());
            aggregates.push(SweepAggregate { model, value, runs: ok.len(), mse_mean, mse_std, error_mean, error_std });
        }
    }
    Ok(SweepResult { param: spec.param, rows, aggregates })
}

/// CSV with one `run` row per `(model, value, seed)` followed by one
/// `aggregate` row per `(model, value)`.
pub fn write_sweep_csv(path: impl AsRef<Path>, result: &SweepResult) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "kind,model,param,value,seed,runs,mse_m2,mse_std_m2,mean_error_m,mean_error_std_m,final_train_loss_m2,extrapolated,error"
    )?;
    for r in &result.rows {
        writeln!(
            w,
            "run,{},{},{},{},1,{:e},,{:e},,{:e},{},{}",
            r.model,
            result.param,
            r.value,
            r.seed,
            r.mse,
            r.mean_error,
            r.final_train_loss,
            r.extrapolated,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )?;
    }
    for a in &result.aggregates {
        writeln!(
            w,
            "aggregate,{},{},{},,{},{:e},{:e},{:e},{:e},,{},",
            a.model,
            result.param,
            a.value,
            a.runs,
            a.mse_mean,
            a.mse_std,
            a.error_mean,
            a.error_std,
            !result.param.is_studied(a.value),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Empirical CDF: errors ascending, probability `k / M` at the `k`-th.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub errors: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl CdfSeries {
    /// Smallest error whose cumulative probability reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let idx = self.probabilities.partition_point(|&p| p < q);
        self.errors[idx.min(self.errors.len() - 1)]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "error_m,probability")?;
        for (e, p) in self.errors.iter().zip(&self.probabilities) {
            writeln!(w, "{e:e},{p}")?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn emit_cdf(errors: &[f64]) -> Result<CdfSeries> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("cdf errors"));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidConfig("cdf errors contain NaN".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut probabilities: Vec<f64> = (1..=m).map(|k| k as f64 / m as f64).collect();
    probabilities[m - 1] = 1.0;
    Ok(CdfSeries { errors: sorted, probabilities })
}


/// Worst relative error per parameter of one end-to-end gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub model: ModelKind,
    pub per_param: Vec<(String, f64)>,
    pub max_relative_error: f64,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// The small configuration used when no file is given: six nodes, three
/// timestamps, hidden sizes four, two heads.
pub fn gradcheck_default_config() -> ExperimentConfig {
    ExperimentConfig {
        sim: SimConfig { node_count: 6, window: 3, radio_range: 60.0, anchor_fraction: 0.34, ..SimConfig::default() },
        train: TrainConfig { hidden_temporal: 4, hidden_spatial: 4, heads: 2, ..TrainConfig::default() },
        dataset: DatasetSpec { topologies: 1, draws: 2, test_fraction: 0.2 },
    }
}

/// Absolute scale below which gradient entries are compared absolutely: an
/// O(1e4) loss cannot resolve derivatives much smaller than `1e-8 |L|`.
pub fn gradcheck_floor(loss: f64) -> f64 {
    (1e-8 * loss.abs()).max(1e-6)
}

/// Compares the analytic gradient of a train-mode mini-batch loss (dropout
/// off, batch statistics on) against central differences for every model.
pub fn run_gradcheck(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<GradcheckReport>> {
    use crate::model::{Model, PreparedSample};
    use crate::numcore::{best_relative_error, finite_diff_grad, finite_diff_grad5, Tensor};
    use crate::seeding::rng_for;
    use crate::Mode;

    let data = build_dataset(&cfg.sim, cfg.dataset.topologies, cfg.dataset.draws.max(2), seed)?;
    let prepared: Vec<PreparedSample> = data.iter().map(GraphSample::prepare).collect::<Result<_>>()?;
    let refs: Vec<&PreparedSample> = prepared.iter().collect();
    let mut reports = Vec::new();
    for kind in ModelKind::ALL {
        let tc = TrainConfig { model: kind, ..cfg.train.clone() };
        let model = Model::init(tc.model_config(cfg.sim.node_count, cfg.sim.field_side), seed)?;
        let loss_at = |m: &Model, grads: bool| m.forward_batch(&refs, Mode::Train, 0.0, &mut rng_for(0, &[]), grads);
        let base = loss_at(&model, true)?;
        let floor = gradcheck_floor(base.loss);
        let analytic = base.grads.expect("requested");
        let mut probe = model.clone();
        let mut objective = |p: &[Tensor]| {
            probe.params.values_mut().clone_from_slice(p);
            loss_at(&probe, false).map(|o| o.loss).unwrap_or(f64::NAN)
        };
        // Losses are O(1e3..1e4) m^2: wide fourth-order steps keep roundoff
        // below the smallest attention gradients, the narrow one sidesteps ReLU kinks.
        let coarse = finite_diff_grad5(&mut objective, model.params.values(), 1e-3);
        let medium = finite_diff_grad5(&mut objective, model.params.values(), 1e-4);
        let fine = finite_diff_grad(&mut objective, model.params.values(), 1e-5);
        let per_param: Vec<(String, f64)> = model
            .params
            .names()
            .iter()
            .zip(analytic.iter().zip(coarse.iter().zip(medium.iter().zip(&fine))))
            .map(|(n, (a, (c, (m, f))))| (n.clone(), best_relative_error(a, &[c, m, f], floor)))
            .collect();
        let max = per_param.iter().map(|p| p.1).fold(0.0, f64::max);
        reports.push(GradcheckReport { model: kind, per_param, max_relative_error: max });
    }
    Ok(reports)
}
