//! Batch normalization, the coordinate projection head and the localization
//! losses.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{NodeId, ParamStore, Tape, Tensor};
use crate::Mode;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel scale `gamma`, shift `delta` (both `1 x H`) and running
/// estimates used in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub delta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    /// `gamma = 1`, `delta = 0`, running mean 0 and running variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[1, channels], 1.0),
            delta: Tensor::zeros(&[1, channels]),
            running_mean: Tensor::zeros(&[1, channels]),
            running_var: Tensor::filled(&[1, channels], 1.0),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("batch norm eps must be positive, got {}", self.eps)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("batch norm momentum must lie in [0, 1], got {}", self.momentum)));
        }
        Ok(())
    }

    /// Blends batch statistics into the running estimates. The stored
    /// variance is the unbiased one.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let correction = if stats.rows > 1 { stats.rows as f64 / (stats.rows - 1) as f64 } else { 1.0 };
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(stats.mean.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(stats.var.data()) {
            *r = (1.0 - m) * *r + m * b * correction;
        }
    }

    pub fn register(&self, prefix: &str, store: &mut ParamStore) {
        store.insert(format!("{prefix}.gamma"), self.gamma.clone());
        store.insert(format!("{prefix}.delta"), self.delta.clone());
    }
}

/// Batch mean and biased variance per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub rows: usize,
    pub mean: Tensor,
    pub var: Tensor,
}

/// Train mode normalizes with the statistics of `x` itself and returns them;
/// eval mode uses the running estimates.
pub(crate) fn batch_norm_tape(
    tape: &mut Tape<'_>,
    x: NodeId,
    gamma: NodeId,
    delta: NodeId,
    p: &BatchNormParams,
    mode: Mode,
) -> Result<(NodeId, Option<BatchStats>)> {
    let rows = tape.value(x).rows();
    let channels = tape.value(x).cols();
    if channels != p.channels() {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            left: tape.value(x).shape().to_vec(),
            right: vec![rows, p.channels()],
        });
    }
    let (normalized, stats) = match mode {
        Mode::Train => {
            if rows < 2 {
                return Err(Error::InvalidConfig(format!(
                    "batch norm in train mode needs at least 2 rows, got {rows}"
                )));
            }
            let inv_m = 1.0 / rows as f64;
            let sums = tape.column_sums(x);
            let mean = tape.scale(sums, inv_m);
            let neg_mean = tape.scale(mean, -1.0);
            let centered = tape.add_row(x, neg_mean)?;
            let sq = tape.mul(centered, centered)?;
            let sq_sums = tape.column_sums(sq);
            let var = tape.scale(sq_sums, inv_m);
            let shifted = tape.add_scalar(var, p.eps);
            let inv_std = tape.powf(shifted, -0.5);
            let stats = BatchStats { rows, mean: tape.value(mean).clone(), var: tape.value(var).clone() };
            (tape.mul_row(centered, inv_std)?, Some(stats))
        }
        Mode::Eval => {
            let neg_mean = tape.leaf(p.running_mean.map(|v| -v));
            let inv_std = tape.leaf(p.running_var.map(|v| 1.0 / (v + p.eps).sqrt()));
            let centered = tape.add_row(x, neg_mean)?;
            (tape.mul_row(centered, inv_std)?, None)
        }
    };
    let scaled = tape.mul_row(normalized, gamma)?;
    Ok((tape.add_row(scaled, delta)?, stats))
}

/// `Z = gamma * g_hat + delta`. The second value holds the batch statistics
/// in train mode; pass them to [`BatchNormParams::update_running`].
pub fn batch_norm(g: &Tensor, p: &BatchNormParams, mode: Mode) -> Result<(Tensor, Option<BatchStats>)> {
    p.validate()?;
    let mut tape = Tape::new();
    let x = tape.leaf_ref(g);
    let gamma = tape.leaf_ref(&p.gamma);
    let delta = tape.leaf_ref(&p.delta);
    let (z, stats) = batch_norm_tape(&mut tape, x, gamma, delta, p, mode)?;
    Ok((tape.value(z).clone(), stats))
}

/// Fully connected head: `W` is `2 x H`, `b` is `1 x 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ProjectionParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rows() != 2 || bias.shape() != [1, 2] {
            return Err(Error::ShapeMismatch {
                op: "projection params",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    /// Uniform weights in `[-1/sqrt(H), 1/sqrt(H)]` and the given bias.
    pub fn init<R: Rng + ?Sized>(hidden: usize, bias: [f64; 2], rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            weight: Tensor::from_fn(2, hidden, |_, _| rng.gen_range(-bound..=bound)),
            bias: Tensor::row(bias.to_vec()),
        }
    }

    pub fn register(&self, prefix: &str, store: &mut ParamStore) {
        store.insert(format!("{prefix}.W"), self.weight.clone());
        store.insert(format!("{prefix}.b"), self.bias.clone());
    }
}

pub(crate) fn project_tape(tape: &mut Tape<'_>, z: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let lin = tape.matmul_t(z, w, false, true)?;
    tape.add_row(lin, b)
}

/// Row `i` becomes `W Z_i + b`.
pub fn project_coordinates(z: &Tensor, p: &ProjectionParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let zn = tape.leaf_ref(z);
    let w = tape.leaf_ref(&p.weight);
    let b = tape.leaf_ref(&p.bias);
    let out = project_tape(&mut tape, zn, w, b)?;
    Ok(tape.value(out).clone())
}

fn check_pair(pred: &Tensor, truth: &Tensor, mask: &[bool]) -> Result<usize> {
    if pred.shape() != truth.shape() || pred.cols() != 2 || pred.rows() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "localization loss",
            left: pred.shape().to_vec(),
            right: truth.shape().to_vec(),
        });
    }
    let regular = mask.iter().filter(|&&m| m).count();
    if regular == 0 {
        return Err(Error::NoRegularNodes);
    }
    Ok(regular)
}

/// Squared coordinate errors of the regular nodes, in node order.
pub fn per_node_squared_errors(pred: &Tensor, truth: &Tensor, mask: &[bool]) -> Result<Vec<f64>> {
    check_pair(pred, truth, mask)?;
    Ok((0..mask.len())
        .filter(|&i| mask[i])
        .map(|i| {
            let dx = truth.get(i, 0) - pred.get(i, 0);
            let dy = truth.get(i, 1) - pred.get(i, 1);
            dx * dx + dy * dy
        })
        .collect())
}

/// Euclidean errors (m) of the regular nodes, in node order.
pub fn per_node_errors(pred: &Tensor, truth: &Tensor, mask: &[bool]) -> Result<Vec<f64>> {
    Ok(per_node_squared_errors(pred, truth, mask)?.into_iter().map(f64::sqrt).collect())
}

/// Mean over regular nodes of the squared coordinate error (m^2).
pub fn masked_mse(pred: &Tensor, truth: &Tensor, mask: &[bool]) -> Result<f64> {
    let sq = per_node_squared_errors(pred, truth, mask)?;
    Ok(sq.iter().sum::<f64>() / sq.len() as f64)
}

/// Mean over regular nodes of the Euclidean error (m).
pub fn mean_euclidean_error(pred: &Tensor, truth: &Tensor, mask: &[bool]) -> Result<f64> {
    let e = per_node_errors(pred, truth, mask)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// `N x 2` matrix with ones on regular rows.
pub(crate) fn mask_matrix(mask: &[bool]) -> Tensor {
    Tensor::from_fn(mask.len(), 2, |i, _| if mask[i] { 1.0 } else { 0.0 })
}

pub(crate) fn masked_mse_tape<'a>(
    tape: &mut Tape<'a>,
    pred: NodeId,
    truth: &'a Tensor,
    mask: &[bool],
) -> Result<NodeId> {
    let regular = check_pair(tape.value(pred), truth, mask)?;
    let t = tape.leaf_ref(truth);
    let m = tape.leaf(mask_matrix(mask));
    let diff = tape.sub(pred, t)?;
    let masked = tape.mul(diff, m)?;
    let sq = tape.mul(masked, masked)?;
    let total = tape.sum_all(sq);
    Ok(tape.scale(total, 1.0 / regular as f64))
}
