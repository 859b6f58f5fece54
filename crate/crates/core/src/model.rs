//! The full localization network and its two ablations, assembled from the
//! temporal, spatial and synthesis stages.
//!
//! Batch normalization pools node rows across every graph in a mini-batch,
//! which couples the samples. A batch is therefore evaluated in two stages:
//! one tape per sample up to the spatial output `g''`, then one shared tape
//! from the pooled `g''` rows to the loss. Backward runs on the shared tape
//! first and seeds each per-sample tape with its `g''` gradient.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{ewma_encode, EwmaConfig, DEFAULT_EWMA_DECAY};
use crate::error::{Error, Result};
use crate::global_synthesis::{
    batch_norm_tape, masked_mse_tape, project_tape, BatchNormParams, BatchStats, ProjectionParams, BN_EPS, BN_MOMENTUM,
};
use crate::net_sim::AdjacencyMatrix;
use crate::numcore::{Checkpoint, NeighborIndex, NodeId, ParamStore, Tape, Tensor};
use crate::preprocess::{slice_timesteps, ProcessedFeatures};
use crate::seeding::rng_for;
use crate::spatial_attention::{neighbor_index, spatial_tape, AttentionLayerWeights, AttentionNodes, DropoutSpec};
use crate::temporal_encoder::{bilstm_tape, LstmNodes, LstmWeights, GATES};
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// BiLSTM temporal encoder.
    Ubigtloc,
    /// Last snapshot only.
    Baseline1,
    /// Exponentially weighted moving average over the window.
    Baseline2,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ubigtloc, ModelKind::Baseline1, ModelKind::Baseline2];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ubigtloc => "ubigtloc",
            ModelKind::Baseline1 => "baseline1",
            ModelKind::Baseline2 => "baseline2",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown { kind: "model", value: s.to_string() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Network size `N`; inputs are `N + 2` wide.
    pub nodes: usize,
    /// LSTM hidden size per direction.
    pub hidden_temporal: usize,
    /// Attention hidden size.
    pub hidden_spatial: usize,
    pub heads: usize,
    /// Apply dropout after the second attention layer as well.
    pub dropout_after_second_layer: bool,
    pub ewma_decay: f64,
    /// Field side in meters; the head predicts coordinates in units of it.
    pub field_side: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Ubigtloc,
            nodes: 100,
            hidden_temporal: 500,
            hidden_spatial: 500,
            heads: 4,
            dropout_after_second_layer: true,
            ewma_decay: DEFAULT_EWMA_DECAY,
            field_side: 100.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::InvalidConfig(format!("model needs at least 2 nodes, got {}", self.nodes)));
        }
        if self.hidden_temporal == 0 || self.hidden_spatial == 0 || self.heads == 0 {
            return Err(Error::InvalidConfig("hidden sizes and head count must be positive".into()));
        }
        if !(self.field_side > 0.0) {
            return Err(Error::InvalidConfig(format!("field side must be positive, got {}", self.field_side)));
        }
        EwmaConfig { decay: self.ewma_decay }.validate()
    }

    pub fn input_width(&self) -> usize {
        self.nodes + 2
    }

    /// Width of the attention input: `2 H1` after the BiLSTM, `N + 2` for the
    /// ablations.
    pub fn spatial_input_width(&self) -> usize {
        match self.kind {
            ModelKind::Ubigtloc => 2 * self.hidden_temporal,
            ModelKind::Baseline1 | ModelKind::Baseline2 => self.input_width(),
        }
    }
}

/// One graph ready for the network: normalized slices, neighbor index,
/// ground truth in meters and the regular-node mask.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub slices: Vec<Tensor>,
    pub index: NeighborIndex,
    pub truth: Tensor,
    pub regular_mask: Vec<bool>,
}

impl PreparedSample {
    pub fn new(
        features: &ProcessedFeatures,
        adjacency: &AdjacencyMatrix,
        positions: &[[f64; 2]],
        anchor_flags: &[bool],
    ) -> Result<Self> {
        let n = features.nodes();
        if adjacency.node_count() != n || positions.len() != n || anchor_flags.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} nodes"),
                found: format!(
                    "adjacency {}, positions {}, anchor flags {}",
                    adjacency.node_count(),
                    positions.len(),
                    anchor_flags.len()
                ),
            });
        }
        Ok(Self {
            slices: slice_timesteps(features),
            index: neighbor_index(adjacency),
            truth: Tensor::from_fn(n, 2, |i, k| positions[i][k]),
            regular_mask: anchor_flags.iter().map(|a| !a).collect(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.truth.rows()
    }

    pub fn window(&self) -> usize {
        self.slices.len()
    }
}

/// Result of evaluating one mini-batch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// Mean of the per-sample masked MSE (m^2).
    pub loss: f64,
    pub sample_losses: Vec<f64>,
    /// Predictions in meters, one `N x 2` matrix per sample.
    pub predictions: Vec<Tensor>,
    /// Gradients aligned with [`Model::params`] when requested.
    pub grads: Option<Vec<Tensor>>,
    /// Pooled batch-norm statistics in train mode.
    pub bn_stats: Option<BatchStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Trainable parameters.
    pub params: ParamStore,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

const INIT_STREAM: u64 = 0x1a17;

fn attn_prefix(layer: usize) -> String {
    format!("attn{layer}")
}

impl Model {
    /// Fresh weights drawn from a stream derived from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[INIT_STREAM]);
        let mut params = ParamStore::new();
        if config.kind == ModelKind::Ubigtloc {
            LstmWeights::init(config.hidden_temporal, config.input_width(), &mut rng).register("lstm.fwd", &mut params);
            LstmWeights::init(config.hidden_temporal, config.input_width(), &mut rng).register("lstm.bwd", &mut params);
        }
        let h2 = config.hidden_spatial;
        AttentionLayerWeights::init(config.heads, h2, config.spatial_input_width(), &mut rng)
            .register(&attn_prefix(1), &mut params);
        AttentionLayerWeights::init(config.heads, h2, h2, &mut rng).register(&attn_prefix(2), &mut params);
        let bn = BatchNormParams::new(h2);
        bn.register("bn", &mut params);
        // The head predicts field-normalized coordinates; start at the center.
        ProjectionParams::init(h2, [0.5, 0.5], &mut rng).register("head", &mut params);
        Ok(Self { config, params, running_mean: bn.running_mean, running_var: bn.running_var })
    }

    fn param(&self, name: &str) -> Result<usize> {
        self.params.position(name).ok_or_else(|| Error::Unknown { kind: "parameter", value: name.to_string() })
    }

    fn lstm_nodes(&self, tape: &mut Tape<'_>, ids: &[NodeId], prefix: &str) -> Result<LstmNodes> {
        let mut w = [ids[0]; 4];
        let mut b = [ids[0]; 4];
        for (g, gate) in GATES.iter().enumerate() {
            w[g] = ids[self.param(&format!("{prefix}.W_{gate}"))?];
            b[g] = ids[self.param(&format!("{prefix}.b_{gate}"))?];
        }
        LstmNodes::stack(tape, w, b)
    }

    fn attention_nodes(&self, ids: &[NodeId], layer: usize) -> Result<AttentionNodes> {
        let prefix = attn_prefix(layer);
        let per_head = |m: &str| -> Result<Vec<NodeId>> {
            (1..=self.config.heads).map(|e| Ok(ids[self.param(&format!("{prefix}.head{e}.{m}"))?])).collect()
        };
        Ok(AttentionNodes {
            query: per_head("Wq")?,
            key: per_head("Wk")?,
            value: per_head("Wv")?,
            skip: ids[self.param(&format!("{prefix}.W0"))?],
            merge: ids[self.param(&format!("{prefix}.WE"))?],
            hidden: self.config.hidden_spatial,
        })
    }

    fn check_sample(&self, s: &PreparedSample) -> Result<()> {
        let n = self.config.nodes;
        let width_ok = s.slices.iter().all(|x| x.shape() == [n, n + 2]);
        if s.nodes() != n || !width_ok || s.index.node_count() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("[{n}, {}] slices", n + 2),
                found: format!("{:?}", s.slices.first().map(|x| x.shape().to_vec())),
            });
        }
        if s.slices.is_empty() {
            return Err(Error::EmptyInput("sample window"));
        }
        Ok(())
    }

    /// Per-sample stage: features to `g''` on `tape`.
    fn encode<'a, R: Rng + ?Sized>(
        &'a self,
        tape: &mut Tape<'a>,
        sample: &'a PreparedSample,
        mode: Mode,
        dropout: f64,
        rng: &mut R,
    ) -> Result<(Vec<NodeId>, NodeId)> {
        let ids: Vec<NodeId> = self.params.values().iter().map(|t| tape.leaf_ref(t)).collect();
        let g = match self.config.kind {
            ModelKind::Ubigtloc => {
                let fwd = self.lstm_nodes(tape, &ids, "lstm.fwd")?;
                let bwd = self.lstm_nodes(tape, &ids, "lstm.bwd")?;
                let xs: Vec<NodeId> = sample.slices.iter().map(|x| tape.leaf_ref(x)).collect();
                bilstm_tape(tape, &xs, &fwd, &bwd)?
            }
            ModelKind::Baseline1 => tape.leaf_ref(sample.slices.last().expect("checked non-empty")),
            ModelKind::Baseline2 => {
                let cfg = EwmaConfig { decay: self.config.ewma_decay };
                tape.leaf(ewma_encode(&sample.slices, &cfg)?)
            }
        };
        let l1 = self.attention_nodes(&ids, 1)?;
        let l2 = self.attention_nodes(&ids, 2)?;
        let spec = DropoutSpec { probability: dropout, after_second_layer: self.config.dropout_after_second_layer };
        let (_, g2) = spatial_tape(tape, g, &sample.index, &l1, &l2, mode, spec, rng)?;
        Ok((ids, g2))
    }

    fn bn_params(&self) -> BatchNormParams {
        BatchNormParams {
            gamma: self.params.get("bn.gamma").expect("registered").clone(),
            delta: self.params.get("bn.delta").expect("registered").clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    /// Forward (and optionally backward) over a mini-batch. Train mode
    /// applies dropout and normalizes with the pooled batch statistics; it
    /// does not touch the running estimates (see [`Model::absorb_batch_stats`]).
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        samples: &[&PreparedSample],
        mode: Mode,
        dropout: f64,
        rng: &mut R,
        compute_grads: bool,
    ) -> Result<BatchOutput> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("mini-batch"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidConfig(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        for s in samples {
            self.check_sample(s)?;
        }
        let mut stage_a = Vec::with_capacity(samples.len());
        let mut g2_values = Vec::with_capacity(samples.len());
        for s in samples {
            let mut tape = Tape::new();
            let (ids, g2) = self.encode(&mut tape, s, mode, dropout, rng)?;
            g2_values.push(tape.value(g2).clone());
            if compute_grads {
                stage_a.push((tape, ids, g2));
            }
        }

        let bn = self.bn_params();
        let mut tape = Tape::new();
        let g2_ids: Vec<NodeId> = g2_values.iter().map(|v| tape.leaf_ref(v)).collect();
        let pooled = if g2_ids.len() == 1 { g2_ids[0] } else { tape.concat_rows(&g2_ids)? };
        let gamma_pos = self.param("bn.gamma")?;
        let delta_pos = self.param("bn.delta")?;
        let w_pos = self.param("head.W")?;
        let b_pos = self.param("head.b")?;
        let gamma = tape.leaf_ref(&self.params.values()[gamma_pos]);
        let delta = tape.leaf_ref(&self.params.values()[delta_pos]);
        let w = tape.leaf_ref(&self.params.values()[w_pos]);
        let b = tape.leaf_ref(&self.params.values()[b_pos]);
        let (z, bn_stats) = batch_norm_tape(&mut tape, pooled, gamma, delta, &bn, mode)?;
        let unit = project_tape(&mut tape, z, w, b)?;
        let pred = tape.scale(unit, self.config.field_side);

        let n = self.config.nodes;
        let mut sample_losses = Vec::with_capacity(samples.len());
        let mut predictions = Vec::with_capacity(samples.len());
        let mut total = None;
        for (i, s) in samples.iter().enumerate() {
            let p = tape.slice_rows(pred, i * n, n)?;
            predictions.push(tape.value(p).clone());
            let l = masked_mse_tape(&mut tape, p, &s.truth, &s.regular_mask)?;
            sample_losses.push(tape.value(l).item());
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        let loss_id = tape.scale(total.expect("non-empty batch"), 1.0 / samples.len() as f64);
        let loss = tape.value(loss_id).item();

        let grads = if compute_grads {
            let gb = tape.backward(loss_id)?;
            let mut grads: Vec<Tensor> = self.params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for (pos, id) in [(gamma_pos, gamma), (delta_pos, delta), (w_pos, w), (b_pos, b)] {
                if let Some(g) = gb.get(id) {
                    grads[pos] = g.clone();
                }
            }
            for ((a_tape, ids, g2), g2_leaf) in stage_a.iter().zip(&g2_ids) {
                let seed = gb.get_or_zeros(*g2_leaf, tape.value(*g2_leaf));
                let ga = a_tape.backward_seeded(&[(*g2, seed)])?;
                for (acc, id) in grads.iter_mut().zip(ids) {
                    if let Some(g) = ga.get(*id) {
                        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += v;
                        }
                    }
                }
            }
            Some(grads)
        } else {
            None
        };
        Ok(BatchOutput { loss, sample_losses, predictions, grads, bn_stats })
    }

    /// Blends train-mode batch statistics into the running estimates.
    pub fn absorb_batch_stats(&mut self, stats: &BatchStats) {
        let mut bn = self.bn_params();
        bn.update_running(stats);
        self.running_mean = bn.running_mean;
        self.running_var = bn.running_var;
    }

    /// Eval-mode predictions in meters.
    pub fn predict(&self, sample: &PreparedSample) -> Result<Tensor> {
        let mut rng = rng_for(0, &[]);
        let mut out = self.forward_batch(&[sample], Mode::Eval, 0.0, &mut rng, false)?;
        Ok(out.predictions.pop().expect("one sample"))
    }

    /// Parameters plus running statistics under their checkpoint names.
    pub fn checkpoint(&self, extra_meta: serde_json::Value) -> Result<Checkpoint> {
        let mut store = self.params.clone();
        store.insert("bn.run_mu", self.running_mean.clone());
        store.insert("bn.run_var", self.running_var.clone());
        let meta = serde_json::json!({
            "model": serde_json::to_value(&self.config)?,
            "extra": extra_meta,
        });
        Ok(Checkpoint::from_store(&store, meta))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(
            ckpt.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::InvalidConfig("checkpoint lacks model configuration".into()))?,
        )?;
        let mut model = Self::init(config, 0)?;
        let mut store = model.params.clone();
        store.insert("bn.run_mu", model.running_mean.clone());
        store.insert("bn.run_var", model.running_var.clone());
        ckpt.load_into(&mut store)?;
        for (name, value) in store.names().iter().zip(store.values()) {
            match name.as_str() {
                "bn.run_mu" => model.running_mean = value.clone(),
                "bn.run_var" => model.running_var = value.clone(),
                _ => {
                    model.params.insert(name.clone(), value.clone());
                }
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_sim::{acquire_features, compute_adjacency, generate_topology, SimConfig};
    use crate::numcore::{best_relative_error, finite_diff_grad, finite_diff_grad5};
    use crate::preprocess::preprocess;

    fn tiny_samples(n: usize, t: usize, count: usize) -> Vec<PreparedSample> {
        let cfg = SimConfig {
            node_count: n,
            window: t,
            radio_range: 60.0,
            anchor_fraction: 0.34,
            seed: 11,
            ..SimConfig::default()
        };
        let topo = generate_topology(&cfg).unwrap();
        let a = compute_adjacency(&topo, cfg.radio_range);
        (0..count)
            .map(|d| {
                let mut rng = rng_for(3, &[d as u64]);
                let f = acquire_features(&topo, &a, &cfg, &mut rng).unwrap();
                let (p, _) = preprocess(&f);
                PreparedSample::new(&p, &a, &topo.positions, &topo.anchor_flags).unwrap()
            })
            .collect()
    }

    fn tiny_config(kind: ModelKind) -> ModelConfig {
        ModelConfig { kind, nodes: 6, hidden_temporal: 4, hidden_spatial: 4, heads: 2, ..ModelConfig::default() }
    }

    #[test]
    fn parameter_names_follow_checkpoint_layout() {
        let m = Model::init(tiny_config(ModelKind::Ubigtloc), 1).unwrap();
        for name in [
            "lstm.fwd.W_lambda",
            "lstm.bwd.b_o",
            "attn1.head1.Wq",
            "attn1.head2.Wv",
            "attn2.W0",
            "attn2.WE",
            "bn.gamma",
            "bn.delta",
            "head.W",
            "head.b",
        ] {
            assert!(m.params.get(name).is_some(), "{name}");
        }
        let b1 = Model::init(tiny_config(ModelKind::Baseline1), 1).unwrap();
        assert!(b1.params.get("lstm.fwd.W_lambda").is_none());
        assert_eq!(b1.params.get("attn1.W0").unwrap().shape(), &[4, 8]);
    }

    #[test]
    fn kind_parses_and_prints() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("gcn".parse::<ModelKind>().is_err());
    }

    fn check_end_to_end_gradient(kind: ModelKind) {
        let samples = tiny_samples(6, 3, 2);
        let refs: Vec<&PreparedSample> = samples.iter().collect();
        let model = Model::init(tiny_config(kind), 5).unwrap();
        let out = model.forward_batch(&refs, Mode::Train, 0.0, &mut rng_for(0, &[]), true).unwrap();
        let analytic = out.grads.unwrap();
        let objective = |p: &[Tensor]| {
            let mut m = model.clone();
            m.params.values_mut().clone_from_slice(p);
            m.forward_batch(&refs, Mode::Train, 0.0, &mut rng_for(0, &[]), false).unwrap().loss
        };
        // The loss is O(1e4) m^2: wide fourth-order steps keep roundoff below
        // the smallest attention gradients, the narrow one sidesteps ReLU kinks.
        let coarse = finite_diff_grad5(objective, model.params.values(), 1e-3);
        let medium = finite_diff_grad5(objective, model.params.values(), 1e-4);
        let fine = finite_diff_grad(objective, model.params.values(), 1e-5);
        let err = analytic
            .iter()
            .zip(coarse.iter().zip(medium.iter().zip(&fine)))
            .map(|(a, (c, (m, f)))| best_relative_error(a, &[c, m, f], crate::eval_cli::gradcheck_floor(out.loss)))
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{kind}: relative error {err}");
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        check_end_to_end_gradient(ModelKind::Ubigtloc);
        check_end_to_end_gradient(ModelKind::Baseline2);
    }

    #[test]
    fn fresh_model_predicts_near_field_center_scale() {
        let samples = tiny_samples(6, 3, 1);
        let model = Model::init(tiny_config(ModelKind::Ubigtloc), 2).unwrap();
        let p = model.predict(&samples[0]).unwrap();
        assert_eq!(p.shape(), &[6, 2]);
        assert!(p.is_finite());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let samples = tiny_samples(6, 3, 1);
        let mut cfg = tiny_config(ModelKind::Ubigtloc);
        cfg.nodes = 7;
        let model = Model::init(cfg, 2).unwrap();
        assert!(matches!(model.predict(&samples[0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let samples = tiny_samples(6, 3, 2);
        let mut model = Model::init(tiny_config(ModelKind::Ubigtloc), 3).unwrap();
        let refs: Vec<&PreparedSample> = samples.iter().collect();
        let out = model.forward_batch(&refs, Mode::Train, 0.5, &mut rng_for(1, &[]), false).unwrap();
        model.absorb_batch_stats(&out.bn_stats.unwrap());
        let ckpt = model.checkpoint(serde_json::json!({"note": 1})).unwrap();
        let restored = Model::from_checkpoint(&ckpt).unwrap();
        assert_eq!(restored, model);
        assert_eq!(restored.predict(&samples[0]).unwrap(), model.predict(&samples[0]).unwrap());
    }

    #[test]
    fn perturbing_anchor_truth_leaves_loss_unchanged() {
        let mut samples = tiny_samples(6, 3, 1);
        let model = Model::init(tiny_config(ModelKind::Baseline1), 4).unwrap();
        let base = model.forward_batch(&[&samples[0]], Mode::Eval, 0.0, &mut rng_for(0, &[]), false).unwrap().loss;
        let anchor = samples[0].regular_mask.iter().position(|r| !r).unwrap();
        samples[0].truth.set(anchor, 0, -500.0);
        let moved = model.forward_batch(&[&samples[0]], Mode::Eval, 0.0, &mut rng_for(0, &[]), false).unwrap().loss;
        assert_eq!(base, moved);
    }
}
