//! Bidirectional LSTM over the per-timestep feature slices. Only the final
//! hidden state of each direction is kept.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{NodeId, ParamStore, Tape, Tensor};

/// Gate order used throughout: forget, candidate, input, output.
pub const GATES: [&str; 4] = ["lambda", "C", "phi", "o"];

/// Weights of one LSTM direction. Each gate matrix is `H x (H + D)` acting on
/// `[h_{t-1}; x_t]`, each bias a `1 x H` row.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    pub weights: [Tensor; 4],
    pub biases: [Tensor; 4],
}

impl LstmWeights {
    pub fn zeros(hidden: usize, input_width: usize) -> Self {
        Self {
            weights: std::array::from_fn(|_| Tensor::zeros(&[hidden, hidden + input_width])),
            biases: std::array::from_fn(|_| Tensor::zeros(&[1, hidden])),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, `fan_in = H + D`.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input_width: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((hidden + input_width) as f64).sqrt();
        let mut draw = |r: usize, c: usize| Tensor::from_fn(r, c, |_, _| rng.gen_range(-bound..=bound));
        Self {
            weights: std::array::from_fn(|_| draw(hidden, hidden + input_width)),
            biases: std::array::from_fn(|_| draw(1, hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].cols() - self.hidden()
    }

    /// Registers the weights under `{prefix}.W_{gate}` / `{prefix}.b_{gate}`.
    pub fn register(&self, prefix: &str, store: &mut ParamStore) {
        for (g, name) in GATES.iter().enumerate() {
            store.insert(format!("{prefix}.W_{name}"), self.weights[g].clone());
        }
        for (g, name) in GATES.iter().enumerate() {
            store.insert(format!("{prefix}.b_{name}"), self.biases[g].clone());
        }
    }

    fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Result<LstmNodes> {
        let w: Vec<NodeId> = self.weights.iter().map(|t| tape.leaf_ref(t)).collect();
        let b: Vec<NodeId> = self.biases.iter().map(|t| tape.leaf_ref(t)).collect();
        LstmNodes::stack(tape, [w[0], w[1], w[2], w[3]], [b[0], b[1], b[2], b[3]])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(nodes: usize, hidden: usize) -> Self {
        Self { h: Tensor::zeros(&[nodes, hidden]), c: Tensor::zeros(&[nodes, hidden]) }
    }
}

/// `g`: `N x 2H`, forward final state then backward final state.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEncoding {
    pub g: Tensor,
}

/// Gate weights of one direction bound on a tape, stacked so one matmul
/// evaluates all four gates.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmNodes {
    stacked_w: NodeId,
    stacked_b: NodeId,
    hidden: usize,
}

impl LstmNodes {
    pub(crate) fn stack(tape: &mut Tape<'_>, w: [NodeId; 4], b: [NodeId; 4]) -> Result<Self> {
        let hidden = tape.value(w[0]).rows();
        let stacked_w = tape.concat_rows(&w)?;
        let stacked_b = tape.concat_cols(&b)?;
        Ok(Self { stacked_w, stacked_b, hidden })
    }
}

/// One cell step on the tape; returns the new `(h, c)`.
pub(crate) fn lstm_cell_tape(
    tape: &mut Tape<'_>,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    w: &LstmNodes,
) -> Result<(NodeId, NodeId)> {
    let hx = tape.concat_cols(&[h_prev, x])?;
    let pre = tape.matmul_t(hx, w.stacked_w, false, true)?;
    let pre = tape.add_row(pre, w.stacked_b)?;
    let hd = w.hidden;
    let forget_pre = tape.slice_cols(pre, 0, hd)?;
    let cand_pre = tape.slice_cols(pre, hd, hd)?;
    let input_pre = tape.slice_cols(pre, 2 * hd, hd)?;
    let output_pre = tape.slice_cols(pre, 3 * hd, hd)?;
    let forget = tape.sigmoid(forget_pre);
    let candidate = tape.tanh(cand_pre);
    let input = tape.sigmoid(input_pre);
    let output = tape.sigmoid(output_pre);
    let kept = tape.mul(forget, c_prev)?;
    let added = tape.mul(input, candidate)?;
    let c = tape.add(kept, added)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(output, squashed)?;
    Ok((h, c))
}

fn run_direction(
    tape: &mut Tape<'_>,
    steps: impl Iterator<Item = NodeId>,
    nodes: usize,
    w: &LstmNodes,
) -> Result<NodeId> {
    let mut h = tape.leaf(Tensor::zeros(&[nodes, w.hidden]));
    let mut c = tape.leaf(Tensor::zeros(&[nodes, w.hidden]));
    for x in steps {
        (h, c) = lstm_cell_tape(tape, x, h, c, w)?;
    }
    Ok(h)
}

/// Forward direction over `t = 1..T`, backward over `t = T..1`, final hidden
/// states concatenated side by side.
pub(crate) fn bilstm_tape(tape: &mut Tape<'_>, slices: &[NodeId], fwd: &LstmNodes, bwd: &LstmNodes) -> Result<NodeId> {
    let first = slices.first().ok_or(Error::EmptyInput("bilstm sequence"))?;
    let nodes = tape.value(*first).rows();
    let hf = run_direction(tape, slices.iter().copied(), nodes, fwd)?;
    let hb = run_direction(tape, slices.iter().rev().copied(), nodes, bwd)?;
    tape.concat_cols(&[hf, hb])
}

fn check_input(x: &Tensor, w: &LstmWeights) -> Result<()> {
    if x.cols() != w.input_width() {
        return Err(Error::ShapeMismatch {
            op: "lstm input",
            left: x.shape().to_vec(),
            right: vec![w.hidden(), w.input_width()],
        });
    }
    Ok(())
}

/// One LSTM step on `N` rows sharing the same weights.
pub fn lstm_cell(x: &Tensor, state: &LstmState, w: &LstmWeights) -> Result<LstmState> {
    check_input(x, w)?;
    let mut tape = Tape::new();
    let nodes = w.bind(&mut tape)?;
    let (xn, hn, cn) = (tape.leaf_ref(x), tape.leaf_ref(&state.h), tape.leaf_ref(&state.c));
    let (h, c) = lstm_cell_tape(&mut tape, xn, hn, cn, &nodes)?;
    Ok(LstmState { h: tape.value(h).clone(), c: tape.value(c).clone() })
}

pub fn bilstm_encode(slices: &[Tensor], w_fwd: &LstmWeights, w_bwd: &LstmWeights) -> Result<TemporalEncoding> {
    if slices.is_empty() {
        return Err(Error::EmptyInput("bilstm sequence"));
    }
    for s in slices {
        check_input(s, w_fwd)?;
        check_input(s, w_bwd)?;
    }
    let mut tape = Tape::new();
    let fwd = w_fwd.bind(&mut tape)?;
    let bwd = w_bwd.bind(&mut tape)?;
    let ids: Vec<NodeId> = slices.iter().map(|s| tape.leaf_ref(s)).collect();
    let g = bilstm_tape(&mut tape, &ids, &fwd, &bwd)?;
    Ok(TemporalEncoding { g: tape.value(g).clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_grad, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn random_slices(n: usize, d: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        (0..t).map(|_| Tensor::from_fn(n, d, |_, _| rng.gen_range(-1.5..1.5))).collect()
    }

    #[test]
    fn zero_weights_zero_state_stay_zero() {
        let w = LstmWeights::zeros(3, 4);
        let x = Tensor::from_fn(2, 4, |i, j| (i + j) as f64);
        let s = lstm_cell(&x, &LstmState::zeros(2, 3), &w).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let w = LstmWeights::zeros(2, 3);
        let state = LstmState { h: Tensor::zeros(&[1, 2]), c: Tensor::row(vec![0.8, -2.0]) };
        let s = lstm_cell(&Tensor::row(vec![1.0, 2.0, 3.0]), &state, &w).unwrap();
        assert_eq!(s.c.data(), &[0.4, -1.0]);
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        // H = 1, D = 1: each gate has weights [w_h, w_x] and bias b.
        let mut w = LstmWeights::zeros(1, 1);
        let params = [(0.5, -0.3, 0.1), (0.2, 0.7, -0.2), (-0.4, 0.9, 0.05), (0.3, 0.6, 0.0)];
        for (g, &(wh, wx, b)) in params.iter().enumerate() {
            w.weights[g] = Tensor::row(vec![wh, wx]);
            w.biases[g] = Tensor::scalar(b);
        }
        let (h0, c0, x) = (0.25, -0.6, 1.3);
        let state = LstmState { h: Tensor::scalar(h0), c: Tensor::scalar(c0) };
        let s = lstm_cell(&Tensor::scalar(x), &state, &w).unwrap();

        let pre = |g: usize| params[g].0 * h0 + params[g].1 * x + params[g].2;
        let forget = sig(pre(0));
        let cand = pre(1).tanh();
        let input = sig(pre(2));
        let output = sig(pre(3));
        let c = forget * c0 + input * cand;
        let h = output * c.tanh();
        assert!((s.c.item() - c).abs() < 1e-15);
        assert!((s.h.item() - h).abs() < 1e-15);
    }

    #[test]
    fn encoding_shape_and_direction_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d, h, t) = (5, 7, 4, 3);
        let wf = LstmWeights::init(h, d, &mut rng);
        let wb = LstmWeights::init(h, d, &mut rng);
        let slices = random_slices(n, d, t, &mut rng);
        let g = bilstm_encode(&slices, &wf, &wb).unwrap().g;
        assert_eq!(g.shape(), &[n, 2 * h]);

        let reversed: Vec<Tensor> = slices.iter().rev().cloned().collect();
        let swapped = bilstm_encode(&reversed, &wb, &wf).unwrap().g;
        for i in 0..n {
            for k in 0..h {
                assert_eq!(g.get(i, k), swapped.get(i, h + k));
                assert_eq!(g.get(i, h + k), swapped.get(i, k));
            }
        }
    }

    #[test]
    fn single_step_equals_one_cell_each_way() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let wf = LstmWeights::init(3, 5, &mut rng);
        let wb = LstmWeights::init(3, 5, &mut rng);
        let slices = random_slices(4, 5, 1, &mut rng);
        let g = bilstm_encode(&slices, &wf, &wb).unwrap().g;
        let zero = LstmState::zeros(4, 3);
        let hf = lstm_cell(&slices[0], &zero, &wf).unwrap().h;
        let hb = lstm_cell(&slices[0], &zero, &wb).unwrap().h;
        for i in 0..4 {
            for k in 0..3 {
                assert_eq!(g.get(i, k), hf.get(i, k));
                assert_eq!(g.get(i, 3 + k), hb.get(i, k));
            }
        }
    }

    #[test]
    fn empty_sequence_and_bad_width_rejected() {
        let w = LstmWeights::zeros(2, 3);
        assert!(bilstm_encode(&[], &w, &w).is_err());
        assert!(lstm_cell(&Tensor::zeros(&[1, 4]), &LstmState::zeros(1, 2), &w).is_err());
    }

    #[test]
    fn first_timestep_influences_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wf = LstmWeights::init(4, 6, &mut rng);
        let wb = LstmWeights::init(4, 6, &mut rng);
        let slices = random_slices(3, 6, 4, &mut rng);
        let base = bilstm_encode(&slices, &wf, &wb).unwrap().g;
        let mut perturbed = slices.clone();
        perturbed[0].data_mut()[0] += 0.5;
        let moved = bilstm_encode(&perturbed, &wf, &wb).unwrap().g;
        // Row 0 changes in both halves: forward through the recurrence, backward directly.
        assert!((0..4).any(|k| moved.get(0, k) != base.get(0, k)));
        assert!((4..8).any(|k| moved.get(0, k) != base.get(0, k)));
    }

    #[test]
    fn gate_ranges_hold_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = LstmWeights::init(5, 4, &mut rng);
        let mut state = LstmState::zeros(6, 5);
        for _ in 0..10 {
            let x = Tensor::from_fn(6, 4, |_, _| rng.gen_range(-20.0..20.0));
            state = lstm_cell(&x, &state, &w).unwrap();
            assert!(state.h.data().iter().all(|v| v.abs() < 1.0));
            assert!(state.c.is_finite());
        }
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, d, h, t) = (3, 4, 3, 3);
        let wf = LstmWeights::init(h, d, &mut rng);
        let wb = LstmWeights::init(h, d, &mut rng);
        let slices = random_slices(n, d, t, &mut rng);
        let target = Tensor::from_fn(n, 2 * h, |_, _| rng.gen_range(-1.0..1.0));

        let flat = |wf: &LstmWeights, wb: &LstmWeights| -> Vec<Tensor> {
            wf.weights.iter().chain(&wf.biases).chain(&wb.weights).chain(&wb.biases).cloned().collect()
        };
        let unflat = |p: &[Tensor]| -> (LstmWeights, LstmWeights) {
            let mk = |o: usize| LstmWeights {
                weights: std::array::from_fn(|g| p[o + g].clone()),
                biases: std::array::from_fn(|g| p[o + 4 + g].clone()),
            };
            (mk(0), mk(8))
        };
        let params = flat(&wf, &wb);
        let loss_of = |p: &[Tensor]| {
            let (f, b) = unflat(p);
            let g = bilstm_encode(&slices, &f, &b).unwrap().g;
            g.data().iter().zip(target.data()).map(|(a, b)| a * b).sum::<f64>()
        };

        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf_ref(p)).collect();
        let fwd =
            LstmNodes::stack(&mut tape, [ids[0], ids[1], ids[2], ids[3]], [ids[4], ids[5], ids[6], ids[7]]).unwrap();
        let bwd = LstmNodes::stack(&mut tape, [ids[8], ids[9], ids[10], ids[11]], [ids[12], ids[13], ids[14], ids[15]])
            .unwrap();
        let xs: Vec<NodeId> = slices.iter().map(|s| tape.leaf_ref(s)).collect();
        let g = bilstm_tape(&mut tape, &xs, &fwd, &bwd).unwrap();
        let tn = tape.leaf_ref(&target);
        let prod = tape.mul(g, tn).unwrap();
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = ids.iter().zip(&params).map(|(&i, p)| grads.get_or_zeros(i, p)).collect();
        let numeric = finite_diff_grad(loss_of, &params, 1e-6);
        let err = max_relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-4, "relative error {err}");
    }
}
