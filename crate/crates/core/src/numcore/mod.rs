//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference oracle.

mod adam;
mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{best_relative_error, finite_diff_grad, finite_diff_grad5, max_relative_error, relative_error};
pub use params::{Checkpoint, ParamStore, CHECKPOINT_FORMAT_VERSION};
pub use tape::{forward_primitive, Gradients, NeighborIndex, NodeId, Primitive, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(3, 4, &mut rng);
        let y = forward_primitive(&Primitive::MatMul, &[&Tensor::identity(3), &x]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn activations_at_zero() {
        let z = Tensor::scalar(0.0);
        assert_eq!(forward_primitive(&Primitive::Sigmoid, &[&z]).unwrap().item(), 0.5);
        assert_eq!(forward_primitive(&Primitive::Tanh, &[&z]).unwrap().item(), 0.0);
    }

    #[test]
    fn uniform_softmax_row() {
        let y = forward_primitive(&Primitive::RowSoftmax, &[&Tensor::row(vec![1.0; 3])]).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(5, 7, |_, _| rng.gen_range(-30.0..30.0));
        let shifted = Tensor::from_fn(5, 7, |i, j| x.get(i, j) + 100.0 * i as f64);
        let a = forward_primitive(&Primitive::RowSoftmax, &[&x]).unwrap();
        let b = forward_primitive(&Primitive::RowSoftmax, &[&shifted]).unwrap();
        for i in 0..5 {
            assert!((a.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(forward_primitive(&Primitive::MatMul, &[&a, &b]).is_err());
        assert!(forward_primitive(&Primitive::Add, &[&a, &Tensor::zeros(&[3, 2])]).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(crate::Error::NonScalarLoss(_))));
    }

    #[test]
    fn linear_loss_gradient_is_outer_product() {
        // loss = sum(W x) => dloss/dW[i][j] = x[j]
        let w = Tensor::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let x = Tensor::matrix(4, 1, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut tape = Tape::new();
        let (wn, xn) = (tape.leaf_ref(&w), tape.leaf_ref(&x));
        let y = tape.matmul(wn, xn).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        let gw = grads.get(wn).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(gw.get(i, j), x.data()[j]);
            }
        }
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let loss = tape.scale(a, 3.0);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        let z = grads.get_or_zeros(unused, tape.value(unused));
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn masked_path_has_zero_gradient() {
        let w = Tensor::from_fn(2, 3, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
        let x = Tensor::from_fn(4, 2, |i, j| (i + j) as f64 * 0.5 - 1.0);
        let mask = Tensor::zeros(&[4, 3]);
        let mut tape = Tape::new();
        let (wn, xn, mn) = (tape.leaf_ref(&w), tape.leaf_ref(&x), tape.leaf_ref(&mask));
        let h = tape.matmul(xn, wn).unwrap();
        let dropped = tape.mul(h, mn).unwrap();
        let loss = tape.sum_all(dropped);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(wn).unwrap().data().iter().all(|&g| g == 0.0));
    }

    /// Composes every primitive into one scalar and checks the tape against
    /// central differences.
    fn composite_loss<'a>(tape: &mut Tape<'a>, p: &[NodeId], index: &'a NeighborIndex) -> NodeId {
        let (a, b, c, row) = (p[0], p[1], p[2], p[3]);
        let ab = tape.matmul(a, b).unwrap(); // 4x3
        let abt = tape.matmul_t(a, c, false, true).unwrap(); // 4x3
        let s = tape.add(ab, abt).unwrap();
        let s = tape.add_row(s, row).unwrap();
        let sig = tape.sigmoid(s);
        let th = tape.tanh(s);
        let prod = tape.mul(sig, th).unwrap();
        let r = tape.relu(s);
        let diff = tape.sub(prod, r).unwrap();
        let mr = tape.mul_row(diff, row).unwrap();
        let sm = tape.row_softmax(mr);
        let cat = tape.concat_cols(&[sm, s]).unwrap();
        let rows = tape.concat_rows(&[cat, cat]).unwrap();
        let sl = tape.slice_cols(rows, 1, 4).unwrap();
        let sr = tape.slice_rows(sl, 2, 4).unwrap();
        let shifted = tape.add_scalar(sr, 1.5);
        let sq = tape.powf(shifted, 2.0);
        let cs = tape.column_sums(sq);
        let cs = tape.scale(cs, 0.7);
        let q = tape.slice_cols(s, 0, 2).unwrap();
        let k = tape.slice_cols(s, 1, 2).unwrap();
        let scores = tape.edge_scores(q, k, index, 0.5).unwrap();
        let beta = tape.segment_softmax(scores, index).unwrap();
        let agg = tape.edge_aggregate(beta, s, index).unwrap();
        let t1 = tape.sum_all(cs);
        let t2 = tape.sum_all(agg);
        let total = tape.add(t1, t2).unwrap();
        let both_t = tape.matmul_t(b, a, true, true).unwrap(); // 3x4
        let gram = tape.matmul_t(a, a, true, false).unwrap(); // 5x5, aliased operands
        let t3 = tape.sum_all(both_t);
        let t4 = tape.sum_all(gram);
        let total = tape.add(total, t3).unwrap();
        tape.add(total, t4).unwrap()
    }

    #[test]
    fn every_primitive_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params =
            vec![random(4, 5, &mut rng), random(5, 3, &mut rng), random(3, 5, &mut rng), random(1, 3, &mut rng)];
        let index = NeighborIndex::from_lists(&[vec![1, 2], vec![0], vec![], vec![0, 1, 2]]);
        let eval = |ps: &[Tensor]| {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf_ref(p)).collect();
            let loss = composite_loss(&mut tape, &ids, &index);
            tape.value(loss).item()
        };
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf_ref(p)).collect();
        let loss = composite_loss(&mut tape, &ids, &index);
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = ids.iter().zip(&params).map(|(&id, p)| grads.get_or_zeros(id, p)).collect();
        let numeric = finite_diff_grad(eval, &params, 1e-6);
        let err = max_relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
