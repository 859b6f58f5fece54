use super::tensor::Tensor;

/// Central finite differences `(f(p + h) - f(p - h)) / 2h`, one coordinate at
/// a time. `f` must be a pure function of the parameter values.
pub fn finite_diff_grad(mut f: impl FnMut(&[Tensor]) -> f64, params: &[Tensor], h: f64) -> Vec<Tensor> {
    let mut work = params.to_vec();
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for (pi, grad) in grads.iter_mut().enumerate() {
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let plus = f(&work);
            work[pi].data_mut()[k] = orig - h;
            let minus = f(&work);
            work[pi].data_mut()[k] = orig;
            grad.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// Fourth-order stencil `(8(f(p+h) - f(p-h)) - (f(p+2h) - f(p-2h))) / 12h`.
/// Tolerates a larger `h` than [`finite_diff_grad`], which keeps roundoff
/// small when the objective is large compared to its gradient.
pub fn finite_diff_grad5(mut f: impl FnMut(&[Tensor]) -> f64, params: &[Tensor], h: f64) -> Vec<Tensor> {
    let mut work = params.to_vec();
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for (pi, grad) in grads.iter_mut().enumerate() {
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            let mut at = |x: f64| {
                work[pi].data_mut()[k] = x;
                f(&work)
            };
            let (p1, m1, p2, m2) = (at(orig + h), at(orig - h), at(orig + 2.0 * h), at(orig - 2.0 * h));
            work[pi].data_mut()[k] = orig;
            grad.data_mut()[k] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        }
    }
    grads
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`; infinite if either side
/// is NaN, so max-folds cannot swallow it.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        return f64::INFINITY;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest over coordinates of the smallest relative error against any of the
/// numeric estimates. Pairing a fine step (robust near ReLU kinks) with a
/// coarse one (robust to roundoff) keeps either failure mode from dominating.
pub fn best_relative_error(analytic: &Tensor, estimates: &[&Tensor], floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .enumerate()
        .map(|(k, &a)| estimates.iter().map(|e| relative_error(a, e.data()[k], floor)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Largest relative error over every coordinate of two gradient lists.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_is_never_close() {
        let a = Tensor::scalar(f64::NAN);
        assert_eq!(max_relative_error(std::slice::from_ref(&a), &[Tensor::scalar(1.0)], 1e-6), f64::INFINITY);
        assert_eq!(best_relative_error(&a, &[&a], 1e-6), f64::INFINITY);
    }

    #[test]
    fn best_of_estimates_per_coordinate() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let e1 = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let e2 = Tensor::new(vec![2], vec![0.0, 2.0]).unwrap();
        assert_eq!(best_relative_error(&a, &[&e1, &e2], 1e-6), 0.0);
        assert_eq!(best_relative_error(&a, &[&e1], 1e-6), 1.0);
    }

    #[test]
    fn five_point_exact_on_quartic() {
        let g = finite_diff_grad5(|p| p[0].item().powi(4), &[Tensor::scalar(2.0)], 1e-2);
        assert!((g[0].item() - 32.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_at_three() {
        let g = finite_diff_grad(|p| p[0].item().powi(2), &[Tensor::scalar(3.0)], 1e-5);
        assert!((g[0].item() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn linear_is_exact_for_any_step() {
        for h in [1e-3, 0.5, 2.0] {
            let g =
                finite_diff_grad(|p| 2.0 * p[0].data()[0] - 0.5 * p[0].data()[1], &[Tensor::row(vec![1.0, 4.0])], h);
            assert!((g[0].data()[0] - 2.0).abs() < 1e-12);
            assert!((g[0].data()[1] + 0.5).abs() < 1e-12);
        }
    }
}
