//! Raw numeric kernels shared by the tape's forward and backward passes.

/// Row-major matrix operand with an optional transpose.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl Operand<'_> {
    fn effective(&self) -> (usize, usize, isize, isize) {
        let c = self.cols as isize;
        if self.transposed {
            (self.cols, self.rows, 1, c)
        } else {
            (self.rows, self.cols, c, 1)
        }
    }
}

/// `out = alpha * op(a) * op(b) + beta * out`, `out` row-major with
/// `out_cols` columns.
pub(crate) fn gemm(alpha: f64, a: Operand<'_>, b: Operand<'_>, beta: f64, out: &mut [f64]) {
    let (m, k, rsa, csa) = a.effective();
    let (k2, n, rsb, csb) = b.effective();
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the strides describe in-bounds row-major layouts of the given
    // slices (checked by the debug assertions and the callers' shape checks).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax with max subtraction. Empty slices are left alone.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Softmax backward for one segment: `dx = y * (dy - <dy, y>)`.
pub(crate) fn softmax_backward(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yy), &g) in dx.iter_mut().zip(y).zip(dy) {
        *d += yy * (g - dot);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yy, xx) in y.iter_mut().zip(x) {
        *yy += alpha * xx;
    }
}
