//! Strided `f64` matrix multiply used by the matmul forward and backward rules.

/// Row/column strides of an operand, in elements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    /// Contiguous row-major layout with `cols` columns.
    pub fn rows(cols: usize) -> Self {
        Self { row: cols, col: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self { row: 1, col: cols }
    }
}

/// `c = beta * c + a · b` where `a` is `m×k`, `b` is `k×n` and `c` is row-major `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let last = |s: Strides, r: usize, cc: usize| (r - 1) * s.row + (cc - 1) * s.col;
    assert!(a.len() > last(sa, m, k), "gemm: lhs buffer too small");
    assert!(b.len() > last(sb, k, n), "gemm: rhs buffer too small");
    // SAFETY: the asserts above bound every index dgemm touches for the given
    // dimensions and strides; `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row as isize,
            sa.col as isize,
            b.as_ptr(),
            sb.row as isize,
            sb.col as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
