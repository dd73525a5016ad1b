//! Bounds-checked front end to the strided matrix kernels.

use crate::Float;

/// Row and column stride of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(cols: usize) -> Self {
        Layout { rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` matrix.
    pub fn transposed(cols: usize) -> Self {
        Layout { rs: 1, cs: cols }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

const SMALL: usize = 2048;

/// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product. When
/// `beta` is zero the previous contents of `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Float>(
    m: usize,
    k: usize,
    n: usize,
    alpha: F,
    a: &[F],
    la: Layout,
    b: &[F],
    lb: Layout,
    beta: F,
    c: &mut [F],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(lc.last(m, n) < c.len(), "gemm: output out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = i * lc.rs + j * lc.cs;
                c[idx] = if beta == F::zero() { F::zero() } else { beta * c[idx] };
            }
        }
        return;
    }
    assert!(la.last(m, k) < a.len(), "gemm: lhs out of bounds");
    assert!(lb.last(k, n) < b.len(), "gemm: rhs out of bounds");

    if m * n * k <= SMALL {
        small_gemm(m, k, n, alpha, a, la, b, lb, beta, c, lc);
        return;
    }
    // SAFETY: extents checked above; `c` is a unique borrow distinct from `a`, `b`.
    unsafe {
        F::gemm_kernel(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        )
    }
}

/// Direct loops for products too small to amortize packing. Contiguous
/// operands take slice paths that the compiler can vectorize.
#[allow(clippy::too_many_arguments)]
fn small_gemm<F: Float>(
    m: usize,
    k: usize,
    n: usize,
    alpha: F,
    a: &[F],
    la: Layout,
    b: &[F],
    lb: Layout,
    beta: F,
    c: &mut [F],
    lc: Layout,
) {
    if lb.cs == 1 && lc.cs == 1 {
        for i in 0..m {
            let row = &mut c[i * lc.rs..][..n];
            if beta == F::zero() {
                row.fill(F::zero());
            } else {
                row.iter_mut().for_each(|v| *v = beta * *v);
            }
            for p in 0..k {
                let s = alpha * a[i * la.rs + p * la.cs];
                for (v, &bv) in row.iter_mut().zip(&b[p * lb.rs..][..n]) {
                    *v += s * bv;
                }
            }
        }
        return;
    }
    for i in 0..m {
        for j in 0..n {
            let acc = if la.cs == 1 && lb.rs == 1 {
                let (ar, bc) = (&a[i * la.rs..][..k], &b[j * lb.cs..][..k]);
                ar.iter().zip(bc).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
            } else {
                (0..k).fold(F::zero(), |acc, p| acc + a[i * la.rs + p * la.cs] * b[p * lb.rs + j * lb.cs])
            };
            let idx = i * lc.rs + j * lc.cs;
            c[idx] = if beta == F::zero() {
                alpha * acc
            } else {
                alpha * acc + beta * c[idx]
            };
        }
    }
}
