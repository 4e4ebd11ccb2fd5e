// Row-major dense kernels on top of `matrixmultiply`.
//
// Each output element accumulates over k in an order that does not depend on
// which other rows share the call, so a row's bits do not depend on the batch
// it was computed in.

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    let m = if k == 0 { 0 } else { a.len() / k };
    assert!(a.len() == m * k && b.len() == k * n && out.len() == m * n);
    // SAFETY: the slices hold exactly the extents described by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            1.0,
            out.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
pub(crate) fn matmul_a_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    let m = if n == 0 { 0 } else { g.len() / n };
    assert!(g.len() == m * n && b.len() == k * n && out.len() == m * k);
    // SAFETY: as above; `b` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m, n, k, 1.0,
            g.as_ptr(), n as isize, 1,
            b.as_ptr(), 1, n as isize,
            1.0,
            out.as_mut_ptr(), k as isize, 1,
        );
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
pub(crate) fn matmul_at_b_acc(a: &[f64], g: &[f64], out: &mut [f64], k: usize, n: usize) {
    let m = if k == 0 { 0 } else { a.len() / k };
    assert!(a.len() == m * k && g.len() == m * n && out.len() == k * n);
    // SAFETY: as above; `a` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            k, m, n, 1.0,
            a.as_ptr(), 1, k as isize,
            g.as_ptr(), n as isize, 1,
            1.0,
            out.as_mut_ptr(), n as isize, 1,
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
