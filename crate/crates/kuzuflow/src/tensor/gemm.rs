//! Thin safe wrapper around `matrixmultiply::sgemm` for row-major slices.

/// `c[m,n] = alpha * op(a) @ op(b) + beta * c`.
///
/// `a` is `[m,k]` row-major, or `[k,m]` when `trans_a` (likewise for `b`).
/// `c` is always `[m,n]` row-major. Transposition is expressed through
/// strides, so no data is copied.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::sgemm;

    fn naive(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        b: &[f32],
    ) -> Vec<f32> {
        let at = |i: usize, j: usize| if trans_a { a[j * m + i] } else { a[i * k + j] };
        let bt = |i: usize, j: usize| if trans_b { b[j * k + i] } else { b[i * n + j] };
        let mut c = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += at(i, l) * bt(l, j);
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matches_naive_for_all_transpose_modes() {
        let (m, k, n) = (4, 5, 3);
        let a: Vec<f32> = (0..m * k).map(|v| (v as f32) * 0.31 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|v| (v as f32) * -0.17 + 1.0).collect();
        for &ta in &[false, true] {
            for &tb in &[false, true] {
                let mut c = vec![0.0f32; m * n];
                sgemm(ta, tb, m, k, n, 1.0, &a, &b, 0.0, &mut c);
                let want = naive(ta, tb, m, k, n, &a, &b);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-4, "ta={ta} tb={tb}: {x} vs {y}");
                }
            }
        }
    }
}
