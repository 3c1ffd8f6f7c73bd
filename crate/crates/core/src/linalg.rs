//! Slice-level vector helpers used in the per-round hot loop.

use nalgebra::DMatrix;

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (p, q) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += p[k] * q[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    let n = y.len().min(x.len());
    let (x, y) = (&x[..n], &mut y[..n]);
    for k in 0..n {
        y[k] += alpha * x[k];
    }
}

/// `x^T A x` for a square column-major matrix, without heap allocation
/// for dimensions up to [`STACK_DIM`].
pub fn quad_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    debug_assert_eq!(a.nrows(), n);
    if n <= 8 {
        let data = a.as_slice();
        let mut total = 0.0;
        for j in 0..n {
            let mut col = 0.0;
            for i in 0..n {
                col += data[j * n + i] * x[i];
            }
            total += x[j] * col;
        }
        total
    } else if n <= STACK_DIM {
        let mut buf = [0.0f64; STACK_DIM];
        let ax = &mut buf[..n];
        mat_vec(a, x, ax);
        dot(x, ax)
    } else {
        let mut ax = vec![0.0; n];
        mat_vec(a, x, &mut ax);
        dot(x, &ax)
    }
}

/// `(p^T A p, q^T A q)` in one pass over `A`.
pub fn quad_form_pair(a: &DMatrix<f64>, p: &[f64], q: &[f64]) -> (f64, f64) {
    let n = p.len();
    debug_assert_eq!(a.nrows(), n);
    debug_assert_eq!(q.len(), n);
    if n <= 8 || n > STACK_DIM {
        return (quad_form(a, p), quad_form(a, q));
    }
    let mut bp = [0.0f64; STACK_DIM];
    let mut bq = [0.0f64; STACK_DIM];
    let (ap, aq) = (&mut bp[..n], &mut bq[..n]);
    pair_mat_vec(a.as_slice(), p, q, ap, aq);
    (dot(p, ap), dot(q, aq))
}

/// `ap = A p`, `aq = A q` for column-major `A`.
fn pair_mat_vec(data: &[f64], p: &[f64], q: &[f64], ap: &mut [f64], aq: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { pair_mat_vec_avx2(data, p, q, ap, aq) };
            return;
        }
    }
    pair_mat_vec_generic(data, p, q, ap, aq);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn pair_mat_vec_avx2(data: &[f64], p: &[f64], q: &[f64], ap: &mut [f64], aq: &mut [f64]) {
    pair_mat_vec_generic(data, p, q, ap, aq);
}

/// Separate multiply and add (no fused multiply-add), so every code path
/// rounds identically.
#[inline(always)]
fn pair_mat_vec_generic(data: &[f64], p: &[f64], q: &[f64], ap: &mut [f64], aq: &mut [f64]) {
    let n = ap.len();
    let aq = &mut aq[..n];
    for (j, col) in data.chunks_exact(n).enumerate() {
        let (pj, qj) = (p[j], q[j]);
        let col = &col[..n];
        for k in 0..n {
            ap[k] += pj * col[k];
            aq[k] += qj * col[k];
        }
    }
}

/// Largest dimension handled with stack scratch space.
pub const STACK_DIM: usize = 64;

/// `out = A x`
pub fn mat_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = a.nrows();
    out.iter_mut().for_each(|v| *v = 0.0);
    if n == 0 {
        return;
    }
    for (col, xj) in a.as_slice().chunks_exact(n).zip(x) {
        axpy(*xj, col, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_form_matches_nalgebra() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 4.0]);
        let x = [0.5, -1.0, 2.0];
        let v = nalgebra::DVector::from_column_slice(&x);
        assert!((quad_form(&a, &x) - v.dot(&(&a * &v))).abs() < 1e-14);
        let mut out = [0.0; 3];
        mat_vec(&a, &x, &mut out);
        let expected = &a * &v;
        for k in 0..3 {
            assert!((out[k] - expected[k]).abs() < 1e-14);
        }
        let y = [1.0, 0.0, -1.0];
        let (qx, qy) = quad_form_pair(&a, &x, &y);
        assert_eq!(qx.to_bits(), quad_form(&a, &x).to_bits());
        assert_eq!(qy.to_bits(), quad_form(&a, &y).to_bits());
    }
}
