//! Row-oriented dense kernels shared by the full-sequence and incremental
//! forward passes. Both paths call the same functions in the same order so
//! their results agree bit for bit.

use crate::scalar::Scalar;

pub(crate) const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = S::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = x · W + b` for one row; `w` is `[in, out]` row-major.
#[inline]
pub(crate) fn linear_row<S: Scalar>(x: &[S], w: &[S], b: &[S], out: &mut [S]) {
    let n = out.len();
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi != S::zero() {
            axpy(xi, &w[i * n..(i + 1) * n], out);
        }
    }
}

pub(crate) fn linear_rows<S: Scalar>(x: &[S], rows: usize, w: &[S], b: &[S]) -> Vec<S> {
    let n = b.len();
    let d_in = x.len() / rows;
    let mut out = vec![S::zero(); rows * n];
    for r in 0..rows {
        linear_row(&x[r * d_in..(r + 1) * d_in], w, b, &mut out[r * n..(r + 1) * n]);
    }
    out
}

/// Accumulate parameter grads of a linear map and (optionally) add the
/// input gradient `dy · Wᵀ` into `dx`.
pub(crate) fn linear_backward<S: Scalar>(
    x: &[S],
    dy: &[S],
    rows: usize,
    w: &[S],
    dw: &mut [S],
    db: &mut [S],
    dx: Option<&mut [S]>,
) {
    let n = db.len();
    let d_in = x.len() / rows;
    for r in 0..rows {
        let dyr = &dy[r * n..(r + 1) * n];
        if dyr.iter().all(|&v| v == S::zero()) {
            continue;
        }
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        let xr = &x[r * d_in..(r + 1) * d_in];
        for (i, &xi) in xr.iter().enumerate() {
            if xi != S::zero() {
                axpy(xi, dyr, &mut dw[i * n..(i + 1) * n]);
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let dyr = &dy[r * n..(r + 1) * n];
            if dyr.iter().all(|&v| v == S::zero()) {
                continue;
            }
            let dxr = &mut dx[r * d_in..(r + 1) * d_in];
            for (i, d) in dxr.iter_mut().enumerate() {
                *d += dot(&w[i * n..(i + 1) * n], dyr);
            }
        }
    }
}

/// Layer norm of one row. Writes the normalized row to `xhat`, the affine
/// output to `out`, and returns the reciprocal standard deviation.
#[inline]
pub(crate) fn layernorm_row<S: Scalar>(x: &[S], gain: &[S], bias: &[S], xhat: &mut [S], out: &mut [S]) -> S {
    let n = S::of_usize(x.len());
    let mean = x.iter().copied().sum::<S>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
    let rstd = S::one() / (var + S::of(LN_EPS)).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = xhat[i] * gain[i] + bias[i];
    }
    rstd
}

/// Backward of `layernorm_row`: accumulates gain/bias grads and adds the
/// input gradient into `dx`.
pub(crate) fn layernorm_backward_row<S: Scalar>(
    dy: &[S],
    xhat: &[S],
    rstd: S,
    gain: &[S],
    dgain: &mut [S],
    dbias: &mut [S],
    dx: &mut [S],
) {
    let n = S::of_usize(dy.len());
    let mut mean_g = S::zero();
    let mut mean_gx = S::zero();
    for i in 0..dy.len() {
        dgain[i] += dy[i] * xhat[i];
        dbias[i] += dy[i];
        let g = dy[i] * gain[i];
        mean_g += g;
        mean_gx += g * xhat[i];
    }
    mean_g /= n;
    mean_gx /= n;
    for i in 0..dy.len() {
        let g = dy[i] * gain[i];
        dx[i] += rstd * (g - mean_g - xhat[i] * mean_gx);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let half = S::of(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + th) + half * x * (S::one() - th * th) * c * (S::one() + S::of(3.0) * a * x * x)
}
