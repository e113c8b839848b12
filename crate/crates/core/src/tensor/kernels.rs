//! Raw slice kernels shared by the forward and adjoint paths.
//!
//! Everything here works on flat row-major `f64` buffers and knows nothing
//! about the graph. Summation order is fixed by loop order, so results are
//! bitwise reproducible for identical inputs.

/// `c (m×n) [+]= op(a) · op(b)` where `op(a)` is m×k and `op(b)` is k×n.
///
/// `a_t` means `a` is stored k×m; `b_t` means `b` is stored n×k.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserted buffer lengths cover every index reachable through
    // the (rows, cols, strides) triples handed to dgemm.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Materialise `data` (with `shape`) under the axis permutation `perm`.
pub fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let nd = shape.len();
    if nd <= 1 {
        return data.to_vec();
    }
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let inner = out_shape[nd - 1];
    let inner_stride = strides[nd - 1];
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd - 1];
    let mut offset = 0usize;
    loop {
        for j in 0..inner {
            out.push(data[offset + j * inner_stride]);
        }
        // odometer over the outer axes
        let mut axis = nd - 1;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            offset += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// (outer, axis_len, inner) decomposition of `shape` around `axis`.
pub fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_rows(x: &[f64], cols: usize, temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = ((xi - max) / temperature).exp();
            total += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= total;
        }
    }
    out
}

/// Row-wise `log_softmax(x / T)`, returned with the matching probabilities.
pub fn log_softmax_rows(x: &[f64], cols: usize, temperature: f64) -> (Vec<f64>, Vec<f64>) {
    let mut logp = vec![0.0; x.len()];
    let mut probs = vec![0.0; x.len()];
    for ((row, lp), p) in x
        .chunks_exact(cols)
        .zip(logp.chunks_exact_mut(cols))
        .zip(probs.chunks_exact_mut(cols))
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (l, &xi) in lp.iter_mut().zip(row) {
            *l = (xi - max) / temperature;
            total += l.exp();
        }
        let log_total = total.ln();
        for (l, pi) in lp.iter_mut().zip(p.iter_mut()) {
            *l -= log_total;
            *pi = l.exp();
        }
    }
    (logp, probs)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

// tanh through a single exp; libm's tanh dominated encoder profiles
fn fast_tanh(u: f64) -> f64 {
    let e = (-2.0 * u.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(u)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_K * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = fast_tanh(GELU_C * (x + GELU_K * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}
