//! Raw buffer kernels shared by forward and backward rules.

use crate::tensor::strides;

/// Numpy-style broadcast of two shapes (right aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` seen through the broadcast `out` shape: broadcast axes
/// get stride zero.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Visits every element of `out` with the matching linear offsets into two
/// broadcast operands.
fn for_each_broadcast2(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let last = rank - 1;
    let mut i = 0;
    while i < n {
        // innermost axis as a tight loop
        let len = out[last];
        for j in 0..len {
            f(i + j, oa + j * sa[last], ob + j * sb[last]);
        }
        i += len;
        // advance the odometer above the innermost axis
        let mut ax = last;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_binary(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0; n];
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    for_each_broadcast2(out_shape, &sa, &sb, |o, ia, ib| out[o] = f(a[ia], b[ib]));
    out
}

/// Sums a gradient laid out on `from` down to the broadcast source `to`.
pub(crate) fn reduce_to_shape(grad: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return grad.to_vec();
    }
    let n: usize = to.iter().product();
    let mut out = vec![0.0; n];
    if n == 1 {
        out[0] = grad.iter().sum();
        return out;
    }
    let st = broadcast_strides(to, from);
    let zero = vec![0; from.len()];
    for_each_broadcast2(from, &st, &zero, |o, it, _| out[it] += grad[o]);
    out
}

/// Expands `src` (shaped `from`) to the broadcast shape `to`.
pub(crate) fn expand_to_shape(src: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return src.to_vec();
    }
    let n: usize = to.iter().product();
    let mut out = vec![0.0; n];
    let sf = broadcast_strides(from, to);
    let zero = vec![0; to.len()];
    for_each_broadcast2(to, &sf, &zero, |o, i, _| out[o] = src[i]);
    out
}

/// One dense product `c (+)= a · b` with arbitrary element strides.
///
/// `a` is `m × k` with strides `(rsa, csa)`, `b` is `k × n` with `(rsb, csb)`
/// and `c` is a contiguous row-major `m × n` block.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    if m * k * n <= SMALL_GEMM {
        small_gemm(m, k, n, a, rsa, csa, b, rsb, csb, c, accumulate);
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the debug assertions above spell out the extents every caller
    // guarantees: each pointer stays within its slice for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Below this many multiply-adds, packing overhead dominates the blocked
/// kernel.
const SMALL_GEMM: usize = 1 << 15;

#[allow(clippy::too_many_arguments)]
fn small_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        if !accumulate {
            row.iter_mut().for_each(|x| *x = 0.0);
        }
        for l in 0..k {
            let av = a[i * rsa + l * csa];
            if csb == 1 {
                let br = &b[l * rsb..l * rsb + n];
                row.iter_mut().zip(br).for_each(|(x, &bv)| *x += av * bv);
            } else {
                for (j, x) in row.iter_mut().enumerate() {
                    *x += av * b[l * rsb + j * csb];
                }
            }
        }
    }
}

/// Copies `data` (shaped `shape`) into the axis order given by `perm`.
pub(crate) fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let st = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    let zero = vec![0; shape.len()];
    let mut out = vec![0.0; data.len()];
    for_each_broadcast2(&out_shape, &src_strides, &zero, |o, i, _| out[o] = data[i]);
    (out, out_shape)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Numerically stable softmax along the middle extent of an
/// `(outer, axis, inner)` view.
pub(crate) fn softmax(data: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        let base = o * len * inner;
        if inner == 1 {
            let row = &data[base..base + len];
            let dst = &mut out[base..base + len];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                sum += *d;
            }
            dst.iter_mut().for_each(|d| *d /= sum);
            continue;
        }
        for i in 0..inner {
            let at = |j: usize| base + j * inner + i;
            let max = (0..len).map(|j| data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..len {
                let e = (data[at(j)] - max).exp();
                out[at(j)] = e;
                sum += e;
            }
            for j in 0..len {
                out[at(j)] /= sum;
            }
        }
    }
    out
}

/// Sum along the middle extent; output is `(outer, inner)`.
pub(crate) fn sum_axis(data: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for j in 0..len {
            let src = &data[(o * len + j) * inner..(o * len + j + 1) * inner];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    out
}

/// Repeats an `(outer, inner)` buffer `len` times along a new middle axis.
pub(crate) fn repeat_axis(data: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let src = &data[o * inner..(o + 1) * inner];
        for _ in 0..len {
            out.extend_from_slice(src);
        }
    }
    out
}

/// splitmix64 finalizer.
pub(crate) fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform draw in `[0, 1)`.
pub(crate) fn hash_uniform(seed: u64, counter: u64) -> f64 {
    let z = mix64(seed ^ mix64(counter));
    (z >> 11) as f64 / (1u64 << 53) as f64
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
