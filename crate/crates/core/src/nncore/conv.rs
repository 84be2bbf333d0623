//! Dense kernels over channel-major `(c, h, w)` buffers. Every reduction runs
//! in a fixed order so results are bitwise reproducible.

use super::Real;

/// Zero-pads each channel plane by one pixel on every side.
pub fn pad1<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let wp = w + 2;
    let plane = (h + 2) * wp;
    let mut out = vec![T::zero(); c * plane];
    for ch in 0..c {
        for y in 0..h {
            let src = &input[(ch * h + y) * w..][..w];
            out[ch * plane + (y + 1) * wp + 1..][..w].copy_from_slice(src);
        }
    }
    out
}

/// The nine shifted views of each padded input channel, laid out
/// `[in][tap][h*w]`: column `(i, ky, kx)` holds `pad[i][y + ky][x + kx]`.
pub fn shifted_planes<T: Real>(in_pad: &[T], c_in: usize, h: usize, w: usize) -> Vec<T> {
    let wp = w + 2;
    let plane_in = (h + 2) * wp;
    let mut cols = Vec::with_capacity(c_in * 9 * h * w);
    for i in 0..c_in {
        let src = &in_pad[i * plane_in..(i + 1) * plane_in];
        for ky in 0..3 {
            for kx in 0..3 {
                for y in 0..h {
                    cols.extend_from_slice(&src[(y + ky) * wp + kx..][..w]);
                }
            }
        }
    }
    cols
}

/// 3x3 "same" convolution over a padded input. Weights are `[out][in][3][3]`.
pub fn conv3x3_forward<T: Real>(
    in_pad: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    c_out: usize,
) -> Vec<T> {
    let plane = h * w;
    let cols = shifted_planes(in_pad, c_in, h, w);
    let mut out = vec![T::zero(); c_out * plane];
    for (o, out_o) in out.chunks_exact_mut(plane).enumerate() {
        out_o.fill(bias[o]);
    }
    gemm_acc(&mut out, weight, &cols, c_out, c_in * 9, plane);
    out
}

const TILE: usize = 32;

/// `out[o][p] += sum_k w[o][k] * x[k][p]`, with `k` summed in increasing
/// order for every output element.
pub fn gemm_acc<T: Real>(out: &mut [T], w: &[T], x: &[T], n_out: usize, n_k: usize, n_p: usize) {
    debug_assert_eq!(out.len(), n_out * n_p);
    debug_assert_eq!(w.len(), n_out * n_k);
    debug_assert_eq!(x.len(), n_k * n_p);
    let full = n_p / TILE * TILE;
    for p0 in (0..full).step_by(TILE) {
        for o in 0..n_out {
            let dst: &mut [T; TILE] = (&mut out[o * n_p + p0..][..TILE]).try_into().unwrap();
            let mut acc = *dst;
            for (k, &wv) in w[o * n_k..(o + 1) * n_k].iter().enumerate() {
                let src: &[T; TILE] = x[k * n_p + p0..][..TILE].try_into().unwrap();
                for l in 0..TILE {
                    acc[l] += wv * src[l];
                }
            }
            *dst = acc;
        }
    }
    if full < n_p {
        for o in 0..n_out {
            for (k, &wv) in w[o * n_k..(o + 1) * n_k].iter().enumerate() {
                let src = &x[k * n_p + full..(k + 1) * n_p];
                axpy(wv, src, &mut out[o * n_p + full..(o + 1) * n_p]);
            }
        }
    }
}

/// ReLU followed by 2x2 average pooling.
pub fn relu_pool_forward<T: Real>(z: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let relu = |v: T| if v > T::zero() { v } else { T::zero() };
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = &z[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            let top = &plane[2 * y * w..][..w];
            let bot = &plane[(2 * y + 1) * w..][..w];
            for x in 0..wo {
                let s = (relu(top[2 * x]) + relu(top[2 * x + 1])) + (relu(bot[2 * x]) + relu(bot[2 * x + 1]));
                out.push(s * quarter);
            }
        }
    }
    out
}

/// Gradient through the average pool and ReLU: dL/dz from dL/dpooled.
pub fn relu_pool_backward<T: Real>(z: &[T], dpooled: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut dz = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let i = (ch * h + y) * w + x;
                if z[i] > T::zero() {
                    dz[i] = dpooled[(ch * ho + y / 2) * wo + x / 2] * quarter;
                }
            }
        }
    }
    dz
}

/// Per-channel spatial mean.
pub fn global_avg_pool<T: Real>(x: &[T], c: usize, plane: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / plane as f64);
    (0..c)
        .map(|ch| sum(&x[ch * plane..(ch + 1) * plane]) * inv)
        .collect()
}

#[inline]
fn lanes<T: Real>(a: [T; 8]) -> T {
    ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]))
}

#[inline]
pub fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] += c[l];
        }
    }
    let mut s = lanes(acc);
    for &t in tail {
        s += t;
    }
    s
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let n8 = a.len() / 8 * 8;
    for (ca, cb) in a[..n8].chunks_exact(8).zip(b[..n8].chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s = lanes(acc);
    for i in n8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out[k] += dot(a, x[k])` for each row `k` of `x`; rows are handled four
/// at a time so `a` is loaded once per group. Each result matches [`dot`].
pub fn dot_many<T: Real>(a: &[T], x: &[T], out: &mut [T]) {
    let n = a.len();
    let n8 = n / 8 * 8;
    let mut k = 0;
    while k + 4 <= out.len() {
        let rows: [&[T]; 4] = std::array::from_fn(|r| &x[(k + r) * n..(k + r + 1) * n]);
        let mut acc = [[T::zero(); 8]; 4];
        for c in (0..n8).step_by(8) {
            let av: &[T; 8] = a[c..c + 8].try_into().unwrap();
            for r in 0..4 {
                let xv: &[T; 8] = rows[r][c..c + 8].try_into().unwrap();
                for l in 0..8 {
                    acc[r][l] += av[l] * xv[l];
                }
            }
        }
        for r in 0..4 {
            let mut s = lanes(acc[r]);
            for i in n8..n {
                s += a[i] * rows[r][i];
            }
            out[k + r] += s;
        }
        k += 4;
    }
    for kk in k..out.len() {
        out[kk] += dot(a, &x[kk * n..(kk + 1) * n]);
    }
}

#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Backward pass of [`conv3x3_forward`]. Accumulates into `dweight` and
/// `dbias`; returns dL/d(padded input) when `input_grad` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Real>(
    in_pad: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    dz: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    input_grad: bool,
) -> Option<Vec<T>> {
    let wp = w + 2;
    let plane_in = (h + 2) * wp;
    let plane = h * w;
    let cols = shifted_planes(in_pad, c_in, h, w);
    for (o, dz_o) in dz.chunks_exact(plane).enumerate() {
        dbias[o] += sum(dz_o);
        let dk = &mut dweight[o * c_in * 9..(o + 1) * c_in * 9];
        dot_many(dz_o, &cols, dk);
    }
    if !input_grad {
        return None;
    }
    let n_k = c_in * 9;
    let mut wt = vec![T::zero(); n_k * c_out];
    for o in 0..c_out {
        for k in 0..n_k {
            wt[k * c_out + o] = weight[o * n_k + k];
        }
    }
    let mut dcols = vec![T::zero(); n_k * plane];
    gemm_acc(&mut dcols, &wt, dz, n_k, c_out, plane);
    let mut din = vec![T::zero(); c_in * plane_in];
    for i in 0..c_in {
        let din_i = &mut din[i * plane_in..(i + 1) * plane_in];
        for tap in 0..9 {
            let dcol = &dcols[(i * 9 + tap) * plane..][..plane];
            let (ky, kx) = (tap / 3, tap % 3);
            for y in 0..h {
                let row = &mut din_i[(y + ky) * wp + kx..][..w];
                for (a, &b) in row.iter_mut().zip(&dcol[y * w..(y + 1) * w]) {
                    *a += b;
                }
            }
        }
    }
    Some(din)
}

/// Interior of a padded buffer.
pub fn unpad1<T: Real>(padded: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let wp = w + 2;
    let plane = (h + 2) * wp;
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            out.extend_from_slice(&padded[ch * plane + (y + 1) * wp + 1..][..w]);
        }
    }
    out
}
