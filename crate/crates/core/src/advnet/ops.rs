//! Layer primitives over row-major `f64` buffers: forward passes and the
//! matching backward passes. Shapes are `(channels, height, width)` for
//! feature maps; convolution weights are `(out, in, k, k)` with zero
//! padding `k/2` ("same" geometry).

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn conv2d_fwd(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    wt: &[f64],
    bias: &[f64],
    co: usize,
    k: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), ci * h * w);
    debug_assert_eq!(wt.len(), co * ci * k * k);
    debug_assert_eq!(out.len(), co * h * w);
    let pad = (k / 2) as isize;
    for o in 0..co {
        out[o * h * w..(o + 1) * h * w].fill(bias[o]);
    }
    for o in 0..co {
        for c in 0..ci {
            let w_oc = &wt[(o * ci + c) * k * k..(o * ci + c + 1) * k * k];
            let x_c = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let sy = ky as isize - pad;
                for kx in 0..k {
                    let sx = kx as isize - pad;
                    let wv = w_oc[ky * k + kx];
                    let y_lo = (-sy).max(0) as usize;
                    let y_hi = (h as isize).min(h as isize - sy) as usize;
                    let x_lo = (-sx).max(0) as usize;
                    let x_hi = (w as isize).min(w as isize - sx) as usize;
                    for y in y_lo..y_hi {
                        let src_off = (y as isize + sy) as usize * w + (x_lo as isize + sx) as usize;
                        let dst_off = (o * h + y) * w + x_lo;
                        let n = x_hi - x_lo;
                        let src = &x_c[src_off..src_off + n];
                        let dst = &mut out[dst_off..dst_off + n];
                        for i in 0..n {
                            dst[i] += wv * src[i];
                        }
                    }
                }
            }
        }
    }
}

/// Gradient with respect to the convolution input.
pub fn conv2d_bwd_data(
    dy: &[f64],
    (ci, h, w): (usize, usize, usize),
    wt: &[f64],
    co: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut dx = vec![0.0; ci * h * w];
    for o in 0..co {
        for c in 0..ci {
            let w_oc = &wt[(o * ci + c) * k * k..(o * ci + c + 1) * k * k];
            let dx_c = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let sy = ky as isize - pad;
                for kx in 0..k {
                    let sx = kx as isize - pad;
                    let wv = w_oc[ky * k + kx];
                    let y_lo = (-sy).max(0) as usize;
                    let y_hi = (h as isize).min(h as isize - sy) as usize;
                    let x_lo = (-sx).max(0) as usize;
                    let x_hi = (w as isize).min(w as isize - sx) as usize;
                    for y in y_lo..y_hi {
                        let dst_off = (y as isize + sy) as usize * w + (x_lo as isize + sx) as usize;
                        let src_off = (o * h + y) * w + x_lo;
                        let n = x_hi - x_lo;
                        let src = &dy[src_off..src_off + n];
                        let dst = &mut dx_c[dst_off..dst_off + n];
                        for i in 0..n {
                            dst[i] += wv * src[i];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Accumulates the filter and bias gradients into `dw`/`db`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd_filter(
    x: &[f64],
    dy: &[f64],
    (ci, h, w): (usize, usize, usize),
    co: usize,
    k: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let pad = (k / 2) as isize;
    for o in 0..co {
        let dy_o = &dy[o * h * w..(o + 1) * h * w];
        db[o] += dy_o.iter().sum::<f64>();
        for c in 0..ci {
            let x_c = &x[c * h * w..(c + 1) * h * w];
            let dw_oc = &mut dw[(o * ci + c) * k * k..(o * ci + c + 1) * k * k];
            for ky in 0..k {
                let sy = ky as isize - pad;
                for kx in 0..k {
                    let sx = kx as isize - pad;
                    let y_lo = (-sy).max(0) as usize;
                    let y_hi = (h as isize).min(h as isize - sy) as usize;
                    let x_lo = (-sx).max(0) as usize;
                    let x_hi = (w as isize).min(w as isize - sx) as usize;
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let src_off = (y as isize + sy) as usize * w + (x_lo as isize + sx) as usize;
                        let n = x_hi - x_lo;
                        let xs = &x_c[src_off..src_off + n];
                        let ds = &dy_o[y * w + x_lo..y * w + x_lo + n];
                        for i in 0..n {
                            acc += xs[i] * ds[i];
                        }
                    }
                    dw_oc[ky * k + kx] += acc;
                }
            }
        }
    }
}

pub fn dense_fwd(x: &[f64], wt: &[f64], bias: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    debug_assert_eq!(wt.len(), out_dim * in_dim);
    let mut y = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &wt[o * in_dim..(o + 1) * in_dim];
        let mut acc = bias[o];
        for i in 0..in_dim {
            acc += row[i] * x[i];
        }
        y.push(acc);
    }
    y
}

pub fn dense_bwd_data(dy: &[f64], wt: &[f64], in_dim: usize) -> Vec<f64> {
    let mut dx = vec![0.0; in_dim];
    for (o, &g) in dy.iter().enumerate() {
        let row = &wt[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            dx[i] += row[i] * g;
        }
    }
    dx
}

pub fn dense_bwd_filter(x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) {
    let in_dim = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            row[i] += g * x[i];
        }
    }
}

/// 2x2 max pooling with stride 2; `h` and `w` must be even. Returns the
/// pooled map and, per output element, the linear input offset of the max
/// (for the backward scatter).
pub fn maxpool2_fwd(x: &[f64], (c, h, w): (usize, usize, usize)) -> (Vec<f64>, Vec<u32>) {
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for py in 0..oh {
            for px in 0..ow {
                let mut best_off = (2 * py) * w + 2 * px;
                let mut best = plane[best_off];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let off = (2 * py + dy) * w + 2 * px + dx;
                    if plane[off] > best {
                        best = plane[off];
                        best_off = off;
                    }
                }
                y.push(best);
                idx.push((ch * h * w + best_off) as u32);
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_bwd(dy: &[f64], idx: &[u32], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&g, &off) in dy.iter().zip(idx) {
        dx[off as usize] += g;
    }
    dx
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_fwd(x: &[f64], (c, h, w): (usize, usize, usize), f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut y = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for yy in 0..oh {
            let sy = yy / f;
            let src = &x[ch * h * w + sy * w..ch * h * w + (sy + 1) * w];
            let dst = &mut y[ch * oh * ow + yy * ow..ch * oh * ow + (yy + 1) * ow];
            for xx in 0..ow {
                dst[xx] = src[xx / f];
            }
        }
    }
    y
}

pub fn upsample_bwd(dy: &[f64], (c, h, w): (usize, usize, usize), f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for yy in 0..oh {
            let sy = yy / f;
            let src = &dy[ch * oh * ow + yy * ow..ch * oh * ow + (yy + 1) * ow];
            let dst = &mut dx[ch * h * w + sy * w..ch * h * w + (sy + 1) * w];
            for xx in 0..ow {
                dst[xx / f] += src[xx];
            }
        }
    }
    dx
}

pub fn leaky_relu_fwd(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Backward through leaky ReLU given the post-activation values (the sign
/// of the output matches the sign of the input for slope > 0).
pub fn leaky_relu_bwd(dy: &mut [f64], post: &[f64]) {
    for (g, &y) in dy.iter_mut().zip(post) {
        if y < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

pub fn relu_fwd(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu_bwd(dy: &mut [f64], post: &[f64]) {
    for (g, &y) in dy.iter_mut().zip(post) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid_fwd(x: &mut [f64]) {
    for v in x {
        *v = sigmoid(*v);
    }
}

pub fn sigmoid_bwd(dy: &mut [f64], post: &[f64]) {
    for (g, &y) in dy.iter_mut().zip(post) {
        *g *= y * (1.0 - y);
    }
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct ResizeAxis {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn resize_axis(src: usize, dst: usize) -> ResizeAxis {
    let scale = src as f64 / dst as f64;
    let mut lo = Vec::with_capacity(dst);
    let mut hi = Vec::with_capacity(dst);
    let mut frac = Vec::with_capacity(dst);
    for d in 0..dst {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, src as f64 - 1.0);
        let l = s.floor() as usize;
        lo.push(l);
        hi.push((l + 1).min(src - 1));
        frac.push(s - l as f64);
    }
    ResizeAxis { lo, hi, frac }
}

/// Bilinear resize of a `(c, h, w)` map to `(c, oh, ow)`.
pub fn resize_bilinear_fwd(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let ax = resize_axis(w, ow);
    let ay = resize_axis(h, oh);
    let mut y = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for py in 0..oh {
            let (y0, y1, fy) = (ay.lo[py], ay.hi[py], ay.frac[py]);
            for px in 0..ow {
                let (x0, x1, fx) = (ax.lo[px], ax.hi[px], ax.frac[px]);
                let v = plane[y0 * w + x0] * (1.0 - fx) * (1.0 - fy)
                    + plane[y0 * w + x1] * fx * (1.0 - fy)
                    + plane[y1 * w + x0] * (1.0 - fx) * fy
                    + plane[y1 * w + x1] * fx * fy;
                y.push(v);
            }
        }
    }
    y
}

/// Transpose of the bilinear resize (scatter of the interpolation weights).
pub fn resize_bilinear_bwd(
    dy: &[f64],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let ax = resize_axis(w, ow);
    let ay = resize_axis(h, oh);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for py in 0..oh {
            let (y0, y1, fy) = (ay.lo[py], ay.hi[py], ay.frac[py]);
            for px in 0..ow {
                let (x0, x1, fx) = (ax.lo[px], ax.hi[px], ax.frac[px]);
                let g = dy[(ch * oh + py) * ow + px];
                plane[y0 * w + x0] += g * (1.0 - fx) * (1.0 - fy);
                plane[y0 * w + x1] += g * fx * (1.0 - fy);
                plane[y1 * w + x0] += g * (1.0 - fx) * fy;
                plane[y1 * w + x1] += g * fx * fy;
            }
        }
    }
    dx
}
