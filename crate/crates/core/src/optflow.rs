//! Dense two-frame optical flow by polynomial expansion (Farnebäck).
//!
//! Each frame is locally approximated by quadratic polynomials
//! `f(x) ~ x'Ax + b'x + c` fitted under a Gaussian weighting; comparing the
//! expansions of two frames yields a per-pixel displacement constraint
//! `A d = db` that is solved after averaging the normal equations over a
//! window. A coarse-to-fine image pyramid handles displacements larger
//! than the polynomial neighborhood.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Dense per-pixel displacement in pixels per frame; `u` is rightward,
/// `v` is downward (image coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Flow in direction/speed form: `hue = atan2(v, u)` folded into
/// `[0, 2*pi)` (zero vectors get hue 0) and `magnitude = sqrt(u^2 + v^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolar {
    pub width: usize,
    pub height: usize,
    pub hue: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Parameters of the polynomial-expansion flow estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FarnebackParams {
    /// Polynomial neighborhood side length (odd, >= 3).
    pub poly_n: usize,
    /// Gaussian width of the fitting weights.
    pub poly_sigma: f64,
    /// Total pyramid levels including the base resolution.
    pub pyramid_levels: usize,
    /// Per-level downscale factor in (0, 1).
    pub pyramid_scale: f64,
    /// Side length of the box window that averages the normal equations.
    pub window: usize,
    /// Refinement iterations per level.
    pub iterations: usize,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        Self {
            poly_n: 7,
            poly_sigma: 1.5,
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window: 15,
            iterations: 3,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<()> {
        if self.poly_n < 3 || self.poly_n % 2 == 0 {
            return Err(Error::InvalidParam("poly_n must be odd and >= 3"));
        }
        if !(self.poly_sigma > 0.0) {
            return Err(Error::InvalidParam("poly_sigma must be positive"));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::InvalidParam("pyramid_scale must lie in (0, 1)"));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidParam("pyramid_levels must be >= 1"));
        }
        if self.window == 0 {
            return Err(Error::InvalidParam("window must be >= 1"));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParam("iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Converts a flow field to direction/speed form.
pub fn to_polar(flow: &FlowField) -> FlowPolar {
    let mut hue = Vec::with_capacity(flow.u.len());
    let mut magnitude = Vec::with_capacity(flow.u.len());
    for (&u, &v) in flow.u.iter().zip(&flow.v) {
        let mut h = v.atan2(u);
        if h < 0.0 {
            h += 2.0 * core::f64::consts::PI;
        }
        hue.push(h);
        magnitude.push((u * u + v * v).sqrt());
    }
    FlowPolar {
        width: flow.width,
        height: flow.height,
        hue,
        magnitude,
    }
}

/// Per-pixel quadratic expansion coefficients: local signal
/// `~ c + (b1, b2)'x + x'[[a11, a12], [a12, a22]]x`.
struct PolyExp {
    b1: Vec<f64>,
    b2: Vec<f64>,
    a11: Vec<f64>,
    a12: Vec<f64>,
    a22: Vec<f64>,
}

#[inline]
fn clamp_idx(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

fn poly_expansion(img: &[f64], w: usize, h: usize, n: usize, sigma: f64) -> PolyExp {
    let r = (n / 2) as isize;
    // 1D applicability kernels: g, i*g, i^2*g
    let mut g = Vec::with_capacity(n);
    for i in -r..=r {
        g.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = g.iter().sum();
    for v in &mut g {
        *v /= norm;
    }
    let ig: Vec<f64> = (-r..=r).map(|i| i as f64 * g[(i + r) as usize]).collect();
    let iig: Vec<f64> = (-r..=r)
        .map(|i| (i * i) as f64 * g[(i + r) as usize])
        .collect();

    // Moments of the weighting; the normal matrix of the fit is constant
    // over the image because borders are handled by clamped extension.
    let m2: f64 = iig.iter().sum();
    let m4: f64 = (-r..=r)
        .map(|i| ((i * i * i * i) as f64) * g[(i + r) as usize])
        .sum();
    let m22 = m2 * m2;
    // Invert [[1, m2, m2], [m2, m4, m22], [m2, m22, m4]] for (c, cxx, cyy);
    // the x, y and xy rows decouple.
    let inv3 = invert3([[1.0, m2, m2], [m2, m4, m22], [m2, m22, m4]]);
    let inv_m2 = 1.0 / m2;
    let inv_m22 = 1.0 / m22;

    // vertical pass: correlate columns with g, ig, iig
    let len = w * h;
    let mut t0 = vec![0.0; len];
    let mut t1 = vec![0.0; len];
    let mut t2 = vec![0.0; len];
    for y in 0..h {
        for x in 0..w {
            let mut s0 = 0.0;
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for j in -r..=r {
                let yy = clamp_idx(y as isize + j, h);
                let v = img[yy * w + x];
                let k = (j + r) as usize;
                s0 += g[k] * v;
                s1 += ig[k] * v;
                s2 += iig[k] * v;
            }
            let idx = y * w + x;
            t0[idx] = s0;
            t1[idx] = s1;
            t2[idx] = s2;
        }
    }

    // horizontal pass: assemble the six moments and solve per pixel
    let mut out = PolyExp {
        b1: vec![0.0; len],
        b2: vec![0.0; len],
        a11: vec![0.0; len],
        a12: vec![0.0; len],
        a22: vec![0.0; len],
    };
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            let mut m_c = 0.0;
            let mut m_x = 0.0;
            let mut m_xx = 0.0;
            let mut m_y = 0.0;
            let mut m_xy = 0.0;
            let mut m_yy = 0.0;
            for i in -r..=r {
                let xx = clamp_idx(x as isize + i, w);
                let k = (i + r) as usize;
                let v0 = t0[row + xx];
                let v1 = t1[row + xx];
                let v2 = t2[row + xx];
                m_c += g[k] * v0;
                m_x += ig[k] * v0;
                m_xx += iig[k] * v0;
                m_y += g[k] * v1;
                m_xy += ig[k] * v1;
                m_yy += g[k] * v2;
            }
            let idx = row + x;
            out.b1[idx] = m_x * inv_m2;
            out.b2[idx] = m_y * inv_m2;
            let cxx = inv3[1][0] * m_c + inv3[1][1] * m_xx + inv3[1][2] * m_yy;
            let cyy = inv3[2][0] * m_c + inv3[2][1] * m_xx + inv3[2][2] * m_yy;
            out.a11[idx] = cxx;
            out.a22[idx] = cyy;
            out.a12[idx] = 0.5 * m_xy * inv_m22;
        }
    }
    out
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // cofactor expansion, transposed
            let r0 = (i + 1) % 3;
            let r1 = (i + 2) % 3;
            let c0 = (j + 1) % 3;
            let c1 = (j + 2) % 3;
            out[j][i] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) * inv_det;
        }
    }
    out
}

/// Builds the per-pixel normal equations `G d = h` from two expansions and
/// the current flow prior.
#[allow(clippy::too_many_arguments)]
fn update_matrices(
    prev: &PolyExp,
    next: &PolyExp,
    w: usize,
    h: usize,
    fu: &[f64],
    fv: &[f64],
    m: &mut [Vec<f64>; 5],
) {
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let du = fu[idx];
            let dv = fv[idx];
            let nx = clamp_idx((x as f64 + du).round() as isize, w);
            let ny = clamp_idx((y as f64 + dv).round() as isize, h);
            let j = ny * w + nx;
            let a11 = 0.5 * (prev.a11[idx] + next.a11[j]);
            let a12 = 0.5 * (prev.a12[idx] + next.a12[j]);
            let a22 = 0.5 * (prev.a22[idx] + next.a22[j]);
            let db1 = -0.5 * (next.b1[j] - prev.b1[idx]) + a11 * du + a12 * dv;
            let db2 = -0.5 * (next.b2[j] - prev.b2[idx]) + a12 * du + a22 * dv;
            m[0][idx] = a11 * a11 + a12 * a12;
            m[1][idx] = a12 * (a11 + a22);
            m[2][idx] = a12 * a12 + a22 * a22;
            m[3][idx] = a11 * db1 + a12 * db2;
            m[4][idx] = a12 * db1 + a22 * db2;
        }
    }
}

/// Box mean with truncated borders, separable, in place.
fn box_blur(data: &mut [f64], w: usize, h: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let r = radius as isize;
    let mut tmp = vec![0.0; data.len()];
    // horizontal
    for y in 0..h {
        let row = y * w;
        let mut sum = 0.0;
        let mut count = 0.0;
        for x in 0..(r as usize).min(w.saturating_sub(1)) + 1 {
            sum += data[row + x];
            count += 1.0;
        }
        for x in 0..w {
            tmp[row + x] = sum / count;
            let add = x as isize + r + 1;
            if add < w as isize {
                sum += data[row + add as usize];
                count += 1.0;
            }
            let drop = x as isize - r;
            if drop >= 0 {
                sum -= data[row + drop as usize];
                count -= 1.0;
            }
        }
    }
    // vertical
    for x in 0..w {
        let mut sum = 0.0;
        let mut count = 0.0;
        for y in 0..(r as usize).min(h.saturating_sub(1)) + 1 {
            sum += tmp[y * w + x];
            count += 1.0;
        }
        for y in 0..h {
            data[y * w + x] = sum / count;
            let add = y as isize + r + 1;
            if add < h as isize {
                sum += tmp[add as usize * w + x];
                count += 1.0;
            }
            let drop = y as isize - r;
            if drop >= 0 {
                sum -= tmp[drop as usize * w + x];
                count -= 1.0;
            }
        }
    }
}

fn solve_flow(m: &[Vec<f64>; 5], w: usize, h: usize, fu: &mut [f64], fv: &mut [f64]) {
    for idx in 0..w * h {
        let g11 = m[0][idx];
        let g12 = m[1][idx];
        let g22 = m[2][idx];
        let h1 = m[3][idx];
        let h2 = m[4][idx];
        let det = g11 * g22 - g12 * g12;
        if det.abs() > 1e-12 {
            fu[idx] = (g22 * h1 - g12 * h2) / det;
            fv[idx] = (g11 * h2 - g12 * h1) / det;
        }
        // otherwise keep the prior (textureless neighborhood)
    }
}

fn gaussian_blur5(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, coeff) in K.iter().enumerate() {
                let xx = clamp_idx(x as isize + k as isize - 2, w);
                s += coeff * data[y * w + xx];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, coeff) in K.iter().enumerate() {
                let yy = clamp_idx(y as isize + k as isize - 2, h);
                s += coeff * tmp[yy * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

#[inline]
fn bilinear(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, w as f64 - 1.0);
    let y = y.clamp(0.0, h as f64 - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = data[y0 * w + x0];
    let v01 = data[y0 * w + x1];
    let v10 = data[y1 * w + x0];
    let v11 = data[y1 * w + x1];
    v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy
}

fn resample(data: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        for x in 0..nw {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            out.push(bilinear(data, w, h, src_x, src_y));
        }
    }
    out
}

/// Dense flow from `prev` to `next`: the estimated displacement `d(x)` such
/// that content at `x` in `prev` appears at `x + d(x)` in `next`.
pub fn farneback(
    prev: &GrayImage,
    next: &GrayImage,
    params: &FarnebackParams,
) -> Result<FlowField> {
    params.validate()?;
    if !prev.same_geometry(next) {
        return Err(Error::GeometryMismatch {
            expected: prev.dimensions(),
            got: next.dimensions(),
        });
    }
    let (w, h) = prev.dimensions();
    if w < params.poly_n || h < params.poly_n {
        return Err(Error::InvalidParam("frame smaller than poly_n"));
    }

    let to_float = |img: &GrayImage| -> Vec<f64> {
        img.as_slice().iter().map(|&v| v as f64 / 255.0).collect()
    };

    // pyramid, base level first
    let mut sizes = vec![(w, h)];
    let mut pyr_prev = vec![to_float(prev)];
    let mut pyr_next = vec![to_float(next)];
    let min_dim = params.poly_n.max(8);
    for _ in 1..params.pyramid_levels {
        let (cw, ch) = *sizes.last().expect("nonempty pyramid");
        let nw = (cw as f64 * params.pyramid_scale).round() as usize;
        let nh = (ch as f64 * params.pyramid_scale).round() as usize;
        if nw < min_dim || nh < min_dim {
            break;
        }
        let bp = gaussian_blur5(pyr_prev.last().expect("level"), cw, ch);
        let bn = gaussian_blur5(pyr_next.last().expect("level"), cw, ch);
        pyr_prev.push(resample(&bp, cw, ch, nw, nh));
        pyr_next.push(resample(&bn, cw, ch, nw, nh));
        sizes.push((nw, nh));
    }

    let coarsest = sizes.len() - 1;
    let (cw, ch) = sizes[coarsest];
    let mut fu = vec![0.0; cw * ch];
    let mut fv = vec![0.0; cw * ch];

    for level in (0..=coarsest).rev() {
        let (lw, lh) = sizes[level];
        if level != coarsest {
            let (pw, ph) = sizes[level + 1];
            let mut nu = resample(&fu, pw, ph, lw, lh);
            let mut nv = resample(&fv, pw, ph, lw, lh);
            let rx = lw as f64 / pw as f64;
            let ry = lh as f64 / ph as f64;
            for v in &mut nu {
                *v *= rx;
            }
            for v in &mut nv {
                *v *= ry;
            }
            fu = nu;
            fv = nv;
        }
        let poly_prev = poly_expansion(&pyr_prev[level], lw, lh, params.poly_n, params.poly_sigma);
        let poly_next = poly_expansion(&pyr_next[level], lw, lh, params.poly_n, params.poly_sigma);
        let mut m: [Vec<f64>; 5] = core::array::from_fn(|_| vec![0.0; lw * lh]);
        for _ in 0..params.iterations {
            update_matrices(&poly_prev, &poly_next, lw, lh, &fu, &fv, &mut m);
            let radius = params.window / 2;
            for channel in m.iter_mut() {
                box_blur(channel, lw, lh, radius);
            }
            solve_flow(&m, lw, lh, &mut fu, &mut fv);
        }
    }

    Ok(FlowField {
        width: w,
        height: h,
        u: fu,
        v: fv,
    })
}
