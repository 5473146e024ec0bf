//! Forward and backward kernels for the small op vocabulary the networks use.
//!
//! Every reduction (conv, pool, xcorr, mean) accumulates in f64 regardless of
//! the working precision, with a fixed summation order: bias first, then taps
//! in (channel, ky, kx) order. The fast paths below visit taps plane-by-plane
//! but preserve exactly that per-element order, so results are reproducible
//! and match the naive reference kernels in `oracle`.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Per-side spatial zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const fn none() -> Self {
        Padding { top: 0, bottom: 0, left: 0, right: 0 }
    }

    pub const fn uniform(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }
}

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            dilation: (1, 1),
            padding: Padding::none(),
        }
    }

    /// Size-preserving layer: odd kernel, stride 1, pad = dilation·(k−1)/2.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "size-preserving conv needs an odd kernel");
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            dilation: (dilation, dilation),
            padding: Padding::uniform(dilation * (kernel - 1) / 2),
        }
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn with_padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn weight_dims(&self) -> Dims {
        Dims::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    /// out = floor((in + padT + padB − dilation·(k−1) − 1)/stride) + 1, per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |in_len: usize, pad0: usize, pad1: usize, k: usize, s: usize, d: usize| {
            let span = d * (k - 1) + 1;
            let padded = in_len + pad0 + pad1;
            if padded < span {
                return Err(Error::InvalidArgument(format!(
                    "conv input extent {in_len}+{pad0}+{pad1} smaller than dilated kernel span {span}"
                )));
            }
            Ok((padded - span) / s + 1)
        };
        let oh = axis(h, self.padding.top, self.padding.bottom, self.kernel.0, self.stride.0, self.dilation.0)?;
        let ow = axis(w, self.padding.left, self.padding.right, self.kernel.1, self.stride.1, self.dilation.1)?;
        Ok((oh, ow))
    }
}

/// Square pooling window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        PoolSpec { kernel, stride, pad }
    }

    /// Size-halving cascade stage: stride 2, pad (k−1)/2 → output = ceil(in/2).
    pub fn halving(kernel: usize) -> Self {
        assert!(kernel % 2 == 1);
        PoolSpec { kernel, stride: 2, pad: (kernel - 1) / 2 }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |in_len: usize| {
            let padded = in_len + 2 * self.pad;
            if padded < self.kernel {
                return Err(Error::InvalidArgument(format!(
                    "pool input extent {in_len}+2·{} smaller than kernel {}",
                    self.pad, self.kernel
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((axis(h)?, axis(w)?))
    }
}

fn shape_err(op: &'static str, lhs: Dims, rhs: Dims) -> Error {
    Error::ShapeMismatch { op, lhs: lhs.to_string(), rhs: rhs.to_string() }
}

/// Σ a[i]·b[i] with eight independent accumulators so the FMA chains
/// pipeline; backward passes only, where sums are not pinned bit-for-bit.
#[inline]
fn dot_mixed<T: Scalar>(a: &[f64], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 8];
    let mut chunks = a.chunks_exact(8).zip(b.chunks_exact(8));
    for (ca, cb) in &mut chunks {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k].to_f64();
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    let tail = a.len() - a.len() % 8;
    for (ga, gb) in a[tail..].iter().zip(&b[tail..]) {
        s += ga * gb.to_f64();
    }
    s
}

#[inline]
fn sum_unrolled(a: &[f64]) -> f64 {
    let mut acc = [0f64; 8];
    let mut chunks = a.chunks_exact(8);
    for ca in &mut chunks {
        for k in 0..8 {
            acc[k] += ca[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for v in chunks.remainder() {
        s += v;
    }
    s
}

/// Output index range [lo, hi) for which `o·stride + off` lands in [0, in_len).
#[inline]
fn valid_range(off: isize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = (in_len as isize - 1 - off).div_euclid(s).min(out_len as isize - 1);
    if hi < lo.max(0) {
        (0, 0)
    } else {
        (lo.max(0) as usize, hi as usize + 1)
    }
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let id = input.dims();
    let wd = weight.dims();
    if id.c != spec.in_channels || wd != spec.weight_dims() {
        return Err(shape_err("conv2d", id, wd));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::InvalidArgument(format!(
                "conv2d bias length {} for {} output channels",
                b.len(),
                spec.out_channels
            )));
        }
    }
    let (oh, ow) = spec.output_hw(id.h, id.w)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let mut out = Tensor::zeros(Dims::new(id.n, spec.out_channels, oh, ow));
    let mut acc = vec![0f64; oh * ow];

    for n in 0..id.n {
        for co in 0..spec.out_channels {
            let b = bias.map_or(0.0, |b| b[co].to_f64());
            acc.fill(b);
            for ci in 0..spec.in_channels {
                let xplane = input.plane(n, ci);
                for ky in 0..kh {
                    let off_y = (ky * dh) as isize - spec.padding.top as isize;
                    let (oy_lo, oy_hi) = valid_range(off_y, sh, id.h, oh);
                    for kx in 0..kw {
                        let w = weight.get(co, ci, ky, kx).to_f64();
                        let off_x = (kx * dw) as isize - spec.padding.left as isize;
                        let (ox_lo, ox_hi) = valid_range(off_x, sw, id.w, ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = (oy * sh) as isize + off_y;
                            let xrow = &xplane[iy as usize * id.w..][..id.w];
                            let arow = &mut acc[oy * ow..][..ow];
                            if sw == 1 {
                                let x0 = (ox_lo as isize + off_x) as usize;
                                let xs = &xrow[x0..x0 + (ox_hi - ox_lo)];
                                for (a, &x) in arow[ox_lo..ox_hi].iter_mut().zip(xs) {
                                    *a += w * x.to_f64();
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = (ox * sw) as isize + off_x;
                                    arow[ox] += w * xrow[ix as usize].to_f64();
                                }
                            }
                        }
                    }
                }
            }
            for (o, &a) in out.plane_mut(n, co).iter_mut().zip(acc.iter()) {
                *o = T::from_f64(a);
            }
        }
    }
    Ok(out)
}

/// Accumulates conv gradients into any of the three optional buffers.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<f64>,
    mut grad_input: Option<&mut Tensor<f64>>,
    mut grad_weight: Option<&mut Tensor<f64>>,
    mut grad_bias: Option<&mut [f64]>,
) {
    let id = input.dims();
    let od = grad_out.dims();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;

    for n in 0..id.n {
        for co in 0..spec.out_channels {
            let gplane = grad_out.plane(n, co);
            if let Some(gb) = grad_bias.as_deref_mut() {
                gb[co] += sum_unrolled(gplane);
            }
            for ci in 0..spec.in_channels {
                let xplane = input.plane(n, ci);
                // One plane borrow per (co, ci); both tap passes below share
                // the same row slices, halving the memory traffic.
                let mut gi_plane = grad_input.as_deref_mut().map(|gi| {
                    let start = gi.index(n, ci, 0, 0);
                    &mut gi.data_mut()[start..start + id.h * id.w]
                });
                let want_w = grad_weight.is_some();
                for ky in 0..kh {
                    let off_y = (ky * dh) as isize - spec.padding.top as isize;
                    let (oy_lo, oy_hi) = valid_range(off_y, sh, id.h, od.h);
                    for kx in 0..kw {
                        let off_x = (kx * dw) as isize - spec.padding.left as isize;
                        let (ox_lo, ox_hi) = valid_range(off_x, sw, id.w, od.w);
                        if ox_lo >= ox_hi || oy_lo >= oy_hi {
                            continue;
                        }
                        let w = if gi_plane.is_some() {
                            weight.get(co, ci, ky, kx).to_f64()
                        } else {
                            0.0
                        };
                        let mut s = 0f64;
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * sh) as isize + off_y) as usize;
                            let grow = &gplane[oy * od.w + ox_lo..oy * od.w + ox_hi];
                            if sw == 1 {
                                let x0 = iy * id.w + (ox_lo as isize + off_x) as usize;
                                if want_w {
                                    s += dot_mixed(grow, &xplane[x0..x0 + grow.len()]);
                                }
                                if let Some(gip) = gi_plane.as_deref_mut() {
                                    for (x, &g) in gip[x0..x0 + grow.len()].iter_mut().zip(grow) {
                                        *x += w * g;
                                    }
                                }
                            } else {
                                for (j, ox) in (ox_lo..ox_hi).enumerate() {
                                    let ix = iy * id.w + ((ox * sw) as isize + off_x) as usize;
                                    if want_w {
                                        s += grow[j] * xplane[ix].to_f64();
                                    }
                                    if let Some(gip) = gi_plane.as_deref_mut() {
                                        gip[ix] += w * grow[j];
                                    }
                                }
                            }
                        }
                        if let Some(gw) = grad_weight.as_deref_mut() {
                            let i = gw.index(co, ci, ky, kx);
                            gw.data_mut()[i] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Window iterator shared by the two pools: calls f(iy, ix) over in-bounds cells.
#[inline]
fn for_window(spec: &PoolSpec, oy: usize, ox: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
    let y0 = (oy * spec.stride) as isize - spec.pad as isize;
    let x0 = (ox * spec.stride) as isize - spec.pad as isize;
    for ky in 0..spec.kernel as isize {
        let iy = y0 + ky;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for kx in 0..spec.kernel as isize {
            let ix = x0 + kx;
            if ix < 0 || ix >= w as isize {
                continue;
            }
            f(iy as usize, ix as usize);
        }
    }
}

/// Mean over the window's in-bounds cells (padding cells excluded from the
/// denominator, so constant maps stay constant at every border).
pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<Tensor<T>> {
    let id = input.dims();
    let (oh, ow) = spec.output_hw(id.h, id.w)?;
    let mut out = Tensor::zeros(Dims::new(id.n, id.c, oh, ow));
    for n in 0..id.n {
        for c in 0..id.c {
            let plane = input.plane(n, c);
            let oplane = out.plane_mut(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0f64;
                    let mut cnt = 0usize;
                    for_window(spec, oy, ox, id.h, id.w, |iy, ix| {
                        s += plane[iy * id.w + ix].to_f64();
                        cnt += 1;
                    });
                    oplane[oy * ow + ox] = T::from_f64(s / cnt as f64);
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2d_backward(
    input_dims: Dims,
    spec: &PoolSpec,
    grad_out: &Tensor<f64>,
    grad_in: &mut Tensor<f64>,
) {
    let od = grad_out.dims();
    for n in 0..input_dims.n {
        for c in 0..input_dims.c {
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let mut cnt = 0usize;
                    for_window(spec, oy, ox, input_dims.h, input_dims.w, |_, _| cnt += 1);
                    let g = grad_out.get(n, c, oy, ox) / cnt as f64;
                    for_window(spec, oy, ox, input_dims.h, input_dims.w, |iy, ix| {
                        let i = grad_in.index(n, c, iy, ix);
                        grad_in.data_mut()[i] += g;
                    });
                }
            }
        }
    }
}

/// Max over the window's in-bounds cells.
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<Tensor<T>> {
    let id = input.dims();
    let (oh, ow) = spec.output_hw(id.h, id.w)?;
    let mut out = Tensor::zeros(Dims::new(id.n, id.c, oh, ow));
    for n in 0..id.n {
        for c in 0..id.c {
            let plane = input.plane(n, c);
            let oplane = out.plane_mut(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<T> = None;
                    for_window(spec, oy, ox, id.h, id.w, |iy, ix| {
                        let v = plane[iy * id.w + ix];
                        if best.is_none() || v > best.unwrap() {
                            best = Some(v);
                        }
                    });
                    oplane[oy * ow + ox] = best.expect("pool window never empty");
                }
            }
        }
    }
    Ok(out)
}

/// Routes each output gradient to the first (row-major) maximal input cell.
pub fn max_pool2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &PoolSpec,
    grad_out: &Tensor<f64>,
    grad_in: &mut Tensor<f64>,
) {
    let id = input.dims();
    let od = grad_out.dims();
    for n in 0..id.n {
        for c in 0..id.c {
            let plane = input.plane(n, c);
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let mut best: Option<(T, usize, usize)> = None;
                    for_window(spec, oy, ox, id.h, id.w, |iy, ix| {
                        let v = plane[iy * id.w + ix];
                        if best.is_none() || v > best.unwrap().0 {
                            best = Some((v, iy, ix));
                        }
                    });
                    let (_, iy, ix) = best.expect("pool window never empty");
                    let i = grad_in.index(n, c, iy, ix);
                    grad_in.data_mut()[i] += grad_out.get(n, c, oy, ox);
                }
            }
        }
    }
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// relu'(0) = 0 by convention.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<f64>, grad_in: &mut Tensor<f64>) {
    for ((x, g), gi) in input
        .data()
        .iter()
        .zip(grad_out.data())
        .zip(grad_in.data_mut())
    {
        if *x > T::ZERO {
            *gi += *g;
        }
    }
}

/// Logistic function, clamped so the output is strictly inside (0, 1) even
/// where the working precision would round to an endpoint.
pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| {
        let y = 1.0 / (1.0 + (-v.to_f64()).exp());
        let y = T::from_f64(y);
        if y <= T::ZERO {
            T::TINY
        } else if y >= T::ONE {
            T::BELOW_ONE
        } else {
            y
        }
    })
}

/// Uses the saved (clamped) output: dy/dx = y·(1−y).
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<f64>, grad_in: &mut Tensor<f64>) {
    for ((y, g), gi) in output
        .data()
        .iter()
        .zip(grad_out.data())
        .zip(grad_in.data_mut())
    {
        let y = y.to_f64();
        *gi += *g * y * (1.0 - y);
    }
}

pub fn concat_depth<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_depth of zero tensors".into()))?
        .dims();
    let mut c_total = 0;
    for t in inputs {
        let d = t.dims();
        if (d.n, d.h, d.w) != (first.n, first.h, first.w) {
            return Err(shape_err("concat_depth", first, d));
        }
        c_total += d.c;
    }
    let mut out = Tensor::zeros(Dims::new(first.n, c_total, first.h, first.w));
    for n in 0..first.n {
        let mut co = 0;
        for t in inputs {
            for c in 0..t.dims().c {
                out.plane_mut(n, co).copy_from_slice(t.plane(n, c));
                co += 1;
            }
        }
    }
    Ok(out)
}

fn zip_elementwise<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(shape_err(op, a.dims(), b.dims()));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| T::from_f64(f(x.to_f64(), y.to_f64())))
        .collect();
    Tensor::from_vec(a.dims(), data)
}

pub fn subtract<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_elementwise("subtract", a, b, |x, y| x - y)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_elementwise("add", a, b, |x, y| x + y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_elementwise("mul", a, b, |x, y| x * y)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, k: f64) -> Tensor<T> {
    a.map(|v| T::from_f64(v.to_f64() * k))
}

fn scalar_of<T: Scalar>(op: &'static str, s: &Tensor<T>) -> Result<f64> {
    if s.dims().count() != 1 {
        return Err(shape_err(op, Dims::new(1, 1, 1, 1), s.dims()));
    }
    Ok(s.data()[0].to_f64())
}

/// a − s, where `s` is a single-element tensor broadcast over all of `a`.
pub fn sub_bcast<T: Scalar>(a: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let sv = scalar_of("sub_bcast", s)?;
    Ok(a.map(|v| T::from_f64(v.to_f64() - sv)))
}

/// a / s, where `s` is a single-element tensor broadcast over all of `a`.
pub fn div_bcast<T: Scalar>(a: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let sv = scalar_of("div_bcast", s)?;
    if sv == 0.0 {
        return Err(Error::InvalidArgument("div_bcast by zero".into()));
    }
    Ok(a.map(|v| T::from_f64(v.to_f64() / sv)))
}

/// Elementwise square root; rejects negative inputs rather than emit NaN.
pub fn sqrt_elem<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.data().iter().any(|v| v.to_f64() < 0.0) {
        return Err(Error::InvalidArgument("sqrt_elem of a negative value".into()));
    }
    Ok(a.map(|v| T::from_f64(v.to_f64().sqrt())))
}

/// Per-axis source coordinates for align-corners-false bilinear sampling:
/// src = clamp((dst + 0.5)·in/out − 0.5, 0, in−1).
pub(crate) fn resize_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let id = input.dims();
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("bilinear_resize to an empty size".into()));
    }
    let ys = resize_axis(id.h, out_h);
    let xs = resize_axis(id.w, out_w);
    let mut out = Tensor::zeros(Dims::new(id.n, id.c, out_h, out_w));
    for n in 0..id.n {
        for c in 0..id.c {
            let plane = input.plane(n, c);
            let oplane = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let v00 = plane[y0 * id.w + x0].to_f64();
                    let v01 = plane[y0 * id.w + x1].to_f64();
                    let v10 = plane[y1 * id.w + x0].to_f64();
                    let v11 = plane[y1 * id.w + x1].to_f64();
                    let v = v00 * (1.0 - fy) * (1.0 - fx)
                        + v01 * (1.0 - fy) * fx
                        + v10 * fy * (1.0 - fx)
                        + v11 * fy * fx;
                    oplane[oy * out_w + ox] = T::from_f64(v);
                }
            }
        }
    }
    Ok(out)
}

/// Scatters each output gradient through the four interpolation weights.
pub fn bilinear_resize_backward(input_dims: Dims, grad_out: &Tensor<f64>, grad_in: &mut Tensor<f64>) {
    let od = grad_out.dims();
    let ys = resize_axis(input_dims.h, od.h);
    let xs = resize_axis(input_dims.w, od.w);
    for n in 0..input_dims.n {
        for c in 0..input_dims.c {
            let gplane = grad_out.plane(n, c);
            let start = grad_in.index(n, c, 0, 0);
            let iplane = &mut grad_in.data_mut()[start..start + input_dims.h * input_dims.w];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let g = gplane[oy * od.w + ox];
                    iplane[y0 * input_dims.w + x0] += g * (1.0 - fy) * (1.0 - fx);
                    iplane[y0 * input_dims.w + x1] += g * (1.0 - fy) * fx;
                    iplane[y1 * input_dims.w + x0] += g * fy * (1.0 - fx);
                    iplane[y1 * input_dims.w + x1] += g * fy * fx;
                }
            }
        }
    }
}

/// Valid (unpadded) cross-correlation, channels summed: the template slides
/// over the ROI features and each offset scores Σ_c Σ_u Σ_v roi·tmpl.
pub fn xcorr<T: Scalar>(roi: &Tensor<T>, tmpl: &Tensor<T>) -> Result<Tensor<T>> {
    let rd = roi.dims();
    let td = tmpl.dims();
    if rd.c != td.c || rd.n != 1 || td.n != 1 || td.h > rd.h || td.w > rd.w {
        return Err(shape_err("xcorr", rd, td));
    }
    let oh = rd.h - td.h + 1;
    let ow = rd.w - td.w + 1;
    let mut acc = vec![0f64; oh * ow];
    for c in 0..rd.c {
        let rplane = roi.plane(0, c);
        let tplane = tmpl.plane(0, c);
        for u in 0..td.h {
            for v in 0..td.w {
                let t = tplane[u * td.w + v].to_f64();
                for r in 0..oh {
                    let rrow = &rplane[(r + u) * rd.w + v..][..ow];
                    let arow = &mut acc[r * ow..][..ow];
                    for (a, &x) in arow.iter_mut().zip(rrow) {
                        *a += t * x.to_f64();
                    }
                }
            }
        }
    }
    let data = acc.into_iter().map(T::from_f64).collect();
    Tensor::from_vec(Dims::new(1, 1, oh, ow), data)
}

pub fn xcorr_backward<T: Scalar>(
    roi: &Tensor<T>,
    tmpl: &Tensor<T>,
    grad_out: &Tensor<f64>,
    mut grad_roi: Option<&mut Tensor<f64>>,
    mut grad_tmpl: Option<&mut Tensor<f64>>,
) {
    let rd = roi.dims();
    let td = tmpl.dims();
    let od = grad_out.dims();
    let gout = grad_out.plane(0, 0);
    for c in 0..rd.c {
        let rplane = roi.plane(0, c);
        let tplane = tmpl.plane(0, c);
        let mut gr_plane = grad_roi.as_deref_mut().map(|gr| {
            let start = gr.index(0, c, 0, 0);
            &mut gr.data_mut()[start..start + rd.h * rd.w]
        });
        let want_t = grad_tmpl.is_some();
        for u in 0..td.h {
            for v in 0..td.w {
                let t = tplane[u * td.w + v].to_f64();
                let mut s = 0f64;
                for r in 0..od.h {
                    let grow = &gout[r * od.w..][..od.w];
                    let x0 = (r + u) * rd.w + v;
                    if want_t {
                        s += dot_mixed(grow, &rplane[x0..x0 + od.w]);
                    }
                    if let Some(grp) = gr_plane.as_deref_mut() {
                        for (x, &g) in grp[x0..x0 + od.w].iter_mut().zip(grow) {
                            *x += t * g;
                        }
                    }
                }
                if let Some(gt) = grad_tmpl.as_deref_mut() {
                    let i = gt.index(0, c, u, v);
                    gt.data_mut()[i] += s;
                }
            }
        }
    }
}

/// Mean over every element, as a 1×1×1×1 tensor.
pub fn mean_all<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut s = 0f64;
    for v in input.data() {
        s += v.to_f64();
    }
    Tensor::from_vec(
        Dims::new(1, 1, 1, 1),
        vec![T::from_f64(s / input.dims().count() as f64)],
    )
    .unwrap()
}

pub fn sum_all<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut s = 0f64;
    for v in input.data() {
        s += v.to_f64();
    }
    Tensor::from_vec(Dims::new(1, 1, 1, 1), vec![T::from_f64(s)]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: Dims, v: Vec<f32>) -> Tensor<f32> {
        Tensor::from_vec(dims, v).unwrap()
    }

    #[test]
    fn conv_all_ones_sums_nine() {
        let x = Tensor::filled(Dims::new(1, 1, 3, 3), 1.0f32);
        let w = Tensor::filled(Dims::new(1, 1, 3, 3), 1.0f32);
        let spec = ConvSpec::new(1, 1, 3);
        let y = conv2d(&x, &w, Some(&[0.0]), &spec).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 1, 1));
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn dilated_conv_hits_only_center() {
        let mut x = Tensor::zeros(Dims::new(1, 1, 5, 5));
        x.set(0, 0, 2, 2, 1.0f32);
        let w = Tensor::filled(Dims::new(1, 1, 3, 3), 1.0f32);
        let spec = ConvSpec::new(1, 1, 3).with_dilation(2);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 1, 1));
        assert_eq!(y.data()[0], 1.0);
    }

    #[test]
    fn output_size_formula() {
        // 192 → 96 → 48 → 24 through the halving pools.
        let mut s = 192;
        for k in [3, 5, 7] {
            let (h, _) = PoolSpec::halving(k).output_hw(s, s).unwrap();
            s = h;
        }
        assert_eq!(s, 24);
        // Size-preserving dilated conv: pad = d(k−1)/2.
        let spec = ConvSpec::same(3, 6, 3, 3);
        assert_eq!(spec.padding, Padding::uniform(3));
        assert_eq!(spec.output_hw(192, 192).unwrap(), (192, 192));
        // Kernel span larger than the input is rejected.
        assert!(ConvSpec::new(1, 1, 5).output_hw(4, 4).is_err());
    }

    #[test]
    fn pool_basic_values() {
        let x = t(Dims::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let spec = PoolSpec::new(2, 2, 0);
        assert_eq!(avg_pool2d(&x, &spec).unwrap().data(), &[2.5]);
        assert_eq!(max_pool2d(&x, &spec).unwrap().data(), &[4.0]);

        let z = Tensor::<f32>::zeros(Dims::new(1, 2, 4, 4));
        let spec = PoolSpec::halving(3);
        assert!(avg_pool2d(&z, &spec).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(max_pool2d(&z, &spec).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn avg_pool_borders_stay_constant() {
        // In-bounds-count denominator keeps constant maps exactly constant.
        let x = Tensor::filled(Dims::new(1, 1, 5, 5), 0.7f32);
        let y = avg_pool2d(&x, &PoolSpec::halving(3)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn relu_sigmoid_subtract_basics() {
        let x = t(Dims::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let z = Tensor::<f32>::zeros(Dims::new(1, 1, 1, 1));
        assert_eq!(sigmoid(&z).data()[0], 0.5);
        let d = subtract(&x, &x).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
        assert!(subtract(&x, &z).is_err());
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval() {
        let x = t(Dims::new(1, 1, 1, 4), vec![-1e4, -30.0, 30.0, 1e4]);
        for &v in sigmoid(&x).data() {
            assert!(v > 0.0 && v < 1.0, "got {v}");
        }
    }

    #[test]
    fn resize_hand_checked_row() {
        let x = t(Dims::new(1, 1, 2, 2), vec![0.0, 1.0, 0.0, 1.0]);
        let y = bilinear_resize(&x, 2, 4).unwrap();
        let want = [0.0, 0.25, 0.75, 1.0];
        for row in 0..2 {
            for (i, &w) in want.iter().enumerate() {
                assert!((y.get(0, 0, row, i) - w).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn resize_constant_and_identity() {
        let c = Tensor::filled(Dims::new(1, 2, 3, 5), 5.0f32);
        for (h, w) in [(1, 1), (7, 2), (10, 10)] {
            let y = bilinear_resize(&c, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 5.0).abs() < 1e-6));
        }
        let x = t(Dims::new(1, 1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = bilinear_resize(&x, 2, 3).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn xcorr_shapes_and_self_score() {
        let rd = Dims::new(1, 2, 5, 5);
        let roi = t(rd, (0..50).map(|i| (i as f32 * 0.17).sin()).collect());
        // Template = ROI crop at offset (1, 2).
        let mut tmpl = Tensor::zeros(Dims::new(1, 2, 3, 3));
        for c in 0..2 {
            for u in 0..3 {
                for v in 0..3 {
                    tmpl.set(0, c, u, v, roi.get(0, c, 1 + u, 2 + v));
                }
            }
        }
        let score = xcorr(&roi, &tmpl).unwrap();
        assert_eq!(score.dims(), Dims::new(1, 1, 3, 3));
        let norm2: f64 = tmpl.data().iter().map(|&v| (v as f64) * (v as f64)).sum();
        let got = score.get(0, 0, 1, 2) as f64;
        assert!((got - norm2).abs() / norm2 < 1e-4, "got {got}, want {norm2}");

        let big = Tensor::<f32>::zeros(Dims::new(1, 2, 2, 2));
        assert!(xcorr(&big, &roi).is_err());
    }

    #[test]
    fn mean_and_sum() {
        let x = t(Dims::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mean_all(&x).data()[0], 2.5);
        assert_eq!(sum_all(&x).data()[0], 10.0);
    }
}
