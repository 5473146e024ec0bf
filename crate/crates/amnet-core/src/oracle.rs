//! Naive per-element reference kernels and randomized comparison drivers.
//!
//! These are written as the definition reads — one nested loop per output
//! element, no plane tricks — and are kept independent of the fast paths in
//! `ops` so the two can check each other. The drivers are used both by the
//! unit suite and by the acceptance gate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::{self, ConvSpec, PoolSpec};
use crate::tensor::{Dims, Scalar, Tensor};

/// Six nested loops, one output element at a time; f64 accumulation with the
/// bias first and taps in (ci, ky, kx) order.
pub fn conv2d_naive<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Tensor<T> {
    let id = input.dims();
    let (oh, ow) = spec.output_hw(id.h, id.w).unwrap();
    let mut out = Tensor::zeros(Dims::new(id.n, spec.out_channels, oh, ow));
    for n in 0..id.n {
        for co in 0..spec.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[co].to_f64());
                    for ci in 0..spec.in_channels {
                        for ky in 0..spec.kernel.0 {
                            for kx in 0..spec.kernel.1 {
                                let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize
                                    - spec.padding.top as isize;
                                let ix = (ox * spec.stride.1 + kx * spec.dilation.1) as isize
                                    - spec.padding.left as isize;
                                if iy < 0 || iy >= id.h as isize || ix < 0 || ix >= id.w as isize {
                                    continue;
                                }
                                acc += weight.get(co, ci, ky, kx).to_f64()
                                    * input.get(n, ci, iy as usize, ix as usize).to_f64();
                            }
                        }
                    }
                    out.set(n, co, oy, ox, T::from_f64(acc));
                }
            }
        }
    }
    out
}

pub fn avg_pool2d_naive<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Tensor<T> {
    let id = input.dims();
    let (oh, ow) = spec.output_hw(id.h, id.w).unwrap();
    let mut out = Tensor::zeros(Dims::new(id.n, id.c, oh, ow));
    for n in 0..id.n {
        for c in 0..id.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f64;
                    let mut cnt = 0usize;
                    for ky in 0..spec.kernel {
                        for kx in 0..spec.kernel {
                            let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            if iy < 0 || iy >= id.h as isize || ix < 0 || ix >= id.w as isize {
                                continue;
                            }
                            acc += input.get(n, c, iy as usize, ix as usize).to_f64();
                            cnt += 1;
                        }
                    }
                    out.set(n, c, oy, ox, T::from_f64(acc / cnt as f64));
                }
            }
        }
    }
    out
}

pub fn max_pool2d_naive<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Tensor<T> {
    let id = input.dims();
    let (oh, ow) = spec.output_hw(id.h, id.w).unwrap();
    let mut out = Tensor::zeros(Dims::new(id.n, id.c, oh, ow));
    for n in 0..id.n {
        for c in 0..id.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<T> = None;
                    for ky in 0..spec.kernel {
                        for kx in 0..spec.kernel {
                            let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            if iy < 0 || iy >= id.h as isize || ix < 0 || ix >= id.w as isize {
                                continue;
                            }
                            let v = input.get(n, c, iy as usize, ix as usize);
                            if best.is_none() || v > best.unwrap() {
                                best = Some(v);
                            }
                        }
                    }
                    out.set(n, c, oy, ox, best.unwrap());
                }
            }
        }
    }
    out
}

/// Direct evaluation of the align-corners-false sampling formula per pixel.
pub fn bilinear_resize_naive<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let id = input.dims();
    let mut out = Tensor::zeros(Dims::new(id.n, id.c, out_h, out_w));
    for n in 0..id.n {
        for c in 0..id.c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let sy = ((oy as f64 + 0.5) * id.h as f64 / out_h as f64 - 0.5)
                        .clamp(0.0, (id.h - 1) as f64);
                    let sx = ((ox as f64 + 0.5) * id.w as f64 / out_w as f64 - 0.5)
                        .clamp(0.0, (id.w - 1) as f64);
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(id.h - 1), (x0 + 1).min(id.w - 1));
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    let v = input.get(n, c, y0, x0).to_f64() * (1.0 - fy) * (1.0 - fx)
                        + input.get(n, c, y0, x1).to_f64() * (1.0 - fy) * fx
                        + input.get(n, c, y1, x0).to_f64() * fy * (1.0 - fx)
                        + input.get(n, c, y1, x1).to_f64() * fy * fx;
                    out.set(n, c, oy, ox, T::from_f64(v));
                }
            }
        }
    }
    out
}

/// Sliding-window correlation, one score at a time.
pub fn xcorr_naive<T: Scalar>(roi: &Tensor<T>, tmpl: &Tensor<T>) -> Tensor<T> {
    let rd = roi.dims();
    let td = tmpl.dims();
    let (oh, ow) = (rd.h - td.h + 1, rd.w - td.w + 1);
    let mut out = Tensor::zeros(Dims::new(1, 1, oh, ow));
    for r in 0..oh {
        for q in 0..ow {
            let mut acc = 0f64;
            for c in 0..rd.c {
                for u in 0..td.h {
                    for v in 0..td.w {
                        acc += roi.get(0, c, r + u, q + v).to_f64() * tmpl.get(0, c, u, v).to_f64();
                    }
                }
            }
            out.set(0, 0, r, q, T::from_f64(acc));
        }
    }
    out
}

/// |a − b| / max(|a|, |b|, floor).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest elementwise relative error between two tensors.
pub fn max_rel_err<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, floor: f64) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x.to_f64(), y.to_f64(), floor))
        .fold(0.0, f64::max)
}

pub fn random_tensor<T: Scalar>(dims: Dims, rng: &mut impl Rng) -> Tensor<T> {
    let data = (0..dims.count())
        .map(|_| T::from_f64(rng.gen_range(-1.0..1.0)))
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

/// Runs `trials` random conv configurations against the naive kernel and
/// returns the worst relative error seen.
pub fn conv_trials(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    for _ in 0..trials {
        let k = *[1usize, 3, 5].iter().filter(|&&k| k <= 5).collect::<Vec<_>>()
            [rng.gen_range(0..3)];
        let d = rng.gen_range(1..=3);
        let s = rng.gen_range(1..=2);
        let span = d * (k - 1) + 1;
        let h = rng.gen_range(span..=12.max(span));
        let w = rng.gen_range(span..=12.max(span));
        let ci = rng.gen_range(1..=4);
        let co = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=2);
        let pad = rng.gen_range(0..=d * (k - 1) / 2 + 1);
        let spec = ConvSpec {
            in_channels: ci,
            out_channels: co,
            kernel: (k, k),
            stride: (s, s),
            dilation: (d, d),
            padding: ops::Padding::uniform(pad),
        };
        if spec.output_hw(h, w).is_err() {
            continue;
        }
        let x = random_tensor::<f32>(Dims::new(n, ci, h, w), &mut rng);
        let wt = random_tensor::<f32>(spec.weight_dims(), &mut rng);
        let b: Vec<f32> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = ops::conv2d(&x, &wt, Some(&b), &spec).unwrap();
        let naive = conv2d_naive(&x, &wt, Some(&b), &spec);
        worst = worst.max(max_rel_err(&fast, &naive, 1e-6));
    }
    worst
}

pub fn pool_trials(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    for _ in 0..trials {
        let k = rng.gen_range(1..=4);
        let spec = PoolSpec::new(k, rng.gen_range(1..=3), rng.gen_range(0..k));
        let h = rng.gen_range(k..=11);
        let w = rng.gen_range(k..=11);
        let x = random_tensor::<f32>(Dims::new(rng.gen_range(1..=2), rng.gen_range(1..=3), h, w), &mut rng);
        let fa = ops::avg_pool2d(&x, &spec).unwrap();
        let na = avg_pool2d_naive(&x, &spec);
        worst = worst.max(max_rel_err(&fa, &na, 1e-6));
        let fm = ops::max_pool2d(&x, &spec).unwrap();
        let nm = max_pool2d_naive(&x, &spec);
        worst = worst.max(max_rel_err(&fm, &nm, 1e-6));
    }
    worst
}

pub fn resize_trials(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    for _ in 0..trials {
        let dims = Dims::new(1, rng.gen_range(1..=3), rng.gen_range(1..=12), rng.gen_range(1..=12));
        let x = random_tensor::<f32>(dims, &mut rng);
        let (oh, ow) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let fast = ops::bilinear_resize(&x, oh, ow).unwrap();
        let naive = bilinear_resize_naive(&x, oh, ow);
        worst = worst.max(max_rel_err(&fast, &naive, 1e-6));
    }
    worst
}

pub fn xcorr_trials(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    for _ in 0..trials {
        let c = rng.gen_range(1..=4);
        let th = rng.gen_range(1..=5);
        let tw = rng.gen_range(1..=5);
        let rh = rng.gen_range(th..=th + 8);
        let rw = rng.gen_range(tw..=tw + 8);
        let roi = random_tensor::<f32>(Dims::new(1, c, rh, rw), &mut rng);
        let tmpl = random_tensor::<f32>(Dims::new(1, c, th, tw), &mut rng);
        let fast = ops::xcorr(&roi, &tmpl).unwrap();
        let naive = xcorr_naive(&roi, &tmpl);
        worst = worst.max(max_rel_err(&fast, &naive, 1e-6));
    }
    worst
}
