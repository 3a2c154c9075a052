//! Masked PSNR/SSIM on luma (or RGB mean) and the bicubic baseline upscaler.
//!
//! Images are `(3, H, W)` tensors in `[0, 1]`; the peak value is 1.

use mmsd_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::dataset::clip::FaceBox;
use crate::error::{ensure, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const BICUBIC_A: f64 = -0.5;

/// Which planes the metrics look at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricChannel {
    /// BT.601 luma.
    #[default]
    Luma,
    /// Each of R, G, B separately, then averaged.
    RgbMean,
}

/// A rectangular region of one plane, row-major.
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

fn check_pair(a: &Tensor, b: &Tensor, mask: &FaceBox) -> Result<()> {
    ensure!(a.shape() == b.shape(), "image shapes {:?} and {:?} differ", a.shape(), b.shape());
    ensure!(a.rank() == 3 && a.shape()[0] == 3, "expected (3, H, W) images, got {:?}", a.shape());
    let (_, h, w) = a.dims3();
    ensure!(mask.w > 0 && mask.h > 0, "empty mask");
    ensure!(mask.fits(w as u32, h as u32), "mask {mask:?} outside the {w}x{h} image");
    Ok(())
}

fn planes(img: &Tensor, mask: &FaceBox, channel: MetricChannel) -> Vec<Plane> {
    let (_, h, w) = img.dims3();
    let d = img.data();
    let (x0, y0, mw, mh) = (mask.x as usize, mask.y as usize, mask.w as usize, mask.h as usize);
    let cut = |f: &dyn Fn(usize) -> f64| {
        let mut data = Vec::with_capacity(mw * mh);
        for y in y0..y0 + mh {
            for x in x0..x0 + mw {
                data.push(f(y * w + x));
            }
        }
        Plane { h: mh, w: mw, data }
    };
    let plane = h * w;
    match channel {
        MetricChannel::Luma => vec![cut(&|p| luma(d[p], d[plane + p], d[2 * plane + p]))],
        MetricChannel::RgbMean => (0..3).map(|c| cut(&|p| d[c * plane + p])).collect(),
    }
}

/// ITU-R BT.601 luma.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// PSNR in dB over `mask`; `f64::INFINITY` when the regions are identical.
pub fn psnr(a: &Tensor, b: &Tensor, mask: &FaceBox, channel: MetricChannel) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (pa, pb) = (planes(a, mask, channel), planes(b, mask, channel));
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        sum += x.data.iter().zip(&y.data).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        n += x.data.len();
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-mode separable Gaussian filtering of a plane.
fn filter(p: &Plane, g: &[f64; SSIM_WINDOW]) -> Plane {
    let (oh, ow) = (p.h - SSIM_WINDOW + 1, p.w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; p.h * ow];
    for y in 0..p.h {
        for x in 0..ow {
            tmp[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * p.data[y * p.w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * tmp[(y + k) * ow + x]).sum();
        }
    }
    Plane { h: oh, w: ow, data: out }
}

fn ssim_plane(a: &Plane, b: &Plane) -> f64 {
    let g = gaussian_window();
    let map = |f: &dyn Fn(f64, f64) -> f64| Plane {
        h: a.h,
        w: a.w,
        data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    };
    let mx = filter(a, &g);
    let my = filter(b, &g);
    let xx = filter(&map(&|x, _| x * x), &g);
    let yy = filter(&map(&|_, y| y * y), &g);
    let xy = filter(&map(&|x, y| x * y), &g);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let n = mx.data.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let sx = xx.data[i] - ux * ux;
        let sy = yy.data[i] - uy * uy;
        let sxy = xy.data[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * sxy + c2)) / ((ux * ux + uy * uy + c1) * (sx + sy + c2));
    }
    total / n as f64
}

/// Mean SSIM over all 11×11 windows lying inside `mask`.
pub fn ssim(a: &Tensor, b: &Tensor, mask: &FaceBox, channel: MetricChannel) -> Result<f64> {
    check_pair(a, b, mask)?;
    ensure!(
        mask.w as usize >= SSIM_WINDOW && mask.h as usize >= SSIM_WINDOW,
        "mask {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
        mask.w,
        mask.h
    );
    let (pa, pb) = (planes(a, mask, channel), planes(b, mask, channel));
    let n = pa.len() as f64;
    Ok(pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y)).sum::<f64>() / n)
}

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source indices and weights for each output coordinate along one axis.
fn taps(len: usize, scale: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..len * scale)
        .map(|o| {
            let src = (o as f64 + 0.5) / scale as f64 - 0.5;
            let i0 = src.floor();
            let t = src - i0;
            let mut idx = [0; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let i = i0 as isize + k as isize - 1;
                idx[k] = i.clamp(0, len as isize - 1) as usize;
                wts[k] = cubic(t - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic upscaling of a `(C, H, W)` tensor with edge replication.
pub fn bicubic_upscale(img: &Tensor, scale: usize) -> Tensor {
    let (c, h, w) = img.dims3();
    let (oh, ow) = (h * scale, w * scale);
    let tx = taps(w, scale);
    let ty = taps(h, scale);
    let d = img.data();
    let mut tmp = vec![0.0; c * h * ow];
    for ch in 0..c {
        for y in 0..h {
            let row = &d[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, (idx, wts)) in tx.iter().enumerate() {
                tmp[(ch * h + y) * ow + x] = (0..4).map(|k| wts[k] * row[idx[k]]).sum();
            }
        }
    }
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for (y, (idx, wts)) in ty.iter().enumerate() {
            for x in 0..ow {
                out[(ch * oh + y) * ow + x] = (0..4).map(|k| wts[k] * tmp[(ch * h + idx[k]) * ow + x]).sum();
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_img(h: usize, w: usize, seed: u64) -> Tensor {
        Tensor::uniform(vec![3, h, w], 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).map(|v| v + 0.5)
    }

    #[test]
    fn identical_images() {
        let a = rand_img(16, 16, 1);
        let m = FaceBox::full(16, 16);
        assert_eq!(psnr(&a, &a, &m, MetricChannel::Luma).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a, &m, MetricChannel::Luma).unwrap(), 1.0);
        assert_eq!(ssim(&a, &a, &m, MetricChannel::RgbMean).unwrap(), 1.0);
    }

    #[test]
    fn uniform_half_difference() {
        let a = Tensor::zeros(vec![3, 8, 8]);
        let b = Tensor::full(vec![3, 8, 8], 0.5);
        let p = psnr(&a, &b, &FaceBox::full(8, 8), MetricChannel::Luma).unwrap();
        assert!((p - 6.020599913279624).abs() < 1e-9, "{p}");
    }

    #[test]
    fn empty_or_small_masks_rejected() {
        let a = rand_img(16, 16, 2);
        assert!(psnr(&a, &a, &FaceBox { x: 0, y: 0, w: 0, h: 4 }, MetricChannel::Luma).is_err());
        assert!(ssim(&a, &a, &FaceBox { x: 0, y: 0, w: 10, h: 16 }, MetricChannel::Luma).is_err());
        assert!(psnr(&a, &a, &FaceBox { x: 10, y: 0, w: 10, h: 4 }, MetricChannel::Luma).is_err());
    }

    #[test]
    fn cubic_kernel_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        let s: f64 = [-1.25, -0.25, 0.75, 1.75].iter().map(|&x| cubic(x)).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::full(vec![3, 5, 7], 0.3);
        let up = bicubic_upscale(&img, 4);
        assert_eq!(up.shape(), [3, 20, 28]);
        assert!(up.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }
}
