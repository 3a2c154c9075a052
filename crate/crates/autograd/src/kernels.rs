//! Raw numeric kernels behind the differentiable ops. Everything here works on
//! channel-major `(C, H, W)` slices without a batch axis.

/// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
/// `trans_a`/`trans_b` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths were checked against the declared dimensions
    // and the strides above never step outside them.
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

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `x` into a `(C·k·k) × (Ho·Wo)` column matrix.
pub fn im2col(x: &[f64], g: ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let kk = g.kernel * g.kernel;
    let mut cols = vec![0.0; g.channels * kk * ho * wo];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * kk + ki * g.kernel + kj) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
pub fn col2im(cols: &[f64], g: ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let kk = g.kernel * g.kernel;
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * kk + ki * g.kernel + kj) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (o, b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

/// Forward convolution from precomputed columns.
fn conv_from_cols(cols: &[f64], w: &[f64], b: Option<&[f64]>, out_ch: usize, ckk: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_ch * plane];
    gemm(out_ch, ckk, plane, w, false, cols, false, &mut out, 0.0);
    if let Some(b) = b {
        add_bias(&mut out, b, plane);
    }
    out
}

pub fn conv2d_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, out_ch: usize, g: ConvGeom) -> Vec<f64> {
    let ckk = g.channels * g.kernel * g.kernel;
    let plane = g.out_height() * g.out_width();
    if g.is_pointwise() {
        conv_from_cols(x, w, b, out_ch, ckk, plane)
    } else {
        conv_from_cols(&im2col(x, g), w, b, out_ch, ckk, plane)
    }
}

pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    out_ch: usize,
    g: ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads {
    let ckk = g.channels * g.kernel * g.kernel;
    let plane = g.out_height() * g.out_width();
    let dw = need.1.then(|| {
        let mut dw = vec![0.0; out_ch * ckk];
        if g.is_pointwise() {
            gemm(out_ch, plane, ckk, dy, false, x, true, &mut dw, 0.0);
        } else {
            let cols = im2col(x, g);
            gemm(out_ch, plane, ckk, dy, false, &cols, true, &mut dw, 0.0);
        }
        dw
    });
    let db = need.2.then(|| (0..out_ch).map(|o| dy[o * plane..(o + 1) * plane].iter().sum()).collect());
    let dx = need.0.then(|| {
        let mut dcols = vec![0.0; ckk * plane];
        gemm(ckk, out_ch, plane, w, true, dy, false, &mut dcols, 0.0);
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![0.0; g.channels * g.height * g.width];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });
    ConvGrads { dx, dw, db }
}

/// Bilinear sampling taps of a stride-1, "same"-padded deformable convolution.
///
/// Offsets are laid out as `(2·k·k, H, W)` with channel `2t` the vertical and
/// `2t + 1` the horizontal displacement of tap `t`. Corners outside the image
/// contribute zero.
pub struct DeformTaps {
    kk: usize,
    plane: usize,
    /// Per (tap, position): flat corner indices, `usize::MAX` when out of bounds.
    idx: Vec<[usize; 4]>,
    /// Per (tap, position): fractional parts `(ly, lx)`.
    frac: Vec<(f64, f64)>,
}

impl DeformTaps {
    pub fn new(offsets: &[f64], height: usize, width: usize, kernel: usize) -> Self {
        let kk = kernel * kernel;
        let plane = height * width;
        assert_eq!(offsets.len(), 2 * kk * plane, "offset tensor has wrong size");
        let pad = (kernel - 1) as f64 / 2.0;
        let mut idx = Vec::with_capacity(kk * plane);
        let mut frac = Vec::with_capacity(kk * plane);
        for t in 0..kk {
            let (ki, kj) = ((t / kernel) as f64, (t % kernel) as f64);
            let oy = &offsets[2 * t * plane..(2 * t + 1) * plane];
            let ox = &offsets[(2 * t + 1) * plane..(2 * t + 2) * plane];
            for i in 0..height {
                for j in 0..width {
                    let p = i * width + j;
                    let py = i as f64 - pad + ki + oy[p];
                    let px = j as f64 - pad + kj + ox[p];
                    let (y0, x0) = (py.floor(), px.floor());
                    frac.push((py - y0, px - x0));
                    let corner = |y: f64, x: f64| {
                        if y >= 0.0 && x >= 0.0 && y < height as f64 && x < width as f64 {
                            y as usize * width + x as usize
                        } else {
                            usize::MAX
                        }
                    };
                    idx.push([
                        corner(y0, x0),
                        corner(y0, x0 + 1.0),
                        corner(y0 + 1.0, x0),
                        corner(y0 + 1.0, x0 + 1.0),
                    ]);
                }
            }
        }
        Self { kk, plane, idx, frac }
    }

    fn weights(&self, q: usize) -> [f64; 4] {
        let (ly, lx) = self.frac[q];
        [(1.0 - ly) * (1.0 - lx), (1.0 - ly) * lx, ly * (1.0 - lx), ly * lx]
    }

    /// Sampled column matrix `(C·k·k) × (H·W)`.
    pub fn columns(&self, x: &[f64], channels: usize) -> Vec<f64> {
        let mut cols = vec![0.0; channels * self.kk * self.plane];
        for c in 0..channels {
            let src = &x[c * self.plane..(c + 1) * self.plane];
            for t in 0..self.kk {
                let row = &mut cols[(c * self.kk + t) * self.plane..(c * self.kk + t + 1) * self.plane];
                for (p, out) in row.iter_mut().enumerate() {
                    let q = t * self.plane + p;
                    let wts = self.weights(q);
                    let mut v = 0.0;
                    for (corner, wt) in self.idx[q].iter().zip(wts) {
                        if *corner != usize::MAX {
                            v += wt * src[*corner];
                        }
                    }
                    *out = v;
                }
            }
        }
        cols
    }

    /// Scatters column gradients into the input image.
    pub fn input_grad(&self, dcols: &[f64], channels: usize) -> Vec<f64> {
        let mut dx = vec![0.0; channels * self.plane];
        for c in 0..channels {
            let dst = &mut dx[c * self.plane..(c + 1) * self.plane];
            for t in 0..self.kk {
                let row = &dcols[(c * self.kk + t) * self.plane..(c * self.kk + t + 1) * self.plane];
                for (p, g) in row.iter().enumerate() {
                    let q = t * self.plane + p;
                    for (corner, wt) in self.idx[q].iter().zip(self.weights(q)) {
                        if *corner != usize::MAX {
                            dst[*corner] += wt * g;
                        }
                    }
                }
            }
        }
        dx
    }

    /// Gradient w.r.t. the offsets, same layout as the offset tensor.
    pub fn offset_grad(&self, x: &[f64], dcols: &[f64], channels: usize) -> Vec<f64> {
        let mut doff = vec![0.0; 2 * self.kk * self.plane];
        for t in 0..self.kk {
            for p in 0..self.plane {
                let q = t * self.plane + p;
                let (ly, lx) = self.frac[q];
                let idx = self.idx[q];
                let (mut gy, mut gx) = (0.0, 0.0);
                for c in 0..channels {
                    let src = &x[c * self.plane..(c + 1) * self.plane];
                    let v = |i: usize| if idx[i] == usize::MAX { 0.0 } else { src[idx[i]] };
                    let (v00, v01, v10, v11) = (v(0), v(1), v(2), v(3));
                    let g = dcols[(c * self.kk + t) * self.plane + p];
                    gy += g * ((1.0 - lx) * (v10 - v00) + lx * (v11 - v01));
                    gx += g * ((1.0 - ly) * (v01 - v00) + ly * (v11 - v10));
                }
                doff[2 * t * self.plane + p] = gy;
                doff[(2 * t + 1) * self.plane + p] = gx;
            }
        }
        doff
    }
}

/// `(C·r², H, W) -> (C, H·r, W·r)`.
pub fn pixel_shuffle(x: &[f64], channels: usize, height: usize, width: usize, r: usize) -> Vec<f64> {
    let oc = channels / (r * r);
    let (oh, ow) = (height * r, width * r);
    let mut out = vec![0.0; x.len()];
    for c in 0..oc {
        for i in 0..r {
            for j in 0..r {
                let src = &x[(c * r * r + i * r + j) * height * width..][..height * width];
                for h in 0..height {
                    let dst_row = &mut out[c * oh * ow + (h * r + i) * ow..][..ow];
                    for w in 0..width {
                        dst_row[w * r + j] = src[h * width + w];
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle`]; `channels` is the shuffled channel count.
pub fn pixel_unshuffle(y: &[f64], channels: usize, height: usize, width: usize, r: usize) -> Vec<f64> {
    let (oh, ow) = (height * r, width * r);
    let mut out = vec![0.0; y.len()];
    for c in 0..channels {
        for i in 0..r {
            for j in 0..r {
                let dst = &mut out[(c * r * r + i * r + j) * height * width..][..height * width];
                for h in 0..height {
                    let src_row = &y[c * oh * ow + (h * r + i) * ow..][..ow];
                    for w in 0..width {
                        dst[h * width + w] = src_row[w * r + j];
                    }
                }
            }
        }
    }
    out
}
