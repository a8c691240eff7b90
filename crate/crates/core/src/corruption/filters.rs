//! Filtering and resampling on interleaved `H × W × C` float buffers.
//! Borders are handled by clamping coordinates to the image.

/// Borrowed view of an interleaved buffer.
#[derive(Clone, Copy)]
pub(crate) struct Planes<'a> {
    pub data: &'a [f32],
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Planes<'_> {
    #[inline]
    fn at(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    fn at_clamped(&self, y: isize, x: isize, ch: usize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.at(y, x, ch)
    }

    /// Bilinear sample with edge clamping; writes `c` values into `out`.
    #[inline]
    pub fn sample(&self, y: f32, x: f32, out: &mut [f32]) {
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        for (ch, o) in out.iter_mut().enumerate().take(self.c) {
            let top = self.at(y0, x0, ch) + (self.at(y0, x1, ch) - self.at(y0, x0, ch)) * fx;
            let bottom = self.at(y1, x0, ch) + (self.at(y1, x1, ch) - self.at(y1, x0, ch)) * fx;
            *o = top + (bottom - top) * fy;
        }
    }
}

/// Normalized 1-D Gaussian taps with radius `max(1, ceil(3σ))`.
pub(crate) fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f32> = (-radius..=radius)
        .map(|k| (-((k * k) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable convolution with an odd-length kernel along both axes.
pub(crate) fn separable(src: Planes<'_>, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let Planes { h, w, c, .. } = src;
    let mut tmp = vec![0.0; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                tmp[(y * w + x) * c + ch] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| t * src.at_clamped(y as isize, x as isize + k as isize - r, ch))
                    .sum();
            }
        }
    }
    let mid = Planes { data: &tmp, ..src };
    let mut out = vec![0.0; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| t * mid.at_clamped(y as isize + k as isize - r, x as isize, ch))
                    .sum();
            }
        }
    }
    out
}

pub(crate) fn gaussian_blur(src: Planes<'_>, sigma: f32) -> Vec<f32> {
    separable(src, &gaussian_kernel(sigma))
}

/// Dense 2-D convolution with a square `(2r+1)²` kernel.
pub(crate) fn convolve2d(src: Planes<'_>, kernel: &[f32], radius: usize) -> Vec<f32> {
    let side = 2 * radius + 1;
    debug_assert_eq!(kernel.len(), side * side);
    let Planes { h, w, c, .. } = src;
    let r = radius as isize;
    let mut out = vec![0.0; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for ky in 0..side {
                    for kx in 0..side {
                        let t = kernel[ky * side + kx];
                        if t != 0.0 {
                            acc += t * src.at_clamped(
                                y as isize + ky as isize - r,
                                x as isize + kx as isize - r,
                                ch,
                            );
                        }
                    }
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}

/// One-sided motion blur: Gaussian-weighted taps trailing along `angle`
/// (radians) out to `3σ` pixels.
pub(crate) fn motion_blur(src: Planes<'_>, sigma: f32, angle: f32) -> Vec<f32> {
    let taps = (3.0 * sigma).ceil().max(1.0) as usize;
    let weights: Vec<f32> = (0..=taps)
        .map(|k| (-((k * k) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = weights.iter().sum();
    let (dy, dx) = (angle.sin(), angle.cos());
    let Planes { h, w, c, .. } = src;
    let mut out = vec![0.0; src.data.len()];
    let mut px = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
            for (k, &wk) in weights.iter().enumerate() {
                let k = k as f32;
                src.sample(y as f32 - k * dy, x as f32 - k * dx, &mut px);
                for (a, v) in o.iter_mut().zip(&px) {
                    *a += wk * v;
                }
            }
            for a in o.iter_mut() {
                *a /= total;
            }
        }
    }
    out
}

/// Bilinear resize mapping pixel centres onto pixel centres.
pub(crate) fn resize_bilinear(src: Planes<'_>, nh: usize, nw: usize) -> Vec<f32> {
    let (sy, sx) = (src.h as f32 / nh as f32, src.w as f32 / nw as f32);
    let mut out = vec![0.0; nh * nw * src.c];
    for y in 0..nh {
        for x in 0..nw {
            let o = &mut out[(y * nw + x) * src.c..(y * nw + x + 1) * src.c];
            src.sample((y as f32 + 0.5) * sy - 0.5, (x as f32 + 0.5) * sx - 0.5, o);
        }
    }
    out
}

/// Area-averaging downsample (box filter with fractional overlaps).
pub(crate) fn resize_area(src: Planes<'_>, nh: usize, nw: usize) -> Vec<f32> {
    let weights = |n_src: usize, n_dst: usize| -> Vec<Vec<(usize, f32)>> {
        let scale = n_src as f64 / n_dst as f64;
        (0..n_dst)
            .map(|o| {
                let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
                (lo.floor() as usize..(hi.ceil() as usize).min(n_src))
                    .map(|i| {
                        let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                        (i, overlap as f32)
                    })
                    .filter(|&(_, wgt)| wgt > 0.0)
                    .collect()
            })
            .collect()
    };
    let (wy, wx) = (weights(src.h, nh), weights(src.w, nw));
    let c = src.c;
    let mut out = vec![0.0; nh * nw * c];
    for (y, ry) in wy.iter().enumerate() {
        for (x, rx) in wx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(iy, a) in ry {
                    for &(ix, b) in rx {
                        acc += a * b * src.at(iy, ix, ch);
                    }
                }
                out[(y * nw + x) * c + ch] = acc;
            }
        }
    }
    out
}

/// RGB in `[0,1]` to HSV with hue in `[0,1)`.
pub(crate) fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

pub(crate) fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
