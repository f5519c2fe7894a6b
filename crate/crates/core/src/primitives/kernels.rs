//! Geometry kernels shared by the linear primitives. Each forward kernel
//! has an adjoint built from the same weights, transposed.

use std::ops::{Add, AddAssign, Mul};

use num_complex::Complex64;

pub trait Field: Copy + Default + Add<Output = Self> + AddAssign + Mul<Output = Self> + Mul<f64, Output = Self> {
    fn conj(self) -> Self;
}

impl Field for f64 {
    fn conj(self) -> Self {
        self
    }
}

impl Field for Complex64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
}

/// Circular convolution over the two leading axes of an `(h, w, s)` block,
/// kernel centred at `(kh/2, kw/2)`. With `adjoint` set this is the
/// correlation with the conjugated kernel.
pub fn circ_conv<T: Field>(x: &[T], (h, w, s): (usize, usize, usize), k: &[T], (kh, kw): (usize, usize), adjoint: bool) -> Vec<T> {
    let mut y = vec![T::default(); x.len()];
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let (hi, wi) = (h as isize, w as isize);
    for a in 0..kh {
        for b in 0..kw {
            let kv = k[a * kw + b];
            let kv = if adjoint { kv.conj() } else { kv };
            // forward: y[i] += h[a] x[i - (a - ca)]; adjoint: x[i] += conj(h[a]) y[i + (a - ca)]
            let (da, db) = (a as isize - ch, b as isize - cw);
            let (da, db) = if adjoint { (-da, -db) } else { (da, db) };
            for i in 0..h {
                let si = (i as isize - da).rem_euclid(hi) as usize;
                for j in 0..w {
                    let sj = (j as isize - db).rem_euclid(wi) as usize;
                    let src = (si * w + sj) * s;
                    let dst = (i * w + j) * s;
                    for c in 0..s {
                        y[dst + c] += kv * x[src + c];
                    }
                }
            }
        }
    }
    y
}

/// Normalized 2-D Gaussian kernel of odd side ≤ `max_side`.
pub fn gaussian_kernel(sigma: f64, max_side: usize) -> (Vec<f64>, usize) {
    if sigma <= 0.0 {
        return (vec![1.0], 1);
    }
    let mut side = 2 * (3.0 * sigma).ceil() as usize + 1;
    let cap = if max_side % 2 == 1 { max_side } else { max_side.saturating_sub(1).max(1) };
    side = side.min(cap);
    let c = (side / 2) as f64;
    let mut k = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            k.push((-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    (k, side)
}

/// Parallel-beam projection geometry with pixel-driven linear interpolation
/// onto unit-spaced detector bins.
pub struct RadonGeometry<'a> {
    pub rows: usize,
    pub cols: usize,
    pub angles_rad: &'a [f64],
    pub n_det: usize,
    pub offset: f64,
}

impl RadonGeometry<'_> {
    /// Visit (angle, bin, weight, pixel) contributions.
    fn for_each(&self, mut f: impl FnMut(usize, usize, f64, usize)) {
        let cr = (self.rows as f64 - 1.0) / 2.0;
        let cc = (self.cols as f64 - 1.0) / 2.0;
        let cd = (self.n_det as f64 - 1.0) / 2.0 + self.offset;
        for (a, &phi) in self.angles_rad.iter().enumerate() {
            let (sn, cs) = phi.sin_cos();
            for i in 0..self.rows {
                let yc = cr - i as f64;
                for j in 0..self.cols {
                    let xc = j as f64 - cc;
                    let u = xc * cs + yc * sn + cd;
                    let k0 = u.floor();
                    let w1 = u - k0;
                    let k0 = k0 as isize;
                    let pix = i * self.cols + j;
                    if k0 >= 0 && (k0 as usize) < self.n_det {
                        f(a, k0 as usize, 1.0 - w1, pix);
                    }
                    let k1 = k0 + 1;
                    if w1 > 0.0 && k1 >= 0 && (k1 as usize) < self.n_det {
                        f(a, k1 as usize, w1, pix);
                    }
                }
            }
        }
    }

    pub fn forward<T: Field>(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::default(); self.angles_rad.len() * self.n_det];
        let nd = self.n_det;
        self.for_each(|a, k, w, p| y[a * nd + k] += x[p] * w);
        y
    }

    pub fn adjoint<T: Field>(&self, y: &[T]) -> Vec<T> {
        let mut x = vec![T::default(); self.rows * self.cols];
        let nd = self.n_det;
        self.for_each(|a, k, w, p| x[p] += y[a * nd + k] * w);
        x
    }
}

/// Per-band sub-pixel translation of an `(h, w, l)` cube onto an
/// `(h, w_out, l)` grid by bilinear gather with zero fill.
pub struct BandShift<'a> {
    pub h: usize,
    pub w: usize,
    pub l: usize,
    pub w_out: usize,
    /// (row shift, column shift) per band.
    pub shifts: &'a [(f64, f64)],
}

impl BandShift<'_> {
    fn for_each(&self, mut f: impl FnMut(usize, usize, f64)) {
        for (band, &(sr, sc)) in self.shifts.iter().enumerate() {
            // output (i, j) samples input at (i - sr, j - sc)
            let r0 = (-sr).floor();
            let fr = -sr - r0;
            let c0 = (-sc).floor();
            let fc = -sc - c0;
            let taps = [
                (r0 as isize, c0 as isize, (1.0 - fr) * (1.0 - fc)),
                (r0 as isize, c0 as isize + 1, (1.0 - fr) * fc),
                (r0 as isize + 1, c0 as isize, fr * (1.0 - fc)),
                (r0 as isize + 1, c0 as isize + 1, fr * fc),
            ];
            for i in 0..self.h {
                for j in 0..self.w_out {
                    let out = (i * self.w_out + j) * self.l + band;
                    for &(dr, dc, wt) in &taps {
                        if wt == 0.0 {
                            continue;
                        }
                        let si = i as isize + dr;
                        let sj = j as isize + dc;
                        if si >= 0 && (si as usize) < self.h && sj >= 0 && (sj as usize) < self.w {
                            let inp = (si as usize * self.w + sj as usize) * self.l + band;
                            f(out, inp, wt);
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Field>(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::default(); self.h * self.w_out * self.l];
        self.for_each(|o, i, w| y[o] += x[i] * w);
        y
    }

    pub fn adjoint<T: Field>(&self, y: &[T]) -> Vec<T> {
        let mut x = vec![T::default(); self.h * self.w * self.l];
        self.for_each(|o, i, w| x[i] += y[o] * w);
        x
    }
}

/// Fractional shift along the last axis (length `e`) with linear
/// interpolation and zero fill; `outer` independent lines.
pub fn shift_last_axis<T: Field>(x: &[T], outer: usize, e: usize, shift: f64, adjoint: bool) -> Vec<T> {
    let mut y = vec![T::default(); x.len()];
    let k0 = (-shift).floor();
    let f = -shift - k0;
    let taps = [(k0 as isize, 1.0 - f), (k0 as isize + 1, f)];
    for o in 0..outer {
        for t in 0..e {
            for &(d, wt) in &taps {
                if wt == 0.0 {
                    continue;
                }
                let s = t as isize + d;
                if s >= 0 && (s as usize) < e {
                    let (dst, src) = (o * e + t, o * e + s as usize);
                    if adjoint {
                        y[src] += x[dst] * wt;
                    } else {
                        y[dst] += x[src] * wt;
                    }
                }
            }
        }
    }
    y
}
