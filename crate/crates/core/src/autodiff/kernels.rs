//! Raw buffer kernels shared by the forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Real;

/// `out[r×c] += a[r×k] · b[k×c]`
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * c..(p + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[r×c] += a[r×k] · b[c×k]ᵀ`
pub fn matmul_bt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..c {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            out[i * c + j] += s;
        }
    }
}

/// `out[k×c] += a[r×k]ᵀ · b[r×c]`
pub fn matmul_at_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let b_row = &b[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[p * c..(p + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Geometry of a 3-D convolution over a `[C_in, D, H, W]` volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        c_out: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Option<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 || kernel[a] == 0 || input[a] + 2 * pad[a] < kernel[a] {
                return None;
            }
            output[a] = (input[a] + 2 * pad[a] - kernel[a]) / stride[a] + 1;
        }
        Some(Self {
            c_in,
            c_out,
            input,
            kernel,
            stride,
            pad,
            output,
        })
    }

    /// Output positions `o` along an axis for which `o*stride + k - pad` is inside the input.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let (s, p, n, out) = (self.stride[axis], self.pad[axis], self.input[axis], self.output[axis]);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        if n + p <= k {
            return (0, 0);
        }
        let hi = ((n + p - k - 1) / s + 1).min(out);
        (lo.min(hi), hi)
    }
}

/// Visits every (output row, input row, kernel tap) triple of a convolution.
/// The callback receives `(co, ci, tap_index, out_row_offset, in_row_offset, ow_lo, ow_hi, kx)`.
#[inline]
fn for_each_row<F>(g: &ConvGeom, mut f: F)
where
    F: FnMut(usize, usize, usize, usize, usize, usize, usize, usize),
{
    let [d, h, w] = g.input;
    let [od_n, oh_n, ow_n] = g.output;
    let [kd, kh, kw] = g.kernel;
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            for kz in 0..kd {
                let (z_lo, z_hi) = g.valid(0, kz);
                for ky in 0..kh {
                    let (y_lo, y_hi) = g.valid(1, ky);
                    for kx in 0..kw {
                        let (x_lo, x_hi) = g.valid(2, kx);
                        if x_lo >= x_hi {
                            continue;
                        }
                        let tap = (((co * g.c_in + ci) * kd + kz) * kh + ky) * kw + kx;
                        for od in z_lo..z_hi {
                            let iz = od * g.stride[0] + kz - g.pad[0];
                            for oh in y_lo..y_hi {
                                let iy = oh * g.stride[1] + ky - g.pad[1];
                                let out_row = ((co * od_n + od) * oh_n + oh) * ow_n;
                                let in_row = ((ci * d + iz) * h + iy) * w;
                                f(co, ci, tap, out_row, in_row, x_lo, x_hi, kx);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<T: Real>(g: &ConvGeom, x: &[T], k: &[T]) -> Vec<T> {
    let n_out = g.c_out * g.output.iter().product::<usize>();
    let mut out = vec![T::zero(); n_out];
    let (sw, pw) = (g.stride[2], g.pad[2]);
    for_each_row(g, |_, _, tap, orow, irow, lo, hi, kx| {
        let wv = k[tap];
        if sw == 1 {
            let start = irow + lo + kx - pw;
            let src = &x[start..start + (hi - lo)];
            for (o, &v) in out[orow + lo..orow + hi].iter_mut().zip(src) {
                *o += wv * v;
            }
        } else {
            for ow in lo..hi {
                out[orow + ow] += wv * x[irow + ow * sw + kx - pw];
            }
        }
    });
    out
}

/// Gradients of a convolution. `dx` is skipped when `None`.
pub fn conv3d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    k: &[T],
    gout: &[T],
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
) {
    let (sw, pw) = (g.stride[2], g.pad[2]);
    for_each_row(g, |_, _, tap, orow, irow, lo, hi, kx| {
        let go = &gout[orow + lo..orow + hi];
        if let Some(dk) = dk.as_deref_mut() {
            let mut s = T::zero();
            if sw == 1 {
                let start = irow + lo + kx - pw;
                for (&a, &b) in go.iter().zip(&x[start..start + (hi - lo)]) {
                    s += a * b;
                }
            } else {
                for (j, &a) in go.iter().enumerate() {
                    s += a * x[irow + (lo + j) * sw + kx - pw];
                }
            }
            dk[tap] += s;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let wv = k[tap];
            if sw == 1 {
                let start = irow + lo + kx - pw;
                for (d, &a) in dx[start..start + (hi - lo)].iter_mut().zip(go) {
                    *d += wv * a;
                }
            } else {
                for (j, &a) in go.iter().enumerate() {
                    dx[irow + (lo + j) * sw + kx - pw] += wv * a;
                }
            }
        }
    });
}

/// Pooling geometry over `[C, D, H, W]`, no padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub channels: usize,
    pub input: [usize; 3],
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl PoolGeom {
    pub fn new(channels: usize, input: [usize; 3], window: [usize; 3], stride: [usize; 3]) -> Option<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            if window[a] == 0 || stride[a] == 0 || input[a] < window[a] {
                return None;
            }
            output[a] = (input[a] - window[a]) / stride[a] + 1;
        }
        Some(Self {
            channels,
            input,
            window,
            stride,
            output,
        })
    }

    fn for_each_window<F: FnMut(usize, &mut dyn Iterator<Item = usize>)>(&self, mut f: F) {
        let [d, h, w] = self.input;
        let [od, oh, ow] = self.output;
        let mut o = 0;
        for c in 0..self.channels {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let (z0, y0, x0) = (z * self.stride[0], y * self.stride[1], x * self.stride[2]);
                        let win = self.window;
                        let mut it = (0..win[0]).flat_map(move |a| {
                            (0..win[1]).flat_map(move |b| {
                                (0..win[2]).map(move |e| ((c * d + z0 + a) * h + y0 + b) * w + x0 + e)
                            })
                        });
                        f(o, &mut it);
                        o += 1;
                    }
                }
            }
        }
    }

    pub fn out_len(&self) -> usize {
        self.channels * self.output.iter().product::<usize>()
    }
}

/// Max pooling; returns values and the flat argmax of each window (first index on ties).
pub fn maxpool3d_forward<T: Real>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let mut out = vec![T::zero(); g.out_len()];
    let mut arg = vec![0usize; g.out_len()];
    g.for_each_window(|o, idx| {
        let mut best = usize::MAX;
        for i in idx {
            if best == usize::MAX || x[i] > x[best] {
                best = i;
            }
        }
        out[o] = x[best];
        arg[o] = best;
    });
    (out, arg)
}

pub fn avgpool3d_forward<T: Real>(g: &PoolGeom, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.out_len()];
    let inv = T::one() / T::from_usize(g.window.iter().product());
    g.for_each_window(|o, idx| {
        let mut s = T::zero();
        for i in idx {
            s += x[i];
        }
        out[o] = s * inv;
    });
    out
}

pub fn avgpool3d_backward<T: Real>(g: &PoolGeom, gout: &[T], dx: &mut [T]) {
    let inv = T::one() / T::from_usize(g.window.iter().product());
    g.for_each_window(|o, idx| {
        let v = gout[o] * inv;
        for i in idx {
            dx[i] += v;
        }
    });
}
