//! Discrete Fourier analysis: 1-D/2-D radix-2 FFT, a naive-DFT oracle, and
//! magnitude spectra.
//!
//! The forward transform is unnormalized (no 1/N factor) and spectra are not
//! centered. Only power-of-two extents are accepted; callers pad.

use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tensor};

/// Paired real/imaginary planes of equal shape.
#[derive(Clone, Debug)]
pub struct ComplexMap<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Real> ComplexMap<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape != im.shape {
            return Err(Error::shape(format!(
                "ComplexMap: re {:?} vs im {:?}",
                re.shape, im.shape
            )));
        }
        Ok(ComplexMap { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        &self.re.shape
    }
}

/// In-place iterative radix-2 decimation-in-time FFT. Length must be a power
/// of two (checked by callers).
pub(crate) fn fft_inplace<T: Real>(re: &mut [T], im: &mut [T]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && n == im.len());
    if n <= 1 {
        return;
    }
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let minus_two_pi = lit::<T>(-2.0 * std::f64::consts::PI);
    let mut len = 2usize;
    while len <= n {
        let half = len / 2;
        let ang = minus_two_pi / T::from_usize(len).unwrap();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let phase = ang * T::from_usize(k).unwrap();
                let (wr, wi) = (phase.cos(), phase.sin());
                let (ur, ui) = (re[start + k], im[start + k]);
                let (vr, vi) = (re[start + k + half], im[start + k + half]);
                let tr = vr * wr - vi * wi;
                let ti = vr * wi + vi * wr;
                re[start + k] = ur + tr;
                im[start + k] = ui + ti;
                re[start + k + half] = ur - tr;
                im[start + k + half] = ui - ti;
            }
        }
        len <<= 1;
    }
}

/// Row-column 2-D FFT over an h x w buffer, in place.
pub(crate) fn fft2_inplace<T: Real>(re: &mut [T], im: &mut [T], h: usize, w: usize) {
    debug_assert!(h.is_power_of_two() && w.is_power_of_two());
    for y in 0..h {
        fft_inplace(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w]);
    }
    let mut col_re = vec![T::zero(); h];
    let mut col_im = vec![T::zero(); h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = re[y * w + x];
            col_im[y] = im[y * w + x];
        }
        fft_inplace(&mut col_re, &mut col_im);
        for y in 0..h {
            re[y * w + x] = col_re[y];
            im[y * w + x] = col_im[y];
        }
    }
}

/// Direct O(N^2) DFT: X[k] = sum_n x[n] e^(-2 pi i k n / N). The oracle the
/// fast path is checked against. Pass `im = None` for real input.
pub fn dft_naive<T: Real>(re: &[T], im: Option<&[T]>) -> Result<ComplexMap<T>> {
    let n = re.len();
    if n == 0 {
        return Err(Error::contract("dft_naive: empty signal"));
    }
    if let Some(iv) = im {
        if iv.len() != n {
            return Err(Error::shape("dft_naive: re/im length mismatch"));
        }
    }
    let minus_two_pi = lit::<T>(-2.0 * std::f64::consts::PI);
    let nf = T::from_usize(n).unwrap();
    let mut out_re = vec![T::zero(); n];
    let mut out_im = vec![T::zero(); n];
    for k in 0..n {
        let mut sr = T::zero();
        let mut si = T::zero();
        for (idx, &xr) in re.iter().enumerate() {
            let xi = im.map_or(T::zero(), |iv| iv[idx]);
            let phase = minus_two_pi * T::from_usize(k * idx).unwrap() / nf;
            let (c, s) = (phase.cos(), phase.sin());
            sr = sr + xr * c - xi * s;
            si = si + xr * s + xi * c;
        }
        out_re[k] = sr;
        out_im[k] = si;
    }
    ComplexMap::new(
        Tensor::from_vec(&[n], out_re)?,
        Tensor::from_vec(&[n], out_im)?,
    )
}

/// Radix-2 FFT of a length-N sequence, N a power of two.
pub fn fft_1d<T: Real>(re: &[T], im: Option<&[T]>) -> Result<ComplexMap<T>> {
    let n = re.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::contract(format!(
            "fft_1d: length {n} is not a power of two"
        )));
    }
    if let Some(iv) = im {
        if iv.len() != n {
            return Err(Error::shape("fft_1d: re/im length mismatch"));
        }
    }
    let mut out_re = re.to_vec();
    let mut out_im = im.map_or_else(|| vec![T::zero(); n], |iv| iv.to_vec());
    fft_inplace(&mut out_re, &mut out_im);
    ComplexMap::new(
        Tensor::from_vec(&[n], out_re)?,
        Tensor::from_vec(&[n], out_im)?,
    )
}

/// 2-D FFT of a real H x W plane (row FFTs then column FFTs); H and W must be
/// powers of two.
pub fn fft_2d<T: Real>(plane: &Tensor<T>) -> Result<ComplexMap<T>> {
    if plane.rank() != 2 {
        return Err(Error::shape(format!(
            "fft_2d expects a rank-2 plane, got {:?}",
            plane.shape
        )));
    }
    let (h, w) = (plane.shape[0], plane.shape[1]);
    if h == 0 || w == 0 || !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::contract(format!(
            "fft_2d: extents {h}x{w} are not powers of two"
        )));
    }
    let mut re = plane.data.clone();
    let mut im = vec![T::zero(); h * w];
    fft2_inplace(&mut re, &mut im, h, w);
    ComplexMap::new(
        Tensor::from_vec(&[h, w], re)?,
        Tensor::from_vec(&[h, w], im)?,
    )
}

/// Pointwise modulus sqrt(re^2 + im^2); discards phase.
pub fn magnitude_spectrum<T: Real>(spec: &ComplexMap<T>) -> Tensor<T> {
    let data: Vec<T> = spec
        .re
        .data
        .iter()
        .zip(&spec.im.data)
        .map(|(&r, &i)| (r * r + i * i).sqrt())
        .collect();
    Tensor::from_vec(spec.shape(), data).unwrap()
}

/// Circularly shifts a rank-2 plane by (dy, dx); used to exercise the
/// phase-discarding property of magnitude spectra.
pub fn circular_shift<T: Real>(plane: &Tensor<T>, dy: usize, dx: usize) -> Tensor<T> {
    assert_eq!(plane.rank(), 2, "circular_shift expects a rank-2 plane");
    let (h, w) = (plane.shape[0], plane.shape[1]);
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            out[((y + dy) % h) * w + (x + dx) % w] = plane.data[y * w + x];
        }
    }
    Tensor::from_vec(&[h, w], out).unwrap()
}
