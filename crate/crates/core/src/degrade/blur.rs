//! Gaussian blur kernels and reflection-padded 2-d convolution.
//!
//! Padding is half-sample reflection rather than edge clamping: with the
//! per-axis-symmetric kernels built here that makes the blur operator doubly
//! stochastic, so the image mean is preserved exactly. Edge clamping would
//! violate the mean-preservation contract for any kernel radius >= 2.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::BlurKind;

fn check_kernel_args(sigma: f64, size: usize) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Param(format!("blur sigma must be > 0, got {sigma}")));
    }
    if size < 3 || size % 2 == 0 {
        return Err(Error::Param(format!(
            "kernel size must be an odd integer >= 3, got {size}"
        )));
    }
    Ok(())
}

/// Isotropic Gaussian kernel: point evaluation of exp(-(x²+y²)/2σ²) on the
/// integer offset grid, normalized to sum to 1.
pub fn gaussian_kernel<T: Scalar>(sigma: f64, size: usize) -> Result<Tensor<T>> {
    check_kernel_args(sigma, size)?;
    let r = (size / 2) as isize;
    let mut vals = Vec::with_capacity(size * size);
    let mut sum = 0.0f64;
    for dy in -r..=r {
        for dx in -r..=r {
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            vals.push(v);
            sum += v;
        }
    }
    Ok(Tensor::from_vec(
        &[size, size],
        vals.into_iter().map(|v| T::cast(v / sum)).collect(),
    ))
}

/// Anisotropic Gaussian kernel derived from a single sigma: `sigma` along x,
/// `sigma / 2` along y. Axis-aligned so it stays symmetric per axis, which
/// the mean-preservation property relies on.
pub fn anisotropic_kernel<T: Scalar>(sigma: f64, size: usize) -> Result<Tensor<T>> {
    check_kernel_args(sigma, size)?;
    let (sx, sy) = (sigma, sigma * 0.5);
    let r = (size / 2) as isize;
    let mut vals = Vec::with_capacity(size * size);
    let mut sum = 0.0f64;
    for dy in -r..=r {
        for dx in -r..=r {
            let e = -((dx * dx) as f64 / (2.0 * sx * sx) + (dy * dy) as f64 / (2.0 * sy * sy));
            let val = e.exp();
            vals.push(val);
            sum += val;
        }
    }
    Ok(Tensor::from_vec(
        &[size, size],
        vals.into_iter().map(|v| T::cast(v / sum)).collect(),
    ))
}

pub fn blur_kernel<T: Scalar>(kind: BlurKind, sigma: f64, size: usize) -> Result<Tensor<T>> {
    match kind {
        BlurKind::IsotropicGaussian => gaussian_kernel(sigma, size),
        BlurKind::AnisotropicGaussian => anisotropic_kernel(sigma, size),
    }
}

/// Half-sample reflection of an out-of-range coordinate (-1 maps to 0,
/// -2 to 1, n to n-1). Loops for kernels wider than the image.
#[inline]
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        } else {
            i = 2 * n - i - 1;
        }
    }
    i as usize
}

/// 2-d convolution of a `C×H×W` image with a square kernel, reflecting
/// coordinates at the borders. Shape-preserving.
pub fn convolve_reflect<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let ks = kernel.shape()[0];
    let r = (ks / 2) as isize;
    let kdata = kernel.data();
    let xin = x.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let odata = out.data_mut();
    for ch in 0..c {
        let plane = &xin[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut odata[ch * h * w..(ch + 1) * h * w];
        for y in 0..h as isize {
            for (ky, krow) in kdata.chunks_exact(ks).enumerate() {
                let sy = reflect(y + ky as isize - r, h);
                let src = &plane[sy * w..sy * w + w];
                let dst = &mut oplane[y as usize * w..y as usize * w + w];
                for (kx, &kv) in krow.iter().enumerate() {
                    let dx = kx as isize - r;
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let sx = reflect(ox as isize + dx, w);
                        *d = *d + kv * src[sx];
                    }
                }
            }
        }
    }
    out
}
