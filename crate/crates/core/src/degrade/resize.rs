//! Bicubic resampling (Catmull-Rom, a = -0.5), edge-clamped.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Catmull-Rom cubic kernel. Exactly 1 at x = 0 and exactly 0 at |x| >= 1
/// on integer offsets, so a same-size resize is the identity bit-for-bit.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Per-output-coordinate taps of one separable pass.
struct AxisTaps {
    /// Four clamped source indices per output position.
    idx: Vec<[usize; 4]>,
    /// Matching kernel weights.
    w: Vec<[f64; 4]>,
}

fn axis_taps(in_len: usize, out_len: usize) -> AxisTaps {
    let scale = in_len as f64 / out_len as f64;
    let mut idx = Vec::with_capacity(out_len);
    let mut w = Vec::with_capacity(out_len);
    for o in 0..out_len {
        // Center alignment: map output pixel centers onto input coordinates.
        let src = (o as f64 + 0.5) * scale - 0.5;
        let base = src.floor();
        let t = src - base;
        let base = base as isize;
        let mut ids = [0usize; 4];
        let mut ws = [0f64; 4];
        for k in 0..4 {
            let j = base - 1 + k as isize;
            ids[k] = j.clamp(0, in_len as isize - 1) as usize;
            ws[k] = cubic_kernel(t - (k as f64 - 1.0));
        }
        idx.push(ids);
        w.push(ws);
    }
    AxisTaps { idx, w }
}

/// Resize a `C×H×W` image to `out_h × out_w`. Output values are clamped to
/// `[0, 1]`.
pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let mut out = bicubic_resample(x, out_h, out_w)?;
    out.clamp01();
    Ok(out)
}

/// Same resampling without the `[0, 1]` clamp, for feature maps.
pub fn bicubic_resample<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Param("bicubic_resize: output dims must be >= 1".into()));
    }
    let (c, h, w) = x.chw();
    let horiz = axis_taps(w, out_w);
    let vert = axis_taps(h, out_h);

    // Horizontal pass: C×H×W -> C×H×out_w.
    let mut mid = vec![T::zero(); c * h * out_w];
    let xin = x.data();
    for ch in 0..c {
        for row in 0..h {
            let src = &xin[(ch * h + row) * w..(ch * h + row) * w + w];
            let dst = &mut mid[(ch * h + row) * out_w..(ch * h + row) * out_w + out_w];
            for (o, d) in dst.iter_mut().enumerate() {
                let ids = &horiz.idx[o];
                let ws = &horiz.w[o];
                let mut acc = T::zero();
                for k in 0..4 {
                    acc = acc + T::cast(ws[k]) * src[ids[k]];
                }
                *d = acc;
            }
        }
    }

    // Vertical pass: C×H×out_w -> C×out_h×out_w.
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let odata = out.data_mut();
    for ch in 0..c {
        for o in 0..out_h {
            let ids = &vert.idx[o];
            let ws = &vert.w[o];
            let dst = &mut odata[(ch * out_h + o) * out_w..(ch * out_h + o) * out_w + out_w];
            for k in 0..4 {
                let wk = T::cast(ws[k]);
                let src = &mid[(ch * h + ids[k]) * out_w..(ch * h + ids[k]) * out_w + out_w];
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d = *d + wk * *s;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(((ch + 1) * (y * w + x)) as f64 / (c * h * w) as f64);
                }
            }
        }
        Tensor::from_vec(&[c, h, w], data)
    }

    /// Direct (non-separable) evaluation of the same bicubic formula,
    /// kept independent of the production two-pass implementation.
    fn bicubic_direct(x: &Tensor<f64>, out_h: usize, out_w: usize) -> Tensor<f64> {
        let (c, h, w) = x.chw();
        let sy = h as f64 / out_h as f64;
        let sx = w as f64 / out_w as f64;
        let mut out = Tensor::zeros(&[c, out_h, out_w]);
        for ch in 0..c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let src_y = (oy as f64 + 0.5) * sy - 0.5;
                    let src_x = (ox as f64 + 0.5) * sx - 0.5;
                    let by = src_y.floor();
                    let bx = src_x.floor();
                    let mut acc = 0.0;
                    for ky in 0..4i64 {
                        for kx in 0..4i64 {
                            let iy = (by as i64 - 1 + ky).clamp(0, h as i64 - 1) as usize;
                            let ix = (bx as i64 - 1 + kx).clamp(0, w as i64 - 1) as usize;
                            let wy = cubic_kernel(src_y - by - (ky as f64 - 1.0));
                            let wx = cubic_kernel(src_x - bx - (kx as f64 - 1.0));
                            acc += wy * wx * x.data()[(ch * h + iy) * w + ix];
                        }
                    }
                    out.data_mut()[(ch * out_h + oy) * out_w + ox] = acc.clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    #[test]
    fn same_size_resize_is_bit_exact_identity() {
        let img = ramp(3, 8, 8);
        let out = bicubic_resize(&img, 8, 8).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::<f64>::full(&[3, 6, 10], 0.37);
        let up = bicubic_resize(&img, 12, 20).unwrap();
        for &v in up.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
        let down = bicubic_resize(&img, 3, 5).unwrap();
        for &v in down.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_upscale_matches_direct_convolution_oracle() {
        let img = ramp(1, 4, 4);
        let fast = bicubic_resize(&img, 8, 8).unwrap();
        let direct = bicubic_direct(&img, 8, 8);
        assert!(fast.linf_distance(&direct) < 1e-6);
    }

    #[test]
    fn downscale_matches_direct_oracle_too() {
        let img = ramp(2, 8, 12);
        let fast = bicubic_resize(&img, 4, 6).unwrap();
        let direct = bicubic_direct(&img, 4, 6);
        assert!(fast.linf_distance(&direct) < 1e-6);
    }

    #[test]
    fn zero_output_dim_rejected() {
        let img = ramp(1, 4, 4);
        assert!(bicubic_resize(&img, 0, 4).is_err());
    }
}
