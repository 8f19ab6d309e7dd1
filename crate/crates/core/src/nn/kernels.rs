//! Forward and backward compute kernels behind the tape ops.
//!
//! All kernels are plain loops over contiguous row slices; inner loops are
//! written so the compiler can vectorize the stride-1 paths.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Zero-pad an NCHW tensor spatially by `pad` on each side.
fn pad_nchw<T: Scalar>(x: &Tensor<T>, pad: usize) -> Tensor<T> {
    if pad == 0 {
        return x.clone();
    }
    let (n, c, h, w) = x.nchw();
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[n, c, ph, pw]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..h {
            let s = &src[(plane * h + y) * w..(plane * h + y) * w + w];
            let doff = (plane * ph + y + pad) * pw + pad;
            dst[doff..doff + w].copy_from_slice(s);
        }
    }
    out
}

/// Drop `pad` rows/columns from each spatial side.
fn unpad_nchw<T: Scalar>(x: &Tensor<T>, pad: usize, h: usize, w: usize) -> Tensor<T> {
    if pad == 0 {
        return x.clone();
    }
    let (n, c, ph, pw) = x.nchw();
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..h {
            let soff = (plane * ph + y + pad) * pw + pad;
            let doff = (plane * h + y) * w;
            dst[doff..doff + w].copy_from_slice(&src[soff..soff + w]);
        }
    }
    out
}

pub fn conv2d_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// `x`: [N,Ci,H,W], `w`: [Co,Ci,Kh,Kw], `b`: [Co] -> [N,Co,Ho,Wo].
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, ci, h, wd) = x.nchw();
    let (co, wci, kh, kw) = w.nchw();
    assert_eq!(ci, wci, "conv2d: channel mismatch");
    let ho = conv2d_out_dim(h, kh, stride, pad);
    let wo = conv2d_out_dim(wd, kw, stride, pad);
    let xp = pad_nchw(x, pad);
    let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    let xd = xp.data();
    let wdat = w.data();
    let bd = b.data();
    let od = out.data_mut();
    for ni in 0..n {
        for c_out in 0..co {
            let oplane = &mut od[(ni * co + c_out) * ho * wo..(ni * co + c_out + 1) * ho * wo];
            let bias = bd[c_out];
            for v in oplane.iter_mut() {
                *v = bias;
            }
            for c_in in 0..ci {
                let xplane = &xd[(ni * ci + c_in) * ph * pw..(ni * ci + c_in + 1) * ph * pw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wdat[((c_out * ci + c_in) * kh + ky) * kw + kx];
                        if stride == 1 {
                            for oy in 0..ho {
                                let src = &xplane[(oy + ky) * pw + kx..(oy + ky) * pw + kx + wo];
                                let dst = &mut oplane[oy * wo..oy * wo + wo];
                                for (d, s) in dst.iter_mut().zip(src.iter()) {
                                    *d = *d + wv * *s;
                                }
                            }
                        } else {
                            for oy in 0..ho {
                                let row = (oy * stride + ky) * pw + kx;
                                let dst = &mut oplane[oy * wo..oy * wo + wo];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = *d + wv * xplane[row + ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, ci, h, wd) = x.nchw();
    let (co, _, kh, kw) = w.nchw();
    let (_, _, ho, wo) = grad_out.nchw();
    let xp = pad_nchw(x, pad);
    let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
    let mut gxp = Tensor::zeros(&[n, ci, ph, pw]);
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[co]);

    let xd = xp.data();
    let wdat = w.data();
    let god = grad_out.data();
    {
        let gbd = gb.data_mut();
        for ni in 0..n {
            for c_out in 0..co {
                let goplane = &god[(ni * co + c_out) * ho * wo..(ni * co + c_out + 1) * ho * wo];
                let mut acc = T::zero();
                for g in goplane {
                    acc = acc + *g;
                }
                gbd[c_out] = gbd[c_out] + acc;
            }
        }
    }
    {
        let gwd = gw.data_mut();
        let gxd = gxp.data_mut();
        for ni in 0..n {
            for c_out in 0..co {
                let goplane = &god[(ni * co + c_out) * ho * wo..(ni * co + c_out + 1) * ho * wo];
                for c_in in 0..ci {
                    let xplane = &xd[(ni * ci + c_in) * ph * pw..(ni * ci + c_in + 1) * ph * pw];
                    let gxplane =
                        &mut gxd[(ni * ci + c_in) * ph * pw..(ni * ci + c_in + 1) * ph * pw];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let widx = ((c_out * ci + c_in) * kh + ky) * kw + kx;
                            let wv = wdat[widx];
                            let mut wacc = T::zero();
                            if stride == 1 {
                                for oy in 0..ho {
                                    let base = (oy + ky) * pw + kx;
                                    let go_row = &goplane[oy * wo..oy * wo + wo];
                                    let x_row = &xplane[base..base + wo];
                                    let gx_row = &mut gxplane[base..base + wo];
                                    for ((g, xv), gx) in
                                        go_row.iter().zip(x_row.iter()).zip(gx_row.iter_mut())
                                    {
                                        wacc = wacc + *g * *xv;
                                        *gx = *gx + wv * *g;
                                    }
                                }
                            } else {
                                for oy in 0..ho {
                                    let base = (oy * stride + ky) * pw + kx;
                                    let go_row = &goplane[oy * wo..oy * wo + wo];
                                    for (ox, g) in go_row.iter().enumerate() {
                                        let xi = base + ox * stride;
                                        wacc = wacc + *g * xplane[xi];
                                        gxplane[xi] = gxplane[xi] + wv * *g;
                                    }
                                }
                            }
                            gwd[widx] = gwd[widx] + wacc;
                        }
                    }
                }
            }
        }
    }
    (unpad_nchw(&gxp, pad, h, wd), gw, gb)
}

pub fn convt2d_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

/// Transposed convolution. `x`: [N,Ci,H,W], `w`: [Ci,Co,Kh,Kw] -> [N,Co,Ho,Wo].
pub fn convt2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, ci, h, wd) = x.nchw();
    let (wci, co, kh, kw) = w.nchw();
    assert_eq!(ci, wci, "convt2d: channel mismatch");
    let fh = (h - 1) * stride + kh;
    let fw = (wd - 1) * stride + kw;
    let ho = fh - 2 * pad;
    let wo = fw - 2 * pad;
    let mut full = Tensor::zeros(&[n, co, fh, fw]);
    let xd = x.data();
    let wdat = w.data();
    {
        let fd = full.data_mut();
        for ni in 0..n {
            for c_in in 0..ci {
                let xplane = &xd[(ni * ci + c_in) * h * wd..(ni * ci + c_in + 1) * h * wd];
                for c_out in 0..co {
                    let fplane = &mut fd[(ni * co + c_out) * fh * fw..(ni * co + c_out + 1) * fh * fw];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wdat[((c_in * co + c_out) * kh + ky) * kw + kx];
                            for iy in 0..h {
                                let src = &xplane[iy * wd..iy * wd + wd];
                                let base = (iy * stride + ky) * fw + kx;
                                for (ix, s) in src.iter().enumerate() {
                                    let di = base + ix * stride;
                                    fplane[di] = fplane[di] + wv * *s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut out = unpad_nchw(&full, pad, ho, wo);
    let bd = b.data();
    let od = out.data_mut();
    for ni in 0..n {
        for c_out in 0..co {
            let bias = bd[c_out];
            for v in &mut od[(ni * co + c_out) * ho * wo..(ni * co + c_out + 1) * ho * wo] {
                *v = *v + bias;
            }
        }
    }
    out
}

/// Gradients of [`convt2d_forward`].
pub fn convt2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, ci, h, wd) = x.nchw();
    let (_, co, kh, kw) = w.nchw();
    let fh = (h - 1) * stride + kh;
    let fw = (wd - 1) * stride + kw;
    // Re-embed grad_out into full (uncropped) coordinates.
    let (_, _, ho, wo) = grad_out.nchw();
    let mut gofull = Tensor::zeros(&[n, co, fh, fw]);
    {
        let gd = gofull.data_mut();
        let god = grad_out.data();
        for plane in 0..n * co {
            for y in 0..ho {
                let soff = (plane * ho + y) * wo;
                let doff = (plane * fh + y + pad) * fw + pad;
                gd[doff..doff + wo].copy_from_slice(&god[soff..soff + wo]);
            }
        }
    }
    let mut gx = Tensor::zeros(&[n, ci, h, wd]);
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[co]);
    let gf = gofull.data();
    let xd = x.data();
    let wdat = w.data();
    {
        let gbd = gb.data_mut();
        let god = grad_out.data();
        for ni in 0..n {
            for c_out in 0..co {
                let mut acc = T::zero();
                for g in &god[(ni * co + c_out) * ho * wo..(ni * co + c_out + 1) * ho * wo] {
                    acc = acc + *g;
                }
                gbd[c_out] = gbd[c_out] + acc;
            }
        }
    }
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        for ni in 0..n {
            for c_in in 0..ci {
                let xplane = &xd[(ni * ci + c_in) * h * wd..(ni * ci + c_in + 1) * h * wd];
                let gxplane = &mut gxd[(ni * ci + c_in) * h * wd..(ni * ci + c_in + 1) * h * wd];
                for c_out in 0..co {
                    let gfplane = &gf[(ni * co + c_out) * fh * fw..(ni * co + c_out + 1) * fh * fw];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let widx = ((c_in * co + c_out) * kh + ky) * kw + kx;
                            let wv = wdat[widx];
                            let mut wacc = T::zero();
                            for iy in 0..h {
                                let base = (iy * stride + ky) * fw + kx;
                                let x_row = &xplane[iy * wd..iy * wd + wd];
                                let gx_row = &mut gxplane[iy * wd..iy * wd + wd];
                                for ix in 0..wd {
                                    let g = gfplane[base + ix * stride];
                                    wacc = wacc + g * x_row[ix];
                                    gx_row[ix] = gx_row[ix] + wv * g;
                                }
                            }
                            gwd[widx] = gwd[widx] + wacc;
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// `x`: [N,In], `w`: [Out,In], `b`: [Out] -> [N,Out].
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, input) = (x.shape()[0], x.shape()[1]);
    let output = w.shape()[0];
    assert_eq!(w.shape()[1], input, "linear: dim mismatch");
    let mut out = Tensor::zeros(&[n, output]);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let od = out.data_mut();
    for ni in 0..n {
        let xrow = &xd[ni * input..(ni + 1) * input];
        let orow = &mut od[ni * output..(ni + 1) * output];
        for (o, ov) in orow.iter_mut().enumerate() {
            let wrow = &wd[o * input..(o + 1) * input];
            let mut acc = bd[o];
            for (xv, wv) in xrow.iter().zip(wrow.iter()) {
                acc = acc + *xv * *wv;
            }
            *ov = acc;
        }
    }
    out
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, input) = (x.shape()[0], x.shape()[1]);
    let output = w.shape()[0];
    let mut gx = Tensor::zeros(&[n, input]);
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[output]);
    let xd = x.data();
    let wd = w.data();
    let god = grad_out.data();
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for ni in 0..n {
            let xrow = &xd[ni * input..(ni + 1) * input];
            let gxrow = &mut gxd[ni * input..(ni + 1) * input];
            let gorow = &god[ni * output..(ni + 1) * output];
            for (o, g) in gorow.iter().enumerate() {
                gbd[o] = gbd[o] + *g;
                let wrow = &wd[o * input..(o + 1) * input];
                let gwrow = &mut gwd[o * input..(o + 1) * input];
                for i in 0..input {
                    gxrow[i] = gxrow[i] + *g * wrow[i];
                    gwrow[i] = gwrow[i] + *g * xrow[i];
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn leaky_relu_forward<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::cast(slope);
    x.map(|v| if v > T::zero() { v } else { s * v })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::cast(slope);
    let mut gx = Tensor::zeros(x.shape());
    for ((g, xv), gout) in gx
        .data_mut()
        .iter_mut()
        .zip(x.data().iter())
        .zip(grad_out.data().iter())
    {
        *g = if *xv > T::zero() { *gout } else { s * *gout };
    }
    gx
}

pub fn upsample_nearest_forward<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (n, c, h, w) = x.nchw();
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        for oy in 0..ho {
            let src = &xd[(plane * h + oy / factor) * w..(plane * h + oy / factor) * w + w];
            let dst = &mut od[(plane * ho + oy) * wo..(plane * ho + oy) * wo + wo];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / factor];
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<T: Scalar>(
    x_shape: &[usize],
    grad_out: &Tensor<T>,
    factor: usize,
) -> Tensor<T> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (ho, wo) = (h * factor, w * factor);
    let mut gx = Tensor::zeros(x_shape);
    let god = grad_out.data();
    let gxd = gx.data_mut();
    for plane in 0..n * c {
        for oy in 0..ho {
            let src = &god[(plane * ho + oy) * wo..(plane * ho + oy) * wo + wo];
            let dst = &mut gxd[(plane * h + oy / factor) * w..(plane * h + oy / factor) * w + w];
            for (ox, s) in src.iter().enumerate() {
                dst[ox / factor] = dst[ox / factor] + *s;
            }
        }
    }
    gx
}

/// [N,C,H,W] -> [N,C] channel means.
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.nchw();
    let inv = T::one() / T::cast_usize(h * w);
    let mut out = Tensor::zeros(&[n, c]);
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let mut acc = T::zero();
        for v in &xd[plane * h * w..(plane + 1) * h * w] {
            acc = acc + *v;
        }
        od[plane] = acc * inv;
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(x_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let inv = T::one() / T::cast_usize(h * w);
    let mut gx = Tensor::zeros(x_shape);
    let god = grad_out.data();
    let gxd = gx.data_mut();
    for plane in 0..n * c {
        let g = god[plane] * inv;
        for v in &mut gxd[plane * h * w..(plane + 1) * h * w] {
            *v = g;
        }
    }
    gx
}

/// Feature-wise affine modulation: `x * (1 + gamma) + beta` per channel,
/// with `gb = [gamma | beta]` of shape [N, 2C].
pub fn film_forward<T: Scalar>(x: &Tensor<T>, gb: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.nchw();
    assert_eq!(gb.shape(), &[n, 2 * c], "film: gb must be [N, 2C]");
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let gbd = gb.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ch in 0..c {
            let gamma = gbd[ni * 2 * c + ch];
            let beta = gbd[ni * 2 * c + c + ch];
            let scale = T::one() + gamma;
            let off = (ni * c + ch) * h * w;
            for (d, s) in od[off..off + h * w].iter_mut().zip(&xd[off..off + h * w]) {
                *d = *s * scale + beta;
            }
        }
    }
    out
}

pub fn film_backward<T: Scalar>(
    x: &Tensor<T>,
    gb: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.nchw();
    let mut gx = Tensor::zeros(x.shape());
    let mut ggb = Tensor::zeros(gb.shape());
    let xd = x.data();
    let gbd = gb.data();
    let god = grad_out.data();
    {
        let gxd = gx.data_mut();
        let ggbd = ggb.data_mut();
        for ni in 0..n {
            for ch in 0..c {
                let gamma = gbd[ni * 2 * c + ch];
                let scale = T::one() + gamma;
                let off = (ni * c + ch) * h * w;
                let mut dg = T::zero();
                let mut db = T::zero();
                for i in off..off + h * w {
                    let g = god[i];
                    gxd[i] = g * scale;
                    dg = dg + g * xd[i];
                    db = db + g;
                }
                ggbd[ni * 2 * c + ch] = dg;
                ggbd[ni * 2 * c + c + ch] = db;
            }
        }
    }
    (gx, ggb)
}

/// Add a per-(sample, channel) bias `v` of shape [N,C] to an NCHW tensor.
pub fn add_bias_ch_forward<T: Scalar>(x: &Tensor<T>, v: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.nchw();
    assert_eq!(v.shape(), &[n, c], "add_bias_ch: bias must be [N, C]");
    let mut out = x.clone();
    let vd = v.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let bias = vd[plane];
        for val in &mut od[plane * h * w..(plane + 1) * h * w] {
            *val = *val + bias;
        }
    }
    out
}

pub fn add_bias_ch_backward<T: Scalar>(x_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let mut gv = Tensor::zeros(&[n, c]);
    let god = grad_out.data();
    let gvd = gv.data_mut();
    for plane in 0..n * c {
        let mut acc = T::zero();
        for g in &god[plane * h * w..(plane + 1) * h * w] {
            acc = acc + *g;
        }
        gvd[plane] = acc;
    }
    gv
}

/// Channel-wise concatenation of two NCHW tensors.
pub fn concat_ch_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, ca, h, w) = a.nchw();
    let (nb, cb, hb, wb) = b.nchw();
    assert!(n == nb && h == hb && w == wb, "concat_ch: spatial/batch mismatch");
    let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    let plane = h * w;
    for ni in 0..n {
        let ao = ni * ca * plane;
        let bo = ni * cb * plane;
        let oo = ni * (ca + cb) * plane;
        od[oo..oo + ca * plane].copy_from_slice(&ad[ao..ao + ca * plane]);
        od[oo + ca * plane..oo + (ca + cb) * plane].copy_from_slice(&bd[bo..bo + cb * plane]);
    }
    out
}

pub fn concat_ch_backward<T: Scalar>(
    a_shape: &[usize],
    b_shape: &[usize],
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, ca, h, w) = (a_shape[0], a_shape[1], a_shape[2], a_shape[3]);
    let cb = b_shape[1];
    let mut ga = Tensor::zeros(a_shape);
    let mut gb = Tensor::zeros(b_shape);
    let god = grad_out.data();
    let plane = h * w;
    {
        let gad = ga.data_mut();
        let gbd = gb.data_mut();
        for ni in 0..n {
            let ao = ni * ca * plane;
            let bo = ni * cb * plane;
            let oo = ni * (ca + cb) * plane;
            gad[ao..ao + ca * plane].copy_from_slice(&god[oo..oo + ca * plane]);
            gbd[bo..bo + cb * plane]
                .copy_from_slice(&god[oo + ca * plane..oo + (ca + cb) * plane]);
        }
    }
    (ga, gb)
}
