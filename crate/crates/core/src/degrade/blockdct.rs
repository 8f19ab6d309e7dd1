//! Block-DCT quantization, a reproducible stand-in for JPEG compression.
//!
//! Each channel is processed in 8×8 blocks: orthonormal DCT-II, coefficient
//! quantization against a quality-scaled table, inverse transform. Images not
//! divisible by 8 are edge-padded and cropped back.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const BLOCK: usize = 8;

/// Standard luminance quantization table at quality 50, applied to all
/// channels alike.
#[rustfmt::skip]
const Q50: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0,
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0,
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0,
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0,
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0,
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0,
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0,
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

fn quant_table(quality: u32) -> Result<[f64; 64]> {
    if !(10..=100).contains(&quality) {
        return Err(Error::Param(format!(
            "compression quality must be in [10, 100], got {quality}"
        )));
    }
    let scale = if quality < 50 {
        5000.0 / quality as f64
    } else {
        200.0 - 2.0 * quality as f64
    };
    let mut table = [0.0; 64];
    for (t, q) in table.iter_mut().zip(Q50.iter()) {
        *t = ((q * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    Ok(table)
}

/// Orthonormal DCT-II basis matrix, row u = basis function of frequency u.
fn dct_matrix() -> [[f64; BLOCK]; BLOCK] {
    let mut m = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (u, row) in m.iter_mut().enumerate() {
        let cu = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = cu * (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * u as f64 / (2.0 * n)).cos();
        }
    }
    m
}

fn transform_block(block: &[f64; 64], m: &[[f64; BLOCK]; BLOCK], inverse: bool) -> [f64; 64] {
    // rows pass
    let mut tmp = [0.0f64; 64];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for x in 0..BLOCK {
                let w = if inverse { m[x][u] } else { m[u][x] };
                acc += w * block[y * BLOCK + x];
            }
            tmp[y * BLOCK + u] = acc;
        }
    }
    // columns pass
    let mut out = [0.0f64; 64];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            let mut acc = 0.0;
            for y in 0..BLOCK {
                let w = if inverse { m[y][v] } else { m[v][y] };
                acc += w * tmp[y * BLOCK + u];
            }
            out[v * BLOCK + u] = acc;
        }
    }
    out
}

/// Quantization round-trip of one image. Output is clamped to `[0, 1]`.
pub fn compress<T: Scalar>(x: &Tensor<T>, quality: u32) -> Result<Tensor<T>> {
    let table = quant_table(quality)?;
    let m = dct_matrix();
    let (c, h, w) = x.chw();
    let ph = h.div_ceil(BLOCK) * BLOCK;
    let pw = w.div_ceil(BLOCK) * BLOCK;
    let xin = x.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let odata = out.data_mut();

    let mut padded = vec![0.0f64; ph * pw];
    for ch in 0..c {
        // edge-padded copy in the 8-bit-centered domain
        for y in 0..ph {
            let sy = y.min(h - 1);
            for xpos in 0..pw {
                let sx = xpos.min(w - 1);
                padded[y * pw + xpos] = xin[(ch * h + sy) * w + sx].as_f64() * 255.0 - 128.0;
            }
        }
        for by in (0..ph).step_by(BLOCK) {
            for bx in (0..pw).step_by(BLOCK) {
                let mut block = [0.0f64; 64];
                for y in 0..BLOCK {
                    for xpos in 0..BLOCK {
                        block[y * BLOCK + xpos] = padded[(by + y) * pw + bx + xpos];
                    }
                }
                let mut coeffs = transform_block(&block, &m, false);
                for (cv, q) in coeffs.iter_mut().zip(table.iter()) {
                    *cv = (*cv / q).round() * q;
                }
                let rec = transform_block(&coeffs, &m, true);
                for y in 0..BLOCK {
                    for xpos in 0..BLOCK {
                        padded[(by + y) * pw + bx + xpos] = rec[y * BLOCK + xpos];
                    }
                }
            }
        }
        for y in 0..h {
            for xpos in 0..w {
                odata[(ch * h + y) * w + xpos] = T::cast((padded[y * pw + xpos] + 128.0) / 255.0);
            }
        }
    }
    out.clamp01();
    Ok(out)
}
