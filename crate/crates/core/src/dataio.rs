//! PNG I/O at the 8-bit boundary, directory listing, and procedural toy
//! images for desk-scale runs.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Load an 8-bit RGB PNG into a `3×H×W` tensor in `[0, 1]`.
pub fn load_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut out = Tensor::zeros(&[3, h, w]);
    let data = out.data_mut();
    for (y, row) in img.rows().enumerate() {
        for (x, px) in row.enumerate() {
            for c in 0..3 {
                data[(c * h + y) * w + x] = T::cast(px.0[c] as f64 / 255.0);
            }
        }
    }
    Ok(out)
}

/// Save a `3×H×W` tensor as an 8-bit RGB PNG, rounding through `[0, 255]`.
pub fn save_png<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (c, h, w) = img.chw();
    if c != 3 {
        return Err(Error::Shape(format!("save_png: expected RGB, got {c} channels")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    let data = img.data();
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|ch| {
                (data[(ch * h + y) * w + x].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
            });
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    buf.save(path)?;
    Ok(())
}

/// PNG files of a directory, sorted by file name for determinism.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("not a directory: {}", dir.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Load every PNG in a directory, sorted by file name.
pub fn load_dir<T: Scalar>(dir: &Path) -> Result<Vec<(PathBuf, Tensor<T>)>> {
    let mut out = Vec::new();
    for p in list_pngs(dir)? {
        let img = load_png(&p)?;
        out.push((p, img));
    }
    Ok(out)
}

/// Deterministic procedural RGB image: smooth gradients, sinusoidal plaids
/// and a few hard-edged shapes, so there is content for the SR task at every
/// frequency band.
pub fn synth_image<T: Scalar>(seed: u64, size: usize) -> Tensor<T> {
    let mut rng = stream_rng(seed, 7777);
    let mut plane = vec![[0.0f64; 3]; size * size];

    // Oriented base gradient per channel.
    for c in 0..3 {
        let gx: f64 = rng.gen_range(-1.0..1.0);
        let gy: f64 = rng.gen_range(-1.0..1.0);
        let off: f64 = rng.gen_range(0.2..0.8);
        for y in 0..size {
            for x in 0..size {
                let v = off + 0.3 * (gx * x as f64 + gy * y as f64) / size as f64;
                plane[y * size + x][c] = v;
            }
        }
    }

    // Sinusoidal plaids shared across channels with per-channel weights.
    for _ in 0..3 {
        let fx: f64 = rng.gen_range(1.0..6.0);
        let fy: f64 = rng.gen_range(1.0..6.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.gen_range(0.05..0.18);
        let wc: [f64; 3] = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
        for y in 0..size {
            for x in 0..size {
                let s = (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / size as f64
                    + phase)
                    .sin();
                for c in 0..3 {
                    plane[y * size + x][c] += amp * wc[c] * s;
                }
            }
        }
    }

    // Hard-edged rectangles and disks.
    let n_shapes = rng.gen_range(3..=6);
    for _ in 0..n_shapes {
        let color: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let alpha: f64 = rng.gen_range(0.5..0.95);
        let cx: f64 = rng.gen_range(0.0..size as f64);
        let cy: f64 = rng.gen_range(0.0..size as f64);
        let r: f64 = rng.gen_range(size as f64 * 0.08..size as f64 * 0.3);
        let is_disk: bool = rng.gen();
        for y in 0..size {
            for x in 0..size {
                let inside = if is_disk {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    dx * dx + dy * dy <= r * r
                } else {
                    (x as f64 - cx).abs() <= r && (y as f64 - cy).abs() <= r * 0.6
                };
                if inside {
                    for c in 0..3 {
                        let p = &mut plane[y * size + x][c];
                        *p = (1.0 - alpha) * *p + alpha * color[c];
                    }
                }
            }
        }
    }

    let mut out = Tensor::zeros(&[3, size, size]);
    let data = out.data_mut();
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                data[(c * size + y) * size + x] = T::cast(plane[y * size + x][c].clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Write `count` synthetic images into a directory as `NNNNN.png`.
pub fn write_synth_dir(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = synth_image::<f32>(seed.wrapping_add(i as u64), size);
        let path = dir.join(format!("{i:05}.png"));
        save_png(&path, &img)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_at_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let img = synth_image::<f32>(3, 24);
        // Snap to the 8-bit grid first so the roundtrip is exact.
        let snapped = img.map(|v| (v * 255.0).round() / 255.0);
        let path = dir.path().join("x.png");
        save_png(&path, &snapped).unwrap();
        let back = load_png::<f32>(&path).unwrap();
        assert!(back.linf_distance(&snapped) < 1e-6);
    }

    #[test]
    fn synth_images_are_deterministic_and_distinct() {
        let a = synth_image::<f64>(1, 32);
        let b = synth_image::<f64>(1, 32);
        let c = synth_image::<f64>(2, 32);
        assert_eq!(a, b);
        assert!(a.linf_distance(&c) > 0.05);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn listing_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        write_synth_dir(dir.path(), 3, 8, 9).unwrap();
        let files = list_pngs(dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["00000.png", "00001.png", "00002.png"]);
    }
}
