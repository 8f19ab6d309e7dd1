//! Parameterized synthetic degradation operator and triplet batch
//! construction for contrastive pre-training.
//!
//! The operator pipeline is blur -> downsample -> noise -> compression,
//! applied once (`Order::First`) or twice with the resample step only in the
//! first pass (`Order::Second`), so the output shape is always `C×H/s×W/s`.
//! Everything is a pure function of `(image, params)`: noise is drawn from
//! the params' own seed.

mod blockdct;
mod blur;
mod resize;

pub use blockdct::compress;
pub use blur::{anisotropic_kernel, blur_kernel, convolve_reflect, gaussian_kernel};
pub use resize::{bicubic_resample, bicubic_resize, cubic_kernel};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream_rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlurKind {
    IsotropicGaussian,
    AnisotropicGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    First,
    Second,
}

/// Compression setting: quality-scaled block-DCT quantization, or disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compression {
    Off,
    Quality(u32),
}

/// One point in the synthetic degradation space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DegradationParams {
    pub blur_kind: BlurKind,
    pub blur_sigma: f64,
    pub kernel_size: usize,
    pub noise_sigma: f64,
    pub scale_factor: usize,
    pub compression: Compression,
    pub order: Order,
    pub noise_seed: u64,
}

impl PartialEq for DegradationParams {
    fn eq(&self, other: &Self) -> bool {
        self.blur_kind == other.blur_kind
            && self.blur_sigma.to_bits() == other.blur_sigma.to_bits()
            && self.kernel_size == other.kernel_size
            && self.noise_sigma.to_bits() == other.noise_sigma.to_bits()
            && self.scale_factor == other.scale_factor
            && self.compression == other.compression
            && self.order == other.order
            && self.noise_seed == other.noise_seed
    }
}

impl Eq for DegradationParams {}

impl std::hash::Hash for DegradationParams {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.blur_kind.hash(state);
        self.blur_sigma.to_bits().hash(state);
        self.kernel_size.hash(state);
        self.noise_sigma.to_bits().hash(state);
        self.scale_factor.hash(state);
        self.compression.hash(state);
        self.order.hash(state);
        self.noise_seed.hash(state);
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma > 0.0) || !self.blur_sigma.is_finite() {
            return Err(Error::Param(format!(
                "blur_sigma must be > 0, got {}",
                self.blur_sigma
            )));
        }
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::Param(format!(
                "kernel_size must be an odd integer >= 3, got {}",
                self.kernel_size
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_sigma) {
            return Err(Error::Param(format!(
                "noise_sigma must be in [0, 0.5], got {}",
                self.noise_sigma
            )));
        }
        if self.scale_factor == 0 {
            return Err(Error::Param("scale_factor must be >= 1".into()));
        }
        if let Compression::Quality(q) = self.compression {
            if !(10..=100).contains(&q) {
                return Err(Error::Param(format!(
                    "compression quality must be in [10, 100], got {q}"
                )));
            }
        }
        Ok(())
    }
}

/// Apply the degradation operator. Deterministic for a fixed `(x_hr, theta)`.
pub fn apply_degradation<T: Scalar>(
    x_hr: &Tensor<T>,
    theta: &DegradationParams,
) -> Result<Tensor<T>> {
    theta.validate()?;
    let (_, h, w) = x_hr.chw();
    let s = theta.scale_factor;
    if h % s != 0 || w % s != 0 {
        return Err(Error::Shape(format!(
            "image {h}×{w} not divisible by scale factor {s}"
        )));
    }
    let mut img = degrade_stage(x_hr, theta, 0, true)?;
    if theta.order == Order::Second {
        img = degrade_stage(&img, theta, 1, false)?;
    }
    Ok(img)
}

/// One blur/resample/noise/compress pass. `stage` selects the noise stream so
/// a second-order pass re-seeds with the same theta fields.
fn degrade_stage<T: Scalar>(
    x: &Tensor<T>,
    theta: &DegradationParams,
    stage: u64,
    resample: bool,
) -> Result<Tensor<T>> {
    let kernel = blur_kernel::<T>(theta.blur_kind, theta.blur_sigma, theta.kernel_size)?;
    let mut img = convolve_reflect(x, &kernel);
    if resample && theta.scale_factor > 1 {
        let (_, h, w) = img.chw();
        img = bicubic_resize(&img, h / theta.scale_factor, w / theta.scale_factor)?;
    }
    if theta.noise_sigma > 0.0 {
        let mut noise_rng = stream_rng(theta.noise_seed, stage);
        let sigma = T::cast(theta.noise_sigma);
        for v in img.data_mut() {
            *v = *v + sigma * rng::normal::<T, _>(&mut noise_rng);
        }
    }
    if let Compression::Quality(q) = theta.compression {
        img = compress(&img, q)?;
    }
    img.clamp01();
    Ok(img)
}

/// Ranges the degradation parameters are sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpace {
    pub blur_kinds: Vec<BlurKind>,
    /// `[lo, hi]` of the uniform blur sigma.
    pub blur_sigma: (f64, f64),
    /// Odd bounds; sampling picks odd sizes only.
    pub kernel_size: (usize, usize),
    pub noise_sigma: (f64, f64),
    pub scale_factor: usize,
    /// Probability that compression is off.
    pub compression_off_prob: f64,
    pub compression_quality: (u32, u32),
    pub orders: Vec<Order>,
    /// Fixed noise seed; `None` draws a fresh seed per sample.
    pub noise_seed: Option<u64>,
}

impl DegradationSpace {
    pub fn validate(&self) -> Result<()> {
        if self.blur_kinds.is_empty() {
            return Err(Error::Config("degradation space: empty blur_kinds".into()));
        }
        if self.orders.is_empty() {
            return Err(Error::Config("degradation space: empty orders".into()));
        }
        let (lo, hi) = self.blur_sigma;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!(
                "degradation space: invalid blur_sigma range [{lo}, {hi}]"
            )));
        }
        let (klo, khi) = self.kernel_size;
        if klo < 3 || klo % 2 == 0 || khi % 2 == 0 || khi < klo {
            return Err(Error::Config(format!(
                "degradation space: invalid kernel_size range [{klo}, {khi}]"
            )));
        }
        let (nlo, nhi) = self.noise_sigma;
        if !(0.0..=0.5).contains(&nlo) || !(0.0..=0.5).contains(&nhi) || nhi < nlo {
            return Err(Error::Config(format!(
                "degradation space: invalid noise_sigma range [{nlo}, {nhi}]"
            )));
        }
        if self.scale_factor == 0 {
            return Err(Error::Config("degradation space: scale_factor must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.compression_off_prob) {
            return Err(Error::Config(
                "degradation space: compression_off_prob must be in [0, 1]".into(),
            ));
        }
        let (qlo, qhi) = self.compression_quality;
        if !(10..=100).contains(&qlo) || !(10..=100).contains(&qhi) || qhi < qlo {
            return Err(Error::Config(format!(
                "degradation space: invalid compression_quality range [{qlo}, {qhi}]"
            )));
        }
        Ok(())
    }
}

/// Draw one parameter point from the space. Reproducible under a fixed rng.
pub fn sample_params<R: Rng>(space: &DegradationSpace, rng: &mut R) -> Result<DegradationParams> {
    space.validate()?;
    let blur_kind = space.blur_kinds[rng.gen_range(0..space.blur_kinds.len())];
    let blur_sigma = if space.blur_sigma.0 == space.blur_sigma.1 {
        space.blur_sigma.0
    } else {
        rng.gen_range(space.blur_sigma.0..=space.blur_sigma.1)
    };
    let n_odd = (space.kernel_size.1 - space.kernel_size.0) / 2 + 1;
    let kernel_size = space.kernel_size.0 + 2 * rng.gen_range(0..n_odd);
    let noise_sigma = if space.noise_sigma.0 == space.noise_sigma.1 {
        space.noise_sigma.0
    } else {
        rng.gen_range(space.noise_sigma.0..=space.noise_sigma.1)
    };
    let compression = if rng.gen_range(0.0..1.0f64) < space.compression_off_prob {
        Compression::Off
    } else {
        Compression::Quality(rng.gen_range(space.compression_quality.0..=space.compression_quality.1))
    };
    let order = space.orders[rng.gen_range(0..space.orders.len())];
    let noise_seed = space.noise_seed.unwrap_or_else(|| rng.gen());
    Ok(DegradationParams {
        blur_kind,
        blur_sigma,
        kernel_size,
        noise_sigma,
        scale_factor: space.scale_factor,
        compression,
        order,
        noise_seed,
    })
}

/// Anchor/positive/negative batch for the contrastive objective, with enough
/// construction metadata to audit its invariants afterwards.
#[derive(Debug, Clone)]
pub struct TripletBatch<T> {
    /// `D(x_hr, theta)`.
    pub anchor: Tensor<T>,
    /// `D(x'_i, theta)`: same parameters, different HR sources.
    pub positives: Vec<Tensor<T>>,
    /// `D(x_hr, theta_i)`: same HR source, different parameters.
    pub negatives: Vec<Tensor<T>>,
    pub anchor_params: DegradationParams,
    pub negative_params: Vec<DegradationParams>,
    /// Parameters each positive was actually produced with.
    pub positive_params: Vec<DegradationParams>,
    /// Content hash of the anchor's HR source.
    pub anchor_source: u64,
    /// Content hash of the HR source each negative was produced from.
    pub negative_sources: Vec<u64>,
    /// Content hashes of the pool images the positives were drawn from.
    pub positive_sources: Vec<u64>,
}

impl<T> TripletBatch<T> {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// Maximum re-draws before a colliding negative parameter point is resolved
/// by perturbing its blur sigma.
const COLLISION_REDRAWS: usize = 16;

/// Build one triplet batch: the anchor from `x_hr` and `theta`, `n` negatives
/// from `x_hr` with re-drawn parameters, and `n` positives from distinct pool
/// images with the anchor's exact parameters.
pub fn build_triplets<T: Scalar, R: Rng>(
    x_hr: &Tensor<T>,
    hr_pool: &[Tensor<T>],
    theta: &DegradationParams,
    space: &DegradationSpace,
    n: usize,
    rng: &mut R,
) -> Result<TripletBatch<T>> {
    if n == 0 {
        return Err(Error::Param("triplet batch needs n >= 1".into()));
    }
    let candidates: Vec<usize> = (0..hr_pool.len())
        .filter(|&i| hr_pool[i] != *x_hr)
        .collect();
    if candidates.len() < n {
        return Err(Error::Pool(format!(
            "need {n} pool images distinct from the anchor source, found {}",
            candidates.len()
        )));
    }

    let anchor = apply_degradation(x_hr, theta)?;
    let anchor_source = x_hr.content_hash();

    let mut negatives = Vec::with_capacity(n);
    let mut negative_params = Vec::with_capacity(n);
    let mut negative_sources = Vec::with_capacity(n);
    for _ in 0..n {
        let mut theta_i = sample_params(space, rng)?;
        let mut tries = 0;
        while theta_i == *theta && tries < COLLISION_REDRAWS {
            theta_i = sample_params(space, rng)?;
            tries += 1;
        }
        if theta_i == *theta {
            theta_i.blur_sigma *= 1.1;
        }
        negatives.push(apply_degradation(x_hr, &theta_i)?);
        negative_params.push(theta_i);
        negative_sources.push(anchor_source);
    }

    // Positives: pool indices drawn without replacement.
    let mut remaining = candidates;
    let mut positives = Vec::with_capacity(n);
    let mut positive_params = Vec::with_capacity(n);
    let mut positive_sources = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.gen_range(0..remaining.len());
        let idx = remaining.swap_remove(pick);
        positives.push(apply_degradation(&hr_pool[idx], theta)?);
        positive_params.push(*theta);
        positive_sources.push(hr_pool[idx].content_hash());
    }

    Ok(TripletBatch {
        anchor,
        positives,
        negatives,
        anchor_params: *theta,
        negative_params,
        positive_params,
        anchor_source,
        negative_sources,
        positive_sources,
    })
}
