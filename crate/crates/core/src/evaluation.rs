//! Full-reference metrics, a small SR network, and the trend experiment
//! that checks matched-degradation training data beats mismatched data.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{apply_degradation, bicubic_resize, sample_params, DegradationParams, DegradationSpace};
use crate::error::{Error, Result};
use crate::nn::{Adam, Conv2d, ConvT2d, ParamGroup, Tape, Var, LRELU_SLOPE};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// PSNR is capped here; identical inputs report the cap instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Mean full-reference metrics over a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_images: usize,
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` images, capped at 99.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn ssim_window() -> [f64; 121] {
    let sigma = 1.5f64;
    let mut w = [0.0; 121];
    let mut sum = 0.0;
    for y in 0..11 {
        for x in 0..11 {
            let dy = y as f64 - 5.0;
            let dx = x as f64 - 5.0;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            w[y * 11 + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM: 11×11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid window positions and
/// channels.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "ssim: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (c, h, w) = a.chw();
    if h < 11 || w < 11 {
        return Err(Error::Shape(format!(
            "ssim: image {h}×{w} smaller than the 11×11 window"
        )));
    }
    let win = ssim_window();
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = &a.data()[ch * h * w..(ch + 1) * h * w];
        let pb = &b.data()[ch * h * w..(ch + 1) * h * w];
        for wy in 0..=(h - 11) {
            for wx in 0..=(w - 11) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                for ky in 0..11 {
                    for kx in 0..11 {
                        let wv = win[ky * 11 + kx];
                        mu_a += wv * pa[(wy + ky) * w + wx + kx].as_f64();
                        mu_b += wv * pb[(wy + ky) * w + wx + kx].as_f64();
                    }
                }
                let mut var_a = 0.0;
                let mut var_b = 0.0;
                let mut cov = 0.0;
                for ky in 0..11 {
                    for kx in 0..11 {
                        let wv = win[ky * 11 + kx];
                        let da = pa[(wy + ky) * w + wx + kx].as_f64() - mu_a;
                        let db = pb[(wy + ky) * w + wx + kx].as_f64() - mu_b;
                        var_a += wv * da * da;
                        var_b += wv * db * db;
                        cov += wv * da * db;
                    }
                }
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// FSRCNN-style toy SR network: feature extraction, channel shrink, a few
/// mapping convs, expand, and a transposed-conv upscale by the scale factor.
#[derive(Debug, Clone)]
pub struct ToySrModel<T> {
    pub scale: usize,
    pub feat: Conv2d<T>,
    pub shrink: Conv2d<T>,
    pub mapping: Vec<Conv2d<T>>,
    pub expand: Conv2d<T>,
    pub deconv: ConvT2d<T>,
}

impl<T: Scalar> ToySrModel<T> {
    pub fn init<R: Rng>(scale: usize, rng: &mut R) -> Result<Self> {
        if !matches!(scale, 2 | 4) {
            return Err(Error::Config(format!(
                "toy SR model supports scale 2 or 4, got {scale}"
            )));
        }
        let d = 32;
        let s = 8;
        Ok(ToySrModel {
            scale,
            feat: Conv2d::init(3, d, 5, 1, 2, rng),
            shrink: Conv2d::init(d, s, 1, 1, 0, rng),
            mapping: (0..2).map(|_| Conv2d::init(s, s, 3, 1, 1, rng)).collect(),
            expand: Conv2d::init(s, d, 1, 1, 0, rng),
            deconv: ConvT2d::init(d, 3, 2 * scale, scale, scale / 2, rng),
        })
    }

    pub fn build(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let mut h = self.feat.apply(tape, "sr.feat", x);
        h = tape.leaky_relu(h, LRELU_SLOPE);
        h = self.shrink.apply(tape, "sr.shrink", h);
        h = tape.leaky_relu(h, LRELU_SLOPE);
        for (i, m) in self.mapping.iter().enumerate() {
            h = m.apply(tape, &format!("sr.map{}", i + 1), h);
            h = tape.leaky_relu(h, LRELU_SLOPE);
        }
        h = self.expand.apply(tape, "sr.expand", h);
        h = tape.leaky_relu(h, LRELU_SLOPE);
        self.deconv.apply(tape, "sr.deconv", h)
    }

    /// Upscale one `3×h×w` image; output clamped to `[0, 1]`.
    pub fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        if lr.shape().len() != 3 || lr.shape()[0] != 3 {
            return Err(Error::Shape(format!(
                "sr forward: expected 3×H×W, got {:?}",
                lr.shape()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.input(lr.insert_batch_dim());
        let y = self.build(&mut tape, x);
        let mut out = tape.value(y).clone().remove_batch_dim();
        out.clamp01();
        Ok(out)
    }

    /// Stable content hash over all parameters, for determinism checks.
    pub fn weights_hash(&self) -> u64 {
        let mut acc: u64 = 0xcbf29ce484222325;
        self.visit("sr", &mut |_, t| {
            acc = acc.rotate_left(13) ^ t.content_hash();
        });
        acc
    }
}

impl<T: Scalar> ParamGroup<T> for ToySrModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.feat.visit(&format!("{prefix}.feat"), f);
        self.shrink.visit(&format!("{prefix}.shrink"), f);
        for (i, m) in self.mapping.iter().enumerate() {
            m.visit(&format!("{prefix}.map{}", i + 1), f);
        }
        self.expand.visit(&format!("{prefix}.expand"), f);
        self.deconv.visit(&format!("{prefix}.deconv"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.feat.visit_mut(&format!("{prefix}.feat"), f);
        self.shrink.visit_mut(&format!("{prefix}.shrink"), f);
        for (i, m) in self.mapping.iter_mut().enumerate() {
            m.visit_mut(&format!("{prefix}.map{}", i + 1), f);
        }
        self.expand.visit_mut(&format!("{prefix}.expand"), f);
        self.deconv.visit_mut(&format!("{prefix}.deconv"), f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrTrainCfg {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SrTrainCfg {
    fn default() -> Self {
        SrTrainCfg {
            steps: 2000,
            batch: 8,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Train the toy SR model with L1 loss on `(lr, hr)` pairs. Returns the final
/// weights and the per-step loss log.
pub fn sr_train<T: Scalar>(
    pairs: &[(Tensor<T>, Tensor<T>)],
    scale: usize,
    cfg: &SrTrainCfg,
) -> Result<(ToySrModel<T>, Vec<f64>)> {
    if pairs.len() < 8 {
        return Err(Error::Param(format!(
            "sr_train needs at least 8 pairs, got {}",
            pairs.len()
        )));
    }
    let (c, lh, lw) = pairs[0].0.chw();
    if c != 3 {
        return Err(Error::Shape("sr_train: LR images must be RGB".into()));
    }
    for (lr, hr) in pairs {
        let (lc, a, b) = lr.chw();
        let (hc, ha, hb) = hr.chw();
        if lc != 3 || hc != 3 || a != lh || b != lw || ha != a * scale || hb != b * scale {
            return Err(Error::Shape(format!(
                "sr_train: inconsistent pair shapes {:?} vs {:?} at scale {scale}",
                lr.shape(),
                hr.shape()
            )));
        }
    }
    let mut model = ToySrModel::init(scale, &mut stream_rng(cfg.seed, 0))?;
    let mut data_rng = stream_rng(cfg.seed, 1);
    let mut adam = Adam::new();
    let mut log = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch)
            .map(|_| data_rng.gen_range(0..pairs.len()))
            .collect();
        let lr_refs: Vec<&Tensor<T>> = batch.iter().map(|&i| &pairs[i].0).collect();
        let hr_refs: Vec<&Tensor<T>> = batch.iter().map(|&i| &pairs[i].1).collect();
        let lr_batch = Tensor::stack(&lr_refs);
        let hr_batch = Tensor::stack(&hr_refs);
        let mut tape = Tape::new();
        let x = tape.input(lr_batch);
        let pred = model.build(&mut tape, x);
        let tgt = tape.input(hr_batch);
        let loss = tape.l1(pred, tgt);
        log.push(tape.scalar(loss).as_f64());
        let grads = tape.backward(loss);
        adam.begin_step();
        model.visit_mut("sr", &mut |name, param| {
            if let Some(g) = grads.get(name) {
                adam.update(name, param, g, cfg.lr);
            }
        });
    }
    Ok((model, log))
}

/// Model metrics plus the bicubic baseline on the same test pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: MetricReport,
    pub bicubic: MetricReport,
}

/// Mean PSNR/SSIM of model outputs against HR, with a bicubic-upscale
/// reference column.
pub fn sr_eval<T: Scalar>(
    model: &ToySrModel<T>,
    test_pairs: &[(Tensor<T>, Tensor<T>)],
) -> Result<EvalReport> {
    if test_pairs.is_empty() {
        return Err(Error::Param("sr_eval: empty test set".into()));
    }
    let mut m_psnr = 0.0;
    let mut m_ssim = 0.0;
    let mut b_psnr = 0.0;
    let mut b_ssim = 0.0;
    for (lr, hr) in test_pairs {
        let (_, hh, hw) = hr.chw();
        let pred = model.forward(lr)?;
        m_psnr += psnr(&pred, hr)?;
        m_ssim += ssim(&pred, hr)?;
        let bic = bicubic_resize(lr, hh, hw)?;
        b_psnr += psnr(&bic, hr)?;
        b_ssim += ssim(&bic, hr)?;
    }
    let n = test_pairs.len();
    Ok(EvalReport {
        model: MetricReport {
            psnr_db: m_psnr / n as f64,
            ssim: m_ssim / n as f64,
            n_images: n,
        },
        bicubic: MetricReport {
            psnr_db: b_psnr / n as f64,
            ssim: b_ssim / n as f64,
            n_images: n,
        },
    })
}

/// Role of a training distribution in the trend experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistRole {
    Matched,
    Mismatched,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendDistribution {
    pub name: String,
    pub role: DistRole,
    pub space: DegradationSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1aConfig {
    /// Degradation applied to the test set (per-image noise seeds differ).
    pub target: DegradationParams,
    pub distributions: Vec<TrendDistribution>,
    pub sr: SrTrainCfg,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub name: String,
    pub role: DistRole,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub matched_psnr_db: f64,
    pub best_mismatched_psnr_db: f64,
    pub gap_db: f64,
    pub matched_wins: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
    pub bicubic: MetricReport,
    /// Present when the config has exactly one matched and at least one
    /// mismatched distribution.
    pub verdict: Option<TrendVerdict>,
}

impl TrendReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("distribution,role,psnr_db,ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{:.4},{:.5}\n",
                r.name, r.role, r.psnr_db, r.ssim
            ));
        }
        out
    }
}

/// Build `(lr, hr)` pairs by degrading each HR image with a fresh parameter
/// draw from the space.
pub fn degraded_pairs<T: Scalar>(
    hr_images: &[Tensor<T>],
    space: &DegradationSpace,
    seed: u64,
    stream: u64,
) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let mut rng = stream_rng(seed, stream);
    let mut pairs = Vec::with_capacity(hr_images.len());
    for hr in hr_images {
        let theta = sample_params(space, &mut rng)?;
        pairs.push((apply_degradation(hr, &theta)?, hr.clone()));
    }
    Ok(pairs)
}

/// Degrade each HR image with the fixed target parameters, varying only the
/// noise seed per image.
pub fn target_pairs<T: Scalar>(
    hr_images: &[Tensor<T>],
    target: &DegradationParams,
    seed: u64,
) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let mut rng = stream_rng(seed, 9000);
    let mut pairs = Vec::with_capacity(hr_images.len());
    for hr in hr_images {
        let theta = DegradationParams {
            noise_seed: rng.gen(),
            ..*target
        };
        pairs.push((apply_degradation(hr, &theta)?, hr.clone()));
    }
    Ok(pairs)
}

/// Train one toy SR model per distribution on identical HR content, evaluate
/// all of them on the target-degraded test set, and report the trend.
pub fn fig1a_experiment<T: Scalar>(
    cfg: &Fig1aConfig,
    hr_train: &[Tensor<T>],
    hr_test: &[Tensor<T>],
) -> Result<TrendReport> {
    if cfg.distributions.len() < 2 {
        return Err(Error::Config(
            "trend experiment needs at least 2 training distributions".into(),
        ));
    }
    if hr_train.is_empty() || hr_test.is_empty() {
        return Err(Error::Param("trend experiment needs train and test images".into()));
    }
    let scale = cfg.target.scale_factor;
    let test_pairs = target_pairs(hr_test, &cfg.target, cfg.seed)?;

    let results: Vec<Result<(TrendRow, EvalReport)>> = cfg
        .distributions
        .par_iter()
        .enumerate()
        .map(|(j, dist)| {
            if dist.space.scale_factor != scale {
                return Err(Error::Config(format!(
                    "distribution '{}' scale {} differs from target scale {scale}",
                    dist.name, dist.space.scale_factor
                )));
            }
            let train = degraded_pairs(hr_train, &dist.space, cfg.seed, 100 + j as u64)?;
            let (model, _log) = sr_train(&train, scale, &cfg.sr)?;
            let report = sr_eval(&model, &test_pairs)?;
            Ok((
                TrendRow {
                    name: dist.name.clone(),
                    role: dist.role,
                    psnr_db: report.model.psnr_db,
                    ssim: report.model.ssim,
                },
                report,
            ))
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    let mut bicubic = None;
    for r in results {
        let (row, report) = r?;
        bicubic.get_or_insert(report.bicubic);
        rows.push(row);
    }

    let matched: Vec<&TrendRow> = rows.iter().filter(|r| r.role == DistRole::Matched).collect();
    let mismatched: Vec<&TrendRow> = rows
        .iter()
        .filter(|r| r.role == DistRole::Mismatched)
        .collect();
    let verdict = if matched.len() == 1 && !mismatched.is_empty() {
        let best_mis = mismatched
            .iter()
            .map(|r| r.psnr_db)
            .fold(f64::NEG_INFINITY, f64::max);
        Some(TrendVerdict {
            matched_psnr_db: matched[0].psnr_db,
            best_mismatched_psnr_db: best_mis,
            gap_db: matched[0].psnr_db - best_mis,
            matched_wins: matched[0].psnr_db > best_mis,
        })
    } else {
        None
    };

    Ok(TrendReport {
        rows,
        bicubic: bicubic.expect("at least one evaluation"),
        verdict,
    })
}
