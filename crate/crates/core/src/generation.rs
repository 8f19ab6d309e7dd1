//! End-to-end LR synthesis from unpaired (HR, reference-LR) inputs:
//! condition building, k-candidate partial-noising sampling, candidate
//! filtering, and batch dataset generation.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{list_pngs, load_png, save_png};
use crate::degrade::bicubic_resize;
use crate::diffusion::{sample_from, NoiseSchedule};
use crate::error::{Error, Result};
use crate::extractors::{extract_content, extract_degradation, modulate, Condition, Models, Phase};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the reverse process is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Bicubic-downsampled HR image (default: carries the content).
    Hr,
    /// The reference LR image itself (the literal algorithmic reading).
    RefLr,
}

#[derive(Debug, Clone)]
pub struct GenerationRequest<T> {
    pub hr_image: Tensor<T>,
    pub lr_ref: Tensor<T>,
    pub k_candidates: usize,
    pub tau_cap: usize,
    pub seed: u64,
    /// Base offset of the per-candidate rng streams; candidate `i` draws
    /// from stream `stream_base + i`.
    pub stream_base: u64,
    pub init: InitMode,
}

/// One generated candidate with its filtering scores.
#[derive(Debug, Clone)]
pub struct ScoredCandidate<T> {
    pub image: Tensor<T>,
    pub deg_error: f64,
    pub cont_error: f64,
    pub combined: f64,
}

/// Condition for generation: degradation from the reference LR, content from
/// the HR image.
pub fn build_condition<T: Scalar>(
    models: &Models<T>,
    x_hr: &Tensor<T>,
    x_lr_ref: &Tensor<T>,
) -> Result<Condition<T>> {
    let cont = extract_content(models, x_hr)?;
    let deg = extract_degradation(models, x_lr_ref)?;
    modulate(models, &deg, &cont)
}

/// Candidate images plus the partial-noising level each one drew.
#[derive(Debug, Clone)]
pub struct CandidateSet<T> {
    pub images: Vec<Tensor<T>>,
    pub taus: Vec<usize>,
}

/// Generate `k` candidates. Candidate `i` uses rng stream
/// `(seed, stream_base + i)` and draws its own noising level
/// `tau ~ Uniform{0..=tau_cap}`.
pub fn generate_candidates<T: Scalar>(
    models: &Models<T>,
    sched: &NoiseSchedule<T>,
    req: &GenerationRequest<T>,
) -> Result<CandidateSet<T>> {
    if models.phase != Some(Phase::DdpmFinetune) {
        return Err(Error::State(
            "generation requires a trained diffusion model".into(),
        ));
    }
    if req.k_candidates == 0 {
        return Err(Error::Param("k_candidates must be >= 1".into()));
    }
    if req.tau_cap > sched.t_max {
        return Err(Error::Param(format!(
            "tau_cap {} exceeds schedule t_max {}",
            req.tau_cap, sched.t_max
        )));
    }
    let s = models.profile.scale;
    let (c, hh, hw) = req.hr_image.chw();
    if c != 3 {
        return Err(Error::Shape("hr_image must be RGB".into()));
    }
    if hh % s != 0 || hw % s != 0 {
        return Err(Error::Shape(format!(
            "hr image {hh}×{hw} not divisible by scale {s}"
        )));
    }
    let (lh, lw) = (hh / s, hw / s);
    if lh % 2 != 0 || lw % 2 != 0 {
        return Err(Error::Shape(format!(
            "target LR {lh}×{lw} must have even dims for the denoiser"
        )));
    }
    let cond = build_condition(models, &req.hr_image, &req.lr_ref)?;
    let x_init = match req.init {
        InitMode::Hr => bicubic_resize(&req.hr_image, lh, lw)?,
        InitMode::RefLr => {
            req.lr_ref.expect_shape(&[3, lh, lw], "generate_candidates(init=ref-lr)")?;
            req.lr_ref.clone()
        }
    };
    let mut images = Vec::with_capacity(req.k_candidates);
    let mut taus = Vec::with_capacity(req.k_candidates);
    for i in 0..req.k_candidates {
        let mut rng = stream_rng(req.seed, req.stream_base + i as u64);
        let tau = rng.gen_range(0..=req.tau_cap);
        images.push(sample_from(models, &x_init, tau, &cond, sched, &mut rng)?);
        taus.push(tau);
    }
    Ok(CandidateSet { images, taus })
}

/// Re-extract representations from every candidate, score each against the
/// references, and pick the argmin of the combined (mean-normalized) error.
/// Ties break toward the lowest candidate index.
pub fn filter_best<T: Scalar>(
    models: &Models<T>,
    candidates: &[Tensor<T>],
    x_hr: &Tensor<T>,
    x_lr_ref: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<ScoredCandidate<T>>)> {
    if candidates.is_empty() {
        return Err(Error::Param("filter_best: empty candidate list".into()));
    }
    let deg_ref = extract_degradation(models, x_lr_ref)?;
    let cont_ref = extract_content(models, x_hr)?;
    let mut deg_errors = Vec::with_capacity(candidates.len());
    let mut cont_errors = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let deg = extract_degradation(models, cand)?;
        let cont = extract_content(models, cand)?;
        deg_errors.push(deg.vector.l2_distance(&deg_ref.vector));
        cont_errors.push(cont.features.l2_distance(&cont_ref.features));
    }
    let mean_deg = deg_errors.iter().sum::<f64>() / candidates.len() as f64;
    let mean_cont = cont_errors.iter().sum::<f64>() / candidates.len() as f64;
    let mut scored = Vec::with_capacity(candidates.len());
    for (i, cand) in candidates.iter().enumerate() {
        let nd = if mean_deg == 0.0 { 0.0 } else { deg_errors[i] / mean_deg };
        let nc = if mean_cont == 0.0 { 0.0 } else { cont_errors[i] / mean_cont };
        scored.push(ScoredCandidate {
            image: cand.clone(),
            deg_error: deg_errors[i],
            cont_error: cont_errors[i],
            combined: nd + nc,
        });
    }
    let mut best = 0;
    for i in 1..scored.len() {
        if scored[i].combined < scored[best].combined {
            best = i;
        }
    }
    Ok((scored[best].image.clone(), scored))
}

/// How reference LR images are assigned to HR images during dataset
/// generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefAssignment {
    RoundRobin,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateCfg {
    pub k_candidates: usize,
    pub tau_cap: usize,
    pub seed: u64,
    pub init: InitMode,
    pub ref_assignment: RefAssignment,
}

impl Default for GenerateCfg {
    fn default() -> Self {
        GenerateCfg {
            k_candidates: 3,
            tau_cap: 300,
            seed: 0,
            init: InitMode::Hr,
            ref_assignment: RefAssignment::RoundRobin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub deg_error: f64,
    pub cont_error: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: usize,
    pub hr_file: String,
    pub lr_ref_file: String,
    pub seed: u64,
    pub stream_base: u64,
    pub taus: Vec<usize>,
    pub winner_index: usize,
    pub winner_tau: usize,
    pub scores: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub hr_file: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub scale: usize,
    pub k_candidates: usize,
    pub tau_cap: usize,
    pub init: InitMode,
    pub ref_assignment: RefAssignment,
    pub seed: u64,
    pub entries: Vec<PairRecord>,
    pub failures: Vec<FailureRecord>,
}

/// Generate one paired `(LR, HR)` dataset: for every HR image, draw a
/// reference LR, synthesize `k` candidates, keep the filtered winner, and
/// write `out_dir/{lr,hr}/NNNNN.png` plus `out_dir/manifest.json`.
///
/// Per-file failures are recorded in the manifest and the run continues.
pub fn generate_dataset<T: Scalar>(
    models: &Models<T>,
    sched: &NoiseSchedule<T>,
    hr_dir: &Path,
    lr_ref_dir: &Path,
    out_dir: &Path,
    cfg: &GenerateCfg,
) -> Result<DatasetManifest> {
    let hr_files = list_pngs(hr_dir)?;
    if hr_files.is_empty() {
        return Err(Error::Config(format!(
            "hr_dir has no PNG images: {}",
            hr_dir.display()
        )));
    }
    let ref_files = list_pngs(lr_ref_dir)?;
    if ref_files.is_empty() {
        return Err(Error::Config(format!(
            "lr_ref_dir has no PNG images: {}",
            lr_ref_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir.join("lr"))?;
    std::fs::create_dir_all(out_dir.join("hr"))?;

    let k = cfg.k_candidates as u64;
    let results: Vec<std::result::Result<PairRecord, FailureRecord>> = hr_files
        .par_iter()
        .enumerate()
        .map(|(i, hr_path)| {
            let ref_idx = match cfg.ref_assignment {
                RefAssignment::RoundRobin => i % ref_files.len(),
                RefAssignment::Random => {
                    stream_rng(cfg.seed, 500_000 + i as u64).gen_range(0..ref_files.len())
                }
            };
            let ref_path = &ref_files[ref_idx];
            let run = || -> Result<PairRecord> {
                let hr = load_png::<T>(hr_path)?;
                let lr_ref = load_png::<T>(ref_path)?;
                let req = GenerationRequest {
                    hr_image: hr.clone(),
                    lr_ref: lr_ref.clone(),
                    k_candidates: cfg.k_candidates,
                    tau_cap: cfg.tau_cap,
                    seed: cfg.seed,
                    stream_base: i as u64 * k,
                    init: cfg.init,
                };
                let cands = generate_candidates(models, sched, &req)?;
                let (winner, scored) = filter_best(models, &cands.images, &hr, &lr_ref)?;
                let winner_index = scored
                    .iter()
                    .position(|s| s.image == winner)
                    .expect("winner comes from the candidate list");
                save_png(&out_dir.join("lr").join(format!("{i:05}.png")), &winner)?;
                save_png(&out_dir.join("hr").join(format!("{i:05}.png")), &hr)?;
                Ok(PairRecord {
                    index: i,
                    hr_file: hr_path.file_name().unwrap().to_string_lossy().into_owned(),
                    lr_ref_file: ref_path.file_name().unwrap().to_string_lossy().into_owned(),
                    seed: cfg.seed,
                    stream_base: i as u64 * k,
                    taus: cands.taus.clone(),
                    winner_index,
                    winner_tau: cands.taus[winner_index],
                    scores: scored
                        .iter()
                        .map(|s| ScoreRecord {
                            deg_error: s.deg_error,
                            cont_error: s.cont_error,
                            combined: s.combined,
                        })
                        .collect(),
                })
            };
            run().map_err(|e| FailureRecord {
                hr_file: hr_path.file_name().unwrap().to_string_lossy().into_owned(),
                error: e.to_string(),
            })
        })
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => entries.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let manifest = DatasetManifest {
        schema: 1,
        scale: models.profile.scale,
        k_candidates: cfg.k_candidates,
        tau_cap: cfg.tau_cap,
        init: cfg.init,
        ref_assignment: cfg.ref_assignment,
        seed: cfg.seed,
        entries,
        failures,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_image;
    use crate::diffusion::make_schedule;
    use crate::extractors::{Profile, ProfileKind};

    fn mini_models() -> Models<f64> {
        let p = Profile {
            kind: ProfileKind::Toy,
            scale: 2,
            lr_size: 8,
            content_channels: 4,
            cond_channels: 4,
            deg_dim: 6,
            deg_blocks: 2,
            deg_stem_channels: 4,
            eps_channels: 4,
            time_dim: 4,
        };
        let mut m = Models::init(&p, 3).unwrap();
        m.phase = Some(Phase::DdpmFinetune);
        m
    }

    fn req(seed: u64, tau_cap: usize) -> GenerationRequest<f64> {
        GenerationRequest {
            hr_image: synth_image(1, 16),
            lr_ref: bicubic_resize(&synth_image::<f64>(2, 16), 8, 8).unwrap(),
            k_candidates: 3,
            tau_cap,
            seed,
            stream_base: 0,
            init: InitMode::Hr,
        }
    }

    #[test]
    fn build_condition_shape_sensitivity_determinism() {
        let models = mini_models();
        let hr = synth_image::<f64>(4, 16);
        let ref_a = bicubic_resize(&synth_image::<f64>(5, 16), 8, 8).unwrap();
        let ref_b = ref_a.map(|v| (v * 0.7 + 0.1).clamp(0.0, 1.0));
        let ca = build_condition(&models, &hr, &ref_a).unwrap();
        let cb = build_condition(&models, &hr, &ref_b).unwrap();
        assert_eq!(ca.features.shape(), &[4, 8, 8]);
        assert!(ca.features.is_finite());
        assert!(ca.features.linf_distance(&cb.features) > 0.0);
        let ca2 = build_condition(&models, &hr, &ref_a).unwrap();
        assert_eq!(ca.features, ca2.features);
    }

    #[test]
    fn candidates_count_determinism_and_tau_zero() {
        let models = mini_models();
        let sched = make_schedule(50, 1e-4, 0.02).unwrap();
        let r = req(9, 20);
        let a = generate_candidates(&models, &sched, &r).unwrap();
        assert_eq!(a.images.len(), 3);
        let b = generate_candidates(&models, &sched, &r).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.taus, b.taus);

        let r0 = req(9, 0);
        let z = generate_candidates(&models, &sched, &r0).unwrap();
        let init = bicubic_resize(&r0.hr_image, 8, 8).unwrap();
        for img in &z.images {
            assert_eq!(img, &init);
        }
    }

    #[test]
    fn untrained_models_are_rejected() {
        let mut models = mini_models();
        models.phase = Some(Phase::PretrainContent);
        let sched = make_schedule(50, 1e-4, 0.02).unwrap();
        assert!(matches!(
            generate_candidates(&models, &sched, &req(0, 10)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn filter_best_single_candidate_and_dominance() {
        let models = mini_models();
        let hr = synth_image::<f64>(11, 16);
        let lr_ref = bicubic_resize(&synth_image::<f64>(12, 16), 8, 8).unwrap();
        let only = bicubic_resize(&hr, 8, 8).unwrap();
        let (win, scored) = filter_best(&models, &[only.clone()], &hr, &lr_ref).unwrap();
        assert_eq!(win, only);
        assert_eq!(scored.len(), 1);

        // A candidate that is exactly the reference-derived image dominates
        // heavy distortions of it on both raw errors.
        let near = bicubic_resize(&hr, 8, 8).unwrap();
        let far = near.map(|v| (1.0 - v) * 0.9);
        let far2 = near.map(|v| (v * 0.1).clamp(0.0, 1.0));
        let (_, scored) = filter_best(&models, &[far.clone(), near.clone(), far2], &hr, &near).unwrap();
        let best_idx = scored
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.combined.partial_cmp(&b.1.combined).unwrap())
            .unwrap()
            .0;
        assert_eq!(best_idx, 1);
        assert!(scored[1].deg_error < scored[0].deg_error);
        assert!(scored[1].cont_error < scored[0].cont_error);
    }

    #[test]
    fn filter_matches_brute_force_and_breaks_ties_low() {
        let models = mini_models();
        let hr = synth_image::<f64>(21, 16);
        let lr_ref = bicubic_resize(&synth_image::<f64>(22, 16), 8, 8).unwrap();
        for n in 1..=8usize {
            let cands: Vec<Tensor<f64>> = (0..n)
                .map(|i| {
                    bicubic_resize(&synth_image::<f64>(100 + i as u64, 16), 8, 8).unwrap()
                })
                .collect();
            let (win, scored) = filter_best(&models, &cands, &hr, &lr_ref).unwrap();
            // Brute force over the recomputed combined scores.
            let mut best = 0;
            for i in 1..n {
                if scored[i].combined < scored[best].combined {
                    best = i;
                }
            }
            assert_eq!(win, cands[best]);
        }

        // Constructed tie: duplicate the winner at a later index; the lower
        // index must win.
        let cands: Vec<Tensor<f64>> = (0..4)
            .map(|i| bicubic_resize(&synth_image::<f64>(300 + i as u64, 16), 8, 8).unwrap())
            .collect();
        let (_, scored) = filter_best(&models, &cands, &hr, &lr_ref).unwrap();
        let mut best = 0;
        for i in 1..4 {
            if scored[i].combined < scored[best].combined {
                best = i;
            }
        }
        let mut tied = cands.clone();
        tied.push(cands[best].clone());
        let (win, tied_scored) = filter_best(&models, &tied, &hr, &lr_ref).unwrap();
        assert_eq!(win, tied[best]);
        assert!((tied_scored[best].combined - tied_scored[4].combined).abs() < 1e-12);
        let argmin = tied_scored
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.combined.partial_cmp(&b.1.combined).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmin, best.min(4));
    }

    #[test]
    fn dataset_generation_round_robin_and_determinism() {
        let models = mini_models();
        let sched = make_schedule(50, 1e-4, 0.02).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let hr_dir = tmp.path().join("hr_src");
        let ref_dir = tmp.path().join("refs");
        for i in 0..4u64 {
            crate::dataio::save_png(
                &hr_dir.join(format!("{i:05}.png")),
                &synth_image::<f64>(40 + i, 16),
            )
            .unwrap();
        }
        for i in 0..2u64 {
            let lr = bicubic_resize(&synth_image::<f64>(60 + i, 16), 8, 8).unwrap();
            crate::dataio::save_png(&ref_dir.join(format!("r{i}.png")), &lr).unwrap();
        }
        let cfg = GenerateCfg {
            k_candidates: 2,
            tau_cap: 10,
            seed: 5,
            init: InitMode::Hr,
            ref_assignment: RefAssignment::RoundRobin,
        };
        let out_a = tmp.path().join("out_a");
        let m1 = generate_dataset(&models, &sched, &hr_dir, &ref_dir, &out_a, &cfg).unwrap();
        assert_eq!(m1.entries.len(), 4);
        assert!(m1.failures.is_empty());
        // Round-robin alternation over the two refs.
        let refs: Vec<&str> = m1.entries.iter().map(|e| e.lr_ref_file.as_str()).collect();
        assert_eq!(refs, vec!["r0.png", "r1.png", "r0.png", "r1.png"]);

        let out_b = tmp.path().join("out_b");
        generate_dataset(&models, &sched, &hr_dir, &ref_dir, &out_b, &cfg).unwrap();
        let ja = std::fs::read(out_a.join("manifest.json")).unwrap();
        let jb = std::fs::read(out_b.join("manifest.json")).unwrap();
        assert_eq!(ja, jb);
        for i in 0..4 {
            let a = std::fs::read(out_a.join("lr").join(format!("{i:05}.png"))).unwrap();
            let b = std::fs::read(out_b.join("lr").join(format!("{i:05}.png"))).unwrap();
            assert_eq!(a, b);
        }

        // Empty HR dir: error, no manifest.
        let empty = tmp.path().join("empty");
        std::fs::create_dir_all(&empty).unwrap();
        let out_c = tmp.path().join("out_c");
        assert!(generate_dataset(&models, &sched, &empty, &ref_dir, &out_c, &cfg).is_err());
        assert!(!out_c.join("manifest.json").exists());
    }
}
