//! Content and degradation extractors, their reconstruction heads, and the
//! modulation block that fuses the two representations into a diffusion
//! condition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::bicubic_resize;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, FilmLayer, Linear, ParamGroup, ResBlock, Tape, Var, LRELU_SLOPE};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The content encoder always uses four residual blocks; the degradation
/// encoder's block count is a profile knob.
pub const CONTENT_BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Toy,
    PaperScaleRecord,
}

/// Architecture dimensions shared by every network in the model bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub kind: ProfileKind,
    /// Super-resolution scale `s` (1, 2 or 4).
    pub scale: usize,
    /// Working LR resolution; HR is `lr_size * scale`.
    pub lr_size: usize,
    /// Content feature channels `c_f`.
    pub content_channels: usize,
    /// Condition channels `c_c` produced by the modulation block.
    pub cond_channels: usize,
    /// Degradation vector length `d_deg`.
    pub deg_dim: usize,
    /// Residual blocks in the degradation encoder.
    pub deg_blocks: usize,
    /// Stem width of the degradation encoder.
    pub deg_stem_channels: usize,
    /// Base width of the denoiser U-Net.
    pub eps_channels: usize,
    /// Sinusoidal timestep embedding length.
    pub time_dim: usize,
}

impl Profile {
    pub fn toy() -> Self {
        Profile {
            kind: ProfileKind::Toy,
            scale: 4,
            lr_size: 16,
            content_channels: 64,
            cond_channels: 64,
            deg_dim: 128,
            deg_blocks: 4,
            deg_stem_channels: 64,
            eps_channels: 32,
            time_dim: 32,
        }
    }

    /// The paper-scale hyperparameters, recorded for documentation. Never a
    /// training target in this artifact.
    pub fn paper_scale_record() -> Self {
        Profile {
            kind: ProfileKind::PaperScaleRecord,
            scale: 4,
            lr_size: 64,
            content_channels: 256,
            cond_channels: 128,
            deg_dim: 2048,
            deg_blocks: 16,
            deg_stem_channels: 64,
            eps_channels: 64,
            time_dim: 128,
        }
    }

    pub fn hr_size(&self) -> usize {
        self.lr_size * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 1 | 2 | 4) {
            return Err(Error::Config(format!(
                "profile scale must be 1, 2 or 4, got {}",
                self.scale
            )));
        }
        if self.lr_size < 4 || self.lr_size % 2 != 0 {
            return Err(Error::Config(format!(
                "profile lr_size must be even and >= 4, got {}",
                self.lr_size
            )));
        }
        if self.content_channels == 0
            || self.cond_channels == 0
            || self.deg_dim == 0
            || self.deg_blocks == 0
            || self.deg_stem_channels == 0
            || self.eps_channels == 0
            || self.time_dim < 2
            || self.time_dim % 2 != 0
        {
            return Err(Error::Config("profile dimensions must be positive (time_dim even)".into()));
        }
        Ok(())
    }

    /// Number of ×2 upsampling stages in the HR decoder.
    fn up_stages(&self) -> usize {
        match self.scale {
            1 => 0,
            2 => 1,
            _ => 2,
        }
    }
}

/// Spatial content feature map at the canonical LR feature resolution.
#[derive(Debug, Clone)]
pub struct ContentRep<T> {
    pub features: Tensor<T>,
    /// Provenance tag: content hash of the image the features came from.
    pub source_id: String,
}

/// Fixed-length degradation descriptor of an LR image.
#[derive(Debug, Clone)]
pub struct DegradationRep<T> {
    pub vector: Tensor<T>,
}

/// Fused condition for the diffusion model.
#[derive(Debug, Clone)]
pub struct Condition<T> {
    pub features: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ContentEncoder<T> {
    pub stem: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
}

impl<T: Scalar> ContentEncoder<T> {
    fn init<R: Rng>(p: &Profile, rng: &mut R) -> Self {
        ContentEncoder {
            stem: Conv2d::init(3, p.content_channels, 3, 1, 1, rng),
            blocks: (0..CONTENT_BLOCKS)
                .map(|_| ResBlock::init(p.content_channels, rng))
                .collect(),
        }
    }

    pub fn build(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let mut h = self.stem.apply(tape, "e_cont.stem", x);
        h = tape.leaky_relu(h, LRELU_SLOPE);
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.apply(tape, &format!("e_cont.res{}", i + 1), h);
        }
        h
    }
}

impl<T: Scalar> ParamGroup<T> for ContentEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.stem.visit(&format!("{prefix}.stem"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.res{}", i + 1), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stem.visit_mut(&format!("{prefix}.stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.res{}", i + 1), f);
        }
    }
}

/// Conv stem, residual blocks, adaptive average pool, then a four-layer
/// mapping down to the degradation vector.
#[derive(Debug, Clone)]
pub struct DegradationEncoder<T> {
    pub stem: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub map: Vec<Linear<T>>,
}

impl<T: Scalar> DegradationEncoder<T> {
    fn init<R: Rng>(p: &Profile, rng: &mut R) -> Self {
        let ch = p.deg_stem_channels;
        let mid = p.deg_dim.max(ch);
        DegradationEncoder {
            stem: Conv2d::init(3, ch, 3, 1, 1, rng),
            blocks: (0..p.deg_blocks).map(|_| ResBlock::init(ch, rng)).collect(),
            map: vec![
                Linear::init(ch, mid, rng),
                Linear::init(mid, mid, rng),
                Linear::init(mid, mid, rng),
                Linear::init(mid, p.deg_dim, rng),
            ],
        }
    }

    pub fn build(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let mut h = self.stem.apply(tape, "e_deg.stem", x);
        h = tape.leaky_relu(h, LRELU_SLOPE);
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.apply(tape, &format!("e_deg.res{}", i + 1), h);
        }
        let mut v = tape.global_avg_pool(h);
        for (i, l) in self.map.iter().enumerate() {
            v = l.apply(tape, &format!("e_deg.map{}", i + 1), v);
            if i + 1 < self.map.len() {
                v = tape.leaky_relu(v, LRELU_SLOPE);
            }
        }
        v
    }
}

impl<T: Scalar> ParamGroup<T> for DegradationEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.stem.visit(&format!("{prefix}.stem"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.res{}", i + 1), f);
        }
        for (i, l) in self.map.iter().enumerate() {
            l.visit(&format!("{prefix}.map{}", i + 1), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stem.visit_mut(&format!("{prefix}.stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.res{}", i + 1), f);
        }
        for (i, l) in self.map.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.map{}", i + 1), f);
        }
    }
}

/// Decoder from content features back to the HR image: a residual block,
/// ×2 nearest-upsample + conv stages totaling the profile scale, and an
/// output conv.
#[derive(Debug, Clone)]
pub struct HrDecoder<T> {
    pub pre: ResBlock<T>,
    pub ups: Vec<Conv2d<T>>,
    pub out: Conv2d<T>,
}

fn hr_stage_channels(c_f: usize, stages: usize) -> Vec<usize> {
    // c_f, then halved per stage with a floor of 4.
    let mut chs = vec![c_f];
    for i in 0..stages {
        chs.push((c_f >> (i + 1)).max(4));
    }
    chs
}

impl<T: Scalar> HrDecoder<T> {
    fn init<R: Rng>(p: &Profile, rng: &mut R) -> Self {
        let stages = p.up_stages();
        let chs = hr_stage_channels(p.content_channels, stages);
        HrDecoder {
            pre: ResBlock::init(p.content_channels, rng),
            ups: (0..stages)
                .map(|i| Conv2d::init(chs[i], chs[i + 1], 3, 1, 1, rng))
                .collect(),
            out: Conv2d::init(chs[stages], 3, 3, 1, 1, rng),
        }
    }

    pub fn build(&self, tape: &mut Tape<T>, f: Var) -> Var {
        let mut h = self.pre.apply(tape, "rec_hr.pre", f);
        for (i, conv) in self.ups.iter().enumerate() {
            h = tape.upsample_nearest(h, 2);
            h = conv.apply(tape, &format!("rec_hr.up{}", i + 1), h);
            h = tape.leaky_relu(h, LRELU_SLOPE);
        }
        self.out.apply(tape, "rec_hr.out", h)
    }
}

impl<T: Scalar> ParamGroup<T> for HrDecoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.pre.visit(&format!("{prefix}.pre"), f);
        for (i, c) in self.ups.iter().enumerate() {
            c.visit(&format!("{prefix}.up{}", i + 1), f);
        }
        self.out.visit(&format!("{prefix}.out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.pre.visit_mut(&format!("{prefix}.pre"), f);
        for (i, c) in self.ups.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}.up{}", i + 1), f);
        }
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }
}

/// Four modulation layers and an output conv. With `out_channels = 3` this is
/// the LR reconstruction head; with `out_channels = c_c` it is the modulation
/// block producing the diffusion condition.
#[derive(Debug, Clone)]
pub struct ModulationStack<T> {
    pub layers: Vec<FilmLayer<T>>,
    pub out: Conv2d<T>,
}

impl<T: Scalar> ModulationStack<T> {
    fn init<R: Rng>(p: &Profile, out_channels: usize, rng: &mut R) -> Self {
        ModulationStack {
            layers: (0..4)
                .map(|_| FilmLayer::init(p.content_channels, p.deg_dim, rng))
                .collect(),
            out: Conv2d::init(p.content_channels, out_channels, 3, 1, 1, rng),
        }
    }

    /// `cont`: [N, c_f, h, w]; `deg`: [N, d_deg].
    pub fn build(&self, tape: &mut Tape<T>, prefix: &str, deg: Var, cont: Var) -> Var {
        let mut h = cont;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, &format!("{prefix}.layer{}", i + 1), h, deg);
        }
        self.out.apply(tape, &format!("{prefix}.out"), h)
    }
}

impl<T: Scalar> ParamGroup<T> for ModulationStack<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.layer{}", i + 1), f);
        }
        self.out.visit(&format!("{prefix}.out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.layer{}", i + 1), f);
        }
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }
}

/// Small U-Net noise predictor conditioned by channel-concatenation and a
/// per-block timestep embedding.
#[derive(Debug, Clone)]
pub struct EpsNet<T> {
    pub enc1a: Conv2d<T>,
    pub enc1b: Conv2d<T>,
    pub t_enc1: Linear<T>,
    pub down: Conv2d<T>,
    pub enc2b: Conv2d<T>,
    pub t_enc2: Linear<T>,
    pub mid_a: Conv2d<T>,
    pub mid_b: Conv2d<T>,
    pub t_mid: Linear<T>,
    pub up: Conv2d<T>,
    pub dec_a: Conv2d<T>,
    pub dec_b: Conv2d<T>,
    pub t_dec: Linear<T>,
    pub out: Conv2d<T>,
}

impl<T: Scalar> EpsNet<T> {
    fn init<R: Rng>(p: &Profile, rng: &mut R) -> Self {
        let f = p.eps_channels;
        EpsNet {
            enc1a: Conv2d::init(3 + p.cond_channels, f, 3, 1, 1, rng),
            enc1b: Conv2d::init(f, f, 3, 1, 1, rng),
            t_enc1: Linear::init(p.time_dim, f, rng),
            down: Conv2d::init(f, 2 * f, 3, 2, 1, rng),
            enc2b: Conv2d::init(2 * f, 2 * f, 3, 1, 1, rng),
            t_enc2: Linear::init(p.time_dim, 2 * f, rng),
            mid_a: Conv2d::init(2 * f, 2 * f, 3, 1, 1, rng),
            mid_b: Conv2d::init(2 * f, 2 * f, 3, 1, 1, rng),
            t_mid: Linear::init(p.time_dim, 2 * f, rng),
            up: Conv2d::init(2 * f, f, 3, 1, 1, rng),
            dec_a: Conv2d::init(2 * f, f, 3, 1, 1, rng),
            dec_b: Conv2d::init(f, f, 3, 1, 1, rng),
            t_dec: Linear::init(p.time_dim, f, rng),
            // Zero-initialized head: the model starts by predicting zero
            // noise, putting the initial loss at the noise variance.
            out: Conv2d::zeros(f, 3, 3, 1, 1),
        }
    }

    /// `x_t`: [N,3,h,w], `cond`: [N,c_c,h,w], `temb`: [N,time_dim].
    pub fn build(&self, tape: &mut Tape<T>, x_t: Var, cond: Var, temb: Var) -> Var {
        let h0 = tape.concat_ch(x_t, cond);
        let t1 = self.t_enc1.apply(tape, "eps_net.t_enc1", temb);
        let mut e1 = self.enc1a.apply(tape, "eps_net.enc1a", h0);
        e1 = tape.add_bias_ch(e1, t1);
        e1 = tape.leaky_relu(e1, LRELU_SLOPE);
        e1 = self.enc1b.apply(tape, "eps_net.enc1b", e1);
        e1 = tape.leaky_relu(e1, LRELU_SLOPE);

        let t2 = self.t_enc2.apply(tape, "eps_net.t_enc2", temb);
        let mut e2 = self.down.apply(tape, "eps_net.down", e1);
        e2 = tape.add_bias_ch(e2, t2);
        e2 = tape.leaky_relu(e2, LRELU_SLOPE);
        e2 = self.enc2b.apply(tape, "eps_net.enc2b", e2);
        e2 = tape.leaky_relu(e2, LRELU_SLOPE);

        let tm = self.t_mid.apply(tape, "eps_net.t_mid", temb);
        let mut m = self.mid_a.apply(tape, "eps_net.mid_a", e2);
        m = tape.add_bias_ch(m, tm);
        m = tape.leaky_relu(m, LRELU_SLOPE);
        m = self.mid_b.apply(tape, "eps_net.mid_b", m);
        m = tape.add(m, e2);

        let mut u = tape.upsample_nearest(m, 2);
        u = self.up.apply(tape, "eps_net.up", u);
        u = tape.leaky_relu(u, LRELU_SLOPE);
        let cat = tape.concat_ch(u, e1);

        let td = self.t_dec.apply(tape, "eps_net.t_dec", temb);
        let mut d = self.dec_a.apply(tape, "eps_net.dec_a", cat);
        d = tape.add_bias_ch(d, td);
        d = tape.leaky_relu(d, LRELU_SLOPE);
        d = self.dec_b.apply(tape, "eps_net.dec_b", d);
        d = tape.leaky_relu(d, LRELU_SLOPE);
        self.out.apply(tape, "eps_net.out", d)
    }
}

impl<T: Scalar> ParamGroup<T> for EpsNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.enc1a.visit(&format!("{prefix}.enc1a"), f);
        self.enc1b.visit(&format!("{prefix}.enc1b"), f);
        self.t_enc1.visit(&format!("{prefix}.t_enc1"), f);
        self.down.visit(&format!("{prefix}.down"), f);
        self.enc2b.visit(&format!("{prefix}.enc2b"), f);
        self.t_enc2.visit(&format!("{prefix}.t_enc2"), f);
        self.mid_a.visit(&format!("{prefix}.mid_a"), f);
        self.mid_b.visit(&format!("{prefix}.mid_b"), f);
        self.t_mid.visit(&format!("{prefix}.t_mid"), f);
        self.up.visit(&format!("{prefix}.up"), f);
        self.dec_a.visit(&format!("{prefix}.dec_a"), f);
        self.dec_b.visit(&format!("{prefix}.dec_b"), f);
        self.t_dec.visit(&format!("{prefix}.t_dec"), f);
        self.out.visit(&format!("{prefix}.out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.enc1a.visit_mut(&format!("{prefix}.enc1a"), f);
        self.enc1b.visit_mut(&format!("{prefix}.enc1b"), f);
        self.t_enc1.visit_mut(&format!("{prefix}.t_enc1"), f);
        self.down.visit_mut(&format!("{prefix}.down"), f);
        self.enc2b.visit_mut(&format!("{prefix}.enc2b"), f);
        self.t_enc2.visit_mut(&format!("{prefix}.t_enc2"), f);
        self.mid_a.visit_mut(&format!("{prefix}.mid_a"), f);
        self.mid_b.visit_mut(&format!("{prefix}.mid_b"), f);
        self.t_mid.visit_mut(&format!("{prefix}.t_mid"), f);
        self.up.visit_mut(&format!("{prefix}.up"), f);
        self.dec_a.visit_mut(&format!("{prefix}.dec_a"), f);
        self.dec_b.visit_mut(&format!("{prefix}.dec_b"), f);
        self.t_dec.visit_mut(&format!("{prefix}.t_dec"), f);
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }
}

/// Training phase, which decides the trainable-parameter mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    PretrainContent,
    PretrainDegradation,
    DdpmFinetune,
}

/// Prefix of the content-encoder part that stays trainable during DDPM
/// fine-tuning (the first residual block).
pub const FINETUNE_CONTENT_PREFIX: &str = "e_cont.res1.";
/// Prefix of the degradation-encoder part that stays trainable during DDPM
/// fine-tuning (the final mapping layer).
pub const FINETUNE_DEG_PREFIX: &str = "e_deg.map4.";

impl Phase {
    /// Whether a parameter updates in this phase.
    pub fn trainable(&self, name: &str) -> bool {
        match self {
            Phase::PretrainContent => {
                name.starts_with("e_cont.") || name.starts_with("rec_hr.")
            }
            Phase::PretrainDegradation => {
                name.starts_with("e_deg.") || name.starts_with("rec_lr.")
            }
            Phase::DdpmFinetune => {
                name.starts_with("eps_net.")
                    || name.starts_with("modulation.")
                    || name.starts_with(FINETUNE_CONTENT_PREFIX)
                    || name.starts_with(FINETUNE_DEG_PREFIX)
            }
        }
    }

    /// Whether a parameter takes the reduced fine-tuning learning rate.
    pub fn finetuned_extractor(name: &str) -> bool {
        name.starts_with(FINETUNE_CONTENT_PREFIX) || name.starts_with(FINETUNE_DEG_PREFIX)
    }
}

/// The full bundle of model weights.
#[derive(Debug, Clone)]
pub struct Models<T> {
    pub profile: Profile,
    /// Last completed training phase, used to gate phase ordering.
    pub phase: Option<Phase>,
    pub e_cont: ContentEncoder<T>,
    pub e_deg: DegradationEncoder<T>,
    pub rec_hr: HrDecoder<T>,
    pub rec_lr: ModulationStack<T>,
    pub modulation: ModulationStack<T>,
    pub eps_net: EpsNet<T>,
}

impl<T: Scalar> Models<T> {
    /// Deterministic initialization: each network draws from its own stream
    /// of the given seed.
    pub fn init(profile: &Profile, seed: u64) -> Result<Self> {
        profile.validate()?;
        Ok(Models {
            profile: profile.clone(),
            phase: None,
            e_cont: ContentEncoder::init(profile, &mut stream_rng(seed, 10)),
            e_deg: DegradationEncoder::init(profile, &mut stream_rng(seed, 11)),
            rec_hr: HrDecoder::init(profile, &mut stream_rng(seed, 12)),
            rec_lr: ModulationStack::init(profile, 3, &mut stream_rng(seed, 13)),
            modulation: ModulationStack::init(profile, profile.cond_channels, &mut stream_rng(seed, 14)),
            eps_net: EpsNet::init(profile, &mut stream_rng(seed, 15)),
        })
    }

    fn expect_rgb(x: &Tensor<T>, op: &str) -> Result<()> {
        if x.shape().len() != 3 || x.shape()[0] != 3 {
            return Err(Error::Shape(format!(
                "{op}: expected a 3×H×W RGB image, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Bicubic canonicalization to the working LR resolution. Inputs already
    /// at that resolution pass through bit-exactly.
    pub fn canonicalize(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        bicubic_resize(x, self.profile.lr_size, self.profile.lr_size)
    }
}

impl<T: Scalar> ParamGroup<T> for Models<T> {
    fn visit(&self, _prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.e_cont.visit("e_cont", f);
        self.e_deg.visit("e_deg", f);
        self.rec_hr.visit("rec_hr", f);
        self.rec_lr.visit("rec_lr", f);
        self.modulation.visit("modulation", f);
        self.eps_net.visit("eps_net", f);
    }
    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.e_cont.visit_mut("e_cont", f);
        self.e_deg.visit_mut("e_deg", f);
        self.rec_hr.visit_mut("rec_hr", f);
        self.rec_lr.visit_mut("rec_lr", f);
        self.modulation.visit_mut("modulation", f);
        self.eps_net.visit_mut("eps_net", f);
    }
}

/// Extract the content representation of an RGB image. The input is first
/// canonicalized to the working LR resolution, so HR and LR views of one
/// scene produce identically shaped features.
pub fn extract_content<T: Scalar>(models: &Models<T>, x: &Tensor<T>) -> Result<ContentRep<T>> {
    Models::expect_rgb(x, "extract_content")?;
    let source_id = format!("{:016x}", x.content_hash());
    let canon = models.canonicalize(x)?;
    let mut tape = Tape::new();
    let xv = tape.input(canon.insert_batch_dim());
    let f = models.e_cont.build(&mut tape, xv);
    Ok(ContentRep {
        features: tape.value(f).clone().remove_batch_dim(),
        source_id,
    })
}

/// Extract the degradation vector of an LR image at the working resolution.
pub fn extract_degradation<T: Scalar>(
    models: &Models<T>,
    x_lr: &Tensor<T>,
) -> Result<DegradationRep<T>> {
    Models::expect_rgb(x_lr, "extract_degradation")?;
    let lr = models.profile.lr_size;
    x_lr.expect_shape(&[3, lr, lr], "extract_degradation")?;
    let mut tape = Tape::new();
    let xv = tape.input(x_lr.insert_batch_dim());
    let v = models.e_deg.build(&mut tape, xv);
    Ok(DegradationRep {
        vector: tape.value(v).clone().remove_batch_dim(),
    })
}

/// Decode content features back into an HR image, clamped to `[0, 1]`.
pub fn reconstruct_hr<T: Scalar>(models: &Models<T>, f: &ContentRep<T>) -> Result<Tensor<T>> {
    let p = &models.profile;
    f.features
        .expect_shape(&[p.content_channels, p.lr_size, p.lr_size], "reconstruct_hr")?;
    let mut tape = Tape::new();
    let fv = tape.input(f.features.insert_batch_dim());
    let y = models.rec_hr.build(&mut tape, fv);
    let mut img = tape.value(y).clone().remove_batch_dim();
    img.clamp01();
    Ok(img)
}

/// Reconstruct the LR image from a degradation vector and content features,
/// clamped to `[0, 1]`.
pub fn reconstruct_lr<T: Scalar>(
    models: &Models<T>,
    f_deg: &DegradationRep<T>,
    f_cont: &ContentRep<T>,
) -> Result<Tensor<T>> {
    let p = &models.profile;
    f_deg.vector.expect_shape(&[p.deg_dim], "reconstruct_lr")?;
    f_cont
        .features
        .expect_shape(&[p.content_channels, p.lr_size, p.lr_size], "reconstruct_lr")?;
    let mut tape = Tape::new();
    let deg = tape.input(f_deg.vector.insert_batch_dim());
    let cont = tape.input(f_cont.features.insert_batch_dim());
    let y = models.rec_lr.build(&mut tape, "rec_lr", deg, cont);
    let mut img = tape.value(y).clone().remove_batch_dim();
    img.clamp01();
    Ok(img)
}

/// Fuse a degradation vector into content features, producing the diffusion
/// condition.
pub fn modulate<T: Scalar>(
    models: &Models<T>,
    f_deg: &DegradationRep<T>,
    f_cont: &ContentRep<T>,
) -> Result<Condition<T>> {
    let p = &models.profile;
    f_deg.vector.expect_shape(&[p.deg_dim], "modulate")?;
    f_cont
        .features
        .expect_shape(&[p.content_channels, p.lr_size, p.lr_size], "modulate")?;
    let mut tape = Tape::new();
    let deg = tape.input(f_deg.vector.insert_batch_dim());
    let cont = tape.input(f_cont.features.insert_batch_dim());
    let y = models.modulation.build(&mut tape, "modulation", deg, cont);
    Ok(Condition {
        features: tape.value(y).clone().remove_batch_dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, uniform};

    fn mini_profile() -> Profile {
        Profile {
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
        }
    }

    fn image(seed: u64, size: usize) -> Tensor<f64> {
        let mut rng = stream_rng(seed, 0);
        let mut t = Tensor::zeros(&[3, size, size]);
        for v in t.data_mut() {
            *v = uniform::<f64, _>(0.0, 1.0, &mut rng);
        }
        t
    }

    #[test]
    fn init_is_deterministic() {
        let p = mini_profile();
        let a = Models::<f32>::init(&p, 5).unwrap();
        let b = Models::<f32>::init(&p, 5).unwrap();
        let mut equal = true;
        a.visit("", &mut |name, t| {
            let mut found = false;
            b.visit("", &mut |n2, t2| {
                if n2 == name {
                    found = true;
                    if t != t2 {
                        equal = false;
                    }
                }
            });
            assert!(found, "missing {name}");
        });
        assert!(equal);
    }

    #[test]
    fn extract_content_is_deterministic_and_canonicalizes() {
        let p = mini_profile();
        let models = Models::<f64>::init(&p, 1).unwrap();
        let hr = image(1, 16);
        let lr = crate::degrade::bicubic_resize(&hr, 8, 8).unwrap();
        let a = extract_content(&models, &hr).unwrap();
        let b = extract_content(&models, &hr).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.source_id, b.source_id);
        let c = extract_content(&models, &lr).unwrap();
        assert_eq!(a.features.shape(), c.features.shape());
        assert_eq!(a.features.shape(), &[4, 8, 8]);
    }

    #[test]
    fn extract_degradation_shape_contract() {
        let p = mini_profile();
        let models = Models::<f64>::init(&p, 2).unwrap();
        let lr = image(3, 8);
        let rep = extract_degradation(&models, &lr).unwrap();
        assert_eq!(rep.vector.shape(), &[6]);
        let rep2 = extract_degradation(&models, &lr).unwrap();
        assert_eq!(rep.vector, rep2.vector);
        // wrong resolution rejected
        assert!(extract_degradation(&models, &image(4, 16)).is_err());
    }

    #[test]
    fn paper_scale_profile_records_2048_dim() {
        assert_eq!(Profile::paper_scale_record().deg_dim, 2048);
        assert_eq!(Profile::paper_scale_record().deg_blocks, 16);
    }

    #[test]
    fn reconstruct_hr_shape_and_clamp_for_both_scales() {
        for scale in [2usize, 4] {
            let mut p = mini_profile();
            p.scale = scale;
            let models = Models::<f64>::init(&p, 3).unwrap();
            let rep = extract_content(&models, &image(5, 8)).unwrap();
            let hr = reconstruct_hr(&models, &rep).unwrap();
            assert_eq!(hr.shape(), &[3, 8 * scale, 8 * scale]);
            assert!(hr.is_finite());
            assert!(hr.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn reconstruct_lr_shape_and_determinism() {
        let p = mini_profile();
        let models = Models::<f64>::init(&p, 4).unwrap();
        let cont = extract_content(&models, &image(6, 16)).unwrap();
        let deg = extract_degradation(&models, &image(7, 8)).unwrap();
        let a = reconstruct_lr(&models, &deg, &cont).unwrap();
        let b = reconstruct_lr(&models, &deg, &cont).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[3, 8, 8]);
    }

    #[test]
    fn modulate_identity_with_zero_projections_and_sensitivity_otherwise() {
        let p = mini_profile();
        let mut models = Models::<f64>::init(&p, 8).unwrap();
        let cont = extract_content(&models, &image(9, 8)).unwrap();
        let deg_a = extract_degradation(&models, &image(10, 8)).unwrap();
        let deg_b = extract_degradation(&models, &image(11, 8)).unwrap();

        // Non-degenerate weights: different degradation vectors must change
        // the condition.
        let ca = modulate(&models, &deg_a, &cont).unwrap();
        let cb = modulate(&models, &deg_b, &cont).unwrap();
        assert_eq!(ca.features.shape(), &[4, 8, 8]);
        assert!(ca.features.linf_distance(&cb.features) > 0.0);

        // Zero every FiLM projection: the stack collapses to the pure conv
        // path, rebuilt here without any modulation units.
        models.modulation.visit_mut("modulation", &mut |name, t| {
            if name.contains(".proj.") {
                *t = Tensor::zeros(t.shape());
            }
        });
        let cz = modulate(&models, &deg_a, &cont).unwrap();
        let mut tape = Tape::new();
        let mut h = tape.input(cont.features.insert_batch_dim());
        for (i, layer) in models.modulation.layers.iter().enumerate() {
            h = layer.conv.apply(&mut tape, &format!("ref{}", i), h);
            h = tape.leaky_relu(h, LRELU_SLOPE);
        }
        let h = models.modulation.out.apply(&mut tape, "ref_out", h);
        let reference = tape.value(h).clone().remove_batch_dim();
        assert!(cz.features.linf_distance(&reference) < 1e-12);
    }

    #[test]
    fn eps_net_output_matches_input_shape() {
        let p = mini_profile();
        let models = Models::<f64>::init(&p, 12).unwrap();
        let mut tape = Tape::new();
        let x_t = tape.input(normal_tensor(&[2, 3, 8, 8], &mut stream_rng(1, 1)));
        let cond = tape.input(normal_tensor(&[2, 4, 8, 8], &mut stream_rng(1, 2)));
        let temb = tape.input(normal_tensor(&[2, 4], &mut stream_rng(1, 3)));
        let out = models.eps_net.build(&mut tape, x_t, cond, temb);
        assert_eq!(tape.value(out).shape(), &[2, 3, 8, 8]);
    }

    #[test]
    fn phase_masks_cover_expected_prefixes() {
        let ph = Phase::DdpmFinetune;
        assert!(ph.trainable("eps_net.mid_a.w"));
        assert!(ph.trainable("modulation.layer1.conv.w"));
        assert!(ph.trainable("e_cont.res1.c1.w"));
        assert!(ph.trainable("e_deg.map4.b"));
        assert!(!ph.trainable("e_cont.res2.c1.w"));
        assert!(!ph.trainable("e_deg.map3.w"));
        assert!(!ph.trainable("rec_hr.out.w"));
        assert!(Phase::finetuned_extractor("e_cont.res1.c2.b"));
        assert!(!Phase::finetuned_extractor("eps_net.out.w"));
    }
}
