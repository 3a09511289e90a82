//! Training loops for both networks, resumable training state, evaluation
//! helpers and the ablation harness.
//!
//! All randomness is drawn from streams keyed by the configured seed:
//! parameter initialisation, sample selection and augmentation each have
//! their own stream, and the sampling stream position is saved with the
//! training state so a resumed run continues the same sequence.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::compositor::{crop_window, CompositeSample, CropConfig, TrainingCube};
use crate::encoder::{EncoderConfig, Preset};
use crate::error::{Error, Result};
use crate::image::{stack_rgb, stack_rgb_trimap, RgbImage, Trimap};
use crate::losses::{total_loss_with_grad, LossBatch, LossBreakdown, LossWeights};
use crate::matting_net::{MattingConfig, MattingNet};
use crate::metrics::{aggregate, evaluate, MetricReport};
use crate::morphology::make_trimap;
use crate::nn::ParamStore;
use crate::optim::{Adam, LrSchedule};
use crate::rng::derive_rng;
use crate::stfam::{FusionKind, SkipFusion, SpatialAttention, StfamConfig};
use crate::tensor::Tensor;
use crate::trimap_prop::{pick_reference, pixel_agreement, PropagationConfig, TrimapNet};

const STREAM_INIT: u64 = 0x1000;
const STREAM_SAMPLING: u64 = 0x2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetKind {
    Trimap,
    Matting,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::Trimap => "trimap",
            NetKind::Matting => "matting",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "trimap" => Ok(NetKind::Trimap),
            "matting" => Ok(NetKind::Matting),
            other => Err(Error::Config(format!("unknown network `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecayPolicy {
    /// Linear from the initial to the final rate over all epochs.
    Linear,
    /// Initial rate for `hold` epochs, then multiplied by `rate` every epoch.
    HoldThenDecay { hold: usize, rate: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetKind,
    pub preset: Preset,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub decay: DecayPolicy,
    pub n: usize,
    pub crop_size: usize,
    /// Crop sides drawn uniformly before resizing to `crop_size`.
    pub crop_scales: Vec<usize>,
    pub flip_probability: f64,
    /// Inclusive range of trimap structuring-element sizes.
    pub trimap_kernel: (usize, usize),
    pub trimap_iterations: (usize, usize),
    /// Fixed trimap parameters for evaluation.
    pub eval_kernel: usize,
    pub eval_iterations: usize,
    pub loss_weights: LossWeights,
    pub fusion: FusionKind,
    pub tfa: bool,
    pub tff: bool,
    pub spatial_attention: SpatialAttention,
    /// Overrides the preset's encoder stage widths when non-empty (single-block stages).
    pub encoder_widths: Vec<usize>,
    /// Maximum per-channel colour gain deviation in propagation training.
    pub color_jitter: f64,
}

impl TrainConfig {
    fn base(net: NetKind, preset: Preset) -> Self {
        Self {
            net,
            preset,
            seed: 0,
            epochs: 1,
            steps_per_epoch: 1,
            batch_size: 1,
            learning_rate: 1e-3,
            final_learning_rate: 1e-3,
            decay: DecayPolicy::Linear,
            n: 2,
            crop_size: 96,
            crop_scales: vec![96, 144, 192],
            flip_probability: 0.5,
            trimap_kernel: (2, 3),
            trimap_iterations: (1, 3),
            eval_kernel: 2,
            eval_iterations: 3,
            loss_weights: LossWeights::default(),
            fusion: FusionKind::Stfam,
            tfa: true,
            tff: true,
            spatial_attention: SpatialAttention::Computed,
            encoder_widths: Vec::new(),
            color_jitter: 0.1,
        }
    }

    /// Propagation recipe at full scale: 75 epochs, batch 4, rate 1e-3 → 1e-4.
    pub fn trimap_paper() -> Self {
        Self {
            epochs: 75,
            steps_per_epoch: 1000,
            batch_size: 4,
            learning_rate: 1e-3,
            final_learning_rate: 1e-4,
            decay: DecayPolicy::Linear,
            crop_size: 320,
            crop_scales: vec![320],
            trimap_kernel: (2, 5),
            trimap_iterations: (5, 15),
            eval_kernel: 3,
            eval_iterations: 10,
            ..Self::base(NetKind::Trimap, Preset::Paper)
        }
    }

    /// Matting recipe at full scale: 100 epochs, batch 1, `n = 2`, rate
    /// 5e-5 held for 20 epochs then decayed by 0.98 per epoch.
    pub fn matting_paper() -> Self {
        Self {
            epochs: 100,
            steps_per_epoch: 1000,
            batch_size: 1,
            learning_rate: 5e-5,
            final_learning_rate: 5e-5,
            decay: DecayPolicy::HoldThenDecay { hold: 20, rate: 0.98 },
            n: 2,
            crop_size: 320,
            crop_scales: vec![320, 480, 640],
            trimap_kernel: (2, 5),
            trimap_iterations: (5, 15),
            eval_kernel: 3,
            eval_iterations: 10,
            ..Self::base(NetKind::Matting, Preset::Paper)
        }
    }

    /// 500 steps of batch 4 on 96×96 crops.
    pub fn trimap_toy() -> Self {
        Self {
            epochs: 5,
            steps_per_epoch: 100,
            batch_size: 4,
            learning_rate: 1e-3,
            final_learning_rate: 1e-4,
            decay: DecayPolicy::Linear,
            crop_scales: vec![96],
            ..Self::base(NetKind::Trimap, Preset::Toy)
        }
    }

    /// 1500 steps on 96×96 crops with `n = 2`.
    pub fn matting_toy() -> Self {
        Self {
            epochs: 15,
            steps_per_epoch: 100,
            learning_rate: 1e-3,
            final_learning_rate: 1e-3,
            decay: DecayPolicy::HoldThenDecay { hold: 5, rate: 0.9 },
            ..Self::base(NetKind::Matting, Preset::Toy)
        }
    }

    pub fn preset(net: NetKind, preset: Preset) -> Self {
        match (net, preset) {
            (NetKind::Trimap, Preset::Toy) => Self::trimap_toy(),
            (NetKind::Trimap, Preset::Paper) => Self::trimap_paper(),
            (NetKind::Matting, Preset::Toy) => Self::matting_toy(),
            (NetKind::Matting, Preset::Paper) => Self::matting_paper(),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn schedule(&self) -> LrSchedule {
        match self.decay {
            DecayPolicy::Linear => LrSchedule::Linear { start: self.learning_rate, end: self.final_learning_rate, epochs: self.epochs },
            DecayPolicy::HoldThenDecay { hold, rate } => LrSchedule::HoldThenDecay { start: self.learning_rate, hold, rate },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps per epoch and batch size must be positive");
        }
        let rates_ok = |r: f64| r.is_finite() && r > 0.0;
        if !rates_ok(self.learning_rate) || !rates_ok(self.final_learning_rate) {
            return bad("learning rates must be positive and finite");
        }
        if let DecayPolicy::HoldThenDecay { rate, .. } = self.decay {
            if !(rate > 0.0 && rate <= 1.0) {
                return bad("decay rate must lie in (0, 1]");
            }
        }
        if self.crop_size == 0 || self.crop_scales.is_empty() || self.crop_scales.contains(&0) {
            return bad("crop size and crop scales must be positive and non-empty");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip probability must lie in [0, 1]");
        }
        let (k0, k1) = self.trimap_kernel;
        let (i0, i1) = self.trimap_iterations;
        if k0 == 0 || k0 > k1 || i0 > i1 {
            return bad("trimap kernel and iteration ranges must be non-empty with kernel ≥ 1");
        }
        if self.eval_kernel == 0 {
            return bad("evaluation trimap kernel must be at least 1");
        }
        if !(0.0..1.0).contains(&self.color_jitter) {
            return bad("colour jitter must lie in [0, 1)");
        }
        for (name, w) in [
            ("alpha", self.loss_weights.alpha),
            ("composition", self.loss_weights.composition),
            ("gradient", self.loss_weights.gradient),
            ("kl", self.loss_weights.kl),
            ("temporal", self.loss_weights.temporal),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("loss weight `{name}` must be finite and non-negative")));
            }
        }
        let stride = self.encoder_config(3).total_stride();
        if self.crop_size % stride != 0 {
            return Err(Error::Config(format!("crop size {} must be a multiple of the encoder stride {stride}", self.crop_size)));
        }
        match self.net {
            NetKind::Matting => self.matting_config().validate(),
            NetKind::Trimap => self.propagation_config().validate(),
        }
    }

    fn encoder_config(&self, in_channels: usize) -> EncoderConfig {
        if !self.encoder_widths.is_empty() {
            return EncoderConfig::narrow(in_channels, &self.encoder_widths);
        }
        match (self.net, self.preset) {
            (_, Preset::Toy) => EncoderConfig::toy(in_channels),
            (NetKind::Matting, Preset::Paper) => EncoderConfig::resnet50(in_channels),
            (NetKind::Trimap, Preset::Paper) => EncoderConfig::resnet34(in_channels),
        }
    }

    pub fn matting_config(&self) -> MattingConfig {
        let mut c = if self.encoder_widths.is_empty() {
            MattingConfig::for_preset(self.preset, self.n)
        } else {
            MattingConfig::with_encoder(self.encoder_config(4), self.n)
        };
        c.fusion = self.fusion;
        c.tfa = self.tfa;
        c.tff = self.tff;
        c.spatial_attention = self.spatial_attention;
        c
    }

    pub fn propagation_config(&self) -> PropagationConfig {
        PropagationConfig { encoder: self.encoder_config(3) }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let err = || Error::Config(format!("invalid value `{v}` for `{key}`"));
        let usize_of = |s: &str| s.trim().parse::<usize>().map_err(|_| err());
        let f64_of = |s: &str| s.trim().parse::<f64>().map_err(|_| err());
        let bool_of = |s: &str| match s.trim() {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            _ => Err(err()),
        };
        let list_of = |s: &str| -> Result<Vec<usize>> {
            if s.trim().is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(usize_of).collect()
        };
        match key {
            "net" => self.net = NetKind::from_name(v)?,
            "preset" => self.preset = Preset::from_name(v)?,
            "seed" => self.seed = v.parse().map_err(|_| err())?,
            "train.epochs" => self.epochs = usize_of(v)?,
            "train.steps_per_epoch" => self.steps_per_epoch = usize_of(v)?,
            "train.batch_size" => self.batch_size = usize_of(v)?,
            "train.n" => self.n = usize_of(v)?,
            "train.crop_size" => self.crop_size = usize_of(v)?,
            "train.crop_scales" => self.crop_scales = list_of(v)?,
            "train.flip_probability" => self.flip_probability = f64_of(v)?,
            "train.color_jitter" => self.color_jitter = f64_of(v)?,
            "lr.initial" => self.learning_rate = f64_of(v)?,
            "lr.final" => self.final_learning_rate = f64_of(v)?,
            "lr.policy" => {
                self.decay = match v {
                    "linear" => DecayPolicy::Linear,
                    "hold-decay" => match self.decay {
                        DecayPolicy::HoldThenDecay { .. } => self.decay,
                        DecayPolicy::Linear => DecayPolicy::HoldThenDecay { hold: 20, rate: 0.98 },
                    },
                    _ => return Err(err()),
                }
            }
            "lr.hold_epochs" | "lr.decay_rate" => {
                let (mut hold, mut rate) = match self.decay {
                    DecayPolicy::HoldThenDecay { hold, rate } => (hold, rate),
                    DecayPolicy::Linear => (20, 0.98),
                };
                if key == "lr.hold_epochs" {
                    hold = usize_of(v)?;
                } else {
                    rate = f64_of(v)?;
                }
                self.decay = DecayPolicy::HoldThenDecay { hold, rate };
            }
            "trimap.kernel_min" => self.trimap_kernel.0 = usize_of(v)?,
            "trimap.kernel_max" => self.trimap_kernel.1 = usize_of(v)?,
            "trimap.iterations_min" => self.trimap_iterations.0 = usize_of(v)?,
            "trimap.iterations_max" => self.trimap_iterations.1 = usize_of(v)?,
            "eval.kernel" => self.eval_kernel = usize_of(v)?,
            "eval.iterations" => self.eval_iterations = usize_of(v)?,
            "loss.alpha" => self.loss_weights.alpha = f64_of(v)?,
            "loss.composition" => self.loss_weights.composition = f64_of(v)?,
            "loss.gradient" => self.loss_weights.gradient = f64_of(v)?,
            "loss.kl" => self.loss_weights.kl = f64_of(v)?,
            "loss.temporal" => self.loss_weights.temporal = f64_of(v)?,
            "model.fusion" => self.fusion = FusionKind::from_name(v)?,
            "model.tfa" => self.tfa = bool_of(v)?,
            "model.tff" => self.tff = bool_of(v)?,
            "model.spatial_attention" => {
                self.spatial_attention = match v {
                    "computed" => SpatialAttention::Computed,
                    "map" => SpatialAttention::ParameterMap,
                    _ => return Err(err()),
                }
            }
            "model.encoder_widths" => self.encoder_widths = list_of(v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Every setting as `(key, value)`; feeding them back through [`TrainConfig::set`] reproduces the config.
    pub fn entries(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut e: Vec<(&str, String)> = vec![
            ("net", self.net.name().into()),
            ("preset", self.preset.name().into()),
            ("seed", self.seed.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.steps_per_epoch", self.steps_per_epoch.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.n", self.n.to_string()),
            ("train.crop_size", self.crop_size.to_string()),
            ("train.crop_scales", list(&self.crop_scales)),
            ("train.flip_probability", format!("{:?}", self.flip_probability)),
            ("train.color_jitter", format!("{:?}", self.color_jitter)),
            ("lr.initial", format!("{:?}", self.learning_rate)),
            ("lr.final", format!("{:?}", self.final_learning_rate)),
        ];
        match self.decay {
            DecayPolicy::Linear => e.push(("lr.policy", "linear".into())),
            DecayPolicy::HoldThenDecay { hold, rate } => {
                e.push(("lr.policy", "hold-decay".into()));
                e.push(("lr.hold_epochs", hold.to_string()));
                e.push(("lr.decay_rate", format!("{rate:?}")));
            }
        }
        e.extend([
            ("trimap.kernel_min", self.trimap_kernel.0.to_string()),
            ("trimap.kernel_max", self.trimap_kernel.1.to_string()),
            ("trimap.iterations_min", self.trimap_iterations.0.to_string()),
            ("trimap.iterations_max", self.trimap_iterations.1.to_string()),
            ("eval.kernel", self.eval_kernel.to_string()),
            ("eval.iterations", self.eval_iterations.to_string()),
            ("loss.alpha", format!("{:?}", self.loss_weights.alpha)),
            ("loss.composition", format!("{:?}", self.loss_weights.composition)),
            ("loss.gradient", format!("{:?}", self.loss_weights.gradient)),
            ("loss.kl", format!("{:?}", self.loss_weights.kl)),
            ("loss.temporal", format!("{:?}", self.loss_weights.temporal)),
            ("model.fusion", self.fusion.name().into()),
            ("model.tfa", self.tfa.to_string()),
            ("model.tff", self.tff.to_string()),
            (
                "model.spatial_attention",
                match self.spatial_attention {
                    SpatialAttention::Computed => "computed".into(),
                    SpatialAttention::ParameterMap => "map".into(),
                },
            ),
            ("model.encoder_widths", list(&self.encoder_widths)),
        ]);
        e.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Parameters, optimiser moments and progress of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore<f32>,
    pub optimizer: Adam<f32>,
    /// Completed optimisation steps.
    pub step: usize,
    /// Position of the sampling stream.
    pub rng_word_pos: u128,
    pub last_loss: f64,
}

impl Checkpoint {
    pub fn epoch(&self) -> usize {
        self.step / self.config.steps_per_epoch.max(1)
    }

    pub fn matting_net(&self) -> Result<MattingNet> {
        let (net, fresh) = build_matting(&self.config)?;
        check_layout(&fresh, &self.params)?;
        Ok(net)
    }

    pub fn trimap_net(&self) -> Result<TrimapNet> {
        let (net, fresh) = build_trimap(&self.config)?;
        check_layout(&fresh, &self.params)?;
        Ok(net)
    }
}

fn check_layout(expected: &ParamStore<f32>, actual: &ParamStore<f32>) -> Result<()> {
    let same = expected.len() == actual.len()
        && expected.iter().zip(actual.iter()).all(|((n0, t0), (n1, t1))| n0 == n1 && t0.shape() == t1.shape());
    if same {
        Ok(())
    } else {
        Err(Error::Config("stored parameters do not match the configured architecture".into()))
    }
}

/// Freshly initialised matting network for a configuration.
pub fn build_matting(config: &TrainConfig) -> Result<(MattingNet, ParamStore<f32>)> {
    let mut store = ParamStore::new();
    let mut rng = derive_rng(config.seed, STREAM_INIT);
    let net = MattingNet::new(&mut store, &config.matting_config(), &mut rng)?;
    Ok((net, store))
}

/// Freshly initialised propagation network for a configuration.
pub fn build_trimap(config: &TrainConfig) -> Result<(TrimapNet, ParamStore<f32>)> {
    let mut store = ParamStore::new();
    let mut rng = derive_rng(config.seed, STREAM_INIT);
    let net = TrimapNet::new(&mut store, &config.propagation_config(), &mut rng)?;
    Ok((net, store))
}

/// Aggregator for one decoder level, selected by name (`stfam`, `naive`, `cross-attention`).
pub fn fusion_variant<R: Rng + ?Sized>(name: &str, store: &mut ParamStore<f32>, config: &StfamConfig, rng: &mut R) -> Result<SkipFusion> {
    let kind = FusionKind::from_name(name)?;
    SkipFusion::new(store, &format!("fusion.{name}"), kind, config, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Per-term values for the matting network.
    pub terms: Option<LossBreakdown<f64>>,
}

fn start_state(config: &TrainConfig, net: NetKind, resume: Option<Checkpoint>, fresh: ParamStore<f32>) -> Result<(ParamStore<f32>, Adam<f32>, usize, ChaCha8Rng)> {
    config.validate()?;
    if config.net != net {
        return Err(Error::Config(format!("configuration is for the {} network", config.net.name())));
    }
    let mut rng = derive_rng(config.seed, STREAM_SAMPLING);
    match resume {
        Some(ck) => {
            check_layout(&fresh, &ck.params)?;
            if ck.optimizer.m.len() != ck.params.len() {
                return Err(Error::Config("optimiser state does not match parameters".into()));
            }
            rng.set_word_pos(ck.rng_word_pos);
            Ok((ck.params, ck.optimizer, ck.step, rng))
        }
        None => {
            let adam = Adam::new(&fresh);
            Ok((fresh, adam, 0, rng))
        }
    }
}

fn random_trimaps<R: Rng + ?Sized>(sample: &CompositeSample, frames: &[usize], config: &TrainConfig, rng: &mut R) -> Result<Vec<Trimap>> {
    let kernel = rng.gen_range(config.trimap_kernel.0..=config.trimap_kernel.1);
    let iterations = rng.gen_range(config.trimap_iterations.0..=config.trimap_iterations.1);
    let (h, w) = (sample.composite.height(), sample.composite.width());
    let mut out = vec![Trimap::filled(h, w, crate::image::TrimapClass::Background); sample.len()];
    for &f in frames {
        out[f] = make_trimap(&sample.alpha.frames()[f], kernel, iterations)?;
    }
    Ok(out)
}

/// Draws a matting cube with two consecutive targets (one for single-frame clips).
fn draw_cube<R: Rng + ?Sized>(data: &[CompositeSample], config: &TrainConfig, rng: &mut R) -> Result<(TrainingCube, usize)> {
    let crop = CropConfig { scales: config.crop_scales.clone(), flip_probability: config.flip_probability };
    for _ in 0..64 {
        let sample = &data[rng.gen_range(0..data.len())];
        let len = sample.len();
        let targets = if len >= 2 { 2 } else { 1 };
        let t = rng.gen_range(0..=len - targets);
        let before = config.n;
        let after = config.n + targets - 1;
        let frames = crate::compositor::window_indices(t, before, after, len);
        let trimaps = random_trimaps(sample, &frames, config, rng)?;
        let window = before + after + 1;
        let cube = if len >= window {
            crop_window(sample, &trimaps, t, before, after, config.crop_size, &crop, rng)
        } else {
            short_clip_cube(sample, &trimaps, t, before, after, config, &crop, rng)
        };
        match cube {
            Ok(c) => return Ok((c, targets)),
            Err(Error::SkipSample(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidInput("no training sample with an unknown region was found".into()))
}

/// Clips shorter than the window are padded by end replication before cropping.
#[allow(clippy::too_many_arguments)]
fn short_clip_cube<R: Rng + ?Sized>(
    sample: &CompositeSample,
    trimaps: &[Trimap],
    t: usize,
    before: usize,
    after: usize,
    config: &TrainConfig,
    crop: &CropConfig,
    rng: &mut R,
) -> Result<TrainingCube> {
    let idx = crate::compositor::window_indices(t, before, after, sample.len());
    let pick_rgb = |c: &crate::image::Clip| crate::image::Clip::new(idx.iter().map(|&i| c.frames()[i].clone()).collect(), c.fps);
    let padded = CompositeSample {
        fg: pick_rgb(&sample.fg)?,
        bg: pick_rgb(&sample.bg)?,
        composite: pick_rgb(&sample.composite)?,
        alpha: crate::image::AlphaClip::new(idx.iter().map(|&i| sample.alpha.frames()[i].clone()).collect())?,
        track: crate::compositor::AffineTrack { poses: idx.iter().map(|&i| sample.track.poses[i]).collect() },
        motion: crate::image::MotionField { pairs: Vec::new() },
    };
    let tri: Vec<Trimap> = idx.iter().map(|&i| trimaps[i].clone()).collect();
    let mut cube = crop_window(&padded, &tri, before, before, after, config.crop_size, crop, rng)?;
    cube.frame_indices = idx;
    Ok(cube)
}

fn flat(images: &[&RgbImage]) -> Vec<f32> {
    images.iter().flat_map(|i| i.data().iter().copied()).collect()
}

/// Forward, loss and gradient for a batch of cubes; returns summed breakdown scaled by `1/B`.
fn matting_step(net: &MattingNet, params: &ParamStore<f32>, cubes: &[(TrainingCube, usize)], weights: &LossWeights) -> Result<(LossBreakdown<f64>, Vec<Option<Tensor<f32>>>)> {
    let n = net.config().n;
    let mut g = Graph::new(params);
    let mut frames = Vec::new();
    let mut windows = Vec::new();
    let mut spans = Vec::new();
    for (cube, targets) in cubes {
        let base = frames.len();
        for (img, tri) in cube.composite.iter().zip(&cube.trimaps) {
            frames.push((img, tri));
        }
        let first = windows.len();
        for j in 0..*targets {
            windows.push((0..2 * n + 1).map(|i| base + j + i).collect::<Vec<_>>());
        }
        spans.push((first, *targets));
    }
    let input = g.constant(stack_rgb_trimap(&frames)?);
    let alpha = net.forward(&mut g, input, &windows)?;
    let scale = 1.0 / cubes.len() as f64;
    let mut total = None;
    let mut sum = LossBreakdown::<f64>::default();
    for ((cube, targets), &(first, count)) in cubes.iter().zip(&spans) {
        let idx: Vec<usize> = (first..first + count).collect();
        let pred = g.index_batch(alpha, &idx);
        let tsel: Vec<usize> = (n..n + targets).collect();
        let (h, w) = (cube.alpha[0].height(), cube.alpha[0].width());
        let batch = LossBatch {
            frames: *targets,
            height: h,
            width: w,
            pred: g.value(pred).data().to_vec(),
            gt: tsel.iter().flat_map(|&t| cube.alpha[t].data().iter().copied()).collect(),
            fg: flat(&tsel.iter().map(|&t| &cube.fg[t]).collect::<Vec<_>>()),
            bg: flat(&tsel.iter().map(|&t| &cube.bg[t]).collect::<Vec<_>>()),
            composite: flat(&tsel.iter().map(|&t| &cube.composite[t]).collect::<Vec<_>>()),
            mask: tsel.iter().flat_map(|&t| cube.trimaps[t].unknown_mask()).collect(),
        };
        let (b, grad) = total_loss_with_grad(&batch, weights)?;
        let grad: Vec<f32> = grad.iter().map(|&v| v * scale as f32).collect();
        let term = g.precomputed(pred, b.total * scale as f32, Tensor::from_vec(g.shape(pred), grad)?);
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
        sum.alpha += b.alpha as f64 * scale;
        sum.composition += b.composition as f64 * scale;
        sum.gradient += b.gradient as f64 * scale;
        sum.kl += b.kl as f64 * scale;
        sum.temporal += b.temporal as f64 * scale;
        sum.total += b.total as f64 * scale;
        sum.kl_degenerate |= b.kl_degenerate;
    }
    let root = total.expect("non-empty batch");
    let grads = g.backward(root).into_params();
    Ok((sum, grads))
}

fn grads_finite(grads: &[Option<Tensor<f32>>]) -> bool {
    grads.iter().flatten().all(|t| t.is_finite())
}

/// Trains the matting network on synthetic samples, optionally resuming.
pub fn train_matting(config: &TrainConfig, data: &[CompositeSample], resume: Option<Checkpoint>, log: &mut dyn FnMut(&StepLog)) -> Result<Checkpoint> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let (net, fresh) = build_matting(config)?;
    let (mut params, mut adam, start, mut rng) = start_state(config, NetKind::Matting, resume, fresh)?;
    let schedule = config.schedule();
    let mut last = f64::NAN;
    for step in start..config.total_steps() {
        let epoch = step / config.steps_per_epoch;
        let lr = schedule.at(epoch);
        let cubes = (0..config.batch_size).map(|_| draw_cube(data, config, &mut rng)).collect::<Result<Vec<_>>>()?;
        let (breakdown, grads) = matting_step(&net, &params, &cubes, &config.loss_weights)?;
        if !breakdown.total.is_finite() || !grads_finite(&grads) {
            return Err(Error::Diverged { step, detail: format!("loss {}", breakdown.total) });
        }
        adam.update(&mut params, &grads, lr);
        last = breakdown.total;
        log(&StepLog { step, epoch, lr, loss: last, terms: Some(breakdown) });
    }
    Ok(Checkpoint { config: config.clone(), params, optimizer: adam, step: config.total_steps().max(start), rng_word_pos: rng.get_word_pos(), last_loss: last })
}

/// Reference/target crops for one propagation training pair.
struct PropagationPair {
    reference: (RgbImage, Trimap),
    target: RgbImage,
    labels: Vec<u8>,
}

fn crop_rgb(img: &RgbImage, top: usize, left: usize, size: usize, flip: bool, gain: [f32; 3]) -> Result<RgbImage> {
    let w = img.width();
    let mut data = Vec::with_capacity(3 * size * size);
    for (c, &gc) in gain.iter().enumerate() {
        let plane = img.channel(c);
        for y in 0..size {
            for x in 0..size {
                let xs = if flip { size - 1 - x } else { x };
                data.push((plane[(top + y) * w + left + xs] * gc).clamp(0.0, 1.0));
            }
        }
    }
    RgbImage::new(size, size, data)
}

fn crop_tri(t: &Trimap, top: usize, left: usize, size: usize, flip: bool) -> Result<Trimap> {
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let xs = if flip { size - 1 - x } else { x };
            data.push(t.get(top + y, left + xs));
        }
    }
    Trimap::new(size, size, data)
}

fn draw_pair<R: Rng + ?Sized>(data: &[CompositeSample], config: &TrainConfig, rng: &mut R) -> Result<PropagationPair> {
    let sample = &data[rng.gen_range(0..data.len())];
    let len = sample.len();
    let r = rng.gen_range(0..len);
    let t = if len > 1 {
        let o = rng.gen_range(0..len - 1);
        if o >= r {
            o + 1
        } else {
            o
        }
    } else {
        r
    };
    let trimaps = random_trimaps(sample, &[r, t], config, rng)?;
    let (h, w) = (sample.composite.height(), sample.composite.width());
    let size = config.crop_size;
    if size > h || size > w {
        return Err(Error::Config(format!("crop size {size} exceeds frame size {h}x{w}")));
    }
    let top = rng.gen_range(0..=h - size);
    let left = rng.gen_range(0..=w - size);
    let flip = rng.gen_bool(config.flip_probability);
    let j = config.color_jitter as f32;
    let mut gain = [1.0f32; 3];
    if j > 0.0 {
        gain.iter_mut().for_each(|g| *g = rng.gen_range(1.0 - j..=1.0 + j));
    }
    let frames = sample.composite.frames();
    let ref_tri = crop_tri(&trimaps[r], top, left, size, flip)?;
    let tgt_tri = crop_tri(&trimaps[t], top, left, size, flip)?;
    Ok(PropagationPair {
        reference: (crop_rgb(&frames[r], top, left, size, flip, gain)?, ref_tri),
        target: crop_rgb(&frames[t], top, left, size, flip, gain)?,
        labels: tgt_tri.labels(),
    })
}

/// Trains the propagation network with per-pixel cross-entropy, optionally resuming.
pub fn train_trimap(config: &TrainConfig, data: &[CompositeSample], resume: Option<Checkpoint>, log: &mut dyn FnMut(&StepLog)) -> Result<Checkpoint> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let (net, fresh) = build_trimap(config)?;
    let (mut params, mut adam, start, mut rng) = start_state(config, NetKind::Trimap, resume, fresh)?;
    let schedule = config.schedule();
    let mut last = f64::NAN;
    for step in start..config.total_steps() {
        let epoch = step / config.steps_per_epoch;
        let lr = schedule.at(epoch);
        let pairs = (0..config.batch_size).map(|_| draw_pair(data, config, &mut rng)).collect::<Result<Vec<_>>>()?;
        let (loss, grads) = {
            let mut g = Graph::new(&params);
            let refs: Vec<(&RgbImage, &Trimap)> = pairs.iter().map(|p| (&p.reference.0, &p.reference.1)).collect();
            let tgts: Vec<&RgbImage> = pairs.iter().map(|p| &p.target).collect();
            let r = g.constant(stack_rgb_trimap(&refs)?);
            let t = g.constant(stack_rgb(&tgts));
            let logits = net.forward(&mut g, r, t)?;
            let labels: Vec<u8> = pairs.iter().flat_map(|p| p.labels.iter().copied()).collect();
            let loss = g.cross_entropy(logits, &labels);
            let value = g.value(loss).data()[0] as f64;
            (value, g.backward(loss).into_params())
        };
        if !loss.is_finite() || !grads_finite(&grads) {
            return Err(Error::Diverged { step, detail: format!("cross-entropy {loss}") });
        }
        adam.update(&mut params, &grads, lr);
        last = loss;
        log(&StepLog { step, epoch, lr, loss, terms: None });
    }
    Ok(Checkpoint { config: config.clone(), params, optimizer: adam, step: config.total_steps().max(start), rng_word_pos: rng.get_word_pos(), last_loss: last })
}

/// Groundtruth trimaps of every frame with fixed morphology parameters.
pub fn eval_trimaps(sample: &CompositeSample, kernel: usize, iterations: usize) -> Result<Vec<Trimap>> {
    sample.alpha.frames().iter().map(|a| make_trimap(a, kernel, iterations)).collect()
}

/// Mean pixel agreement when every frame propagates its own trimap to itself.
pub fn self_propagation_accuracy(net: &TrimapNet, params: &ParamStore<f32>, data: &[CompositeSample], kernel: usize, iterations: usize) -> Result<f64> {
    let mut acc = Vec::new();
    for sample in data {
        let tris = eval_trimaps(sample, kernel, iterations)?;
        for (img, tri) in sample.composite.frames().iter().zip(&tris) {
            let out = net.propagate(params, (img, tri), img)?;
            acc.push(pixel_agreement(&out, tri));
        }
    }
    if acc.is_empty() {
        return Err(Error::InvalidInput("no frames to evaluate".into()));
    }
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

/// How many frames of a clip carry a user trimap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrimapSetting {
    Full,
    /// Every `k`-th frame, starting with the first.
    EveryNth(usize),
    Single,
}

impl TrimapSetting {
    /// `full`/`full-trimap`, `<k>-frame`, `1-trimap`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "full" | "full-trimap" => Ok(TrimapSetting::Full),
            "1-trimap" => Ok(TrimapSetting::Single),
            other => other
                .strip_suffix("-frame")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k > 0)
                .map(TrimapSetting::EveryNth)
                .ok_or_else(|| Error::Config(format!("unknown trimap setting `{other}`"))),
        }
    }

    pub fn labeled(self, len: usize) -> Vec<usize> {
        match self {
            TrimapSetting::Full => (0..len).collect(),
            TrimapSetting::EveryNth(k) => (0..len).step_by(k).collect(),
            TrimapSetting::Single => vec![0],
        }
    }
}

/// Trimaps for all frames: labelled frames keep theirs, the rest propagate from the nearest labelled frame.
pub fn propagate_clip(net: &TrimapNet, params: &ParamStore<f32>, frames: &[RgbImage], trimaps: &[Option<Trimap>]) -> Result<Vec<Trimap>> {
    let labeled: Vec<usize> = trimaps.iter().enumerate().filter(|(_, t)| t.is_some()).map(|(i, _)| i).collect();
    (0..frames.len())
        .map(|t| match &trimaps[t] {
            Some(tri) => Ok(tri.clone()),
            None => {
                let r = pick_reference(t, &labeled)?;
                net.propagate(params, (&frames[r], trimaps[r].as_ref().expect("labelled")), &frames[t])
            }
        })
        .collect()
}

/// Metrics of the matting network on a test set, the mask being each frame's
/// groundtruth unknown region. `input_trimaps` supplies the network's trimaps per sample.
pub fn evaluate_matting(
    net: &MattingNet,
    params: &ParamStore<f32>,
    data: &[CompositeSample],
    input_trimaps: &mut dyn FnMut(usize, &CompositeSample, &[Trimap]) -> Result<Vec<Trimap>>,
    kernel: usize,
    iterations: usize,
) -> Result<MetricReport> {
    let mut reports = Vec::with_capacity(data.len());
    for (i, sample) in data.iter().enumerate() {
        let gt = eval_trimaps(sample, kernel, iterations)?;
        let input = input_trimaps(i, sample, &gt)?;
        let pred = net.predict_clip(params, &sample.composite, &input)?;
        let mask: Vec<Vec<bool>> = gt.iter().map(Trimap::unknown_mask).collect();
        reports.push(evaluate(&pred, &sample.alpha, &mask, Some(&sample.motion))?);
    }
    aggregate(&reports).ok_or_else(|| Error::InvalidInput("test set is empty".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    /// basic / +TFA / +TFA+TFF
    AlignFuse,
    /// `n=1` … `n=4`
    Window,
    /// naive-fusion / cross-attention-fusion / stfam
    Fusion,
    /// full-trimap / `<k>-frame` / 1-trimap
    TrimapSetting,
}

impl AblationKind {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            AblationKind::AlignFuse | AblationKind::Fusion => &["SAD", "MSE", "dtSSD"],
            AblationKind::Window => &["SAD", "MSE", "Grad", "dtSSD", "MESSDdt"],
            AblationKind::TrimapSetting => &["SAD", "MSE", "Grad", "Conn"],
        }
    }

    pub fn default_variants(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblationKind::AlignFuse => &["basic", "+TFA", "+TFA+TFF"],
            AblationKind::Window => &["n=1", "n=2", "n=3", "n=4"],
            AblationKind::Fusion => &["naive-fusion", "cross-attention-fusion", "stfam"],
            AblationKind::TrimapSetting => &["full-trimap", "20-frame", "40-frame", "1-trimap"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

pub struct AblationSpec {
    pub kind: AblationKind,
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub matting: TrainConfig,
    /// Propagation training recipe, used by the trimap-setting table.
    pub trimap: TrainConfig,
    pub train_set: Vec<CompositeSample>,
    pub test_set: Vec<CompositeSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub per_seed: Vec<MetricReport>,
    /// Per-metric median over seeds.
    pub median: MetricReport,
}

impl AblationRow {
    pub fn value(&self, column: &str) -> Option<f64> {
        metric_column(&self.median, column)
    }
}

pub fn metric_column(r: &MetricReport, column: &str) -> Option<f64> {
    match column {
        "SAD" => Some(r.sad),
        "MSE" => Some(r.mse),
        "Grad" => Some(r.grad),
        "Conn" => Some(r.conn),
        "dtSSD" => r.dtssd,
        "MESSDdt" => r.messddt,
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Matting configuration of a variant in the architecture tables.
pub fn apply_variant(kind: AblationKind, variant: &str, base: &TrainConfig) -> Result<TrainConfig> {
    let mut c = base.clone();
    let unknown = || Error::Config(format!("unknown variant `{variant}` for this table"));
    match kind {
        AblationKind::AlignFuse => {
            let (tfa, tff) = match variant {
                "basic" => (false, false),
                "+TFA" => (true, false),
                "+TFA+TFF" => (true, true),
                _ => return Err(unknown()),
            };
            c.fusion = FusionKind::Stfam;
            c.tfa = tfa;
            c.tff = tff;
        }
        AblationKind::Window => {
            c.n = variant.strip_prefix("n=").and_then(|v| v.parse().ok()).ok_or_else(unknown)?;
        }
        AblationKind::Fusion => {
            c.fusion = match variant {
                "naive-fusion" => FusionKind::Naive,
                "cross-attention-fusion" => FusionKind::CrossAttention,
                "stfam" | "ST-FAM" => FusionKind::Stfam,
                _ => return Err(unknown()),
            };
        }
        AblationKind::TrimapSetting => {
            TrimapSetting::from_name(variant)?;
        }
    }
    c.validate()?;
    Ok(c)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-metric median of several reports.
pub fn median_report(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let col = |f: fn(&MetricReport) -> f64| median(reports.iter().map(f).collect());
    let opt = |f: fn(&MetricReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| median(v))
    };
    Some(MetricReport {
        sad: col(|r| r.sad),
        mse: col(|r| r.mse),
        grad: col(|r| r.grad),
        conn: col(|r| r.conn),
        dtssd: opt(|r| r.dtssd),
        messddt: opt(|r| r.messddt),
        frames: reports[0].frames,
        masked_pixels: reports[0].masked_pixels,
    })
}

/// Trains and evaluates every variant for every seed and tabulates per-seed
/// reports with their medians. `progress` receives one line per finished run.
pub fn run_ablation(spec: &AblationSpec, progress: &mut dyn FnMut(&str)) -> Result<AblationTable> {
    if spec.seeds.is_empty() || spec.variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    if spec.train_set.is_empty() || spec.test_set.is_empty() {
        return Err(Error::InvalidInput("ablation needs non-empty train and test sets".into()));
    }
    let configs = spec.variants.iter().map(|v| apply_variant(spec.kind, v, &spec.matting)).collect::<Result<Vec<_>>>()?;
    let (k, it) = (spec.matting.eval_kernel, spec.matting.eval_iterations);
    let mut per_variant: Vec<Vec<MetricReport>> = vec![Vec::new(); spec.variants.len()];
    for &seed in &spec.seeds {
        if spec.kind == AblationKind::TrimapSetting {
            let mut mc = spec.matting.clone();
            mc.seed = seed;
            let matting = train_matting(&mc, &spec.train_set, None, &mut |_| {})?;
            let mnet = matting.matting_net()?;
            let mut tc = spec.trimap.clone();
            tc.seed = seed;
            let trimap = train_trimap(&tc, &spec.train_set, None, &mut |_| {})?;
            let tnet = trimap.trimap_net()?;
            for (vi, variant) in spec.variants.iter().enumerate() {
                let setting = TrimapSetting::from_name(variant)?;
                let report = evaluate_matting(
                    &mnet,
                    &matting.params,
                    &spec.test_set,
                    &mut |_, s, gt| {
                        let labeled = setting.labeled(s.len());
                        let given: Vec<Option<Trimap>> = (0..s.len()).map(|t| labeled.contains(&t).then(|| gt[t].clone())).collect();
                        propagate_clip(&tnet, &trimap.params, s.composite.frames(), &given)
                    },
                    k,
                    it,
                )?;
                progress(&format!("seed {seed} {variant}: SAD {:.4}", report.sad));
                per_variant[vi].push(report);
            }
        } else {
            for (vi, cfg) in configs.iter().enumerate() {
                let mut c = cfg.clone();
                c.seed = seed;
                let ck = train_matting(&c, &spec.train_set, None, &mut |_| {})?;
                let net = ck.matting_net()?;
                let report = evaluate_matting(&net, &ck.params, &spec.test_set, &mut |_, _, gt| Ok(gt.to_vec()), k, it)?;
                progress(&format!("seed {seed} {}: SAD {:.4} dtSSD {:.4}", spec.variants[vi], report.sad, report.dtssd.unwrap_or(f64::NAN)));
                per_variant[vi].push(report);
            }
        }
    }
    let rows = spec
        .variants
        .iter()
        .zip(per_variant)
        .map(|(v, reports)| AblationRow { variant: v.clone(), median: median_report(&reports).expect("seeds"), per_seed: reports })
        .collect();
    Ok(AblationTable { kind: spec.kind, columns: spec.kind.columns().iter().map(|s| s.to_string()).collect(), rows })
}

/// Procedural dataset of `count` samples keyed by `seed`.
pub fn toy_dataset(cfg: &crate::compositor::SynthesisConfig, seed: u64, count: usize) -> Result<Vec<CompositeSample>> {
    (0..count as u64).map(|i| crate::compositor::synthesize_procedural(cfg, seed, i)).collect()
}
