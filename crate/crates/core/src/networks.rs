//! Encoder, generator and critic construction and forward evaluation.
//!
//! All three networks are stacks of 4×4, stride-2 (de)convolutions:
//!
//! * encoder: `depth` × (conv, BatchNorm, LeakyReLU), channels `base·2^i`
//! * generator: mirror image with (deconv, BatchNorm, ReLU), then a 3-channel
//!   deconv with Tanh and no BatchNorm
//! * critic: like the encoder without BatchNorm on the first block, followed by
//!   a fully connected layer to one unbounded score
//!
//! With `depth = log2(image_size) − 2` the latent is always `latent_channels × 4 × 4`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{Array4, ArrayViewD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::latent::LatentVector;
use crate::nn::{BatchNorm2d, Conv2d, ConvGeom, ConvTranspose2d, Layer, Linear, Mode, Param, Sequential, Tape};
use crate::tensor::{stack, Image};

pub use crate::extractor::{extract_features, FeatureTape, PerceptualExtractor, SurrogateExtractor, Vgg19Extractor};

const DOWN: ConvGeom = ConvGeom::new(4, 2, 1);

/// Spatial size of the latent tensor.
pub const LATENT_SPATIAL: usize = 4;

fn default_base_channels() -> usize {
    64
}

fn default_image_size() -> usize {
    128
}

fn default_leaky_slope() -> f32 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    /// Derived from `image_size`; optional in config files.
    #[serde(default)]
    pub depth: Option<usize>,
    /// Derived from `base_channels` and `depth`; optional in config files.
    #[serde(default)]
    pub latent_channels: Option<usize>,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f32,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self::new(default_image_size(), default_base_channels(), 0)
    }
}

impl ArchitectureConfig {
    pub fn new(image_size: usize, base_channels: usize, seed: u64) -> Self {
        let mut cfg = Self {
            image_size,
            base_channels,
            depth: None,
            latent_channels: None,
            leaky_slope: default_leaky_slope(),
            seed,
        };
        if cfg.derived_depth().is_some() {
            cfg.depth = Some(cfg.depth());
            cfg.latent_channels = Some(cfg.latent_channels());
        }
        cfg
    }

    fn derived_depth(&self) -> Option<usize> {
        let s = self.image_size;
        (s >= 16 && s.is_power_of_two()).then(|| s.trailing_zeros() as usize - 2)
    }

    /// Number of stride-2 blocks.
    pub fn depth(&self) -> usize {
        self.derived_depth().unwrap_or(0)
    }

    /// Channels of the full latent tensor (`2d`).
    pub fn latent_channels(&self) -> usize {
        self.base_channels << self.depth().saturating_sub(1)
    }

    /// Encoder output channels per block.
    pub fn channel_progression(&self) -> Vec<usize> {
        (0..self.depth()).map(|i| self.base_channels << i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(depth) = self.derived_depth() else {
            return Err(Error::Config(format!(
                "image_size must be a power of two >= 16, got {}",
                self.image_size
            )));
        };
        if depth < 2 {
            return Err(Error::Config("depth must be at least 2".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.latent_channels() % 2 != 0 {
            return Err(Error::Config("latent_channels must be even".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky_slope must be finite and >= 0".into()));
        }
        if let Some(d) = self.depth {
            if d != depth {
                return Err(Error::Config(format!("depth {d} inconsistent with image_size (expected {depth})")));
            }
        }
        if let Some(l) = self.latent_channels {
            if l != self.latent_channels() {
                return Err(Error::Config(format!(
                    "latent_channels {l} inconsistent with base_channels/depth (expected {})",
                    self.latent_channels()
                )));
            }
        }
        Ok(())
    }
}

/// Checksum over names and exact bit patterns of a tensor list.
pub fn tensor_checksum<'a, I>(tensors: I) -> u64
where
    I: IntoIterator<Item = (String, ArrayViewD<'a, f32>)>,
{
    let mut h = DefaultHasher::new();
    for (name, t) in tensors {
        name.hash(&mut h);
        t.shape().hash(&mut h);
        for v in t.iter() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

macro_rules! network_common {
    ($ty:ident) => {
        impl $ty {
            pub fn net(&self) -> &Sequential {
                &self.net
            }

            pub fn net_mut(&mut self) -> &mut Sequential {
                &mut self.net
            }

            pub fn params_mut(&mut self) -> Vec<&mut Param> {
                self.net.params_mut().into_iter().map(|(_, p)| p).collect()
            }

            pub fn zero_grad(&mut self) {
                self.net.zero_grad();
            }

            /// Checksum of parameters and running statistics.
            pub fn checksum(&self) -> u64 {
                tensor_checksum(self.net.tensors())
            }
        }
    };
}

/// Image → latent.
#[derive(Debug, Clone)]
pub struct Encoder {
    net: Sequential,
}
network_common!(Encoder);

impl Encoder {
    fn build(cfg: &ArchitectureConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Sequential::new();
        let mut cin = 3;
        for (i, cout) in cfg.channel_progression().into_iter().enumerate() {
            net.push(format!("block{i}.conv"), Layer::Conv(Conv2d::new(cin, cout, DOWN, false, rng)));
            net.push(format!("block{i}.bn"), Layer::BatchNorm(BatchNorm2d::new(cout)));
            net.push(format!("block{i}.act"), Layer::LeakyRelu(cfg.leaky_slope));
            cin = cout;
        }
        Self { net }
    }

    pub fn forward(&self, images: &Array4<f32>, mode: Mode) -> (Array4<f32>, Tape) {
        self.net.forward(images, mode)
    }

    pub fn backward(&mut self, tape: &Tape, d_latent: Array4<f32>) {
        self.net.backward(tape, d_latent);
    }
}

/// Latent → unit-range image.
#[derive(Debug, Clone)]
pub struct Generator {
    net: Sequential,
}
network_common!(Generator);

impl Generator {
    fn build(cfg: &ArchitectureConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Sequential::new();
        let mut channels = cfg.channel_progression();
        channels.reverse();
        for (i, pair) in channels.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            net.push(format!("block{i}.deconv"), Layer::Deconv(ConvTranspose2d::new(cin, cout, DOWN, false, rng)));
            net.push(format!("block{i}.bn"), Layer::BatchNorm(BatchNorm2d::new(cout)));
            net.push(format!("block{i}.act"), Layer::Relu);
        }
        let last = *channels.last().expect("depth >= 2");
        net.push("out.deconv", Layer::Deconv(ConvTranspose2d::new(last, 3, DOWN, true, rng)));
        net.push("out.act", Layer::Tanh);
        Self { net }
    }

    /// Generates unit-range images; the Tanh output `y` is mapped to `(y + 1) / 2`.
    pub fn forward(&self, latents: &Array4<f32>, mode: Mode) -> (Array4<f32>, Tape) {
        let (raw, tape) = self.net.forward(latents, mode);
        (tanh_to_unit(raw), tape)
    }

    /// Backpropagates a gradient with respect to the unit-range output; returns the latent gradient.
    pub fn backward(&mut self, tape: &Tape, d_unit: Array4<f32>) -> Array4<f32> {
        self.net.backward(tape, d_unit * 0.5)
    }
}

/// Maps Tanh output in `[-1, 1]` to `[0, 1]`.
pub fn tanh_to_unit(mut raw: Array4<f32>) -> Array4<f32> {
    raw.mapv_inplace(|y| ((y + 1.0) * 0.5).clamp(0.0, 1.0));
    raw
}

/// Wasserstein critic: image → unbounded scalar score.
#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Sequential,
}
network_common!(Discriminator);

impl Discriminator {
    fn build(cfg: &ArchitectureConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Sequential::new();
        let mut cin = 3;
        for (i, cout) in cfg.channel_progression().into_iter().enumerate() {
            net.push(format!("block{i}.conv"), Layer::Conv(Conv2d::new(cin, cout, DOWN, i == 0, rng)));
            if i > 0 {
                net.push(format!("block{i}.bn"), Layer::BatchNorm(BatchNorm2d::new(cout)));
            }
            net.push(format!("block{i}.act"), Layer::LeakyRelu(cfg.leaky_slope));
            cin = cout;
        }
        net.push("flatten", Layer::Flatten);
        let features = cin * LATENT_SPATIAL * LATENT_SPATIAL;
        net.push("fc", Layer::Linear(Linear::new(features, 1, rng)));
        Self { net }
    }

    /// Scores per image plus the tape for backpropagation.
    pub fn forward(&self, images: &Array4<f32>, mode: Mode) -> (Vec<f32>, Tape) {
        let (out, tape) = self.net.forward(images, mode);
        (out.iter().copied().collect(), tape)
    }

    /// Accumulates parameter gradients for per-score gradients `d_scores`.
    pub fn backward(&mut self, tape: &Tape, d_scores: &[f32]) {
        self.net.backward(tape, scores_to_array(d_scores));
    }

    /// Gradient of the scores with respect to the input images; parameters untouched.
    pub fn input_grad(&self, tape: &Tape, d_scores: &[f32]) -> Array4<f32> {
        self.net.input_grad(tape, scores_to_array(d_scores))
    }

    /// Clamps every parameter into `[-c, c]`.
    pub fn clip_params(&mut self, c: f32) {
        for p in self.params_mut() {
            p.value.mapv_inplace(|w| w.clamp(-c, c));
        }
    }

    /// Largest absolute parameter value.
    pub fn max_abs_param(&self) -> f32 {
        self.net
            .params()
            .iter()
            .flat_map(|(_, p)| p.value.iter())
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

fn scores_to_array(d: &[f32]) -> Array4<f32> {
    Array4::from_shape_vec((d.len(), 1, 1, 1), d.to_vec()).expect("one score per item")
}

/// Encoder, generator and critic together with their architecture.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub encoder: Encoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub config: ArchitectureConfig,
    /// Number of gradient steps taken so far.
    pub step: u64,
}

/// Builds all three networks with Glorot-Gaussian weights drawn from `config.seed`.
pub fn build_models(config: &ArchitectureConfig) -> Result<ModelBundle> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let encoder = Encoder::build(config, &mut rng);
    let generator = Generator::build(config, &mut rng);
    let discriminator = Discriminator::build(config, &mut rng);
    let mut config = config.clone();
    config.depth = Some(config.depth());
    config.latent_channels = Some(config.latent_channels());
    Ok(ModelBundle { encoder, generator, discriminator, config, step: 0 })
}

impl ModelBundle {
    pub fn image_shape(&self) -> (usize, usize, usize) {
        (3, self.config.image_size, self.config.image_size)
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (self.config.latent_channels(), LATENT_SPATIAL, LATENT_SPATIAL)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.data().dim() != self.image_shape() {
            return Err(validation(format!(
                "image shape {:?} does not match model input {:?}",
                image.data().dim(),
                self.image_shape()
            )));
        }
        Ok(())
    }

    pub fn encode_batch(&self, images: &[Image]) -> Result<Vec<LatentVector>> {
        for img in images {
            self.check_image(img)?;
        }
        let batch = stack(images.iter().map(|i| i.data().view()))?;
        let z = self.encoder.net.infer(&batch, Mode::Eval);
        z.axis_iter(Axis(0)).map(|v| LatentVector::new(v.to_owned())).collect()
    }

    pub fn generate_batch(&self, latents: &[LatentVector]) -> Result<Vec<Image>> {
        for z in latents {
            if z.shape() != self.latent_shape() {
                return Err(validation(format!(
                    "latent shape {:?} does not match model latent {:?}",
                    z.shape(),
                    self.latent_shape()
                )));
            }
        }
        let batch = stack(latents.iter().map(|z| z.data().view()))?;
        let out = tanh_to_unit(self.generator.net.infer(&batch, Mode::Eval));
        Ok(out.axis_iter(Axis(0)).map(|v| Image::from_unit_unchecked(v.to_owned())).collect())
    }

    pub fn discriminate_batch(&self, images: &[Image]) -> Result<Vec<f32>> {
        for img in images {
            self.check_image(img)?;
        }
        let batch = stack(images.iter().map(|i| i.data().view()))?;
        Ok(self.discriminator.net.infer(&batch, Mode::Eval).iter().copied().collect())
    }

    /// Named parameters and running statistics of all three networks.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f32>)> {
        let mut out = Vec::new();
        for (prefix, net) in [
            ("encoder", &self.encoder.net),
            ("generator", &self.generator.net),
            ("discriminator", &self.discriminator.net),
        ] {
            out.extend(net.tensors().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f32>)> {
        let mut out = Vec::new();
        for (prefix, net) in [
            ("encoder", &mut self.encoder.net),
            ("generator", &mut self.generator.net),
            ("discriminator", &mut self.discriminator.net),
        ] {
            out.extend(net.tensors_mut().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    pub fn checksum(&self) -> u64 {
        tensor_checksum(self.tensors())
    }
}

/// Image → latent (inference mode).
pub fn encode(bundle: &ModelBundle, image: &Image) -> Result<LatentVector> {
    Ok(bundle.encode_batch(std::slice::from_ref(image))?.remove(0))
}

/// Latent → unit-range image (inference mode).
pub fn generate(bundle: &ModelBundle, latent: &LatentVector) -> Result<Image> {
    Ok(bundle.generate_batch(std::slice::from_ref(latent))?.remove(0))
}

/// Critic score of one image (inference mode).
pub fn discriminate(bundle: &ModelBundle, image: &Image) -> Result<f32> {
    Ok(bundle.discriminate_batch(std::slice::from_ref(image))?[0])
}
