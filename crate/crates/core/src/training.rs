//! Alternating adversarial training: one critic step followed by two
//! encoder/generator steps per cycle, Adam for both sides, weight clipping on
//! the critic.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{generate_synthetic, ingest, split_dataset, CropMode, Dataset, PairBatch, PairSampler, SyntheticSpec};
use crate::error::{validation, Error, Result};
use crate::extractor::{per_item_features, PerceptualExtractor};
use crate::losses::{
    adversarial_grad, adversarial_loss, content_perceptual_grad, content_perceptual_loss, full_objective,
    l1_grad, reconstruction_loss, style_perceptual_grad, style_perceptual_loss, total_variation,
    total_variation_grad, FeatureMaps, LossBundle, LossComponents, LossWeights,
};
use crate::networks::{build_models, ArchitectureConfig, ModelBundle};
use crate::nn::{Adam, Mode, Param};

fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    30
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_clip() -> f64 {
    0.01
}
fn default_content_layers() -> Vec<String> {
    vec!["relu4_2".into()]
}
fn default_style_layers() -> Vec<String> {
    vec!["relu1_1".into(), "relu2_1".into(), "relu3_1".into()]
}
fn default_checkpoint_interval() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_clip")]
    pub clip_constant: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_content_layers")]
    pub content_layers: Vec<String>,
    #[serde(default = "default_style_layers")]
    pub style_layers: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    /// In cycles; 0 disables intermediate checkpoints.
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: usize,
    /// Record wall-clock seconds in the metrics log. Off by default so logs are reproducible.
    #[serde(default)]
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            clip_constant: default_clip(),
            weights: LossWeights::default(),
            content_layers: default_content_layers(),
            style_layers: default_style_layers(),
            seed: 0,
            checkpoint_interval: default_checkpoint_interval(),
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.clip_constant.is_finite() && self.clip_constant > 0.0) {
            return bad(format!("clip_constant must be > 0, got {}", self.clip_constant));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.content_layers.is_empty() || self.style_layers.is_empty() {
            return bad("content_layers and style_layers must be non-empty".into());
        }
        self.weights.validate()
    }

    /// `epochs · floor(n / batch_size)`.
    pub fn cycles_for(&self, n: usize) -> usize {
        self.epochs * (n / self.batch_size)
    }

    fn check_layers(&self, extractor: &dyn PerceptualExtractor) -> Result<()> {
        let known = extractor.layer_names();
        for l in self.content_layers.iter().chain(&self.style_layers) {
            if !known.contains(l) {
                return Err(Error::Config(format!("extractor {} has no layer {l}", extractor.name())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    D,
    #[serde(rename = "eg")]
    EncoderGenerator,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub kind: StepKind,
    pub losses: LossBundle,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|x| *x as f64).sum::<f64>() / v.len() as f64
}

fn diverged(step: u64, component: &str) -> Error {
    Error::Divergence { step: Some(step), component: component.to_string() }
}

fn check_finite(step: u64, component: &str, values: &[f32]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(diverged(step, component))
    }
}

/// `[content half of a; style half of b]` along channels, batched.
fn mix_halves(a: &Array4<f32>, b: &Array4<f32>) -> Array4<f32> {
    let d = a.shape()[1] / 2;
    concatenate(Axis(1), &[a.slice(s![.., ..d, .., ..]), b.slice(s![.., d.., .., ..])]).expect("same latent shape")
}

fn stack_grads(items: Vec<BTreeMap<String, ndarray::Array3<f32>>>, scale: f32) -> BTreeMap<String, Array4<f32>> {
    let mut out: BTreeMap<String, Array4<f32>> = BTreeMap::new();
    let n = items.len();
    for (i, map) in items.into_iter().enumerate() {
        for (layer, g) in map {
            let (c, h, w) = g.dim();
            let slot = out.entry(layer).or_insert_with(|| Array4::zeros((n, c, h, w)));
            slot.slice_mut(s![i, .., .., ..]).scaled_add(scale, &g);
        }
    }
    out
}

fn add_grads(into: &mut BTreeMap<String, Array4<f32>>, from: BTreeMap<String, Array4<f32>>) {
    for (k, v) in from {
        match into.get_mut(&k) {
            Some(e) => *e += &v,
            None => {
                into.insert(k, v);
            }
        }
    }
}

fn union(a: &[String], b: &[String]) -> Vec<String> {
    let mut v: Vec<String> = a.iter().chain(b).cloned().collect();
    v.sort();
    v.dedup();
    v
}

/// Per-item sums of total variation, and the batch gradient scaled by `scale`.
fn tv_terms(batch: &Array4<f32>, scale: f32) -> Result<(Vec<f64>, Array4<f32>)> {
    let mut values = Vec::with_capacity(batch.shape()[0]);
    let mut grad = Array4::zeros(batch.raw_dim());
    for (i, img) in batch.axis_iter(Axis(0)).enumerate() {
        values.push(total_variation(img)? as f64);
        grad.slice_mut(s![i, .., .., ..]).scaled_add(scale, &total_variation_grad(img));
    }
    Ok((values, grad))
}

/// Owns the models and both optimizers for one training run.
pub struct Trainer<'e> {
    pub bundle: ModelBundle,
    pub config: TrainConfig,
    extractor: &'e dyn PerceptualExtractor,
    d_opt: Adam,
    eg_opt: Adam,
    started: Instant,
}

impl<'e> Trainer<'e> {
    pub fn new(bundle: ModelBundle, config: TrainConfig, extractor: &'e dyn PerceptualExtractor) -> Result<Self> {
        config.validate()?;
        config.check_layers(extractor)?;
        let adam = || Adam::new(config.learning_rate as f32, config.adam_beta1 as f32, config.adam_beta2 as f32);
        Ok(Self { d_opt: adam(), eg_opt: adam(), bundle, config, extractor, started: Instant::now() })
    }

    fn check_batch(&self, batch: &PairBatch) -> Result<()> {
        let (c, h, w) = self.bundle.image_shape();
        for (name, x) in [("A", &batch.a), ("B", &batch.b), ("real", &batch.real)] {
            let sh = x.shape();
            if sh[0] == 0 || sh[1..] != [c, h, w] {
                return Err(validation(format!("{name} batch has shape {sh:?}, model expects N×{c}×{h}×{w}")));
            }
        }
        if batch.a.shape() != batch.b.shape() {
            return Err(validation("A and B batches differ in size"));
        }
        Ok(())
    }

    fn finish(&mut self, kind: StepKind, losses: LossBundle, d_real: &[f32], d_fake: &[f32]) -> StepMetrics {
        self.bundle.step += 1;
        StepMetrics {
            step: self.bundle.step,
            kind,
            losses,
            d_real_mean: mean(d_real),
            d_fake_mean: mean(d_fake),
            wall_time: self.config.log_wall_time.then(|| self.started.elapsed().as_secs_f64()),
        }
    }

    /// One Adam ascent step of the critic on `L_A`, then clipping. The
    /// encoder and generator only run forward, with batch statistics and no
    /// running-statistic updates, so they are left untouched.
    pub fn discriminator_step(&mut self, batch: &PairBatch) -> Result<StepMetrics> {
        self.check_batch(batch)?;
        let step = self.bundle.step + 1;
        let b = &mut self.bundle;
        let za = b.encoder.net().infer(&batch.a, Mode::Train);
        let zb = b.encoder.net().infer(&batch.b, Mode::Train);
        let (fake, _) = b.generator.forward(&mix_halves(&za, &zb), Mode::Train);

        let (d_real, tape_real) = b.discriminator.forward(&batch.real, Mode::Train);
        let (d_fake, tape_fake) = b.discriminator.forward(&fake, Mode::Train);
        check_finite(step, "adversarial", &d_real)?;
        check_finite(step, "adversarial", &d_fake)?;
        let l_a = adversarial_loss(&d_real, &d_fake)? as f64;
        let losses = full_objective(LossComponents { adversarial: l_a, ..Default::default() }, &self.config.weights)
            .map_err(|_| diverged(step, "adversarial"))?;

        // Ascent on L_A is descent on −L_A.
        let (g_real, g_fake) = adversarial_grad(&d_real, &d_fake)?;
        let neg = |g: Vec<f32>| g.into_iter().map(|x| -x).collect::<Vec<_>>();
        let d = &mut b.discriminator;
        d.zero_grad();
        d.backward(&tape_real, &neg(g_real));
        d.backward(&tape_fake, &neg(g_fake));
        d.net_mut().update_running_stats(&tape_real);
        d.net_mut().update_running_stats(&tape_fake);
        self.d_opt.step(&mut d.params_mut());
        d.clip_params(self.config.clip_constant as f32);
        Ok(self.finish(StepKind::D, losses, &d_real, &d_fake))
    }

    /// One Adam descent step of encoder and generator on the full objective.
    /// The critic and the extractor only provide input gradients.
    pub fn encoder_generator_step(&mut self, batch: &PairBatch) -> Result<StepMetrics> {
        self.check_batch(batch)?;
        let step = self.bundle.step + 1;
        let w = self.config.weights;
        let n = batch.a.shape()[0];
        let inv_n = 1.0 / n as f32;
        let ex = self.extractor;
        let b = &mut self.bundle;

        let (za, tape_ea) = b.encoder.forward(&batch.a, Mode::Train);
        let (zb, tape_eb) = b.encoder.forward(&batch.b, Mode::Train);
        let (a_rec, tape_ga) = b.generator.forward(&za, Mode::Train);
        let (b_rec, tape_gb) = b.generator.forward(&zb, Mode::Train);
        let (c, tape_gc) = b.generator.forward(&mix_halves(&za, &zb), Mode::Train);

        let (d_fake, tape_d) = b.discriminator.forward(&c, Mode::Train);
        let d_real = b.discriminator.net().infer(&batch.real, Mode::Train);
        let d_real: Vec<f32> = d_real.iter().copied().collect();
        check_finite(step, "adversarial", &d_fake)?;
        check_finite(step, "adversarial", &d_real)?;

        // Perceptual terms.
        let cfg = &self.config;
        let layers = union(&cfg.content_layers, &cfg.style_layers);
        let (feat_c, tape_x) = ex.forward(&c, &layers)?;
        let feat_c = per_item_features(&feat_c, n)?;
        let feat_a = per_item_features(&ex.forward(&batch.a, &cfg.content_layers)?.0, n)?;
        let feat_b = per_item_features(&ex.forward(&batch.b, &cfg.style_layers)?.0, n)?;
        let (mut l_c, mut l_s) = (0.0f64, 0.0f64);
        let (mut gc_items, mut gs_items) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let (fc, fa, fb): (&FeatureMaps, _, _) = (&feat_c[i], &feat_a[i], &feat_b[i]);
            l_c += content_perceptual_loss(fc, fa, &cfg.content_layers)? as f64;
            l_s += style_perceptual_loss(fc, fb, &cfg.style_layers)? as f64;
            if w.lambda2 != 0.0 {
                gc_items.push(content_perceptual_grad(fc, fa, &cfg.content_layers)?);
            }
            if w.lambda3 != 0.0 {
                gs_items.push(style_perceptual_grad(fc, fb, &cfg.style_layers)?);
            }
        }
        let mut feat_grads = stack_grads(gc_items, w.lambda2 as f32 * inv_n);
        add_grads(&mut feat_grads, stack_grads(gs_items, w.lambda3 as f32 * inv_n));

        // Reconstruction and total variation.
        let mut l_r = 0.0f64;
        let mut d_arec = Array4::zeros(a_rec.raw_dim());
        let mut d_brec = Array4::zeros(b_rec.raw_dim());
        for i in 0..n {
            let (ar, a) = (a_rec.slice(s![i, .., .., ..]), batch.a.slice(s![i, .., .., ..]));
            let (br, bb) = (b_rec.slice(s![i, .., .., ..]), batch.b.slice(s![i, .., .., ..]));
            l_r += reconstruction_loss(ar, a, br, bb)? as f64;
            d_arec.slice_mut(s![i, .., .., ..]).scaled_add(w.lambda4 as f32 * inv_n, &l1_grad(ar, a)?);
            d_brec.slice_mut(s![i, .., .., ..]).scaled_add(w.lambda4 as f32 * inv_n, &l1_grad(br, bb)?);
        }
        let tv_scale = w.lambda5 as f32 * inv_n;
        let (tv_c, g_tv_c) = tv_terms(&c, tv_scale)?;
        let (tv_a, g_tv_a) = tv_terms(&a_rec, tv_scale)?;
        let (tv_b, g_tv_b) = tv_terms(&b_rec, tv_scale)?;
        let l_tv = tv_c.iter().chain(&tv_a).chain(&tv_b).sum::<f64>();

        let nf = n as f64;
        let components = LossComponents {
            adversarial: adversarial_loss(&d_real, &d_fake)? as f64,
            content: l_c / nf,
            style: l_s / nf,
            reconstruction: l_r / nf,
            tv: l_tv / nf,
        };
        let losses = full_objective(components, &w).map_err(|e| match e {
            Error::Divergence { component, .. } => diverged(step, &component),
            other => other,
        })?;

        // Gradient of λ1·(−mean D(C)) with respect to C.
        let mut d_c = b.discriminator.input_grad(&tape_d, &vec![-(w.lambda1 as f32) * inv_n; n]);
        if !feat_grads.is_empty() {
            d_c += &ex.input_grad(&tape_x, &feat_grads);
        }
        d_c += &g_tv_c;
        d_arec += &g_tv_a;
        d_brec += &g_tv_b;

        b.encoder.zero_grad();
        b.generator.zero_grad();
        let dz_c = b.generator.backward(&tape_gc, d_c);
        let mut dz_a = b.generator.backward(&tape_ga, d_arec);
        let mut dz_b = b.generator.backward(&tape_gb, d_brec);
        let h = dz_c.shape()[1] / 2;
        *&mut dz_a.slice_mut(s![.., ..h, .., ..]) += &dz_c.slice(s![.., ..h, .., ..]);
        *&mut dz_b.slice_mut(s![.., h.., .., ..]) += &dz_c.slice(s![.., h.., .., ..]);
        b.encoder.backward(&tape_ea, dz_a);
        b.encoder.backward(&tape_eb, dz_b);

        for tape in [&tape_ea, &tape_eb] {
            b.encoder.net_mut().update_running_stats(tape);
        }
        for tape in [&tape_ga, &tape_gb, &tape_gc] {
            b.generator.net_mut().update_running_stats(tape);
        }
        let mut params: Vec<&mut Param> = b.encoder.params_mut();
        params.extend(b.generator.params_mut());
        self.eg_opt.step(&mut params);
        Ok(self.finish(StepKind::EncoderGenerator, losses, &d_real, &d_fake))
    }

    /// One `[D, EG, EG]` cycle on a single sampled batch.
    pub fn cycle(&mut self, batch: &PairBatch) -> Result<[StepMetrics; 3]> {
        Ok([self.discriminator_step(batch)?, self.encoder_generator_step(batch)?, self.encoder_generator_step(batch)?])
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }
    pub fn periodic_checkpoint(&self, cycle: usize) -> PathBuf {
        self.dir.join(format!("model-cycle{cycle:06}.ckpt"))
    }
    pub fn diagnostic_checkpoint(&self) -> PathBuf {
        self.dir.join("diverged.ckpt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub bundle: ModelBundle,
    pub metrics: Vec<StepMetrics>,
}

struct MetricsLog(Option<BufWriter<File>>);

impl MetricsLog {
    fn append(&mut self, m: &StepMetrics) -> Result<()> {
        if let Some(out) = &mut self.0 {
            serde_json::to_writer(&mut *out, m)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
    fn flush(&mut self) -> Result<()> {
        if let Some(out) = &mut self.0 {
            out.flush()?;
        }
        Ok(())
    }
}

/// Trains fresh models on `dataset`. With `outputs`, writes the metrics log,
/// periodic checkpoints and a final checkpoint; on divergence writes a
/// diagnostic checkpoint before returning the error.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    arch: &ArchitectureConfig,
    extractor: &dyn PerceptualExtractor,
    outputs: Option<&TrainOutputs>,
) -> Result<TrainRun> {
    train_with(dataset, config, arch, extractor, outputs, |_, _| Ok(()))
}

/// [`train`] with a hook called after every gradient step.
pub fn train_with<F>(
    dataset: &Dataset,
    config: &TrainConfig,
    arch: &ArchitectureConfig,
    extractor: &dyn PerceptualExtractor,
    outputs: Option<&TrainOutputs>,
    mut on_step: F,
) -> Result<TrainRun>
where
    F: FnMut(&StepMetrics, &ModelBundle) -> Result<()>,
{
    config.validate()?;
    dataset.validate_for_training()?;
    if config.batch_size > dataset.len() {
        return Err(validation(format!(
            "batch_size {} exceeds dataset size {}",
            config.batch_size,
            dataset.len()
        )));
    }
    if dataset.image_size != arch.image_size {
        return Err(validation(format!(
            "dataset image_size {} does not match architecture image_size {}",
            dataset.image_size, arch.image_size
        )));
    }
    let mut trainer = Trainer::new(build_models(arch)?, config.clone(), extractor)?;
    let mut log = MetricsLog(None);
    if let Some(o) = outputs {
        fs::create_dir_all(&o.dir)?;
        log.0 = Some(BufWriter::new(File::create(o.metrics())?));
    }
    let mut sampler = PairSampler::new(config.seed);
    let cycles = config.cycles_for(dataset.len());
    let mut metrics = Vec::with_capacity(cycles * 3);
    log::info!("training {cycles} cycles on {} images", dataset.len());

    for cycle in 1..=cycles {
        let batch = sampler.sample_pairs(dataset, config.batch_size)?;
        for k in 0..3 {
            let result = if k == 0 {
                trainer.discriminator_step(&batch)
            } else {
                trainer.encoder_generator_step(&batch)
            };
            let m = match result {
                Ok(m) => m,
                Err(e) => {
                    log.flush()?;
                    if let (Error::Divergence { .. }, Some(o)) = (&e, outputs) {
                        save_checkpoint(&trainer.bundle, Some(config.seed), &o.diagnostic_checkpoint())?;
                        log::error!("{e}; diagnostic checkpoint at {}", o.diagnostic_checkpoint().display());
                    }
                    return Err(e);
                }
            };
            log.append(&m)?;
            on_step(&m, &trainer.bundle)?;
            metrics.push(m);
        }
        if let Some(o) = outputs {
            if config.checkpoint_interval > 0 && cycle % config.checkpoint_interval == 0 && cycle < cycles {
                log.flush()?;
                save_checkpoint(&trainer.bundle, Some(config.seed), &o.periodic_checkpoint(cycle))?;
            }
        }
        if cycle % 50 == 0 {
            let last = &metrics[metrics.len() - 1].losses;
            log::info!("cycle {cycle}/{cycles}: total {:.4} recon {:.4}", last.total, last.reconstruction);
        }
    }
    log.flush()?;
    if let Some(o) = outputs {
        save_checkpoint(&trainer.bundle, Some(config.seed), &o.checkpoint())?;
    }
    Ok(TrainRun { bundle: trainer.bundle, metrics })
}

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Directory {
        path: PathBuf,
        #[serde(default)]
        crop_mode: CropMode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Items held out from training; 0 trains on everything.
    #[serde(default)]
    pub test_count: usize,
    #[serde(default)]
    pub split_seed: u64,
}

/// The full declarative run description read by `s3gan train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: ArchitectureConfig,
    pub data: DataConfig,
    /// Extractor spec, e.g. `surrogate` or `vgg19:<weights>`.
    #[serde(default = "default_extractor")]
    pub extractor: String,
}

fn default_extractor() -> String {
    "surrogate".into()
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let DataSource::Synthetic(spec) = &self.data.source {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Builds the dataset and applies the configured hold-out split.
    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>)> {
        let full = match &self.data.source {
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
            DataSource::Directory { path, crop_mode } => ingest(path, self.arch.image_size, *crop_mode)?,
        };
        if self.data.test_count == 0 {
            return Ok((full, None));
        }
        let (train, test) = split_dataset(&full, self.data.test_count, self.data.split_seed)?;
        Ok((train, Some(test)))
    }
}
