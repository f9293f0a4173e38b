//! Frozen perceptual feature extractors.
//!
//! An extractor exposes named intermediate activations (`relu1_1`, `relu4_2`,
//! ...) of a fixed convolutional network. Extractors are only ever borrowed
//! immutably, so training cannot change their weights.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array4, ArrayViewD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::TensorFile;
use crate::error::{validation, Error, Result};
use crate::losses::{FeatureMap, FeatureMaps};
use crate::networks::tensor_checksum;
use crate::nn::{Cache, Conv2d, ConvGeom, Layer, Mode};
use crate::tensor::Image;

/// Backward-pass state of one extractor forward pass, one cache list per path.
#[derive(Debug, Clone)]
pub struct FeatureTape {
    caches: Vec<Vec<Cache>>,
}

pub trait PerceptualExtractor: Send + Sync {
    /// Short identifier, e.g. `surrogate` or `vgg19`.
    fn name(&self) -> &str;

    /// Every layer name this extractor can return.
    fn layer_names(&self) -> Vec<String>;

    /// Batched activations for `layers` on unit-range images (`N × 3 × H × W`).
    fn forward(&self, images: &Array4<f32>, layers: &[String]) -> Result<(BTreeMap<String, Array4<f32>>, FeatureTape)>;

    /// Gradient with respect to the input images, given gradients for some of the returned layers.
    fn input_grad(&self, tape: &FeatureTape, grads: &BTreeMap<String, Array4<f32>>) -> Array4<f32>;

    /// Checksum of all weights.
    fn checksum(&self) -> u64;
}

/// Features of a single image, one map per requested layer.
pub fn extract_features(
    extractor: &dyn PerceptualExtractor,
    image: &Image,
    layers: &[String],
) -> Result<FeatureMaps> {
    let batch = image.data().view().insert_axis(Axis(0)).to_owned();
    let (maps, _) = extractor.forward(&batch, layers)?;
    maps.into_iter()
        .map(|(name, m)| FeatureMap::new(name, m.index_axis_move(Axis(0), 0)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

type LayerPath = Vec<(Layer, Option<String>)>;

/// One or more layer chains that all start from the normalized input, with
/// some outputs exposed under names. The input is first normalized per
/// channel with a fixed mean and standard deviation.
#[derive(Debug, Clone)]
struct FeatureStack {
    paths: Vec<LayerPath>,
    mean: [f32; 3],
    std: [f32; 3],
}

impl FeatureStack {
    fn chain(layers: LayerPath, mean: [f32; 3], std: [f32; 3]) -> Self {
        Self { paths: vec![layers], mean, std }
    }

    fn tap(&self, name: &str) -> Option<(usize, usize)> {
        self.paths.iter().enumerate().find_map(|(p, layers)| {
            layers.iter().position(|(_, tap)| tap.as_deref() == Some(name)).map(|i| (p, i))
        })
    }

    fn layer_names(&self) -> Vec<String> {
        self.paths.iter().flatten().filter_map(|(_, t)| t.clone()).collect()
    }

    fn forward(&self, images: &Array4<f32>, layers: &[String]) -> Result<(BTreeMap<String, Array4<f32>>, FeatureTape)> {
        if images.dim().1 != 3 {
            return Err(validation(format!("extractor expects 3-channel input, got {}", images.dim().1)));
        }
        // Deepest requested layer on each path.
        let mut last: Vec<Option<usize>> = vec![None; self.paths.len()];
        for l in layers {
            let (p, idx) = self.tap(l).ok_or_else(|| validation(format!("unknown perceptual layer {l}")))?;
            last[p] = Some(last[p].map_or(idx, |m| m.max(idx)));
        }
        let mut out = BTreeMap::new();
        let mut caches = vec![Vec::new(); self.paths.len()];
        if last.iter().all(Option::is_none) {
            return Ok((out, FeatureTape { caches }));
        }
        let mut input = images.clone();
        for (c, mut plane) in input.axis_iter_mut(Axis(1)).enumerate() {
            let (m, sd) = (self.mean[c], self.std[c]);
            plane.mapv_inplace(|v| (v - m) / sd);
        }
        for (p, path) in self.paths.iter().enumerate() {
            let Some(last) = last[p] else { continue };
            let mut h = input.clone();
            for (layer, tap) in &path[..=last] {
                let (y, cache) = layer.forward(&h, Mode::Eval);
                caches[p].push(cache);
                if let Some(name) = tap {
                    if layers.iter().any(|l| l == name) {
                        out.insert(name.clone(), y.clone());
                    }
                }
                h = y;
            }
        }
        Ok((out, FeatureTape { caches }))
    }

    fn input_grad(&self, tape: &FeatureTape, grads: &BTreeMap<String, Array4<f32>>) -> Array4<f32> {
        let mut total: Option<Array4<f32>> = None;
        for (path, caches) in self.paths.iter().zip(&tape.caches) {
            let mut g: Option<Array4<f32>> = None;
            for i in (0..caches.len()).rev() {
                let (layer, tap) = &path[i];
                if let Some(d) = tap.as_ref().and_then(|t| grads.get(t)) {
                    g = Some(match g {
                        Some(acc) => acc + d,
                        None => d.clone(),
                    });
                }
                if let Some(acc) = g.take() {
                    g = Some(layer.input_grad(&caches[i], &acc));
                }
            }
            if let Some(g) = g {
                total = Some(match total {
                    Some(t) => t + g,
                    None => g,
                });
            }
        }
        let mut g = total.expect("at least one layer gradient supplied");
        for (c, mut plane) in g.axis_iter_mut(Axis(1)).enumerate() {
            let sd = self.std[c];
            plane.mapv_inplace(|v| v / sd);
        }
        g
    }

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f32>)> {
        let mut out = Vec::new();
        for (p, path) in self.paths.iter().enumerate() {
            for (i, (layer, _)) in path.iter().enumerate() {
                if let Layer::Conv(c) = layer {
                    out.push((format!("{p}.{i}.weight"), c.weight.value.view()));
                    if let Some(b) = &c.bias {
                        out.push((format!("{p}.{i}.bias"), b.value.view()));
                    }
                }
            }
        }
        out
    }
}

const SAME3: ConvGeom = ConvGeom::new(3, 1, 1);

/// Small fixed-weight CNN standing in for VGG-19 at desk scale.
///
/// Four 3×3 conv + ReLU blocks with 16/32/64/128 channels, exposed as
/// `relu1_1`, `relu2_1`, `relu3_1` and `relu4_2`. Weights are drawn from a seed.
///
/// Blocks 1 to 3 form a chain with average pooling after blocks 1 and 2; their
/// Gram matrices carry color statistics. Block 4 mimics the color invariance
/// of deep VGG layers: it reads a contrast-normalized structure map of the
/// input (see [`Layer::ContrastNorm`]), pooled to the same 1/4 resolution,
/// through zero-mean kernels. A two-color image therefore gives the same
/// `relu4_2` response whatever its two colors are, so that layer encodes
/// layout only.
#[derive(Debug, Clone)]
pub struct SurrogateExtractor {
    stack: FeatureStack,
    seed: u64,
}

impl SurrogateExtractor {
    pub const LAYERS: [&'static str; 4] = ["relu1_1", "relu2_1", "relu3_1", "relu4_2"];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [3usize, 16, 32, 64];
        let mut trunk = Vec::new();
        for (i, name) in Self::LAYERS[..3].iter().enumerate() {
            let conv = Conv2d::new(widths[i], widths[i + 1], SAME3, true, &mut rng);
            trunk.push((Layer::Conv(conv), None));
            trunk.push((Layer::Relu, Some(name.to_string())));
            if i < 2 {
                trunk.push((Layer::AvgPool, None));
            }
        }
        let mut conv = Conv2d::new(1, 128, SAME3, true, &mut rng);
        zero_spatial_mean(&mut conv);
        let structure = vec![
            (Layer::ContrastNorm, None),
            (Layer::AvgPool, None),
            (Layer::AvgPool, None),
            (Layer::Conv(conv), None),
            (Layer::Relu, Some(Self::LAYERS[3].to_string())),
        ];
        Self {
            stack: FeatureStack { paths: vec![trunk, structure], mean: [0.5; 3], std: [0.5; 3] },
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn zero_spatial_mean(conv: &mut Conv2d) {
    let (cout, cin) = (conv.out_channels(), conv.in_channels());
    let k2 = conv.geom.kernel * conv.geom.kernel;
    let w = conv.weight.value.as_slice_mut().expect("contiguous weight");
    for slice in w.chunks_mut(k2).take(cout * cin) {
        let m = slice.iter().sum::<f32>() / k2 as f32;
        slice.iter_mut().for_each(|v| *v -= m);
    }
}

impl PerceptualExtractor for SurrogateExtractor {
    fn name(&self) -> &str {
        "surrogate"
    }

    fn layer_names(&self) -> Vec<String> {
        self.stack.layer_names()
    }

    fn forward(&self, images: &Array4<f32>, layers: &[String]) -> Result<(BTreeMap<String, Array4<f32>>, FeatureTape)> {
        self.stack.forward(images, layers)
    }

    fn input_grad(&self, tape: &FeatureTape, grads: &BTreeMap<String, Array4<f32>>) -> Array4<f32> {
        self.stack.input_grad(tape, grads)
    }

    fn checksum(&self) -> u64 {
        tensor_checksum(self.stack.tensors())
    }
}

/// VGG-19 convolutional trunk (up to `relu5_4`) with ImageNet input normalization.
#[derive(Debug, Clone)]
pub struct Vgg19Extractor {
    stack: FeatureStack,
}

/// (block, convs per block, output channels)
const VGG19_BLOCKS: [(usize, usize, usize); 5] = [(1, 2, 64), (2, 2, 128), (3, 4, 256), (4, 4, 512), (5, 4, 512)];

impl Vgg19Extractor {
    fn with_convs(mut make: impl FnMut(&str, usize, usize) -> Result<Conv2d>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut cin = 3;
        for (bi, (block, convs, cout)) in VGG19_BLOCKS.iter().enumerate() {
            for k in 1..=*convs {
                let name = format!("conv{block}_{k}");
                layers.push((Layer::Conv(make(&name, cin, *cout)?), None));
                layers.push((Layer::Relu, Some(format!("relu{block}_{k}"))));
                cin = *cout;
            }
            if bi + 1 < VGG19_BLOCKS.len() {
                layers.push((Layer::MaxPool, None));
            }
        }
        Ok(Self {
            stack: FeatureStack::chain(layers, [0.485, 0.456, 0.406], [0.229, 0.224, 0.225]),
        })
    }

    /// VGG-19 topology with seeded random weights (shape checks and smoke tests).
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_convs(|_, cin, cout| Ok(Conv2d::new(cin, cout, SAME3, true, &mut rng))).expect("infallible")
    }

    /// Loads pre-trained weights from a tensor file holding `convB_K.weight`
    /// (`Cout × Cin × 3 × 3`) and `convB_K.bias` for every layer.
    pub fn load(path: &Path) -> Result<Self> {
        let file = TensorFile::read(path)?;
        Self::with_convs(|name, cin, cout| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut conv = Conv2d::new(cin, cout, SAME3, true, &mut rng);
            let w = file.get(&format!("{name}.weight"), &[cout, cin, 3, 3])?;
            let b = file.get(&format!("{name}.bias"), &[cout])?;
            conv.weight.value.assign(&w);
            conv.bias.as_mut().expect("bias enabled").value.assign(&b);
            Ok(conv)
        })
        .map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("VGG-19 weights: {m}")),
            other => other,
        })
    }
}

impl PerceptualExtractor for Vgg19Extractor {
    fn name(&self) -> &str {
        "vgg19"
    }

    fn layer_names(&self) -> Vec<String> {
        self.stack.layer_names()
    }

    fn forward(&self, images: &Array4<f32>, layers: &[String]) -> Result<(BTreeMap<String, Array4<f32>>, FeatureTape)> {
        self.stack.forward(images, layers)
    }

    fn input_grad(&self, tape: &FeatureTape, grads: &BTreeMap<String, Array4<f32>>) -> Array4<f32> {
        self.stack.input_grad(tape, grads)
    }

    fn checksum(&self) -> u64 {
        tensor_checksum(self.stack.tensors())
    }
}

/// Parses an extractor spec: `surrogate`, `surrogate:<seed>`, `vgg19:<weights path>`.
pub fn extractor_from_spec(spec: &str) -> Result<Box<dyn PerceptualExtractor>> {
    let (kind, arg) = spec.split_once(':').map_or((spec, None), |(k, a)| (k, Some(a)));
    match (kind, arg) {
        ("surrogate", None) => Ok(Box::new(SurrogateExtractor::new(0))),
        ("surrogate", Some(seed)) => {
            let seed = seed
                .parse()
                .map_err(|_| validation(format!("surrogate seed must be an integer, got {seed}")))?;
            Ok(Box::new(SurrogateExtractor::new(seed)))
        }
        ("vgg19", Some(path)) => Ok(Box::new(Vgg19Extractor::load(Path::new(path))?)),
        _ => Err(validation(format!(
            "unknown extractor spec {spec}; expected surrogate[:seed] or vgg19:<weights>"
        ))),
    }
}

/// Splits a batch of activations into per-item feature collections.
pub fn per_item_features(batch: &BTreeMap<String, Array4<f32>>, n: usize) -> Result<Vec<FeatureMaps>> {
    (0..n)
        .map(|i| {
            batch
                .iter()
                .map(|(name, a)| FeatureMap::new(name.clone(), a.slice(s![i, .., .., ..]).to_owned()))
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn empty_layer_set_gives_empty_map() {
        let ex = SurrogateExtractor::new(1);
        let img = Image::new(Array3::from_elem((3, 16, 16), 0.3)).unwrap();
        assert!(extract_features(&ex, &img, &[]).unwrap().is_empty());
    }

    #[test]
    fn unknown_layer_rejected() {
        let ex = SurrogateExtractor::new(1);
        let img = Image::new(Array3::from_elem((3, 16, 16), 0.3)).unwrap();
        assert!(extract_features(&ex, &img, &names(&["relu9_9"])).is_err());
    }

    #[test]
    fn surrogate_channels_and_determinism() {
        let ex = SurrogateExtractor::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Image::new(Array3::from_shape_simple_fn((3, 32, 32), || rng.random())).unwrap();
        let layers = names(&SurrogateExtractor::LAYERS);
        let a = extract_features(&ex, &img, &layers).unwrap();
        let b = extract_features(&SurrogateExtractor::new(5), &img, &layers).unwrap();
        assert_eq!(a, b);
        let chans: Vec<usize> = layers.iter().map(|l| a.get(l).unwrap().channels()).collect();
        assert_eq!(chans, vec![16, 32, 64, 128]);
    }

    #[test]
    fn surrogate_input_gradient_matches_finite_differences() {
        let ex = SurrogateExtractor::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array4::from_shape_simple_fn((1, 3, 8, 8), || rng.random::<f32>());
        let layers = names(&["relu1_1", "relu3_1"]);
        let (feats, tape) = ex.forward(&x, &layers).unwrap();
        let probes: BTreeMap<String, Array4<f32>> = feats
            .iter()
            .map(|(k, v)| (k.clone(), Array4::from_shape_simple_fn(v.dim(), || rng.random_range(-1.0..1.0))))
            .collect();
        let probe = |x: &Array4<f32>| -> f64 {
            let (f, _) = ex.forward(x, &layers).unwrap();
            f.iter()
                .map(|(k, v)| v.iter().zip(probes[k].iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum::<f64>())
                .sum()
        };
        let g = ex.input_grad(&tape, &probes);
        let h = 1e-3;
        let mut worst = 0.0f64;
        for idx in [0usize, 17, 64, 100, 150, 191] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (probe(&xp) - probe(&xm)) / (2.0 * h as f64);
            let an = g.as_slice().unwrap()[idx] as f64;
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
        }
        assert!(worst < 2e-2, "worst relative error {worst}");
    }

    #[test]
    fn vgg19_channel_counts() {
        let ex = Vgg19Extractor::random(0);
        let x = Array4::from_elem((1, 3, 32, 32), 0.5f32);
        let layers = names(&["relu1_1", "relu2_1", "relu3_1", "relu4_2"]);
        let (f, _) = ex.forward(&x, &layers).unwrap();
        assert_eq!(f["relu1_1"].dim(), (1, 64, 32, 32));
        assert_eq!(f["relu2_1"].dim(), (1, 128, 16, 16));
        assert_eq!(f["relu3_1"].dim(), (1, 256, 8, 8));
        assert_eq!(f["relu4_2"].dim(), (1, 512, 4, 4));
        assert_eq!(ex.layer_names().len(), 16);
    }

    #[test]
    fn extractor_spec_parsing() {
        assert_eq!(extractor_from_spec("surrogate").unwrap().name(), "surrogate");
        assert_eq!(extractor_from_spec("surrogate:7").unwrap().name(), "surrogate");
        assert!(extractor_from_spec("surrogate:x").is_err());
        assert!(extractor_from_spec("resnet").is_err());
    }
}
