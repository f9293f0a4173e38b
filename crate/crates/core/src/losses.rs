//! Loss terms of the training objective and their analytic gradients.
//!
//! Everything here is a pure function generic over the float type, so the
//! same code serves training (`f32`) and gradient verification (`f64`).
//! Perceptual losses are raw sums of squares with no per-element
//! normalization; the objective weights absorb the magnitude.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::iter::Sum;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Float types the losses are defined over.
pub trait Real: Float + LinalgScalar + ScalarOperand + Sum + Debug + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

/// Activations `C × H × W` taken from one named layer of the perceptual network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F = f32> {
    layer: String,
    data: Array3<F>,
}

impl<F: Real> FeatureMap<F> {
    pub fn new(layer: impl Into<String>, data: Array3<F>) -> Result<Self> {
        let layer = layer.into();
        if data.shape().iter().any(|d| *d == 0) {
            return Err(validation(format!("feature map {layer} has an empty dimension")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(validation(format!("feature map {layer} has non-finite values")));
        }
        Ok(Self { layer, data })
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn data(&self) -> &Array3<F> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    /// The map as a `C × (H·W)` matrix.
    fn as_matrix(&self) -> ArrayView2<'_, F> {
        let (c, h, w) = self.data.dim();
        self.data
            .view()
            .into_shape_with_order((c, h * w))
            .expect("feature maps are stored contiguously")
    }
}

/// Named collection of feature maps produced by one extractor pass over one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps<F = f32> {
    entries: BTreeMap<String, FeatureMap<F>>,
}

impl<F> Default for FeatureMaps<F> {
    fn default() -> Self {
        Self { entries: BTreeMap::new() }
    }
}

impl<F: Real> FeatureMaps<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, map: FeatureMap<F>) {
        self.entries.insert(map.layer.clone(), map);
    }

    pub fn get(&self, layer: &str) -> Option<&FeatureMap<F>> {
        self.entries.get(layer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FeatureMap<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn require(&self, layer: &str, side: &str) -> Result<&FeatureMap<F>> {
        self.get(layer)
            .ok_or_else(|| validation(format!("{side} features are missing layer {layer}")))
    }
}

impl<F: Real> FromIterator<FeatureMap<F>> for FeatureMaps<F> {
    fn from_iter<I: IntoIterator<Item = FeatureMap<F>>>(iter: I) -> Self {
        let mut maps = Self::new();
        for m in iter {
            maps.insert(m);
        }
        maps
    }
}

/// Uncentered channel covariance `C × C` of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<F = f32>(Array2<F>);

impl<F: Real> GramMatrix<F> {
    pub fn data(&self) -> &Array2<F> {
        &self.0
    }
}

/// `G[c, c'] = Σ_{h,w} P[c,h,w]·P[c',h,w] / (C·H·W)`.
pub fn gram_matrix<F: Real>(features: &FeatureMap<F>) -> Result<GramMatrix<F>> {
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(validation("gram matrix input is not finite"));
    }
    let m = features.as_matrix();
    let norm = F::from(features.data.len()).expect("size fits float");
    let mut g = m.dot(&m.t()) / norm;
    // the product is symmetric mathematically; make it bitwise so
    let c = g.nrows();
    for i in 0..c {
        for j in (i + 1)..c {
            g[[j, i]] = g[[i, j]];
        }
    }
    Ok(GramMatrix(g))
}

/// Gradient of a scalar through [`gram_matrix`]: `(dG + dGᵀ)·P / (C·H·W)`.
pub fn gram_matrix_backward<F: Real>(features: &FeatureMap<F>, d_gram: ArrayView2<F>) -> Array3<F> {
    let m = features.as_matrix();
    let norm = F::from(features.data.len()).expect("size fits float");
    let sym = &d_gram + &d_gram.t();
    let dp = sym.dot(&m) / norm;
    dp.into_shape_with_order(features.data.raw_dim()).expect("element count preserved")
}

fn matching_pair<'a, F: Real>(
    generated: &'a FeatureMaps<F>,
    target: &'a FeatureMaps<F>,
    layer: &str,
) -> Result<(&'a FeatureMap<F>, &'a FeatureMap<F>)> {
    Ok((generated.require(layer, "generated")?, target.require(layer, "target")?))
}

/// `Σ_l ‖P_l(gen) − P_l(target)‖²` over `layers`.
pub fn content_perceptual_loss<F: Real>(
    generated: &FeatureMaps<F>,
    target: &FeatureMaps<F>,
    layers: &[String],
) -> Result<F> {
    let mut total = F::zero();
    for layer in layers {
        let (g, t) = matching_pair(generated, target, layer)?;
        if g.data.dim() != t.data.dim() {
            return Err(validation(format!(
                "content layer {layer}: shape {:?} vs {:?}",
                g.data.dim(),
                t.data.dim()
            )));
        }
        total = total + g.data.iter().zip(t.data.iter()).map(|(a, b)| (*a - *b).powi(2)).sum();
    }
    Ok(total)
}

/// Gradient of [`content_perceptual_loss`] with respect to the generated features.
pub fn content_perceptual_grad<F: Real>(
    generated: &FeatureMaps<F>,
    target: &FeatureMaps<F>,
    layers: &[String],
) -> Result<BTreeMap<String, Array3<F>>> {
    let two = F::one() + F::one();
    let mut grads = BTreeMap::new();
    for layer in layers {
        let (g, t) = matching_pair(generated, target, layer)?;
        if g.data.dim() != t.data.dim() {
            return Err(validation(format!("content layer {layer}: shape mismatch")));
        }
        let d = (&g.data - &t.data) * two;
        accumulate(&mut grads, layer, d);
    }
    Ok(grads)
}

fn accumulate<F: Real>(grads: &mut BTreeMap<String, Array3<F>>, layer: &str, d: Array3<F>) {
    match grads.get_mut(layer) {
        Some(existing) => existing.zip_mut_with(&d, |e, v| *e = *e + *v),
        None => {
            grads.insert(layer.to_string(), d);
        }
    }
}

fn gram_pair<F: Real>(
    generated: &FeatureMaps<F>,
    style: &FeatureMaps<F>,
    layer: &str,
) -> Result<(GramMatrix<F>, GramMatrix<F>)> {
    let (g, s) = matching_pair(generated, style, layer)?;
    if g.channels() != s.channels() {
        return Err(validation(format!(
            "style layer {layer}: {} channels vs {}",
            g.channels(),
            s.channels()
        )));
    }
    Ok((gram_matrix(g)?, gram_matrix(s)?))
}

/// `Σ_l ‖ψ_l(gen) − ψ_l(style)‖_F²` over `layers`.
pub fn style_perceptual_loss<F: Real>(
    generated: &FeatureMaps<F>,
    style: &FeatureMaps<F>,
    layers: &[String],
) -> Result<F> {
    let mut total = F::zero();
    for layer in layers {
        let (gg, gs) = gram_pair(generated, style, layer)?;
        total = total + gram_distance(&gg, &gs);
    }
    Ok(total)
}

/// Squared Frobenius distance between two Gram matrices.
pub fn gram_distance<F: Real>(a: &GramMatrix<F>, b: &GramMatrix<F>) -> F {
    a.0.iter().zip(b.0.iter()).map(|(x, y)| (*x - *y).powi(2)).sum()
}

/// Gradient of [`style_perceptual_loss`] with respect to the generated features.
pub fn style_perceptual_grad<F: Real>(
    generated: &FeatureMaps<F>,
    style: &FeatureMaps<F>,
    layers: &[String],
) -> Result<BTreeMap<String, Array3<F>>> {
    let two = F::one() + F::one();
    let mut grads = BTreeMap::new();
    for layer in layers {
        let (gg, gs) = gram_pair(generated, style, layer)?;
        let d_gram = (&gg.0 - &gs.0) * two;
        let d = gram_matrix_backward(generated.require(layer, "generated")?, d_gram.view());
        accumulate(&mut grads, layer, d);
    }
    Ok(grads)
}

fn check_same_shape<F: Real>(a: &ArrayView3<F>, b: &ArrayView3<F>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(validation(format!("{what}: shape {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn l1<F: Real>(a: &ArrayView3<F>, b: &ArrayView3<F>) -> F {
    a.iter().zip(b.iter()).map(|(x, y)| (*x - *y).abs()).sum()
}

/// `‖a_recon − a‖₁ + ‖b_recon − b‖₁`.
pub fn reconstruction_loss<F: Real>(
    a_recon: ArrayView3<F>,
    a: ArrayView3<F>,
    b_recon: ArrayView3<F>,
    b: ArrayView3<F>,
) -> Result<F> {
    check_same_shape(&a_recon, &a, "reconstruction of A")?;
    check_same_shape(&b_recon, &b, "reconstruction of B")?;
    Ok(l1(&a_recon, &a) + l1(&b_recon, &b))
}

/// Gradient of one L1 term with respect to the reconstruction (`sign(recon − target)`, 0 at a tie).
pub fn l1_grad<F: Real>(recon: ArrayView3<F>, target: ArrayView3<F>) -> Result<Array3<F>> {
    check_same_shape(&recon, &target, "reconstruction")?;
    let mut g = Array3::zeros(recon.raw_dim());
    Zip::from(&mut g).and(&recon).and(&target).for_each(|g, r, t| {
        *g = if r > t {
            F::one()
        } else if r < t {
            -F::one()
        } else {
            F::zero()
        }
    });
    Ok(g)
}

/// Gradients of [`reconstruction_loss`] with respect to `a_recon` and `b_recon`.
pub fn reconstruction_grad<F: Real>(
    a_recon: ArrayView3<F>,
    a: ArrayView3<F>,
    b_recon: ArrayView3<F>,
    b: ArrayView3<F>,
) -> Result<(Array3<F>, Array3<F>)> {
    Ok((l1_grad(a_recon, a)?, l1_grad(b_recon, b)?))
}

/// Sum over channels of squared horizontal and vertical neighbor differences.
///
/// Pixels on the last row or column contribute no term in the missing direction.
pub fn total_variation<F: Real>(image: ArrayView3<F>) -> Result<F> {
    if image.iter().any(|v| !v.is_finite()) {
        return Err(validation("total variation input is not finite"));
    }
    let (c, h, w) = image.dim();
    let mut total = F::zero();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let x = image[[ch, i, j]];
                if j + 1 < w {
                    total = total + (image[[ch, i, j + 1]] - x).powi(2);
                }
                if i + 1 < h {
                    total = total + (image[[ch, i + 1, j]] - x).powi(2);
                }
            }
        }
    }
    Ok(total)
}

/// Gradient of [`total_variation`] with respect to every pixel.
pub fn total_variation_grad<F: Real>(image: ArrayView3<F>) -> Array3<F> {
    let (c, h, w) = image.dim();
    let two = F::one() + F::one();
    let mut g = Array3::zeros((c, h, w));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let x = image[[ch, i, j]];
                if j + 1 < w {
                    let d = two * (image[[ch, i, j + 1]] - x);
                    g[[ch, i, j + 1]] = g[[ch, i, j + 1]] + d;
                    g[[ch, i, j]] = g[[ch, i, j]] - d;
                }
                if i + 1 < h {
                    let d = two * (image[[ch, i + 1, j]] - x);
                    g[[ch, i + 1, j]] = g[[ch, i + 1, j]] + d;
                    g[[ch, i, j]] = g[[ch, i, j]] - d;
                }
            }
        }
    }
    g
}

fn mean<F: Real>(v: &[F]) -> F {
    v.iter().copied().sum::<F>() / F::from(v.len()).expect("length fits float")
}

/// Wasserstein critic objective `mean(D(real)) − mean(D(fake))` over a mini-batch.
pub fn adversarial_loss<F: Real>(d_real: &[F], d_fake: &[F]) -> Result<F> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(validation("adversarial loss needs non-empty critic batches"));
    }
    Ok(mean(d_real) - mean(d_fake))
}

/// Gradients of [`adversarial_loss`] with respect to each real and fake critic score.
pub fn adversarial_grad<F: Real>(d_real: &[F], d_fake: &[F]) -> Result<(Vec<F>, Vec<F>)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(validation("adversarial loss needs non-empty critic batches"));
    }
    let nr = F::from(d_real.len()).expect("length fits float");
    let nf = F::from(d_fake.len()).expect("length fits float");
    Ok((vec![F::one() / nr; d_real.len()], vec![-F::one() / nf; d_fake.len()]))
}

/// Weights of the five objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// adversarial
    pub lambda1: f64,
    /// content perceptual
    pub lambda2: f64,
    /// style perceptual
    pub lambda3: f64,
    /// reconstruction
    pub lambda4: f64,
    /// total variation
    pub lambda5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1e-6, lambda3: 5e-5, lambda4: 30.0, lambda5: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
        ]
    }
}

/// The five unweighted objective terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub adversarial: f64,
    pub content: f64,
    pub style: f64,
    pub reconstruction: f64,
    pub tv: f64,
}

/// Unweighted components plus their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub adversarial: f64,
    pub content: f64,
    pub style: f64,
    pub reconstruction: f64,
    pub tv: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            adversarial: self.adversarial,
            content: self.content,
            style: self.style,
            reconstruction: self.reconstruction,
            tv: self.tv,
        }
    }
}

/// `λ1·L_A + λ2·L_C + λ3·L_S + λ4·L_R + λ5·L_TV`.
pub fn full_objective(c: LossComponents, weights: &LossWeights) -> Result<LossBundle> {
    let named = [
        ("adversarial", c.adversarial),
        ("content", c.content),
        ("style", c.style),
        ("reconstruction", c.reconstruction),
        ("tv", c.tv),
    ];
    if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Divergence { step: None, component: (*name).to_string() });
    }
    let total = weights.lambda1 * c.adversarial
        + weights.lambda2 * c.content
        + weights.lambda3 * c.style
        + weights.lambda4 * c.reconstruction
        + weights.lambda5 * c.tv;
    Ok(LossBundle {
        adversarial: c.adversarial,
        content: c.content,
        style: c.style,
        reconstruction: c.reconstruction,
        tv: c.tv,
        total,
    })
}
