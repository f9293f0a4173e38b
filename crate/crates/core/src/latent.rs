//! Latent-space algebra: content/style halves, recombination, masking and interpolation.
//!
//! A latent tensor has `2d` channels. Channels `[0, d)` hold the content half,
//! channels `[d, 2d)` the style half.

use ndarray::{concatenate, s, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// Which half of a latent tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HalfKind {
    Content,
    Style,
}

/// Encoder output, `2d × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(Array3<f32>);

impl LatentVector {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let c = data.shape()[0];
        if c == 0 || c % 2 != 0 {
            return Err(validation(format!("latent channel count must be even and non-zero, got {c}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(validation("latent contains non-finite values"));
        }
        Ok(Self(data))
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.0
    }

    pub fn half_channels(&self) -> usize {
        self.0.shape()[0] / 2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.dim()
    }
}

/// One half of a latent tensor, `d × k × k`, tagged with its role.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentHalf {
    data: Array3<f32>,
    kind: HalfKind,
}

impl LatentHalf {
    pub fn new(data: Array3<f32>, kind: HalfKind) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(validation("latent half contains non-finite values"));
        }
        Ok(Self { data, kind })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn kind(&self) -> HalfKind {
        self.kind
    }
}

/// Splits along channels into (content, style).
pub fn split(latent: &LatentVector) -> Result<(LatentHalf, LatentHalf)> {
    let c = latent.0.shape()[0];
    if c % 2 != 0 {
        return Err(validation(format!("cannot split odd channel count {c}")));
    }
    let d = c / 2;
    Ok((
        LatentHalf { data: latent.0.slice(s![..d, .., ..]).to_owned(), kind: HalfKind::Content },
        LatentHalf { data: latent.0.slice(s![d.., .., ..]).to_owned(), kind: HalfKind::Style },
    ))
}

/// Channel-wise `[content; style]`.
pub fn concat(content: &LatentHalf, style: &LatentHalf) -> Result<LatentVector> {
    if content.kind != HalfKind::Content || style.kind != HalfKind::Style {
        return Err(validation(format!(
            "concat expects (content, style) halves, got ({:?}, {:?})",
            content.kind, style.kind
        )));
    }
    if content.data.dim() != style.data.dim() {
        return Err(validation(format!(
            "half shapes differ: {:?} vs {:?}",
            content.data.dim(),
            style.data.dim()
        )));
    }
    let data = concatenate(Axis(0), &[content.data.view(), style.data.view()])
        .expect("shapes checked above");
    Ok(LatentVector(data))
}

/// Keeps one half and zero-fills the other.
pub fn mask_half(latent: &LatentVector, keep: HalfKind) -> LatentVector {
    let d = latent.half_channels();
    let mut out = latent.0.clone();
    let zeroed = match keep {
        HalfKind::Content => s![d.., .., ..],
        HalfKind::Style => s![..d, .., ..],
    };
    out.slice_mut(zeroed).fill(0.0);
    LatentVector(out)
}

/// Interpolates content and style halves independently:
/// content `(1−t_c)·c_a + t_c·c_b`, style `(1−t_s)·s_a + t_s·s_b`.
pub fn interpolate(a: &LatentVector, b: &LatentVector, t_content: f32, t_style: f32) -> Result<LatentVector> {
    for (name, t) in [("t_content", t_content), ("t_style", t_style)] {
        if !(0.0..=1.0).contains(&t) {
            return Err(validation(format!("{name} must lie in [0, 1], got {t}")));
        }
    }
    if a.0.dim() != b.0.dim() {
        return Err(validation(format!("latent shapes differ: {:?} vs {:?}", a.0.dim(), b.0.dim())));
    }
    let d = a.half_channels();
    let mut out = Array3::<f32>::zeros(a.0.raw_dim());
    for (range, t) in [(0..d, t_content), (d..2 * d, t_style)] {
        let sl = s![range, .., ..];
        Zip::from(out.slice_mut(sl))
            .and(a.0.slice(sl))
            .and(b.0.slice(sl))
            .for_each(|o, x, y| *o = lerp(*x, *y, t));
    }
    Ok(LatentVector(out))
}

// Exact at the endpoints so interpolation corners reproduce the inputs bitwise.
fn lerp(x: f32, y: f32, t: f32) -> f32 {
    if t == 0.0 {
        x
    } else if t == 1.0 {
        y
    } else {
        (1.0 - t) * x + t * y
    }
}
