//! Unit-range image type and batch packing helpers.
//!
//! Images are stored channel-major (`C × H × W`); batches are `N × C × H × W`.

use ndarray::{s, Array3, Array4, ArrayView3, Axis};

use crate::error::{validation, Result};

/// A 3-channel (or any channel count) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Array3<f32>);

impl Image {
    /// Wraps `data`, rejecting non-finite or out-of-range values.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(validation("image values must be finite and within [0, 1]"));
        }
        if data.is_empty() {
            return Err(validation("image must have non-zero extent"));
        }
        Ok(Self(data))
    }

    /// Wraps generator output that is known to be in range.
    pub(crate) fn from_unit_unchecked(data: Array3<f32>) -> Self {
        Self(data)
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }
}

/// Stacks equally shaped rank-3 arrays into a batch.
pub fn stack<'a, I>(items: I) -> Result<Array4<f32>>
where
    I: IntoIterator<Item = ArrayView3<'a, f32>>,
{
    let views: Vec<_> = items.into_iter().collect();
    let first = views.first().ok_or_else(|| validation("cannot stack an empty batch"))?;
    let (c, h, w) = first.dim();
    let mut out = Array4::zeros((views.len(), c, h, w));
    for (n, v) in views.iter().enumerate() {
        if v.dim() != (c, h, w) {
            return Err(validation(format!(
                "batch item {n} has shape {:?}, expected {:?}",
                v.dim(),
                (c, h, w)
            )));
        }
        out.slice_mut(s![n, .., .., ..]).assign(v);
    }
    Ok(out)
}

/// Splits a batch into owned per-item arrays, preserving order.
pub fn unstack(batch: &Array4<f32>) -> Vec<Array3<f32>> {
    batch.axis_iter(Axis(0)).map(|v| v.to_owned()).collect()
}
