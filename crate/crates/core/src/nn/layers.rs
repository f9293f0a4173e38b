//! Layers with hand-written backward passes.
//!
//! Every `forward` is a pure function of `&self`; whatever the backward pass
//! needs is returned in a [`Cache`]. Parameter gradients are accumulated by
//! `accumulate_grads` (`&mut self`), input gradients by `input_grad` (`&self`),
//! so frozen networks can be differentiated without being mutably borrowed.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView2, Axis, Ix2, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{batch_chunks, col2im, from_channel_major, im2col, to_channel_major, ConvGeom};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(shape), v))
    }

    /// Zero-mean Gaussian with Glorot standard deviation `sqrt(2 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| normal.sample(rng) as f32).collect();
        Self::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    fn matrix(&self, rows: usize, cols: usize) -> ArrayView2<'_, f32> {
        self.value.view().into_shape_with_order((rows, cols)).expect("contiguous parameter")
    }
}

/// Whether BatchNorm normalizes with batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a layer's forward pass hands to its backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Array4<f32>),
    Output(Array4<f32>),
    BatchNorm {
        xhat: Array4<f32>,
        inv_std: Array1<f32>,
        /// Batch mean and unbiased variance; `None` in eval mode.
        stats: Option<(Array1<f32>, Array1<f32>)>,
    },
    MaxPool {
        argmax: Vec<u32>,
        input_dim: (usize, usize, usize, usize),
    },
    Shape((usize, usize, usize, usize)),
    ContrastNorm {
        centered: Array4<f32>,
        norms: Array4<f32>,
        scale: Array1<f32>,
    },
}

/// 2-D convolution, weight layout `Cout × Cin × k × k`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, geom: ConvGeom, bias: bool, rng: &mut R) -> Self {
        let k = geom.kernel;
        let weight = Param::glorot(&[cout, cin, k, k], cin * k * k, cout * k * k, rng);
        Self { weight, bias: bias.then(|| Param::zeros(&[cout])), geom }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn patch_len(&self) -> usize {
        self.in_channels() * self.geom.kernel * self.geom.kernel
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            self.geom.out_len(h).expect("input too small for kernel"),
            self.geom.out_len(w).expect("input too small for kernel"),
        )
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let (oh, ow) = self.out_hw(h, w);
        let cout = self.out_channels();
        let wmat = self.weight.matrix(cout, self.patch_len());
        let mut y = Array4::<f32>::zeros((n, cout, oh, ow));
        for (lo, hi) in batch_chunks(n, self.patch_len() * oh * ow) {
            let cols = im2col(x.slice(s![lo..hi, .., .., ..]), self.geom, oh, ow);
            let mut out = Array2::<f32>::zeros((cout, (hi - lo) * oh * ow));
            general_mat_mul(1.0, &wmat, &cols, 0.0, &mut out);
            y.slice_mut(s![lo..hi, .., .., ..])
                .assign(&from_channel_major(out, (hi - lo, cout, oh, ow)));
        }
        if let Some(b) = &self.bias {
            add_channel_bias(&mut y, b);
        }
        y
    }

    pub fn input_grad(&self, input_dim: (usize, usize, usize, usize), dy: &Array4<f32>) -> Array4<f32> {
        let (n, _, h, w) = input_dim;
        let (_, cout, oh, ow) = dy.dim();
        let wmat = self.weight.matrix(cout, self.patch_len());
        let mut dx = Array4::<f32>::zeros(input_dim);
        for (lo, hi) in batch_chunks(n, self.patch_len() * oh * ow) {
            let dy_mat = to_channel_major(dy.slice(s![lo..hi, .., .., ..]));
            let mut dcols = Array2::<f32>::zeros((self.patch_len(), (hi - lo) * oh * ow));
            general_mat_mul(1.0, &wmat.t(), &dy_mat, 0.0, &mut dcols);
            let part = col2im(dcols.view(), (hi - lo, self.in_channels(), h, w), self.geom, oh, ow);
            dx.slice_mut(s![lo..hi, .., .., ..]).assign(&part);
        }
        dx
    }

    pub fn accumulate_grads(&mut self, x: &Array4<f32>, dy: &Array4<f32>) {
        let n = x.dim().0;
        let (_, cout, oh, ow) = dy.dim();
        let plen = self.patch_len();
        let mut gw = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((cout, plen))
            .expect("contiguous gradient");
        for (lo, hi) in batch_chunks(n, plen * oh * ow) {
            let cols = im2col(x.slice(s![lo..hi, .., .., ..]), self.geom, oh, ow);
            let dy_mat = to_channel_major(dy.slice(s![lo..hi, .., .., ..]));
            general_mat_mul(1.0, &dy_mat, &cols.t(), 1.0, &mut gw);
        }
        if let Some(b) = &mut self.bias {
            accumulate_channel_bias(b, dy);
        }
    }
}

/// Transposed 2-D convolution, weight layout `Cin × Cout × k × k`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub geom: ConvGeom,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, geom: ConvGeom, bias: bool, rng: &mut R) -> Self {
        let k = geom.kernel;
        let weight = Param::glorot(&[cin, cout, k, k], cin * k * k, cout * k * k, rng);
        Self { weight, bias: bias.then(|| Param::zeros(&[cout])), geom }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn patch_len(&self) -> usize {
        self.out_channels() * self.geom.kernel * self.geom.kernel
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "deconv input channels");
        let oh = self.geom.transposed_out_len(h).expect("valid deconv geometry");
        let ow = self.geom.transposed_out_len(w).expect("valid deconv geometry");
        let cout = self.out_channels();
        let wmat = self.weight.matrix(c, self.patch_len());
        let mut y = Array4::<f32>::zeros((n, cout, oh, ow));
        for (lo, hi) in batch_chunks(n, self.patch_len() * h * w) {
            let x_mat = to_channel_major(x.slice(s![lo..hi, .., .., ..]));
            let mut cols = Array2::<f32>::zeros((self.patch_len(), (hi - lo) * h * w));
            general_mat_mul(1.0, &wmat.t(), &x_mat, 0.0, &mut cols);
            let part = col2im(cols.view(), (hi - lo, cout, oh, ow), self.geom, h, w);
            y.slice_mut(s![lo..hi, .., .., ..]).assign(&part);
        }
        if let Some(b) = &self.bias {
            add_channel_bias(&mut y, b);
        }
        y
    }

    pub fn input_grad(&self, input_dim: (usize, usize, usize, usize), dy: &Array4<f32>) -> Array4<f32> {
        let (n, cin, h, w) = input_dim;
        let wmat = self.weight.matrix(cin, self.patch_len());
        let mut dx = Array4::<f32>::zeros(input_dim);
        for (lo, hi) in batch_chunks(n, self.patch_len() * h * w) {
            let dcols = im2col(dy.slice(s![lo..hi, .., .., ..]), self.geom, h, w);
            let mut dx_mat = Array2::<f32>::zeros((cin, (hi - lo) * h * w));
            general_mat_mul(1.0, &wmat, &dcols, 0.0, &mut dx_mat);
            dx.slice_mut(s![lo..hi, .., .., ..])
                .assign(&from_channel_major(dx_mat, (hi - lo, cin, h, w)));
        }
        dx
    }

    pub fn accumulate_grads(&mut self, x: &Array4<f32>, dy: &Array4<f32>) {
        let (n, cin, h, w) = x.dim();
        let plen = self.patch_len();
        let mut gw = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((cin, plen))
            .expect("contiguous gradient");
        for (lo, hi) in batch_chunks(n, plen * h * w) {
            let dcols = im2col(dy.slice(s![lo..hi, .., .., ..]), self.geom, h, w);
            let x_mat = to_channel_major(x.slice(s![lo..hi, .., .., ..]));
            general_mat_mul(1.0, &x_mat, &dcols.t(), 1.0, &mut gw);
        }
        if let Some(b) = &mut self.bias {
            accumulate_channel_bias(b, dy);
        }
    }
}

fn add_channel_bias(y: &mut Array4<f32>, bias: &Param) {
    for (mut plane, b) in y.axis_iter_mut(Axis(1)).zip(bias.value.iter()) {
        plane += *b;
    }
}

fn accumulate_channel_bias(bias: &mut Param, dy: &Array4<f32>) {
    for (g, plane) in bias.grad.iter_mut().zip(dy.axis_iter(Axis(1))) {
        *g += plane.sum();
    }
}

/// Per-channel batch normalization over `N × H × W`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    /// Fraction of the running statistic kept at each update.
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array4<f32>, mode: Mode) -> (Array4<f32>, Cache) {
        let (n, c, h, w) = x.dim();
        let count = (n * h * w) as f32;
        let x = x.as_standard_layout();
        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mut mean = Array1::<f32>::zeros(c);
                let mut var = Array1::<f32>::zeros(c);
                for ci in 0..c {
                    let plane = x.slice(s![.., ci, .., ..]);
                    let mu = plane.iter().map(|v| *v as f64).sum::<f64>() / count as f64;
                    let sq = plane.iter().map(|v| (*v as f64 - mu).powi(2)).sum::<f64>() / count as f64;
                    mean[ci] = mu as f32;
                    var[ci] = sq as f32;
                }
                let unbiased = if count > 1.0 { &var * (count / (count - 1.0)) } else { var.clone() };
                (mean.clone(), var, Some((mean, unbiased)))
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x.into_owned();
        let mut y = Array4::<f32>::zeros((n, c, h, w));
        for ci in 0..c {
            let (m, s_) = (mean[ci], inv_std[ci]);
            let (g, b) = (self.gamma.value[ci], self.beta.value[ci]);
            let mut xh = xhat.slice_mut(s![.., ci, .., ..]);
            xh.mapv_inplace(|v| (v - m) * s_);
            y.slice_mut(s![.., ci, .., ..]).zip_mut_with(&xh, |o, v| *o = g * v + b);
        }
        (y, Cache::BatchNorm { xhat, inv_std, stats })
    }

    pub fn update_running_stats(&mut self, mean: &Array1<f32>, var: &Array1<f32>) {
        let keep = self.momentum;
        self.running_mean.zip_mut_with(mean, |r, m| *r = keep * *r + (1.0 - keep) * m);
        self.running_var.zip_mut_with(var, |r, v| *r = keep * *r + (1.0 - keep) * v);
    }

    pub fn input_grad(&self, cache: &Cache, dy: &Array4<f32>) -> Array4<f32> {
        let Cache::BatchNorm { xhat, inv_std, stats } = cache else {
            panic!("batch norm cache expected");
        };
        let (n, c, h, w) = dy.dim();
        let count = (n * h * w) as f32;
        let mut dx = Array4::<f32>::zeros(dy.dim());
        for ci in 0..c {
            let g = self.gamma.value[ci];
            let dyc = dy.slice(s![.., ci, .., ..]);
            let xh = xhat.slice(s![.., ci, .., ..]);
            let mut out = dx.slice_mut(s![.., ci, .., ..]);
            if stats.is_none() {
                let scale = g * inv_std[ci];
                out.zip_mut_with(&dyc, |o, d| *o = d * scale);
                continue;
            }
            let sum_dy: f32 = dyc.sum();
            let sum_dy_xh: f32 = dyc.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
            let scale = g * inv_std[ci] / count;
            ndarray::Zip::from(&mut out)
                .and(&dyc)
                .and(&xh)
                .for_each(|o, d, x| *o = scale * (count * d - sum_dy - x * sum_dy_xh));
        }
        dx
    }

    pub fn accumulate_grads(&mut self, cache: &Cache, dy: &Array4<f32>) {
        let Cache::BatchNorm { xhat, .. } = cache else {
            panic!("batch norm cache expected");
        };
        for ci in 0..dy.dim().1 {
            let dyc = dy.slice(s![.., ci, .., ..]);
            let xh = xhat.slice(s![.., ci, .., ..]);
            self.gamma.grad[ci] += dyc.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f32>();
            self.beta.grad[ci] += dyc.sum();
        }
    }
}

/// Fully connected layer on `N × F × 1 × 1` inputs, weight layout `out × in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::glorot(&[outputs, inputs], inputs, outputs, rng),
            bias: Param::zeros(&[outputs]),
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.value.shape()[0], self.weight.value.shape()[1])
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (outputs, inputs) = self.dims();
        let n = x.dim().0;
        let xm = as_rows(x, inputs);
        let wm = self.weight.matrix(outputs, inputs);
        let mut y = Array2::<f32>::zeros((n, outputs));
        general_mat_mul(1.0, &xm, &wm.t(), 0.0, &mut y);
        y += &self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("rank-1 bias");
        y.into_shape_with_order((n, outputs, 1, 1)).expect("contiguous")
    }

    pub fn input_grad(&self, input_dim: (usize, usize, usize, usize), dy: &Array4<f32>) -> Array4<f32> {
        let (outputs, inputs) = self.dims();
        let n = dy.dim().0;
        let dym = as_rows(dy, outputs);
        let wm = self.weight.matrix(outputs, inputs);
        let mut dx = Array2::<f32>::zeros((n, inputs));
        general_mat_mul(1.0, &dym, &wm, 0.0, &mut dx);
        dx.into_shape_with_order(input_dim).expect("matching element count")
    }

    pub fn accumulate_grads(&mut self, x: &Array4<f32>, dy: &Array4<f32>) {
        let (outputs, inputs) = self.dims();
        let xm = as_rows(x, inputs);
        let dym = as_rows(dy, outputs);
        let mut gw = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("rank-2 weight");
        general_mat_mul(1.0, &dym.t(), &xm, 1.0, &mut gw);
        for (g, col) in self.bias.grad.iter_mut().zip(dym.axis_iter(Axis(1))) {
            *g += col.sum();
        }
    }
}

fn as_rows(x: &Array4<f32>, features: usize) -> Array2<f32> {
    let n = x.dim().0;
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, features))
        .expect("feature count matches")
}

/// 2×2, stride-2 max pooling. Odd trailing rows/columns are dropped.
pub fn max_pool_forward(x: &Array4<f32>) -> (Array4<f32>, Cache) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::<f32>::zeros((n, c, oh, ow));
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut at = 0u32;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                            let v = x[[b, ci, iy, ix]];
                            if v > best {
                                best = v;
                                at = (iy * w + ix) as u32;
                            }
                        }
                    }
                    y[[b, ci, oy, ox]] = best;
                    argmax.push(at);
                }
            }
        }
    }
    (y, Cache::MaxPool { argmax, input_dim: (n, c, h, w) })
}

pub fn max_pool_input_grad(cache: &Cache, dy: &Array4<f32>) -> Array4<f32> {
    let Cache::MaxPool { argmax, input_dim } = cache else {
        panic!("max pool cache expected");
    };
    let (_, _, h, w) = *input_dim;
    let mut dx = Array4::<f32>::zeros(*input_dim);
    for ((idx, g), at) in dy.indexed_iter().zip(argmax) {
        let (b, ci) = (idx.0, idx.1);
        let at = *at as usize;
        debug_assert!(at < h * w);
        dx[[b, ci, at / w, at % w]] += *g;
    }
    dx
}

/// 2×2, stride-2 average pooling.
pub fn avg_pool_forward(x: &Array4<f32>) -> Array4<f32> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, h / 2, w / 2), |(b, ci, oy, ox)| {
        let (iy, ix) = (2 * oy, 2 * ox);
        0.25 * (x[[b, ci, iy, ix]] + x[[b, ci, iy, ix + 1]] + x[[b, ci, iy + 1, ix]] + x[[b, ci, iy + 1, ix + 1]])
    })
}

pub fn avg_pool_input_grad(input_dim: (usize, usize, usize, usize), dy: &Array4<f32>) -> Array4<f32> {
    Array4::from_shape_fn(input_dim, |(b, ci, iy, ix)| {
        let (oy, ox) = (iy / 2, ix / 2);
        if oy < dy.dim().2 && ox < dy.dim().3 {
            0.25 * dy[[b, ci, oy, ox]]
        } else {
            0.0
        }
    })
}

const CONTRAST_EPS: f32 = 1e-6;

/// Collapses channels to one structure map: the per-pixel Euclidean norm of
/// the spatially centered features, divided by its root mean square over the
/// image. For inputs of the form `b + m(x)·(f − b)` the result depends on `m`
/// alone, whatever the vectors `f` and `b` are.
pub fn contrast_norm_forward(x: &Array4<f32>) -> (Array4<f32>, Cache) {
    let (n, c, h, w) = x.dim();
    let count = (h * w) as f32;
    let mut centered = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let mut plane = centered.slice_mut(s![b, ch, .., ..]);
            let mean = plane.sum() / count;
            plane.mapv_inplace(|v| v - mean);
        }
    }
    let mut norms = Array4::zeros((n, 1, h, w));
    let mut scale = Array1::zeros(n);
    for b in 0..n {
        let sq = centered.slice(s![b, .., .., ..]).map_axis(Axis(0), |v| v.iter().map(|t| t * t).sum::<f32>());
        let r = sq.mapv(|q| (q + CONTRAST_EPS).sqrt());
        let s_b = (r.iter().map(|t| t * t).sum::<f32>() / count).sqrt();
        norms.slice_mut(s![b, 0, .., ..]).assign(&r);
        scale[b] = s_b;
    }
    let mut y = norms.clone();
    for b in 0..n {
        let s_b = scale[b];
        y.slice_mut(s![b, .., .., ..]).mapv_inplace(|v| v / s_b);
    }
    (y, Cache::ContrastNorm { centered, norms, scale })
}

pub fn contrast_norm_input_grad(cache: &Cache, dy: &Array4<f32>) -> Array4<f32> {
    let Cache::ContrastNorm { centered, norms, scale } = cache else {
        panic!("contrast norm needs its own cache");
    };
    let (n, c, h, w) = centered.dim();
    let count = (h * w) as f32;
    let mut dx = Array4::zeros((n, c, h, w));
    for b in 0..n {
        let s_b = scale[b];
        let g = dy.slice(s![b, 0, .., ..]);
        let r = norms.slice(s![b, 0, .., ..]);
        let gr: f32 = (&g * &r).sum();
        // dL/dr = g / S − (Σ g·r)·r / (P·S³)
        let dr = Array2::from_shape_fn((h, w), |(i, j)| g[[i, j]] / s_b - gr * r[[i, j]] / (count * s_b.powi(3)));
        for ch in 0..c {
            let d = centered.slice(s![b, ch, .., ..]);
            let mut out = dx.slice_mut(s![b, ch, .., ..]);
            ndarray::Zip::from(&mut out).and(&d).and(&dr).and(&r).for_each(|o, &d, &dr, &r| *o = dr * d / r);
            let mean = out.sum() / count;
            out.mapv_inplace(|v| v - mean);
        }
    }
    dx
}
