use ndarray::{Array4, ArrayViewD, ArrayViewMutD};

use super::layers::{
    avg_pool_forward, avg_pool_input_grad, contrast_norm_forward, contrast_norm_input_grad, max_pool_forward, max_pool_input_grad, BatchNorm2d, Cache, Conv2d,
    ConvTranspose2d, Linear, Mode, Param,
};

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Deconv(ConvTranspose2d),
    BatchNorm(BatchNorm2d),
    LeakyRelu(f32),
    Relu,
    Tanh,
    /// `N × C × H × W` → `N × (C·H·W) × 1 × 1`
    Flatten,
    Linear(Linear),
    MaxPool,
    AvgPool,
    /// `N × C × H × W` → `N × 1 × H × W`, see [`contrast_norm_forward`](super::layers::contrast_norm_forward).
    ContrastNorm,
}

impl Layer {
    pub fn forward(&self, x: &Array4<f32>, mode: Mode) -> (Array4<f32>, Cache) {
        match self {
            Layer::Conv(l) => (l.forward(x), Cache::Input(x.clone())),
            Layer::Deconv(l) => (l.forward(x), Cache::Input(x.clone())),
            Layer::Linear(l) => (l.forward(x), Cache::Input(x.clone())),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::LeakyRelu(slope) => {
                let slope = *slope;
                let y = x.mapv(|v| if v > 0.0 { v } else { slope * v });
                (y.clone(), Cache::Output(y))
            }
            Layer::Relu => {
                let y = x.mapv(|v| v.max(0.0));
                (y.clone(), Cache::Output(y))
            }
            Layer::Tanh => {
                let y = x.mapv(f32::tanh);
                (y.clone(), Cache::Output(y))
            }
            Layer::Flatten => {
                let (n, c, h, w) = x.dim();
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((n, c * h * w, 1, 1))
                    .expect("contiguous");
                (y, Cache::Shape(x.dim()))
            }
            Layer::MaxPool => max_pool_forward(x),
            Layer::AvgPool => (avg_pool_forward(x), Cache::Shape(x.dim())),
            Layer::ContrastNorm => contrast_norm_forward(x),
        }
    }

    pub fn input_grad(&self, cache: &Cache, dy: &Array4<f32>) -> Array4<f32> {
        match (self, cache) {
            (Layer::Conv(l), Cache::Input(x)) => l.input_grad(x.dim(), dy),
            (Layer::Deconv(l), Cache::Input(x)) => l.input_grad(x.dim(), dy),
            (Layer::Linear(l), Cache::Input(x)) => l.input_grad(x.dim(), dy),
            (Layer::BatchNorm(l), c) => l.input_grad(c, dy),
            (Layer::LeakyRelu(slope), Cache::Output(y)) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |g, y| {
                    if *y <= 0.0 {
                        *g *= slope
                    }
                });
                dx
            }
            (Layer::Relu, Cache::Output(y)) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |g, y| {
                    if *y <= 0.0 {
                        *g = 0.0
                    }
                });
                dx
            }
            (Layer::Tanh, Cache::Output(y)) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |g, y| *g *= 1.0 - y * y);
                dx
            }
            (Layer::Flatten, Cache::Shape(dim)) => dy
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(*dim)
                .expect("matching element count"),
            (Layer::MaxPool, c) => max_pool_input_grad(c, dy),
            (Layer::AvgPool, Cache::Shape(dim)) => avg_pool_input_grad(*dim, dy),
            (Layer::ContrastNorm, c) => contrast_norm_input_grad(c, dy),
            _ => panic!("cache does not match layer kind"),
        }
    }

    pub fn accumulate_grads(&mut self, cache: &Cache, dy: &Array4<f32>) {
        match (self, cache) {
            (Layer::Conv(l), Cache::Input(x)) => l.accumulate_grads(x, dy),
            (Layer::Deconv(l), Cache::Input(x)) => l.accumulate_grads(x, dy),
            (Layer::Linear(l), Cache::Input(x)) => l.accumulate_grads(x, dy),
            (Layer::BatchNorm(l), c) => l.accumulate_grads(c, dy),
            _ => {}
        }
    }

    fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Conv(l) => with_bias(&l.weight, l.bias.as_ref()),
            Layer::Deconv(l) => with_bias(&l.weight, l.bias.as_ref()),
            Layer::Linear(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        match self {
            Layer::Conv(l) => with_bias_mut(&mut l.weight, l.bias.as_mut()),
            Layer::Deconv(l) => with_bias_mut(&mut l.weight, l.bias.as_mut()),
            Layer::Linear(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            _ => Vec::new(),
        }
    }
}

fn with_bias<'a>(w: &'a Param, b: Option<&'a Param>) -> Vec<(&'static str, &'a Param)> {
    let mut v = vec![("weight", w)];
    v.extend(b.map(|b| ("bias", b)));
    v
}

fn with_bias_mut<'a>(w: &'a mut Param, b: Option<&'a mut Param>) -> Vec<(&'static str, &'a mut Param)> {
    let mut v = vec![("weight", w)];
    v.extend(b.map(|b| ("bias", b)));
    v
}

/// Per-layer caches from one forward pass, consumed by the matching backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// A named chain of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    layers: Vec<(String, Layer)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer) {
        self.layers.push((name.into(), layer));
    }

    pub fn layers(&self) -> &[(String, Layer)] {
        &self.layers
    }

    pub fn forward(&self, x: &Array4<f32>, mode: Mode) -> (Array4<f32>, Tape) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (_, layer) in &self.layers {
            let (y, cache) = layer.forward(&h, mode);
            caches.push(cache);
            h = y;
        }
        (h, Tape { caches })
    }

    /// Forward pass that keeps no caches.
    pub fn infer(&self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let mut h = x.clone();
        for (_, layer) in &self.layers {
            h = layer.forward(&h, mode).0;
        }
        h
    }

    /// Folds the batch statistics recorded in `tape` into the running statistics.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        for ((_, layer), cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (Layer::BatchNorm(bn), Cache::BatchNorm { stats: Some((mean, var)), .. }) = (layer, cache) {
                bn.update_running_stats(mean, var);
            }
        }
    }

    /// Backpropagates `dy`, accumulating parameter gradients; returns the input gradient.
    pub fn backward(&mut self, tape: &Tape, dy: Array4<f32>) -> Array4<f32> {
        let mut g = dy;
        for ((_, layer), cache) in self.layers.iter_mut().zip(&tape.caches).rev() {
            layer.accumulate_grads(cache, &g);
            g = layer.input_grad(cache, &g);
        }
        g
    }

    /// Backpropagates `dy` to the input without touching parameter gradients.
    pub fn input_grad(&self, tape: &Tape, dy: Array4<f32>) -> Array4<f32> {
        let mut g = dy;
        for ((_, layer), cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = layer.input_grad(cache, &g);
        }
        g
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .flat_map(|(name, l)| l.params().into_iter().map(move |(p, v)| (format!("{name}.{p}"), v)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .flat_map(|(name, l)| {
                let name = name.clone();
                l.params_mut().into_iter().map(move |(p, v)| (format!("{name}.{p}"), v))
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Parameters followed by BatchNorm running statistics, in a stable order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f32>)> {
        let mut out: Vec<_> = self.params().into_iter().map(|(n, p)| (n, p.value.view())).collect();
        for (name, layer) in &self.layers {
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("{name}.running_mean"), bn.running_mean.view().into_dyn()));
                out.push((format!("{name}.running_var"), bn.running_var.view().into_dyn()));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f32>)> {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for (name, layer) in self.layers.iter_mut() {
            match layer {
                Layer::BatchNorm(bn) => {
                    params.push((format!("{name}.gamma"), bn.gamma.value.view_mut()));
                    params.push((format!("{name}.beta"), bn.beta.value.view_mut()));
                    buffers.push((format!("{name}.running_mean"), bn.running_mean.view_mut().into_dyn()));
                    buffers.push((format!("{name}.running_var"), bn.running_var.view_mut().into_dyn()));
                }
                other => {
                    for (p, v) in other.params_mut() {
                        params.push((format!("{name}.{p}"), v.value.view_mut()));
                    }
                }
            }
        }
        params.extend(buffers);
        params
    }
}
