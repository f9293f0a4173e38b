//! Finite-difference checks of every layer's backward pass.

use ndarray::{Array, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random4(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f32> {
    Array::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0))
}

/// Scalar probe loss `Σ r ⊙ f(x)` in f64.
fn probe(y: &Array4<f32>, r: &Array4<f32>) -> f64 {
    y.iter().zip(r.iter()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| ((*x - *y) as f64).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt().max(1e-6);
    num / den
}

fn check_layer(mut layer: Layer, dim: (usize, usize, usize, usize), seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random4(&mut rng, dim);
    let (y, cache) = layer.forward(&x, Mode::Train);
    let r = random4(&mut rng, y.dim());
    let dx = layer.input_grad(&cache, &r);
    layer.accumulate_grads(&cache, &r);

    let h = 1e-2f32;
    let mut fd = Array4::<f32>::zeros(dim);
    for idx in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[idx] += h;
        xm.as_slice_mut().unwrap()[idx] -= h;
        let lp = probe(&layer.forward(&xp, Mode::Train).0, &r);
        let lm = probe(&layer.forward(&xm, Mode::Train).0, &r);
        fd.as_slice_mut().unwrap()[idx] = ((lp - lm) / (2.0 * h as f64)) as f32;
    }
    let e = rel_err(dx.as_slice().unwrap(), fd.as_slice().unwrap());
    assert!(e < 1e-2, "input gradient rel err {e}");

    let grads: Vec<ArrayD<f32>> = layer_params(&mut layer).iter().map(|p| p.grad.clone()).collect();
    for (pi, analytic) in grads.iter().enumerate() {
        let mut fd = ArrayD::<f32>::zeros(analytic.raw_dim());
        for idx in 0..analytic.len() {
            let base = layer_params(&mut layer)[pi].value.as_slice().unwrap()[idx];
            layer_params(&mut layer)[pi].value.as_slice_mut().unwrap()[idx] = base + h;
            let lp = probe(&layer.forward(&x, Mode::Train).0, &r);
            layer_params(&mut layer)[pi].value.as_slice_mut().unwrap()[idx] = base - h;
            let lm = probe(&layer.forward(&x, Mode::Train).0, &r);
            layer_params(&mut layer)[pi].value.as_slice_mut().unwrap()[idx] = base;
            fd.as_slice_mut().unwrap()[idx] = ((lp - lm) / (2.0 * h as f64)) as f32;
        }
        let e = rel_err(analytic.as_slice().unwrap(), fd.as_slice().unwrap());
        assert!(e < 1e-2, "param {pi} gradient rel err {e}");
    }
}

fn layer_params(layer: &mut Layer) -> Vec<&mut Param> {
    match layer {
        Layer::Conv(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
        Layer::Deconv(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
        Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
        Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
        _ => Vec::new(),
    }
}

#[test]
fn conv_stride2_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let conv = Conv2d::new(3, 4, ConvGeom::new(4, 2, 1), true, &mut rng);
    check_layer(Layer::Conv(conv), (2, 3, 6, 6), 11);
}

#[test]
fn conv_3x3_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conv = Conv2d::new(2, 3, ConvGeom::new(3, 1, 1), false, &mut rng);
    check_layer(Layer::Conv(conv), (2, 2, 5, 5), 12);
}

#[test]
fn deconv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let deconv = ConvTranspose2d::new(4, 3, ConvGeom::new(4, 2, 1), true, &mut rng);
    check_layer(Layer::Deconv(deconv), (2, 4, 3, 3), 13);
}

#[test]
fn batch_norm_gradients() {
    let mut bn = BatchNorm2d::new(3);
    bn.gamma.value = ndarray::arr1(&[0.5f32, 1.5, -0.7]).into_dyn();
    bn.beta.value = ndarray::arr1(&[0.1f32, -0.2, 0.3]).into_dyn();
    check_layer(Layer::BatchNorm(bn), (3, 3, 2, 2), 14);
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check_layer(Layer::Linear(Linear::new(12, 3, &mut rng)), (4, 12, 1, 1), 15);
}

#[test]
fn activation_and_pool_gradients() {
    check_layer(Layer::Tanh, (2, 2, 3, 3), 16);
    check_layer(Layer::LeakyRelu(0.2), (2, 2, 3, 3), 17);
    check_layer(Layer::Relu, (2, 2, 3, 3), 18);
    check_layer(Layer::AvgPool, (2, 2, 4, 4), 19);
    check_layer(Layer::MaxPool, (2, 2, 4, 4), 20);
    check_layer(Layer::Flatten, (2, 2, 2, 2), 21);
    check_layer(Layer::ContrastNorm, (2, 3, 4, 4), 24);
}

#[test]
fn stride2_conv_and_deconv_halve_and_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = ConvGeom::new(4, 2, 1);
    let conv = Conv2d::new(3, 8, g, false, &mut rng);
    let deconv = ConvTranspose2d::new(8, 3, g, false, &mut rng);
    let x = random4(&mut rng, (2, 3, 16, 16));
    let z = conv.forward(&x);
    assert_eq!(z.dim(), (2, 8, 8, 8));
    assert_eq!(deconv.forward(&z).dim(), (2, 3, 16, 16));
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = ConvGeom::new(3, 2, 1);
    let conv = Conv2d::new(2, 2, g, true, &mut rng);
    let x = random4(&mut rng, (1, 2, 5, 5));
    let y = conv.forward(&x);
    let w = &conv.weight.value;
    for co in 0..2 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut acc = conv.bias.as_ref().unwrap().value[co];
                for ci in 0..2 {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let iy = (oy * 2 + ki) as isize - 1;
                            let ix = (ox * 2 + kj) as isize - 1;
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                acc += w[[co, ci, ki, kj]] * x[[0, ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
                assert!((acc - y[[0, co, oy, ox]]).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let mut bn = BatchNorm2d::new(1);
    let x = Array4::from_shape_vec((2, 1, 1, 2), vec![1.0f32, 3.0, 5.0, 7.0]).unwrap();
    let (_, cache) = bn.forward(&x, Mode::Train);
    let Cache::BatchNorm { stats: Some((mean, var)), .. } = &cache else { panic!() };
    assert_eq!(mean[0], 4.0);
    // unbiased variance of {1,3,5,7}
    assert!((var[0] - 20.0 / 3.0).abs() < 1e-5);
    bn.update_running_stats(mean, var);
    assert!((bn.running_mean[0] - 0.4).abs() < 1e-6);
    let (y, _) = bn.forward(&x, Mode::Eval);
    let expect = (1.0 - 0.4) / (bn.running_var[0] + 1e-5).sqrt();
    assert!((y[[0, 0, 0, 0]] - expect).abs() < 1e-5);
}
