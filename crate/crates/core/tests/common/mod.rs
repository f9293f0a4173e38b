#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use s3gan::losses::{FeatureMap, FeatureMaps};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[[i, j]].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_gradient(x: &Array3<f64>, h: f64, f: impl Fn(&Array3<f64>) -> f64) -> Array3<f64> {
    let mut g = Array3::zeros(x.raw_dim());
    for (idx, _) in x.indexed_iter() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[idx] += h;
        xm[idx] -= h;
        g[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

pub fn uniform3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(dim, |_| rng.random_range(0.0..1.0))
}

pub fn maps(layer: &str, data: Array3<f64>) -> FeatureMaps<f64> {
    std::iter::once(FeatureMap::new(layer, data).unwrap()).collect()
}

pub fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Gram entry by direct summation over positions.
pub fn gram_oracle(p: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = p.dim();
    let norm = (c * h * w) as f64;
    Array2::from_shape_fn((c, c), |(i, j)| {
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                s += p[[i, y, x]] * p[[j, y, x]];
            }
        }
        s / norm
    })
}
