mod common;

use common::{gram_oracle, maps, names, numeric_gradient, relative_error, symmetric_eigenvalues, uniform3};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s3gan::losses::*;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-3;
const DIM: (usize, usize, usize) = (2, 4, 4);

fn permute_spatial(p: &Array3<f64>, perm: &[usize]) -> Array3<f64> {
    let (c, h, w) = p.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let src = perm[y * w + x];
        p[[ch, src / w, src % w]]
    })
}

fn random_dim(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..7), rng.random_range(1..6), rng.random_range(1..6))
}

/// Random L1 inputs kept at least two steps away from every kink.
fn away_from_kink(rng: &mut ChaCha8Rng, target: &Array3<f64>) -> Array3<f64> {
    target.mapv(|t| loop {
        let r = rng.random_range(0.0..1.0);
        if (r - t).abs() >= 2.0 * STEP {
            break r;
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gram_is_symmetric_and_psd(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = random_dim(&mut rng);
        let p = Array3::from_shape_fn(dim, |_| rng.random_range(-2.0..2.0));
        let g = gram_matrix(&FeatureMap::new("l", p.clone()).unwrap()).unwrap();
        let g = g.data();
        prop_assert_eq!(g, &g.t().to_owned());
        let min = symmetric_eigenvalues(g).into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-9, "min eigenvalue {}", min);
        let oracle = gram_oracle(&p);
        for (a, b) in g.iter().zip(oracle.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn style_loss_ignores_spatial_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = random_dim(&mut rng);
        let gen = uniform3(&mut rng, dim);
        let sty = uniform3(&mut rng, dim);
        let mut perm: Vec<usize> = (0..dim.1 * dim.2).collect();
        perm.shuffle(&mut rng);
        let layers = names(&["l"]);
        let base = style_perceptual_loss(&maps("l", gen.clone()), &maps("l", sty.clone()), &layers).unwrap();
        let pg = style_perceptual_loss(&maps("l", permute_spatial(&gen, &perm)), &maps("l", sty.clone()), &layers).unwrap();
        let ps = style_perceptual_loss(&maps("l", gen), &maps("l", permute_spatial(&sty, &perm)), &layers).unwrap();
        prop_assert!((base - pg).abs() <= 1e-9, "{} vs {}", base, pg);
        prop_assert!((base - ps).abs() <= 1e-9, "{} vs {}", base, ps);
    }

    #[test]
    fn non_adversarial_losses_are_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = random_dim(&mut rng);
        let x: Vec<Array3<f64>> = (0..4).map(|_| Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))).collect();
        let layers = names(&["l"]);
        prop_assert!(content_perceptual_loss(&maps("l", x[0].clone()), &maps("l", x[1].clone()), &layers).unwrap() >= 0.0);
        prop_assert!(style_perceptual_loss(&maps("l", x[0].clone()), &maps("l", x[1].clone()), &layers).unwrap() >= 0.0);
        prop_assert!(reconstruction_loss(x[0].view(), x[1].view(), x[2].view(), x[3].view()).unwrap() >= 0.0);
        prop_assert!(total_variation(x[0].view()).unwrap() >= 0.0);
    }

    #[test]
    fn objective_is_linear_in_each_weight(
        comps in proptest::array::uniform5(-1e3f64..1e3),
        base in proptest::array::uniform5(0.0f64..10.0),
        which in 0usize..5,
        lo in 0.0f64..10.0,
        hi in 0.0f64..10.0,
    ) {
        let c = LossComponents { adversarial: comps[0], content: comps[1], style: comps[2], reconstruction: comps[3], tv: comps[4] };
        let with = |v: f64| {
            let mut w = base;
            w[which] = v;
            let weights = LossWeights { lambda1: w[0], lambda2: w[1], lambda3: w[2], lambda4: w[3], lambda5: w[4] };
            full_objective(c, &weights).unwrap().total
        };
        let mid = 0.5 * (lo + hi);
        let lhs = with(mid);
        let rhs = 0.5 * (with(lo) + with(hi));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        prop_assert!(((with(hi) - with(lo)) - (hi - lo) * comps[which]).abs() <= 1e-9 * (1.0 + with(hi).abs() + with(lo).abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn content_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = uniform3(&mut rng, DIM);
        let tgt = maps("l", uniform3(&mut rng, DIM));
        let layers = names(&["l"]);
        let analytic = content_perceptual_grad(&maps("l", gen.clone()), &tgt, &layers).unwrap().remove("l").unwrap();
        let numeric = numeric_gradient(&gen, STEP, |x| content_perceptual_loss(&maps("l", x.clone()), &tgt, &layers).unwrap());
        let err = relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap());
        prop_assert!(err <= TOL, "relative error {}", err);
    }

    #[test]
    fn style_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = uniform3(&mut rng, DIM);
        let sty = maps("l", uniform3(&mut rng, DIM));
        let layers = names(&["l"]);
        let analytic = style_perceptual_grad(&maps("l", gen.clone()), &sty, &layers).unwrap().remove("l").unwrap();
        let numeric = numeric_gradient(&gen, STEP, |x| style_perceptual_loss(&maps("l", x.clone()), &sty, &layers).unwrap());
        let err = relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap());
        prop_assert!(err <= TOL, "relative error {}", err);
    }

    #[test]
    fn reconstruction_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = uniform3(&mut rng, DIM);
        let b = uniform3(&mut rng, DIM);
        let ar = away_from_kink(&mut rng, &a);
        let br = away_from_kink(&mut rng, &b);
        let (ga, gb) = reconstruction_grad(ar.view(), a.view(), br.view(), b.view()).unwrap();
        let na = numeric_gradient(&ar, STEP, |x| reconstruction_loss(x.view(), a.view(), br.view(), b.view()).unwrap());
        let nb = numeric_gradient(&br, STEP, |x| reconstruction_loss(ar.view(), a.view(), x.view(), b.view()).unwrap());
        let ea = relative_error(ga.as_slice().unwrap(), na.as_slice().unwrap());
        let eb = relative_error(gb.as_slice().unwrap(), nb.as_slice().unwrap());
        prop_assert!(ea <= TOL && eb <= TOL, "relative errors {} {}", ea, eb);
    }

    #[test]
    fn tv_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = uniform3(&mut rng, DIM);
        let analytic = total_variation_grad(img.view());
        let numeric = numeric_gradient(&img, STEP, |x| total_variation(x.view()).unwrap());
        let err = relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap());
        prop_assert!(err <= TOL, "relative error {}", err);
    }

    #[test]
    fn adversarial_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real = uniform3(&mut rng, DIM);
        let fake = uniform3(&mut rng, DIM);
        let loss = |r: &Array3<f64>, f: &Array3<f64>| adversarial_loss(r.as_slice().unwrap(), f.as_slice().unwrap()).unwrap();
        let (gr, gf) = adversarial_grad(real.as_slice().unwrap(), fake.as_slice().unwrap()).unwrap();
        let nr = numeric_gradient(&real, STEP, |x| loss(x, &fake));
        let nf = numeric_gradient(&fake, STEP, |x| loss(&real, x));
        let er = relative_error(&gr, nr.as_slice().unwrap());
        let ef = relative_error(&gf, nf.as_slice().unwrap());
        prop_assert!(er <= TOL && ef <= TOL, "relative errors {} {}", er, ef);
    }
}

#[test]
fn jacobi_oracle_recovers_known_spectrum() {
    let m = Array2::from_shape_vec((3, 3), vec![2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]).unwrap();
    let mut ev = symmetric_eigenvalues(&m);
    ev.sort_by(f64::total_cmp);
    for (got, want) in ev.iter().zip([1.0, 3.0, 5.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}
