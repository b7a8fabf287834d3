use dip_restore::admm::{group_shrink, update_dual, update_mu, update_t};
use dip_restore::operators::{div, grad, pointwise_magnitude, Kernel};
use dip_restore::{ForwardOperator, GradientField, Image};
use ndarray::{Array2, Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_| rng.random_range(-1.0..1.0)).unwrap()
}

fn random_field(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> GradientField {
    GradientField::new(Array4::from_shape_fn((h, w, c, 2), |_| rng.random_range(-1.0..1.0))).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grad_is_minus_div_adjoint(h in 8usize..=32, w in 8usize..=32, c in prop::sample::select(vec![1usize, 3]), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_image(&mut rng, h, w, c);
        let p = random_field(&mut rng, h, w, c);
        let lhs = grad(&u).dot(&p).unwrap();
        let rhs: f64 = -(u.data() * &div(&p)).sum();
        prop_assert!(rel_err(lhs, rhs) <= 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn convolution_adjoint(h in 8usize..=32, w in 8usize..=32, k in prop::sample::select(vec![1usize, 3, 5, 7]), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((k, k), |_| rng.random_range(0.0..1.0));
        let kernel = Kernel::new(&raw / raw.sum()).unwrap();
        let op = ForwardOperator::Convolution(kernel);
        let u = random_image(&mut rng, h, w, 1);
        let v = random_image(&mut rng, h, w, 1);
        let lhs = op.apply(&u).unwrap().dot(&v).unwrap();
        let rhs = u.dot(&op.apply_adjoint(&v).unwrap()).unwrap();
        prop_assert!(rel_err(lhs, rhs) <= 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn shrink_is_the_group_prox(x in -5.0f64..5.0, y in -5.0f64..5.0, tau in 0.0f64..3.0) {
        let t = group_shrink(&[x, y], tau);
        let obj = |a: f64, b: f64| tau * a.hypot(b) + 0.5 * ((a - x).powi(2) + (b - y).powi(2));
        let best = obj(t[0], t[1]);
        for i in -20..=20 {
            for j in -20..=20 {
                let (a, b) = (t[0] + i as f64 * 1e-3, t[1] + j as f64 * 1e-3);
                prop_assert!(best <= obj(a, b) + 1e-12);
            }
        }
    }

    #[test]
    fn weights_scale_with_residual_and_inverse_magnitude(res in 0.1f64..100.0, c in 0.5f64..4.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_field(&mut rng, 8, 8, 1);
        let base = update_mu(res, &p, 1e-8, 1e-12);
        let louder = update_mu(c * res, &p, 1e-8, 1e-12);
        let steeper = update_mu(res, &p.scaled(c), 1e-8, 1e-12);
        for ((b, l), s) in base.iter().zip(&louder).zip(&steeper) {
            prop_assert!(rel_err(*l, c * b) <= 1e-12);
            prop_assert!(rel_err(*s, b / c) <= 1e-12);
        }
    }
}

#[test]
fn weights_order_inversely_to_magnitude_pixelwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_field(&mut rng, 8, 8, 3);
    let m = pointwise_magnitude(&p);
    let mu = update_mu(3.0, &p, 1e-8, 1e-12);
    let pairs: Vec<(f64, f64)> = m.iter().copied().zip(mu.iter().copied()).collect();
    for &(m1, u1) in &pairs {
        for &(m2, u2) in &pairs {
            if m1 < m2 {
                assert!(u1 > u2);
            }
        }
    }
}

#[test]
fn zero_weights_and_feasible_duals_are_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = random_field(&mut rng, 9, 8, 1);
    let t = update_t(&w, &Array2::zeros((9, 8)), 1.0).unwrap();
    assert_eq!(t, w);
    let lambda = random_field(&mut rng, 9, 8, 1);
    assert_eq!(update_dual(&lambda, 3.0, &w, &w).unwrap(), lambda);
}

#[test]
fn div_of_grad_is_negative_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = random_image(&mut rng, 16, 12, 3);
    let lap: Array3<f64> = div(&grad(&u));
    assert!((u.data() * &lap).sum() <= 0.0);
}
