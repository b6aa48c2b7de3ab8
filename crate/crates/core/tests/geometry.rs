use std::f64::consts::TAU;

use ddm_core::geometry::{sample_random_curve, CurveSampling, FourierCurve, ParametricShape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_curve(seed: u64) -> FourierCurve {
    sample_random_curve(&mut ChaCha8Rng::seed_from_u64(seed), CurveSampling::default())
}

/// Winding number of the closed curve around the origin.
fn winding_number(shape: &ParametricShape, n: usize) -> f64 {
    let mut total = 0.0;
    let mut prev = shape.point(0.0);
    for i in 1..=n {
        let p = shape.point(TAU * i as f64 / n as f64);
        let cross = prev[0] * p[1] - prev[1] * p[0];
        let dot = prev[0] * p[0] + prev[1] * p[1];
        total += cross.atan2(dot);
        prev = p;
    }
    total / TAU
}

#[test]
fn named_shapes_enclose_origin() {
    for shape in [ParametricShape::unit_disk(), ParametricShape::Pear, ParametricShape::RoundedSquare] {
        assert!((winding_number(&shape, 512) - 1.0).abs() < 1e-9, "{}", shape.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn coefficient_round_trip(seed in any::<u64>()) {
        let c = random_curve(seed);
        let back = FourierCurve::from_slice(&c.to_vec(), c.s).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn tangent_matches_differences(seed in any::<u64>(), t in 0.0f64..TAU) {
        let shape: ParametricShape = random_curve(seed).into();
        let h = 1e-5;
        let (a, b) = (shape.point(t + h), shape.point(t - h));
        let fd = [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)];
        let tan = shape.tangent(t);
        let scale = tan[0].hypot(tan[1]).max(1.0);
        prop_assert!((fd[0] - tan[0]).abs() <= 1e-6 * scale && (fd[1] - tan[1]).abs() <= 1e-6 * scale);
    }

    #[test]
    fn sampled_curves_contain_origin(seed in any::<u64>()) {
        let shape: ParametricShape = random_curve(seed).into();
        prop_assert!((winding_number(&shape, 512) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn radius_is_exponential_of_q(seed in any::<u64>(), t in 0.0f64..TAU) {
        let c = random_curve(seed);
        let p = c.boundary_point(t);
        prop_assert!((p[0].hypot(p[1]) - c.q(t).exp()).abs() <= 1e-12 * c.q(t).exp());
        prop_assert!(c.radius(t) > 0.0);
    }

    #[test]
    fn polar_samples_reproduce_points(seed in any::<u64>()) {
        let shape: ParametricShape = random_curve(seed).into();
        let samples = shape.polar_samples(32).unwrap();
        for (l, (zeta, r)) in samples.into_iter().enumerate() {
            let p = shape.point(TAU * l as f64 / 32.0);
            prop_assert!((r * zeta.cos() - p[0]).abs() < 1e-12 && (r * zeta.sin() - p[1]).abs() < 1e-12);
        }
    }
}
