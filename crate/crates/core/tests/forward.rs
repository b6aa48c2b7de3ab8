use std::f64::consts::PI;
use std::time::Instant;

use ddm_core::eval::reciprocity_residual;
use ddm_core::forward::{
    assemble_msrm, direction_angles, disk_far_field, disk_msrm, solve_far_field, unit_vector, NystromSystem, SolverOptions,
};
use ddm_core::geometry::{sample_random_curve, CurveSampling, ParametricShape};
use ddm_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_shape(seed: u64) -> ParametricShape {
    sample_random_curve(&mut ChaCha8Rng::seed_from_u64(seed), CurveSampling::default()).into()
}

fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn disk_series_reference_values() {
    // mpmath, 81 terms, 30 digits; k = 3, unit radius
    let cases = [
        (0.0, Complex64::new(-1.617427778698345, 0.7973732730621499)),
        (5.0 * PI / 16.0, Complex64::new(0.5378984983894757, 0.34082348437051674)),
        (PI, Complex64::new(-0.6730673962415091, -0.26459282722453875)),
    ];
    for (theta, want) in cases {
        let got = disk_far_field(1.0, 3.0, theta, 40).unwrap();
        assert!((got - want).norm() <= 1e-12, "theta {theta}: {got}");
        let solved = solve_far_field(&ParametricShape::unit_disk(), 3.0, unit_vector(0.0), &[theta], &SolverOptions::default()).unwrap();
        assert!((solved[0] - want).norm() <= 1e-9 * want.norm(), "theta {theta}: {}", solved[0]);
    }
}

#[test]
fn disk_msrm_matches_series_quickly() {
    let start = Instant::now();
    let solved = assemble_msrm(&ParametricShape::unit_disk(), 3.0, 16, &SolverOptions::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let series = disk_msrm(1.0, 3.0, 16, 40).unwrap();
    let err = rel_diff(&solved.matrix.data, &series.matrix.data);
    assert!(err <= 1e-8, "relative Frobenius error {err:e}");
    assert!(elapsed < 1.0, "{elapsed} s");
}

#[test]
fn quadrature_refinement_on_named_shapes() {
    let angles = direction_angles(16);
    for shape in [ParametricShape::unit_disk(), ParametricShape::Pear, ParametricShape::RoundedSquare] {
        let coarse = solve_far_field(&shape, 3.0, unit_vector(0.7), &angles, &SolverOptions { nodes: 64, ..Default::default() }).unwrap();
        let fine = solve_far_field(&shape, 3.0, unit_vector(0.7), &angles, &SolverOptions::default()).unwrap();
        let diff = coarse.iter().zip(&fine).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff <= 1e-10, "{}: {diff:e}", shape.name());
    }
}

#[test]
fn formulations_agree_on_pear() {
    let angles = direction_angles(8);
    let a = solve_far_field(&ParametricShape::Pear, 3.0, unit_vector(1.1), &angles, &SolverOptions::default()).unwrap();
    let b = solve_far_field(&ParametricShape::Pear, 3.0, unit_vector(1.1), &angles, &SolverOptions::combined(3.0)).unwrap();
    assert!(rel_diff(&a, &b) <= 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn reciprocity_on_random_curves(seed in any::<u64>()) {
        let msrm = match assemble_msrm(&random_shape(seed), 3.0, 16, &SolverOptions::default()) {
            Err(Error::NearSingular(_)) => return Err(TestCaseError::reject("near an interior eigenvalue")),
            other => other.unwrap(),
        };
        let r = reciprocity_residual(&msrm);
        prop_assert!(r <= 1e-8, "residual {:e}", r);
    }

    #[test]
    fn superposition_of_incident_waves(seed in any::<u64>(), amp in 0.1f64..10.0, a in 0.0f64..6.28, b in 0.0f64..6.28) {
        let sys = match NystromSystem::new(&random_shape(seed), 3.0, &SolverOptions::default()) {
            Err(Error::NearSingular(_)) => return Err(TestCaseError::reject("near an interior eigenvalue")),
            other => other.unwrap(),
        };
        let obs: Vec<_> = direction_angles(4).into_iter().map(unit_vector).collect();
        let unit = sys.far_field(&sys.densities(&[unit_vector(a), unit_vector(b)], 1.0), &obs);
        let scaled = sys.far_field(&sys.densities(&[unit_vector(a), unit_vector(b)], amp), &obs);
        let norm = unit.frobenius_norm();
        for (u, s) in unit.data.iter().zip(&scaled.data) {
            prop_assert!((amp * u - s).norm() <= 1e-12 * amp * norm);
        }
    }
}
