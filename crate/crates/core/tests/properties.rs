use crkam::diagnostics::fitted_exponent;
use crkam::field::MatrixField;
use crkam::geometry::{build_grid, dilate, Point};
use crkam::io::{decode_field, encode_field};
use crkam::norms::random_matrix_poly;
use crkam::{Error, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn point() -> impl Strategy<Value = Point> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_map(|(a, b, c, d, x)| Point::new(vec![C64::new(a, b), C64::new(c, d)], x))
}

fn close(p: &Point, q: &Point, tol: f64) -> bool {
    (p.xn - q.xn).abs() <= tol && p.zprime.iter().zip(&q.zprime).all(|(a, b)| (a - b).norm() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dilations_form_a_group(p in point(), a in 0.1..4.0f64, b in 0.1..4.0f64) {
        let two = dilate(&dilate(&p, a).unwrap(), b).unwrap();
        prop_assert!(close(&two, &dilate(&p, a * b).unwrap(), 1e-12));
        let back = dilate(&dilate(&p, a).unwrap(), 1.0 / a).unwrap();
        prop_assert!(close(&back, &p, 1e-12));
    }

    #[test]
    fn koranyi_gauge_scales_with_the_square_root(p in point(), k in 0.1..4.0f64) {
        // T_κ scales z' by √κ and x by κ
        let lhs = dilate(&p, k).unwrap().koranyi();
        prop_assert!((lhs - k.sqrt() * p.koranyi()).abs() <= 1e-12 * (1.0 + lhs));
    }

    #[test]
    fn group_inverse_is_two_sided(p in point(), q in point()) {
        let id = Point::new(vec![C64::new(0.0, 0.0); 2], 0.0);
        prop_assert!(close(&p.group_mul(&p.group_inv()), &id, 1e-14));
        // the Korányi gauge is symmetric under inversion
        prop_assert!((p.group_inv().koranyi() - p.koranyi()).abs() < 1e-14);
        let left = p.group_mul(&q).group_mul(&q.group_inv());
        prop_assert!(close(&left, &p, 1e-12));
    }

    #[test]
    fn xbar_obeys_leibniz(s1 in any::<u64>(), s2 in any::<u64>(), alpha in 0usize..2) {
        let p = random_matrix_poly(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(s1));
        let q = random_matrix_poly(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(s2));
        let lhs = p.mul(&q).xbar(alpha);
        let rhs = p.xbar(alpha).mul(&q).add(&p.mul(&q.xbar(alpha)));
        prop_assert!(lhs.sub(&rhs).max_coeff() <= 1e-13);
    }

    #[test]
    fn field_files_round_trip_and_reject_truncation(seed in any::<u64>(), cut in 0.0..1.0f64) {
        let chart = Arc::new(build_grid(3, 0.5, 3).unwrap());
        let poly = random_matrix_poly(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(seed));
        let f = MatrixField::from_poly(chart, &poly);
        let bytes = encode_field(&f).unwrap();
        let again = encode_field(&decode_field(&bytes).unwrap()).unwrap();
        prop_assert_eq!(&bytes, &again);
        let n = ((bytes.len() - 1) as f64 * cut) as usize;
        prop_assert!(matches!(decode_field(&bytes[..n]), Err(Error::Format(_))));
    }

    #[test]
    fn fitted_exponent_recovers_the_order(p in 1.2..3.0f64, d0 in 1e-3..0.5f64) {
        let deltas: Vec<f64> = (0..4).map(|j| d0.powf(p.powi(j))).filter(|d| *d > 1e-300).collect();
        prop_assume!(deltas.len() >= 2);
        let (fit, _) = fitted_exponent(&deltas);
        prop_assert!((fit - p).abs() < 1e-9, "{} vs {}", fit, p);
    }
}
