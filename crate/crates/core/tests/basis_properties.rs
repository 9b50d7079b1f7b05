//! Cross-module basis properties: permutation invariance of discrete
//! orthonormalization, file round trips, and affine invariance of the
//! inverse Christoffel function.

use std::sync::Arc;

use christoffel_core::christoffel::ChristoffelEvaluator;
use christoffel_core::geometry::{BuiltinDomain, Domain};
use christoffel_core::polyspace::{
    orthonormalize_discrete, orthonormalize_exact, DiscreteInnerProduct, OrthonormalBasis,
    PolynomialSpace,
};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space(ell: u32) -> Arc<PolynomialSpace> {
    Arc::new(PolynomialSpace::total_degree(2, ell).unwrap())
}

#[test]
fn discrete_orthonormalization_ignores_point_order() {
    let domain = Domain::builtin(BuiltinDomain::Disc);
    let mut rng = ChaCha8Rng::seed_from_u64(211);
    let points = domain.sample_uniform(300, &mut rng).unwrap();
    let ip = DiscreteInnerProduct::unit_weights(points.clone(), "ordered".into()).unwrap();
    let basis = orthonormalize_discrete(space(3), &ip).unwrap();

    let mut order: Vec<usize> = (0..300).collect();
    order.shuffle(&mut rng);
    let mut shuffled = DMatrix::zeros(2, 300);
    for (dst, &src) in order.iter().enumerate() {
        shuffled.set_column(dst, &points.column(src));
    }
    let ip_shuffled =
        DiscreteInnerProduct::unit_weights(shuffled, "shuffled".into()).unwrap();
    let basis_shuffled = orthonormalize_discrete(space(3), &ip_shuffled).unwrap();

    let a = basis.transform();
    let b = basis_shuffled.transform();
    let scale = a.amax();
    for j in 0..a.nrows() {
        for k in 0..a.ncols() {
            assert!(
                (a[(j, k)] - b[(j, k)]) .abs() <= 1e-12 * scale,
                "transform entry ({j},{k}) moved: {} vs {}",
                a[(j, k)],
                b[(j, k)]
            );
        }
    }
}

#[test]
fn basis_files_round_trip_bit_exactly() {
    let domain = Domain::builtin(BuiltinDomain::Disc);
    let basis = orthonormalize_exact(space(5), &domain).unwrap();
    let path = std::env::temp_dir().join("christoffel-basis-roundtrip-test.json");
    std::fs::write(&path, basis.to_json().unwrap()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    let restored = OrthonormalBasis::from_json(&text).unwrap();

    assert_eq!(basis.n(), restored.n());
    let a = basis.transform();
    let b = restored.transform();
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.to_bits(), y.to_bits(), "transform entries must be bit-equal");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(223);
    let pts = domain.sample_uniform(100, &mut rng).unwrap();
    let va = basis.evaluate_block(&pts);
    let vb = restored.evaluate_block(&pts);
    for (x, y) in va.iter().zip(vb.iter()) {
        assert_eq!(x.to_bits(), y.to_bits(), "evaluations must be bit-equal");
    }
}

fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x / y - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn christoffel_values_are_invariant_under_axis_scaling_of_the_square() {
    // [−1,1]² → [−3,1]×[0,0.5] via x ↦ (2x₁ − 1, 0.25x₂ + 0.25).
    let square = Domain::builtin(BuiltinDomain::Square);
    let rect = Domain::rectangle(&[-3.0, 0.0], &[1.0, 0.5]).unwrap();
    let ev_square = ChristoffelEvaluator::new(Arc::new(
        orthonormalize_exact(space(4), &square).unwrap(),
    ));
    let ev_rect = ChristoffelEvaluator::new(Arc::new(
        orthonormalize_exact(space(4), &rect).unwrap(),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(227);
    let pts = square.sample_uniform(200, &mut rng).unwrap();
    let mut mapped = pts.clone();
    for c in 0..mapped.ncols() {
        mapped[(0, c)] = 2.0 * pts[(0, c)] - 1.0;
        mapped[(1, c)] = 0.25 * pts[(1, c)] + 0.25;
    }
    let k_square = ev_square.evaluate_k_block(&pts);
    let k_rect = ev_rect.evaluate_k_block(&mapped);
    let gap = max_relative_gap(k_square.as_slice(), k_rect.as_slice());
    assert!(gap < 1e-9, "worst relative gap {gap}");
}

#[test]
fn christoffel_values_are_invariant_under_disc_to_ellipse_maps() {
    let disc = Domain::builtin(BuiltinDomain::Disc);
    let r = (2.0 / std::f64::consts::PI).sqrt();
    let (sx, sy) = (2.0, 1.0 / 3.0);
    let ellipse = Domain::ellipse(sx * r, sy * r).unwrap();
    let ev_disc =
        ChristoffelEvaluator::new(Arc::new(orthonormalize_exact(space(4), &disc).unwrap()));
    let ev_ell =
        ChristoffelEvaluator::new(Arc::new(orthonormalize_exact(space(4), &ellipse).unwrap()));
    let mut rng = ChaCha8Rng::seed_from_u64(229);
    let pts = disc.sample_uniform(200, &mut rng).unwrap();
    let mut mapped = pts.clone();
    for c in 0..mapped.ncols() {
        mapped[(0, c)] = sx * pts[(0, c)];
        mapped[(1, c)] = sy * pts[(1, c)];
    }
    let k_disc = ev_disc.evaluate_k_block(&pts);
    let k_ell = ev_ell.evaluate_k_block(&mapped);
    let gap = max_relative_gap(k_disc.as_slice(), k_ell.as_slice());
    assert!(gap < 1e-9, "worst relative gap {gap}");
}
