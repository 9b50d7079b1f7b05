//! Gauss–Legendre quadrature helpers.
//!
//! Used to build discrete inner products that replicate exact integration on
//! boxes — the reference case for validating discrete orthonormalization and
//! Gramian assembly (a quadrature-exact sample must produce G = I).

use nalgebra::{DMatrix, DVector};

use crate::polyspace::DiscreteInnerProduct;

/// Nodes and weights of the g-point Gauss–Legendre rule on [−1, 1] for the
/// *normalized* measure dx/2 (weights sum to 1). Exact for polynomials of
/// degree ≤ 2g − 1.
pub fn gauss_legendre(g: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(g >= 1);
    let mut nodes = vec![0.0f64; g];
    let mut weights = vec![0.0f64; g];
    for i in 0..g {
        // Tricomi initial guess, then Newton on P_g.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (g as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(g, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                let (_, d2) = legendre_and_derivative(g, x);
                dp = d2;
                break;
            }
        }
        nodes[g - 1 - i] = x;
        // Standard weight 2/((1−x²)P'²) halved for the normalized measure.
        weights[g - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_and_derivative(g: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0f64, x);
    if g == 0 {
        return (1.0, 0.0);
    }
    for k in 1..g {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = g as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor Gauss–Legendre inner product on [−1, 1]² with g points per axis:
/// integrates polynomials of per-axis degree ≤ 2g − 1 exactly against the
/// uniform probability measure on the square.
pub fn tensor_square_ip(g: usize) -> DiscreteInnerProduct {
    let (nodes, weights) = gauss_legendre(g);
    let m = g * g;
    let mut pts = Vec::with_capacity(2 * m);
    let mut w = Vec::with_capacity(m);
    for (i, &xi) in nodes.iter().enumerate() {
        for (j, &xj) in nodes.iter().enumerate() {
            pts.push(xi);
            pts.push(xj);
            // The inner product carries a 1/M normalization, so the stored
            // weight is M times the normalized tensor weight.
            w.push(m as f64 * weights[i] * weights[j]);
        }
    }
    DiscreteInnerProduct::new(
        DMatrix::from_vec(2, m, pts),
        DVector::from_vec(w),
        format!("tensor-gauss-legendre-{g}"),
        "tensor-gauss-legendre-weights".to_string(),
    )
    .expect("tensor rule is always valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_rule() {
        let (n, w) = gauss_legendre(2);
        assert_abs_diff_eq!(n[0], -(1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(n[1], (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn integrates_monomials_exactly() {
        for g in 1..=8usize {
            let (n, w) = gauss_legendre(g);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for k in 0..=(2 * g - 1) {
                let quad: f64 = n.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { 1.0 / (k as f64 + 1.0) };
                assert_abs_diff_eq!(quad, exact, epsilon = 1e-14);
            }
        }
    }
}
