//! A-priori growth bounds for the sup of the inverse Christoffel function,
//! sample-budget calculators, the exact ball boundary value, and pointwise
//! diagnostic envelopes driven by boundary distances.

use std::fmt;
use std::sync::Arc;

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::geometry::BuiltinDomain;
use crate::polyspace::space_dimension;

/// γ = ((3/2)·ln(3/2) − 1/2)⁻¹, the constant appearing in every matrix
/// Chernoff sample budget used here.
pub fn gamma() -> f64 {
    1.0 / (1.5 * 1.5f64.ln() - 0.5)
}

/// Geometric class of a domain, selecting the growth law B(n) ≥ K_n.
///
/// `beta` is the volume-ratio constant of the comparison argument: the domain
/// contains an affine image of the reference shape occupying at least a `beta`
/// fraction of its volume.
#[derive(Clone)]
pub enum DomainClass {
    /// Finite union of parallelograms (squares, polygons): B(n) = β⁻¹n².
    ParallelogramUnion { beta: f64 },
    /// C² boundary with non-vanishing curvature: B(n) = 3β⁻¹n^{(d+1)/d}.
    SmoothC2 { beta: f64 },
    /// Graph domain with Hölder-α profile (cusps): B(n) = C·n^{(1/d)(2+Σ2/αᵢ)}.
    /// The multiplicative constant is user-supplied — the certified one is
    /// far too pessimistic to be useful.
    RAlpha {
        alpha: Vec<f64>,
        beta: f64,
        constant: f64,
    },
    /// Unit ball: the exact boundary value of the inverse Christoffel
    /// function, which is its sup.
    BallExact,
    /// User-supplied growth law.
    Custom(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl fmt::Debug for DomainClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainClass::ParallelogramUnion { beta } => {
                write!(f, "ParallelogramUnion {{ beta: {beta} }}")
            }
            DomainClass::SmoothC2 { beta } => write!(f, "SmoothC2 {{ beta: {beta} }}"),
            DomainClass::RAlpha {
                alpha,
                beta,
                constant,
            } => write!(
                f,
                "RAlpha {{ alpha: {alpha:?}, beta: {beta}, constant: {constant} }}"
            ),
            DomainClass::BallExact => write!(f, "BallExact"),
            DomainClass::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "volume ratio must lie in (0, 1], got {beta}"
        )));
    }
    Ok(())
}

impl DomainClass {
    /// Default class (and constants) for each built-in test domain.
    pub fn for_builtin(domain: BuiltinDomain) -> DomainClass {
        match domain {
            // The disc is its own comparison ellipse: β = 1 → 3n^{3/2}.
            BuiltinDomain::Disc => DomainClass::SmoothC2 { beta: 1.0 },
            // Union of two unit parallelograms, each half the area → 2n².
            BuiltinDomain::CornerPolygon => DomainClass::ParallelogramUnion { beta: 0.5 },
            // √|x| profile is Hölder-1/2; observed constant ≈ 1 → n³.
            BuiltinDomain::CuspDomain => DomainClass::RAlpha {
                alpha: vec![0.5],
                beta: 1.0,
                constant: 1.0,
            },
            // A single parallelogram → n².
            BuiltinDomain::Square => DomainClass::ParallelogramUnion { beta: 1.0 },
        }
    }
}

/// Growth bound B(n) ≥ K_n = sup k_n for a domain of class `class` in
/// dimension `d`.
#[allow(non_snake_case)]
pub fn bound_B(class: &DomainClass, d: usize, n: usize) -> Result<f64> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidParameter(
            "dimension and space size must be ≥ 1".into(),
        ));
    }
    let nf = n as f64;
    match class {
        DomainClass::ParallelogramUnion { beta } => {
            check_beta(*beta)?;
            Ok(nf * nf / beta)
        }
        DomainClass::SmoothC2 { beta } => {
            check_beta(*beta)?;
            Ok(3.0 / beta * nf.powf((d as f64 + 1.0) / d as f64))
        }
        DomainClass::RAlpha {
            alpha,
            beta,
            constant,
        } => {
            check_beta(*beta)?;
            if alpha.len() != d - 1 {
                return Err(Error::InvalidParameter(format!(
                    "profile needs {} Hölder exponents in dimension {d}, got {}",
                    d - 1,
                    alpha.len()
                )));
            }
            if alpha.iter().any(|a| !(*a > 0.0 && *a <= 2.0)) {
                return Err(Error::InvalidParameter(format!(
                    "Hölder exponents must lie in (0, 2], got {alpha:?}"
                )));
            }
            if !(*constant > 0.0) {
                return Err(Error::InvalidParameter(
                    "growth constant must be positive".into(),
                ));
            }
            let exponent = (2.0 + alpha.iter().map(|a| 2.0 / a).sum::<f64>()) / d as f64;
            Ok(constant * nf.powf(exponent))
        }
        DomainClass::BallExact => {
            // Exact at full degree blocks; in between, the sup over a larger
            // space dominates, so the next full block is a valid bound.
            let mut ell = 0u32;
            while space_dimension(d, ell)? < n {
                ell += 1;
            }
            ball_boundary_k(d, ell)
        }
        DomainClass::Custom(f) => Ok(f(n)),
    }
}

fn binomial(a: u64, b: u64) -> Result<u128> {
    if b > a {
        return Ok(0);
    }
    let b = b.min(a - b);
    let mut c: u128 = 1;
    for i in 1..=b {
        c = c
            .checked_mul((a - b + i) as u128)
            .ok_or(Error::Overflow("binomial coefficient"))?
            / i as u128;
    }
    Ok(c)
}

/// The inverse Christoffel function of the total-degree-ℓ space on the unit
/// ball of ℝ^d, evaluated anywhere on the boundary sphere (where it attains
/// its sup): C(ℓ+d+1, ℓ) + C(ℓ+d, ℓ−1), exactly.
///
/// For d = 1 this collapses to (ℓ+1)² (Legendre values at ±1) and for d = 2
/// to Σ_{j≤ℓ} (j+1)² (boundary values of the disc basis); both checked below
/// against independently derived values.
pub fn ball_boundary_k(d: usize, ell: u32) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be ≥ 1".into()));
    }
    let (d, ell) = (d as u64, ell as u64);
    let first = binomial(ell + d + 1, ell)?;
    let second = if ell == 0 {
        0
    } else {
        binomial(ell + d, ell - 1)?
    };
    let total = first
        .checked_add(second)
        .ok_or(Error::Overflow("ball boundary value"))?;
    if total > (1u128 << 53) {
        return Err(Error::Overflow("ball boundary value"));
    }
    Ok(total as f64)
}

/// Distance-driven envelope for k_n(x) on a built-in plane domain:
/// returns n·(min, max) of ρᵢ(x)·ρⱼ(x) over the pairs (i, j) of boundary
/// pieces that touch, with ρᵢ(x) = min(ℓ, dist(x, Γᵢ)^{-1/2}); for a domain
/// whose boundary is one smooth piece, both values are n·ρ₁(x).
///
/// This is a diagnostic shape — the true k_n sits between constant multiples
/// of it, with constants depending on the domain but not on n or x.
pub fn pointwise_bound_2d(domain: BuiltinDomain, x: &[f64], ell: u32) -> Result<(f64, f64)> {
    let distances = domain.distance_to_boundary_pieces(x)?;
    let n = space_dimension(2, ell)? as f64;
    let rho: Vec<f64> = distances
        .iter()
        .map(|d| {
            if *d > 0.0 {
                (ell as f64).min(1.0 / d.sqrt())
            } else {
                ell as f64
            }
        })
        .collect();
    let pairs = domain.intersecting_piece_pairs();
    if pairs.is_empty() {
        let v = n * rho[0];
        return Ok((v, v));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (i, j) in pairs {
        let p = rho[i] * rho[j];
        lo = lo.min(p);
        hi = hi.max(p);
    }
    Ok((n * lo, n * hi))
}

/// Two-sided comparison transfer: a domain sandwiched between affine images
/// of reference shapes with volume ratio β has β·k_ref ≤ k ≤ β⁻¹·k_ref.
pub fn comparison_framing(k_ref: f64, beta: f64) -> Result<(f64, f64)> {
    check_beta(beta)?;
    Ok((beta * k_ref, k_ref / beta))
}

/// Number of optimal-measure draws sufficient for the sample Gram matrix to
/// satisfy ‖G − I‖₂ ≤ 1/2 with probability ≥ 1 − ε: ⌈cγ·n·ln(2n/ε)⌉, c ≥ 1.
pub fn online_budget(n: usize, c: f64, epsilon: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidParameter("space size must be ≥ 1".into()));
    }
    if !(c >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "oversampling factor must be ≥ 1, got {c}"
        )));
    }
    check_epsilon(epsilon)?;
    let m = c * gamma() * n as f64 * (2.0 * n as f64 / epsilon).ln();
    ceil_to_usize(m)
}

/// Failure-probability bound η(m) = 4cn/m associated with a budget of m draws
/// at oversampling factor c.
pub fn online_eta(n: usize, c: f64, m: usize) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("n and m must be ≥ 1".into()));
    }
    if !(c >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "oversampling factor must be ≥ 1, got {c}"
        )));
    }
    Ok(4.0 * c * n as f64 / m as f64)
}

/// Per-level draw budget for the hierarchical sampler, inflated by the
/// partial-weight slack δ: ⌈(γ/(1−2δ))·n_p·ln(2n_p/ε)⌉, 0 < δ < 1/2.
pub fn hierarchical_budget(n_p: usize, delta: f64, epsilon: f64) -> Result<usize> {
    if n_p == 0 {
        return Err(Error::InvalidParameter("space size must be ≥ 1".into()));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "slack must lie in (0, 1/2), got {delta}"
        )));
    }
    check_epsilon(epsilon)?;
    let m = gamma() / (1.0 - 2.0 * delta) * n_p as f64 * (2.0 * n_p as f64 / epsilon).ln();
    ceil_to_usize(m)
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "failure probability must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

pub(crate) fn ceil_to_usize(x: f64) -> Result<usize> {
    if !x.is_finite() || x < 0.0 || x >= 9.007_199_254_740_992e15 {
        return Err(Error::Overflow("sample budget"));
    }
    Ok(x.ceil() as usize)
}

/// High-precision cross-check of the online budget: the same formula
/// evaluated in double-double arithmetic.
pub fn online_budget_dd(n: usize, c: f64, epsilon: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidParameter("space size must be ≥ 1".into()));
    }
    check_epsilon(epsilon)?;
    let three_halves = Dd::from(1.5);
    let gamma_dd = (three_halves * three_halves.ln() - Dd::from(0.5)).recip();
    let nf = Dd::from_u64(n as u64);
    let log = (Dd::from(2.0) * nf / Dd::from(epsilon)).ln();
    let m = Dd::from(c) * gamma_dd * nf * log;
    ceil_to_usize(m.to_f64())
}
