//! Weighted least-squares reconstruction from sampled point values.
//!
//! Given a weighted sample (points xⁱ with weights w(xⁱ)) and an
//! orthonormal basis L₁, …, L_n, the fit minimizes the discrete norm
//! (1/m) Σᵢ w(xⁱ) |u(xⁱ) − v(xⁱ)|², which is the orthogonal projection of
//! the data onto the span in the inner product ⟨u, v⟩_m = (1/m) Σ w u v.
//! The module also provides the sample Gramian with spectral diagnostics,
//! truncated and conditioned estimator variants, a resampling driver that
//! redraws points until the Gramian is well conditioned, and synthetic
//! targets with exactly accountable L² error.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::christoffel::{MeasureKind, SamplingMeasure, WeightedSample};
use crate::error::{Error, Result};
use crate::hexfloat;
use crate::polyspace::OrthonormalBasis;
use crate::qr::RANK_TOLERANCE;

/// Outcome of a weighted least-squares fit.
///
/// Carries the basis it was fitted in so the result can be evaluated,
/// compared against reference coefficients, or truncated without the caller
/// re-threading the basis. Gramian diagnostics are attached only by the
/// paths that compute them ([`fit_diagnosed`], [`fit_with_redraw`], or
/// [`FitResult::with_gramian`]); the plain [`fit`] leaves them empty so hot
/// loops do not pay the n²m Gramian assembly.
#[derive(Clone, Debug)]
pub struct FitResult {
    basis: Arc<OrthonormalBasis>,
    /// Coefficients c̃ⱼ of the fitted function Σ c̃ⱼ Lⱼ.
    pub coefficients: DVector<f64>,
    /// ‖G − I‖₂ of the sample Gramian in this basis, when computed.
    pub gram_deviation: Option<f64>,
    /// κ₂(G) = λ_max/λ_min of the sample Gramian, when computed
    /// (+∞ if λ_min ≤ 0).
    pub gram_condition: Option<f64>,
    /// Whether the conditioned estimator replaced the coefficients by zero.
    pub conditioned_zeroed: bool,
    /// Number of rejected samples before the accepted one (redraw driver).
    pub redraws_used: u32,
}

#[derive(Serialize, Deserialize)]
struct FitResultJson {
    n: usize,
    /// C99 hex floats: bit-exact round trips.
    coefficients: Vec<String>,
    gram_deviation: Option<f64>,
    gram_condition: Option<f64>,
    conditioned_zeroed: bool,
    redraws_used: u32,
}

impl FitResult {
    pub fn basis(&self) -> &Arc<OrthonormalBasis> {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.coefficients.len()
    }

    /// Fitted function at one point: Σⱼ c̃ⱼ Lⱼ(x).
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.basis.evaluate(x).dot(&self.coefficients)
    }

    /// Fitted function at each column of `points`.
    pub fn evaluate_block(&self, points: &DMatrix<f64>) -> DVector<f64> {
        self.basis.evaluate_block(points).transpose() * &self.coefficients
    }

    /// Attaches Gramian diagnostics computed separately for the same sample.
    pub fn with_gramian(mut self, info: &GramianInfo) -> FitResult {
        self.gram_deviation = Some(info.deviation);
        self.gram_condition = Some(info.condition);
        self
    }

    /// Serializes coefficients (hex floats, bit-exact) plus diagnostics.
    /// The basis itself is not embedded; pair the text with the basis JSON
    /// when archiving.
    pub fn to_json(&self) -> Result<String> {
        let doc = FitResultJson {
            n: self.n(),
            coefficients: self.coefficients.iter().map(|c| hexfloat::to_hex(*c)).collect(),
            gram_deviation: self.gram_deviation,
            gram_condition: self.gram_condition,
            conditioned_zeroed: self.conditioned_zeroed,
            redraws_used: self.redraws_used,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Rebuilds a result serialized by [`FitResult::to_json`] over `basis`.
    pub fn from_json(text: &str, basis: Arc<OrthonormalBasis>) -> Result<FitResult> {
        let doc: FitResultJson =
            serde_json::from_str(text).map_err(|e| Error::Deserialize(e.to_string()))?;
        if doc.n != basis.n() || doc.coefficients.len() != doc.n {
            return Err(Error::BasisMismatch(format!(
                "serialized fit has {} coefficients, basis has {} functions",
                doc.coefficients.len(),
                basis.n()
            )));
        }
        let mut coefficients = DVector::zeros(doc.n);
        for (j, text) in doc.coefficients.iter().enumerate() {
            coefficients[j] = hexfloat::parse_hex(text)
                .map_err(|e| Error::Deserialize(format!("coefficient {j}: {e}")))?;
        }
        Ok(FitResult {
            basis,
            coefficients,
            gram_deviation: doc.gram_deviation,
            gram_condition: doc.gram_condition,
            conditioned_zeroed: doc.conditioned_zeroed,
            redraws_used: doc.redraws_used,
        })
    }
}

/// Sample Gramian G with spectral diagnostics,
/// G_{jk} = (1/m) Σᵢ w(xⁱ) Lⱼ(xⁱ) L_k(xⁱ).
#[derive(Clone, Debug)]
pub struct GramianInfo {
    pub matrix: DMatrix<f64>,
    /// ‖G − I‖₂ = max |λ(G) − 1| (symmetric eigensolve).
    pub deviation: f64,
    /// κ₂(G) = λ_max/λ_min; +∞ when λ_min ≤ 0.
    pub condition: f64,
}

impl GramianInfo {
    /// Norm-equivalence constants implied by the deviation δ = ‖G − I‖₂:
    /// every v in the span satisfies
    /// (1 − δ)‖v‖² ≤ ‖v‖_m² ≤ (1 + δ)‖v‖².
    pub fn norm_equivalence(&self) -> (f64, f64) {
        (1.0 - self.deviation, 1.0 + self.deviation)
    }
}

fn check_shapes(sample: &WeightedSample, basis: &OrthonormalBasis) -> Result<()> {
    if sample.dim() != basis.space().dim() {
        return Err(Error::BasisMismatch(format!(
            "sample points have dimension {}, basis expects {}",
            sample.dim(),
            basis.space().dim()
        )));
    }
    Ok(())
}

/// Basis values at the sample points with each column i scaled by
/// √(w(xⁱ)/m); the Gramian is S Sᵀ and the fit matrix is Sᵀ.
fn scaled_collocation(sample: &WeightedSample, basis: &OrthonormalBasis) -> DMatrix<f64> {
    let m = sample.len();
    let mut vals = basis.evaluate_block(&sample.points);
    for i in 0..m {
        let s = (sample.weights[i] / m as f64).sqrt();
        vals.column_mut(i).scale_mut(s);
    }
    vals
}

/// Weighted least-squares fit of `values` (one per sample point) in `basis`:
/// the minimizer of (1/m) Σ w(xⁱ)|u(xⁱ) − values(xⁱ)|² over the span,
/// computed by Householder QR of the scaled collocation matrix. Fails if the
/// scaled collocation matrix has numerical rank below n (in particular
/// whenever m < n).
pub fn fit(
    sample: &WeightedSample,
    values: &DVector<f64>,
    basis: &Arc<OrthonormalBasis>,
) -> Result<FitResult> {
    check_shapes(sample, basis)?;
    let m = sample.len();
    let n = basis.n();
    if values.len() != m {
        return Err(Error::InvalidParameter(format!(
            "{m} sample points but {} values",
            values.len()
        )));
    }
    let a = scaled_collocation(sample, basis).transpose(); // m × n
    let mut b = DVector::zeros(m);
    for i in 0..m {
        b[i] = (sample.weights[i] / m as f64).sqrt() * values[i];
    }
    let qr = a.qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let mut diag_max: f64 = 0.0;
    for j in 0..k {
        diag_max = diag_max.max(r[(j, j)].abs());
    }
    let rank = (0..k)
        .filter(|&j| r[(j, j)].abs() > RANK_TOLERANCE * diag_max)
        .count();
    if rank < n {
        return Err(Error::RankDeficient { rank, n });
    }
    let qtb = qr.q().transpose() * b; // n-vector (thin Q since m ≥ rank = n)
    let coefficients = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient { rank, n })?;
    Ok(FitResult {
        basis: Arc::clone(basis),
        coefficients,
        gram_deviation: None,
        gram_condition: None,
        conditioned_zeroed: false,
        redraws_used: 0,
    })
}

/// Sample Gramian of `basis` under the weighted sample inner product, with
/// spectral deviation from the identity and condition number.
pub fn gramian(sample: &WeightedSample, basis: &Arc<OrthonormalBasis>) -> Result<GramianInfo> {
    check_shapes(sample, basis)?;
    let scaled = scaled_collocation(sample, basis);
    let g = &scaled * scaled.transpose();
    let eig = g.clone().symmetric_eigen();
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = f64::NEG_INFINITY;
    let mut deviation: f64 = 0.0;
    for &l in eig.eigenvalues.iter() {
        lambda_min = lambda_min.min(l);
        lambda_max = lambda_max.max(l);
        deviation = deviation.max((l - 1.0).abs());
    }
    let condition = if lambda_min > 0.0 {
        lambda_max / lambda_min
    } else {
        f64::INFINITY
    };
    Ok(GramianInfo {
        matrix: g,
        deviation,
        condition,
    })
}

/// [`fit`] plus Gramian diagnostics attached to the result.
pub fn fit_diagnosed(
    sample: &WeightedSample,
    values: &DVector<f64>,
    basis: &Arc<OrthonormalBasis>,
) -> Result<FitResult> {
    let info = gramian(sample, basis)?;
    Ok(fit(sample, values, basis)?.with_gramian(&info))
}

/// Fitted function with outputs clamped to [−τ, τ]:
/// x ↦ min{τ, |y|}·sgn(y) with y = Σ c̃ⱼ Lⱼ(x).
#[derive(Clone, Debug)]
pub struct TruncatedEstimator {
    fit: FitResult,
    tau: f64,
}

impl TruncatedEstimator {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.fit.evaluate(x).clamp(-self.tau, self.tau)
    }

    pub fn evaluate_block(&self, points: &DMatrix<f64>) -> DVector<f64> {
        let mut v = self.fit.evaluate_block(points);
        for y in v.iter_mut() {
            *y = y.clamp(-self.tau, self.tau);
        }
        v
    }
}

/// Truncation estimator at level `tau` (a known sup bound of the target):
/// never increases the L² error of the plain fit.
pub fn estimate_truncated(fit: &FitResult, tau: f64) -> Result<TruncatedEstimator> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "truncation level must be positive and finite, got {tau}"
        )));
    }
    Ok(TruncatedEstimator {
        fit: fit.clone(),
        tau,
    })
}

/// Conditioned estimator: keeps the fit when the observed Gramian satisfies
/// ‖G − I‖₂ ≤ 1/2 and returns the zero function (flagged) otherwise, so the
/// estimator's expected squared error is controlled unconditionally.
pub fn estimate_conditioned(fit: &FitResult) -> Result<FitResult> {
    let Some(deviation) = fit.gram_deviation else {
        return Err(Error::MissingDiagnostics(
            "conditioned estimator requires exact reference basis".into(),
        ));
    };
    let mut out = fit.clone();
    if deviation > 0.5 {
        out.coefficients.fill(0.0);
        out.conditioned_zeroed = true;
    }
    Ok(out)
}

/// Draws m-point samples from `measure` until the Gramian satisfies
/// ‖G − I‖₂ ≤ 1/2, then fits. The values oracle is invoked only on the
/// accepted sample — target evaluations are the scarce resource, so rejected
/// draws cost geometry and Gramian work only. `max_redraws` bounds the number
/// of *re*draws: up to max_redraws + 1 samples are attempted; exhaustion
/// reports the last deviation seen.
pub fn fit_with_redraw(
    measure: &SamplingMeasure,
    m: usize,
    mut values_oracle: impl FnMut(&DMatrix<f64>) -> DVector<f64>,
    basis: &Arc<OrthonormalBasis>,
    max_redraws: u32,
    rng: &mut impl Rng,
) -> Result<FitResult> {
    let mut last_deviation = f64::INFINITY;
    for redraw in 0..=max_redraws {
        let sample = measure.sample_measure(measure.domain(), m, rng)?;
        let info = gramian(&sample, basis)?;
        last_deviation = info.deviation;
        if info.deviation <= 0.5 {
            let values = values_oracle(&sample.points);
            let mut result = fit(&sample, &values, basis)?.with_gramian(&info);
            result.redraws_used = redraw;
            return Ok(result);
        }
        log::debug!(
            "redraw {redraw}: ‖G−I‖₂ = {:.3e} > 1/2, resampling",
            info.deviation
        );
    }
    Err(Error::RedrawsExhausted(last_deviation))
}

/// Adds centered Gaussian noise of standard deviation `sigma` to values in
/// place — the optional observation-noise hook for experiments (off unless
/// explicitly applied).
pub fn add_noise(values: &mut DVector<f64>, sigma: f64, rng: &mut impl Rng) {
    if sigma == 0.0 {
        return;
    }
    for v in values.iter_mut() {
        *v += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
}

/// A target function with exactly known expansion: coefficients on the first
/// n basis functions ("inner") plus a tail carried by the remaining functions
/// of a larger basis. Because the target is polynomial with known
/// coefficients, the L² reconstruction error of any fit in the n-prefix is
/// available in closed form (Parseval): no quadrature enters the error.
#[derive(Clone, Debug)]
pub struct SyntheticTarget {
    basis: Arc<OrthonormalBasis>,
    n: usize,
    coefficients: DVector<f64>,
    tail_energy: f64,
    tau: f64,
}

impl SyntheticTarget {
    /// Reciprocal-decay target over `basis` (which must span the fitting
    /// space *and* the tail): cⱼ = 1/j for j ≤ n, and the remaining
    /// functions carry coefficients ∝ 1/j rescaled so the tail energy
    /// Σ_{j>n} cⱼ² equals `tail_energy` exactly. `tau` is a sup bound used
    /// by the truncation estimator; it is computed from the coefficient norm
    /// and the largest basis magnitude over the sample points when first
    /// evaluated — here we bound it by Cauchy–Schwarz against a caller
    /// supplied sup of the inverse Christoffel function.
    pub fn reciprocal(
        basis: Arc<OrthonormalBasis>,
        n: usize,
        tail_energy: f64,
        k_sup: f64,
    ) -> Result<SyntheticTarget> {
        let total = basis.n();
        if n == 0 || n > total {
            return Err(Error::InvalidParameter(format!(
                "inner dimension {n} outside 1..={total}"
            )));
        }
        if !(tail_energy >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tail energy must be nonnegative, got {tail_energy}"
            )));
        }
        if n == total && tail_energy > 0.0 {
            return Err(Error::InvalidParameter(
                "no basis functions left to carry the tail".into(),
            ));
        }
        if !(k_sup >= 1.0) || !k_sup.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "k_sup must be finite and ≥ 1, got {k_sup}"
            )));
        }
        let mut coefficients = DVector::zeros(total);
        for j in 0..n {
            coefficients[j] = 1.0 / (j + 1) as f64;
        }
        if tail_energy > 0.0 {
            let mut raw_energy = 0.0;
            for j in n..total {
                let c = 1.0 / (j + 1) as f64;
                coefficients[j] = c;
                raw_energy += c * c;
            }
            let scale = (tail_energy / raw_energy).sqrt();
            for j in n..total {
                coefficients[j] *= scale;
            }
        }
        // |u(x)| = |Σ cⱼ Lⱼ(x)| ≤ ‖c‖₂ √(Σ Lⱼ(x)²) ≤ ‖c‖₂ √sup k.
        let tau = coefficients.norm() * k_sup.sqrt();
        Ok(SyntheticTarget {
            basis,
            n,
            coefficients,
            tail_energy,
            tau,
        })
    }

    /// Number of fitting-space functions (the tail starts after these).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Exact tail energy Σ_{j>n} cⱼ² as configured.
    pub fn tail_energy(&self) -> f64 {
        self.tail_energy
    }

    /// Sup bound on |u| (valid truncation level).
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// All coefficients, inner then tail, in basis order.
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// The full basis (fitting prefix plus tail functions).
    pub fn basis(&self) -> &Arc<OrthonormalBasis> {
        &self.basis
    }

    /// Target values at each column of `points` — the values oracle.
    pub fn values(&self, points: &DMatrix<f64>) -> DVector<f64> {
        self.basis.evaluate_block(points).transpose() * &self.coefficients
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.basis.evaluate(x).dot(&self.coefficients)
    }
}

/// Exact squared L² error of a fit against a synthetic target:
/// Σ_{j ≤ n} (cⱼ − c̃ⱼ)² + (tail energy). Requires the fit's basis to be the
/// n-prefix of the target's basis (same provenance and same transform).
pub fn exact_l2_error(fit: &FitResult, target: &SyntheticTarget) -> Result<f64> {
    if fit.n() != target.n {
        return Err(Error::BasisMismatch(format!(
            "fit has {} coefficients, target fitting space has {}",
            fit.n(),
            target.n
        )));
    }
    if fit.basis.provenance() != target.basis.provenance() {
        return Err(Error::BasisMismatch(format!(
            "fit basis {:?} vs target basis {:?}",
            fit.basis.provenance(),
            target.basis.provenance()
        )));
    }
    let ft = fit.basis.transform();
    let tt = target.basis.transform();
    for j in 0..fit.n() {
        for k in 0..=j {
            let d = (ft[(j, k)] - tt[(j, k)]).abs();
            if d > 1e-12 * ft[(j, j)].abs().max(1.0) {
                return Err(Error::BasisMismatch(format!(
                    "fit basis is not the {}-prefix of the target basis (row {j})",
                    fit.n()
                )));
            }
        }
    }
    let mut err = target.tail_energy;
    for j in 0..fit.n() {
        let d = target.coefficients[j] - fit.coefficients[j];
        err += d * d;
    }
    Ok(err)
}

/// Discrete inner product ⟨u, v⟩_m = (1/m) Σ w(xⁱ) u(xⁱ) v(xⁱ) of two value
/// vectors on the sample points.
pub fn sample_inner_product(
    sample: &WeightedSample,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> f64 {
    let m = sample.len();
    let mut acc = 0.0;
    for i in 0..m {
        acc += sample.weights[i] * u[i] * v[i];
    }
    acc / m as f64
}

/// Builds a weighted sample that reuses quadrature nodes and weights, so
/// exact-quadrature stand-ins can flow through the same fitting APIs.
pub fn quadrature_sample(ip: &crate::polyspace::DiscreteInnerProduct) -> WeightedSample {
    WeightedSample {
        points: ip.points().clone(),
        weights: ip.weights().clone(),
        measure: MeasureKind::Uniform,
        stats: Default::default(),
        levels: None,
    }
}
