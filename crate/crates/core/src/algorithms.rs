//! Offline and online sampling procedures.
//!
//! * [`algorithm1_offline`] — single-stage offline run: draw M points from
//!   the uniform measure, orthonormalize discretely, and expose the
//!   perturbed inverse-Christoffel evaluator k̃_n.
//! * [`sufficient_M`] — the theoretical offline budget ⌈γ·B(n)·ln(2n/ε)⌉
//!   that guarantees a well-conditioned discrete Gramian except with
//!   probability ε.
//! * [`empirical_M`] — data-driven offline budget search: grow M until the
//!   cross-sample test matrix is well conditioned.
//! * [`algorithm2_multilevel`] — offline ladder over nested spaces, each
//!   level sampled from the previous level's perturbed measure.
//! * [`algorithm3_hierarchical`] — online hierarchical sampling: points are
//!   drawn level by level from increment densities, earlier points are kept,
//!   and a cumulative weight keeps the final weighted sample unbiased.
//! * [`c_delta`] — the concentration constant c_δ = ((1+δ)ln(1+δ) − δ)⁻¹.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bounds::{ceil_to_usize, check_epsilon, gamma, hierarchical_budget};
use crate::christoffel::{
    ChristoffelEvaluator, MeasureKind, RejectionStats, SamplingMeasure, WeightedSample,
};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::least_squares::gramian;
use crate::polyspace::{
    orthonormalize_discrete, orthonormalize_exact, DiscreteInnerProduct, OrthonormalBasis,
    PolynomialSpace, Provenance,
};

/// Hard cap for the empirical sample-size search (override per call).
pub const DEFAULT_EMPIRICAL_CAP: usize = 10_000_000;

/// Default growth factor for the empirical search; geometric growth keeps
/// the total work within a constant factor of the final sample size.
pub const DEFAULT_EMPIRICAL_GROWTH: f64 = 1.5;

/// Probe budget used to seed rejection envelopes for perturbed measures.
const MEASURE_PROBES: usize = 2000;

/// Probe budget for per-level density non-negativity checks and envelopes.
const LEVEL_PROBES: usize = 10_000;

/// Monte-Carlo sample size for mixture normalization constants α_p when the
/// basis carries no exact integral diagnostics.
const ALPHA_SAMPLES: usize = 100_000;

fn points_fingerprint(points: &DMatrix<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in points.iter() {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Product of an offline stage: a basis orthonormalized in the discrete
/// inner product of the drawn points, the induced evaluator k̃_n, and
/// conditioning diagnostics of the exactly orthonormal basis on the same
/// points whenever the domain's moment oracle makes one available.
#[derive(Clone, Debug)]
pub struct OfflineResult {
    basis: Arc<OrthonormalBasis>,
    evaluator: Arc<ChristoffelEvaluator>,
    /// The offline points (one column each) the basis was built on.
    pub points: DMatrix<f64>,
    /// Inner-product weights attached to the points: all one for
    /// single-stage runs, previous-level weights for multilevel runs.
    pub weights: DVector<f64>,
    /// Number of offline points the final basis was built on.
    pub m_used: usize,
    pub points_id: String,
    /// Points drawn per level (a single entry for one-stage runs).
    pub level_counts: Vec<usize>,
    /// ‖G_M − I‖₂ of the exact basis under the discrete inner product,
    /// when the exact basis is available.
    pub gram_deviation: Option<f64>,
    /// κ(G_M) of the exact basis under the discrete inner product,
    /// when the exact basis is available.
    pub gram_condition: Option<f64>,
}

impl OfflineResult {
    pub fn basis(&self) -> &Arc<OrthonormalBasis> {
        &self.basis
    }

    pub fn evaluator(&self) -> &Arc<ChristoffelEvaluator> {
        &self.evaluator
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    /// The perturbed sampling measure dσ̃ ∝ (k̃_n/n) dμ induced by this
    /// offline stage, ready for online draws.
    pub fn measure(&self, domain: &Domain, rng: &mut impl Rng) -> Result<SamplingMeasure> {
        SamplingMeasure::from_evaluator(
            Arc::clone(&self.evaluator),
            domain.clone(),
            MEASURE_PROBES,
            rng,
        )
    }
}

fn build_offline(
    space: Arc<PolynomialSpace>,
    domain: &Domain,
    ip: &DiscreteInnerProduct,
    diagnostic_kind: MeasureKind,
    level_counts: Vec<usize>,
) -> Result<OfflineResult> {
    let basis = Arc::new(orthonormalize_discrete(Arc::clone(&space), ip)?);
    let evaluator = Arc::new(ChristoffelEvaluator::new(Arc::clone(&basis)));
    let (gram_deviation, gram_condition) = if domain.has_moment_oracle() {
        let exact = Arc::new(orthonormalize_exact(space, domain)?);
        let sample = WeightedSample {
            points: ip.points().clone(),
            weights: ip.weights().clone(),
            measure: diagnostic_kind,
            stats: RejectionStats::default(),
            levels: None,
        };
        let info = gramian(&sample, &exact)?;
        (Some(info.deviation), Some(info.condition))
    } else {
        (None, None)
    };
    Ok(OfflineResult {
        basis,
        evaluator,
        points: ip.points().clone(),
        weights: ip.weights().clone(),
        m_used: ip.len(),
        points_id: ip.points_id().to_string(),
        level_counts,
        gram_deviation,
        gram_condition,
    })
}

/// Single-stage offline run: draws `m` points from the uniform measure,
/// builds the unit-weight discrete inner product, orthonormalizes the space
/// in it, and returns the result wrapped for perturbed-measure sampling.
pub fn algorithm1_offline(
    space: Arc<PolynomialSpace>,
    domain: &Domain,
    m: usize,
    rng: &mut impl Rng,
) -> Result<OfflineResult> {
    let n = space.len();
    if m < n {
        return Err(Error::InvalidParameter(format!(
            "offline sample size {m} is below the space dimension {n}"
        )));
    }
    let points = domain.sample_uniform(m, rng)?;
    let id = format!("offline-m{m}-{:016x}", points_fingerprint(&points));
    let ip = DiscreteInnerProduct::unit_weights(points, id)?;
    build_offline(space, domain, &ip, MeasureKind::Uniform, vec![m])
}

/// Offline stage over externally supplied points and weights (for example a
/// quadrature rule): with an inner product that integrates products of space
/// functions exactly, the perturbed evaluator reproduces the exact k_n.
pub fn offline_from_inner_product(
    space: Arc<PolynomialSpace>,
    domain: &Domain,
    ip: &DiscreteInnerProduct,
) -> Result<OfflineResult> {
    let m = ip.len();
    build_offline(space, domain, ip, MeasureKind::Uniform, vec![m])
}

/// Theoretical offline budget ⌈γ·Bn·ln(2n/ε)⌉: with this many independent
/// uniform draws, the discrete Gramian of the exact basis deviates from the
/// identity by more than 1/2 with probability at most ε, provided
/// Bn ≥ sup k_n.
#[allow(non_snake_case)]
pub fn sufficient_M(n: usize, bn: f64, eps: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if !(bn >= n as f64) {
        return Err(Error::InvalidParameter(format!(
            "growth bound {bn} is below n = {n}; sup k_n is never below n"
        )));
    }
    check_epsilon(eps)?;
    ceil_to_usize(gamma() * bn * (2.0 * n as f64 / eps).ln())
}

/// Cross-sample condition number κ(T) at sample size `m`: orthonormalize on
/// one fresh m-point sample, evaluate the resulting Gram matrix on a second
/// independent m-point sample, and return its spectral condition number
/// (+∞ if the first sample is rank-deficient or the Gram matrix is not
/// positive definite).
pub fn empirical_condition_probe(
    space: Arc<PolynomialSpace>,
    domain: &Domain,
    m: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let y = domain.sample_uniform(m, rng)?;
    let z = domain.sample_uniform(m, rng)?;
    let id = format!("empirical-y-m{m}-{:016x}", points_fingerprint(&y));
    let ip_y = DiscreteInnerProduct::unit_weights(y, id)?;
    match orthonormalize_discrete(space, &ip_y) {
        Ok(basis_y) => {
            let vals = basis_y.evaluate_block(&z);
            let t = (&vals * vals.transpose()) / m as f64;
            let eig = t.symmetric_eigen();
            let mut lambda_min = f64::INFINITY;
            let mut lambda_max = f64::NEG_INFINITY;
            for &l in eig.eigenvalues.iter() {
                lambda_min = lambda_min.min(l);
                lambda_max = lambda_max.max(l);
            }
            Ok(if lambda_min > 0.0 {
                lambda_max / lambda_min
            } else {
                f64::INFINITY
            })
        }
        Err(Error::RankDeficient { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Data-driven offline budget: starting from max(`m0`, n), grows the sample
/// size geometrically until the cross-sample condition number κ(T) drops to
/// `c_star`, then returns that size together with an offline result built on
/// the second (test) sample of the accepted step.
#[allow(non_snake_case)]
pub fn empirical_M(
    space: Arc<PolynomialSpace>,
    domain: &Domain,
    c_star: f64,
    m0: usize,
    growth: f64,
    cap: usize,
    rng: &mut impl Rng,
) -> Result<(usize, OfflineResult)> {
    if !(c_star > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "condition target must exceed 1, got {c_star}"
        )));
    }
    if !(growth > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "growth factor must exceed 1, got {growth}"
        )));
    }
    let n = space.len();
    let mut m = m0.max(n);
    let mut last_kappa = f64::INFINITY;
    loop {
        if m > cap {
            return Err(Error::EmpiricalMDiverged { cap, last_kappa });
        }
        // Fresh, independent y- and z-samples at every step.
        let y = domain.sample_uniform(m, rng)?;
        let z = domain.sample_uniform(m, rng)?;
        let id_y = format!("empirical-y-m{m}-{:016x}", points_fingerprint(&y));
        match orthonormalize_discrete(Arc::clone(&space), &DiscreteInnerProduct::unit_weights(y, id_y)?) {
            Ok(basis_y) => {
                let vals = basis_y.evaluate_block(&z);
                let t = (&vals * vals.transpose()) / m as f64;
                let eig = t.symmetric_eigen();
                let mut lambda_min = f64::INFINITY;
                let mut lambda_max = f64::NEG_INFINITY;
                for &l in eig.eigenvalues.iter() {
                    lambda_min = lambda_min.min(l);
                    lambda_max = lambda_max.max(l);
                }
                last_kappa = if lambda_min > 0.0 {
                    lambda_max / lambda_min
                } else {
                    f64::INFINITY
                };
                log::debug!("empirical search: M = {m}, κ(T) = {last_kappa:.4}");
                if last_kappa <= c_star {
                    let id_z = format!("empirical-z-m{m}-{:016x}", points_fingerprint(&z));
                    let ip_z = DiscreteInnerProduct::unit_weights(z, id_z)?;
                    let result =
                        build_offline(space, domain, &ip_z, MeasureKind::Uniform, vec![m])?;
                    return Ok((m, result));
                }
            }
            Err(Error::RankDeficient { .. }) => {
                last_kappa = f64::INFINITY;
                log::debug!("empirical search: M = {m}, first sample rank-deficient");
            }
            Err(e) => return Err(e),
        }
        m = ((m as f64) * growth).ceil().max((m + 1) as f64) as usize;
    }
}

/// A ladder of nested spaces with per-level budgets.
#[derive(Clone, Debug)]
pub struct LevelSchedule {
    dims: Vec<usize>,
    offline_counts: Vec<usize>,
    epsilons: Vec<f64>,
    kappa: f64,
    deltas: Option<Vec<f64>>,
    online_counts: Option<Vec<usize>>,
}

impl LevelSchedule {
    /// Validated schedule: strictly increasing dimensions n₁ < … < n_q, one
    /// offline count M_p ≥ n_p and one failure budget ε_p ∈ (0,1) per level
    /// with Σ ε_p < 1, and a growth constant κ ≥ 1 for the low-level
    /// Christoffel bound k_{n₁} ≤ 3κn₁.
    pub fn new(
        dims: Vec<usize>,
        offline_counts: Vec<usize>,
        epsilons: Vec<f64>,
        kappa: f64,
    ) -> Result<LevelSchedule> {
        if dims.is_empty() {
            return Err(Error::ScheduleViolation("no levels".into()));
        }
        if dims[0] == 0 {
            return Err(Error::ScheduleViolation("dimensions must be positive".into()));
        }
        if dims.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::ScheduleViolation(
                "dimensions must be strictly increasing".into(),
            ));
        }
        if offline_counts.len() != dims.len() || epsilons.len() != dims.len() {
            return Err(Error::ScheduleViolation(format!(
                "{} levels but {} offline counts and {} failure budgets",
                dims.len(),
                offline_counts.len(),
                epsilons.len()
            )));
        }
        if offline_counts.iter().zip(&dims).any(|(m, n)| m < n) {
            return Err(Error::ScheduleViolation(
                "every offline count must reach its level's dimension".into(),
            ));
        }
        if epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::ScheduleViolation(
                "failure budgets must lie in (0, 1)".into(),
            ));
        }
        if epsilons.iter().sum::<f64>() >= 1.0 {
            return Err(Error::ScheduleViolation(
                "total failure budget must stay below 1".into(),
            ));
        }
        if !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(Error::ScheduleViolation(format!(
                "growth constant must be a finite value ≥ 1, got {kappa}"
            )));
        }
        Ok(LevelSchedule {
            dims,
            offline_counts,
            epsilons,
            kappa,
            deltas: None,
            online_counts: None,
        })
    }

    /// Attaches per-level norm-equivalence margins δ_p ∈ (0, 1/2) with
    /// Σ δ_p ≤ 1/2 (hierarchical sampling only).
    pub fn with_deltas(mut self, deltas: Vec<f64>) -> Result<LevelSchedule> {
        if deltas.len() != self.dims.len() {
            return Err(Error::ScheduleViolation(format!(
                "{} levels but {} margins",
                self.dims.len(),
                deltas.len()
            )));
        }
        if deltas.iter().any(|d| !(*d > 0.0 && *d < 0.5)) {
            return Err(Error::ScheduleViolation(
                "margins must lie in (0, 1/2)".into(),
            ));
        }
        if deltas.iter().sum::<f64>() > 0.5 + 1e-12 {
            return Err(Error::ScheduleViolation(
                "total margin must not exceed 1/2".into(),
            ));
        }
        self.deltas = Some(deltas);
        Ok(self)
    }

    /// Attaches per-level cumulative online counts m₁ < … < m_q. The ratios
    /// m_p/n_p must be non-decreasing — this is exactly the condition that
    /// keeps every increment density non-negative.
    pub fn with_online_counts(mut self, online: Vec<usize>) -> Result<LevelSchedule> {
        if online.len() != self.dims.len() {
            return Err(Error::ScheduleViolation(format!(
                "{} levels but {} online counts",
                self.dims.len(),
                online.len()
            )));
        }
        if online[0] == 0 {
            return Err(Error::ScheduleViolation(
                "online counts must be positive".into(),
            ));
        }
        // Exact integer check of m_p/n_p monotonicity by cross-multiplication.
        for p in 1..online.len() {
            let lhs = online[p] as u128 * self.dims[p - 1] as u128;
            let rhs = online[p - 1] as u128 * self.dims[p] as u128;
            if lhs < rhs {
                return Err(Error::ScheduleViolation(
                    "schedule violates m_p/n_p monotonicity".into(),
                ));
            }
        }
        self.online_counts = Some(online);
        Ok(self)
    }

    /// Offline ladder preset: ε_p = ε/q and M_p = ⌈3κγ·n_p·ln(2n_p/ε_p)⌉.
    pub fn multilevel_preset(dims: Vec<usize>, eps: f64, kappa: f64) -> Result<LevelSchedule> {
        check_epsilon(eps)?;
        let q = dims.len().max(1);
        let eps_p = eps / q as f64;
        let mut offline_counts = Vec::with_capacity(dims.len());
        for &n in &dims {
            offline_counts.push(ceil_to_usize(
                3.0 * kappa * gamma() * n as f64 * (2.0 * n as f64 / eps_p).ln(),
            )?);
        }
        LevelSchedule::new(dims.clone(), offline_counts, vec![eps_p; dims.len()], kappa)
    }

    /// Hierarchical preset: ε_p = ε/q, δ_p = δ/q, online counts
    /// m_p = ⌈(γ/(1−2δ_p))·n_p·ln(2n_p/ε_p)⌉ and offline counts
    /// M_p = ⌈2κ·c_{δ_p}·n_p·ln(2n_p/ε_p)⌉.
    pub fn hierarchical_preset(
        dims: Vec<usize>,
        eps: f64,
        delta: f64,
        kappa: f64,
    ) -> Result<LevelSchedule> {
        check_epsilon(eps)?;
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::ScheduleViolation(format!(
                "total margin must lie in (0, 1/2], got {delta}"
            )));
        }
        let q = dims.len().max(1);
        let eps_p = eps / q as f64;
        let delta_p = delta / q as f64;
        let mut offline_counts = Vec::with_capacity(dims.len());
        let mut online_counts = Vec::with_capacity(dims.len());
        for &n in &dims {
            let log_term = (2.0 * n as f64 / eps_p).ln();
            offline_counts.push(ceil_to_usize(
                2.0 * kappa * c_delta(delta_p)? * n as f64 * log_term,
            )?);
            online_counts.push(hierarchical_budget(n, delta_p, eps_p)?);
        }
        LevelSchedule::new(dims.clone(), offline_counts, vec![eps_p; dims.len()], kappa)?
            .with_deltas(vec![delta_p; dims.len()])?
            .with_online_counts(online_counts)
    }

    /// The (6/π²)·ε/p² split for open-ended ladders where the number of
    /// levels is not fixed in advance (the same rule applies to margins).
    pub fn open_ended_split(total: f64, p: usize) -> f64 {
        debug_assert!(p >= 1);
        6.0 / (std::f64::consts::PI * std::f64::consts::PI) * total / (p * p) as f64
    }

    pub fn q(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Final (target) space dimension n_q.
    pub fn target_n(&self) -> usize {
        *self.dims.last().expect("validated non-empty")
    }

    pub fn offline_counts(&self) -> &[usize] {
        &self.offline_counts
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn deltas(&self) -> Option<&[f64]> {
        self.deltas.as_deref()
    }

    pub fn online_counts(&self) -> Option<&[usize]> {
        self.online_counts.as_deref()
    }

    /// Total number of offline points across all levels.
    pub fn total_offline(&self) -> usize {
        self.offline_counts.iter().sum()
    }
}

/// Offline ladder: level p draws M_p points from the previous level's
/// perturbed measure, carries their weights w̃_{p−1} = n_{p−1}/k̃_{n_{p−1}}
/// into the weighted inner product, orthonormalizes the larger space in it,
/// and hands the refreshed measure to the next level. Returns the final
/// level's result (its `level_counts` lists every level's size).
pub fn algorithm2_multilevel(
    schedule: &LevelSchedule,
    domain: &Domain,
    rng: &mut impl Rng,
) -> Result<OfflineResult> {
    let q = schedule.q();
    let mut measure: Option<SamplingMeasure> = None;
    let mut result: Option<OfflineResult> = None;
    for p in 0..q {
        let n_p = schedule.dims[p];
        let m_p = schedule.offline_counts[p];
        let at_level = |e: Error| Error::AtLevel {
            level: p + 1,
            source: Box::new(e),
        };
        let space = Arc::new(PolynomialSpace::with_dimension(domain.dim(), n_p)?);
        let (ip, kind) = match &measure {
            None => {
                let points = domain.sample_uniform(m_p, rng)?;
                let id = format!("ml-l{}-m{m_p}-{:016x}", p + 1, points_fingerprint(&points));
                (
                    DiscreteInnerProduct::unit_weights(points, id)?,
                    MeasureKind::Uniform,
                )
            }
            Some(prev) => {
                let sample = prev.sample_measure(domain, m_p, rng).map_err(at_level)?;
                let id = format!(
                    "ml-l{}-m{m_p}-{:016x}",
                    p + 1,
                    points_fingerprint(&sample.points)
                );
                let wid = format!("{id}-w");
                (
                    DiscreteInnerProduct::new(sample.points, sample.weights, id, wid)?,
                    MeasureKind::Perturbed,
                )
            }
        };
        let level_result = build_offline(
            Arc::clone(&space),
            domain,
            &ip,
            kind,
            schedule.offline_counts[..=p].to_vec(),
        )
        .map_err(|e| Error::AtLevel {
            level: p + 1,
            source: Box::new(e),
        })?;
        if p + 1 < q {
            measure = Some(level_result.measure(domain, rng).map_err(|e| Error::AtLevel {
                level: p + 1,
                source: Box::new(e),
            })?);
        }
        result = Some(level_result);
    }
    Ok(result.expect("schedule has at least one level"))
}

/// Concentration constant c_δ = ((1+δ)·ln(1+δ) − δ)⁻¹ for δ ∈ (0, 1);
/// c_{1/2} coincides with γ, and c_δ ~ 2/δ² as δ → 0.
pub fn c_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "margin must lie in (0, 1), got {delta}"
        )));
    }
    Ok(1.0 / ((1.0 + delta) * (1.0 + delta).ln() - delta))
}

/// State of a hierarchical online sampling run: all points drawn so far
/// (tagged by level), the nested bases, the per-level mixture
/// normalizations α_p, and the cumulative weight function.
#[derive(Clone, Debug)]
pub struct HierarchicalSampleState {
    schedule: LevelSchedule,
    domain: Domain,
    /// Target-level basis; level p uses its leading n_p functions, so the
    /// bases are nested by construction.
    basis: Arc<OrthonormalBasis>,
    /// Per-level prefix bases (last entry is the full basis).
    prefixes: Vec<Arc<OrthonormalBasis>>,
    /// Exact per-function integrals ∫L_j² dμ when the basis provides them;
    /// used to normalize increment densities without Monte-Carlo noise.
    exact_integrals: Option<Vec<f64>>,
    point_data: Vec<f64>,
    levels: Vec<u32>,
    alphas: Vec<f64>,
    alpha_ses: Vec<f64>,
    envelopes: Vec<f64>,
    stats: RejectionStats,
    completed: usize,
}

impl HierarchicalSampleState {
    /// Cumulative m_p for the completed levels (0 when none).
    fn online_target(&self, level: usize) -> usize {
        if level == 0 {
            0
        } else {
            self.schedule.online_counts().expect("validated")[level - 1]
        }
    }

    /// Ratio m_p/n_p with m₀/n₀ := 0.
    fn ratio(&self, level: usize) -> f64 {
        if level == 0 {
            0.0
        } else {
            self.online_target(level) as f64 / self.schedule.dims[level - 1] as f64
        }
    }

    /// Raw (unnormalized) increment density of 1-based level p at each
    /// column: g_p = r_p·Σ_{n_{p−1}<j≤n_p} L_j² + (r_p − r_{p−1})·k_{n_{p−1}}
    /// with r_p = m_p/n_p. Both terms are non-negative, so the value never
    /// dips below zero even in floating point.
    fn raw_increment_block(&self, p: usize, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n_p = self.schedule.dims[p - 1];
        let n_prev = if p == 1 { 0 } else { self.schedule.dims[p - 2] };
        let r_p = self.ratio(p);
        let r_prev = self.ratio(p - 1);
        let mut coeff = r_p - r_prev;
        if coeff < 0.0 {
            if coeff > -1e-12 * r_p {
                coeff = 0.0; // equal ratios up to f64 division rounding
            } else {
                return Err(Error::ScheduleViolation(
                    "schedule violates m_p/n_p monotonicity".into(),
                ));
            }
        }
        let vals = self.prefixes[p - 1].evaluate_block(points);
        let mut out = DVector::zeros(points.ncols());
        for c in 0..points.ncols() {
            let col = vals.column(c);
            let mut k_prev = 0.0;
            for j in 0..n_prev {
                k_prev += col[j] * col[j];
            }
            let mut tail = 0.0;
            for j in n_prev..n_p {
                tail += col[j] * col[j];
            }
            out[c] = r_p * tail + coeff * k_prev;
        }
        Ok(out)
    }

    /// ∫ g_p dμ from exact integrals when available.
    fn exact_increment_mass(&self, p: usize) -> Option<f64> {
        let integrals = self.exact_integrals.as_ref()?;
        let n_p = self.schedule.dims[p - 1];
        let n_prev = if p == 1 { 0 } else { self.schedule.dims[p - 2] };
        let r_p = self.ratio(p);
        let r_prev = self.ratio(p - 1);
        let coeff = (r_p - r_prev).max(0.0);
        let tail: f64 = integrals[n_prev..n_p].iter().sum();
        let head: f64 = integrals[..n_prev].iter().sum();
        Some(r_p * tail + coeff * head)
    }

    /// Number of levels already sampled.
    pub fn completed_levels(&self) -> usize {
        self.completed
    }

    pub fn is_complete(&self) -> bool {
        self.completed == self.schedule.q()
    }

    pub fn schedule(&self) -> &LevelSchedule {
        &self.schedule
    }

    pub fn basis(&self) -> &Arc<OrthonormalBasis> {
        &self.basis
    }

    /// Mixture normalizations α_p for the completed levels (1 when the
    /// basis integrates exactly).
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Standard errors of the α_p estimates (0 for exact normalizations).
    pub fn alpha_standard_errors(&self) -> &[f64] {
        &self.alpha_ses
    }

    /// Rejection-sampling envelope used for each completed level.
    pub fn envelopes(&self) -> &[f64] {
        &self.envelopes
    }

    pub fn rejection_stats(&self) -> RejectionStats {
        self.stats
    }

    /// All points drawn so far, one column each, in draw order (level-1
    /// points first).
    pub fn points(&self) -> DMatrix<f64> {
        let d = self.domain.dim();
        DMatrix::from_column_slice(d, self.levels.len(), &self.point_data)
    }

    /// The level each point was drawn at, 1-based, parallel to `points`.
    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    /// Normalized increment density dρ_p/dμ = α_p·g_p/(m_p − m_{p−1}) of a
    /// completed 1-based level at each column.
    pub fn level_density_block(&self, p: usize, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        if p == 0 || p > self.completed {
            return Err(Error::InvalidParameter(format!(
                "level {p} not sampled yet ({} completed)",
                self.completed
            )));
        }
        let dm = (self.online_target(p) - self.online_target(p - 1)) as f64;
        let mut g = self.raw_increment_block(p, points)?;
        g *= self.alphas[p - 1] / dm;
        Ok(g)
    }

    /// Reciprocal cumulative weight after `upto` levels at each column:
    /// 1/w = (1/m_upto) Σ_{p ≤ upto} α_p g_p, so that
    /// w · Σ_{p ≤ upto} (m_p − m_{p−1}) dρ_p/dμ = m_upto identically.
    fn inverse_weight_block_upto(
        &self,
        upto: usize,
        points: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        if upto == 0 || upto > self.completed {
            return Err(Error::InvalidParameter(format!(
                "level {upto} not sampled yet ({} completed)",
                self.completed
            )));
        }
        let m = self.online_target(upto) as f64;
        let vals = self.prefixes[upto - 1].evaluate_block(points);
        let mut out = DVector::zeros(points.ncols());
        for c in 0..points.ncols() {
            let col = vals.column(c);
            // Prefix sums of squared basis values at the level cuts.
            let mut acc = 0.0;
            let mut j = 0usize;
            let mut k_at_cut = Vec::with_capacity(upto);
            for p in 0..upto {
                let cut = self.schedule.dims[p];
                while j < cut {
                    acc += col[j] * col[j];
                    j += 1;
                }
                k_at_cut.push(acc);
            }
            let mut inv_w = 0.0;
            for p in 1..=upto {
                let k_p = k_at_cut[p - 1];
                let k_prev = if p == 1 { 0.0 } else { k_at_cut[p - 2] };
                let r_p = self.ratio(p);
                let r_prev = self.ratio(p - 1);
                let coeff = (r_p - r_prev).max(0.0);
                inv_w += self.alphas[p - 1] * (r_p * (k_p - k_prev) + coeff * k_prev);
            }
            out[c] = inv_w / m;
        }
        Ok(out)
    }

    /// Cumulative weights w at each column over all completed levels.
    pub fn weight_block(&self, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.weight_block_at_level(self.completed, points)
    }

    /// Cumulative weights as they stood right after 1-based level `p` was
    /// sampled (mixture of the first p increment densities only).
    pub fn weight_block_at_level(
        &self,
        p: usize,
        points: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        let mut inv = self.inverse_weight_block_upto(p, points)?;
        for v in inv.iter_mut() {
            *v = 1.0 / *v;
        }
        Ok(inv)
    }

    /// Largest relative deviation of the mixture identity
    /// w(x)·Σ_p (m_p − m_{p−1})·(dρ_p/dμ)(x) = m over the given points.
    pub fn mixture_identity_max_deviation(&self, points: &DMatrix<f64>) -> Result<f64> {
        let m = self.online_target(self.completed) as f64;
        let w = self.weight_block(points)?;
        let mut mix = DVector::zeros(points.ncols());
        for p in 1..=self.completed {
            let dm = (self.online_target(p) - self.online_target(p - 1)) as f64;
            let rho = self.level_density_block(p, points)?;
            mix += rho * dm;
        }
        let mut worst = 0.0f64;
        for c in 0..points.ncols() {
            worst = worst.max((w[c] * mix[c] / m - 1.0).abs());
        }
        Ok(worst)
    }

    /// The weighted sample over all completed levels: every point with its
    /// cumulative weight and level tag.
    pub fn sample(&self) -> Result<WeightedSample> {
        self.sample_at_level(self.completed)
    }

    /// The weighted sample as it stood right after 1-based level `p`: the
    /// first m_p points, weighted by the p-level mixture.
    pub fn sample_at_level(&self, p: usize) -> Result<WeightedSample> {
        if p == 0 || p > self.completed {
            return Err(Error::InvalidParameter(format!(
                "level {p} not sampled yet ({} completed)",
                self.completed
            )));
        }
        let m_p = self.online_target(p);
        let all = self.points();
        let points = all.columns(0, m_p).clone_owned();
        let weights = self.weight_block_at_level(p, &points)?;
        Ok(WeightedSample {
            points,
            weights,
            measure: MeasureKind::Hierarchical,
            stats: self.stats,
            levels: Some(self.levels[..m_p].to_vec()),
        })
    }

    /// Samples the next level: validates the increment density on a fresh
    /// probe set, estimates its normalization, then rejection-samples the
    /// m_p − m_{p−1} new points and appends them (earlier points are kept).
    pub fn advance_level(&mut self, rng: &mut impl Rng) -> Result<()> {
        let p = self.completed + 1;
        if p > self.schedule.q() {
            return Err(Error::InvalidParameter(
                "all levels already sampled".into(),
            ));
        }
        let dm = self.online_target(p) - self.online_target(p - 1);

        // Probe pass: non-negativity check plus envelope seed.
        let probes = self.domain.sample_uniform(LEVEL_PROBES, rng)?;
        let g_probe = self.raw_increment_block(p, &probes)?;
        let mut probe_max = 0.0f64;
        let mut probe_sum = 0.0;
        let mut probe_sq = 0.0;
        for &g in g_probe.iter() {
            if g < -1e-10 {
                return Err(Error::ScheduleViolation(
                    "schedule violates m_p/n_p monotonicity".into(),
                ));
            }
            probe_max = probe_max.max(g);
            probe_sum += g;
            probe_sq += g * g;
        }
        // Boundary probes: inverse Christoffel functions peak there.
        if let Some(builtin) = self.domain.builtin_kind() {
            let boundary = builtin.boundary_probe_grid(1000);
            let g_boundary = self.raw_increment_block(p, &boundary)?;
            for &g in g_boundary.iter() {
                probe_max = probe_max.max(g);
            }
        }

        // Normalization α_p = (m_p − m_{p−1}) / ∫g_p dμ: exact when the
        // basis carries exact integrals, Monte-Carlo otherwise.
        let (alpha, alpha_se) = match self.exact_increment_mass(p) {
            Some(mass) => (dm as f64 / mass, 0.0),
            None => {
                let extra = self
                    .domain
                    .sample_uniform(ALPHA_SAMPLES - LEVEL_PROBES, rng)?;
                let g_extra = self.raw_increment_block(p, &extra)?;
                let mut sum = probe_sum;
                let mut sq = probe_sq;
                for &g in g_extra.iter() {
                    sum += g;
                    sq += g * g;
                    probe_max = probe_max.max(g);
                }
                let count = ALPHA_SAMPLES as f64;
                let mean = sum / count;
                let var = (sq / count - mean * mean).max(0.0);
                let se_mean = (var / count).sqrt();
                let alpha = dm as f64 / mean;
                // First-order error propagation through x ↦ Δm/x.
                let se = dm as f64 * se_mean / (mean * mean);
                log::info!(
                    "level {p}: mixture normalization α = {alpha:.6} ± {se:.2e} ({count} draws)"
                );
                (alpha, se)
            }
        };

        // Rejection sampling against a constant envelope over the raw
        // density. A proposal above the envelope invalidates the run so
        // far at this level: the envelope doubles and the level restarts,
        // preserving exactness of the accepted law.
        let mut envelope = (1.5 * probe_max).max(f64::MIN_POSITIVE);
        let mut accepted: Vec<f64> = Vec::with_capacity(dm * self.domain.dim());
        let mut stats = RejectionStats::default();
        'level: loop {
            accepted.clear();
            let mut got = 0usize;
            while got < dm {
                let rate = if stats.proposals > 512 {
                    (stats.accepted as f64 / stats.proposals as f64).max(0.02)
                } else {
                    (probe_sum / LEVEL_PROBES as f64 / envelope).clamp(0.02, 1.0)
                };
                let batch = (((dm - got) as f64 / rate).ceil() as usize).clamp(64, 32_768);
                let pts = self.domain.sample_uniform(batch, rng)?;
                let g = self.raw_increment_block(p, &pts)?;
                for i in 0..batch {
                    stats.proposals += 1;
                    if g[i] > envelope {
                        stats.violations += 1;
                        envelope *= 2.0;
                        log::warn!(
                            "level {p}: density {:.3e} exceeded envelope, doubling to {envelope:.3e} and restarting level",
                            g[i]
                        );
                        continue 'level;
                    }
                    if rng.gen::<f64>() * envelope < g[i] {
                        stats.accepted += 1;
                        got += 1;
                        for r in 0..self.domain.dim() {
                            accepted.push(pts[(r, i)]);
                        }
                        if got == dm {
                            break;
                        }
                    }
                }
            }
            break;
        }

        self.point_data.extend_from_slice(&accepted);
        self.levels.extend(std::iter::repeat(p as u32).take(dm));
        self.alphas.push(alpha);
        self.alpha_ses.push(alpha_se);
        self.envelopes.push(envelope);
        self.stats.proposals += stats.proposals;
        self.stats.accepted += stats.accepted;
        self.stats.violations += stats.violations;
        self.completed = p;
        log::debug!(
            "level {p}: {dm} new points, acceptance {:.3}, envelope {envelope:.3e}",
            stats.acceptance_fraction()
        );
        Ok(())
    }
}

/// Prepares a hierarchical run: validates the schedule (online counts are
/// required), builds or adopts the target-level basis, and returns the empty
/// state ready for [`HierarchicalSampleState::advance_level`].
pub fn algorithm3_init(
    schedule: LevelSchedule,
    domain: &Domain,
    basis: Option<Arc<OrthonormalBasis>>,
) -> Result<HierarchicalSampleState> {
    if schedule.online_counts().is_none() {
        return Err(Error::ScheduleViolation(
            "hierarchical sampling needs online counts (use with_online_counts or hierarchical_preset)"
                .into(),
        ));
    }
    let n_q = schedule.target_n();
    let basis = match basis {
        Some(b) => {
            if b.n() != n_q {
                return Err(Error::BasisMismatch(format!(
                    "basis has {} functions, schedule targets {n_q}",
                    b.n()
                )));
            }
            if b.space().dim() != domain.dim() {
                return Err(Error::BasisMismatch(format!(
                    "basis is {}-variate, domain is {}-variate",
                    b.space().dim(),
                    domain.dim()
                )));
            }
            b
        }
        None => {
            let space = Arc::new(PolynomialSpace::with_dimension(domain.dim(), n_q)?);
            Arc::new(orthonormalize_exact(space, domain)?)
        }
    };
    let mut prefixes = Vec::with_capacity(schedule.q());
    for &n_p in schedule.dims() {
        if n_p == n_q {
            prefixes.push(Arc::clone(&basis));
        } else {
            prefixes.push(Arc::new(basis.prefix(n_p)?));
        }
    }
    // Exact integrals ∫L_j² dμ are trusted only for exactly orthonormal
    // bases (where they also certify the moment computation).
    let exact_integrals = match basis.provenance() {
        Provenance::Exact { .. } => basis.gram_diag().map(|d| d.to_vec()),
        _ => None,
    };
    Ok(HierarchicalSampleState {
        schedule,
        domain: domain.clone(),
        basis,
        prefixes,
        exact_integrals,
        point_data: Vec::new(),
        levels: Vec::new(),
        alphas: Vec::new(),
        alpha_ses: Vec::new(),
        envelopes: Vec::new(),
        stats: RejectionStats::default(),
        completed: 0,
    })
}

/// Full hierarchical run with the exactly orthonormal basis: every level
/// sampled, state returned for weighting and fitting.
pub fn algorithm3_hierarchical(
    schedule: LevelSchedule,
    domain: &Domain,
    rng: &mut impl Rng,
) -> Result<HierarchicalSampleState> {
    let mut state = algorithm3_init(schedule, domain, None)?;
    while !state.is_complete() {
        let level = state.completed_levels() + 1;
        state.advance_level(rng).map_err(|e| Error::AtLevel {
            level,
            source: Box::new(e),
        })?;
    }
    Ok(state)
}

/// Full hierarchical run over a caller-supplied (for example offline-built)
/// basis of the target space.
pub fn algorithm3_with_basis(
    schedule: LevelSchedule,
    domain: &Domain,
    basis: Arc<OrthonormalBasis>,
    rng: &mut impl Rng,
) -> Result<HierarchicalSampleState> {
    let mut state = algorithm3_init(schedule, domain, Some(basis))?;
    while !state.is_complete() {
        let level = state.completed_levels() + 1;
        state.advance_level(rng).map_err(|e| Error::AtLevel {
            level,
            source: Box::new(e),
        })?;
    }
    Ok(state)
}
