//! The inverse Christoffel function k_n(x) = Σⱼ Lⱼ(x)², its sup estimation,
//! and exact rejection sampling from the measures it induces.
//!
//! For an orthonormal basis of an n-dimensional polynomial space, the
//! density k_n/n against the uniform measure μ defines the sampling measure
//! that makes weighted least squares stable at near-minimal sample size. The
//! same machinery serves the exactly orthonormalized bases (optimal measure)
//! and discretely orthonormalized ones (perturbed measure); the two differ
//! only in where their orthonormality claim comes from.

use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bounds::{bound_B, DomainClass};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::polyspace::{OrthonormalBasis, Provenance};

/// Evaluates k_n for one orthonormal basis; immutable and cheap to share.
#[derive(Debug)]
pub struct ChristoffelEvaluator {
    basis: Arc<OrthonormalBasis>,
    sup_cache: OnceLock<f64>,
}

impl ChristoffelEvaluator {
    pub fn new(basis: Arc<OrthonormalBasis>) -> ChristoffelEvaluator {
        ChristoffelEvaluator {
            basis,
            sup_cache: OnceLock::new(),
        }
    }

    pub fn basis(&self) -> &Arc<OrthonormalBasis> {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    /// k_n(x) = Σⱼ Lⱼ(x)². Defined (and positive) everywhere; meaningful as
    /// a density only on the domain the basis was built for.
    pub fn evaluate_k(&self, x: &[f64]) -> f64 {
        self.basis.evaluate(x).norm_squared()
    }

    /// k_n at many points (columns); one pass of matrix arithmetic.
    pub fn evaluate_k_block(&self, points: &DMatrix<f64>) -> DVector<f64> {
        let vals = self.basis.evaluate_block(points);
        DVector::from_iterator(
            points.ncols(),
            vals.column_iter().map(|c| c.norm_squared()),
        )
    }

    /// Estimated sup of k_n over the domain: the max over `probe_count`
    /// uniform samples — plus registered extreme points and a boundary grid
    /// for built-ins — inflated by a 1.2 safety factor, then capped by the
    /// theoretical growth bound when the domain has one and it is smaller.
    /// The first estimate is cached and reused as the rejection envelope.
    pub fn estimate_sup(
        &self,
        domain: &Domain,
        probe_count: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if probe_count < 1_000 {
            return Err(Error::InvalidParameter(format!(
                "sup estimation needs ≥ 1000 probes, got {probe_count}"
            )));
        }
        let samples = domain.sample_uniform(probe_count, rng)?;
        let mut best = self.evaluate_k_block(&samples).max();
        if let Some(b) = domain.builtin_kind() {
            for p in b.extreme_points() {
                best = best.max(self.evaluate_k(&p));
            }
            let grid = b.boundary_probe_grid(1_000);
            best = best.max(self.evaluate_k_block(&grid).max());
        }
        let mut estimate = 1.2 * best;
        if let Some(b) = domain.builtin_kind() {
            let theoretical = bound_B(&DomainClass::for_builtin(b), domain.dim(), self.n())?;
            if theoretical < estimate {
                log::debug!(
                    "sup estimate for n = {}: theoretical bound {theoretical:.6e} \
                     beats probe estimate {estimate:.6e}",
                    self.n()
                );
                estimate = theoretical;
            } else {
                log::debug!(
                    "sup estimate for n = {}: probe estimate {estimate:.6e} \
                     beats theoretical bound {theoretical:.6e}",
                    self.n()
                );
            }
        }
        let _ = self.sup_cache.set(estimate);
        Ok(estimate)
    }

    /// The cached first sup estimate, if one was computed.
    pub fn sup_estimate(&self) -> Option<f64> {
        self.sup_cache.get().copied()
    }
}

/// ∫ k_n dμ computed from the exact Gram diagonal of the basis (trace
/// identity); must equal n.
pub fn integral_check(ev: &ChristoffelEvaluator, domain: &Domain) -> Result<f64> {
    match ev.basis().provenance() {
        Provenance::Exact { domain: label } => {
            if label != domain.label() {
                return Err(Error::BasisMismatch(format!(
                    "basis is orthonormal for '{label}', not '{}'",
                    domain.label()
                )));
            }
        }
        other => {
            return Err(Error::BasisMismatch(format!(
                "trace identity needs an exactly orthonormalized basis, got {other:?}"
            )));
        }
    }
    let diag = ev.basis().gram_diag().ok_or_else(|| {
        Error::MissingDiagnostics("basis carries no exact Gram diagonal".into())
    })?;
    Ok(diag.iter().sum())
}

/// What a [`SamplingMeasure`] draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasureKind {
    /// The uniform measure μ itself.
    Uniform,
    /// dσ = (k_n/n) dμ with k_n from an exactly orthonormalized basis.
    Optimal,
    /// dσ̃ ∝ (k̃_n/n) dμ with k̃_n from a discretely orthonormalized basis;
    /// the normalization constant is never needed for sampling and weights
    /// are reported up to one common factor.
    Perturbed,
    /// Level mixture from hierarchical sampling: points drawn level by level
    /// from the increment densities ρ_p, weighted by the cumulative weight.
    Hierarchical,
}

impl MeasureKind {
    pub fn label(self) -> &'static str {
        match self {
            MeasureKind::Uniform => "uniform",
            MeasureKind::Optimal => "optimal",
            MeasureKind::Perturbed => "perturbed",
            MeasureKind::Hierarchical => "hierarchical",
        }
    }
}

/// Points drawn from a sampling measure together with the least-squares
/// weights w(xⁱ) that make the weighted inner product unbiased for μ.
#[derive(Clone, Debug)]
pub struct WeightedSample {
    /// d × m, one column per draw, in draw order.
    pub points: DMatrix<f64>,
    /// w(xⁱ): 1 for the uniform measure, n/k(xⁱ) otherwise (perturbed
    /// measures: up to one common constant).
    pub weights: DVector<f64>,
    pub measure: MeasureKind,
    pub stats: RejectionStats,
    /// Hierarchical sampling only: which level each point was drawn at.
    pub levels: Option<Vec<u32>>,
}

impl WeightedSample {
    /// Assembles a sample from externally produced points and weights
    /// (quadrature rules, replayed experiments), validating shapes and
    /// weight positivity.
    pub fn from_parts(
        points: DMatrix<f64>,
        weights: DVector<f64>,
        measure: MeasureKind,
    ) -> Result<WeightedSample> {
        if points.ncols() != weights.len() || points.ncols() == 0 {
            return Err(Error::InvalidParameter(format!(
                "{} points with {} weights",
                points.ncols(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and positive".into(),
            ));
        }
        Ok(WeightedSample {
            points,
            weights,
            measure,
            stats: RejectionStats::default(),
            levels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }
}

/// Bookkeeping from one rejection-sampling run.
#[derive(Clone, Copy, Debug, Default)]
pub struct RejectionStats {
    pub proposals: u64,
    pub accepted: u64,
    /// Envelope violations detected (each one doubled a bound and restarted
    /// the batch).
    pub violations: u32,
}

impl RejectionStats {
    pub fn acceptance_fraction(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Monte-Carlo estimate of the normalization α making α·(k̃_n/n) a μ-density.
#[derive(Clone, Copy, Debug)]
pub struct NormalizationEstimate {
    pub alpha: f64,
    pub standard_error: f64,
    pub sample_count: usize,
}

const STRATIFIED_INITIAL_GRID: usize = 16;
const STRATIFIED_MAX_CELLS: usize = 4096;
const STRATIFIED_MAX_DEPTH: u32 = 12;
const STRATIFIED_PROBES_PER_SIDE: usize = 5;
const STRATIFIED_SAFETY: f64 = 1.5;
/// Refine while one cell carries more than this share of total proposal mass.
const STRATIFIED_REFINE_SHARE: f64 = 0.02;

#[derive(Clone, Debug)]
struct EnvelopeCell {
    lo: [f64; 2],
    hi: [f64; 2],
    /// Upper bound on k/n over the cell (0 ⇔ certified disjoint from the
    /// domain, which only the built-in exclusion test may assert).
    bound: f64,
    depth: u32,
}

impl EnvelopeCell {
    fn volume(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    fn mass(&self) -> f64 {
        self.volume() * self.bound
    }
}

/// Piecewise-constant envelope over a bbox partition: proposals are drawn
/// from the density ∝ bound(cell), so acceptance k/(n·bound) is high even
/// when k spans orders of magnitude across the domain.
#[derive(Clone, Debug)]
struct StratifiedEnvelope {
    cells: Vec<EnvelopeCell>,
    /// Cumulative cell masses for inverse-CDF cell selection.
    cumulative: Vec<f64>,
    total: f64,
}

impl StratifiedEnvelope {
    fn rebuild_cdf(&mut self) {
        self.cumulative.clear();
        self.cumulative.reserve(self.cells.len());
        let mut acc = 0.0;
        for c in &self.cells {
            acc += c.mass();
            self.cumulative.push(acc);
        }
        self.total = acc;
    }

    fn pick_cell(&self, u: f64) -> usize {
        let target = u * self.total;
        match self
            .cumulative
            .binary_search_by(|probe| probe.partial_cmp(&target).unwrap())
        {
            Ok(i) | Err(i) => i.min(self.cells.len() - 1),
        }
    }
}

fn probe_cell_bound(ev: &ChristoffelEvaluator, lo: &[f64; 2], hi: &[f64; 2]) -> f64 {
    let s = STRATIFIED_PROBES_PER_SIDE;
    let mut pts = DMatrix::zeros(2, s * s);
    for i in 0..s {
        for j in 0..s {
            let fx = i as f64 / (s - 1) as f64;
            let fy = j as f64 / (s - 1) as f64;
            pts[(0, i * s + j)] = lo[0] + fx * (hi[0] - lo[0]);
            pts[(1, i * s + j)] = lo[1] + fy * (hi[1] - lo[1]);
        }
    }
    let n = ev.n() as f64;
    // Probes are evaluated regardless of membership: just outside the domain
    // the polynomial continues smoothly, so this still tracks the local
    // scale, and the safety factor plus violation handling covers the rest.
    STRATIFIED_SAFETY * ev.evaluate_k_block(&pts).max() / n
}

fn build_stratified(ev: &ChristoffelEvaluator, domain: &Domain) -> StratifiedEnvelope {
    let (lo, hi) = domain.bbox();
    let (lo, hi) = ([lo[0], lo[1]], [hi[0], hi[1]]);
    let g = STRATIFIED_INITIAL_GRID;
    let mut cells = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let clo = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / g as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / g as f64,
            ];
            let chi = [
                lo[0] + (hi[0] - lo[0]) * (i + 1) as f64 / g as f64,
                lo[1] + (hi[1] - lo[1]) * (j + 1) as f64 / g as f64,
            ];
            cells.push(make_cell(ev, domain, clo, chi, 0));
        }
    }
    let mut env = StratifiedEnvelope {
        cells,
        cumulative: Vec::new(),
        total: 0.0,
    };
    env.rebuild_cdf();
    // Split the heaviest cells until no single cell dominates the proposal
    // mass; this concentrates resolution at boundary spikes and cusp tips.
    while env.cells.len() + 3 <= STRATIFIED_MAX_CELLS {
        let (idx, share) = env
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.mass()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(i, m)| (i, m / env.total))
            .unwrap();
        if share <= STRATIFIED_REFINE_SHARE || env.cells[idx].depth >= STRATIFIED_MAX_DEPTH {
            break;
        }
        let parent = env.cells.swap_remove(idx);
        let mx = 0.5 * (parent.lo[0] + parent.hi[0]);
        let my = 0.5 * (parent.lo[1] + parent.hi[1]);
        let d = parent.depth + 1;
        for (clo, chi) in [
            (parent.lo, [mx, my]),
            ([mx, parent.lo[1]], [parent.hi[0], my]),
            ([parent.lo[0], my], [mx, parent.hi[1]]),
            ([mx, my], parent.hi),
        ] {
            env.cells.push(make_cell(ev, domain, clo, chi, d));
        }
        env.rebuild_cdf();
    }
    log::debug!(
        "stratified envelope for n = {} on {}: {} cells, proposal mass {:.4} \
         (domain area {:.4})",
        ev.n(),
        domain.label(),
        env.cells.len(),
        env.total,
        domain.area()
    );
    env
}

fn make_cell(
    ev: &ChristoffelEvaluator,
    domain: &Domain,
    lo: [f64; 2],
    hi: [f64; 2],
    depth: u32,
) -> EnvelopeCell {
    let bound = match domain.builtin_kind() {
        Some(b) if b.box_certainly_outside(&lo, &hi) => 0.0,
        _ => probe_cell_bound(ev, &lo, &hi),
    };
    EnvelopeCell {
        lo,
        hi,
        bound,
        depth,
    }
}

/// A measure over a fixed domain that can be drawn from by exact rejection
/// sampling, attaching the matching least-squares weights.
pub struct SamplingMeasure {
    kind: MeasureKind,
    domain: Domain,
    evaluator: Option<Arc<ChristoffelEvaluator>>,
    /// Global bound on the density ratio (k/n) against μ.
    envelope: f64,
    stratified: Mutex<Option<Arc<StratifiedEnvelope>>>,
}

impl std::fmt::Debug for SamplingMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SamplingMeasure")
            .field("kind", &self.kind)
            .field("domain", &self.domain.label())
            .field("envelope", &self.envelope)
            .finish()
    }
}

impl SamplingMeasure {
    /// The uniform measure itself — sampling degenerates to uniform draws
    /// with unit weights.
    pub fn uniform(domain: Domain) -> SamplingMeasure {
        SamplingMeasure {
            kind: MeasureKind::Uniform,
            domain,
            evaluator: None,
            envelope: 1.0,
            stratified: Mutex::new(None),
        }
    }

    /// The measure (k_n/n)dμ for the given evaluator. The kind is read off
    /// the basis provenance: exactly orthonormalized bases give the optimal
    /// measure, discretely orthonormalized ones the perturbed measure. The
    /// rejection envelope is initialized from `estimate_sup`.
    pub fn from_evaluator(
        evaluator: Arc<ChristoffelEvaluator>,
        domain: Domain,
        probe_count: usize,
        rng: &mut impl Rng,
    ) -> Result<SamplingMeasure> {
        let kind = match evaluator.basis().provenance() {
            Provenance::Exact { domain: label } => {
                if label != domain.label() {
                    return Err(Error::BasisMismatch(format!(
                        "basis is orthonormal for '{label}', not '{}'",
                        domain.label()
                    )));
                }
                MeasureKind::Optimal
            }
            Provenance::Discrete { .. } => MeasureKind::Perturbed,
            Provenance::Raw => {
                return Err(Error::InvalidParameter(
                    "raw monomial bases do not define a sampling measure".into(),
                ));
            }
        };
        let sup = match evaluator.sup_estimate() {
            Some(s) => s,
            None => evaluator.estimate_sup(&domain, probe_count, rng)?,
        };
        let n = evaluator.n() as f64;
        Ok(SamplingMeasure {
            kind,
            domain,
            evaluator: Some(evaluator),
            envelope: sup / n,
            stratified: Mutex::new(None),
        })
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    pub fn evaluator(&self) -> Option<&Arc<ChristoffelEvaluator>> {
        self.evaluator.as_ref()
    }

    #[cfg(test)]
    pub(crate) fn set_envelope_for_test(&mut self, envelope: f64) {
        self.envelope = envelope;
    }

    fn check_domain(&self, domain: &Domain) -> Result<()> {
        if domain.label() != self.domain.label() {
            return Err(Error::InvalidParameter(format!(
                "measure was built for '{}', asked to sample on '{}'",
                self.domain.label(),
                domain.label()
            )));
        }
        Ok(())
    }

    /// Draws `count` i.i.d. points with their weights. Uses the stratified
    /// envelope on plane domains (orders of magnitude fewer wasted proposals
    /// when k is spiked); the law of the output is identical to
    /// [`SamplingMeasure::sample_measure_plain`].
    pub fn sample_measure(
        &self,
        domain: &Domain,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<WeightedSample> {
        self.check_domain(domain)?;
        let Some(ev) = self.evaluator.as_deref() else {
            return self.sample_uniform_with_unit_weights(count, rng);
        };
        if self.domain.dim() != 2 {
            return self.sample_measure_plain(domain, count, rng);
        }

        // Snapshot the envelope table (build on first use).
        let mut table = {
            let mut guard = self.stratified.lock().unwrap();
            match guard.as_ref() {
                Some(t) => Arc::clone(t),
                None => {
                    let t = Arc::new(build_stratified(ev, &self.domain));
                    *guard = Some(Arc::clone(&t));
                    t
                }
            }
        };

        let n = ev.n() as f64;
        let mut stats = RejectionStats::default();
        let mut accepted_pts: Vec<f64> = Vec::with_capacity(2 * count);
        let mut accepted_w: Vec<f64> = Vec::with_capacity(count);
        let mut table_dirty = false;

        'outer: while accepted_w.len() < count {
            // Batch proposals so k evaluations run as one matrix product.
            let remaining = count - accepted_w.len();
            let rate = if stats.proposals > 512 {
                (stats.accepted as f64 / stats.proposals as f64).max(0.02)
            } else {
                0.35
            };
            let batch = ((remaining as f64 / rate).ceil() as usize).clamp(64, 32_768);
            let mut pts = DMatrix::zeros(2, batch);
            let mut cell_ids = vec![0usize; batch];
            let mut kept = 0usize;
            for _ in 0..batch {
                stats.proposals += 1;
                let ci = table.pick_cell(rng.gen::<f64>());
                let cell = &table.cells[ci];
                let x = [
                    cell.lo[0] + rng.gen::<f64>() * (cell.hi[0] - cell.lo[0]),
                    cell.lo[1] + rng.gen::<f64>() * (cell.hi[1] - cell.lo[1]),
                ];
                if !self.domain.contains(&x) {
                    continue;
                }
                pts[(0, kept)] = x[0];
                pts[(1, kept)] = x[1];
                cell_ids[kept] = ci;
                kept += 1;
            }
            if kept == 0 {
                continue;
            }
            let pts = pts.view((0, 0), (2, kept)).into_owned();
            let kvals = ev.evaluate_k_block(&pts);
            for i in 0..kept {
                let ratio = kvals[i] / n / table.cells[cell_ids[i]].bound;
                if ratio > 1.0 {
                    // Envelope violated: double that cell's bound, drop
                    // everything drawn under the broken table, start over.
                    stats.violations += 1;
                    log::warn!(
                        "envelope violation in cell {} (ratio {ratio:.3}); \
                         doubling bound and restarting batch",
                        cell_ids[i]
                    );
                    let fixed = Arc::make_mut(&mut table);
                    fixed.cells[cell_ids[i]].bound *= 2.0;
                    fixed.rebuild_cdf();
                    table_dirty = true;
                    accepted_pts.clear();
                    accepted_w.clear();
                    stats.accepted = 0;
                    continue 'outer;
                }
                if rng.gen::<f64>() < ratio {
                    accepted_pts.push(pts[(0, i)]);
                    accepted_pts.push(pts[(1, i)]);
                    accepted_w.push(n / kvals[i]);
                    stats.accepted += 1;
                    if accepted_w.len() == count {
                        break;
                    }
                }
            }
        }
        if table_dirty {
            *self.stratified.lock().unwrap() = Some(table);
        }
        Ok(WeightedSample {
            points: DMatrix::from_vec(2, count, accepted_pts),
            weights: DVector::from_vec(accepted_w),
            measure: self.kind,
            stats,
            levels: None,
        })
    }

    /// Textbook rejection against the uniform proposal with one global
    /// envelope: accept x ~ μ with probability k(x)/(n·envelope). Kept as
    /// the reference implementation the stratified sampler is checked
    /// against; prefer [`SamplingMeasure::sample_measure`] for real budgets.
    pub fn sample_measure_plain(
        &self,
        domain: &Domain,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<WeightedSample> {
        self.check_domain(domain)?;
        let Some(ev) = self.evaluator.as_deref() else {
            return self.sample_uniform_with_unit_weights(count, rng);
        };
        let n = ev.n() as f64;
        let mut envelope = self.envelope;
        let mut stats = RejectionStats::default();
        'restart: loop {
            let mut accepted_pts: Vec<f64> = Vec::with_capacity(self.domain.dim() * count);
            let mut accepted_w: Vec<f64> = Vec::with_capacity(count);
            while accepted_w.len() < count {
                let remaining = count - accepted_w.len();
                let batch = (3 * remaining).clamp(64, 32_768);
                let (pts, s) = self.domain.sample_uniform_with_stats(batch, rng)?;
                stats.proposals += s.proposals;
                let kvals = ev.evaluate_k_block(&pts);
                for i in 0..batch {
                    let ratio = kvals[i] / (n * envelope);
                    if ratio > 1.0 {
                        stats.violations += 1;
                        envelope *= 2.0;
                        log::warn!(
                            "global envelope violated (k/n = {:.3e} > {:.3e}); \
                             doubling and restarting",
                            kvals[i] / n,
                            envelope / 2.0
                        );
                        stats.accepted = 0;
                        continue 'restart;
                    }
                    if rng.gen::<f64>() < ratio {
                        for r in 0..self.domain.dim() {
                            accepted_pts.push(pts[(r, i)]);
                        }
                        accepted_w.push(n / kvals[i]);
                        stats.accepted += 1;
                        if accepted_w.len() == count {
                            break;
                        }
                    }
                }
            }
            return Ok(WeightedSample {
                points: DMatrix::from_vec(self.domain.dim(), count, accepted_pts),
                weights: DVector::from_vec(accepted_w),
                measure: self.kind,
                stats,
                levels: None,
            });
        }
    }

    fn sample_uniform_with_unit_weights(
        &self,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<WeightedSample> {
        let (points, s) = self.domain.sample_uniform_with_stats(count, rng)?;
        Ok(WeightedSample {
            points,
            weights: DVector::from_element(count, 1.0),
            measure: MeasureKind::Uniform,
            stats: RejectionStats {
                proposals: s.proposals,
                accepted: s.accepted,
                violations: 0,
            },
            levels: None,
        })
    }

    /// Estimates the constant α that turns k/n into a proper μ-density:
    /// α = n / (mean of k over fresh uniform draws). Exact measures have
    /// α = 1 up to Monte-Carlo error; perturbed measures need this estimate
    /// whenever properly normalized weights are required (e.g. comparing a
    /// weighted Gramian against the continuous one).
    pub fn estimate_normalization(
        &self,
        sample_count: usize,
        rng: &mut impl Rng,
    ) -> Result<NormalizationEstimate> {
        let ev = self.evaluator.as_deref().ok_or_else(|| {
            Error::InvalidParameter("the uniform measure has no normalization".into())
        })?;
        if sample_count < 2 {
            return Err(Error::InvalidParameter(
                "normalization estimate needs ≥ 2 samples".into(),
            ));
        }
        let pts = self.domain.sample_uniform(sample_count, rng)?;
        let kvals = ev.evaluate_k_block(&pts);
        let mean = kvals.mean();
        let var = kvals
            .iter()
            .map(|k| (k - mean) * (k - mean))
            .sum::<f64>()
            / (sample_count as f64 - 1.0);
        let se_mean = (var / sample_count as f64).sqrt();
        let n = ev.n() as f64;
        let alpha = n / mean;
        let standard_error = n * se_mean / (mean * mean);
        log::info!(
            "normalization for {} measure on {}: α ≈ {alpha:.6} ± {standard_error:.2e} \
             ({sample_count} draws)",
            self.kind.label(),
            self.domain.label()
        );
        Ok(NormalizationEstimate {
            alpha,
            standard_error,
            sample_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BuiltinDomain;
    use crate::polyspace::{orthonormalize_exact, PolynomialSpace};
    use crate::quadrature::gauss_legendre;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact_evaluator(b: BuiltinDomain, ell: u32) -> Arc<ChristoffelEvaluator> {
        let space = Arc::new(PolynomialSpace::total_degree(2, ell).unwrap());
        let basis = Arc::new(orthonormalize_exact(space, &b.domain()).unwrap());
        Arc::new(ChristoffelEvaluator::new(basis))
    }

    #[test]
    fn constant_space_everywhere_one() {
        for b in BuiltinDomain::ALL {
            let ev = exact_evaluator(b, 0);
            for x in [[0.0, 0.0], [0.3, -0.4], [0.1, 0.9]] {
                assert_abs_diff_eq!(ev.evaluate_k(&x), 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn square_degree_one_corner_is_seven() {
        let ev = exact_evaluator(BuiltinDomain::Square, 1);
        // 1 + 3x₁² + 3x₂² at (1, 1)
        assert_abs_diff_eq!(ev.evaluate_k(&[1.0, 1.0]), 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.evaluate_k(&[0.0, 0.0]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disc_boundary_matches_closed_form() {
        for ell in [1u32, 4, 7] {
            let ev = exact_evaluator(BuiltinDomain::Disc, ell);
            let expected = crate::bounds::ball_boundary_k(2, ell).unwrap();
            let r = BuiltinDomain::disc_radius();
            for theta in [0.0f64, 0.7, 2.1, 4.4] {
                let x = [r * theta.cos(), r * theta.sin()];
                let v = ev.evaluate_k(&x);
                assert!(
                    ((v - expected) / expected).abs() < 1e-9,
                    "ell={ell} theta={theta}: {v} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn disc_k_is_rotation_invariant() {
        let ev = exact_evaluator(BuiltinDomain::Disc, 9);
        let radius = 0.6 * BuiltinDomain::disc_radius();
        let base = ev.evaluate_k(&[radius, 0.0]);
        for theta in [0.4f64, 1.3, 3.0, 5.5] {
            let v = ev.evaluate_k(&[radius * theta.cos(), radius * theta.sin()]);
            assert!(((v - base) / base).abs() < 1e-10, "theta={theta}");
        }
    }

    #[test]
    fn extremality_over_random_directions() {
        let ev = exact_evaluator(BuiltinDomain::CornerPolygon, 5);
        let n = ev.n();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let domain = BuiltinDomain::CornerPolygon.domain();
        let pts = domain.sample_uniform(40, &mut rng).unwrap();
        for i in 0..pts.ncols() {
            let x = [pts[(0, i)], pts[(1, i)]];
            let k = ev.evaluate_k(&x);
            let lvals = ev.basis().evaluate(&x);
            for _ in 0..40 {
                let c = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
                let v = c.dot(&lvals);
                assert!(v * v / c.norm_squared() <= k * (1.0 + 1e-10));
            }
            // Equality at c = L(x).
            let equal = lvals.dot(&lvals).powi(2) / lvals.norm_squared();
            assert_abs_diff_eq!(equal, k, epsilon = 1e-9 * k);
        }
    }

    #[test]
    fn nested_prefixes_are_monotone() {
        let ev_full = exact_evaluator(BuiltinDomain::Square, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let domain = BuiltinDomain::Square.domain();
        let pts = domain.sample_uniform(50, &mut rng).unwrap();
        for n_small in [1usize, 10, 21, 45] {
            let small = Arc::new(ev_full.basis().prefix(n_small).unwrap());
            let ev_small = ChristoffelEvaluator::new(small);
            for i in 0..pts.ncols() {
                let x = [pts[(0, i)], pts[(1, i)]];
                assert!(ev_small.evaluate_k(&x) <= ev_full.evaluate_k(&x) + 1e-12);
            }
        }
    }

    #[test]
    fn trace_identity_spot_checks() {
        let ev = exact_evaluator(BuiltinDomain::Disc, 15);
        let v = integral_check(&ev, &BuiltinDomain::Disc.domain()).unwrap();
        assert_abs_diff_eq!(v, 136.0, epsilon = 1e-8);

        let ev = exact_evaluator(BuiltinDomain::CuspDomain, 10);
        let v = integral_check(&ev, &BuiltinDomain::CuspDomain.domain()).unwrap();
        assert_abs_diff_eq!(v, 66.0, epsilon = 1e-8);

        let ev = exact_evaluator(BuiltinDomain::Square, 0);
        let v = integral_check(&ev, &BuiltinDomain::Square.domain()).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);

        // Wrong domain is refused.
        assert!(matches!(
            integral_check(&ev, &BuiltinDomain::Disc.domain()),
            Err(Error::BasisMismatch(_))
        ));
    }

    #[test]
    fn sup_estimate_uses_theoretical_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Square n = 1: probe max is exactly 1, 1.2 after safety, but the
        // parallelogram bound n² = 1 is smaller and wins.
        let ev = exact_evaluator(BuiltinDomain::Square, 0);
        let est = ev
            .estimate_sup(&BuiltinDomain::Square.domain(), 1_000, &mut rng)
            .unwrap();
        assert_abs_diff_eq!(est, 1.0, epsilon = 1e-12);

        // A rectangle has a moment oracle but no registered growth bound, so
        // the trivial sup 1 keeps its 1.2 safety factor.
        let rect = Domain::rectangle(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let space = Arc::new(PolynomialSpace::total_degree(2, 0).unwrap());
        let basis = Arc::new(orthonormalize_exact(space, &rect).unwrap());
        let ev = ChristoffelEvaluator::new(basis);
        let est = ev.estimate_sup(&rect, 1_000, &mut rng).unwrap();
        assert_abs_diff_eq!(est, 1.2, epsilon = 1e-12);

        // Degree-1 square: sup k = 7 at corners, which the boundary grid
        // hits; min(1.2·7, n² = 9) = 8.4.
        let ev = exact_evaluator(BuiltinDomain::Square, 1);
        let est = ev
            .estimate_sup(&BuiltinDomain::Square.domain(), 1_000, &mut rng)
            .unwrap();
        assert!(est <= 9.0 + 1e-12, "estimate {est}");
        assert_abs_diff_eq!(est, 8.4, epsilon = 1e-9);

        assert!(ev.estimate_sup(&BuiltinDomain::Square.domain(), 10, &mut rng).is_err());
    }

    #[test]
    fn disc_sup_estimate_in_power_law_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ev = exact_evaluator(BuiltinDomain::Disc, 10);
        let est = ev
            .estimate_sup(&BuiltinDomain::Disc.domain(), 10_000, &mut rng)
            .unwrap();
        let n = 66.0f64;
        assert!(est >= n.powf(1.5) / std::f64::consts::E);
        assert!(est <= 3.0 * n.powf(1.5));
    }

    #[test]
    fn uniform_measure_is_plain_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = SamplingMeasure::uniform(BuiltinDomain::CuspDomain.domain());
        let s = m
            .sample_measure(&BuiltinDomain::CuspDomain.domain(), 500, &mut rng)
            .unwrap();
        assert_eq!(s.points.ncols(), 500);
        assert!(s.weights.iter().all(|w| *w == 1.0));
        assert_eq!(s.measure, MeasureKind::Uniform);
    }

    #[test]
    fn optimal_measure_mean_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let domain = BuiltinDomain::Square.domain();
        let ev = exact_evaluator(BuiltinDomain::Square, 1);
        let m = SamplingMeasure::from_evaluator(ev, domain.clone(), 1_000, &mut rng).unwrap();
        assert_eq!(m.kind(), MeasureKind::Optimal);

        let s = m.sample_measure(&domain, 100_000, &mut rng).unwrap();
        assert_abs_diff_eq!(s.weights.mean(), 1.0, epsilon = 0.01);
        for i in 0..s.points.ncols() {
            assert!(domain.contains(&[s.points[(0, i)], s.points[(1, i)]]));
        }

        let p = m.sample_measure_plain(&domain, 20_000, &mut rng).unwrap();
        assert_abs_diff_eq!(p.weights.mean(), 1.0, epsilon = 0.025);
    }

    #[test]
    fn stratified_and_plain_agree_in_law() {
        // Compare the two samplers' empirical distribution of |x| on the
        // disc at a degree where k is strongly boundary-concentrated.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let domain = BuiltinDomain::Disc.domain();
        let ev = exact_evaluator(BuiltinDomain::Disc, 8);
        let m =
            SamplingMeasure::from_evaluator(ev, domain.clone(), 2_000, &mut rng).unwrap();
        let a = m.sample_measure(&domain, 6_000, &mut rng).unwrap();
        let b = m.sample_measure_plain(&domain, 6_000, &mut rng).unwrap();
        let radius = |s: &WeightedSample, i: usize| {
            (s.points[(0, i)].powi(2) + s.points[(1, i)].powi(2)).sqrt()
        };
        let mean_a = (0..6_000).map(|i| radius(&a, i)).sum::<f64>() / 6_000.0;
        let mean_b = (0..6_000).map(|i| radius(&b, i)).sum::<f64>() / 6_000.0;
        // Same law ⇒ same mean radius up to Monte-Carlo noise (σ ≈ 0.002).
        assert!(
            (mean_a - mean_b).abs() < 0.012,
            "stratified {mean_a} vs plain {mean_b}"
        );
    }

    #[test]
    fn disc_boundary_annulus_is_oversampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let domain = BuiltinDomain::Disc.domain();
        let ev = exact_evaluator(BuiltinDomain::Disc, 15);
        let r = BuiltinDomain::disc_radius();

        // Quadrature oracle for the annulus σ*-mass: k depends only on |x|,
        // so ∫_{0.9r ≤ |x| ≤ r} (k/n) dμ = ∫ k(t)/n · 2πt/|D| dt with a
        // Gauss rule exact at polynomial degree 31.
        let (nodes, weights) = gauss_legendre(32);
        let (a, b) = (0.9 * r, r);
        let mut sigma_mass = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            let t = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let k = ev.evaluate_k(&[t, 0.0]);
            sigma_mass += w * (b - a) * k / 136.0 * 2.0 * std::f64::consts::PI * t / 2.0;
        }
        let mu_mass = (b * b - a * a) * std::f64::consts::PI / 2.0;
        assert!(
            sigma_mass >= 2.0 * mu_mass,
            "quadrature: σ mass {sigma_mass} vs μ mass {mu_mass}"
        );

        let m = SamplingMeasure::from_evaluator(ev, domain.clone(), 2_000, &mut rng).unwrap();
        let s = m.sample_measure(&domain, 10_000, &mut rng).unwrap();
        let frac = (0..10_000)
            .filter(|&i| {
                (s.points[(0, i)].powi(2) + s.points[(1, i)].powi(2)).sqrt() >= 0.9 * r
            })
            .count() as f64
            / 10_000.0;
        // 4σ window around the quadrature value.
        let sigma = (sigma_mass * (1.0 - sigma_mass) / 10_000.0).sqrt();
        assert!(
            (frac - sigma_mass).abs() <= 4.0 * sigma + 1e-9,
            "sampled {frac} vs oracle {sigma_mass}"
        );
    }

    #[test]
    fn envelope_violations_recover() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let domain = BuiltinDomain::Square.domain();
        let ev = exact_evaluator(BuiltinDomain::Square, 2);
        let mut m =
            SamplingMeasure::from_evaluator(ev, domain.clone(), 1_000, &mut rng).unwrap();
        // Sabotage the global envelope; the plain sampler must detect the
        // violation, double its way back up, and still deliver a valid batch.
        m.set_envelope_for_test(0.05);
        let s = m.sample_measure_plain(&domain, 5_000, &mut rng).unwrap();
        assert!(s.stats.violations > 0);
        assert_abs_diff_eq!(s.weights.mean(), 1.0, epsilon = 0.05);
    }

    #[test]
    fn normalization_estimate_near_one_for_exact_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let domain = BuiltinDomain::CornerPolygon.domain();
        let ev = exact_evaluator(BuiltinDomain::CornerPolygon, 3);
        let m = SamplingMeasure::from_evaluator(ev, domain, 1_000, &mut rng).unwrap();
        let est = m.estimate_normalization(100_000, &mut rng).unwrap();
        assert!(
            (est.alpha - 1.0).abs() <= 4.0 * est.standard_error,
            "α = {} ± {}",
            est.alpha,
            est.standard_error
        );
    }

    #[test]
    fn measure_rejects_mismatched_domain_and_raw_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ev = exact_evaluator(BuiltinDomain::Disc, 2);
        assert!(matches!(
            SamplingMeasure::from_evaluator(
                ev,
                BuiltinDomain::Square.domain(),
                1_000,
                &mut rng
            ),
            Err(Error::BasisMismatch(_))
        ));
        let space = Arc::new(PolynomialSpace::total_degree(2, 2).unwrap());
        let raw = Arc::new(OrthonormalBasis::monomial_identity(space));
        let ev = Arc::new(ChristoffelEvaluator::new(raw));
        assert!(SamplingMeasure::from_evaluator(
            ev,
            BuiltinDomain::Square.domain(),
            1_000,
            &mut rng
        )
        .is_err());
    }
}
