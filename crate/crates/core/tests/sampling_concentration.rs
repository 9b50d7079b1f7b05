//! Concentration behavior of the sampling pipeline at the theoretical
//! budgets: Gramian deviation under uniform and optimal sampling, the
//! offline framing of the perturbed Christoffel function, redraw counts,
//! and the multilevel/hierarchical acceptance rates.

use std::sync::Arc;

use christoffel_core::algorithms::{
    algorithm1_offline, algorithm2_multilevel, algorithm3_hierarchical, sufficient_M,
    LevelSchedule,
};
use christoffel_core::bounds::online_budget;
use christoffel_core::christoffel::{
    ChristoffelEvaluator, MeasureKind, RejectionStats, SamplingMeasure, WeightedSample,
};
use christoffel_core::geometry::{BuiltinDomain, Domain};
use christoffel_core::least_squares::{fit_with_redraw, gramian};
use christoffel_core::polyspace::{orthonormalize_exact, PolynomialSpace};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn disc() -> Domain {
    Domain::builtin(BuiltinDomain::Disc)
}

fn exact_basis(domain: &Domain, ell: u32) -> Arc<christoffel_core::polyspace::OrthonormalBasis> {
    let space = Arc::new(PolynomialSpace::total_degree(2, ell).unwrap());
    Arc::new(orthonormalize_exact(space, domain).unwrap())
}

fn uniform_sample(domain: &Domain, m: usize, rng: &mut ChaCha8Rng) -> WeightedSample {
    let points = domain.sample_uniform(m, rng).unwrap();
    WeightedSample::from_parts(points, DVector::from_element(m, 1.0), MeasureKind::Uniform)
        .unwrap()
}

#[test]
fn perturbed_evaluator_is_framed_under_the_good_event() {
    // One offline run at the sufficient budget; conditional on the observed
    // good event ‖G_M − I‖₂ ≤ 1/2, the perturbed function is framed by
    // (2/3)k ≤ k̃ ≤ 2k everywhere — checked on 10⁴ fresh points.
    let domain = disc();
    let space = Arc::new(PolynomialSpace::total_degree(2, 5).unwrap());
    let n = space.len();
    let budget = sufficient_M(n, 3.0 * (n as f64).powf(1.5), 1e-2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let offline = algorithm1_offline(space, &domain, budget, &mut rng).unwrap();
    let deviation = offline.gram_deviation.expect("disc has exact diagnostics");
    assert!(deviation <= 0.5, "good event failed: deviation {deviation}");

    let exact = ChristoffelEvaluator::new(exact_basis(&domain, 5));
    let tests = domain.sample_uniform(10_000, &mut rng).unwrap();
    let k = exact.evaluate_k_block(&tests);
    let kt = offline.evaluator().evaluate_k_block(&tests);
    for i in 0..tests.ncols() {
        assert!(
            kt[i] >= 2.0 / 3.0 * k[i] && kt[i] <= 2.0 * k[i],
            "point {i}: perturbed {} outside [2/3, 2]·{}",
            kt[i],
            k[i]
        );
    }
}

#[test]
fn uniform_sampling_concentrates_at_the_sufficient_budget() {
    // Disc, degree 10 (n = 66): at M = ⌈γ·3n^{3/2}·ln(2n/0.01)⌉ uniform
    // draws the exact-basis Gramian deviates by more than 1/2 in at most
    // 1 of 100 trials.
    let domain = disc();
    let basis = exact_basis(&domain, 10);
    let m = sufficient_M(66, 3.0 * (66.0f64).powf(1.5), 1e-2).unwrap();
    let mut good = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let sample = uniform_sample(&domain, m, &mut rng);
        let info = gramian(&sample, &basis).unwrap();
        if info.deviation <= 0.5 {
            good += 1;
        }
    }
    assert!(good >= 99, "only {good}/100 runs satisfied the deviation bound");
}

#[test]
fn optimal_sampling_concentrates_at_triple_oversampling() {
    // σ*-samples with m = ⌈3γ n ln(2n/0.01)⌉ on the disc at degree 10:
    // ‖G − I‖₂ ≤ 1/2 in at least 99 of 100 trials.
    let domain = disc();
    let basis = exact_basis(&domain, 10);
    let evaluator = Arc::new(ChristoffelEvaluator::new(Arc::clone(&basis)));
    let m = online_budget(66, 3.0, 1e-2).unwrap();
    let mut good = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + trial);
        let measure = SamplingMeasure::from_evaluator(
            Arc::clone(&evaluator),
            domain.clone(),
            2000,
            &mut rng,
        )
        .unwrap();
        let sample = measure.sample_measure(&domain, m, &mut rng).unwrap();
        let info = gramian(&sample, &basis).unwrap();
        if info.deviation <= 0.5 {
            good += 1;
        }
    }
    assert!(good >= 99, "only {good}/100 runs satisfied the deviation bound");
}

#[test]
fn failure_rate_at_the_bare_theorem_budget_is_small() {
    // At the un-oversampled budget m = ⌈γ n ln(2n/ε)⌉ with ε = 0.01 the
    // failure probability is at most ε; 100 trials with binomial slack
    // allow at most 3 observed failures.
    let domain = disc();
    let basis = exact_basis(&domain, 10);
    let evaluator = Arc::new(ChristoffelEvaluator::new(Arc::clone(&basis)));
    let m = online_budget(66, 1.0, 1e-2).unwrap();
    let mut failures = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + trial);
        let measure = SamplingMeasure::from_evaluator(
            Arc::clone(&evaluator),
            domain.clone(),
            2000,
            &mut rng,
        )
        .unwrap();
        let sample = measure.sample_measure(&domain, m, &mut rng).unwrap();
        let info = gramian(&sample, &basis).unwrap();
        if info.deviation > 0.5 {
            failures += 1;
        }
    }
    assert!(failures <= 3, "{failures}/100 failures at the theorem budget");
}

#[test]
fn redraws_are_rare_at_triple_oversampling() {
    // Mean redraw count over 100 fits at m = ⌈3γ n ln(2n/0.01)⌉ stays
    // below 0.02 (failures are geometric with rate well under 1%).
    let domain = disc();
    let basis = exact_basis(&domain, 3);
    let n = basis.n();
    let evaluator = Arc::new(ChristoffelEvaluator::new(Arc::clone(&basis)));
    let m = online_budget(n, 3.0, 1e-2).unwrap();
    let mut total_redraws = 0u32;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + trial);
        let measure = SamplingMeasure::from_evaluator(
            Arc::clone(&evaluator),
            domain.clone(),
            2000,
            &mut rng,
        )
        .unwrap();
        let values_basis = Arc::clone(&basis);
        let fit = fit_with_redraw(
            &measure,
            m,
            |points: &DMatrix<f64>| {
                // Values of L₂, an in-space target.
                let vals = values_basis.evaluate_block(points);
                DVector::from_iterator(points.ncols(), vals.row(1).iter().cloned())
            },
            &basis,
            5,
            &mut rng,
        )
        .unwrap();
        total_redraws += fit.redraws_used;
    }
    assert!(
        f64::from(total_redraws) / 100.0 <= 0.02,
        "mean redraw count {} over 100 trials",
        f64::from(total_redraws) / 100.0
    );
}

#[test]
fn multilevel_ladder_frames_the_exact_christoffel_function() {
    // Ten-level disc ladder at the per-level budgets
    // M_p = ⌈3κγ n_p ln(2n_p/ε_p)⌉ with κ = 2, ε_p = 0.01/10: the final
    // perturbed function satisfies (2/3)k ≤ k̃ ≤ 2k on 10⁴ points in at
    // least 95 of 100 runs.
    let domain = disc();
    let dims: Vec<usize> = (1..=10)
        .map(|p| christoffel_core::polyspace::space_dimension(2, p).unwrap())
        .collect();
    let schedule = LevelSchedule::multilevel_preset(dims, 1e-2, 2.0).unwrap();
    let exact = ChristoffelEvaluator::new(exact_basis(&domain, 10));
    let mut probe_rng = ChaCha8Rng::seed_from_u64(1300);
    let tests = domain.sample_uniform(10_000, &mut probe_rng).unwrap();
    let k = exact.evaluate_k_block(&tests);
    let mut good = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1400 + trial);
        let result = algorithm2_multilevel(&schedule, &domain, &mut rng).unwrap();
        let kt = result.evaluator().evaluate_k_block(&tests);
        let framed = (0..tests.ncols())
            .all(|i| kt[i] >= 2.0 / 3.0 * k[i] && kt[i] <= 2.0 * k[i]);
        if framed {
            good += 1;
        }
    }
    assert!(good >= 95, "only {good}/100 ladder runs were framed");
}

#[test]
fn hierarchical_gramians_concentrate_at_both_levels() {
    // Two-level hierarchical runs on the square with margins δ_p = 0.25:
    // the running Gramian deviates by at most 1/2 at both levels in at
    // least 95 of 100 runs.
    let domain = Domain::builtin(BuiltinDomain::Square);
    let schedule = LevelSchedule::hierarchical_preset(vec![3, 6], 1e-2, 0.5, 2.0).unwrap();
    assert_eq!(schedule.deltas().unwrap(), &[0.25, 0.25]);
    let prefix3 = Arc::new(exact_basis(&domain, 2).prefix(3).unwrap());
    let mut good = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1600 + trial);
        let state = algorithm3_hierarchical(schedule.clone(), &domain, &mut rng).unwrap();
        let level1 = state.sample_at_level(1).unwrap();
        let info1 = gramian(&level1, &prefix3).unwrap();
        let full = state.sample().unwrap();
        let info2 = gramian(&full, state.basis()).unwrap();
        if info1.deviation <= 0.5 && info2.deviation <= 0.5 {
            good += 1;
        }
    }
    assert!(good >= 95, "only {good}/100 hierarchical runs concentrated");
}

#[test]
fn hierarchical_stats_report_the_rejection_effort() {
    // Sanity on the reported rejection statistics: proposals ≥ accepted,
    // and the accepted count matches the requested points.
    let domain = disc();
    let schedule = LevelSchedule::hierarchical_preset(vec![3, 6], 1e-1, 0.4, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1800);
    let state = algorithm3_hierarchical(schedule.clone(), &domain, &mut rng).unwrap();
    let stats: RejectionStats = state.rejection_stats();
    let total = *schedule.online_counts().unwrap().last().unwrap() as u64;
    assert_eq!(stats.accepted, total);
    assert!(stats.proposals >= stats.accepted);
}
