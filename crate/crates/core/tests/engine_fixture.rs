//! Engine behavior on closed-form fixtures: objective decomposition,
//! descent mechanics, frozen masks, bisection edge cases, and the grid
//! oracle comparison at small scale.

mod common;

use cfx_core::engine::{
    apply_frozen_mask, trajectory_from_jsonl, trajectory_to_jsonl, CounterfactualQuery, Engine,
    EngineError, Generator, Mode, Outcome, SpaceKind, VariableSpace,
};
use cfx_core::fixtures::linear_classifier;
use cfx_core::tensor::Tensor;
use common::{fixture_2d, fixture_query, grid_min_delta};

fn identity_space(dim: usize) -> VariableSpace {
    VariableSpace {
        kind: SpaceKind::Attribute,
        bounds: vec![(0.0, 1.0); dim],
    }
}

/// Identity-generator fixture with W = I₂: the spec's hand-evaluated case.
#[test]
fn objective_value_at_query_image() {
    let classifier = linear_classifier(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
    let engine = Engine::new(&classifier, Generator::Identity { rows: 1, cols: 2 });
    let image = Tensor::vector(&[0.9, 0.1]);

    let mut query = CounterfactualQuery::criticism(image.clone(), 1, identity_space(2));
    query.lambda = 1.0;
    let (total, cls, dist) = engine.objective(&query, &image).unwrap();

    // −ln(softmax([0.9, 0.1])[1]) = ln(1 + e^{0.8})
    let expect = 1.1711006659477778;
    assert!((cls - expect).abs() < 1e-12, "cls {cls}");
    assert_eq!(dist, 0.0);
    assert!((total - expect).abs() < 1e-12);

    query.lambda = 0.0;
    let (total0, _, dist0) = engine.objective(&query, &image).unwrap();
    assert_eq!(total0, dist0, "λ = 0 ⟹ total is exactly the distance term");

    query.lambda = 3.5;
    let (total35, cls35, dist35) = engine.objective(&query, &image).unwrap();
    assert_eq!(dist35, 0.0);
    assert!((total35 - 3.5 * cls35).abs() < 1e-12);
}

#[test]
fn objective_rejects_dimension_mismatch() {
    let classifier = linear_classifier(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
    let engine = Engine::new(&classifier, Generator::Identity { rows: 1, cols: 2 });
    let query =
        CounterfactualQuery::criticism(Tensor::vector(&[0.9, 0.1]), 1, identity_space(2));
    let err = engine.objective(&query, &Tensor::vector(&[0.1, 0.2, 0.3])).unwrap_err();
    assert!(matches!(err, EngineError::InvalidQuery(_)));
}

#[test]
fn fully_frozen_query_never_moves() {
    let f = fixture_2d(3);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let mut query = fixture_query(&f, 5.0);
    query.frozen_mask = vec![true, true];
    query.max_steps = 40;
    let trajectory = engine.optimize(&query).unwrap();
    assert_eq!(trajectory.outcome, Outcome::BudgetExhausted);
    assert_eq!(trajectory.steps.len(), 41);
    let initial = trajectory.steps[0].variables.data().to_vec();
    for step in &trajectory.steps {
        assert_eq!(step.variables.data(), initial.as_slice());
    }
}

#[test]
fn criticism_converges_to_the_halfplane_and_obeys_invariants() {
    let f = fixture_2d(1);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let query = fixture_query(&f, 50.0);
    let trajectory = engine.optimize(&query).unwrap();
    assert_eq!(trajectory.outcome, Outcome::Success);

    let last = &trajectory.result;
    assert_eq!(last.probs.argmax(), f.target, "success postcondition");
    assert!(last.probs.data()[f.target] >= query.flip_threshold);
    assert!(common::oracle_flips(&f, last.variables.data()));

    for step in &trajectory.steps {
        // Eq. 2 decomposition at every step
        let recomposed = query.lambda * step.cls_term + step.dist_term;
        assert!(
            (step.objective - recomposed).abs() < 1e-9,
            "step {}: {} vs {}",
            step.step,
            step.objective,
            recomposed
        );
        // box invariant
        for (&v, &(lo, hi)) in step
            .variables
            .data()
            .iter()
            .zip(query.variable_space.bounds.iter())
        {
            assert!(v >= lo && v <= hi);
        }
        assert!(step.image.all_finite() && step.probs.all_finite());
    }
}

#[test]
fn frozen_coordinate_is_bit_identical_along_the_path() {
    let f = fixture_2d(2);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let mut query = fixture_query(&f, 20.0);
    query.frozen_mask = vec![true, false];
    let trajectory = engine.optimize(&query).unwrap();
    let frozen_bits = trajectory.steps[0].variables.data()[0].to_bits();
    for step in &trajectory.steps {
        assert_eq!(step.variables.data()[0].to_bits(), frozen_bits);
    }
}

#[test]
fn determinism_bit_identical_trajectories() {
    let f = fixture_2d(4);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let query = fixture_query(&f, 8.0);
    let a = engine.optimize(&query).unwrap();
    let b = engine.optimize(&query).unwrap();
    assert_eq!(a.steps.len(), b.steps.len());
    assert_eq!(a.outcome, b.outcome);
    for (sa, sb) in a.steps.iter().zip(b.steps.iter()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&sa.variables), bits(&sb.variables));
        assert_eq!(sa.objective.to_bits(), sb.objective.to_bits());
    }
}

#[test]
fn bisect_minimal_delta_matches_grid_oracle() {
    let f = fixture_2d(5);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let query = fixture_query(&f, 1.0);
    let result = engine.minimal_change_bisect(&query, 1e-3, 10.0, 20).unwrap();
    let oracle = grid_min_delta(&f, 1000);
    assert!(
        (result.delta_star - oracle).abs() <= 0.1 * oracle.max(1e-9),
        "δ* {} vs oracle {oracle}",
        result.delta_star
    );
    // bisection never returns a worse distance than its own upper probe
    let hi_probe = result.sweep.iter().find(|e| e.flipped).unwrap();
    assert!(result.delta_star <= hi_probe.delta + 1e-12);
    // λ* is the smallest flipping λ in the sweep
    let min_flip = result
        .sweep
        .iter()
        .filter(|e| e.flipped)
        .map(|e| e.lambda)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(result.lambda_star, min_flip);
}

#[test]
fn bisect_with_equal_precheckd_bounds_returns_them() {
    let f = fixture_2d(6);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let query = fixture_query(&f, 1.0);
    // establish a flipping λ first
    let probe = engine.minimal_change_bisect(&query, 1e-3, 10.0, 8).unwrap();
    let lambda = probe.lambda_star;
    let result = engine
        .minimal_change_bisect(&query, lambda, lambda, 20)
        .unwrap();
    assert_eq!(result.lambda_star, lambda);
    assert_eq!(result.bisection_iterations_used, 0);
    assert_eq!(result.sweep.len(), 1);
}

#[test]
fn bisect_reports_structured_failure_at_the_cap() {
    // zero weights: probabilities stay uniform, argmax ties to class 0,
    // so a criticism toward class 1 can never succeed
    let classifier = linear_classifier(2, 2, &[0.0; 4], &[0.0, 0.0]);
    let engine = Engine::new(&classifier, Generator::Identity { rows: 1, cols: 2 });
    let mut query = CounterfactualQuery::criticism(
        Tensor::vector(&[0.3, 0.4]),
        1,
        identity_space(2),
    );
    query.max_steps = 30;
    let err = engine.minimal_change_bisect(&query, 1.0, 10.0, 5).unwrap_err();
    match err {
        EngineError::NoFlipWithinCap { cap, sweep } => {
            assert_eq!(cap, 1e6);
            assert!(sweep.len() >= 6, "expansion probes recorded: {sweep:?}");
            assert!(sweep.iter().all(|e| !e.flipped));
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn regularization_smaller_lambda_gives_no_worse_delta() {
    let mut checked = 0;
    for seed in 0..6 {
        let f = fixture_2d(seed);
        let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
        let low = engine.optimize(&fixture_query(&f, 0.1)).unwrap();
        let high = engine.optimize(&fixture_query(&f, 10.0)).unwrap();
        if low.outcome == Outcome::Success && high.outcome == Outcome::Success {
            assert!(
                low.result.dist_term <= high.result.dist_term + 1e-9,
                "seed {seed}: δ(0.1) = {} > δ(10) = {}",
                low.result.dist_term,
                high.result.dist_term
            );
            checked += 1;
        }
    }
    assert!(checked > 0, "no seed flipped at both λ values");
}

#[test]
fn prototype_already_confident_succeeds_at_step_zero() {
    let f = fixture_2d(7);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let (own, confidence) = f.classifier.predict(&f.query_image).unwrap();
    let mut query =
        CounterfactualQuery::prototype(f.query_image.clone(), own, identity_space(2));
    query.flip_threshold = (confidence - 0.05).clamp(0.05, 0.95);
    query.step_size = 0.005;
    let trajectory = engine.prototype_optimize(&query).unwrap();
    assert_eq!(trajectory.outcome, Outcome::Success);
    assert_eq!(trajectory.steps.len(), 1);
    assert_eq!(
        trajectory.result.variables.data(),
        f.query_image.data(),
        "variables unchanged at step-0 success"
    );
}

#[test]
fn prototype_confidence_increases_monotonically_for_small_steps() {
    // Hand-built fixture in the regime where the cross-entropy pull
    // dominates the distance pull all the way to the threshold:
    // λ·(1−τ)·min|w_i| = 400 · 0.01 · 6 ≫ 1, so no coordinate stalls on
    // the L1 equilibrium before success and confidence is monotone.
    let classifier = linear_classifier(2, 2, &[0.0, 8.0, 0.0, -6.0], &[0.0, -1.0]);
    let image = Tensor::vector(&[0.3, 0.6]);
    let engine = Engine::new(&classifier, Generator::Identity { rows: 1, cols: 2 });
    let (own, confidence) = classifier.predict(&image).unwrap();
    assert_eq!(own, 0);
    assert!(confidence < 0.95, "fixture needs headroom, got {confidence}");

    let mut query = CounterfactualQuery::prototype(image, own, identity_space(2));
    query.step_size = 1e-4;
    query.lambda = 400.0;
    query.max_steps = 3000;
    query.flip_threshold = 0.99;
    let trajectory = engine.prototype_optimize(&query).unwrap();
    assert_eq!(trajectory.outcome, Outcome::Success);
    let mut prev = -1.0;
    for step in &trajectory.steps {
        let p = step.probs.data()[own];
        assert!(
            p >= prev,
            "confidence dropped at step {}: {prev} → {p}",
            step.step
        );
        prev = p;
    }
    assert!(prev >= 0.99);
    assert!(prev > trajectory.steps[0].probs.data()[own]);
}

#[test]
fn prototype_mode_is_checked() {
    let f = fixture_2d(9);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let query = fixture_query(&f, 1.0);
    assert!(matches!(
        engine.prototype_optimize(&query),
        Err(EngineError::WrongMode { .. })
    ));
}

#[test]
fn degenerate_criticism_target_is_rejected() {
    let f = fixture_2d(10);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let (own, _) = f.classifier.predict(&f.query_image).unwrap();
    let mut query = fixture_query(&f, 1.0);
    query.target_class = own;
    assert!(matches!(
        engine.optimize(&query),
        Err(EngineError::DegenerateTarget { .. })
    ));
}

#[test]
fn p2_norm_is_rejected_as_unimplemented() {
    let f = fixture_2d(11);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let mut query = fixture_query(&f, 1.0);
    query.norm_order = 2;
    assert!(matches!(
        engine.optimize(&query),
        Err(EngineError::UnsupportedNorm { p: 2 })
    ));
}

#[test]
fn frozen_mask_examples() {
    let g = Tensor::vector(&[3.0, 4.0]);
    assert_eq!(
        apply_frozen_mask(&g, &[false, false]).unwrap().data(),
        &[3.0, 4.0]
    );
    assert_eq!(
        apply_frozen_mask(&g, &[true, true]).unwrap().data(),
        &[0.0, 0.0]
    );
    assert_eq!(
        apply_frozen_mask(&g, &[true, false]).unwrap().data(),
        &[0.0, 4.0]
    );
    assert!(apply_frozen_mask(&g, &[true]).is_err());
}

#[test]
fn trajectory_jsonl_roundtrip_preserves_bits() {
    let f = fixture_2d(12);
    let engine = Engine::new(&f.classifier, Generator::Identity { rows: 1, cols: 2 });
    let query = fixture_query(&f, 6.0);
    let trajectory = engine.optimize(&query).unwrap();
    let text = trajectory_to_jsonl(&trajectory, query.lambda);

    let (steps, summary) = trajectory_from_jsonl(&text).unwrap();
    assert_eq!(steps.len(), trajectory.steps.len());
    assert_eq!(summary.outcome, trajectory.outcome.to_string());
    assert_eq!(summary.lambda, 6.0);
    assert_eq!(summary.delta, trajectory.result.dist_term);
    for (record, step) in steps.iter().zip(trajectory.steps.iter()) {
        assert_eq!(record.step, step.step);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&record.variables), bits(step.variables.data()));
        assert_eq!(bits(&record.probs), bits(step.probs.data()));
        assert_eq!(record.objective.to_bits(), step.objective.to_bits());
    }

    // field names are the wire contract
    let first_line = text.lines().next().unwrap();
    for field in ["\"step\"", "\"variables\"", "\"probs\"", "\"objective\"", "\"cls_term\"", "\"dist_term\""] {
        assert!(first_line.contains(field), "missing {field} in {first_line}");
    }
}
