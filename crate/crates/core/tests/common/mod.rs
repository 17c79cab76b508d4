//! Shared fixture machinery for the integration and acceptance suites:
//! seeded 2-pixel linear-classifier fixtures and the brute-force grid
//! oracle they are compared against.
//!
//! The oracle evaluates the linear map `x·W + b` directly, independent of
//! the production MLP forward path it validates.

use cfx_core::engine::{CounterfactualQuery, SpaceKind, VariableSpace};
use cfx_core::fixtures::linear_classifier;
use cfx_core::models::Classifier;
use cfx_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture2d {
    pub classifier: Classifier,
    pub weight: [f64; 4],
    pub bias: [f64; 2],
    pub query_image: Tensor,
    pub target: usize,
}

/// Logit difference `logit(target) − logit(other)` of the raw linear map.
pub fn logit_margin(f: &Fixture2d, x: &[f64]) -> f64 {
    let logit = |c: usize| x[0] * f.weight[c] + x[1] * f.weight[2 + c] + f.bias[c];
    logit(f.target) - logit(1 - f.target)
}

/// For two classes with τ = 0.5 and low-index argmax tie-breaking, the
/// flip test is a strict sign test on the logit margin.
pub fn oracle_flips(f: &Fixture2d, x: &[f64]) -> bool {
    let margin = logit_margin(f, x);
    if f.target == 1 {
        margin > 0.0
    } else {
        margin >= 0.0
    }
}

/// Draws a seeded fixture whose flip region intersects the unit box at an
/// L1 distance the optimizer can reach; resamples deterministically until
/// it does.
pub fn fixture_2d(seed: u64) -> Fixture2d {
    for attempt in 0..64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(attempt));
        let weight: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-15.0..15.0));
        let bias: [f64; 2] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let image = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let classifier = linear_classifier(2, 2, &weight, &bias);
        let probs = classifier.probs(&Tensor::vector(&image)).unwrap();
        let current = probs.argmax();
        // skip near-boundary queries so the starting prediction is firm
        if probs.data()[current] < 0.6 {
            continue;
        }
        let fixture = Fixture2d {
            classifier,
            weight,
            bias,
            query_image: Tensor::vector(&image),
            target: 1 - current,
        };
        // coarse reachability scan of the flip region inside the box
        let mut best = f64::INFINITY;
        for r in 0..=100 {
            for c in 0..=100 {
                let x = [r as f64 / 100.0, c as f64 / 100.0];
                if oracle_flips(&fixture, &x) {
                    let d = (x[0] - image[0]).abs() + (x[1] - image[1]).abs();
                    best = best.min(d);
                }
            }
        }
        if best.is_finite() && best <= 1.2 && best >= 0.05 {
            return fixture;
        }
    }
    panic!("no viable 2-d fixture for seed {seed}");
}

/// Dense grid search over the unit box at the given resolution: the true
/// minimal L1 change that flips the fixture's prediction.
pub fn grid_min_delta(f: &Fixture2d, resolution: usize) -> f64 {
    let image = f.query_image.data();
    let step = 1.0 / resolution as f64;
    let mut best = f64::INFINITY;
    for r in 0..=resolution {
        let x0 = r as f64 * step;
        let dx0 = (x0 - image[0]).abs();
        if dx0 >= best {
            continue;
        }
        for c in 0..=resolution {
            let x1 = c as f64 * step;
            let d = dx0 + (x1 - image[1]).abs();
            if d < best && oracle_flips(f, &[x0, x1]) {
                best = d;
            }
        }
    }
    best
}

/// Criticism query over the 2-pixel identity generator with a fine step,
/// the configuration every fixture comparison uses.
pub fn fixture_query(f: &Fixture2d, lambda: f64) -> CounterfactualQuery {
    let mut q = CounterfactualQuery::criticism(
        f.query_image.clone(),
        f.target,
        VariableSpace {
            kind: SpaceKind::Attribute,
            bounds: vec![(0.0, 1.0); 2],
        },
    );
    q.lambda = lambda;
    q.step_size = 0.005;
    q.max_steps = 4000;
    q
}
