//! Finite-difference validation sweep over every autodiff primitive and
//! the composed counterfactual objective. Backing for the `gradcheck` CLI
//! command and the gradient-correctness acceptance gate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, Tape, VarId};
use crate::engine::{Engine, Generator};
use crate::fixtures;
use crate::models::{Activation, AttributeEditor, Classifier, Head, LatentGenerator, Mlp, MlpSpec};
use crate::tensor::Tensor;

pub const PRIMITIVE_THRESHOLD: f64 = 1e-5;
pub const COMPOSED_THRESHOLD: f64 = 1e-4;
pub const FD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradcheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl GradcheckRow {
    pub fn from_error(name: &str, max_rel_err: f64, threshold: f64) -> Self {
        GradcheckRow {
            name: name.to_string(),
            max_rel_err,
            threshold,
            pass: max_rel_err < threshold,
        }
    }
}

pub fn all_pass(rows: &[GradcheckRow]) -> bool {
    rows.iter().all(|r| r.pass)
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("sampled shape")
}

/// Uniform away from zero: |x| ≥ margin, for relu and |·| kinks.
fn kink_free_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, margin: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() >= margin {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("sampled shape")
}

fn max_err_over_points<S, F>(points: usize, mut sample: S, f: F) -> f64
where
    S: FnMut() -> (Tensor, Vec<Tensor>),
    F: Fn(&mut Tape, VarId, &[Tensor]) -> VarId,
{
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let (x, consts) = sample();
        let err = grad_check(|tape, id| f(tape, id, &consts), &x, FD_EPSILON);
        worst = worst.max(err);
    }
    worst
}

/// Runs the full sweep: every primitive at `primitive_points` seeded smooth
/// points (threshold 1e-5), and the composed objective — latent, attribute,
/// and identity generator routes — at `composed_points` points (1e-4).
pub fn run_gradcheck(
    seed: u64,
    primitive_points: usize,
    composed_points: usize,
) -> Vec<GradcheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut push = |name: &str, err: f64| {
        rows.push(GradcheckRow::from_error(name, err, PRIMITIVE_THRESHOLD));
    };

    push(
        "add",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![6], -1.0, 1.0);
                let c = uniform_tensor(&mut rng, vec![6], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let s = tape.add(id, c).unwrap();
                let sq = tape.sigmoid(s).unwrap();
                tape.sum(sq).unwrap()
            },
        ),
    );

    push(
        "sub",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![6], -1.0, 1.0);
                let c = uniform_tensor(&mut rng, vec![6], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let s = tape.sub(id, c).unwrap();
                let sq = tape.sigmoid(s).unwrap();
                tape.sum(sq).unwrap()
            },
        ),
    );

    push(
        "mul_elementwise",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![6], -1.0, 1.0);
                let c = uniform_tensor(&mut rng, vec![6], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let s = tape.mul(id, c).unwrap();
                let sq = tape.sigmoid(s).unwrap();
                tape.sum(sq).unwrap()
            },
        ),
    );

    push(
        "matmul",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
                let c = uniform_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let m = tape.matmul(id, c).unwrap();
                let s = tape.sigmoid(m).unwrap();
                tape.sum(s).unwrap()
            },
        ),
    );

    push(
        "matmul_rhs",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
                let c = uniform_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let m = tape.matmul(c, id).unwrap();
                let s = tape.sigmoid(m).unwrap();
                tape.sum(s).unwrap()
            },
        ),
    );

    push(
        "affine",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![2, 3], -1.0, 1.0);
                let w = uniform_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
                let b = uniform_tensor(&mut rng, vec![4], -0.5, 0.5);
                (x, vec![w, b])
            },
            |tape, id, consts| {
                let w = tape.var(consts[0].clone());
                let b = tape.var(consts[1].clone());
                let a = tape.affine(id, w, b).unwrap();
                let s = tape.sigmoid(a).unwrap();
                tape.sum(s).unwrap()
            },
        ),
    );

    push(
        "affine_weights",
        max_err_over_points(
            primitive_points,
            || {
                let w = uniform_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
                let x = uniform_tensor(&mut rng, vec![2, 3], -1.0, 1.0);
                let b = uniform_tensor(&mut rng, vec![4], -0.5, 0.5);
                (w, vec![x, b])
            },
            |tape, id, consts| {
                let x = tape.var(consts[0].clone());
                let b = tape.var(consts[1].clone());
                let a = tape.affine(x, id, b).unwrap();
                let s = tape.sigmoid(a).unwrap();
                tape.sum(s).unwrap()
            },
        ),
    );

    push(
        "relu",
        max_err_over_points(
            primitive_points,
            || {
                let x = kink_free_tensor(&mut rng, vec![8], 1e-3);
                let c = uniform_tensor(&mut rng, vec![8], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let r = tape.relu(id).unwrap();
                let m = tape.mul(r, c).unwrap();
                tape.sum(m).unwrap()
            },
        ),
    );

    push(
        "tanh",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![8], -2.0, 2.0);
                let c = uniform_tensor(&mut rng, vec![8], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let t = tape.tanh(id).unwrap();
                let m = tape.mul(t, c).unwrap();
                tape.sum(m).unwrap()
            },
        ),
    );

    push(
        "sigmoid",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![8], -2.0, 2.0);
                let c = uniform_tensor(&mut rng, vec![8], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let s = tape.sigmoid(id).unwrap();
                let m = tape.mul(s, c).unwrap();
                tape.sum(m).unwrap()
            },
        ),
    );

    push(
        "softmax",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![2, 5], -2.0, 2.0);
                let c = uniform_tensor(&mut rng, vec![2, 5], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let s = tape.softmax(id).unwrap();
                let m = tape.mul(s, c).unwrap();
                tape.sum(m).unwrap()
            },
        ),
    );

    push(
        "concat",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![2, 3], -1.0, 1.0);
                let c = uniform_tensor(&mut rng, vec![2, 2], -1.0, 1.0);
                (x, vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                let j = tape.concat(id, c, 1).unwrap();
                let s = tape.sigmoid(j).unwrap();
                tape.sum(s).unwrap()
            },
        ),
    );

    push(
        "reshape",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![2, 6], -1.0, 1.0);
                (x, vec![])
            },
            |tape, id, _| {
                let r = tape.reshape(id, vec![3, 4]).unwrap();
                let s = tape.sigmoid(r).unwrap();
                tape.sum(s).unwrap()
            },
        ),
    );

    push(
        "sum",
        max_err_over_points(
            primitive_points,
            || (uniform_tensor(&mut rng, vec![7], -1.0, 1.0), vec![]),
            |tape, id, _| tape.sum(id).unwrap(),
        ),
    );

    push(
        "mean",
        max_err_over_points(
            primitive_points,
            || (uniform_tensor(&mut rng, vec![7], -1.0, 1.0), vec![]),
            |tape, id, _| tape.mean(id).unwrap(),
        ),
    );

    push(
        "scale",
        max_err_over_points(
            primitive_points,
            || (uniform_tensor(&mut rng, vec![5], -1.0, 1.0), vec![]),
            |tape, id, _| {
                let sq = tape.mul(id, id).unwrap();
                let s = tape.sum(sq).unwrap();
                tape.scale(s, 0.7).unwrap()
            },
        ),
    );

    push(
        "l1_distance",
        max_err_over_points(
            primitive_points,
            || {
                // keep every coordinate of x − c away from the kink
                let c = uniform_tensor(&mut rng, vec![6], -1.0, 1.0);
                let offset = kink_free_tensor(&mut rng, vec![6], 1e-3);
                let data: Vec<f64> = c
                    .data()
                    .iter()
                    .zip(offset.data().iter())
                    .map(|(&cv, &o)| cv + o)
                    .collect();
                (Tensor::vector(&data), vec![c])
            },
            |tape, id, consts| {
                let c = tape.var(consts[0].clone());
                tape.l1_distance(id, c).unwrap()
            },
        ),
    );

    push(
        "cross_entropy",
        max_err_over_points(
            primitive_points,
            || (uniform_tensor(&mut rng, vec![5], 0.2, 0.9), vec![]),
            |tape, id, _| tape.cross_entropy(id, 2).unwrap(),
        ),
    );

    push(
        "cross_entropy_mean",
        max_err_over_points(
            primitive_points,
            || (uniform_tensor(&mut rng, vec![3, 4], 0.2, 0.9), vec![]),
            |tape, id, _| tape.cross_entropy_mean(id, &[1, 0, 3]).unwrap(),
        ),
    );

    push(
        "bce_mean",
        max_err_over_points(
            primitive_points,
            || {
                let x = uniform_tensor(&mut rng, vec![6], 0.1, 0.9);
                let t = uniform_tensor(&mut rng, vec![6], 0.0, 1.0);
                (x, vec![t])
            },
            |tape, id, consts| tape.bce_mean(id, &consts[0]).unwrap(),
        ),
    );

    rows.push(composed_latent_row(&mut rng, composed_points));
    rows.push(composed_attribute_row(&mut rng, composed_points));
    rows.push(composed_identity_row(&mut rng, composed_points));
    rows
}

// Small random models for the composed-objective rows. Hidden activations
// are tanh so the only kinks on the path are the L1 term's, which the
// samplers keep clear of.

fn tiny_classifier(input: usize, classes: usize, seed: u64) -> Classifier {
    let spec = MlpSpec::new(vec![input, 8, classes], Activation::Tanh, Head::Softmax);
    Classifier {
        mlp: Mlp::init(spec, seed).expect("valid spec"),
        num_classes: classes,
    }
}

/// Resamples the variable point until no pixel of `I − G(v)` sits within
/// 1e-3 of the L1 kink.
fn sample_away_from_l1_kinks(
    rng: &mut ChaCha8Rng,
    dim: usize,
    lo: f64,
    hi: f64,
    image: &Tensor,
    decode: impl Fn(&Tensor) -> Tensor,
) -> Tensor {
    for _ in 0..500 {
        let v = uniform_tensor(rng, vec![dim], lo, hi);
        let out = decode(&v);
        let clear = image
            .data()
            .iter()
            .zip(out.data().iter())
            .all(|(a, b)| (a - b).abs() >= 1e-3);
        if clear {
            return v;
        }
    }
    panic!("could not sample a point clear of L1 kinks");
}

fn composed_latent_row(rng: &mut ChaCha8Rng, points: usize) -> GradcheckRow {
    let classifier = tiny_classifier(9, 3, 101);
    let decoder = Mlp::init(
        MlpSpec::new(vec![4, 12, 9], Activation::Tanh, Head::Sigmoid),
        102,
    )
    .expect("valid spec");
    let encoder = Mlp::init(
        MlpSpec::new(vec![9, 12, 4], Activation::Tanh, Head::Linear),
        103,
    )
    .expect("valid spec");
    let generator = LatentGenerator {
        encoder,
        decoder,
        latent_dim: 4,
        image_rows: 3,
        image_cols: 3,
    };
    let engine = Engine::new(&classifier, Generator::Latent(&generator));

    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let image = uniform_tensor(rng, vec![9], 0.0, 1.0);
        let point = sample_away_from_l1_kinks(rng, 4, -1.5, 1.5, &image, |v| {
            generator.decode_value(v).expect("decode")
        });
        let err = grad_check(
            |tape, id| {
                engine
                    .record_objective(tape, &image, 1.7, 1, None, id)
                    .expect("objective records")
                    .total
            },
            &point,
            FD_EPSILON,
        );
        worst = worst.max(err);
    }
    GradcheckRow::from_error("objective_latent", worst, COMPOSED_THRESHOLD)
}

fn composed_attribute_row(rng: &mut ChaCha8Rng, points: usize) -> GradcheckRow {
    let classifier = tiny_classifier(6, 2, 201);
    let encoder = Mlp::init(
        MlpSpec::new(vec![6, 10, 4], Activation::Tanh, Head::Linear),
        202,
    )
    .expect("valid spec");
    let decoder = Mlp::init(
        MlpSpec::new(vec![7, 10, 6], Activation::Tanh, Head::Sigmoid),
        203,
    )
    .expect("valid spec");
    let editor = AttributeEditor {
        encoder,
        decoder,
        attribute_names: vec!["a0".into(), "a1".into(), "a2".into()],
        code_dim: 4,
        image_rows: 2,
        image_cols: 3,
    };
    let engine = Engine::new(&classifier, Generator::Attribute(&editor));

    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let image = uniform_tensor(rng, vec![6], 0.0, 1.0);
        let code = editor.encode_value(&image).expect("encode");
        let decode = |v: &Tensor| {
            let mut tape = Tape::new();
            let code_var = tape.var(code.clone());
            let attrs = tape.var(v.clone());
            let out = editor
                .decode_with_attributes(&mut tape, code_var, attrs)
                .expect("decode");
            tape.value(out).clone()
        };
        let point = sample_away_from_l1_kinks(rng, 3, 0.05, 0.95, &image, decode);
        let err = grad_check(
            |tape, id| {
                engine
                    .record_objective(tape, &image, 0.9, 1, Some(&code), id)
                    .expect("objective records")
                    .total
            },
            &point,
            FD_EPSILON,
        );
        worst = worst.max(err);
    }
    GradcheckRow::from_error("objective_attribute", worst, COMPOSED_THRESHOLD)
}

fn composed_identity_row(rng: &mut ChaCha8Rng, points: usize) -> GradcheckRow {
    let classifier = fixtures::linear_classifier(
        4,
        2,
        &[1.5, -0.5, 0.25, 1.0, -0.75, 0.5, 1.25, -1.0],
        &[0.1, -0.1],
    );
    let engine = Engine::new(&classifier, Generator::Identity { rows: 2, cols: 2 });

    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let image = uniform_tensor(rng, vec![4], 0.1, 0.9);
        // identity generator: variables are the image, so keeping the point
        // off the image by ≥1e-3 per pixel clears both L1 and relu kinks
        let point = sample_away_from_l1_kinks(rng, 4, 0.05, 0.95, &image, |v| v.clone());
        let err = grad_check(
            |tape, id| {
                engine
                    .record_objective(tape, &image, 1.2, 1, None, id)
                    .expect("objective records")
                    .total
            },
            &point,
            FD_EPSILON,
        );
        worst = worst.max(err);
    }
    GradcheckRow::from_error("objective_identity", worst, COMPOSED_THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sweep_passes() {
        let rows = run_gradcheck(7, 10, 5);
        for row in &rows {
            assert!(
                row.pass,
                "{} failed: {} ≥ {}",
                row.name, row.max_rel_err, row.threshold
            );
        }
        assert!(all_pass(&rows));
        assert!(rows.iter().any(|r| r.name == "objective_latent"));
    }

    #[test]
    fn corrupted_gradient_fails_its_row() {
        // fault injection: offset the analytic gradient and rebuild the row
        let x = Tensor::vector(&[0.4, -0.8, 1.1]);
        let f = |tape: &mut Tape, id: VarId| {
            let sq = tape.mul(id, id).unwrap();
            tape.sum(sq).unwrap()
        };
        let honest = grad_check(f, &x, FD_EPSILON);
        let corrupted = honest + 0.1;
        let row = GradcheckRow::from_error("sum_of_squares_corrupted", corrupted, 1e-5);
        assert!(!row.pass);
        assert!(GradcheckRow::from_error("sum_of_squares", honest, 1e-5).pass);
    }
}
