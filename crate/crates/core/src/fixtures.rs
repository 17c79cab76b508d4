//! Hand-built models with known closed-form behavior, used by gradient
//! checks, oracle comparisons, and the CLI's fixture configs.

use crate::models::{Activation, Classifier, Head, Mlp, MlpSpec};
use crate::tensor::Tensor;

/// A classifier whose logits are exactly `x·W + b` despite the mandatory
/// hidden layer: the hidden relu pair computes `[relu(x), relu(−x)]` and
/// the output layer recombines `relu(x) − relu(−x) = x`. Linear for every
/// `x` without a zero coordinate, so decision boundaries are hyperplanes
/// that brute-force oracles can search exactly.
///
/// `weight` is `n_in × n_classes` row-major, `bias` has `n_classes`.
pub fn linear_classifier(n_in: usize, n_classes: usize, weight: &[f64], bias: &[f64]) -> Classifier {
    assert_eq!(weight.len(), n_in * n_classes, "weight length");
    assert_eq!(bias.len(), n_classes, "bias length");

    let hidden = 2 * n_in;
    // W1 = [I | −I]: h = [relu(x), relu(−x)]
    let mut w1 = vec![0.0; n_in * hidden];
    for i in 0..n_in {
        w1[i * hidden + i] = 1.0;
        w1[i * hidden + n_in + i] = -1.0;
    }
    // W2 = [W; −W]: logits = relu(x)·W − relu(−x)·W + b = x·W + b
    let mut w2 = vec![0.0; hidden * n_classes];
    for i in 0..n_in {
        for c in 0..n_classes {
            w2[i * n_classes + c] = weight[i * n_classes + c];
            w2[(n_in + i) * n_classes + c] = -weight[i * n_classes + c];
        }
    }

    let spec = MlpSpec::new(vec![n_in, hidden, n_classes], Activation::Relu, Head::Softmax);
    let mlp = Mlp {
        spec,
        weights: vec![
            Tensor::matrix(n_in, hidden, w1).expect("w1 shape"),
            Tensor::zeros(vec![hidden]),
            Tensor::matrix(hidden, n_classes, w2).expect("w2 shape"),
            Tensor::vector(bias),
        ],
    };
    Classifier {
        mlp,
        num_classes: n_classes,
    }
}
