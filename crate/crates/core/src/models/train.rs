//! Adam-based trainers for the four networks.
//!
//! Everything here is deterministic: weight init, shuffle order, and the
//! random edit targets used by the editor all flow from the config seed,
//! so a fixed (dataset, config) pair reproduces bit-identical weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, VarId};
use crate::data::LabeledImage;
use crate::models::{
    AttributeEditor, AttributePredictor, Classifier, LatentGenerator, Mlp, MlpSpec, ModelError,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled per-step weight decay; 0 disables it.
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Adam with bias correction and decoupled weight decay; betas 0.9/0.999,
/// epsilon 1e-8.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, weight_decay: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn step(&mut self, weights: &mut [&mut Tensor], grads: &[Tensor]) {
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (idx, w) in weights.iter_mut().enumerate() {
            let g = grads[idx].data();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for (i, wv) in w.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *wv -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *wv);
            }
        }
    }
}

// distinct streams per rng role, derived from the one config seed
const SHUFFLE_STREAM: u64 = 0x53_48_55_46;
const EDIT_STREAM: u64 = 0x45_44_49_54;

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    indices
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}

fn image_batch(items: &[LabeledImage], indices: &[usize]) -> Tensor {
    let dim = items[indices[0]].image.numel();
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        data.extend_from_slice(items[i].image.data());
    }
    Tensor::new(vec![indices.len(), dim], data).expect("batch shape")
}

fn attribute_batch(items: &[LabeledImage], indices: &[usize]) -> Result<Tensor, ModelError> {
    let first = items[indices[0]]
        .attributes
        .as_ref()
        .ok_or(ModelError::MissingAttributes)?;
    let n_attr = first.len();
    let mut data = Vec::with_capacity(indices.len() * n_attr);
    for &i in indices {
        let attrs = items[i]
            .attributes
            .as_ref()
            .ok_or(ModelError::MissingAttributes)?;
        data.extend_from_slice(attrs);
    }
    Ok(Tensor::new(vec![indices.len(), n_attr], data).expect("attribute batch shape"))
}

fn collect_param_grads(
    tape: &Tape,
    grads: &crate::autodiff::Gradients,
    params: &[VarId],
) -> Vec<Tensor> {
    params
        .iter()
        .map(|&p| grads.get_or_zeros(p, tape.value(p).shape()))
        .collect()
}

// ── classifier ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

/// Trains a softmax classifier with minibatch Adam on cross-entropy.
pub fn train_classifier(
    train: &[LabeledImage],
    test: &[LabeledImage],
    spec: &MlpSpec,
    config: &TrainConfig,
) -> Result<(Classifier, ClassifierMetrics), ModelError> {
    if train.is_empty() || test.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let num_classes = spec.output_dim();
    for item in train.iter().chain(test.iter()) {
        if item.label >= num_classes {
            return Err(ModelError::LabelOutOfRange {
                label: item.label,
                classes: num_classes,
            });
        }
    }

    let mut mlp = Mlp::init(spec.clone(), config.seed)?;
    let sizes: Vec<usize> = mlp.weights.iter().map(Tensor::numel).collect();
    let mut adam = Adam::new(config.learning_rate, config.weight_decay, &sizes);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);

    let mut final_loss = f64::NAN;
    for _epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        let batches = shuffled_batches(train.len(), config.batch_size, &mut shuffle_rng);
        let n_batches = batches.len();
        for batch in batches {
            let x = image_batch(train, &batch);
            let targets: Vec<usize> = batch.iter().map(|&i| train[i].label).collect();

            let mut tape = Tape::new();
            let params = mlp.record_params(&mut tape);
            let x_var = tape.var(x);
            let probs = mlp.forward_from_params(&mut tape, &params, x_var)?;
            let loss = tape.cross_entropy_mean(probs, &targets)?;
            epoch_loss += tape.value(loss).item();

            let grads = tape.backward(loss)?;
            let grad_tensors = collect_param_grads(&tape, &grads, &params);
            let mut weight_refs: Vec<&mut Tensor> = mlp.weights.iter_mut().collect();
            adam.step(&mut weight_refs, &grad_tensors);
        }
        final_loss = epoch_loss / n_batches as f64;
    }

    let classifier = Classifier { mlp, num_classes };
    let metrics = ClassifierMetrics {
        train_accuracy: classifier.accuracy(train)?,
        test_accuracy: classifier.accuracy(test)?,
        final_loss,
    };
    Ok((classifier, metrics))
}

// ── latent generator (autoencoder) ──────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorMetrics {
    pub train_l1: f64,
    pub test_l1: f64,
}

/// Weight of the code-magnitude penalty that keeps encoder outputs inside
/// the optimization box the engine searches over.
const CODE_REG: f64 = 0.01;

/// Trains the encoder/decoder pair on mean per-pixel L1 reconstruction.
/// The decoder is the engine's `G(L)`; the encoder initializes inversions.
pub fn train_latent_generator(
    train: &[LabeledImage],
    test: &[LabeledImage],
    encoder_spec: &MlpSpec,
    decoder_spec: &MlpSpec,
    image_rows: usize,
    image_cols: usize,
    config: &TrainConfig,
) -> Result<(LatentGenerator, GeneratorMetrics), ModelError> {
    if train.is_empty() || test.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let latent_dim = encoder_spec.output_dim();
    if decoder_spec.input_dim() != latent_dim {
        return Err(ModelError::DegenerateSpec(format!(
            "decoder input {} must equal encoder output {latent_dim}",
            decoder_spec.input_dim()
        )));
    }
    if encoder_spec.input_dim() != image_rows * image_cols
        || decoder_spec.output_dim() != image_rows * image_cols
    {
        return Err(ModelError::DegenerateSpec(
            "autoencoder widths must match the image size".into(),
        ));
    }

    let mut encoder = Mlp::init(encoder_spec.clone(), config.seed)?;
    let mut decoder = Mlp::init(decoder_spec.clone(), config.seed.wrapping_add(1))?;
    let sizes: Vec<usize> = encoder
        .weights
        .iter()
        .chain(decoder.weights.iter())
        .map(Tensor::numel)
        .collect();
    let mut adam = Adam::new(config.learning_rate, config.weight_decay, &sizes);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);

    for _epoch in 0..config.epochs {
        for batch in shuffled_batches(train.len(), config.batch_size, &mut shuffle_rng) {
            let x = image_batch(train, &batch);
            let pixels = x.numel() as f64;

            let mut tape = Tape::new();
            let enc_params = encoder.record_params(&mut tape);
            let dec_params = decoder.record_params(&mut tape);
            let x_var = tape.var(x);
            let code = encoder.forward_from_params(&mut tape, &enc_params, x_var)?;
            let recon = decoder.forward_from_params(&mut tape, &dec_params, code)?;

            let l1 = tape.l1_distance(x_var, recon)?;
            let recon_term = tape.scale(l1, 1.0 / pixels)?;
            let code_sq = tape.mul(code, code)?;
            let code_mean = tape.mean(code_sq)?;
            let reg_term = tape.scale(code_mean, CODE_REG)?;
            let loss = tape.add(recon_term, reg_term)?;

            let grads = tape.backward(loss)?;
            let all_params: Vec<VarId> = enc_params
                .iter()
                .chain(dec_params.iter())
                .copied()
                .collect();
            let grad_tensors = collect_param_grads(&tape, &grads, &all_params);
            let mut weight_refs: Vec<&mut Tensor> = encoder
                .weights
                .iter_mut()
                .chain(decoder.weights.iter_mut())
                .collect();
            adam.step(&mut weight_refs, &grad_tensors);
        }
    }

    let generator = LatentGenerator {
        encoder,
        decoder,
        latent_dim,
        image_rows,
        image_cols,
    };
    let metrics = GeneratorMetrics {
        train_l1: mean_reconstruction_l1(&generator, train)?,
        test_l1: mean_reconstruction_l1(&generator, test)?,
    };
    Ok((generator, metrics))
}

fn mean_reconstruction_l1(
    generator: &LatentGenerator,
    items: &[LabeledImage],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for item in items {
        total += generator.reconstruction_error(&item.image)?;
    }
    Ok(total / items.len() as f64)
}

// ── attribute predictor ─────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorMetrics {
    /// Thresholded accuracy per attribute on the held-out set.
    pub test_accuracy: Vec<f64>,
}

/// Trains the multi-label attribute predictor on binary cross-entropy
/// against the dataset's attribute annotations.
pub fn train_attribute_predictor(
    train: &[LabeledImage],
    test: &[LabeledImage],
    attribute_names: &[String],
    spec: &MlpSpec,
    config: &TrainConfig,
) -> Result<(AttributePredictor, PredictorMetrics), ModelError> {
    if train.is_empty() || test.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if spec.output_dim() != attribute_names.len() {
        return Err(ModelError::AttributeLengthMismatch {
            expected: attribute_names.len(),
            got: spec.output_dim(),
        });
    }

    let mut mlp = Mlp::init(spec.clone(), config.seed)?;
    let sizes: Vec<usize> = mlp.weights.iter().map(Tensor::numel).collect();
    let mut adam = Adam::new(config.learning_rate, config.weight_decay, &sizes);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);

    for _epoch in 0..config.epochs {
        for batch in shuffled_batches(train.len(), config.batch_size, &mut shuffle_rng) {
            let x = image_batch(train, &batch);
            let targets = attribute_batch(train, &batch)?;

            let mut tape = Tape::new();
            let params = mlp.record_params(&mut tape);
            let x_var = tape.var(x);
            let probs = mlp.forward_from_params(&mut tape, &params, x_var)?;
            let loss = tape.bce_mean(probs, &targets)?;

            let grads = tape.backward(loss)?;
            let grad_tensors = collect_param_grads(&tape, &grads, &params);
            let mut weight_refs: Vec<&mut Tensor> = mlp.weights.iter_mut().collect();
            adam.step(&mut weight_refs, &grad_tensors);
        }
    }

    let predictor = AttributePredictor {
        mlp,
        attribute_names: attribute_names.to_vec(),
    };
    let metrics = PredictorMetrics {
        test_accuracy: predictor.thresholded_accuracy(test)?,
    };
    Ok((predictor, metrics))
}

// ── attribute editor ────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditorMetrics {
    /// Mean per-pixel L1 of `edit(I, A_true)` vs `I` on the held-out set.
    pub recon_l1_test: f64,
    /// For each binary attribute: mean predictor confidence that an edit
    /// with that attribute flipped actually shows the flipped value.
    pub controllability: Vec<(String, f64)>,
}

/// Weight of the attribute-consistency term in the editor loss.
const EDIT_GAMMA: f64 = 1.0;

/// Trains the conditioned autoencoder `G(I; A)`. The loss couples mean
/// per-pixel L1 reconstruction under true attributes with the frozen
/// predictor's binary cross-entropy on images edited toward random target
/// attributes, weighted by `EDIT_GAMMA`. Predictor weights never update.
pub fn train_attribute_editor(
    train: &[LabeledImage],
    test: &[LabeledImage],
    predictor: &AttributePredictor,
    encoder_spec: &MlpSpec,
    decoder_spec: &MlpSpec,
    image_rows: usize,
    image_cols: usize,
    config: &TrainConfig,
) -> Result<(AttributeEditor, EditorMetrics), ModelError> {
    if train.is_empty() || test.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n_attr = predictor.attribute_count();
    let code_dim = encoder_spec.output_dim();
    if decoder_spec.input_dim() != code_dim + n_attr {
        return Err(ModelError::DegenerateSpec(format!(
            "editor decoder input {} must equal code {code_dim} + attributes {n_attr}",
            decoder_spec.input_dim()
        )));
    }
    for item in train.iter().chain(test.iter()) {
        let attrs = item
            .attributes
            .as_ref()
            .ok_or(ModelError::MissingAttributes)?;
        if attrs.len() != n_attr {
            return Err(ModelError::AttributeLengthMismatch {
                expected: n_attr,
                got: attrs.len(),
            });
        }
    }
    let binary_attrs = binary_attribute_mask(train, n_attr);

    let mut encoder = Mlp::init(encoder_spec.clone(), config.seed)?;
    let mut decoder = Mlp::init(decoder_spec.clone(), config.seed.wrapping_add(1))?;
    let sizes: Vec<usize> = encoder
        .weights
        .iter()
        .chain(decoder.weights.iter())
        .map(Tensor::numel)
        .collect();
    let mut adam = Adam::new(config.learning_rate, config.weight_decay, &sizes);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut edit_rng = ChaCha8Rng::seed_from_u64(config.seed ^ EDIT_STREAM);

    for _epoch in 0..config.epochs {
        for batch in shuffled_batches(train.len(), config.batch_size, &mut shuffle_rng) {
            let x = image_batch(train, &batch);
            let pixels = x.numel() as f64;
            let attrs_true = attribute_batch(train, &batch)?;
            let attrs_rand =
                random_attribute_targets(batch.len(), &binary_attrs, &mut edit_rng);

            let mut tape = Tape::new();
            let enc_params = encoder.record_params(&mut tape);
            let dec_params = decoder.record_params(&mut tape);
            let pred_params = predictor.mlp.record_params(&mut tape);
            let x_var = tape.var(x);
            let code = encoder.forward_from_params(&mut tape, &enc_params, x_var)?;

            // reconstruction under true attributes
            let attrs_true_var = tape.var(attrs_true);
            let recon_in = tape.concat(code, attrs_true_var, 1)?;
            let recon = decoder.forward_from_params(&mut tape, &dec_params, recon_in)?;
            let l1 = tape.l1_distance(x_var, recon)?;
            let recon_term = tape.scale(l1, 1.0 / pixels)?;

            // edit toward random targets, judged by the frozen predictor
            let attrs_rand_var = tape.var(attrs_rand.clone());
            let edit_in = tape.concat(code, attrs_rand_var, 1)?;
            let edited = decoder.forward_from_params(&mut tape, &dec_params, edit_in)?;
            let pred = predictor
                .mlp
                .forward_from_params(&mut tape, &pred_params, edited)?;
            let ctrl = tape.bce_mean(pred, &attrs_rand)?;
            let ctrl_term = tape.scale(ctrl, EDIT_GAMMA)?;

            let loss = tape.add(recon_term, ctrl_term)?;
            let grads = tape.backward(loss)?;
            // only encoder/decoder update; the predictor stays frozen
            let trainable: Vec<VarId> = enc_params
                .iter()
                .chain(dec_params.iter())
                .copied()
                .collect();
            let grad_tensors = collect_param_grads(&tape, &grads, &trainable);
            let mut weight_refs: Vec<&mut Tensor> = encoder
                .weights
                .iter_mut()
                .chain(decoder.weights.iter_mut())
                .collect();
            adam.step(&mut weight_refs, &grad_tensors);
        }
    }

    let editor = AttributeEditor {
        encoder,
        decoder,
        attribute_names: predictor.attribute_names.clone(),
        code_dim,
        image_rows,
        image_cols,
    };
    let metrics = EditorMetrics {
        recon_l1_test: editor_recon_l1(&editor, test)?,
        controllability: editor_controllability(&editor, predictor, test, &binary_attrs)?,
    };
    Ok((editor, metrics))
}

fn binary_attribute_mask(items: &[LabeledImage], n_attr: usize) -> Vec<bool> {
    let mut binary = vec![true; n_attr];
    for item in items {
        if let Some(attrs) = &item.attributes {
            for (a, &v) in attrs.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    binary[a] = false;
                }
            }
        }
    }
    binary
}

// Binary attributes draw a Bernoulli target half the time and a uniform
// one otherwise: the crisp targets anchor controllability at the ends
// while the continuous ones keep the decoder's response smooth, so the
// engine sees usable gradients instead of a step function.
fn random_attribute_targets(
    batch: usize,
    binary_attrs: &[bool],
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let n_attr = binary_attrs.len();
    let mut data = Vec::with_capacity(batch * n_attr);
    for _ in 0..batch {
        for &is_binary in binary_attrs {
            let crisp: f64 = rng.gen();
            let v: f64 = rng.gen();
            data.push(if is_binary && crisp < 0.5 {
                (v < 0.5) as u8 as f64
            } else {
                v
            });
        }
    }
    Tensor::new(vec![batch, n_attr], data).expect("target shape")
}

fn editor_recon_l1(editor: &AttributeEditor, items: &[LabeledImage]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for item in items {
        let attrs = item.attributes.as_ref().expect("validated above");
        let edited = editor.edit_value(&item.image, attrs)?;
        let sum: f64 = item
            .image
            .data()
            .iter()
            .zip(edited.data().iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        total += sum / item.image.numel() as f64;
    }
    Ok(total / items.len() as f64)
}

fn editor_controllability(
    editor: &AttributeEditor,
    predictor: &AttributePredictor,
    items: &[LabeledImage],
    binary_attrs: &[bool],
) -> Result<Vec<(String, f64)>, ModelError> {
    let mut scores = Vec::new();
    for (a, &is_binary) in binary_attrs.iter().enumerate() {
        if !is_binary {
            continue;
        }
        let mut total = 0.0;
        for item in items {
            let attrs = item.attributes.as_ref().expect("validated above");
            let mut flipped = attrs.clone();
            let target = if attrs[a] >= 0.5 { 0.0 } else { 1.0 };
            flipped[a] = target;
            let edited = editor.edit_value(&item.image, &flipped)?;
            let p = predictor.predict(&edited)?.data()[a];
            total += if target >= 0.5 { p } else { 1.0 - p };
        }
        scores.push((
            predictor.attribute_names[a].clone(),
            total / items.len() as f64,
        ));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, Head};

    /// Two well-separated Gaussian blobs in pixel space; separable by
    /// construction, so the trainer must hit perfect test accuracy fast.
    fn blob_dataset(n: usize, dim: usize, seed: u64) -> Vec<LabeledImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let mean = if label == 0 { 0.25 } else { 0.75 };
            let data: Vec<f64> = (0..dim)
                .map(|_| {
                    // Box-Muller, sigma 0.05
                    let u1: f64 = rng.gen::<f64>().max(1e-12);
                    let u2: f64 = rng.gen();
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    (mean + 0.05 * z).clamp(0.0, 1.0)
                })
                .collect();
            items.push(LabeledImage {
                image: Tensor::vector(&data),
                label,
                attributes: None,
            });
        }
        items
    }

    #[test]
    fn separable_blobs_reach_perfect_accuracy_in_two_epochs() {
        let train = blob_dataset(200, 16, 1);
        let test = blob_dataset(80, 16, 2);
        let spec = MlpSpec::new(vec![16, 16, 2], Activation::Relu, Head::Softmax);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.05,
            weight_decay: 0.0,
            seed: 0,
        };
        let (_, metrics) = train_classifier(&train, &test, &spec, &config).unwrap();
        assert_eq!(metrics.test_accuracy, 1.0, "metrics: {metrics:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let train = blob_dataset(64, 8, 3);
        let test = blob_dataset(32, 8, 4);
        let spec = MlpSpec::new(vec![8, 8, 2], Activation::Relu, Head::Softmax);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 9,
        };
        let (a, _) = train_classifier(&train, &test, &spec, &config).unwrap();
        let (b, _) = train_classifier(&train, &test, &spec, &config).unwrap();
        for (wa, wb) in a.mlp.weights.iter().zip(b.mlp.weights.iter()) {
            let bits_a: Vec<u64> = wa.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = wb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn classifier_rejects_out_of_range_labels() {
        let mut items = blob_dataset(10, 4, 5);
        items[3].label = 7;
        let spec = MlpSpec::new(vec![4, 8, 2], Activation::Relu, Head::Softmax);
        let err =
            train_classifier(&items, &items, &spec, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, ModelError::LabelOutOfRange { label: 7, .. }));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let spec = MlpSpec::new(vec![4, 8, 2], Activation::Relu, Head::Softmax);
        let err = train_classifier(&[], &[], &spec, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, ModelError::EmptyDataset));
    }
}
