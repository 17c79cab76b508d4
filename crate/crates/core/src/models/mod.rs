//! The three frozen networks the counterfactual engine differentiates
//! through — classifier `C`, latent generator `G(L)`, attribute editor
//! `G(I;A)` — plus the auxiliary attribute predictor, their trainers, and
//! checkpoint persistence.

mod checkpoint;
mod mlp;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind, CHECKPOINT_MAGIC};
pub use mlp::{Activation, Head, Mlp, MlpSpec};
pub use train::{
    train_attribute_editor, train_attribute_predictor, train_classifier, train_latent_generator,
    ClassifierMetrics, EditorMetrics, GeneratorMetrics, PredictorMetrics, TrainConfig,
};

use thiserror::Error;

use crate::autodiff::{Tape, VarId};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("degenerate model spec: {0}")]
    DegenerateSpec(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("attribute vector length {got}, expected {expected}")]
    AttributeLengthMismatch { expected: usize, got: usize },
    #[error("dataset items carry no attribute annotations")]
    MissingAttributes,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: unsupported version {0}")]
    BadVersion(u8),
    #[error("checkpoint: corrupt header: {0}")]
    CorruptHeader(String),
    #[error("checkpoint: truncated payload (expected {expected} values, got {got})")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("checkpoint: header declares {declared} parameters but specs require {required}")]
    ParamCountMismatch { declared: usize, required: usize },
    #[error("checkpoint holds a {found}, expected a {expected}")]
    KindMismatch { expected: ModelKind, found: ModelKind },
}

/// Image classifier: flat pixels in `[0,1]` → probability vector over
/// `num_classes`, softmax head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub mlp: Mlp,
    pub num_classes: usize,
}

impl Classifier {
    pub fn input_dim(&self) -> usize {
        self.mlp.spec.input_dim()
    }

    /// Class probabilities for one flat image.
    pub fn probs(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        self.mlp.forward_value(image)
    }

    /// Predicted class and its probability.
    pub fn predict(&self, image: &Tensor) -> Result<(usize, f64), ModelError> {
        let p = self.probs(image)?;
        let c = p.argmax();
        Ok((c, p.data()[c]))
    }

    /// Tape forward for one flat image var; returns rank-1 probabilities.
    pub fn forward_single(&self, tape: &mut Tape, image: VarId) -> Result<VarId, ModelError> {
        let n = self.input_dim();
        let row = tape.reshape(image, vec![1, n])?;
        let probs = self.mlp.forward(tape, row)?;
        Ok(tape.reshape(probs, vec![self.num_classes])?)
    }

    /// Tape forward for a `[B, n]` batch; returns `[B, K]` probabilities.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        params: &[VarId],
        batch: VarId,
    ) -> Result<VarId, ModelError> {
        self.mlp.forward_from_params(tape, params, batch)
    }

    pub fn accuracy(&self, items: &[crate::data::LabeledImage]) -> Result<f64, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut hits = 0usize;
        for item in items {
            let (c, _) = self.predict(&item.image)?;
            if c == item.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / items.len() as f64)
    }
}

/// Latent-space generator `G(L)`: decoder from a `latent_dim` code to a
/// flat image with sigmoid head, bundled with its paired encoder (used to
/// initialize latent optimization from a query image).
#[derive(Debug, Clone)]
pub struct LatentGenerator {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub image_rows: usize,
    pub image_cols: usize,
}

impl LatentGenerator {
    pub fn image_dim(&self) -> usize {
        self.image_rows * self.image_cols
    }

    /// Tape decode for one rank-1 latent var; returns a rank-1 flat image.
    pub fn decode_single(&self, tape: &mut Tape, latent: VarId) -> Result<VarId, ModelError> {
        let row = tape.reshape(latent, vec![1, self.latent_dim])?;
        let img = self.decoder.forward(tape, row)?;
        Ok(tape.reshape(img, vec![self.image_dim()])?)
    }

    pub fn decode_value(&self, latent: &Tensor) -> Result<Tensor, ModelError> {
        self.decoder.forward_value(latent)
    }

    pub fn encode_value(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        self.encoder.forward_value(image)
    }

    /// Mean per-pixel L1 between an image and its reconstruction.
    pub fn reconstruction_error(&self, image: &Tensor) -> Result<f64, ModelError> {
        let recon = self.decode_value(&self.encode_value(image)?)?;
        let sum: f64 = image
            .data()
            .iter()
            .zip(recon.data().iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / image.numel() as f64)
    }
}

/// Attribute editor `G(I; A)`: encodes the query image to a small code,
/// then decodes `code ++ attributes` back to an image. Editing means
/// decoding the fixed code with modified attributes.
#[derive(Debug, Clone)]
pub struct AttributeEditor {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub attribute_names: Vec<String>,
    pub code_dim: usize,
    pub image_rows: usize,
    pub image_cols: usize,
}

impl AttributeEditor {
    pub fn attribute_count(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn image_dim(&self) -> usize {
        self.image_rows * self.image_cols
    }

    pub fn encode_value(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        self.encoder.forward_value(image)
    }

    /// Tape decode of a fixed image code with a rank-1 attribute var.
    pub fn decode_with_attributes(
        &self,
        tape: &mut Tape,
        code: VarId,
        attributes: VarId,
    ) -> Result<VarId, ModelError> {
        let n_attr = tape.value(attributes).numel();
        if n_attr != self.attribute_count() {
            return Err(ModelError::AttributeLengthMismatch {
                expected: self.attribute_count(),
                got: n_attr,
            });
        }
        let joined = tape.concat(code, attributes, 0)?;
        let row = tape.reshape(joined, vec![1, self.code_dim + self.attribute_count()])?;
        let img = self.decoder.forward(tape, row)?;
        Ok(tape.reshape(img, vec![self.image_dim()])?)
    }

    /// `edit(I, A)` as a plain value: encode `I`, decode with `A`.
    pub fn edit_value(&self, image: &Tensor, attributes: &[f64]) -> Result<Tensor, ModelError> {
        if attributes.len() != self.attribute_count() {
            return Err(ModelError::AttributeLengthMismatch {
                expected: self.attribute_count(),
                got: attributes.len(),
            });
        }
        let code = self.encode_value(image)?;
        let mut tape = Tape::new();
        let code_var = tape.var(code);
        let attr_var = tape.var(Tensor::vector(attributes));
        let out = self.decode_with_attributes(&mut tape, code_var, attr_var)?;
        Ok(tape.value(out).clone())
    }
}

/// Auxiliary multi-label attribute predictor: flat image → per-attribute
/// probabilities, sigmoid head. Trained before the editor and frozen
/// while the editor trains.
#[derive(Debug, Clone)]
pub struct AttributePredictor {
    pub mlp: Mlp,
    pub attribute_names: Vec<String>,
}

impl AttributePredictor {
    pub fn attribute_count(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn predict(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        self.mlp.forward_value(image)
    }

    /// Fraction of held-out items whose thresholded prediction matches the
    /// thresholded annotation, per attribute. Threshold 0.5 on both sides.
    pub fn thresholded_accuracy(
        &self,
        items: &[crate::data::LabeledImage],
    ) -> Result<Vec<f64>, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let n_attr = self.attribute_count();
        let mut hits = vec![0usize; n_attr];
        for item in items {
            let attrs = item
                .attributes
                .as_ref()
                .ok_or(ModelError::MissingAttributes)?;
            let pred = self.predict(&item.image)?;
            for a in 0..n_attr {
                if (pred.data()[a] >= 0.5) == (attrs[a] >= 0.5) {
                    hits[a] += 1;
                }
            }
        }
        Ok(hits
            .into_iter()
            .map(|h| h as f64 / items.len() as f64)
            .collect())
    }
}
