//! Checkpoint container: magic `CFXM`, version byte, little-endian header
//! length, JSON header, then every weight as little-endian `f64` in
//! declared order. The header is validated before any payload is read,
//! and a save/load round trip is bit-identical.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::models::{
    AttributeEditor, AttributePredictor, Classifier, LatentGenerator, Mlp, MlpSpec, ModelError,
    TrainConfig,
};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CFXM";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Classifier,
    LatentGenerator,
    AttributeEditor,
    AttributePredictor,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Classifier => "classifier",
            ModelKind::LatentGenerator => "latent_generator",
            ModelKind::AttributeEditor => "attribute_editor",
            ModelKind::AttributePredictor => "attribute_predictor",
        };
        f.write_str(s)
    }
}

/// Provenance recorded alongside the weights.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub metrics: serde_json::Value,
}

/// A model ready to persist or just loaded.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Classifier(Classifier),
    LatentGenerator(LatentGenerator),
    AttributeEditor(AttributeEditor),
    AttributePredictor(AttributePredictor),
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Checkpoint::Classifier(_) => ModelKind::Classifier,
            Checkpoint::LatentGenerator(_) => ModelKind::LatentGenerator,
            Checkpoint::AttributeEditor(_) => ModelKind::AttributeEditor,
            Checkpoint::AttributePredictor(_) => ModelKind::AttributePredictor,
        }
    }

    pub fn into_classifier(self) -> Result<Classifier, ModelError> {
        match self {
            Checkpoint::Classifier(c) => Ok(c),
            other => Err(ModelError::KindMismatch {
                expected: ModelKind::Classifier,
                found: other.kind(),
            }),
        }
    }

    pub fn into_latent_generator(self) -> Result<LatentGenerator, ModelError> {
        match self {
            Checkpoint::LatentGenerator(g) => Ok(g),
            other => Err(ModelError::KindMismatch {
                expected: ModelKind::LatentGenerator,
                found: other.kind(),
            }),
        }
    }

    pub fn into_attribute_editor(self) -> Result<AttributeEditor, ModelError> {
        match self {
            Checkpoint::AttributeEditor(e) => Ok(e),
            other => Err(ModelError::KindMismatch {
                expected: ModelKind::AttributeEditor,
                found: other.kind(),
            }),
        }
    }

    pub fn into_attribute_predictor(self) -> Result<AttributePredictor, ModelError> {
        match self {
            Checkpoint::AttributePredictor(p) => Ok(p),
            other => Err(ModelError::KindMismatch {
                expected: ModelKind::AttributePredictor,
                found: other.kind(),
            }),
        }
    }

    fn weight_tensors(&self) -> Vec<&Tensor> {
        match self {
            Checkpoint::Classifier(c) => c.mlp.weights.iter().collect(),
            Checkpoint::LatentGenerator(g) => {
                g.encoder.weights.iter().chain(g.decoder.weights.iter()).collect()
            }
            Checkpoint::AttributeEditor(e) => {
                e.encoder.weights.iter().chain(e.decoder.weights.iter()).collect()
            }
            Checkpoint::AttributePredictor(p) => p.mlp.weights.iter().collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    specs: Vec<MlpSpec>,
    param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attribute_names: Option<Vec<String>>,
    meta: CheckpointMeta,
}

fn build_header(model: &Checkpoint, meta: &CheckpointMeta) -> Header {
    let (specs, num_classes, latent_dim, code_dim, rows, cols, names) = match model {
        Checkpoint::Classifier(c) => (
            vec![c.mlp.spec.clone()],
            Some(c.num_classes),
            None,
            None,
            None,
            None,
            None,
        ),
        Checkpoint::LatentGenerator(g) => (
            vec![g.encoder.spec.clone(), g.decoder.spec.clone()],
            None,
            Some(g.latent_dim),
            None,
            Some(g.image_rows),
            Some(g.image_cols),
            None,
        ),
        Checkpoint::AttributeEditor(e) => (
            vec![e.encoder.spec.clone(), e.decoder.spec.clone()],
            None,
            None,
            Some(e.code_dim),
            Some(e.image_rows),
            Some(e.image_cols),
            Some(e.attribute_names.clone()),
        ),
        Checkpoint::AttributePredictor(p) => (
            vec![p.mlp.spec.clone()],
            None,
            None,
            None,
            None,
            None,
            Some(p.attribute_names.clone()),
        ),
    };
    let param_count = specs.iter().map(MlpSpec::param_count).sum();
    Header {
        kind: model.kind(),
        specs,
        param_count,
        num_classes,
        latent_dim,
        code_dim,
        image_rows: rows,
        image_cols: cols,
        attribute_names: names,
        meta: meta.clone(),
    }
}

/// Serializes a checkpoint to its container bytes.
pub fn encode_checkpoint(model: &Checkpoint, meta: &CheckpointMeta) -> Vec<u8> {
    let header = build_header(model, meta);
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(9 + header_json.len() + header.param_count * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for tensor in model.weight_tensors() {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    model: &Checkpoint,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), ModelError> {
    fs::write(path, encode_checkpoint(model, meta))?;
    Ok(())
}

/// Parses container bytes back into a model, validating the header before
/// touching the payload.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Checkpoint, CheckpointMeta), ModelError> {
    if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(ModelError::BadVersion(bytes[4]));
    }
    let header_len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let header_end = 9 + header_len;
    if bytes.len() < header_end {
        return Err(ModelError::CorruptHeader("header extends past file".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[9..header_end])
        .map_err(|e| ModelError::CorruptHeader(e.to_string()))?;
    for spec in &header.specs {
        spec.validate()?;
    }
    let required: usize = header.specs.iter().map(MlpSpec::param_count).sum();
    if header.param_count != required {
        return Err(ModelError::ParamCountMismatch {
            declared: header.param_count,
            required,
        });
    }

    let payload = &bytes[header_end..];
    let expected = required * 8;
    if payload.len() < expected {
        return Err(ModelError::TruncatedPayload {
            expected: required,
            got: payload.len() / 8,
        });
    }
    let mut values = Vec::with_capacity(required);
    for chunk in payload[..expected].chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
    }

    let mut cursor = 0usize;
    let mut mlps = Vec::with_capacity(header.specs.len());
    for spec in &header.specs {
        mlps.push(mlp_from_flat(spec.clone(), &values, &mut cursor));
    }

    let missing = |field: &str| ModelError::CorruptHeader(format!("missing field {field}"));
    let model = match header.kind {
        ModelKind::Classifier => {
            let mlp = mlps.remove(0);
            let num_classes = header.num_classes.ok_or_else(|| missing("num_classes"))?;
            Checkpoint::Classifier(Classifier { mlp, num_classes })
        }
        ModelKind::LatentGenerator => {
            let encoder = mlps.remove(0);
            let decoder = mlps.remove(0);
            Checkpoint::LatentGenerator(LatentGenerator {
                latent_dim: header.latent_dim.ok_or_else(|| missing("latent_dim"))?,
                image_rows: header.image_rows.ok_or_else(|| missing("image_rows"))?,
                image_cols: header.image_cols.ok_or_else(|| missing("image_cols"))?,
                encoder,
                decoder,
            })
        }
        ModelKind::AttributeEditor => {
            let encoder = mlps.remove(0);
            let decoder = mlps.remove(0);
            Checkpoint::AttributeEditor(AttributeEditor {
                attribute_names: header
                    .attribute_names
                    .clone()
                    .ok_or_else(|| missing("attribute_names"))?,
                code_dim: header.code_dim.ok_or_else(|| missing("code_dim"))?,
                image_rows: header.image_rows.ok_or_else(|| missing("image_rows"))?,
                image_cols: header.image_cols.ok_or_else(|| missing("image_cols"))?,
                encoder,
                decoder,
            })
        }
        ModelKind::AttributePredictor => {
            let mlp = mlps.remove(0);
            Checkpoint::AttributePredictor(AttributePredictor {
                mlp,
                attribute_names: header
                    .attribute_names
                    .clone()
                    .ok_or_else(|| missing("attribute_names"))?,
            })
        }
    };
    Ok((model, header.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, CheckpointMeta), ModelError> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes)
}

fn mlp_from_flat(spec: MlpSpec, values: &[f64], cursor: &mut usize) -> Mlp {
    let mut weights = Vec::with_capacity((spec.layers.len() - 1) * 2);
    for pair in spec.layers.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = &values[*cursor..*cursor + fan_in * fan_out];
        *cursor += fan_in * fan_out;
        weights.push(Tensor::matrix(fan_in, fan_out, w.to_vec()).expect("weight shape"));
        let b = &values[*cursor..*cursor + fan_out];
        *cursor += fan_out;
        weights.push(Tensor::vector(b));
    }
    Mlp { spec, weights }
}
