//! Reproducible data sources.
//!
//! The workhorse is a procedural glyph dataset: each 16×16 image renders a
//! closed outline shape controlled by five named attributes, and the class
//! ("small" vs "large") depends only on the `size` attribute. The binary
//! `marker` attribute — a short horizontal stroke across the glyph's upper
//! third — is sampled with different frequency per class, injecting a
//! spurious class–attribute correlation with known ground truth.
//!
//! A second path ingests real MNIST-style IDX files.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pgm;
use crate::tensor::Tensor;

pub const ATTRIBUTE_NAMES: [&str; 5] = ["size", "thickness", "slant", "curvature", "marker"];
pub const CLASS_NAMES: [&str; 2] = ["small", "large"];
pub const MARKER_INDEX: usize = 4;
pub const SIZE_INDEX: usize = 0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("idx {path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    IdxBadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("idx: image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },
    #[error("idx {path}: truncated (expected {expected} bytes, got {got})")]
    IdxTruncated {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("manifest line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },
    #[error("pgm: {0}")]
    Pgm(#[from] pgm::PgmError),
}

/// The five glyph attributes, each in `[0,1]`; `marker` is drawn in
/// `{0,1}` by the sampler but the renderer accepts fractional values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphAttributes {
    pub size: f64,
    pub thickness: f64,
    pub slant: f64,
    pub curvature: f64,
    pub marker: f64,
}

impl GlyphAttributes {
    pub fn to_vec(self) -> Vec<f64> {
        vec![
            self.size,
            self.thickness,
            self.slant,
            self.curvature,
            self.marker,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        GlyphAttributes {
            size: v[0],
            thickness: v[1],
            slant: v[2],
            curvature: v[3],
            marker: v[4],
        }
    }

    /// Class implied by the size rule: "large" iff `size > 0.5`.
    pub fn class(&self) -> usize {
        usize::from(self.size > 0.5)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlyphDatasetConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub image_size: usize,
    /// P(marker = 1 | class = large)
    pub p_marker_given_large: f64,
    /// P(marker = 1 | class = small)
    pub p_marker_given_small: f64,
}

impl Default for GlyphDatasetConfig {
    fn default() -> Self {
        GlyphDatasetConfig {
            n_samples: 10_000,
            seed: 0,
            image_size: 16,
            p_marker_given_large: 0.70,
            p_marker_given_small: 0.10,
        }
    }
}

impl GlyphDatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_samples == 0 {
            return Err(DataError::InvalidConfig("n_samples must be positive".into()));
        }
        if self.image_size < 8 {
            return Err(DataError::InvalidConfig(format!(
                "image_size {} too small",
                self.image_size
            )));
        }
        for (name, p) in [
            ("p_marker_given_large", self.p_marker_given_large),
            ("p_marker_given_small", self.p_marker_given_small),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::InvalidConfig(format!(
                    "{name} = {p} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// One sample: flat image (pixels in `[0,1]`), class label, and attribute
/// annotations when the source provides them (glyphs yes, IDX no).
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Tensor,
    pub label: usize,
    pub attributes: Option<Vec<f64>>,
}

/// A loaded dataset with its geometry and naming metadata.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub image_rows: usize,
    pub image_cols: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub attribute_names: Vec<String>,
}

impl Dataset {
    pub fn image_dim(&self) -> usize {
        self.image_rows * self.image_cols
    }

    /// First `n_train` items and the rest, as borrowed slices.
    pub fn split(&self, n_train: usize) -> (&[LabeledImage], &[LabeledImage]) {
        let n = n_train.min(self.items.len());
        self.items.split_at(n)
    }
}

// ── glyph rendering ─────────────────────────────────────────────────

/// Superellipse exponent: curvature 1 → ellipse, 0 → boxy.
fn shape_exponent(curvature: f64) -> f64 {
    2.0 + 8.0 * (1.0 - curvature)
}

struct Geometry {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    shear: f64,
    exponent: f64,
    band: f64,
    marker_y: f64,
    marker_half_h: f64,
    marker_half_w: f64,
}

impl Geometry {
    fn from_attrs(a: &GlyphAttributes) -> Self {
        let rx = 0.16 + 0.24 * a.size;
        let ry = 0.19 + 0.23 * a.size;
        Geometry {
            cx: 0.5,
            cy: 0.5,
            rx,
            ry,
            shear: 0.5 * (a.slant - 0.5),
            exponent: shape_exponent(a.curvature),
            band: 0.10 + 0.22 * a.thickness,
            marker_y: 0.5 - 0.62 * ry,
            marker_half_h: 0.045,
            marker_half_w: rx + 0.06,
        }
    }

    /// Radial coordinate of a point: 1 on the outline, <1 inside.
    fn radial(&self, x: f64, y: f64) -> f64 {
        let yc = y - self.cy;
        let xc = (x - self.cx) - self.shear * yc;
        ((xc / self.rx).abs().powf(self.exponent) + (yc / self.ry).abs().powf(self.exponent))
            .powf(1.0 / self.exponent)
    }

    fn ring_hit(&self, x: f64, y: f64) -> bool {
        (self.radial(x, y) - 1.0).abs() <= self.band
    }

    fn marker_hit(&self, x: f64, y: f64) -> bool {
        (y - self.marker_y).abs() <= self.marker_half_h
            && (x - self.cx).abs() <= self.marker_half_w
    }
}

const SUBSAMPLES: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];

/// Rasterizes one glyph to a flat `[size²]` tensor with pixels in `[0,1]`.
/// Deterministic: identical attributes give bit-identical pixels. The
/// marker stroke only ever touches its own rows, so toggling `marker`
/// leaves every other pixel untouched.
pub fn render_glyph(attrs: &GlyphAttributes, image_size: usize) -> Tensor {
    let geo = Geometry::from_attrs(attrs);
    let s = image_size as f64;
    let marker_level = attrs.marker.clamp(0.0, 1.0);
    let mut pixels = vec![0.0f64; image_size * image_size];
    for r in 0..image_size {
        for c in 0..image_size {
            let mut ring = 0u32;
            let mut marker = 0u32;
            for dy in SUBSAMPLES {
                for dx in SUBSAMPLES {
                    let x = (c as f64 + 0.5 + dx) / s;
                    let y = (r as f64 + 0.5 + dy) / s;
                    if geo.ring_hit(x, y) {
                        ring += 1;
                    }
                    if geo.marker_hit(x, y) {
                        marker += 1;
                    }
                }
            }
            let ring_v = ring as f64 / 9.0;
            let marker_v = marker_level * marker as f64 / 9.0;
            pixels[r * image_size + c] = ring_v.max(marker_v);
        }
    }
    Tensor::new(vec![image_size * image_size], pixels).expect("glyph shape")
}

/// Rows a marker stroke can touch for these attributes, for locality checks.
pub fn marker_rows(attrs: &GlyphAttributes, image_size: usize) -> Vec<usize> {
    let geo = Geometry::from_attrs(attrs);
    let s = image_size as f64;
    (0..image_size)
        .filter(|&r| {
            SUBSAMPLES.iter().any(|dy| {
                let y = (r as f64 + 0.5 + dy) / s;
                (y - geo.marker_y).abs() <= geo.marker_half_h
            })
        })
        .collect()
}

/// Draws a seeded, bias-injected glyph dataset. Non-marker attributes are
/// uniform on `[0,1]`; `marker` is Bernoulli conditioned on the class the
/// sampled size implies, per the config's bias table.
pub fn sample_dataset(config: &GlyphDatasetConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut items = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let size: f64 = rng.gen();
        let thickness: f64 = rng.gen();
        let slant: f64 = rng.gen();
        let curvature: f64 = rng.gen();
        let class = usize::from(size > 0.5);
        let p_marker = if class == 1 {
            self::marker_probability(config, 1)
        } else {
            self::marker_probability(config, 0)
        };
        let marker = if rng.gen::<f64>() < p_marker { 1.0 } else { 0.0 };
        let attrs = GlyphAttributes {
            size,
            thickness,
            slant,
            curvature,
            marker,
        };
        items.push(LabeledImage {
            image: render_glyph(&attrs, config.image_size),
            label: class,
            attributes: Some(attrs.to_vec()),
        });
    }
    Ok(Dataset {
        items,
        image_rows: config.image_size,
        image_cols: config.image_size,
        num_classes: 2,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        attribute_names: ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(),
    })
}

fn marker_probability(config: &GlyphDatasetConfig, class: usize) -> f64 {
    if class == 1 {
        config.p_marker_given_large
    } else {
        config.p_marker_given_small
    }
}

// ── IDX ingestion ───────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], pos: usize, path: &str) -> Result<u32, DataError> {
    if pos + 4 > bytes.len() {
        return Err(DataError::IdxTruncated {
            path: path.to_string(),
            expected: pos + 4,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[pos],
        bytes[pos + 1],
        bytes[pos + 2],
        bytes[pos + 3],
    ]))
}

/// Loads an MNIST-style IDX image/label pair. Pixels are scaled to `[0,1]`
/// by dividing by 255; header fields are big-endian.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();

    let img_magic = read_u32_be(&img_bytes, 0, &img_name)?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(DataError::IdxBadMagic {
            path: img_name,
            found: img_magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let lbl_magic = read_u32_be(&lbl_bytes, 0, &lbl_name)?;
    if lbl_magic != IDX_LABELS_MAGIC {
        return Err(DataError::IdxBadMagic {
            path: lbl_name,
            found: lbl_magic,
            expected: IDX_LABELS_MAGIC,
        });
    }

    let n_images = read_u32_be(&img_bytes, 4, &img_name)? as usize;
    let rows = read_u32_be(&img_bytes, 8, &img_name)? as usize;
    let cols = read_u32_be(&img_bytes, 12, &img_name)? as usize;
    let n_labels = read_u32_be(&lbl_bytes, 4, &lbl_name)? as usize;
    if n_images != n_labels {
        return Err(DataError::IdxCountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let pixel_bytes = n_images * rows * cols;
    if img_bytes.len() < 16 + pixel_bytes {
        return Err(DataError::IdxTruncated {
            path: img_name,
            expected: 16 + pixel_bytes,
            got: img_bytes.len(),
        });
    }
    if lbl_bytes.len() < 8 + n_labels {
        return Err(DataError::IdxTruncated {
            path: lbl_name,
            expected: 8 + n_labels,
            got: lbl_bytes.len(),
        });
    }

    let dim = rows * cols;
    let mut items = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let start = 16 + i * dim;
        let pixels: Vec<f64> = img_bytes[start..start + dim]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        items.push(LabeledImage {
            image: Tensor::new(vec![dim], pixels).expect("idx image shape"),
            label: lbl_bytes[8 + i] as usize,
            attributes: None,
        });
    }
    Ok(Dataset {
        items,
        image_rows: rows,
        image_cols: cols,
        num_classes: 10,
        class_names: (0..10).map(|d| d.to_string()).collect(),
        attribute_names: Vec::new(),
    })
}

// ── export ──────────────────────────────────────────────────────────

/// One manifest line, serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: usize,
    pub class: String,
    pub attributes: Vec<f64>,
}

/// Writes every image as a P5 graymap under `dir/images/` plus a
/// one-record-per-line manifest at `dir/manifest.jsonl`.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.jsonl"))?;
    for (i, item) in dataset.items.iter().enumerate() {
        let file = format!("images/img_{i:05}.pgm");
        pgm::write_file(
            &dir.join(&file),
            item.image.data(),
            dataset.image_rows,
            dataset.image_cols,
        )?;
        let entry = ManifestEntry {
            file,
            label: item.label,
            class: dataset
                .class_names
                .get(item.label)
                .cloned()
                .unwrap_or_else(|| item.label.to_string()),
            attributes: item.attributes.clone().unwrap_or_default(),
        };
        let line = serde_json::to_string(&entry).expect("manifest entry serializes");
        writeln!(manifest, "{line}")?;
    }
    Ok(())
}

/// Parses a manifest written by [`export_dataset`].
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| DataError::ManifestParse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        entries.push(entry);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(t: &Tensor) -> Vec<u64> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn render_is_deterministic() {
        let attrs = GlyphAttributes {
            size: 0.7,
            thickness: 0.4,
            slant: 0.2,
            curvature: 0.9,
            marker: 1.0,
        };
        let a = render_glyph(&attrs, 16);
        let b = render_glyph(&attrs, 16);
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn marker_only_touches_its_rows() {
        let base = GlyphAttributes {
            size: 0.6,
            thickness: 0.5,
            slant: 0.65,
            curvature: 0.3,
            marker: 0.0,
        };
        let with = GlyphAttributes { marker: 1.0, ..base };
        let plain = render_glyph(&base, 16);
        let marked = render_glyph(&with, 16);
        let allowed = marker_rows(&base, 16);
        assert!(!allowed.is_empty());
        let mut changed_rows = Vec::new();
        for r in 0..16 {
            for c in 0..16 {
                if plain.data()[r * 16 + c] != marked.data()[r * 16 + c] {
                    changed_rows.push(r);
                    break;
                }
            }
        }
        assert!(!changed_rows.is_empty(), "marker must light pixels");
        for r in &changed_rows {
            assert!(allowed.contains(r), "row {r} outside marker band {allowed:?}");
        }
    }

    #[test]
    fn minimal_glyph_still_visible() {
        let attrs = GlyphAttributes {
            size: 0.0,
            thickness: 0.0,
            slant: 0.5,
            curvature: 0.5,
            marker: 0.0,
        };
        let img = render_glyph(&attrs, 16);
        assert!(img.data().iter().any(|&v| v > 0.0));
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn sampling_is_seeded_and_reproducible() {
        let config = GlyphDatasetConfig {
            n_samples: 50,
            ..GlyphDatasetConfig::default()
        };
        let a = sample_dataset(&config).unwrap();
        let b = sample_dataset(&config).unwrap();
        for (x, y) in a.items.iter().zip(b.items.iter()) {
            assert_eq!(x.label, y.label);
            assert_eq!(bits(&x.image), bits(&y.image));
        }
    }

    #[test]
    fn bias_table_and_balance_recovered_at_10k() {
        let config = GlyphDatasetConfig::default();
        let data = sample_dataset(&config).unwrap();
        assert_eq!(data.items.len(), 10_000);

        let mut large = (0usize, 0usize);
        let mut small = (0usize, 0usize);
        for item in &data.items {
            let marker = item.attributes.as_ref().unwrap()[MARKER_INDEX] >= 0.5;
            if item.label == 1 {
                large.0 += 1;
                large.1 += usize::from(marker);
            } else {
                small.0 += 1;
                small.1 += usize::from(marker);
            }
        }
        let p_large = large.1 as f64 / large.0 as f64;
        let p_small = small.1 as f64 / small.0 as f64;
        assert!((p_large - 0.70).abs() <= 0.03, "P(marker|large) = {p_large}");
        assert!((p_small - 0.10).abs() <= 0.03, "P(marker|small) = {p_small}");

        let balance = large.0 as f64 / data.items.len() as f64;
        assert!((balance - 0.5).abs() <= 0.03, "class balance = {balance}");
    }

    #[test]
    fn rejects_bad_bias_probability() {
        let config = GlyphDatasetConfig {
            p_marker_given_large: 1.2,
            ..GlyphDatasetConfig::default()
        };
        assert!(matches!(
            sample_dataset(&config),
            Err(DataError::InvalidConfig(_))
        ));
    }

    // IDX fixture bytes assembled by hand: 2 images of 2×3, labels 7 and 2.
    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes()); // count
        images.extend_from_slice(&2u32.to_be_bytes()); // rows
        images.extend_from_slice(&3u32.to_be_bytes()); // cols
        images.extend_from_slice(&[0, 51, 102, 153, 204, 255]); // image 0
        images.extend_from_slice(&[255, 0, 255, 0, 255, 0]); // image 1
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[7, 2]);
        (images, labels)
    }

    #[test]
    fn idx_roundtrip_hand_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = idx_fixture();
        let ip = dir.path().join("images.idx");
        let lp = dir.path().join("labels.idx");
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, &labels).unwrap();

        let data = load_idx(&ip, &lp).unwrap();
        assert_eq!(data.items.len(), 2);
        assert_eq!(data.image_rows, 2);
        assert_eq!(data.image_cols, 3);
        assert_eq!(data.items[0].label, 7);
        assert_eq!(data.items[1].label, 2);
        let expect: Vec<f64> = [0u8, 51, 102, 153, 204, 255]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        assert_eq!(data.items[0].image.data(), expect.as_slice());
    }

    #[test]
    fn idx_count_mismatch_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (images, mut labels) = idx_fixture();
        labels[7] = 3; // count 3 vs 2 images
        let ip = dir.path().join("images.idx");
        let lp = dir.path().join("labels.idx");
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, &labels).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::IdxCountMismatch { images: 2, labels: 3 })
        ));

        let mut bad = images.clone();
        bad[3] = 0x99;
        fs::write(&ip, &bad).unwrap();
        let (_, labels_ok) = idx_fixture();
        fs::write(&lp, &labels_ok).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::IdxBadMagic { .. })));
    }

    #[test]
    fn export_manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let config = GlyphDatasetConfig {
            n_samples: 8,
            ..GlyphDatasetConfig::default()
        };
        let data = sample_dataset(&config).unwrap();
        export_dataset(&data, dir.path()).unwrap();
        let entries = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(entries.len(), 8);
        for (entry, item) in entries.iter().zip(data.items.iter()) {
            assert_eq!(entry.label, item.label);
            assert_eq!(&entry.attributes, item.attributes.as_ref().unwrap());
            let img = pgm::read_file(&dir.path().join(&entry.file)).unwrap();
            assert_eq!(img.numel(), data.image_dim());
        }
    }
}
