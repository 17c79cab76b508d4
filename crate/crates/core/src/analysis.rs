//! Turning engine output into findings: attribute-change rankings, dataset
//! bias reports, trajectory montages, and run summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledImage;
use crate::engine::{MinimalChangeResult, SweepEntry, Trajectory};
use crate::pgm;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("dataset items carry no attribute annotations")]
    MissingAttributes,
    #[error("class filter matched no items")]
    EmptyClassFilter,
    #[error("pgm: {0}")]
    Pgm(#[from] pgm::PgmError),
}

// ── attribute-change ranking ────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDelta {
    pub index: usize,
    pub name: String,
    /// Signed change `A'_final − A_initial`, in raw attribute units.
    pub delta: f64,
}

impl RankedDelta {
    pub fn magnitude(&self) -> f64 {
        self.delta.abs()
    }
}

/// Top-k most changed attributes, largest |delta| first, ties broken by
/// attribute index ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDeltaRanking {
    pub entries: Vec<RankedDelta>,
}

pub fn rank_attribute_changes(
    initial: &[f64],
    fin: &[f64],
    names: &[String],
    k: usize,
) -> Result<AttributeDeltaRanking, AnalysisError> {
    if initial.len() != fin.len() || initial.len() != names.len() {
        return Err(AnalysisError::LengthMismatch(format!(
            "initial {}, final {}, names {}",
            initial.len(),
            fin.len(),
            names.len()
        )));
    }
    if k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    let mut entries: Vec<RankedDelta> = initial
        .iter()
        .zip(fin.iter())
        .enumerate()
        .map(|(index, (&a, &b))| RankedDelta {
            index,
            name: names[index].clone(),
            delta: b - a,
        })
        .collect();
    entries.sort_by(|x, y| {
        y.magnitude()
            .partial_cmp(&x.magnitude())
            .expect("finite deltas")
            .then(x.index.cmp(&y.index))
    });
    entries.truncate(k.min(names.len()));
    Ok(AttributeDeltaRanking { entries })
}

// ── bias report ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasClassRow {
    pub class: usize,
    pub class_name: String,
    pub count: usize,
    /// Fraction of this class's items with each attribute ≥ the threshold,
    /// aligned with `BiasReport::attribute_names`.
    pub fractions: Vec<f64>,
}

/// Per-class conditional attribute frequencies, the table behind the
/// bias-discovery finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub attribute_names: Vec<String>,
    pub threshold: f64,
    pub classes: Vec<BiasClassRow>,
}

pub const BIAS_THRESHOLD: f64 = 0.5;

/// Counts thresholded attribute presence per class. Only classes present
/// in the data appear, in ascending label order.
pub fn bias_report(
    items: &[LabeledImage],
    attribute_names: &[String],
    class_names: &[String],
) -> Result<BiasReport, AnalysisError> {
    let n_attr = attribute_names.len();
    let mut per_class: std::collections::BTreeMap<usize, (usize, Vec<usize>)> =
        std::collections::BTreeMap::new();
    for item in items {
        let attrs = item
            .attributes
            .as_ref()
            .ok_or(AnalysisError::MissingAttributes)?;
        if attrs.len() != n_attr {
            return Err(AnalysisError::LengthMismatch(format!(
                "item has {} attributes, names list {n_attr}",
                attrs.len()
            )));
        }
        let entry = per_class
            .entry(item.label)
            .or_insert_with(|| (0, vec![0; n_attr]));
        entry.0 += 1;
        for (a, &v) in attrs.iter().enumerate() {
            if v >= BIAS_THRESHOLD {
                entry.1[a] += 1;
            }
        }
    }
    let classes = per_class
        .into_iter()
        .map(|(class, (count, hits))| BiasClassRow {
            class,
            class_name: class_names
                .get(class)
                .cloned()
                .unwrap_or_else(|| class.to_string()),
            count,
            fractions: hits.iter().map(|&h| h as f64 / count as f64).collect(),
        })
        .collect();
    Ok(BiasReport {
        attribute_names: attribute_names.to_vec(),
        threshold: BIAS_THRESHOLD,
        classes,
    })
}

/// CSV rendering with columns exactly `class, attribute, fraction, count`.
pub fn bias_report_csv(report: &BiasReport) -> String {
    let mut out = String::from("class,attribute,fraction,count\n");
    for row in &report.classes {
        for (a, name) in report.attribute_names.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.class_name, name, row.fractions[a], row.count
            ));
        }
    }
    out
}

// ── trajectory montage ──────────────────────────────────────────────

/// Frame indices a montage shows: every stride-th step plus the final
/// step, deduplicated.
pub fn montage_frames(n_steps: usize, stride: usize) -> Result<Vec<usize>, AnalysisError> {
    if stride == 0 {
        return Err(AnalysisError::ZeroStride);
    }
    if n_steps == 0 {
        return Err(AnalysisError::EmptyTrajectory);
    }
    let mut frames: Vec<usize> = (0..n_steps).step_by(stride).collect();
    let last = n_steps - 1;
    if *frames.last().expect("non-empty") != last {
        frames.push(last);
    }
    Ok(frames)
}

/// Composes the selected steps' images into a single-row P5 montage with
/// one-pixel black separator columns, byte-deterministic for a fixed
/// (trajectory, stride).
pub fn export_trajectory_montage(
    trajectory: &Trajectory,
    stride: usize,
    path: &Path,
) -> Result<(), AnalysisError> {
    let bytes = montage_bytes(trajectory, stride)?;
    std::fs::write(path, bytes).map_err(pgm::PgmError::Io)?;
    Ok(())
}

pub fn montage_bytes(trajectory: &Trajectory, stride: usize) -> Result<Vec<u8>, AnalysisError> {
    let frames = montage_frames(trajectory.steps.len(), stride)?;
    let (rows, cols) = (trajectory.image_rows, trajectory.image_cols);
    let panels = frames.len();
    let out_cols = panels * cols + (panels - 1);
    let mut pixels = vec![0.0f64; rows * out_cols];
    for (p, &frame) in frames.iter().enumerate() {
        let image = &trajectory.steps[frame].image;
        let x0 = p * (cols + 1);
        for r in 0..rows {
            for c in 0..cols {
                pixels[r * out_cols + x0 + c] = image.data()[r * cols + c];
            }
        }
    }
    Ok(pgm::encode(&pixels, rows, out_cols))
}

// ── run summaries ───────────────────────────────────────────────────

/// Schema-stable summary record for one engine run. Serialized as a single
/// JSON object; round-trips through serde.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: String,
    pub outcome: String,
    pub steps_used: usize,
    pub final_probs: Vec<f64>,
    pub predicted_class: usize,
    pub delta: f64,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<AttributeDeltaRanking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepEntry>>,
}

/// Summary of a plain criticism/prototype run. Pass attribute names to get
/// the top-k changed-attribute ranking (attribute-space runs only).
pub fn summarize_trajectory(
    trajectory: &Trajectory,
    lambda: f64,
    attribute_names: Option<&[String]>,
    k: usize,
) -> Result<RunSummary, AnalysisError> {
    if trajectory.steps.is_empty() {
        return Err(AnalysisError::EmptyTrajectory);
    }
    let first = &trajectory.steps[0];
    let last = &trajectory.result;
    let ranking = match attribute_names {
        Some(names) => Some(rank_attribute_changes(
            first.variables.data(),
            last.variables.data(),
            names,
            k,
        )?),
        None => None,
    };
    Ok(RunSummary {
        kind: "trajectory".into(),
        outcome: trajectory.outcome.to_string(),
        steps_used: trajectory.steps_used(),
        final_probs: last.probs.data().to_vec(),
        predicted_class: last.probs.argmax(),
        delta: last.dist_term,
        lambda,
        ranking,
        sweep: None,
    })
}

/// Summary of a minimal-change search, embedding the λ sweep log.
pub fn summarize_minimal_change(
    result: &MinimalChangeResult,
    attribute_names: Option<&[String]>,
    k: usize,
) -> Result<RunSummary, AnalysisError> {
    let mut summary = summarize_trajectory(&result.trajectory, result.lambda_star, attribute_names, k)?;
    summary.kind = "minimal_change".into();
    summary.delta = result.delta_star;
    summary.sweep = Some(result.sweep.clone());
    Ok(summary)
}

/// Summary of a bisection that never found a flip: the sweep log is the
/// finding.
pub fn summarize_failed_bisect(sweep: &[SweepEntry]) -> RunSummary {
    RunSummary {
        kind: "minimal_change".into(),
        outcome: "no_flip".into(),
        steps_used: 0,
        final_probs: Vec::new(),
        predicted_class: 0,
        delta: f64::NAN,
        lambda: f64::NAN,
        ranking: None,
        sweep: Some(sweep.to_vec()),
    }
}
