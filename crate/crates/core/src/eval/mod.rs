//! Grasp extraction from parameter maps and the rectangle success metric.

mod extract;
mod rect;
mod smooth;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use extract::{
    extract_batch, extract_grasp, ExtractOptions, Smoothing, REFERENCE_INPUT, REFERENCE_SIGMA,
};
pub use rect::{
    angle_distance, best_match, fold_radians, grasp_success, rect_iou, GraspRectangle, Match,
    ANGLE_THRESHOLD_DEG, IOU_THRESHOLD,
};
pub use smooth::{gaussian_kernel, gaussian_smooth};

use crate::dataset::{fit_to_input, normalize_rgb, SceneSample};
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: String,
    pub success: bool,
    pub iou: f64,
    /// Degrees to the matched ground truth.
    pub angle_error: f64,
}

impl EvalRow {
    /// Scores `pred` against the annotations of `sample`.
    pub fn score(sample: &SceneSample, pred: &GraspRectangle) -> Self {
        let m = best_match(pred, &sample.grasp_rectangles()).unwrap_or(Match {
            success: false,
            iou: 0.0,
            angle_error: 90.0,
        });
        Self {
            sample_id: sample.scene_id.clone(),
            success: m.success,
            iou: m.iou,
            angle_error: m.angle_error,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRate {
    pub fold: usize,
    pub samples: usize,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub rows: Vec<EvalRow>,
    /// Filled when the report combines several folds.
    pub folds: Vec<FoldRate>,
}

impl EvalReport {
    pub fn new(label: impl Into<String>, rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract(
                "cannot evaluate an empty sample set".into(),
            ));
        }
        Ok(Self {
            label: label.into(),
            rows,
            folds: Vec::new(),
        })
    }

    pub fn successes(&self) -> usize {
        self.rows.iter().filter(|r| r.success).count()
    }

    /// Percentage of successful samples.
    pub fn success_rate(&self) -> f64 {
        100.0 * self.successes() as f64 / self.rows.len() as f64
    }

    /// Concatenates per-fold reports and records each fold's rate.
    pub fn combine_folds(
        label: impl Into<String>,
        reports: &[(usize, EvalReport)],
    ) -> Result<Self> {
        let rows = reports
            .iter()
            .flat_map(|(_, r)| r.rows.iter().cloned())
            .collect();
        let mut out = Self::new(label, rows)?;
        out.folds = reports
            .iter()
            .map(|(fold, r)| FoldRate {
                fold: *fold,
                samples: r.rows.len(),
                success_rate: r.success_rate(),
            })
            .collect();
        Ok(out)
    }

    /// Mean and sample standard deviation of the per-fold rates.
    pub fn fold_statistics(&self) -> Option<(f64, f64)> {
        let n = self.folds.len();
        if n == 0 {
            return None;
        }
        let mean = self.folds.iter().map(|f| f.success_rate).sum::<f64>() / n as f64;
        let var = if n > 1 {
            self.folds
                .iter()
                .map(|f| (f.success_rate - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64
        } else {
            0.0
        };
        Some((mean, var.sqrt()))
    }

    /// Delimited per-sample table followed by a `#`-prefixed summary block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# report={}", self.label);
        s.push_str("sample_id,success,iou,angle_error_deg\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.4}",
                r.sample_id,
                u8::from(r.success),
                r.iou,
                r.angle_error
            );
        }
        let _ = writeln!(s, "# samples={}", self.rows.len());
        let _ = writeln!(s, "# successes={}", self.successes());
        let _ = writeln!(s, "# success_rate={:.4}", self.success_rate());
        for f in &self.folds {
            let _ = writeln!(
                s,
                "# fold={} samples={} success_rate={:.4}",
                f.fold, f.samples, f.success_rate
            );
        }
        if let Some((mean, std)) = self.fold_statistics() {
            let _ = writeln!(
                s,
                "# fold_mean={mean:.4} fold_std={std:.4} (sample std over folds)"
            );
        }
        s
    }
}

/// The scene cropped and resized to a square `input_size` frame, unchanged
/// if it already is one.
pub fn prepare_sample(sample: &SceneSample, input_size: usize) -> SceneSample {
    if sample.width() == input_size && sample.height() == input_size {
        sample.clone()
    } else {
        fit_to_input(sample, input_size)
    }
}

/// Predicted grasps for scenes already at the model's input size.
pub fn predict<T: Float>(
    model: &Model<T>,
    samples: &[SceneSample],
    options: &ExtractOptions,
) -> Result<Vec<GraspRectangle>> {
    const BATCH: usize = 8;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(BATCH) {
        let inputs: Vec<Tensor<T>> = chunk.iter().map(|s| normalize_rgb(&s.rgb).cast()).collect();
        let maps = model.forward(&Tensor::stack(&inputs)?)?;
        out.extend(extract_batch(&maps, options)?);
    }
    Ok(out)
}

/// Forward, extract and score every sample.
pub fn evaluate_model<T: Float>(
    model: &Model<T>,
    samples: &[SceneSample],
    options: &ExtractOptions,
    label: &str,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Contract(
            "cannot evaluate an empty sample set".into(),
        ));
    }
    let size = model.config().input_size;
    let prepared: Vec<SceneSample> = samples.iter().map(|s| prepare_sample(s, size)).collect();
    let preds = predict(model, &prepared, options)?;
    let rows = prepared
        .iter()
        .zip(&preds)
        .map(|(s, p)| EvalRow::score(s, p))
        .collect();
    EvalReport::new(label, rows)
}
