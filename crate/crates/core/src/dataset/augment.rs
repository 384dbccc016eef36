//! Random crop and zoom shared by images and annotations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GraspAnnotation, Interpolation, SceneSample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Side of the square output.
    pub output_size: usize,
    /// Crop window side as a fraction of the shorter image side.
    pub crop_min: f64,
    pub crop_max: f64,
    /// Zoom factors; values above 1 shrink the window further.
    pub zoom_min: f64,
    pub zoom_max: f64,
    /// Draws tried before falling back to the centred crop.
    pub max_attempts: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            output_size: 300,
            crop_min: 0.75,
            crop_max: 1.0,
            zoom_min: 0.9,
            zoom_max: 1.1,
            max_attempts: 10,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.output_size > 0
            && 0.0 < self.crop_min
            && self.crop_min <= self.crop_max
            && self.crop_max <= 1.0
            && 0.0 < self.zoom_min
            && self.zoom_min <= self.zoom_max;
        if !ok {
            return Err(Error::Config(format!(
                "invalid augmentation ranges {self:?}"
            )));
        }
        Ok(())
    }
}

/// Crops the square window of side `side` at `(x0, y0)` and resizes it to
/// `out x out`. Grasps are mapped with the same similarity transform and
/// those whose centre leaves the frame are dropped.
pub fn crop_resize(sample: &SceneSample, x0: f64, y0: f64, side: f64, out: usize) -> SceneSample {
    let scale = out as f64 / side;
    let grasps = sample
        .grasps
        .iter()
        .map(|g| GraspAnnotation {
            x: (g.x - x0) * scale,
            y: (g.y - y0) * scale,
            theta: g.theta,
            opening: g.opening * scale,
            jaw_size: g.jaw_size * scale,
        })
        .filter(|g| g.in_bounds(out, out))
        .collect();
    SceneSample {
        scene_id: sample.scene_id.clone(),
        object_id: sample.object_id.clone(),
        rgb: sample
            .rgb
            .resample_square(x0, y0, side, out, Interpolation::Bilinear),
        depth: sample
            .depth
            .resample_square(x0, y0, side, out, Interpolation::Bilinear),
        mask: sample
            .mask
            .resample_square(x0, y0, side, out, Interpolation::Nearest),
        grasps,
    }
}

/// Centred crop of the largest square, resized to `out`.
pub fn fit_to_input(sample: &SceneSample, out: usize) -> SceneSample {
    let (w, h) = (sample.width() as f64, sample.height() as f64);
    let side = w.min(h);
    crop_resize(sample, (w - side) / 2.0, (h - side) / 2.0, side, out)
}

/// Random crop plus zoom. Draws that keep no grasp are retried, then the
/// centred crop is used.
pub fn augment<R: Rng + ?Sized>(
    sample: &SceneSample,
    rng: &mut R,
    params: &AugmentParams,
) -> Result<SceneSample> {
    params.validate()?;
    let (w, h) = (sample.width() as f64, sample.height() as f64);
    let short = w.min(h);
    for _ in 0..params.max_attempts {
        let crop = rng.random_range(params.crop_min..=params.crop_max);
        let zoom = rng.random_range(params.zoom_min..=params.zoom_max);
        let side = (short * crop / zoom).min(short);
        let x0 = rng.random_range(0.0..=w - side);
        let y0 = rng.random_range(0.0..=h - side);
        let out = crop_resize(sample, x0, y0, side, params.output_size);
        if !out.grasps.is_empty() {
            return Ok(out);
        }
    }
    Ok(fit_to_input(sample, params.output_size))
}
