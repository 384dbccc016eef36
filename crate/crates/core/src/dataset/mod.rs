//! Scenes, annotations and training targets.

mod augment;
mod folds;
mod image;
mod jacquard;
mod raster;
mod synth;

use serde::{Deserialize, Serialize};

pub use augment::{augment, crop_resize, fit_to_input, AugmentParams};
pub use folds::{kfold_split, Fold};
pub use image::{Image, Interpolation};
pub use jacquard::{
    format_grasps, load_dataset, parse_grasps, parse_jacquard_scene, read_manifest, read_rgb,
    write_gray_png, write_manifest, write_scene, ScenePaths, MANIFEST_FILE,
};
pub use raster::{
    ground_truth, normalize_depth, normalize_rgb, rasterize_ground_truth, GroundTruthMaps,
    MAX_OPENING,
};
pub use synth::{
    random_pose, render_view, synth_dataset, synth_object, synth_scene, Pose, ShapeFamily,
    SynthObject, SynthSpec,
};

use crate::error::{Error, Result};
use crate::eval::GraspRectangle;

/// One annotated antipodal grasp in image coordinates (x right, y down).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspAnnotation {
    pub x: f64,
    pub y: f64,
    /// Angle of the closing axis in degrees, counter-clockwise as displayed,
    /// in `(-90, 90]`.
    pub theta: f64,
    /// Jaw opening in pixels.
    pub opening: f64,
    /// Jaw size in pixels, i.e. the rectangle extent across the closing axis.
    pub jaw_size: f64,
}

impl GraspAnnotation {
    pub fn new(x: f64, y: f64, theta: f64, opening: f64, jaw_size: f64) -> Self {
        Self {
            x,
            y,
            theta: fold_degrees(theta),
            opening,
            jaw_size,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let finite = [self.x, self.y, self.theta, self.opening, self.jaw_size]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.opening <= 0.0 || self.jaw_size <= 0.0 {
            return Err(Error::Contract(format!("invalid grasp {self:?}")));
        }
        if !self.in_bounds(width, height) {
            return Err(Error::Contract(format!(
                "grasp centre ({}, {}) outside a {width}x{height} image",
                self.x, self.y
            )));
        }
        Ok(())
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.x <= (width - 1) as f64
            && self.y <= (height - 1) as f64
    }

    pub fn rectangle(&self) -> GraspRectangle {
        GraspRectangle::new(
            (self.x, self.y),
            self.theta.to_radians(),
            self.opening,
            self.jaw_size,
        )
    }
}

/// Folds an angle in degrees into `(-90, 90]`.
pub fn fold_degrees(theta: f64) -> f64 {
    let mut t = theta % 180.0;
    if t > 90.0 {
        t -= 180.0;
    } else if t <= -90.0 {
        t += 180.0;
    }
    t
}

/// One viewpoint of one object.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub scene_id: String,
    pub object_id: String,
    /// Three channels with 8-bit values stored as `f32` in `[0, 255]`.
    pub rgb: Image,
    pub depth: Image,
    /// One channel, 1 on the object and 0 on the background.
    pub mask: Image,
    pub grasps: Vec<GraspAnnotation>,
}

impl SceneSample {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = (self.rgb.width(), self.rgb.height());
        if self.rgb.channels() != 3
            || (self.depth.width(), self.depth.height()) != dims
            || (self.mask.width(), self.mask.height()) != dims
        {
            return Err(Error::Contract(format!(
                "scene {} images disagree: rgb {}x{}x{}, depth {}x{}, mask {}x{}",
                self.scene_id,
                self.rgb.channels(),
                dims.0,
                dims.1,
                self.depth.width(),
                self.depth.height(),
                self.mask.width(),
                self.mask.height()
            )));
        }
        for g in &self.grasps {
            g.validate(dims.0, dims.1)?;
        }
        Ok(())
    }

    pub fn grasp_rectangles(&self) -> Vec<GraspRectangle> {
        self.grasps.iter().map(GraspAnnotation::rectangle).collect()
    }
}
