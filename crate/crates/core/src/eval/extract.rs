use serde::{Deserialize, Serialize};

use super::rect::GraspRectangle;
use super::smooth::{gaussian_kernel, gaussian_smooth, reflect};
use crate::dataset::MAX_OPENING;
use crate::error::{Error, Result};
use crate::network::ParameterMaps;
use crate::tensor::Float;

/// How the width and angle maps are filtered before they are read at the
/// grasp centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// Plain Gaussian of the width map and of the angle map's axial
    /// unit vectors.
    Plain,
    /// Same kernel, with each pixel weighted by its predicted quality
    /// clamped to `[0, 1]`.
    QualityWeighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub sigma: f64,
    pub smoothing: Smoothing,
}

/// Kernel width at the reference 300 pixel input.
pub const REFERENCE_SIGMA: f64 = 5.0;
pub const REFERENCE_INPUT: usize = 300;

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            sigma: REFERENCE_SIGMA,
            smoothing: Smoothing::Plain,
        }
    }
}

impl ExtractOptions {
    /// The reference kernel scaled to an `input_size` image.
    pub fn for_input_size(input_size: usize) -> Self {
        Self {
            sigma: REFERENCE_SIGMA * input_size as f64 / REFERENCE_INPUT as f64,
            ..Self::default()
        }
    }
}

/// Single-item maps as row-major `f64` planes.
pub(crate) struct Planes {
    pub height: usize,
    pub width: usize,
    pub q: Vec<f64>,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    pub w: Vec<f64>,
}

impl Planes {
    pub fn from_maps<T: Float>(maps: &ParameterMaps<T>) -> Result<Self> {
        if maps.batch_size() != 1 {
            return Err(Error::Contract(format!(
                "grasp extraction takes one item, got a batch of {}",
                maps.batch_size()
            )));
        }
        let (height, width) = maps.spatial();
        let plane = |t: &crate::tensor::Tensor<T>| -> Result<Vec<f64>> {
            if t.shape() != [1, 1, height, width] {
                return Err(Error::Contract(format!(
                    "map shaped {:?}, expected {:?}",
                    t.shape(),
                    [1, 1, height, width]
                )));
            }
            Ok(t.data().iter().map(|v| v.as_f64()).collect())
        };
        Ok(Self {
            height,
            width,
            q: plane(&maps.q)?,
            cos: plane(&maps.cos)?,
            sin: plane(&maps.sin)?,
            w: plane(&maps.width)?,
        })
    }

    /// Per-pixel axial unit vector `(cos 2phi, sin 2phi)` of the recomposed
    /// angle `phi = atan2(sin, cos) / 2`.
    pub fn axial(&self, i: usize) -> (f64, f64) {
        let two_phi = self.sin[i].atan2(self.cos[i]);
        (two_phi.cos(), two_phi.sin())
    }
}

/// Row-major first index of the maximum; NaNs are ignored.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Filtered width and angle at one pixel.
fn read_at(p: &Planes, kernel: &[f64], smoothing: Smoothing, y: usize, x: usize) -> (f64, f64) {
    let r = (kernel.len() / 2) as i64;
    let (mut wsum, mut norm, mut c, mut s) = (0.0, 0.0, 0.0, 0.0);
    let (mut plain_w, mut plain_c, mut plain_s) = (0.0, 0.0, 0.0);
    for (j, ky) in kernel.iter().enumerate() {
        let yy = reflect(y as i64 + j as i64 - r, p.height);
        for (i, kx) in kernel.iter().enumerate() {
            let xx = reflect(x as i64 + i as i64 - r, p.width);
            let idx = yy * p.width + xx;
            let k = ky * kx;
            let (ac, as_) = p.axial(idx);
            plain_w += k * p.w[idx];
            plain_c += k * ac;
            plain_s += k * as_;
            let q = p.q[idx].clamp(0.0, 1.0);
            wsum += k * q * p.w[idx];
            norm += k * q;
            c += k * q * ac;
            s += k * q * as_;
        }
    }
    let weighted = smoothing == Smoothing::QualityWeighted && norm > 1e-12;
    let (w, c, s) = if weighted {
        (wsum / norm, c, s)
    } else {
        (plain_w, plain_c, plain_s)
    };
    (w, s.atan2(c) / 2.0)
}

/// The grasp at the peak of the filtered quality map.
pub fn extract_grasp<T: Float>(
    maps: &ParameterMaps<T>,
    options: &ExtractOptions,
) -> Result<GraspRectangle> {
    let p = Planes::from_maps(maps)?;
    let kernel = gaussian_kernel(options.sigma)?;
    let q = gaussian_smooth(&p.q, p.height, p.width, options.sigma)?;
    let i = argmax(&q);
    let (y, x) = (i / p.width, i % p.width);
    let (w, phi) = read_at(&p, &kernel, options.smoothing, y, x);
    Ok(GraspRectangle::with_default_jaw(
        (x as f64, y as f64),
        phi,
        MAX_OPENING * w.clamp(0.0, 1.0),
    ))
}

/// Extracts one grasp per batch item.
pub fn extract_batch<T: Float>(
    maps: &ParameterMaps<T>,
    options: &ExtractOptions,
) -> Result<Vec<GraspRectangle>> {
    (0..maps.batch_size())
        .map(|b| extract_grasp(&maps.batch_item(b)?, options))
        .collect()
}
