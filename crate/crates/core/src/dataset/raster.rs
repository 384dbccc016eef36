//! Training targets and input normalization.

use super::{GraspAnnotation, Image, SceneSample};
use crate::error::{Error, Result};
use crate::network::{AuxTask, ParameterMaps};
use crate::tensor::{Float, Tensor};

/// Opening in pixels that maps to a normalized width of 1.
pub const MAX_OPENING: f64 = 150.0;

/// Rasterized targets, each shaped `(batch, 1, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthMaps<T = f32> {
    pub q: Tensor<T>,
    pub cos: Tensor<T>,
    pub sin: Tensor<T>,
    pub width: Tensor<T>,
    pub aux: Option<Tensor<T>>,
}

impl<T: Float> GroundTruthMaps<T> {
    pub fn batch_size(&self) -> usize {
        self.q.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize) {
        let s = self.q.shape();
        (s[2], s[3])
    }

    pub fn stack(items: &[Self]) -> Result<Self> {
        let pick = |f: fn(&Self) -> &Tensor<T>| -> Result<Tensor<T>> {
            Tensor::stack(&items.iter().map(|m| f(m).clone()).collect::<Vec<_>>())
        };
        let aux = match items.first().map(|m| m.aux.is_some()) {
            Some(true) => {
                let all: Option<Vec<_>> = items.iter().map(|m| m.aux.clone()).collect();
                let all = all.ok_or_else(|| {
                    Error::Contract("cannot stack maps with and without aux".into())
                })?;
                Some(Tensor::stack(&all)?)
            }
            _ => {
                if items.iter().any(|m| m.aux.is_some()) {
                    return Err(Error::Contract(
                        "cannot stack maps with and without aux".into(),
                    ));
                }
                None
            }
        };
        Ok(Self {
            q: pick(|m| &m.q)?,
            cos: pick(|m| &m.cos)?,
            sin: pick(|m| &m.sin)?,
            width: pick(|m| &m.width)?,
            aux,
        })
    }

    pub fn cast<U: Float>(&self) -> GroundTruthMaps<U> {
        GroundTruthMaps {
            q: self.q.cast(),
            cos: self.cos.cast(),
            sin: self.sin.cast(),
            width: self.width.cast(),
            aux: self.aux.as_ref().map(Tensor::cast),
        }
    }

    /// The targets viewed as network outputs, e.g. to feed a perfect
    /// prediction to the extractor.
    pub fn as_parameter_maps(&self) -> ParameterMaps<T> {
        ParameterMaps {
            q: self.q.clone(),
            cos: self.cos.clone(),
            sin: self.sin.clone(),
            width: self.width.clone(),
            aux: self.aux.clone(),
        }
    }

    /// Checks the unit-circle identity at grasp pixels and zeros elsewhere.
    pub fn check_invariants(&self) -> Result<()> {
        let (q, c, s, w) = (
            self.q.data(),
            self.cos.data(),
            self.sin.data(),
            self.width.data(),
        );
        for i in 0..q.len() {
            let (qi, ci, si, wi) = (q[i].as_f64(), c[i].as_f64(), s[i].as_f64(), w[i].as_f64());
            let ok = if qi == 0.0 {
                ci == 0.0 && si == 0.0 && wi == 0.0
            } else {
                qi == 1.0 && (ci * ci + si * si - 1.0).abs() < 1e-5 && (0.0..=1.0).contains(&wi)
            };
            if !ok {
                return Err(Error::Contract(format!(
                    "pixel {i}: q={qi} cos={ci} sin={si} width={wi} breaks target invariants"
                )));
            }
        }
        Ok(())
    }
}

/// Whether image point `(px, py)` lies in the centre-third rectangle of `g`.
pub(crate) fn in_centre_third(g: &GraspAnnotation, px: f64, py: f64) -> bool {
    let phi = g.theta.to_radians();
    let (dx, dy) = (px - g.x, py - g.y);
    let along = dx * phi.cos() - dy * phi.sin();
    let across = dx * phi.sin() + dy * phi.cos();
    along.abs() <= g.opening / 2.0 && across.abs() <= g.jaw_size / 6.0
}

/// Rasterizes `grasps` onto a `width x height` grid with pixel centres at
/// integer coordinates. Later grasps overwrite earlier ones.
pub fn rasterize_ground_truth(
    grasps: &[GraspAnnotation],
    width: usize,
    height: usize,
    aux_task: AuxTask,
    depth: Option<&Image>,
    mask: Option<&Image>,
) -> Result<GroundTruthMaps> {
    let n = width * height;
    let (mut q, mut cos, mut sin, mut w) =
        (vec![0f32; n], vec![0f32; n], vec![0f32; n], vec![0f32; n]);
    for g in grasps {
        let phi = g.theta.to_radians();
        let (c2, s2) = ((2.0 * phi).cos() as f32, (2.0 * phi).sin() as f32);
        let wn = (g.opening / MAX_OPENING).clamp(0.0, 1.0) as f32;
        let reach = (g.opening / 2.0).hypot(g.jaw_size / 6.0);
        let x0 = (g.x - reach).floor().max(0.0) as usize;
        let y0 = (g.y - reach).floor().max(0.0) as usize;
        let x1 = ((g.x + reach).ceil().max(0.0) as usize).min(width.saturating_sub(1));
        let y1 = ((g.y + reach).ceil().max(0.0) as usize).min(height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if in_centre_third(g, x as f64, y as f64) {
                    let i = y * width + x;
                    q[i] = 1.0;
                    cos[i] = c2;
                    sin[i] = s2;
                    w[i] = wn;
                }
            }
        }
    }

    let check = |img: &Image, what: &str| -> Result<()> {
        if img.width() != width || img.height() != height || img.channels() != 1 {
            return Err(Error::Contract(format!(
                "{what} is {}x{}x{}, expected 1x{height}x{width}",
                img.channels(),
                img.height(),
                img.width()
            )));
        }
        Ok(())
    };
    let aux = match aux_task {
        AuxTask::None => None,
        AuxTask::Depth => {
            let d = depth.ok_or_else(|| {
                Error::Contract("depth auxiliary target needs a depth image".into())
            })?;
            check(d, "depth")?;
            Some(normalize_depth(d).into_data())
        }
        AuxTask::Saliency => {
            let m = mask
                .ok_or_else(|| Error::Contract("saliency auxiliary target needs a mask".into()))?;
            check(m, "mask")?;
            Some(
                m.data()
                    .iter()
                    .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
                    .collect(),
            )
        }
    };
    let t = |v: Vec<f32>| Tensor::new([1, 1, height, width], v);
    Ok(GroundTruthMaps {
        q: t(q)?,
        cos: t(cos)?,
        sin: t(sin)?,
        width: t(w)?,
        aux: aux.map(t).transpose()?,
    })
}

/// Targets for a whole scene.
pub fn ground_truth(sample: &SceneSample, aux_task: AuxTask) -> Result<GroundTruthMaps> {
    rasterize_ground_truth(
        &sample.grasps,
        sample.width(),
        sample.height(),
        aux_task,
        Some(&sample.depth),
        Some(&sample.mask),
    )
}

/// 8-bit RGB scaled to `[0, 1]` with the per-image scalar mean removed,
/// shaped `(1, 3, height, width)`.
pub fn normalize_rgb(image: &Image) -> Tensor {
    let mean =
        image.data().iter().map(|&v| v as f64 / 255.0).sum::<f64>() / image.data().len() as f64;
    let data = image
        .data()
        .iter()
        .map(|&v| (v as f64 / 255.0 - mean) as f32)
        .collect();
    Tensor::new([1, image.channels(), image.height(), image.width()], data)
        .expect("image is non-empty")
}

/// Per-image min-max normalization into `[0, 1]`; constant images map to 0.
pub fn normalize_depth(depth: &Image) -> Tensor {
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = (hi - lo) as f64;
    let data = depth
        .data()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) as f64 / range) as f32
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new([1, depth.channels(), depth.height(), depth.width()], data)
        .expect("image is non-empty")
}
