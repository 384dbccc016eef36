//! Synthetic tabletop scenes with analytically known grasps.
//!
//! One flat object lies on a uniform background. Depth is the height above
//! the table, so the background is 0 and the object top is constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraspAnnotation, Image, SceneSample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Bar,
    Tee,
    Disc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub image_size: usize,
    pub families: Vec<ShapeFamily>,
    /// Bar length and tee crossbar length.
    pub length: (f64, f64),
    pub thickness: (f64, f64),
    pub stem_length: (f64, f64),
    pub radius: (f64, f64),
    /// Clearance added to the object extent to get the jaw opening.
    pub margin: f64,
    /// Distance between neighbouring grasp centres along a spine.
    pub spacing: f64,
    /// Angle step for disc grasps, degrees.
    pub disc_step: f64,
    /// Gray level of the table in `[0, 255]`.
    pub background: f32,
    /// Object colour channels are drawn from this range.
    pub color: (f32, f32),
    pub object_height: f32,
    pub views: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 80,
            families: vec![ShapeFamily::Bar, ShapeFamily::Tee, ShapeFamily::Disc],
            length: (28.0, 48.0),
            thickness: (7.0, 12.0),
            stem_length: (14.0, 24.0),
            radius: (7.0, 12.0),
            margin: 4.0,
            spacing: 1.0,
            disc_step: 10.0,
            background: 60.0,
            color: (140.0, 255.0),
            object_height: 0.1,
            views: 4,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let range = |r: (f64, f64)| 0.0 < r.0 && r.0 <= r.1;
        let ok = self.image_size >= 16
            && !self.families.is_empty()
            && range(self.length)
            && range(self.thickness)
            && range(self.stem_length)
            && range(self.radius)
            && self.margin >= 0.0
            && self.spacing > 0.0
            && self.disc_step > 0.0
            && (0.0..=255.0).contains(&self.background)
            && self.color.0 <= self.color.1
            && self.object_height > 0.0
            && self.views > 0;
        if !ok {
            return Err(Error::Config(format!("invalid synthetic spec {self:?}")));
        }
        Ok(())
    }
}

/// Shape parameters of one object; every view of it shares them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub id: String,
    pub family: ShapeFamily,
    pub length: f64,
    pub thickness: f64,
    pub stem_length: f64,
    pub radius: f64,
    pub color: [f32; 3],
}

/// Placement of an object in one view. `angle` is the spine direction in
/// degrees, counter-clockwise as displayed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
}

fn draw(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

pub fn synth_object<R: Rng + ?Sized>(rng: &mut R, spec: &SynthSpec, index: usize) -> SynthObject {
    let mut rng = ChaCha8Rng::seed_from_u64(rng.random());
    let family = spec.families[index % spec.families.len()];
    let color = [0; 3].map(|_| {
        if spec.color.0 == spec.color.1 {
            spec.color.0
        } else {
            rng.random_range(spec.color.0..spec.color.1)
        }
    });
    SynthObject {
        id: format!("synth{index:04}"),
        family,
        length: draw(&mut rng, spec.length),
        thickness: draw(&mut rng, spec.thickness),
        stem_length: draw(&mut rng, spec.stem_length),
        radius: draw(&mut rng, spec.radius),
        color,
    }
}

impl SynthObject {
    /// Radius of a circle about the pose origin containing the object.
    pub fn extent(&self) -> f64 {
        let t = self.thickness / 2.0;
        match self.family {
            ShapeFamily::Bar => (self.length / 2.0).hypot(t),
            ShapeFamily::Tee => (self.length / 2.0)
                .hypot(t)
                .max(t.hypot(t + self.stem_length)),
            ShapeFamily::Disc => self.radius,
        }
    }

    /// Whether `(px, py)` lies on the object. `(along, normal)` are the
    /// coordinates along the spine `(cos a, -sin a)` and its normal
    /// `(sin a, cos a)`.
    pub fn contains(&self, pose: &Pose, px: f64, py: f64) -> bool {
        let a = pose.angle.to_radians();
        let (dx, dy) = (px - pose.x, py - pose.y);
        let along = dx * a.cos() - dy * a.sin();
        let normal = dx * a.sin() + dy * a.cos();
        let t = self.thickness / 2.0;
        match self.family {
            ShapeFamily::Bar => along.abs() <= self.length / 2.0 && normal.abs() <= t,
            ShapeFamily::Tee => {
                (along.abs() <= self.length / 2.0 && normal.abs() <= t)
                    || (along.abs() <= t && normal >= 0.0 && normal <= t + self.stem_length)
            }
            ShapeFamily::Disc => dx.hypot(dy) <= self.radius,
        }
    }

    /// All grasps of the object in `pose`.
    pub fn grasps(&self, pose: &Pose, spec: &SynthSpec) -> Vec<GraspAnnotation> {
        let a = pose.angle.to_radians();
        let (u, n) = ((a.cos(), -a.sin()), (a.sin(), a.cos()));
        let at = |s: f64, d: f64| (pose.x + s * u.0 + d * n.0, pose.y + s * u.1 + d * n.1);
        let opening = self.thickness + spec.margin;
        let jaw = opening / 2.0;
        let gap = spec.margin / 2.0;
        let mut out = Vec::new();
        // Centres at `lo..=hi` along one axis, symmetric when the range is short.
        let steps = |lo: f64, hi: f64| -> Vec<f64> {
            if hi < lo {
                return Vec::new();
            }
            let n = ((hi - lo) / spec.spacing).floor() as usize;
            let start = lo + (hi - lo - n as f64 * spec.spacing) / 2.0;
            (0..=n).map(|i| start + i as f64 * spec.spacing).collect()
        };
        let push =
            |out: &mut Vec<GraspAnnotation>, (x, y): (f64, f64), theta: f64, opening: f64| {
                out.push(GraspAnnotation::new(x, y, theta, opening, opening / 2.0));
            };
        match self.family {
            ShapeFamily::Bar => {
                let half = self.length / 2.0 - jaw / 2.0;
                for s in steps(-half, half) {
                    push(&mut out, at(s, 0.0), pose.angle + 90.0, opening);
                }
            }
            ShapeFamily::Tee => {
                let t = self.thickness / 2.0;
                let inner = t + jaw / 2.0 + gap;
                let outer = self.length / 2.0 - jaw / 2.0;
                for s in steps(inner, outer) {
                    push(&mut out, at(-s, 0.0), pose.angle + 90.0, opening);
                    push(&mut out, at(s, 0.0), pose.angle + 90.0, opening);
                }
                for d in steps(inner, t + self.stem_length - jaw / 2.0) {
                    push(&mut out, at(0.0, d), pose.angle, opening);
                }
            }
            ShapeFamily::Disc => {
                let opening = 2.0 * self.radius + spec.margin;
                let count = (180.0 / spec.disc_step).round().max(1.0) as usize;
                for i in 0..count {
                    let theta = 90.0 - (count - 1 - i) as f64 * 180.0 / count as f64;
                    push(&mut out, (pose.x, pose.y), theta, opening);
                }
            }
        }
        out
    }
}

/// Draws a pose that keeps the whole object inside the frame.
pub fn random_pose<R: Rng + ?Sized>(rng: &mut R, object: &SynthObject, spec: &SynthSpec) -> Pose {
    let size = spec.image_size as f64;
    let r = object.extent() + 1.0;
    let (lo, hi) = (r, size - 1.0 - r);
    let coord = |rng: &mut R| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            (size - 1.0) / 2.0
        }
    };
    let x = coord(rng);
    let y = coord(rng);
    Pose {
        x,
        y,
        angle: rng.random_range(-180.0..180.0),
    }
}

pub fn render_view(
    object: &SynthObject,
    pose: &Pose,
    spec: &SynthSpec,
    scene_id: &str,
) -> SceneSample {
    let n = spec.image_size;
    let mut rgb = Image::filled(3, n, n, spec.background);
    let mut depth = Image::filled(1, n, n, 0.0);
    let mut mask = Image::filled(1, n, n, 0.0);
    for y in 0..n {
        for x in 0..n {
            if object.contains(pose, x as f64, y as f64) {
                for c in 0..3 {
                    rgb.set(c, y, x, object.color[c].round());
                }
                depth.set(0, y, x, spec.object_height);
                mask.set(0, y, x, 1.0);
            }
        }
    }
    let grasps = object
        .grasps(pose, spec)
        .into_iter()
        .filter(|g| g.in_bounds(n, n))
        .collect();
    SceneSample {
        scene_id: scene_id.to_string(),
        object_id: object.id.clone(),
        rgb,
        depth,
        mask,
        grasps,
    }
}

/// One random object in one random pose.
pub fn synth_scene<R: Rng + ?Sized>(rng: &mut R, spec: &SynthSpec) -> SceneSample {
    let index = rng.random_range(0..10_000);
    let object = synth_object(rng, spec, index);
    let pose = random_pose(rng, &object, spec);
    render_view(&object, &pose, spec, &format!("0_{}", object.id))
}

/// `count` scenes, `spec.views` per object, deterministic in `seed`.
pub fn synth_dataset(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<SceneSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(count);
    let mut index = 0;
    while scenes.len() < count {
        let object = synth_object(&mut rng, spec, index);
        for view in 0..spec.views.min(count - scenes.len()) {
            let pose = random_pose(&mut rng, &object, spec);
            scenes.push(render_view(
                &object,
                &pose,
                spec,
                &format!("{view}_{}", object.id),
            ));
        }
        index += 1;
    }
    Ok(scenes)
}
