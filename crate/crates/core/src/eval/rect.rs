use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

/// Oriented grasp rectangle. `width` runs along the closing axis
/// `(cos phi, -sin phi)` in image coordinates, `jaw` across it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspRectangle {
    pub center: (f64, f64),
    /// Radians in `(-pi/2, pi/2]`.
    pub phi: f64,
    pub width: f64,
    pub jaw: f64,
}

/// Folds an angle into `(-pi/2, pi/2]`.
pub fn fold_radians(phi: f64) -> f64 {
    let mut p = phi % PI;
    if p > FRAC_PI_2 {
        p -= PI;
    } else if p <= -FRAC_PI_2 {
        p += PI;
    }
    p
}

/// Distance between two grasp axes, in `[0, pi/2]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % PI;
    d.min(PI - d)
}

impl GraspRectangle {
    pub fn new(center: (f64, f64), phi: f64, width: f64, jaw: f64) -> Self {
        Self {
            center,
            phi: fold_radians(phi),
            width,
            jaw,
        }
    }

    /// Rectangle with the default jaw of half the width.
    pub fn with_default_jaw(center: (f64, f64), phi: f64, width: f64) -> Self {
        Self::new(center, phi, width, width / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.jaw.max(0.0)
    }

    /// Corners in a consistent winding order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.phi.sin_cos();
        let (ux, uy) = (c * self.width / 2.0, -s * self.width / 2.0);
        let (nx, ny) = (s * self.jaw / 2.0, c * self.jaw / 2.0);
        let (x, y) = self.center;
        [
            (x + ux + nx, y + uy + ny),
            (x - ux + nx, y - uy + ny),
            (x - ux - nx, y - uy - ny),
            (x + ux - nx, y + uy - ny),
        ]
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.phi.sin_cos();
        let (dx, dy) = (px - self.center.0, py - self.center.1);
        (dx * c - dy * s).abs() <= self.width / 2.0 && (dx * s + dy * c).abs() <= self.jaw / 2.0
    }
}

fn signed_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn positive_winding(mut poly: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Clips `subject` against the convex `clip` polygon, both positively wound.
fn clip_polygon(subject: Vec<(f64, f64)>, clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject;
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    out
}

/// Intersection over union of two rotated rectangles; 0 if either is
/// degenerate.
pub fn rect_iou(a: &GraspRectangle, b: &GraspRectangle) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if !(area_a > 1e-12 && area_b > 1e-12) {
        return 0.0;
    }
    let pa = positive_winding(a.corners().to_vec());
    let pb = positive_winding(b.corners().to_vec());
    let inter = signed_area(&clip_polygon(pa, &pb))
        .abs()
        .min(area_a.min(area_b));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Best-matching ground truth for `pred`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub success: bool,
    pub iou: f64,
    /// Degrees in `[0, 90]`.
    pub angle_error: f64,
}

pub const IOU_THRESHOLD: f64 = 0.25;
pub const ANGLE_THRESHOLD_DEG: f64 = 30.0;

/// Compares `pred` with every ground truth. A successful match is preferred,
/// then higher IoU.
pub fn best_match(pred: &GraspRectangle, gts: &[GraspRectangle]) -> Option<Match> {
    let mut best: Option<Match> = None;
    for gt in gts {
        let iou = rect_iou(pred, gt);
        let angle_error = angle_distance(pred.phi, gt.phi).to_degrees();
        let success = iou > IOU_THRESHOLD && angle_error <= ANGLE_THRESHOLD_DEG + 1e-9;
        let m = Match {
            success,
            iou,
            angle_error,
        };
        let better = match best {
            None => true,
            Some(b) => (m.success, m.iou) > (b.success, b.iou),
        };
        if better {
            best = Some(m);
        }
    }
    best
}

/// True iff some ground truth overlaps by more than 25% IoU within 30 degrees.
pub fn grasp_success(pred: &GraspRectangle, gts: &[GraspRectangle]) -> bool {
    best_match(pred, gts).is_some_and(|m| m.success)
}
