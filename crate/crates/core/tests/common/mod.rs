//! Independent reference implementations shared by the integration and
//! acceptance suites.
#![allow(dead_code)]

pub mod gradcases;

use graspforge_core::eval::{ExtractOptions, GraspRectangle, Smoothing};
use graspforge_core::tensor::{Float, ParamSet, Tape, Var};
use graspforge_core::{GroundTruthMaps, LossKind, ParameterMaps, Result, Tensor};
use rand::Rng;

/// A scalar-valued graph over named parameters.
pub trait Case {
    fn params(&self) -> ParamSet<f64>;
    fn build<T: Float>(&self, tape: &mut Tape<T>, params: &ParamSet<T>) -> Result<Var>;
}

fn eval_loss<C: Case>(case: &C, params: &ParamSet<f64>) -> f64 {
    let mut tape = Tape::new();
    let out = case.build(&mut tape, params).unwrap();
    tape.value(out).data()[0]
}

fn analytic<C: Case, T: Float>(case: &C, params: &ParamSet<T>) -> ParamSet<T> {
    let mut tape = Tape::new();
    let out = case.build(&mut tape, params).unwrap();
    tape.backward(out, params).unwrap().params
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates skipped because the two step sizes disagreed, i.e. a
    /// ReLU or max-pool switch lies within the step.
    pub kinks: usize,
    pub max_rel_f64: f64,
    pub max_rel_f32: f64,
    pub worst: String,
}

/// `|a - n| / max(|a|, |n|, 1e-3 * max|g|)` where `g` is the analytic
/// gradient of the whole tensor.
pub fn rel_error(a: f64, n: f64, scale: f64) -> f64 {
    let floor = (1e-3 * scale).max(1e-12);
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn loss_at(case: &impl Case, base: &ParamSet<f64>, name: &str, i: usize, delta: f64) -> f64 {
    let mut p = base.clone();
    p.get_mut(name).unwrap().data_mut()[i] += delta;
    eval_loss(case, &p)
}

fn central(case: &impl Case, base: &ParamSet<f64>, name: &str, i: usize, h: f64) -> f64 {
    (loss_at(case, base, name, i, h) - loss_at(case, base, name, i, -h)) / (2.0 * h)
}

/// Central differences in `f64` at up to `per_tensor` sampled coordinates of
/// every parameter, compared with `f64` and `f32` reverse-mode gradients.
///
/// Each coordinate is differenced at `step` and `step / 10`. If the two
/// disagree by more than 1e-6 relative, a ReLU or max-pool switch lies within
/// the step; the coordinate is counted as a kink and replaced by another
/// sample.
pub fn grad_check<C: Case, R: Rng>(
    case: &C,
    per_tensor: usize,
    step: f64,
    rng: &mut R,
) -> GradReport {
    const KINK_TOL: f64 = 1e-6;
    let base = case.params();
    let a64 = analytic(case, &base);
    let a32 = analytic(case, &base.cast::<f32>());
    let mut report = GradReport::default();
    let names: Vec<String> = base.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let len = base.get(&name).unwrap().len();
        let mut queue: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        let g64 = a64.get(&name).unwrap();
        let g32 = a32.get(&name).unwrap();
        let scale = g64.max_abs();
        let mut retries = 0;
        while let Some(i) = queue.pop() {
            let coarse = central(case, &base, &name, i, step);
            let numeric = central(case, &base, &name, i, step / 10.0);
            if rel_error(coarse, numeric, scale) > KINK_TOL {
                report.kinks += 1;
                if len > per_tensor && retries < per_tensor {
                    retries += 1;
                    queue.push(rng.random_range(0..len));
                }
                continue;
            }
            let e64 = rel_error(g64.data()[i], numeric, scale);
            let e32 = rel_error(g32.data()[i] as f64, numeric, scale);
            if e64 > report.max_rel_f64 {
                report.max_rel_f64 = e64;
                report.worst = format!("{name}[{i}]: analytic {} numeric {numeric}", g64.data()[i]);
            }
            report.max_rel_f32 = report.max_rel_f32.max(e32);
            report.checked += 1;
        }
    }
    report
}

pub fn random_tensor<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Random predictions and targets; quality targets in `[0, 1]`, a share of
/// them exactly 0.
pub fn random_map_set<R: Rng>(
    rng: &mut R,
    batch: usize,
    h: usize,
    w: usize,
    aux: bool,
) -> (ParameterMaps<f64>, GroundTruthMaps<f64>) {
    let s = [batch, 1, h, w];
    let mut t = |lo, hi| random_tensor(&s, lo, hi, rng);
    let pred = ParameterMaps {
        q: t(-0.5, 1.5),
        cos: t(-1.5, 1.5),
        sin: t(-1.5, 1.5),
        width: t(-0.5, 1.5),
        aux: None,
    };
    let mut q_gt = t(0.0, 1.0);
    for v in q_gt.data_mut() {
        if *v < 0.4 {
            *v = 0.0;
        } else if *v > 0.8 {
            *v = 1.0;
        }
    }
    let gt = GroundTruthMaps {
        q: q_gt,
        cos: t(-1.0, 1.0),
        sin: t(-1.0, 1.0),
        width: t(0.0, 1.0),
        aux: None,
    };
    if aux {
        let pa = t(-0.5, 1.5);
        let ga = t(0.0, 1.0);
        (
            ParameterMaps {
                aux: Some(pa),
                ..pred
            },
            GroundTruthMaps {
                aux: Some(ga),
                ..gt
            },
        )
    } else {
        (pred, gt)
    }
}

/// Loss terms `[q, cos, sin, width, aux]` by explicit loops over pixels.
pub fn loop_loss(kind: LossKind, pred: &ParameterMaps<f64>, gt: &GroundTruthMaps<f64>) -> [f64; 5] {
    let n = pred.q.len() as f64;
    let q_gt = gt.q.data();
    let term = |p: &Tensor<f64>, g: &Tensor<f64>, weighted: bool| {
        let mut acc = 0.0;
        for i in 0..p.len() {
            let mut r = p.data()[i] - g.data()[i];
            if weighted {
                r *= q_gt[i];
            }
            acc += r * r;
        }
        acc / n
    };
    let positional = kind == LossKind::Positional;
    [
        term(&pred.q, &gt.q, false),
        term(&pred.cos, &gt.cos, positional),
        term(&pred.sin, &gt.sin, positional),
        term(&pred.width, &gt.width, positional),
        match (&pred.aux, &gt.aux) {
            (Some(p), Some(g)) => term(p, g, false),
            _ => 0.0,
        },
    ]
}

/// IoU estimated on a `res x res` grid over the joint bounding box.
pub fn raster_iou(a: &GraspRectangle, b: &GraspRectangle, res: usize) -> f64 {
    let pts: Vec<(f64, f64)> = a.corners().into_iter().chain(b.corners()).collect();
    let (x0, x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
            (l.min(p.0), h.max(p.0))
        });
    let (y0, y1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
            (l.min(p.1), h.max(p.1))
        });
    let (dx, dy) = ((x1 - x0) / res as f64, (y1 - y0) / res as f64);
    let (mut inter, mut union) = (0u64, 0u64);
    for j in 0..res {
        let y = y0 + (j as f64 + 0.5) * dy;
        for i in 0..res {
            let x = x0 + (i as f64 + 0.5) * dx;
            let (ia, ib) = (a.contains(x, y), b.contains(x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// x-range where `|a * x + b| <= half`.
fn slab(a: f64, b: f64, half: f64) -> (f64, f64) {
    if a.abs() < 1e-15 {
        return if b.abs() <= half {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (1.0, 0.0)
        };
    }
    let (p, q) = ((-half - b) / a, (half - b) / a);
    (p.min(q), p.max(q))
}

fn row_interval(r: &GraspRectangle, y: f64) -> (f64, f64) {
    let (s, c) = r.phi.sin_cos();
    let dy = y - r.center.1;
    // dx * c - dy * s and dx * s + dy * c with dx = x - cx.
    let (l1, h1) = slab(c, -r.center.0 * c - dy * s, r.width / 2.0);
    let (l2, h2) = slab(s, -r.center.0 * s + dy * c, r.jaw / 2.0);
    (l1.max(l2), h1.min(h2))
}

/// Pixel-centre count of a `res x res` grid over the joint bounding box,
/// computed row by row from the exact x-interval each rectangle covers.
/// Counts the same grid as [`raster_iou`] at `O(res)` cost.
pub fn raster_iou_rows(a: &GraspRectangle, b: &GraspRectangle, res: usize) -> f64 {
    let pts: Vec<(f64, f64)> = a.corners().into_iter().chain(b.corners()).collect();
    let (x0, x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
            (l.min(p.0), h.max(p.0))
        });
    let (y0, y1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
            (l.min(p.1), h.max(p.1))
        });
    let (dx, dy) = ((x1 - x0) / res as f64, (y1 - y0) / res as f64);
    let count = |(lo, hi): (f64, f64)| -> i64 {
        if lo > hi {
            return 0;
        }
        let first = ((lo - x0) / dx - 0.5).ceil().max(0.0) as i64;
        let last = ((hi - x0) / dx - 0.5).floor().min(res as f64 - 1.0) as i64;
        (last - first + 1).max(0)
    };
    let (mut inter, mut union) = (0i64, 0i64);
    for j in 0..res {
        let y = y0 + (j as f64 + 0.5) * dy;
        let (ia, ib) = (row_interval(a, y), row_interval(b, y));
        let both = count((ia.0.max(ib.0), ia.1.min(ib.1)));
        inter += both;
        union += count(ia) + count(ib) - both;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Direct 2-D convolution with the full outer-product Gaussian kernel.
pub fn dense_smooth(map: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma + 0.5).floor() as i64;
    let mut k = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            k.push((-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = k.iter().sum();
    let side = (2 * r + 1) as usize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let kv = k[(dy + r) as usize * side + (dx + r) as usize];
                    acc += kv * map[mirror(y as i64 + dy, h) * w + mirror(x as i64 + dx, w)];
                }
            }
            out[y * w + x] = acc / total;
        }
    }
    out
}

/// Reference extractor: smooth every map over the full image, then scan.
pub fn naive_extract(maps: &ParameterMaps<f64>, options: &ExtractOptions) -> GraspRectangle {
    let (h, w) = maps.spatial();
    let q = maps.q.data().to_vec();
    let width = maps.width.data();
    let two_phi: Vec<f64> = maps
        .sin
        .data()
        .iter()
        .zip(maps.cos.data())
        .map(|(s, c)| s.atan2(*c))
        .collect();
    let weight: Vec<f64> = match options.smoothing {
        Smoothing::Plain => vec![1.0; h * w],
        Smoothing::QualityWeighted => q.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    };
    let sm = |v: Vec<f64>| dense_smooth(&v, h, w, options.sigma);
    let qs = sm(q.clone());
    let mut best = 0;
    for i in 0..qs.len() {
        if qs[i] > qs[best] {
            best = i;
        }
    }
    let norm = sm(weight.clone())[best];
    let use_weights = options.smoothing == Smoothing::QualityWeighted && norm > 1e-12;
    let weight = if use_weights {
        weight
    } else {
        vec![1.0; h * w]
    };
    let ww = sm((0..h * w).map(|i| weight[i] * width[i]).collect())[best];
    let cs = sm((0..h * w).map(|i| weight[i] * two_phi[i].cos()).collect())[best];
    let sn = sm((0..h * w).map(|i| weight[i] * two_phi[i].sin()).collect())[best];
    let wv = if use_weights { ww / norm } else { ww };
    let (y, x) = (best / w, best % w);
    GraspRectangle::with_default_jaw(
        (x as f64, y as f64),
        sn.atan2(cs) / 2.0,
        150.0 * wv.clamp(0.0, 1.0),
    )
}
