//! Finite-difference cases for every layer, both losses and the full
//! networks, on 32x32 inputs.

use graspforge_core::loss::traced_loss;
use graspforge_core::network::{AuxTask, TracedMaps};
use graspforge_core::tensor::{ConvSpec, Float, ParamSet, Tape, Var};
use graspforge_core::{GroundTruthMaps, LossKind, Model, ModelConfig, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{grad_check, random_map_set, random_tensor, Case, GradReport};

pub const TOL_F64: f64 = 1e-5;
pub const TOL_F32: f64 = 1e-3;

/// Why `r` misses the tolerances, if it does. At most half the sampled
/// coordinates may be skipped as kinks.
pub fn failure(r: &GradReport) -> Option<String> {
    if r.checked == 0 || r.kinks * 2 > r.checked {
        Some(format!("{} kinks for {} checks", r.kinks, r.checked))
    } else if r.max_rel_f64 > TOL_F64 {
        Some(format!(
            "f64 rel error {:.3e} at {}",
            r.max_rel_f64, r.worst
        ))
    } else if r.max_rel_f32 > TOL_F32 {
        Some(format!("f32 rel error {:.3e}", r.max_rel_f32))
    } else {
        None
    }
}

#[derive(Clone, Copy)]
enum Op {
    Conv(fn() -> ConvSpec),
    ConvTranspose(fn() -> ConvSpec),
    MaxPool,
    Relu,
    Add,
    Sub,
    Mul,
    Square,
    Scale(f64),
    Mean,
}

fn apply<T: Float>(op: Op, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
    match op {
        Op::Conv(spec) => t.conv2d(v[0], v[1], v[2], &spec()),
        Op::ConvTranspose(spec) => t.conv_transpose2d(v[0], v[1], v[2], &spec()),
        Op::MaxPool => t.maxpool2d(v[0], 2, 2),
        Op::Relu => Ok(t.relu(v[0])),
        Op::Add => t.add(v[0], v[1]),
        Op::Sub => t.sub(v[0], v[1]),
        Op::Mul => t.mul(v[0], v[1]),
        Op::Square => Ok(t.square(v[0])),
        Op::Scale(f) => Ok(t.scale(v[0], T::of_f64(f))),
        Op::Mean => Ok(t.mean(v[0])),
    }
}

/// `sum(layer(x) * probe)` for a fixed random probe.
struct Layer {
    params: ParamSet<f64>,
    probe: Tensor<f64>,
    op: Op,
}

impl Case for Layer {
    fn params(&self) -> ParamSet<f64> {
        self.params.clone()
    }

    fn build<T: Float>(&self, tape: &mut Tape<T>, params: &ParamSet<T>) -> Result<Var> {
        let vars: Vec<Var> = params
            .iter()
            .map(|(n, _)| tape.param(params, n))
            .collect::<Result<_>>()?;
        let out = apply(self.op, tape, &vars)?;
        let probe = tape.input(self.probe.cast());
        let prod = tape.mul(out, probe)?;
        Ok(tape.sum(prod))
    }
}

fn params(entries: &[(&str, Tensor<f64>)]) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (n, t) in entries {
        p.insert(*n, t.clone()).unwrap();
    }
    p
}

fn main_spec() -> ConvSpec {
    ConvSpec::new(3, 4, 3).padding(1)
}

fn dilated_spec() -> ConvSpec {
    ConvSpec::new(2, 3, 5).padding(4).dilation(2)
}

fn strided_spec() -> ConvSpec {
    ConvSpec::new(2, 3, 3).stride(2).padding(1)
}

fn transpose_spec() -> ConvSpec {
    ConvSpec::new(3, 2, 4).stride(2).padding(1)
}

fn layer(
    entries: &[(&str, Tensor<f64>)],
    out_shape: &[usize],
    op: Op,
    rng: &mut ChaCha8Rng,
) -> Layer {
    Layer {
        params: params(entries),
        probe: random_tensor(out_shape, -1.0, 1.0, rng),
        op,
    }
}

/// Convolution layers: plain, dilated, strided and transposed.
pub fn conv_layers() -> Vec<(String, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut t = |shape: &[usize], scale: f64| random_tensor(shape, -scale, scale, &mut rng);
    let cases = [
        (
            "conv2d",
            vec![
                ("x", t(&[2, 3, 32, 32], 1.0)),
                ("w", t(&main_spec().weight_shape(), 0.5)),
                ("b", t(&[4], 0.5)),
            ],
            vec![2, 4, 32, 32],
            Op::Conv(main_spec),
        ),
        (
            "dilated conv2d",
            vec![
                ("x", t(&[1, 2, 32, 32], 1.0)),
                ("w", t(&dilated_spec().weight_shape(), 0.5)),
                ("b", t(&[3], 0.5)),
            ],
            vec![1, 3, 32, 32],
            Op::Conv(dilated_spec),
        ),
        (
            "strided conv2d",
            vec![
                ("x", t(&[1, 2, 32, 32], 1.0)),
                ("w", t(&strided_spec().weight_shape(), 0.5)),
                ("b", t(&[3], 0.5)),
            ],
            vec![1, 3, 16, 16],
            Op::Conv(strided_spec),
        ),
        (
            "conv_transpose2d",
            vec![
                ("x", t(&[1, 3, 16, 16], 1.0)),
                ("w", t(&transpose_spec().transpose_weight_shape(), 0.5)),
                ("b", t(&[2], 0.5)),
            ],
            vec![1, 2, 32, 32],
            Op::ConvTranspose(transpose_spec),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    cases
        .into_iter()
        .map(|(name, entries, out, op)| {
            let case = layer(&entries, &out, op, &mut rng);
            (name.to_string(), grad_check(&case, 48, 1e-5, &mut rng))
        })
        .collect()
}

/// Max-pooling, ReLU and the elementwise ops the losses are built from.
pub fn pointwise_layers() -> Vec<(String, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shape = [1, 2, 32, 32];
    let x = random_tensor(&shape, -1.0, 1.0, &mut rng);
    let y = random_tensor(&shape, -1.0, 1.0, &mut rng);
    // Keep inputs away from the kink.
    let away = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let cases = [
        (
            "maxpool2d",
            vec![("x", x.clone())],
            vec![1, 2, 16, 16],
            Op::MaxPool,
        ),
        ("relu", vec![("x", away)], shape.to_vec(), Op::Relu),
        (
            "add",
            vec![("x", x.clone()), ("y", y.clone())],
            shape.to_vec(),
            Op::Add,
        ),
        (
            "sub",
            vec![("x", x.clone()), ("y", y.clone())],
            shape.to_vec(),
            Op::Sub,
        ),
        (
            "mul",
            vec![("x", x.clone()), ("y", y.clone())],
            shape.to_vec(),
            Op::Mul,
        ),
        ("square", vec![("x", x.clone())], shape.to_vec(), Op::Square),
        (
            "scale",
            vec![("x", x.clone())],
            shape.to_vec(),
            Op::Scale(-1.7),
        ),
        ("mean", vec![("x", x.clone())], vec![1], Op::Mean),
    ];
    cases
        .into_iter()
        .map(|(name, entries, out, op)| {
            let case = layer(&entries, &out, op, &mut rng);
            (name.to_string(), grad_check(&case, 64, 1e-4, &mut rng))
        })
        .collect()
}

/// A loss over maps held as parameters.
struct LossCase {
    kind: LossKind,
    pred: ParamSet<f64>,
    gt: GroundTruthMaps<f64>,
}

impl Case for LossCase {
    fn params(&self) -> ParamSet<f64> {
        self.pred.clone()
    }

    fn build<T: Float>(&self, tape: &mut Tape<T>, params: &ParamSet<T>) -> Result<Var> {
        let maps = TracedMaps {
            q: tape.param(params, "q")?,
            cos: tape.param(params, "cos")?,
            sin: tape.param(params, "sin")?,
            width: tape.param(params, "width")?,
            aux: params
                .get("aux")
                .map(|_| tape.param(params, "aux"))
                .transpose()?,
        };
        Ok(traced_loss(tape, self.kind, &maps, &self.gt.cast())?.total)
    }
}

/// Both losses, with and without the auxiliary term.
pub fn losses() -> Vec<(String, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut out = Vec::new();
    for kind in [LossKind::Standard, LossKind::Positional] {
        for aux in [false, true] {
            let (pred, gt) = random_map_set(&mut rng, 2, 32, 32, aux);
            let mut p = ParamSet::new();
            for (n, t) in pred.named() {
                p.insert(n, t.clone()).unwrap();
            }
            let case = LossCase { kind, pred: p, gt };
            out.push((
                format!("{kind} aux={aux}"),
                grad_check(&case, 64, 1e-4, &mut rng),
            ));
        }
    }
    out
}

/// Full network forward plus loss on a 32x32 input.
struct NetCase {
    config: ModelConfig,
    params: ParamSet<f64>,
    image: Tensor<f64>,
    kind: LossKind,
    gt: GroundTruthMaps<f64>,
}

impl Case for NetCase {
    fn params(&self) -> ParamSet<f64> {
        self.params.clone()
    }

    fn build<T: Float>(&self, tape: &mut Tape<T>, params: &ParamSet<T>) -> Result<Var> {
        let model = Model::from_parts(self.config.clone(), params.clone())?;
        let x = tape.input(self.image.cast());
        let maps = model.forward_traced(tape, x)?;
        Ok(traced_loss(tape, self.kind, &maps, &self.gt.cast())?.total)
    }
}

fn net_case(config: ModelConfig, kind: LossKind, seed: u64) -> NetCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aux = config.auxiliary_task != AuxTask::None;
    let mut model = Model::<f64>::build(config.clone(), seed).unwrap();
    // Non-zero biases so no unit sits exactly on a ReLU kink.
    for (_, t) in model.params_mut().iter_mut() {
        if t.shape().len() == 1 {
            *t = random_tensor(t.shape(), -0.05, 0.05, &mut rng);
        }
    }
    let (_, gt) = random_map_set(&mut rng, 1, 32, 32, aux);
    NetCase {
        params: model.params().clone(),
        config,
        image: random_tensor(&[1, 3, 32, 32], -0.5, 0.5, &mut rng),
        kind,
        gt,
    }
}

/// End-to-end networks plus loss.
pub fn networks() -> Vec<(String, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut out = Vec::new();
    for (config, kind) in [
        (ModelConfig::ggcnn(32), LossKind::Standard),
        (ModelConfig::ggcnn(32), LossKind::Positional),
        (
            ModelConfig::mtgcnn(32, AuxTask::Depth),
            LossKind::Positional,
        ),
    ] {
        let what = format!("{} {kind}", config.variant);
        let case = net_case(config, kind, 5);
        out.push((what, grad_check(&case, 6, 1e-5, &mut rng)));
    }
    out
}
