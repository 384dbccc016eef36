//! Grasp network topologies.
//!
//! Both variants share a trunk of four 3x3 convolutions with a max-pool after
//! the second and fourth. The grasp head (two dilated convolutions, two
//! stride-2 transposed convolutions) restores the input resolution and ends in
//! four linear 1x1 heads: quality, cos(2 phi), sin(2 phi) and width. The
//! multi-task variant attaches a second, structurally identical head for the
//! auxiliary map; it only ever consumes trunk features, so dropping it leaves
//! the grasp outputs untouched.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{ModelCheckpoint, TrainingMetadata, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, conv_transpose2d, maxpool2d, ConvSpec, Float, ParamSet, Tape, Tensor, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ggcnn,
    Mtgcnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxTask {
    None,
    Depth,
    Saliency,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ggcnn => "ggcnn",
            Variant::Mtgcnn => "mtgcnn",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ggcnn" => Ok(Variant::Ggcnn),
            "mtgcnn" => Ok(Variant::Mtgcnn),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl fmt::Display for AuxTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxTask::None => "none",
            AuxTask::Depth => "depth",
            AuxTask::Saliency => "saliency",
        })
    }
}

impl FromStr for AuxTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AuxTask::None),
            "depth" => Ok(AuxTask::Depth),
            "saliency" => Ok(AuxTask::Saliency),
            other => Err(Error::Config(format!("unknown auxiliary task {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub variant: Variant,
    pub auxiliary_task: AuxTask,
    /// Four trunk convolutions; a max-pool follows the second and the fourth.
    pub trunk: Vec<ConvSpec>,
    pub pool: PoolSpec,
    /// Two dilated convolutions at the start of each head.
    pub dilated: Vec<ConvSpec>,
    /// Two transposed convolutions restoring the input resolution.
    pub upsample: Vec<ConvSpec>,
}

impl ModelConfig {
    pub const DEFAULT_INPUT_SIZE: usize = 300;
    pub const CONV_FILTERS: usize = 16;
    pub const DILATED_FILTERS: usize = 32;

    pub fn ggcnn(input_size: usize) -> Self {
        Self::with_filters(
            input_size,
            Variant::Ggcnn,
            AuxTask::None,
            Self::CONV_FILTERS,
            Self::DILATED_FILTERS,
        )
    }

    pub fn mtgcnn(input_size: usize, aux: AuxTask) -> Self {
        Self::with_filters(
            input_size,
            Variant::Mtgcnn,
            aux,
            Self::CONV_FILTERS,
            Self::DILATED_FILTERS,
        )
    }

    pub fn with_filters(
        input_size: usize,
        variant: Variant,
        aux: AuxTask,
        conv: usize,
        dilated: usize,
    ) -> Self {
        let c3 = |i, o| ConvSpec::new(i, o, 3).padding(1);
        Self {
            input_size,
            in_channels: 3,
            variant,
            auxiliary_task: aux,
            trunk: vec![c3(3, conv), c3(conv, conv), c3(conv, conv), c3(conv, conv)],
            pool: PoolSpec {
                window: 2,
                stride: 2,
            },
            dilated: vec![
                ConvSpec::new(conv, dilated, 5).dilation(2).padding(4),
                ConvSpec::new(dilated, dilated, 5).dilation(4).padding(8),
            ],
            upsample: vec![
                ConvSpec::new(dilated, conv, 4).stride(2).padding(1),
                ConvSpec::new(conv, conv, 4).stride(2).padding(1),
            ],
        }
    }

    /// Checks variant/task consistency, channel chaining and that the
    /// encoder-decoder returns to `input_size`.
    pub fn validate(&self) -> Result<()> {
        match (self.variant, self.auxiliary_task) {
            (Variant::Ggcnn, AuxTask::None) => {}
            (Variant::Ggcnn, aux) => {
                return Err(Error::Config(format!(
                    "ggcnn has no auxiliary head but task {aux} was requested"
                )))
            }
            (Variant::Mtgcnn, AuxTask::None) => {
                return Err(Error::Config(
                    "mtgcnn needs an auxiliary task (depth or saliency)".into(),
                ))
            }
            (Variant::Mtgcnn, _) => {}
        }
        if self.trunk.len() != 4 || self.dilated.len() != 2 || self.upsample.len() != 2 {
            return Err(Error::Config(format!(
                "expected 4 trunk, 2 dilated and 2 upsampling layers, got {}/{}/{}",
                self.trunk.len(),
                self.dilated.len(),
                self.upsample.len()
            )));
        }
        let mut channels = self.in_channels;
        let mut size = self.input_size;
        let chain = |spec: &ConvSpec, channels: usize, name: &str| -> Result<usize> {
            if spec.in_channels != channels {
                return Err(Error::Config(format!(
                    "{name} expects {} input channels but receives {channels}",
                    spec.in_channels
                )));
            }
            Ok(spec.out_channels)
        };
        let pooled = |size: usize| -> Result<usize> {
            if size < self.pool.window || self.pool.stride == 0 {
                return Err(Error::Config(format!(
                    "feature map of {size} too small for {:?}",
                    self.pool
                )));
            }
            Ok((size - self.pool.window) / self.pool.stride + 1)
        };
        for (i, spec) in self.trunk.iter().enumerate() {
            channels = chain(spec, channels, &format!("trunk.conv{}", i + 1))?;
            size = spec.output_size(size)?;
            if i % 2 == 1 {
                size = pooled(size)?;
            }
        }
        for (i, spec) in self.dilated.iter().enumerate() {
            channels = chain(spec, channels, &format!("dilated{}", i + 1))?;
            size = spec.output_size(size)?;
        }
        for (i, spec) in self.upsample.iter().enumerate() {
            channels = chain(spec, channels, &format!("up{}", i + 1))?;
            size = spec.transpose_output_size(size)?;
        }
        if size != self.input_size {
            return Err(Error::Config(format!(
                "layer stack maps a {0}x{0} input to {1}x{1} outputs",
                self.input_size, size
            )));
        }
        Ok(())
    }

    fn head_channels(&self) -> usize {
        self.upsample[1].out_channels
    }

    /// `(name, shape, fan_in)` of every parameter in construction order.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut layout = Vec::new();
        let conv = |layout: &mut Vec<_>, name: String, spec: &ConvSpec, transpose: bool| {
            let k = spec.kernel_size;
            let (shape, fan_in) = if transpose {
                // Each output sees in * k * k / stride^2 taps on average.
                let fan = (spec.in_channels * k * k / (spec.stride * spec.stride)).max(1);
                (spec.transpose_weight_shape(), fan)
            } else {
                (spec.weight_shape(), spec.in_channels * k * k)
            };
            layout.push((format!("{name}.weight"), shape.to_vec(), fan_in));
            layout.push((format!("{name}.bias"), vec![spec.out_channels], fan_in));
        };
        for (i, spec) in self.trunk.iter().enumerate() {
            conv(&mut layout, format!("trunk.conv{}", i + 1), spec, false);
        }
        let head = |layout: &mut Vec<_>, prefix: &str, outputs: &[&str]| {
            for (i, spec) in self.dilated.iter().enumerate() {
                conv(layout, format!("{prefix}.dilated{}", i + 1), spec, false);
            }
            for (i, spec) in self.upsample.iter().enumerate() {
                conv(layout, format!("{prefix}.up{}", i + 1), spec, true);
            }
            for out in outputs {
                conv(
                    layout,
                    format!("{prefix}.{out}"),
                    &ConvSpec::new(self.head_channels(), 1, 1),
                    false,
                );
            }
        };
        head(&mut layout, GRASP_PREFIX, &GRASP_OUTPUTS);
        if self.variant == Variant::Mtgcnn {
            head(&mut layout, AUX_PREFIX, &[AUX_OUTPUT]);
        }
        layout
    }
}

const GRASP_PREFIX: &str = "grasp";
const AUX_PREFIX: &str = "aux";
const GRASP_OUTPUTS: [&str; 4] = ["q", "cos", "sin", "width"];
const AUX_OUTPUT: &str = "out";

/// Pixelwise network outputs, each `[n, 1, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterMaps<T = f32> {
    pub q: Tensor<T>,
    pub cos: Tensor<T>,
    pub sin: Tensor<T>,
    pub width: Tensor<T>,
    pub aux: Option<Tensor<T>>,
}

impl<T: Float> ParameterMaps<T> {
    pub fn map_count(&self) -> usize {
        4 + usize::from(self.aux.is_some())
    }

    pub fn batch_size(&self) -> usize {
        self.q.shape()[0]
    }

    /// `(height, width)` of the maps.
    pub fn spatial(&self) -> (usize, usize) {
        let s = self.q.shape();
        (s[2], s[3])
    }

    pub fn batch_item(&self, index: usize) -> Result<Self> {
        Ok(Self {
            q: self.q.batch_item(index)?,
            cos: self.cos.batch_item(index)?,
            sin: self.sin.batch_item(index)?,
            width: self.width.batch_item(index)?,
            aux: self.aux.as_ref().map(|a| a.batch_item(index)).transpose()?,
        })
    }

    /// The grasp maps in `(name, map)` order, followed by the auxiliary map.
    pub fn named(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut maps = vec![
            ("q", &self.q),
            ("cos", &self.cos),
            ("sin", &self.sin),
            ("width", &self.width),
        ];
        if let Some(aux) = &self.aux {
            maps.push(("aux", aux));
        }
        maps
    }
}

/// Output maps recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TracedMaps {
    pub q: Var,
    pub cos: Var,
    pub sin: Var,
    pub width: Var,
    pub aux: Option<Var>,
}

/// Evaluation backend shared by inference and training.
trait Graph<T: Float> {
    type Value;

    fn weight(&mut self, params: &ParamSet<T>, name: &str) -> Result<Self::Value>;
    fn conv(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: &Self::Value,
        spec: &ConvSpec,
    ) -> Result<Self::Value>;
    fn conv_transpose(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: &Self::Value,
        spec: &ConvSpec,
    ) -> Result<Self::Value>;
    fn pool(&mut self, x: &Self::Value, pool: PoolSpec) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
}

struct Eager;

impl<T: Float> Graph<T> for Eager {
    type Value = Tensor<T>;

    fn weight(&mut self, params: &ParamSet<T>, name: &str) -> Result<Tensor<T>> {
        params
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("model is missing parameter {name}")))
    }

    fn conv(
        &mut self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: &Tensor<T>,
        spec: &ConvSpec,
    ) -> Result<Tensor<T>> {
        conv2d(x, w, b, spec)
    }

    fn conv_transpose(
        &mut self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: &Tensor<T>,
        spec: &ConvSpec,
    ) -> Result<Tensor<T>> {
        conv_transpose2d(x, w, b, spec)
    }

    fn pool(&mut self, x: &Tensor<T>, pool: PoolSpec) -> Result<Tensor<T>> {
        Ok(maxpool2d(x, pool.window, pool.stride)?.output)
    }

    fn relu(&mut self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.max(T::zero()))
    }
}

impl<T: Float> Graph<T> for Tape<T> {
    type Value = Var;

    fn weight(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        self.param(params, name)
    }

    fn conv(&mut self, x: &Var, w: &Var, b: &Var, spec: &ConvSpec) -> Result<Var> {
        self.conv2d(*x, *w, *b, spec)
    }

    fn conv_transpose(&mut self, x: &Var, w: &Var, b: &Var, spec: &ConvSpec) -> Result<Var> {
        self.conv_transpose2d(*x, *w, *b, spec)
    }

    fn pool(&mut self, x: &Var, pool: PoolSpec) -> Result<Var> {
        self.maxpool2d(*x, pool.window, pool.stride)
    }

    fn relu(&mut self, x: &Var) -> Var {
        Tape::relu(self, *x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    config: ModelConfig,
    params: ParamSet<T>,
}

impl<T: Float> Model<T> {
    /// Fresh model with He-uniform weights (bound `sqrt(6 / fan_in)`) and zero
    /// biases drawn from a ChaCha8 stream seeded with `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, fan_in) in config.layout() {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::uniform(shape, -bound, bound, &mut rng)
            };
            params.insert(name, tensor)?;
        }
        Ok(Self { config, params })
    }

    /// Assembles a model from stored weights, checking names and shapes
    /// against the configuration.
    pub fn from_parts(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "{} {} configuration needs {} tensors, checkpoint has {}",
                config.variant,
                config.auxiliary_task,
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (pname, tensor)) in layout.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != tensor.shape() {
                return Err(Error::Config(format!(
                    "configuration expects {name} {shape:?}, found {pname} {:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    /// Parameters of the auxiliary head alone; zero for single-branch models.
    pub fn auxiliary_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with("aux."))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok = matches!(shape, [n, c, h, w]
            if *n > 0 && *c == self.config.in_channels && *h == self.config.input_size && *w == self.config.input_size);
        if !ok {
            return Err(Error::Contract(format!(
                "model expects [n, {c}, {s}, {s}] images, got {shape:?}",
                c = self.config.in_channels,
                s = self.config.input_size,
            )));
        }
        Ok(())
    }

    fn run<G: Graph<T>>(
        &self,
        graph: &mut G,
        image: G::Value,
    ) -> Result<(Vec<G::Value>, Option<G::Value>)> {
        let p = &self.params;
        let layer = |graph: &mut G,
                     x: &G::Value,
                     name: &str,
                     spec: &ConvSpec,
                     transpose: bool,
                     relu: bool|
         -> Result<G::Value> {
            let w = graph.weight(p, &format!("{name}.weight"))?;
            let b = graph.weight(p, &format!("{name}.bias"))?;
            let y = if transpose {
                graph.conv_transpose(x, &w, &b, spec)?
            } else {
                graph.conv(x, &w, &b, spec)?
            };
            Ok(if relu { graph.relu(&y) } else { y })
        };

        let mut x = image;
        for (i, spec) in self.config.trunk.iter().enumerate() {
            x = layer(
                graph,
                &x,
                &format!("trunk.conv{}", i + 1),
                spec,
                false,
                true,
            )?;
            if i % 2 == 1 {
                x = graph.pool(&x, self.config.pool)?;
            }
        }
        let trunk = x;

        let head = |graph: &mut G, prefix: &str, outputs: &[&str]| -> Result<Vec<G::Value>> {
            let mut h = layer(
                graph,
                &trunk,
                &format!("{prefix}.dilated1"),
                &self.config.dilated[0],
                false,
                true,
            )?;
            h = layer(
                graph,
                &h,
                &format!("{prefix}.dilated2"),
                &self.config.dilated[1],
                false,
                true,
            )?;
            for (i, spec) in self.config.upsample.iter().enumerate() {
                h = layer(
                    graph,
                    &h,
                    &format!("{prefix}.up{}", i + 1),
                    spec,
                    true,
                    true,
                )?;
            }
            let out_spec = ConvSpec::new(self.config.head_channels(), 1, 1);
            outputs
                .iter()
                .map(|out| {
                    layer(
                        graph,
                        &h,
                        &format!("{prefix}.{out}"),
                        &out_spec,
                        false,
                        false,
                    )
                })
                .collect()
        };
        let grasp = head(graph, GRASP_PREFIX, &GRASP_OUTPUTS)?;
        let aux = match self.config.variant {
            Variant::Ggcnn => None,
            Variant::Mtgcnn => head(graph, AUX_PREFIX, &[AUX_OUTPUT])?.pop(),
        };
        Ok((grasp, aux))
    }

    /// Inference on an `[n, 3, s, s]` image batch.
    pub fn forward(&self, image: &Tensor<T>) -> Result<ParameterMaps<T>> {
        self.check_input(image.shape())?;
        let (grasp, aux) = self.run(&mut Eager, image.clone())?;
        let [q, cos, sin, width]: [Tensor<T>; 4] = grasp
            .try_into()
            .map_err(|_| Error::Contract("grasp head must emit four maps".into()))?;
        Ok(ParameterMaps {
            q,
            cos,
            sin,
            width,
            aux,
        })
    }

    /// Records the forward pass of `image` (already on `tape`).
    pub fn forward_traced(&self, tape: &mut Tape<T>, image: Var) -> Result<TracedMaps> {
        self.check_input(tape.value(image).shape())?;
        let (grasp, aux) = self.run(tape, image)?;
        Ok(TracedMaps {
            q: grasp[0],
            cos: grasp[1],
            sin: grasp[2],
            width: grasp[3],
            aux,
        })
    }

    /// Copy of a multi-task model with the auxiliary head removed.
    pub fn prune_auxiliary(&self) -> Result<Model<T>> {
        if self.config.variant != Variant::Mtgcnn {
            return Err(Error::Contract(format!(
                "only mtgcnn models have an auxiliary branch to prune, got {}",
                self.config.variant
            )));
        }
        let mut config = self.config.clone();
        config.variant = Variant::Ggcnn;
        config.auxiliary_task = AuxTask::None;
        let mut params = self.params.clone();
        params.retain(|name| !name.starts_with("aux."));
        Model::from_parts(config, params)
    }
}
