use std::path::{Path, PathBuf};
use std::time::Instant;

use graspforge_core::dataset::{
    fit_to_input, load_dataset, normalize_rgb, read_rgb, synth_dataset, write_gray_png,
    write_manifest, write_scene, Image, SynthSpec,
};
use graspforge_core::eval::{evaluate_model, extract_grasp, ExtractOptions, GraspRectangle};
use graspforge_core::network::{AuxTask, Variant};
use graspforge_core::{
    Error, EvalReport, Model, ModelCheckpoint, ModelConfig, Result, SceneSample, Tensor,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::train::split_scenes;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// The model stored in `path` and the run configuration it was trained
/// with, if recorded.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<RunConfig>)> {
    let ckpt = ModelCheckpoint::<f32>::load(path)?;
    let run = ckpt
        .metadata
        .run_config
        .clone()
        .and_then(|v| serde_json::from_value::<RunConfig>(v).ok());
    Ok((ckpt.into_model()?, run))
}

/// Fails unless the checkpoint architecture is the requested one.
pub fn check_architecture(
    path: &Path,
    found: &ModelConfig,
    variant: Variant,
    aux: AuxTask,
) -> Result<()> {
    if (found.variant, found.auxiliary_task) != (variant, aux) {
        return Err(Error::Config(format!(
            "checkpoint {} holds {} with auxiliary task {}, but the run asks for {} with auxiliary task {}",
            path.display(),
            found.variant,
            found.auxiliary_task,
            variant,
            aux
        )));
    }
    Ok(())
}

/// Drops the auxiliary head of multi-task models; single-task models pass
/// through.
pub fn maybe_prune(model: Model, prune: bool) -> Result<Model> {
    if prune && model.config().variant == Variant::Mtgcnn {
        model.prune_auxiliary()
    } else {
        Ok(model)
    }
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    /// One checkpoint per fold; each is scored on its own fold.
    pub checkpoints: Vec<PathBuf>,
    pub data: PathBuf,
    pub split: Split,
    pub prune: bool,
    /// Architecture the caller expects, checked against each checkpoint.
    pub expect: Option<(Variant, AuxTask)>,
    /// Directory for `report_<split>.txt`.
    pub out: Option<PathBuf>,
}

/// Scores checkpoints on already loaded scenes.
pub fn eval_scenes(args: &EvalArgs, scenes: &[SceneSample]) -> Result<EvalReport> {
    if args.checkpoints.is_empty() {
        return Err(Error::Config("no checkpoint to evaluate".into()));
    }
    let mut reports = Vec::new();
    for path in &args.checkpoints {
        let (model, run) = load_checkpoint(path)?;
        if let Some((variant, aux)) = args.expect {
            check_architecture(path, model.config(), variant, aux)?;
        }
        let run = run.unwrap_or_else(|| RunConfig::for_input_size(model.config().input_size));
        if run.input_size != model.config().input_size {
            return Err(Error::Config(format!(
                "checkpoint {} has input size {} but its run config says {}",
                path.display(),
                model.config().input_size,
                run.input_size
            )));
        }
        let model = maybe_prune(model, args.prune)?;
        let splits = split_scenes(&run, scenes)?;
        let set = match args.split {
            Split::Train => &splits.train,
            Split::Validation => &splits.validation,
            Split::Test => &splits.test,
        };
        let label = format!("fold{}-{}", run.fold, args.split);
        reports.push((run.fold, evaluate_model(&model, set, &run.extract, &label)?));
    }
    let report = if reports.len() == 1 {
        reports.pop().expect("one report").1
    } else {
        EvalReport::combine_folds(format!("{}-folds-{}", reports.len(), args.split), &reports)?
    };
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let path = dir.join(format!("report_{}.txt", args.split));
        std::fs::write(&path, report.to_text()).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(report)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let scenes = load_dataset(&args.data)?;
    eval_scenes(args, &scenes)
}

#[derive(Clone, Debug)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    /// Directory receiving one grayscale PNG per output map.
    pub export_maps: Option<PathBuf>,
    pub repeat: usize,
    pub prune: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferOutput {
    /// In the coordinates of the source image.
    pub grasp: GraspRectangle,
    pub latencies_ms: Vec<f64>,
    pub exported: Vec<PathBuf>,
}

/// `(min, median, p99)` of `samples`, nearest-rank.
pub fn latency_stats(samples: &[f64]) -> Option<(f64, f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
    Some((s[0], rank(0.5), rank(0.99)))
}

impl InferOutput {
    pub fn to_text(&self) -> String {
        let g = &self.grasp;
        let mut s = format!(
            "grasp x={:.3} y={:.3} phi={:.6} width={:.3} jaw={:.3}\n",
            g.center.0, g.center.1, g.phi, g.width, g.jaw
        );
        if let Some((min, median, p99)) = latency_stats(&self.latencies_ms) {
            s += &format!("latency_runs={}\n", self.latencies_ms.len());
            s += &format!("latency_min_ms={min:.3}\n");
            s += &format!("latency_median_ms={median:.3}\n");
            s += &format!("latency_p99_ms={p99:.3}\n");
        }
        for p in &self.exported {
            s += &format!("map {}\n", p.display());
        }
        s
    }
}

/// Maps `v` from `[lo, hi]` to 8 bits.
fn to_gray(values: &[f32], lo: f32, hi: f32) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Times forward plus extraction of a prepared `(1, 3, n, n)` input.
pub fn time_inference(
    model: &Model,
    input: &Tensor,
    options: &ExtractOptions,
    repeat: usize,
) -> Result<Vec<f64>> {
    (0..repeat)
        .map(|_| {
            let start = Instant::now();
            let maps = model.forward(input)?;
            extract_grasp(&maps, options)?;
            Ok(start.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

/// Runs the model on one image file.
pub fn cmd_infer(args: &InferArgs) -> Result<InferOutput> {
    let rgb = read_rgb(&args.image)?;
    let (model, run) = load_checkpoint(&args.checkpoint)?;
    let model = maybe_prune(model, args.prune)?;
    let size = model.config().input_size;
    let options = run
        .map(|r| r.extract)
        .unwrap_or_else(|| ExtractOptions::for_input_size(size));
    infer_image(&model, &rgb, &options, args)
}

pub fn infer_image(
    model: &Model,
    rgb: &Image,
    options: &ExtractOptions,
    args: &InferArgs,
) -> Result<InferOutput> {
    let size = model.config().input_size;
    let (w, h) = (rgb.width(), rgb.height());
    let side = w.min(h) as f64;
    let (x0, y0) = ((w as f64 - side) / 2.0, (h as f64 - side) / 2.0);
    let wrapped = SceneSample {
        scene_id: String::new(),
        object_id: String::new(),
        rgb: rgb.clone(),
        depth: Image::filled(1, h, w, 0.0),
        mask: Image::filled(1, h, w, 0.0),
        grasps: Vec::new(),
    };
    let input = normalize_rgb(&fit_to_input(&wrapped, size).rgb);
    let maps = model.forward(&input)?;
    let g = extract_grasp(&maps, options)?;
    let scale = side / size as f64;
    let grasp = GraspRectangle::new(
        (x0 + g.center.0 * scale, y0 + g.center.1 * scale),
        g.phi,
        g.width * scale,
        g.jaw * scale,
    );

    let mut exported = Vec::new();
    if let Some(dir) = &args.export_maps {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (name, map) in maps.named() {
            let (lo, hi) = if name == "cos" || name == "sin" {
                (-1.0, 1.0)
            } else {
                (0.0, 1.0)
            };
            let path = dir.join(format!("map_{name}.png"));
            write_gray_png(&path, size, size, to_gray(map.data(), lo, hi))?;
            exported.push(path);
        }
    }
    let latencies_ms = time_inference(model, &input, options, args.repeat)?;
    Ok(InferOutput {
        grasp,
        latencies_ms,
        exported,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SynthRecord {
    spec: SynthSpec,
    count: usize,
    seed: u64,
}

pub const SYNTH_SPEC_FILE: &str = "synth_spec.json";

/// Writes `count` synthetic scenes in the Jacquard layout plus a manifest.
pub fn cmd_synth(
    spec: &SynthSpec,
    count: usize,
    seed: u64,
    outdir: &Path,
) -> Result<Vec<SceneSample>> {
    let scenes = synth_dataset(spec, count, seed)?;
    std::fs::create_dir_all(outdir).map_err(|e| Error::Io {
        path: outdir.to_path_buf(),
        source: e,
    })?;
    for s in &scenes {
        write_scene(outdir, s)?;
    }
    let entries: Vec<(String, String)> = scenes
        .iter()
        .map(|s| (s.scene_id.clone(), s.object_id.clone()))
        .collect();
    write_manifest(outdir, &entries)?;
    let record = SynthRecord {
        spec: spec.clone(),
        count,
        seed,
    };
    let path = outdir.join(SYNTH_SPEC_FILE);
    let text = serde_json::to_string_pretty(&record).expect("json") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    Ok(scenes)
}
