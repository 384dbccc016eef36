use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use graspforge_core::dataset::{
    augment, ground_truth, kfold_split, load_dataset, normalize_rgb, Fold,
};
use graspforge_core::eval::{evaluate_model, prepare_sample};
use graspforge_core::loss::traced_loss;
use graspforge_core::network::TrainingMetadata;
use graspforge_core::tensor::{Adam, AdamConfig, Tape};
use graspforge_core::{
    Error, GroundTruthMaps, LossBreakdown, Model, ModelCheckpoint, Result, SceneSample, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.gfc";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.gfc";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
const METRICS_HEADER: &str =
    "epoch,loss_total,loss_q,loss_cos,loss_sin,loss_width,loss_aux,val_success";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub val_success: f64,
}

impl EpochRecord {
    fn csv(&self) -> String {
        let aux = self.loss.aux.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss.total,
            self.loss.q,
            self.loss.cos,
            self.loss.sin,
            self.loss.width,
            aux,
            self.val_success
        )
    }
}

pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub model: Model,
    pub out: PathBuf,
}

impl TrainOutcome {
    pub fn final_val_success(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_success)
    }
}

/// Scenes of one fold split.
pub struct Splits {
    pub fold: Fold,
    pub train: Vec<SceneSample>,
    pub validation: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
}

pub fn split_scenes(config: &RunConfig, scenes: &[SceneSample]) -> Result<Splits> {
    let ids: Vec<&str> = scenes.iter().map(|s| s.object_id.as_str()).collect();
    let fold = kfold_split(&ids, config.folds, config.split_seed)?
        .into_iter()
        .nth(config.fold)
        .ok_or_else(|| Error::Config(format!("fold {} out of range", config.fold)))?;
    let pick = |ids: &[String]| -> Vec<SceneSample> {
        let set: HashSet<&str> = ids.iter().map(String::as_str).collect();
        scenes
            .iter()
            .filter(|s| set.contains(s.object_id.as_str()))
            .cloned()
            .collect()
    };
    Ok(Splits {
        train: pick(&fold.train),
        validation: pick(&fold.validation),
        test: pick(&fold.test),
        fold,
    })
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sums loss breakdowns; `aux` stays `None` unless every term has one.
fn accumulate(acc: &mut Option<LossBreakdown>, l: &LossBreakdown) {
    match acc {
        None => *acc = Some(*l),
        Some(a) => {
            a.q += l.q;
            a.cos += l.cos;
            a.sin += l.sin;
            a.width += l.width;
            a.aux = a.aux.zip(l.aux).map(|(x, y)| x + y);
            a.total += l.total;
        }
    }
}

fn scaled(l: LossBreakdown, n: usize) -> LossBreakdown {
    let d = n as f64;
    LossBreakdown {
        q: l.q / d,
        cos: l.cos / d,
        sin: l.sin / d,
        width: l.width / d,
        aux: l.aux.map(|a| a / d),
        total: l.total / d,
    }
}

struct Artifacts {
    out: PathBuf,
    metrics: PathBuf,
}

impl Artifacts {
    fn create(config: &RunConfig) -> Result<Self> {
        let out = config.out.clone();
        std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
        let json = config.to_json();
        let cfg_path = out.join(RUN_CONFIG_FILE);
        let pretty = serde_json::to_string_pretty(&json).expect("json");
        std::fs::write(&cfg_path, pretty + "\n").map_err(|e| io_error(&cfg_path, e))?;
        let metrics = out.join(METRICS_FILE);
        let head = format!("# run_config={json}\n{METRICS_HEADER}\n");
        std::fs::write(&metrics, head).map_err(|e| io_error(&metrics, e))?;
        Ok(Self { out, metrics })
    }

    fn append(&self, record: &EpochRecord) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.metrics)
            .map_err(|e| io_error(&self.metrics, e))?;
        writeln!(f, "{}", record.csv()).map_err(|e| io_error(&self.metrics, e))
    }

    fn save(&self, name: &str, model: &Model, config: &RunConfig, epoch: usize) -> Result<()> {
        let metadata = TrainingMetadata {
            epoch: epoch as u64,
            seed: config.seed,
            loss: config.loss.to_string(),
            run_config: Some(config.to_json()),
        };
        // Write then rename so an interrupted save never clobbers the last good file.
        let path = self.out.join(name);
        let tmp = self.out.join(format!("{name}.tmp"));
        ModelCheckpoint::from_model(model, metadata).save(&tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| io_error(&path, e))
    }
}

/// One batch as network input and targets.
fn make_batch(
    config: &RunConfig,
    scenes: &[&SceneSample],
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, GroundTruthMaps)> {
    let mut inputs = Vec::with_capacity(scenes.len());
    let mut targets = Vec::with_capacity(scenes.len());
    for s in scenes {
        let sample = match &config.augment {
            Some(p) => augment(s, rng, p)?,
            None => prepare_sample(s, config.input_size),
        };
        inputs.push(normalize_rgb(&sample.rgb));
        targets.push(ground_truth(&sample, config.aux)?);
    }
    Ok((Tensor::stack(&inputs)?, GroundTruthMaps::stack(&targets)?))
}

/// Trains on the configured fold of `scenes`, writing checkpoints and the
/// metrics log under `config.out`.
pub fn train_scenes(config: &RunConfig, scenes: &[SceneSample]) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = split_scenes(config, scenes)?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(Error::Config(format!(
            "fold {} leaves {} training and {} validation scenes",
            config.fold,
            splits.train.len(),
            splits.validation.len()
        )));
    }
    let artifacts = Artifacts::create(config)?;

    let mut model = Model::build(config.model_config()?, config.seed)?;
    let adam_config = AdamConfig {
        learning_rate: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_config, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);

    artifacts.save(FINAL_CHECKPOINT, &model, config, 0)?;
    artifacts.save(BEST_CHECKPOINT, &model, config, 0)?;
    let validation: Vec<SceneSample> = splits
        .validation
        .iter()
        .map(|s| prepare_sample(s, config.input_size))
        .collect();

    let mut records = Vec::with_capacity(config.epochs);
    let mut best = (0, f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = None;
        let mut batches = 0;
        for chunk in order.chunks(config.batch) {
            let scenes: Vec<&SceneSample> = chunk.iter().map(|&i| &splits.train[i]).collect();
            let (input, gt) = make_batch(config, &scenes, &mut rng)?;
            let mut tape = Tape::new();
            let x = tape.input(input);
            let maps = model.forward_traced(&mut tape, x)?;
            let loss = traced_loss(&mut tape, config.loss, &maps, &gt)?;
            let breakdown = loss.breakdown(&tape);
            if !breakdown.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {} at epoch {epoch}, batch {batches}; last good checkpoint kept in {}",
                    breakdown.total,
                    artifacts.out.display()
                )));
            }
            let grads = tape.backward(loss.total, model.params())?;
            adam.step(model.params_mut(), &grads.params)?;
            accumulate(&mut sum, &breakdown);
            batches += 1;
        }
        let report = evaluate_model(&model, &validation, &config.extract, "validation")?;
        let record = EpochRecord {
            epoch,
            loss: scaled(sum.expect("at least one batch"), batches),
            val_success: report.success_rate(),
        };
        artifacts.append(&record)?;
        artifacts.save(FINAL_CHECKPOINT, &model, config, epoch)?;
        if record.val_success > best.1 {
            best = (epoch, record.val_success);
            artifacts.save(BEST_CHECKPOINT, &model, config, epoch)?;
        }
        records.push(record);
    }
    Ok(TrainOutcome {
        records,
        best_epoch: best.0,
        model,
        out: artifacts.out,
    })
}

/// Loads the dataset at `config.data` and trains on it.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let scenes = load_dataset(&config.data)?;
    train_scenes(config, &scenes)
}
