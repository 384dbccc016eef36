//! Reproducible training, evaluation, inference and synthetic-data runs.

pub mod commands;
pub mod config;
pub mod train;

pub use commands::{cmd_eval, cmd_infer, cmd_synth, EvalArgs, InferArgs, InferOutput, Split};
pub use config::{Command, RunConfig};
pub use train::{cmd_train, train_scenes, EpochRecord, TrainOutcome};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GRASPFORGE_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] when it is set.
pub fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("{THREADS_ENV}={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}
