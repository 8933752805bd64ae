//! Run artifacts: the learning-curve CSV and the metadata file that pins
//! every knob a run depended on.

use std::path::Path;

use serde::Serialize;

use crate::envs::{EnvOptions, Variant};

use super::{CurvePoint, Hyper, LearningCurve, TrainOptions, TrainerError, RMSPROP_DECAY, RMSPROP_EPSILON};

/// Everything needed to reproduce or audit a run. Budgets count agent
/// decisions; the environment's `action_repeat` is recorded so environment
/// ticks can be recovered.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub version: String,
    pub task: String,
    pub column: usize,
    pub budget_steps: u64,
    /// Written in hex: seeds use the full 64-bit range, which the
    /// metadata file's integer type cannot hold.
    #[serde(serialize_with = "hex_u64")]
    pub seed: u64,
    pub eval_window: u64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub env: EnvOptions,
    pub hyper: Hyper,
}

impl RunMeta {
    pub fn new(
        task: &Variant,
        hyper: &Hyper,
        opts: &TrainOptions,
        column: usize,
        budget_steps: u64,
    ) -> Self {
        RunMeta {
            version: format!("prognet-core {}", env!("CARGO_PKG_VERSION")),
            task: task.kind().to_string(),
            column,
            budget_steps,
            seed: opts.seed,
            eval_window: opts.eval_window,
            rmsprop_decay: RMSPROP_DECAY,
            rmsprop_epsilon: RMSPROP_EPSILON,
            env: opts.env_opts.clone(),
            hyper: hyper.clone(),
        }
    }
}

fn hex_u64<S: serde::Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:#018x}"))
}

pub fn write_metadata(path: &Path, meta: &RunMeta) -> Result<(), TrainerError> {
    let text = toml::to_string_pretty(meta)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes one row per curve point with a header row; floats use Rust's
/// shortest round-trip formatting, so reading the file back is lossless.
pub fn write_curve_csv(path: &Path, curve: &LearningCurve) -> Result<(), TrainerError> {
    let mut w = csv::Writer::from_path(path)?;
    for point in &curve.points {
        w.serialize(point)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a curve written by [`write_curve_csv`]. The window length is not a
/// CSV column; it is inferred from the first point's step count (exact for
/// every run whose first window closed on its boundary).
pub fn read_curve_csv(path: &Path) -> Result<LearningCurve, TrainerError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut points: Vec<CurvePoint> = Vec::new();
    for row in r.deserialize() {
        points.push(row?);
    }
    let window = points.first().map_or(0, |p| p.agent_steps);
    Ok(LearningCurve { window, points })
}
