//! Experiment orchestration: the four transfer baselines, multi-column
//! progressive runs, seeded sweeps with top-k scoring, and transfer
//! matrices assembled from per-cell results.
//!
//! Every run is a pure function of its [`RunSpec`]: column
//! initialization, per-stage training streams, and head re-initialization
//! all derive from the run seed, so sweeps reproduce bit-for-bit no matter
//! how jobs are scheduled. A sweep scores each job by the shifted area
//! under its target-task learning curve, averages the best `top_k`, and
//! divides by the identical statistic for single-column training from
//! scratch on the same job seeds.

use std::collections::BTreeSet;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::analysis::{curve_area, AnalysisError};
use crate::envs::{EnvOptions, MiniCatch, Variant, VariantKind};
use crate::net::{NetError, NetSpec, ProgressiveNetwork};
use crate::seeds;
use crate::trainer::{sample_hyper, train, Hyper, LearningCurve, TrainOptions, TrainerError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("matrix file: {0}")]
    MatrixFormat(String),
}

// ── Architectures ───────────────────────────────────────────────────────

/// The five training setups compared on every transfer pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Single column trained on the target from scratch; the reference
    /// every score is measured against.
    Baseline1,
    /// Single column pretrained on the source, heads re-drawn, then only
    /// the heads trained on the target.
    Baseline2,
    /// Single column pretrained on the source, heads re-drawn, then the
    /// whole column trained on the target.
    Baseline3,
    /// Two columns where the first is random and frozen — the progressive
    /// wiring without the pretrained knowledge.
    Baseline4,
    /// One frozen, pretrained column per source, plus a fresh column
    /// trained on the target through lateral adapters.
    Progressive,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Baseline1,
        Architecture::Baseline2,
        Architecture::Baseline3,
        Architecture::Baseline4,
        Architecture::Progressive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Baseline1 => "baseline1",
            Architecture::Baseline2 => "baseline2",
            Architecture::Baseline3 => "baseline3",
            Architecture::Baseline4 => "baseline4",
            Architecture::Progressive => "progressive",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown architecture {s:?}"))
    }
}

// ── Experiment configuration ────────────────────────────────────────────

/// One transfer cell's worth of work, as read from a config file: which
/// architecture to run, on which source/target tasks, and how the sweep
/// is sized and seeded.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Schema version; this build reads version 1.
    pub version: u32,
    pub architecture: Architecture,
    /// Source task names, in training order. Must be empty for baseline1,
    /// exactly one for baselines 2–4, nonempty for progressive.
    pub sources: Vec<String>,
    pub target: String,
    /// Agent steps per training stage.
    pub budget: u64,
    pub n_jobs: usize,
    /// Jobs averaged into each side of the score (best `top_k` by area).
    pub top_k: usize,
    /// Root seed; job seeds, hyperparameter draws, and every stream inside
    /// a run derive from it.
    pub seed: u64,
    /// Draw each job's hyperparameters from the search grids instead of
    /// using the tuned defaults.
    pub sample_hyper: bool,
    pub eval_window: u64,
    pub env: EnvOptions,
    /// Artifact root; per-job files land in `<out_dir>/<arch>/job<j>/`.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: 1,
            architecture: Architecture::Baseline1,
            sources: Vec::new(),
            target: "base".to_string(),
            budget: 300_000,
            n_jobs: 5,
            top_k: 3,
            seed: 0,
            sample_hyper: false,
            eval_window: 5_000,
            env: EnvOptions::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.version != 1 {
            return fail(format!("unsupported config version {}", self.version));
        }
        match (self.architecture, self.sources.len()) {
            (Architecture::Baseline1, 0) => {}
            (Architecture::Baseline1, n) => {
                return fail(format!("baseline1 trains from scratch and takes no sources, got {n}"))
            }
            (Architecture::Baseline2 | Architecture::Baseline3 | Architecture::Baseline4, 1) => {}
            (a @ (Architecture::Baseline2 | Architecture::Baseline3 | Architecture::Baseline4), n) => {
                return fail(format!("{a} takes exactly one source, got {n}"))
            }
            (Architecture::Progressive, 0) => {
                return fail("progressive needs at least one source".to_string())
            }
            (Architecture::Progressive, _) => {}
        }
        for name in self.sources.iter().chain([&self.target]) {
            if name.parse::<VariantKind>().is_err() {
                let known: Vec<&str> = VariantKind::ALL.iter().map(|k| k.name()).collect();
                return fail(format!("unknown task {name:?}; known tasks: {}", known.join(", ")));
            }
        }
        if self.top_k == 0 || self.n_jobs < self.top_k {
            return fail(format!(
                "need n_jobs >= top_k >= 1, got n_jobs {} top_k {}",
                self.n_jobs, self.top_k
            ));
        }
        if self.eval_window == 0 || self.budget < 2 * self.eval_window {
            return fail(format!(
                "budget {} gives fewer than two curve points at window {}; areas need two",
                self.budget, self.eval_window
            ));
        }
        Ok(())
    }

    /// Label used for this cell's matrix row: the source chain, or
    /// "scratch" when there is none.
    pub fn source_label(&self) -> String {
        if self.sources.is_empty() {
            "scratch".to_string()
        } else {
            self.sources.join("+")
        }
    }
}

// ── Single runs ─────────────────────────────────────────────────────────

/// Everything one job needs: the network shape, the task chain, and the
/// seed from which all of its randomness derives.
///
/// Derivation layout (per run seed): column `s` initializes from
/// `derive_indexed(seed, "column", s)`, training stage `s` rolls out with
/// `derive_indexed(seed, "stage", s)`, and the head re-draw of baselines
/// 2/3 uses `derive(seed, "heads")`.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub net: NetSpec,
    pub sources: Vec<VariantKind>,
    pub target: VariantKind,
    /// Agent steps per training stage.
    pub budget: u64,
    pub seed: u64,
    pub hyper: Hyper,
    pub env: EnvOptions,
    pub eval_window: u64,
    /// When set, each pretraining stage logs under
    /// `<dir>/stage<s>-<task>/` and the target stage logs into `<dir>`
    /// itself.
    pub dir: Option<PathBuf>,
}

/// A finished run: the target-task learning curve (the thing sweeps
/// score) and the network it produced.
pub struct RunOutcome {
    pub curve: LearningCurve,
    pub net: ProgressiveNetwork,
}

/// The task instance behind a task name. The variant seed is a pure
/// function of the name, so "noisy" is the same noise mask in every job,
/// cell, and process.
pub fn task_variant(kind: VariantKind) -> Variant {
    Variant::new(kind, seeds::derive(0, kind.name()))
}

fn column_seed(seed: u64, stage: usize) -> u64 {
    seeds::derive_indexed(seed, "column", stage as u64)
}

fn stage_options(spec: &RunSpec, stage: usize, task: VariantKind, is_target: bool) -> TrainOptions {
    let dir = spec.dir.as_ref().map(|d| {
        if is_target {
            d.clone()
        } else {
            d.join(format!("stage{}-{}", stage + 1, task.name()))
        }
    });
    TrainOptions {
        seed: seeds::derive_indexed(spec.seed, "stage", stage as u64),
        env_opts: spec.env.clone(),
        eval_window: spec.eval_window,
        log_dir: dir,
        trainable: None,
    }
}

fn train_stage(
    net: &mut ProgressiveNetwork,
    spec: &RunSpec,
    stage: usize,
    task: VariantKind,
    is_target: bool,
    trainable: Option<BTreeSet<crate::net::ParamId>>,
) -> Result<LearningCurve, HarnessError> {
    let mut opts = stage_options(spec, stage, task, is_target);
    opts.trainable = trainable;
    let column = net.n_columns();
    Ok(train(net, column, &task_variant(task), &spec.hyper, spec.budget, &opts)?)
}

/// Single column trained on the target from scratch.
pub fn run_baseline1(spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    let mut net = ProgressiveNetwork::new(spec.net.clone(), column_seed(spec.seed, 0))?;
    let curve = train_stage(&mut net, spec, 0, spec.target, true, None)?;
    Ok(RunOutcome { curve, net })
}

/// Pretrains a single column on the source task, then re-draws its heads
/// for the target. Shared front half of baselines 2 and 3.
fn pretrained_column(spec: &RunSpec) -> Result<ProgressiveNetwork, HarnessError> {
    let source = spec.sources[0];
    let mut net = ProgressiveNetwork::new(spec.net.clone(), column_seed(spec.seed, 0))?;
    train_stage(&mut net, spec, 0, source, false, None)?;
    net.reinit_heads(seeds::derive(spec.seed, "heads"));
    Ok(net)
}

/// Source-pretrained column, target training restricted to the heads.
pub fn run_baseline2(spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    let mut net = pretrained_column(spec)?;
    let heads: BTreeSet<_> = net.head_params().into_iter().collect();
    let curve = train_stage(&mut net, spec, 1, spec.target, true, Some(heads))?;
    Ok(RunOutcome { curve, net })
}

/// Source-pretrained column, target training over every parameter.
pub fn run_baseline3(spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    let mut net = pretrained_column(spec)?;
    let curve = train_stage(&mut net, spec, 1, spec.target, true, None)?;
    Ok(RunOutcome { curve, net })
}

/// Two-column progressive wiring whose first column is random and frozen:
/// the adapter capacity without the pretrained knowledge. The single
/// configured source names the matrix row; it is never trained on.
pub fn run_baseline4(spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    let mut net = ProgressiveNetwork::new(spec.net.clone(), column_seed(spec.seed, 0))?;
    net.add_column(column_seed(spec.seed, 1), spec.hyper.alpha_init)?;
    let curve = train_stage(&mut net, spec, 1, spec.target, true, None)?;
    Ok(RunOutcome { curve, net })
}

/// Full progressive chain: one column per source in order, each frozen
/// once trained, then a fresh column trained on the target.
pub fn run_progressive(spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    let mut net = ProgressiveNetwork::new(spec.net.clone(), column_seed(spec.seed, 0))?;
    for (stage, &source) in spec.sources.iter().enumerate() {
        if stage > 0 {
            net.add_column(column_seed(spec.seed, stage), spec.hyper.alpha_init)?;
        }
        train_stage(&mut net, spec, stage, source, false, None)?;
    }
    let target_stage = spec.sources.len();
    net.add_column(column_seed(spec.seed, target_stage), spec.hyper.alpha_init)?;
    let curve = train_stage(&mut net, spec, target_stage, spec.target, true, None)?;
    Ok(RunOutcome { curve, net })
}

/// Dispatches one run by architecture.
pub fn run_one(architecture: Architecture, spec: &RunSpec) -> Result<RunOutcome, HarnessError> {
    match architecture {
        Architecture::Baseline1 => run_baseline1(spec),
        Architecture::Baseline2 => run_baseline2(spec),
        Architecture::Baseline3 => run_baseline3(spec),
        Architecture::Baseline4 => run_baseline4(spec),
        Architecture::Progressive => run_progressive(spec),
    }
}

// ── Sweeps ──────────────────────────────────────────────────────────────

/// One job inside a sweep: its pre-assigned seed and hyperparameters, and
/// either the target-task curve or the error that ended it.
pub struct Job {
    pub index: usize,
    pub seed: u64,
    pub hyper: Hyper,
    pub outcome: Result<LearningCurve, String>,
}

pub struct Sweep {
    pub architecture: Architecture,
    pub jobs: Vec<Job>,
}

/// Seed for job `j` of a sweep rooted at `root`.
pub fn job_seed(root: u64, job: usize) -> u64 {
    seeds::derive_indexed(root, "job", job as u64)
}

/// Hyperparameters for job `j`: the tuned defaults, or a grid draw when
/// the config asks for sampling.
pub fn job_hyper(cfg: &ExperimentConfig, job: usize) -> Hyper {
    if cfg.sample_hyper {
        sample_hyper(seeds::derive_indexed(cfg.seed, "hyper", job as u64))
    } else {
        Hyper::default()
    }
}

/// Parallelism cap for sweep jobs: the PROGNET_THREADS environment
/// variable when set, otherwise the machine's available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("PROGNET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

fn run_spec_for_job(
    cfg: &ExperimentConfig,
    net: &NetSpec,
    architecture: Architecture,
    job: usize,
) -> RunSpec {
    let sources: Vec<VariantKind> = if architecture == Architecture::Baseline1 {
        Vec::new()
    } else {
        cfg.sources.iter().map(|s| s.parse().expect("validated task name")).collect()
    };
    RunSpec {
        net: net.clone(),
        sources,
        target: cfg.target.parse().expect("validated task name"),
        budget: cfg.budget,
        seed: job_seed(cfg.seed, job),
        hyper: job_hyper(cfg, job),
        env: cfg.env.clone(),
        eval_window: cfg.eval_window,
        dir: cfg
            .out_dir
            .as_ref()
            .map(|d| d.join(architecture.name()).join(format!("job{job}"))),
    }
}

/// Runs `cfg.n_jobs` independent jobs of `architecture` on the configured
/// cell, fanned out over at most [`thread_cap`] threads. Job seeds are
/// assigned before dispatch, so scheduling cannot change any result.
pub fn sweep_architecture(
    cfg: &ExperimentConfig,
    net: &NetSpec,
    architecture: Architecture,
) -> Result<Sweep, HarnessError> {
    sweep_architecture_threads(cfg, net, architecture, thread_cap())
}

/// [`sweep_architecture`] with an explicit thread count — the results
/// must not depend on it, and the tests hold this to account.
pub fn sweep_architecture_threads(
    cfg: &ExperimentConfig,
    net: &NetSpec,
    architecture: Architecture,
    n_threads: usize,
) -> Result<Sweep, HarnessError> {
    cfg.validate()?;
    let specs: Vec<RunSpec> =
        (0..cfg.n_jobs).map(|j| run_spec_for_job(cfg, net, architecture, j)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_threads.max(1).min(cfg.n_jobs.max(1)))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let jobs: Vec<Job> = pool.install(|| {
        specs
            .into_par_iter()
            .enumerate()
            .map(|(index, spec)| Job {
                index,
                seed: spec.seed,
                hyper: spec.hyper.clone(),
                outcome: run_one(architecture, &spec)
                    .map(|o| o.curve)
                    .map_err(|e| e.to_string()),
            })
            .collect()
    });
    Ok(Sweep { architecture, jobs })
}

/// The configured sweep (`cfg.architecture`).
pub fn sweep(cfg: &ExperimentConfig, net: &NetSpec) -> Result<Sweep, HarnessError> {
    sweep_architecture(cfg, net, cfg.architecture)
}

// ── Scoring ─────────────────────────────────────────────────────────────

/// A scored transfer cell: per-job areas on both sides, the top-k ratio,
/// and anything that went wrong on the way.
///
/// Serialized as TOML; absent jobs appear as `nan` in the area lists and
/// an undefined score is simply omitted.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CellScore {
    pub architecture: Architecture,
    pub source: String,
    pub target: String,
    /// 100 × top-k mean area / matching baseline statistic; `None` when
    /// either side had no surviving jobs or the baseline area is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Shifted curve areas per job; `None` marks a failed job.
    #[serde(with = "area_list")]
    pub arch_areas: Vec<Option<f64>>,
    #[serde(with = "area_list")]
    pub baseline_areas: Vec<Option<f64>>,
    pub flags: Vec<String>,
}

/// `Vec<Option<f64>>` ⇄ a plain float list with `nan` standing in for
/// failed jobs, since the cell files' format has no null.
mod area_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Option<f64>], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<f64> = v.iter().map(|a| a.unwrap_or(f64::NAN)).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<f64>>, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        Ok(raw.into_iter().map(|a| if a.is_nan() { None } else { Some(a) }).collect())
    }
}

fn job_areas(sweep: &Sweep, min_score: f64, flags: &mut Vec<String>) -> Vec<Option<f64>> {
    sweep
        .jobs
        .iter()
        .map(|job| match &job.outcome {
            Ok(curve) => match curve_area(curve, min_score) {
                Ok(area) => Some(area),
                Err(e) => {
                    flags.push(format!(
                        "{} job {}: unscorable curve: {e}",
                        sweep.architecture, job.index
                    ));
                    None
                }
            },
            Err(e) => {
                flags.push(format!("{} job {}: failed: {e}", sweep.architecture, job.index));
                None
            }
        })
        .collect()
}

/// Mean of the `top_k` largest surviving areas; falls back to every
/// survivor (with a flag) when fewer than `top_k` remain.
fn top_k_mean(
    areas: &[Option<f64>],
    top_k: usize,
    label: &str,
    flags: &mut Vec<String>,
) -> Option<f64> {
    let mut alive: Vec<f64> = areas.iter().flatten().copied().collect();
    if alive.is_empty() {
        flags.push(format!("{label}: no surviving jobs"));
        return None;
    }
    if alive.len() < top_k {
        flags.push(format!(
            "{label}: only {} of {} jobs survived; averaging all survivors",
            alive.len(),
            top_k
        ));
    }
    alive.sort_by(|a, b| b.partial_cmp(a).expect("areas are finite"));
    let take = top_k.min(alive.len());
    Some(alive[..take].iter().sum::<f64>() / take as f64)
}

/// Scores an architecture sweep against a baseline sweep run on the same
/// job seeds: both sides use the same budget, window, area protocol, and
/// top-k statistic. When the scored sweep *is* the baseline, the ratio is
/// exactly 100.
pub fn score_sweep(
    cfg: &ExperimentConfig,
    arch: &Sweep,
    baseline: &Sweep,
) -> Result<CellScore, HarnessError> {
    let min_score =
        MiniCatch::new(task_variant(cfg.target.parse().expect("validated task name")), cfg.env.clone())
            .min_episode_return();
    let mut flags = Vec::new();
    let arch_areas = job_areas(arch, min_score, &mut flags);
    let baseline_areas = if std::ptr::eq(arch, baseline) {
        arch_areas.clone()
    } else {
        job_areas(baseline, min_score, &mut flags)
    };
    let arch_stat = top_k_mean(&arch_areas, cfg.top_k, arch.architecture.name(), &mut flags);
    let base_stat = top_k_mean(&baseline_areas, cfg.top_k, "baseline1", &mut flags);
    let score = match (arch_stat, base_stat) {
        (Some(a), Some(b)) if b > 0.0 => Some(100.0 * a / b),
        (Some(_), Some(_)) => {
            flags.push("baseline1 area is zero; ratio undefined".to_string());
            None
        }
        _ => None,
    };
    Ok(CellScore {
        architecture: arch.architecture,
        source: cfg.source_label(),
        target: cfg.target.clone(),
        score,
        arch_areas,
        baseline_areas,
        flags,
    })
}

/// Runs the configured sweep plus its baseline (reusing the sweep itself
/// when the configured architecture already is baseline1), scores the
/// cell, and returns it with the 1×1 matrix it forms on its own. Written
/// artifacts: per-job curve CSVs under the output directory (via the
/// trainer) and `cell-<arch>-<source>-to-<target>.toml` with the scores.
pub fn sweep_and_score(
    cfg: &ExperimentConfig,
    net: &NetSpec,
) -> Result<(TransferMatrix, CellScore), HarnessError> {
    cfg.validate()?;
    let arch_sweep = sweep(cfg, net)?;
    let cell = if cfg.architecture == Architecture::Baseline1 {
        score_sweep(cfg, &arch_sweep, &arch_sweep)?
    } else {
        let mut base_cfg = cfg.clone();
        base_cfg.architecture = Architecture::Baseline1;
        base_cfg.sources = Vec::new();
        let base_sweep = sweep_architecture(&base_cfg, net, Architecture::Baseline1)?;
        score_sweep(cfg, &arch_sweep, &base_sweep)?
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        let name = format!(
            "cell-{}-{}-to-{}.toml",
            cell.architecture.name(),
            cell.source,
            cell.target
        );
        std::fs::write(
            dir.join(name),
            toml::to_string_pretty(&cell).expect("cell serializes"),
        )?;
    }
    Ok((TransferMatrix::from_cells(std::slice::from_ref(&cell)), cell))
}

// ── Transfer matrices ───────────────────────────────────────────────────

/// Scores laid out source-by-target. Cells hold unclipped percentages;
/// clipping to 200 happens only when rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// `cells[row][col]` follows `sources`/`targets`; `None` marks a cell
    /// with no defined score.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl TransferMatrix {
    /// Groups cells by (source, target), preserving first-seen order.
    /// Cells of mixed architectures are the caller's responsibility to
    /// keep apart.
    pub fn from_cells(cells: &[CellScore]) -> Self {
        let mut sources: Vec<String> = Vec::new();
        let mut targets: Vec<String> = Vec::new();
        for cell in cells {
            if !sources.contains(&cell.source) {
                sources.push(cell.source.clone());
            }
            if !targets.contains(&cell.target) {
                targets.push(cell.target.clone());
            }
        }
        let mut grid = vec![vec![None; targets.len()]; sources.len()];
        for cell in cells {
            let r = sources.iter().position(|s| s == &cell.source).expect("inserted");
            let c = targets.iter().position(|t| t == &cell.target).expect("inserted");
            grid[r][c] = cell.score;
        }
        TransferMatrix { sources, targets, cells: grid }
    }

    /// Full-precision CSV: header `source,<target...>`, one row per
    /// source, empty fields for undefined cells.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["source".to_string()];
        header.extend(self.targets.iter().cloned());
        w.write_record(&header)?;
        for (source, row) in self.sources.iter().zip(&self.cells) {
            let mut record = vec![source.clone()];
            record.extend(row.iter().map(|c| match c {
                Some(v) => format!("{v}"),
                None => String::new(),
            }));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.is_empty() || &header[0] != "source" {
            return Err(HarnessError::MatrixFormat(
                "first header field must be \"source\"".to_string(),
            ));
        }
        let targets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut sources = Vec::new();
        let mut cells = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() != targets.len() + 1 {
                return Err(HarnessError::MatrixFormat(format!(
                    "row {:?} has {} fields, expected {}",
                    record.get(0).unwrap_or(""),
                    record.len(),
                    targets.len() + 1
                )));
            }
            sources.push(record[0].to_string());
            let row: Result<Vec<Option<f64>>, HarnessError> = record
                .iter()
                .skip(1)
                .map(|field| {
                    if field.is_empty() {
                        Ok(None)
                    } else {
                        field
                            .parse::<f64>()
                            .map(Some)
                            .map_err(|e| HarnessError::MatrixFormat(format!("{field:?}: {e}")))
                    }
                })
                .collect();
            cells.push(row?);
        }
        Ok(TransferMatrix { sources, targets, cells })
    }

    /// Text table with values clipped at `cap` (200 mirrors the usual
    /// rendering); stored values stay untouched.
    pub fn render_text(&self, cap: f64) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14}", "source\\target"));
        for t in &self.targets {
            out.push_str(&format!("  {t:>9}"));
        }
        out.push('\n');
        for (source, row) in self.sources.iter().zip(&self.cells) {
            out.push_str(&format!("{source:<14}"));
            for cell in row {
                match cell {
                    Some(v) => out.push_str(&format!("  {:>9.1}", v.min(cap))),
                    None => out.push_str(&format!("  {:>9}", "failed")),
                }
            }
            out.push('\n');
        }
        out
    }
}

// ── Desk-scale defaults ─────────────────────────────────────────────────

/// The network every desk-scale experiment trains: three conv layers and
/// a dense layer on stacked 16×16 frames, sized so a 300k-step run
/// finishes in under a minute on one core while still reaching
/// near-optimal play.
pub fn desk_spec() -> NetSpec {
    use crate::net::LayerSpec;
    NetSpec::new(
        vec![2, 16, 16],
        vec![
            LayerSpec::Conv { width: 10, kernel: (4, 4), stride: (2, 2) },
            LayerSpec::Conv { width: 10, kernel: (3, 3), stride: (1, 1) },
            LayerSpec::Conv { width: 10, kernel: (3, 3), stride: (1, 1) },
            LayerSpec::Dense { width: 64 },
        ],
        3,
    )
    .expect("desk spec is valid")
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg(architecture: Architecture, sources: &[&str]) -> ExperimentConfig {
        ExperimentConfig {
            architecture,
            sources: sources.iter().map(|s| s.to_string()).collect(),
            target: "base".to_string(),
            budget: 400,
            n_jobs: 2,
            top_k: 2,
            eval_window: 100,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn source_counts_are_enforced_per_architecture() {
        assert!(base_cfg(Architecture::Baseline1, &[]).validate().is_ok());
        assert!(base_cfg(Architecture::Baseline1, &["noisy"]).validate().is_err());
        for arch in [Architecture::Baseline2, Architecture::Baseline3, Architecture::Baseline4] {
            assert!(base_cfg(arch, &["noisy"]).validate().is_ok());
            assert!(base_cfg(arch, &[]).validate().is_err());
            assert!(base_cfg(arch, &["noisy", "hflip"]).validate().is_err());
        }
        assert!(base_cfg(Architecture::Progressive, &[]).validate().is_err());
        assert!(base_cfg(Architecture::Progressive, &["noisy", "hflip"]).validate().is_ok());
    }

    #[test]
    fn unknown_tasks_and_degenerate_sizes_are_rejected() {
        let mut cfg = base_cfg(Architecture::Baseline1, &[]);
        cfg.target = "pong".to_string();
        assert!(cfg.validate().is_err());

        let mut cfg = base_cfg(Architecture::Baseline1, &[]);
        cfg.top_k = 3; // > n_jobs = 2
        assert!(cfg.validate().is_err());

        let mut cfg = base_cfg(Architecture::Baseline1, &[]);
        cfg.budget = 150; // < 2 windows
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_survives_a_toml_round_trip() {
        let mut cfg = base_cfg(Architecture::Progressive, &["noisy", "hflip"]);
        cfg.sample_hyper = true;
        cfg.seed = 99;
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.architecture, Architecture::Progressive);
        assert_eq!(back.sources, vec!["noisy", "hflip"]);
        assert_eq!(back.seed, 99);
        assert!(back.sample_hyper);
        assert!(back.validate().is_ok());
    }

    #[test]
    fn architecture_names_round_trip() {
        for arch in Architecture::ALL {
            assert_eq!(arch.name().parse::<Architecture>().unwrap(), arch);
        }
        assert!("baseline5".parse::<Architecture>().is_err());
    }

    #[test]
    fn job_seeds_and_hypers_are_preassigned() {
        let mut cfg = base_cfg(Architecture::Baseline1, &[]);
        assert_ne!(job_seed(cfg.seed, 0), job_seed(cfg.seed, 1));
        assert_eq!(job_hyper(&cfg, 0), Hyper::default());
        cfg.sample_hyper = true;
        assert_eq!(job_hyper(&cfg, 1), job_hyper(&cfg, 1));
    }

    #[test]
    fn task_variants_are_stable_per_name() {
        let a = task_variant(VariantKind::Noisy);
        let b = task_variant(VariantKind::Noisy);
        assert_eq!(a, b);
    }

    // ── Scoring protocol on synthetic sweeps ────────────────────────

    fn synthetic_sweep(architecture: Architecture, finals: &[Option<&[f64]>]) -> Sweep {
        use crate::trainer::CurvePoint;
        let jobs = finals
            .iter()
            .enumerate()
            .map(|(index, scores)| Job {
                index,
                seed: index as u64,
                hyper: Hyper::default(),
                outcome: match scores {
                    Some(ys) => {
                        let mut curve = LearningCurve::new(100);
                        for (i, &y) in ys.iter().enumerate() {
                            curve.push(CurvePoint {
                                agent_steps: 100 * (i as u64 + 1),
                                mean_score: y,
                                episodes: 1,
                                policy_loss: 0.0,
                                value_loss: 0.0,
                                entropy: 0.0,
                                grad_norm: 0.0,
                            });
                        }
                        Ok(curve)
                    }
                    None => Err("boom".to_string()),
                },
            })
            .collect();
        Sweep { architecture, jobs }
    }

    #[test]
    fn top_k_equal_to_n_jobs_is_a_plain_mean() {
        let mut cfg = base_cfg(Architecture::Progressive, &["noisy"]);
        cfg.n_jobs = 3;
        cfg.top_k = 3;
        // Areas (shift +1, window 100): flat curves y=s give (s+1)*200.
        let arch = synthetic_sweep(
            Architecture::Progressive,
            &[Some(&[0.0, 0.0, 0.0][..]), Some(&[0.5, 0.5, 0.5][..]), Some(&[1.0, 1.0, 1.0][..])],
        );
        let base = synthetic_sweep(
            Architecture::Baseline1,
            &[Some(&[0.0, 0.0, 0.0][..]); 3],
        );
        let cell = score_sweep(&cfg, &arch, &base).unwrap();
        // Mean areas: arch (200 + 300 + 400)/3 = 300, base 200.
        assert_eq!(cell.score, Some(150.0));
        assert!(cell.flags.is_empty());
    }

    #[test]
    fn identical_jobs_reduce_to_the_single_job_score() {
        let mut cfg = base_cfg(Architecture::Progressive, &["noisy"]);
        cfg.n_jobs = 4;
        cfg.top_k = 2;
        let arch = synthetic_sweep(Architecture::Progressive, &[Some(&[0.5, 0.5][..]); 4]);
        let base = synthetic_sweep(Architecture::Baseline1, &[Some(&[0.0, 0.0][..]); 4]);
        let cell = score_sweep(&cfg, &arch, &base).unwrap();
        assert_eq!(cell.score, Some(150.0));
    }

    #[test]
    fn failed_jobs_are_excluded_and_flagged() {
        let mut cfg = base_cfg(Architecture::Progressive, &["noisy"]);
        cfg.n_jobs = 3;
        cfg.top_k = 3;
        let arch = synthetic_sweep(
            Architecture::Progressive,
            &[Some(&[1.0, 1.0][..]), None, Some(&[1.0, 1.0][..])],
        );
        let base = synthetic_sweep(Architecture::Baseline1, &[Some(&[0.0, 0.0][..]); 3]);
        let cell = score_sweep(&cfg, &arch, &base).unwrap();
        assert_eq!(cell.arch_areas[1], None);
        assert_eq!(cell.score, Some(200.0));
        assert!(cell.flags.iter().any(|f| f.contains("job 1")));
        assert!(cell.flags.iter().any(|f| f.contains("survived")));
    }

    #[test]
    fn a_sweep_scored_against_itself_is_exactly_one_hundred() {
        let cfg = base_cfg(Architecture::Baseline1, &[]);
        let sweep = synthetic_sweep(
            Architecture::Baseline1,
            &[Some(&[0.3, 0.7, 0.2][..]), Some(&[0.1, 0.4, 0.9][..])],
        );
        let cell = score_sweep(&cfg, &sweep, &sweep).unwrap();
        assert_eq!(cell.score, Some(100.0));
    }

    #[test]
    fn an_all_minimum_baseline_leaves_the_ratio_undefined() {
        let cfg = base_cfg(Architecture::Progressive, &["noisy"]);
        let arch = synthetic_sweep(Architecture::Progressive, &[Some(&[0.5, 0.5][..]); 2]);
        let base = synthetic_sweep(Architecture::Baseline1, &[Some(&[-1.0, -1.0][..]); 2]);
        let cell = score_sweep(&cfg, &arch, &base).unwrap();
        assert_eq!(cell.score, None);
        assert!(cell.flags.iter().any(|f| f.contains("ratio undefined")));
    }

    #[test]
    fn cell_files_round_trip_failed_jobs_and_undefined_scores() {
        let cell = CellScore {
            architecture: Architecture::Baseline4,
            source: "noisy".to_string(),
            target: "base".to_string(),
            score: None,
            arch_areas: vec![Some(12.5), None, Some(8.0)],
            baseline_areas: vec![None, None, None],
            flags: vec!["baseline1: no surviving jobs".to_string()],
        };
        let text = toml::to_string_pretty(&cell).unwrap();
        let back: CellScore = toml::from_str(&text).unwrap();
        assert_eq!(back, cell);
    }

    // ── Matrix plumbing ─────────────────────────────────────────────

    fn sample_matrix() -> TransferMatrix {
        TransferMatrix {
            sources: vec!["base".into(), "noisy".into()],
            targets: vec!["base".into(), "hflip".into(), "zoom".into()],
            cells: vec![
                vec![Some(100.0), Some(231.52), None],
                vec![Some(87.25), Some(129.0), Some(400.125)],
            ],
        }
    }

    #[test]
    fn matrix_csv_round_trips_losslessly() {
        let matrix = sample_matrix();
        let mut buf = Vec::new();
        matrix.write_csv(&mut buf).unwrap();
        let back = TransferMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, matrix);
    }

    #[test]
    fn rendering_clips_but_storage_does_not() {
        let matrix = sample_matrix();
        let text = matrix.render_text(200.0);
        assert!(text.contains("200.0"), "{text}");
        assert!(!text.contains("400.1"), "{text}");
        assert!(text.contains("failed"), "{text}");
        assert_eq!(matrix.cells[1][2], Some(400.125));
    }

    #[test]
    fn malformed_matrix_headers_are_rejected() {
        let bad = "task,base\nx,1.0\n";
        assert!(TransferMatrix::read_csv(bad.as_bytes()).is_err());
        let ragged = "source,base\nx,1.0,2.0\n";
        assert!(TransferMatrix::read_csv(ragged.as_bytes()).is_err());
    }

    #[test]
    fn cells_assemble_into_a_matrix_by_first_seen_order() {
        let cell = |source: &str, target: &str, score: f64| CellScore {
            architecture: Architecture::Progressive,
            source: source.to_string(),
            target: target.to_string(),
            score: Some(score),
            arch_areas: Vec::new(),
            baseline_areas: Vec::new(),
            flags: Vec::new(),
        };
        let matrix = TransferMatrix::from_cells(&[
            cell("base", "noisy", 150.0),
            cell("base", "hflip", 120.0),
            cell("noisy", "noisy", 180.0),
        ]);
        assert_eq!(matrix.sources, vec!["base", "noisy"]);
        assert_eq!(matrix.targets, vec!["noisy", "hflip"]);
        assert_eq!(matrix.cells[0], vec![Some(150.0), Some(120.0)]);
        assert_eq!(matrix.cells[1], vec![Some(180.0), None]);
    }

    #[test]
    fn desk_spec_matches_the_environment() {
        let spec = desk_spec();
        assert_eq!(spec.input, vec![2, 16, 16]);
        assert_eq!(spec.n_actions, 3);
        assert_eq!(spec.layers.len(), 4);
    }
}
