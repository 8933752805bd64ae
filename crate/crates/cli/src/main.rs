//! `prognet` — train columns, grow networks, run sensitivity analyses and
//! transfer sweeps, and render the results as CSV and SVG artifacts.
//!
//! Exit codes: 0 on success, 1 on usage errors (unknown flags, malformed
//! values), 2 on runtime failures (missing files, failed runs). Every
//! subcommand takes a `--seed` and derives all of its randomness from it,
//! so identical invocations produce identical outputs; nothing is written
//! outside the `--out` location.

mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prognet_core::analysis::{
    afs_spectrum, collect_rho_samples, compute_afs, compute_aps, spectrum_area, ActivationStats,
    ApsOptions, SpectrumColumns,
};
use prognet_core::envs::{EnvOptions, MiniCatch, VariantKind};
use prognet_core::harness::{
    desk_spec, sweep_and_score, task_variant, Architecture, CellScore, ExperimentConfig,
};
use prognet_core::net::{load_checkpoint, save_checkpoint, ProgressiveNetwork};
use prognet_core::seeds;
use prognet_core::trainer::{read_curve_csv, train, Hyper, TrainOptions};
use prognet_core::TransferMatrix;

#[derive(Parser)]
#[command(
    name = "prognet",
    version,
    about = "Progressive policy networks: training, transfer sweeps, and sensitivity analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the youngest column of a network on one task.
    Train(TrainArgs),
    /// Freeze every column of a checkpoint and append a fresh one.
    AddColumn(AddColumnArgs),
    /// Fisher-based per-column sensitivity of a checkpoint's policy.
    AnalyzeAfs(AnalyzeAfsArgs),
    /// Perturbation-based sensitivity, reported alongside the Fisher view.
    AnalyzeAps(AnalyzeApsArgs),
    /// Run one experiment cell: an architecture sweep scored against scratch.
    Sweep(SweepArgs),
    /// Assemble cell reports into transfer-matrix CSVs.
    Matrix(MatrixArgs),
    /// Sorted per-feature sensitivity spectra across checkpoints.
    Spectrum(SpectrumArgs),
    /// Render a learning-curve CSV or a matrix CSV as an SVG.
    Plot(PlotArgs),
    /// Print a checkpoint's structure, parameter counts, and checksum.
    InspectCheckpoint(InspectArgs),
}

fn parse_task(s: &str) -> Result<VariantKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Args)]
struct TrainArgs {
    /// Task to train on (base, noisy, black, white, hflip, vflip, hvflip, zoom).
    #[arg(long, value_parser = parse_task)]
    task: VariantKind,
    /// Agent steps to train for.
    #[arg(long)]
    budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for run.csv, metadata.toml, and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint instead of a fresh single column.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Learning-curve window in agent steps.
    #[arg(long, default_value_t = 5_000)]
    window: u64,
    /// Environment ticks per agent decision.
    #[arg(long)]
    action_repeat: Option<usize>,
    /// Synchronous rollout workers.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AddColumnArgs {
    /// Checkpoint to grow.
    #[arg(long)]
    from: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial adapter gate value for the new column.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Directory receiving grown.ckpt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeAfsArgs {
    /// Checkpoint to analyze.
    #[arg(long)]
    from: PathBuf,
    /// Task whose state distribution the samples come from.
    #[arg(long, value_parser = parse_task)]
    task: VariantKind,
    /// State-action samples drawn from the trained policy.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for afs.txt and afs.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    action_repeat: Option<usize>,
}

#[derive(Args)]
struct AnalyzeApsArgs {
    #[command(flatten)]
    afs: AnalyzeAfsArgs,
    /// Episodes averaged per noise probe.
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    /// Fraction of the baseline-to-floor gap that must be lost.
    #[arg(long, default_value_t = 0.5)]
    drop: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's job count.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the config's top-k statistic size.
    #[arg(long)]
    top_k: Option<usize>,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's budget (agent steps per stage).
    #[arg(long)]
    budget: Option<u64>,
    /// Override the config's artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    /// Directory scanned recursively for cell-*.toml reports.
    #[arg(long)]
    reports: PathBuf,
    /// Directory for matrix-<architecture>.csv files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Checkpoints to average over (repeatable).
    #[arg(long, required = true)]
    from: Vec<PathBuf>,
    /// Task whose state distribution the samples come from.
    #[arg(long, value_parser = parse_task)]
    task: VariantKind,
    /// Hidden layer the spectrum is taken at (1-based).
    #[arg(long)]
    layer: usize,
    /// Which columns contribute features: "final" or "sources".
    #[arg(long, default_value = "final", value_parser = parse_columns)]
    columns: SpectrumColumns,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for spectrum.csv and spectrum-raw.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    action_repeat: Option<usize>,
}

fn parse_columns(s: &str) -> Result<SpectrumColumns, String> {
    match s {
        "final" => Ok(SpectrumColumns::Final),
        "sources" => Ok(SpectrumColumns::Sources),
        other => Err(format!("unknown column selection {other:?}; use final or sources")),
    }
}

#[derive(Args)]
struct PlotArgs {
    /// Learning-curve CSV to draw as a polyline.
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    curve: Option<PathBuf>,
    /// Matrix CSV to draw as a colored grid.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Output SVG file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint file.
    path: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // usage errors carry the usage text and exit 1.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::AddColumn(args) => cmd_add_column(args),
        Command::AnalyzeAfs(args) => cmd_analyze_afs(args),
        Command::AnalyzeAps(args) => cmd_analyze_aps(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Matrix(args) => cmd_matrix(args),
        Command::Spectrum(args) => cmd_spectrum(args),
        Command::Plot(args) => cmd_plot(args),
        Command::InspectCheckpoint(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prognet: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn env_options(action_repeat: Option<usize>) -> EnvOptions {
    let mut opts = EnvOptions::default();
    if let Some(n) = action_repeat {
        opts.action_repeat = n;
    }
    opts
}

// ── train / add-column ──────────────────────────────────────────────────

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut net = match &args.from {
        Some(path) => load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?,
        None => ProgressiveNetwork::new(desk_spec(), seeds::derive(args.seed, "net-init"))?,
    };
    let mut hyper = Hyper::default();
    if let Some(n) = args.workers {
        hyper.n_workers = n;
    }
    let opts = TrainOptions {
        seed: args.seed,
        env_opts: env_options(args.action_repeat),
        eval_window: args.window,
        log_dir: Some(args.out.clone()),
        trainable: None,
    };
    let column = net.n_columns();
    let curve = train(&mut net, column, &task_variant(args.task), &hyper, args.budget, &opts)?;
    match curve.points.last() {
        Some(p) => println!(
            "trained column {column} on {} for {} steps; final window mean {:.4}",
            args.task.name(),
            args.budget,
            p.mean_score
        ),
        None => println!(
            "trained column {column} on {} for {} steps; no full window elapsed",
            args.task.name(),
            args.budget
        ),
    }
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_add_column(args: AddColumnArgs) -> Result<()> {
    let mut net =
        load_checkpoint(&args.from).with_context(|| format!("loading {}", args.from.display()))?;
    net.add_column(seeds::derive(args.seed, "column"), args.alpha)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("grown.ckpt");
    save_checkpoint(&net, &path)?;
    println!(
        "grew {} to {} columns (prior columns frozen); wrote {}",
        args.from.display(),
        net.n_columns(),
        path.display()
    );
    Ok(())
}

// ── analyze-afs / analyze-aps ───────────────────────────────────────────

struct Analysis {
    net: ProgressiveNetwork,
    report: prognet_core::SensitivityReport,
    stats: ActivationStats,
}

fn run_afs(args: &AnalyzeAfsArgs) -> Result<Analysis> {
    let net =
        load_checkpoint(&args.from).with_context(|| format!("loading {}", args.from.display()))?;
    let k = net.n_columns();
    let mut env = MiniCatch::new(task_variant(args.task), env_options(args.action_repeat));
    let samples = collect_rho_samples(&net, k, &mut env, args.samples, args.seed)?;
    let stats = ActivationStats::estimate(&net, k, &samples)?;
    let report = compute_afs(&net, k, &samples)?;
    Ok(Analysis { net, report, stats })
}

fn write_report(out: &Path, name: &str, report: &prognet_core::SensitivityReport) -> Result<()> {
    fs::create_dir_all(out)?;
    let text = report.render_text();
    fs::write(out.join(format!("{name}.txt")), &text)?;
    let csv_file = fs::File::create(out.join("afs.csv"))?;
    report.write_feature_csv(csv_file)?;
    print!("{text}");
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_analyze_afs(args: AnalyzeAfsArgs) -> Result<()> {
    let analysis = run_afs(&args)?;
    write_report(&args.out, "afs", &analysis.report)
}

fn cmd_analyze_aps(args: AnalyzeApsArgs) -> Result<()> {
    let mut analysis = run_afs(&args.afs)?;
    let k = analysis.net.n_columns();
    let mut env = MiniCatch::new(task_variant(args.afs.task), env_options(args.afs.action_repeat));
    let aps = compute_aps(
        &analysis.net,
        k,
        &mut env,
        &analysis.stats,
        &ApsOptions {
            episodes_per_probe: args.episodes,
            target_drop: args.drop,
            seed: seeds::derive(args.afs.seed, "aps"),
        },
    )?;
    analysis.report.attach_aps(aps);
    write_report(&args.afs.out, "aps", &analysis.report)
}

// ── sweep / matrix ──────────────────────────────────────────────────────

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(jobs) = args.jobs {
        cfg.n_jobs = jobs;
    }
    if let Some(top_k) = args.top_k {
        cfg.top_k = top_k;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(budget) = args.budget {
        cfg.budget = budget;
    }
    if let Some(out) = args.out {
        cfg.out_dir = Some(out);
    }
    cfg.validate()?;
    let (_, cell) = sweep_and_score(&cfg, &desk_spec())?;
    print!("{}", render_cell(&cell));
    if let Some(dir) = &cfg.out_dir {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

fn render_cell(cell: &CellScore) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} on {} -> {}: {}",
        cell.architecture,
        cell.source,
        cell.target,
        match cell.score {
            Some(s) => format!("{s:.1}%"),
            None => "no score".to_string(),
        }
    );
    let fmt_areas = |areas: &[Option<f64>]| -> String {
        areas
            .iter()
            .map(|a| match a {
                Some(v) => format!("{v:.1}"),
                None => "failed".to_string(),
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let _ = writeln!(out, "  curve areas: {}", fmt_areas(&cell.arch_areas));
    let _ = writeln!(out, "  scratch areas: {}", fmt_areas(&cell.baseline_areas));
    for flag in &cell.flags {
        let _ = writeln!(out, "  note: {flag}");
    }
    out
}

fn collect_cell_files(dir: &Path, into: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_cell_files(&path, into)?;
        } else if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if name.starts_with("cell-") && name.ends_with(".toml") {
                into.push(path);
            }
        }
    }
    Ok(())
}

fn cmd_matrix(args: MatrixArgs) -> Result<()> {
    let mut files = Vec::new();
    collect_cell_files(&args.reports, &mut files)?;
    if files.is_empty() {
        bail!("no cell-*.toml reports under {}", args.reports.display());
    }
    files.sort();
    let mut cells: Vec<CellScore> = Vec::new();
    for file in &files {
        let text = fs::read_to_string(file)?;
        let cell: CellScore =
            toml::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
        cells.push(cell);
    }
    fs::create_dir_all(&args.out)?;
    for arch in Architecture::ALL {
        let arch_cells: Vec<CellScore> =
            cells.iter().filter(|c| c.architecture == arch).cloned().collect();
        if arch_cells.is_empty() {
            continue;
        }
        let matrix = TransferMatrix::from_cells(&arch_cells);
        let path = args.out.join(format!("matrix-{arch}.csv"));
        let file = fs::File::create(&path)?;
        matrix.write_csv(file)?;
        println!("{arch} ({} cells) -> {}", arch_cells.len(), path.display());
        print!("{}", matrix.render_text(200.0));
    }
    Ok(())
}

// ── spectrum ────────────────────────────────────────────────────────────

fn cmd_spectrum(args: SpectrumArgs) -> Result<()> {
    if args.layer == 0 {
        bail!("--layer is 1-based");
    }
    let mut reports = Vec::new();
    for (i, path) in args.from.iter().enumerate() {
        let net = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        let k = net.n_columns();
        let mut env = MiniCatch::new(task_variant(args.task), env_options(args.action_repeat));
        let samples = collect_rho_samples(
            &net,
            k,
            &mut env,
            args.samples,
            seeds::derive_indexed(args.seed, "report", i as u64),
        )?;
        reports.push(compute_afs(&net, k, &samples)?);
    }
    let spectrum = afs_spectrum(&reports, args.layer - 1, args.columns)?;
    let area = spectrum_area(&spectrum);

    fs::create_dir_all(&args.out)?;
    let mut mean = csv::Writer::from_path(args.out.join("spectrum.csv"))?;
    mean.write_record(["position", "mean"])?;
    for (x, y) in spectrum.abscissa.iter().zip(&spectrum.mean) {
        mean.write_record([format!("{x}"), format!("{y}")])?;
    }
    mean.flush()?;
    let mut raw = csv::Writer::from_path(args.out.join("spectrum-raw.csv"))?;
    raw.write_record(["network", "rank", "value"])?;
    for (n, values) in spectrum.per_network.iter().enumerate() {
        for (rank, value) in values.iter().enumerate() {
            raw.write_record([format!("{n}"), format!("{rank}"), format!("{value}")])?;
        }
    }
    raw.flush()?;

    println!(
        "spectrum at layer {} over {} network(s): {} point(s), area {:.6}",
        args.layer,
        reports.len(),
        spectrum.mean.len(),
        area
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

// ── plot ────────────────────────────────────────────────────────────────

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let document = if let Some(curve_path) = &args.curve {
        let curve = read_curve_csv(curve_path)?;
        if curve.points.is_empty() {
            bail!("{} holds no curve points", curve_path.display());
        }
        let points: Vec<(f64, f64)> =
            curve.points.iter().map(|p| (p.agent_steps as f64, p.mean_score)).collect();
        let title = curve_path.file_stem().and_then(|s| s.to_str()).unwrap_or("curve");
        svg::curve_svg(title, &points)
    } else {
        let matrix_path = args.matrix.as_ref().expect("clap requires curve or matrix");
        let file = fs::File::open(matrix_path)
            .with_context(|| format!("opening {}", matrix_path.display()))?;
        let matrix = TransferMatrix::read_csv(file)?;
        svg::matrix_svg(&matrix, 200.0)
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&args.out, document)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

// ── inspect-checkpoint ──────────────────────────────────────────────────

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let net = load_checkpoint(&args.path)
        .with_context(|| format!("loading {}", args.path.display()))?;
    let spec = net.spec();
    let shapes = spec.hidden_shapes()?;

    println!("checkpoint: {}", args.path.display());
    println!(
        "input: {:?}  actions: {}  columns: {}",
        spec.input,
        spec.n_actions,
        net.n_columns()
    );
    for (li, (layer, shape)) in spec.layers.iter().zip(&shapes).enumerate() {
        println!("layer {}: {layer} -> {shape:?}", li + 1);
    }
    let mut total = 0usize;
    for (i, column) in net.columns().iter().enumerate() {
        let count: usize =
            column.param_ids().map(|id| net.param(id).expect("listed").data().len()).sum();
        total += count;
        println!(
            "column {}: {} parameters, {}",
            i + 1,
            count,
            if column.is_frozen() { "frozen" } else { "trainable" }
        );
    }
    println!("total parameters: {total}");

    let bytes = fs::read(&args.path)?;
    println!("sha256: {}", hex_digest(&bytes));
    Ok(())
}

fn hex_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut acc, b| {
        let _ = write!(acc, "{b:02x}");
        acc
    })
}
