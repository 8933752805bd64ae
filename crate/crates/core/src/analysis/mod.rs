//! Transfer analysis: which columns a multi-column policy actually leans
//! on, and how much a transfer setup helps over training from scratch.
//!
//! Two estimators answer the reliance question from different angles. The
//! Fisher route ([`compute_afs`]) differentiates the log-policy with
//! respect to normalized hidden activations over the on-policy state
//! distribution and averages the squared result. The perturbation route
//! ([`compute_aps`]) injects calibrated Gaussian noise into one site at a
//! time and finds the noise precision at which the score halves. Both
//! normalize across columns so each layer's numbers read as
//! responsibilities summing to one, which makes the two directly
//! comparable. Curve-level helpers ([`transfer_score`], [`afs_spectrum`])
//! live in [`transfer`].

use std::fmt::Write as _;
use std::io;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{EnvError, Environment};
use crate::net::{LayerSpec, NetError, ProgressiveNetwork};
use crate::seeds;
use crate::tensor::{Graph, Tensor, TensorError};
use crate::trainer::{sample_categorical, stack};

pub mod perturb;
pub mod transfer;

pub use perturb::{compute_aps, ApsOptions, ApsReport};
pub use transfer::{
    afs_spectrum, curve_area, spearman, spectrum_area, transfer_score, trapezoid_area, Spectrum,
    SpectrumColumns,
};

/// Floor added to activation variances before taking square roots, so the
/// normalized representation is defined even for features that never move.
pub const NORMALIZATION_EPSILON: f64 = 1e-8;

/// Observations per forward pass when estimating statistics over a sample
/// set. Purely a batching knob; results do not depend on it.
const CHUNK: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least one sample")]
    EmptySampleSet,
    #[error(
        "noise-free score {baseline:.4} does not exceed the random-policy floor {floor:.4}; \
         a 50% drop is undefined"
    )]
    DegenerateBaseline { baseline: f64, floor: f64 },
    #[error("baseline curve has zero area after shifting; the score ratio is undefined")]
    ZeroBaselineAuc,
    #[error("curves do not overlap on the step axis")]
    DisjointCurves,
    #[error("a curve needs at least two points to have an area, got {got}")]
    CurveTooShort { got: usize },
    #[error("need at least one sensitivity report")]
    EmptyReports,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

// ── On-policy sampling ──────────────────────────────────────────────────

/// One draw from the joint state–action distribution of a policy: the
/// observation it saw and the action it sampled there.
#[derive(Debug, Clone)]
pub struct RhoSample {
    pub obs: Tensor,
    pub action: usize,
}

/// Runs column `k`'s policy in `env` until `n_samples` state–action pairs
/// are collected, starting a fresh episode whenever one ends. Episode
/// seeds and action draws both derive from `seed`, so the sample set is a
/// pure function of its inputs.
pub fn collect_rho_samples<E: Environment>(
    net: &ProgressiveNetwork,
    k: usize,
    env: &mut E,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<RhoSample>, AnalysisError> {
    if n_samples == 0 {
        return Err(AnalysisError::EmptySampleSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "rho-actions"));
    let mut episode = 0u64;
    let mut obs = env.reset(seeds::derive_indexed(seed, "rho-episode", episode));
    let mut out = Vec::with_capacity(n_samples);
    while out.len() < n_samples {
        let eval = net.evaluate(k, &obs)?;
        let action = sample_categorical(&mut rng, &eval.policy);
        out.push(RhoSample { obs: obs.clone(), action });
        let step = env.step(action)?;
        if step.done {
            episode += 1;
            obs = env.reset(seeds::derive_indexed(seed, "rho-episode", episode));
        } else {
            obs = step.obs;
        }
    }
    Ok(out)
}

// ── Streaming moments ───────────────────────────────────────────────────

/// Per-feature streaming mean and (population) variance that merges
/// associatively, so chunked or fanned-out accumulation reproduces a
/// single pass up to rounding.
#[derive(Debug, Clone)]
pub struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    pub fn new(n_features: usize) -> Self {
        Moments { count: 0.0, mean: vec![0.0; n_features], m2: vec![0.0; n_features] }
    }

    /// Folds in one activation tensor, pooling the batch axis and, for
    /// feature maps, every spatial position into the feature's slot.
    pub fn push(&mut self, activations: &Tensor) {
        let shape = activations.shape();
        let n_features = shape[1];
        assert_eq!(n_features, self.mean.len(), "feature count is fixed at construction");
        let inner: usize = shape[2..].iter().product();
        let data = activations.data();
        for f in 0..n_features {
            let mut n = self.count;
            for b in 0..shape[0] {
                let base = (b * n_features + f) * inner;
                for v in &data[base..base + inner] {
                    n += 1.0;
                    let delta = v - self.mean[f];
                    self.mean[f] += delta / n;
                    self.m2[f] += delta * (v - self.mean[f]);
                }
            }
        }
        self.count += (shape[0] * inner) as f64;
    }

    /// Merges another accumulator over the same feature layout.
    pub fn merge(&mut self, other: &Moments) {
        assert_eq!(self.mean.len(), other.mean.len());
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let total = self.count + other.count;
        for f in 0..self.mean.len() {
            let delta = other.mean[f] - self.mean[f];
            self.mean[f] += delta * other.count / total;
            self.m2[f] += other.m2[f] + delta * delta * self.count * other.count / total;
        }
        self.count = total;
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance per feature; zero until two values have landed.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2.0 {
            vec![0.0; self.m2.len()]
        } else {
            self.m2.iter().map(|&m| (m / self.count).max(0.0)).collect()
        }
    }
}

// ── Activation statistics ───────────────────────────────────────────────

/// Mean and variance of every hidden feature over a sample set, indexed by
/// `[layer][column]`. Feature means feature map for conv layers (pooled
/// over positions) and unit for dense layers.
#[derive(Debug, Clone)]
pub struct ActivationStats {
    moments: Vec<Vec<Moments>>,
}

impl ActivationStats {
    /// Forwards every sample through column `k` (in chunks) and pools
    /// activations at each live site.
    pub fn estimate(
        net: &ProgressiveNetwork,
        k: usize,
        samples: &[RhoSample],
    ) -> Result<Self, AnalysisError> {
        if samples.is_empty() {
            return Err(AnalysisError::EmptySampleSet);
        }
        let shapes = net.spec().hidden_shapes()?;
        let mut moments: Vec<Vec<Moments>> =
            shapes.iter().map(|s| (0..k).map(|_| Moments::new(s[0])).collect()).collect();
        for chunk in samples.chunks(CHUNK) {
            let obs = stack(chunk.iter().map(|s| &s.obs))?;
            let mut g = Graph::new();
            let obs_node = g.constant(obs);
            let pass = net.forward_graph(
                &mut g,
                obs_node,
                k,
                &Default::default(),
                Default::default(),
            )?;
            for (j, column) in pass.hidden.iter().enumerate() {
                for (li, &node) in column.iter().enumerate() {
                    moments[li][j].push(g.value(node));
                }
            }
        }
        Ok(ActivationStats { moments })
    }

    pub fn n_layers(&self) -> usize {
        self.moments.len()
    }

    pub fn n_columns(&self) -> usize {
        self.moments.first().map_or(0, Vec::len)
    }

    pub fn mean(&self, layer: usize, column: usize) -> &[f64] {
        self.moments[layer][column].mean()
    }

    pub fn variance(&self, layer: usize, column: usize) -> Vec<f64> {
        self.moments[layer][column].variance()
    }

    pub fn count(&self, layer: usize, column: usize) -> f64 {
        self.moments[layer][column].count()
    }
}

// ── Fisher sensitivity ──────────────────────────────────────────────────

/// Running average of squared log-policy gradients with respect to hidden
/// activations, summed over spatial positions per feature map. Indexed
/// `[layer][column][feature]`; every entry is nonnegative.
#[derive(Debug, Clone)]
pub struct FisherAccumulator {
    sums: Vec<Vec<Vec<f64>>>,
    n_samples: usize,
}

impl FisherAccumulator {
    fn new(feature_counts: &[usize], n_columns: usize) -> Self {
        let sums = feature_counts
            .iter()
            .map(|&n| (0..n_columns).map(|_| vec![0.0; n]).collect())
            .collect();
        FisherAccumulator { sums, n_samples: 0 }
    }

    /// Adds one batch of per-sample gradients at site `(layer, column)`.
    /// Rows of `grad` are independent samples; spatial positions within a
    /// feature map are squared and summed before pooling.
    fn push(&mut self, layer: usize, column: usize, grad: &Tensor) {
        let shape = grad.shape();
        let n_features = shape[1];
        let inner: usize = shape[2..].iter().product();
        let data = grad.data();
        let slot = &mut self.sums[layer][column];
        for b in 0..shape[0] {
            for f in 0..n_features {
                let base = (b * n_features + f) * inner;
                let mut sq = 0.0;
                for v in &data[base..base + inner] {
                    sq += v * v;
                }
                slot[f] += sq;
            }
        }
    }

    /// Mean over samples of the summed squared gradient at one site.
    pub fn mean(&self, layer: usize, column: usize) -> Vec<f64> {
        let n = self.n_samples.max(1) as f64;
        self.sums[layer][column].iter().map(|s| s / n).collect()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
}

/// Per-feature share of policy curvature carried by each column, plus the
/// per-layer roll-up. `None` marks features whose total curvature across
/// columns is exactly zero, where a share is undefined.
#[derive(Debug, Clone)]
pub struct SensitivityReport {
    /// Column the policy belongs to (1-based); prior columns are scored as
    /// inputs to it.
    pub target_column: usize,
    pub n_samples: usize,
    pub layer_labels: Vec<String>,
    /// Raw averaged squared gradients w.r.t. normalized activations,
    /// `[layer][column][feature]`.
    pub fisher: Vec<Vec<Vec<f64>>>,
    /// Column shares per `(layer, feature)`, `[layer][column][feature]`;
    /// entries at a given `(layer, feature)` sum to one where defined.
    pub afs_feature: Vec<Vec<Vec<Option<f64>>>>,
    /// Per-layer shares renormalized to sum to one across columns.
    pub afs_layer: Vec<Vec<f64>>,
    /// Per-layer sums of feature shares before renormalization.
    pub afs_layer_raw: Vec<Vec<f64>>,
    /// `(layer, feature)` pairs with zero total curvature, excluded from
    /// the layer sums.
    pub missing: Vec<(usize, usize)>,
    /// Perturbation cross-check, when one has been run.
    pub aps: Option<ApsReport>,
}

/// Estimates the average Fisher sensitivity of column `k`'s policy from an
/// on-policy sample set.
///
/// Activations are normalized per feature to zero mean and unit variance
/// (statistics estimated from the same samples, variance floored by
/// [`NORMALIZATION_EPSILON`]), so the squared gradients are comparable
/// across layers and columns regardless of weight scale. Since the
/// normalization is affine, the gradient with respect to the normalized
/// activation is the raw activation gradient scaled by `sqrt(var + eps)`,
/// which is applied after accumulation.
pub fn compute_afs(
    net: &ProgressiveNetwork,
    k: usize,
    samples: &[RhoSample],
) -> Result<SensitivityReport, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptySampleSet);
    }
    let stats = ActivationStats::estimate(net, k, samples)?;
    let shapes = net.spec().hidden_shapes()?;
    let feature_counts: Vec<usize> = shapes.iter().map(|s| s[0]).collect();
    let mut acc = FisherAccumulator::new(&feature_counts, k);

    for chunk in samples.chunks(CHUNK) {
        let obs = stack(chunk.iter().map(|s| &s.obs))?;
        let actions: Vec<usize> = chunk.iter().map(|s| s.action).collect();
        let mut g = Graph::new();
        let obs_node = g.constant(obs);
        let pass = net.forward_graph(
            &mut g,
            obs_node,
            k,
            &Default::default(),
            crate::net::ForwardOptions { watch_hidden: true, noise: None },
        )?;
        // One backward pass serves the whole chunk: rows stay independent
        // through every op, so the gradient at row b is exactly the
        // gradient of log pi(a_b | s_b).
        let logp = g.log_softmax(pass.logits)?;
        let picked = g.pick_column(logp, actions)?;
        let total = g.sum(picked)?;
        let grads = g.backward(total)?;
        for (j, column) in pass.hidden.iter().enumerate() {
            for (li, &node) in column.iter().enumerate() {
                let grad = grads.get(node).expect("hidden nodes are watched");
                acc.push(li, j, grad);
            }
        }
        acc.n_samples += chunk.len();
    }

    // Scale by the normalization: d/d h_hat = sqrt(var + eps) * d/d h, so
    // squared sums pick up a factor of (var + eps) per feature.
    let mut fisher: Vec<Vec<Vec<f64>>> = Vec::with_capacity(shapes.len());
    for li in 0..shapes.len() {
        let mut per_column = Vec::with_capacity(k);
        for j in 0..k {
            let var = stats.variance(li, j);
            let mean_sq = acc.mean(li, j);
            per_column.push(
                mean_sq
                    .iter()
                    .zip(&var)
                    .map(|(m, v)| m * (v + NORMALIZATION_EPSILON))
                    .collect::<Vec<f64>>(),
            );
        }
        fisher.push(per_column);
    }

    let mut afs_feature: Vec<Vec<Vec<Option<f64>>>> = Vec::with_capacity(shapes.len());
    let mut missing = Vec::new();
    for (li, &n_features) in feature_counts.iter().enumerate() {
        let mut per_column = vec![Vec::with_capacity(n_features); k];
        for m in 0..n_features {
            let total: f64 = (0..k).map(|j| fisher[li][j][m]).sum();
            for (j, col) in per_column.iter_mut().enumerate() {
                col.push(if total > 0.0 { Some(fisher[li][j][m] / total) } else { None });
            }
            if total <= 0.0 {
                missing.push((li, m));
            }
        }
        afs_feature.push(per_column);
    }

    let mut afs_layer_raw = Vec::with_capacity(shapes.len());
    let mut afs_layer = Vec::with_capacity(shapes.len());
    for per_column in &afs_feature {
        let raw: Vec<f64> =
            per_column.iter().map(|col| col.iter().flatten().sum::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let display = if total > 0.0 {
            raw.iter().map(|r| r / total).collect()
        } else {
            vec![0.0; raw.len()]
        };
        afs_layer_raw.push(raw);
        afs_layer.push(display);
    }

    Ok(SensitivityReport {
        target_column: k,
        n_samples: samples.len(),
        layer_labels: shapes
            .iter()
            .zip(&net.spec().layers)
            .enumerate()
            .map(|(li, (shape, layer))| layer_label(li, layer, shape))
            .collect(),
        fisher,
        afs_feature,
        afs_layer,
        afs_layer_raw,
        missing,
        aps: None,
    })
}

fn layer_label(li: usize, layer: &LayerSpec, shape: &[usize]) -> String {
    match layer {
        LayerSpec::Conv { width, kernel, stride } => format!(
            "layer {} conv {}x{}x{} ({} maps of {}x{}, stride {}x{})",
            li + 1,
            width,
            kernel.0,
            kernel.1,
            shape[0],
            shape[1],
            shape[2],
            stride.0,
            stride.1
        ),
        LayerSpec::Dense { width } => format!("layer {} dense {}", li + 1, width),
    }
}

impl SensitivityReport {
    pub fn n_layers(&self) -> usize {
        self.fisher.len()
    }

    pub fn n_columns(&self) -> usize {
        self.fisher.first().map_or(0, Vec::len)
    }

    pub fn attach_aps(&mut self, aps: ApsReport) {
        self.aps = Some(aps);
    }

    /// Per-layer matrices as plain text: the Fisher shares, and the
    /// perturbation shares when present.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "sensitivity report for column {} ({} columns live, {} samples)",
            self.target_column,
            self.n_columns(),
            self.n_samples
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "average fisher sensitivity (rows sum to 1 across columns)");
        self.render_matrix(&mut out, &self.afs_layer);
        if self.missing.is_empty() {
            let _ = writeln!(out, "all features carried curvature");
        } else {
            let _ = writeln!(
                out,
                "{} feature(s) had zero total curvature and were excluded: {}",
                self.missing.len(),
                self.missing
                    .iter()
                    .map(|(li, m)| format!("(layer {}, feature {})", li + 1, m))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        if let Some(aps) = &self.aps {
            let _ = writeln!(out);
            let _ = writeln!(out, "average perturbation sensitivity (precision shares)");
            self.render_matrix(&mut out, &aps.aps);
            let _ = writeln!(
                out,
                "noise-free score {:.4}, random-policy floor {:.4}, {} episodes per probe, \
                 target drop {:.0}%",
                aps.baseline_score,
                aps.floor_score,
                aps.episodes_per_probe,
                aps.target_drop * 100.0
            );
            for flag in &aps.flags {
                let _ = writeln!(out, "flag: {flag}");
            }
            let _ = writeln!(out, "note: {}", aps.notes);
        }
        out
    }

    fn render_matrix(&self, out: &mut String, rows: &[Vec<f64>]) {
        let _ = write!(out, "{:<44}", "");
        for j in 0..self.n_columns() {
            let _ = write!(out, "  column {:<2}", j + 1);
        }
        let _ = writeln!(out);
        for (label, row) in self.layer_labels.iter().zip(rows) {
            let _ = write!(out, "{label:<44}");
            for v in row {
                let _ = write!(out, "  {v:>9.4}");
            }
            let _ = writeln!(out);
        }
    }

    /// Per-feature values as CSV: one row per `(layer, column, feature)`
    /// with the raw curvature and the share (empty when undefined).
    pub fn write_feature_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["layer", "column", "feature", "fisher", "afs"])?;
        for (li, per_column) in self.fisher.iter().enumerate() {
            for (j, features) in per_column.iter().enumerate() {
                for (m, &f) in features.iter().enumerate() {
                    let afs = match self.afs_feature[li][j][m] {
                        Some(v) => format!("{v}"),
                        None => String::new(),
                    };
                    w.write_record([
                        format!("{}", li + 1),
                        format!("{}", j + 1),
                        format!("{m}"),
                        format!("{f}"),
                        afs,
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

// ── Tests ───────────────────────────────────────────────────────────────
