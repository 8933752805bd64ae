//! Perturbation sensitivity: how much Gaussian noise each (layer, column)
//! site tolerates before the policy's score halves.
//!
//! For one site at a time, zero-mean noise is added to the post-ReLU
//! activations on every forward pass, with per-feature variance `sigma2`
//! times that feature's on-policy activation variance — so the probe is
//! invariant to arbitrary weight scales, mirroring the normalization used
//! by the Fisher estimator. A coarse log-spaced sweep followed by
//! bisection finds the smallest `sigma2` at which the mean episode score
//! drops halfway from its noise-free level to the random-policy floor; the
//! site's precision is `1 / sigma2`, and shares of precision within a
//! layer are the sensitivities.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ActivationStats, AnalysisError};
use crate::envs::Environment;
use crate::net::{ForwardOptions, NoiseInjection, ProgressiveNetwork};
use crate::seeds;
use crate::tensor::Graph;
use crate::trainer::sample_categorical;

/// Coarse sweep grid for the noise-variance multiplier, one decade apart.
pub const SIGMA2_GRID: [f64; 8] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4];

/// Bisection steps refining the bracket found by the coarse sweep.
pub const BISECTION_STEPS: usize = 12;

const MONOTONE_NOTE: &str = "mean score is treated as non-increasing in the noise variance; \
     if probes disagree, the smallest variance that crosses the threshold is kept";

#[derive(Debug, Clone)]
pub struct ApsOptions {
    /// Episodes averaged per score probe.
    pub episodes_per_probe: usize,
    /// Fraction of the baseline-to-floor gap that must be lost (0.5 = the
    /// score halves).
    pub target_drop: f64,
    /// Root for episode, action, and noise randomness.
    pub seed: u64,
}

impl Default for ApsOptions {
    fn default() -> Self {
        ApsOptions { episodes_per_probe: 20, target_drop: 0.5, seed: 0 }
    }
}

/// Noise precisions and their per-layer shares. Rows where no site ever
/// crossed the drop threshold stay all-zero and carry a flag.
#[derive(Debug, Clone)]
pub struct ApsReport {
    /// `1 / sigma2` at the 50% drop, `[layer][column]`; zero when the
    /// score never dropped within the sweep range.
    pub lambda: Vec<Vec<f64>>,
    /// `lambda` normalized across columns per layer.
    pub aps: Vec<Vec<f64>>,
    pub baseline_score: f64,
    pub floor_score: f64,
    pub episodes_per_probe: usize,
    pub target_drop: f64,
    pub flags: Vec<String>,
    pub notes: &'static str,
}

/// Measures every live (layer, column) site of column `k`'s policy in
/// `env`.
///
/// The same derived episode seeds are reused for the baseline, the floor,
/// and every probe, so score differences come from the noise rather than
/// from episode draws. Activation variances come from `stats`, which must
/// have been estimated on the same policy.
pub fn compute_aps<E: Environment>(
    net: &ProgressiveNetwork,
    k: usize,
    env: &mut E,
    stats: &ActivationStats,
    opts: &ApsOptions,
) -> Result<ApsReport, AnalysisError> {
    let n_layers = net.spec().layers.len();
    assert_eq!(stats.n_layers(), n_layers, "stats must match the network");
    assert!(stats.n_columns() >= k, "stats must cover every live column");

    let episode_seeds: Vec<u64> = (0..opts.episodes_per_probe as u64)
        .map(|e| seeds::derive_indexed(opts.seed, "aps-episode", e))
        .collect();

    let baseline = mean_score(net, k, env, &episode_seeds, None, opts.seed)?;
    let floor = random_floor(env, net.spec().n_actions, &episode_seeds, opts.seed)?;
    if baseline - floor <= 1e-9 {
        return Err(AnalysisError::DegenerateBaseline { baseline, floor });
    }
    let threshold = baseline - opts.target_drop * (baseline - floor);

    let mut lambda = vec![vec![0.0; k]; n_layers];
    let mut flags = Vec::new();
    for li in 0..n_layers {
        for j in 0..k {
            let var = stats.variance(li, j);
            if var.iter().all(|&v| v == 0.0) {
                flags.push(format!(
                    "layer {} column {}: activations never vary, noise has no scale; \
                     precision recorded as 0",
                    li + 1,
                    j + 1
                ));
                continue;
            }
            let site_seed = seeds::derive_indexed(opts.seed, "aps-site", (li * k + j) as u64);
            let mut probe_index = 0u64;
            let mut score_at = |sigma2: f64| -> Result<f64, AnalysisError> {
                let std: Vec<f64> = var.iter().map(|v| (sigma2 * v).sqrt()).collect();
                let noise_seed = seeds::derive_indexed(site_seed, "probe", probe_index);
                probe_index += 1;
                mean_score(net, k, env, &episode_seeds, Some((li, j, &std, noise_seed)), opts.seed)
            };
            match find_crossing(&mut score_at, threshold)? {
                Some(sigma2) => lambda[li][j] = 1.0 / sigma2,
                None => flags.push(format!(
                    "layer {} column {}: score never dropped {:.0}% within sigma2 <= {:.0e}; \
                     precision recorded as 0",
                    li + 1,
                    j + 1,
                    opts.target_drop * 100.0,
                    SIGMA2_GRID[SIGMA2_GRID.len() - 1]
                )),
            }
        }
    }

    let aps = lambda
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().map(|l| l / total).collect()
            } else {
                vec![0.0; row.len()]
            }
        })
        .collect();

    Ok(ApsReport {
        lambda,
        aps,
        baseline_score: baseline,
        floor_score: floor,
        episodes_per_probe: opts.episodes_per_probe,
        target_drop: opts.target_drop,
        flags,
        notes: MONOTONE_NOTE,
    })
}

// ── Threshold search ────────────────────────────────────────────────────

/// Finds the smallest noise variance whose probe score is at or below
/// `threshold`: a coarse ascending sweep over [`SIGMA2_GRID`] brackets the
/// first crossing, then [`BISECTION_STEPS`] rounds shrink the bracket.
/// Returns `None` when no grid point crosses.
///
/// The score is assumed non-increasing in the variance; because the sweep
/// keeps the *first* crossing, a non-monotone probe sequence still
/// resolves to the smallest crossing the sweep can see.
fn find_crossing<E>(
    score_at: &mut impl FnMut(f64) -> Result<f64, E>,
    threshold: f64,
) -> Result<Option<f64>, E> {
    let mut bracket = None;
    for (i, &sigma2) in SIGMA2_GRID.iter().enumerate() {
        if score_at(sigma2)? <= threshold {
            let lo = if i == 0 { 0.0 } else { SIGMA2_GRID[i - 1] };
            bracket = Some((lo, sigma2));
            break;
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(None);
    };
    for _ in 0..BISECTION_STEPS {
        // Geometric midpoint once both ends are positive; plain halving
        // while the lower end is still the origin.
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { hi / 2.0 };
        if score_at(mid)? <= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

// ── Scoring ─────────────────────────────────────────────────────────────

/// Mean episode return of column `k`'s policy over fixed episode seeds,
/// optionally with per-feature noise injected at one site (resampled on
/// every forward pass from a stream seeded by `noise_seed`).
fn mean_score<E: Environment>(
    net: &ProgressiveNetwork,
    k: usize,
    env: &mut E,
    episode_seeds: &[u64],
    noise: Option<(usize, usize, &[f64], u64)>,
    seed: u64,
) -> Result<f64, AnalysisError> {
    let mut noise_rng = noise.map(|(.., noise_seed)| ChaCha8Rng::seed_from_u64(noise_seed));
    let mut total = 0.0;
    for (e, &episode_seed) in episode_seeds.iter().enumerate() {
        let mut action_rng =
            ChaCha8Rng::seed_from_u64(seeds::derive_indexed(seed, "aps-actions", e as u64));
        let mut obs = env.reset(episode_seed);
        loop {
            let mut shape = vec![1];
            shape.extend_from_slice(obs.shape());
            let batched = obs.reshaped(shape)?;
            let mut g = Graph::new();
            let obs_node = g.constant(batched);
            let injection = match (&noise, &mut noise_rng) {
                (Some((layer, column, std, _)), Some(rng)) => {
                    Some(NoiseInjection { layer: *layer, column: *column, std, rng })
                }
                _ => None,
            };
            let pass = net.forward_graph(
                &mut g,
                obs_node,
                k,
                &Default::default(),
                ForwardOptions { watch_hidden: false, noise: injection },
            )?;
            let probs_node = g.softmax(pass.logits)?;
            let probs = g.value(probs_node).data();
            let action = sample_categorical(&mut action_rng, probs);
            let step = env.step(action)?;
            total += step.reward;
            if step.done {
                break;
            }
            obs = step.obs;
        }
    }
    Ok(total / episode_seeds.len() as f64)
}

/// Mean episode return of a uniform-random policy over the same seeds.
fn random_floor<E: Environment>(
    env: &mut E,
    n_actions: usize,
    episode_seeds: &[u64],
    seed: u64,
) -> Result<f64, AnalysisError> {
    let uniform = vec![1.0 / n_actions as f64; n_actions];
    let mut total = 0.0;
    for (e, &episode_seed) in episode_seeds.iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive_indexed(seed, "aps-floor", e as u64));
        env.reset(episode_seed);
        loop {
            let action = sample_categorical(&mut rng, &uniform);
            let step = env.step(action)?;
            total += step.reward;
            if step.done {
                break;
            }
        }
    }
    Ok(total / episode_seeds.len() as f64)
}

// ── Tests ───────────────────────────────────────────────────────────────
