//! Synchronous batched advantage actor-critic.
//!
//! A fixed number of worker environments step in lockstep; every `n_step`
//! decisions the collected transitions become one gradient update. The loss
//! is the classic three-term sum — policy gradient weighted by n-step
//! advantages, squared value error, and an entropy bonus — optimized with
//! plain RMSProp (no momentum, no centring) under a global gradient-norm
//! clip. Everything is seeded, so a run with one worker is bit-reproducible.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvOptions, Environment, MiniCatch, Variant};
use crate::net::{save_checkpoint, NetError, ParamId, ProgressiveNetwork};
use crate::seeds;
use crate::tensor::{Graph, Tensor, TensorError};

mod log;

pub use log::{read_curve_csv, write_curve_csv, write_metadata, RunMeta};

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    /// The loss came out NaN or infinite; training must not continue on a
    /// poisoned parameter state. The message carries a summary of the
    /// offending trajectory.
    #[error("training aborted on non-finite loss; {details}")]
    NonFiniteLoss { details: String },
    #[error("trajectory holds no transitions")]
    EmptyTrajectory,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Checkpoint(#[from] crate::net::CheckpointError),
    #[error("run log: {0}")]
    Io(#[from] std::io::Error),
    #[error("run log: {0}")]
    Csv(#[from] csv::Error),
    #[error("run metadata: {0}")]
    Metadata(#[from] toml::ser::Error),
}

// ── Hyperparameters ─────────────────────────────────────────────────────

/// Grid values for random search. `sample_hyper` draws each field uniformly
/// from its set; everything else keeps its default.
pub const LEARNING_RATES: [f64; 3] = [1e-3, 5e-4, 1e-4];
pub const ENTROPY_COEFS: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const GRAD_CLIPS: [f64; 2] = [20.0, 40.0];
pub const ALPHA_INITS: [f64; 3] = [1.0, 1e-1, 1e-2];

/// RMSProp constants (plain variant: no momentum, uncentred).
pub const RMSPROP_DECAY: f64 = 0.99;
pub const RMSPROP_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    /// Initial value for adapter gates when a new column is grown.
    pub alpha_init: f64,
    pub discount: f64,
    pub n_step: usize,
    pub n_workers: usize,
    pub value_coef: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            learning_rate: 1e-3,
            entropy_coef: 1e-2,
            grad_clip: 40.0,
            alpha_init: 1e-1,
            discount: 0.99,
            n_step: 5,
            n_workers: 2,
            value_coef: 0.5,
        }
    }
}

/// Uniform draw from the categorical grids, deterministic per seed.
pub fn sample_hyper(rng_seed: u64) -> Hyper {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pick = |rng: &mut ChaCha8Rng, set: &[f64]| set[rng.gen_range(0..set.len())];
    Hyper {
        learning_rate: pick(&mut rng, &LEARNING_RATES),
        entropy_coef: pick(&mut rng, &ENTROPY_COEFS),
        grad_clip: pick(&mut rng, &GRAD_CLIPS),
        alpha_init: pick(&mut rng, &ALPHA_INITS),
        ..Hyper::default()
    }
}

// ── Trajectories ────────────────────────────────────────────────────────

/// One rollout's worth of transitions, step-major: index `t·n_workers + w`.
/// `values`, `log_probs` and `entropies` are snapshots from collection time
/// (the same parameters the update will differentiate, since updates are
/// synchronous).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n_workers: usize,
    pub n_step: usize,
    pub obs: Vec<Tensor>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub dones: Vec<bool>,
    /// Truncation value per worker: `V(s_T)` of the state after the last
    /// step, or exactly `0.0` when that step ended its episode.
    pub bootstrap: Vec<f64>,
    /// Returns of episodes that finished during collection.
    pub finished_scores: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Discounted n-step return targets, aligned with the step-major layout.
    pub fn returns(&self, discount: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for w in 0..self.n_workers {
            let rewards: Vec<f64> =
                (0..self.n_step).map(|t| self.rewards[t * self.n_workers + w]).collect();
            let dones: Vec<bool> =
                (0..self.n_step).map(|t| self.dones[t * self.n_workers + w]).collect();
            let worker = n_step_returns(&rewards, &dones, self.bootstrap[w], discount);
            for (t, r) in worker.into_iter().enumerate() {
                out[t * self.n_workers + w] = r;
            }
        }
        out
    }
}

/// Backward recursion for discounted returns: the accumulator starts at the
/// bootstrap value and resets to zero at episode boundaries.
pub fn n_step_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + discount * acc;
        out[t] = acc;
    }
    out
}

// ── Rollout collection ──────────────────────────────────────────────────

/// Anything that can score a batch of observations: probability rows and a
/// value estimate per row. Networks implement it; tests may substitute
/// stubs.
pub trait Policy {
    fn evaluate(&self, obs: &Tensor) -> Result<(Vec<Vec<f64>>, Vec<f64>), TrainerError>;
}

/// A network column acting as a policy.
pub struct ColumnPolicy<'a> {
    pub net: &'a ProgressiveNetwork,
    pub column: usize,
}

impl Policy for ColumnPolicy<'_> {
    fn evaluate(&self, obs: &Tensor) -> Result<(Vec<Vec<f64>>, Vec<f64>), TrainerError> {
        let (probs, values) = self.net.evaluate_batch(self.column, obs)?;
        let n = probs.shape()[1];
        let rows = probs.data().chunks(n).map(|r| r.to_vec()).collect();
        Ok((rows, values))
    }
}

struct Worker {
    env: MiniCatch,
    obs: Tensor,
    episode_return: f64,
    episodes_started: u64,
    seed_base: u64,
}

impl Worker {
    fn new(mut env: MiniCatch, seed_base: u64) -> Self {
        let obs = env.reset(seeds::derive_indexed(seed_base, "episode", 0));
        Worker { env, obs, episode_return: 0.0, episodes_started: 1, seed_base }
    }

    fn next_episode(&mut self) {
        let seed = seeds::derive_indexed(self.seed_base, "episode", self.episodes_started);
        self.obs = self.env.reset(seed);
        self.episodes_started += 1;
        self.episode_return = 0.0;
    }
}

/// Worker environments plus the action-sampling stream. Environments reset
/// themselves on episode end, each drawing from its own seed sequence, so a
/// rollout is a pure function of the construction seed and the policy.
pub struct RolloutState {
    workers: Vec<Worker>,
    rng: ChaCha8Rng,
}

impl RolloutState {
    pub fn new(task: &Variant, opts: &EnvOptions, n_workers: usize, seed: u64) -> Self {
        let workers = (0..n_workers)
            .map(|w| {
                let env = MiniCatch::new(task.clone(), opts.clone());
                Worker::new(env, seeds::derive_indexed(seed, "worker", w as u64))
            })
            .collect();
        RolloutState { workers, rng: ChaCha8Rng::seed_from_u64(seeds::derive(seed, "actions")) }
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }
}

/// Steps every worker `n_step` times under the policy, recording
/// transitions and the truncation bootstrap.
pub fn collect_rollout(
    policy: &impl Policy,
    state: &mut RolloutState,
    n_step: usize,
) -> Result<Trajectory, TrainerError> {
    let n_workers = state.workers.len();
    let mut traj = Trajectory {
        n_workers,
        n_step,
        obs: Vec::with_capacity(n_step * n_workers),
        actions: Vec::with_capacity(n_step * n_workers),
        rewards: Vec::with_capacity(n_step * n_workers),
        values: Vec::with_capacity(n_step * n_workers),
        log_probs: Vec::with_capacity(n_step * n_workers),
        entropies: Vec::with_capacity(n_step * n_workers),
        dones: Vec::with_capacity(n_step * n_workers),
        bootstrap: vec![0.0; n_workers],
        finished_scores: Vec::new(),
    };

    for _ in 0..n_step {
        let batch = stack(state.workers.iter().map(|w| &w.obs))?;
        let (prob_rows, values) = policy.evaluate(&batch)?;
        for (w, worker) in state.workers.iter_mut().enumerate() {
            let probs = &prob_rows[w];
            let action = sample_categorical(&mut state.rng, probs);
            let outcome = worker.env.step(action)?;
            traj.obs.push(worker.obs.clone());
            traj.actions.push(action);
            traj.rewards.push(outcome.reward);
            traj.values.push(values[w]);
            traj.log_probs.push(probs[action].ln());
            traj.entropies.push(entropy(probs));
            traj.dones.push(outcome.done);
            worker.episode_return += outcome.reward;
            if outcome.done {
                traj.finished_scores.push(worker.episode_return);
                worker.next_episode();
            } else {
                worker.obs = outcome.obs;
            }
        }
    }

    let batch = stack(state.workers.iter().map(|w| &w.obs))?;
    let (_, values) = policy.evaluate(&batch)?;
    let last = (n_step - 1) * n_workers;
    for w in 0..n_workers {
        traj.bootstrap[w] = if traj.dones[last + w] { 0.0 } else { values[w] };
    }
    Ok(traj)
}

/// Inverse-CDF draw from a probability row; rounding shortfall falls back to
/// the final action.
pub(crate) fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

fn entropy(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Stacks same-shaped tensors into one batch along a new leading axis.
pub(crate) fn stack<'a>(items: impl Iterator<Item = &'a Tensor>) -> Result<Tensor, TensorError> {
    let mut shape: Option<Vec<usize>> = None;
    let mut data = Vec::new();
    let mut count = 0;
    for t in items {
        match &shape {
            None => shape = Some(t.shape().to_vec()),
            Some(s) => debug_assert_eq!(s[..], t.shape()[..]),
        }
        data.extend_from_slice(t.data());
        count += 1;
    }
    let mut full = vec![count];
    full.extend_from_slice(&shape.expect("stack of at least one tensor"));
    Tensor::from_vec(full, data)
}

// ── Optimizer ───────────────────────────────────────────────────────────

/// Plain RMSProp memory: one running second moment per trained parameter.
#[derive(Debug, Default)]
pub struct OptState {
    second_moment: std::collections::BTreeMap<ParamId, Tensor>,
}

impl OptState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Scales the gradient set so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping and the recomputed norm afterwards.
pub fn clip_gradients(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> (f64, f64) {
    let norm2: f64 = grads.iter().flat_map(|(_, g)| g.data()).map(|v| v * v).sum();
    let norm = norm2.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    let post2: f64 = grads.iter().flat_map(|(_, g)| g.data()).map(|v| v * v).sum();
    (norm, post2.sqrt())
}

// ── The update ──────────────────────────────────────────────────────────

/// Per-update diagnostics. Loss components are reported as per-transition
/// means (comparable across batch sizes); `grad_norm` is the global norm
/// actually applied, recomputed after clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// One gradient step on `column` from a collected trajectory.
///
/// Loss (sums over transitions): −Σ advantage·log π(a|s) +
/// value_coef·Σ (R − V)² − entropy_coef·Σ H(π), with the advantage
/// R − V(s) treated as a constant for the policy term. Gradients are
/// globally norm-clipped, then applied with RMSProp to exactly the ids in
/// `trainable`.
pub fn a2c_update(
    net: &mut ProgressiveNetwork,
    column: usize,
    traj: &Trajectory,
    hyper: &Hyper,
    opt: &mut OptState,
    trainable: &BTreeSet<ParamId>,
) -> Result<UpdateStats, TrainerError> {
    if traj.is_empty() {
        return Err(TrainerError::EmptyTrajectory);
    }
    // Poisoned inputs would otherwise surface as an opaque mid-graph error;
    // reject them here with the trajectory summary the operator needs.
    let finite = |xs: &[f64]| xs.iter().all(|v| v.is_finite());
    if !finite(&traj.rewards) || !finite(&traj.values) || !finite(&traj.bootstrap) {
        return Err(TrainerError::NonFiniteLoss { details: trajectory_summary(traj) });
    }
    let n = traj.len();
    let returns = traj.returns(hyper.discount);
    let advantages: Vec<f64> = returns.iter().zip(&traj.values).map(|(r, v)| r - v).collect();

    let mut g = Graph::new();
    let obs = g.constant(stack(traj.obs.iter())?);
    let pass = net.forward_graph(&mut g, obs, column, trainable, Default::default())?;

    let log_probs = g.log_softmax(pass.logits)?;
    let picked = g.pick_column(log_probs, traj.actions.clone())?;
    let adv = g.constant(Tensor::from_vec(vec![n], advantages)?);
    let weighted = g.mul(picked, adv)?;
    let policy_sum = g.sum(weighted)?;
    let policy_term = g.scalar_mul(policy_sum, -1.0)?;

    let targets = g.constant(Tensor::from_vec(vec![n, 1], returns)?);
    let verr = g.sub(pass.value, targets)?;
    let vsq = g.mul(verr, verr)?;
    let value_sum = g.sum(vsq)?;
    let value_term = g.scalar_mul(value_sum, hyper.value_coef)?;

    let probs = g.softmax(pass.logits)?;
    let plogp = g.mul(probs, log_probs)?;
    let neg_entropy_sum = g.sum(plogp)?;
    let entropy_term = g.scalar_mul(neg_entropy_sum, hyper.entropy_coef)?;

    let partial = g.add(policy_term, value_term)?;
    let loss = g.add(partial, entropy_term)?;

    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Err(TrainerError::NonFiniteLoss { details: trajectory_summary(traj) });
    }

    let stats_policy = g.value(policy_term).item() / n as f64;
    let stats_value = g.value(value_sum).item() / n as f64;
    let stats_entropy = -g.value(neg_entropy_sum).item() / n as f64;

    let mut grads = g.backward(loss)?;
    let mut flat: Vec<(ParamId, Tensor)> = pass
        .bindings
        .iter()
        .map(|(&id, &node)| (id, grads.take(node).expect("bound parameters receive gradients")))
        .collect();
    let (_, applied_norm) = clip_gradients(&mut flat, hyper.grad_clip);

    for (id, grad) in flat {
        let s = opt
            .second_moment
            .entry(id)
            .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
        let theta = net.param_mut(id).expect("trainable parameter exists");
        for ((sv, gv), tv) in
            s.data_mut().iter_mut().zip(grad.data()).zip(theta.data_mut().iter_mut())
        {
            *sv = RMSPROP_DECAY * *sv + (1.0 - RMSPROP_DECAY) * gv * gv;
            *tv -= hyper.learning_rate * gv / (*sv + RMSPROP_EPSILON).sqrt();
        }
    }

    Ok(UpdateStats {
        policy_loss: stats_policy,
        value_loss: stats_value,
        entropy: stats_entropy,
        grad_norm: applied_norm,
    })
}

fn trajectory_summary(traj: &Trajectory) -> String {
    let mut s = String::new();
    let minmax = |xs: &[f64]| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in xs {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        (lo, hi)
    };
    let (rl, rh) = minmax(&traj.rewards);
    let (vl, vh) = minmax(&traj.values);
    let non_finite =
        traj.rewards.iter().chain(&traj.values).filter(|v| !v.is_finite()).count();
    let _ = write!(
        s,
        "{} transitions ({} workers × {} steps), rewards in [{rl}, {rh}], \
         values in [{vl}, {vh}], {non_finite} non-finite inputs",
        traj.len(),
        traj.n_workers,
        traj.n_step,
    );
    s
}

// ── Training loop ───────────────────────────────────────────────────────

/// One evaluation window's worth of curve data; `mean_score` averages the
/// episodes that finished inside the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub agent_steps: u64,
    pub mean_score: f64,
    pub episodes: u64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// Score trace sampled at a fixed cadence of agent steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub window: u64,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn new(window: u64) -> Self {
        LearningCurve { window, points: Vec::new() }
    }

    pub fn push(&mut self, point: CurvePoint) {
        if let Some(last) = self.points.last() {
            assert!(point.agent_steps > last.agent_steps, "curve steps must increase");
        }
        self.points.push(point);
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean score of the final window, if any.
    pub fn final_score(&self) -> Option<f64> {
        self.points.last().map(|p| p.mean_score)
    }

    /// Highest windowed mean score reached.
    pub fn best_score(&self) -> Option<f64> {
        self.points.iter().map(|p| p.mean_score).reduce(f64::max)
    }
}

/// Knobs for [`train`] beyond the hyperparameters proper.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub seed: u64,
    pub env_opts: EnvOptions,
    /// Curve cadence in agent steps.
    pub eval_window: u64,
    /// When set, the run writes `run.csv`, `metadata.toml`, a rolling
    /// `latest.ckpt` per window, and `final.ckpt` on completion.
    pub log_dir: Option<PathBuf>,
    /// Restricts the update to this parameter set (e.g. heads only);
    /// defaults to every parameter of the youngest column.
    pub trainable: Option<BTreeSet<ParamId>>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            seed: 0,
            env_opts: EnvOptions::default(),
            eval_window: 5_000,
            log_dir: None,
            trainable: None,
        }
    }
}

/// Trains `column` on `task` for `budget_steps` agent steps, alternating
/// rollout collection and gradient updates, and returns the windowed
/// learning curve. A zero budget is a no-op with an empty curve.
pub fn train(
    net: &mut ProgressiveNetwork,
    column: usize,
    task: &Variant,
    hyper: &Hyper,
    budget_steps: u64,
    opts: &TrainOptions,
) -> Result<LearningCurve, TrainerError> {
    let trainable: BTreeSet<ParamId> =
        opts.trainable.clone().unwrap_or_else(|| net.trainable_params().into_iter().collect());
    let mut state = RolloutState::new(task, &opts.env_opts, hyper.n_workers, opts.seed);
    let mut opt = OptState::new();
    let mut curve = LearningCurve::new(opts.eval_window);

    let mut steps = 0u64;
    let mut next_window = opts.eval_window;
    let mut scores: Vec<f64> = Vec::new();
    let mut sums = UpdateStats { policy_loss: 0.0, value_loss: 0.0, entropy: 0.0, grad_norm: 0.0 };
    let mut n_updates = 0u64;
    let mut last_mean = 0.0;

    if let Some(dir) = &opts.log_dir {
        std::fs::create_dir_all(dir)?;
        write_metadata(&dir.join("metadata.toml"), &RunMeta::new(task, hyper, opts, column, budget_steps))?;
    }

    while steps < budget_steps {
        let traj = {
            let policy = ColumnPolicy { net, column };
            collect_rollout(&policy, &mut state, hyper.n_step)?
        };
        steps += traj.len() as u64;
        scores.extend_from_slice(&traj.finished_scores);
        let stats = a2c_update(net, column, &traj, hyper, &mut opt, &trainable)?;
        sums.policy_loss += stats.policy_loss;
        sums.value_loss += stats.value_loss;
        sums.entropy += stats.entropy;
        sums.grad_norm += stats.grad_norm;
        n_updates += 1;

        if steps >= next_window {
            let episodes = scores.len() as u64;
            // A window with no finished episode keeps the previous score
            // rather than inventing one; `episodes == 0` marks it.
            let mean_score = if episodes > 0 {
                scores.iter().sum::<f64>() / episodes as f64
            } else {
                last_mean
            };
            last_mean = mean_score;
            let k = n_updates.max(1) as f64;
            curve.push(CurvePoint {
                agent_steps: steps,
                mean_score,
                episodes,
                policy_loss: sums.policy_loss / k,
                value_loss: sums.value_loss / k,
                entropy: sums.entropy / k,
                grad_norm: sums.grad_norm / k,
            });
            scores.clear();
            sums = UpdateStats { policy_loss: 0.0, value_loss: 0.0, entropy: 0.0, grad_norm: 0.0 };
            n_updates = 0;
            next_window += opts.eval_window;
            if let Some(dir) = &opts.log_dir {
                save_checkpoint(net, &dir.join("latest.ckpt"))?;
            }
        }
    }

    if let Some(dir) = &opts.log_dir {
        write_curve_csv(&dir.join("run.csv"), &curve)?;
        save_checkpoint(net, &dir.join("final.ckpt"))?;
    }
    Ok(curve)
}

// ── Tests ───────────────────────────────────────────────────────────────
