//! Acceptance gates: ten numbered end-to-end criteria covering gradient
//! correctness, column isolation, sensitivity analysis, the transfer-score
//! protocol, desk-scale learning, the transfer-matrix orderings, and CLI
//! determinism. One test per criterion; the harness result line is the
//! criterion's pass/fail verdict, and each test prints a summary with the
//! measured numbers (visible under `--nocapture`).
//!
//! Every tolerance and budget is pinned as a constant next to the
//! criterion that uses it. Tests serialize on a global lock so the
//! wall-clock limits measure each criterion's own work; timers start after
//! the lock is taken. Checks that need an oracle compute it through an
//! independent route in this file (hand-rolled finite differences, a
//! brute-force game-tree search, hand backpropagation) rather than through
//! the library code under test.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prognet_core::analysis::{
    afs_spectrum, collect_rho_samples, compute_afs, compute_aps, curve_area, spearman,
    spectrum_area, transfer_score, trapezoid_area, ActivationStats, ApsOptions,
    SensitivityReport, SpectrumColumns, NORMALIZATION_EPSILON,
};
use prognet_core::envs::{optimal_return, EnvOptions, Environment, MiniCatch, VariantKind};
use prognet_core::harness::{desk_spec, job_seed, task_variant};
use prognet_core::net::{
    load_checkpoint, save_checkpoint, ForwardOptions, LayerSpec, NetSpec, ParamId, ParamKind,
    ProgressiveNetwork, Site,
};
use prognet_core::seeds;
use prognet_core::tensor::{Graph, NodeId, Tensor};
use prognet_core::trainer::{train, Hyper, LearningCurve, TrainOptions};

// ── Shared plumbing ─────────────────────────────────────────────────────

/// Serializes the criteria so wall-clock limits are honest on one core.
static GATE: Mutex<()> = Mutex::new(());

fn run_alone() -> MutexGuard<'static, ()> {
    // A failed criterion must not mask the others, so a poisoned lock is
    // still taken.
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn artifact_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).expect("artifact dir is creatable");
    dir
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn tensor_bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn base_env() -> MiniCatch {
    MiniCatch::new(task_variant(VariantKind::Base), EnvOptions::default())
}

/// Training options for stage `stage` of a job, using the same derivations
/// the experiment harness documents on its run specs.
fn stage_opts(job: u64, stage: u64, window: u64) -> TrainOptions {
    TrainOptions {
        seed: seeds::derive_indexed(job, "stage", stage),
        env_opts: EnvOptions::default(),
        eval_window: window,
        log_dir: None,
        trainable: None,
    }
}

fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ── Criterion 1: gradient correctness ───────────────────────────────────

const C1_TOLERANCE: f64 = 1e-4;
const C1_TRIALS_PER_OP: usize = 5;
const C1_FULL_NET_TRIALS: usize = 20;
const C1_TIME_LIMIT_SECS: f64 = 60.0;
/// Central-difference step; retried smaller when a quotient lands on a
/// ReLU kink (see `fd_error`).
const C1_FD_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];

type LossBuilder<'a> = dyn Fn(&mut Graph, &[NodeId]) -> NodeId + 'a;

/// Relative error between one analytic gradient entry and its central
/// difference quotient: `|fd − analytic| / max(|fd|, |analytic|, 1)`.
fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1.0)
}

/// Central finite difference of `eval` at one coordinate, retrying with
/// smaller steps while the quotient disagrees: a ReLU kink inside the
/// bracket inflates the quotient at one step size but the effect shrinks
/// with the step, while a wrong analytic gradient stays wrong at every
/// step. The smallest error over the step ladder is reported.
fn fd_error(analytic: f64, mut eval_at: impl FnMut(f64) -> f64, origin: f64) -> f64 {
    let mut best = f64::INFINITY;
    for &h in &C1_FD_STEPS {
        let plus = eval_at(origin + h);
        let minus = eval_at(origin - h);
        let fd = (plus - minus) / (2.0 * h);
        best = best.min(relative_error(fd, analytic));
        if best < C1_TOLERANCE {
            break;
        }
    }
    best
}

/// Checks every coordinate of every parameter of one op-level loss: the
/// analytic route differentiates the graph, the oracle route re-evaluates
/// the same loss with hand-perturbed inputs.
fn op_max_error(params: &[Tensor], build: &LossBuilder) -> f64 {
    let mut g = Graph::new();
    let nodes: Vec<NodeId> = params.iter().map(|t| g.parameter(t.clone())).collect();
    let loss = build(&mut g, &nodes);
    let grads = g.backward(loss).expect("op losses are differentiable");
    let analytic: Vec<Option<Tensor>> = nodes.iter().map(|&n| grads.get(n).cloned()).collect();

    let eval = |work: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let nodes: Vec<NodeId> = work.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &nodes);
        g.value(loss).item()
    };

    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let origin = params[pi].data()[ei];
            let a = analytic[pi].as_ref().map_or(0.0, |t| t.data()[ei]);
            let err = fd_error(
                a,
                |x| {
                    work[pi].data_mut()[ei] = x;
                    eval(&work)
                },
                origin,
            );
            work[pi].data_mut()[ei] = origin;
            worst = worst.max(err);
        }
    }
    worst
}

/// One trial of the full two-column forward pass: a fresh random network,
/// a random observation batch, and a scalar loss that weights every policy
/// probability and value output. Two random coordinates of every
/// parameter of the live column are probed.
fn full_net_max_error(rng: &mut ChaCha8Rng) -> f64 {
    let mut net = ProgressiveNetwork::new(desk_spec(), rng.gen()).unwrap();
    net.add_column(rng.gen(), 0.1).unwrap();
    let obs = random_tensor(rng, vec![2, 2, 16, 16], 0.0, 1.0);
    let c_policy = random_tensor(rng, vec![2, 3], -1.0, 1.0);
    let c_value = random_tensor(rng, vec![2, 1], -1.0, 1.0);

    let loss_of = |net: &ProgressiveNetwork,
                   g: &mut Graph,
                   trainable: &BTreeSet<ParamId>|
     -> (NodeId, std::collections::BTreeMap<ParamId, NodeId>) {
        let obs_node = g.constant(obs.clone());
        let pass = net
            .forward_graph(g, obs_node, 2, trainable, ForwardOptions::default())
            .expect("forward succeeds on the desk architecture");
        let probs = g.softmax(pass.logits).unwrap();
        let wp = g.constant(c_policy.clone());
        let weighted_p = g.mul(probs, wp).unwrap();
        let sp = g.sum(weighted_p).unwrap();
        let wv = g.constant(c_value.clone());
        let weighted_v = g.mul(pass.value, wv).unwrap();
        let sv = g.sum(weighted_v).unwrap();
        let loss = g.add(sp, sv).unwrap();
        (loss, pass.bindings)
    };

    let trainable: BTreeSet<ParamId> = net.trainable_params().into_iter().collect();
    let mut g = Graph::new();
    let (loss, bindings) = loss_of(&net, &mut g, &trainable);
    let grads = g.backward(loss).unwrap();

    let empty = BTreeSet::new();
    let mut probe_net = net.clone();
    let mut worst = 0.0f64;
    for &id in &trainable {
        let numel = net.param(id).unwrap().numel();
        let analytic = bindings.get(&id).and_then(|&n| grads.get(n)).cloned();
        for _ in 0..2 {
            let ei = rng.gen_range(0..numel);
            let origin = net.param(id).unwrap().data()[ei];
            let a = analytic.as_ref().map_or(0.0, |t| t.data()[ei]);
            let err = fd_error(
                a,
                |x| {
                    probe_net.param_mut(id).unwrap().data_mut()[ei] = x;
                    let mut g = Graph::new();
                    let (l, _) = loss_of(&probe_net, &mut g, &empty);
                    g.value(l).item()
                },
                origin,
            );
            probe_net.param_mut(id).unwrap().data_mut()[ei] = origin;
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let _gate = run_alone();
    let started = Instant::now();
    let mut r = rng(seeds::derive(1, "acceptance-gradcheck"));

    // Sixteen op-level losses × five trials, plus twenty full-network
    // trials: one hundred random trials in total. `sum` reduces every one
    // of these losses to a scalar, and the convolutional concat path is
    // exercised inside the full network's lateral adapters.
    let mut worst: Vec<(String, f64)> = Vec::new();
    for trial in 0..C1_TRIALS_PER_OP {
        let mut check = |name: &str, params: Vec<Tensor>, build: Box<LossBuilder>| {
            let err = op_max_error(&params, &*build);
            worst.push((format!("{name}#{trial}"), err));
        };

        let c = random_tensor(&mut r, vec![4, 3], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![4, 6], -1.0, 1.0);
        let w = random_tensor(&mut r, vec![3, 6], -1.0, 1.0);
        let b = random_tensor(&mut r, vec![3], -1.0, 1.0);
        check(
            "dense",
            vec![x, w, b],
            Box::new(move |g, p| {
                let y = g.dense(p[0], p[1], p[2]).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        let c = random_tensor(&mut r, vec![2, 4, 3, 3], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![2, 3, 5, 5], -1.0, 1.0);
        let w = random_tensor(&mut r, vec![4, 3, 3, 3], -1.0, 1.0);
        let b = random_tensor(&mut r, vec![4], -1.0, 1.0);
        check(
            "conv2d stride 1",
            vec![x, w, b],
            Box::new(move |g, p| {
                let y = g.conv2d(p[0], p[1], Some(p[2]), (1, 1)).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        let c = random_tensor(&mut r, vec![2, 4, 2, 2], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![2, 3, 5, 5], -1.0, 1.0);
        let w = random_tensor(&mut r, vec![4, 3, 3, 3], -1.0, 1.0);
        check(
            "conv2d stride 2, no bias",
            vec![x, w],
            Box::new(move |g, p| {
                let y = g.conv2d(p[0], p[1], None, (2, 2)).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        // ReLU inputs are sampled away from the kink so the quotient is
        // taken on a smooth piece.
        let c = random_tensor(&mut r, vec![2, 8], -1.0, 1.0);
        let mut x = random_tensor(&mut r, vec![2, 8], 0.05, 1.0);
        for v in x.data_mut() {
            if r.gen::<bool>() {
                *v = -*v;
            }
        }
        check(
            "relu",
            vec![x],
            Box::new(move |g, p| {
                let y = g.relu(p[0]).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        for (name, log) in [("softmax", false), ("log_softmax", true)] {
            let c = random_tensor(&mut r, vec![3, 5], -1.0, 1.0);
            let x = random_tensor(&mut r, vec![3, 5], -2.0, 2.0);
            check(
                name,
                vec![x],
                Box::new(move |g, p| {
                    let y = if log { g.log_softmax(p[0]).unwrap() } else { g.softmax(p[0]).unwrap() };
                    let cn = g.constant(c.clone());
                    let m = g.mul(y, cn).unwrap();
                    g.sum(m).unwrap()
                }),
            );
        }

        let c = random_tensor(&mut r, vec![2, 4], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![2, 4], -1.0, 1.0);
        check(
            "exp",
            vec![x],
            Box::new(move |g, p| {
                let y = g.exp(p[0]).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        let c = random_tensor(&mut r, vec![3, 4], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![2, 6], -1.0, 1.0);
        check(
            "reshape",
            vec![x],
            Box::new(move |g, p| {
                let y = g.reshape(p[0], vec![3, 4]).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        let c = random_tensor(&mut r, vec![2, 12], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![2, 3, 2, 2], -1.0, 1.0);
        check(
            "flatten",
            vec![x],
            Box::new(move |g, p| {
                let y = g.flatten(p[0]).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        let c = random_tensor(&mut r, vec![2, 8], -1.0, 1.0);
        let a = random_tensor(&mut r, vec![2, 3], -1.0, 1.0);
        let b = random_tensor(&mut r, vec![2, 5], -1.0, 1.0);
        check(
            "concat",
            vec![a, b],
            Box::new(move |g, p| {
                let y = g.concat(&[p[0], p[1]]).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        for name in ["add", "sub", "mul"] {
            let c = random_tensor(&mut r, vec![3, 4], -1.0, 1.0);
            let a = random_tensor(&mut r, vec![3, 4], -1.0, 1.0);
            let b = random_tensor(&mut r, vec![3, 4], -1.0, 1.0);
            check(
                name,
                vec![a, b],
                Box::new(move |g, p| {
                    let y = match name {
                        "add" => g.add(p[0], p[1]).unwrap(),
                        "sub" => g.sub(p[0], p[1]).unwrap(),
                        _ => g.mul(p[0], p[1]).unwrap(),
                    };
                    let cn = g.constant(c.clone());
                    let m = g.mul(y, cn).unwrap();
                    g.sum(m).unwrap()
                }),
            );
        }

        let c = random_tensor(&mut r, vec![2, 3], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![2, 3], -1.0, 1.0);
        check(
            "scalar_mul",
            vec![x],
            Box::new(move |g, p| {
                let y = g.scalar_mul(p[0], 1.7).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        let c = random_tensor(&mut r, vec![2, 3], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![2, 3], -1.0, 1.0);
        let s = random_tensor(&mut r, vec![1], -1.0, 1.0);
        check(
            "scale_by_scalar",
            vec![x, s],
            Box::new(move |g, p| {
                let y = g.scale_by_scalar(p[0], p[1]).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );

        let c = random_tensor(&mut r, vec![4], -1.0, 1.0);
        let x = random_tensor(&mut r, vec![4, 5], -2.0, 2.0);
        let picks: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
        check(
            "pick_column",
            vec![x],
            Box::new(move |g, p| {
                let y = g.log_softmax(p[0]).unwrap();
                let y = g.pick_column(y, picks.clone()).unwrap();
                let cn = g.constant(c.clone());
                let m = g.mul(y, cn).unwrap();
                g.sum(m).unwrap()
            }),
        );
    }

    for trial in 0..C1_FULL_NET_TRIALS {
        let err = full_net_max_error(&mut r);
        worst.push((format!("two-column forward #{trial}"), err));
    }

    let elapsed = started.elapsed().as_secs_f64();
    let (who, max_err) = worst
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(n, e)| (n.clone(), *e))
        .unwrap();
    println!(
        "criterion 1: {} trials, max relative error {max_err:.3e} ({who}), {elapsed:.1}s",
        worst.len()
    );
    assert_eq!(worst.len(), 100, "the trial budget is pinned at one hundred");
    assert!(
        max_err < C1_TOLERANCE,
        "worst finite-difference disagreement {max_err:.3e} ({who}) is at or over {C1_TOLERANCE:e}"
    );
    assert!(
        elapsed < C1_TIME_LIMIT_SECS,
        "gradient checks took {elapsed:.1}s, over the {C1_TIME_LIMIT_SECS}s limit"
    );
}

// ── Criterion 2: training never touches prior columns ───────────────────

const C2_FIXED_INPUTS: usize = 50;
const C2_PRETRAIN_STEPS: u64 = 3_000;
const C2_TRAIN_STEPS: u64 = 2_500;
const C2_HEAD_STEPS: u64 = 1_000;

#[test]
fn criterion_02_training_never_touches_prior_columns() {
    let _gate = run_alone();
    let root = seeds::derive(2, "acceptance-freeze");

    let mut net = ProgressiveNetwork::new(desk_spec(), seeds::derive(root, "column-1")).unwrap();
    train(
        &mut net,
        1,
        &task_variant(VariantKind::Base),
        &Hyper::default(),
        C2_PRETRAIN_STEPS,
        &stage_opts(root, 0, 500),
    )
    .unwrap();
    net.add_column(seeds::derive(root, "column-2"), 0.1).unwrap();

    // Fifty fixed inputs: fresh-episode observations from two task
    // variants the prior column was and was not trained on.
    let mut inputs = Vec::with_capacity(C2_FIXED_INPUTS);
    let mut env_a = base_env();
    let mut env_b = MiniCatch::new(task_variant(VariantKind::Noisy), EnvOptions::default());
    for i in 0..C2_FIXED_INPUTS as u64 {
        let env = if i % 2 == 0 { &mut env_a } else { &mut env_b };
        inputs.push(env.reset(seeds::derive_indexed(root, "fixed-input", i)));
    }

    let prior_ids: Vec<ParamId> = net.column(0).param_ids().collect();
    let before_params: Vec<Vec<u64>> =
        prior_ids.iter().map(|&id| tensor_bits(net.column(0).param(id).unwrap())).collect();
    let before_outputs: Vec<(Vec<u64>, u64, Vec<Vec<u64>>)> = inputs
        .iter()
        .map(|obs| {
            let out = net.evaluate(1, obs).unwrap();
            let acts = out.activations.iter().flatten().map(tensor_bits).collect();
            (out.policy.iter().map(|p| p.to_bits()).collect(), out.value.to_bits(), acts)
        })
        .collect();

    let dir = artifact_dir().join("freeze");
    fs::create_dir_all(&dir).unwrap();
    save_checkpoint(&net, &dir.join("before.ckpt")).unwrap();

    // Train the live column fully, then its heads alone: the prior column
    // must come through both untouched.
    train(
        &mut net,
        2,
        &task_variant(VariantKind::Noisy),
        &Hyper::default(),
        C2_TRAIN_STEPS,
        &stage_opts(root, 1, 500),
    )
    .unwrap();
    let mut head_opts = stage_opts(root, 2, 500);
    head_opts.trainable = Some(net.head_params().into_iter().collect());
    train(
        &mut net,
        2,
        &task_variant(VariantKind::Base),
        &Hyper::default(),
        C2_HEAD_STEPS,
        &head_opts,
    )
    .unwrap();
    save_checkpoint(&net, &dir.join("after.ckpt")).unwrap();

    // Byte-level diff of the checkpoints, restricted to the prior column.
    let before_ckpt = load_checkpoint(&dir.join("before.ckpt")).unwrap();
    let after_ckpt = load_checkpoint(&dir.join("after.ckpt")).unwrap();
    for &id in &prior_ids {
        assert_eq!(
            tensor_bits(before_ckpt.column(0).param(id).unwrap()),
            tensor_bits(after_ckpt.column(0).param(id).unwrap()),
            "checkpoint diff: prior-column parameter {id} changed"
        );
    }
    // In-memory bits, same statement without the serialization round trip.
    for (i, &id) in prior_ids.iter().enumerate() {
        assert_eq!(
            before_params[i],
            tensor_bits(net.column(0).param(id).unwrap()),
            "prior-column parameter {id} changed in memory"
        );
    }
    assert!(net.column(0).is_frozen(), "the prior column must be frozen");

    let mut checked = 0;
    for (obs, before) in inputs.iter().zip(&before_outputs) {
        let out = net.evaluate(1, obs).unwrap();
        let policy_bits: Vec<u64> = out.policy.iter().map(|p| p.to_bits()).collect();
        let act_bits: Vec<Vec<u64>> = out.activations.iter().flatten().map(tensor_bits).collect();
        assert_eq!(before.0, policy_bits, "prior-column policy drifted");
        assert_eq!(before.1, out.value.to_bits(), "prior-column value drifted");
        assert_eq!(before.2, act_bits, "prior-column activations drifted");
        checked += 1;
    }

    println!(
        "criterion 2: {} prior parameters and {checked} fixed inputs bit-identical after {} training steps",
        prior_ids.len(),
        C2_TRAIN_STEPS + C2_HEAD_STEPS
    );
}

// ── Criterion 3: zeroed adapters match a standalone column ──────────────

const C3_TOLERANCE: f64 = 1e-12;
const C3_INPUT_BATCHES: usize = 20;

fn zero_adapters(net: &mut ProgressiveNetwork, column_idx: usize) {
    let ids: Vec<ParamId> = net
        .column(column_idx)
        .param_ids()
        .filter(|id| {
            matches!(
                id.kind,
                ParamKind::AdapterScale(_)
                    | ParamKind::AdapterProj
                    | ParamKind::AdapterProjBias
                    | ParamKind::AdapterLateral
            )
        })
        .collect();
    for id in ids {
        for v in net.param_mut(id).unwrap().data_mut() {
            *v = 0.0;
        }
    }
}

#[test]
fn criterion_03_zeroed_adapters_match_standalone_column() {
    let _gate = run_alone();
    let mut r = rng(seeds::derive(3, "acceptance-zero-lateral"));

    let mut net = ProgressiveNetwork::new(desk_spec(), r.gen()).unwrap();
    net.add_column(r.gen(), 0.1).unwrap();
    zero_adapters(&mut net, 1);

    // A standalone single column carrying the second column's own weights.
    let mut standalone = ProgressiveNetwork::new(desk_spec(), r.gen()).unwrap();
    let ids: Vec<ParamId> = standalone.column(0).param_ids().collect();
    for id in ids {
        let src = ParamId::new(2, id.site, id.kind);
        let values = net.param(src).unwrap().clone();
        *standalone.param_mut(id).unwrap() = values;
    }

    let mut worst = 0.0f64;
    for _ in 0..C3_INPUT_BATCHES {
        let obs = random_tensor(&mut r, vec![3, 2, 16, 16], 0.0, 1.0);
        let (probs_a, values_a) = net.evaluate_batch(2, &obs).unwrap();
        let (probs_b, values_b) = standalone.evaluate_batch(1, &obs).unwrap();
        worst = worst.max(probs_a.max_abs_diff(&probs_b));
        for (a, b) in values_a.iter().zip(&values_b) {
            worst = worst.max((a - b).abs());
        }
    }

    println!(
        "criterion 3: zeroed-adapter column vs standalone, max |Δ| = {worst:.3e} over {C3_INPUT_BATCHES} random batches"
    );
    assert!(
        worst <= C3_TOLERANCE,
        "zeroed adapters should silence the laterals: max |Δ| = {worst:.3e} > {C3_TOLERANCE:e}"
    );
}

// ── Criterion 4: sensitivity normalization and the Fisher oracle ────────

const C4_SUM_TOLERANCE: f64 = 1e-9;
const C4_ORACLE_TOLERANCE: f64 = 1e-10;
const C4_SAMPLES: usize = 96;

#[test]
fn criterion_04_fisher_sensitivity_normalization_and_oracle() {
    let _gate = run_alone();
    let root = seeds::derive(4, "acceptance-afs");
    let mut r = rng(root);

    // (a) Shares sum to one across columns at every defined feature.
    let mut net = ProgressiveNetwork::new(desk_spec(), r.gen()).unwrap();
    net.add_column(r.gen(), 0.1).unwrap();
    let samples =
        collect_rho_samples(&net, 2, &mut base_env(), C4_SAMPLES, seeds::derive(root, "rho"))
            .unwrap();
    let report = compute_afs(&net, 2, &samples).unwrap();
    let mut n_features_checked = 0;
    for layer in &report.afs_feature {
        let n_features = layer[0].len();
        for m in 0..n_features {
            let shares: Vec<f64> = layer.iter().filter_map(|col| col[m]).collect();
            if shares.is_empty() {
                continue;
            }
            assert_eq!(shares.len(), layer.len(), "a feature is defined for all columns or none");
            let total: f64 = shares.iter().sum();
            assert!(
                (total - 1.0).abs() <= C4_SUM_TOLERANCE,
                "feature shares sum to {total}, off by more than {C4_SUM_TOLERANCE:e}"
            );
            n_features_checked += 1;
        }
    }
    for per_layer in &report.afs_layer {
        let total: f64 = per_layer.iter().sum();
        assert!(
            (total - 1.0).abs() <= C4_SUM_TOLERANCE,
            "layer shares sum to {total}, off by more than {C4_SUM_TOLERANCE:e}"
        );
    }

    // (b) A single column owns every share outright.
    let single = ProgressiveNetwork::new(desk_spec(), r.gen()).unwrap();
    let samples_1 =
        collect_rho_samples(&single, 1, &mut base_env(), C4_SAMPLES, seeds::derive(root, "rho-1"))
            .unwrap();
    let report_1 = compute_afs(&single, 1, &samples_1).unwrap();
    for layer in &report_1.afs_feature {
        for share in layer[0].iter().flatten() {
            assert_eq!(*share, 1.0, "a lone column's share must be exactly one");
        }
    }
    for per_layer in &report_1.afs_layer {
        assert_eq!(per_layer[0], 1.0);
    }

    // (c) Zeroed adapters cut every gradient path into the prior column,
    // so its share collapses to exactly zero from the second layer up.
    let mut cut = ProgressiveNetwork::new(desk_spec(), r.gen()).unwrap();
    cut.add_column(r.gen(), 0.1).unwrap();
    zero_adapters(&mut cut, 1);
    let samples_cut =
        collect_rho_samples(&cut, 2, &mut base_env(), C4_SAMPLES, seeds::derive(root, "rho-cut"))
            .unwrap();
    let report_cut = compute_afs(&cut, 2, &samples_cut).unwrap();
    for (li, layer) in report_cut.afs_feature.iter().enumerate().skip(1) {
        for share in layer[0].iter().flatten() {
            assert_eq!(
                *share, 0.0,
                "layer {}: prior column kept sensitivity {share} through zeroed laterals",
                li + 1
            );
        }
    }

    // (d) The averaged squared-gradient diagonal matches a hand-derived
    // oracle on a one-layer dense policy: for logits ℓ = Wp·h + bp and
    // π = softmax(ℓ), ∂log π_a/∂h = Wp'(e_a − π), squared, averaged over
    // samples, and scaled by each feature's population variance plus the
    // normalization floor.
    let toy_spec = NetSpec {
        input: vec![1, 2, 2],
        layers: vec![LayerSpec::Dense { width: 3 }],
        n_actions: 2,
    };
    let toy = ProgressiveNetwork::new(toy_spec, r.gen()).unwrap();
    let toy_samples: Vec<prognet_core::analysis::RhoSample> = (0..64)
        .map(|_| prognet_core::analysis::RhoSample {
            obs: random_tensor(&mut r, vec![1, 2, 2], -1.0, 1.0),
            action: r.gen_range(0..2),
        })
        .collect();
    let toy_report = compute_afs(&toy, 1, &toy_samples).unwrap();

    let w = toy.param(ParamId::new(1, Site::Hidden(0), ParamKind::Weight)).unwrap();
    let b = toy.param(ParamId::new(1, Site::Hidden(0), ParamKind::Bias)).unwrap();
    let wp = toy.param(ParamId::new(1, Site::PolicyHead, ParamKind::Weight)).unwrap();
    let bp = toy.param(ParamId::new(1, Site::PolicyHead, ParamKind::Bias)).unwrap();
    let mut hidden = vec![[0.0f64; 3]; toy_samples.len()];
    let mut grad_sq_sum = [0.0f64; 3];
    for (s, sample) in toy_samples.iter().enumerate() {
        let x = sample.obs.data();
        let mut h = [0.0f64; 3];
        for j in 0..3 {
            let mut z = b.data()[j];
            for (i, &xi) in x.iter().enumerate() {
                z += w.data()[j * 4 + i] * xi;
            }
            h[j] = z.max(0.0);
        }
        hidden[s] = h;
        let mut logits = [0.0f64; 2];
        for (a, logit) in logits.iter_mut().enumerate() {
            *logit = bp.data()[a] + (0..3).map(|j| wp.data()[a * 3 + j] * h[j]).sum::<f64>();
        }
        let peak = logits[0].max(logits[1]);
        let exps = [(logits[0] - peak).exp(), (logits[1] - peak).exp()];
        let z = exps[0] + exps[1];
        let pi = [exps[0] / z, exps[1] / z];
        for j in 0..3 {
            let mut g = 0.0;
            for a in 0..2 {
                let indicator = if a == sample.action { 1.0 } else { 0.0 };
                g += (indicator - pi[a]) * wp.data()[a * 3 + j];
            }
            grad_sq_sum[j] += g * g;
        }
    }
    let n = toy_samples.len() as f64;
    for j in 0..3 {
        let mean_h = hidden.iter().map(|h| h[j]).sum::<f64>() / n;
        let var_h = hidden.iter().map(|h| (h[j] - mean_h).powi(2)).sum::<f64>() / n;
        let oracle = grad_sq_sum[j] / n * (var_h + NORMALIZATION_EPSILON);
        let measured = toy_report.fisher[0][0][j];
        assert!(
            (measured - oracle).abs() <= C4_ORACLE_TOLERANCE * oracle.abs().max(1.0),
            "feature {j}: averaged squared gradient {measured:.15e} vs hand oracle {oracle:.15e}"
        );
    }

    println!(
        "criterion 4: {n_features_checked} feature shares sum to 1±{C4_SUM_TOLERANCE:e}; \
         lone-column shares ≡ 1; zeroed laterals ⇒ prior share ≡ 0; \
         toy Fisher diagonal within {C4_ORACLE_TOLERANCE:e} of hand backprop"
    );
}

// ── Criterion 5: the transfer-score protocol ────────────────────────────

const C5_AUC_TOLERANCE: f64 = 1e-12;

fn curve_from(window: u64, points: &[(u64, f64)]) -> LearningCurve {
    let mut curve = LearningCurve::new(window);
    for &(agent_steps, mean_score) in points {
        curve.push(prognet_core::trainer::CurvePoint {
            agent_steps,
            mean_score,
            episodes: 10,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            grad_norm: 0.0,
        });
    }
    curve
}

#[test]
fn criterion_05_transfer_score_protocol() {
    let _gate = run_alone();
    let min_score = -1.0;

    let curve = curve_from(100, &[(100, 0.25), (200, 0.5), (300, -0.125), (400, 0.75)]);
    let self_score = transfer_score(&curve, &curve, min_score).unwrap();
    assert_eq!(self_score, 100.0, "a curve against itself must score exactly one hundred");

    // Shifted scores are dyadic, so doubling them is exact in binary
    // floating point and the ratio must come out as exactly two.
    let baseline = curve_from(100, &[(100, -0.5), (200, 0.0), (300, 0.5), (400, 1.0)]);
    let doubled = curve_from(
        100,
        &[(100, min_score + 2.0 * 0.5), (200, min_score + 2.0 * 1.0), (300, min_score + 2.0 * 1.5), (400, min_score + 2.0 * 2.0)],
    );
    let double_score = transfer_score(&doubled, &baseline, min_score).unwrap();
    assert_eq!(double_score, 200.0, "a curve at twice the shifted height must score exactly 200");

    // Trapezoid areas against hand arithmetic: 1·(1+2)/2 + 2·(2+4)/2 +
    // 4·(4+0)/2 = 15.5 for the first, and a longhand compensated sum for a
    // random curve.
    let hand = trapezoid_area(&[0.0, 1.0, 3.0, 7.0], &[1.0, 2.0, 4.0, 0.0]);
    assert!(
        (hand - 15.5).abs() <= C5_AUC_TOLERANCE,
        "trapezoid area {hand} differs from the hand-computed 15.5"
    );

    let mut r = rng(seeds::derive(5, "acceptance-auc"));
    let xs: Vec<f64> = (0..40).map(|i| 250.0 * (i + 1) as f64).collect();
    let ys: Vec<f64> = (0..40).map(|_| r.gen_range(-1.0..1.0)).collect();
    let measured = trapezoid_area(&xs, &ys);
    let mut oracle = 0.0f64;
    let mut compensation = 0.0f64;
    for i in 1..xs.len() {
        let term = (xs[i] - xs[i - 1]) * 0.5 * (ys[i] + ys[i - 1]);
        let y = term - compensation;
        let t = oracle + y;
        compensation = (t - oracle) - y;
        oracle = t;
    }
    assert!(
        (measured - oracle).abs() <= C5_AUC_TOLERANCE,
        "trapezoid area {measured:.15} vs compensated hand sum {oracle:.15}"
    );

    // The shifted-area building block the sweep statistics aggregate
    // agrees with the ratio protocol on a shared grid.
    let area_curve = curve_area(&curve, min_score).unwrap();
    let area_base = curve_area(&baseline, min_score).unwrap();
    let via_areas = 100.0 * area_curve / area_base;
    let via_protocol = transfer_score(&curve, &baseline, min_score).unwrap();
    assert!((via_areas - via_protocol).abs() <= C5_AUC_TOLERANCE);

    println!(
        "criterion 5: self-score exactly 100, doubled curve exactly 200, trapezoid areas within {C5_AUC_TOLERANCE:e} of hand sums"
    );
}

// ── Criterion 6: desk-scale learning approaches the oracle optimum ──────

const C6_ROOT_SEED: u64 = 2026;
const C6_ORACLE_EPISODES: u64 = 600;
const C6_BUDGET: u64 = 300_000;
const C6_WINDOW: u64 = 5_000;
const C6_JOBS: usize = 5;
const C6_REQUIRED_FRACTION: f64 = 0.8;
const C6_REQUIRED_JOBS: usize = 3;
const C6_TIME_LIMIT_SECS: f64 = 600.0;

/// Best achievable episode return by exhaustive search over action
/// sequences, using the environment itself as the transition function.
/// States are memoized on (paddle, ball) — with a one-catch episode the
/// tick counter never reaches its cap and respawns never happen, so those
/// five numbers are the whole Markov state.
fn exhaustive_best_return(
    env: &mut MiniCatch,
    memo: &mut HashMap<(i32, i32, i32, i32, i32), f64>,
    paddle_x: i32,
    ball: prognet_core::envs::Ball,
) -> f64 {
    let key = (paddle_x, ball.x, ball.y, ball.dx, ball.dy);
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let mut best = f64::NEG_INFINITY;
    for action in 0..3 {
        env.reset_from_state(paddle_x, ball);
        let outcome = env.step(action).unwrap();
        let value = if outcome.done {
            outcome.reward
        } else {
            let next = *env.state();
            outcome.reward + exhaustive_best_return(env, memo, next.paddle_x, next.ball)
        };
        best = best.max(value);
    }
    memo.insert(key, best);
    best
}

#[test]
fn criterion_06_scratch_training_approaches_oracle_optimal() {
    let _gate = run_alone();
    let started = Instant::now();

    // Oracle mean over a fixed episode sample, through two independent
    // routes: a brute-force game-tree search driving the real
    // environment, cross-checked against the library's closed-form
    // reachability argument episode by episode.
    let mut env = base_env();
    let mut memo = HashMap::new();
    let mut oracle_sum = 0.0;
    for i in 0..C6_ORACLE_EPISODES {
        let episode_seed = seeds::derive_indexed(C6_ROOT_SEED, "oracle-episode", i);
        env.reset(episode_seed);
        let start = *env.state();
        let brute = exhaustive_best_return(&mut env, &mut memo, start.paddle_x, start.ball);
        let closed_form = optimal_return(&EnvOptions::default(), episode_seed);
        assert_eq!(
            brute, closed_form,
            "episode {i}: exhaustive search found {brute}, the reachability oracle {closed_form}"
        );
        oracle_sum += brute;
    }
    let oracle_mean = oracle_sum / C6_ORACLE_EPISODES as f64;
    let threshold = C6_REQUIRED_FRACTION * oracle_mean;
    let oracle_elapsed = started.elapsed().as_secs_f64();

    let mut best_scores = Vec::with_capacity(C6_JOBS);
    for j in 0..C6_JOBS {
        let job = job_seed(C6_ROOT_SEED, j);
        let mut net =
            ProgressiveNetwork::new(desk_spec(), seeds::derive_indexed(job, "column", 0)).unwrap();
        let curve = train(
            &mut net,
            1,
            &task_variant(VariantKind::Base),
            &Hyper::default(),
            C6_BUDGET,
            &stage_opts(job, 0, C6_WINDOW),
        )
        .unwrap();
        let best = curve.best_score().expect("a full run has curve points");
        println!(
            "criterion 6: job {j} best window mean {best:.3} ({}),",
            if best >= threshold { "reaches the bar" } else { "short" }
        );
        best_scores.push(best);
    }
    let reached = best_scores.iter().filter(|&&s| s >= threshold).count();
    let elapsed = started.elapsed().as_secs_f64();

    println!(
        "criterion 6: oracle mean {oracle_mean:.4} over {C6_ORACLE_EPISODES} episodes \
         ({} search states, {oracle_elapsed:.1}s); {reached}/{C6_JOBS} jobs reached \
         {C6_REQUIRED_FRACTION}×oracle = {threshold:.3} within {C6_BUDGET} steps; total {elapsed:.0}s",
        memo.len()
    );
    assert!(
        reached >= C6_REQUIRED_JOBS,
        "only {reached} of {C6_JOBS} jobs reached {threshold:.3} (best scores {best_scores:?})"
    );
    assert!(
        elapsed < C6_TIME_LIMIT_SECS,
        "criterion 6 took {elapsed:.0}s, over the {C6_TIME_LIMIT_SECS}s limit"
    );
}

// ── Criterion 7: transfer-matrix orderings ──────────────────────────────

const C7_ROOT_SEED: u64 = 7;
const C7_SOURCES: [VariantKind; 3] = [VariantKind::Base, VariantKind::Noisy, VariantKind::HFlip];
const C7_BUDGET: u64 = 45_000;
const C7_WINDOW: u64 = 5_000;
const C7_JOBS: usize = 5;
const C7_TOP_K: usize = 3;
const C7_TIME_LIMIT_SECS: f64 = 7_200.0;

/// Mean of the `top_k` largest areas among the jobs that finished.
fn top_k_mean(areas: &[f64], top_k: usize) -> f64 {
    let mut sorted = areas.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("areas are finite"));
    let k = top_k.min(sorted.len());
    sorted[..k].iter().sum::<f64>() / k as f64
}

fn shifted_area(curve: &LearningCurve) -> f64 {
    curve_area(curve, -1.0).expect("training curves have at least two points")
}

#[test]
fn criterion_07_transfer_matrix_orderings() {
    let _gate = run_alone();
    let started = Instant::now();
    let targets = VariantKind::ALL;
    let jobs: Vec<u64> = (0..C7_JOBS).map(|j| job_seed(C7_ROOT_SEED, j)).collect();
    let hyper = Hyper::default();

    // The runs below derive their seeds exactly as the experiment harness
    // does, so shared stages are computed once: one scratch sweep per
    // target serves as every cell's denominator, and one pretrained column
    // per (source, job) feeds both the head-retrain and the progressive
    // cells (the byte-identical equivalence of that reuse is pinned by the
    // harness's own protocol tests).
    let mut b1_stat = HashMap::new();
    for &target in &targets {
        let areas: Vec<f64> = jobs
            .iter()
            .map(|&job| {
                let mut net =
                    ProgressiveNetwork::new(desk_spec(), seeds::derive_indexed(job, "column", 0))
                        .unwrap();
                let curve = train(
                    &mut net,
                    1,
                    &task_variant(target),
                    &hyper,
                    C7_BUDGET,
                    &stage_opts(job, 0, C7_WINDOW),
                )
                .unwrap();
                shifted_area(&curve)
            })
            .collect();
        println!(
            "criterion 7 [{:>5.0}s]: scratch on {} done",
            started.elapsed().as_secs_f64(),
            target.name()
        );
        b1_stat.insert(target.name(), top_k_mean(&areas, C7_TOP_K));
    }

    let mut b4_score = HashMap::new();
    for &target in &targets {
        let areas: Vec<f64> = jobs
            .iter()
            .map(|&job| {
                let mut net =
                    ProgressiveNetwork::new(desk_spec(), seeds::derive_indexed(job, "column", 0))
                        .unwrap();
                net.add_column(seeds::derive_indexed(job, "column", 1), hyper.alpha_init).unwrap();
                let curve = train(
                    &mut net,
                    2,
                    &task_variant(target),
                    &hyper,
                    C7_BUDGET,
                    &stage_opts(job, 1, C7_WINDOW),
                )
                .unwrap();
                shifted_area(&curve)
            })
            .collect();
        println!(
            "criterion 7 [{:>5.0}s]: random-frozen-prior on {} done",
            started.elapsed().as_secs_f64(),
            target.name()
        );
        b4_score
            .insert(target.name(), 100.0 * top_k_mean(&areas, C7_TOP_K) / b1_stat[target.name()]);
    }

    let mut b2_cells = Vec::new();
    let mut prog_cells = Vec::new();
    for &source in &C7_SOURCES {
        let pretrained: Vec<ProgressiveNetwork> = jobs
            .iter()
            .map(|&job| {
                let mut net =
                    ProgressiveNetwork::new(desk_spec(), seeds::derive_indexed(job, "column", 0))
                        .unwrap();
                train(
                    &mut net,
                    1,
                    &task_variant(source),
                    &hyper,
                    C7_BUDGET,
                    &stage_opts(job, 0, C7_WINDOW),
                )
                .unwrap();
                net
            })
            .collect();
        println!(
            "criterion 7 [{:>5.0}s]: pretrained {}",
            started.elapsed().as_secs_f64(),
            source.name()
        );

        for &target in &targets {
            let b2_areas: Vec<f64> = jobs
                .iter()
                .zip(&pretrained)
                .map(|(&job, pre)| {
                    let mut net = pre.clone();
                    net.reinit_heads(seeds::derive(job, "heads"));
                    let mut opts = stage_opts(job, 1, C7_WINDOW);
                    opts.trainable = Some(net.head_params().into_iter().collect());
                    let curve = train(
                        &mut net,
                        1,
                        &task_variant(target),
                        &hyper,
                        C7_BUDGET,
                        &opts,
                    )
                    .unwrap();
                    shifted_area(&curve)
                })
                .collect();
            let prog_areas: Vec<f64> = jobs
                .iter()
                .zip(&pretrained)
                .map(|(&job, pre)| {
                    let mut net = pre.clone();
                    net.add_column(seeds::derive_indexed(job, "column", 1), hyper.alpha_init)
                        .unwrap();
                    let curve = train(
                        &mut net,
                        2,
                        &task_variant(target),
                        &hyper,
                        C7_BUDGET,
                        &stage_opts(job, 1, C7_WINDOW),
                    )
                    .unwrap();
                    shifted_area(&curve)
                })
                .collect();
            let base = b1_stat[target.name()];
            let b2 = 100.0 * top_k_mean(&b2_areas, C7_TOP_K) / base;
            let prog = 100.0 * top_k_mean(&prog_areas, C7_TOP_K) / base;
            println!(
                "criterion 7 [{:>5.0}s]: {}->{}: heads-only {b2:.1}, progressive {prog:.1}, random-prior {:.1}",
                started.elapsed().as_secs_f64(),
                source.name(),
                target.name(),
                b4_score[target.name()],
            );
            b2_cells.push((source, target, b2));
            prog_cells.push((source, target, prog));
        }
    }

    // Every architecture's cells on the full source × target grid; the
    // random-prior sweep is source-independent, so its row repeats.
    let b2_scores: Vec<f64> = b2_cells.iter().map(|&(_, _, s)| s).collect();
    let prog_scores: Vec<f64> = prog_cells.iter().map(|&(_, _, s)| s).collect();
    let b4_scores: Vec<f64> = C7_SOURCES
        .iter()
        .flat_map(|_| targets.iter().map(|t| b4_score[t.name()]))
        .collect();
    let b2_median = median(&b2_scores);
    let prog_median = median(&prog_scores);
    let b4_median = median(&b4_scores);

    let dir = artifact_dir();
    for (name, cells) in [("baseline2", &b2_cells), ("progressive", &prog_cells)] {
        let mut csv = String::from("source");
        for t in &targets {
            write!(csv, ",{}", t.name()).unwrap();
        }
        csv.push('\n');
        for &source in &C7_SOURCES {
            write!(csv, "{}", source.name()).unwrap();
            for &(s, _, score) in cells.iter().filter(|&&(s, _, _)| s == source) {
                assert_eq!(s, source);
                write!(csv, ",{score}").unwrap();
            }
            csv.push('\n');
        }
        fs::write(dir.join(format!("matrix-{name}.csv")), csv).unwrap();
    }
    let mut b4_csv = String::from("source");
    for t in &targets {
        write!(b4_csv, ",{}", t.name()).unwrap();
    }
    b4_csv.push_str("\nrandom-prior");
    for t in &targets {
        write!(b4_csv, ",{}", b4_score[t.name()]).unwrap();
    }
    b4_csv.push('\n');
    fs::write(dir.join("matrix-baseline4.csv"), b4_csv).unwrap();

    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "criterion 7: medians over {} cells — progressive {prog_median:.1}, random-prior {b4_median:.1}, \
         heads-only {b2_median:.1}; {elapsed:.0}s; matrices in {}",
        prog_scores.len(),
        dir.display()
    );
    assert!(
        prog_median >= b4_median,
        "progressive median {prog_median:.1} fell below the random-frozen-prior median {b4_median:.1}"
    );
    assert!(
        b2_median < 100.0,
        "heads-only median {b2_median:.1} should fall short of scratch at this budget"
    );
    assert!(
        elapsed < C7_TIME_LIMIT_SECS,
        "criterion 7 took {elapsed:.0}s, over the {C7_TIME_LIMIT_SECS}s limit"
    );
}

// ── Criteria 8 and 10 share trained two-column networks ─────────────────

const TRAINED_SEEDS: [u64; 3] = [101, 102, 103];
const TRAINED_SOURCE_BUDGET: u64 = 30_000;
const TRAINED_TARGET_BUDGET: u64 = 50_000;

struct TrainedNet {
    net: ProgressiveNetwork,
    /// Fisher report for the final column, with the perturbation
    /// cross-check attached.
    report: SensitivityReport,
}

/// Column 1 learns the horizontally flipped game, column 2 the base game;
/// both sensitivity estimators then score the finished network on its
/// target task. Shared between the corroboration and spectrum criteria.
fn trained_two_column_nets() -> &'static Vec<TrainedNet> {
    static CACHE: OnceLock<Vec<TrainedNet>> = OnceLock::new();
    CACHE.get_or_init(|| {
        TRAINED_SEEDS
            .iter()
            .map(|&root| {
                let mut net = ProgressiveNetwork::new(
                    desk_spec(),
                    seeds::derive_indexed(root, "column", 0),
                )
                .unwrap();
                train(
                    &mut net,
                    1,
                    &task_variant(VariantKind::HFlip),
                    &Hyper::default(),
                    TRAINED_SOURCE_BUDGET,
                    &stage_opts(root, 0, 5_000),
                )
                .unwrap();
                net.add_column(seeds::derive_indexed(root, "column", 1), 0.1).unwrap();
                train(
                    &mut net,
                    2,
                    &task_variant(VariantKind::Base),
                    &Hyper::default(),
                    TRAINED_TARGET_BUDGET,
                    &stage_opts(root, 1, 5_000),
                )
                .unwrap();

                let samples = collect_rho_samples(
                    &net,
                    2,
                    &mut base_env(),
                    256,
                    seeds::derive(root, "rho"),
                )
                .unwrap();
                let stats = ActivationStats::estimate(&net, 2, &samples).unwrap();
                let mut report = compute_afs(&net, 2, &samples).unwrap();
                let aps = compute_aps(
                    &net,
                    2,
                    &mut base_env(),
                    &stats,
                    &ApsOptions {
                        episodes_per_probe: 20,
                        target_drop: 0.5,
                        seed: seeds::derive(root, "aps"),
                    },
                )
                .unwrap();
                report.attach_aps(aps);
                TrainedNet { net, report }
            })
            .collect()
    })
}

// ── Criterion 8: the two sensitivity estimators agree ───────────────────

#[test]
fn criterion_08_fisher_and_perturbation_rankings_agree() {
    let _gate = run_alone();
    let nets = trained_two_column_nets();

    // Per-layer column attributions from both estimators, pooled across
    // layers and seeds into one rank correlation.
    let mut afs_points = Vec::new();
    let mut aps_points = Vec::new();
    for (i, trained) in nets.iter().enumerate() {
        let report = &trained.report;
        let aps = report.aps.as_ref().expect("the perturbation pass is attached");
        let mut per_seed_afs = Vec::new();
        let mut per_seed_aps = Vec::new();
        for li in 0..report.n_layers() {
            for j in 0..report.n_columns() {
                per_seed_afs.push(report.afs_layer[li][j]);
                per_seed_aps.push(aps.aps[li][j]);
            }
        }
        let rho_seed = spearman(&per_seed_afs, &per_seed_aps);
        println!(
            "criterion 8: seed {} per-seed rank correlation {:?} over {} sites",
            TRAINED_SEEDS[i],
            rho_seed,
            per_seed_afs.len()
        );
        afs_points.extend(per_seed_afs);
        aps_points.extend(per_seed_aps);
    }
    let rho = spearman(&afs_points, &aps_points)
        .expect("pooled attributions are not all tied");

    println!(
        "criterion 8: pooled Spearman over {} (layer, column) attributions \
         from {} trained networks = {rho:.3}",
        afs_points.len(),
        nets.len()
    );
    assert!(
        rho > 0.0,
        "the Fisher and perturbation views disagree on column rankings: ρ = {rho:.3}"
    );
}

// ── Criterion 9: seeded CLI runs are byte-identical ─────────────────────

#[test]
fn criterion_09_seeded_cli_runs_are_byte_identical() {
    let _gate = run_alone();
    let binary = env!("CARGO_BIN_EXE_prognet");
    let dir = artifact_dir().join("determinism");
    fs::create_dir_all(&dir).unwrap();

    let run_train = |out: &Path| {
        let status = std::process::Command::new(binary)
            .args(["train", "--task", "base", "--budget", "4000", "--window", "1000"])
            .args(["--seed", "7", "--workers", "1"])
            .arg("--out")
            .arg(out)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "training invocation failed");
    };
    let a = dir.join("train-a");
    let b = dir.join("train-b");
    run_train(&a);
    run_train(&b);

    let run_afs = |out: &Path| {
        let status = std::process::Command::new(binary)
            .arg("analyze-afs")
            .arg("--from")
            .arg(a.join("final.ckpt"))
            .args(["--task", "base", "--samples", "128", "--seed", "3"])
            .arg("--out")
            .arg(out)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "analysis invocation failed");
    };
    let c = dir.join("afs-a");
    let d = dir.join("afs-b");
    run_afs(&c);
    run_afs(&d);

    let mut compared = Vec::new();
    for (left, right, name) in [
        (&a, &b, "run.csv"),
        (&a, &b, "metadata.toml"),
        (&a, &b, "latest.ckpt"),
        (&a, &b, "final.ckpt"),
        (&c, &d, "afs.csv"),
        (&c, &d, "afs.txt"),
    ] {
        let lhs = fs::read(left.join(name)).unwrap();
        let rhs = fs::read(right.join(name)).unwrap();
        assert_eq!(lhs, rhs, "{name} differs between identical seeded invocations");
        compared.push(format!("{name} ({} bytes)", lhs.len()));
    }

    println!(
        "criterion 9: byte-identical across repeated invocations: {}",
        compared.join(", ")
    );
}

// ── Criterion 10: sensitivity spectra and the capacity trend ────────────

const C10_K3_MIDDLE_BUDGET: u64 = 30_000;

#[test]
fn criterion_10_sensitivity_spectra_sorted_and_trend_logged() {
    let _gate = run_alone();
    let nets = trained_two_column_nets();
    let reports_k2: Vec<SensitivityReport> =
        nets.iter().map(|t| t.report.clone()).collect();
    let n_layers = reports_k2[0].n_layers();

    // Every spectrum is sorted and monotone non-increasing, per network
    // and in the mean, for both column selections at every layer.
    for layer in 0..n_layers {
        for which in [SpectrumColumns::Sources, SpectrumColumns::Final] {
            let spectrum = afs_spectrum(&reports_k2, layer, which).unwrap();
            for values in &spectrum.per_network {
                for pair in values.windows(2) {
                    assert!(
                        pair[1] <= pair[0],
                        "layer {layer}: a per-network spectrum is not sorted descending"
                    );
                }
            }
            for pair in spectrum.mean.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-12,
                    "layer {layer}: the mean spectrum rises from {} to {}",
                    pair[0],
                    pair[1]
                );
            }
            for pair in spectrum.abscissa.windows(2) {
                assert!(pair[1] > pair[0], "the spectrum abscissa must increase");
            }
        }
    }

    // Three-column runs on the same target task: one more frozen source
    // (the noisy variant) between the flipped source and the base-game
    // column.
    let reports_k3: Vec<SensitivityReport> = TRAINED_SEEDS
        .iter()
        .map(|&root| {
            let mut net =
                ProgressiveNetwork::new(desk_spec(), seeds::derive_indexed(root, "column", 0))
                    .unwrap();
            train(
                &mut net,
                1,
                &task_variant(VariantKind::HFlip),
                &Hyper::default(),
                TRAINED_SOURCE_BUDGET,
                &stage_opts(root, 0, 5_000),
            )
            .unwrap();
            net.add_column(seeds::derive_indexed(root, "column", 1), 0.1).unwrap();
            train(
                &mut net,
                2,
                &task_variant(VariantKind::Noisy),
                &Hyper::default(),
                C10_K3_MIDDLE_BUDGET,
                &stage_opts(root, 1, 5_000),
            )
            .unwrap();
            net.add_column(seeds::derive_indexed(root, "column", 2), 0.1).unwrap();
            train(
                &mut net,
                3,
                &task_variant(VariantKind::Base),
                &Hyper::default(),
                TRAINED_TARGET_BUDGET,
                &stage_opts(root, 2, 5_000),
            )
            .unwrap();
            let samples =
                collect_rho_samples(&net, 3, &mut base_env(), 256, seeds::derive(root, "rho-k3"))
                    .unwrap();
            compute_afs(&net, 3, &samples).unwrap()
        })
        .collect();

    // The capacity trend is reported, not asserted: the direction of the
    // final column's spectrum area as the stack deepens is a qualitative
    // observation, and the artifact records whichever way it points.
    let mut log = String::from(
        "final-column sensitivity spectrum area, two-column vs three-column stacks\n\
         (unit-abscissa trapezoid area of the mean sorted spectrum; target task: base)\n\n",
    );
    let mut area_k2_total = 0.0;
    let mut area_k3_total = 0.0;
    for layer in 0..n_layers {
        let area_k2 =
            spectrum_area(&afs_spectrum(&reports_k2, layer, SpectrumColumns::Final).unwrap());
        let area_k3 =
            spectrum_area(&afs_spectrum(&reports_k3, layer, SpectrumColumns::Final).unwrap());
        area_k2_total += area_k2;
        area_k3_total += area_k3;
        writeln!(
            log,
            "layer {}: K=2 {:.4}  K=3 {:.4}  ({})",
            layer + 1,
            area_k2,
            area_k3,
            if area_k3 < area_k2 { "shrinks" } else { "grows" }
        )
        .unwrap();
    }
    writeln!(
        log,
        "\nmean over layers: K=2 {:.4}  K=3 {:.4}  — the final column's share {} as sources accumulate",
        area_k2_total / n_layers as f64,
        area_k3_total / n_layers as f64,
        if area_k3_total < area_k2_total { "shrinks" } else { "grows" }
    )
    .unwrap();
    let path = artifact_dir().join("spectrum-trend.txt");
    fs::write(&path, &log).unwrap();

    println!("criterion 10: spectra sorted and non-increasing; trend report:\n{log}");
    println!("criterion 10: artifact at {}", path.display());
    assert!(path.exists());
}
