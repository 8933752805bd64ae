//! Scratch pilot for sizing the transfer-matrix experiment. Deleted once
//! budgets are pinned. Round 2: does the head-only baseline fall below 100
//! at budget 45k?

use prognet_core::analysis::curve_area;
use prognet_core::envs::{EnvOptions, VariantKind};
use prognet_core::harness::{desk_spec, job_seed, task_variant};
use prognet_core::net::ProgressiveNetwork;
use prognet_core::seeds;
use prognet_core::trainer::{train, Hyper, LearningCurve, TrainOptions};

const BUDGET: u64 = 45_000;
const WINDOW: u64 = 5_000;
const ROOT: u64 = 424242;
const JOBS: usize = 3;
const TOP_K: usize = 2;

fn stage_opts(job: u64, stage: u64) -> TrainOptions {
    TrainOptions {
        seed: seeds::derive_indexed(job, "stage", stage),
        env_opts: EnvOptions::default(),
        eval_window: WINDOW,
        log_dir: None,
        trainable: None,
    }
}

fn pretrain(source: VariantKind, job: u64) -> ProgressiveNetwork {
    let mut net =
        ProgressiveNetwork::new(desk_spec(), seeds::derive_indexed(job, "column", 0)).unwrap();
    train(&mut net, 1, &task_variant(source), &Hyper::default(), BUDGET, &stage_opts(job, 0))
        .unwrap();
    net
}

fn b1(target: VariantKind, job: u64) -> LearningCurve {
    let mut net =
        ProgressiveNetwork::new(desk_spec(), seeds::derive_indexed(job, "column", 0)).unwrap();
    train(&mut net, 1, &task_variant(target), &Hyper::default(), BUDGET, &stage_opts(job, 0))
        .unwrap()
}

fn b2(pre: &ProgressiveNetwork, target: VariantKind, job: u64) -> LearningCurve {
    let mut net = pre.clone();
    net.reinit_heads(seeds::derive(job, "heads"));
    let mut opts = stage_opts(job, 1);
    opts.trainable = Some(net.head_params().into_iter().collect());
    train(&mut net, 1, &task_variant(target), &Hyper::default(), BUDGET, &opts).unwrap()
}

fn top_k_mean(curves: &[LearningCurve]) -> f64 {
    let mut areas: Vec<f64> = curves.iter().map(|c| curve_area(c, -1.0).unwrap()).collect();
    areas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    areas[..TOP_K].iter().sum::<f64>() / TOP_K as f64
}

#[test]
fn pilot() {
    let sources = [VariantKind::Base, VariantKind::Noisy, VariantKind::HFlip];
    let targets = [VariantKind::Base, VariantKind::Noisy, VariantKind::HFlip, VariantKind::Zoom];
    let t0 = std::time::Instant::now();

    let mut b1_stat = std::collections::BTreeMap::new();
    for &t in &targets {
        let curves: Vec<_> = (0..JOBS).map(|j| b1(t, job_seed(ROOT, j))).collect();
        b1_stat.insert(t.name(), top_k_mean(&curves));
    }
    eprintln!("[{:>6.0}s] baseline1 areas: {b1_stat:?}", t0.elapsed().as_secs_f64());

    let mut scores = Vec::new();
    for &s in &sources {
        let pres: Vec<_> = (0..JOBS).map(|j| pretrain(s, job_seed(ROOT, j))).collect();
        eprintln!("[{:>6.0}s] pretrained {}", t0.elapsed().as_secs_f64(), s.name());
        for &t in &targets {
            let b2c: Vec<_> =
                (0..JOBS).map(|j| b2(&pres[j], t, job_seed(ROOT, j))).collect();
            let score = 100.0 * top_k_mean(&b2c) / b1_stat[t.name()];
            scores.push(score);
            eprintln!(
                "[{:>6.0}s] {}->{}: b2 {:.1}",
                t0.elapsed().as_secs_f64(),
                s.name(),
                t.name(),
                score,
            );
        }
    }
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eprintln!("b2 scores sorted: {scores:?}");
}
