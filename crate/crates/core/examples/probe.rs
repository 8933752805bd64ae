//! Scratch probe: trains the desk-scale net on Base and prints the curve.

use prognet_core::envs::{mean_optimal_return, EnvOptions, Variant, VariantKind};
use prognet_core::net::{LayerSpec, NetSpec, ProgressiveNetwork};
use prognet_core::trainer::{train, Hyper, TrainOptions};

fn main() {
    let opts = EnvOptions::default();
    let optimal = mean_optimal_return(&opts, 500);
    println!("mean optimal return over 500 seeds: {optimal:.4}");

    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let ent: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let budget: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100_000);
    let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1);
    let workers: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(4);
    let width: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(6);
    let dense: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(48);
    let nstep: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(5);

    let spec = NetSpec::new(
        vec![2, 16, 16],
        vec![
            LayerSpec::conv(width, (4, 4), (2, 2)),
            LayerSpec::conv(width, (3, 3), (1, 1)),
            LayerSpec::conv(width, (3, 3), (1, 1)),
            LayerSpec::dense(dense),
        ],
        3,
    )
    .unwrap();

    let mut net = ProgressiveNetwork::new(spec, seed).unwrap();
    let task = Variant::new(VariantKind::Base, 0);
    let hyper = Hyper {
        learning_rate: lr,
        entropy_coef: ent,
        n_workers: workers,
        n_step: nstep,
        ..Hyper::default()
    };
    let topts = TrainOptions { seed, ..TrainOptions::default() };

    let t0 = std::time::Instant::now();
    let curve = train(&mut net, 1, &task, &hyper, budget, &topts).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("lr={lr} ent={ent} budget={budget} seed={seed}  ({dt:.1}s, {:.0} steps/s)", budget as f64 / dt);
    for p in &curve.points {
        println!(
            "{:>7} steps  score {:+.3}  ({} eps)  pl {:+.4} vl {:.4} H {:.3} |g| {:.2}",
            p.agent_steps, p.mean_score, p.episodes, p.policy_loss, p.value_loss, p.entropy, p.grad_norm
        );
    }
}
