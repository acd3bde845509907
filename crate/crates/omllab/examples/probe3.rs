//! Scratch probe: pretraining on freshly resampled problems every batch
//! (the infinite-function limit) instead of one pinned problem set.
//! Not part of the test suite.

use omllab::config::preset;
use omllab::eval::{online_train, run_eval, AdaptScope, EvalReport};
use omllab::network::{NetworkSpec, ParameterSet};
use omllab::problems::{sample_sine_eval_batch, sample_sine_problem, ProblemSource, Trajectory};
use omllab::rngutil;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = preset("sine-desk").unwrap();
    if let Some(batch) = args.get(1).and_then(|s| s.parse().ok()) {
        cfg.problem.batch_size = batch;
    }
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    let pin_lrs: Vec<f64> = args
        .get(4)
        .map(|s| s.split(',').filter_map(|v| v.parse().ok()).collect())
        .unwrap_or_default();
    if let Some(grid) = args.get(5) {
        cfg.eval.lr_grid = grid.split(',').filter_map(|v| v.parse().ok()).collect();
    }
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0);

    let spec = NetworkSpec {
        input_dim: 1 + cfg.problem.functions,
        hidden: cfg.network.hidden.clone(),
        output_dim: 1,
        rln_depth: cfg.network.rln_depth,
    };
    let init = ParameterSet::build(spec, seed).unwrap();

    // Aliased pretraining: each mini-batch comes from a brand-new problem,
    // so the regression target seen by the trunk is the conditional mean.
    let mut rng = rngutil::stream(seed, "pretrain");
    let batches: Vec<_> = (0..steps)
        .map(|_| {
            let problem = sample_sine_problem(&mut rng, cfg.problem.functions);
            sample_sine_eval_batch(&problem, cfg.problem.batch_size, &mut rng)
        })
        .collect();
    let traj = Trajectory { batches };
    let outcome = online_train(&init, &traj, lr, AdaptScope::FullNetwork).unwrap();
    let tail: f64 =
        outcome.step_losses.iter().rev().take(200).sum::<f64>() / 200.0_f64.min(steps as f64);
    println!(
        "aliased pretrain: batch {} steps {} lr {} tail-loss {:.4}",
        cfg.problem.batch_size, steps, lr, tail
    );

    let source = ProblemSource::Sine {
        n_functions: cfg.problem.functions,
        batch_size: cfg.problem.batch_size,
    };
    let ratio = |r: &EvalReport| r.per_block[0] / r.per_block[r.per_block.len() - 1];
    let show = |label: &str, lr: &str, r: &EvalReport| {
        println!(
            "  {label} lr {lr}: mse {:.4} per_block {:?} ratio {:.3}",
            r.aggregate,
            r.per_block.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            ratio(r),
        );
    };

    let mut eval_cfg = cfg.to_eval_config(seed);
    eval_cfg.warm_pln = true;
    for depth in [1usize, 2, 3] {
        let start = outcome.params.with_rln_depth(depth).unwrap();
        let mut frozen = eval_cfg.clone();
        frozen.scope = AdaptScope::HeadOnly;
        for &pin in &pin_lrs {
            match run_eval(&start, "aliased", &source, &frozen, Some(pin)) {
                Ok((r, _)) => show(&format!("ALI-frozen d{depth}"), &pin.to_string(), &r),
                Err(e) => println!("  ALI-frozen d{depth} lr {pin}: {e}"),
            }
        }
        match run_eval(&start, "aliased", &source, &frozen, None) {
            Ok((r, _)) => show(&format!("ALI-frozen d{depth}"), &format!("tuned={}", r.lr), &r),
            Err(e) => println!("  ALI-frozen d{depth} tuned: {e}"),
        }
    }
    let mut standard = eval_cfg.clone();
    standard.scope = AdaptScope::FullNetwork;
    for &pin in &pin_lrs {
        match run_eval(&outcome.params, "aliased", &source, &standard, Some(pin)) {
            Ok((r, _)) => show("ALI-standard", &pin.to_string(), &r),
            Err(e) => println!("  ALI-standard lr {pin}: {e}"),
        }
    }
    match run_eval(&outcome.params, "aliased", &source, &standard, None) {
        Ok((r, _)) => show("ALI-standard", &format!("tuned={}", r.lr), &r),
        Err(e) => println!("  ALI-standard tuned: {e}"),
    }
}
