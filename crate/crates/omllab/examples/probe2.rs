//! Scratch eval-side tuner; reuses a trained checkpoint. Not part of the
//! test suite.

use omllab::cli::{cmd_eval, ModeArg, RepArg, RepArgs};
use omllab::config::preset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = args.get(1).expect("arg1 = checkpoint dir").clone();
    let mut cfg = preset("sine-desk").unwrap();
    if let Some(batch) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.problem.batch_size = batch;
    }
    let pin_lrs: Vec<f64> = args
        .get(3)
        .map(|s| s.split(',').filter_map(|v| v.parse().ok()).collect())
        .unwrap_or_default();
    if let Some(grid) = args.get(4) {
        cfg.eval.lr_grid = grid.split(',').filter_map(|v| v.parse().ok()).collect();
    }
    if let Some(steps) = args.get(5).and_then(|s| s.parse().ok()) {
        cfg.pretrain.steps = steps;
    }
    if let Some(lr) = args.get(6).and_then(|s| s.parse().ok()) {
        cfg.pretrain.lr = lr;
    }
    let seed: u64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0);
    if let Some(k) = args.get(8).and_then(|s| s.parse().ok()) {
        cfg.eval.k = Some(k);
    }
    let out = std::path::PathBuf::from("/tmp/probe2-sine");
    let _ = std::fs::remove_dir_all(&out);
    let ratio = |r: &omllab::eval::EvalReport| r.per_block[0] / r.per_block[r.per_block.len() - 1];
    let rel_ratio = |r: &omllab::eval::EvalReport| {
        r.per_block_relative[0] / r.per_block_relative[r.per_block_relative.len() - 1]
    };
    let show = |label: &str, lr: &str, r: &omllab::eval::EvalReport| {
        println!(
            "  {label} lr {lr}: mse {:.4} per_block {:?} ratio {:.3} rel {:?} rel_ratio {:.3}",
            r.aggregate,
            r.per_block.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            ratio(r),
            r.per_block_relative.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            rel_ratio(r),
        );
    };
    println!("batch {} grid {:?} pretrain {}@{}", cfg.problem.batch_size, cfg.eval.lr_grid, cfg.pretrain.steps, cfg.pretrain.lr);

    for &pin in &pin_lrs {
        let rep = RepArgs { checkpoint: Some(ckpt.clone().into()), rep: RepArg::Checkpoint, mode: None };
        match cmd_eval(&cfg, seed, &out, None, &rep, Some(pin)) {
            Ok((_d, r)) => show("OML-frozen", &pin.to_string(), &r),
            Err(e) => println!("  OML-frozen lr {pin}: {e}"),
        }
        for (label, mode) in
            [("PRE-frozen", None), ("PRE-standard", Some(ModeArg::Standard))]
        {
            let rep = RepArgs { checkpoint: None, rep: RepArg::Pretrain, mode };
            match cmd_eval(&cfg, seed, &out, None, &rep, Some(pin)) {
                Ok((_d, r)) => show(label, &pin.to_string(), &r),
                Err(e) => println!("  {label} lr {pin}: {e}"),
            }
        }
    }
    let rep = RepArgs { checkpoint: Some(ckpt.into()), rep: RepArg::Checkpoint, mode: None };
    match cmd_eval(&cfg, seed, &out, None, &rep, None) {
        Ok((_d, r)) => show("OML-frozen", &format!("tuned={}", r.lr), &r),
        Err(e) => println!("  OML-frozen tuned: {e}"),
    }
    for (label, mode) in [("PRE-frozen", None), ("PRE-standard", Some(ModeArg::Standard))] {
        let rep = RepArgs { checkpoint: None, rep: RepArg::Pretrain, mode };
        match cmd_eval(&cfg, seed, &out, None, &rep, None) {
            Ok((_d, r)) => show(label, &format!("tuned={}", r.lr), &r),
            Err(e) => println!("  {label} tuned: {e}"),
        }
    }
}
