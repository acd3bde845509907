//! Scratch driver for preset tuning; not part of the test suite.

use std::time::Instant;

use omllab::cli::{cmd_eval, cmd_meta_train, RepArg, RepArgs};
use omllab::config::preset;

fn main() {
    let mut cfg = preset("sine-desk").unwrap();
    let args: Vec<String> = std::env::args().collect();
    if let Some(steps) = args.get(1).and_then(|s| s.parse().ok()) {
        cfg.meta.meta_steps = steps;
    }
    if let Some(alpha) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.meta.alpha = alpha;
    }
    if let Some(beta) = args.get(3).and_then(|s| s.parse().ok()) {
        cfg.meta.beta = beta;
    }
    let seeds: Vec<u64> = args
        .get(4)
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0]);
    if let Some(batch) = args.get(5).and_then(|s| s.parse().ok()) {
        cfg.problem.batch_size = batch;
    }
    let pin_lrs: Vec<f64> = args
        .get(6)
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_default();
    if let Some(scope) = args.get(7) {
        cfg.meta.scope = match scope.as_str() {
            "test" => omllab::metatrain::MetaLossScope::TestOnly,
            _ => omllab::metatrain::MetaLossScope::TrainPlusTest,
        };
    }
    if let Some(steps) = args.get(8).and_then(|s| s.parse().ok()) {
        cfg.pretrain.steps = steps;
    }
    if let Some(lr) = args.get(9).and_then(|s| s.parse().ok()) {
        cfg.pretrain.lr = lr;
    }
    let tag = args.get(10).cloned().unwrap_or_default();
    let out = std::path::PathBuf::from(format!("/tmp/probe-sine{tag}"));
    let _ = std::fs::remove_dir_all(&out);
    println!(
        "sine-desk probe: steps={} alpha={} beta={} seeds={:?}",
        cfg.meta.meta_steps, cfg.meta.alpha, cfg.meta.beta, seeds
    );
    for &seed in &seeds {
        let t0 = Instant::now();
        let (_dir, _params) = cmd_meta_train(&cfg, seed, &out, None).unwrap();
        let t_train = t0.elapsed().as_secs_f64();

        let rep = RepArgs { checkpoint: None, rep: RepArg::Checkpoint, mode: None };
        let t1 = Instant::now();
        let (_d, oml) = cmd_eval(&cfg, seed, &out, None, &rep, None).unwrap();
        let t_eval = t1.elapsed().as_secs_f64();

        let rep = RepArgs { checkpoint: None, rep: RepArg::Pretrain, mode: None };
        let t2 = Instant::now();
        let (_d, pre) = cmd_eval(&cfg, seed, &out, None, &rep, None).unwrap();
        let t_pre = t2.elapsed().as_secs_f64();

        let exp = omllab::config::build_experiment(cfg.clone(), None).unwrap();
        let mut eval_cfg = cfg.to_eval_config(seed);
        eval_cfg.warm_pln = true;
        for depth in cfg.pretrain_candidates() {
            let outcome = omllab::eval::pretrain_baseline(
                &exp.meta_source,
                &exp.spec,
                &[depth],
                cfg.pretrain.steps,
                cfg.pretrain.lr,
                &eval_cfg,
            );
            match outcome {
                Ok(o) => {
                    let sl = &o.step_losses;
                    let tail: Vec<f64> =
                        sl.iter().rev().take(3).rev().map(|v| (v * 1000.0).round() / 1000.0).collect();
                    println!(
                        "  pretrain depth {depth}: val_lr {} val_metric {:.4} loss_tail {tail:?}",
                        o.val_lr, o.val_metric
                    );
                }
                Err(e) => println!("  pretrain depth {depth}: {e}"),
            }
        }

        let ratio = |r: &omllab::eval::EvalReport| r.per_block[0] / r.per_block[r.per_block.len() - 1];
        for &pin in &pin_lrs {
            for (label, mode) in
                [("PRE-frozen", None), ("PRE-standard", Some(omllab::cli::ModeArg::Standard))]
            {
                let rep = RepArgs { checkpoint: None, rep: RepArg::Pretrain, mode };
                match cmd_eval(&cfg, seed, &out, None, &rep, Some(pin)) {
                    Ok((_d, r)) => {
                        println!(
                            "  {label} pinned lr {pin}: mse {:.4} per_block {:?} ratio {:.3}",
                            r.aggregate,
                            r.per_block
                                .iter()
                                .map(|v| (v * 1000.0).round() / 1000.0)
                                .collect::<Vec<_>>(),
                            ratio(&r),
                        );
                    }
                    Err(e) => println!("  {label} pinned lr {pin}: {e}"),
                }
            }
            let rep = RepArgs { checkpoint: None, rep: RepArg::Checkpoint, mode: None };
            match cmd_eval(&cfg, seed, &out, None, &rep, Some(pin)) {
                Ok((_d, r)) => {
                    let sl = &r.mean_step_loss;
                    let head: Vec<f64> = sl.iter().take(5).map(|v| (v * 100.0).round() / 100.0).collect();
                    let tail: Vec<f64> =
                        sl.iter().rev().take(5).rev().map(|v| (v * 100.0).round() / 100.0).collect();
                    println!(
                        "  pinned lr {pin}: mse {:.4} per_block {:?} ratio {:.3} steps {head:?}..{tail:?}",
                        r.aggregate,
                        r.per_block.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                        ratio(&r),
                    );
                }
                Err(e) => println!("  pinned lr {pin}: {e}"),
            }
        }
        println!(
            "seed {seed}: train {t_train:.1}s eval {t_eval:.1}s pre {t_pre:.1}s | \
             OML mse {:.4} (lr {}) per_block {:?} ratio {:.3} | \
             PRE mse {:.4} (lr {}) per_block {:?} ratio {:.3} | \
             mse_ok {} ratio_ok {}",
            oml.aggregate,
            oml.lr,
            oml.per_block.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            ratio(&oml),
            pre.aggregate,
            pre.lr,
            pre.per_block.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            ratio(&pre),
            oml.aggregate < pre.aggregate,
            ratio(&oml) < ratio(&pre) / 3.0,
        );
    }
}
