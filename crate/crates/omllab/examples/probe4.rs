//! Scratch driver for the class-incremental preset; not part of the test
//! suite. Prints online/iid accuracy for every representation plus
//! sparsity, per seed.

use std::time::Instant;

use omllab::cli::{cmd_analyze, cmd_eval, cmd_meta_train, ModeArg, RepArg, RepArgs};
use omllab::config::{build_experiment, preset};
use omllab::eval::{evaluate, iid_sanity_train, AdaptScope};
use omllab::metatrain::Objective;
use omllab::network::ParameterSet;
use omllab::rngutil;

fn iid_accuracy(
    start: &ParameterSet,
    exp: &omllab::config::Experiment,
    grid: &[f64],
    seed: u64,
    epochs: usize,
) -> (f64, f64) {
    let sweep = |lr: f64, stream: &str, count: usize| -> f64 {
        let mut total = 0.0;
        for t in 0..count {
            let mut rng = rngutil::stream_indexed(seed, stream, t as u64);
            let instance = exp.eval_source.sample_eval_instance(10, 50, &mut rng).unwrap();
            let mut head_rng = rngutil::stream_indexed(seed, &format!("{stream}-head"), t as u64);
            let candidate = start.with_fresh_pln(&mut head_rng);
            let mut train_rng = rngutil::stream_indexed(seed, &format!("{stream}-sgd"), t as u64);
            match iid_sanity_train(
                &candidate,
                &instance.trajectory,
                epochs,
                lr,
                AdaptScope::HeadOnly,
                &mut train_rng,
            ) {
                Ok(o) => {
                    let (acc, _) = evaluate(&o.params, &instance.block_evals).unwrap();
                    total += acc;
                }
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        total / count as f64
    };
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &lr in grid {
        let score = sweep(lr, "probe-iid-val", 2);
        if score > best.0 {
            best = (score, lr);
        }
    }
    (sweep(best.1, "probe-iid-report", 5), best.1)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = preset("split-desk").unwrap();
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
        .map(|s| s.split(',').filter_map(|v| v.parse().ok()).collect())
        .unwrap_or_else(|| vec![0]);
    if let Some(steps) = args.get(5).and_then(|s| s.parse().ok()) {
        cfg.pretrain.steps = steps;
    }
    if let Some(lr) = args.get(6).and_then(|s| s.parse().ok()) {
        cfg.pretrain.lr = lr;
    }
    let tag = args.get(7).cloned().unwrap_or_default();
    let out = std::path::PathBuf::from(format!("/tmp/probe-split{tag}"));
    let _ = std::fs::remove_dir_all(&out);
    println!(
        "split-desk probe: steps={} alpha={} beta={} k={} pretrain {}@{}",
        cfg.meta.meta_steps, cfg.meta.alpha, cfg.meta.beta, cfg.meta.k, cfg.pretrain.steps, cfg.pretrain.lr
    );

    let mut cfg_maml = cfg.clone();
    cfg_maml.meta.objective = Objective::MamlRep;
    if let Some(l) = args.get(8).and_then(|s| s.parse().ok()) {
        cfg_maml.meta.l = l;
    }

    for &seed in &seeds {
        let t0 = Instant::now();
        let (_dir, oml_params) = cmd_meta_train(&cfg, seed, &out, None).unwrap();
        let t_oml = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let (_dir, maml_params) = cmd_meta_train(&cfg_maml, seed, &out, None).unwrap();
        let t_maml = t1.elapsed().as_secs_f64();
        println!("seed {seed}: oml train {t_oml:.1}s maml train {t_maml:.1}s");

        let arms: [(&str, &omllab::config::ExperimentConfig, RepArg, Option<ModeArg>); 5] = [
            ("online OML     ", &cfg, RepArg::Checkpoint, None),
            ("online MAML-Rep", &cfg_maml, RepArg::Checkpoint, None),
            ("online scratch-frozen", &cfg, RepArg::Scratch, None),
            ("online scratch-full  ", &cfg, RepArg::Scratch, Some(ModeArg::Standard)),
            ("online PRE-frozen    ", &cfg, RepArg::Pretrain, None),
        ];
        for (label, c, rep_kind, mode) in arms {
            let rep = RepArgs { checkpoint: None, rep: rep_kind, mode };
            let t = Instant::now();
            match cmd_eval(c, seed, &out, None, &rep, None) {
                Ok((_d, r)) => println!(
                    "  {label}: acc {:.4} (lr {}) per_block[..4] {:?} [{:.0}s]",
                    r.aggregate,
                    r.lr,
                    r.per_block.iter().take(4).map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    t.elapsed().as_secs_f64(),
                ),
                Err(e) => println!("  {label}: {e}"),
            }
        }

        let exp = build_experiment(cfg.clone(), None).unwrap();
        let grid = cfg.eval.lr_grid.clone();
        let t = Instant::now();
        let (oml_iid, oml_lr) = iid_accuracy(&oml_params, &exp, &grid, seed, 5);
        let (maml_iid, maml_lr) = iid_accuracy(&maml_params, &exp, &grid, seed, 5);
        println!(
            "  iid OML {oml_iid:.4} (lr {oml_lr}) | iid MAML-Rep {maml_iid:.4} (lr {maml_lr}) | diff {:.4} [{:.0}s]",
            (oml_iid - maml_iid).abs(),
            t.elapsed().as_secs_f64(),
        );

        for (label, c, rep_kind) in [
            ("sparsity OML", &cfg, RepArg::Checkpoint),
            ("sparsity PRE", &cfg, RepArg::Pretrain),
        ] {
            let rep = RepArgs { checkpoint: None, rep: rep_kind, mode: None };
            match cmd_analyze(c, seed, &out, None, &rep, 0.0, None, 200) {
                Ok((_d, r)) => println!(
                    "  {label}: instance {:.4} dead {:.4} (d={} n={})",
                    r.instance_sparsity, r.dead_fraction, r.d, r.n_inputs
                ),
                Err(e) => println!("  {label}: {e}"),
            }
        }
    }
}
