use growbench::harness::{
    self, compare, evaluate, prepare_data, read_metrics, run, write_metrics, DataSource, DataSpec,
    RunResult, TrainAccMode, TrainConfig,
};
use growbench::morph::{InitRule, WherePolicy};
use growbench::netcore::{build_network, SgdHyper};
use growbench::timing::{self, WhenPolicy};

fn tiny(policy: WhenPolicy) -> TrainConfig {
    TrainConfig {
        seed_arch: "res:8x1-8x1".parse().unwrap(),
        target_arch: "res:8x3-8x2".parse().unwrap(),
        policy,
        where_policy: WherePolicy::Sequential,
        init: InitRule::Copy,
        moment_decay: 0.99,
        epochs: 14,
        min_finetune: 5,
        sgd: SgdHyper {
            lr_base: 0.02,
            ..SgdHyper::default()
        },
        batch_size: 32,
        train_acc: TrainAccMode::Full,
        data: DataSpec {
            source: DataSource::Gaussians {
                classes: 3,
                dims: 4,
                per_class: 60,
                test_per_class: 30,
                sep: 3.0,
                label_noise: 0.1,
            },
            val_fraction: 0.2,
            seed: 5,
            standardize: true,
        },
        run_seed: 1,
    }
}

fn fragrow() -> WhenPolicy {
    WhenPolicy::FraGrow {
        alpha: 4.0,
        freeze: false,
    }
}

fn all_policies() -> [WhenPolicy; 4] {
    [
        fragrow(),
        WhenPolicy::FraGrow {
            alpha: 4.0,
            freeze: true,
        },
        WhenPolicy::Periodic { period: None },
        WhenPolicy::Convergent {
            patience: 2,
            epsilon: 0.05,
        },
    ]
}

fn metrics_bytes(mut r: RunResult, dir: &std::path::Path, name: &str) -> Vec<u8> {
    r.wall_seconds = 0.0;
    let path = dir.join(name);
    write_metrics(&r, &path).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn every_policy_meets_schedule_contract() {
    for policy in all_policies() {
        for init in [InitRule::Copy, InitRule::Moment, InitRule::Random] {
            for where_policy in [WherePolicy::Sequential, WherePolicy::Circulation] {
                let cfg = TrainConfig {
                    policy,
                    init,
                    where_policy,
                    ..tiny(policy)
                };
                let n = cfg.validate().unwrap();
                let r = run(&cfg).unwrap();
                assert_eq!(r.events.len(), n, "{policy:?}");
                assert_eq!(r.metrics.last().unwrap().blocks, vec![3, 2]);
                assert!(r.epochs_at_target() >= cfg.min_finetune);
                assert_eq!(r.metrics.len(), cfg.epochs);
                let e_bar = timing::average_training_epochs(&r.events, cfg.epochs).unwrap();
                assert_eq!(r.e_bar, Some(e_bar));
                let grew: Vec<usize> = r.metrics.iter().filter(|m| m.grew).map(|m| m.epoch).collect();
                let event_epochs: Vec<usize> = r.events.iter().map(|e| e.epoch).collect();
                assert_eq!(grew, event_epochs);
            }
        }
    }
}

#[test]
fn circulation_alternates_stages() {
    let cfg = TrainConfig {
        where_policy: WherePolicy::Circulation,
        ..tiny(WhenPolicy::Periodic { period: Some(1) })
    };
    let r = run(&cfg).unwrap();
    let stages: Vec<usize> = r.events.iter().map(|e| e.stage).collect();
    assert_eq!(stages, vec![0, 1, 0]);
}

#[test]
fn vanilla_run_has_no_growth_and_decays_from_the_start() {
    let mut cfg = tiny(fragrow());
    cfg.seed_arch = cfg.target_arch.clone();
    assert_eq!(cfg.validate().unwrap(), 0);
    let r = run(&cfg).unwrap();
    assert!(r.events.is_empty());
    assert_eq!(r.e_bar, None);
    assert_eq!(r.epochs_at_target(), cfg.epochs);
    assert_eq!(r.metrics[0].lr, cfg.sgd.lr_base);
    assert!(r.metrics.windows(2).all(|w| w[1].lr < w[0].lr));
}

#[test]
fn lr_is_constant_while_growing() {
    let cfg = tiny(WhenPolicy::Periodic { period: None });
    let r = run(&cfg).unwrap();
    let end = r.growth_end_epoch();
    assert!(end > 1);
    assert!(r.metrics[..end].iter().all(|m| m.lr == cfg.sgd.lr_base));
    assert!(r.metrics[end + 1].lr < cfg.sgd.lr_base);
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for policy in all_policies() {
        let cfg = tiny(policy);
        let a = metrics_bytes(run(&cfg).unwrap(), dir.path(), "a.jsonl");
        let b = metrics_bytes(run(&cfg).unwrap(), dir.path(), "b.jsonl");
        assert_eq!(a, b, "{policy:?}");
    }
    let other = TrainConfig {
        run_seed: 2,
        ..tiny(fragrow())
    };
    let a = metrics_bytes(run(&tiny(fragrow())).unwrap(), dir.path(), "a.jsonl");
    let c = metrics_bytes(run(&other).unwrap(), dir.path(), "c.jsonl");
    assert_ne!(a, c);
}

#[test]
fn metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&tiny(WhenPolicy::Convergent {
        patience: 2,
        epsilon: 0.05,
    }))
    .unwrap();
    let path = dir.path().join("m.jsonl");
    write_metrics(&r, &path).unwrap();
    let back = read_metrics(&path).unwrap();
    assert_eq!(back, r);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), r.metrics.len() + 1);
}

#[test]
fn malformed_metrics_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"epoch\": 1}\n").unwrap();
    let err = read_metrics(&path).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
    std::fs::write(&path, "").unwrap();
    assert!(read_metrics(&path).unwrap_err().to_string().contains("footer"));
}

#[test]
fn orl_is_zero_when_validating_on_train() {
    let cfg = tiny(fragrow());
    let splits = prepare_data(&cfg.data).unwrap();
    let net = build_network(&cfg.target_arch.clone().with_io(4, 3), 3).unwrap();
    let e = evaluate(&net, &splits.train, &splits.train, &splits.test).unwrap();
    assert_eq!(e.orl, 0.0);
    assert_eq!(e.train_acc, e.val_acc);
}

#[test]
fn synthetic_test_set_is_clean_and_standardized_with_train_statistics() {
    let cfg = tiny(fragrow());
    let s = prepare_data(&cfg.data).unwrap();
    assert_eq!(s.train.len() + s.val.len(), 180);
    assert_eq!(s.val.len(), 36);
    assert_eq!(s.test.class_counts(), vec![30, 30, 30]);
    for j in 0..s.train.dim() {
        let mean: f64 = (0..s.train.len()).map(|i| s.train.features.get(i, j)).sum::<f64>() / s.train.len() as f64;
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn separable_data_is_learned_by_a_small_net() {
    let cfg = TrainConfig {
        seed_arch: "plain:8x1".parse().unwrap(),
        target_arch: "plain:8x1".parse().unwrap(),
        epochs: 50,
        min_finetune: 30,
        sgd: SgdHyper::default(),
        data: DataSpec {
            source: DataSource::Gaussians {
                classes: 2,
                dims: 2,
                per_class: 200,
                test_per_class: 100,
                sep: 10.0,
                label_noise: 0.0,
            },
            val_fraction: 0.1,
            seed: 0,
            standardize: true,
        },
        ..tiny(fragrow())
    };
    let r = run(&cfg).unwrap();
    assert!(r.metrics.iter().any(|m| m.train_acc > 99.0));
}

#[test]
fn running_train_accuracy_mode() {
    let cfg = TrainConfig {
        train_acc: TrainAccMode::Running,
        ..tiny(fragrow())
    };
    let r = run(&cfg).unwrap();
    let full = run(&tiny(fragrow())).unwrap();
    assert_eq!(r.events.len(), full.events.len());
    assert!(r.metrics.iter().zip(&full.metrics).any(|(a, b)| a.train_acc != b.train_acc));
}

#[test]
fn invalid_configs_fail_before_training() {
    let mut cfg = tiny(fragrow());
    cfg.epochs = 5;
    assert!(run(&cfg).is_err());
    let mut cfg = tiny(fragrow());
    cfg.target_arch = "res:8x3-8x2-8x1".parse().unwrap();
    assert!(run(&cfg).is_err());
    let mut cfg = tiny(fragrow());
    cfg.batch_size = 0;
    assert!(run(&cfg).is_err());
}

#[test]
fn diverging_run_is_an_error() {
    let mut cfg = tiny(fragrow());
    cfg.sgd.lr_base = 1e6;
    let err = run(&cfg).unwrap_err().to_string();
    assert!(err.contains("diverged"), "{err}");
}

#[test]
fn comparison_table_shape() {
    let cfg = tiny(fragrow());
    let t = compare(&[("a".into(), cfg.clone()), ("b".into(), cfg.clone())], &[1, 2]).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert_eq!(t.rows[0].test_error, t.rows[1].test_error);
    assert_eq!(t.rows[0].e_bar, t.rows[1].e_bar);
    assert!(t.rows[0].test_error.unwrap().spread.is_some());
    assert!(t.rows.iter().all(|r| r.normalized_time.is_none()));

    let one = compare(&[("only".into(), cfg.clone())], &[1]).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.rows[0].test_error.unwrap().spread, None);
    let csv = one.to_csv();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "only");
    assert_eq!((row[2], row[3]), ("", ""));
    assert_eq!(one.to_text().lines().count(), 2);
    assert!(compare(&[], &[1]).is_err());
    assert!(compare(&[("a".into(), cfg)], &[]).is_err());
}

#[test]
fn comparison_normalizes_time_to_vanilla() {
    let grow = tiny(fragrow());
    let mut vanilla = grow.clone();
    vanilla.seed_arch = vanilla.target_arch.clone();
    let mut broken = grow.clone();
    broken.sgd.lr_base = 1e6;
    let t = compare(
        &[("grow".into(), grow), ("vanilla".into(), vanilla), ("broken".into(), broken)],
        &[0],
    )
    .unwrap();
    assert!(t.rows[1].vanilla);
    assert_eq!(t.rows[1].normalized_time, Some(100.0));
    assert!(t.rows[0].normalized_time.is_some());
    assert_eq!(t.rows[2].failures(), 1);
    assert!(t.to_text().contains("1/1 runs failed"));
}

#[test]
fn summary_lists_every_event() {
    let r = run(&tiny(WhenPolicy::Periodic { period: None })).unwrap();
    let s = r.summary();
    assert!(s.contains("growth events: 3"));
    assert!(s.contains("E_bar"));
    assert_eq!(s.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 3);
}

#[test]
fn medians() {
    assert_eq!(harness::median(&[]), None);
    assert_eq!(harness::median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(harness::median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
}
