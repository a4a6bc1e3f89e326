mod common;

use astrec::checkpoint;
use astrec::eval::{evaluate, HrMode};
use astrec::models::Variant;
use astrec::trainer::{train, Objective, TrainConfig};

#[test]
fn ips_and_multitask_reduce_to_biased_erm() {
    for variant in [Variant::Mf, Variant::Ncf] {
        for draw in 0..5 {
            let (ips, mt) = common::reduction_gaps(variant, draw);
            assert!(ips <= 1e-12, "{variant:?} ips gap {ips}");
            assert!(mt <= 1e-12, "{variant:?} multi-task gap {mt}");
        }
    }
}

#[test]
fn zero_weight_ast_retraces_biased() {
    let g = common::small_synth(2);
    assert!(common::zero_weight_ast_matches_biased(&g.dataset, 200, 5));
}

#[test]
fn training_is_deterministic_per_seed() {
    let g = common::small_synth(4);
    let config = TrainConfig {
        max_steps: 150,
        eval_every: 50,
        batch_size_d: 64,
        batch_size_q: 64,
        seed: 1,
        ..TrainConfig::default()
    };
    let a = train(&g.dataset, &config).unwrap();
    let b = train(&g.dataset, &config).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best_model, b.best_model);

    let c = train(&g.dataset, &TrainConfig { seed: 2, ..config }).unwrap();
    assert_ne!(a.final_model.params, c.final_model.params);
}

#[test]
fn checkpoint_roundtrip_preserves_metrics() {
    let g = common::small_synth(6);
    for objective in [Objective::Biased, Objective::Ips, Objective::MultiTask, Objective::Ast] {
        let config = TrainConfig {
            objective,
            variant: Variant::Ncf,
            max_steps: 60,
            eval_every: 30,
            batch_size_d: 32,
            batch_size_q: 32,
            ..TrainConfig::default()
        };
        let r = train(&g.dataset, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        checkpoint::save(&r.best_model, &path).unwrap();
        let back = checkpoint::load(&path).unwrap();
        let before = evaluate(&r.best_model, &g.dataset.test, 5, HrMode::Recall).unwrap();
        let after = evaluate(&back, &g.dataset.test, 5, HrMode::Recall).unwrap();
        assert_eq!(before, after, "{objective:?}");
    }
}

#[test]
fn synthetic_generation_is_reproducible() {
    assert_eq!(common::small_synth(9).dataset, common::small_synth(9).dataset);
    assert_ne!(common::small_synth(9).dataset, common::small_synth(10).dataset);
}
