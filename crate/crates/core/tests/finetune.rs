//! Online fine-tuning from an offline checkpoint on the open point maze.

use floq::harness::{finetune_online, train_offline, ExperimentConfig};

#[test]
fn online_finetuning_keeps_offline_performance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("env", "point-maze:layout=open"),
        ("critic.hidden", "64,64"),
        ("actor.hidden", "64,64"),
        ("critic.bins", "33"),
        ("optim.batch_size", "64"),
        ("optim.steps", "3000"),
        ("optim.eval_interval", "3000"),
        ("optim.eval_episodes", "400"),
        ("online.steps", "1000"),
    ] {
        cfg.set(k, v).unwrap();
    }
    train_offline(&cfg, Some(dir.path())).unwrap();
    cfg.optim.eval_interval = 100;
    let out = finetune_online(&cfg, &dir.path().join("checkpoint"), None).unwrap();
    assert_eq!(out.buffer_after - out.buffer_before, 1000);

    let offline = out.metrics[0].policy_score.unwrap();
    let floor = offline - 0.1 * offline.abs();
    for row in out.metrics.iter().filter(|r| r.step > 100) {
        let score = row.policy_score.unwrap();
        assert!(
            score >= floor,
            "step {}: return {score} below {floor} (offline {offline})",
            row.step
        );
    }
}
