use alltimeot::harness::{
    emit_tables, read_drift_csv, read_metrics_csv, run_experiment, ExperimentConfig, Suite,
};
use alltimeot::models::{FeatureSet, ModelSpec};

/// exp1 shrunk to a few seconds of work.
fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Suite::Exp1);
    for o in [
        "seeds=[7]",
        "sampling.m=6",
        "sampling.n=5",
        "sampling.n0=8",
        "sampling.k_ens=2",
        "methods.0.optimizer.restarts=2",
        "methods.0.optimizer.max_iter=40",
        "evaluation.particles=300",
        "evaluation.steps=40",
        "evaluation.reference_particles=300",
        "evaluation.projections=20",
    ] {
        cfg.apply_override(o).unwrap();
    }
    cfg
}

#[test]
fn presets_validate_and_round_trip() {
    for suite in Suite::ALL {
        let cfg = ExperimentConfig::preset(suite);
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(
            ExperimentConfig::from_toml(&text).unwrap(),
            cfg,
            "{}",
            suite.name()
        );
    }
}

#[test]
fn overrides_reach_nested_fields() {
    let mut cfg = ExperimentConfig::preset(Suite::Exp3);
    cfg.apply_override("loss.lambda=250.0").unwrap();
    cfg.apply_override("methods.1.optimizer.max_iter=7")
        .unwrap();
    cfg.apply_override("output.dir=elsewhere").unwrap();
    cfg.apply_override("methods.1.model.features.set=\"bilinear_1d\"")
        .unwrap();
    let text = cfg.to_toml().unwrap();
    assert!(text.contains("lambda = 250.0"));
    assert!(text.contains("max_iter = 7"));
    assert_eq!(cfg.output.dir.to_str(), Some("elsewhere"));
    assert_eq!(
        cfg.methods[1].model,
        ModelSpec::Dictionary {
            features: FeatureSet::Bilinear1d
        }
    );

    let mut base = ExperimentConfig::preset(Suite::Baselines);
    base.apply_override("baselines.wot.sinkhorn.epsilon=0.01")
        .unwrap();
    assert_eq!(base.baselines.wot.unwrap().sinkhorn.epsilon, Some(0.01));
}

#[test]
fn bad_overrides_are_rejected() {
    let mut cfg = ExperimentConfig::preset(Suite::Exp1);
    assert!(cfg.apply_override("sampling.m").is_err());
    assert!(cfg.apply_override("sampling.nonexistent=3").is_err());
    assert!(cfg.apply_override("sampling.m=0").is_err());
    assert!(cfg.apply_override("methods.5.name=x").is_err());
    assert!(cfg
        .apply_override("methods.0.model.features.kind=\"tanh_1d\"")
        .is_err());
    assert_eq!(cfg, ExperimentConfig::preset(Suite::Exp1));
}

#[test]
fn unknown_keys_fail_to_parse() {
    let mut text = ExperimentConfig::preset(Suite::Exp1).to_toml().unwrap();
    text.push_str("\n[mystery]\nx = 1\n");
    assert!(ExperimentConfig::from_toml(&text).is_err());
}

#[test]
fn replay_is_identical_and_tables_round_trip() {
    let cfg = small_config();
    let first = run_experiment(&cfg).unwrap();
    let second = run_experiment(&cfg).unwrap();
    assert!(first.complete, "{:?}", first.failures);
    assert!(first.same_results(&second));

    let dir = tempfile::tempdir().unwrap();
    let files = emit_tables(&first, dir.path()).unwrap();
    let rows = read_metrics_csv(&files.metrics).unwrap();
    let m = &first.methods[0];
    assert_eq!(rows.len(), m.metrics.rows.len());
    for (r, want) in rows.iter().zip(&m.metrics.rows) {
        assert_eq!(r.t, want.t);
        assert_eq!(r.w2, want.w2);
        assert_eq!(r.sw2, want.sw2);
        assert_eq!(r.mmd, want.mmd);
    }
    let drift = read_drift_csv(&files.drift).unwrap();
    assert_eq!(drift[0].drift_mse_total, m.drift().unwrap().total);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&files.manifest).unwrap()).unwrap();
    for key in [
        "config_sha256",
        "config_toml",
        "seeds",
        "conventions",
        "environment",
        "loss_traces",
        "files",
    ] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    let replayed = ExperimentConfig::from_toml(manifest["config_toml"].as_str().unwrap()).unwrap();
    assert_eq!(replayed, cfg);
}

#[test]
fn failed_stage_is_recorded_without_aborting() {
    let mut cfg = small_config();
    let blocker = tempfile::NamedTempFile::new().unwrap();
    // a regular file where the snapshot directory should go
    cfg.output.dir = blocker.path().to_path_buf();
    cfg.output.snapshots = true;
    let report = run_experiment(&cfg).unwrap();
    assert!(!report.complete);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].stage, "snapshots");
    assert_eq!(report.methods.len(), 1);
}

#[test]
fn parallel_jobs_match_sequential() {
    let mut cfg = small_config();
    cfg.seeds = vec![1, 2];
    let seq = run_experiment(&cfg).unwrap();
    cfg.apply_override("jobs=\"parallel\"").unwrap();
    let mut par = run_experiment(&cfg).unwrap();
    par.config = seq.config.clone();
    assert!(seq.same_results(&par));
}
