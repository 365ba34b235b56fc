use alltimeot::harness::{draw_batches, fit_method, ExperimentConfig, Suite};

#[test]
fn restarts_agree_on_translation_fit() {
    let cfg = ExperimentConfig::preset(Suite::Exp1);
    let batches = draw_batches(&cfg, &cfg.flow, 0).unwrap();
    let (_, fit) = fit_method(&cfg, &cfg.methods[0], 0, &batches, 0).unwrap();
    assert_eq!(fit.restarts.len(), 4);
    let mut worst: f64 = 0.0;
    for a in &fit.restarts {
        assert!(a.loss.is_finite());
        for b in &fit.restarts {
            let d = a
                .params
                .iter()
                .zip(&b.params)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(d);
        }
    }
    assert!(worst <= 1e-2, "max pairwise distance {worst}");
    let best = fit
        .restarts
        .iter()
        .map(|r| r.loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(fit.loss, best);
}
