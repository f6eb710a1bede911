use loglab_core::train::{train, tree_for_config};
use loglab_core::{parse_config_str, train_experiment, Error, Params};

const SMALL_GD: &str = r#"{"n": 10, "k": 4, "mode": "experiment", "seed": 1, "test_size": 200,
    "experiment": {"steps_per_stage": 60, "batch": 100, "eval_every": 20, "eval_size": 200}}"#;

#[test]
fn experiment_rows_and_boundaries() {
    let cfg = parse_config_str(SMALL_GD).unwrap();
    let tree = tree_for_config(&cfg).unwrap();
    let (_, rec) = train::<f64>(&cfg, &tree).unwrap();
    assert_eq!(rec.loss_curve.len(), tree.depth() * 3);
    for (i, row) in rec.loss_curve.iter().enumerate() {
        assert_eq!(row.step, 20 * (i + 1));
        assert_eq!(row.stage, i / 3 + 1);
        assert!(row.train_loss.is_finite() && row.train_loss >= 0.0);
        assert!(row.val_loss.is_finite() && row.val_loss >= 0.0);
    }
    assert_eq!(rec.stages[0].boundary_val_loss, None);
    assert!(rec.stages[1].boundary_val_loss.is_some());
    assert_eq!(rec.stages[1].pre_boundary_val_loss, Some(rec.stages[0].final_val_loss));
}

#[test]
fn runs_are_reproducible() {
    let cfg = parse_config_str(SMALL_GD).unwrap();
    let tree = tree_for_config(&cfg).unwrap();
    let (p1, r1) = train::<f64>(&cfg, &tree).unwrap();
    let (p2, r2) = train::<f64>(&cfg, &tree).unwrap();
    assert_eq!(r1.without_timing(), r2.without_timing());
    assert_eq!(p1.weights, p2.weights);

    let cfg = parse_config_str(r#"{"n": 12, "k": 4, "B": 300, "seed": 5}"#).unwrap();
    let tree = tree_for_config(&cfg).unwrap();
    let (_, a) = train::<f64>(&cfg, &tree).unwrap();
    let (_, b) = train::<f64>(&cfg, &tree).unwrap();
    assert_eq!(a.without_timing(), b.without_timing());
    assert_eq!(a.loss_curve.len(), tree.depth());
}

#[test]
fn theory_weights_are_integers_inside_the_mask() {
    let cfg =
        parse_config_str(r#"{"n": 12, "k": 8, "B": 500, "seed": 2, "secret": [1, 2, 4, 5, 7, 8, 10, 12]}"#).unwrap();
    let tree = tree_for_config(&cfg).unwrap();
    assert_eq!(tree.secret_one_based(), vec![1, 2, 4, 5, 7, 8, 10, 12]);
    let (params, rec): (Params, _) = train(&cfg, &tree).unwrap();
    let mask = loglab_core::AttentionMask::new(&tree);
    for w in &params.weights {
        for m in 0..tree.len() {
            for j in 0..tree.len() {
                let v = w.get(j, m);
                assert_eq!(v.fract(), 0.0);
                if !mask.allowed(j, m) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
    assert_eq!(rec.stages.len(), 3);
    assert!(rec.stages.iter().all(|s| s.eta.is_some()));
}

#[test]
fn mode_mismatch_is_rejected() {
    let cfg = parse_config_str(r#"{"n": 8, "k": 4}"#).unwrap();
    let tree = tree_for_config(&cfg).unwrap();
    let err = train_experiment::<f64>(&cfg, &tree).unwrap_err();
    assert!(
        matches!(err, Error::Config { ref field, .. } if field == "mode"),
        "{err}"
    );
}

#[test]
fn single_precision_runs() {
    let cfg = parse_config_str(SMALL_GD).unwrap();
    let tree = tree_for_config(&cfg).unwrap();
    let (p, rec) = train::<f32>(&cfg, &tree).unwrap();
    assert_eq!(p.depth(), tree.depth());
    assert!(rec.loss_curve.iter().all(|r| r.val_loss.is_finite()));
}
