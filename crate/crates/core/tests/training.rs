use ordinal_state::model::Checkpoint;
use ordinal_state::optim::{AdamConfig, AdamW, SparseAdam};
use ordinal_state::pipeline::{split_patientwise, Dataset};
use ordinal_state::synthgen::{gen_cohort, CohortConfig};
use ordinal_state::train::{cross_validate, train_fold, TrainConfig};

fn setup() -> (Dataset, ordinal_state::pipeline::SplitPlan) {
    let cohort = gen_cohort(&CohortConfig {
        n_patients: 6,
        visits_per_patient: 3,
        scans_per_volume: 2,
        flip_rate: 0.2,
        seed: 3,
        ..CohortConfig::default()
    })
    .unwrap();
    let ds = Dataset::from_cohort(&cohort).unwrap();
    let plan = split_patientwise(&ds.patients(), 2, 0.2, 1).unwrap();
    (ds, plan)
}

fn config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs: 2,
        batch_size: 8,
        noise_estimation: true,
        ..TrainConfig::default()
    }
}

#[test]
fn folds_are_reproducible_and_independent_of_jobs() {
    let (ds, plan) = setup();
    let a = cross_validate(&ds, &plan, &config(), 1).unwrap();
    let b = cross_validate(&ds, &plan, &config(), 2).unwrap();
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.history, y.history);
        assert_eq!(x.checkpoint, y.checkpoint);
        assert_eq!(x.final_alpha, y.final_alpha);
    }
    assert_ne!(a[0].checkpoint.theta, a[1].checkpoint.theta);
}

#[test]
fn checkpoint_reload_gives_identical_predictions() {
    let (ds, plan) = setup();
    let r = train_fold(&ds, &plan.fold_spec(0), &config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    r.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let (p1, p2) = (r.checkpoint.params().unwrap(), back.params().unwrap());
    let x: Vec<f64> = (0..16 * 32).map(|i| (i % 7) as f64 / 7.0).collect();
    let y: Vec<f64> = (0..16 * 32).map(|i| (i % 5) as f64 / 5.0).collect();
    assert_eq!(p1.forward_pair(&x, &y, 0.3).unwrap(), p2.forward_pair(&x, &y, 0.3).unwrap());
    assert_eq!(back.alpha, r.checkpoint.alpha);
}

#[test]
fn weight_decay_does_not_touch_slopes() {
    let mut weights = vec![1.0, -1.0];
    let mut alpha = vec![0.7, -0.4];
    let zero = vec![0.0; 2];
    let mut opt = AdamW::new(0.1, 0.5, AdamConfig::default(), &[2]);
    let mut alpha_opt = SparseAdam::new(0.1, AdamConfig::default(), 2);
    for _ in 0..10 {
        opt.step(&mut [&mut weights], &[&zero]);
        alpha_opt.step(&mut alpha, &[(0, 0.0), (1, 0.0)]);
    }
    assert!(weights[0] < 1.0 && weights[0] > 0.0);
    assert_eq!(alpha, vec![0.7, -0.4]);
}
