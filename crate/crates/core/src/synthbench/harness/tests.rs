use super::*;
use crate::hierarchy::explain;

fn quick(function: SyntheticFunction, seed: u64) -> BenchConfig {
    let mut c = BenchConfig::new(function, seed);
    c.trials = 2;
    c.instances_per_trial = 2;
    c.n_samples = 400;
    c.probes = 200;
    c.base_model = BaseModelConfig {
        n_train: 3000,
        n_val: 500,
        max_epochs: 30,
        ..BaseModelConfig::default()
    };
    c
}

#[test]
fn zero_predictor_scores_exactly_one() {
    let f = SyntheticFunction::F1;
    let x = Instance::continuous(vec![0.1; 10]);
    let mut c = ExplainConfig::new(SamplerConfig::new(200, 0.6, Metric::L2, 1));
    c.stop.max_levels = Some(0);
    let expl = explain(&x, &PredictorHandle::builtin(f.clone()), &c).unwrap();
    assert_eq!(expl.level_count(), 0);
    let s = std_mse(&expl, &f, &x, 500, 3).unwrap();
    assert!(s.standardized);
    assert_eq!(s.value, 1.0);
}

fn probe_grid(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, 3), |(i, j)| ((i * (j + 3) * 7919) % 101) as f64 / 50.0 - 1.0)
}

#[test]
fn additive_offsets_do_not_count() {
    let pts = probe_grid(200);
    let truth: Vec<f64> = pts.rows().into_iter().map(|r| 10.0 * r[0] * r[1]).collect();
    let shifted: Vec<f64> = pts.rows().into_iter().map(|r| 10.0 * r[0] * r[1] + 3.0 - 2.0 * r[1] + r[0]).collect();
    let s = score_interaction(&pts, &[0, 1], &truth, Some(&shifted)).unwrap();
    assert!(s.standardized && s.value < 1e-20, "{}", s.value);
    let zero = score_interaction(&pts, &[0, 1], &truth, None).unwrap();
    assert_eq!(zero.value, 1.0);
    let flipped: Vec<f64> = truth.iter().map(|t| -t).collect();
    assert!((score_interaction(&pts, &[0, 1], &truth, Some(&flipped)).unwrap().value - 4.0).abs() < 1e-9);
}

#[test]
fn affine_truth_is_not_standardized() {
    let pts = probe_grid(50);
    let truth: Vec<f64> = pts.rows().into_iter().map(|r| 2.0 * r[0] - r[1]).collect();
    let s = score_interaction(&pts, &[0, 1], &truth, None).unwrap();
    assert!(!s.standardized && s.value < 1e-20);
}

#[test]
fn probes_stay_in_the_ball_and_need_two() {
    let f = SyntheticFunction::F1;
    let x = Instance::continuous(vec![0.0; 10]);
    let mut c = ExplainConfig::new(SamplerConfig::new(100, 0.6, Metric::L2, 1));
    c.stop.max_levels = Some(0);
    let expl = explain(&x, &PredictorHandle::builtin(f.clone()), &c).unwrap();
    assert!(matches!(std_mse(&expl, &f, &x, 1, 0), Err(Error::Config(_))));
    assert!(std_mse(&expl, &f, &Instance::continuous(vec![0.0; 3]), 10, 0).is_err());
}

#[test]
fn f1_at_origin_beats_the_zero_predictor() {
    let f = SyntheticFunction::F1;
    let x = Instance::continuous(vec![0.0; 10]);
    let c = ExplainConfig::new(SamplerConfig::new(1000, 0.6, Metric::L2, 5));
    let expl = explain(&x, &PredictorHandle::builtin(f.clone()), &c).unwrap();
    assert_eq!(expl.level_of(&[0, 1]), Some(0));
    let s = std_mse(&expl, &f, &x, 1000, 5).unwrap();
    assert!(s.value < 1.0, "{}", s.value);
}

#[test]
fn base_model_fits_f1() {
    let cfg = BaseModelConfig::default();
    let (net, r2) = train_base_model(&SyntheticFunction::F1, &cfg, 4).unwrap();
    assert!(r2 >= 0.9, "{r2}");
    assert_eq!(net.hidden_layer_count(), 3);
}

#[test]
fn zero_trials_give_an_empty_report() {
    let mut c = quick(SyntheticFunction::F1, 0);
    c.trials = 0;
    let r = run_synthetic(&c).unwrap();
    assert!(r.results.is_empty() && r.trials.is_empty());
    assert_eq!(r.to_csv().lines().count(), 1);
    assert!(r.r_precision().is_none());
}

#[test]
fn reruns_and_trial_subsets_agree() {
    let c = quick(SyntheticFunction::F1, 11);
    let a = run_synthetic(&c).unwrap();
    let b = run_synthetic(&c).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.trials.iter().all(|t| t.valid));
    assert_eq!(a.results.len(), 4);

    let mut one = c.clone();
    one.trials = 1;
    let first = run_synthetic(&one).unwrap();
    let rows = |r: &BenchReport| r.to_csv().lines().skip(1).map(String::from).collect::<Vec<_>>();
    assert_eq!(rows(&first)[..], rows(&a)[..2]);

    for r in &a.results {
        assert!(r.std_mse >= 0.0);
        assert!(r.r_precision == 0.0 || r.r_precision == 1.0);
        assert_eq!(r.per_level_metric.len(), r.levels + 1);
        assert!(r.instance_location.iter().all(|v| v.abs() <= 0.8));
        assert!(r.glm_test_mse.is_some());
    }
    let json = a.to_json_value();
    assert_eq!(json["seed"], 11);
    assert!(json["runtimes_seconds"]["detection"]["mean"].is_number());
}

#[test]
fn bench_config_rejects_bad_values() {
    let mut c = BenchConfig::new(SyntheticFunction::F1, 0);
    c.sigma = 0.0;
    assert!(c.validate().is_err());
    let c = BenchConfig::new(SyntheticFunction::Linear { weights: vec![1.0; 3], bias: 0.0 }, 0);
    assert!(c.validate().is_err());
}
