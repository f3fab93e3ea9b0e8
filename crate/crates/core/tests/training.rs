use diffcore::{Activation, Tape, Tensor};
use moldflow::dataset::{RecordMeta, SimulationRecord};
use moldflow::geometry::{build_cavity, DesignParams, Mesh};
use moldflow::model::{Model, ModelConfig, FIELDS};
use moldflow::solver::{FluidProps, Frame, Trajectory};
use moldflow::training::{
    causal_weights, history_csv, make_sample, norm_from_records, per_step_loss, rollout_loss, rollout_loss_var, train,
    weighted_loss, AdamW, Plateau, Precision, TrainConfig,
};
use moldflow::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

#[test]
fn per_step_loss_examples() {
    let q = [1.0, -2.0, 0.5];
    assert_eq!(per_step_loss(&q, &q).unwrap().value, 0.0);
    assert_eq!(per_step_loss(&[0.0; 3], &q).unwrap().value, 1.0);
    let l = per_step_loss(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    assert!(close(l.value, (1.0 / 2.0) / (1.0 / 2.0), 1e-9));
    assert!(!l.degenerate);
    let d = per_step_loss(&[0.5, -0.5], &[0.0, 0.0]).unwrap();
    assert!(d.degenerate);
    assert!(close(d.value, 0.25, 1e-12));
    assert!(matches!(per_step_loss(&[1.0], &[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
}

#[test]
fn causal_weight_examples() {
    let losses = [[0.5, 0.0, 0.0, 0.0], [0.3, 0.0, 0.0, 0.0]];
    let g = causal_weights(&losses, 1.0);
    assert_eq!(g[0], 1.0);
    assert!(close(g[1], 0.606531, 1e-6));
    assert!(close(g[1], (-0.5f64).exp(), 1e-12));
    // the largest cumulative field loss sets the weight
    let two = causal_weights(&[[0.2, 0.5, 0.0, 0.0], [0.0; 4]], 1.0);
    assert!(close(two[1], (-0.5f64).exp(), 1e-12));
    assert!(causal_weights(&losses, 0.0).iter().all(|&w| w == 1.0));
    assert!(causal_weights(&[[0.0; 4]; 5], 3.0).iter().all(|&w| w == 1.0));
}

#[test]
fn rollout_loss_examples() {
    let hand = [[0.1; 4], [0.2; 4]];
    let expected = (0.1 + 0.2 * (-0.1f64).exp()) / 2.0;
    assert!(close(weighted_loss(&hand, 1.0), expected, 1e-9));
    assert!((expected - 0.140484).abs() < 1e-6);

    // the same losses produced from data: N = 1, q = 1, error sqrt(l)
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for l in [0.1f64, 0.2] {
        for _ in 0..FIELDS {
            pred.push(1.0 + l.sqrt());
            target.push(1.0);
        }
    }
    let r = rollout_loss(&pred, &target, 2, 1.0).unwrap();
    assert!(close(r.value, expected, 1e-9));
    assert_eq!(rollout_loss(&target, &target, 2, 1.0).unwrap().value, 0.0);
}

fn random_losses(rng: &mut ChaCha8Rng) -> Vec<[f64; 4]> {
    let h = rng.gen_range(1..12);
    (0..h)
        .map(|_| {
            let mut row = [0.0; 4];
            for x in &mut row {
                *x = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..3.0) };
            }
            row
        })
        .collect()
}

#[test]
fn thousand_random_cases_keep_the_weight_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let losses = random_losses(&mut rng);
        let tau = rng.gen_range(0.0..5.0);
        let g = causal_weights(&losses, tau);
        assert_eq!(g[0], 1.0);
        assert!(g.windows(2).all(|w| w[1] <= w[0]));
        let plain: f64 = losses.iter().flatten().sum::<f64>() / (4 * losses.len()) as f64;
        let flat = weighted_loss(&losses, 0.0);
        assert!((flat - plain).abs() <= 1e-12 * plain.max(1e-300));
        assert!(weighted_loss(&losses, tau) <= flat * (1.0 + 1e-12));
    }
}

proptest! {
    #[test]
    fn rollout_loss_is_zero_only_at_the_target(
        values in proptest::collection::vec(-5.0..5.0f64, 24),
        noise in proptest::collection::vec(-1.0..1.0f64, 24),
        tau in 0.0..4.0f64,
    ) {
        let pred: Vec<f64> = values.iter().zip(&noise).map(|(v, n)| v + n).collect();
        let r = rollout_loss(&pred, &values, 2, tau).unwrap();
        prop_assert!(r.value >= 0.0);
        if noise.iter().any(|&n| n != 0.0) {
            prop_assert!(r.value > 0.0);
        }
        prop_assert_eq!(rollout_loss(&values, &values, 2, tau).unwrap().value, 0.0);
    }
}

#[test]
fn differentiable_loss_matches_values_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (h, n) = (3, 7);
    let target: Vec<f64> = (0..h * n * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let pred: Vec<f64> = target.iter().map(|t| t + rng.gen_range(-0.5..0.5)).collect();
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new([h, n, 4], pred.clone()).unwrap());
    let (loss, r) = rollout_loss_var(&x, &target, 1.0).unwrap();
    assert!(close(loss.value().item().unwrap(), r.value, 1e-12));
    assert!(close(r.value, rollout_loss(&pred, &target, h, 1.0).unwrap().value, 1e-12));
    tape.backward(&loss).unwrap();
    let g = tape.grad(&x).unwrap();
    // the weights are constants: differentiate with them frozen at `pred`
    let gamma = r.weights.clone();
    let frozen = |p: &[f64]| -> f64 {
        let mut total = 0.0;
        for k in 0..h {
            for q in 0..4 {
                let (mut e, mut d) = (0.0, 0.0);
                for i in 0..n {
                    let at = (k * n + i) * 4 + q;
                    e += (p[at] - target[at]).powi(2);
                    d += target[at] * target[at];
                }
                total += gamma[k] * e / d;
            }
        }
        total / (4 * h) as f64
    };
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..pred.len() {
        let mut plus = pred.clone();
        plus[i] += step;
        let mut minus = pred.clone();
        minus[i] -= step;
        let fd = (frozen(&plus) - frozen(&minus)) / (2.0 * step);
        let a = g.data()[i];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3 * g.max_abs()));
    }
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn adamw_first_step_matches_hand_computation() {
    let mut params = vec![Tensor::new([2], vec![1.0, -2.0]).unwrap()];
    let grads = vec![Tensor::new([2], vec![0.5, -0.25]).unwrap()];
    let mut opt = AdamW::new(&params, 0.1);
    opt.step(&mut params, &grads, 0.01).unwrap();
    // m_hat = g, v_hat = g^2, so the Adam step is lr * sign(g) up to eps
    for (x0, g, x) in [(1.0, 0.5, params[0].data()[0]), (-2.0, -0.25, params[0].data()[1])] {
        let oracle = x0 * (1.0 - 0.01 * 0.1) - 0.01 * g / (f64::abs(g) + 1e-8);
        assert!((x - oracle).abs() < 1e-12, "{x} vs {oracle}");
    }
    opt.step(&mut params, &grads, 0.01).unwrap();
    assert_eq!(opt.steps(), 2);
}

#[test]
fn plateau_halves_after_patience_bad_epochs() {
    let mut p = Plateau::new(0.5, 3);
    let mut lr = 1e-3;
    lr = p.observe(1.0, lr);
    for _ in 0..2 {
        lr = p.observe(1.0, lr);
        assert_eq!(lr, 1e-3);
    }
    lr = p.observe(1.5, lr);
    assert_eq!(lr, 5e-4);
    lr = p.observe(0.5, lr);
    assert_eq!(lr, 5e-4);
}

fn smooth_record(id: &str, seed: u64, frames: usize) -> SimulationRecord {
    let design = DesignParams::new(15.0, 40.0 + seed as f64, 70.0, 0.5);
    let domain = build_cavity(&design).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices: Vec<[f64; 2]> = (0..40).map(|_| [rng.gen_range(0.0..0.1), rng.gen_range(0.0..0.05)]).collect();
    let mesh = Mesh::from_vertices(&domain, vertices.clone(), 0.004);
    let phase = rng.gen_range(0.0..1.0);
    let frames: Vec<Frame> = (0..frames)
        .map(|k| {
            let t = k as f64 * 0.01;
            let f = |a: f64, x: &[f64; 2]| (a * (x[0] * 60.0 + t * 20.0 + phase).sin() + 0.1 * x[1]) as f32;
            Frame {
                u: vertices.iter().map(|x| f(0.05, x)).collect(),
                v: vertices.iter().map(|x| f(0.02, x) + 0.01).collect(),
                p: vertices.iter().map(|x| 100.0 + 50.0 * f(1.0, x)).collect(),
                alpha: vertices.iter().map(|x| 0.5 + 0.4 * f(1.0, x)).collect(),
            }
        })
        .collect();
    SimulationRecord {
        id: id.into(),
        trajectory: Trajectory { design, mesh, dt: 0.01, horizon: 0.01 * (frames.len() - 1) as f64, frames },
        meta: RecordMeta { seed, solver_version: "test".into(), h: 0.002, dt: 0.01, horizon: 0.04 },
    }
}

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        latent: 8,
        t_lat: 3,
        channels: 6,
        layers: 2,
        modes: [3, 3, 2],
        radius: 0.25,
        horizon: 3,
        kernel_width: 12,
        activation: Activation::Gelu,
    }
}

fn run(seed: u64, precision: Precision) -> (Vec<f64>, Vec<String>) {
    let records: Vec<SimulationRecord> = (0..3).map(|i| smooth_record(&format!("s{i}"), i, 5)).collect();
    let norm = norm_from_records(&records, 3).unwrap();
    let props = FluidProps::default();
    let cfg = TrainConfig { lr: 3e-3, max_epochs: 6, seed, precision, ..TrainConfig::default() };
    match precision {
        Precision::F32 => {
            let mut model = Model::<f32>::new(&tiny_cfg(), norm, seed).unwrap();
            let samples: Vec<_> = records.iter().map(|r| make_sample(&model, r, &props).unwrap()).collect();
            let report = train(&mut model, &samples[..2], &samples[2..], &cfg, None).unwrap();
            (report.step_losses, history_csv(&report.history).lines().map(String::from).collect())
        }
        Precision::F64 => {
            let mut model = Model::<f64>::new(&tiny_cfg(), norm, seed).unwrap();
            let samples: Vec<_> = records.iter().map(|r| make_sample(&model, r, &props).unwrap()).collect();
            let report = train(&mut model, &samples[..2], &samples[2..], &cfg, None).unwrap();
            (report.step_losses, history_csv(&report.history).lines().map(String::from).collect())
        }
    }
}

#[test]
fn same_seed_gives_identical_histories() {
    let a = run(3, Precision::F32);
    let b = run(3, Precision::F32);
    assert_eq!(a, b);
    assert_eq!(a.0.len(), 12);
    assert_eq!(a.1[0], "epoch,train,val,lr");
    assert_eq!(a.1.len(), 7);
    let c = run(4, Precision::F32);
    assert_ne!(a.0, c.0);
    let d = run(3, Precision::F64);
    assert_eq!(d, run(3, Precision::F64));
}

#[test]
fn training_reduces_the_loss_on_a_single_window() {
    let rec = smooth_record("one", 1, 5);
    let norm = norm_from_records(std::slice::from_ref(&rec), 3).unwrap();
    let mut model = Model::<f64>::new(&tiny_cfg(), norm, 0).unwrap();
    let sample = make_sample(&model, &rec, &FluidProps::default()).unwrap();
    let cfg = TrainConfig { lr: 3e-3, max_epochs: 150, early_stop: 150, ..TrainConfig::default() };
    let set = vec![sample];
    let report = train(&mut model, &set, &set, &cfg, None).unwrap();
    let first = report.step_losses[0];
    assert!(report.best_val < first / 5.0, "{first} -> {}", report.best_val);
    // the kept parameters are the best ones
    let again = moldflow::training::evaluate_loss(&model, &set, 0.0).unwrap();
    assert!(close(again, report.best_val, 1e-12));
}

#[test]
fn missing_validation_is_rejected() {
    let rec = smooth_record("one", 1, 5);
    let norm = norm_from_records(std::slice::from_ref(&rec), 3).unwrap();
    let mut model = Model::<f64>::new(&tiny_cfg(), norm, 0).unwrap();
    let sample = make_sample(&model, &rec, &FluidProps::default()).unwrap();
    let err = train(&mut model, &[sample], &[], &TrainConfig::default(), None).unwrap_err();
    assert!(matches!(err, Error::EmptyInput));
}

#[test]
fn non_finite_targets_name_the_simulation() {
    let mut rec = smooth_record("broken", 2, 5);
    rec.trajectory.frames[2].p[3] = f32::NAN;
    let norm = norm_from_records(&[smooth_record("ok", 1, 5)], 3).unwrap();
    let mut model = Model::<f64>::new(&tiny_cfg(), norm, 0).unwrap();
    let sample = make_sample(&model, &rec, &FluidProps::default()).unwrap();
    let set = vec![sample];
    match train(&mut model, &set, &set, &TrainConfig::default(), None) {
        Err(Error::NonFiniteLoss(id)) => assert_eq!(id, "broken"),
        other => panic!("{other:?}"),
    }
}
