use std::sync::Arc;

use diffcore::{grad_check, Activation, ComplexTensor, Coordinates, ModeSet, Tape, Tensor};
use moldflow::geometry::{build_cavity, generate_mesh, DesignParams, Point};
use moldflow::model::{
    broadcast_3d, decode_checkpoint, encode_checkpoint, load_checkpoint, radius_graph, save_checkpoint, within,
    Checkpoint, InletSetup, Model, ModelConfig, ModelInput, ModelParams, NormStats, Prepared, FEATURES,
};
use moldflow::solver::{FluidProps, Frame};
use moldflow::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(latent: usize, t_lat: usize, channels: usize, modes: [usize; 3], horizon: usize) -> ModelConfig {
    ModelConfig {
        latent,
        t_lat,
        channels,
        layers: 2,
        modes,
        radius: 0.3,
        horizon,
        kernel_width: 8,
        activation: Activation::Gelu,
    }
}

fn setup() -> InletSetup {
    InletSetup { v: 0.03, a: 15.0, b: 40.0, c: 60.0 }
}

fn random_points(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

fn random_input(n: usize, seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    ModelInput {
        vertices: random_points(n, seed),
        features: (0..n * FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        inlet: setup(),
    }
}

fn param_mut<'a>(p: &'a mut ModelParams<f64>, name: &str) -> &'a mut Tensor<f64> {
    let i = p.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("{name}"));
    &mut p.tensors[i]
}

fn fill(p: &mut ModelParams<f64>, name: &str, value: f64) {
    param_mut(p, name).data_mut().iter_mut().for_each(|x| *x = value);
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn encode(model: &Model<f64>, prep: &Prepared) -> Tensor<f64> {
    let tape = Tape::inference();
    let p = model.params.bind(&tape, false);
    model.encode(&tape, &p, prep).unwrap().value().clone()
}

#[test]
fn radius_graph_edge_examples() {
    let r = 0.2;
    let src = [[0.5, 0.5]];
    assert_eq!(radius_graph(&src, &[[0.5 + 0.5 * r, 0.5]], r).num_edges(), 1);
    assert_eq!(radius_graph(&src, &[[0.5, 0.5 + 1.5 * r]], r).num_edges(), 0);
}

#[test]
fn radius_graph_equals_brute_force() {
    for (seed, r) in [(1, 0.05), (2, 0.13), (3, 0.3)] {
        let src = random_points(200, seed);
        let dst = random_points(200, seed + 50);
        for (a, b) in [(&src, &dst), (&src, &src)] {
            let g = radius_graph(a, b, r);
            let mut expected = Vec::new();
            for (j, &q) in b.iter().enumerate() {
                for (i, &s) in a.iter().enumerate() {
                    if (s[0] - q[0]).hypot(s[1] - q[1]) < r {
                        expected.push((i, j));
                    }
                }
            }
            let mut got = Vec::new();
            for j in 0..b.len() {
                for &i in &g.sources[g.offsets[j]..g.offsets[j + 1]] {
                    got.push((i, j));
                }
            }
            assert_eq!(got, expected, "r = {r}");
            assert!(got.iter().all(|&(i, j)| within(a[i], b[j], r)));
        }
    }
}

#[test]
fn encoder_is_permutation_invariant() {
    let cfg = tiny(8, 4, 4, [3, 3, 3], 2);
    let model = Model::<f64>::new(&cfg, NormStats::default(), 7).unwrap();
    let input = random_input(120, 3);
    let base = encode(&model, &Prepared::new(&model.cfg, input.clone(), vec![[0.5, 0.5]]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut perm: Vec<usize> = (0..input.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let shuffled = ModelInput {
        vertices: perm.iter().map(|&i| input.vertices[i]).collect(),
        features: perm.iter().flat_map(|&i| input.features[i * FEATURES..(i + 1) * FEATURES].iter().copied()).collect(),
        inlet: input.inlet,
    };
    let moved = encode(&model, &Prepared::new(&model.cfg, shuffled, vec![[0.5, 0.5]]).unwrap());
    assert!(max_diff(base.data(), moved.data()) < 1e-12);
}

#[test]
fn encoder_only_sees_its_ball() {
    let mut cfg = tiny(8, 4, 4, [3, 3, 3], 2);
    cfg.radius = 0.2;
    let model = Model::<f64>::new(&cfg, NormStats::default(), 11).unwrap();
    // a dense lattice so no latent node falls back to a nearest vertex
    let mut input = random_input(0, 0);
    for i in 0..30 {
        for j in 0..30 {
            input.vertices.push([(i as f64 + 0.5) / 30.0, (j as f64 + 0.5) / 30.0]);
            input.features.extend((0..FEATURES).map(|k| ((i * 7 + j * 3 + k) % 11) as f64 / 5.0 - 1.0));
        }
    }
    let nodes = model.cfg.latent_nodes();
    assert_eq!(
        radius_graph(&input.vertices, &nodes, cfg.radius).offsets.windows(2).filter(|w| w[0] == w[1]).count(),
        0
    );
    let base = encode(&model, &Prepared::new(&model.cfg, input.clone(), vec![[0.5, 0.5]]).unwrap());

    let k = 31;
    let old = input.vertices[k];
    let new = [0.93, 0.9];
    let mut changed = input.clone();
    changed.vertices[k] = new;
    changed.features[k * FEATURES] += 3.0;
    let moved = encode(&model, &Prepared::new(&model.cfg, changed, vec![[0.5, 0.5]]).unwrap());
    let c = cfg.channels;
    let (mut untouched, mut touched) = (0, 0);
    for (n, &x) in nodes.iter().enumerate() {
        let d = max_diff(&base.data()[n * c..(n + 1) * c], &moved.data()[n * c..(n + 1) * c]);
        if within(old, x, cfg.radius) || within(new, x, cfg.radius) {
            touched += 1;
            assert!(d > 1e-9, "node {n} inside the ball did not react");
        } else {
            untouched += 1;
            assert!(d < 1e-12, "node {n} outside both balls moved by {d}");
        }
    }
    assert!(untouched > 20 && touched > 0);
}

#[test]
fn single_neighbor_with_pass_through_kernel_copies_features() {
    let mut cfg = tiny(4, 2, FEATURES, [2, 2, 2], 2);
    cfg.radius = 0.05;
    let mut model = Model::<f64>::new(&cfg, NormStats::default(), 1).unwrap();
    fill(&mut model.params, "enc.w_out", 0.0);
    fill(&mut model.params, "enc.b_out", 1.0);
    fill(&mut model.params, "enc.lift_b", 0.0);
    *param_mut(&mut model.params, "enc.lift") = Tensor::eye(FEATURES);
    let nodes = model.cfg.latent_nodes();
    let mut input = random_input(0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for x in &nodes {
        input.vertices.push([x[0] + 0.01, x[1] - 0.02]);
        input.features.extend((0..FEATURES).map(|_| rng.gen_range(-2.0..2.0)));
    }
    let latent = encode(&model, &Prepared::new(&model.cfg, input.clone(), vec![[0.5, 0.5]]).unwrap());
    assert!(max_diff(latent.data(), &input.features) < 1e-15);
}

#[test]
fn broadcast_shapes_and_slices() {
    let tape = Tape::<f64>::inference();
    let data: Vec<f64> = (0..3 * 3 * 2).map(|i| i as f64 * 0.25).collect();
    let lat = tape.constant(Tensor::new([3, 3, 2], data.clone()).unwrap());
    let out = broadcast_3d(&lat, 5).unwrap();
    assert_eq!(out.shape(), [3, 3, 5, 3]);
    let v = out.value().data();
    for node in 0..9 {
        for t in 0..5 {
            let at = (node * 5 + t) * 3;
            assert_eq!(&v[at..at + 2], &data[node * 2..node * 2 + 2]);
            assert_eq!(v[at + 2], t as f64 / 4.0);
        }
    }
    let single = broadcast_3d(&lat, 1).unwrap();
    assert_eq!(single.shape(), [3, 3, 1, 3]);
    for node in 0..9 {
        assert_eq!(single.value().data()[node * 3 + 2], 0.0);
    }
}

fn cond_of(model: &Model<f64>, inlet: &InletSetup) -> Tensor<f64> {
    // the conditioning network, evaluated the same way the model does
    let tape = Tape::inference();
    let p = model.params.bind(&tape, false);
    let i = tape.constant(Tensor::from_f64([1, 4], &inlet.standardized()).unwrap());
    i.matmul(p.get("cond.w").unwrap())
        .unwrap()
        .add_row(p.get("cond.b").unwrap())
        .unwrap()
        .activation(model.cfg.activation)
        .value()
        .clone()
}

fn random_block(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn adain(model: &Model<f64>, x: &Tensor<f64>, inlet: &InletSetup) -> Tensor<f64> {
    let tape = Tape::inference();
    let p = model.params.bind(&tape, false);
    let cond = tape.constant(cond_of(model, inlet));
    model.adain(&p, 0, &tape.constant(x.clone()), &cond).unwrap().value().clone()
}

#[test]
fn adain_with_identity_modulation_standardizes_channels() {
    let cfg = tiny(4, 3, 3, [2, 2, 2], 2);
    let mut model = Model::<f64>::new(&cfg, NormStats::default(), 5).unwrap();
    fill(&mut model.params, "layer0.gamma_w", 0.0);
    fill(&mut model.params, "layer0.gamma_b", 1.0);
    fill(&mut model.params, "layer0.beta_w", 0.0);
    fill(&mut model.params, "layer0.beta_b", 0.0);
    let x = random_block([4, 4, 3, 3], 2);
    let y = adain(&model, &x, &setup());
    let pts = 48;
    for c in 0..3 {
        let xs: Vec<f64> = (0..pts).map(|i| x.data()[i * 3 + c]).collect();
        let mean = xs.iter().sum::<f64>() / pts as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pts as f64;
        let ys: Vec<f64> = (0..pts).map(|i| y.data()[i * 3 + c]).collect();
        for (a, b) in xs.iter().zip(&ys) {
            assert!(((a - mean) / (var + 1e-5).sqrt() - b).abs() < 1e-12);
        }
        let ym = ys.iter().sum::<f64>() / pts as f64;
        let yv = ys.iter().map(|v| (v - ym).powi(2)).sum::<f64>() / pts as f64;
        assert!(ym.abs() < 1e-12);
        assert!((yv * (var + 1e-5) / var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn adain_maps_a_constant_channel_to_its_shift() {
    let cfg = tiny(4, 3, 3, [2, 2, 2], 2);
    let model = Model::<f64>::new(&cfg, NormStats::default(), 5).unwrap();
    let mut x = random_block([4, 4, 3, 3], 3);
    for i in 0..48 {
        x.data_mut()[i * 3 + 1] = 2.5;
    }
    let y = adain(&model, &x, &setup());
    let hidden = cond_of(&model, &setup());
    let bw = model.params.get("layer0.beta_w").unwrap();
    let bb = model.params.get("layer0.beta_b").unwrap();
    let beta: f64 = bb.data()[1] + (0..cfg.kernel_width).map(|k| hidden.data()[k] * bw.data()[k * 3 + 1]).sum::<f64>();
    for i in 0..48 {
        assert!((y.data()[i * 3 + 1] - beta).abs() < 1e-12);
    }
}

#[test]
fn adain_reacts_to_the_inlet_setup() {
    let cfg = tiny(4, 3, 3, [2, 2, 2], 2);
    let model = Model::<f64>::new(&cfg, NormStats::default(), 8).unwrap();
    let x = random_block([4, 4, 3, 3], 4);
    let other = InletSetup { v: 0.06, a: 22.0, ..setup() };
    let d = max_diff(adain(&model, &x, &setup()).data(), adain(&model, &x, &other).data());
    assert!(d > 1e-3, "{d}");
}

fn identity_adain(model: &mut Model<f64>, layer: usize) {
    fill(&mut model.params, &format!("layer{layer}.gamma_w"), 0.0);
    fill(&mut model.params, &format!("layer{layer}.gamma_b"), 1.0);
    fill(&mut model.params, &format!("layer{layer}.beta_w"), 0.0);
    fill(&mut model.params, &format!("layer{layer}.beta_b"), 0.0);
}

fn run_layer(model: &Model<f64>, layer: usize, u: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::inference();
    let p = model.params.bind(&tape, false);
    let cond = tape.constant(cond_of(model, &setup()));
    model.fourier_layer(&p, layer, &tape.constant(u.clone()), &cond).unwrap().value().clone()
}

#[test]
fn zeroed_layer_outputs_activation_of_zero() {
    let cfg = tiny(4, 4, 3, [3, 3, 3], 2);
    let mut model = Model::<f64>::new(&cfg, NormStats::default(), 2).unwrap();
    for name in ["layer1.spectral", "layer1.w", "layer1.b"] {
        fill(&mut model.params, name, 0.0);
    }
    identity_adain(&mut model, 1);
    let y = run_layer(&model, 1, &random_block([4, 4, 4, 3], 6));
    assert!(y.data().iter().all(|&v| v == 0.0));
    model.cfg.activation = Activation::Sigmoid;
    let y = run_layer(&model, 1, &random_block([4, 4, 4, 3], 6));
    assert!(y.data().iter().all(|&v| v == 0.5));
}

#[test]
fn full_mode_identity_layer_round_trips() {
    // an 8 x 8 x 4 grid keeps every frequency with modes (5, 5, 3)
    let mut model = Model::<f64>::new(&tiny(8, 4, 3, [5, 5, 3], 2), NormStats::default(), 2).unwrap();
    model.cfg.activation = Activation::Identity;
    let slots = model.modes().slots();
    let c = 3;
    let mut r = vec![0.0; 2 * slots * c * c];
    for s in 0..slots {
        for i in 0..c {
            r[(s * c + i) * c + i] = 1.0;
        }
    }
    *param_mut(&mut model.params, "layer1.spectral") = Tensor::new([2, slots, c, c], r).unwrap();
    fill(&mut model.params, "layer1.w", 0.0);
    fill(&mut model.params, "layer1.b", 0.0);
    identity_adain(&mut model, 1);
    // standardize the input so instance normalization leaves it in place
    let mut u = random_block([8, 8, 4, 3], 12);
    let pts = 256;
    for ch in 0..c {
        let mean = (0..pts).map(|i| u.data()[i * c + ch]).sum::<f64>() / pts as f64;
        let var = (0..pts).map(|i| (u.data()[i * c + ch] - mean).powi(2)).sum::<f64>() / pts as f64;
        for i in 0..pts {
            let v = &mut u.data_mut()[i * c + ch];
            *v = (*v - mean) / var.sqrt();
        }
    }
    let y = run_layer(&model, 1, &u);
    let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
    let expected: Vec<f64> = u.data().iter().map(|v| v * scale).collect();
    assert!(max_diff(y.data(), &expected) < 1e-12);
}

#[test]
fn high_frequency_input_is_filtered_out() {
    let cfg = tiny(8, 4, 3, [3, 3, 3], 2);
    let model = Model::<f64>::new(&cfg, NormStats::default(), 2).unwrap();
    let modes = Arc::new(model.modes().clone());
    let mut u = Tensor::zeros([8, 8, 4, 3]);
    for i in 0..8 {
        for j in 0..8 {
            for t in 0..4 {
                for ch in 0..3 {
                    let phase = std::f64::consts::TAU * (3.0 * i as f64 / 8.0 + ch as f64 * 0.3);
                    u.data_mut()[((i * 8 + j) * 4 + t) * 3 + ch] =
                        phase.sin() + 0.5 * (std::f64::consts::PI * j as f64).cos();
                }
            }
        }
    }
    let tape = Tape::inference();
    let w = tape.constant(model.params.get("layer1.spectral").unwrap().clone());
    let y = tape.constant(u).spectral_conv(&w, modes).unwrap();
    assert!(y.value().max_abs() < 1e-13, "{}", y.value().max_abs());
}

fn outside_energy(y: &Tensor<f64>, modes: &ModeSet) -> f64 {
    let shape = y.shape().to_vec();
    let grid = shape[..3].to_vec();
    let c = shape[3];
    let npts: usize = grid.iter().product();
    let (mut inside, mut outside) = (0.0, 0.0);
    for ch in 0..c {
        let chan: Vec<f64> = (0..npts).map(|p| y.data()[p * c + ch]).collect();
        let s = ComplexTensor::from_real(Tensor::new(grid.clone(), chan).unwrap()).dft(&[0, 1, 2], false).unwrap();
        for (f, e) in s.abs2().data().iter().enumerate() {
            if modes.contains(f) {
                inside += e;
            } else {
                outside += e;
            }
        }
    }
    outside / inside
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn spectral_branch_has_no_energy_outside_the_modes(seed in 0u64..10_000) {
        let cfg = tiny(8, 6, 4, [3, 2, 3], 2);
        let model = Model::<f64>::new(&cfg, NormStats::default(), seed).unwrap();
        let u = random_block([8, 8, 6, 5], seed + 1);
        let tape = Tape::inference();
        let w = tape.constant(model.params.get("layer0.spectral").unwrap().clone());
        let y = tape.constant(u).spectral_conv(&w, Arc::new(model.modes().clone())).unwrap();
        prop_assert!(outside_energy(y.value(), model.modes()) < 1e-10);
    }
}

#[test]
fn pass_through_decoder_reads_the_latent_nodes() {
    let mut cfg = tiny(4, 3, 3, [2, 2, 2], 3);
    cfg.radius = 0.1;
    let mut model = Model::<f64>::new(&cfg, NormStats::default(), 3).unwrap();
    fill(&mut model.params, "dec.w_out", 0.0);
    fill(&mut model.params, "dec.b_out", 1.0);
    let nodes = model.cfg.latent_nodes();
    let prep = Prepared::new(&model.cfg, random_input(10, 1), nodes.clone()).unwrap();
    let latent = random_block([4, 4, 3, 3], 9);
    let tape = Tape::inference();
    let p = model.params.bind(&tape, false);
    let out = model.decode(&tape, &p, &tape.constant(latent.clone()), &prep).unwrap();
    assert_eq!(out.shape(), [3, 16, 4]);
    let hw = model.params.get("head.w").unwrap().data();
    let hb = model.params.get("head.b").unwrap().data();
    for k in 0..3 {
        let t = model.cfg.slice_of_step(k);
        assert_eq!(t, k);
        for n in 0..16 {
            for q in 0..4 {
                let z: f64 = hb[q] + (0..3).map(|ch| latent.data()[(n * 3 + t) * 3 + ch] * hw[ch * 4 + q]).sum::<f64>();
                assert!((out.value().data()[(k * 16 + n) * 4 + q] - z).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn decoding_is_pointwise() {
    let cfg = tiny(8, 4, 4, [3, 3, 3], 2);
    let model = Model::<f64>::new(&cfg, NormStats::default(), 4).unwrap();
    let input = random_input(60, 2);
    let q = random_points(7, 77);
    let mut twice = q.clone();
    twice.push(q[2]);
    let mut superset = random_points(5, 78);
    superset.extend(q.iter().copied());
    let run = |queries: Vec<Point>| model.model_forward(&input, &queries).unwrap();
    let a = run(q.clone());
    let b = run(twice);
    let c = run(superset);
    for k in 0..2 {
        for (i, _) in q.iter().enumerate() {
            let at =
                |t: &Tensor<f64>, row: usize, nq: usize| t.data()[(k * nq + row) * 4..(k * nq + row + 1) * 4].to_vec();
            assert!(max_diff(&at(&a, i, 7), &at(&c, i + 5, 12)) < 1e-12);
            assert!(max_diff(&at(&a, i, 7), &at(&b, i, 8)) < 1e-12);
        }
        let at = |t: &Tensor<f64>, row: usize, nq: usize| t.data()[(k * nq + row) * 4..(k * nq + row + 1) * 4].to_vec();
        assert_eq!(at(&b, 2, 8), at(&b, 7, 8));
    }
}

#[test]
fn forward_shape_permutation_and_determinism() {
    let cfg = tiny(8, 4, 4, [3, 3, 3], 3);
    let model =
        Model::<f64>::new(&cfg, NormStats { mean: [0.1, 0.0, 5.0, 0.5], std: [0.2, 0.1, 3.0, 0.4] }, 4).unwrap();
    let input = random_input(80, 5);
    let queries = input.vertices.clone();
    let runs: Vec<Tensor<f64>> = (0..3).map(|_| model.model_forward(&input, &queries).unwrap()).collect();
    assert_eq!(runs[0].shape(), [3, 80, 4]);
    assert!(runs.iter().all(|r| r.data() == runs[0].data()));

    let perm: Vec<usize> = (0..80).map(|i| (i * 37) % 80).collect();
    let shuffled = ModelInput {
        vertices: perm.iter().map(|&i| input.vertices[i]).collect(),
        features: perm.iter().flat_map(|&i| input.features[i * FEATURES..(i + 1) * FEATURES].iter().copied()).collect(),
        inlet: input.inlet,
    };
    let out = model.model_forward(&shuffled, &shuffled.vertices).unwrap();
    for k in 0..3 {
        for (row, &i) in perm.iter().enumerate() {
            let a = &out.data()[(k * 80 + row) * 4..(k * 80 + row + 1) * 4];
            let b = &runs[0].data()[(k * 80 + i) * 4..(k * 80 + i + 1) * 4];
            assert!(max_diff(a, b) < 1e-12);
        }
    }
}

#[test]
fn too_many_spatial_modes_overflow() {
    let cfg = tiny(8, 4, 4, [6, 3, 3], 2);
    assert!(matches!(
        Model::<f64>::new(&cfg, NormStats::default(), 0),
        Err(Error::ModeOverflow { modes: 6, len: 8, .. })
    ));
    // temporal modes are clamped instead
    let clamped = Model::<f64>::new(&tiny(8, 4, 4, [3, 3, 9], 2), NormStats::default(), 0).unwrap();
    assert_eq!(clamped.cfg.modes, [3, 3, 3]);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let cfg = tiny(8, 4, 4, [3, 3, 3], 2);
    let model =
        Model::<f64>::new(&cfg, NormStats { mean: [0.1, 0.2, 0.3, 0.4], std: [1.0, 2.0, 3.0, 4.0] }, 21).unwrap();
    let ck = Checkpoint {
        cfg: model.cfg.clone(),
        norm: model.norm,
        params: model.params.clone(),
        meta: vec![("seed".into(), "21".into())],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/model.mfc");
    save_checkpoint(&path, &ck).unwrap();
    let back: Checkpoint<f64> = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    let as_f32: Checkpoint<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(as_f32.params.num_values(), ck.params.num_values());

    let mut bytes = encode_checkpoint(&ck);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    assert!(matches!(decode_checkpoint::<f64>(&bytes, "x"), Err(Error::ChecksumMismatch(_))));
    assert!(matches!(load_checkpoint::<f64>(&dir.path().join("none.mfc")), Err(Error::MissingRecord(_))));
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let mut cfg = tiny(8, 4, 3, [3, 3, 3], 2);
    cfg.radius = 0.35;
    let model =
        Model::<f64>::new(&cfg, NormStats { mean: [0.0, 0.1, 0.0, 0.5], std: [0.5, 1.0, 2.0, 0.3] }, 13).unwrap();
    let input = random_input(5, 8);
    let prep = Prepared::new(&model.cfg, input.clone(), input.vertices.clone()).unwrap();
    let theta = model.params.flatten();
    let err = grad_check(
        |flat| {
            let p = model.params.bind_flat(flat).map_err(|e| diffcore::DiffError::InvalidArgument(e.to_string()))?;
            let out = model
                .forward(flat.tape(), &p, &prep)
                .map_err(|e| diffcore::DiffError::InvalidArgument(e.to_string()))?;
            Ok(out.square().mean())
        },
        &theta,
        1e-6,
        Coordinates::Sample { count: 300, seed: 5 },
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn refining_the_mesh_barely_moves_predictions() {
    let d = build_cavity(&DesignParams::new(15.0, 50.0, 60.0, 0.5)).unwrap();
    let props = FluidProps::default();
    let model = Model::<f64>::new(&ModelConfig::desk(), NormStats::default(), 3).unwrap();
    let queries: Vec<Point> = random_points(400, 31)
        .into_iter()
        .map(|x| d.from_unit(x))
        .filter(|&x| d.contains(x))
        .map(|x| d.to_unit(x))
        .collect();
    let predict = |h: f64| {
        let mesh = generate_mesh(&d, h, 0).unwrap();
        let n = mesh.len();
        // a smooth initial state
        let f = Frame {
            u: mesh.vertices.iter().map(|x| (x[0] * 40.0).sin() as f32 * 0.1).collect(),
            v: vec![0.0; n],
            p: mesh.vertices.iter().map(|x| (x[1] * 1e3) as f32).collect(),
            alpha: mesh.vertices.iter().map(|x| (x[1] * 20.0).min(1.0) as f32).collect(),
        };
        let input =
            ModelInput::from_parts(&d, &mesh.vertices, &mesh.inlet_mask, &f, &NormStats::default(), &props).unwrap();
        (n, model.model_forward(&input, &queries).unwrap())
    };
    let (n1, coarse) = predict(4e-3);
    let (n2, fine) = predict(4e-3 / 2f64.sqrt());
    assert!(n2 as f64 > 1.6 * n1 as f64, "{n1} -> {n2}");
    let diff: f64 = coarse.data().iter().zip(fine.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fine.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff / norm < 0.05, "{}", diff / norm);
}
