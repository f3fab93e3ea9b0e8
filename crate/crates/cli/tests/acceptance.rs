//! End-to-end acceptance suite. Runs each numbered criterion in order on one
//! thread so the timings mean something, prints one PASS/FAIL line per
//! criterion and fails if any criterion fails.
//!
//! `cargo test -p moldflow-cli --test acceptance -- 3 5` runs a subset.

use std::f64::consts::PI;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use diffcore::{grad_check, Activation, ComplexTensor, Coordinates, ModeSet, Tape, Tensor};
use moldflow::dataset::{desk_designs, generate, DatasetIndex, GenerationConfig, SimulationRecord};
use moldflow::evaluation::{aggregate, evaluate_prediction, relative_l2};
use moldflow::geometry::{build_cavity, DesignParams, Point};
use moldflow::model::{
    radius_graph, InletSetup, Model, ModelConfig, ModelInput, NormStats, Prepared, FEATURES, FIELDS,
};
use moldflow::solver::{
    init_state, init_state_with, FluidProps, Grid, InletBc, PhaseFieldParams, SolverOptions, SolverState,
};
use moldflow::training::{
    causal_weights, evaluate_loss, make_sample, norm_from_records, per_step_loss, rollout_loss, train, Precision,
    TrainConfig,
};
use moldflow_cli::eval::evaluate_checkpoint;
use moldflow_cli::train::{train_dataset, Factors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// The binary uses the same allocator, so the timing criterion measures it too.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn say(line: &str) {
    // written straight to stderr so the lines survive output capture
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// ---------------------------------------------------------------- 1

fn oracle_step_loss(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let e: f64 = pred.iter().zip(target).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
    let d: f64 = target.iter().map(|q| q * q).sum::<f64>() / n;
    e / d
}

fn criterion_1() -> Check {
    let mut worst: f64 = 0.0;
    let mut note = |got: f64, want: f64| worst = worst.max(if want == 0.0 { got.abs() } else { rel(got, want) });

    note(per_step_loss(&[1.0, 1.0], &[1.0, 0.0]).map_err(|e| e.to_string())?.value, 1.0);
    note(per_step_loss(&[0.0, 0.0], &[3.0, -1.0]).map_err(|e| e.to_string())?.value, 1.0);
    note(per_step_loss(&[2.0, 5.0], &[2.0, 5.0]).map_err(|e| e.to_string())?.value, 0.0);

    let g = causal_weights(&[[0.5, 0.0, 0.0, 0.0], [0.1, 0.0, 0.0, 0.0]], 1.0);
    note(g[0], 1.0);
    note(g[1], (-0.5f64).exp());
    let g = causal_weights(&[[0.2, 0.5, 0.0, 0.0], [0.0; 4]], 1.0);
    note(g[1], (-0.5f64).exp());
    let tau0 = causal_weights(&[[0.3; 4], [0.7; 4], [0.2; 4]], 0.0);
    tau0.iter().for_each(|&w| note(w, 1.0));

    // per-step losses 0.1 then 0.2 on every field, produced from data
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for l in [0.1f64, 0.2] {
        for _ in 0..FIELDS {
            pred.push(1.0 + l.sqrt());
            target.push(1.0);
        }
    }
    let r = rollout_loss(&pred, &target, 2, 1.0).map_err(|e| e.to_string())?;
    note(r.value, (0.1 + 0.2 * (-0.1f64).exp()) / 2.0);
    let rounded = (r.value - 0.140484).abs();

    note(relative_l2(&[3.0, 0.0], &[3.0, 4.0]).map_err(|e| e.to_string())?.value, 0.8);
    note(relative_l2(&[6.0, 8.0], &[3.0, 4.0]).map_err(|e| e.to_string())?.value, 1.0);
    let rep = aggregate(vec![[0.1, 0.05, 0.05, 0.05], [0.3, 0.05, 0.05, 0.05]], "x", "m");
    note(rep.r_q[0], 0.2);
    note(rep.r_q[1], 0.05);
    let eq = aggregate(vec![[0.05; 4]; 3], "x", "m");
    note(eq.r, 0.05);
    let reproduced = rep.r == rep.r_q.iter().sum::<f64>() / 4.0;

    // randomized: tau = 0 gives the plain mean, weights never increase
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut degenerate_worst, mut monotone) = (0.0f64, true);
    for _ in 0..1000 {
        let h = rng.gen_range(1..8);
        let n = rng.gen_range(1..20);
        let target: Vec<f64> = (0..h * n * FIELDS).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pred: Vec<f64> = target.iter().map(|t| t + rng.gen_range(-1.0..1.0)).collect();
        let mut plain = 0.0;
        for k in 0..h {
            for q in 0..FIELDS {
                let pick = |v: &[f64]| (0..n).map(|i| v[(k * n + i) * FIELDS + q]).collect::<Vec<f64>>();
                plain += oracle_step_loss(&pick(&pred), &pick(&target));
            }
        }
        plain /= (FIELDS * h) as f64;
        let flat = rollout_loss(&pred, &target, h, 0.0).map_err(|e| e.to_string())?;
        degenerate_worst = degenerate_worst.max(rel(flat.value, plain));
        let tau = rng.gen_range(0.0..10.0);
        let weighted = rollout_loss(&pred, &target, h, tau).map_err(|e| e.to_string())?;
        monotone &= weighted.weights[0] == 1.0 && weighted.weights.windows(2).all(|w| w[1] <= w[0]);
    }
    ensure(
        worst < 1e-9 && rounded < 1e-6 && reproduced && degenerate_worst < 1e-9 && monotone,
        format!(
            "examples max rel err {worst:.1e}; tau=0 vs mean on 1000 cases {degenerate_worst:.1e}; weights monotone {monotone}"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let cfg = ModelConfig {
        latent: 8,
        t_lat: 4,
        channels: 4,
        layers: 2,
        modes: [3, 3, 3],
        radius: 0.5,
        horizon: 2,
        kernel_width: 8,
        activation: Activation::Gelu,
    };
    let norm = NormStats { mean: [0.0, 0.1, 0.0, 0.5], std: [0.5, 1.0, 2.0, 0.3] };
    let model = Model::<f64>::new(&cfg, norm, 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 5;
    let input = ModelInput {
        vertices: (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect(),
        features: (0..n * FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        inlet: InletSetup { v: 0.03, a: 15.0, b: 40.0, c: 60.0 },
    };
    let prep = Prepared::new(&model.cfg, input.clone(), input.vertices.clone()).map_err(|e| e.to_string())?;
    let target: Vec<f64> = (0..cfg.horizon * n * FIELDS).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // causal weights are constants of the loss; freeze them at theta
    let base = model.predict(&prep).map_err(|e| e.to_string())?.to_f64_vec();
    let roll = rollout_loss(&base, &target, cfg.horizon, 1.0).map_err(|e| e.to_string())?;
    let mut coef = Vec::new();
    for k in 0..cfg.horizon {
        for q in 0..FIELDS {
            let den: f64 = (0..n).map(|i| target[(k * n + i) * FIELDS + q].powi(2)).sum();
            coef.push(roll.weights[k] / (den * (FIELDS * cfg.horizon) as f64));
        }
    }
    let theta = model.params.flatten();
    let to_diff = |e: moldflow::Error| diffcore::DiffError::InvalidArgument(e.to_string());
    let err = grad_check(
        |flat| {
            let tape = flat.tape();
            let p = model.params.bind_flat(flat).map_err(to_diff)?;
            let pred = model.forward(tape, &p, &prep).map_err(to_diff)?;
            let t = tape.constant(Tensor::new([cfg.horizon, n, FIELDS], target.clone())?);
            let c = tape.constant(Tensor::new([cfg.horizon, FIELDS], coef.clone())?);
            Ok(pred.sub(&t)?.square().sum_axis(1)?.mul(&c)?.sum())
        },
        &theta,
        1e-6,
        Coordinates::All,
    )
    .map_err(|e| e.to_string())?;
    // the frozen-weight loss must be the rollout loss itself
    let same = rel(roll.value, {
        let mut s = 0.0;
        for k in 0..cfg.horizon {
            for q in 0..FIELDS {
                let e: f64 =
                    (0..n).map(|i| (base[(k * n + i) * FIELDS + q] - target[(k * n + i) * FIELDS + q]).powi(2)).sum();
                s += coef[k * FIELDS + q] * e;
            }
        }
        s
    });
    ensure(err < 1e-4 && same < 1e-12, format!("{} parameters, max relative gradient error {err:.2e}", theta.len()))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut round, mut parseval) = (0.0f64, 0.0f64);
    let shapes: [&[usize]; 6] = [&[64], &[30], &[17, 9], &[8, 8, 6], &[12, 5, 7], &[32, 32, 10]];
    for shape in shapes {
        for _ in 0..20 {
            let len: usize = shape.iter().product();
            let re = Tensor::<f64>::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let im = Tensor::<f64>::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let x = ComplexTensor::new(re, im).map_err(|e| e.to_string())?;
            let axes: Vec<usize> = (0..shape.len()).collect();
            let f = x.dft(&axes, false).map_err(|e| e.to_string())?;
            let back = f.dft(&axes, true).map_err(|e| e.to_string())?;
            let scale: f64 = x.re.max_abs().max(x.im.max_abs());
            for (a, b) in back.re.data().iter().chain(back.im.data()).zip(x.re.data().iter().chain(x.im.data())) {
                round = round.max((*a - *b).abs() / scale);
            }
            let e: f64 = x.abs2().data().iter().sum();
            let s: f64 = f.abs2().data().iter().sum::<f64>() / len as f64;
            parseval = parseval.max(rel(s, e));
        }
    }

    // spectral branch of a Fourier layer on random inputs
    let mut outside_worst = 0.0f64;
    for seed in 0..10 {
        let cfg = ModelConfig { latent: 16, t_lat: 6, channels: 5, layers: 1, modes: [4, 3, 3], ..ModelConfig::desk() };
        let model = Model::<f64>::new(&cfg, NormStats::default(), seed).map_err(|e| e.to_string())?;
        let weights = model.params.get("layer0.spectral").unwrap().clone();
        let cin = weights.shape()[2];
        let shape = [16, 16, 6, cin];
        let u = Tensor::new(shape, (0..16 * 16 * 6 * cin).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let tape = Tape::inference();
        let w = tape.constant(weights);
        let y = tape.constant(u).spectral_conv(&w, Arc::new(model.modes().clone())).map_err(|e| e.to_string())?;
        outside_worst = outside_worst.max(outside_energy(y.value(), model.modes()));
    }
    ensure(
        round < 1e-12 && parseval < 1e-10 && outside_worst < 1e-10,
        format!("round trip {round:.1e}, Parseval {parseval:.1e}, energy outside modes {outside_worst:.1e}"),
    )
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

// ---------------------------------------------------------------- 4

fn points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

fn encode(model: &Model<f64>, input: ModelInput) -> Result<Vec<f64>, String> {
    let prep = Prepared::new(&model.cfg, input, vec![[0.5, 0.5]]).map_err(|e| e.to_string())?;
    let tape = Tape::inference();
    let p = model.params.bind(&tape, false);
    Ok(model.encode(&tape, &p, &prep).map_err(|e| e.to_string())?.value().data().to_vec())
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut exact = true;
    for r in [0.03, 0.1, 0.25] {
        let src = points(200, &mut rng);
        let dst = points(200, &mut rng);
        let g = radius_graph(&src, &dst, r);
        for (j, q) in dst.iter().enumerate() {
            let brute: Vec<usize> =
                (0..src.len()).filter(|&i| (src[i][0] - q[0]).hypot(src[i][1] - q[1]) < r).collect();
            exact &= g.sources[g.offsets[j]..g.offsets[j + 1]] == brute[..];
        }
    }

    let cfg = ModelConfig {
        latent: 8,
        t_lat: 4,
        channels: 4,
        layers: 1,
        modes: [3, 3, 3],
        radius: 0.2,
        horizon: 2,
        kernel_width: 8,
        activation: Activation::Gelu,
    };
    let model = Model::<f64>::new(&cfg, NormStats::default(), 9).map_err(|e| e.to_string())?;
    let inlet = InletSetup { v: 0.03, a: 15.0, b: 40.0, c: 60.0 };
    // dense lattice: every latent node has vertices in its ball
    let mut input = ModelInput { vertices: Vec::new(), features: Vec::new(), inlet };
    for i in 0..30 {
        for j in 0..30 {
            input.vertices.push([(i as f64 + rng.gen::<f64>()) / 30.0, (j as f64 + rng.gen::<f64>()) / 30.0]);
            input.features.extend((0..FEATURES).map(|_| rng.gen_range(-1.0..1.0)));
        }
    }
    let base = encode(&model, input.clone())?;

    let mut perm: Vec<usize> = (0..input.vertices.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let shuffled = ModelInput {
        vertices: perm.iter().map(|&i| input.vertices[i]).collect(),
        features: perm.iter().flat_map(|&i| input.features[i * FEATURES..(i + 1) * FEATURES].iter().copied()).collect(),
        inlet,
    };
    let perm_err = base.iter().zip(encode(&model, shuffled)?).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // move one vertex: latent nodes outside both balls must not change
    let k = 100;
    let (old, new) = (input.vertices[k], [0.9, 0.12]);
    let mut moved = input.clone();
    moved.vertices[k] = new;
    moved.features[k * FEATURES + 1] += 2.0;
    let after = encode(&model, moved)?;
    let c = cfg.channels;
    let (mut far, mut near_moved) = (0.0f64, true);
    for (node, x) in model.cfg.latent_nodes().iter().enumerate() {
        let d = (0..c).map(|ch| (base[node * c + ch] - after[node * c + ch]).abs()).fold(0.0, f64::max);
        let inside = |p: Point| (p[0] - x[0]).hypot(p[1] - x[1]) < cfg.radius;
        if inside(old) || inside(new) {
            near_moved &= d > 1e-9;
        } else {
            far = far.max(d);
        }
    }
    ensure(
        exact && perm_err < 1e-12 && far < 1e-12 && near_moved,
        format!(
            "radius graph exact {exact}; permutation {perm_err:.1e}; outside-ball change {far:.1e}; in-ball nodes react {near_moved}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn single_phase(nu: f64) -> FluidProps {
    FluidProps { rho1: 1.0, rho2: 1.0, mu1: nu, mu2: nu, sigma: 0.0, g: 0.0 }
}

fn taylor_green(n: usize, nu: f64, k: f64) -> Result<SolverState, String> {
    let grid = Grid::periodic(n, n, 1.0 / n as f64);
    let pf = PhaseFieldParams::new(grid.h, 1.0, 0.0, PI / 2.0);
    let mut s = SolverState::new(grid, vec![-1.0; n * n], single_phase(nu), pf, 0.0).map_err(|e| e.to_string())?;
    s.set_velocity(|d, x| tg_exact(d, x, k));
    Ok(s)
}

fn tg_exact(d: usize, x: Point, k: f64) -> f64 {
    if d == 0 {
        (k * x[0]).sin() * (k * x[1]).cos()
    } else {
        -(k * x[0]).cos() * (k * x[1]).sin()
    }
}

fn tg_velocity_error(s: &SolverState, nu: f64, k: f64) -> f64 {
    let decay = (-2.0 * nu * k * k * s.t).exp();
    let g = &s.grid;
    let (mut num, mut den) = (0.0, 0.0);
    for d in 0..2 {
        let [fx, fy] = g.face_dims(d);
        for j in 0..fy {
            for i in 0..fx {
                let e = decay * tg_exact(d, g.face_center(d, [i, j]), k);
                num += (s.vel[d][j * fx + i] - e).powi(2);
                den += e * e;
            }
        }
    }
    (num / den).sqrt()
}

fn max_divergence(s: &SolverState) -> f64 {
    let g = &s.grid;
    let mut worst = 0.0f64;
    for c in (0..g.fluid.len()).filter(|&c| g.fluid[c]) {
        let (i, j) = ((c % g.nx) as isize, (c / g.nx) as isize);
        let face = |d: usize, at: [isize; 2]| s.vel[d][g.face_index(d, at).unwrap()];
        let div = (face(0, [i + 1, j]) - face(0, [i, j]) + face(1, [i, j + 1]) - face(1, [i, j])) / g.h;
        worst = worst.max(div.abs());
    }
    worst
}

fn criterion_5() -> Check {
    let opts = SolverOptions::default();
    let none = InletBc::default();
    let err = |e: moldflow::Error| e.to_string();
    let (nu, k) = (0.01, 2.0 * PI);

    let mut tg = taylor_green(64, nu, k)?;
    let ke = |s: &SolverState| s.vel.iter().flatten().map(|u| u * u).sum::<f64>();
    let e0 = ke(&tg);
    tg.step_to(0.5, &none, &opts).map_err(err)?;
    let decay = ke(&tg) / e0;
    let exact = (-4.0 * nu * k * k * 0.5).exp();
    let energy_err = rel(decay, exact);

    let mut errs = Vec::new();
    for n in [32, 64] {
        let mut s = taylor_green(n, nu, k)?;
        s.step_to(0.25, &none, &opts).map_err(err)?;
        errs.push(tg_velocity_error(&s, nu, k));
    }
    let ratio = errs[0] / errs[1];

    // water at rest in a closed box
    let props = FluidProps::default();
    let n = 24;
    let h = 0.05 / n as f64;
    let pf = PhaseFieldParams::for_grid(h, &props);
    let mut rest = SolverState::new(Grid::closed_box(n, n, h), vec![-1.0; n * n], props, pf, 0.05).map_err(err)?;
    let mut still = 0.0f64;
    for _ in 0..100 {
        rest.advance(1e-3, &none, &opts).map_err(err)?;
        still = still.max(rest.max_speed());
    }

    // sealed mold: the water volume is conserved
    let design = DesignParams::new(15.0, 50.0, 60.0, 0.5);
    let domain = build_cavity(&design).map_err(err)?;
    let h = design.g * 1e-3 / 64.0;
    let pf = PhaseFieldParams::for_grid(h, &props);
    let mut sealed = init_state_with(&domain, h, &props, &pf, true).map_err(err)?;
    let m0 = sealed.phase_mass();
    for step in 1..=100 {
        sealed.step_to(step as f64 * 1e-3, &none, &opts).map_err(err)?;
    }
    let drift = rel(sealed.phase_mass(), m0);

    // filling: projection residual after every step
    let mut fill = init_state(&domain, h, &props, &pf).map_err(err)?;
    let inlet = InletBc::from_design(&design, &props);
    let mut div_ratio = 0.0f64;
    for _ in 0..100 {
        let dt = fill.stable_dt(&inlet, &opts);
        fill.advance(dt, &inlet, &opts).map_err(err)?;
        let bound = 1e-8 * fill.max_speed() / fill.grid.h;
        div_ratio = div_ratio.max(max_divergence(&fill) / bound);
    }

    ensure(
        energy_err < 0.02 && ratio >= 3.0 && still < 1e-8 && drift < 0.01 && div_ratio <= 1.0,
        format!(
            "TG energy err {:.3}%, error ratio {ratio:.2}; rest max|u| {still:.1e}; mass drift {:.4}%; divergence / bound {div_ratio:.2}",
            100.0 * energy_err,
            100.0 * drift
        ),
    )
}

// ---------------------------------------------------------------- 6, 8

const OVERFIT_STEPS: usize = 600;

struct Overfit {
    model: Model<f32>,
    record: SimulationRecord,
    first: f64,
    last: f64,
    r: f64,
    steps: usize,
}

fn desk_record(dir: &Path) -> Result<SimulationRecord, String> {
    let cfg = GenerationConfig::desk();
    let designs = desk_designs(1, 0, cfg.h);
    let index = generate(&designs, dir, 1, &cfg).map_err(|e| e.to_string())?;
    index.load(&index.records[0].id).map_err(|e| e.to_string())
}

fn overfit(dir: &Path) -> Result<Overfit, String> {
    let err = |e: moldflow::Error| e.to_string();
    let record = desk_record(dir)?;
    let mcfg = ModelConfig::desk();
    let tcfg = TrainConfig {
        max_epochs: OVERFIT_STEPS,
        early_stop: OVERFIT_STEPS,
        plateau_patience: 25,
        tau: 1.0,
        precision: Precision::F32,
        ..TrainConfig::desk()
    };
    let norm = norm_from_records(std::slice::from_ref(&record), mcfg.horizon).map_err(err)?;
    let mut model = Model::<f32>::new(&mcfg, norm, 0).map_err(err)?;
    let props = FluidProps::default();
    let sample = make_sample(&model, &record, &props).map_err(err)?;
    let set = [sample];
    let report = train(&mut model, &set, &set, &tcfg, None).map_err(err)?;
    let last = evaluate_loss(&model, &set, tcfg.tau).map_err(err)?;
    let pred = model.predict(&set[0].prep).map_err(err)?.to_f64_vec();
    let metrics = evaluate_prediction(&pred, &set[0].target, mcfg.horizon, &record.id, "overfit").map_err(err)?;
    Ok(Overfit { model, record, first: report.history[0].train, last, r: metrics.r, steps: report.steps })
}

fn criterion_6(state: &mut Option<Overfit>, dir: &Path) -> Check {
    let o = overfit(dir)?;
    let drop = o.first / o.last;
    let out = ensure(
        o.steps <= 2000 && drop >= 10.0 && o.r < 0.10,
        format!(
            "{} steps: L_opt {:.3e} -> {:.3e} ({drop:.1}x), r on the simulation {:.2}%",
            o.steps,
            o.first,
            o.last,
            100.0 * o.r
        ),
    );
    *state = Some(o);
    out
}

fn criterion_8(state: &Option<Overfit>) -> Check {
    let o = state.as_ref().ok_or("needs the trained desk model of criterion 6")?;
    let err = |e: moldflow::Error| e.to_string();
    let props = FluidProps::default();
    let rec = &o.record;
    let h = o.model.cfg.horizon;
    let window = h as f64 * rec.trajectory.dt;

    let mut surrogate = Vec::new();
    for _ in 0..3 {
        let t = Instant::now();
        let input = ModelInput::from_trajectory(&rec.trajectory, &o.model.norm, &props).map_err(err)?;
        let queries = input.vertices.clone();
        let prep = Prepared::new(&o.model.cfg, input, queries).map_err(err)?;
        let pred = o.model.predict(&prep).map_err(err)?;
        std::hint::black_box(pred);
        surrogate.push(t.elapsed().as_secs_f64());
    }
    surrogate.sort_by(f64::total_cmp);

    let cfg = GenerationConfig::desk();
    let domain = build_cavity(rec.design()).map_err(err)?;
    let pf = PhaseFieldParams::for_grid(cfg.h, &props);
    let t = Instant::now();
    let mut s = init_state(&domain, cfg.h, &props, &pf).map_err(err)?;
    let bc = InletBc::from_design(rec.design(), &props);
    for k in 1..=h {
        s.step_to(k as f64 * rec.trajectory.dt, &bc, &SolverOptions::default()).map_err(err)?;
        std::hint::black_box(s.sample(&rec.mesh().vertices));
    }
    let solver = t.elapsed().as_secs_f64();
    let speedup = solver / surrogate[1];
    ensure(
        speedup >= 10.0,
        format!(
            "{h} steps ({window:.2} s simulated): solver {solver:.2} s, surrogate {:.3} s, speedup {speedup:.0}x",
            surrogate[1]
        ),
    )
}

// ---------------------------------------------------------------- 7

fn mfo(args: &[&str]) -> i32 {
    moldflow_cli::run(std::iter::once("mfo").chain(args.iter().copied()))
}

const ABLATION_EPOCHS: usize = 50;

fn criterion_7(dir: &Path) -> Check {
    let data = dir.join("data");
    let data_s = data.to_str().unwrap();
    let code = mfo(&[
        "generate",
        "--space",
        "ds2",
        "--desk",
        "--count",
        "16",
        "--val-count",
        "2",
        "--test-count",
        "4",
        "--seed",
        "0",
        "--out",
        data_s,
    ]);
    if code != 0 {
        return Err(format!("generation exited with {code}"));
    }
    let index = DatasetIndex::open(&data).map_err(|e| e.to_string())?;
    if index.records.len() != 16 {
        return Err(format!("{} of 16 simulations generated", index.records.len()));
    }
    let mcfg = ModelConfig::desk();
    let tcfg = TrainConfig { max_epochs: ABLATION_EPOCHS, ..TrainConfig::desk() };
    let mut r = Vec::new();
    let runs = [
        ("base", Factors::default()),
        ("s_s=4", Factors { s_s: 4, ..Factors::default() }),
        ("s_t=4", Factors { s_t: 4, ..Factors::default() }),
        ("s_d=0.5", Factors { s_d: 0.5, ..Factors::default() }),
    ];
    for (name, f) in runs {
        let out = dir.join(name);
        let trained = train_dataset(&data, &out, &mcfg, &tcfg, f).map_err(|e| e.to_string())?;
        let reports = evaluate_checkpoint(&data, &trained.checkpoint, moldflow::dataset::Split::Test)
            .map_err(|e| e.to_string())?;
        let mean = reports.iter().map(|x| x.r).sum::<f64>() / reports.len() as f64;
        say(&format!(
            "    ablation {name}: {} epochs, best val {:.3e}, held-out r {:.2}%",
            trained.report.history.len(),
            trained.report.best_val,
            100.0 * mean
        ));
        r.push(mean);
    }
    let (base, ss, st, sd) = (r[0], r[1], r[2], r[3]);
    ensure(
        ss > base && st >= base && sd >= base,
        format!(
            "held-out r: base {:.2}%, s_s=4 {:.2}%, s_t=4 {:.2}%, s_d=0.5 {:.2}%",
            100.0 * base,
            100.0 * ss,
            100.0 * st,
            100.0 * sd
        ),
    )
}

// ---------------------------------------------------------------- 9

fn same_files(a: &Path, b: &Path, names: &[String]) -> Result<bool, String> {
    for n in names {
        let x = std::fs::read(a.join(n)).map_err(|e| format!("{n}: {e}"))?;
        let y = std::fs::read(b.join(n)).map_err(|e| format!("{n}: {e}"))?;
        if x != y {
            return Ok(false);
        }
    }
    Ok(true)
}

fn criterion_9(dir: &Path) -> Check {
    let first = dir.join("gen_a");
    let second = dir.join("gen_b");
    let code = mfo(&[
        "generate",
        "--space",
        "ds2",
        "--desk",
        "--count",
        "3",
        "--horizon",
        "0.06",
        "--val-count",
        "1",
        "--test-count",
        "1",
        "--out",
        first.to_str().unwrap(),
    ]);
    let manifest = first.join("manifest.json");
    let replayed = mfo(&["replay", "--manifest", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    if code != 0 || replayed != 0 {
        return Err(format!("generate exited {code}, replay {replayed}"));
    }
    let index = DatasetIndex::open(&first).map_err(|e| e.to_string())?;
    let mut names: Vec<String> = index.records.iter().map(|r| format!("{}.mfd", r.id)).collect();
    names.push("index.json".into());
    let gen_same = same_files(&first, &second, &names)?;

    let t1 = dir.join("train_a");
    let t2 = dir.join("train_b");
    let mut args = vec!["train", "--data", first.to_str().unwrap(), "--out", t1.to_str().unwrap()];
    for s in ["latent=12", "t_lat=4", "channels=6", "modes=4,4,3", "horizon=5", "max_epochs=4", "seed=11"] {
        args.extend(["--set", s]);
    }
    let trained = mfo(&args);
    let again =
        mfo(&["replay", "--manifest", t1.join("manifest.json").to_str().unwrap(), "--out", t2.to_str().unwrap()]);
    if trained != 0 || again != 0 {
        return Err(format!("train exited {trained}, replay {again}"));
    }
    let history = std::fs::read_to_string(t1.join("history.csv")).map_err(|e| e.to_string())?;
    let train_same = same_files(&t1, &t2, &["history.csv".into(), "model.ckpt".into()])?;
    ensure(
        gen_same && train_same && history.lines().count() == 5,
        format!(
            "{} generated files identical {gen_same}; training history and checkpoint identical {train_same}",
            names.len()
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let work = tempfile::tempdir().expect("temporary directory");
    let mut overfit_state: Option<Overfit> = None;
    let mut failed = Vec::new();

    let mut check = |n: usize, name: &str, limit: Duration, f: &mut dyn FnMut() -> Check| {
        if !run(n) {
            return;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = t.elapsed();
        let in_time = took <= limit;
        let (ok, detail) = match result {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let status = if ok { "PASS" } else { "FAIL" };
        say(&format!(
            "[{status}] criterion {n} ({name}): {detail}; {:.1} s of {} s{}",
            took.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { " OVER TIME" }
        ));
        if !ok {
            failed.push(n);
        }
    };

    let dir = work.path().to_path_buf();
    check(1, "loss and metric exactness", Duration::from_secs(10), &mut criterion_1);
    check(2, "gradient fidelity", Duration::from_secs(120), &mut criterion_2);
    check(3, "spectral properties", Duration::from_secs(30), &mut criterion_3);
    check(4, "graph operator properties", Duration::from_secs(30), &mut criterion_4);
    check(5, "solver oracles", Duration::from_secs(600), &mut criterion_5);
    let overfit_dir = dir.join("overfit");
    check(6, "single-simulation overfit", Duration::from_secs(1800), &mut || {
        criterion_6(&mut overfit_state, &overfit_dir)
    });
    if run(8) && !run(6) {
        overfit_state = overfit(&overfit_dir).ok();
    }
    let ablation_dir = dir.join("ablation");
    check(7, "ablation trends", Duration::from_secs(4 * 3600), &mut || criterion_7(&ablation_dir));
    check(8, "surrogate speedup", Duration::from_secs(300), &mut || criterion_8(&overfit_state));
    let repro_dir = dir.join("repro");
    check(9, "reproducibility", Duration::from_secs(1800), &mut || criterion_9(&repro_dir));

    if failed.is_empty() {
        say("acceptance: all selected criteria passed");
    } else {
        say(&format!("acceptance: failed criteria {failed:?}"));
        std::process::exit(1);
    }
}
