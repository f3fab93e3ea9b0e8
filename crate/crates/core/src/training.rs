//! Causal rollout loss and the optimization loop.

use std::fmt::Write as _;
use std::path::Path;

use diffcore::{Scalar, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{subsample_spatial, subsample_temporal, SimulationRecord};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Checkpoint, Model, ModelInput, NormStats, Prepared, FIELDS};
use crate::solver::{FluidProps, Frame};

/// Targets with `sum q^2` below this are scored by the plain mean square.
pub const DEGENERATE_BELOW: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub value: f64,
    /// The target was (numerically) zero; `value` is the mean square error.
    pub degenerate: bool,
}

/// Squared relative error `(sum (p - q)^2 / N) / (sum q^2 / N)`.
pub fn per_step_loss(pred: &[f64], target: &[f64]) -> Result<StepLoss> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = pred.len() as f64;
    let err: f64 = pred.iter().zip(target).map(|(p, q)| (p - q) * (p - q)).sum();
    let den: f64 = target.iter().map(|q| q * q).sum();
    Ok(step_from_sums(err, den, n))
}

fn step_from_sums(err: f64, den: f64, n: f64) -> StepLoss {
    if den < DEGENERATE_BELOW {
        StepLoss { value: err / n, degenerate: true }
    } else {
        StepLoss { value: (err / n) / (den / n), degenerate: false }
    }
}

/// `gamma_k = exp(-tau max_q sum_{j<k} l_q^(j))`; `gamma_0 = 1`.
pub fn causal_weights(losses: &[[f64; FIELDS]], tau: f64) -> Vec<f64> {
    let mut cum = [0.0; FIELDS];
    let mut out = Vec::with_capacity(losses.len());
    for step in losses {
        let worst = cum.iter().copied().fold(0.0, f64::max);
        out.push((-tau * worst).exp());
        for (c, l) in cum.iter_mut().zip(step) {
            *c += l;
        }
    }
    out
}

/// `(1 / 4H) sum_k gamma_k sum_q l_q^(k)`.
pub fn weighted_loss(losses: &[[f64; FIELDS]], tau: f64) -> f64 {
    let h = losses.len();
    let gamma = causal_weights(losses, tau);
    let total: f64 = losses.iter().zip(&gamma).map(|(l, g)| g * l.iter().sum::<f64>()).sum();
    total / (FIELDS * h) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub value: f64,
    /// Per-step, per-field losses `[H][4]`.
    pub steps: Vec<[f64; FIELDS]>,
    pub weights: Vec<f64>,
    pub degenerate: bool,
}

fn check_layout(len: usize, target_len: usize, h: usize) -> Result<usize> {
    if len != target_len {
        return Err(Error::ShapeMismatch(format!("{len} predictions for {target_len} targets")));
    }
    if h == 0 || len == 0 {
        return Err(Error::EmptyInput);
    }
    if !len.is_multiple_of(h * FIELDS) {
        return Err(Error::ShapeMismatch(format!("{len} values do not split into {h} steps of 4 fields")));
    }
    Ok(len / (h * FIELDS))
}

/// Per-step sums of squared errors and of squared targets, `[H][4]` each.
fn step_sums(
    pred: impl Fn(usize) -> f64,
    target: &[f64],
    h: usize,
    n: usize,
) -> (Vec<[f64; FIELDS]>, Vec<[f64; FIELDS]>) {
    let mut err = vec![[0.0; FIELDS]; h];
    let mut den = vec![[0.0; FIELDS]; h];
    for k in 0..h {
        for i in 0..n {
            for q in 0..FIELDS {
                let at = (k * n + i) * FIELDS + q;
                let d = pred(at) - target[at];
                err[k][q] += d * d;
                den[k][q] += target[at] * target[at];
            }
        }
    }
    (err, den)
}

fn rollout_from_sums(err: &[[f64; FIELDS]], den: &[[f64; FIELDS]], n: usize, tau: f64) -> Rollout {
    let mut degenerate = false;
    let steps: Vec<[f64; FIELDS]> = err
        .iter()
        .zip(den)
        .map(|(e, d)| {
            let mut row = [0.0; FIELDS];
            for q in 0..FIELDS {
                let s = step_from_sums(e[q], d[q], n as f64);
                degenerate |= s.degenerate;
                row[q] = s.value;
            }
            row
        })
        .collect();
    Rollout { value: weighted_loss(&steps, tau), weights: causal_weights(&steps, tau), steps, degenerate }
}

/// L_opt of `[H, N, 4]` predictions against targets of the same layout.
pub fn rollout_loss(pred: &[f64], target: &[f64], h: usize, tau: f64) -> Result<Rollout> {
    let n = check_layout(pred.len(), target.len(), h)?;
    let (err, den) = step_sums(|i| pred[i], target, h, n);
    Ok(rollout_from_sums(&err, &den, n, tau))
}

/// Differentiable L_opt. The causal weights and denominators are computed
/// from the current values and enter the graph as constants.
pub fn rollout_loss_var<'t, T: Scalar>(pred: &Var<'t, T>, target: &[f64], tau: f64) -> Result<(Var<'t, T>, Rollout)> {
    let shape = pred.shape().to_vec();
    if shape.len() != 3 || shape[2] != FIELDS {
        return Err(Error::ShapeMismatch(format!("predictions {shape:?}, expected [H, N, 4]")));
    }
    let h = shape[0];
    let n = check_layout(pred.value().len(), target.len(), h)?;
    let values = pred.value().data();
    let (err, den) = step_sums(|i| values[i].to_f64c(), target, h, n);
    let rollout = rollout_from_sums(&err, &den, n, tau);
    let mut coef = Vec::with_capacity(h * FIELDS);
    for k in 0..h {
        for q in 0..FIELDS {
            let scale = if den[k][q] < DEGENERATE_BELOW { n as f64 } else { den[k][q] };
            coef.push(rollout.weights[k] / (scale * (FIELDS * h) as f64));
        }
    }
    let tape = pred.tape();
    let target = tape.constant(Tensor::from_f64(shape.clone(), target)?);
    let coef = tape.constant(Tensor::from_f64([h, FIELDS], &coef)?);
    let loss = pred.sub(&target)?.square().sum_axis(1)?.mul(&coef)?.sum();
    Ok((loss, rollout))
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[Tensor<T>], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch("optimizer state does not match the parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64c(self.beta1), T::from_f64c(self.beta2));
        let (a1, a2) = (T::from_f64c(1.0 - self.beta1), T::from_f64c(1.0 - self.beta2));
        let decay = T::from_f64c(1.0 - lr * self.weight_decay);
        let step_size = T::from_f64c(lr / c1);
        let inv_c2 = T::from_f64c(1.0 / c2);
        let eps = T::from_f64c(self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + a1 * g;
                *v = b2 * *v + a2 * g * g;
                *x = *x * decay - step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning rate schedule.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, best: f64::INFINITY, bad: 0 }
    }

    /// Feeds one validation loss; returns the learning rate to use next.
    pub fn observe(&mut self, val: f64, lr: f64) -> f64 {
        if val < self.best {
            self.best = val;
            self.bad = 0;
            return lr;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            self.bad = 0;
            return lr * self.factor;
        }
        lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop: usize,
    pub max_epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub tau: f64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            plateau_factor: 0.5,
            plateau_patience: 5,
            early_stop: 15,
            max_epochs: 200,
            max_steps: None,
            seed: 0,
            tau: 1.0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    /// Desk runs see few steps, so they start from a larger learning rate.
    pub fn desk() -> Self {
        Self { lr: 1e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::Config("rates must be positive and the plateau factor in (0, 1]".into()));
        }
        if self.plateau_patience == 0 || self.early_stop == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience and epoch counts must be at least 1".into()));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config(format!("tau = {} must be non-negative", self.tau)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("{key}={value}: invalid value"));
        match key {
            "lr" => self.lr = value.parse().map_err(|_| bad())?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad())?,
            "plateau_factor" => self.plateau_factor = value.parse().map_err(|_| bad())?,
            "plateau_patience" => self.plateau_patience = value.parse().map_err(|_| bad())?,
            "early_stop" => self.early_stop = value.parse().map_err(|_| bad())?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|_| bad())?,
            "max_steps" => self.max_steps = Some(value.parse().map_err(|_| bad())?),
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "tau" => self.tau = value.parse().map_err(|_| bad())?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("lr".to_string(), self.lr.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("plateau_factor".into(), self.plateau_factor.to_string()),
            ("plateau_patience".into(), self.plateau_patience.to_string()),
            ("early_stop".into(), self.early_stop.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("tau".into(), self.tau.to_string()),
            (
                "precision".into(),
                match self.precision {
                    Precision::F32 => "f32",
                    Precision::F64 => "f64",
                }
                .into(),
            ),
        ];
        if let Some(s) = self.max_steps {
            out.push(("max_steps".into(), s.to_string()));
        }
        out
    }
}

/// One rollout window ready for the model: graphs, conditioning and the
/// `[H, N, 4]` targets (frames `1..=H`) at the input vertices.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub prep: Prepared,
    pub target: Vec<f64>,
}

/// Frames `0..=horizon` of a record, failing if it is too short.
pub fn window(rec: &SimulationRecord, horizon: usize) -> Result<&[Frame]> {
    let frames = rec.frames();
    if frames.len() < horizon + 1 {
        return Err(Error::Config(format!(
            "{} has {} frames, horizon {horizon} needs {}",
            rec.id,
            frames.len(),
            horizon + 1
        )));
    }
    Ok(&frames[..=horizon])
}

/// Field statistics over the rollout windows of the given records.
pub fn norm_from_records(records: &[SimulationRecord], horizon: usize) -> Result<NormStats> {
    let mut frames = Vec::new();
    for r in records {
        frames.extend(window(r, horizon)?);
    }
    NormStats::from_frames(frames)
}

/// Targets `[H, N, 4]` of frames `1..=H`.
pub fn targets(frames: &[Frame]) -> Vec<f64> {
    let mut out = Vec::new();
    for f in &frames[1..] {
        for i in 0..f.len() {
            for q in 0..FIELDS {
                out.push(f.field(q)[i] as f64);
            }
        }
    }
    out
}

/// Builds the window of one record, predicting at its own vertices.
pub fn make_sample<T: Scalar>(model: &Model<T>, rec: &SimulationRecord, props: &FluidProps) -> Result<Sample> {
    let frames = window(rec, model.cfg.horizon)?;
    let input = ModelInput::from_trajectory(&rec.trajectory, &model.norm, props)?;
    let queries = input.vertices.clone();
    Ok(Sample { id: rec.id.clone(), prep: Prepared::new(&model.cfg, input, queries)?, target: targets(frames) })
}

/// Applies the spatial and temporal factors to a record.
pub fn resample(rec: &SimulationRecord, s_s: usize, s_t: usize, seed: u64) -> Result<SimulationRecord> {
    subsample_temporal(&subsample_spatial(rec, s_s, seed)?, s_t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub steps: usize,
    /// L_opt of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train,val,lr\n");
    for e in history {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train, e.val, e.lr);
    }
    out
}

/// Mean L_opt of the model over the samples, without recording.
pub fn evaluate_loss<T: Scalar>(model: &Model<T>, samples: &[Sample], tau: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for s in samples {
        let pred = model.predict(&s.prep)?.to_f64_vec();
        let r = rollout_loss(&pred, &s.target, model.cfg.horizon, tau)?;
        if !r.value.is_finite() {
            return Err(Error::NonFiniteLoss(s.id.clone()));
        }
        total += r.value;
    }
    Ok(total / samples.len() as f64)
}

/// One optimizer step on one sample; returns L_opt before the update.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    sample: &Sample,
    lr: f64,
    tau: f64,
) -> Result<f64> {
    let grads = {
        let tape = Tape::new();
        let p = model.params.bind(&tape, true);
        let pred = model.forward(&tape, &p, &sample.prep)?;
        let (loss, rollout) = rollout_loss_var(&pred, &sample.target, tau)?;
        if !rollout.value.is_finite() || !loss.value().all_finite() {
            return Err(Error::NonFiniteLoss(sample.id.clone()));
        }
        tape.backward(&loss)?;
        let grads = p.grads(&tape);
        (grads, rollout.value)
    };
    if grads.0.iter().any(|g| !g.all_finite()) {
        return Err(Error::NonFiniteLoss(sample.id.clone()));
    }
    opt.step(&mut model.params.tensors, &grads.0, lr)?;
    Ok(grads.1)
}

/// Trains in place; on return the model holds the parameters with the best
/// validation loss (unweighted rollout loss). With a `checkpoint` path they
/// are also written there after every improvement.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&model.params.tensors, cfg.weight_decay);
    let mut plateau = Plateau::new(cfg.plateau_factor, cfg.plateau_patience);
    let mut lr = cfg.lr;
    let mut best = (0usize, f64::INFINITY, model.params.clone());
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for &i in &order {
            if cfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                break;
            }
            let l = train_step(model, &mut opt, &train_set[i], lr, cfg.tau)?;
            step_losses.push(l);
            sum += l;
            count += 1;
        }
        if count == 0 {
            break;
        }
        // the causal weights rise as early steps improve, so the weighted
        // loss is not monotone in progress; validate on the plain mean
        let val = evaluate_loss(model, val_set, 0.0)?;
        history.push(EpochRecord { epoch, train: sum / count as f64, val, lr });
        log::info!("epoch {epoch}: train {:.6e} val {val:.6e} lr {lr:.3e}", sum / count as f64);
        if val < best.1 {
            best = (epoch, val, model.params.clone());
            if let Some(path) = checkpoint {
                let ck = Checkpoint {
                    cfg: model.cfg.clone(),
                    norm: model.norm,
                    params: model.params.clone(),
                    meta: vec![
                        ("epoch".into(), epoch.to_string()),
                        ("seed".into(), cfg.seed.to_string()),
                        ("val".into(), val.to_string()),
                    ],
                };
                save_checkpoint(path, &ck)?;
            }
        }
        lr = plateau.observe(val, lr);
        if epoch - best.0 >= cfg.early_stop {
            log::info!("early stop after epoch {epoch}, best {} ({:.6e})", best.0, best.1);
            break 'epochs;
        }
    }
    model.params = best.2;
    Ok(TrainReport { steps: step_losses.len(), history, best_epoch: best.0, best_val: best.1, step_losses })
}
