use std::path::{Path, PathBuf};

use diffcore::Scalar;
use moldflow::dataset::{select_fraction, DatasetIndex, SimulationRecord, Split};
use moldflow::evaluation::write_file;
use moldflow::model::{save_checkpoint, Checkpoint, Model, ModelConfig};
use moldflow::solver::FluidProps;
use moldflow::training::{
    history_csv, make_sample, norm_from_records, resample, train, Precision, Sample, TrainConfig, TrainReport,
};

use crate::common::{num, path_arg};
use crate::config::{all_pairs, resolve, write_pairs};
use crate::manifest::Manifest;
use crate::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `key=value` file of model and training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` setting, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Spatial subsampling factor of the training meshes.
    #[arg(long, default_value_t = 1)]
    pub ss: usize,
    /// Temporal stride between frames.
    #[arg(long, default_value_t = 1)]
    pub st: usize,
    /// Fraction of the training split used.
    #[arg(long, default_value_t = 1.0)]
    pub sd: f64,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Data reduction applied before training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factors {
    pub s_s: usize,
    pub s_t: usize,
    pub s_d: f64,
}

impl Default for Factors {
    fn default() -> Self {
        Self { s_s: 1, s_t: 1, s_d: 1.0 }
    }
}

impl Factors {
    pub fn validate(&self) -> CliResult<()> {
        if self.s_s == 0 || self.s_t == 0 {
            return Err(CliError::Usage("subsampling factors must be at least 1".into()));
        }
        if !(self.s_d > 0.0 && self.s_d <= 1.0) {
            return Err(CliError::Usage(format!("data fraction {} outside (0, 1]", self.s_d)));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Training records at `s_s` and `s_t`, validation records at full
/// resolution and `s_t`. Without validation records the training
/// records stand in.
pub fn load_training_data(
    index: &DatasetIndex,
    factors: Factors,
    seed: u64,
) -> CliResult<(Vec<SimulationRecord>, Vec<SimulationRecord>)> {
    let picked = select_fraction(index, factors.s_d, seed)?;
    let train_ids = picked.ids(Split::Train);
    if train_ids.is_empty() {
        return Err(moldflow::Error::MissingRecord(format!("no training records in {}", index.root.display())).into());
    }
    let mut train = Vec::with_capacity(train_ids.len());
    for (k, id) in train_ids.iter().enumerate() {
        train.push(resample(&index.load(id)?, factors.s_s, factors.s_t, seed.wrapping_add(k as u64))?);
    }
    let mut val = Vec::new();
    for id in picked.ids(Split::Validation) {
        val.push(resample(&index.load(&id)?, 1, factors.s_t, 0)?);
    }
    if val.is_empty() {
        log::warn!("no validation records; validating on the training set");
        for id in &train_ids {
            val.push(resample(&index.load(id)?, 1, factors.s_t, 0)?);
        }
    }
    Ok((train, val))
}

fn samples<T: Scalar>(model: &Model<T>, recs: &[SimulationRecord], props: &FluidProps) -> CliResult<Vec<Sample>> {
    recs.iter().map(|r| Ok(make_sample(model, r, props)?)).collect()
}

#[allow(clippy::too_many_arguments)]
fn fit<T: Scalar>(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    factors: Factors,
    train_recs: &[SimulationRecord],
    val_recs: &[SimulationRecord],
    props: &FluidProps,
    out: &Path,
) -> CliResult<TrainReport> {
    let norm = norm_from_records(train_recs, mcfg.horizon)?;
    let mut model = Model::<T>::new(mcfg, norm, tcfg.seed)?;
    let train_set = samples(&model, train_recs, props)?;
    let val_set = samples(&model, val_recs, props)?;
    let path = out.join(CHECKPOINT_FILE);
    let report = train(&mut model, &train_set, &val_set, tcfg, Some(&path))?;
    let precision = match tcfg.precision {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    };
    let ck = Checkpoint {
        cfg: model.cfg.clone(),
        norm: model.norm,
        params: model.params.clone(),
        meta: vec![
            ("epoch".into(), report.best_epoch.to_string()),
            ("seed".into(), tcfg.seed.to_string()),
            ("val".into(), num(report.best_val)),
            ("precision".into(), precision.into()),
            ("s_s".into(), factors.s_s.to_string()),
            ("s_t".into(), factors.s_t.to_string()),
            ("s_d".into(), num(factors.s_d)),
        ],
    };
    save_checkpoint(&path, &ck)?;
    Ok(report)
}

/// Trains on `data` and writes the checkpoint, loss history and resolved
/// configuration into `out`.
pub fn train_dataset(
    data: &Path,
    out: &Path,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    factors: Factors,
) -> CliResult<TrainOutcome> {
    factors.validate()?;
    let index = DatasetIndex::open(data)?;
    let (train_recs, val_recs) = load_training_data(&index, factors, tcfg.seed)?;
    log::info!(
        "training on {} records, validating on {} (s_s {}, s_t {}, s_d {})",
        train_recs.len(),
        val_recs.len(),
        factors.s_s,
        factors.s_t,
        factors.s_d
    );
    let props = index.config.props;
    let report = match tcfg.precision {
        Precision::F32 => fit::<f32>(mcfg, tcfg, factors, &train_recs, &val_recs, &props, out)?,
        Precision::F64 => fit::<f64>(mcfg, tcfg, factors, &train_recs, &val_recs, &props, out)?,
    };
    write_file(&out.join(HISTORY_FILE), history_csv(&report.history).as_bytes())?;
    write_pairs(&out.join("config.txt"), &all_pairs(mcfg, tcfg))?;
    Ok(TrainOutcome { report, checkpoint: out.join(CHECKPOINT_FILE), model: mcfg.clone(), train: tcfg.clone() })
}

pub fn run(args: &TrainArgs) -> CliResult<TrainOutcome> {
    let (mcfg, tcfg) = resolve(
        args.config.as_deref(),
        &args.set,
        &[("tau", args.tau.map(num)), ("lr", args.lr.map(num)), ("seed", args.seed.map(|s| s.to_string()))],
    )?;
    let factors = Factors { s_s: args.ss, s_t: args.st, s_d: args.sd };
    let outcome = train_dataset(&args.data, &args.out, &mcfg, &tcfg, factors)?;
    let argv = vec![
        "train".to_string(),
        "--data".into(),
        path_arg(&args.data),
        "--ss".into(),
        args.ss.to_string(),
        "--st".into(),
        args.st.to_string(),
        "--sd".into(),
        num(args.sd),
        "--out".into(),
        path_arg(&args.out),
    ];
    Manifest::new("train", argv, all_pairs(&mcfg, &tcfg), vec![tcfg.seed]).write(&args.out)?;
    Ok(outcome)
}
