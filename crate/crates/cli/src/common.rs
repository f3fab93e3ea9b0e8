//! Helpers shared by the subcommands.

use std::path::{Path, PathBuf};

use moldflow::dataset::{DatasetIndex, SimulationRecord, Split};
use moldflow::evaluation::{evaluate_records, MetricReport};
use moldflow::model::{load_checkpoint, Checkpoint, Model};
use moldflow::solver::FluidProps;
use moldflow::training::{make_sample, resample, Sample};
use moldflow::Error;

use crate::CliResult;

/// Absolute form of a path without touching the filesystem.
pub fn abs(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn path_arg(path: &Path) -> String {
    abs(path).display().to_string()
}

/// Round-trip formatting for floats in manifests.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn meta<'a>(ck: &'a [(String, String)], key: &str) -> Option<&'a str> {
    ck.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

/// A checkpoint in the precision it was trained in.
pub enum LoadedModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

pub struct Loaded {
    pub model: LoadedModel,
    pub meta: Vec<(String, String)>,
    /// Temporal stride the model was trained with.
    pub s_t: usize,
}

pub fn load_model(path: &Path) -> CliResult<Loaded> {
    let ck: Checkpoint<f64> = load_checkpoint(path)?;
    let s_t = match meta(&ck.meta, "s_t") {
        Some(v) => v.parse().map_err(|_| Error::Format(format!("{}: bad s_t entry {v:?}", path.display())))?,
        None => 1,
    };
    let model = Model::from_parts(ck.cfg, ck.norm, ck.params)?;
    let model = match meta(&ck.meta, "precision") {
        Some("f64") => LoadedModel::F64(model),
        _ => LoadedModel::F32(model.cast()),
    };
    Ok(Loaded { model, meta: ck.meta, s_t })
}

impl LoadedModel {
    pub fn horizon(&self) -> usize {
        match self {
            Self::F32(m) => m.cfg.horizon,
            Self::F64(m) => m.cfg.horizon,
        }
    }

    pub fn evaluate(&self, records: &[SimulationRecord], props: &FluidProps, id: &str) -> CliResult<Vec<MetricReport>> {
        Ok(match self {
            Self::F32(m) => evaluate_records(m, records, props, id)?,
            Self::F64(m) => evaluate_records(m, records, props, id)?,
        })
    }

    /// The rollout window of one record and the `[H, N, 4]` prediction at
    /// its vertices.
    pub fn predict(&self, rec: &SimulationRecord, props: &FluidProps) -> CliResult<(Sample, Vec<f64>)> {
        Ok(match self {
            Self::F32(m) => {
                let s = make_sample(m, rec, props)?;
                let p = m.predict(&s.prep)?.to_f64_vec();
                (s, p)
            }
            Self::F64(m) => {
                let s = make_sample(m, rec, props)?;
                let p = m.predict(&s.prep)?.to_f64_vec();
                (s, p)
            }
        })
    }
}

/// Loads every record of a split at temporal stride `s_t`.
pub fn load_split(index: &DatasetIndex, split: Split, s_t: usize) -> CliResult<Vec<SimulationRecord>> {
    let ids = index.ids(split);
    if ids.is_empty() {
        return Err(Error::MissingRecord(format!("no {split:?} records in {}", index.root.display())).into());
    }
    ids.iter().map(|id| Ok(resample(&index.load(id)?, 1, s_t, 0)?)).collect()
}
