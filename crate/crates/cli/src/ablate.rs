use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use moldflow::dataset::Split;
use moldflow::evaluation::{mean_r, metrics_csv, write_file, MetricReport};
use moldflow::model::ModelConfig;
use moldflow::training::TrainConfig;

use crate::common::{num, path_arg};
use crate::config::{all_pairs, resolve};
use crate::eval::evaluate_checkpoint;
use crate::manifest::Manifest;
use crate::train::{train_dataset, Factors};
use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Spatial,
    Temporal,
    Fraction,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Spatial => "spatial",
            Self::Temporal => "temporal",
            Self::Fraction => "fraction",
        }
    }

    /// The reduction for one factor value.
    pub fn factors(self, value: f64) -> CliResult<Factors> {
        let whole = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(CliError::Usage(format!("{} factor {value} must be a whole number >= 1", self.name())))
            }
        };
        let f = match self {
            Self::Spatial => Factors { s_s: whole()?, ..Factors::default() },
            Self::Temporal => Factors { s_t: whole()?, ..Factors::default() },
            Self::Fraction => Factors { s_d: value, ..Factors::default() },
        };
        f.validate()?;
        Ok(f)
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated factor values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub factors: Vec<f64>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct AblationPoint {
    pub factor: f64,
    pub seed: u64,
    pub reports: Vec<MetricReport>,
    /// Mean `r` over the test split.
    pub r: f64,
}

fn label(x: f64) -> String {
    format!("{x}")
}

/// Trains once per factor and seed, scores each model on the test split and
/// writes `metrics_<axis>_<factor>.csv` per factor plus `summary.csv`.
pub fn run_ablation(
    data: &Path,
    axis: Axis,
    factors: &[f64],
    seeds: &[u64],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    out: &Path,
) -> CliResult<Vec<AblationPoint>> {
    if factors.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("need at least one factor and one seed".into()));
    }
    let reductions: Vec<Factors> = factors.iter().map(|&f| axis.factors(f)).collect::<CliResult<_>>()?;
    let mut points = Vec::new();
    let mut summary = String::from("axis,factor,seed,r\n");
    for (&factor, &reduce) in factors.iter().zip(&reductions) {
        let mut rows = Vec::new();
        for &seed in seeds {
            let dir = out.join(format!("{}_{}", axis.name(), label(factor))).join(format!("seed{seed}"));
            let tc = TrainConfig { seed, ..tcfg.clone() };
            let trained = train_dataset(data, &dir, mcfg, &tc, reduce)?;
            let reports = evaluate_checkpoint(data, &trained.checkpoint, Split::Test)?;
            let r = mean_r(&reports);
            log::info!("{} {}: seed {seed} mean r {:.2}%", axis.name(), label(factor), 100.0 * r);
            let _ = writeln!(summary, "{},{},{seed},{r}", axis.name(), label(factor));
            for rep in &reports {
                let mut rep = rep.clone();
                if seeds.len() > 1 {
                    rep.id = format!("{}/seed{seed}", rep.id);
                }
                rows.push(rep);
            }
            points.push(AblationPoint { factor, seed, reports, r });
        }
        let name = format!("metrics_{}_{}.csv", axis.name(), label(factor));
        write_file(&out.join(name), metrics_csv(&rows).as_bytes())?;
    }
    write_file(&out.join("summary.csv"), summary.as_bytes())?;
    Ok(points)
}

pub fn run(args: &AblateArgs) -> CliResult<Vec<AblationPoint>> {
    let (mcfg, tcfg) = resolve(args.config.as_deref(), &args.set, &[])?;
    let points = run_ablation(&args.data, args.axis, &args.factors, &args.seeds, &mcfg, &tcfg, &args.out)?;
    let join = |v: Vec<String>| v.join(",");
    let argv = vec![
        "ablate".to_string(),
        "--data".into(),
        path_arg(&args.data),
        "--axis".into(),
        args.axis.name().into(),
        "--factors".into(),
        join(args.factors.iter().map(|&f| num(f)).collect()),
        "--seeds".into(),
        join(args.seeds.iter().map(|s| s.to_string()).collect()),
        "--out".into(),
        path_arg(&args.out),
    ];
    Manifest::new("ablate", argv, all_pairs(&mcfg, &tcfg), args.seeds.clone()).write(&args.out)?;
    Ok(points)
}
