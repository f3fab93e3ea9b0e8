use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use moldflow::dataset::{DatasetIndex, Split};
use moldflow::evaluation::{mean_r, metrics_csv, write_file, MetricReport, FIELD_NAMES};

use crate::common::{load_model, load_split, path_arg};
use crate::manifest::Manifest;
use crate::CliResult;

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

/// Scores a checkpoint on every record of a split, at the temporal stride it
/// was trained with.
pub fn evaluate_checkpoint(data: &Path, checkpoint: &Path, split: Split) -> CliResult<Vec<MetricReport>> {
    let index = DatasetIndex::open(data)?;
    let loaded = load_model(checkpoint)?;
    let records = load_split(&index, split, loaded.s_t)?;
    let id = checkpoint.display().to_string();
    loaded.model.evaluate(&records, &index.config.props, &id)
}

/// Percentages for humans.
pub fn summary(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = write!(out, "{}", r.id);
        for (q, name) in FIELD_NAMES.iter().enumerate() {
            let _ = write!(out, "  r_{name} {:.2}%", 100.0 * r.r_q[q]);
        }
        let _ = writeln!(out, "  r {:.2}%", 100.0 * r.r);
    }
    let _ = writeln!(out, "mean r over {} simulations: {:.2}%", reports.len(), 100.0 * mean_r(reports));
    out
}

pub fn run(args: &EvalArgs) -> CliResult<Vec<MetricReport>> {
    let reports = evaluate_checkpoint(&args.data, &args.checkpoint, args.split)?;
    write_file(&args.out.join(METRICS_FILE), metrics_csv(&reports).as_bytes())?;
    let text = summary(&reports);
    write_file(&args.out.join("summary.txt"), text.as_bytes())?;
    print!("{text}");
    let split = match args.split {
        Split::Train => "train",
        Split::Validation => "val",
        Split::Test => "test",
    };
    let argv = vec![
        "eval".to_string(),
        "--data".into(),
        path_arg(&args.data),
        "--checkpoint".into(),
        path_arg(&args.checkpoint),
        "--split".into(),
        split.into(),
        "--out".into(),
        path_arg(&args.out),
    ];
    Manifest::new("eval", argv, vec![("split".into(), split.into())], vec![]).write(&args.out)?;
    Ok(reports)
}
