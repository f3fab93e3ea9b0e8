use std::path::PathBuf;

use moldflow::dataset::{
    assign_splits_sized, enumerate_designs, generate, sample_designs, DatasetIndex, DesignSpace, GenerationConfig,
};

use crate::common::{num, path_arg};
use crate::config::thread_cap;
use crate::manifest::Manifest;
use crate::{CliError, CliResult};

/// Designs of the desk preset.
pub const DESK_COUNT: usize = 16;

#[derive(Debug, Clone, clap::Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub space: DesignSpace,
    /// Coarse grid, short horizon and a 16-design subset.
    #[arg(long)]
    pub desk: bool,
    /// Solver grid spacing (m).
    #[arg(long)]
    pub h: Option<f64>,
    /// Frame interval (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Simulated time (s).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Output mesh spacing (m).
    #[arg(long)]
    pub mesh_spacing: Option<f64>,
    /// Number of designs drawn from the space; all of them when omitted
    /// (16 with `--desk`).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validation records; about 10% when omitted.
    #[arg(long)]
    pub val_count: Option<usize>,
    /// Test records; about 10% when omitted.
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("--{name} must be positive, got {v}")))
    }
}

pub fn resolve(args: &GenerateArgs) -> CliResult<(GenerationConfig, Option<usize>)> {
    let mut cfg = if args.desk { GenerationConfig::desk() } else { GenerationConfig::full() };
    if let Some(h) = args.h {
        cfg.h = positive("h", h)?;
    }
    if let Some(dt) = args.dt {
        cfg.dt = positive("dt", dt)?;
    }
    if let Some(t) = args.horizon {
        cfg.horizon = positive("horizon", t)?;
    }
    if let Some(s) = args.mesh_spacing {
        cfg.mesh_spacing = positive("mesh-spacing", s)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let count = args.count.or(args.desk.then_some(DESK_COUNT));
    Ok((cfg, count))
}

pub fn run(args: &GenerateArgs) -> CliResult<DatasetIndex> {
    let (cfg, count) = resolve(args)?;
    let designs = match count {
        Some(0) => return Err(CliError::Usage("--count must be at least 1".into())),
        Some(n) => {
            let d = sample_designs(args.space, n, cfg.seed, cfg.h);
            if d.len() < n {
                log::warn!("only {} designs of {} are resolved by h = {}", d.len(), args.space, cfg.h);
            }
            d
        }
        None => enumerate_designs(args.space),
    };
    let held = args.val_count.unwrap_or(0) + args.test_count.unwrap_or(0);
    if held > designs.len() {
        return Err(CliError::Usage(format!("{held} held-out records requested from {} designs", designs.len())));
    }
    let workers = match thread_cap() {
        Some(cap) => args.workers.min(cap),
        None => args.workers,
    }
    .max(1);
    log::info!("simulating {} {} designs on {workers} workers", designs.len(), args.space);
    let mut index = generate(&designs, &args.out, workers, &cfg)?;
    if args.val_count.is_some() || args.test_count.is_some() {
        let default = (index.records.len() as f64 * 0.1).round() as usize;
        let splits = assign_splits_sized(
            index.records.len(),
            args.val_count.unwrap_or(default),
            args.test_count.unwrap_or(default),
            cfg.seed,
        );
        for (r, s) in index.records.iter_mut().zip(splits) {
            r.split = s;
        }
        index.save()?;
    }

    let mut argv = vec![
        "generate".to_string(),
        "--space".into(),
        args.space.to_string(),
        "--h".into(),
        num(cfg.h),
        "--dt".into(),
        num(cfg.dt),
        "--horizon".into(),
        num(cfg.horizon),
        "--mesh-spacing".into(),
        num(cfg.mesh_spacing),
        "--seed".into(),
        cfg.seed.to_string(),
    ];
    if args.desk {
        argv.push("--desk".into());
    }
    if let Some(n) = count {
        argv.extend(["--count".into(), n.to_string()]);
    }
    if let Some(n) = args.val_count {
        argv.extend(["--val-count".into(), n.to_string()]);
    }
    if let Some(n) = args.test_count {
        argv.extend(["--test-count".into(), n.to_string()]);
    }
    argv.extend(["--out".into(), path_arg(&args.out)]);
    let config = vec![
        ("space".into(), args.space.to_string()),
        ("h".into(), num(cfg.h)),
        ("dt".into(), num(cfg.dt)),
        ("horizon".into(), num(cfg.horizon)),
        ("mesh_spacing".into(), num(cfg.mesh_spacing)),
        ("designs".into(), designs.len().to_string()),
    ];
    Manifest::new("generate", argv, config, vec![cfg.seed]).write(&args.out)?;
    Ok(index)
}
