use std::path::PathBuf;

use moldflow::dataset::DatasetIndex;
use moldflow::evaluation::{
    error_map, extract_interface, pgm_bytes, ppm_bytes, resample_uniform, velocity_error_map, write_file, Raster,
    FIELD_NAMES,
};
use moldflow::geometry::{build_cavity, Point};
use moldflow::model::FIELDS;
use moldflow::training::resample;

use crate::common::{load_model, path_arg};
use crate::manifest::Manifest;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, clap::Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub sim: String,
    /// Forecast steps to draw, `1..=H`; the first and last when omitted.
    #[arg(long, value_delimiter = ',')]
    pub steps: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn joint_range(a: &Raster, b: &Raster) -> (f64, f64) {
    match (a.range(), b.range()) {
        (Some(x), Some(y)) => (x.0.min(y.0), x.1.max(y.1)),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => (0.0, 1.0),
    }
}

/// Per step: truth and prediction of every field (PPM), absolute error maps
/// (PGM), the velocity error magnitude, both alpha = 0.5 contours as text and
/// the predicted alpha with the true contour drawn on top.
pub fn run(args: &PlotArgs) -> CliResult<()> {
    if args.resolution < 2 {
        return Err(CliError::Usage("--resolution must be at least 2".into()));
    }
    let index = DatasetIndex::open(&args.data)?;
    let loaded = load_model(&args.checkpoint)?;
    let h = loaded.model.horizon();
    let steps = if args.steps.is_empty() { vec![1, h] } else { args.steps.clone() };
    if let Some(&k) = steps.iter().find(|&&k| k == 0 || k > h) {
        return Err(CliError::Usage(format!("step {k} outside 1..={h}")));
    }
    let rec = resample(&index.load(&args.sim)?, 1, loaded.s_t, 0)?;
    let domain = build_cavity(rec.design())?;
    let (sample, pred) = loaded.model.predict(&rec, &index.config.props)?;
    let verts: Vec<Point> = sample.prep.input.vertices.clone();
    let n = verts.len();
    let field = |data: &[f64], k: usize, q: usize| -> Vec<f64> {
        (0..n).map(|i| data[((k - 1) * n + i) * FIELDS + q]).collect()
    };
    let res = args.resolution;
    for &k in &steps {
        let mut truth = Vec::with_capacity(FIELDS);
        let mut guess = Vec::with_capacity(FIELDS);
        for q in 0..FIELDS {
            let t = resample_uniform(&verts, &field(&sample.target, k, q), &domain, res)?;
            let p = resample_uniform(&verts, &field(&pred, k, q), &domain, res)?;
            let range = joint_range(&t, &p);
            let name = FIELD_NAMES[q];
            write_file(&args.out.join(format!("{name}_true_k{k}.ppm")), &ppm_bytes(&t, range, None))?;
            write_file(&args.out.join(format!("{name}_pred_k{k}.ppm")), &ppm_bytes(&p, range, None))?;
            let err = error_map(&p, &t)?;
            let top = err.range().map_or(1.0, |r| r.1);
            write_file(&args.out.join(format!("{name}_error_k{k}.pgm")), &pgm_bytes(&err, (0.0, top)))?;
            truth.push(t);
            guess.push(p);
        }
        let vel = velocity_error_map(&guess[0], &guess[1], &truth[0], &truth[1])?;
        let top = vel.range().map_or(1.0, |r| r.1);
        write_file(&args.out.join(format!("velocity_error_k{k}.pgm")), &pgm_bytes(&vel, (0.0, top)))?;
        let c_true = extract_interface(&truth[3], 0.5, k);
        let c_pred = extract_interface(&guess[3], 0.5, k);
        write_file(&args.out.join(format!("interface_true_k{k}.txt")), c_true.to_text().as_bytes())?;
        write_file(&args.out.join(format!("interface_pred_k{k}.txt")), c_pred.to_text().as_bytes())?;
        write_file(
            &args.out.join(format!("alpha_overlay_k{k}.ppm")),
            &ppm_bytes(&guess[3], (0.0, 1.0), Some(&c_true)),
        )?;
    }
    let list = steps.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",");
    let argv = vec![
        "plot".to_string(),
        "--data".into(),
        path_arg(&args.data),
        "--checkpoint".into(),
        path_arg(&args.checkpoint),
        "--sim".into(),
        args.sim.clone(),
        "--steps".into(),
        list,
        "--resolution".into(),
        res.to_string(),
        "--out".into(),
        path_arg(&args.out),
    ];
    Manifest::new("plot", argv, vec![], vec![]).write(&args.out)?;
    Ok(())
}
