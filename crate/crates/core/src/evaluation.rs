//! Error metrics, raster resampling, interface contours and image output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use diffcore::Scalar;

use crate::dataset::SimulationRecord;
use crate::error::{Error, Result};
use crate::geometry::{point_in_domain, CavityDomain, Point};
use crate::model::{Model, SpatialHash, FIELDS};
use crate::solver::FluidProps;
use crate::training::{make_sample, StepLoss, DEGENERATE_BELOW};

pub const FIELD_NAMES: [&str; FIELDS] = ["u", "v", "p", "alpha"];

/// `|pred - target| / |target|`; a numerically zero target gives the RMS
/// error instead, flagged.
pub fn relative_l2(pred: &[f64], target: &[f64]) -> Result<StepLoss> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let err: f64 = pred.iter().zip(target).map(|(p, q)| (p - q) * (p - q)).sum();
    let den: f64 = target.iter().map(|q| q * q).sum();
    Ok(if den < DEGENERATE_BELOW {
        StepLoss { value: (err / pred.len() as f64).sqrt(), degenerate: true }
    } else {
        StepLoss { value: err.sqrt() / den.sqrt(), degenerate: false }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub id: String,
    pub model: String,
    /// `r_q^(k)` as fractions, `[H][4]`.
    pub per_step: Vec<[f64; FIELDS]>,
    /// Time average per field.
    pub r_q: [f64; FIELDS],
    /// Mean over the four fields.
    pub r: f64,
}

impl MetricReport {
    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }
}

fn mean_of_fields(r_q: &[f64; FIELDS]) -> f64 {
    r_q.iter().sum::<f64>() / FIELDS as f64
}

pub fn aggregate(per_step: Vec<[f64; FIELDS]>, id: &str, model: &str) -> MetricReport {
    let h = per_step.len().max(1) as f64;
    let mut r_q = [0.0; FIELDS];
    for (q, slot) in r_q.iter_mut().enumerate() {
        *slot = per_step.iter().map(|row| row[q]).sum::<f64>() / h;
    }
    MetricReport { id: id.to_string(), model: model.to_string(), r: mean_of_fields(&r_q), r_q, per_step }
}

/// Per-step, per-field relative errors of `[H, N, 4]` predictions.
pub fn evaluate_prediction(pred: &[f64], target: &[f64], h: usize, id: &str, model: &str) -> Result<MetricReport> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if h == 0 || pred.is_empty() || !pred.len().is_multiple_of(h * FIELDS) {
        return Err(Error::ShapeMismatch(format!("{} values do not split into {h} steps of 4 fields", pred.len())));
    }
    let n = pred.len() / (h * FIELDS);
    let mut per_step = Vec::with_capacity(h);
    for k in 0..h {
        let mut row = [0.0; FIELDS];
        for (q, slot) in row.iter_mut().enumerate() {
            let pick = |v: &[f64]| (0..n).map(|i| v[(k * n + i) * FIELDS + q]).collect::<Vec<f64>>();
            let r = relative_l2(&pick(pred), &pick(target))?;
            if r.degenerate {
                log::warn!("{id}: zero target for {} at step {}", FIELD_NAMES[q], k + 1);
            }
            *slot = r.value;
        }
        per_step.push(row);
    }
    Ok(aggregate(per_step, id, model))
}

/// Predicts every record at its own vertices and scores frames `1..=H`.
pub fn evaluate_records<T: Scalar>(
    model: &Model<T>,
    records: &[SimulationRecord],
    props: &FluidProps,
    model_id: &str,
) -> Result<Vec<MetricReport>> {
    records
        .iter()
        .map(|rec| {
            let sample = make_sample(model, rec, props)?;
            let pred = model.predict(&sample.prep)?.to_f64_vec();
            evaluate_prediction(&pred, &sample.target, model.cfg.horizon, &rec.id, model_id)
        })
        .collect()
}

/// Mean `r` over reports.
pub fn mean_r(reports: &[MetricReport]) -> f64 {
    reports.iter().map(|r| r.r).sum::<f64>() / reports.len().max(1) as f64
}

/// One row per simulation: id, r_u, r_v, r_p, r_alpha, r, then `r_<field>_<k>`
/// for every step.
pub fn metrics_csv(reports: &[MetricReport]) -> String {
    let h = reports.iter().map(MetricReport::horizon).max().unwrap_or(0);
    let mut out = String::from("id,r_u,r_v,r_p,r_alpha,r");
    for q in FIELD_NAMES {
        for k in 1..=h {
            let _ = write!(out, ",r_{q}_{k}");
        }
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{},{},{},{},{},{}", r.id, r.r_q[0], r.r_q[1], r.r_q[2], r.r_q[3], r.r);
        for q in 0..FIELDS {
            for k in 0..h {
                match r.per_step.get(k) {
                    Some(row) => {
                        let _ = write!(out, ",{}", row[q]);
                    }
                    None => out.push(','),
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Row-major `width x height` samples over the unit square, pixel `(i, j)`
/// (column i, row j) centred at `((i + 1/2) / width, (j + 1/2) / height)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// `true` inside the domain.
    pub mask: Vec<bool>,
}

impl Raster {
    pub fn center(&self, i: usize, j: usize) -> Point {
        [(i as f64 + 0.5) / self.width as f64, (j as f64 + 0.5) / self.height as f64]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn inside(&self, i: usize, j: usize) -> bool {
        self.mask[j * self.width + i]
    }

    /// Smallest and largest unmasked value.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.values.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(&v, _)| v).fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

/// Inverse-distance weighting over the `K` nearest samples.
pub struct Interpolator {
    hash: SpatialHash,
    values: Vec<f64>,
}

pub const IDW_NEIGHBORS: usize = 4;

impl Interpolator {
    pub fn new(points: &[Point], values: &[f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if points.len() != values.len() {
            return Err(Error::ShapeMismatch(format!("{} points, {} values", points.len(), values.len())));
        }
        // about K points per bucket
        let cell = (IDW_NEIGHBORS as f64 / points.len() as f64).sqrt().clamp(1e-4, 1.0);
        Ok(Self { hash: SpatialHash::new(points, cell), values: values.to_vec() })
    }

    pub fn at(&self, q: Point, scratch: &mut Vec<(f64, usize)>) -> f64 {
        self.hash.nearest_k(q, IDW_NEIGHBORS, scratch);
        if let Some(&(d, i)) = scratch.first() {
            if d == 0.0 {
                return self.values[i];
            }
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &(d2, i) in scratch.iter() {
            let w = 1.0 / d2.sqrt();
            num += w * self.values[i];
            den += w;
        }
        num / den
    }
}

/// Scattered values at normalized `vertices` onto a `resolution^2` raster;
/// pixels whose centre lies outside the domain are masked.
pub fn resample_uniform(
    vertices: &[Point],
    values: &[f64],
    domain: &CavityDomain,
    resolution: usize,
) -> Result<Raster> {
    if resolution == 0 {
        return Err(Error::EmptyInput);
    }
    let interp = Interpolator::new(vertices, values)?;
    let mut scratch = Vec::new();
    let mut out = Raster {
        width: resolution,
        height: resolution,
        values: vec![0.0; resolution * resolution],
        mask: vec![false; resolution * resolution],
    };
    for j in 0..resolution {
        for i in 0..resolution {
            let c = out.center(i, j);
            if point_in_domain(domain, domain.from_unit(c)) {
                out.mask[j * resolution + i] = true;
                out.values[j * resolution + i] = interp.at(c, &mut scratch);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceContour {
    /// Polylines in normalized coordinates; closed ones repeat their first point.
    pub polylines: Vec<Vec<Point>>,
    pub level: f64,
    pub frame: usize,
}

impl InterfaceContour {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    /// `x y` per line, polylines separated by blank lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("# level {} frame {}\n", self.level, self.frame);
        for line in &self.polylines {
            for p in line {
                let _ = writeln!(out, "{} {}", p[0], p[1]);
            }
            out.push('\n');
        }
        out
    }
}

// grid edges: (0, i, j) horizontal from node (i, j) to (i + 1, j);
// (1, i, j) vertical from (i, j) to (i, j + 1)
type EdgeKey = (u8, usize, usize);

/// Corners of cell `(i, j)` counter-clockwise, with the edge leading to the next.
fn cell_corners(i: usize, j: usize) -> [((usize, usize), EdgeKey); 4] {
    [((i, j), (0, i, j)), ((i + 1, j), (1, i + 1, j)), ((i + 1, j + 1), (0, i, j + 1)), ((i, j + 1), (1, i, j))]
}

fn cell_inside(r: &Raster, i: usize, j: usize) -> bool {
    r.inside(i, j) && r.inside(i + 1, j) && r.inside(i, j + 1) && r.inside(i + 1, j + 1)
}

fn crossing(r: &Raster, a: (usize, usize), b: (usize, usize), level: f64) -> Point {
    let (va, vb) = (r.at(a.0, a.1), r.at(b.0, b.1));
    let t = ((level - va) / (vb - va)).clamp(0.0, 1.0);
    let (pa, pb) = (r.center(a.0, a.1), r.center(b.0, b.1));
    [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
}

/// Marching squares over cells whose four corner pixels are unmasked, with
/// linear interpolation along cell edges. Segments are joined into
/// polylines at shared edge crossings.
pub fn extract_interface(r: &Raster, level: f64, frame: usize) -> InterfaceContour {
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    let mut points: HashMap<EdgeKey, Point> = HashMap::new();
    for j in 0..r.height.saturating_sub(1) {
        for i in 0..r.width.saturating_sub(1) {
            if !cell_inside(r, i, j) {
                continue;
            }
            let corners = cell_corners(i, j);
            let above: Vec<bool> = corners.iter().map(|&((x, y), _)| r.at(x, y) >= level).collect();
            let mut cuts = Vec::new();
            for k in 0..4 {
                if above[k] != above[(k + 1) % 4] {
                    let edge = corners[k].1;
                    points.entry(edge).or_insert_with(|| crossing(r, corners[k].0, corners[(k + 1) % 4].0, level));
                    cuts.push((k, edge));
                }
            }
            match cuts.len() {
                2 => segments.push((cuts[0].1, cuts[1].1)),
                4 => {
                    // saddle: the centre value decides which corners connect
                    let centre = corners.iter().map(|&((x, y), _)| r.at(x, y)).sum::<f64>() / 4.0;
                    let joined = (centre >= level) == above[0];
                    if joined {
                        segments.push((cuts[0].1, cuts[1].1));
                        segments.push((cuts[2].1, cuts[3].1));
                    } else {
                        segments.push((cuts[3].1, cuts[0].1));
                        segments.push((cuts[1].1, cuts[2].1));
                    }
                }
                _ => {}
            }
        }
    }
    InterfaceContour { polylines: chain(&segments, &points), level, frame }
}

fn chain(segments: &[(EdgeKey, EdgeKey)], points: &HashMap<EdgeKey, Point>) -> Vec<Vec<Point>> {
    let mut adj: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, &(a, b)) in segments.iter().enumerate() {
        adj.entry(a).or_default().push(s);
        adj.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let walk = |start: EdgeKey, first: usize, used: &mut Vec<bool>| -> Vec<EdgeKey> {
        let mut keys = vec![start];
        let mut at = start;
        let mut seg = Some(first);
        while let Some(s) = seg {
            used[s] = true;
            let (a, b) = segments[s];
            let next = if a == at { b } else { a };
            keys.push(next);
            at = next;
            seg = adj[&at].iter().copied().find(|&t| !used[t]);
        }
        keys
    };
    // open chains start at an end used once, then the remaining loops
    let mut starts: Vec<EdgeKey> = adj.iter().filter(|(_, v)| v.len() == 1).map(|(&k, _)| k).collect();
    starts.sort_unstable();
    for key in starts {
        if let Some(&s) = adj[&key].iter().find(|&&s| !used[s]) {
            let keys = walk(key, s, &mut used);
            out.push(keys.iter().map(|k| points[k]).collect());
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let keys = walk(segments[s].0, s, &mut used);
            out.push(keys.iter().map(|k| points[k]).collect());
        }
    }
    out
}

/// Area, in normalized units, of `{value >= level}` over unmasked cells,
/// using the same edge interpolation as the contour.
pub fn level_area(r: &Raster, level: f64) -> f64 {
    let mut area = 0.0;
    for j in 0..r.height.saturating_sub(1) {
        for i in 0..r.width.saturating_sub(1) {
            if !cell_inside(r, i, j) {
                continue;
            }
            let corners = cell_corners(i, j);
            let mut poly: Vec<Point> = Vec::with_capacity(8);
            for k in 0..4 {
                let (a, b) = (corners[k].0, corners[(k + 1) % 4].0);
                let (ia, ib) = (r.at(a.0, a.1) >= level, r.at(b.0, b.1) >= level);
                if ia {
                    poly.push(r.center(a.0, a.1));
                }
                if ia != ib {
                    poly.push(crossing(r, a, b, level));
                }
            }
            area += shoelace(&poly);
        }
    }
    area
}

fn shoelace(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

fn same_grid(a: &Raster, b: &Raster) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!("rasters {}x{} and {}x{}", a.width, a.height, b.width, b.height)));
    }
    Ok(())
}

/// `|pred - target|` per pixel; masked wherever either input is masked.
pub fn error_map(pred: &Raster, target: &Raster) -> Result<Raster> {
    same_grid(pred, target)?;
    let mask: Vec<bool> = pred.mask.iter().zip(&target.mask).map(|(a, b)| *a && *b).collect();
    let values = pred
        .values
        .iter()
        .zip(&target.values)
        .zip(&mask)
        .map(|((p, t), &m)| if m { (p - t).abs() } else { 0.0 })
        .collect();
    Ok(Raster { width: pred.width, height: pred.height, values, mask })
}

/// `sqrt(du^2 + dv^2)` per pixel.
pub fn velocity_error_map(pu: &Raster, pv: &Raster, tu: &Raster, tv: &Raster) -> Result<Raster> {
    for r in [pv, tu, tv] {
        same_grid(pu, r)?;
    }
    let n = pu.values.len();
    let mask: Vec<bool> = (0..n).map(|k| pu.mask[k] && pv.mask[k] && tu.mask[k] && tv.mask[k]).collect();
    let values = (0..n)
        .map(|k| if mask[k] { (pu.values[k] - tu.values[k]).hypot(pv.values[k] - tv.values[k]) } else { 0.0 })
        .collect();
    Ok(Raster { width: pu.width, height: pu.height, values, mask })
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

/// Binary PGM, top row = largest y; masked pixels black.
pub fn pgm_bytes(r: &Raster, range: (f64, f64)) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", r.width, r.height).into_bytes();
    for j in (0..r.height).rev() {
        for i in 0..r.width {
            out.push(if r.inside(i, j) { (1.0 + 254.0 * unit(r.at(i, j), range.0, range.1)).round() as u8 } else { 0 });
        }
    }
    out
}

/// Blue-white-red diverging colormap.
fn color(t: f64) -> [u8; 3] {
    let c = |x: f64| (255.0 * x.clamp(0.0, 1.0)).round() as u8;
    if t < 0.5 {
        let s = t / 0.5;
        [c(s), c(s), 255]
    } else {
        let s = (1.0 - t) / 0.5;
        [255, c(s), c(s)]
    }
}

/// Binary PPM with an optional contour overlay drawn in black; masked
/// pixels grey.
pub fn ppm_bytes(r: &Raster, range: (f64, f64), overlay: Option<&InterfaceContour>) -> Vec<u8> {
    let mut rgb: Vec<[u8; 3]> = (0..r.width * r.height)
        .map(|k| if r.mask[k] { color(unit(r.values[k], range.0, range.1)) } else { [128, 128, 128] })
        .collect();
    if let Some(contour) = overlay {
        for line in &contour.polylines {
            for w in line.windows(2) {
                let steps = 2 * r.width.max(r.height);
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let x = w[0][0] + t * (w[1][0] - w[0][0]);
                    let y = w[0][1] + t * (w[1][1] - w[0][1]);
                    let i = ((x * r.width as f64).floor() as usize).min(r.width - 1);
                    let j = ((y * r.height as f64).floor() as usize).min(r.height - 1);
                    rgb[j * r.width + i] = [0, 0, 0];
                }
            }
        }
    }
    let mut out = format!("P6\n{} {}\n255\n", r.width, r.height).into_bytes();
    for j in (0..r.height).rev() {
        for i in 0..r.width {
            out.extend_from_slice(&rgb[j * r.width + i]);
        }
    }
    out
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
