//! Design-space sweeps, trajectory generation and on-disk records.
//!
//! A dataset directory holds one `.mfd` file per simulation, an
//! `index.json` describing records and splits, and `skipped.log` listing
//! designs that failed.
//!
//! Record layout (little endian):
//!
//! ```text
//! "MFD1" | version u16 | N u32 | frames u32 | dt f64 | horizon f64
//! | design 8 x f64 | coords N x 2 x f64
//! | per frame: u, v, p, alpha, each N x f32
//! | crc32 u32 of every preceding byte
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_cavity, generate_mesh, DesignParams, Mesh};
use crate::solver::{simulate_with, FluidProps, Frame, Grid, PhaseFieldParams, SolverOptions, Trajectory};

const MAGIC: &[u8; 4] = b"MFD1";
const FORMAT_VERSION: u16 = 1;
pub const SOLVER_VERSION: &str = "moldflow-chns 1";
pub const INDEX_FILE: &str = "index.json";
pub const SKIP_LOG: &str = "skipped.log";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignSpace {
    Ds1,
    Ds2,
}

impl FromStr for DesignSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ds1" => Ok(Self::Ds1),
            "ds2" => Ok(Self::Ds2),
            _ => Err(Error::Config(format!("unknown design space {s:?} (expected ds1 or ds2)"))),
        }
    }
}

impl fmt::Display for DesignSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ds1 => "ds1",
            Self::Ds2 => "ds2",
        })
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// A range sampled at `steps` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Sweep {
    pub fn fixed(value: f64) -> Self {
        Self { lo: value, hi: value, steps: 1 }
    }

    pub fn values(&self) -> Vec<f64> {
        linspace(self.lo, self.hi, self.steps)
    }
}

/// Ranges of the swept design parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRanges {
    pub a: Sweep,
    pub b: Sweep,
    pub c: Sweep,
    pub v: Sweep,
}

impl DesignRanges {
    pub fn of(space: DesignSpace) -> Self {
        let b = match space {
            DesignSpace::Ds1 => Sweep::fixed(50.0),
            DesignSpace::Ds2 => Sweep { lo: 10.0, hi: 90.0, steps: 10 },
        };
        Self {
            a: Sweep { lo: 10.0, hi: 25.0, steps: 10 },
            b,
            c: Sweep { lo: 10.0, hi: 90.0, steps: 10 },
            v: Sweep { lo: 0.1, hi: 0.9, steps: 10 },
        }
    }

    /// Parses `key = lo, hi, steps` lines (keys A, B, C, V; `#` comments).
    /// Keys not mentioned keep the values of `base`.
    pub fn parse(text: &str, base: Self) -> Result<Self> {
        let mut out = base;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("design space line {}: {line:?}", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let parts: Vec<&str> = value.split(',').map(str::trim).collect();
            let sweep = match parts.as_slice() {
                [x] => Sweep::fixed(x.parse().map_err(|_| bad())?),
                [lo, hi, steps] => Sweep {
                    lo: lo.parse().map_err(|_| bad())?,
                    hi: hi.parse().map_err(|_| bad())?,
                    steps: steps.parse().map_err(|_| bad())?,
                },
                _ => return Err(bad()),
            };
            match key.trim().to_ascii_uppercase().as_str() {
                "A" => out.a = sweep,
                "B" => out.b = sweep,
                "C" => out.c = sweep,
                "V" => out.v = sweep,
                _ => return Err(bad()),
            }
        }
        Ok(out)
    }

    /// Cartesian product, A outermost and V innermost.
    pub fn designs(&self) -> Vec<DesignParams> {
        let mut out = Vec::new();
        for a in self.a.values() {
            for b in self.b.values() {
                for c in self.c.values() {
                    for v in self.v.values() {
                        out.push(DesignParams::new(a, b, c, v));
                    }
                }
            }
        }
        out
    }
}

pub fn enumerate_designs(which: DesignSpace) -> Vec<DesignParams> {
    DesignRanges::of(which).designs()
}

/// Resolution and horizon of a generation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// solver grid spacing (m)
    pub h: f64,
    /// frame interval (s)
    pub dt: f64,
    pub horizon: f64,
    /// target vertex spacing of the output meshes (m)
    pub mesh_spacing: f64,
    pub seed: u64,
    pub props: FluidProps,
}

impl GenerationConfig {
    /// Small, CPU-friendly setting: 64 cells across the cavity, 0.5 s.
    pub fn desk() -> Self {
        Self { h: 0.1 / 64.0, dt: 0.01, horizon: 0.5, mesh_spacing: 0.004, seed: 0, props: FluidProps::default() }
    }

    /// Full horizon with meshes of about two thousand vertices.
    pub fn full() -> Self {
        Self { h: 0.1 / 128.0, dt: 0.01, horizon: 5.0, mesh_spacing: 0.0016, ..Self::desk() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub design: DesignParams,
    pub frames: usize,
    pub vertices: usize,
    pub split: Split,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    #[serde(skip)]
    pub root: PathBuf,
    pub solver_version: String,
    pub config: GenerationConfig,
    pub records: Vec<IndexEntry>,
}

/// Provenance of one stored simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordMeta {
    pub seed: u64,
    pub solver_version: String,
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationRecord {
    pub id: String,
    pub trajectory: Trajectory,
    pub meta: RecordMeta,
}

impl SimulationRecord {
    pub fn design(&self) -> &DesignParams {
        &self.trajectory.design
    }

    pub fn mesh(&self) -> &Mesh {
        &self.trajectory.mesh
    }

    pub fn frames(&self) -> &[Frame] {
        &self.trajectory.frames
    }
}

fn record_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("{id}.mfd"))
}

/// Serializes a trajectory; returns the bytes and their checksum.
pub fn encode_record(t: &Trajectory) -> (Vec<u8>, u32) {
    let n = t.mesh.len();
    let mut buf = Vec::with_capacity(48 + 64 + n * 16 + t.frames.len() * n * 16 + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(t.frames.len() as u32).to_le_bytes());
    buf.extend_from_slice(&t.dt.to_le_bytes());
    buf.extend_from_slice(&t.horizon.to_le_bytes());
    for v in t.design.to_array() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for p in &t.mesh.vertices {
        buf.extend_from_slice(&p[0].to_le_bytes());
        buf.extend_from_slice(&p[1].to_le_bytes());
    }
    for f in &t.frames {
        for k in 0..4 {
            for v in f.field(k) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    (buf, crc)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const K: usize>(&mut self) -> [u8; K] {
        let out = self.bytes[self.at..self.at + K].try_into().expect("length checked");
        self.at += K;
        out
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }

    fn f32s(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| f32::from_le_bytes(self.take())).collect()
    }
}

/// Parses a record written by [`encode_record`]. The mesh's boundary data is
/// rebuilt from the design with the given spacing.
pub fn decode_record(bytes: &[u8], mesh_spacing: f64, name: &str) -> Result<Trajectory> {
    let corrupt = || Error::ChecksumMismatch(name.to_string());
    if bytes.len() < 4 + 2 + 8 + 16 + 64 + 4 || &bytes[..4] != MAGIC {
        return Err(corrupt());
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..body]) != stored {
        return Err(corrupt());
    }
    let mut r = Reader { bytes: &bytes[..body], at: 4 };
    let version = u16::from_le_bytes(r.take());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("{name}: unsupported record version {version}")));
    }
    let n = r.u32() as usize;
    let frames = r.u32() as usize;
    let expected = 4 + 2 + 8 + 16 + 64 + n * 16 + frames * n * 16;
    if expected != body {
        return Err(Error::Format(format!("{name}: {body} payload bytes, header implies {expected}")));
    }
    let dt = r.f64();
    let horizon = r.f64();
    let mut design = [0.0; 8];
    design.iter_mut().for_each(|d| *d = r.f64());
    let design = DesignParams::from_array(design);
    let vertices = (0..n).map(|_| [r.f64(), r.f64()]).collect();
    let frames = (0..frames).map(|_| Frame { u: r.f32s(n), v: r.f32s(n), p: r.f32s(n), alpha: r.f32s(n) }).collect();
    let domain = build_cavity(&design)?;
    Ok(Trajectory { design, mesh: Mesh::from_vertices(&domain, vertices, mesh_spacing), dt, horizon, frames })
}

/// Writes one record file; returns its checksum.
pub fn save_record(root: &Path, id: &str, t: &Trajectory) -> Result<u32> {
    let (bytes, crc) = encode_record(t);
    let path = record_path(root, id);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(crc)
}

/// Seeded 80/10/10 assignment: validation and test each get
/// `max(1, round(M/10))` records once there are at least three.
pub fn assign_splits(count: usize, seed: u64) -> Vec<Split> {
    let held = if count >= 3 { ((count as f64 * 0.1).round() as usize).max(1) } else { 0 };
    assign_splits_sized(count, held, held, seed)
}

/// Seeded assignment with explicit validation and test sizes; the rest train.
pub fn assign_splits_sized(count: usize, val: usize, test: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; count];
    for (rank, &i) in order.iter().enumerate() {
        if rank < val {
            splits[i] = Split::Validation;
        } else if rank < val + test {
            splits[i] = Split::Test;
        }
    }
    splits
}

/// Simulates and stores every design, in parallel over `workers` threads.
/// Record `k` gets id `sim{k:05}` and mesh seed `seed + k`; results do not
/// depend on the worker count.
pub fn generate(designs: &[DesignParams], out: &Path, workers: usize, cfg: &GenerationConfig) -> Result<DatasetIndex> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<IndexEntry>>>> = Mutex::new((0..designs.len()).map(|_| None).collect());
    let workers = workers.clamp(1, designs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= designs.len() {
                    break;
                }
                let r = generate_one(&designs[k], k, out, cfg);
                results.lock().expect("no worker panicked")[k] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("no worker panicked");
    let mut records = Vec::new();
    let mut skipped = String::new();
    for (k, r) in results.into_iter().enumerate() {
        match r.expect("every design visited") {
            Ok(entry) => records.push(entry),
            Err(e @ Error::Io { .. }) => return Err(e),
            Err(e) => skipped.push_str(&format!("sim{k:05} {:?}: {e}\n", designs[k].to_array())),
        }
    }
    let skip_path = out.join(SKIP_LOG);
    fs::write(&skip_path, skipped).map_err(|e| Error::io(skip_path, e))?;
    if records.is_empty() {
        return Err(Error::AllDesignsFailed);
    }
    let splits = assign_splits(records.len(), cfg.seed);
    for (entry, split) in records.iter_mut().zip(splits) {
        entry.split = split;
    }
    let index = DatasetIndex {
        root: out.to_path_buf(),
        solver_version: SOLVER_VERSION.to_string(),
        config: cfg.clone(),
        records,
    };
    index.save()?;
    Ok(index)
}

fn generate_one(design: &DesignParams, k: usize, out: &Path, cfg: &GenerationConfig) -> Result<IndexEntry> {
    let id = format!("sim{k:05}");
    let domain = build_cavity(design)?;
    let mesh = generate_mesh(&domain, cfg.mesh_spacing, cfg.seed.wrapping_add(k as u64))?;
    let pf = PhaseFieldParams::for_grid(cfg.h, &cfg.props);
    let traj = simulate_with(design, &mesh, cfg.horizon, cfg.dt, &cfg.props, &pf, cfg.h, &SolverOptions::default())?;
    let crc = save_record(out, &id, &traj)?;
    Ok(IndexEntry {
        id,
        design: *design,
        frames: traj.frames.len(),
        vertices: mesh.len(),
        split: Split::Train,
        crc32: crc,
    })
}

/// `count` valid designs of `space` drawn without replacement by a seeded
/// shuffle, restricted to geometries the grid of spacing `h` resolves.
pub fn sample_designs(space: DesignSpace, count: usize, seed: u64, h: f64) -> Vec<DesignParams> {
    let mut all = enumerate_designs(space);
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all.into_iter()
        .filter(|d| build_cavity(d).and_then(|dom| Grid::from_domain(&dom, h, false)).is_ok())
        .take(count)
        .collect()
}

/// The desk preset draws from DS2.
pub fn desk_designs(count: usize, seed: u64, h: f64) -> Vec<DesignParams> {
    sample_designs(DesignSpace::Ds2, count, seed, h)
}

impl DatasetIndex {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingRecord(format!("no dataset index at {}", path.display())),
            _ => Error::io(&path, e),
        })?;
        let mut index: Self =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        index.root = root.to_path_buf();
        Ok(index)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(self).expect("index serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn entry(&self, id: &str) -> Result<&IndexEntry> {
        self.records.iter().find(|r| r.id == id).ok_or_else(|| Error::MissingRecord(id.to_string()))
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.id.clone()).collect()
    }

    /// Reads and verifies one record.
    pub fn load(&self, id: &str) -> Result<SimulationRecord> {
        let entry = self.entry(id)?;
        let path = record_path(&self.root, id);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingRecord(format!("{id} ({})", path.display())),
            _ => Error::io(&path, e),
        })?;
        let name = path.display().to_string();
        if bytes.len() < 4 || u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes")) != entry.crc32 {
            return Err(Error::ChecksumMismatch(name));
        }
        let trajectory = decode_record(&bytes, self.config.mesh_spacing, &name)?;
        Ok(SimulationRecord {
            id: id.to_string(),
            meta: RecordMeta {
                seed: self.config.seed,
                solver_version: self.solver_version.clone(),
                h: self.config.h,
                dt: trajectory.dt,
                horizon: trajectory.horizon,
            },
            trajectory,
        })
    }
}

/// Free function form of [`DatasetIndex::load`].
pub fn load(index: &DatasetIndex, id: &str) -> Result<SimulationRecord> {
    index.load(id)
}

/// Keeps `ceil(N / s_s)` vertices chosen uniformly without replacement,
/// in ascending original order, for every frame.
pub fn subsample_spatial(rec: &SimulationRecord, s_s: usize, seed: u64) -> Result<SimulationRecord> {
    let n = rec.mesh().len();
    if s_s <= 1 {
        return Ok(rec.clone());
    }
    let keep_n = n.div_ceil(s_s);
    if keep_n < 8 {
        return Err(Error::FactorTooLarge { factor: s_s, remaining: keep_n, what: "vertices" });
    }
    let mut keep = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, keep_n).into_vec();
    keep.sort_unstable();
    let pick = |v: &[f32]| keep.iter().map(|&i| v[i]).collect::<Vec<f32>>();
    let mut out = rec.clone();
    out.trajectory.mesh = rec.mesh().select(&keep);
    out.trajectory.frames = rec
        .frames()
        .iter()
        .map(|f| Frame { u: pick(&f.u), v: pick(&f.v), p: pick(&f.p), alpha: pick(&f.alpha) })
        .collect();
    Ok(out)
}

/// Keeps frames `0, s_t, 2 s_t, ...`; the step becomes `s_t dt`.
pub fn subsample_temporal(rec: &SimulationRecord, s_t: usize) -> Result<SimulationRecord> {
    if s_t <= 1 {
        return Ok(rec.clone());
    }
    let count = (rec.frames().len().max(1) - 1) / s_t + 1;
    if count < 2 {
        return Err(Error::FactorTooLarge { factor: s_t, remaining: count, what: "frames" });
    }
    let mut out = rec.clone();
    out.trajectory.frames = rec.frames().iter().step_by(s_t).cloned().collect();
    out.trajectory.dt = rec.trajectory.dt * s_t as f64;
    out.meta.dt = out.trajectory.dt;
    Ok(out)
}

/// Reduces the training split to `floor(s_d M)` records chosen by a seeded
/// shuffle; validation and test are untouched.
pub fn select_fraction(index: &DatasetIndex, s_d: f64, seed: u64) -> Result<DatasetIndex> {
    if !(s_d > 0.0 && s_d <= 1.0) {
        return Err(Error::Config(format!("data fraction {s_d} outside (0, 1]")));
    }
    if s_d == 1.0 {
        return Ok(index.clone());
    }
    let mut train: Vec<usize> = (0..index.records.len()).filter(|&i| index.records[i].split == Split::Train).collect();
    let keep = (s_d * train.len() as f64 + 1e-9).floor() as usize;
    if keep == 0 {
        return Err(Error::EmptySelection(s_d));
    }
    train.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut drop = train[keep..].to_vec();
    drop.sort_unstable();
    let mut out = index.clone();
    for i in drop.into_iter().rev() {
        out.records.remove(i);
    }
    Ok(out)
}
