//! Fourier-graph neural operator.
//!
//! A graph-kernel encoder lifts per-vertex features onto an `S x S` latent
//! grid, which is broadcast over `T_lat` latent time slices with a time
//! channel appended. Fourier layers with inlet-conditioned instance
//! normalization act on the 3D latent block, and a graph-kernel decoder reads
//! one latent slice per forecast step at arbitrary query points.

mod checkpoint;
mod graph;

use std::collections::HashMap;
use std::sync::Arc;

use diffcore::{Activation, ModeSet, Scalar, Segments, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{build_cavity, CavityDomain, DesignParams, Point, RE_LIMIT};
use crate::solver::{FluidProps, Frame, Trajectory};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
};
pub use graph::{radius_graph, radius_graph_or_nearest, within, SpatialHash};

/// Per-vertex input features: z-scored u, v, p, alpha, inlet mask, signed distance.
pub const FEATURES: usize = 6;

/// Output fields in order u, v, p, alpha.
pub const FIELDS: usize = 4;

/// Signed distances are fed in units of this length (m).
const SD_SCALE: f64 = 0.01;

const NORM_EPS: f64 = 1e-5;

/// The inlet setup the spectral core is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InletSetup {
    /// Effective inlet speed (m/s).
    pub v: f64,
    /// Inlet size (mm).
    pub a: f64,
    /// Inlet horizontal position (mm).
    pub b: f64,
    /// Inlet angle (deg).
    pub c: f64,
}

impl InletSetup {
    pub fn from_design(p: &DesignParams, props: &FluidProps) -> Self {
        Self { v: crate::geometry::inlet_velocity(p, props), a: p.a, b: p.b, c: p.c }
    }

    /// Affine map of the design ranges onto `[-1, 1]^4`. The speed is taken
    /// relative to the Reynolds-capped speed of water at this inlet size.
    pub fn standardized(&self) -> [f64; 4] {
        let props = FluidProps::default();
        let cap = RE_LIMIT * props.mu1 / (props.rho1 * self.a * 1e-3);
        let unit = |x: f64, lo: f64, hi: f64| 2.0 * (x - lo) / (hi - lo) - 1.0;
        [unit(self.v / cap, 0.0, 1.0), unit(self.a, 10.0, 25.0), unit(self.b, 10.0, 90.0), unit(self.c, 10.0, 90.0)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Latent grid resolution S (S x S spatial nodes).
    pub latent: usize,
    /// Latent time slices.
    pub t_lat: usize,
    pub channels: usize,
    pub layers: usize,
    /// Retained modes per latent axis (x, y, t).
    pub modes: [usize; 3],
    /// Graph radius in normalized `[0, 1]^2` units.
    pub radius: f64,
    /// Forecast steps H.
    pub horizon: usize,
    /// Width of the kernel and conditioning networks.
    pub kernel_width: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Gelu => "gelu",
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
        Activation::Identity => "identity",
    }
}

fn parse_activation(s: &str) -> Result<Activation> {
    Ok(match s {
        "gelu" => Activation::Gelu,
        "tanh" => Activation::Tanh,
        "sigmoid" => Activation::Sigmoid,
        "identity" => Activation::Identity,
        other => return Err(Error::Config(format!("unknown activation {other:?}"))),
    })
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            latent: 32,
            t_lat: 10,
            channels: 32,
            layers: 3,
            modes: [12, 12, 12],
            radius: 0.15,
            horizon: 10,
            kernel_width: 64,
            activation: Activation::Gelu,
        }
    }

    /// The large configuration. 48 modes do not fit an 80-node axis under the
    /// `n / 2 + 1` rule, so the spatial modes are capped at 41.
    pub fn paper() -> Self {
        Self { latent: 80, modes: [41, 41, 48], ..Self::desk() }
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key}={value}: {e}"));
        let uint = |v: &str| v.trim().parse::<usize>().map_err(|e| bad(&e));
        match key.trim() {
            "latent" => self.latent = uint(value)?,
            "t_lat" => self.t_lat = uint(value)?,
            "channels" => self.channels = uint(value)?,
            "layers" => self.layers = uint(value)?,
            "horizon" => self.horizon = uint(value)?,
            "kernel_width" => self.kernel_width = uint(value)?,
            "radius" => self.radius = value.trim().parse().map_err(|e| bad(&e))?,
            "activation" => self.activation = parse_activation(value.trim())?,
            "modes" => {
                let parts: Vec<usize> = value.split(',').map(uint).collect::<Result<_>>()?;
                self.modes = match parts[..] {
                    [m] => [m, m, m],
                    [a, b, c] => [a, b, c],
                    _ => return Err(Error::Config(format!("modes={value}: expected 1 or 3 values"))),
                };
            }
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let m = self.modes;
        vec![
            ("latent".into(), self.latent.to_string()),
            ("t_lat".into(), self.t_lat.to_string()),
            ("channels".into(), self.channels.to_string()),
            ("layers".into(), self.layers.to_string()),
            ("modes".into(), format!("{},{},{}", m[0], m[1], m[2])),
            ("radius".into(), format!("{:?}", self.radius)),
            ("horizon".into(), self.horizon.to_string()),
            ("kernel_width".into(), self.kernel_width.to_string()),
            ("activation".into(), activation_name(self.activation).into()),
        ]
    }

    /// Checks the invariants and clamps the temporal modes to the latent
    /// depth (logged). Spatial modes beyond the grid are an error.
    pub fn resolve(&self) -> Result<Self> {
        let mut out = self.clone();
        if self.horizon == 0 || self.t_lat == 0 {
            return Err(Error::Config("horizon and t_lat must be at least 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if self.latent < 2 || self.channels == 0 || self.layers == 0 || self.kernel_width == 0 {
            return Err(Error::Config("latent >= 2 and nonzero channels, layers, kernel width required".into()));
        }
        for axis in 0..2 {
            let max = self.latent / 2 + 1;
            if self.modes[axis] == 0 || self.modes[axis] > max {
                return Err(Error::ModeOverflow { modes: self.modes[axis], len: self.latent, max });
            }
        }
        let max_t = self.t_lat / 2 + 1;
        if self.modes[2] == 0 {
            return Err(Error::ModeOverflow { modes: 0, len: self.t_lat, max: max_t });
        }
        if self.modes[2] > max_t {
            log::info!("temporal modes clamped from {} to {max_t} (t_lat = {})", self.modes[2], self.t_lat);
            out.modes[2] = max_t;
        }
        Ok(out)
    }

    pub fn grid(&self) -> [usize; 3] {
        [self.latent, self.latent, self.t_lat]
    }

    /// Latent slice read by forecast step `k`.
    pub fn slice_of_step(&self, k: usize) -> usize {
        if self.horizon == 1 {
            return 0;
        }
        ((k * (self.t_lat - 1)) as f64 / (self.horizon - 1) as f64).round() as usize
    }

    /// Latent node positions, node `i * S + j` at `((i + 1/2) / S, (j + 1/2) / S)`.
    pub fn latent_nodes(&self) -> Vec<Point> {
        let s = self.latent;
        let mut out = Vec::with_capacity(s * s);
        for i in 0..s {
            for j in 0..s {
                out.push([(i as f64 + 0.5) / s as f64, (j as f64 + 0.5) / s as f64]);
            }
        }
        out
    }
}

/// Per-field z-score statistics (u, v, p, alpha).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl Default for NormStats {
    fn default() -> Self {
        Self { mean: [0.0; 4], std: [1.0; 4] }
    }
}

impl NormStats {
    /// Statistics over every vertex of every frame given.
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a Frame>) -> Result<Self> {
        let mut sum = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        let mut n = 0usize;
        for f in frames {
            for (k, (s, q)) in sum.iter_mut().zip(sq.iter_mut()).enumerate() {
                for &x in f.field(k) {
                    *s += x as f64;
                    *q += (x as f64) * (x as f64);
                }
            }
            n += f.len();
        }
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let mut out = Self::default();
        for k in 0..4 {
            let m = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - m * m).max(0.0);
            out.mean[k] = m;
            out.std[k] = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        }
        Ok(out)
    }
}

/// Geometry, features and conditioning of one simulation.
#[derive(Clone, Debug)]
pub struct ModelInput {
    /// Vertices in normalized `[0, 1]^2` coordinates.
    pub vertices: Vec<Point>,
    /// `[N, FEATURES]`, row-major.
    pub features: Vec<f64>,
    pub inlet: InletSetup,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Builds the input bundle from a trajectory's mesh and first frame.
    pub fn from_trajectory(t: &Trajectory, norm: &NormStats, props: &FluidProps) -> Result<Self> {
        let domain = build_cavity(&t.design)?;
        let first = t.frames.first().ok_or(Error::EmptyInput)?;
        Self::from_parts(&domain, &t.mesh.vertices, &t.mesh.inlet_mask, first, norm, props)
    }

    pub fn from_parts(
        domain: &CavityDomain,
        vertices: &[Point],
        inlet_mask: &[bool],
        first: &Frame,
        norm: &NormStats,
        props: &FluidProps,
    ) -> Result<Self> {
        let n = vertices.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if first.len() != n || inlet_mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} vertices, {} frame values, {} mask entries",
                first.len(),
                inlet_mask.len()
            )));
        }
        let mut features = Vec::with_capacity(n * FEATURES);
        for (i, &x) in vertices.iter().enumerate() {
            for k in 0..4 {
                features.push((first.field(k)[i] as f64 - norm.mean[k]) / norm.std[k]);
            }
            features.push(if inlet_mask[i] { 1.0 } else { 0.0 });
            features.push(domain.signed_distance(x) / SD_SCALE);
        }
        Ok(Self {
            vertices: vertices.iter().map(|&x| domain.to_unit(x)).collect(),
            features,
            inlet: InletSetup::from_design(&domain.params, props),
        })
    }
}

/// Neighborhood graphs and query points for one forward pass.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub input: ModelInput,
    pub queries: Vec<Point>,
    enc: Arc<Segments>,
    enc_dst: Arc<Vec<usize>>,
    enc_src: Arc<Vec<usize>>,
    dec: Arc<Segments>,
    dec_dst: Arc<Vec<usize>>,
    dec_src: Arc<Vec<usize>>,
}

impl Prepared {
    pub fn new(cfg: &ModelConfig, input: ModelInput, queries: Vec<Point>) -> Result<Self> {
        if input.is_empty() || queries.is_empty() {
            return Err(Error::EmptyInput);
        }
        if input.features.len() != input.len() * FEATURES {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} vertices",
                input.features.len(),
                input.len()
            )));
        }
        let nodes = cfg.latent_nodes();
        let enc = radius_graph_or_nearest(&input.vertices, &nodes, cfg.radius);
        let dec = radius_graph_or_nearest(&nodes, &queries, cfg.radius);
        Ok(Self {
            enc_dst: Arc::new(enc.destinations()),
            enc_src: Arc::new(enc.sources.clone()),
            enc: Arc::new(enc),
            dec_dst: Arc::new(dec.destinations()),
            dec_src: Arc::new(dec.sources.clone()),
            dec: Arc::new(dec),
            input,
            queries,
        })
    }

    pub fn encoder_edges(&self) -> usize {
        self.enc.num_edges()
    }

    pub fn decoder_edges(&self) -> usize {
        self.dec.num_edges()
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    /// Uniform in `[0, 1 / (cin * cout))`.
    Spectral,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

fn layout(cfg: &ModelConfig, n_modes: usize) -> Vec<(String, Vec<usize>, Init)> {
    let (w, c) = (cfg.kernel_width, cfg.channels);
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    for (pre, first_in) in [("enc", FEATURES), ("dec", 0)] {
        push(format!("{pre}.w_pos"), vec![2, w], Init::Glorot);
        push(format!("{pre}.w_rel"), vec![2, w], Init::Glorot);
        if first_in > 0 {
            push(format!("{pre}.w_feat"), vec![first_in, w], Init::Glorot);
        }
        push(format!("{pre}.b1"), vec![w], Init::Zeros);
        push(format!("{pre}.w2"), vec![w, w], Init::Glorot);
        push(format!("{pre}.b2"), vec![w], Init::Zeros);
        push(format!("{pre}.w3"), vec![w, w], Init::Glorot);
        push(format!("{pre}.b3"), vec![w], Init::Zeros);
        push(format!("{pre}.w_out"), vec![w, c], Init::Glorot);
        push(format!("{pre}.b_out"), vec![c], Init::Zeros);
    }
    push("enc.lift".into(), vec![FEATURES, c], Init::Glorot);
    push("enc.lift_b".into(), vec![c], Init::Zeros);
    push("cond.w".into(), vec![4, w], Init::Glorot);
    push("cond.b".into(), vec![w], Init::Zeros);
    for l in 0..cfg.layers {
        let cin = if l == 0 { c + 1 } else { c };
        push(format!("layer{l}.spectral"), vec![2, n_modes, cin, c], Init::Spectral);
        push(format!("layer{l}.w"), vec![cin, c], Init::Glorot);
        push(format!("layer{l}.b"), vec![c], Init::Zeros);
        push(format!("layer{l}.gamma_w"), vec![w, c], Init::Glorot);
        push(format!("layer{l}.gamma_b"), vec![c], Init::Ones);
        push(format!("layer{l}.beta_w"), vec![w, c], Init::Glorot);
        push(format!("layer{l}.beta_b"), vec![c], Init::Zeros);
    }
    push("head.w".into(), vec![c, FIELDS], Init::Glorot);
    push("head.b".into(), vec![FIELDS], Init::Zeros);
    out
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization for a resolved config.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let modes = ModeSet::hermitian(&cfg.grid(), &cfg.modes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(cfg, modes.slots()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Glorot => {
                    let fan = shape[shape.len() - 2] + shape[shape.len() - 1];
                    let a = (6.0 / fan as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
                Init::Spectral => {
                    let s = 1.0 / (shape[2] * shape[3]) as f64;
                    (0..n).map(|_| s * rng.gen::<f64>()).collect()
                }
            };
            names.push(name);
            tensors.push(Tensor::from_f64(shape, &data)?);
        }
        Ok(Self { names, tensors })
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// All values concatenated in layout order.
    pub fn flatten(&self) -> Tensor<T> {
        let data: Vec<T> = self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        let n = data.len();
        Tensor::new([n], data).expect("flat length")
    }

    /// Inverse of [`flatten`](Self::flatten), keeping names and shapes.
    pub fn unflatten(&self, flat: &Tensor<T>) -> Result<Self> {
        if flat.len() != self.num_values() {
            return Err(Error::ShapeMismatch(format!("{} values for {} parameters", flat.len(), self.num_values())));
        }
        let mut at = 0;
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            tensors.push(Tensor::new(t.shape().to_vec(), flat.data()[at..at + t.len()].to_vec())?);
            at += t.len();
        }
        Ok(Self { names: self.names.clone(), tensors })
    }

    /// Puts every tensor on the tape, tracked or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, track: bool) -> Bound<'t, T> {
        let vars =
            self.tensors.iter().map(|t| if track { tape.leaf(t.clone()) } else { tape.constant(t.clone()) }).collect();
        Bound::new(&self.names, vars)
    }

    /// Views a flat `[P]` variable as the parameter tensors.
    pub fn bind_flat<'t>(&self, flat: &Var<'t, T>) -> Result<Bound<'t, T>> {
        let n = self.num_values();
        if flat.shape() != [n] {
            return Err(Error::ShapeMismatch(format!("flat parameters {:?}, expected [{n}]", flat.shape())));
        }
        let column = flat.reshape([n, 1])?;
        let mut at = 0;
        let mut vars = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let idx: Vec<usize> = (at..at + t.len()).collect();
            vars.push(column.gather_rows(Arc::new(idx))?.reshape(t.shape().to_vec())?);
            at += t.len();
        }
        Ok(Bound::new(&self.names, vars))
    }
}

/// Parameters placed on a tape.
pub struct Bound<'t, T: Scalar> {
    pub vars: Vec<Var<'t, T>>,
    index: HashMap<String, usize>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    fn new(names: &[String], vars: Vec<Var<'t, T>>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { vars, index }
    }

    pub fn get(&self, name: &str) -> Result<&Var<'t, T>> {
        self.index.get(name).map(|&i| &self.vars[i]).ok_or_else(|| Error::Config(format!("parameter {name} missing")))
    }

    /// Gradients of every bound variable, zeros where nothing flowed.
    pub fn grads(&self, tape: &'t Tape<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()))).collect()
    }
}

fn constant<'t, T: Scalar>(tape: &'t Tape<T>, shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Var<'t, T>> {
    Ok(tape.constant(Tensor::from_f64(shape, data)?))
}

fn points<'t, T: Scalar>(tape: &'t Tape<T>, pts: &[Point]) -> Result<Var<'t, T>> {
    let flat: Vec<f64> = pts.iter().flat_map(|p| [p[0], p[1]]).collect();
    constant(tape, [pts.len(), 2], &flat)
}

/// A resolved configuration with its parameters and field statistics.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub norm: NormStats,
    pub params: ModelParams<T>,
    modes: Arc<ModeSet>,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: &ModelConfig, norm: NormStats, seed: u64) -> Result<Self> {
        let cfg = cfg.resolve()?;
        let params = ModelParams::init(&cfg, seed)?;
        Self::from_parts(cfg, norm, params)
    }

    pub fn from_parts(cfg: ModelConfig, norm: NormStats, params: ModelParams<T>) -> Result<Self> {
        let cfg = cfg.resolve()?;
        let modes = Arc::new(ModeSet::hermitian(&cfg.grid(), &cfg.modes)?);
        let expected = layout(&cfg, modes.slots());
        let matches = expected.len() == params.names.len()
            && expected
                .iter()
                .zip(params.names.iter().zip(&params.tensors))
                .all(|((n, s, _), (pn, pt))| n == pn && s[..] == pt.shape()[..]);
        if !matches {
            return Err(Error::ShapeMismatch("parameters do not match the model configuration".into()));
        }
        Ok(Self { cfg, norm, params, modes })
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { cfg: self.cfg.clone(), norm: self.norm, params: self.params.cast(), modes: self.modes.clone() }
    }

    fn kernel_mlp<'t>(&self, p: &Bound<'t, T>, pre: &str, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let act = self.cfg.activation;
        let get = |name: &str| p.get(&format!("{pre}.{name}"));
        let layers = [
            (get("w2")?, get("b2")?, act),
            (get("w3")?, get("b3")?, act),
            (get("w_out")?, get("b_out")?, Activation::Identity),
        ];
        Ok(h.dense_stack(act, &layers)?)
    }

    /// Latent grid `[S, S, C]`: per node, the mean over vertices b in the ball
    /// of `kappa(x, b - x, f(b)) * (P f(b) + p0)`.
    pub fn encode<'t>(&self, tape: &'t Tape<T>, p: &Bound<'t, T>, prep: &Prepared) -> Result<Var<'t, T>> {
        let (s, c) = (self.cfg.latent, self.cfg.channels);
        let n = prep.input.len();
        let nodes = points(tape, &self.cfg.latent_nodes())?;
        let verts = points(tape, &prep.input.vertices)?;
        let feat = constant(tape, [n, FEATURES], &prep.input.features)?;
        let w_rel = p.get("enc.w_rel")?;
        // W_x x + W_r (b - x) + W_f f = (W_x - W_r) x + (W_r b + W_f f)
        let node_term = nodes.matmul(&p.get("enc.w_pos")?.sub(w_rel)?)?;
        let vert_term = verts.matmul(w_rel)?.add(&feat.matmul(p.get("enc.w_feat")?)?)?.add_row(p.get("enc.b1")?)?;
        let first = node_term.gather_add(prep.enc_dst.clone(), &vert_term, prep.enc_src.clone())?;
        let kernel = self.kernel_mlp(p, "enc", first)?;
        let msg = feat.affine(p.get("enc.lift")?, p.get("enc.lift_b")?, Activation::Identity)?.reshape([n, 1, c])?;
        let lat = msg.kernel_aggregate(&kernel, prep.enc.clone(), Arc::new(vec![0]))?;
        Ok(lat.reshape([s, s, c])?)
    }

    /// `[S, S, T_lat, C + 1]`: copies along time plus a time channel in `[0, 1]`.
    pub fn broadcast<'t>(&self, latent: &Var<'t, T>) -> Result<Var<'t, T>> {
        broadcast_3d(latent, self.cfg.t_lat)
    }

    /// Hidden conditioning features `[1, W]` of the standardized inlet setup.
    fn conditioning<'t>(&self, tape: &'t Tape<T>, p: &Bound<'t, T>, inlet: &InletSetup) -> Result<Var<'t, T>> {
        let i = constant(tape, [1, 4], &inlet.standardized())?;
        Ok(i.matmul(p.get("cond.w")?)?.add_row(p.get("cond.b")?)?.activation(self.cfg.activation))
    }

    /// Instance norm over all grid axes, then per-channel scale and shift from
    /// the conditioning features.
    pub fn adain<'t>(&self, p: &Bound<'t, T>, layer: usize, x: &Var<'t, T>, cond: &Var<'t, T>) -> Result<Var<'t, T>> {
        let c = self.cfg.channels;
        let gamma = cond
            .matmul(p.get(&format!("layer{layer}.gamma_w"))?)?
            .add_row(p.get(&format!("layer{layer}.gamma_b"))?)?
            .reshape([c])?;
        let beta = cond
            .matmul(p.get(&format!("layer{layer}.beta_w"))?)?
            .add_row(p.get(&format!("layer{layer}.beta_b"))?)?
            .reshape([c])?;
        Ok(x.instance_norm(T::from_f64c(NORM_EPS))?.mul_row(&gamma)?.add_row(&beta)?)
    }

    /// `act(AdaIN(W U + b + spectral(U)))`.
    pub fn fourier_layer<'t>(
        &self,
        p: &Bound<'t, T>,
        layer: usize,
        u: &Var<'t, T>,
        cond: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let shape = u.shape().to_vec();
        let cin = shape[3];
        let pts = shape[..3].iter().product::<usize>();
        let c = self.cfg.channels;
        let spectral = u.spectral_conv(p.get(&format!("layer{layer}.spectral"))?, self.modes.clone())?;
        let pointwise = u
            .reshape([pts, cin])?
            .affine(p.get(&format!("layer{layer}.w"))?, p.get(&format!("layer{layer}.b"))?, Activation::Identity)?
            .reshape([shape[0], shape[1], shape[2], c])?;
        let z = spectral.add(&pointwise)?;
        Ok(self.adain(p, layer, &z, cond)?.activation(self.cfg.activation))
    }

    /// Normalized predictions `[H, Nq, 4]` read from the latent block.
    pub fn decode<'t>(
        &self,
        tape: &'t Tape<T>,
        p: &Bound<'t, T>,
        latent: &Var<'t, T>,
        prep: &Prepared,
    ) -> Result<Var<'t, T>> {
        let (s, t, c) = (self.cfg.latent, self.cfg.t_lat, self.cfg.channels);
        let h = self.cfg.horizon;
        let nq = prep.queries.len();
        let nodes = points(tape, &self.cfg.latent_nodes())?;
        let queries = points(tape, &prep.queries)?;
        let w_rel = p.get("dec.w_rel")?;
        let query_term = queries.matmul(&p.get("dec.w_pos")?.sub(w_rel)?)?;
        let node_term = nodes.matmul(w_rel)?.add_row(p.get("dec.b1")?)?;
        let first = query_term.gather_add(prep.dec_dst.clone(), &node_term, prep.dec_src.clone())?;
        let kernel = self.kernel_mlp(p, "dec", first)?;
        let slices: Vec<usize> = (0..h).map(|k| self.cfg.slice_of_step(k)).collect();
        let values = latent.reshape([s * s, t, c])?;
        let read = values.kernel_aggregate(&kernel, prep.dec.clone(), Arc::new(slices))?;
        let out = read.swap_leading()?.reshape([h * nq, c])?.affine(
            p.get("head.w")?,
            p.get("head.b")?,
            Activation::Identity,
        )?;
        Ok(out.reshape([h, nq, FIELDS])?)
    }

    /// Physical predictions `[H, Nq, 4]` (u, v, p, alpha).
    pub fn forward<'t>(&self, tape: &'t Tape<T>, p: &Bound<'t, T>, prep: &Prepared) -> Result<Var<'t, T>> {
        let cond = self.conditioning(tape, p, &prep.input.inlet)?;
        let mut u = self.broadcast(&self.encode(tape, p, prep)?)?;
        for layer in 0..self.cfg.layers {
            u = self.fourier_layer(p, layer, &u, &cond)?;
        }
        let normalized = self.decode(tape, p, &u, prep)?;
        let shape = normalized.shape().to_vec();
        let std = constant(tape, [FIELDS], &self.norm.std)?;
        let mean = constant(tape, [FIELDS], &self.norm.mean)?;
        Ok(normalized.reshape([shape[0] * shape[1], FIELDS])?.mul_row(&std)?.add_row(&mean)?.reshape(shape)?)
    }

    /// Inference without recording: `[H, Nq, 4]`.
    pub fn predict(&self, prep: &Prepared) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let p = self.params.bind(&tape, false);
        Ok(self.forward(&tape, &p, prep)?.value().clone())
    }

    /// Builds the graphs and predicts at `queries` (normalized coordinates).
    pub fn model_forward(&self, input: &ModelInput, queries: &[Point]) -> Result<Tensor<T>> {
        let prep = Prepared::new(&self.cfg, input.clone(), queries.to_vec())?;
        self.predict(&prep)
    }
}

/// Replicates `[S, S, C]` over `t_lat` slices and appends the normalized
/// time coordinate `k / (t_lat - 1)` (zero for a single slice).
pub fn broadcast_3d<'t, T: Scalar>(latent: &Var<'t, T>, t_lat: usize) -> Result<Var<'t, T>> {
    let shape = latent.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!("latent grid {shape:?}, expected [S, S, C]")));
    }
    let (s0, s1, c) = (shape[0], shape[1], shape[2]);
    let rep = latent.reshape([s0 * s1, c])?.repeat_middle(t_lat)?;
    let denom = (t_lat.max(2) - 1) as f64;
    let times: Vec<f64> = (0..s0 * s1).flat_map(|_| (0..t_lat).map(|k| k as f64 / denom)).collect();
    let time = constant(latent.tape(), [s0 * s1, t_lat, 1], &times)?;
    Ok(rep.concat_last(&time)?.reshape([s0, s1, t_lat, c + 1])?)
}
