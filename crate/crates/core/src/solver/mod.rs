//! Reference solver for isothermal two-phase flow: Cahn–Hilliard phase field
//! coupled to incompressible Navier–Stokes on a staggered grid masked by the
//! mold geometry.
//!
//! Fluid 1 (water, `φ = -1`) enters through the inlet pipe and displaces fluid 2
//! (air, `φ = +1`) through the vents.

mod grid;
mod poisson;
mod step;

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

pub use grid::{FaceKind, Grid};

use crate::error::{Error, Result};
use crate::geometry::{build_cavity, inlet_velocity, CavityDomain, DesignParams, Mesh, Point};

/// Material constants of the two fluids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidProps {
    pub rho1: f64,
    pub rho2: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// surface tension coefficient (N/m)
    pub sigma: f64,
    /// gravity magnitude, acting in -y
    pub g: f64,
}

impl Default for FluidProps {
    /// Water and air at 373 K.
    fn default() -> Self {
        Self { rho1: 958.4, rho2: 0.946, mu1: 2.82e-4, mu2: 2.17e-5, sigma: 0.0589, g: 9.81 }
    }
}

impl FluidProps {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho1 > 0.0 && self.rho2 > 0.0 && self.mu1 > 0.0 && self.mu2 > 0.0;
        if !ok || self.g < 0.0 || self.sigma < 0.0 {
            return Err(Error::Config(format!("invalid fluid properties {self:?}")));
        }
        Ok(())
    }

    fn max_kinematic_viscosity(&self) -> f64 {
        (self.mu1 / self.rho1).max(self.mu2 / self.rho2)
    }
}

/// Phase-field constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseFieldParams {
    /// interface thickness (m)
    pub eps: f64,
    /// mobility tuning parameter
    pub chi: f64,
    /// mobility, always `chi * eps^2`
    pub gamma: f64,
    /// mixing energy density (N)
    pub lambda: f64,
    /// static contact angle (rad)
    pub theta_w: f64,
}

impl PhaseFieldParams {
    pub fn new(eps: f64, chi: f64, lambda: f64, theta_w: f64) -> Self {
        Self { eps, chi, gamma: chi * eps * eps, lambda, theta_w }
    }

    /// `eps = h`, `chi = 1`, mixing energy matched to the surface tension,
    /// neutral wetting.
    pub fn for_grid(h: f64, props: &FluidProps) -> Self {
        Self::new(h, 1.0, 3.0 * h * props.sigma / (2.0 * SQRT_2), PI / 2.0)
    }

    /// Coefficient `gamma lambda / eps^2` of the Cahn–Hilliard diffusion term.
    pub fn mobility(&self) -> f64 {
        self.gamma * self.lambda / (self.eps * self.eps)
    }
}

/// Inflow through the pipe mouth.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InletBc {
    /// speed (m/s)
    pub speed: f64,
    /// angle from horizontal (rad)
    pub angle: f64,
}

impl InletBc {
    pub fn from_design(params: &DesignParams, props: &FluidProps) -> Self {
        Self { speed: inlet_velocity(params, props), angle: params.c.to_radians() }
    }

    /// `(V cos C, -V sin C)`: downward into the cavity.
    pub fn velocity(&self) -> [f64; 2] {
        [self.speed * self.angle.cos(), -self.speed * self.angle.sin()]
    }
}

/// Numerical knobs of the time integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// advective Courant number used to choose sub-steps
    pub cfl: f64,
    /// relative max-norm tolerance of the pressure solve
    pub poisson_tol: f64,
    pub poisson_max_iter: usize,
    /// re-solves allowed per projection while closing vents with inflow
    pub backflow_passes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { cfl: 0.4, poisson_tol: 1e-10, poisson_max_iter: 20_000, backflow_passes: 5 }
    }
}

/// Grid fields at one instant. Cell arrays are indexed by flat cell index and
/// hold zeros outside the fluid; `vel[d]` holds component `d` on its faces.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub grid: Grid,
    pub props: FluidProps,
    pub pf: PhaseFieldParams,
    pub vel: [Vec<f64>; 2],
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub t: f64,
    /// vents hold `p_ref + rho1 g (y_ref - y)`
    pub p_ref: f64,
    pub y_ref: f64,
}

/// Vertex values of one saved instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub p: Vec<f32>,
    pub alpha: Vec<f32>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Field `k` in the order u, v, p, alpha.
    pub fn field(&self, k: usize) -> &[f32] {
        match k {
            0 => &self.u,
            1 => &self.v,
            2 => &self.p,
            _ => &self.alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub design: DesignParams,
    pub mesh: Mesh,
    pub dt: f64,
    pub horizon: f64,
    pub frames: Vec<Frame>,
}

/// `floor(horizon / dt) + 1`, robust to representation error in the ratio.
pub fn frame_count(horizon: f64, dt: f64) -> usize {
    (horizon / dt + 1e-9).floor() as usize + 1
}

/// Zero-flux five-point Laplacian over fluid cells.
pub(crate) fn neumann_laplacian(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let h2 = grid.h * grid.h;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = j * grid.nx + i;
            if !grid.fluid[c] {
                continue;
            }
            let (ii, jj) = (i as isize, j as isize);
            let mut s = 0.0;
            for n in [[ii - 1, jj], [ii + 1, jj], [ii, jj - 1], [ii, jj + 1]] {
                if let Some(k) = grid.cell_index(n).filter(|&k| grid.fluid[k]) {
                    s += f[k] - f[c];
                }
            }
            out[c] = s / h2;
        }
    }
    out
}

/// `Ψ = -ε² Δφ + (φ² - 1) φ` with zero normal gradient at walls.
pub fn chemical_potential(grid: &Grid, phi: &[f64], pf: &PhaseFieldParams) -> Vec<f64> {
    let lap = neumann_laplacian(grid, phi);
    let e2 = pf.eps * pf.eps;
    phi.iter()
        .zip(&lap)
        .zip(&grid.fluid)
        .map(|((&f, &l), &fl)| if fl { -e2 * l + (f * f - 1.0) * f } else { 0.0 })
        .collect()
}

/// `α2 = clamp((1 + φ)/2, 0, 1)` and `α1 = 1 - α2`.
pub fn volume_fractions(phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a2: Vec<f64> = phi.iter().map(|&f| ((1.0 + f) * 0.5).clamp(0.0, 1.0)).collect();
    let a1 = a2.iter().map(|&a| 1.0 - a).collect();
    (a1, a2)
}

/// Volume-weighted density and viscosity.
pub fn mixture_properties(alpha1: &[f64], alpha2: &[f64], props: &FluidProps) -> (Vec<f64>, Vec<f64>) {
    let rho = alpha1.iter().zip(alpha2).map(|(a1, a2)| props.rho1 * a1 + props.rho2 * a2).collect();
    let mu = alpha1.iter().zip(alpha2).map(|(a1, a2)| props.mu1 * a1 + props.mu2 * a2).collect();
    (rho, mu)
}

/// Cell-centred `(λ/ε²) Ψ ∇φ` by central differences. A missing neighbour
/// mirrors the cell itself.
pub fn surface_tension_force(grid: &Grid, phi: &[f64], psi: &[f64], pf: &PhaseFieldParams) -> (Vec<f64>, Vec<f64>) {
    let n = grid.num_cells();
    let (mut fx, mut fy) = (vec![0.0; n], vec![0.0; n]);
    let k = pf.lambda / (pf.eps * pf.eps);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = j * grid.nx + i;
            if !grid.fluid[c] {
                continue;
            }
            let (ii, jj) = (i as isize, j as isize);
            let at = |n: [isize; 2]| grid.cell_index(n).filter(|&k| grid.fluid[k]).map_or(phi[c], |k| phi[k]);
            let gx = (at([ii + 1, jj]) - at([ii - 1, jj])) / (2.0 * grid.h);
            let gy = (at([ii, jj + 1]) - at([ii, jj - 1])) / (2.0 * grid.h);
            fx[c] = k * psi[c] * gx;
            fy[c] = k * psi[c] * gy;
        }
    }
    (fx, fy)
}

impl SolverState {
    /// Fluid at rest with the given phase field; pressure is the discrete
    /// hydrostatic balance of that configuration.
    pub fn new(grid: Grid, phi: Vec<f64>, props: FluidProps, pf: PhaseFieldParams, y_ref: f64) -> Result<Self> {
        props.validate()?;
        if phi.len() != grid.num_cells() {
            return Err(Error::ShapeMismatch(format!(
                "phase field has {} values for {} cells",
                phi.len(),
                grid.num_cells()
            )));
        }
        let n = grid.num_cells();
        let vel = [vec![0.0; grid.num_faces(0)], vec![0.0; grid.num_faces(1)]];
        let phi = phi.iter().zip(&grid.fluid).map(|(&f, &fl)| if fl { f } else { 0.0 }).collect();
        let mut s = Self {
            grid,
            props,
            pf,
            vel,
            p: vec![0.0; n],
            phi,
            psi: vec![0.0; n],
            alpha1: vec![0.0; n],
            alpha2: vec![0.0; n],
            rho: vec![0.0; n],
            mu: vec![0.0; n],
            fx: vec![0.0; n],
            fy: vec![0.0; n],
            t: 0.0,
            p_ref: 0.0,
            y_ref,
        };
        s.refresh();
        s.init_pressure(&SolverOptions::default())?;
        Ok(s)
    }

    /// Sets face velocities from a function of the component and face centre.
    pub fn set_velocity(&mut self, f: impl Fn(usize, Point) -> f64) {
        for d in 0..2 {
            let [fx, fy] = self.grid.face_dims(d);
            for j in 0..fy {
                for i in 0..fx {
                    let k = j * fx + i;
                    self.vel[d][k] = match self.grid.kind[d][k] {
                        FaceKind::Interior | FaceKind::Outlet => f(d, self.grid.face_center(d, [i, j])),
                        _ => 0.0,
                    };
                }
            }
        }
    }

    /// Recomputes Ψ, α, ρ, μ and the surface-tension force from φ.
    pub fn refresh(&mut self) {
        self.psi = chemical_potential(&self.grid, &self.phi, &self.pf);
        let (a1, a2) = volume_fractions(&self.phi);
        let (rho, mu) = mixture_properties(&a1, &a2, &self.props);
        let (fx, fy) = surface_tension_force(&self.grid, &self.phi, &self.psi, &self.pf);
        let mask = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter().zip(&self.grid.fluid).map(|(x, &fl)| if fl { x } else { 0.0 }).collect()
        };
        self.alpha1 = mask(a1);
        self.alpha2 = mask(a2);
        self.rho = mask(rho);
        self.mu = mask(mu);
        self.fx = fx;
        self.fy = fy;
    }

    pub fn max_speed(&self) -> f64 {
        self.vel.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, &x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
    }

    /// Total fluid-2 volume per unit depth, `Σ α2 h²` over fluid cells.
    pub fn phase_mass(&self) -> f64 {
        self.alpha2.iter().sum::<f64>() * self.grid.h * self.grid.h
    }

    /// Largest step allowed by advection, viscosity, capillary waves and
    /// gravitational acceleration from rest.
    pub fn stable_dt(&self, bc: &InletBc, opts: &SolverOptions) -> f64 {
        let h = self.grid.h;
        let speed = self.max_speed().max(bc.speed);
        let mut dt = f64::INFINITY;
        if speed > 0.0 {
            dt = dt.min(opts.cfl * h / speed);
        }
        dt = dt.min(0.2 * h * h / self.props.max_kinematic_viscosity());
        if self.props.sigma > 0.0 {
            let cap = ((self.props.rho1 + self.props.rho2) * h.powi(3) / (4.0 * PI * self.props.sigma)).sqrt();
            dt = dt.min(cap);
        }
        if self.props.g > 0.0 {
            dt = dt.min(opts.cfl * (h / self.props.g).sqrt());
        }
        dt
    }

    /// Integrates to time `t_end` with sub-steps no larger than [`Self::stable_dt`].
    pub fn step_to(&mut self, t_end: f64, bc: &InletBc, opts: &SolverOptions) -> Result<usize> {
        let mut steps = 0;
        loop {
            let remaining = t_end - self.t;
            if remaining <= 1e-12 * t_end.abs().max(1e-3) {
                break;
            }
            let dt = self.stable_dt(bc, opts).min(remaining);
            self.advance(dt, bc, opts)?;
            steps += 1;
        }
        self.t = t_end;
        Ok(steps)
    }

    /// Bilinear interpolation of `(u, v, p, α2)` from cell centres using only
    /// fluid cells; points with no fluid in their stencil take the nearest
    /// fluid cell.
    pub fn sample(&self, points: &[Point]) -> Frame {
        let g = &self.grid;
        let n = g.num_cells();
        let (mut uc, mut vc) = (vec![0.0; n], vec![0.0; n]);
        for &c in g.fluid_cells() {
            let (i, j) = ((c % g.nx) as isize, (c / g.nx) as isize);
            let f = |d: usize, at: [isize; 2]| g.face_index(d, at).map_or(0.0, |k| self.vel[d][k]);
            uc[c] = 0.5 * (f(0, [i, j]) + f(0, [i + 1, j]));
            vc[c] = 0.5 * (f(1, [i, j]) + f(1, [i, j + 1]));
        }
        let fields = [&uc, &vc, &self.p, &self.alpha2];
        let mut out: [Vec<f32>; 4] = Default::default();
        for &x in points {
            let weights = self.stencil(x);
            for (o, f) in out.iter_mut().zip(fields) {
                let val: f64 = weights.iter().map(|&(c, w)| w * f[c]).sum();
                o.push(val as f32);
            }
        }
        let [u, v, p, alpha] = out;
        Frame { u, v, p, alpha }
    }

    fn stencil(&self, x: Point) -> Vec<(usize, f64)> {
        let g = &self.grid;
        let fx = (x[0] - g.origin[0]) / g.h - 0.5;
        let fy = (x[1] - g.origin[1]) / g.h - 0.5;
        let (i0, j0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - i0, fy - j0);
        let (i0, j0) = (i0 as isize, j0 as isize);
        let mut w = Vec::with_capacity(4);
        let mut total = 0.0;
        for (di, dj, wt) in
            [(0, 0, (1.0 - tx) * (1.0 - ty)), (1, 0, tx * (1.0 - ty)), (0, 1, (1.0 - tx) * ty), (1, 1, tx * ty)]
        {
            if let Some(c) = g.cell_index([i0 + di, j0 + dj]).filter(|&c| g.fluid[c]) {
                if wt > 0.0 {
                    w.push((c, wt));
                    total += wt;
                }
            }
        }
        if total > 1e-12 {
            w.iter_mut().for_each(|e| e.1 /= total);
            return w;
        }
        let nearest = g
            .fluid_cells()
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = dist2(g.cell_center(a % g.nx, a / g.nx), x);
                let db = dist2(g.cell_center(b % g.nx, b / g.nx), x);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("grid has fluid cells");
        vec![(nearest, 1.0)]
    }
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn initial_phase(grid: &Grid, interface_y: f64, pf: &PhaseFieldParams) -> Vec<f64> {
    let mut phi = vec![0.0; grid.num_cells()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let y = grid.cell_center(i, j)[1];
            // water above the pipe mouth, air below
            phi[j * grid.nx + i] = ((interface_y - y) / (SQRT_2 * pf.eps)).tanh();
        }
    }
    phi
}

/// Water-filled pipe above an air-filled cavity, at rest.
pub fn init_state(domain: &CavityDomain, h: f64, props: &FluidProps, pf: &PhaseFieldParams) -> Result<SolverState> {
    init_state_with(domain, h, props, pf, false)
}

/// As [`init_state`]; with `closed`, the inlet and vents are walls.
pub fn init_state_with(
    domain: &CavityDomain,
    h: f64,
    props: &FluidProps,
    pf: &PhaseFieldParams,
    closed: bool,
) -> Result<SolverState> {
    let grid = Grid::from_domain(domain, h, closed)?;
    let top = domain.params.f * 1e-3;
    let phi = initial_phase(&grid, top, pf);
    SolverState::new(grid, phi, *props, *pf, top)
}

/// Runs one design from rest, saving a frame at every multiple of `dt`.
pub fn simulate(
    design: &DesignParams,
    mesh: &Mesh,
    horizon: f64,
    dt: f64,
    props: &FluidProps,
    pf: &PhaseFieldParams,
    h: f64,
) -> Result<Trajectory> {
    simulate_with(design, mesh, horizon, dt, props, pf, h, &SolverOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_with(
    design: &DesignParams,
    mesh: &Mesh,
    horizon: f64,
    dt: f64,
    props: &FluidProps,
    pf: &PhaseFieldParams,
    h: f64,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Config(format!("need dt > 0 and horizon >= 0, got {dt} and {horizon}")));
    }
    design.validate()?;
    let domain = build_cavity(design)?;
    let mut state = init_state(&domain, h, props, pf)?;
    let bc = InletBc::from_design(design, props);
    let n = frame_count(horizon, dt);
    let mut frames = Vec::with_capacity(n);
    frames.push(state.sample(&mesh.vertices));
    for k in 1..n {
        state.step_to(k as f64 * dt, &bc, opts).map_err(|e| Error::StepFailed { step: k, source: Box::new(e) })?;
        frames.push(state.sample(&mesh.vertices));
    }
    Ok(Trajectory { design: *design, mesh: mesh.clone(), dt, horizon, frames })
}
