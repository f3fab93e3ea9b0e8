//! One time step: sub-cycled Cahn–Hilliard transport, then an SSP-RK3
//! momentum update with a variable-density projection after every stage.

use super::grid::FaceKind;
use super::poisson::PoissonBuilder;
use super::{chemical_potential, neumann_laplacian, InletBc, SolverOptions, SolverState};
use crate::error::{Error, Result};

type Faces = [Vec<f64>; 2];

fn shift(mut c: [isize; 2], axis: usize, k: isize) -> [isize; 2] {
    c[axis] += k;
    c
}

impl SolverState {
    /// Advances by exactly `dt`.
    pub fn advance(&mut self, dt: f64, bc: &InletBc, opts: &SolverOptions) -> Result<()> {
        let h = self.grid.h;
        let speed = self.max_speed().max(bc.speed);
        if !speed.is_finite() || !(dt > 0.0) || speed * dt / h > 1.0 {
            return Err(Error::CflViolation { speed, dt, h });
        }
        self.transport_phase(dt);
        self.refresh();

        let inlet = bc.velocity();
        let q0 = self.vel.clone();
        let mut q = q0.clone();
        let mut closed = [vec![false; q0[0].len()], vec![false; q0[1].len()]];
        for (a, b) in [(0.0, 1.0), (0.75, 0.25), (1.0 / 3.0, 2.0 / 3.0)] {
            let l = self.momentum_rhs(&q, inlet);
            let mut star: Faces = [vec![0.0; q0[0].len()], vec![0.0; q0[1].len()]];
            for d in 0..2 {
                for (f, s) in star[d].iter_mut().enumerate() {
                    *s = match self.grid.kind[d][f] {
                        FaceKind::Interior | FaceKind::Outlet => a * q0[d][f] + b * (q[d][f] + dt * l[d][f]),
                        FaceKind::Inlet => inlet[d],
                        _ => 0.0,
                    };
                }
            }
            self.project(&mut star, b * dt, &mut closed, opts, true)?;
            q = star;
        }
        self.vel = q;
        self.t += dt;
        let speed = self.max_speed();
        if !speed.is_finite() {
            return Err(Error::CflViolation { speed, dt, h });
        }
        Ok(())
    }

    /// Pressure of the rest state: projects the body forces acting on zero velocity.
    pub(super) fn init_pressure(&mut self, opts: &SolverOptions) -> Result<()> {
        let zero: Faces = [vec![0.0; self.vel[0].len()], vec![0.0; self.vel[1].len()]];
        let mut star = self.momentum_rhs(&zero, [0.0, 0.0]);
        let mut closed = [vec![false; zero[0].len()], vec![false; zero[1].len()]];
        self.project(&mut star, 1.0, &mut closed, opts, false)?;
        self.vel = zero;
        Ok(())
    }

    fn transport_phase(&mut self, dt: f64) {
        let g = &self.grid;
        let h = g.h;
        let m = self.pf.mobility();
        let e2 = self.pf.eps * self.pf.eps;
        // half the explicit stability bound of the linearised fourth-order operator
        let limit = 1.0 / (m * (64.0 * e2 / h.powi(4) + 16.0 / (h * h)));
        let n = if m > 0.0 { (dt / limit).ceil().max(1.0) as usize } else { 1 };
        let dtau = dt / n as f64;
        let mut phi = self.phi.clone();
        let outside = |kind: FaceKind| match kind {
            FaceKind::Inlet => -1.0,
            FaceKind::Outlet => 1.0,
            _ => 0.0,
        };
        let mut div = vec![0.0; phi.len()];
        for _ in 0..n {
            let lap = if m > 0.0 {
                neumann_laplacian(g, &chemical_potential(g, &phi, &self.pf))
            } else {
                vec![0.0; phi.len()]
            };
            div.iter_mut().for_each(|x| *x = 0.0);
            for d in 0..2 {
                let [fx, fy] = g.face_dims(d);
                for j in 0..fy {
                    for i in 0..fx {
                        let f = j * fx + i;
                        let u = self.vel[d][f];
                        let kind = g.kind[d][f];
                        if u == 0.0 || kind == FaceKind::Solid {
                            continue;
                        }
                        let c = [i as isize, j as isize];
                        let lo = g.cell_index(shift(c, d, -1)).filter(|&k| g.fluid[k]);
                        let hi = g.cell_index(c).filter(|&k| g.fluid[k]);
                        let up = match (lo, hi) {
                            (Some(l), Some(r)) => {
                                if u > 0.0 {
                                    phi[l]
                                } else {
                                    phi[r]
                                }
                            }
                            (Some(l), None) => {
                                if u > 0.0 {
                                    phi[l]
                                } else {
                                    outside(kind)
                                }
                            }
                            (None, Some(r)) => {
                                if u > 0.0 {
                                    outside(kind)
                                } else {
                                    phi[r]
                                }
                            }
                            (None, None) => continue,
                        };
                        let flux = u * up;
                        if let Some(l) = lo {
                            div[l] += flux;
                        }
                        if let Some(r) = hi {
                            div[r] -= flux;
                        }
                    }
                }
            }
            for &c in g.fluid_cells() {
                phi[c] += dtau * (m * lap[c] - div[c] / h);
            }
        }
        self.phi = phi;
    }

    /// Vent pressure at height `y`.
    fn vent_pressure(&self, y: f64) -> f64 {
        self.p_ref + self.props.rho1 * self.props.g * (self.y_ref - y)
    }

    /// The fluid cell of a boundary face and the y of the ghost cell across it.
    fn boundary_cells(&self, d: usize, c: [isize; 2], side: i8) -> (usize, f64) {
        let g = &self.grid;
        let (fluid, ghost) = if side > 0 { (c, shift(c, d, -1)) } else { (shift(c, d, -1), c) };
        let k = g.cell_index(fluid).expect("boundary face borders a fluid cell");
        (k, g.origin[1] + (ghost[1] as f64 + 0.5) * g.h)
    }

    /// Acceleration of every interior and vent face, including the pressure
    /// gradient of the current `p`.
    fn momentum_rhs(&self, q: &Faces, inlet: [f64; 2]) -> Faces {
        let g = &self.grid;
        let h = g.h;
        let kst = self.pf.lambda / (self.pf.eps * self.pf.eps);
        let mut out: Faces = [vec![0.0; q[0].len()], vec![0.0; q[1].len()]];
        for d in 0..2 {
            let t = 1 - d;
            let grav = if d == 1 { -self.props.g } else { 0.0 };
            let [fx, fy] = g.face_dims(d);
            for j in 0..fy {
                for i in 0..fx {
                    let f = j * fx + i;
                    let c = [i as isize, j as isize];
                    match g.kind[d][f] {
                        FaceKind::Interior => {
                            let lo = g.cell_index(shift(c, d, -1)).expect("interior face");
                            let hi = g.cell_index(c).expect("interior face");
                            let rho = 0.5 * (self.rho[lo] + self.rho[hi]);
                            let mu = 0.5 * (self.mu[lo] + self.mu[hi]);
                            let q0 = q[d][f];
                            let below = shift(c, d, -1);
                            let wt = 0.25
                                * [below, shift(below, t, 1), c, shift(c, t, 1)]
                                    .iter()
                                    .map(|&x| g.face_index(t, x).map_or(0.0, |k| q[t][k]))
                                    .sum::<f64>();
                            let adv = q0 * self.upwind_derivative(q, d, d, c, q0, inlet)
                                + wt * self.upwind_derivative(q, d, t, c, wt, inlet);
                            let mut lap = -4.0 * q0;
                            for axis in [d, t] {
                                for s in [-1, 1] {
                                    lap += self.neighbours(q, d, axis, c, s, inlet).0;
                                }
                            }
                            lap /= h * h;
                            let st = kst * 0.5 * (self.psi[lo] + self.psi[hi]) * (self.phi[hi] - self.phi[lo]) / h;
                            let dp = (self.p[hi] - self.p[lo]) / h;
                            out[d][f] = -adv + mu / rho * lap + grav + (st - dp) / rho;
                        }
                        FaceKind::Outlet => {
                            let side = g.fluid_side[d][f];
                            let (k, y) = self.boundary_cells(d, c, side);
                            let pg = self.vent_pressure(y);
                            let dp = if side > 0 { self.p[k] - pg } else { pg - self.p[k] } / h;
                            out[d][f] = grav - dp / self.rho[k];
                        }
                        _ => {}
                    }
                }
            }
        }
        out
    }

    /// Values of component `d` one and two faces away from face `c` along
    /// `axis` in direction `s`. The first may be a wall ghost; the second is
    /// only given when it is a genuine fluid face.
    fn neighbours(
        &self,
        q: &Faces,
        d: usize,
        axis: usize,
        c: [isize; 2],
        s: isize,
        inlet: [f64; 2],
    ) -> (f64, Option<f64>) {
        let g = &self.grid;
        let real = |at: [isize; 2]| g.face_index(d, at).filter(|&k| g.kind[d][k] != FaceKind::Solid);
        if let Some(k1) = real(shift(c, axis, s)) {
            let second =
                if g.kind[d][k1] == FaceKind::Interior { real(shift(c, axis, 2 * s)).map(|k2| q[d][k2]) } else { None };
            return (q[d][k1], second);
        }
        debug_assert_ne!(axis, d, "interior faces always have normal neighbours");
        let q0 = g.face_index(d, c).map_or(0.0, |k| q[d][k]);
        // the two tangential-component faces closing the gap on that side
        let base = if s > 0 { shift(c, axis, 1) } else { c };
        let kinds = [base, shift(base, d, -1)].map(|x| g.face_index(axis, x).map(|k| g.kind[axis][k]));
        let ghost = if kinds.contains(&Some(FaceKind::Inlet)) {
            2.0 * inlet[d] - q0
        } else if kinds.contains(&Some(FaceKind::Outlet)) {
            q0
        } else {
            -q0
        };
        (ghost, None)
    }

    /// Second-order upwind derivative along `axis`, first-order where the
    /// upstream stencil leaves the fluid.
    fn upwind_derivative(&self, q: &Faces, d: usize, axis: usize, c: [isize; 2], w: f64, inlet: [f64; 2]) -> f64 {
        let h = self.grid.h;
        let s: isize = if w >= 0.0 { -1 } else { 1 };
        let q0 = self.grid.face_index(d, c).map_or(0.0, |k| q[d][k]);
        let (q1, q2) = self.neighbours(q, d, axis, c, s, inlet);
        let sf = s as f64;
        match q2 {
            Some(q2) => -sf * (3.0 * q0 - 4.0 * q1 + q2) / (2.0 * h),
            None => -sf * (q0 - q1) / h,
        }
    }

    /// Makes `star` discretely divergence free and adds the pressure
    /// correction to `p`. With `backflow`, vents that would take in fluid are
    /// closed (at most `backflow_passes` re-solves, at least one vent stays open).
    fn project(
        &mut self,
        star: &mut Faces,
        dt: f64,
        closed: &mut [Vec<bool>; 2],
        opts: &SolverOptions,
        backflow: bool,
    ) -> Result<()> {
        let saved = star.clone();
        let mut pass = 0;
        loop {
            let mut trial = saved.clone();
            let dp = self.correct(&mut trial, dt, closed, opts)?;
            let mut open = 0;
            let mut inflow = Vec::new();
            if backflow {
                for d in 0..2 {
                    for (f, kind) in self.grid.kind[d].iter().enumerate() {
                        if *kind == FaceKind::Outlet && !closed[d][f] {
                            open += 1;
                            // outward normal points away from the fluid side
                            let out = -f64::from(self.grid.fluid_side[d][f]) * trial[d][f];
                            if out < 0.0 {
                                inflow.push((out, d, f));
                            }
                        }
                    }
                }
            }
            if inflow.len() == open && open > 0 {
                inflow.sort_by(|a, b| b.0.total_cmp(&a.0));
                inflow.remove(0);
            }
            if inflow.is_empty() || pass == opts.backflow_passes {
                for &c in self.grid.fluid_cells() {
                    self.p[c] += dp[c];
                }
                *star = trial;
                return Ok(());
            }
            for (_, d, f) in inflow {
                closed[d][f] = true;
            }
            pass += 1;
        }
    }

    /// Solves for the pressure correction and applies it to `u`. Returns the
    /// correction per cell.
    fn correct(&self, u: &mut Faces, dt: f64, closed: &[Vec<bool>; 2], opts: &SolverOptions) -> Result<Vec<f64>> {
        let g = &self.grid;
        let h = g.h;
        let mut builder = PoissonBuilder::new(g.num_fluid());
        let mut rhs = vec![0.0; g.num_fluid()];
        let mut anchored = false;
        let scale = h / dt;
        for d in 0..2 {
            let [fx, fy] = g.face_dims(d);
            for j in 0..fy {
                for i in 0..fx {
                    let f = j * fx + i;
                    let c = [i as isize, j as isize];
                    let lo = g.cell_index(shift(c, d, -1)).filter(|&k| g.fluid[k]);
                    let hi = g.cell_index(c).filter(|&k| g.fluid[k]);
                    match g.kind[d][f] {
                        FaceKind::Interior => {
                            let (l, r) = (lo.expect("interior"), hi.expect("interior"));
                            builder.link(g.dof(l), g.dof(r), 2.0 / (self.rho[l] + self.rho[r]));
                        }
                        FaceKind::Outlet if !closed[d][f] => {
                            let k = lo.or(hi).expect("vent borders fluid");
                            builder.anchor(g.dof(k), 1.0 / self.rho[k]);
                            anchored = true;
                        }
                        FaceKind::Outlet => u[d][f] = 0.0,
                        _ => {}
                    }
                    let v = u[d][f];
                    if v != 0.0 {
                        if let Some(l) = lo {
                            rhs[g.dof(l)] -= scale * v;
                        }
                        if let Some(r) = hi {
                            rhs[g.dof(r)] += scale * v;
                        }
                    }
                }
            }
        }
        let system = builder.build(!anchored);
        let mut x = vec![0.0; g.num_fluid()];
        system.solve(&rhs, &mut x, opts.poisson_tol, opts.poisson_max_iter)?;
        let mut dp = vec![0.0; g.num_cells()];
        for (k, &c) in g.fluid_cells().iter().enumerate() {
            dp[c] = x[k];
        }
        for d in 0..2 {
            let [fx, fy] = g.face_dims(d);
            for j in 0..fy {
                for i in 0..fx {
                    let f = j * fx + i;
                    let c = [i as isize, j as isize];
                    match g.kind[d][f] {
                        FaceKind::Interior => {
                            let l = g.cell_index(shift(c, d, -1)).expect("interior");
                            let r = g.cell_index(c).expect("interior");
                            let rho = 0.5 * (self.rho[l] + self.rho[r]);
                            u[d][f] -= dt / (rho * h) * (dp[r] - dp[l]);
                        }
                        FaceKind::Outlet if !closed[d][f] => {
                            let side = g.fluid_side[d][f];
                            let (k, _) = self.boundary_cells(d, c, side);
                            let jump = if side > 0 { dp[k] } else { -dp[k] };
                            u[d][f] -= dt / (self.rho[k] * h) * jump;
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(dp)
    }
}
