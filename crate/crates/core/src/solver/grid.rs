use crate::error::{Error, Result};
use crate::geometry::{BoundaryLabel, CavityDomain, Point};

/// Role of a velocity face in the staggered grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceKind {
    /// no adjacent fluid cell
    Solid,
    /// both adjacent cells are fluid
    Interior,
    /// no-slip, zero normal velocity
    Wall,
    /// prescribed inflow velocity
    Inlet,
    /// pressure-prescribed vent
    Outlet,
}

impl FaceKind {
    pub fn is_boundary(self) -> bool {
        matches!(self, Self::Wall | Self::Inlet | Self::Outlet)
    }
}

/// Uniform staggered grid masked to the fluid region.
///
/// Cell `(i, j)` covers `[x0 + i h, x0 + (i+1) h] x [y0 + j h, y0 + (j+1) h]`.
/// Component `d` of the velocity lives on faces normal to axis `d`; face `c`
/// of component `d` separates cell `c - e_d` from cell `c`.
#[derive(Clone, Debug)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: Point,
    pub periodic: bool,
    pub fluid: Vec<bool>,
    /// face kinds for u (index 0) and v (index 1)
    pub kind: [Vec<FaceKind>; 2],
    /// for boundary faces, +1 if the fluid cell is on the high side, -1 if on the low side
    pub fluid_side: [Vec<i8>; 2],
    dof_of_cell: Vec<usize>,
    cell_of_dof: Vec<usize>,
}

pub(crate) const NONE: usize = usize::MAX;

impl Grid {
    fn blank(nx: usize, ny: usize, h: f64, origin: Point, periodic: bool, fluid: Vec<bool>) -> Self {
        let fdims = Self::face_dims_for(nx, ny, periodic);
        Self {
            nx,
            ny,
            h,
            origin,
            periodic,
            fluid,
            kind: [vec![FaceKind::Solid; fdims[0][0] * fdims[0][1]], vec![FaceKind::Solid; fdims[1][0] * fdims[1][1]]],
            fluid_side: [vec![0; fdims[0][0] * fdims[0][1]], vec![0; fdims[1][0] * fdims[1][1]]],
            dof_of_cell: Vec::new(),
            cell_of_dof: Vec::new(),
        }
    }

    fn face_dims_for(nx: usize, ny: usize, periodic: bool) -> [[usize; 2]; 2] {
        let extra = usize::from(!periodic);
        [[nx + extra, ny], [nx, ny + extra]]
    }

    pub fn face_dims(&self, d: usize) -> [usize; 2] {
        Self::face_dims_for(self.nx, self.ny, self.periodic)[d]
    }

    pub fn num_faces(&self, d: usize) -> usize {
        let [a, b] = self.face_dims(d);
        a * b
    }

    /// Every cell fluid, all four sides walls.
    pub fn closed_box(nx: usize, ny: usize, h: f64) -> Self {
        let mut g = Self::blank(nx, ny, h, [0.0, 0.0], false, vec![true; nx * ny]);
        g.classify(|_, _, _| BoundaryLabel::Wall);
        g
    }

    /// Every cell fluid, wrapping in both directions.
    pub fn periodic(nx: usize, ny: usize, h: f64) -> Self {
        let mut g = Self::blank(nx, ny, h, [0.0, 0.0], true, vec![true; nx * ny]);
        g.classify(|_, _, _| BoundaryLabel::Wall);
        g
    }

    /// Cells whose centres lie inside the mold, restricted to the component
    /// connected to the cavity. With `closed`, inlet and vents become walls.
    pub fn from_domain(domain: &CavityDomain, h: f64, closed: bool) -> Result<Self> {
        let p = &domain.params;
        let coarse = |reason: String| Error::ResolutionTooCoarse { h, reason };
        if p.a * 1e-3 / h < 4.0 {
            return Err(coarse(format!("inlet size {} mm spans fewer than 4 cells", p.a)));
        }
        let i0 = (domain.bbox_min[0] / h).floor() as i64;
        let j0 = (domain.bbox_min[1] / h).floor() as i64;
        let i1 = (domain.bbox_max[0] / h).ceil() as i64;
        let j1 = (domain.bbox_max[1] / h).ceil() as i64;
        let (nx, ny) = ((i1 - i0) as usize, (j1 - j0) as usize);
        let origin = [i0 as f64 * h, j0 as f64 * h];
        let mut fluid = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let c = [origin[0] + (i as f64 + 0.5) * h, origin[1] + (j as f64 + 0.5) * h];
                fluid[j * nx + i] = domain.contains(c);
            }
        }
        // keep the component containing the cavity centre
        let seed_pt = [p.g * 0.5e-3, p.f * 0.5e-3];
        let si = ((seed_pt[0] - origin[0]) / h) as usize;
        let sj = ((seed_pt[1] - origin[1]) / h) as usize;
        let mut keep = vec![false; nx * ny];
        let mut stack = vec![sj * nx + si];
        if !fluid[stack[0]] {
            return Err(coarse("cavity centre is not a fluid cell".into()));
        }
        keep[stack[0]] = true;
        while let Some(c) = stack.pop() {
            let (i, j) = (c % nx, c / nx);
            let mut push = |n: usize| {
                if fluid[n] && !keep[n] {
                    keep[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                push(c - 1);
            }
            if i + 1 < nx {
                push(c + 1);
            }
            if j > 0 {
                push(c - nx);
            }
            if j + 1 < ny {
                push(c + nx);
            }
        }
        let mut g = Self::blank(nx, ny, h, origin, false, keep);
        g.classify(|d, centre, _| {
            let seg = domain
                .segments
                .iter()
                .min_by(|a, b| a.distance(centre).total_cmp(&b.distance(centre)))
                .expect("domain has segments");
            let aligned = seg.normal[d].abs() > 0.5;
            if closed || !aligned {
                BoundaryLabel::Wall
            } else {
                seg.label
            }
        });
        if !closed {
            for (label, kind) in [("inlet", FaceKind::Inlet), ("outlet", FaceKind::Outlet)] {
                if !g.kind[1].contains(&kind) && !g.kind[0].contains(&kind) {
                    return Err(coarse(format!("no {label} face survives on the grid")));
                }
            }
        }
        Ok(g)
    }

    fn classify(&mut self, label: impl Fn(usize, Point, [usize; 2]) -> BoundaryLabel) {
        for d in 0..2 {
            let [fx, fy] = self.face_dims(d);
            for j in 0..fy {
                for i in 0..fx {
                    let c = [i as isize, j as isize];
                    let mut lo = c;
                    lo[d] -= 1;
                    let a = self.cell_index(lo).filter(|&k| self.fluid[k]);
                    let b = self.cell_index(c).filter(|&k| self.fluid[k]);
                    let f = j * fx + i;
                    let (kind, side) = match (a, b) {
                        (Some(_), Some(_)) => (FaceKind::Interior, 0),
                        (None, None) => (FaceKind::Solid, 0),
                        (l, _) => {
                            let side = if l.is_some() { -1 } else { 1 };
                            let kind = match label(d, self.face_center(d, [i, j]), [i, j]) {
                                BoundaryLabel::Wall => FaceKind::Wall,
                                BoundaryLabel::Inlet => FaceKind::Inlet,
                                BoundaryLabel::Outlet => FaceKind::Outlet,
                            };
                            (kind, side)
                        }
                    };
                    self.kind[d][f] = kind;
                    self.fluid_side[d][f] = side;
                }
            }
        }
        self.dof_of_cell = vec![NONE; self.nx * self.ny];
        self.cell_of_dof.clear();
        for (c, &fl) in self.fluid.iter().enumerate() {
            if fl {
                self.dof_of_cell[c] = self.cell_of_dof.len();
                self.cell_of_dof.push(c);
            }
        }
    }

    /// Flat cell index, wrapping when periodic.
    pub fn cell_index(&self, c: [isize; 2]) -> Option<usize> {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let (mut i, mut j) = (c[0], c[1]);
        if self.periodic {
            i = i.rem_euclid(nx);
            j = j.rem_euclid(ny);
        } else if i < 0 || j < 0 || i >= nx || j >= ny {
            return None;
        }
        Some((j * nx + i) as usize)
    }

    /// Flat face index for component `d`, wrapping when periodic.
    pub fn face_index(&self, d: usize, c: [isize; 2]) -> Option<usize> {
        let [fx, fy] = self.face_dims(d);
        let (fx, fy) = (fx as isize, fy as isize);
        let (mut i, mut j) = (c[0], c[1]);
        if self.periodic {
            i = i.rem_euclid(fx);
            j = j.rem_euclid(fy);
        } else if i < 0 || j < 0 || i >= fx || j >= fy {
            return None;
        }
        Some((j * fx + i) as usize)
    }

    pub fn is_fluid(&self, c: [isize; 2]) -> bool {
        self.cell_index(c).is_some_and(|k| self.fluid[k])
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        [self.origin[0] + (i as f64 + 0.5) * self.h, self.origin[1] + (j as f64 + 0.5) * self.h]
    }

    pub fn face_center(&self, d: usize, c: [usize; 2]) -> Point {
        let mut p = [self.origin[0] + (c[0] as f64 + 0.5) * self.h, self.origin[1] + (c[1] as f64 + 0.5) * self.h];
        p[d] -= 0.5 * self.h;
        p
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_fluid(&self) -> usize {
        self.cell_of_dof.len()
    }

    pub(crate) fn dof(&self, cell: usize) -> usize {
        self.dof_of_cell[cell]
    }

    pub(crate) fn fluid_cells(&self) -> &[usize] {
        &self.cell_of_dof
    }

    /// Whether the grid has any pressure-prescribed face.
    pub fn has_outlets(&self) -> bool {
        self.kind.iter().any(|k| k.contains(&FaceKind::Outlet))
    }
}
