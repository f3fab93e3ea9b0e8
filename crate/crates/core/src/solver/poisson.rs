//! Symmetric positive (semi-)definite five-point systems solved by conjugate
//! gradients with a modified incomplete-Cholesky preconditioner.

use crate::error::{Error, Result};

pub(crate) struct PoissonSystem {
    diag: Vec<f64>,
    start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// constants are in the null space; solutions are pinned at dof 0
    singular: bool,
}

pub(crate) struct PoissonBuilder {
    diag: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl PoissonBuilder {
    pub fn new(n: usize) -> Self {
        Self { diag: vec![0.0; n], rows: vec![Vec::new(); n] }
    }

    /// Couples two unknowns with conductance `w`.
    pub fn link(&mut self, a: usize, b: usize, w: f64) {
        self.diag[a] += w;
        self.diag[b] += w;
        self.rows[a].push((b, -w));
        self.rows[b].push((a, -w));
    }

    /// Conductance `w` from unknown `a` to a fixed value.
    pub fn anchor(&mut self, a: usize, w: f64) {
        self.diag[a] += w;
    }

    pub fn build(self, singular: bool) -> PoissonSystem {
        let mut start = Vec::with_capacity(self.rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        start.push(0);
        for mut row in self.rows {
            row.sort_by_key(|&(c, _)| c);
            // merge duplicate couplings (tiny periodic grids)
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                cols.push(c);
                vals.push(v);
            }
            start.push(cols.len());
        }
        let mut diag = self.diag;
        if singular && !diag.is_empty() {
            diag[0] *= 2.0;
        }
        PoissonSystem { diag, start, cols, vals, singular }
    }
}

impl PoissonSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = self.diag[i] * x[i];
            for k in self.start[i]..self.start[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *o = s;
        }
    }

    /// Modified incomplete Cholesky: dropped fill-in is moved onto the
    /// diagonal (scaled by 0.97). Returns per-entry factor coefficients in
    /// CSR order and the inverse diagonal of the factor.
    fn factor(&self) -> (Vec<f64>, Vec<f64>) {
        const TAU: f64 = 0.97;
        let n = self.len();
        let mut l = vec![0.0; n];
        // sum of each row's strictly upper entries, for the modification
        let upper: Vec<f64> = (0..n)
            .map(|i| (self.start[i]..self.start[i + 1]).filter(|&k| self.cols[k] > i).map(|k| self.vals[k]).sum())
            .collect();
        for i in 0..n {
            let mut d = self.diag[i];
            for k in self.start[i]..self.start[i + 1] {
                let c = self.cols[k];
                if c < i {
                    let lik = self.vals[k] / l[c];
                    d -= lik * lik + TAU * self.vals[k] * (upper[c] - self.vals[k]) / (l[c] * l[c]);
                }
            }
            l[i] = if d > 0.25 * self.diag[i] { d.sqrt() } else { self.diag[i].sqrt() };
        }
        let mut coef = vec![0.0; self.vals.len()];
        for i in 0..n {
            for k in self.start[i]..self.start[i + 1] {
                let c = self.cols[k];
                coef[k] = self.vals[k] / if c < i { l[c] } else { l[i] };
            }
        }
        (coef, l.iter().map(|v| 1.0 / v).collect())
    }

    fn precondition(&self, coef: &[f64], inv: &[f64], r: &[f64], z: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = r[i];
            for k in self.start[i]..self.start[i + 1] {
                let c = self.cols[k];
                if c < i {
                    s -= coef[k] * z[c];
                }
            }
            z[i] = s * inv[i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.start[i]..self.start[i + 1] {
                let c = self.cols[k];
                if c > i {
                    s -= coef[k] * z[c];
                }
            }
            z[i] = s * inv[i];
        }
    }

    /// Solves `A x = b` starting from `x`. Converged when the max-norm
    /// residual drops below `tol` times the max-norm of `b`.
    pub fn solve(&self, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
        let n = self.len();
        let mut rhs = b.to_vec();
        if self.singular {
            let mean = rhs.iter().sum::<f64>() / n as f64;
            rhs.iter_mut().for_each(|v| *v -= mean);
            let shift = x[0];
            x.iter_mut().for_each(|v| *v -= shift);
        }
        let bnorm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(0);
        }
        let target = tol * bnorm;
        let (coef, inv) = self.factor();
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(&rhs) {
            *ri = bi - *ri;
        }
        let mut z = vec![0.0; n];
        self.precondition(&coef, &inv, &r, &mut z);
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut resid = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for iter in 0..max_iter {
            if resid <= target {
                return Ok(iter);
            }
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            resid = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            self.precondition(&coef, &inv, &r, &mut z);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if resid <= target {
            return Ok(max_iter);
        }
        Err(Error::PoissonDivergence { residual: resid / bnorm, iterations: max_iter })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_one_dimensional_dirichlet_chain() {
        // -x'' = 0 with x(-1) = 0, x(n) = 1 on unit conductances
        let n = 20;
        let mut b = PoissonBuilder::new(n);
        for i in 0..n - 1 {
            b.link(i, i + 1, 1.0);
        }
        b.anchor(0, 1.0);
        b.anchor(n - 1, 1.0);
        let sys = b.build(false);
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = 1.0;
        let mut x = vec![0.0; n];
        sys.solve(&rhs, &mut x, 1e-12, 1000).unwrap();
        for (i, v) in x.iter().enumerate() {
            assert!((v - (i + 1) as f64 / (n + 1) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn pinned_singular_system_reproduces_compatible_solution() {
        // ring of 6 with a zero-mean source
        let n = 6;
        let mut b = PoissonBuilder::new(n);
        for i in 0..n {
            b.link(i, (i + 1) % n, 1.0);
        }
        let sys = b.build(true);
        let rhs = vec![1.0, -1.0, 0.0, 2.0, -2.0, 0.0];
        let mut x = vec![0.0; n];
        sys.solve(&rhs, &mut x, 1e-13, 1000).unwrap();
        // check residual of the original singular operator
        for i in 0..n {
            let ax = 2.0 * x[i] - x[(i + 1) % n] - x[(i + n - 1) % n];
            assert!((ax - rhs[i]).abs() < 1e-11);
        }
        assert!(x[0].abs() < 1e-10);
    }
}
