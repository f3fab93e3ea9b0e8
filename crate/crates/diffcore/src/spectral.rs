//! Truncated spectral convolution on a regular grid.

use std::sync::Arc;

use crate::error::{DiffError, Result};
use crate::fft::transform_planar;
use crate::scalar::Scalar;
use crate::simd::wide;
use crate::tape::Var;
use crate::tensor::Tensor;

/// The retained low-frequency box of a grid: on each axis of length `n`
/// with `m` modes, the wavenumbers `|k| <= m - 1` (with wrap-around).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeSet {
    grid: Vec<usize>,
    modes: Vec<usize>,
    flat: Vec<usize>,
    // weight slot of every retained frequency and whether it reads the conjugate
    slot: Vec<(usize, bool)>,
    slots: usize,
    // position of the negated frequency of every retained one
    neg: Vec<usize>,
    tied: bool,
}

/// Flat index of `-k` for the flat index of `k`.
fn negate(grid: &[usize], f: usize) -> usize {
    let mut rest = f;
    let mut coords = vec![0usize; grid.len()];
    for a in (0..grid.len()).rev() {
        coords[a] = rest % grid[a];
        rest /= grid[a];
    }
    coords.iter().zip(grid).fold(0, |acc, (&k, &n)| acc * n + (n - k) % n)
}

fn axis_modes(n: usize, m: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..m.min(n)).collect();
    for k in 1..m {
        if k <= n {
            ks.push(n - k);
        }
    }
    ks.sort_unstable();
    ks.dedup();
    ks
}

impl ModeSet {
    /// Fails if any axis asks for more than `n / 2 + 1` modes or for none.
    pub fn new(grid: &[usize], modes: &[usize]) -> Result<Self> {
        if grid.len() != modes.len() || grid.is_empty() {
            return Err(DiffError::InvalidArgument(format!("modes {modes:?} do not fit grid {grid:?}")));
        }
        for (&n, &m) in grid.iter().zip(modes) {
            if m == 0 || m > n / 2 + 1 {
                return Err(DiffError::InvalidArgument(format!(
                    "{m} modes on an axis of length {n} (allowed 1..={})",
                    n / 2 + 1
                )));
            }
        }
        let per_axis: Vec<Vec<usize>> = grid.iter().zip(modes).map(|(&n, &m)| axis_modes(n, m)).collect();
        let mut flat = vec![0usize];
        for (axis, ks) in per_axis.iter().enumerate() {
            let n = grid[axis];
            flat = flat.iter().flat_map(|&base| ks.iter().map(move |&k| base * n + k)).collect();
        }
        let slot = (0..flat.len()).map(|m| (m, false)).collect();
        let neg = flat.iter().map(|&f| flat.binary_search(&negate(grid, f)).expect("mode box is symmetric")).collect();
        Ok(Self { grid: grid.to_vec(), modes: modes.to_vec(), slots: flat.len(), neg, flat, slot, tied: false })
    }

    /// Same frequencies, but `k` and `-k` share one weight slot with
    /// `R(-k) = conj(R(k))`, so the filter is real by construction and needs
    /// about half the weights.
    pub fn hermitian(grid: &[usize], modes: &[usize]) -> Result<Self> {
        let mut set = Self::new(grid, modes)?;
        let mut slots = 0;
        let mut slot = vec![(usize::MAX, false); set.flat.len()];
        for m in 0..set.flat.len() {
            let partner = set.neg[m];
            if partner < m {
                slot[m] = (slot[partner].0, true);
            } else {
                slot[m] = (slots, false);
                slots += 1;
            }
        }
        set.slot = slot;
        set.slots = slots;
        set.tied = true;
        Ok(set)
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    /// Number of retained grid frequencies.
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Row-major flat grid indices of the retained frequencies, ascending.
    pub fn flat_indices(&self) -> &[usize] {
        &self.flat
    }

    /// Number of complex weights per `(Cin, Cout)` pair.
    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Weight slot of the `m`-th retained frequency and whether it is conjugated.
    pub fn slot(&self, m: usize) -> (usize, bool) {
        self.slot[m]
    }

    /// With tied weights the response at `-k` is the conjugate of the one at
    /// `k`, so only the first of each pair has to be computed.
    fn mirrored(&self, m: usize) -> bool {
        self.tied && self.neg[m] < m
    }

    /// Sets every mirrored frequency of a planar `[modes, C]` spectrum to the
    /// conjugate of its partner.
    fn fill_mirrored<T: Scalar>(&self, re: &mut [T], im: &mut [T], c: usize) {
        for m in (0..self.len()).filter(|&m| self.mirrored(m)) {
            let n = self.neg[m];
            re.copy_within(n * c..(n + 1) * c, m * c);
            im.copy_within(n * c..(n + 1) * c, m * c);
            im[m * c..(m + 1) * c].iter_mut().for_each(|v| *v = -*v);
        }
    }

    pub fn contains(&self, flat: usize) -> bool {
        self.flat.binary_search(&flat).is_ok()
    }

    pub fn grid_size(&self) -> usize {
        self.grid.iter().product()
    }
}

/// Retained spectrum `[modes, C]` (planar) of a real `[grid.., C]` array.
///
/// Channels are transformed in pairs, one as the real and one as the
/// imaginary part, and separated again with the conjugate symmetry of real
/// signals.
fn real_spectrum<T: Scalar>(x: &[T], modes: &ModeSet, c: usize, scale: T) -> (Vec<T>, Vec<T>) {
    let grid = modes.grid();
    let npts = modes.grid_size();
    let cp = c.div_ceil(2);
    let (mut zr, mut zi) = (vec![T::zero(); npts * cp], vec![T::zero(); npts * cp]);
    for p in 0..npts {
        for j in 0..cp {
            zr[p * cp + j] = x[p * c + 2 * j];
            if 2 * j + 1 < c {
                zi[p * cp + j] = x[p * c + 2 * j + 1];
            }
        }
    }
    let mut dims = grid.to_vec();
    dims.push(cp);
    let axes: Vec<usize> = (0..grid.len()).collect();
    transform_planar(&mut zr, &mut zi, &dims, &axes, false, scale);
    let half = T::from_f64c(0.5);
    let nm = modes.len();
    let (mut xr, mut xi) = (vec![T::zero(); nm * c], vec![T::zero(); nm * c]);
    for (m, &f) in modes.flat.iter().enumerate() {
        let g = modes.flat[modes.neg[m]];
        for j in 0..cp {
            let (ar, ai) = (zr[f * cp + j], zi[f * cp + j]);
            let (br, bi) = (zr[g * cp + j], zi[g * cp + j]);
            xr[m * c + 2 * j] = half * (ar + br);
            xi[m * c + 2 * j] = half * (ai - bi);
            if 2 * j + 1 < c {
                xr[m * c + 2 * j + 1] = half * (ai + bi);
                xi[m * c + 2 * j + 1] = half * (br - ar);
            }
        }
    }
    (xr, xi)
}

/// `Re(scale * IFFT(Y))` as a real `[grid.., C]` array, for a spectrum `Y`
/// given on the retained modes only (`[modes, C]`, planar).
fn real_signal<T: Scalar>(yr: &[T], yi: &[T], modes: &ModeSet, c: usize, scale: T) -> Vec<T> {
    let grid = modes.grid();
    let npts = modes.grid_size();
    let cp = c.div_ceil(2);
    let half = T::from_f64c(0.5);
    let (mut wr, mut wi) = (vec![T::zero(); npts * cp], vec![T::zero(); npts * cp]);
    for (m, &f) in modes.flat.iter().enumerate() {
        let n = modes.neg[m];
        for o in 0..c {
            // Hermitian part; it alone survives the real part
            let hr = half * (yr[m * c + o] + yr[n * c + o]);
            let hi = half * (yi[m * c + o] - yi[n * c + o]);
            let at = f * cp + o / 2;
            if o % 2 == 0 {
                wr[at] += hr;
                wi[at] += hi;
            } else {
                wr[at] -= hi;
                wi[at] += hr;
            }
        }
    }
    let mut dims = grid.to_vec();
    dims.push(cp);
    let axes: Vec<usize> = (0..grid.len()).collect();
    transform_planar(&mut wr, &mut wi, &dims, &axes, true, scale);
    let mut out = vec![T::zero(); npts * c];
    for p in 0..npts {
        for j in 0..cp {
            out[p * c + 2 * j] = wr[p * cp + j];
            if 2 * j + 1 < c {
                out[p * c + 2 * j + 1] = wi[p * cp + j];
            }
        }
    }
    out
}

/// `sum_o g[o] * conj(r[o])` with the conjugate of `r` optionally taken first.
#[inline]
fn dot_conj<T: Scalar>(gr: &[T], gi: &[T], rr: &[T], ri: &[T], flip: T) -> (T, T) {
    const L: usize = 8;
    let n = gr.len();
    let mut ar = [T::zero(); L];
    let mut ai = [T::zero(); L];
    let whole = n / L * L;
    for c in (0..whole).step_by(L) {
        for l in 0..L {
            let (a, b, x, y) = (gr[c + l], gi[c + l], rr[c + l], flip * ri[c + l]);
            ar[l] += a * x + b * y;
            ai[l] += b * x - a * y;
        }
    }
    let (mut sr, mut si) = (T::zero(), T::zero());
    for l in 0..L {
        sr += ar[l];
        si += ai[l];
    }
    for o in whole..n {
        let (a, b, x, y) = (gr[o], gi[o], rr[o], flip * ri[o]);
        sr += a * x + b * y;
        si += b * x - a * y;
    }
    (sr, si)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// `Re(IFFT(R (.) FFT(U)))` with only the retained modes kept.
    ///
    /// `self` is a real `[grid.., Cin]` array; `weights` is packed complex
    /// `[2, modes.slots(), Cin, Cout]`. Every frequency outside the mode box is
    /// zero before the inverse transform.
    pub fn spectral_conv(&self, weights: &Var<'t, T>, modes: Arc<ModeSet>) -> Result<Var<'t, T>> {
        self.same_tape(weights);
        let shape = self.shape().to_vec();
        let grid = modes.grid().to_vec();
        if shape.len() != grid.len() + 1 || shape[..grid.len()] != grid[..] {
            return Err(DiffError::InvalidArgument(format!(
                "spectral_conv input {shape:?} does not match grid {grid:?}"
            )));
        }
        let cin = shape[grid.len()];
        let ws = weights.shape();
        let ns = modes.slots();
        if ws.len() != 4 || ws[0] != 2 || ws[1] != ns || ws[2] != cin {
            return Err(DiffError::InvalidArgument(format!(
                "spectral weights {ws:?} do not match [2, {ns}, {cin}, Cout]"
            )));
        }
        let nm = modes.len();
        let cout = ws[3];
        let npts = modes.grid_size();
        let inv_n = T::one() / T::from_usize(npts).unwrap();
        let plane = ns * cin * cout;
        let sign = |conj: bool| if conj { -T::one() } else { T::one() };

        let (xr, xi) = real_spectrum(self.value().data(), &modes, cin, T::one());
        let w = weights.value().data();
        let (wr, wi) = (&w[..plane], &w[plane..]);
        let mut out_shape = grid.clone();
        out_shape.push(cout);
        let mut yr = vec![T::zero(); nm * cout];
        let mut yi = vec![T::zero(); nm * cout];
        wide(|| {
            for m in (0..nm).filter(|&m| !modes.mirrored(m)) {
                let (p, conj) = modes.slot(m);
                let s = sign(conj);
                let (ore, oim) = (&mut yr[m * cout..(m + 1) * cout], &mut yi[m * cout..(m + 1) * cout]);
                for i in 0..cin {
                    let (a, b) = (xr[m * cin + i], xi[m * cin + i]);
                    let (bs, as_) = (b * s, a * s);
                    let base = (p * cin + i) * cout;
                    let (rr, ri) = (&wr[base..base + cout], &wi[base..base + cout]);
                    for o in 0..cout {
                        ore[o] += a * rr[o] - bs * ri[o];
                        oim[o] += as_ * ri[o] + b * rr[o];
                    }
                }
            }
        });
        modes.fill_mirrored(&mut yr, &mut yi, cout);
        let value = Tensor::new(out_shape.clone(), real_signal(&yr, &yi, &modes, cout, inv_n))?;
        drop((yr, yi));

        let wt = weights.value().clone();
        Ok(self.tape().record(value, &[self, weights], move |needs| {
            Box::new(move |g| {
                let (gfr, gfi) = real_spectrum(g.data(), &modes, cout, inv_n);
                let w = wt.data();
                let (wr, wi) = (&w[..plane], &w[plane..]);
                let dx = needs[0].then(|| {
                    let (hr, hi) = wide(|| {
                        let mut hr = vec![T::zero(); nm * cin];
                        let mut hi = vec![T::zero(); nm * cin];
                        for m in (0..nm).filter(|&m| !modes.mirrored(m)) {
                            let (p, conj) = modes.slot(m);
                            let (gr, gi) = (&gfr[m * cout..(m + 1) * cout], &gfi[m * cout..(m + 1) * cout]);
                            for i in 0..cin {
                                let base = (p * cin + i) * cout;
                                let (rr, ri) = (&wr[base..base + cout], &wi[base..base + cout]);
                                let (sr, si) = dot_conj(gr, gi, rr, ri, sign(conj));
                                hr[m * cin + i] = sr;
                                hi[m * cin + i] = si;
                            }
                        }
                        modes.fill_mirrored(&mut hr, &mut hi, cin);
                        (hr, hi)
                    });
                    Tensor::new(shape.clone(), real_signal(&hr, &hi, &modes, cin, T::one())).unwrap()
                });
                let dw = needs[1].then(|| {
                    wide(|| {
                        let mut d = vec![T::zero(); 2 * plane];
                        let (dr, di) = d.split_at_mut(plane);
                        for m in (0..nm).filter(|&m| !modes.mirrored(m)) {
                            let (p, _) = modes.slot(m);
                            // the mirrored partner contributes the same amount again
                            let k = if modes.tied && modes.neg[m] != m { T::from_f64c(2.0) } else { T::one() };
                            let (gr, gi) = (&gfr[m * cout..(m + 1) * cout], &gfi[m * cout..(m + 1) * cout]);
                            for i in 0..cin {
                                // conj(X) * g
                                let (a, b) = (k * xr[m * cin + i], -(k * xi[m * cin + i]));
                                let base = (p * cin + i) * cout;
                                let (dr, di) = (&mut dr[base..base + cout], &mut di[base..base + cout]);
                                for o in 0..cout {
                                    dr[o] += a * gr[o] - b * gi[o];
                                    di[o] += a * gi[o] + b * gr[o];
                                }
                            }
                        }
                        Tensor::new(vec![2, ns, cin, cout], d).unwrap()
                    })
                });
                vec![dx, dw]
            })
        }))
    }
}
