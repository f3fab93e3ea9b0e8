//! Mixed-radix FFT with a direct-DFT fallback.
//!
//! Lengths whose prime factors are all in {2, 3, 5, 7} go through a recursive
//! decimation-in-time Cooley-Tukey transform. Any other length is evaluated
//! with the O(n^2) definition. Forward transforms are unnormalized; inverse
//! transforms carry the `1/n` factor.

use num_complex::Complex;

use crate::scalar::Scalar;
use crate::simd::wide;

const RADICES: [usize; 4] = [4, 2, 3, 5];

/// Column tile width for batched transforms along outer axes.
const TILE: usize = 64;

/// Precomputed twiddles and factorization for one transform length.
#[derive(Clone, Debug)]
pub struct FftPlan<T> {
    len: usize,
    // (radix, remaining length after this stage)
    stages: Vec<(usize, usize)>,
    twiddles: Vec<Complex<T>>,
    direct: bool,
}

fn factorize(mut n: usize) -> Option<Vec<usize>> {
    let mut factors = Vec::new();
    for &p in RADICES.iter().chain(std::iter::once(&7)) {
        while n.is_multiple_of(p) && n > 1 {
            factors.push(p);
            n /= p;
        }
    }
    (n == 1).then_some(factors)
}

impl<T: Scalar> FftPlan<T> {
    /// Plan for the forward (negative exponent) transform of length `len`.
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "fft length must be positive");
        let twiddles = (0..len)
            .map(|i| {
                let angle = -2.0 * std::f64::consts::PI * (i as f64) / (len as f64);
                Complex::new(T::from_f64c(angle.cos()), T::from_f64c(angle.sin()))
            })
            .collect();
        let (stages, direct) = match factorize(len) {
            Some(factors) if len > 1 => {
                let mut rem = len;
                let stages = factors
                    .into_iter()
                    .map(|p| {
                        rem /= p;
                        (p, rem)
                    })
                    .collect();
                (stages, false)
            }
            _ => (Vec::new(), true),
        };
        Self { len, stages, twiddles, direct }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Whether this length falls back to the direct DFT.
    pub fn is_direct(&self) -> bool {
        self.direct
    }

    /// Unnormalized in-place transform. `conjugate` flips the exponent sign
    /// (the adjoint of the forward transform).
    pub fn process(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>, conjugate: bool) {
        assert_eq!(buf.len(), self.len);
        if self.len == 1 {
            return;
        }
        scratch.clear();
        scratch.extend_from_slice(buf);
        if conjugate {
            scratch.iter_mut().for_each(|c| *c = c.conj());
        }
        if self.direct {
            for (k, out) in buf.iter_mut().enumerate() {
                let mut acc = Complex::new(T::zero(), T::zero());
                for (j, x) in scratch.iter().enumerate() {
                    acc += *x * self.twiddles[(j * k) % self.len];
                }
                *out = acc;
            }
        } else {
            self.work(buf, scratch, 0, 1, &self.stages);
        }
        if conjugate {
            buf.iter_mut().for_each(|c| *c = c.conj());
        }
    }

    fn work(
        &self,
        out: &mut [Complex<T>],
        input: &[Complex<T>],
        offset: usize,
        fstride: usize,
        stages: &[(usize, usize)],
    ) {
        let (p, m) = stages[0];
        if m == 1 {
            for (j, o) in out.iter_mut().take(p).enumerate() {
                *o = input[offset + j * fstride];
            }
        } else {
            for q in 0..p {
                self.work(&mut out[q * m..(q + 1) * m], input, offset + q * fstride, fstride * p, &stages[1..]);
            }
        }
        match p {
            2 => self.butterfly2(out, fstride, m),
            4 => self.butterfly4(out, fstride, m),
            _ => self.butterfly_generic(out, fstride, p, m),
        }
    }

    fn butterfly2(&self, out: &mut [Complex<T>], fstride: usize, m: usize) {
        for k in 0..m {
            let t = out[k + m] * self.twiddles[k * fstride];
            out[k + m] = out[k] - t;
            out[k] += t;
        }
    }

    fn butterfly4(&self, out: &mut [Complex<T>], fstride: usize, m: usize) {
        for k in 0..m {
            let a0 = out[k];
            let a1 = out[k + m] * self.twiddles[k * fstride];
            let a2 = out[k + 2 * m] * self.twiddles[2 * k * fstride];
            let a3 = out[k + 3 * m] * self.twiddles[3 * k * fstride];
            let s02 = a0 + a2;
            let d02 = a0 - a2;
            let s13 = a1 + a3;
            let d13 = a1 - a3;
            // multiply by -i for the forward direction
            let d13i = Complex::new(d13.im, -d13.re);
            out[k] = s02 + s13;
            out[k + m] = d02 + d13i;
            out[k + 2 * m] = s02 - s13;
            out[k + 3 * m] = d02 - d13i;
        }
    }

    fn butterfly_generic(&self, out: &mut [Complex<T>], fstride: usize, p: usize, m: usize) {
        let n = self.len;
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); p];
        for u in 0..m {
            for (q1, s) in scratch.iter_mut().enumerate() {
                *s = out[u + q1 * m];
            }
            let mut k = u;
            for _ in 0..p {
                let mut twidx = 0usize;
                let mut acc = scratch[0];
                for s in scratch.iter().skip(1) {
                    twidx += fstride * k;
                    if twidx >= n {
                        twidx %= n;
                    }
                    acc += *s * self.twiddles[twidx];
                }
                out[k] = acc;
                k += m;
            }
        }
    }
}

/// Work buffers for [`FftPlan::process_rows`].
#[derive(Default)]
pub struct RowScratch<T> {
    re: Vec<T>,
    im: Vec<T>,
    br: Vec<T>,
    bi: Vec<T>,
}

impl<T: Scalar> FftPlan<T> {
    /// Transforms every column of a row-major `[len, inner]` block at once,
    /// so the butterflies sweep contiguous rows.
    pub fn process_rows(&self, re: &mut [T], im: &mut [T], inner: usize, conjugate: bool, scratch: &mut RowScratch<T>) {
        assert_eq!(re.len(), self.len * inner);
        assert_eq!(im.len(), self.len * inner);
        if self.len == 1 {
            return;
        }
        scratch.re.clear();
        scratch.re.extend_from_slice(re);
        scratch.im.clear();
        scratch.im.extend_from_slice(im);
        if conjugate {
            scratch.im.iter_mut().for_each(|v| *v = -*v);
        }
        let (sr, si) = (std::mem::take(&mut scratch.re), std::mem::take(&mut scratch.im));
        if self.direct {
            let n = self.len;
            for k in 0..n {
                let (ore, oim) = (&mut re[k * inner..(k + 1) * inner], &mut im[k * inner..(k + 1) * inner]);
                ore.iter_mut().for_each(|v| *v = T::zero());
                oim.iter_mut().for_each(|v| *v = T::zero());
                for j in 0..n {
                    let w = self.twiddles[(j * k) % n];
                    let (xr, xi) = (&sr[j * inner..(j + 1) * inner], &si[j * inner..(j + 1) * inner]);
                    for s in 0..inner {
                        ore[s] += xr[s] * w.re - xi[s] * w.im;
                        oim[s] += xr[s] * w.im + xi[s] * w.re;
                    }
                }
            }
        } else {
            self.work_rows(re, im, &sr, &si, inner, 0, 1, &self.stages, scratch);
        }
        scratch.re = sr;
        scratch.im = si;
        if conjugate {
            im.iter_mut().for_each(|v| *v = -*v);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn work_rows(
        &self,
        ore: &mut [T],
        oim: &mut [T],
        ire: &[T],
        iim: &[T],
        inner: usize,
        offset: usize,
        fstride: usize,
        stages: &[(usize, usize)],
        scratch: &mut RowScratch<T>,
    ) {
        let (p, m) = stages[0];
        if m == 1 {
            for j in 0..p {
                let src = (offset + j * fstride) * inner;
                ore[j * inner..(j + 1) * inner].copy_from_slice(&ire[src..src + inner]);
                oim[j * inner..(j + 1) * inner].copy_from_slice(&iim[src..src + inner]);
            }
        } else {
            let block = m * inner;
            for q in 0..p {
                self.work_rows(
                    &mut ore[q * block..(q + 1) * block],
                    &mut oim[q * block..(q + 1) * block],
                    ire,
                    iim,
                    inner,
                    offset + q * fstride,
                    fstride * p,
                    &stages[1..],
                    scratch,
                );
            }
        }
        match p {
            2 => self.rows2(ore, oim, inner, fstride, m),
            4 => self.rows4(ore, oim, inner, fstride, m),
            _ => self.rows_generic(ore, oim, inner, fstride, p, m, scratch),
        }
    }

    fn rows2(&self, re: &mut [T], im: &mut [T], inner: usize, fstride: usize, m: usize) {
        wide(|| self.rows2_body(re, im, inner, fstride, m))
    }

    #[inline(always)]
    fn rows2_body(&self, re: &mut [T], im: &mut [T], inner: usize, fstride: usize, m: usize) {
        let (r0, r1) = re.split_at_mut(m * inner);
        let (i0, i1) = im.split_at_mut(m * inner);
        for k in 0..m {
            let w = self.twiddles[k * fstride];
            let rows = k * inner..(k + 1) * inner;
            let (ar, ai) = (&mut r0[rows.clone()], &mut i0[rows.clone()]);
            let (br, bi) = (&mut r1[rows.clone()], &mut i1[rows]);
            for s in 0..inner {
                let tr = br[s] * w.re - bi[s] * w.im;
                let ti = br[s] * w.im + bi[s] * w.re;
                br[s] = ar[s] - tr;
                bi[s] = ai[s] - ti;
                ar[s] += tr;
                ai[s] += ti;
            }
        }
    }

    fn rows4(&self, re: &mut [T], im: &mut [T], inner: usize, fstride: usize, m: usize) {
        wide(|| self.rows4_body(re, im, inner, fstride, m))
    }

    #[inline(always)]
    fn rows4_body(&self, re: &mut [T], im: &mut [T], inner: usize, fstride: usize, m: usize) {
        let (r0, rest) = re.split_at_mut(m * inner);
        let (r1, rest) = rest.split_at_mut(m * inner);
        let (r2, r3) = rest.split_at_mut(m * inner);
        let (i0, rest) = im.split_at_mut(m * inner);
        let (i1, rest) = rest.split_at_mut(m * inner);
        let (i2, i3) = rest.split_at_mut(m * inner);
        for k in 0..m {
            let w1 = self.twiddles[k * fstride];
            let w2 = self.twiddles[2 * k * fstride];
            let w3 = self.twiddles[3 * k * fstride];
            let o = k * inner;
            for s in o..o + inner {
                let (a0r, a0i) = (r0[s], i0[s]);
                let (a1r, a1i) = (r1[s] * w1.re - i1[s] * w1.im, r1[s] * w1.im + i1[s] * w1.re);
                let (a2r, a2i) = (r2[s] * w2.re - i2[s] * w2.im, r2[s] * w2.im + i2[s] * w2.re);
                let (a3r, a3i) = (r3[s] * w3.re - i3[s] * w3.im, r3[s] * w3.im + i3[s] * w3.re);
                let (s02r, s02i) = (a0r + a2r, a0i + a2i);
                let (d02r, d02i) = (a0r - a2r, a0i - a2i);
                let (s13r, s13i) = (a1r + a3r, a1i + a3i);
                // -i * (a1 - a3)
                let (d13r, d13i) = (a1i - a3i, a3r - a1r);
                r0[s] = s02r + s13r;
                i0[s] = s02i + s13i;
                r1[s] = d02r + d13r;
                i1[s] = d02i + d13i;
                r2[s] = s02r - s13r;
                i2[s] = s02i - s13i;
                r3[s] = d02r - d13r;
                i3[s] = d02i - d13i;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rows_generic(
        &self,
        re: &mut [T],
        im: &mut [T],
        inner: usize,
        fstride: usize,
        p: usize,
        m: usize,
        scratch: &mut RowScratch<T>,
    ) {
        wide(|| self.rows_generic_body(re, im, inner, fstride, p, m, scratch))
    }

    #[allow(clippy::too_many_arguments)]
    #[inline(always)]
    fn rows_generic_body(
        &self,
        re: &mut [T],
        im: &mut [T],
        inner: usize,
        fstride: usize,
        p: usize,
        m: usize,
        scratch: &mut RowScratch<T>,
    ) {
        let n = self.len;
        scratch.br.resize(p * inner, T::zero());
        scratch.bi.resize(p * inner, T::zero());
        for u in 0..m {
            for q in 0..p {
                let src = (u + q * m) * inner;
                scratch.br[q * inner..(q + 1) * inner].copy_from_slice(&re[src..src + inner]);
                scratch.bi[q * inner..(q + 1) * inner].copy_from_slice(&im[src..src + inner]);
            }
            for r in 0..p {
                let k = u + r * m;
                let (ore, oim) = (&mut re[k * inner..(k + 1) * inner], &mut im[k * inner..(k + 1) * inner]);
                ore.copy_from_slice(&scratch.br[..inner]);
                oim.copy_from_slice(&scratch.bi[..inner]);
                for q in 1..p {
                    let w = self.twiddles[(q * fstride * k) % n];
                    let (xr, xi) = (&scratch.br[q * inner..(q + 1) * inner], &scratch.bi[q * inner..(q + 1) * inner]);
                    for s in 0..inner {
                        ore[s] += xr[s] * w.re - xi[s] * w.im;
                        oim[s] += xr[s] * w.im + xi[s] * w.re;
                    }
                }
            }
        }
    }
}

/// Reference O(n^2) DFT used to validate the fast path.
pub fn dft_direct<T: Scalar>(input: &[Complex<T>], inverse: bool) -> Vec<Complex<T>> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            let mut acc = Complex::new(0.0f64, 0.0f64);
            for (j, x) in input.iter().enumerate() {
                let angle = sign * 2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                let w = Complex::new(angle.cos(), angle.sin());
                acc += Complex::new(x.re.to_f64c(), x.im.to_f64c()) * w;
            }
            if inverse {
                acc /= n as f64;
            }
            Complex::new(T::from_f64c(acc.re), T::from_f64c(acc.im))
        })
        .collect()
}

/// Transforms a planar complex buffer over the listed axes.
///
/// `re` and `im` hold a row-major array of shape `dims`. With `conjugate` the
/// exponent is positive. Every output value is multiplied by `scale`.
pub fn transform_planar<T: Scalar>(
    re: &mut [T],
    im: &mut [T],
    dims: &[usize],
    axes: &[usize],
    conjugate: bool,
    scale: T,
) {
    let total: usize = dims.iter().product();
    assert_eq!(re.len(), total);
    assert_eq!(im.len(), total);
    let mut line = Vec::new();
    let mut scratch = Vec::new();
    let mut rows = RowScratch::default();
    for &axis in axes {
        let len = dims[axis];
        if len <= 1 {
            continue;
        }
        let plan = FftPlan::<T>::new(len);
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        if inner > TILE {
            // gather column tiles so each batch stays in cache
            let (mut tr, mut ti) = (vec![T::zero(); len * TILE], vec![T::zero(); len * TILE]);
            for o in 0..outer {
                let base = o * len * inner;
                for c0 in (0..inner).step_by(TILE) {
                    let w = TILE.min(inner - c0);
                    for k in 0..len {
                        let src = base + k * inner + c0;
                        tr[k * w..(k + 1) * w].copy_from_slice(&re[src..src + w]);
                        ti[k * w..(k + 1) * w].copy_from_slice(&im[src..src + w]);
                    }
                    plan.process_rows(&mut tr[..len * w], &mut ti[..len * w], w, conjugate, &mut rows);
                    for k in 0..len {
                        let dst = base + k * inner + c0;
                        re[dst..dst + w].copy_from_slice(&tr[k * w..(k + 1) * w]);
                        im[dst..dst + w].copy_from_slice(&ti[k * w..(k + 1) * w]);
                    }
                }
            }
            continue;
        }
        if inner > 1 {
            for o in 0..outer {
                let block = o * len * inner..(o + 1) * len * inner;
                plan.process_rows(&mut re[block.clone()], &mut im[block], inner, conjugate, &mut rows);
            }
            continue;
        }
        for o in 0..outer {
            let base = o * len;
            line.clear();
            line.extend((0..len).map(|k| Complex::new(re[base + k], im[base + k])));
            plan.process(&mut line, &mut scratch, conjugate);
            for (k, c) in line.iter().enumerate() {
                re[base + k] = c.re;
                im[base + k] = c.im;
            }
        }
    }
    if scale != T::one() {
        re.iter_mut().for_each(|v| *v *= scale);
        im.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Product of the transformed axis lengths (the inverse normalization).
pub fn transform_size(dims: &[usize], axes: &[usize]) -> usize {
    axes.iter().map(|&a| dims[a]).product()
}
