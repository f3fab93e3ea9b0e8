//! Reductions, normalization and neighborhood aggregation.

use std::sync::Arc;

use crate::error::{DiffError, Result};
use crate::ops::Segments;
use crate::scalar::Scalar;
use crate::simd::wide;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Scalar> Var<'t, T> {
    /// Sums out one axis.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(DiffError::InvalidArgument(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value().data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.tape().record(value, &[self], move |_| {
            Box::new(move |g| {
                let gd = g.data();
                let mut d = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        d.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::new(shape.clone(), d).unwrap())]
            })
        }))
    }

    /// Standardizes every channel (last axis) over all other axes:
    /// zero mean, unit variance (biased), with `eps` added to the variance.
    pub fn instance_norm(&self, eps: T) -> Result<Var<'t, T>> {
        let shape = self.shape().to_vec();
        let c = *shape.last().ok_or_else(|| DiffError::InvalidArgument("instance_norm of a scalar".into()))?;
        let p = self.value().len() / c.max(1);
        if p == 0 {
            return Err(DiffError::InvalidArgument("instance_norm of an empty tensor".into()));
        }
        let pn = T::from_usize(p).unwrap();
        let x = self.value().data();
        let mut mean = vec![T::zero(); c];
        for row in x.chunks(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= pn);
        let mut var = vec![T::zero(); c];
        for row in x.chunks(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s / pn + eps).sqrt()).collect();
        let mut y = x.to_vec();
        for row in y.chunks_mut(c) {
            for ((v, &m), &is) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * is;
            }
        }
        let value = Tensor::new(shape.clone(), y)?;
        let yt = value.clone();
        Ok(self.tape().record(value, &[self], move |_| {
            Box::new(move |g| {
                let (gd, yd) = (g.data(), yt.data());
                let mut gm = vec![T::zero(); c];
                let mut gym = vec![T::zero(); c];
                for (grow, yrow) in gd.chunks(c).zip(yd.chunks(c)) {
                    for j in 0..c {
                        gm[j] += grow[j];
                        gym[j] += grow[j] * yrow[j];
                    }
                }
                gm.iter_mut().for_each(|v| *v /= pn);
                gym.iter_mut().for_each(|v| *v /= pn);
                let mut d = vec![T::zero(); gd.len()];
                for ((drow, grow), yrow) in d.chunks_mut(c).zip(gd.chunks(c)).zip(yd.chunks(c)) {
                    for j in 0..c {
                        drow[j] = inv_std[j] * (grow[j] - gm[j] - yrow[j] * gym[j]);
                    }
                }
                vec![Some(Tensor::new(shape.clone(), d).unwrap())]
            })
        }))
    }

    /// Mean of kernel-weighted messages over each destination's edges.
    ///
    /// `self` holds source values `[Ns, G, C]` and `kernel` one row per edge
    /// `[E, C]`. For every destination `d` and every selected slice `s` the
    /// output `[Nd, slices.len(), C]` is
    /// `mean_{e in d} kernel[e] * values[src(e), slices[s]]`.
    /// Destinations without edges produce zeros.
    pub fn kernel_aggregate(
        &self,
        kernel: &Var<'t, T>,
        segments: Arc<Segments>,
        slices: Arc<Vec<usize>>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(kernel);
        let vs = self.shape().to_vec();
        let ks = kernel.shape().to_vec();
        if vs.len() != 3 || ks.len() != 2 || ks[1] != vs[2] || ks[0] != segments.num_edges() {
            return Err(DiffError::InvalidArgument(format!(
                "kernel_aggregate: values {vs:?}, kernel {ks:?}, {} edges",
                segments.num_edges()
            )));
        }
        let (ns, g, c) = (vs[0], vs[1], vs[2]);
        if let Some(&bad) = segments.sources.iter().find(|&&s| s >= ns) {
            return Err(DiffError::InvalidArgument(format!("edge source {bad} out of {ns}")));
        }
        if let Some(&bad) = slices.iter().find(|&&s| s >= g) {
            return Err(DiffError::InvalidArgument(format!("slice {bad} out of {g}")));
        }
        let nd = segments.num_destinations();
        let gs = slices.len();
        let vals = self.value().clone();
        let kern = kernel.value().clone();
        let (vd, kd) = (vals.data(), kern.data());
        let mut out = vec![T::zero(); nd * gs * c];
        wide(|| {
            for d in 0..nd {
                let (lo, hi) = (segments.offsets[d], segments.offsets[d + 1]);
                if hi == lo {
                    continue;
                }
                let inv = T::one() / T::from_usize(hi - lo).unwrap();
                for e in lo..hi {
                    let src = segments.sources[e];
                    let k = &kd[e * c..(e + 1) * c];
                    for (s, &slice) in slices.iter().enumerate() {
                        let v = &vd[(src * g + slice) * c..(src * g + slice + 1) * c];
                        let o = &mut out[(d * gs + s) * c..(d * gs + s + 1) * c];
                        for j in 0..c {
                            o[j] += inv * k[j] * v[j];
                        }
                    }
                }
            }
        });
        let value = Tensor::new(vec![nd, gs, c], out)?;
        Ok(self.tape().record(value, &[self, kernel], move |needs| {
            Box::new(move |grad| {
                let gd = grad.data();
                let (vd, kd) = (vals.data(), kern.data());
                let mut dv = needs[0].then(|| vec![T::zero(); ns * g * c]);
                let mut dk = needs[1].then(|| vec![T::zero(); kd.len()]);
                for d in 0..nd {
                    let (lo, hi) = (segments.offsets[d], segments.offsets[d + 1]);
                    if hi == lo {
                        continue;
                    }
                    let inv = T::one() / T::from_usize(hi - lo).unwrap();
                    for e in lo..hi {
                        let src = segments.sources[e];
                        for (s, &slice) in slices.iter().enumerate() {
                            let go = &gd[(d * gs + s) * c..(d * gs + s + 1) * c];
                            let vrange = (src * g + slice) * c..(src * g + slice + 1) * c;
                            if let Some(dk) = dk.as_mut() {
                                let v = &vd[vrange.clone()];
                                for (j, slot) in dk[e * c..(e + 1) * c].iter_mut().enumerate() {
                                    *slot += inv * go[j] * v[j];
                                }
                            }
                            if let Some(dv) = dv.as_mut() {
                                let k = &kd[e * c..(e + 1) * c];
                                for (j, slot) in dv[vrange].iter_mut().enumerate() {
                                    *slot += inv * go[j] * k[j];
                                }
                            }
                        }
                    }
                }
                vec![
                    dv.map(|d| Tensor::new(vec![ns, g, c], d).unwrap()),
                    dk.map(|d| Tensor::new(ks.clone(), d).unwrap()),
                ]
            })
        }))
    }
}
