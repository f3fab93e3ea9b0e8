//! Complex arrays.
//!
//! On a tape a complex array of shape `s` is a real [`Var`] of shape `[2, s..]`
//! holding the real plane followed by the imaginary plane. Gradients follow
//! the usual convention for real losses: the gradient of a complex entry is
//! `dL/d(re) + i dL/d(im)`, so a complex-linear map `y = M x` pulls back as
//! `g_x = M^H g_y`.

use crate::error::{mismatch, DiffError, Result};
use crate::fft::{transform_planar, transform_size};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Complex array stored as separate real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(mismatch("complex", re.shape(), im.shape()));
        }
        Ok(Self { re, im })
    }

    pub fn from_real(re: Tensor<T>) -> Self {
        let im = Tensor::zeros_like(&re);
        Self { re, im }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    /// Packs into the `[2, shape..]` planar layout used on tapes.
    pub fn to_packed(&self) -> Tensor<T> {
        let mut shape = vec![2];
        shape.extend_from_slice(self.shape());
        let mut data = self.re.to_vec();
        data.extend_from_slice(self.im.data());
        Tensor::new(shape, data).expect("packed size")
    }

    pub fn from_packed(packed: &Tensor<T>) -> Result<Self> {
        let (half, shape) = split_packed(packed.shape(), "from_packed")?;
        let data = packed.data();
        Ok(Self {
            re: Tensor::new(shape.clone(), data[..half].to_vec())?,
            im: Tensor::new(shape, data[half..].to_vec())?,
        })
    }

    /// Unnormalized forward DFT (or normalized inverse) over `axes`.
    pub fn dft(&self, axes: &[usize], inverse: bool) -> Result<Self> {
        check_axes(self.shape(), axes)?;
        let mut re = self.re.clone();
        let mut im = self.im.clone();
        let scale =
            if inverse { T::one() / T::from_usize(transform_size(self.shape(), axes)).unwrap() } else { T::one() };
        let dims = self.shape().to_vec();
        transform_planar(re.data_mut(), im.data_mut(), &dims, axes, inverse, scale);
        Ok(Self { re, im })
    }

    /// Squared modulus per entry.
    pub fn abs2(&self) -> Tensor<T> {
        self.re.zip_map(&self.im, "abs2", |a, b| a * a + b * b).unwrap()
    }
}

fn split_packed(shape: &[usize], op: &'static str) -> Result<(usize, Vec<usize>)> {
    if shape.first() != Some(&2) {
        return Err(DiffError::InvalidArgument(format!("{op}: expected leading axis 2, got {shape:?}")));
    }
    let inner = shape[1..].to_vec();
    Ok((inner.iter().product(), inner))
}

fn check_axes(shape: &[usize], axes: &[usize]) -> Result<()> {
    for &a in axes {
        if a >= shape.len() {
            return Err(DiffError::InvalidArgument(format!("axis {a} out of range for {shape:?}")));
        }
    }
    Ok(())
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Real array to packed complex with zero imaginary part.
    pub fn to_complex(&self) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        let value = ComplexTensor::from_real(self.value().clone()).to_packed();
        let n = self.value().len();
        self.tape().record(value, &[self], move |_| {
            Box::new(move |g| vec![Some(Tensor::new(shape.clone(), g.data()[..n].to_vec()).unwrap())])
        })
    }

    /// Real plane of a packed complex array.
    pub fn complex_re(&self) -> Result<Var<'t, T>> {
        let (half, inner) = split_packed(self.shape(), "complex_re")?;
        let value = Tensor::new(inner, self.value().data()[..half].to_vec())?;
        let packed = self.shape().to_vec();
        Ok(self.tape().record(value, &[self], move |_| {
            Box::new(move |g| {
                let mut d = g.to_vec();
                d.resize(2 * half, T::zero());
                vec![Some(Tensor::new(packed.clone(), d).unwrap())]
            })
        }))
    }

    /// Squared modulus of a packed complex array.
    pub fn complex_abs2(&self) -> Result<Var<'t, T>> {
        let (half, inner) = split_packed(self.shape(), "complex_abs2")?;
        let z = self.value().clone();
        let d = z.data();
        let value = Tensor::new(inner, (0..half).map(|i| d[i] * d[i] + d[half + i] * d[half + i]).collect())?;
        let packed = self.shape().to_vec();
        let two = T::from_f64c(2.0);
        Ok(self.tape().record(value, &[self], move |_| {
            Box::new(move |g| {
                let zd = z.data();
                let gd = g.data();
                let mut out = vec![T::zero(); 2 * half];
                for i in 0..half {
                    out[i] = two * zd[i] * gd[i];
                    out[half + i] = two * zd[half + i] * gd[i];
                }
                vec![Some(Tensor::new(packed.clone(), out).unwrap())]
            })
        }))
    }

    /// Elementwise product of two packed complex arrays.
    pub fn complex_mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other);
        if self.shape() != other.shape() {
            return Err(mismatch("complex_mul", self.shape(), other.shape()));
        }
        let (half, _) = split_packed(self.shape(), "complex_mul")?;
        let shape = self.shape().to_vec();
        let cmul = move |a: &[T], b: &[T], conj_b: bool| {
            let mut out = vec![T::zero(); 2 * half];
            for i in 0..half {
                let (ar, ai) = (a[i], a[half + i]);
                let (br, bi) = (b[i], if conj_b { -b[half + i] } else { b[half + i] });
                out[i] = ar * br - ai * bi;
                out[half + i] = ar * bi + ai * br;
            }
            out
        };
        let value = Tensor::new(shape.clone(), cmul(self.value().data(), other.value().data(), false))?;
        let (a, b) = (self.value().clone(), other.value().clone());
        Ok(self.tape().record(value, &[self, other], move |needs| {
            Box::new(move |g| {
                vec![
                    needs[0].then(|| Tensor::new(shape.clone(), cmul(g.data(), b.data(), true)).unwrap()),
                    needs[1].then(|| Tensor::new(shape.clone(), cmul(g.data(), a.data(), true)).unwrap()),
                ]
            })
        }))
    }

    /// DFT of a packed complex array over `axes` (indices into the complex
    /// shape, i.e. excluding the leading 2). Forward is unnormalized; inverse
    /// divides by the product of the transformed lengths.
    pub fn dft(&self, axes: &[usize], inverse: bool) -> Result<Var<'t, T>> {
        let (half, inner) = split_packed(self.shape(), "dft")?;
        check_axes(&inner, axes)?;
        let axes = axes.to_vec();
        let n = T::from_usize(transform_size(&inner, &axes)).unwrap();
        let scale = if inverse { T::one() / n } else { T::one() };
        let run = {
            let inner = inner.clone();
            let axes = axes.clone();
            move |src: &[T], conjugate: bool| {
                let mut re = src[..half].to_vec();
                let mut im = src[half..].to_vec();
                transform_planar(&mut re, &mut im, &inner, &axes, conjugate, scale);
                re.extend_from_slice(&im);
                re
            }
        };
        let value = Tensor::new(self.shape().to_vec(), run(self.value().data(), inverse))?;
        let shape = self.shape().to_vec();
        Ok(self.tape().record(value, &[self], move |_| {
            // the adjoint flips the exponent sign and keeps the scale
            Box::new(move |g| vec![Some(Tensor::new(shape.clone(), run(g.data(), !inverse)).unwrap())])
        }))
    }
}
