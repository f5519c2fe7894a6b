//! Dense row-major tensors over `f64` or `Complex64`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Real64,
    Complex128,
}

impl Dtype {
    /// Result dtype of combining two operands.
    pub fn promote(self, other: Dtype) -> Dtype {
        if self == Dtype::Complex128 || other == Dtype::Complex128 {
            Dtype::Complex128
        } else {
            Dtype::Real64
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Real64 => "real64",
            Dtype::Complex128 => "complex128",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real64" => Ok(Dtype::Real64),
            "complex128" => Ok(Dtype::Complex128),
            other => Err(Error::InvalidArgument(format!("unknown dtype `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// Immutable-by-convention dense tensor. Public constructors reject
/// non-finite values and inconsistent shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::EmptyShape);
    }
    Ok(())
}

impl Tensor {
    pub fn real(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        let t = Tensor { shape, data: TensorData::Real(data) };
        t.check_finite("tensor")?;
        Ok(t)
    }

    pub fn complex(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        let t = Tensor { shape, data: TensorData::Complex(data) };
        t.check_finite("tensor")?;
        Ok(t)
    }

    /// Internal constructor for operator outputs whose shape is known-good.
    pub(crate) fn from_real(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data: TensorData::Real(data) }
    }

    pub(crate) fn from_complex(shape: Vec<usize>, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data: TensorData::Complex(data) }
    }

    pub fn zeros(shape: &[usize], dtype: Dtype) -> Result<Self> {
        check_shape(shape)?;
        let n = numel(shape);
        Ok(match dtype {
            Dtype::Real64 => Tensor::from_real(shape.to_vec(), vec![0.0; n]),
            Dtype::Complex128 => Tensor::from_complex(shape.to_vec(), vec![Complex64::new(0.0, 0.0); n]),
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        check_shape(shape)?;
        Tensor::real(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::Real(v) => v.len(),
            TensorData::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::Real(_) => Dtype::Real64,
            TensorData::Complex(_) => Dtype::Complex128,
        }
    }

    pub fn is_complex(&self) -> bool {
        self.dtype() == Dtype::Complex128
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::Real(v) => Some(v),
            TensorData::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&[Complex64]> {
        match &self.data {
            TensorData::Complex(v) => Some(v),
            TensorData::Real(_) => None,
        }
    }

    /// Real data, or an error naming `what` if the tensor is complex.
    pub fn real_data(&self, what: &str) -> Result<&[f64]> {
        self.as_real()
            .ok_or_else(|| Error::InvalidArgument(format!("{what} requires a real64 tensor")))
    }

    pub fn into_real_vec(self) -> Option<Vec<f64>> {
        match self.data {
            TensorData::Real(v) => Some(v),
            TensorData::Complex(_) => None,
        }
    }

    /// Values promoted to complex (copy).
    pub fn to_complex_vec(&self) -> Vec<Complex64> {
        match &self.data {
            TensorData::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            TensorData::Complex(v) => v.clone(),
        }
    }

    pub fn to_complex(&self) -> Tensor {
        Tensor::from_complex(self.shape.clone(), self.to_complex_vec())
    }

    /// Demotion rule: the real part. Real tensors are returned unchanged.
    pub fn real_part(&self) -> Tensor {
        match &self.data {
            TensorData::Real(_) => self.clone(),
            TensorData::Complex(v) => Tensor::from_real(self.shape.clone(), v.iter().map(|z| z.re).collect()),
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        check_shape(&shape)?;
        if numel(&shape) != self.len() {
            return Err(Error::ShapeMismatch(format!("cannot reshape {:?} to {:?}", self.shape, shape)));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        let ok = match &self.data {
            TensorData::Real(v) => v.iter().all(|x| x.is_finite()),
            TensorData::Complex(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{op}: {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Σ aᵢ·conj(bᵢ).
    pub fn dot(&self, other: &Tensor) -> Result<Complex64> {
        self.same_shape(other, "dot")?;
        Ok(match (&self.data, &other.data) {
            (TensorData::Real(a), TensorData::Real(b)) => {
                Complex64::new(a.iter().zip(b).map(|(x, y)| x * y).sum(), 0.0)
            }
            _ => {
                let a = self.to_complex_vec();
                let b = other.to_complex_vec();
                a.iter().zip(&b).map(|(x, y)| x * y.conj()).sum()
            }
        })
    }

    pub fn norm_sq(&self) -> f64 {
        match &self.data {
            TensorData::Real(v) => v.iter().map(|x| x * x).sum(),
            TensorData::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> Tensor {
        match &self.data {
            TensorData::Real(v) => Tensor::from_real(self.shape.clone(), v.iter().map(|x| x * s).collect()),
            TensorData::Complex(v) => Tensor::from_complex(self.shape.clone(), v.iter().map(|x| x * s).collect()),
        }
    }

    pub fn scale_complex(&self, s: Complex64) -> Tensor {
        Tensor::from_complex(self.shape.clone(), self.to_complex_vec().into_iter().map(|x| x * s).collect())
    }

    /// self + s·other, promoting dtype as needed.
    pub fn axpy(&self, s: f64, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "axpy")?;
        Ok(match (&self.data, &other.data) {
            (TensorData::Real(a), TensorData::Real(b)) => {
                Tensor::from_real(self.shape.clone(), a.iter().zip(b).map(|(x, y)| x + s * y).collect())
            }
            _ => {
                let a = self.to_complex_vec();
                let b = other.to_complex_vec();
                Tensor::from_complex(self.shape.clone(), a.iter().zip(&b).map(|(x, y)| x + y * s).collect())
            }
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.axpy(-1.0, other)
    }

    /// Element-wise map over real data.
    pub fn map_real(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let v = self.real_data("map_real")?;
        Ok(Tensor::from_real(self.shape.clone(), v.iter().map(|&x| f(x)).collect()))
    }

    pub fn max_abs(&self) -> f64 {
        match &self.data {
            TensorData::Real(v) => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
            TensorData::Complex(v) => v.iter().fold(0.0_f64, |m, z| m.max(z.norm())),
        }
    }

    pub fn sum_real(&self) -> f64 {
        match &self.data {
            TensorData::Real(v) => v.iter().sum(),
            TensorData::Complex(v) => v.iter().map(|z| z.re).sum(),
        }
    }
}

/// Free-function form of [`Tensor::dot`].
pub fn dot(a: &Tensor, b: &Tensor) -> Result<Complex64> {
    a.dot(b)
}

/// i.i.d. standard normal real64 tensor.
pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    check_shape(shape)?;
    let n = numel(shape);
    Ok(Tensor::from_real(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()))
}

/// Complex normal with independent standard normal real and imaginary parts.
pub fn gaussian_complex(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    check_shape(shape)?;
    let n = numel(shape);
    Ok(Tensor::from_complex(
        shape.to_vec(),
        (0..n).map(|_| Complex64::new(rng.normal(), rng.normal())).collect(),
    ))
}

pub fn gaussian_like(rng: &mut Rng, shape: &[usize], dtype: Dtype) -> Result<Tensor> {
    match dtype {
        Dtype::Real64 => gaussian(rng, shape),
        Dtype::Complex128 => gaussian_complex(rng, shape),
    }
}

/// Row-major strides.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_is_deterministic_per_seed() {
        let a = gaussian(&mut Rng::new(0), &[2]).unwrap();
        let b = gaussian(&mut Rng::new(0), &[2]).unwrap();
        assert_eq!(a, b);
        assert!(a.as_real().unwrap().iter().all(|x| x.is_finite()));
        let c = gaussian(&mut Rng::new(1), &[2]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_sample_mean_near_zero() {
        let t = gaussian(&mut Rng::new(0), &[10000]).unwrap();
        let v = t.as_real().unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn gaussian_rejects_empty_shape() {
        let err = gaussian(&mut Rng::new(0), &[0]).unwrap_err();
        assert_eq!(err.to_string(), "empty shape");
        assert!(gaussian(&mut Rng::new(0), &[]).is_err());
    }

    #[test]
    fn dot_examples() {
        let a = Tensor::real(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::real(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(dot(&a, &b).unwrap().re, 11.0);
        let z = Tensor::zeros(&[2], Dtype::Real64).unwrap();
        assert_eq!(dot(&z, &z).unwrap().re, 0.0);
        assert_eq!(dot(&a, &z).unwrap().re, 0.0);
        let c = Tensor::real(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(dot(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn constructors_reject_nan_and_bad_lengths() {
        assert!(matches!(Tensor::real(vec![1], vec![f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(Tensor::real(vec![2], vec![1.0]), Err(Error::ShapeMismatch(_))));
        assert!(Tensor::complex(vec![1], vec![Complex64::new(0.0, f64::INFINITY)]).is_err());
    }
}
