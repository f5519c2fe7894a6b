//! Poisson-Gaussian measurement noise, applied after the deterministic chain.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorData};

/// `photons_per_unit` converts measurement units to photon counts;
/// `read_sigma` is the read-noise std in photons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub photons_per_unit: f64,
    pub read_sigma: f64,
}

impl NoiseModel {
    pub fn new(photons_per_unit: f64, read_sigma: f64) -> Result<Self> {
        if !(photons_per_unit > 0.0) || !photons_per_unit.is_finite() || !(read_sigma >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "noise: photons_per_unit must be positive and read_sigma non-negative (got {photons_per_unit}, {read_sigma})"
            )));
        }
        Ok(NoiseModel { photons_per_unit, read_sigma })
    }

    /// Non-negative real entries get exact Poisson shot noise; negative
    /// and complex entries get the Gaussian approximation with matching
    /// variance per component.
    pub fn apply(&self, y: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let n = self.photons_per_unit;
        let read = self.read_sigma / n;
        let out = match y.data() {
            TensorData::Real(v) => {
                let data = v
                    .iter()
                    .map(|&val| {
                        let shot = if val >= 0.0 {
                            rng.poisson(val * n) / n
                        } else {
                            val + (val.abs() / n).sqrt() * rng.normal()
                        };
                        shot + read * rng.normal()
                    })
                    .collect();
                Tensor::real(y.shape().to_vec(), data)?
            }
            TensorData::Complex(v) => {
                let data = v
                    .iter()
                    .map(|&z| {
                        let sd = (z.norm() / (2.0 * n) + read * read).sqrt();
                        z + Complex64::new(sd * rng.normal(), sd * rng.normal())
                    })
                    .collect();
                Tensor::complex(y.shape().to_vec(), data)?
            }
        };
        Ok(out)
    }
}
