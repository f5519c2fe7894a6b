//! The two pointwise primitive families: detector responses (D) and
//! in-chain nonlinear physics (Λ). Each family has at most two scalars
//! (polynomials carry up to six coefficients).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Tensor, TensorData};

use super::params::{ParamReader, ParamValue, Params};

pub const MAX_POLY_DEGREE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DetectFamily {
    /// η(x) = g·x
    LinearField { gain: f64 },
    /// η(x) = g·ln(x + offset), x > −offset
    Logarithmic { gain: f64, offset: f64 },
    /// η(x) = g / (1 + exp(−k·x))
    Sigmoid { gain: f64, slope: f64 },
    /// η(x) = g·|x|²
    IntensitySquare { gain: f64 },
    /// η(x) = g·Re(x·e^{−iφ}), quadrature detection against a reference phase
    CoherentField { gain: f64, phase: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TransformFamily {
    /// e^{−αx}
    ExpAttenuation { alpha: f64 },
    /// ln(1 + c·x), c > 0, x > −1/c
    LogCompression { c: f64 },
    /// arg(e^{ix}) ∈ (−π, π]
    PhaseWrap,
    /// Σ a_k x^k, degree ≤ 5
    Polynomial { coeffs: Vec<f64> },
    /// clamp(x, lo, hi)
    Saturation { lo: f64, hi: f64 },
}

fn domain(family: &str, detail: impl Into<String>) -> Error {
    Error::Domain { family: family.to_string(), detail: detail.into() }
}

fn real_input<'a>(family: &str, x: &'a Tensor) -> Result<&'a [f64]> {
    x.as_real().ok_or_else(|| domain(family, "requires real input"))
}

/// Wrap into (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = x - two_pi * ((x - std::f64::consts::PI) / two_pi).ceil();
    if w <= -std::f64::consts::PI {
        w + two_pi
    } else {
        w
    }
}

impl DetectFamily {
    pub fn name(&self) -> &'static str {
        match self {
            DetectFamily::LinearField { .. } => "linear_field",
            DetectFamily::Logarithmic { .. } => "logarithmic",
            DetectFamily::Sigmoid { .. } => "sigmoid",
            DetectFamily::IntensitySquare { .. } => "intensity_square",
            DetectFamily::CoherentField { .. } => "coherent_field",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, DetectFamily::LinearField { .. })
    }

    pub fn gain(&self) -> f64 {
        match *self {
            DetectFamily::LinearField { gain }
            | DetectFamily::Logarithmic { gain, .. }
            | DetectFamily::Sigmoid { gain, .. }
            | DetectFamily::IntensitySquare { gain }
            | DetectFamily::CoherentField { gain, .. } => gain,
        }
    }

    pub(crate) fn from_params(p: &Params) -> Result<Self> {
        let r = ParamReader::new("Detect", p);
        r.only(&["family", "gain", "p2"])?;
        let gain = r.scalar_or("gain", 1.0)?;
        let p2 = r.scalar_opt("p2")?;
        let fam = match r.text("family")? {
            "linear_field" => DetectFamily::LinearField { gain },
            "logarithmic" => DetectFamily::Logarithmic { gain, offset: p2.unwrap_or(1.0) },
            "sigmoid" => DetectFamily::Sigmoid { gain, slope: p2.unwrap_or(1.0) },
            "intensity_square" => DetectFamily::IntensitySquare { gain },
            "coherent_field" => DetectFamily::CoherentField { gain, phase: p2.unwrap_or(0.0) },
            other => return Err(Error::InvalidParam(format!("Detect: unknown family `{other}`"))),
        };
        fam.validate()?;
        Ok(fam)
    }

    pub(crate) fn to_params(&self) -> Params {
        let mut p = Params::new();
        p.insert("family".into(), ParamValue::from(self.name()));
        p.insert("gain".into(), ParamValue::from(self.gain()));
        match *self {
            DetectFamily::Logarithmic { offset: v, .. }
            | DetectFamily::Sigmoid { slope: v, .. }
            | DetectFamily::CoherentField { phase: v, .. } => {
                p.insert("p2".into(), ParamValue::from(v));
            }
            _ => {}
        }
        p
    }

    fn validate(&self) -> Result<()> {
        if !self.gain().is_finite() {
            return Err(domain(self.name(), "gain must be finite"));
        }
        if let DetectFamily::Logarithmic { offset, .. } = self {
            if !offset.is_finite() {
                return Err(domain("logarithmic", "offset must be finite"));
            }
        }
        Ok(())
    }

    pub fn output_dtype(&self, input: Dtype) -> Dtype {
        match self {
            DetectFamily::LinearField { .. } => input,
            _ => Dtype::Real64,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        let out = match *self {
            DetectFamily::LinearField { gain } => return Ok(x.scale(gain)),
            DetectFamily::Logarithmic { gain, offset } => {
                let v = real_input("logarithmic", x)?;
                if let Some(bad) = v.iter().find(|&&t| t <= -offset) {
                    return Err(domain("logarithmic", format!("input {bad} <= -offset {}", -offset)));
                }
                v.iter().map(|&t| gain * (t + offset).ln()).collect()
            }
            DetectFamily::Sigmoid { gain, slope } => {
                let v = real_input("sigmoid", x)?;
                v.iter().map(|&t| gain / (1.0 + (-slope * t).exp())).collect()
            }
            DetectFamily::IntensitySquare { gain } => match x.data() {
                TensorData::Real(v) => v.iter().map(|t| gain * t * t).collect(),
                TensorData::Complex(v) => v.iter().map(|z| gain * z.norm_sqr()).collect(),
            },
            DetectFamily::CoherentField { gain, phase } => {
                let rot = Complex64::from_polar(1.0, -phase);
                x.to_complex_vec().iter().map(|z| gain * (z * rot).re).collect()
            }
        };
        let t = Tensor::from_real(shape, out);
        t.check_finite(self.name())?;
        Ok(t)
    }

    /// Lipschitz constant on the box |x| ≤ bound.
    pub fn lipschitz(&self, bound: f64) -> Result<f64> {
        let b = bound.abs();
        Ok(match *self {
            DetectFamily::LinearField { gain } => gain.abs(),
            DetectFamily::Logarithmic { gain, offset } => {
                if b >= offset {
                    return Err(domain("logarithmic", format!("box bound {b} reaches the singularity at -{offset}")));
                }
                gain.abs() / (offset - b)
            }
            DetectFamily::Sigmoid { gain, slope } => (gain * slope).abs() / 4.0,
            DetectFamily::IntensitySquare { gain } => 2.0 * gain.abs() * b,
            DetectFamily::CoherentField { gain, .. } => gain.abs(),
        })
    }
}

impl TransformFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TransformFamily::ExpAttenuation { .. } => "exp_attenuation",
            TransformFamily::LogCompression { .. } => "log_compression",
            TransformFamily::PhaseWrap => "phase_wrap",
            TransformFamily::Polynomial { .. } => "polynomial",
            TransformFamily::Saturation { .. } => "saturation",
        }
    }

    pub(crate) fn from_params(p: &Params) -> Result<Self> {
        let r = ParamReader::new("Transform", p);
        r.only(&["family", "p1", "p2", "coeffs"])?;
        let fam = match r.text("family")? {
            "exp_attenuation" => TransformFamily::ExpAttenuation { alpha: r.scalar_or("p1", 1.0)? },
            "log_compression" => TransformFamily::LogCompression { c: r.scalar_or("p1", 1.0)? },
            "phase_wrap" => TransformFamily::PhaseWrap,
            "polynomial" => TransformFamily::Polynomial { coeffs: r.list("coeffs")? },
            "saturation" => TransformFamily::Saturation { lo: r.scalar_or("p1", 0.0)?, hi: r.scalar_or("p2", 1.0)? },
            other => return Err(Error::InvalidParam(format!("Transform: unknown family `{other}`"))),
        };
        fam.validate()?;
        Ok(fam)
    }

    pub(crate) fn to_params(&self) -> Params {
        let mut p = Params::new();
        p.insert("family".into(), ParamValue::from(self.name()));
        match self {
            TransformFamily::ExpAttenuation { alpha } => {
                p.insert("p1".into(), ParamValue::from(*alpha));
            }
            TransformFamily::LogCompression { c } => {
                p.insert("p1".into(), ParamValue::from(*c));
            }
            TransformFamily::PhaseWrap => {}
            TransformFamily::Polynomial { coeffs } => {
                p.insert("coeffs".into(), ParamValue::from(coeffs.clone()));
            }
            TransformFamily::Saturation { lo, hi } => {
                p.insert("p1".into(), ParamValue::from(*lo));
                p.insert("p2".into(), ParamValue::from(*hi));
            }
        }
        p
    }

    fn validate(&self) -> Result<()> {
        match self {
            TransformFamily::LogCompression { c } if *c <= 0.0 => {
                Err(domain("log_compression", "c must be positive"))
            }
            TransformFamily::Polynomial { coeffs } if coeffs.is_empty() || coeffs.len() > MAX_POLY_DEGREE + 1 => {
                Err(domain("polynomial", format!("degree must be in 0..={MAX_POLY_DEGREE}")))
            }
            TransformFamily::Saturation { lo, hi } if lo >= hi => {
                Err(domain("saturation", format!("bounds out of order: lo {lo} >= hi {hi}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let v = real_input(self.name(), x)?;
        let out: Vec<f64> = match self {
            TransformFamily::ExpAttenuation { alpha } => v.iter().map(|t| (-alpha * t).exp()).collect(),
            TransformFamily::LogCompression { c } => {
                if let Some(bad) = v.iter().find(|&&t| 1.0 + c * t <= 0.0) {
                    return Err(domain("log_compression", format!("input {bad} <= -1/c")));
                }
                v.iter().map(|t| (1.0 + c * t).ln()).collect()
            }
            TransformFamily::PhaseWrap => v.iter().map(|&t| wrap_phase(t)).collect(),
            TransformFamily::Polynomial { coeffs } => v
                .iter()
                .map(|&t| coeffs.iter().rev().fold(0.0, |acc, a| acc * t + a))
                .collect(),
            TransformFamily::Saturation { lo, hi } => v.iter().map(|t| t.clamp(*lo, *hi)).collect(),
        };
        let t = Tensor::from_real(x.shape().to_vec(), out);
        t.check_finite(self.name())?;
        Ok(t)
    }

    /// Lipschitz constant on the box |x| ≤ bound (almost-everywhere for the
    /// piecewise families).
    pub fn lipschitz(&self, bound: f64) -> Result<f64> {
        let b = bound.abs();
        Ok(match self {
            TransformFamily::ExpAttenuation { alpha } => alpha.abs() * (alpha.abs() * b).exp(),
            TransformFamily::LogCompression { c } => {
                if c * b >= 1.0 {
                    return Err(domain("log_compression", format!("box bound {b} reaches the singularity at -1/c")));
                }
                c / (1.0 - c * b)
            }
            TransformFamily::PhaseWrap | TransformFamily::Saturation { .. } => 1.0,
            TransformFamily::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, a)| k as f64 * a.abs() * b.powi(k as i32 - 1))
                .sum(),
        })
    }
}

/// Free-function forms.
pub fn detect_apply(d: &DetectFamily, x: &Tensor) -> Result<Tensor> {
    d.apply(x)
}

pub fn transform_apply(t: &TransformFamily, x: &Tensor) -> Result<Tensor> {
    t.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(v: &[f64]) -> Tensor {
        Tensor::real(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn family_examples() {
        let y = detect_apply(&DetectFamily::LinearField { gain: 2.0 }, &r(&[1.0, 2.0])).unwrap();
        assert_eq!(y.as_real().unwrap(), &[2.0, 4.0]);
        let y = transform_apply(&TransformFamily::ExpAttenuation { alpha: 1.0 }, &r(&[0.0])).unwrap();
        assert_eq!(y.as_real().unwrap(), &[1.0]);
        let z = Tensor::complex(vec![1], vec![Complex64::new(3.0, 4.0)]).unwrap();
        let y = detect_apply(&DetectFamily::IntensitySquare { gain: 1.0 }, &z).unwrap();
        assert_eq!(y.as_real().unwrap(), &[25.0]);
    }

    #[test]
    fn domain_violations_name_the_family() {
        let e = DetectFamily::Logarithmic { gain: 1.0, offset: 1.0 }.apply(&r(&[-2.0])).unwrap_err();
        assert!(e.to_string().contains("logarithmic"));
        let e = TransformFamily::Saturation { lo: 1.0, hi: 0.0 }.validate().unwrap_err();
        assert!(e.to_string().contains("saturation"));
        let e = TransformFamily::Polynomial { coeffs: vec![1.0; 7] }.validate().unwrap_err();
        assert!(e.to_string().contains("polynomial"));
    }

    #[test]
    fn lipschitz_is_finite_on_declared_boxes() {
        let fams = [
            DetectFamily::LinearField { gain: 2.0 },
            DetectFamily::Logarithmic { gain: 1.0, offset: 2.0 },
            DetectFamily::Sigmoid { gain: 1.0, slope: 3.0 },
            DetectFamily::IntensitySquare { gain: 1.0 },
            DetectFamily::CoherentField { gain: 1.0, phase: 0.3 },
        ];
        for f in &fams {
            assert!(f.lipschitz(1.0).unwrap().is_finite());
        }
        assert!(DetectFamily::Logarithmic { gain: 1.0, offset: 1.0 }.lipschitz(1.0).is_err());
    }

    #[test]
    fn wrap_endpoints() {
        let pi = std::f64::consts::PI;
        assert!((wrap_phase(pi) - pi).abs() < 1e-15);
        assert!((wrap_phase(-pi) - pi).abs() < 1e-12);
        assert!((wrap_phase(3.0 * pi) - pi).abs() < 1e-12);
        assert!((wrap_phase(0.5)).eq(&0.5));
    }

    proptest! {
        #[test]
        fn phase_wrap_and_saturation_ranges(v in proptest::collection::vec(-100.0f64..100.0, 1..50)) {
            let pi = std::f64::consts::PI;
            let w = TransformFamily::PhaseWrap.apply(&r(&v)).unwrap();
            for &x in w.as_real().unwrap() {
                prop_assert!(x > -pi && x <= pi);
            }
            let s = TransformFamily::Saturation { lo: -1.5, hi: 2.0 }.apply(&r(&v)).unwrap();
            for &x in s.as_real().unwrap() {
                prop_assert!((-1.5..=2.0).contains(&x));
            }
        }

        #[test]
        fn pointwise_commutes_with_permutation(v in proptest::collection::vec(-3.0f64..3.0, 2..30), rot in 1usize..29) {
            let k = rot % v.len();
            let mut p = v.clone();
            p.rotate_left(k);
            let fams: Vec<Box<dyn Fn(&Tensor) -> Tensor>> = vec![
                Box::new(|t| DetectFamily::Sigmoid { gain: 1.0, slope: 2.0 }.apply(t).unwrap()),
                Box::new(|t| DetectFamily::IntensitySquare { gain: 0.5 }.apply(t).unwrap()),
                Box::new(|t| TransformFamily::Polynomial { coeffs: vec![0.1, 1.0, -0.5, 0.2] }.apply(t).unwrap()),
                Box::new(|t| TransformFamily::ExpAttenuation { alpha: 0.7 }.apply(t).unwrap()),
            ];
            for f in &fams {
                let mut a = f(&r(&v)).as_real().unwrap().to_vec();
                a.rotate_left(k);
                let b = f(&r(&p));
                prop_assert_eq!(&a[..], b.as_real().unwrap());
            }
        }
    }
}
