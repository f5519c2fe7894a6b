//! The eleven canonical primitives, their typed parameters, forward and
//! adjoint maps, and randomized adjoint certification.
//!
//! Shape conventions: images are `[rows, cols]`, spectral or temporal
//! cubes are `[rows, cols, bands]`. Spatial operators act on the two
//! leading axes and treat trailing axes as independent slices.

mod fft;
pub mod kernels;
pub mod noise;
pub mod params;
pub mod pointwise;

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gaussian_like, numel, Dtype, Tensor, TensorData};

pub use fft::{fft_axes, freq_index};
use kernels::{circ_conv, gaussian_kernel, shift_last_axis, BandShift, Field, RadonGeometry};
pub use noise::NoiseModel;
pub use params::{ArrayParam, ParamValue, Params};
use params::ParamReader;
pub use pointwise::{detect_apply, transform_apply, DetectFamily, TransformFamily};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Propagate,
    Modulate,
    Project,
    Encode,
    Convolve,
    Accumulate,
    Detect,
    Sample,
    Disperse,
    Scatter,
    Transform,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 11] = [
        PrimitiveKind::Propagate,
        PrimitiveKind::Modulate,
        PrimitiveKind::Project,
        PrimitiveKind::Encode,
        PrimitiveKind::Convolve,
        PrimitiveKind::Accumulate,
        PrimitiveKind::Detect,
        PrimitiveKind::Sample,
        PrimitiveKind::Disperse,
        PrimitiveKind::Scatter,
        PrimitiveKind::Transform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Propagate => "Propagate",
            PrimitiveKind::Modulate => "Modulate",
            PrimitiveKind::Project => "Project",
            PrimitiveKind::Encode => "Encode",
            PrimitiveKind::Convolve => "Convolve",
            PrimitiveKind::Accumulate => "Accumulate",
            PrimitiveKind::Detect => "Detect",
            PrimitiveKind::Sample => "Sample",
            PrimitiveKind::Disperse => "Disperse",
            PrimitiveKind::Scatter => "Scatter",
            PrimitiveKind::Transform => "Transform",
        }
    }

    /// Single-letter notation (ASCII spellings for Π, Σ, Λ).
    pub fn symbol(self) -> &'static str {
        match self {
            PrimitiveKind::Propagate => "P",
            PrimitiveKind::Modulate => "M",
            PrimitiveKind::Project => "Pi",
            PrimitiveKind::Encode => "F",
            PrimitiveKind::Convolve => "C",
            PrimitiveKind::Accumulate => "Sigma",
            PrimitiveKind::Detect => "D",
            PrimitiveKind::Sample => "S",
            PrimitiveKind::Disperse => "W",
            PrimitiveKind::Scatter => "R",
            PrimitiveKind::Transform => "Lambda",
        }
    }

    /// Accepts the full name or the symbol, in any of their spellings.
    pub fn parse(s: &str) -> Option<PrimitiveKind> {
        let t = s.trim();
        PrimitiveKind::ALL.into_iter().find(|k| {
            k.name().eq_ignore_ascii_case(t)
                || k.symbol() == t
                || matches!((k, t), (PrimitiveKind::Project, "Π") | (PrimitiveKind::Accumulate, "Σ") | (PrimitiveKind::Transform, "Λ"))
        })
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub is_linear: bool,
    pub is_stochastic: bool,
    pub is_differentiable: bool,
}

/// Angular-spectrum propagation over distance `distance` (metres).
#[derive(Clone, Debug, PartialEq)]
pub struct Propagate {
    pub distance: f64,
    pub wavelength: f64,
    pub pitch: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Modulate {
    pub mask: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Project {
    pub angles_deg: Vec<f64>,
    /// Detector bins; defaults to the image width.
    pub n_det: Option<usize>,
    /// Centre-of-rotation offset in detector bins.
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encode {
    /// DFT axes; defaults to the two leading axes.
    pub axes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Convolve {
    pub kernel: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Accumulate {
    pub axes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
}

/// Band `l` of a `[rows, cols, bands]` cube is translated by `slope·l`
/// pixels along an axis at `angle_deg` from the column axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Disperse {
    pub slope: f64,
    pub angle_deg: f64,
    pub out_width: Option<usize>,
}

/// Desk-scale scatter: Gaussian spatial (angular) blur of width `sigma`
/// followed by a shift of `energy_shift` bins along the last axis of
/// 3-D inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Scatter {
    pub sigma: f64,
    pub energy_shift: f64,
}

/// A primitive with bound parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Propagate(Propagate),
    Modulate(Modulate),
    Project(Project),
    Encode(Encode),
    Convolve(Convolve),
    Accumulate(Accumulate),
    Detect(DetectFamily),
    Sample(Sample),
    Disperse(Disperse),
    Scatter(Scatter),
    Transform(TransformFamily),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MaskMode {
    /// mask and input share a shape
    Equal,
    /// mask covers the leading axes; broadcast across the rest
    Prefix { inner: usize },
    /// input covers the trailing axes of the mask; output takes the mask shape
    Expand { n: usize },
}

fn mask_mode(mask: &[usize], input: &[usize]) -> Result<MaskMode> {
    if mask == input {
        Ok(MaskMode::Equal)
    } else if input.len() > mask.len() && input.starts_with(mask) {
        Ok(MaskMode::Prefix { inner: numel(&input[mask.len()..]) })
    } else if mask.len() > input.len() && mask.ends_with(input) {
        Ok(MaskMode::Expand { n: numel(input) })
    } else {
        Err(Error::ShapeMismatch(format!("Modulate: mask {mask:?} does not broadcast against input {input:?}")))
    }
}

fn axes_valid(axes: &[usize], ndim: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; ndim];
    for &a in axes {
        if a >= ndim || seen[a] {
            return Err(Error::ShapeMismatch(format!("{what}: invalid axes {axes:?} for {ndim}-d input")));
        }
        seen[a] = true;
    }
    Ok(())
}

/// Leading-block view `(h, w, s)` used by the spatial kernels.
fn block2(shape: &[usize]) -> (usize, usize, usize) {
    let h = shape[0];
    let w = if shape.len() > 1 { shape[1] } else { 1 };
    (h, w, numel(shape) / (h * w))
}

fn apply_field<R>(
    x: &Tensor,
    complex_params: bool,
    real: impl FnOnce(&[f64]) -> R,
    cplx: impl FnOnce(&[Complex64]) -> R,
) -> R {
    match (x.data(), complex_params) {
        (TensorData::Real(v), false) => real(v),
        _ => cplx(&x.to_complex_vec()),
    }
}

fn kernel_as<T: Field>(t: &Tensor, f: impl Fn(Complex64) -> T) -> Vec<T> {
    t.to_complex_vec().into_iter().map(f).collect()
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Propagate(_) => PrimitiveKind::Propagate,
            Primitive::Modulate(_) => PrimitiveKind::Modulate,
            Primitive::Project(_) => PrimitiveKind::Project,
            Primitive::Encode(_) => PrimitiveKind::Encode,
            Primitive::Convolve(_) => PrimitiveKind::Convolve,
            Primitive::Accumulate(_) => PrimitiveKind::Accumulate,
            Primitive::Detect(_) => PrimitiveKind::Detect,
            Primitive::Sample(_) => PrimitiveKind::Sample,
            Primitive::Disperse(_) => PrimitiveKind::Disperse,
            Primitive::Scatter(_) => PrimitiveKind::Scatter,
            Primitive::Transform(_) => PrimitiveKind::Transform,
        }
    }

    pub fn flags(&self) -> Flags {
        let is_linear = match self {
            Primitive::Detect(d) => d.is_linear(),
            Primitive::Transform(_) => false,
            _ => true,
        };
        let is_differentiable =
            !matches!(self, Primitive::Transform(TransformFamily::PhaseWrap | TransformFamily::Saturation { .. }));
        Flags { is_linear, is_stochastic: false, is_differentiable }
    }

    pub fn is_linear(&self) -> bool {
        self.flags().is_linear
    }

    /// Bind a parameter map to a typed primitive. Unknown names are rejected.
    pub fn bind(kind: PrimitiveKind, params: &Params) -> Result<Primitive> {
        let r = ParamReader::new(kind.name(), params);
        let p = match kind {
            PrimitiveKind::Propagate => {
                r.only(&["distance", "wavelength", "pitch"])?;
                let p = Propagate {
                    distance: r.scalar("distance")?,
                    wavelength: r.scalar("wavelength")?,
                    pitch: r.scalar("pitch")?,
                };
                if p.wavelength <= 0.0 || p.pitch <= 0.0 {
                    return Err(Error::InvalidParam("Propagate: wavelength and pitch must be positive".into()));
                }
                Primitive::Propagate(p)
            }
            PrimitiveKind::Modulate => {
                r.only(&["mask"])?;
                Primitive::Modulate(Modulate { mask: r.tensor("mask")? })
            }
            PrimitiveKind::Project => {
                r.only(&["angles", "n_det", "offset"])?;
                let angles_deg = r.list("angles")?;
                if angles_deg.is_empty() {
                    return Err(Error::InvalidParam("Project: empty angle list".into()));
                }
                Primitive::Project(Project { angles_deg, n_det: r.usize_opt("n_det")?, offset: r.scalar_or("offset", 0.0)? })
            }
            PrimitiveKind::Encode => {
                r.only(&["axes"])?;
                Primitive::Encode(Encode { axes: r.index_list_opt("axes")? })
            }
            PrimitiveKind::Convolve => {
                r.only(&["kernel"])?;
                let kernel = r.tensor("kernel")?;
                if kernel.ndim() > 2 {
                    return Err(Error::InvalidParam("Convolve: kernel must be 1-D or 2-D".into()));
                }
                Primitive::Convolve(Convolve { kernel })
            }
            PrimitiveKind::Accumulate => {
                r.only(&["axes"])?;
                Primitive::Accumulate(Accumulate { axes: r.index_list("axes")? })
            }
            PrimitiveKind::Detect => Primitive::Detect(DetectFamily::from_params(params)?),
            PrimitiveKind::Sample => {
                r.only(&["indices"])?;
                let indices = r.index_list("indices")?;
                if indices.is_empty() {
                    return Err(Error::InvalidParam("Sample: empty index set".into()));
                }
                Primitive::Sample(Sample { indices })
            }
            PrimitiveKind::Disperse => {
                r.only(&["slope", "angle", "out_width"])?;
                Primitive::Disperse(Disperse {
                    slope: r.scalar("slope")?,
                    angle_deg: r.scalar_or("angle", 0.0)?,
                    out_width: r.usize_opt("out_width")?,
                })
            }
            PrimitiveKind::Scatter => {
                r.only(&["sigma", "energy_shift"])?;
                let sigma = r.scalar("sigma")?;
                if sigma < 0.0 {
                    return Err(Error::InvalidParam("Scatter: sigma must be non-negative".into()));
                }
                Primitive::Scatter(Scatter { sigma, energy_shift: r.scalar_or("energy_shift", 0.0)? })
            }
            PrimitiveKind::Transform => Primitive::Transform(TransformFamily::from_params(params)?),
        };
        Ok(p)
    }

    /// Inverse of [`Primitive::bind`].
    pub fn params(&self) -> Params {
        let mut p = Params::new();
        let mut put = |k: &str, v: ParamValue| {
            p.insert(k.to_string(), v);
        };
        match self {
            Primitive::Propagate(q) => {
                put("distance", q.distance.into());
                put("wavelength", q.wavelength.into());
                put("pitch", q.pitch.into());
            }
            Primitive::Modulate(q) => put("mask", (&q.mask).into()),
            Primitive::Project(q) => {
                put("angles", q.angles_deg.clone().into());
                if let Some(n) = q.n_det {
                    put("n_det", n.into());
                }
                put("offset", q.offset.into());
            }
            Primitive::Encode(q) => {
                if let Some(a) = &q.axes {
                    put("axes", a.clone().into());
                }
            }
            Primitive::Convolve(q) => put("kernel", (&q.kernel).into()),
            Primitive::Accumulate(q) => put("axes", q.axes.clone().into()),
            Primitive::Detect(d) => return d.to_params(),
            Primitive::Sample(q) => put("indices", q.indices.clone().into()),
            Primitive::Disperse(q) => {
                put("slope", q.slope.into());
                put("angle", q.angle_deg.into());
                if let Some(w) = q.out_width {
                    put("out_width", w.into());
                }
            }
            Primitive::Scatter(q) => {
                put("sigma", q.sigma.into());
                put("energy_shift", q.energy_shift.into());
            }
            Primitive::Transform(t) => return t.to_params(),
        }
        p
    }

    fn encode_axes(&self, ndim: usize) -> Vec<usize> {
        match self {
            Primitive::Encode(Encode { axes: Some(a) }) => a.clone(),
            _ => (0..ndim.min(2)).collect(),
        }
    }

    /// Output shape and dtype for an input of the given shape and dtype.
    pub fn output_signature(&self, shape: &[usize], dtype: Dtype) -> Result<(Vec<usize>, Dtype)> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::EmptyShape);
        }
        let kind = self.kind();
        let need_ndim = |lo: usize, hi: usize| -> Result<()> {
            if shape.len() < lo || shape.len() > hi {
                return Err(Error::ShapeMismatch(format!("{kind}: input {shape:?} must have {lo}..={hi} axes")));
            }
            Ok(())
        };
        Ok(match self {
            Primitive::Propagate(_) => {
                need_ndim(2, usize::MAX)?;
                (shape.to_vec(), Dtype::Complex128)
            }
            Primitive::Modulate(m) => {
                let mode = mask_mode(m.mask.shape(), shape)?;
                let out = match mode {
                    MaskMode::Expand { .. } => m.mask.shape().to_vec(),
                    _ => shape.to_vec(),
                };
                (out, dtype.promote(m.mask.dtype()))
            }
            Primitive::Project(p) => {
                need_ndim(2, 2)?;
                (vec![p.angles_deg.len(), p.n_det.unwrap_or(shape[1])], dtype)
            }
            Primitive::Encode(_) => {
                axes_valid(&self.encode_axes(shape.len()), shape.len(), "Encode")?;
                (shape.to_vec(), Dtype::Complex128)
            }
            Primitive::Convolve(c) => {
                let ks = c.kernel.shape();
                need_ndim(ks.len(), usize::MAX)?;
                let (h, w, _) = block_for_kernel(shape, ks.len());
                let (kh, kw) = (ks[0], if ks.len() > 1 { ks[1] } else { 1 });
                if kh > h || kw > w {
                    return Err(Error::ShapeMismatch(format!("Convolve: kernel {ks:?} larger than input {shape:?}")));
                }
                (shape.to_vec(), dtype.promote(c.kernel.dtype()))
            }
            Primitive::Accumulate(a) => {
                axes_valid(&a.axes, shape.len(), "Accumulate")?;
                let mut out: Vec<usize> =
                    shape.iter().enumerate().filter(|(i, _)| !a.axes.contains(i)).map(|(_, &d)| d).collect();
                if out.is_empty() {
                    out.push(1);
                }
                (out, dtype)
            }
            Primitive::Detect(d) => {
                if dtype == Dtype::Complex128
                    && matches!(d, DetectFamily::Logarithmic { .. } | DetectFamily::Sigmoid { .. })
                {
                    return Err(Error::Domain { family: d.name().into(), detail: "requires real input".into() });
                }
                (shape.to_vec(), d.output_dtype(dtype))
            }
            Primitive::Sample(s) => {
                let n = numel(shape);
                if let Some(bad) = s.indices.iter().find(|&&i| i >= n) {
                    return Err(Error::ShapeMismatch(format!("Sample: index {bad} out of bounds for {n} elements")));
                }
                (vec![s.indices.len()], dtype)
            }
            Primitive::Disperse(d) => {
                need_ndim(3, 3)?;
                (vec![shape[0], disperse_width(d, shape), shape[2]], dtype)
            }
            Primitive::Scatter(_) => {
                need_ndim(2, 3)?;
                (shape.to_vec(), dtype)
            }
            Primitive::Transform(t) => {
                if dtype == Dtype::Complex128 {
                    return Err(Error::Domain { family: t.name().into(), detail: "requires real input".into() });
                }
                (shape.to_vec(), Dtype::Real64)
            }
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (out_shape, _) = self.output_signature(x.shape(), x.dtype())?;
        let shape = x.shape();
        let out = match self {
            Primitive::Propagate(p) => {
                let mut v = x.to_complex_vec();
                propagate(&mut v, shape, p, false);
                Tensor::from_complex(out_shape, v)
            }
            Primitive::Modulate(m) => modulate(&m.mask, x, shape, out_shape, false)?,
            Primitive::Project(p) => {
                let angles: Vec<f64> = p.angles_deg.iter().map(|a| a.to_radians()).collect();
                let g = RadonGeometry { rows: shape[0], cols: shape[1], angles_rad: &angles, n_det: out_shape[1], offset: p.offset };
                apply_field(
                    x,
                    false,
                    |v| Tensor::from_real(out_shape.clone(), g.forward(v)),
                    |v| Tensor::from_complex(out_shape.clone(), g.forward(v)),
                )
            }
            Primitive::Encode(_) => {
                let mut v = x.to_complex_vec();
                fft_axes(&mut v, shape, &self.encode_axes(shape.len()), false);
                Tensor::from_complex(out_shape, v)
            }
            Primitive::Convolve(c) => convolve(&c.kernel, x, false),
            Primitive::Accumulate(a) => accumulate(x, &a.axes, out_shape),
            Primitive::Detect(d) => d.apply(x)?,
            Primitive::Sample(s) => apply_field(
                x,
                false,
                |v| Tensor::from_real(out_shape.clone(), s.indices.iter().map(|&i| v[i]).collect()),
                |v| Tensor::from_complex(out_shape.clone(), s.indices.iter().map(|&i| v[i]).collect()),
            ),
            Primitive::Disperse(d) => {
                let shifts = disperse_shifts(d, shape[2]);
                let op = BandShift { h: shape[0], w: shape[1], l: shape[2], w_out: out_shape[1], shifts: &shifts };
                apply_field(
                    x,
                    false,
                    |v| Tensor::from_real(out_shape.clone(), op.forward(v)),
                    |v| Tensor::from_complex(out_shape.clone(), op.forward(v)),
                )
            }
            Primitive::Scatter(s) => scatter(s, x, false),
            Primitive::Transform(t) => t.apply(x)?,
        };
        out.check_finite(self.kind().name())?;
        Ok(out)
    }

    /// Adjoint map from the output space back to an input of `in_shape`.
    pub fn adjoint(&self, y: &Tensor, in_shape: &[usize]) -> Result<Tensor> {
        if !self.is_linear() {
            let what = match self {
                Primitive::Detect(d) => format!("Detect({})", d.name()),
                Primitive::Transform(t) => format!("Transform({})", t.name()),
                _ => self.kind().name().to_string(),
            };
            return Err(Error::AdjointUndefined(format!("{what} is nonlinear")));
        }
        let (out_shape, _) = self.output_signature(in_shape, y.dtype())?;
        if y.shape() != out_shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "{} adjoint: expected {:?}, got {:?}",
                self.kind(),
                out_shape,
                y.shape()
            )));
        }
        let in_shape_v = in_shape.to_vec();
        let out = match self {
            Primitive::Propagate(p) => {
                let mut v = y.to_complex_vec();
                propagate(&mut v, in_shape, p, true);
                Tensor::from_complex(in_shape_v, v)
            }
            Primitive::Modulate(m) => modulate(&m.mask, y, in_shape, in_shape_v, true)?,
            Primitive::Project(p) => {
                let angles: Vec<f64> = p.angles_deg.iter().map(|a| a.to_radians()).collect();
                let g = RadonGeometry { rows: in_shape[0], cols: in_shape[1], angles_rad: &angles, n_det: out_shape[1], offset: p.offset };
                apply_field(
                    y,
                    false,
                    |v| Tensor::from_real(in_shape_v.clone(), g.adjoint(v)),
                    |v| Tensor::from_complex(in_shape_v.clone(), g.adjoint(v)),
                )
            }
            Primitive::Encode(_) => {
                let mut v = y.to_complex_vec();
                fft_axes(&mut v, in_shape, &self.encode_axes(in_shape.len()), true);
                Tensor::from_complex(in_shape_v, v)
            }
            Primitive::Convolve(c) => convolve(&c.kernel, y, true),
            Primitive::Accumulate(a) => broadcast_back(y, &a.axes, in_shape),
            Primitive::Detect(d) => y.scale(d.gain()),
            Primitive::Sample(s) => {
                let n = numel(in_shape);
                apply_field(
                    y,
                    false,
                    |v| {
                        let mut x = vec![0.0; n];
                        s.indices.iter().zip(v).for_each(|(&i, &val)| x[i] += val);
                        Tensor::from_real(in_shape_v.clone(), x)
                    },
                    |v| {
                        let mut x = vec![Complex64::new(0.0, 0.0); n];
                        s.indices.iter().zip(v).for_each(|(&i, &val)| x[i] += val);
                        Tensor::from_complex(in_shape_v.clone(), x)
                    },
                )
            }
            Primitive::Disperse(d) => {
                let shifts = disperse_shifts(d, in_shape[2]);
                let op = BandShift { h: in_shape[0], w: in_shape[1], l: in_shape[2], w_out: out_shape[1], shifts: &shifts };
                apply_field(
                    y,
                    false,
                    |v| Tensor::from_real(in_shape_v.clone(), op.adjoint(v)),
                    |v| Tensor::from_complex(in_shape_v.clone(), op.adjoint(v)),
                )
            }
            Primitive::Scatter(s) => scatter(s, y, true),
            Primitive::Transform(_) => unreachable!("nonlinear"),
        };
        Ok(out)
    }
}

fn block_for_kernel(shape: &[usize], kernel_ndim: usize) -> (usize, usize, usize) {
    if kernel_ndim >= 2 {
        block2(shape)
    } else {
        (shape[0], 1, numel(shape) / shape[0])
    }
}

fn disperse_width(d: &Disperse, shape: &[usize]) -> usize {
    d.out_width
        .unwrap_or_else(|| shape[1] + (d.slope.abs() * (shape[2] as f64 - 1.0)).ceil() as usize)
}

fn disperse_shifts(d: &Disperse, bands: usize) -> Vec<(f64, f64)> {
    let (sn, cs) = d.angle_deg.to_radians().sin_cos();
    (0..bands)
        .map(|l| {
            let s = d.slope * l as f64;
            (s * sn, s * cs)
        })
        .collect()
}

fn modulate(mask: &Tensor, x: &Tensor, in_shape: &[usize], out_shape: Vec<usize>, adjoint: bool) -> Result<Tensor> {
    let mode = mask_mode(mask.shape(), in_shape)?;
    fn run<T: Field>(m: &[T], x: &[T], mode: MaskMode, adjoint: bool, out_len: usize) -> Vec<T> {
        let m_at = |i: usize| if adjoint { m[i].conj() } else { m[i] };
        match (mode, adjoint) {
            (MaskMode::Equal, _) => x.iter().enumerate().map(|(i, &v)| m_at(i) * v).collect(),
            (MaskMode::Prefix { inner }, _) => x.iter().enumerate().map(|(i, &v)| m_at(i / inner) * v).collect(),
            (MaskMode::Expand { n }, false) => (0..m.len()).map(|i| m[i] * x[i % n]).collect(),
            (MaskMode::Expand { n }, true) => {
                let mut out = vec![T::default(); out_len];
                for (i, &v) in x.iter().enumerate() {
                    out[i % n] += m_at(i) * v;
                }
                out
            }
        }
    }
    let out_len = numel(&out_shape);
    Ok(match (mask.data(), x.data()) {
        (TensorData::Real(m), TensorData::Real(v)) => Tensor::from_real(out_shape, run(m, v, mode, adjoint, out_len)),
        _ => Tensor::from_complex(out_shape, run(&mask.to_complex_vec(), &x.to_complex_vec(), mode, adjoint, out_len)),
    })
}

fn convolve(kernel: &Tensor, x: &Tensor, adjoint: bool) -> Tensor {
    let ks = kernel.shape();
    let dims = block_for_kernel(x.shape(), ks.len());
    let kdims = (ks[0], if ks.len() > 1 { ks[1] } else { 1 });
    let shape = x.shape().to_vec();
    match (kernel.data(), x.data()) {
        (TensorData::Real(k), TensorData::Real(v)) => Tensor::from_real(shape, circ_conv(v, dims, k, kdims, adjoint)),
        _ => Tensor::from_complex(
            shape,
            circ_conv(&x.to_complex_vec(), dims, &kernel_as(kernel, |z| z), kdims, adjoint),
        ),
    }
}

/// Map from each input flat index to its output flat index after summing `axes`.
fn reduce_index(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let n = numel(in_shape);
    let kept: Vec<usize> = (0..in_shape.len()).filter(|i| !axes.contains(i)).collect();
    let mut out_strides = vec![0usize; in_shape.len()];
    let mut acc = 1;
    for &k in kept.iter().rev() {
        out_strides[k] = acc;
        acc *= in_shape[k];
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; in_shape.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
        for d in (0..in_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < in_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

fn accumulate(x: &Tensor, axes: &[usize], out_shape: Vec<usize>) -> Tensor {
    let map = reduce_index(x.shape(), axes);
    let m = numel(&out_shape);
    match x.data() {
        TensorData::Real(v) => {
            let mut y = vec![0.0; m];
            map.iter().zip(v).for_each(|(&o, &val)| y[o] += val);
            Tensor::from_real(out_shape, y)
        }
        TensorData::Complex(v) => {
            let mut y = vec![Complex64::new(0.0, 0.0); m];
            map.iter().zip(v).for_each(|(&o, &val)| y[o] += val);
            Tensor::from_complex(out_shape, y)
        }
    }
}

fn broadcast_back(y: &Tensor, axes: &[usize], in_shape: &[usize]) -> Tensor {
    let map = reduce_index(in_shape, axes);
    match y.data() {
        TensorData::Real(v) => Tensor::from_real(in_shape.to_vec(), map.iter().map(|&o| v[o]).collect()),
        TensorData::Complex(v) => Tensor::from_complex(in_shape.to_vec(), map.iter().map(|&o| v[o]).collect()),
    }
}

fn propagate(v: &mut [Complex64], shape: &[usize], p: &Propagate, adjoint: bool) {
    let (h, w, s) = block2(shape);
    let inv_l2 = 1.0 / (p.wavelength * p.wavelength);
    let mut tf = Vec::with_capacity(h * w);
    for i in 0..h {
        let fy = freq_index(i, h) / (h as f64 * p.pitch);
        for j in 0..w {
            let fx = freq_index(j, w) / (w as f64 * p.pitch);
            let arg = inv_l2 - fx * fx - fy * fy;
            let z = if arg > 0.0 {
                Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * p.distance * arg.sqrt())
            } else {
                Complex64::new(0.0, 0.0)
            };
            tf.push(if adjoint { z.conj() } else { z });
        }
    }
    fft_axes(v, shape, &[0, 1], false);
    for (pix, t) in tf.iter().enumerate() {
        for c in 0..s {
            v[pix * s + c] *= t;
        }
    }
    fft_axes(v, shape, &[0, 1], true);
}

fn scatter(s: &Scatter, x: &Tensor, adjoint: bool) -> Tensor {
    let shape = x.shape().to_vec();
    let (h, w, rest) = block2(&shape);
    let (k, side) = gaussian_kernel(s.sigma, h.min(w));
    let energy = shape.len() == 3 && s.energy_shift != 0.0;
    let e = if shape.len() == 3 { shape[2] } else { 1 };
    fn run<T: Field>(v: &[T], k: &[T], side: usize, dims: (usize, usize, usize), e: usize, shift: Option<f64>, adjoint: bool) -> Vec<T> {
        let outer = v.len() / e;
        if adjoint {
            let z = match shift {
                Some(sh) => shift_last_axis(v, outer, e, sh, true),
                None => v.to_vec(),
            };
            circ_conv(&z, dims, k, (side, side), true)
        } else {
            let z = circ_conv(v, dims, k, (side, side), false);
            match shift {
                Some(sh) => shift_last_axis(&z, outer, e, sh, false),
                None => z,
            }
        }
    }
    let shift = energy.then_some(s.energy_shift);
    match x.data() {
        TensorData::Real(v) => Tensor::from_real(shape, run(v, &k, side, (h, w, rest), e, shift, adjoint)),
        TensorData::Complex(v) => {
            let kc: Vec<Complex64> = k.iter().map(|&r| Complex64::new(r, 0.0)).collect();
            Tensor::from_complex(shape, run(v, &kc, side, (h, w, rest), e, shift, adjoint))
        }
    }
}

/// Free-function forms of the primitive entry points.
pub fn prim_forward(p: &Primitive, x: &Tensor) -> Result<Tensor> {
    p.forward(x)
}

pub fn prim_adjoint(p: &Primitive, y: &Tensor, in_shape: &[usize]) -> Result<Tensor> {
    p.adjoint(y, in_shape)
}

pub const ADJOINT_TOLERANCE: f64 = 1e-6;
pub const ADJOINT_EPS: f64 = 1e-12;
pub const DEFAULT_TRIALS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointReport {
    pub n_trials: usize,
    pub delta_max: f64,
    pub delta_mean: f64,
    pub passed: bool,
}

/// Signature of a linear map used by the randomized adjoint test.
#[derive(Clone, Debug)]
pub struct MapSignature {
    pub in_shape: Vec<usize>,
    pub in_dtype: Dtype,
    pub out_shape: Vec<usize>,
    pub out_dtype: Dtype,
}

/// Randomized dot-product test
/// δ = |⟨A*y, x⟩ − ⟨y, Ax⟩| / max(|⟨A*y, x⟩|, 1e-12), repeated `n_trials`
/// times with fresh Gaussian draws from one seeded stream.
pub fn adjoint_check(
    forward: impl Fn(&Tensor) -> Result<Tensor>,
    adjoint: impl Fn(&Tensor) -> Result<Tensor>,
    sig: &MapSignature,
    n_trials: usize,
    seed: u64,
) -> Result<AdjointReport> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    let mut rng = Rng::new(seed);
    let mut deltas = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let x = gaussian_like(&mut rng, &sig.in_shape, sig.in_dtype)?;
        let y = gaussian_like(&mut rng, &sig.out_shape, sig.out_dtype)?;
        let ax = forward(&x)?;
        let aty = adjoint(&y)?;
        let lhs = aty.dot(&x)?;
        let rhs = y.dot(&ax)?;
        deltas.push((lhs - rhs).norm() / lhs.norm().max(ADJOINT_EPS));
    }
    let delta_max = deltas.iter().cloned().fold(0.0, f64::max);
    let delta_mean = deltas.iter().sum::<f64>() / n_trials as f64;
    Ok(AdjointReport { n_trials, delta_max, delta_mean, passed: delta_max < ADJOINT_TOLERANCE })
}

pub fn dot_product_test_with_dtype(
    p: &Primitive,
    input_shape: &[usize],
    input_dtype: Dtype,
    n_trials: usize,
    seed: u64,
) -> Result<AdjointReport> {
    if !p.is_linear() {
        return Err(Error::AdjointUndefined(format!("{} is nonlinear", p.kind())));
    }
    let (out_shape, out_dtype) = p.output_signature(input_shape, input_dtype)?;
    let sig = MapSignature { in_shape: input_shape.to_vec(), in_dtype: input_dtype, out_shape, out_dtype };
    adjoint_check(|x| p.forward(x), |y| p.adjoint(y, input_shape), &sig, n_trials, seed)
}

/// Adjoint certification of a single primitive on real inputs.
pub fn dot_product_test(p: &Primitive, input_shape: &[usize], n_trials: usize, seed: u64) -> Result<AdjointReport> {
    dot_product_test_with_dtype(p, input_shape, Dtype::Real64, n_trials, seed)
}

#[cfg(test)]
mod tests;
