//! Image quality metrics.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("metric inputs {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(x_hat: &Tensor, x: &Tensor) -> Result<f64> {
    same_shape(x_hat, x)?;
    Ok(x_hat.sub(x)?.norm_sq() / x.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical inputs.
pub fn psnr(x_hat: &Tensor, x: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr peak must be positive, got {peak}")));
    }
    let m = mse(x_hat, x)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Serialize a dB value, writing non-finite values as the string "inf"/"-inf"/"nan".
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// Inverse of [`serialize_db`].
pub fn deserialize_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("bad dB value `{other}`"))),
        },
    }
}

/// JSON form of a dB value.
pub fn db_json(v: f64) -> serde_json::Value {
    #[derive(Serialize)]
    struct W(#[serde(serialize_with = "serialize_db")] f64);
    serde_json::to_value(W(v)).expect("serializable")
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;

/// Weighted local means over every position where the 11-tap Gaussian
/// window (σ = 1.5) fits entirely inside the image.
fn local_mean(v: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            tmp[i * ow + j] = (0..k).map(|t| g[t] * v[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| g[t] * tmp[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean structural similarity over the leading two axes, averaged across
/// any trailing slices.
pub fn ssim(x_hat: &Tensor, x: &Tensor, peak: f64) -> Result<f64> {
    same_shape(x_hat, x)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("ssim peak must be positive, got {peak}")));
    }
    let a = x_hat.real_data("ssim")?;
    let b = x.real_data("ssim")?;
    let shape = x.shape();
    let h = shape[0];
    let w = if shape.len() > 1 { shape[1] } else { 1 };
    let s = numel(shape) / (h * w);
    let win = 2 * SSIM_RADIUS + 1;
    if h < win || w < win {
        return Err(Error::InvalidArgument(format!("ssim needs images at least {win}x{win}, got {h}x{w}")));
    }
    let g: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|k| {
            let d = k as f64 - SSIM_RADIUS as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let gs: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / gs).collect();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mut total = 0.0;
    for c in 0..s {
        let pa: Vec<f64> = (0..h * w).map(|p| a[p * s + c]).collect();
        let pb: Vec<f64> = (0..h * w).map(|p| b[p * s + c]).collect();
        let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
        let (ma, mb) = (local_mean(&pa, h, w, &g), local_mean(&pb, h, w, &g));
        let maa = local_mean(&prod(&pa, &pa), h, w, &g);
        let mbb = local_mean(&prod(&pb, &pb), h, w, &g);
        let mab = local_mean(&prod(&pa, &pb), h, w, &g);
        let mut acc = 0.0;
        for p in 0..ma.len() {
            let (va, vb) = ((maa[p] - ma[p] * ma[p]).max(0.0), (mbb[p] - mb[p] * mb[p]).max(0.0));
            let cov = mab[p] - ma[p] * mb[p];
            acc += ((2.0 * ma[p] * mb[p] + c1) * (2.0 * cov + c2))
                / ((ma[p] * ma[p] + mb[p] * mb[p] + c1) * (va + vb + c2));
        }
        total += acc / ma.len() as f64;
    }
    Ok(total / s as f64)
}

/// Mean spectral angle in degrees over pixels, spectra along the last axis.
/// Pixels where either spectrum is zero are skipped.
pub fn sam(x_hat: &Tensor, x: &Tensor) -> Result<f64> {
    same_shape(x_hat, x)?;
    if x.ndim() < 2 {
        return Err(Error::InvalidArgument("sam needs a spectral (last) axis".into()));
    }
    let a = x_hat.real_data("sam")?;
    let b = x.real_data("sam")?;
    let l = *x.shape().last().expect("ndim >= 2");
    let (mut acc, mut n) = (0.0, 0usize);
    for (u, v) in a.chunks(l).zip(b.chunks(l)) {
        let nu = u.iter().map(|t| t * t).sum::<f64>().sqrt();
        let nv = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            continue;
        }
        let c = (u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>() / (nu * nv)).clamp(-1.0, 1.0);
        acc += c.acos().to_degrees();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { acc / n as f64 })
}
