//! Reconstruction algorithms that touch the operator only through its
//! forward and adjoint maps: FISTA-TV, GAP-TV, filtered back-projection and
//! plain adjoint reconstruction.
//!
//! All solvers work in the real domain: the unknown is real and complex
//! adjoint outputs are reduced to their real part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphOperator;
use crate::primitives::{Primitive, PrimitiveKind};
use crate::registry::SolverDefaults;
use crate::rng::Rng;
use crate::tensor::{gaussian, numel, Tensor};

pub const TV_INNER_DEFAULT: usize = 20;
const POWER_ITERS: usize = 30;
const LIPSCHITZ_MARGIN: f64 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    FistaTv,
    GapTv,
    Fbp,
    Adjoint,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fista_tv" | "fista" => Ok(SolverKind::FistaTv),
            "gap_tv" | "gap" => Ok(SolverKind::GapTv),
            "fbp" => Ok(SolverKind::Fbp),
            "adjoint" => Ok(SolverKind::Adjoint),
            other => Err(Error::InvalidArgument(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub name: SolverKind,
    pub iters: usize,
    pub lambda_tv: f64,
    /// Gradient step; `None` means 1/L with L from power iteration.
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "tv_inner_default")]
    pub tv_inner: usize,
    /// Project iterates onto x ≥ 0.
    #[serde(default)]
    pub nonneg: bool,
}

fn tv_inner_default() -> usize {
    TV_INNER_DEFAULT
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { name: SolverKind::FistaTv, iters: 100, lambda_tv: 0.0, step: None, tv_inner: TV_INNER_DEFAULT, nonneg: false }
    }
}

impl SolverConfig {
    pub fn new(name: SolverKind, iters: usize, lambda_tv: f64) -> Self {
        SolverConfig { name, iters, lambda_tv, ..Default::default() }
    }

    pub fn from_defaults(d: &SolverDefaults) -> Self {
        let name = d.name.parse().unwrap_or(SolverKind::FistaTv);
        SolverConfig { name, iters: d.iters, lambda_tv: d.lambda_tv, step: None, tv_inner: TV_INNER_DEFAULT, nonneg: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::InvalidArgument("solver iters must be at least 1".into()));
        }
        if !(self.lambda_tv >= 0.0) || !self.lambda_tv.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda_tv must be finite and >= 0, got {}", self.lambda_tv)));
        }
        if let Some(s) = self.step {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!("step must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconResult {
    pub x_hat: Tensor,
    pub residual: f64,
    pub iters_run: usize,
    /// FISTA objective after each iteration (empty for other solvers).
    pub objective: Vec<f64>,
}

/// `(h, w, s)` view: TV acts on the two leading axes of each trailing slice.
fn tv_dims(shape: &[usize]) -> (usize, usize, usize) {
    let h = shape[0];
    let w = if shape.len() > 1 { shape[1] } else { 1 };
    (h, w, numel(shape) / (h * w))
}

/// Anisotropic total variation: Σ |forward differences| along the leading
/// (up to two) axes.
pub fn tv_norm(x: &Tensor) -> Result<f64> {
    let v = x.real_data("tv_norm")?;
    let (h, w, s) = tv_dims(x.shape());
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let p = (i * w + j) * s;
            for c in 0..s {
                if i + 1 < h {
                    acc += (v[p + w * s + c] - v[p + c]).abs();
                }
                if j + 1 < w {
                    acc += (v[p + s + c] - v[p + c]).abs();
                }
            }
        }
    }
    Ok(acc)
}

/// Dual variables: vertical then horizontal differences, both stored on the full grid.
fn grad_op(v: &[f64], (h, w, s): (usize, usize, usize), gv: &mut [f64], gh: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let p = (i * w + j) * s;
            for c in 0..s {
                gv[p + c] = if i + 1 < h { v[p + w * s + c] - v[p + c] } else { 0.0 };
                gh[p + c] = if j + 1 < w { v[p + s + c] - v[p + c] } else { 0.0 };
            }
        }
    }
}

/// Transpose of [`grad_op`].
fn grad_adj(gv: &[f64], gh: &[f64], (h, w, s): (usize, usize, usize), out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..h {
        for j in 0..w {
            let p = (i * w + j) * s;
            for c in 0..s {
                if i + 1 < h {
                    out[p + w * s + c] += gv[p + c];
                    out[p + c] -= gv[p + c];
                }
                if j + 1 < w {
                    out[p + s + c] += gh[p + c];
                    out[p + c] -= gh[p + c];
                }
            }
        }
    }
}

/// argmin_z ½‖z − x‖² + λ·TV(z) by fast projected gradient on the dual
/// (box-constrained) problem. The result never has a worse objective than x.
pub fn tv_prox(x: &Tensor, lambda: f64, inner: usize) -> Result<Tensor> {
    let v = x.real_data("tv_prox")?;
    if lambda <= 0.0 || inner == 0 {
        return Ok(x.clone());
    }
    let dims = tv_dims(x.shape());
    let n = v.len();
    let (mut pv, mut ph) = (vec![0.0; n], vec![0.0; n]);
    let (mut rv, mut rh) = (vec![0.0; n], vec![0.0; n]);
    let (mut gv, mut gh) = (vec![0.0; n], vec![0.0; n]);
    let mut dtp = vec![0.0; n];
    let mut z = vec![0.0; n];
    let tau = 1.0 / (8.0 * lambda);
    let mut t = 1.0_f64;
    for _ in 0..inner {
        grad_adj(&rv, &rh, dims, &mut dtp);
        for k in 0..n {
            z[k] = v[k] - lambda * dtp[k];
        }
        grad_op(&z, dims, &mut gv, &mut gh);
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_new;
        for k in 0..n {
            let nv = (rv[k] + tau * gv[k]).clamp(-1.0, 1.0);
            let nh = (rh[k] + tau * gh[k]).clamp(-1.0, 1.0);
            rv[k] = nv + beta * (nv - pv[k]);
            rh[k] = nh + beta * (nh - ph[k]);
            pv[k] = nv;
            ph[k] = nh;
        }
        t = t_new;
    }
    grad_adj(&pv, &ph, dims, &mut dtp);
    for k in 0..n {
        z[k] = v[k] - lambda * dtp[k];
    }
    let out = Tensor::real(x.shape().to_vec(), z)?;
    let obj = |t: &Tensor| -> Result<f64> { Ok(0.5 * t.sub(x)?.norm_sq() + lambda * tv_norm(t)?) };
    if obj(&out)? <= obj(x)? {
        Ok(out)
    } else {
        Ok(x.clone())
    }
}

fn real_adjoint(g: &GraphOperator, y: &Tensor) -> Result<Tensor> {
    Ok(g.adjoint(y)?.real_part())
}

/// Power-iteration estimate of ‖H‖² over real inputs, inflated by a 5% margin.
pub fn estimate_lipschitz(g: &GraphOperator, seed: u64) -> Result<f64> {
    let mut v = gaussian(&mut Rng::new(seed), g.input_shape())?;
    let mut lam = 0.0;
    for _ in 0..POWER_ITERS {
        let nv = v.norm();
        if nv == 0.0 {
            break;
        }
        v = v.scale(1.0 / nv);
        let w = real_adjoint(g, &g.forward(&v)?)?;
        lam = w.norm();
        v = w;
    }
    Ok(LIPSCHITZ_MARGIN * lam.max(f64::MIN_POSITIVE))
}

fn residual(g: &GraphOperator, y: &Tensor, x: &Tensor) -> Result<f64> {
    let r = y.sub(&g.forward(x)?)?.norm_sq();
    let ny = y.norm_sq();
    Ok(if ny > 0.0 { r / ny } else { r })
}

fn clip_nonneg(x: Tensor, on: bool) -> Result<Tensor> {
    if on {
        x.map_real(|v| v.max(0.0))
    } else {
        Ok(x)
    }
}

fn require_linear(g: &GraphOperator, what: &str) -> Result<()> {
    if !g.all_linear() {
        return Err(Error::AdjointUndefined(format!("{what} needs an all-linear graph")));
    }
    Ok(())
}

/// Monotone FISTA with TV prox.
fn fista(g: &GraphOperator, y: &Tensor, cfg: &SolverConfig) -> Result<ReconResult> {
    let l = match cfg.step {
        Some(s) => 1.0 / s,
        None => estimate_lipschitz(g, 0)?,
    };
    let objective = |x: &Tensor, hx: &Tensor| -> Result<f64> {
        Ok(0.5 * y.sub(hx)?.norm_sq() + cfg.lambda_tv * tv_norm(x)?)
    };
    let mut x = Tensor::zeros(g.input_shape(), crate::tensor::Dtype::Real64)?;
    let mut fx = objective(&x, &g.forward(&x)?)?;
    let mut z = x.clone();
    let mut t = 1.0_f64;
    let mut trace = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let grad = real_adjoint(g, &g.forward(&z)?.sub(y)?)?;
        let u = tv_prox(&z.axpy(-1.0 / l, &grad)?, cfg.lambda_tv / l, cfg.tv_inner)?;
        let u = clip_nonneg(u, cfg.nonneg)?;
        let fu = objective(&u, &g.forward(&u)?)?;
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let x_prev = x.clone();
        if fu <= fx {
            x = u.clone();
            fx = fu;
        }
        // z = x + (t/t_new)(u − x) + ((t−1)/t_new)(x − x_prev)
        z = x.axpy(t / t_new, &u.sub(&x)?)?.axpy((t - 1.0) / t_new, &x.sub(&x_prev)?)?;
        t = t_new;
        trace.push(fx);
    }
    let res = residual(g, y, &x)?;
    Ok(ReconResult { x_hat: x, residual: res, iters_run: cfg.iters, objective: trace })
}

/// Generalized alternating projection with TV denoising.
fn gap_tv(g: &GraphOperator, y: &Tensor, cfg: &SolverConfig) -> Result<ReconResult> {
    let ones = Tensor::full(g.output_shape(), 1.0)?;
    let d = g.forward(&real_adjoint(g, &ones)?)?;
    let dmag: Vec<f64> = d.to_complex_vec().iter().map(|z| z.norm()).collect();
    let dmax = dmag.iter().cloned().fold(0.0, f64::max);
    if dmax <= 0.0 {
        return Err(Error::Numerical("GAP-TV: operator has no row energy".into()));
    }
    let inv_d: Vec<f64> = dmag.iter().map(|&v| if v > 1e-8 * dmax { 1.0 / v } else { 0.0 }).collect();
    let weight = |r: &Tensor| -> Result<Tensor> {
        let c = r.to_complex_vec();
        if r.is_complex() {
            Tensor::complex(r.shape().to_vec(), c.iter().zip(&inv_d).map(|(z, w)| z * w).collect())
        } else {
            Tensor::real(r.shape().to_vec(), c.iter().zip(&inv_d).map(|(z, w)| z.re * w).collect())
        }
    };
    let mut v = Tensor::zeros(g.input_shape(), crate::tensor::Dtype::Real64)?;
    for _ in 0..cfg.iters {
        let r = y.sub(&g.forward(&v)?)?;
        let x = v.add(&real_adjoint(g, &weight(&r)?)?)?;
        v = clip_nonneg(tv_prox(&x, cfg.lambda_tv, cfg.tv_inner)?, cfg.nonneg)?;
    }
    let res = residual(g, y, &v)?;
    Ok(ReconResult { x_hat: v, residual: res, iters_run: cfg.iters, objective: Vec::new() })
}

/// Ram-Lak filter, spatial form for unit detector spacing.
fn ram_lak(n_det: usize) -> Vec<f64> {
    let m = n_det as isize;
    (-(m - 1)..m)
        .map(|k| {
            if k == 0 {
                0.25
            } else if k % 2 == 0 {
                0.0
            } else {
                -1.0 / (std::f64::consts::PI * std::f64::consts::PI * (k * k) as f64)
            }
        })
        .collect()
}

fn fbp(g: &GraphOperator, y: &Tensor) -> Result<ReconResult> {
    let n_angles = match g.find_primitive(PrimitiveKind::Project) {
        Some(Primitive::Project(p)) => p.angles_deg.len(),
        _ => return Err(Error::InvalidArgument("FBP requires a graph containing a Project node".into())),
    };
    require_linear(g, "FBP")?;
    let shape = g.output_shape();
    if shape.len() != 2 || shape[0] != n_angles {
        return Err(Error::ShapeMismatch(format!("FBP expects a [{n_angles}, n_det] sinogram, graph gives {shape:?}")));
    }
    let n_det = shape[1];
    let p = y.real_part();
    let pv = p.as_real().expect("real part");
    let h = ram_lak(n_det);
    let off = n_det as isize - 1;
    let mut q = vec![0.0; pv.len()];
    for a in 0..n_angles {
        let row = &pv[a * n_det..(a + 1) * n_det];
        for k in 0..n_det {
            q[a * n_det + k] =
                row.iter().enumerate().map(|(j, &v)| v * h[(k as isize - j as isize + off) as usize]).sum();
        }
    }
    let q = Tensor::real(shape.to_vec(), q)?;
    // overall chain gain, probed with a constant image
    let n_in = numel(g.input_shape()) as f64;
    let probe = g.forward(&Tensor::full(g.input_shape(), 1.0)?)?.sum_real() / (n_angles as f64 * n_in);
    if probe.abs() < 1e-12 {
        return Err(Error::Numerical("FBP: chain gain probe is zero".into()));
    }
    let x = real_adjoint(g, &q)?.scale(std::f64::consts::PI / n_angles as f64 / (probe * probe));
    let res = residual(g, y, &x)?;
    Ok(ReconResult { x_hat: x, residual: res, iters_run: 1, objective: Vec::new() })
}

/// Run the configured solver on measurements `y`.
pub fn reconstruct(g: &GraphOperator, y: &Tensor, cfg: &SolverConfig) -> Result<ReconResult> {
    cfg.validate()?;
    if y.shape() != g.output_shape() {
        return Err(Error::ShapeMismatch(format!(
            "measurements {:?} do not match operator output {:?}",
            y.shape(),
            g.output_shape()
        )));
    }
    let out = match cfg.name {
        SolverKind::FistaTv => {
            require_linear(g, "FISTA-TV")?;
            fista(g, y, cfg)?
        }
        SolverKind::GapTv => {
            require_linear(g, "GAP-TV")?;
            gap_tv(g, y, cfg)?
        }
        SolverKind::Fbp => fbp(g, y)?,
        SolverKind::Adjoint => {
            require_linear(g, "adjoint reconstruction")?;
            let x = real_adjoint(g, y)?;
            let res = residual(g, y, &x)?;
            ReconResult { x_hat: x, residual: res, iters_run: 1, objective: Vec::new() }
        }
    };
    out.x_hat.check_finite("reconstruction")?;
    Ok(out)
}
