//! Operator calibration: hierarchical beam search with coordinate descent
//! (alg1) and grid-seeded multi-start finite-difference refinement (alg2).
//!
//! Both algorithms only see a cost function θ ↦ c(θ) to minimise; the
//! template-facing entry points build that cost from measurements and,
//! in oracle mode, the ground-truth image.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::rng::Rng;
use crate::solvers::{reconstruct, SolverConfig};
use crate::templates::Template;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    OraclePsnr,
    MeasurementResidual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibMethod {
    Alg1,
    Alg2,
    #[serde(rename = "alg1+2")]
    Alg1Then2,
}

impl std::str::FromStr for CalibMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(CalibMethod::Alg1),
            "alg2" => Ok(CalibMethod::Alg2),
            "alg1+2" | "alg12" => Ok(CalibMethod::Alg1Then2),
            other => Err(Error::InvalidArgument(format!("unknown calibration method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    pub objective: Objective,
    /// Solver used inside the objective; `None` uses the template default.
    pub solver: Option<SolverConfig>,
    pub beam_k: usize,
    pub sweep_points: usize,
    /// Grid dims per parameter group (in group order) for alg1's beam stages.
    pub grid_shapes: Vec<Vec<usize>>,
    pub cd_rounds: usize,
    pub cd_points: usize,
    /// Full-range grid for alg2's seeding stage.
    pub alg2_grid: Vec<usize>,
    pub seeds_topk: usize,
    pub restarts: usize,
    pub refine_steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Finite-difference step as a fraction of each parameter's range.
    pub fd_step: f64,
    /// Restart jitter as a fraction of each parameter's range.
    pub jitter: f64,
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            objective: Objective::OraclePsnr,
            solver: None,
            beam_k: 5,
            sweep_points: 9,
            grid_shapes: vec![vec![5, 5, 5], vec![5, 7]],
            cd_rounds: 3,
            cd_points: 5,
            alg2_grid: vec![9, 9, 7],
            seeds_topk: 9,
            restarts: 4,
            refine_steps: 20,
            lr_start: 1e-2,
            lr_end: 1e-3,
            fd_step: 1e-3,
            jitter: 0.05,
            early_stop_tol: 1e-5,
            early_stop_window: 10,
            seed: 0,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.beam_k == 0 {
            return bad("beam_k must be at least 1");
        }
        if self.sweep_points < 3 {
            return bad("sweep_points must be at least 3");
        }
        if self.cd_points < 3 {
            return bad("cd_points must be at least 3");
        }
        if self.refine_steps == 0 {
            return bad("refine_steps must be at least 1");
        }
        if self.restarts == 0 || self.seeds_topk == 0 {
            return bad("restarts and seeds_topk must be at least 1");
        }
        if !(self.fd_step > 0.0) || !(self.lr_start > 0.0) || !(self.lr_end > 0.0) {
            return bad("fd_step and learning rates must be positive");
        }
        if self.grid_shapes.iter().chain(std::iter::once(&self.alg2_grid)).flatten().any(|&d| d == 0) {
            return bad("grid dims must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: String,
    pub candidates: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibResult {
    pub theta_hat: Vec<f64>,
    pub objective_value: f64,
    pub stage_trace: Vec<StageTrace>,
    pub evals: usize,
    /// Grid spacing of the last coordinate-descent sweep per parameter (alg1).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub final_intervals: Vec<f64>,
}

/// Box constraints and parameter grouping of a search space.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub nominal: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub groups: Vec<Vec<usize>>,
}

impl Bounds {
    pub fn dim(&self) -> usize {
        self.nominal.len()
    }

    fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    fn clip(&self, theta: &mut [f64]) {
        for (k, v) in theta.iter_mut().enumerate() {
            *v = v.clamp(self.lo[k], self.hi[k]);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidArgument("mismatch family is empty".into()));
        }
        for k in 0..self.dim() {
            if !(self.hi[k] > self.lo[k]) {
                return Err(Error::InvalidArgument(format!("parameter {k} has a degenerate range")));
            }
        }
        Ok(())
    }
}

/// Something to minimise over θ. Must be deterministic.
pub trait CostFn: Sync {
    fn cost(&self, theta: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> CostFn for F {
    fn cost(&self, theta: &[f64]) -> Result<f64> {
        self(theta)
    }
}

/// Counts evaluations and maps NaN to +∞.
struct Counted<'a> {
    f: &'a dyn CostFn,
    n: AtomicUsize,
}

impl Counted<'_> {
    fn eval(&self, theta: &[f64]) -> Result<f64> {
        self.n.fetch_add(1, Ordering::Relaxed);
        let v = self.f.cost(theta)?;
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }

    fn eval_all(&self, cands: &[Vec<f64>]) -> Result<Vec<f64>> {
        cands.par_iter().map(|c| self.eval(c)).collect()
    }

    fn count(&self) -> usize {
        self.n.load(Ordering::Relaxed)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Index of the smallest value; first wins on ties.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Stable ranking: ascending score, lexicographic candidate order on ties.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Cartesian grid in lexicographic order (last axis fastest).
fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for ax in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                ax.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub param: usize,
    pub values: Vec<f64>,
    pub costs: Vec<f64>,
    pub argmin: usize,
}

fn sweep_counted(b: &Bounds, f: &Counted, base: &[f64], k: usize, n_points: usize) -> Result<SweepCurve> {
    if n_points < 3 {
        return Err(Error::InvalidArgument(format!("a sweep needs at least 3 points, got {n_points}")));
    }
    if k >= b.dim() {
        return Err(Error::InvalidArgument(format!("parameter index {k} out of range")));
    }
    let values = linspace(b.lo[k], b.hi[k], n_points);
    let cands: Vec<Vec<f64>> = values
        .iter()
        .map(|&v| {
            let mut t = base.to_vec();
            t[k] = v;
            t
        })
        .collect();
    let costs = f.eval_all(&cands)?;
    let am = argmin(&costs);
    Ok(SweepCurve { param: k, values, costs, argmin: am })
}

/// Evaluate `n_points` uniform values of θ_k over its full range, others at nominal.
pub fn sweep_1d(b: &Bounds, f: &dyn CostFn, k: usize, n_points: usize) -> Result<SweepCurve> {
    b.validate()?;
    let c = Counted { f, n: AtomicUsize::new(0) };
    sweep_counted(b, &c, &b.nominal, k, n_points)
}

/// Grid over `axes` centred on `centers` with the given half-widths,
/// clipped to range. Other coordinates come from `base`.
fn local_grid(b: &Bounds, base: &[f64], axes: &[usize], dims: &[usize], half: &[f64]) -> Vec<Vec<f64>> {
    let per_axis: Vec<Vec<f64>> = axes
        .iter()
        .zip(dims)
        .zip(half)
        .map(|((&k, &n), &h)| {
            linspace(base[k] - h, base[k] + h, n).into_iter().map(|v| v.clamp(b.lo[k], b.hi[k])).collect()
        })
        .collect();
    cartesian(&per_axis)
        .into_iter()
        .map(|pt| {
            let mut t = base.to_vec();
            for (&k, v) in axes.iter().zip(pt) {
                t[k] = v;
            }
            t
        })
        .collect()
}

/// Exhaustive grid around each base candidate; returns the joint top-k
/// (candidates, scores) over everything evaluated.
fn beam_counted(
    b: &Bounds,
    f: &Counted,
    bases: &[Vec<f64>],
    axes: &[usize],
    dims: &[usize],
    half: &[f64],
    beam_k: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if axes.len() != dims.len() {
        return Err(Error::InvalidArgument(format!("grid has {} dims for {} axes", dims.len(), axes.len())));
    }
    let cands: Vec<Vec<f64>> = bases.iter().flat_map(|base| local_grid(b, base, axes, dims, half)).collect();
    if beam_k > cands.len() {
        return Err(Error::InvalidArgument(format!("beam_k {beam_k} exceeds grid size {}", cands.len())));
    }
    let scores = f.eval_all(&cands)?;
    let order = ranked(&scores);
    let top: Vec<usize> = order.into_iter().take(beam_k).collect();
    Ok((top.iter().map(|&i| cands[i].clone()).collect(), top.iter().map(|&i| scores[i]).collect()))
}

/// Grid search over `axes` centred on `centers` (half-width per axis);
/// top-k candidates with their costs, ties in grid order.
pub fn beam_search(
    b: &Bounds,
    f: &dyn CostFn,
    axes: &[usize],
    dims: &[usize],
    centers: &[f64],
    half: &[f64],
    beam_k: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    b.validate()?;
    let c = Counted { f, n: AtomicUsize::new(0) };
    beam_counted(b, &c, &[centers.to_vec()], axes, dims, half, beam_k)
}

/// Per round and parameter: sweep `points` values over the current
/// interval, move to the best if it improves, then halve the interval.
/// Returns (θ, cost, final grid spacing per parameter).
fn cd_counted(
    b: &Bounds,
    f: &Counted,
    theta0: &[f64],
    f0: f64,
    half0: &[f64],
    rounds: usize,
    points: usize,
    trace: &mut Vec<StageTrace>,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let mut theta = theta0.to_vec();
    let mut best = f0;
    let mut half = half0.to_vec();
    let mut spacing: Vec<f64> = half.iter().map(|h| 2.0 * h / (points - 1) as f64).collect();
    for r in 0..rounds {
        for k in 0..b.dim() {
            let cands: Vec<Vec<f64>> = linspace(theta[k] - half[k], theta[k] + half[k], points)
                .into_iter()
                .map(|v| {
                    let mut t = theta.clone();
                    t[k] = v.clamp(b.lo[k], b.hi[k]);
                    t
                })
                .collect();
            let costs = f.eval_all(&cands)?;
            let am = argmin(&costs);
            if costs[am] < best {
                best = costs[am];
                theta = cands[am].clone();
            }
            spacing[k] = 2.0 * half[k] / (points - 1) as f64;
            trace.push(StageTrace { stage: format!("cd_round{r}_param{k}"), candidates: cands, scores: costs });
            half[k] /= 2.0;
        }
    }
    Ok((theta, best, spacing))
}

/// Coordinate descent from θ₀ with initial half-interval `half`.
pub fn coordinate_descent(
    b: &Bounds,
    f: &dyn CostFn,
    theta0: &[f64],
    half: &[f64],
    rounds: usize,
    points: usize,
) -> Result<CalibResult> {
    b.validate()?;
    if points < 3 {
        return Err(Error::InvalidArgument("coordinate descent needs at least 3 points".into()));
    }
    let c = Counted { f, n: AtomicUsize::new(0) };
    let f0 = c.eval(theta0)?;
    let mut trace = Vec::new();
    let (theta, best, spacing) = cd_counted(b, &c, theta0, f0, half, rounds, points, &mut trace)?;
    Ok(CalibResult { theta_hat: theta, objective_value: best, stage_trace: trace, evals: c.count(), final_intervals: spacing })
}

fn dims_for(shape: Option<&Vec<usize>>, n: usize) -> Vec<usize> {
    match shape {
        Some(s) if s.len() == n => s.clone(),
        Some(s) if s.len() > n => s[..n].to_vec(),
        _ => vec![5; n],
    }
}

/// Hierarchical beam search: 1-D sweeps, one beam stage per parameter
/// group (joint top-k across the expansions of all retained candidates),
/// then coordinate descent from the best candidate.
pub fn alg1(b: &Bounds, f: &dyn CostFn, cfg: &CalibConfig) -> Result<CalibResult> {
    cfg.validate()?;
    b.validate()?;
    let c = Counted { f, n: AtomicUsize::new(0) };
    let mut trace = Vec::new();
    let d = b.dim();
    let mut centers = b.nominal.clone();
    for k in 0..d {
        let s = sweep_counted(b, &c, &b.nominal, k, cfg.sweep_points)?;
        centers[k] = s.values[s.argmin];
        trace.push(StageTrace {
            stage: format!("sweep_param{k}"),
            candidates: s.values.iter().map(|&v| vec![v]).collect(),
            scores: s.costs,
        });
    }
    let step: Vec<f64> = (0..d).map(|k| b.width(k) / (cfg.sweep_points - 1) as f64).collect();
    let groups: Vec<Vec<usize>> = if d <= 3 { vec![(0..d).collect()] } else { b.groups.clone() };
    let mut beam = vec![centers.clone()];
    let mut scores = vec![f64::INFINITY];
    for (gi, axes) in groups.iter().enumerate() {
        let dims = dims_for(cfg.grid_shapes.get(gi), axes.len());
        let half: Vec<f64> = axes.iter().map(|&k| step[k]).collect();
        let grid_size: usize = dims.iter().product::<usize>() * beam.len();
        let k = cfg.beam_k.min(grid_size);
        let (cands, sc) = beam_counted(b, &c, &beam, axes, &dims, &half, k)?;
        trace.push(StageTrace { stage: format!("beam_group{gi}"), candidates: cands.clone(), scores: sc.clone() });
        beam = cands;
        scores = sc;
    }
    let (theta, best, spacing) = cd_counted(b, &c, &beam[0], scores[0], &step, cfg.cd_rounds, cfg.cd_points, &mut trace)?;
    Ok(CalibResult { theta_hat: theta, objective_value: best, stage_trace: trace, evals: c.count(), final_intervals: spacing })
}

/// Central finite-difference gradient, one-sided at the range edges.
fn fd_grad(b: &Bounds, f: &Counted, theta: &[f64], rel: f64) -> Result<Vec<f64>> {
    let mut pts = Vec::with_capacity(2 * b.dim());
    for k in 0..b.dim() {
        let h = rel * b.width(k);
        let (mut p, mut m) = (theta.to_vec(), theta.to_vec());
        p[k] = (theta[k] + h).min(b.hi[k]);
        m[k] = (theta[k] - h).max(b.lo[k]);
        pts.push(p);
        pts.push(m);
    }
    let v = f.eval_all(&pts)?;
    Ok((0..b.dim())
        .map(|k| {
            let dx = pts[2 * k][k] - pts[2 * k + 1][k];
            if dx > 0.0 && v[2 * k].is_finite() && v[2 * k + 1].is_finite() {
                (v[2 * k] - v[2 * k + 1]) / dx
            } else {
                0.0
            }
        })
        .collect())
}

/// One refinement run. Update rule (RMSprop without momentum):
/// v ← 0.9v + 0.1g², θ_k ← θ_k − lr·range_k·g_k/(√v̂_k + ε), with lr decaying
/// geometrically from `lr_start` to `lr_end`. A step is kept only if it lowers
/// the cost; the run stops early once the best cost improved by less than
/// `early_stop_tol` over `early_stop_window` steps.
fn refine(b: &Bounds, f: &Counted, start: &[f64], f0: f64, cfg: &CalibConfig) -> Result<(Vec<f64>, f64)> {
    let d = b.dim();
    let mut theta = start.to_vec();
    let mut best = f0;
    let mut v = vec![0.0; d];
    let mut history = vec![best];
    for t in 0..cfg.refine_steps {
        let frac = if cfg.refine_steps > 1 { t as f64 / (cfg.refine_steps - 1) as f64 } else { 0.0 };
        let lr = cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(frac);
        let g = fd_grad(b, f, &theta, cfg.fd_step)?;
        let mut cand = theta.clone();
        for k in 0..d {
            v[k] = 0.9 * v[k] + 0.1 * g[k] * g[k];
            let vh = v[k] / (1.0 - 0.9f64.powi(t as i32 + 1));
            cand[k] -= lr * b.width(k) * g[k] / (vh.sqrt() + 1e-12);
        }
        b.clip(&mut cand);
        let fc = f.eval(&cand)?;
        if fc < best {
            best = fc;
            theta = cand;
        }
        history.push(best);
        let w = cfg.early_stop_window;
        if history.len() > w && history[history.len() - 1 - w] - best < cfg.early_stop_tol {
            break;
        }
    }
    Ok((theta, best))
}

/// Grid-seeded multi-start refinement. The seeding grid covers the first
/// parameter group (or all parameters when there are at most three), with
/// remaining parameters taken from the warm start or nominal.
pub fn alg2(b: &Bounds, f: &dyn CostFn, cfg: &CalibConfig, warm_start: Option<&[f64]>) -> Result<CalibResult> {
    cfg.validate()?;
    b.validate()?;
    if let Some(w) = warm_start {
        if w.len() != b.dim() {
            return Err(Error::InvalidArgument(format!("warm start has {} entries, expected {}", w.len(), b.dim())));
        }
    }
    let c = Counted { f, n: AtomicUsize::new(0) };
    let d = b.dim();
    let mut trace = Vec::new();
    let axes: Vec<usize> = if d <= 3 { (0..d).collect() } else { b.groups[0].clone() };
    let dims = dims_for(Some(&cfg.alg2_grid), axes.len());
    let mut base = warm_start.map(|w| w.to_vec()).unwrap_or_else(|| b.nominal.clone());
    b.clip(&mut base);
    let per_axis: Vec<Vec<f64>> = axes.iter().zip(&dims).map(|(&k, &n)| linspace(b.lo[k], b.hi[k], n)).collect();
    let grid: Vec<Vec<f64>> = cartesian(&per_axis)
        .into_iter()
        .map(|pt| {
            let mut t = base.clone();
            for (&k, v) in axes.iter().zip(pt) {
                t[k] = v;
            }
            t
        })
        .collect();
    let scores = c.eval_all(&grid)?;
    let order = ranked(&scores);
    let mut seeds: Vec<(Vec<f64>, f64)> =
        order.iter().take(cfg.seeds_topk).map(|&i| (grid[i].clone(), scores[i])).collect();
    trace.push(StageTrace {
        stage: "alg2_grid".into(),
        candidates: seeds.iter().map(|s| s.0.clone()).collect(),
        scores: seeds.iter().map(|s| s.1).collect(),
    });
    if let Some(w) = warm_start {
        let fw = c.eval(w)?;
        seeds.push((w.to_vec(), fw));
    }
    let jobs: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|s| (0..cfg.restarts).map(move |r| (s, r))).collect();
    let results: Vec<(Vec<f64>, f64)> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let (seed_theta, seed_cost) = &seeds[s];
            let (start, f0) = if r == 0 {
                (seed_theta.clone(), *seed_cost)
            } else {
                let mut rng = Rng::child(cfg.seed, (s * cfg.restarts + r) as u64);
                let mut t: Vec<f64> = seed_theta.iter().enumerate().map(|(k, v)| v + cfg.jitter * b.width(k) * rng.normal()).collect();
                b.clip(&mut t);
                let f0 = c.eval(&t)?;
                (t, f0)
            };
            refine(b, &c, &start, f0, cfg)
        })
        .collect::<Result<_>>()?;
    trace.push(StageTrace {
        stage: "alg2_refine".into(),
        candidates: results.iter().map(|r| r.0.clone()).collect(),
        scores: results.iter().map(|r| r.1).collect(),
    });
    let costs: Vec<f64> = results.iter().map(|r| r.1).collect();
    let best = argmin(&costs);
    let (mut theta, mut value) = results[best].clone();
    // the warm start is itself a candidate, so the result never worsens it
    if let (Some(w), Some(last)) = (warm_start, seeds.last()) {
        if last.1 < value {
            theta = w.to_vec();
            value = last.1;
        }
    }
    Ok(CalibResult { theta_hat: theta, objective_value: value, stage_trace: trace, evals: c.count(), final_intervals: Vec::new() })
}

/// Search space of a template's mismatch family.
pub fn bounds_of(t: &Template) -> Bounds {
    let f = &t.family;
    Bounds {
        nominal: f.theta_nom.clone(),
        lo: f.theta_lo.clone(),
        hi: f.theta_hi.clone(),
        groups: f.group_indices().into_iter().map(|(_, v)| v).collect(),
    }
}

/// Cost of reconstructing `y` with H(θ): negative oracle PSNR or the
/// normalised measurement residual.
pub struct TemplateCost<'a> {
    pub template: &'a Template,
    pub y: &'a Tensor,
    pub x_gt: Option<&'a Tensor>,
    pub objective: Objective,
    pub solver: SolverConfig,
}

impl<'a> TemplateCost<'a> {
    pub fn new(template: &'a Template, y: &'a Tensor, x_gt: Option<&'a Tensor>, cfg: &CalibConfig) -> Result<Self> {
        if cfg.objective == Objective::OraclePsnr && x_gt.is_none() {
            return Err(Error::InvalidArgument("oracle_psnr objective needs the ground-truth image".into()));
        }
        let solver = cfg.solver.clone().unwrap_or_else(|| template.default_solver());
        Ok(TemplateCost { template, y, x_gt, objective: cfg.objective, solver })
    }
}

impl CostFn for TemplateCost<'_> {
    fn cost(&self, theta: &[f64]) -> Result<f64> {
        let g = self.template.operator(&self.template.family.clip(theta))?;
        let r = reconstruct(&g, self.y, &self.solver)?;
        match self.objective {
            Objective::OraclePsnr => {
                let x = self.x_gt.expect("checked in constructor");
                Ok(-psnr(&r.x_hat, x, self.template.peak)?)
            }
            Objective::MeasurementResidual => Ok(r.residual),
        }
    }
}

pub fn calibrate_alg1(t: &Template, y: &Tensor, x_gt: Option<&Tensor>, cfg: &CalibConfig) -> Result<CalibResult> {
    alg1(&bounds_of(t), &TemplateCost::new(t, y, x_gt, cfg)?, cfg)
}

pub fn calibrate_alg2(
    t: &Template,
    y: &Tensor,
    x_gt: Option<&Tensor>,
    cfg: &CalibConfig,
    warm_start: Option<&[f64]>,
) -> Result<CalibResult> {
    alg2(&bounds_of(t), &TemplateCost::new(t, y, x_gt, cfg)?, cfg, warm_start)
}

/// Run the chosen method; for `alg1+2` the alg1 estimate warm-starts alg2
/// and the traces and eval counts are concatenated.
pub fn calibrate(t: &Template, y: &Tensor, x_gt: Option<&Tensor>, cfg: &CalibConfig, method: CalibMethod) -> Result<CalibResult> {
    match method {
        CalibMethod::Alg1 => calibrate_alg1(t, y, x_gt, cfg),
        CalibMethod::Alg2 => calibrate_alg2(t, y, x_gt, cfg, None),
        CalibMethod::Alg1Then2 => {
            let a = calibrate_alg1(t, y, x_gt, cfg)?;
            let mut b = calibrate_alg2(t, y, x_gt, cfg, Some(&a.theta_hat))?;
            let mut trace = a.stage_trace;
            trace.append(&mut b.stage_trace);
            b.stage_trace = trace;
            b.evals += a.evals;
            b.final_intervals = a.final_intervals;
            Ok(b)
        }
    }
}
