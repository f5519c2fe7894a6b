//! Four-scenario evaluation, recovery ratio and bootstrap statistics.
//!
//! All scenarios of a scene share one measurement y = H(θ_true)x:
//! I reconstructs with H(θ_true), II with H(θ_nom), III with H(θ_true)
//! again (oracle correction, identical to I when sensing and
//! reconstruction operators coincide) and IV with H(θ̂).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibConfig, CalibMethod, CalibResult};
use crate::error::{Error, Result};
use crate::graph::GraphOperator;
use crate::metrics::{deserialize_db, psnr, sam, serialize_db, ssim};
use crate::rng::{derive_seed, Rng};
use crate::solvers::{reconstruct, SolverConfig};
use crate::templates::{Phantom, Template};
use crate::tensor::Tensor;

pub const BOOTSTRAP_B: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub psnr_db: f64,
    /// Absent when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sam_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    #[serde(rename = "I")]
    pub i: SceneMetrics,
    #[serde(rename = "II")]
    pub ii: SceneMetrics,
    #[serde(rename = "III")]
    pub iii: SceneMetrics,
    #[serde(rename = "IV")]
    pub iv: SceneMetrics,
}

impl ScenarioSet {
    fn all(&self) -> [&SceneMetrics; 4] {
        [&self.i, &self.ii, &self.iii, &self.iv]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub modality: String,
    pub per_scene: BTreeMap<String, ScenarioSet>,
    pub means: ScenarioSet,
    /// `None` when PSNR_I ≤ PSNR_II (the mismatch gate is not binding).
    pub rho: Option<f64>,
    pub rho_ci: Option<(f64, f64)>,
    /// Mean of the per-scene estimates.
    pub theta_hat: Vec<f64>,
    pub theta_hats: BTreeMap<String, Vec<f64>>,
    pub theta_true: Vec<f64>,
    pub theta_nom: Vec<f64>,
    pub param_rmse: Vec<f64>,
    pub noisy: bool,
    pub seed: u64,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub calibration: BTreeMap<String, CalibResult>,
}

/// Where Scenario IV's θ̂ comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ThetaEstimate {
    Fixed(Vec<f64>),
    Calibrate { method: CalibMethod, cfg: CalibConfig },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioOptions {
    pub noisy: bool,
    pub iv: ThetaEstimate,
    pub bootstrap_b: usize,
}

impl ScenarioOptions {
    pub fn fixed(theta_hat: Vec<f64>) -> Self {
        ScenarioOptions { noisy: false, iv: ThetaEstimate::Fixed(theta_hat), bootstrap_b: BOOTSTRAP_B }
    }

    pub fn calibrated(method: CalibMethod, cfg: CalibConfig) -> Self {
        ScenarioOptions { noisy: false, iv: ThetaEstimate::Calibrate { method, cfg }, bootstrap_b: BOOTSTRAP_B }
    }
}

/// (IV − II)/(I − II); only defined when I > II.
pub fn recovery_ratio(psnr_i: f64, psnr_ii: f64, psnr_iv: f64) -> Result<f64> {
    if !(psnr_i > psnr_ii) {
        return Err(Error::GateNotBinding { psnr_i, psnr_ii });
    }
    if psnr_i.is_infinite() {
        return Err(Error::Numerical("recovery ratio undefined for infinite PSNR_I".into()));
    }
    Ok((psnr_iv - psnr_ii) / (psnr_i - psnr_ii))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Median,
}

fn stat_of(values: &[f64], s: Statistic) -> f64 {
    match s {
        Statistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Statistic::Median => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            }
        }
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over `n` scenes: `stat` receives resampled scene
/// indices and may decline a resample by returning `None`.
pub fn bootstrap_ci_with(n: usize, b: usize, seed: u64, stat: impl Fn(&[usize]) -> Option<f64>) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one scene".into()));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("bootstrap needs B >= 1".into()));
    }
    let mut rng = Rng::new(seed);
    let mut idx = vec![0usize; n];
    let mut vals = Vec::with_capacity(b);
    for _ in 0..b {
        for v in idx.iter_mut() {
            *v = rng.below(n);
        }
        if let Some(s) = stat(&idx) {
            if s.is_finite() {
                vals.push(s);
            }
        }
    }
    if vals.is_empty() {
        return Err(Error::Numerical("no bootstrap resample produced a finite statistic".into()));
    }
    vals.sort_by(f64::total_cmp);
    Ok((quantile(&vals, 0.025), quantile(&vals, 0.975)))
}

/// 2.5th/97.5th percentile interval of the statistic over B resamples.
pub fn bootstrap_ci(values: &[f64], b: usize, seed: u64, statistic: Statistic) -> Result<(f64, f64)> {
    bootstrap_ci_with(values.len(), b, seed, |idx| {
        let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        Some(stat_of(&v, statistic))
    })
}

/// Per-parameter RMSE of per-scene estimates against θ_true.
pub fn param_rmse(theta_hats: &[Vec<f64>], theta_true: &[f64]) -> Result<Vec<f64>> {
    if theta_hats.is_empty() {
        return Err(Error::InvalidArgument("param_rmse needs at least one scene".into()));
    }
    if let Some(bad) = theta_hats.iter().find(|t| t.len() != theta_true.len()) {
        return Err(Error::InvalidArgument(format!("estimate of length {} vs θ_true of length {}", bad.len(), theta_true.len())));
    }
    let n = theta_hats.len() as f64;
    Ok((0..theta_true.len())
        .map(|k| (theta_hats.iter().map(|t| (t[k] - theta_true[k]).powi(2)).sum::<f64>() / n).sqrt())
        .collect())
}

fn scene_metrics(x_hat: &Tensor, p: &Phantom, spectral: bool) -> Result<SceneMetrics> {
    let ssim = match ssim(x_hat, &p.data, p.peak) {
        Ok(v) => Some(v),
        Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    let sam_deg = if spectral { Some(sam(x_hat, &p.data)?) } else { None };
    Ok(SceneMetrics { psnr_db: psnr(x_hat, &p.data, p.peak)?, ssim, sam_deg })
}

/// Measurement of one scene under H, with optional seeded noise.
pub fn measure(t: &Template, g: &GraphOperator, x: &Tensor, noisy: bool, seed: u64) -> Result<Tensor> {
    let y = g.forward(x)?;
    if noisy {
        t.noise_model()?.apply(&y, &mut Rng::new(seed))
    } else {
        Ok(y)
    }
}

fn mean_of<'a>(it: impl Iterator<Item = &'a SceneMetrics>) -> SceneMetrics {
    let v: Vec<&SceneMetrics> = it.collect();
    let n = v.len() as f64;
    let opt_mean = |f: &dyn Fn(&SceneMetrics) -> Option<f64>| -> Option<f64> {
        let xs: Option<Vec<f64>> = v.iter().map(|m| f(m)).collect();
        xs.map(|x| x.iter().sum::<f64>() / n)
    };
    SceneMetrics {
        psnr_db: v.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        ssim: opt_mean(&|m| m.ssim),
        sam_deg: opt_mean(&|m| m.sam_deg),
    }
}

/// Mean Scenario-I PSNR (reconstruct with the generating operator).
pub fn scenario_i_psnr(
    t: &Template,
    theta: &[f64],
    solver: &SolverConfig,
    phantoms: &[Phantom],
    noisy: bool,
    seed: u64,
) -> Result<f64> {
    let g = t.operator(theta)?;
    let v: Vec<f64> = phantoms
        .par_iter()
        .enumerate()
        .map(|(s, p)| {
            let y = measure(t, &g, &p.data, noisy, derive_seed(seed, s as u64))?;
            psnr(&reconstruct(&g, &y, solver)?.x_hat, &p.data, p.peak)
        })
        .collect::<Result<_>>()?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Scenario-II style PSNR when data come from `y` and reconstruction uses H(θ).
pub fn psnr_with(t: &Template, theta: &[f64], solver: &SolverConfig, y: &Tensor, x: &Phantom) -> Result<f64> {
    let g = t.operator(theta)?;
    psnr(&reconstruct(&g, y, solver)?.x_hat, &x.data, x.peak)
}

struct SceneOutcome {
    set: ScenarioSet,
    theta_hat: Vec<f64>,
    calib: Option<CalibResult>,
}

pub fn run_scenarios(
    t: &Template,
    theta_true: &[f64],
    solver: &SolverConfig,
    phantoms: &[Phantom],
    seed: u64,
    opts: &ScenarioOptions,
) -> Result<ScenarioResult> {
    if phantoms.is_empty() {
        return Err(Error::InvalidArgument("need at least one phantom".into()));
    }
    t.family.check(theta_true)?;
    if let ThetaEstimate::Fixed(th) = &opts.iv {
        t.family.check(th)?;
    }
    let spectral = t.modality == "cassi";
    let g_true = t.operator(theta_true)?;
    let g_nom = t.nominal_operator()?;
    let outcomes: Vec<SceneOutcome> = phantoms
        .par_iter()
        .enumerate()
        .map(|(s, p)| -> Result<SceneOutcome> {
            let y = measure(t, &g_true, &p.data, opts.noisy, derive_seed(seed, s as u64))?;
            let r_true = reconstruct(&g_true, &y, solver)?;
            let m_true = scene_metrics(&r_true.x_hat, p, spectral)?;
            let m_nom = scene_metrics(&reconstruct(&g_nom, &y, solver)?.x_hat, p, spectral)?;
            let (theta_hat, calib) = match &opts.iv {
                ThetaEstimate::Fixed(th) => (th.clone(), None),
                ThetaEstimate::Calibrate { method, cfg } => {
                    let cfg = CalibConfig { seed: derive_seed(cfg.seed ^ seed, s as u64), ..cfg.clone() };
                    let r = calibrate(t, &y, Some(&p.data), &cfg, *method)?;
                    (r.theta_hat.clone(), Some(r))
                }
            };
            let m_iv = if theta_hat.as_slice() == theta_true {
                m_true.clone()
            } else {
                scene_metrics(&reconstruct(&t.operator(&theta_hat)?, &y, solver)?.x_hat, p, spectral)?
            };
            // III reconstructs the same data with the same operator as I
            let set = ScenarioSet { i: m_true.clone(), ii: m_nom, iii: m_true, iv: m_iv };
            Ok(SceneOutcome { set, theta_hat, calib })
        })
        .collect::<Result<_>>()?;

    let mut per_scene = BTreeMap::new();
    let mut theta_hats = BTreeMap::new();
    let mut calibration = BTreeMap::new();
    for (p, o) in phantoms.iter().zip(&outcomes) {
        per_scene.insert(p.name.clone(), o.set.clone());
        theta_hats.insert(p.name.clone(), o.theta_hat.clone());
        if let Some(c) = &o.calib {
            calibration.insert(p.name.clone(), c.clone());
        }
    }
    let sets: Vec<&ScenarioSet> = outcomes.iter().map(|o| &o.set).collect();
    let means = ScenarioSet {
        i: mean_of(sets.iter().map(|s| s.all()[0])),
        ii: mean_of(sets.iter().map(|s| s.all()[1])),
        iii: mean_of(sets.iter().map(|s| s.all()[2])),
        iv: mean_of(sets.iter().map(|s| s.all()[3])),
    };
    let rho = recovery_ratio(means.i.psnr_db, means.ii.psnr_db, means.iv.psnr_db).ok();
    let rho_ci = if rho.is_some() {
        let col = |f: fn(&ScenarioSet) -> f64| -> Vec<f64> { sets.iter().map(|s| f(s)).collect() };
        let (a, b, c) = (col(|s| s.i.psnr_db), col(|s| s.ii.psnr_db), col(|s| s.iv.psnr_db));
        bootstrap_ci_with(sets.len(), opts.bootstrap_b, seed, |idx| {
            let m = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
            recovery_ratio(m(&a), m(&b), m(&c)).ok()
        })
        .ok()
    } else {
        None
    };
    let hats: Vec<Vec<f64>> = outcomes.iter().map(|o| o.theta_hat.clone()).collect();
    let d = theta_true.len();
    let theta_hat = (0..d).map(|k| hats.iter().map(|h| h[k]).sum::<f64>() / hats.len() as f64).collect();
    Ok(ScenarioResult {
        modality: t.modality.clone(),
        per_scene,
        means,
        rho,
        rho_ci,
        theta_hat,
        theta_hats,
        theta_true: theta_true.to_vec(),
        theta_nom: t.family.theta_nom.clone(),
        param_rmse: param_rmse(&hats, theta_true)?,
        noisy: opts.noisy,
        seed,
        solver: solver.clone(),
        calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{template, TemplateOptions};

    #[test]
    fn recovery_ratio_examples() {
        assert_eq!(recovery_ratio(30.0, 20.0, 30.0).unwrap(), 1.0);
        assert_eq!(recovery_ratio(30.0, 20.0, 20.0).unwrap(), 0.0);
        assert_eq!(recovery_ratio(30.0, 20.0, 25.0).unwrap(), 0.5);
        assert_eq!(recovery_ratio(20.0, 20.0, 25.0).unwrap_err().code(), "GATE_NOT_BINDING");
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_ci(&[4.0; 5], 1000, 1, Statistic::Mean).unwrap(), (4.0, 4.0));
        assert_eq!(bootstrap_ci(&[7.5], 1000, 1, Statistic::Mean).unwrap(), (7.5, 7.5));
        let (lo, hi) = bootstrap_ci(&[0.0, 10.0], 1000, 3, Statistic::Mean).unwrap();
        assert!(lo <= 5.0 && 5.0 <= hi && lo >= 0.0 && hi <= 10.0);
        assert_eq!(
            bootstrap_ci(&[1.0, 2.0, 6.0], 1000, 9, Statistic::Mean).unwrap(),
            bootstrap_ci(&[1.0, 2.0, 6.0], 1000, 9, Statistic::Mean).unwrap()
        );
        assert!(bootstrap_ci(&[1.0], 0, 0, Statistic::Mean).is_err());
        assert!(bootstrap_ci(&[], 10, 0, Statistic::Mean).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(param_rmse(&[vec![1.0, 2.0]], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!((param_rmse(&[vec![1.1]], &[1.0]).unwrap()[0] - 0.1).abs() < 1e-12);
        let r = param_rmse(&[vec![0.0], vec![0.2]], &[0.0]).unwrap()[0];
        assert!((r - 0.02f64.sqrt()).abs() < 1e-12);
        assert!(param_rmse(&[vec![0.0, 1.0]], &[0.0]).is_err());
    }

    #[test]
    fn degenerate_mismatch_gives_identical_scenarios() {
        let t = template("lensless", &TemplateOptions::new(16)).unwrap();
        let ph = t.phantoms(2, 0).unwrap();
        let nom = t.family.theta_nom.clone();
        let solver = SolverConfig { iters: 20, ..t.default_solver() };
        let r = run_scenarios(&t, &nom, &solver, &ph, 0, &ScenarioOptions::fixed(nom.clone())).unwrap();
        assert_eq!(r.means.i, r.means.ii);
        assert_eq!(r.means.i, r.means.iii);
        assert!(r.rho.is_none());
    }

    #[test]
    fn scenario_json_writes_inf_as_string() {
        let m = SceneMetrics { psnr_db: f64::INFINITY, ssim: Some(1.0), sam_deg: None };
        let j = serde_json::to_string(&m).unwrap();
        assert!(j.contains("\"inf\""));
        let back: SceneMetrics = serde_json::from_str(&j).unwrap();
        assert_eq!(back.psnr_db, f64::INFINITY);
    }
}
