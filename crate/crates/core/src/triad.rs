//! Gate scorers (recoverability, carrier budget, operator mismatch), the
//! binding classifier and the assembled TriadReport.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphOperator;
use crate::metrics::{deserialize_db, serialize_db};
use crate::protocol::{bootstrap_ci, psnr_with, scenario_i_psnr, Statistic, BOOTSTRAP_B};
use crate::registry::{PhotonDefaults, Registry, Thresholds};
use crate::rng::derive_seed;
use crate::solvers::{reconstruct, SolverConfig};
use crate::templates::{instantiate_with, MismatchFamily, Phantom, Template, TemplateOptions};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate1Verdict {
    Adequate,
    Marginal,
    Deficient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate1Report {
    pub compression_ratio: f64,
    pub effective_rank: usize,
    pub null_dim: usize,
    pub verdict: Gate1Verdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegime {
    ShotLimited,
    ReadLimited,
    DarkLimited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate2Verdict {
    Sufficient,
    Marginal,
    Insufficient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonReport {
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub snr_db: f64,
    pub regime: NoiseRegime,
    pub photons_per_element: f64,
    pub verdict: Gate2Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub severity: f64,
    pub dominant_param: String,
    pub sensitivities: BTreeMap<String, f64>,
    pub expected_gain_db: f64,
    pub recommended_method: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Recoverability,
    CarrierBudget,
    OperatorMismatch,
}

impl Gate {
    pub fn action(self) -> &'static str {
        match self {
            Gate::Recoverability => "increase compression ratio",
            Gate::CarrierBudget => "improve carrier budget",
            Gate::OperatorMismatch => "apply mismatch correction",
        }
    }
}

/// Cost terms in dB.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub c_mismatch: f64,
    pub c_noise: f64,
    pub c_recover: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceScores {
    pub recoverability: f64,
    pub carrier_budget: f64,
    pub operator_mismatch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriadReport {
    pub dominant_gate: Gate,
    pub evidence_scores: EvidenceScores,
    pub confidence_interval: f64,
    pub recommended_action: String,
    pub parameter_sensitivities: BTreeMap<String, f64>,
    pub cost_terms: CostTerms,
    pub gate1: Gate1Report,
    pub photon: PhotonReport,
    pub mismatch: MismatchReport,
}

/// Dense real matrix of H over real inputs; complex outputs are stacked
/// as real parts followed by imaginary parts.
pub fn dense_real_matrix(g: &GraphOperator, max_columns: usize) -> Result<DMatrix<f64>> {
    if !g.all_linear() {
        return Err(Error::AdjointUndefined("dense materialization needs an all-linear graph".into()));
    }
    let n = numel(g.input_shape());
    if n > max_columns {
        return Err(Error::InvalidArgument(format!(
            "operator has {n} columns, above the dense cap of {max_columns}; a randomized estimator is not implemented"
        )));
    }
    let m = numel(g.output_shape());
    let rows = if g.output_dtype() == crate::tensor::Dtype::Complex128 { 2 * m } else { m };
    let mut a = DMatrix::<f64>::zeros(rows, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = g.forward(&Tensor::real(g.input_shape().to_vec(), e.clone())?)?;
        e[j] = 0.0;
        for (i, z) in col.to_complex_vec().iter().enumerate() {
            a[(i, j)] = z.re;
            if rows > m {
                a[(m + i, j)] = z.im;
            }
        }
    }
    Ok(a)
}

/// Compression ratio m/n, effective rank (σ > max(rows, n)·σ₁·1e-10) and verdict.
pub fn score_recoverability(g: &GraphOperator, th: &Thresholds) -> Result<Gate1Report> {
    let a = dense_real_matrix(g, th.dense_max_columns)?;
    let n = a.ncols();
    let m = numel(g.output_shape());
    let sv = a.singular_values();
    let s1 = sv.iter().cloned().fold(0.0, f64::max);
    let tol = a.nrows().max(n) as f64 * s1 * 1e-10;
    let rank = if s1 == 0.0 { 0 } else { sv.iter().filter(|&&s| s > tol).count() };
    let ratio = rank as f64 / n as f64;
    let verdict = if ratio >= th.gate1_adequate_rank_ratio {
        Gate1Verdict::Adequate
    } else if ratio >= th.gate1_marginal_rank_ratio {
        Gate1Verdict::Marginal
    } else {
        Gate1Verdict::Deficient
    };
    Ok(Gate1Report { compression_ratio: m as f64 / n as f64, effective_rank: rank, null_dim: n - rank, verdict })
}

/// Photon budget: N = power·qe·exposure; SNR = N²/(N + σ_read² + dark·exposure).
pub fn score_carrier(p: &PhotonDefaults, th: &Thresholds) -> Result<PhotonReport> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if !(p.source_power >= 0.0) {
        return bad(format!("source_power must be >= 0, got {}", p.source_power));
    }
    if !(p.qe > 0.0 && p.qe <= 1.0) {
        return bad(format!("qe must be in (0, 1], got {}", p.qe));
    }
    if !(p.exposure > 0.0) {
        return bad(format!("exposure must be > 0, got {}", p.exposure));
    }
    if !(p.read_sigma >= 0.0) || !(p.dark_rate >= 0.0) {
        return bad("read_sigma and dark_rate must be >= 0".into());
    }
    let n = p.source_power * p.qe * p.exposure;
    let (shot, read, dark) = (n, p.read_sigma * p.read_sigma, p.dark_rate * p.exposure);
    let regime = if shot >= read && shot >= dark {
        NoiseRegime::ShotLimited
    } else if read >= dark {
        NoiseRegime::ReadLimited
    } else {
        NoiseRegime::DarkLimited
    };
    let snr_db = if n == 0.0 { f64::NEG_INFINITY } else { 10.0 * (n * n / (shot + read + dark)).log10() };
    let verdict = if snr_db >= th.gate2_sufficient_snr_db {
        Gate2Verdict::Sufficient
    } else if snr_db >= th.gate2_marginal_snr_db {
        Gate2Verdict::Marginal
    } else {
        Gate2Verdict::Insufficient
    };
    Ok(PhotonReport { snr_db, regime, photons_per_element: n, verdict })
}

/// Severity and dominant parameter; sensitivities and expected gain are
/// filled in by [`diagnose`].
pub fn score_mismatch(family: &MismatchFamily, theta_true: &[f64], theta_nom: &[f64]) -> Result<MismatchReport> {
    let d = family.dim();
    if theta_true.len() != d || theta_nom.len() != d {
        return Err(Error::InvalidArgument(format!("mismatch vectors must have length {d}")));
    }
    let w = family.widths();
    let num: f64 = theta_true.iter().zip(theta_nom).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let severity = (num / den).clamp(0.0, 1.0);
    let mut dom = 0;
    let mut best = -1.0;
    for k in 0..d {
        let r = (theta_true[k] - theta_nom[k]).abs() / w[k];
        if r > best {
            best = r;
            dom = k;
        }
    }
    let method = if d > 1 { "alg1+2" } else { "alg1" };
    Ok(MismatchReport {
        severity,
        dominant_param: family.param_names[dom].clone(),
        sensitivities: BTreeMap::new(),
        expected_gain_db: 0.0,
        recommended_method: method.to_string(),
    })
}

/// ∂PSNR/∂θ_k by central differences: data `y` of phantom `x`,
/// reconstructed with H(θ ± h·e_k).
pub fn sensitivity(
    t: &Template,
    solver: &SolverConfig,
    y: &Tensor,
    x: &Phantom,
    theta: &[f64],
    k: usize,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    if k >= t.family.dim() {
        return Err(Error::InvalidArgument(format!("parameter index {k} out of range")));
    }
    let (mut p, mut m) = (theta.to_vec(), theta.to_vec());
    p[k] += h;
    m[k] -= h;
    t.family.check(&p)?;
    t.family.check(&m)?;
    Ok((psnr_with(t, &p, solver, y, x)? - psnr_with(t, &m, solver, y, x)?) / (2.0 * h))
}

/// Gates ordered by tie priority.
const PRIORITY: [Gate; 3] = [Gate::Recoverability, Gate::CarrierBudget, Gate::OperatorMismatch];

fn evidence(c: &CostTerms) -> EvidenceScores {
    let v = [c.c_recover.max(0.0), c.c_noise.max(0.0), c.c_mismatch.max(0.0)];
    let s: f64 = v.iter().sum();
    let n = if s > 0.0 { v.map(|x| x / s) } else { [1.0 / 3.0; 3] };
    EvidenceScores { recoverability: n[0], carrier_budget: n[1], operator_mismatch: n[2] }
}

fn argmax_gate(e: &EvidenceScores) -> Gate {
    let v = [e.recoverability, e.carrier_budget, e.operator_mismatch];
    let mut best = 0;
    for i in 1..3 {
        if v[i] > v[best] {
            best = i;
        }
    }
    PRIORITY[best]
}

/// C_mismatch = I − II, C_noise = ideal − noisy, C_recover = limit − I;
/// dominant gate is the argmax (negative terms count as zero).
pub fn bind_gate(psnr_i: f64, psnr_ii: f64, psnr_noisy: f64, psnr_ideal: f64, psnr_limit: f64) -> Result<(Gate, CostTerms)> {
    for (name, v) in [("I", psnr_i), ("II", psnr_ii), ("noisy", psnr_noisy), ("ideal", psnr_ideal), ("limit", psnr_limit)] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("bind_gate: PSNR `{name}` is not finite ({v})")));
        }
    }
    let c = CostTerms { c_mismatch: psnr_i - psnr_ii, c_noise: psnr_ideal - psnr_noisy, c_recover: psnr_limit - psnr_i };
    Ok((argmax_gate(&evidence(&c)), c))
}

pub fn make_triad_report(
    gate1: Gate1Report,
    photon: PhotonReport,
    mismatch: MismatchReport,
    binding: (Gate, CostTerms),
    ci_width: f64,
) -> TriadReport {
    let (gate, c) = binding;
    let ev = evidence(&c);
    TriadReport {
        dominant_gate: gate,
        evidence_scores: ev,
        confidence_interval: ci_width,
        recommended_action: gate.action().to_string(),
        parameter_sensitivities: mismatch.sensitivities.clone(),
        cost_terms: c,
        gate1,
        photon,
        mismatch,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseOptions {
    /// Overrides the template's photon budget for the noisy runs.
    pub photon: Option<PhotonDefaults>,
    pub bootstrap_b: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions { photon: None, bootstrap_b: BOOTSTRAP_B }
    }
}

/// Run all three gates on a template with mismatch θ_true.
///
/// PSNR_I and PSNR_II come from noise-free data so that C_mismatch and
/// C_recover exclude noise loss; ψ_noisy adds the photon noise model;
/// ψ_limit is Scenario I of the same template at full sampling.
pub fn diagnose(
    t: &Template,
    theta_true: &[f64],
    solver: &SolverConfig,
    phantoms: &[Phantom],
    seed: u64,
    opts: &DiagnoseOptions,
) -> Result<TriadReport> {
    diagnose_with(Registry::builtin(), t, theta_true, solver, phantoms, seed, opts)
}

pub fn diagnose_with(
    registry: &Registry,
    t: &Template,
    theta_true: &[f64],
    solver: &SolverConfig,
    phantoms: &[Phantom],
    seed: u64,
    opts: &DiagnoseOptions,
) -> Result<TriadReport> {
    if phantoms.is_empty() {
        return Err(Error::InvalidArgument("need at least one phantom".into()));
    }
    t.family.check(theta_true)?;
    let th = &registry.thresholds;
    let gate1 = score_recoverability(&t.nominal_operator()?, th)?;
    let photon_budget = opts.photon.unwrap_or_else(|| t.photon());
    let photon = score_carrier(&photon_budget, th)?;

    let g_true = t.operator(theta_true)?;
    let g_nom = t.nominal_operator()?;
    let mut per_i = Vec::with_capacity(phantoms.len());
    let mut per_ii = Vec::with_capacity(phantoms.len());
    let mut ys = Vec::with_capacity(phantoms.len());
    for p in phantoms {
        let y = g_true.forward(&p.data)?;
        per_i.push(crate::metrics::psnr(&reconstruct(&g_true, &y, solver)?.x_hat, &p.data, p.peak)?);
        per_ii.push(crate::metrics::psnr(&reconstruct(&g_nom, &y, solver)?.x_hat, &p.data, p.peak)?);
        ys.push(y);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (psnr_i, psnr_ii) = (mean(&per_i), mean(&per_ii));
    let psnr_ideal = psnr_i;
    let noise = Template::noise_model_for(&photon_budget);
    let psnr_noisy = match noise {
        Ok(nm) => {
            let mut v = Vec::with_capacity(phantoms.len());
            for (s, p) in phantoms.iter().enumerate() {
                let y = nm.apply(&ys[s], &mut crate::rng::Rng::new(derive_seed(seed, s as u64)))?;
                v.push(crate::metrics::psnr(&reconstruct(&g_true, &y, solver)?.x_hat, &p.data, p.peak)?);
            }
            mean(&v)
        }
        // zero photon budget: nothing reaches the detector
        Err(_) => {
            let mut v = Vec::with_capacity(phantoms.len());
            for p in phantoms {
                v.push(crate::metrics::psnr(&Tensor::zeros(p.data.shape(), crate::tensor::Dtype::Real64)?, &p.data, p.peak)?);
            }
            mean(&v)
        }
    };
    let full = TemplateOptions { sampling_ratio: Some(1.0), ..t.options.clone() };
    let psnr_limit = match t.modality.as_str() {
        "spc" | "mri" => {
            let tf = instantiate_with(registry, &t.modality, &full)?;
            scenario_i_psnr(&tf, theta_true, solver, phantoms, false, seed)?
        }
        _ => psnr_i,
    };

    let mut mismatch = score_mismatch(&t.family, theta_true, &t.family.theta_nom)?;
    let probe = &phantoms[0];
    let w = t.family.widths();
    for k in 0..t.family.dim() {
        let h = 0.05 * w[k];
        let mut at = t.family.theta_nom.clone();
        // keep the central difference inside the range
        at[k] = at[k].clamp(t.family.theta_lo[k] + h, t.family.theta_hi[k] - h);
        let s = sensitivity(t, solver, &ys[0], probe, &at, k, h)?;
        mismatch.sensitivities.insert(t.family.param_names[k].clone(), s);
    }
    mismatch.expected_gain_db = psnr_i - psnr_ii;

    let binding = bind_gate(psnr_i, psnr_ii, psnr_noisy, psnr_ideal, psnr_limit)?;
    let gaps: Vec<f64> = per_i.iter().zip(&per_ii).map(|(a, b)| a - b).collect();
    let (lo, hi) = bootstrap_ci(&gaps, opts.bootstrap_b, seed, Statistic::Mean)?;
    Ok(make_triad_report(gate1, photon, mismatch, binding, hi - lo))
}
