//! Desk-scale modality templates: nominal graphs, mismatch families and
//! phantoms for CASSI, CACTI, SPC, CT, MRI and lensless imaging.

mod phantoms;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphMetadata, GraphOperator, GraphSpec, NodeSpec};
use crate::primitives::kernels::gaussian_kernel;
use crate::primitives::{freq_index, NoiseModel, ParamValue, Params};
use crate::registry::{PhotonDefaults, Registry, TemplateEntry};
use crate::rng::{derive_seed, Rng};
use crate::solvers::SolverConfig;
use crate::tensor::{Dtype, Tensor};

pub use phantoms::{make_phantoms, Phantom};

/// Seed stream used for template randomness (masks, patterns, sampling sets).
pub const TEMPLATE_SEED: u64 = 0x0C0D_EDA9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateOptions {
    pub size: usize,
    pub fidelity: u8,
    /// Overrides the registry sampling ratio (SPC, MRI).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_ratio: Option<f64>,
}

impl TemplateOptions {
    pub fn new(size: usize) -> Self {
        TemplateOptions { size, fidelity: 1, sampling_ratio: None }
    }
}

/// Modality-specific data from which mismatched operators are rebuilt.
#[derive(Clone, Debug, PartialEq)]
enum Base {
    Cassi { n: usize, mask: Vec<f64> },
    Cacti { n: usize, frames: usize, masks: Vec<f64> },
    Spc { n: usize, m: usize, patterns: Vec<f64> },
    Ct,
    Mri { n: usize, coil: Vec<f64> },
    Lensless { n: usize },
}

/// Named parameter vector θ with ranges, and the rule that turns a
/// nominal spec into H(θ).
#[derive(Clone, Debug, PartialEq)]
pub struct MismatchFamily {
    pub modality: String,
    pub param_names: Vec<String>,
    pub groups: Vec<String>,
    pub units: Vec<String>,
    pub theta_nom: Vec<f64>,
    pub theta_lo: Vec<f64>,
    pub theta_hi: Vec<f64>,
    pub example_true: Vec<f64>,
    base: Base,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchSummary {
    pub modality: String,
    pub param_names: Vec<String>,
    pub groups: Vec<String>,
    pub theta_nom: Vec<f64>,
    pub theta_range: Vec<(f64, f64)>,
}

impl MismatchFamily {
    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.theta_lo.iter().zip(&self.theta_hi).map(|(l, h)| h - l).collect()
    }

    pub fn summary(&self) -> MismatchSummary {
        MismatchSummary {
            modality: self.modality.clone(),
            param_names: self.param_names.clone(),
            groups: self.groups.clone(),
            theta_nom: self.theta_nom.clone(),
            theta_range: self.theta_lo.iter().copied().zip(self.theta_hi.iter().copied()).collect(),
        }
    }

    /// Distinct groups in first-appearance order, with member indices.
    pub fn group_indices(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, g) in self.groups.iter().enumerate() {
            match out.iter_mut().find(|(n, _)| n == g) {
                Some((_, v)) => v.push(i),
                None => out.push((g.clone(), vec![i])),
            }
        }
        out
    }

    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} expects {} mismatch parameters, got {}",
                self.modality,
                self.dim(),
                theta.len()
            )));
        }
        for (k, &v) in theta.iter().enumerate() {
            let (lo, hi) = (self.theta_lo[k], self.theta_hi[k]);
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::OutOfRange { name: self.param_names[k].clone(), value: v, lo, hi });
            }
        }
        Ok(())
    }

    /// Clamp into range.
    pub fn clip(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().enumerate().map(|(k, &v)| v.clamp(self.theta_lo[k], self.theta_hi[k])).collect()
    }

    /// A new spec whose operator is H(θ). The input spec is not modified.
    pub fn apply(&self, spec: &GraphSpec, theta: &[f64]) -> Result<GraphSpec> {
        self.check(theta)?;
        let mut out = spec.clone();
        let mut set = |node: &str, key: &str, v: ParamValue| -> Result<()> {
            let n = out
                .node_mut(node)
                .ok_or_else(|| Error::InvalidArgument(format!("{} spec has no node `{node}`", self.modality)))?;
            n.params.insert(key.to_string(), v);
            Ok(())
        };
        match &self.base {
            Base::Cassi { n, mask } => {
                let warped = warp2(mask, *n, *n, theta[0], theta[1], theta[2]);
                set("mask", "mask", (&Tensor::real(vec![*n, *n], warped)?).into())?;
                set("disperse", "slope", theta[3].into())?;
                set("disperse", "angle", theta[4].into())?;
            }
            Base::Cacti { n, frames, masks } => {
                let w = cacti_masks(masks, *n, *frames, theta[0], theta[1], theta[2]);
                set("mask", "mask", (&Tensor::real(vec![*n, *n, *frames], w)?).into())?;
            }
            Base::Spc { n, m, patterns } => {
                let nn = n * n;
                let mut p = patterns.clone();
                for (row, chunk) in p.chunks_mut(nn).enumerate() {
                    let g = (-theta[0] * row as f64).exp();
                    chunk.iter_mut().for_each(|v| *v *= g);
                }
                set("mask", "mask", (&Tensor::real(vec![*m, *n, *n], p)?).into())?;
            }
            Base::Ct => set("project", "offset", theta[0].into())?,
            Base::Mri { n, coil } => {
                let c: Vec<f64> = coil.iter().map(|v| v * theta[0]).collect();
                set("coil", "mask", (&Tensor::real(vec![*n, *n], c)?).into())?;
            }
            Base::Lensless { n } => {
                let (k, side) = gaussian_kernel(theta[0], *n);
                set("psf", "kernel", (&Tensor::real(vec![side, side], k)?).into())?;
            }
        }
        Ok(out)
    }
}

/// Bilinear resampling of an `h × w` map shifted by (dx, dy) and rotated
/// by `rot_deg` about the centre; zero outside.
pub fn warp2(src: &[f64], h: usize, w: usize, dx: f64, dy: f64, rot_deg: f64) -> Vec<f64> {
    let (sn, cs) = rot_deg.to_radians().sin_cos();
    let (ch, cw) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0.0
        } else {
            src[i as usize * w + j as usize]
        }
    };
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let u = j as f64 - cw - dx;
            let v = i as f64 - ch - dy;
            let su = cs * u + sn * v + cw;
            let sv = -sn * u + cs * v + ch;
            let (i0, j0) = (sv.floor(), su.floor());
            let (fi, fj) = (sv - i0, su - j0);
            let (i0, j0) = (i0 as isize, j0 as isize);
            let mut acc = (1.0 - fi) * (1.0 - fj) * at(i0, j0);
            if fj > 0.0 {
                acc += (1.0 - fi) * fj * at(i0, j0 + 1);
            }
            if fi > 0.0 {
                acc += fi * (1.0 - fj) * at(i0 + 1, j0);
                if fj > 0.0 {
                    acc += fi * fj * at(i0 + 1, j0 + 1);
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Spatially warp each frame's mask, then apply a circular fractional
/// timing offset `dt` (in frames) by linear interpolation between frames.
fn cacti_masks(masks: &[f64], n: usize, frames: usize, dx: f64, dy: f64, dt: f64) -> Vec<f64> {
    let per_frame: Vec<Vec<f64>> = (0..frames)
        .map(|t| {
            let f: Vec<f64> = (0..n * n).map(|p| masks[p * frames + t]).collect();
            warp2(&f, n, n, dx, dy, 0.0)
        })
        .collect();
    let mut out = vec![0.0; n * n * frames];
    for t in 0..frames {
        let src = t as f64 - dt;
        let t0 = src.floor();
        let f = src - t0;
        let a = (t0 as isize).rem_euclid(frames as isize) as usize;
        let b = (a + 1) % frames;
        for p in 0..n * n {
            out[p * frames + t] = (1.0 - f) * per_frame[a][p] + if f > 0.0 { f * per_frame[b][p] } else { 0.0 };
        }
    }
    out
}

fn node(id: &str, prim: &str, params: Params) -> NodeSpec {
    NodeSpec { node_id: id.into(), primitive_id: prim.into(), params }
}

fn params(pairs: Vec<(&str, ParamValue)>) -> Params {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn detect() -> NodeSpec {
    node("detect", "Detect", params(vec![("family", "linear_field".into()), ("gain", 1.0.into())]))
}

/// Smooth, slightly non-uniform detector response over the output.
fn response_map(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| 0.95 + 0.05 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
    Tensor::real(shape.to_vec(), data).expect("finite response")
}

/// Center-weighted Cartesian row selection: the lowest-frequency half of
/// the budget is always kept, the rest drawn with weight 1/(1+|k|).
pub fn mri_rows(n: usize, ratio: f64, rng: &mut Rng) -> Vec<usize> {
    let n_rows = ((ratio * n as f64).round() as usize).clamp(1, n);
    let mut by_freq: Vec<usize> = (0..n).collect();
    by_freq.sort_by(|&a, &b| freq_index(a, n).abs().total_cmp(&freq_index(b, n).abs()).then(a.cmp(&b)));
    let n_center = n_rows.div_ceil(2);
    let mut chosen: Vec<usize> = by_freq[..n_center].to_vec();
    let mut pool: Vec<usize> = by_freq[n_center..].to_vec();
    while chosen.len() < n_rows {
        let weights: Vec<f64> = pool.iter().map(|&k| 1.0 / (1.0 + freq_index(k, n).abs())).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.uniform() * total;
        let mut pick = pool.len() - 1;
        for (idx, w) in weights.iter().enumerate() {
            if u < *w {
                pick = idx;
                break;
            }
            u -= w;
        }
        chosen.push(pool.remove(pick));
    }
    chosen.sort_unstable();
    chosen
}

fn coil_map(n: usize) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let s = 0.6 * n as f64;
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let r2 = (i as f64 - c - 0.15 * n as f64).powi(2) + (j as f64 - c).powi(2);
            v.push(0.5 + 0.5 * (-r2 / (2.0 * s * s)).exp());
        }
    }
    v
}

/// An instantiated template: nominal graph, mismatch family and defaults.
#[derive(Clone, Debug)]
pub struct Template {
    pub modality: String,
    pub options: TemplateOptions,
    pub entry: TemplateEntry,
    pub family: MismatchFamily,
    pub nominal: GraphSpec,
    pub input_shape: Vec<usize>,
    pub peak: f64,
}

impl Template {
    pub fn spec_at(&self, theta: &[f64]) -> Result<GraphSpec> {
        self.family.apply(&self.nominal, theta)
    }

    pub fn operator(&self, theta: &[f64]) -> Result<GraphOperator> {
        crate::graph::compile(&self.spec_at(theta)?)
    }

    pub fn nominal_operator(&self) -> Result<GraphOperator> {
        crate::graph::compile(&self.nominal)
    }

    pub fn phantoms(&self, n: usize, seed: u64) -> Result<Vec<Phantom>> {
        make_phantoms(&self.modality, self.options.size, n, seed)
    }

    pub fn default_solver(&self) -> SolverConfig {
        self.entry.solver.as_ref().map(SolverConfig::from_defaults).unwrap_or_default()
    }

    pub fn photon(&self) -> PhotonDefaults {
        self.entry.photon.unwrap_or(PhotonDefaults {
            source_power: 1000.0,
            qe: 1.0,
            exposure: 1.0,
            read_sigma: 1.0,
            dark_rate: 0.0,
        })
    }

    /// Poisson-Gaussian model implied by a photon budget.
    pub fn noise_model_for(photon: &PhotonDefaults) -> Result<NoiseModel> {
        let n = photon.source_power * photon.qe * photon.exposure;
        NoiseModel::new(n, (photon.read_sigma.powi(2) + photon.dark_rate * photon.exposure).sqrt())
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        Template::noise_model_for(&self.photon())
    }

    /// Fidelity level 2 runs default to noisy measurements.
    pub fn noisy_default(&self) -> bool {
        self.options.fidelity >= 2
    }
}

/// Build a template from the given registry.
pub fn instantiate_with(registry: &Registry, modality: &str, opts: &TemplateOptions) -> Result<Template> {
    let entry = registry.template(modality)?.clone();
    if !entry.instantiable {
        return Err(Error::InvalidArgument(format!("template `{}` carries no instantiable physics", entry.modality)));
    }
    let n = opts.size;
    if !(8..=64).contains(&n) || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("size must be a power of two in 8..=64, got {n}")));
    }
    if !(1..=2).contains(&opts.fidelity) {
        return Err(Error::InvalidArgument(format!("fidelity level must be 1 or 2, got {}", opts.fidelity)));
    }
    let mm = registry.mismatch_entry(&entry.modality)?;
    let mut rng = Rng::new(derive_seed(TEMPLATE_SEED, n as u64));
    let ratio = |key: &str| -> Result<f64> {
        let r = opts.sampling_ratio.unwrap_or_else(|| entry.default_or(key, 1.0));
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidArgument(format!("sampling ratio must be in (0, 1], got {r}")));
        }
        Ok(r)
    };
    let modality = entry.modality.clone();
    let mut peak = 1.0;
    let (base, input_shape, mut nodes) = match modality.as_str() {
        "cassi" => {
            let bands = entry.default_or("bands", 4.0) as usize;
            if bands < 2 {
                return Err(Error::InvalidArgument("cassi needs at least 2 bands".into()));
            }
            let density = entry.default_or("mask_density", 0.5);
            let mask: Vec<f64> = (0..n * n).map(|_| if rng.bernoulli(density) { 1.0 } else { 0.0 }).collect();
            let a_idx = mm.params.iter().position(|p| p.name == "a1").unwrap_or(3);
            let a_max = mm.params[a_idx].hi.abs().max(mm.params[a_idx].lo.abs());
            let out_width = n + (a_max * (bands as f64 - 1.0)).ceil() as usize + 1;
            let nodes = vec![
                node("mask", "Modulate", Params::new()),
                node("disperse", "Disperse", params(vec![("out_width", out_width.into())])),
                node("sum", "Accumulate", params(vec![("axes", vec![2usize].into())])),
                detect(),
            ];
            (Base::Cassi { n, mask }, vec![n, n, bands], nodes)
        }
        "cacti" => {
            let frames = entry.default_or("frames", 4.0) as usize;
            if frames < 2 {
                return Err(Error::InvalidArgument("cacti needs at least 2 frames".into()));
            }
            let density = entry.default_or("mask_density", 0.5);
            let masks: Vec<f64> = (0..n * n * frames).map(|_| if rng.bernoulli(density) { 1.0 } else { 0.0 }).collect();
            let nodes = vec![
                node("mask", "Modulate", Params::new()),
                node("sum", "Accumulate", params(vec![("axes", vec![2usize].into())])),
                detect(),
            ];
            (Base::Cacti { n, frames, masks }, vec![n, n, frames], nodes)
        }
        "spc" => {
            let r = ratio("sampling_ratio")?;
            let m = ((r * (n * n) as f64).round() as usize).max(1);
            peak = entry.default_or("peak", 255.0);
            let patterns: Vec<f64> = (0..m * n * n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
            let nodes = vec![
                node("mask", "Modulate", Params::new()),
                node("sum", "Accumulate", params(vec![("axes", vec![1usize, 2].into())])),
                detect(),
            ];
            (Base::Spc { n, m, patterns }, vec![n, n], nodes)
        }
        "ct" => {
            let a = entry.default_or("angles", 90.0) as usize;
            let n_det = (entry.default_or("detector_ratio", 1.5) * n as f64).round() as usize;
            let angles: Vec<f64> = (0..a).map(|k| 180.0 * k as f64 / a as f64).collect();
            let nodes = vec![
                node("project", "Project", params(vec![("angles", angles.into()), ("n_det", n_det.into())])),
                detect(),
            ];
            (Base::Ct, vec![n, n], nodes)
        }
        "mri" => {
            let r = ratio("sampling_ratio")?;
            let rows = mri_rows(n, r, &mut rng);
            let indices: Vec<usize> = rows.iter().flat_map(|&k| (0..n).map(move |j| k * n + j)).collect();
            let nodes = vec![
                node("coil", "Modulate", Params::new()),
                node("encode", "Encode", params(vec![("axes", vec![0usize, 1].into())])),
                node("sample", "Sample", params(vec![("indices", indices.into())])),
                detect(),
            ];
            (Base::Mri { n, coil: coil_map(n) }, vec![n, n], nodes)
        }
        "lensless" => {
            let nodes = vec![node("psf", "Convolve", Params::new()), detect()];
            (Base::Lensless { n }, vec![n, n], nodes)
        }
        other => return Err(Error::UnknownModality(other.to_string())),
    };
    let family = MismatchFamily {
        modality: modality.clone(),
        param_names: mm.params.iter().map(|p| p.name.clone()).collect(),
        groups: mm.params.iter().map(|p| p.group.clone()).collect(),
        units: mm.params.iter().map(|p| p.unit.clone()).collect(),
        theta_nom: mm.params.iter().map(|p| p.nominal).collect(),
        theta_lo: mm.params.iter().map(|p| p.lo).collect(),
        theta_hi: mm.params.iter().map(|p| p.hi).collect(),
        example_true: mm.example_true.clone(),
        base,
    };
    let metadata = GraphMetadata {
        canonical_chain: true,
        modality: Some(modality.clone()),
        input_shape: Some(input_shape.clone()),
        input_dtype: Some(Dtype::Real64),
    };
    let skeleton = GraphSpec::chain(nodes.clone(), metadata.clone());
    let mut nominal = family.apply(&skeleton, &family.theta_nom)?;
    if opts.fidelity == 2 {
        // detector response ahead of D, sized to the pre-detector output
        let pre = crate::graph::compile(&nominal)?;
        let det_in = pre.nodes().last().expect("non-empty").in_shape.clone();
        let resp = node("response", "Modulate", params(vec![("mask", (&response_map(&det_in)).into())]));
        let applied: Vec<NodeSpec> = nominal.nodes.clone();
        nodes = applied;
        let d = nodes.pop().expect("detect node");
        nodes.push(resp);
        nodes.push(d);
        nominal = GraphSpec::chain(nodes, metadata);
    }
    Ok(Template { modality, options: opts.clone(), entry, family, nominal, input_shape, peak })
}

/// Template from the built-in registry.
pub fn template(modality: &str, opts: &TemplateOptions) -> Result<Template> {
    instantiate_with(Registry::builtin(), modality, opts)
}

/// Nominal spec, mismatch family and default phantoms (three, seed 0).
pub fn instantiate(modality: &str, size: usize, fidelity: u8) -> Result<(GraphSpec, MismatchFamily, Vec<Phantom>)> {
    let t = template(modality, &TemplateOptions { size, fidelity, sampling_ratio: None })?;
    let ph = t.phantoms(3, 0)?;
    Ok((t.nominal, t.family, ph))
}

/// Free-function form of [`MismatchFamily::apply`].
pub fn apply_mismatch(family: &MismatchFamily, spec: &GraphSpec, theta: &[f64]) -> Result<GraphSpec> {
    family.apply(spec, theta)
}
