use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use opgraph_core::calibration::{calibrate, CalibConfig, CalibMethod, Objective};
use opgraph_core::graph::{compile, parse_spec};
use opgraph_core::metrics::db_json;
use opgraph_core::protocol::{measure, run_scenarios, ScenarioOptions};
use opgraph_core::registry::{basis_growth, PhotonDefaults, Registry};
use opgraph_core::rng::derive_seed;
use opgraph_core::runbundle::{now_rfc3339, verify_runbundle, write_runbundle, FileVerdict, RunRecord};
use opgraph_core::solvers::{SolverConfig, SolverKind};
use opgraph_core::templates::{template, Template, TemplateOptions};
use opgraph_core::tensor_io::{load_tensor, save_tensor};
use opgraph_core::triad::{diagnose, DiagnoseOptions};
use opgraph_core::{Error, Result};

use crate::{Command, ModelArgs, PhotonArgs};

/// Resolved description of a model run; written to every run directory and
/// accepted back through `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub modality: String,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fidelity")]
    pub fidelity: u8,
    #[serde(default)]
    pub sampling_ratio: Option<f64>,
    #[serde(default = "default_phantoms")]
    pub phantoms: usize,
    #[serde(default)]
    pub noisy: bool,
    #[serde(default)]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: Option<String>,
    #[serde(default)]
    pub iters: Option<usize>,
    #[serde(default)]
    pub lambda_tv: Option<f64>,
    #[serde(default)]
    pub calib: Option<String>,
    /// Solver iterations inside the calibration objective.
    #[serde(default)]
    pub calib_iters: Option<usize>,
}

fn default_size() -> usize {
    16
}
fn default_fidelity() -> u8 {
    1
}
fn default_phantoms() -> usize {
    3
}

impl RunSpec {
    fn from_args(m: &ModelArgs) -> Result<RunSpec> {
        if let Some(path) = &m.config {
            return Ok(serde_yaml::from_str(&fs::read_to_string(path)?)?);
        }
        let modality = m.modality.clone().ok_or_else(|| Error::InvalidArgument("--modality is required".into()))?;
        Ok(RunSpec {
            modality,
            size: m.size,
            seed: m.seed,
            fidelity: m.fidelity,
            sampling_ratio: m.sampling_ratio,
            phantoms: m.phantoms,
            noisy: m.noisy,
            theta_true: m.theta_true.clone(),
            solver: m.solver.clone(),
            iters: m.iters,
            lambda_tv: m.lambda_tv,
            calib: None,
            calib_iters: None,
        })
    }
}

struct Model {
    spec: RunSpec,
    template: Template,
    theta_true: Vec<f64>,
    solver: SolverConfig,
    noisy: bool,
}

fn resolve(spec: RunSpec) -> Result<Model> {
    if spec.phantoms == 0 {
        return Err(Error::InvalidArgument("--phantoms must be at least 1".into()));
    }
    let opts = TemplateOptions { size: spec.size, fidelity: spec.fidelity, sampling_ratio: spec.sampling_ratio };
    let t = template(&spec.modality, &opts)?;
    let theta_true = spec.theta_true.clone().unwrap_or_else(|| t.family.example_true.clone());
    t.family.check(&theta_true)?;
    let mut solver = t.default_solver();
    if let Some(name) = &spec.solver {
        solver.name = name.parse::<SolverKind>()?;
    }
    if let Some(k) = spec.iters {
        solver.iters = k;
    }
    if let Some(l) = spec.lambda_tv {
        solver.lambda_tv = l;
    }
    solver.validate()?;
    let noisy = spec.noisy || t.noisy_default();
    Ok(Model { spec, template: t, theta_true, solver, noisy })
}

/// Accumulates artifacts for one run directory and writes the manifest.
struct Run {
    dir: PathBuf,
    record: RunRecord,
}

impl Run {
    fn new(dir: &Path, commit: Option<&str>, argv: &[String]) -> Result<Run> {
        fs::create_dir_all(dir)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            record: RunRecord {
                command: argv.to_vec(),
                commit: commit.map(str::to_string),
                started: now_rfc3339(),
                metrics: json!({}),
                ..Default::default()
            },
        })
    }

    fn seed(&mut self, name: &str, v: u64) {
        self.record.seeds.insert(name.into(), v);
    }

    fn input(&mut self, p: &Path) {
        self.record.inputs.push(p.canonicalize().unwrap_or_else(|_| p.to_path_buf()));
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        self.record.outputs.push(name.into());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        self.text(name, &(serde_json::to_string_pretty(v)? + "\n"))
    }

    fn tensor(&mut self, name: &str, t: &opgraph_core::Tensor) -> Result<()> {
        save_tensor(t, self.dir.join(name))?;
        self.record.outputs.push(name.into());
        Ok(())
    }

    fn finish(mut self, metrics: serde_json::Value) -> Result<()> {
        self.record.metrics = metrics;
        write_runbundle(&self.dir, &self.record)?;
        println!("{:<16}{}", "run dir", self.dir.display());
        Ok(())
    }
}

fn row(k: &str, v: impl std::fmt::Display) {
    println!("{k:<16}{v}");
}

fn fmt_theta(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ")
}

pub fn run(cmd: Command, commit: Option<&str>, argv: Vec<String>) -> Result<u8> {
    match cmd {
        Command::Compile { spec, out } => {
            let text = fs::read_to_string(&spec)?;
            let g = compile(&parse_spec(&text)?)?;
            let mut run = Run::new(&out.out, commit, &argv)?;
            run.input(&spec);
            let plan = json!({
                "graph_hash": g.hash(),
                "all_linear": g.all_linear(),
                "input_shape": g.input_shape(),
                "output_shape": g.output_shape(),
                "forward": g.plan_forward(),
                "adjoint": g.plan_adjoint(),
            });
            row("forward", g.plan_forward().join(" -> "));
            match g.plan_adjoint() {
                Some(p) => row("adjoint", p.join(" -> ")),
                None => row("adjoint", "undefined"),
            }
            row("all_linear", g.all_linear());
            row("shape", format!("{:?} -> {:?}", g.input_shape(), g.output_shape()));
            row("hash", g.hash());
            run.json("plan.json", &plan)?;
            run.finish(json!({"graph_hash": g.hash(), "all_linear": g.all_linear()}))?;
            Ok(0)
        }
        Command::AdjointCheck { spec, trials, seed, out } => {
            let text = fs::read_to_string(&spec)?;
            let g = compile(&parse_spec(&text)?)?;
            let r = g.adjoint_check(trials, seed)?;
            let mut run = Run::new(&out.out, commit, &argv)?;
            run.input(&spec);
            run.seed("adjoint_check", seed);
            row("graph", g.hash());
            row("trials", r.n_trials);
            row("delta_max", format!("{:.3e}", r.delta_max));
            row("delta_mean", format!("{:.3e}", r.delta_mean));
            row("result", if r.passed { "passed" } else { "FAILED" });
            run.json("adjoint_check.json", &r)?;
            let passed = r.passed;
            run.finish(serde_json::to_value(&r)?)?;
            Ok(if passed { 0 } else { 3 })
        }
        Command::Template { modality, size, fidelity, theta, out } => {
            let t = template(&modality, &TemplateOptions { size, fidelity, sampling_ratio: None })?;
            let spec = match &theta {
                Some(th) => t.spec_at(th)?,
                None => t.nominal.clone(),
            };
            let g = compile(&spec)?;
            let mut run = Run::new(&out.out, commit, &argv)?;
            let name = format!("{modality}.yaml");
            run.text(&name, &spec.to_yaml()?)?;
            row("spec", out.out.join(&name).display());
            row("hash", g.hash());
            run.finish(json!({"graph_hash": g.hash()}))?;
            Ok(0)
        }
        Command::Simulate { model, out } => {
            let m = resolve(RunSpec::from_args(&model)?)?;
            let t = &m.template;
            let g = t.operator(&m.theta_true)?;
            let phantoms = t.phantoms(m.spec.phantoms, m.spec.seed)?;
            let mut run = Run::new(&out.out, commit, &argv)?;
            run.seed("phantoms", m.spec.seed);
            run.json("run_spec.json", &m.spec)?;
            run.text("operator.yaml", &t.spec_at(&m.theta_true)?.to_yaml()?)?;
            let mut norms = BTreeMap::new();
            for (s, p) in phantoms.iter().enumerate() {
                let noise_seed = derive_seed(m.spec.seed, s as u64);
                if m.noisy {
                    run.seed(&format!("noise.{}", p.name), noise_seed);
                }
                let y = measure(t, &g, &p.data, m.noisy, noise_seed)?;
                run.tensor(&format!("x_gt_{}.otn", p.name), &p.data)?;
                run.tensor(&format!("y_{}.otn", p.name), &y)?;
                norms.insert(p.name.clone(), y.norm());
                row(&p.name, format!("|y| = {:.6}", y.norm()));
            }
            let metrics = json!({"graph_hash": g.hash(), "theta_true": m.theta_true, "y_norm": norms, "noisy": m.noisy});
            run.json("simulation.json", &metrics)?;
            run.finish(metrics)?;
            Ok(0)
        }
        Command::Scenario { model, calib, calib_iters, out } => {
            let mut spec = RunSpec::from_args(&model)?;
            let calib = spec.calib.clone().unwrap_or(calib);
            spec.calib = Some(calib.clone());
            spec.calib_iters = spec.calib_iters.or(calib_iters);
            let m = resolve(spec)?;
            let t = &m.template;
            let phantoms = t.phantoms(m.spec.phantoms, m.spec.seed)?;
            let mut opts = if calib == "none" {
                ScenarioOptions::fixed(t.family.theta_nom.clone())
            } else {
                let solver = m.spec.calib_iters.map(|k| SolverConfig { iters: k, ..m.solver.clone() });
                let cfg = CalibConfig { seed: m.spec.seed, solver, ..CalibConfig::default() };
                ScenarioOptions::calibrated(calib.parse::<CalibMethod>()?, cfg)
            };
            opts.noisy = m.noisy;
            let result = run_scenarios(t, &m.theta_true, &m.solver, &phantoms, m.spec.seed, &opts)?;
            let report = diagnose(t, &m.theta_true, &m.solver, &phantoms, m.spec.seed, &DiagnoseOptions::default())?;

            let mut run = Run::new(&out.out, commit, &argv)?;
            run.seed("master", m.spec.seed);
            run.json("run_spec.json", &m.spec)?;
            run.json("scenario_result.json", &result)?;
            run.json("triad_report.json", &report)?;
            let mu = &result.means;
            println!("{:<16}{:>10}{:>10}{:>10}{:>10}", "PSNR (dB)", "I", "II", "III", "IV");
            println!(
                "{:<16}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
                "mean", mu.i.psnr_db, mu.ii.psnr_db, mu.iii.psnr_db, mu.iv.psnr_db
            );
            row("rho", result.rho.map_or("n/a".to_string(), |r| format!("{r:.4}")));
            row("theta_true", fmt_theta(&result.theta_true));
            row("theta_hat", fmt_theta(&result.theta_hat));
            row("dominant", format!("{:?}", report.dominant_gate));
            let metrics = json!({
                "psnr_I": db_json(mu.i.psnr_db),
                "psnr_II": db_json(mu.ii.psnr_db),
                "psnr_III": db_json(mu.iii.psnr_db),
                "psnr_IV": db_json(mu.iv.psnr_db),
                "rho": result.rho,
                "theta_hat": result.theta_hat,
                "dominant_gate": report.dominant_gate,
            });
            run.finish(metrics)?;
            Ok(0)
        }
        Command::Diagnose { model, photon, out } => {
            let m = resolve(RunSpec::from_args(&model)?)?;
            let t = &m.template;
            let phantoms = t.phantoms(m.spec.phantoms, m.spec.seed)?;
            let opts = DiagnoseOptions { photon: photon_override(t.photon(), &photon), ..Default::default() };
            let report = diagnose(t, &m.theta_true, &m.solver, &phantoms, m.spec.seed, &opts)?;
            let mut run = Run::new(&out.out, commit, &argv)?;
            run.seed("master", m.spec.seed);
            run.json("run_spec.json", &m.spec)?;
            run.json("triad_report.json", &report)?;
            row("recoverability", format!("{:.4}", report.evidence_scores.recoverability));
            row("carrier", format!("{:.4}", report.evidence_scores.carrier_budget));
            row("mismatch", format!("{:.4}", report.evidence_scores.operator_mismatch));
            row("dominant", format!("{:?}", report.dominant_gate));
            row("action", &report.recommended_action);
            run.finish(json!({"dominant_gate": report.dominant_gate, "evidence_scores": report.evidence_scores}))?;
            Ok(0)
        }
        Command::Calibrate { model, method, y, x_gt, objective, out } => {
            let m = resolve(RunSpec::from_args(&model)?)?;
            let t = &m.template;
            let method: CalibMethod = method.parse()?;
            let mut run = Run::new(&out.out, commit, &argv)?;
            run.seed("master", m.spec.seed);
            let (y_t, x_t) = match &y {
                Some(p) => {
                    run.input(p);
                    let x = match &x_gt {
                        Some(q) => {
                            run.input(q);
                            Some(load_tensor(q)?)
                        }
                        None => None,
                    };
                    (load_tensor(p)?, x)
                }
                None => {
                    let p = &t.phantoms(1, m.spec.seed)?[0];
                    let g = t.operator(&m.theta_true)?;
                    (measure(t, &g, &p.data, m.noisy, derive_seed(m.spec.seed, 0))?, Some(p.data.clone()))
                }
            };
            let objective = match objective {
                Some(o) => serde_json::from_value::<Objective>(json!(o))
                    .map_err(|_| Error::InvalidArgument(format!("unknown objective `{o}`")))?,
                None if x_t.is_some() => Objective::OraclePsnr,
                None => Objective::MeasurementResidual,
            };
            let cfg = CalibConfig { objective, seed: m.spec.seed, solver: Some(m.solver.clone()), ..CalibConfig::default() };
            let r = calibrate(t, &y_t, x_t.as_ref(), &cfg, method)?;
            run.json("run_spec.json", &m.spec)?;
            run.json("calib_result.json", &r)?;
            row("theta_hat", fmt_theta(&r.theta_hat));
            if y.is_none() {
                row("theta_true", fmt_theta(&m.theta_true));
            }
            row("objective", format!("{:.6}", r.objective_value));
            row("evals", r.evals);
            run.finish(json!({"theta_hat": r.theta_hat, "objective_value": r.objective_value, "evals": r.evals}))?;
            Ok(0)
        }
        Command::BasisGrowth { registry, order, out } => {
            let loaded;
            let reg = match &registry {
                Some(dir) => {
                    loaded = Registry::load_dir(dir)?;
                    &loaded
                }
                None => Registry::builtin(),
            };
            let order: Vec<String> =
                order.unwrap_or_else(|| reg.modalities().into_iter().map(str::to_string).collect());
            let refs: Vec<&str> = order.iter().map(String::as_str).collect();
            let curve = basis_growth(reg, &refs)?;
            let mut csv = String::from("n,modality,k\n");
            println!("{:>4}  {:<16}{:>4}", "N", "modality", "K");
            for (p, name) in curve.iter().zip(&order) {
                csv.push_str(&format!("{},{},{}\n", p.n, name, p.k));
                println!("{:>4}  {:<16}{:>4}", p.n, name, p.k);
            }
            let mut run = Run::new(&out.out, commit, &argv)?;
            run.text("basis_growth.csv", &csv)?;
            run.finish(json!({"k": curve.iter().map(|p| p.k).collect::<Vec<_>>()}))?;
            Ok(0)
        }
        Command::Verify { run_dir } => {
            let r = verify_runbundle(&run_dir)?;
            for (f, v) in &r.files {
                let tag = match v {
                    FileVerdict::Ok => "ok",
                    FileVerdict::Mismatch => "HASH MISMATCH",
                    FileVerdict::Missing => "MISSING",
                };
                println!("{tag:<16}{f}");
            }
            r.into_result()?;
            println!("verified");
            Ok(0)
        }
    }
}

fn photon_override(base: PhotonDefaults, a: &PhotonArgs) -> Option<PhotonDefaults> {
    if a.source_power.is_none() && a.qe.is_none() && a.exposure.is_none() && a.read_sigma.is_none() && a.dark_rate.is_none()
    {
        return None;
    }
    Some(PhotonDefaults {
        source_power: a.source_power.unwrap_or(base.source_power),
        qe: a.qe.unwrap_or(base.qe),
        exposure: a.exposure.unwrap_or(base.exposure),
        read_sigma: a.read_sigma.unwrap_or(base.read_sigma),
        dark_rate: a.dark_rate.unwrap_or(base.dark_rate),
    })
}
