//! YAML registries: primitive schemas, modality templates, mismatch
//! families and thresholds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{ParamValue, Params, PrimitiveKind};

pub const PRIMITIVES_FILE: &str = "primitives.yaml";
pub const TEMPLATES_FILE: &str = "templates.yaml";
pub const MISMATCH_FILE: &str = "mismatch.yaml";
pub const THRESHOLDS_FILE: &str = "thresholds.yaml";

const BUILTIN: [(&str, &str); 4] = [
    (PRIMITIVES_FILE, include_str!("../registry/primitives.yaml")),
    (TEMPLATES_FILE, include_str!("../registry/templates.yaml")),
    (MISMATCH_FILE, include_str!("../registry/mismatch.yaml")),
    (THRESHOLDS_FILE, include_str!("../registry/thresholds.yaml")),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Scalar,
    List,
    Tensor,
    String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub required: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSchema {
    pub id: String,
    pub symbol: String,
    /// `true`, `false`, or `family` when it depends on the bound family.
    pub linear: serde_yaml::Value,
    pub params: Vec<ParamSchema>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverDefaults {
    pub name: String,
    pub iters: usize,
    pub lambda_tv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonDefaults {
    pub source_power: f64,
    pub qe: f64,
    pub exposure: f64,
    pub read_sigma: f64,
    pub dark_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub modality: String,
    pub name: String,
    pub carrier: String,
    pub dag: Vec<String>,
    pub instantiable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDefaults>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub defaults: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon: Option<PhotonDefaults>,
}

impl TemplateEntry {
    pub fn default_or(&self, key: &str, fallback: f64) -> f64 {
        self.defaults.get(key).copied().unwrap_or(fallback)
    }

    /// Parsed primitive chain.
    pub fn kinds(&self) -> Vec<PrimitiveKind> {
        self.dag.iter().filter_map(|s| PrimitiveKind::parse(s)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchParam {
    pub name: String,
    pub nominal: f64,
    pub lo: f64,
    pub hi: f64,
    pub group: String,
    #[serde(default)]
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchEntry {
    pub modality: String,
    pub params: Vec<MismatchParam>,
    #[serde(default)]
    pub example_true: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub adjoint_delta_max: f64,
    pub closure_epsilon: f64,
    pub gate1_adequate_rank_ratio: f64,
    pub gate1_marginal_rank_ratio: f64,
    pub gate2_sufficient_snr_db: f64,
    pub gate2_marginal_snr_db: f64,
    pub scenario_min_gap_db: f64,
    pub rho_one_param: f64,
    pub rho_multi_param: f64,
    pub dense_max_columns: usize,
}

const THRESHOLD_KEYS: [&str; 10] = [
    "adjoint_delta_max",
    "closure_epsilon",
    "gate1_adequate_rank_ratio",
    "gate1_marginal_rank_ratio",
    "gate2_sufficient_snr_db",
    "gate2_marginal_snr_db",
    "scenario_min_gap_db",
    "rho_one_param",
    "rho_multi_param",
    "dense_max_columns",
];

#[derive(Deserialize)]
struct PrimitivesFile {
    primitives: Vec<PrimitiveSchema>,
}
#[derive(Deserialize)]
struct TemplatesFile {
    templates: Vec<TemplateEntry>,
}
#[derive(Deserialize)]
struct MismatchFile {
    families: Vec<MismatchEntry>,
}
#[derive(Deserialize)]
struct ThresholdsFile {
    thresholds: serde_yaml::Mapping,
}

/// Validated registry. Template order is the file order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub primitives: Vec<PrimitiveSchema>,
    pub templates: Vec<TemplateEntry>,
    pub mismatch: Vec<MismatchEntry>,
    pub thresholds: Thresholds,
}

fn reg_err(code: &'static str, detail: impl Into<String>) -> Error {
    Error::Registry { code, detail: detail.into() }
}

impl Registry {
    /// The registry compiled into the library.
    pub fn builtin() -> &'static Registry {
        static REG: OnceLock<Registry> = OnceLock::new();
        REG.get_or_init(|| {
            let texts: BTreeMap<&str, &str> = BUILTIN.into_iter().collect();
            Registry::from_texts(
                texts[PRIMITIVES_FILE],
                texts[TEMPLATES_FILE],
                texts[MISMATCH_FILE],
                texts[THRESHOLDS_FILE],
            )
            .expect("built-in registry is valid")
        })
    }

    /// Raw text of the built-in registry files, for writing a copy to disk.
    pub fn builtin_files() -> &'static [(&'static str, &'static str)] {
        &BUILTIN
    }

    /// Load the four registry files from a directory.
    pub fn load_dir(dir: &Path) -> Result<Registry> {
        let read = |f: &str| std::fs::read_to_string(dir.join(f));
        Registry::from_texts(&read(PRIMITIVES_FILE)?, &read(TEMPLATES_FILE)?, &read(MISMATCH_FILE)?, &read(THRESHOLDS_FILE)?)
    }

    pub fn from_texts(primitives: &str, templates: &str, mismatch: &str, thresholds: &str) -> Result<Registry> {
        let p: PrimitivesFile = serde_yaml::from_str(primitives)?;
        let t: TemplatesFile = serde_yaml::from_str(templates)?;
        let m: MismatchFile = serde_yaml::from_str(mismatch)?;
        let th: ThresholdsFile = serde_yaml::from_str(thresholds)?;
        for key in THRESHOLD_KEYS {
            if !th.thresholds.contains_key(key) {
                return Err(reg_err("MISSING_THRESHOLD", format!("threshold `{key}` not set")));
            }
        }
        let thresholds: Thresholds = serde_yaml::from_value(serde_yaml::Value::Mapping(th.thresholds))?;
        let reg = Registry { primitives: p.primitives, templates: t.templates, mismatch: m.families, thresholds };
        reg.validate()?;
        Ok(reg)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.primitives {
            let kind = PrimitiveKind::parse(&s.id).ok_or_else(|| reg_err("UNKNOWN_PRIMITIVE", format!("primitive schema `{}`", s.id)))?;
            if !seen.insert(kind) {
                return Err(reg_err("DUPLICATE_PRIMITIVE", format!("`{}` listed twice", s.id)));
            }
        }
        if seen.len() != PrimitiveKind::ALL.len() {
            let missing: Vec<_> = PrimitiveKind::ALL.iter().filter(|k| !seen.contains(k)).map(|k| k.name()).collect();
            return Err(reg_err("MISSING_PRIMITIVE", format!("no schema for {missing:?}")));
        }
        let mut modalities = BTreeSet::new();
        for t in &self.templates {
            if !modalities.insert(t.modality.as_str()) {
                return Err(reg_err("DUPLICATE_MODALITY", format!("template `{}` listed twice", t.modality)));
            }
            if t.dag.is_empty() {
                return Err(reg_err("EMPTY_DAG", format!("template `{}`", t.modality)));
            }
            for name in &t.dag {
                if PrimitiveKind::parse(name).is_none() {
                    return Err(reg_err("UNKNOWN_PRIMITIVE", format!("template `{}` references `{name}`", t.modality)));
                }
            }
        }
        let mut fams = BTreeSet::new();
        for f in &self.mismatch {
            if !modalities.contains(f.modality.as_str()) {
                return Err(reg_err("UNKNOWN_MODALITY", format!("mismatch family for `{}`", f.modality)));
            }
            if !fams.insert(f.modality.as_str()) {
                return Err(reg_err("DUPLICATE_MODALITY", format!("mismatch family `{}` listed twice", f.modality)));
            }
            for p in &f.params {
                if !(p.hi - p.lo).is_finite() || p.hi <= p.lo {
                    return Err(reg_err(
                        "ZERO_WIDTH_RANGE",
                        format!("`{}.{}` has range [{}, {}]", f.modality, p.name, p.lo, p.hi),
                    ));
                }
                if p.nominal < p.lo || p.nominal > p.hi {
                    return Err(reg_err("NOMINAL_OUT_OF_RANGE", format!("`{}.{}`", f.modality, p.name)));
                }
            }
            if !f.example_true.is_empty() && f.example_true.len() != f.params.len() {
                return Err(reg_err("BAD_EXAMPLE", format!("`{}` example_true length", f.modality)));
            }
        }
        for t in self.templates.iter().filter(|t| t.instantiable) {
            if !fams.contains(t.modality.as_str()) {
                return Err(reg_err("MISSING_MISMATCH", format!("instantiable template `{}` has no mismatch family", t.modality)));
            }
        }
        Ok(())
    }

    pub fn template(&self, modality: &str) -> Result<&TemplateEntry> {
        self.templates
            .iter()
            .find(|t| t.modality.eq_ignore_ascii_case(modality))
            .ok_or_else(|| Error::UnknownModality(modality.to_string()))
    }

    pub fn mismatch_entry(&self, modality: &str) -> Result<&MismatchEntry> {
        self.mismatch
            .iter()
            .find(|t| t.modality.eq_ignore_ascii_case(modality))
            .ok_or_else(|| Error::UnknownModality(modality.to_string()))
    }

    pub fn schema(&self, kind: PrimitiveKind) -> &PrimitiveSchema {
        self.primitives
            .iter()
            .find(|s| PrimitiveKind::parse(&s.id) == Some(kind))
            .expect("validated registry has every primitive")
    }

    /// Check a node's parameter names and value types against the schema.
    pub fn check_params(&self, kind: PrimitiveKind, params: &Params) -> Result<()> {
        let schema = self.schema(kind);
        for (name, value) in params {
            let Some(ps) = schema.params.iter().find(|p| &p.name == name) else {
                return Err(Error::UnknownParam { kind: kind.name().into(), param: name.clone() });
            };
            let ok = matches!(
                (ps.ty, value),
                (ParamType::Scalar, ParamValue::Number(_))
                    | (ParamType::List, ParamValue::List(_))
                    | (ParamType::Tensor, ParamValue::Array(_))
                    | (ParamType::String, ParamValue::Text(_))
            );
            if !ok {
                return Err(Error::InvalidParam(format!(
                    "{kind}: `{name}` should be a {:?}, got {}",
                    ps.ty,
                    value.type_name()
                )));
            }
        }
        if let Some(missing) = schema.params.iter().find(|p| p.required && !params.contains_key(&p.name)) {
            return Err(Error::InvalidParam(format!("{kind}: missing required `{}`", missing.name)));
        }
        Ok(())
    }

    /// Serialize back to the four file texts (primitives, templates, mismatch, thresholds).
    pub fn to_texts(&self) -> Result<[String; 4]> {
        #[derive(Serialize)]
        struct P<'a> {
            primitives: &'a [PrimitiveSchema],
        }
        #[derive(Serialize)]
        struct T<'a> {
            templates: &'a [TemplateEntry],
        }
        #[derive(Serialize)]
        struct M<'a> {
            families: &'a [MismatchEntry],
        }
        #[derive(Serialize)]
        struct Th<'a> {
            thresholds: &'a Thresholds,
        }
        Ok([
            serde_yaml::to_string(&P { primitives: &self.primitives })?,
            serde_yaml::to_string(&T { templates: &self.templates })?,
            serde_yaml::to_string(&M { families: &self.mismatch })?,
            serde_yaml::to_string(&Th { thresholds: &self.thresholds })?,
        ])
    }

    /// Write the four files into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let texts = self.to_texts()?;
        for (name, text) in [PRIMITIVES_FILE, TEMPLATES_FILE, MISMATCH_FILE, THRESHOLDS_FILE].iter().zip(texts) {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    pub fn modalities(&self) -> Vec<&str> {
        self.templates.iter().map(|t| t.modality.as_str()).collect()
    }
}

/// One point of the basis-growth curve: after `n` modalities, `k` distinct
/// primitives are in use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub n: usize,
    pub k: usize,
}

/// Cumulative count of distinct primitives over the given modality order.
pub fn basis_growth(registry: &Registry, order: &[&str]) -> Result<Vec<GrowthPoint>> {
    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(order.len());
    for (i, m) in order.iter().enumerate() {
        used.extend(registry.template(m)?.kinds());
        out.push(GrowthPoint { n: i + 1, k: used.len() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts() -> [&'static str; 4] {
        [BUILTIN[0].1, BUILTIN[1].1, BUILTIN[2].1, BUILTIN[3].1]
    }

    #[test]
    fn builtin_loads_with_twelve_templates() {
        let r = Registry::builtin();
        assert_eq!(r.templates.len(), 12);
        assert_eq!(r.templates.iter().filter(|t| t.instantiable).count(), 6);
        assert_eq!(r.primitives.len(), 11);
    }

    #[test]
    fn unknown_primitive_in_template() {
        let [p, t, m, th] = texts();
        let bad = t.replacen("dag: [Project, Detect]", "dag: [Foo, Detect]", 1);
        let e = Registry::from_texts(p, &bad, m, th).unwrap_err();
        assert_eq!(e.code(), "UNKNOWN_PRIMITIVE");
    }

    #[test]
    fn duplicate_modality() {
        let [p, t, m, th] = texts();
        let bad = t.replacen("modality: cacti", "modality: cassi", 1);
        assert_eq!(Registry::from_texts(p, &bad, m, th).unwrap_err().code(), "DUPLICATE_MODALITY");
    }

    #[test]
    fn zero_width_range() {
        let [p, t, m, th] = texts();
        let bad = m.replacen("lo: -4.0, hi: 4.0", "lo: 4.0, hi: 4.0", 1);
        assert_eq!(Registry::from_texts(p, t, &bad, th).unwrap_err().code(), "ZERO_WIDTH_RANGE");
    }

    #[test]
    fn missing_threshold() {
        let [p, t, m, th] = texts();
        let bad = th.replacen("  closure_epsilon: 0.01\n", "", 1);
        let e = Registry::from_texts(p, t, m, &bad).unwrap_err();
        assert_eq!(e.code(), "MISSING_THRESHOLD");
        assert!(e.to_string().contains("closure_epsilon"));
    }

    #[test]
    fn round_trip_through_text() {
        let r = Registry::builtin();
        let [a, b, c, d] = r.to_texts().unwrap();
        assert_eq!(&Registry::from_texts(&a, &b, &c, &d).unwrap(), r);
    }

    #[test]
    fn growth_examples() {
        let r = Registry::builtin();
        let k: Vec<usize> = basis_growth(r, &["cassi", "cacti", "spc"]).unwrap().iter().map(|g| g.k).collect();
        assert_eq!(k, vec![4, 4, 4]);
        assert_eq!(basis_growth(r, &["ct"]).unwrap(), vec![GrowthPoint { n: 1, k: 2 }]);
        assert!(basis_growth(r, &[]).unwrap().is_empty());
        let all = basis_growth(r, &r.modalities()).unwrap();
        assert_eq!(all.last().unwrap().k, 11);
    }

    #[test]
    fn schema_rejects_unknown_and_mistyped_params() {
        let r = Registry::builtin();
        let mut p = Params::new();
        p.insert("sigma".into(), ParamValue::Number(1.0));
        r.check_params(PrimitiveKind::Scatter, &p).unwrap();
        p.insert("bogus".into(), ParamValue::Number(1.0));
        assert_eq!(r.check_params(PrimitiveKind::Scatter, &p).unwrap_err().code(), "UNKNOWN_PARAM");
        let mut q = Params::new();
        q.insert("sigma".into(), ParamValue::Text("x".into()));
        assert!(r.check_params(PrimitiveKind::Scatter, &q).is_err());
    }
}
