//! Untyped node parameters as they appear in a graph description.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Tensor, TensorData};

/// Inline array parameter. Complex data is stored interleaved (re, im).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayParam {
    pub shape: Vec<usize>,
    #[serde(default = "real_dtype")]
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

fn real_dtype() -> Dtype {
    Dtype::Real64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
    List(Vec<f64>),
    Array(ArrayParam),
}

pub type Params = BTreeMap<String, ParamValue>;

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        ParamValue::Number(v as f64)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl From<Vec<f64>> for ParamValue {
    fn from(v: Vec<f64>) -> Self {
        ParamValue::List(v)
    }
}

impl From<Vec<usize>> for ParamValue {
    fn from(v: Vec<usize>) -> Self {
        ParamValue::List(v.into_iter().map(|x| x as f64).collect())
    }
}

impl From<&Tensor> for ParamValue {
    fn from(t: &Tensor) -> Self {
        let data = match t.data() {
            TensorData::Real(v) => v.clone(),
            TensorData::Complex(v) => v.iter().flat_map(|z| [z.re, z.im]).collect(),
        };
        ParamValue::Array(ArrayParam { shape: t.shape().to_vec(), dtype: t.dtype(), data })
    }
}

impl ParamValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            ParamValue::Number(_) => "scalar",
            ParamValue::Text(_) => "string",
            ParamValue::List(_) => "list",
            ParamValue::Array(_) => "tensor",
        }
    }
}

/// Typed accessors over a parameter map, with errors naming the owner.
pub(crate) struct ParamReader<'a> {
    owner: &'a str,
    params: &'a Params,
}

impl<'a> ParamReader<'a> {
    pub fn new(owner: &'a str, params: &'a Params) -> Self {
        ParamReader { owner, params }
    }

    /// Reject names outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<()> {
        for k in self.params.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::UnknownParam { kind: self.owner.to_string(), param: k.clone() });
            }
        }
        Ok(())
    }

    fn missing(&self, name: &str) -> Error {
        Error::InvalidParam(format!("{}: missing `{name}`", self.owner))
    }

    fn wrong(&self, name: &str, want: &str) -> Error {
        Error::InvalidParam(format!("{}: `{name}` must be a {want}", self.owner))
    }

    pub fn scalar_opt(&self, name: &str) -> Result<Option<f64>> {
        match self.params.get(name) {
            None => Ok(None),
            Some(ParamValue::Number(v)) if v.is_finite() => Ok(Some(*v)),
            Some(_) => Err(self.wrong(name, "finite scalar")),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalar_opt(name)?.ok_or_else(|| self.missing(name))
    }

    pub fn scalar_or(&self, name: &str, default: f64) -> Result<f64> {
        Ok(self.scalar_opt(name)?.unwrap_or(default))
    }

    pub fn usize_opt(&self, name: &str) -> Result<Option<usize>> {
        match self.scalar_opt(name)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(Some(v as usize)),
            Some(_) => Err(self.wrong(name, "non-negative integer")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&'a str> {
        match self.params.get(name) {
            None => Err(self.missing(name)),
            Some(ParamValue::Text(s)) => Ok(s),
            Some(_) => Err(self.wrong(name, "string")),
        }
    }

    pub fn list_opt(&self, name: &str) -> Result<Option<Vec<f64>>> {
        match self.params.get(name) {
            None => Ok(None),
            Some(ParamValue::List(v)) if v.iter().all(|x| x.is_finite()) => Ok(Some(v.clone())),
            Some(ParamValue::Number(v)) if v.is_finite() => Ok(Some(vec![*v])),
            Some(_) => Err(self.wrong(name, "list of finite numbers")),
        }
    }

    pub fn list(&self, name: &str) -> Result<Vec<f64>> {
        self.list_opt(name)?.ok_or_else(|| self.missing(name))
    }

    pub fn index_list_opt(&self, name: &str) -> Result<Option<Vec<usize>>> {
        match self.list_opt(name)? {
            None => Ok(None),
            Some(v) => {
                if v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
                    return Err(self.wrong(name, "list of non-negative integers"));
                }
                Ok(Some(v.into_iter().map(|x| x as usize).collect()))
            }
        }
    }

    pub fn index_list(&self, name: &str) -> Result<Vec<usize>> {
        self.index_list_opt(name)?.ok_or_else(|| self.missing(name))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        match self.params.get(name) {
            None => Err(self.missing(name)),
            Some(ParamValue::Array(a)) => array_to_tensor(a),
            Some(_) => Err(self.wrong(name, "tensor")),
        }
    }
}

pub fn array_to_tensor(a: &ArrayParam) -> Result<Tensor> {
    match a.dtype {
        Dtype::Real64 => Tensor::real(a.shape.clone(), a.data.clone()),
        Dtype::Complex128 => {
            if a.data.len() % 2 != 0 {
                return Err(Error::InvalidParam("complex array needs interleaved pairs".into()));
            }
            Tensor::complex(a.shape.clone(), a.data.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
        }
    }
}
