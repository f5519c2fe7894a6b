//! GraphSpec data model, compiler, execution, certification and hashing.
//!
//! A graph is a DAG of primitive nodes plus optional `Add` join nodes
//! (sum of two or more predecessors). Nodes without predecessors read the
//! graph input; exactly one node may have no successors and it produces
//! the graph output.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::primitives::{adjoint_check, AdjointReport, MapSignature, ParamValue, Params, Primitive, PrimitiveKind};
use crate::registry::Registry;
use crate::tensor::{Dtype, Tensor, TensorData};

/// Primitive id of the sum-join node.
pub const ADD_NODE: &str = "Add";
/// Closure threshold on the mean relative forward discrepancy.
pub const CLOSURE_EPSILON: f64 = 0.01;
const FIDELITY_DELTA: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    pub primitive_id: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphMetadata {
    #[serde(default)]
    pub canonical_chain: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dtype: Option<Dtype>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub metadata: GraphMetadata,
}

impl GraphSpec {
    /// Linear chain in the given order.
    pub fn chain(nodes: Vec<NodeSpec>, metadata: GraphMetadata) -> GraphSpec {
        let edges = nodes.windows(2).map(|w| (w[0].node_id.clone(), w[1].node_id.clone())).collect();
        GraphSpec { nodes, edges, metadata }
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeSpec> {
        self.nodes.iter_mut().find(|n| n.node_id == id)
    }

    pub fn to_yaml(&self) -> Result<String> {
        Ok(serde_yaml::to_string(self)?)
    }

    /// Structural validation: unique ids, known primitives, edges that
    /// reference existing nodes, acyclicity. Returns the Kahn order.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let mut index = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if index.insert(n.node_id.as_str(), i).is_some() {
                return Err(Error::DuplicateNode(n.node_id.clone()));
            }
            if n.primitive_id != ADD_NODE && PrimitiveKind::parse(&n.primitive_id).is_none() {
                return Err(Error::UnknownPrimitive(n.primitive_id.clone()));
            }
        }
        if self.nodes.is_empty() {
            return Err(Error::Topology("graph has no nodes".into()));
        }
        let mut indeg = vec![0usize; self.nodes.len()];
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for (a, b) in &self.edges {
            let ia = *index.get(a.as_str()).ok_or_else(|| Error::DanglingEdge(a.clone()))?;
            let ib = *index.get(b.as_str()).ok_or_else(|| Error::DanglingEdge(b.clone()))?;
            succ[ia].push(ib);
            indeg[ib] += 1;
        }
        // Kahn; ties broken by declaration order
        let mut queue: VecDeque<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::Cycle);
        }
        Ok(order)
    }
}

/// Parse and structurally validate a YAML graph description.
pub fn parse_spec(text: &str) -> Result<GraphSpec> {
    let spec: GraphSpec = serde_yaml::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeOp {
    Prim(Primitive),
    Add,
}

#[derive(Clone, Debug)]
pub struct CompiledNode {
    pub id: String,
    pub op: NodeOp,
    /// Predecessors as positions in the forward plan; empty for sources.
    pub preds: Vec<usize>,
    pub in_shape: Vec<usize>,
    pub in_dtype: Dtype,
    pub out_shape: Vec<usize>,
    pub out_dtype: Dtype,
}

pub type GraphAdjointCheckReport = AdjointReport;

/// Executable form of a [`GraphSpec`].
#[derive(Clone, Debug)]
pub struct GraphOperator {
    spec: GraphSpec,
    nodes: Vec<CompiledNode>,
    all_linear: bool,
    input_shape: Vec<usize>,
    input_dtype: Dtype,
    hash: String,
}

/// Compile against the built-in registry.
pub fn compile(spec: &GraphSpec) -> Result<GraphOperator> {
    GraphOperator::compile(spec, Registry::builtin())
}

impl GraphOperator {
    pub fn compile(spec: &GraphSpec, registry: &Registry) -> Result<GraphOperator> {
        let order = spec.validate()?;
        let input_shape = spec
            .metadata
            .input_shape
            .clone()
            .ok_or_else(|| Error::InvalidArgument("metadata.input_shape is required to compile".into()))?;
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::EmptyShape);
        }
        let input_dtype = spec.metadata.input_dtype.unwrap_or(Dtype::Real64);
        let pos_of: BTreeMap<&str, usize> =
            order.iter().enumerate().map(|(p, &i)| (spec.nodes[i].node_id.as_str(), p)).collect();
        let mut preds = vec![Vec::new(); order.len()];
        let mut n_succ = vec![0usize; order.len()];
        for (a, b) in &spec.edges {
            preds[pos_of[b.as_str()]].push(pos_of[a.as_str()]);
            n_succ[pos_of[a.as_str()]] += 1;
        }
        let sinks: Vec<usize> = (0..order.len()).filter(|&p| n_succ[p] == 0).collect();
        if sinks.len() != 1 {
            let ids: Vec<&str> = sinks.iter().map(|&p| spec.nodes[order[p]].node_id.as_str()).collect();
            return Err(Error::Topology(format!("graph must have exactly one output node, found {ids:?}")));
        }
        if sinks[0] != order.len() - 1 {
            return Err(Error::Topology("output node must come last in the topological order".into()));
        }

        let mut nodes: Vec<CompiledNode> = Vec::with_capacity(order.len());
        for (p, &i) in order.iter().enumerate() {
            let ns = &spec.nodes[i];
            let mut pr = preds[p].clone();
            pr.sort_unstable();
            let (in_shape, in_dtype) = match pr.as_slice() {
                [] => (input_shape.clone(), input_dtype),
                [q] => (nodes[*q].out_shape.clone(), nodes[*q].out_dtype),
                [q, rest @ ..] => {
                    if ns.primitive_id != ADD_NODE {
                        return Err(Error::Topology(format!(
                            "node `{}` has {} inputs; only Add nodes join",
                            ns.node_id,
                            pr.len()
                        )));
                    }
                    let mut dt = nodes[*q].out_dtype;
                    for r in rest {
                        if nodes[*r].out_shape != nodes[*q].out_shape {
                            return Err(Error::ShapeMismatch(format!(
                                "Add `{}`: `{}` gives {:?} but `{}` gives {:?}",
                                ns.node_id, nodes[*q].id, nodes[*q].out_shape, nodes[*r].id, nodes[*r].out_shape
                            )));
                        }
                        dt = dt.promote(nodes[*r].out_dtype);
                    }
                    (nodes[*q].out_shape.clone(), dt)
                }
            };
            let op = if ns.primitive_id == ADD_NODE {
                if pr.len() < 2 {
                    return Err(Error::Topology(format!("Add node `{}` needs at least two inputs", ns.node_id)));
                }
                if !ns.params.is_empty() {
                    return Err(Error::UnknownParam { kind: ADD_NODE.into(), param: ns.params.keys().next().unwrap().clone() });
                }
                NodeOp::Add
            } else {
                let kind = PrimitiveKind::parse(&ns.primitive_id).expect("validated");
                registry.check_params(kind, &ns.params).map_err(|e| at_node(&ns.node_id, e))?;
                NodeOp::Prim(Primitive::bind(kind, &ns.params).map_err(|e| at_node(&ns.node_id, e))?)
            };
            let (out_shape, out_dtype) = match &op {
                NodeOp::Add => (in_shape.clone(), in_dtype),
                NodeOp::Prim(prim) => prim.output_signature(&in_shape, in_dtype).map_err(|e| {
                    let path: Vec<&str> = pr.iter().map(|&q| nodes[q].id.as_str()).collect();
                    match e {
                        Error::ShapeMismatch(m) => Error::ShapeMismatch(format!(
                            "at node `{}` (input from {}): {m}",
                            ns.node_id,
                            if path.is_empty() { "graph input".to_string() } else { format!("{path:?}") }
                        )),
                        other => at_node(&ns.node_id, other),
                    }
                })?,
            };
            nodes.push(CompiledNode { id: ns.node_id.clone(), op, preds: pr, in_shape, in_dtype, out_shape, out_dtype });
        }
        let all_linear = nodes.iter().all(|n| match &n.op {
            NodeOp::Add => true,
            NodeOp::Prim(p) => p.is_linear(),
        });
        let hash = graph_hash_spec(spec);
        Ok(GraphOperator { spec: spec.clone(), nodes, all_linear, input_shape, input_dtype, hash })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[CompiledNode] {
        &self.nodes
    }

    pub fn all_linear(&self) -> bool {
        self.all_linear
    }

    pub fn plan_forward(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    /// Reverse topological order, present only for all-linear graphs.
    pub fn plan_adjoint(&self) -> Option<Vec<&str>> {
        self.all_linear.then(|| self.nodes.iter().rev().map(|n| n.id.as_str()).collect())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dtype(&self) -> Dtype {
        self.input_dtype
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes.last().expect("non-empty").out_shape
    }

    pub fn output_dtype(&self) -> Dtype {
        self.nodes.last().expect("non-empty").out_dtype
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// First primitive of the given kind in plan order.
    pub fn find_primitive(&self, kind: PrimitiveKind) -> Option<&Primitive> {
        self.nodes.iter().find_map(|n| match &n.op {
            NodeOp::Prim(p) if p.kind() == kind => Some(p),
            _ => None,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "graph input expects {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let mut vals: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (p, n) in self.nodes.iter().enumerate() {
            let out = match (&n.op, n.preds.as_slice()) {
                (NodeOp::Prim(prim), []) => prim.forward(x),
                (NodeOp::Prim(prim), [q]) => prim.forward(vals[*q].as_ref().expect("planned")),
                (NodeOp::Add, qs) => {
                    let mut acc = vals[qs[0]].clone().expect("planned");
                    for q in &qs[1..] {
                        acc = acc.add(vals[*q].as_ref().expect("planned"))?;
                    }
                    Ok(acc)
                }
                _ => unreachable!("validated topology"),
            }
            .map_err(|e| at_node(&n.id, e))?;
            vals[p] = Some(out);
            // free values no longer needed
            for q in n.preds.clone() {
                if self.nodes[p + 1..].iter().all(|m| !m.preds.contains(&q)) {
                    vals[q] = None;
                }
            }
        }
        Ok(vals.pop().flatten().expect("output computed"))
    }

    pub fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        self.adjoint_with(y, |_, t| Ok(t))
    }

    /// Adjoint with a hook applied to each node's adjoint output, keyed by
    /// node id. Used to inspect or perturb individual stages.
    pub fn adjoint_with(&self, y: &Tensor, hook: impl Fn(&str, Tensor) -> Result<Tensor>) -> Result<Tensor> {
        if !self.all_linear {
            let bad: Vec<&str> = self
                .nodes
                .iter()
                .filter(|n| matches!(&n.op, NodeOp::Prim(p) if !p.is_linear()))
                .map(|n| n.id.as_str())
                .collect();
            return Err(Error::AdjointUndefined(format!("graph has nonlinear nodes {bad:?}")));
        }
        if y.shape() != self.output_shape() {
            return Err(Error::ShapeMismatch(format!(
                "graph output expects {:?}, got {:?}",
                self.output_shape(),
                y.shape()
            )));
        }
        let mut cot: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        *cot.last_mut().expect("non-empty") = Some(y.clone());
        let mut x_bar: Option<Tensor> = None;
        let add_into = |slot: &mut Option<Tensor>, t: Tensor| -> Result<()> {
            *slot = Some(match slot.take() {
                None => t,
                Some(s) => s.add(&t)?,
            });
            Ok(())
        };
        for p in (0..self.nodes.len()).rev() {
            let n = &self.nodes[p];
            let Some(c) = cot[p].take() else { continue };
            let back = match &n.op {
                NodeOp::Prim(prim) => prim.adjoint(&c, &n.in_shape).map_err(|e| at_node(&n.id, e))?,
                NodeOp::Add => c,
            };
            let back = hook(&n.id, back)?;
            if n.preds.is_empty() {
                add_into(&mut x_bar, back)?;
            } else {
                for &q in &n.preds {
                    add_into(&mut cot[q], back.clone())?;
                }
            }
        }
        let x = x_bar.expect("at least one source");
        Ok(x)
    }

    /// Randomized dot-product certification of the composed operator.
    pub fn adjoint_check(&self, n_trials: usize, seed: u64) -> Result<GraphAdjointCheckReport> {
        self.adjoint_check_with(n_trials, seed, |_, t| Ok(t))
    }

    pub fn adjoint_check_with(
        &self,
        n_trials: usize,
        seed: u64,
        hook: impl Fn(&str, Tensor) -> Result<Tensor>,
    ) -> Result<GraphAdjointCheckReport> {
        if !self.all_linear {
            return Err(Error::AdjointUndefined("graph is not all-linear".into()));
        }
        let sig = MapSignature {
            in_shape: self.input_shape.clone(),
            in_dtype: self.input_dtype,
            out_shape: self.output_shape().to_vec(),
            out_dtype: self.output_dtype(),
        };
        adjoint_check(|x| self.forward(x), |y| self.adjoint_with(y, &hook), &sig, n_trials, seed)
    }
}

fn at_node(id: &str, e: Error) -> Error {
    match e {
        Error::InvalidParam(m) => Error::InvalidParam(format!("node `{id}`: {m}")),
        Error::ShapeMismatch(m) => Error::ShapeMismatch(format!("node `{id}`: {m}")),
        Error::Domain { family, detail } => Error::Domain { family, detail: format!("{detail} (node `{id}`)") },
        other => other,
    }
}

pub fn adjoint_check_graph(g: &GraphOperator, n_trials: usize, seed: u64) -> Result<GraphAdjointCheckReport> {
    g.adjoint_check(n_trials, seed)
}

fn canon_f64(v: f64) -> Value {
    let v = if v == 0.0 { 0.0 } else { v };
    Value::String(format!("{v:.16e}"))
}

fn canon_param(v: &ParamValue) -> Value {
    match v {
        ParamValue::Number(x) => canon_f64(*x),
        ParamValue::Text(s) => Value::String(s.clone()),
        ParamValue::List(xs) => Value::Array(xs.iter().map(|&x| canon_f64(x)).collect()),
        ParamValue::Array(a) => {
            let mut h = Sha256::new();
            for &x in &a.data {
                let x = if x == 0.0 { 0.0 } else { x };
                h.update(x.to_le_bytes());
            }
            json!({"dtype": a.dtype.as_str(), "shape": a.shape, "sha256": hex::encode(h.finalize())})
        }
    }
}

/// Canonical JSON form used for hashing: keys sorted, floats as
/// 17-significant-digit strings, tensors replaced by a content digest.
pub fn canonical_json(spec: &GraphSpec) -> String {
    let nodes: Vec<Value> = spec
        .nodes
        .iter()
        .map(|n| {
            let params: serde_json::Map<String, Value> =
                n.params.iter().map(|(k, v)| (k.clone(), canon_param(v))).collect();
            json!({"node_id": n.node_id, "primitive_id": n.primitive_id, "params": params})
        })
        .collect();
    let edges: Vec<Value> = spec.edges.iter().map(|(a, b)| json!([a, b])).collect();
    let m = &spec.metadata;
    let v = json!({
        "nodes": nodes,
        "edges": edges,
        "metadata": {
            "canonical_chain": m.canonical_chain,
            "modality": m.modality,
            "input_shape": m.input_shape,
            "input_dtype": m.input_dtype.map(|d| d.as_str()),
        }
    });
    // serde_json's default map is ordered, so keys come out sorted
    serde_json::to_string(&v).expect("json values serialize")
}

pub fn graph_hash_spec(spec: &GraphSpec) -> String {
    hex::encode(Sha256::digest(canonical_json(spec).as_bytes()))
}

pub fn graph_hash(g: &GraphOperator) -> String {
    g.hash.clone()
}

/// Mean of ‖H(x) − H_G(x)‖ / (‖H(x)‖ + 1e-8) over the test objects, with
/// `reference` as H and the graph as H_G.
pub fn fidelity_error(
    g: &GraphOperator,
    reference: impl Fn(&Tensor) -> Result<Tensor>,
    objects: &[Tensor],
) -> Result<f64> {
    if objects.is_empty() {
        return Err(Error::InvalidArgument("fidelity test set is empty".into()));
    }
    let mut total = 0.0;
    for x in objects {
        let h = reference(x)?;
        let hg = g.forward(x)?;
        total += h.sub(&hg)?.norm() / (h.norm() + FIDELITY_DELTA);
    }
    Ok(total / objects.len() as f64)
}

pub fn closure_passed(e_img: f64) -> bool {
    e_img < CLOSURE_EPSILON
}

/// Real part of a possibly complex adjoint result.
pub fn real_adjoint(g: &GraphOperator, y: &Tensor) -> Result<Tensor> {
    let x = g.adjoint(y)?;
    Ok(match x.data() {
        TensorData::Real(_) => x,
        TensorData::Complex(_) => x.real_part(),
    })
}
