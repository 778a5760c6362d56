//! JSON formats for networks and response specifications, plus the
//! canonical writer used for every file the tool emits.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use elastonet::{ModalResponse, ModalTerm, Network, Node, NodeKind, Spring, StaticResponse};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const NETWORK_VERSION: &str = "elastonet-network/1";
pub const RESPONSE_VERSION: &str = "elastonet-response/1";

/// Malformed or inconsistent input. Maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn bad(msg: impl Into<String>) -> InputError {
    InputError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub version: String,
    pub dimension: usize,
    pub nodes: Vec<NodeRecord>,
    pub springs: Vec<SpringRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub label: String,
    pub position: Vec<f64>,
    #[serde(default)]
    pub mass: f64,
    pub kind: Kind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Terminal,
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpringRecord {
    pub labels: [String; 2],
    pub stiffness: f64,
}

impl NetworkFile {
    /// Canonical record of a network: nodes in network order (it fixes the
    /// terminal order), labels sorted within each spring, springs sorted by
    /// label pair.
    pub fn from_network(net: &Network<f64>) -> Self {
        let nodes = net
            .nodes()
            .iter()
            .map(|n| NodeRecord {
                label: n.label.clone(),
                position: n.position.iter().copied().collect(),
                mass: n.mass,
                kind: match n.kind {
                    NodeKind::Terminal => Kind::Terminal,
                    NodeKind::Interior => Kind::Interior,
                },
            })
            .collect();
        let mut springs: Vec<SpringRecord> = net
            .springs()
            .iter()
            .map(|s| {
                let mut labels = [net.nodes()[s.ends.0].label.clone(), net.nodes()[s.ends.1].label.clone()];
                labels.sort();
                SpringRecord {
                    labels,
                    stiffness: s.stiffness,
                }
            })
            .collect();
        springs.sort_by(|a, b| a.labels.cmp(&b.labels));
        NetworkFile {
            version: NETWORK_VERSION.into(),
            dimension: net.dimension(),
            nodes,
            springs,
        }
    }

    pub fn to_network(&self) -> Result<Network<f64>, InputError> {
        if self.version != NETWORK_VERSION {
            return Err(bad(format!(
                "unsupported version {:?}, expected {NETWORK_VERSION:?}",
                self.version
            )));
        }
        let d = self.dimension;
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut index = std::collections::HashMap::new();
        for (i, rec) in self.nodes.iter().enumerate() {
            let at = || format!("node {i} ({:?})", rec.label);
            if rec.position.len() != d {
                return Err(bad(format!(
                    "{}: position has {} coordinates, expected {d}",
                    at(),
                    rec.position.len()
                )));
            }
            if rec.position.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("{}: position is not finite", at())));
            }
            if !(rec.mass >= 0.0 && rec.mass.is_finite()) {
                return Err(bad(format!("{}: mass must be finite and non-negative, got {}", at(), rec.mass)));
            }
            if index.insert(rec.label.as_str(), i).is_some() {
                return Err(bad(format!("{}: duplicate label", at())));
            }
            nodes.push(match rec.kind {
                Kind::Terminal => Node::terminal(rec.label.clone(), &rec.position, rec.mass),
                Kind::Interior => Node::interior(rec.label.clone(), &rec.position, rec.mass),
            });
        }
        let mut springs = Vec::with_capacity(self.springs.len());
        for (s, rec) in self.springs.iter().enumerate() {
            let mut ends = [0; 2];
            for (k, label) in rec.labels.iter().enumerate() {
                ends[k] = *index
                    .get(label.as_str())
                    .ok_or_else(|| bad(format!("spring {s}: unknown node label {label:?}")))?;
            }
            if ends[0] == ends[1] {
                return Err(bad(format!("spring {s}: both ends are {:?}", rec.labels[0])));
            }
            if !(rec.stiffness > 0.0 && rec.stiffness.is_finite()) {
                return Err(bad(format!(
                    "spring {s} ({} - {}): stiffness must be positive, got {}",
                    rec.labels[0], rec.labels[1], rec.stiffness
                )));
            }
            springs.push(Spring {
                ends: (ends[0], ends[1]),
                stiffness: rec.stiffness,
            });
        }
        Network::new(d, nodes, springs).map_err(|e| bad(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseFile {
    pub version: String,
    pub terminal_positions: Vec<Vec<f64>>,
    #[serde(rename = "static", default, skip_serializing_if = "Option::is_none")]
    pub static_part: Option<StaticRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modal: Option<ModalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticRecord {
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalRecord {
    pub a: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    pub terms: Vec<TermRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermRecord {
    pub omega_sq: f64,
    pub c: Vec<Vec<f64>>,
}

/// A parsed response specification.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Static(StaticResponse<f64>),
    Modal(ModalResponse<f64>),
}

impl Response {
    pub fn terminal_positions(&self) -> &[DVector<f64>] {
        match self {
            Response::Static(r) => &r.terminal_positions,
            Response::Modal(r) => &r.terminal_positions,
        }
    }

    pub fn dimension(&self) -> usize {
        self.terminal_positions().first().map_or(0, |p| p.len())
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, InputError> {
    if rows.len() != n {
        return Err(bad(format!("{name}: {} rows, expected {n}", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(bad(format!("{name}: row {i} has {} entries, expected {n}", r.len())));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(bad(format!("{name}: row {i} is not finite")));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ResponseFile {
    pub fn from_static(resp: &StaticResponse<f64>) -> Self {
        ResponseFile {
            version: RESPONSE_VERSION.into(),
            terminal_positions: positions(&resp.terminal_positions),
            static_part: Some(StaticRecord {
                matrix: rows(&resp.matrix),
            }),
            modal: None,
        }
    }

    pub fn from_modal(resp: &ModalResponse<f64>) -> Self {
        ResponseFile {
            version: RESPONSE_VERSION.into(),
            terminal_positions: positions(&resp.terminal_positions),
            static_part: None,
            modal: Some(ModalRecord {
                a: rows(&resp.a),
                masses: resp.masses.clone(),
                terms: resp
                    .terms
                    .iter()
                    .map(|t| TermRecord {
                        omega_sq: t.omega_sq,
                        c: rows(&t.residue),
                    })
                    .collect(),
            }),
        }
    }

    pub fn to_response(&self) -> Result<Response, InputError> {
        if self.version != RESPONSE_VERSION {
            return Err(bad(format!(
                "unsupported version {:?}, expected {RESPONSE_VERSION:?}",
                self.version
            )));
        }
        let n = self.terminal_positions.len();
        if n == 0 {
            return Err(bad("terminal_positions is empty"));
        }
        let d = self.terminal_positions[0].len();
        for (i, p) in self.terminal_positions.iter().enumerate() {
            if p.len() != d {
                return Err(bad(format!("terminal_positions[{i}]: {} coordinates, expected {d}", p.len())));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("terminal_positions[{i}]: not finite")));
            }
        }
        let pts: Vec<DVector<f64>> = self.terminal_positions.iter().map(|p| DVector::from_column_slice(p)).collect();
        let nd = n * d;
        match (&self.static_part, &self.modal) {
            (Some(s), None) => {
                let m = matrix("static.matrix", &s.matrix, nd)?;
                StaticResponse::new(pts, m).map(Response::Static).map_err(|e| bad(e.to_string()))
            }
            (None, Some(m)) => {
                let a = matrix("modal.a", &m.a, nd)?;
                if m.masses.len() != n {
                    return Err(bad(format!("modal.masses: {} entries, expected {n}", m.masses.len())));
                }
                if m.masses.iter().any(|x| !x.is_finite()) {
                    return Err(bad("modal.masses: not finite"));
                }
                let mut terms = Vec::with_capacity(m.terms.len());
                for (k, t) in m.terms.iter().enumerate() {
                    if !t.omega_sq.is_finite() {
                        return Err(bad(format!("modal.terms[{k}].omega_sq: not finite")));
                    }
                    terms.push(ModalTerm {
                        omega_sq: t.omega_sq,
                        residue: matrix(&format!("modal.terms[{k}].c"), &t.c, nd)?,
                    });
                }
                ModalResponse::new(pts, a, m.masses.clone(), terms)
                    .map(Response::Modal)
                    .map_err(|e| bad(e.to_string()))
            }
            (Some(_), Some(_)) => Err(bad("give either \"static\" or \"modal\", not both")),
            (None, None) => Err(bad("missing \"static\" or \"modal\" section")),
        }
    }
}

fn positions(pts: &[DVector<f64>]) -> Vec<Vec<f64>> {
    pts.iter().map(|p| p.iter().copied().collect()).collect()
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())).into())
}

pub fn read_network(path: &Path) -> Result<Network<f64>> {
    let file: NetworkFile = parse(path)?;
    file.to_network()
        .map_err(|e| bad(format!("{}: {e}", path.display())).into())
}

pub fn read_response(path: &Path) -> Result<Response> {
    let file: ResponseFile = parse(path)?;
    file.to_response()
        .map_err(|e| bad(format!("{}: {e}", path.display())).into())
}

pub fn write_network(path: &Path, net: &Network<f64>) -> Result<()> {
    write_canonical(path, &NetworkFile::from_network(net))
}

pub fn write_canonical<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, to_canonical(value)?).with_context(|| format!("cannot write {}", path.display()))
}

/// Pretty JSON with 17 significant digits on every float and flat arrays
/// of scalars kept on one line.
pub fn to_canonical<S: Serialize>(value: &S) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    emit(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

fn emit(out: &mut String, v: &Value, depth: usize) {
    let pad = |out: &mut String, depth: usize| out.push_str(&"  ".repeat(depth));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => {
                let _ = write!(out, "{x:.16e}");
            }
            _ => out.push_str(&n.to_string()),
        },
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.iter().all(|x| !x.is_array() && !x.is_object()) => {
            out.push('[');
            for (k, x) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                emit(out, x, depth);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, x) in items.iter().enumerate() {
                pad(out, depth + 1);
                emit(out, x, depth + 1);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (k, (key, x)) in map.iter().enumerate() {
                pad(out, depth + 1);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                emit(out, x, depth + 1);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}
