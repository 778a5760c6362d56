//! Domain types: networks, force systems and response functions.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::scalar::{lit, Scalar};

/// Whether a node is accessible from outside the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Terminal,
    Interior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T: Scalar> {
    pub label: String,
    pub position: DVector<T>,
    pub mass: T,
    pub kind: NodeKind,
}

impl<T: Scalar> Node<T> {
    pub fn terminal(label: impl Into<String>, position: &[T], mass: T) -> Self {
        Node {
            label: label.into(),
            position: DVector::from_column_slice(position),
            mass,
            kind: NodeKind::Terminal,
        }
    }

    pub fn interior(label: impl Into<String>, position: &[T], mass: T) -> Self {
        Node {
            label: label.into(),
            position: DVector::from_column_slice(position),
            mass,
            kind: NodeKind::Interior,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.kind == NodeKind::Terminal
    }
}

/// A linear spring between two nodes, referenced by index into the owning
/// network's node list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring<T: Scalar> {
    pub ends: (usize, usize),
    pub stiffness: T,
}

/// A spring-mass network in two or three dimensions.
///
/// Construction validates every invariant: finite positions of the right
/// dimension, non-negative masses and stiffnesses, unique labels, distinct
/// node positions, at least one terminal. Springs joining the same unordered
/// pair are merged by summing their stiffness.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar> {
    dimension: usize,
    nodes: Vec<Node<T>>,
    springs: Vec<Spring<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(dimension: usize, nodes: Vec<Node<T>>, springs: Vec<Spring<T>>) -> Result<Self> {
        if dimension != 2 && dimension != 3 {
            return Err(Error::InvalidNetwork(format!(
                "dimension must be 2 or 3, got {dimension}"
            )));
        }
        let mut seen = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.position.len() != dimension {
                return Err(Error::DimensionMismatch(format!(
                    "node {} has {} coordinates, expected {dimension}",
                    node.label,
                    node.position.len()
                )));
            }
            if node.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "node {} has a non-finite coordinate",
                    node.label
                )));
            }
            if !node.mass.is_finite() || node.mass < T::zero() {
                return Err(Error::InvalidNetwork(format!(
                    "node {} has invalid mass {}",
                    node.label, node.mass
                )));
            }
            if seen.insert(node.label.clone(), i).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate node label {}",
                    node.label
                )));
            }
        }
        if !nodes.iter().any(Node::is_terminal) {
            return Err(Error::InvalidNetwork("network has no terminal node".into()));
        }
        check_distinct_positions(&nodes)?;

        let mut merged: BTreeMap<(usize, usize), T> = BTreeMap::new();
        for (s, spring) in springs.iter().enumerate() {
            let (a, b) = spring.ends;
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::InvalidNetwork(format!(
                    "spring {s} references a missing node"
                )));
            }
            if a == b {
                return Err(Error::ZeroRestLength(
                    nodes[a].label.clone(),
                    nodes[b].label.clone(),
                ));
            }
            if !spring.stiffness.is_finite() {
                return Err(Error::InvalidNetwork(format!(
                    "spring {s} has non-finite stiffness"
                )));
            }
            if spring.stiffness < T::zero() {
                return Err(Error::NegativeStiffness {
                    spring: s,
                    stiffness: crate::scalar::to_f64(spring.stiffness),
                });
            }
            let key = (a.min(b), a.max(b));
            *merged.entry(key).or_insert_with(T::zero) += spring.stiffness;
        }
        let springs = merged
            .into_iter()
            .map(|(ends, stiffness)| Spring { ends, stiffness })
            .collect();
        Ok(Network {
            dimension,
            nodes,
            springs,
        })
    }

    pub fn builder(dimension: usize) -> NetworkBuilder<T> {
        NetworkBuilder {
            dimension,
            nodes: Vec::new(),
            springs: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    /// Springs with `ends.0 < ends.1`, sorted by endpoint pair.
    pub fn springs(&self) -> &[Spring<T>] {
        &self.springs
    }

    pub fn node_index(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    /// Indices of terminal nodes in node order.
    pub fn terminals(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].is_terminal())
            .collect()
    }

    /// Indices of interior nodes in node order.
    pub fn interior(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| !self.nodes[i].is_terminal())
            .collect()
    }

    pub fn terminal_positions(&self) -> Vec<DVector<T>> {
        self.terminals()
            .into_iter()
            .map(|i| self.nodes[i].position.clone())
            .collect()
    }

    pub fn terminal_masses(&self) -> Vec<T> {
        self.terminals()
            .into_iter()
            .map(|i| self.nodes[i].mass)
            .collect()
    }

    /// Index of the spring joining `a` and `b`, if any.
    pub fn spring_between(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.springs.binary_search_by(|s| s.ends.cmp(&key)).ok()
    }

    /// Copy with every stiffness multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        for s in &mut out.springs {
            s.stiffness *= factor;
        }
        out
    }

    /// Copy with node masses replaced by `f(index, node)`.
    pub fn with_masses(&self, mut f: impl FnMut(usize, &Node<T>) -> T) -> Result<Self> {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| Node {
                mass: f(i, n),
                ..n.clone()
            })
            .collect();
        Network::new(self.dimension, nodes, self.springs.clone())
    }

    /// Copy with the given extra springs; endpoints may repeat existing ones.
    pub fn with_added_springs(&self, extra: &[Spring<T>]) -> Result<Self> {
        let mut springs = self.springs.clone();
        springs.extend_from_slice(extra);
        Network::new(self.dimension, self.nodes.clone(), springs)
    }

    /// Number of unordered spring pairs whose segments cross at a point that
    /// is not a shared endpoint (two-dimensional networks only).
    pub fn crossing_count(&self) -> usize {
        if self.dimension != 2 {
            return 0;
        }
        let seg = |s: &Spring<T>| {
            let p = &self.nodes[s.ends.0].position;
            let q = &self.nodes[s.ends.1].position;
            ([p[0], p[1]], [q[0], q[1]])
        };
        let mut count = 0;
        for i in 0..self.springs.len() {
            for j in (i + 1)..self.springs.len() {
                let (a, b) = (self.springs[i].ends, self.springs[j].ends);
                if a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1 {
                    continue;
                }
                let (p1, p2) = seg(&self.springs[i]);
                let (q1, q2) = seg(&self.springs[j]);
                if segments_cross(p1, p2, q1, q2) {
                    count += 1;
                }
            }
        }
        count
    }
}

fn segments_cross<T: Scalar>(p1: [T; 2], p2: [T; 2], q1: [T; 2], q2: [T; 2]) -> bool {
    let orient = |a: [T; 2], b: [T; 2], c: [T; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = T::zero();
    ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z))
}

fn check_distinct_positions<T: Scalar>(nodes: &[Node<T>]) -> Result<()> {
    // Sort by first coordinate and compare neighbours within the exact-equality
    // band; positions are inputs so exact comparison is intended.
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| {
        let pa = &nodes[a].position;
        let pb = &nodes[b].position;
        for k in 0..pa.len() {
            match pa[k].partial_cmp(&pb[k]) {
                Some(std::cmp::Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
    for w in order.windows(2) {
        if nodes[w[0]].position == nodes[w[1]].position {
            return Err(Error::InvalidNetwork(format!(
                "nodes {} and {} coincide",
                nodes[w[0]].label, nodes[w[1]].label
            )));
        }
    }
    Ok(())
}

/// Incremental, label-based network construction.
#[derive(Debug, Clone)]
pub struct NetworkBuilder<T: Scalar> {
    dimension: usize,
    nodes: Vec<Node<T>>,
    springs: Vec<(String, String, T)>,
}

impl<T: Scalar> NetworkBuilder<T> {
    pub fn terminal(mut self, label: impl Into<String>, position: &[T], mass: T) -> Self {
        self.nodes.push(Node::terminal(label, position, mass));
        self
    }

    pub fn interior(mut self, label: impl Into<String>, position: &[T], mass: T) -> Self {
        self.nodes.push(Node::interior(label, position, mass));
        self
    }

    pub fn node(mut self, node: Node<T>) -> Self {
        self.nodes.push(node);
        self
    }

    pub fn spring(mut self, a: impl Into<String>, b: impl Into<String>, stiffness: T) -> Self {
        self.springs.push((a.into(), b.into(), stiffness));
        self
    }

    pub fn build(self) -> Result<Network<T>> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.label.as_str(), i))
            .collect();
        let mut springs = Vec::with_capacity(self.springs.len());
        for (a, b, k) in &self.springs {
            let ia = *index
                .get(a.as_str())
                .ok_or_else(|| Error::InvalidNetwork(format!("spring references unknown node {a}")))?;
            let ib = *index
                .get(b.as_str())
                .ok_or_else(|| Error::InvalidNetwork(format!("spring references unknown node {b}")))?;
            springs.push(Spring {
                ends: (ia, ib),
                stiffness: *k,
            });
        }
        Network::new(self.dimension, self.nodes, springs)
    }
}

/// `u ∧ v`: the scalar `det[u, v]` in 2D (returned as a 1-vector) or the cross
/// product in 3D.
pub fn wedge<T: Scalar>(u: &DVector<T>, v: &DVector<T>) -> DVector<T> {
    match u.len() {
        2 => DVector::from_element(1, u[0] * v[1] - u[1] * v[0]),
        3 => DVector::from_column_slice(&[
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]),
        d => panic!("wedge product undefined in dimension {d}"),
    }
}

/// Columns spanning the infinitesimal rigid motions (translations and
/// rotations) of a set of points, as `nd`-vectors. Not orthonormalized.
pub fn rigid_motions<T: Scalar>(points: &[DVector<T>]) -> DMatrix<T> {
    let n = points.len();
    let d = points.first().map_or(2, |p| p.len());
    let nrot = if d == 2 { 1 } else { 3 };
    let mut out = DMatrix::zeros(n * d, d + nrot);
    for (i, p) in points.iter().enumerate() {
        for k in 0..d {
            out[(i * d + k, k)] = T::one();
        }
        if d == 2 {
            out[(i * d, d)] = -p[1];
            out[(i * d + 1, d)] = p[0];
        } else {
            // rotation about axis e_a: u = e_a x p
            for a in 0..3 {
                let mut e = DVector::zeros(3);
                e[a] = T::one();
                let u = wedge(&e, p);
                for k in 0..3 {
                    out[(i * d + k, d + a)] = u[k];
                }
            }
        }
    }
    out
}

/// Forces attached to points; balanced when total force and torque vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedForceSystem<T: Scalar> {
    pub points: Vec<DVector<T>>,
    pub forces: Vec<DVector<T>>,
}

impl<T: Scalar> BalancedForceSystem<T> {
    pub fn new(points: Vec<DVector<T>>, forces: Vec<DVector<T>>) -> Self {
        BalancedForceSystem { points, forces }
    }

    /// Reads an `nd`-vector as `n` forces at the given points.
    pub fn from_stacked(points: &[DVector<T>], stacked: &DVector<T>) -> Self {
        let d = points.first().map_or(0, |p| p.len());
        let forces = (0..points.len())
            .map(|i| stacked.rows(i * d, d).into_owned())
            .collect();
        BalancedForceSystem {
            points: points.to_vec(),
            forces,
        }
    }
}

/// Outcome of a balance check.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceCheck<T: Scalar> {
    pub balanced: bool,
    pub force_residual: DVector<T>,
    pub torque_residual: DVector<T>,
    /// `max(1, Σ |f_i| (1 + |x_i|))`, the scale the tolerance is relative to.
    pub scale: T,
}

/// Tests force and torque balance with tolerance `tol` relative to the force
/// scale of the system.
pub fn check_balanced<T: Scalar>(sys: &BalancedForceSystem<T>, tol: f64) -> Result<BalanceCheck<T>> {
    if sys.points.len() != sys.forces.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points but {} forces",
            sys.points.len(),
            sys.forces.len()
        )));
    }
    let d = sys.points.first().map_or(2, |p| p.len());
    if d != 2 && d != 3 {
        return Err(Error::DimensionMismatch(format!("dimension {d} not in {{2,3}}")));
    }
    if sys
        .points
        .iter()
        .chain(sys.forces.iter())
        .any(|v| v.len() != d)
    {
        return Err(Error::DimensionMismatch(
            "points and forces must share one dimension".into(),
        ));
    }
    let mut force = DVector::zeros(d);
    let mut torque = DVector::zeros(if d == 2 { 1 } else { 3 });
    let mut scale = T::zero();
    for (x, f) in sys.points.iter().zip(&sys.forces) {
        force += f;
        torque += wedge(x, f);
        scale += f.norm() * (T::one() + x.norm());
    }
    let scale = scale.max(T::one());
    let bound = scale * lit::<T>(tol);
    let balanced = force.norm() <= bound && torque.norm() <= bound;
    Ok(BalanceCheck {
        balanced,
        force_residual: force,
        torque_residual: torque,
        scale,
    })
}

/// A candidate (or computed) static response matrix at given terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticResponse<T: Scalar> {
    pub terminal_positions: Vec<DVector<T>>,
    pub matrix: DMatrix<T>,
}

impl<T: Scalar> StaticResponse<T> {
    /// Checks shapes only; realizability is decided by
    /// [`crate::realizability::validate_static`].
    pub fn new(terminal_positions: Vec<DVector<T>>, matrix: DMatrix<T>) -> Result<Self> {
        let d = check_positions(&terminal_positions)?;
        let nd = terminal_positions.len() * d;
        if matrix.shape() != (nd, nd) {
            return Err(Error::DimensionMismatch(format!(
                "response matrix is {}x{}, expected {nd}x{nd}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(StaticResponse {
            terminal_positions,
            matrix,
        })
    }

    pub fn dimension(&self) -> usize {
        self.terminal_positions[0].len()
    }

    /// Column `j` read as forces at the terminals.
    pub fn column_forces(&self, j: usize) -> BalancedForceSystem<T> {
        BalancedForceSystem::from_stacked(&self.terminal_positions, &self.matrix.column(j).into_owned())
    }
}

fn check_positions<T: Scalar>(positions: &[DVector<T>]) -> Result<usize> {
    let d = positions
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::DimensionMismatch("no terminal positions".into()))?;
    if d != 2 && d != 3 {
        return Err(Error::DimensionMismatch(format!("dimension {d} not in {{2,3}}")));
    }
    if positions.iter().any(|p| p.len() != d) {
        return Err(Error::DimensionMismatch(
            "terminal positions of mixed dimension".into(),
        ));
    }
    Ok(d)
}

/// One pole of a modal response: `C / (omega^2 - omega_sq)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalTerm<T: Scalar> {
    pub omega_sq: T,
    pub residue: DMatrix<T>,
}

/// `W(ω) = A − ω² M + Σ C_i / (ω² − ω_i²)` in explicit form.
///
/// `M` is stored through the terminal masses; the matrix repeats each mass
/// `d` times along the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalResponse<T: Scalar> {
    pub terminal_positions: Vec<DVector<T>>,
    pub a: DMatrix<T>,
    pub masses: Vec<T>,
    pub terms: Vec<ModalTerm<T>>,
}

impl<T: Scalar> ModalResponse<T> {
    pub fn new(
        terminal_positions: Vec<DVector<T>>,
        a: DMatrix<T>,
        masses: Vec<T>,
        terms: Vec<ModalTerm<T>>,
    ) -> Result<Self> {
        let d = check_positions(&terminal_positions)?;
        let n = terminal_positions.len();
        let nd = n * d;
        if a.shape() != (nd, nd) {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, expected {nd}x{nd}",
                a.nrows(),
                a.ncols()
            )));
        }
        if masses.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} masses for {n} terminals",
                masses.len()
            )));
        }
        for (i, t) in terms.iter().enumerate() {
            if t.residue.shape() != (nd, nd) {
                return Err(Error::DimensionMismatch(format!(
                    "residue {i} is {}x{}, expected {nd}x{nd}",
                    t.residue.nrows(),
                    t.residue.ncols()
                )));
            }
        }
        Ok(ModalResponse {
            terminal_positions,
            a,
            masses,
            terms,
        })
    }

    pub fn dimension(&self) -> usize {
        self.terminal_positions[0].len()
    }

    pub fn mass_matrix(&self) -> DMatrix<T> {
        let d = self.dimension();
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.masses.len() * d,
            self.masses.iter().flat_map(|m| std::iter::repeat(*m).take(d)),
        ))
    }

    /// `W(0) = A − Σ C_i / ω_i²`.
    pub fn static_part(&self) -> DMatrix<T> {
        let mut w = self.a.clone();
        for t in &self.terms {
            w -= &t.residue / t.omega_sq;
        }
        symmetrize(&w)
    }

    /// `|A| + Σ |C_i| / ω_i²` (Frobenius), the magnitude `W(0)` is
    /// computed from. Cancellation in `W(0)` is judged against it.
    pub fn reference_scale(&self) -> T {
        self.terms.iter().fold(self.a.norm(), |acc, t| {
            if t.omega_sq > T::zero() {
                acc + t.residue.norm() / t.omega_sq
            } else {
                acc
            }
        })
    }

    /// Guard distance around the poles used by [`evaluate_modal`].
    pub fn resonance_guard(&self, rel: f64) -> T {
        let max = self
            .terms
            .iter()
            .fold(T::one(), |acc, t| acc.max(t.omega_sq));
        max * lit::<T>(rel)
    }
}

/// Evaluates a modal response at frequency `omega`.
pub fn evaluate_modal<T: Scalar>(resp: &ModalResponse<T>, omega: T) -> Result<DMatrix<T>> {
    evaluate_modal_with(resp, omega, &T::tolerances())
}

pub fn evaluate_modal_with<T: Scalar>(
    resp: &ModalResponse<T>,
    omega: T,
    tol: &crate::scalar::Tolerances,
) -> Result<DMatrix<T>> {
    let w2 = omega * omega;
    let guard = resp.resonance_guard(tol.resonance_guard);
    let mut out = &resp.a - resp.mass_matrix() * w2;
    for t in &resp.terms {
        let gap = w2 - t.omega_sq;
        if gap.abs() < guard {
            return Err(Error::ResonanceProximity {
                omega_sq: crate::scalar::to_f64(w2),
                resonance: crate::scalar::to_f64(t.omega_sq),
            });
        }
        out += &t.residue / gap;
    }
    Ok(symmetrize(&out))
}
