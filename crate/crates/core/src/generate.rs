//! Seeded random networks, force systems and static targets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::model::{Network, Node, Spring, StaticResponse};
use crate::realizability::balanced_projector;
use crate::scalar::{lit, Scalar};

/// Shape of a random network. Positions are uniform in the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomNetworkSpec {
    pub dimension: usize,
    pub terminals: usize,
    pub interior: usize,
    /// Probability that a given node pair carries a spring.
    pub edge_probability: f64,
    /// Probability that an interior node has positive mass.
    pub interior_mass_probability: f64,
    /// Probability that a terminal has positive mass.
    pub terminal_mass_probability: f64,
}

impl RandomNetworkSpec {
    pub fn new(dimension: usize, terminals: usize, interior: usize) -> Self {
        RandomNetworkSpec {
            dimension,
            terminals,
            interior,
            edge_probability: 0.5,
            interior_mass_probability: 0.5,
            terminal_mass_probability: 0.3,
        }
    }
}

fn point<T: Scalar, R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<T> {
    (0..d).map(|_| lit(rng.gen::<f64>())).collect()
}

/// Random network: stiffnesses uniform in `[0.5, 2]`, masses in `[0.5, 2]`.
pub fn random_network<T: Scalar, R: Rng + ?Sized>(rng: &mut R, spec: &RandomNetworkSpec) -> Network<T> {
    let d = spec.dimension;
    let mut nodes = Vec::with_capacity(spec.terminals + spec.interior);
    for i in 0..spec.terminals {
        let mass = if rng.gen::<f64>() < spec.terminal_mass_probability {
            rng.gen_range(0.5..2.0)
        } else {
            0.0
        };
        nodes.push(Node::terminal(format!("t{i}"), &point::<T, R>(rng, d), lit(mass)));
    }
    for i in 0..spec.interior {
        let mass = if rng.gen::<f64>() < spec.interior_mass_probability {
            rng.gen_range(0.5..2.0)
        } else {
            0.0
        };
        nodes.push(Node::interior(format!("i{i}"), &point::<T, R>(rng, d), lit(mass)));
    }
    let n = nodes.len();
    let mut springs = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.gen::<f64>() < spec.edge_probability {
                springs.push(Spring {
                    ends: (a, b),
                    stiffness: lit(rng.gen_range(0.5..2.0)),
                });
            }
        }
    }
    Network::new(d, nodes, springs).expect("random positions are distinct")
}

/// Random points uniform in the unit square or cube.
pub fn random_points<T: Scalar, R: Rng + ?Sized>(rng: &mut R, dimension: usize, n: usize) -> Vec<DVector<T>> {
    (0..n)
        .map(|_| DVector::from_vec(point::<T, R>(rng, dimension)))
        .collect()
}

/// Random unit force vector in the balanced subspace at `positions`.
pub fn random_balanced_forces<T: Scalar, R: Rng + ?Sized>(rng: &mut R, positions: &[DVector<T>]) -> DVector<T> {
    let d = positions.first().map_or(0, |p| p.len());
    let raw = DVector::from_fn(positions.len() * d, |_, _| lit::<T>(rng.gen::<f64>() - 0.5));
    let f = balanced_projector(positions) * raw;
    let n = f.norm();
    if n > T::zero() {
        f / n
    } else {
        f
    }
}

/// Realizable static target `Σ λ_k f_k f_kᵀ` with `pieces` random balanced
/// pieces and `λ_k` uniform in `[0.5, 2]`.
pub fn random_static_target<T: Scalar, R: Rng + ?Sized>(rng: &mut R, positions: &[DVector<T>], pieces: usize) -> StaticResponse<T> {
    let nd = positions.len() * positions.first().map_or(0, |p| p.len());
    let mut w = DMatrix::zeros(nd, nd);
    for _ in 0..pieces {
        let f = random_balanced_forces(rng, positions);
        w += &f * f.transpose() * lit::<T>(rng.gen_range(0.5..2.0));
    }
    StaticResponse::new(positions.to_vec(), w).expect("shape matches positions")
}

/// Union of two networks with identical terminals (same labels, same
/// positions) and disjoint interiors. Interior labels of `b` get the prefix
/// `b.`; terminal masses add and parallel springs merge.
pub fn union_sharing_terminals<T: Scalar>(a: &Network<T>, b: &Network<T>) -> crate::Result<Network<T>> {
    use crate::Error;
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch("networks of different dimension".into()));
    }
    let ta = a.terminals();
    let tb = b.terminals();
    let same = ta.len() == tb.len()
        && ta.iter().zip(&tb).all(|(&i, &j)| {
            let (x, y) = (&a.nodes()[i], &b.nodes()[j]);
            x.label == y.label && x.position == y.position
        });
    if !same {
        return Err(Error::InvalidNetwork("networks do not share their terminals".into()));
    }
    let mut nodes = a.nodes().to_vec();
    let mut map = vec![0; b.nodes().len()];
    for (k, &j) in tb.iter().enumerate() {
        map[j] = ta[k];
        nodes[ta[k]].mass += b.nodes()[j].mass;
    }
    for j in b.interior() {
        let mut node = b.nodes()[j].clone();
        node.label = format!("b.{}", node.label);
        map[j] = nodes.len();
        nodes.push(node);
    }
    let mut springs = a.springs().to_vec();
    springs.extend(b.springs().iter().map(|s| Spring {
        ends: (map[s.ends.0], map[s.ends.1]),
        stiffness: s.stiffness,
    }));
    Network::new(a.dimension(), nodes, springs)
}
