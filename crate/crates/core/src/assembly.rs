//! Global stiffness and mass matrices.
//!
//! Node blocks follow the network's node order with coordinates varying
//! fastest: degree of freedom `i * d + k` is coordinate `k` of node `i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSystem<T: Scalar> {
    pub dimension: usize,
    /// `N d × N d` stiffness matrix.
    pub stiffness: DMatrix<T>,
    /// Diagonal of the mass matrix, each node mass repeated `d` times.
    pub mass: DVector<T>,
    /// `(a, b, n̂, k)` per spring, kept for energy evaluation.
    springs: Vec<(usize, usize, DVector<T>, T)>,
}

impl<T: Scalar> AssembledSystem<T> {
    pub fn n_dofs(&self) -> usize {
        self.stiffness.nrows()
    }

    /// Compatibility matrix `M` with one row `√k (n̂ᵀ, −n̂ᵀ)` per spring, so
    /// that `K = Mᵀ M`.
    pub fn compatibility(&self) -> DMatrix<T> {
        let d = self.dimension;
        let mut m = DMatrix::zeros(self.springs.len(), self.n_dofs());
        for (row, (a, b, axis, k)) in self.springs.iter().enumerate() {
            let root = k.sqrt();
            for c in 0..d {
                m[(row, a * d + c)] = axis[c] * root;
                m[(row, b * d + c)] = -axis[c] * root;
            }
        }
        m
    }

    /// Degree-of-freedom indices of the given nodes, in order.
    pub fn dofs_of(&self, nodes: &[usize]) -> Vec<usize> {
        let d = self.dimension;
        nodes.iter().flat_map(|&i| (i * d)..(i * d + d)).collect()
    }
}

/// Unit axis from `a` to `b`.
fn unit_axis<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> Option<DVector<T>> {
    let diff = b - a;
    let len = diff.norm();
    if len > T::zero() {
        Some(diff / len)
    } else {
        None
    }
}

pub fn assemble<T: Scalar>(net: &Network<T>) -> Result<AssembledSystem<T>> {
    let d = net.dimension();
    let nodes = net.nodes();
    let n = nodes.len() * d;
    let mut k = DMatrix::zeros(n, n);
    let mut springs = Vec::with_capacity(net.springs().len());
    for s in net.springs() {
        let (a, b) = s.ends;
        let axis = unit_axis(&nodes[a].position, &nodes[b].position).ok_or_else(|| {
            Error::ZeroRestLength(nodes[a].label.clone(), nodes[b].label.clone())
        })?;
        let block = &axis * axis.transpose() * s.stiffness;
        for r in 0..d {
            for c in 0..d {
                let v = block[(r, c)];
                k[(a * d + r, a * d + c)] += v;
                k[(b * d + r, b * d + c)] += v;
                k[(a * d + r, b * d + c)] -= v;
                k[(b * d + r, a * d + c)] -= v;
            }
        }
        springs.push((a, b, axis, s.stiffness));
    }
    let mass = DVector::from_iterator(
        n,
        nodes.iter().flat_map(|nd| std::iter::repeat(nd.mass).take(d)),
    );
    Ok(AssembledSystem {
        dimension: d,
        stiffness: k,
        mass,
        springs,
    })
}

/// Energy form of a single spring: `k ((u_i − u_j) · n̂)²`.
pub fn spring_energy<T: Scalar>(
    x_i: &DVector<T>,
    x_j: &DVector<T>,
    k: T,
    u_i: &DVector<T>,
    u_j: &DVector<T>,
) -> Result<T> {
    if x_i.len() != x_j.len() || u_i.len() != x_i.len() || u_j.len() != x_i.len() {
        return Err(Error::DimensionMismatch("spring energy operands".into()));
    }
    let axis = unit_axis(x_i, x_j).ok_or_else(|| Error::ZeroRestLength("x_i".into(), "x_j".into()))?;
    let e = (u_i - u_j).dot(&axis);
    Ok(k * e * e)
}

/// `uᵀ K u`, twice the stored elastic energy.
pub fn quadratic_form<T: Scalar>(sys: &AssembledSystem<T>, u: &DVector<T>) -> Result<T> {
    if u.len() != sys.n_dofs() {
        return Err(Error::DimensionMismatch(format!(
            "displacement has {} entries, system has {} dofs",
            u.len(),
            sys.n_dofs()
        )));
    }
    Ok(u.dot(&(&sys.stiffness * u)))
}

/// Sum of per-spring energy forms; equals [`quadratic_form`].
pub fn spring_energy_sum<T: Scalar>(sys: &AssembledSystem<T>, u: &DVector<T>) -> Result<T> {
    if u.len() != sys.n_dofs() {
        return Err(Error::DimensionMismatch("displacement length".into()));
    }
    let d = sys.dimension;
    let mut total = T::zero();
    for (a, b, axis, k) in &sys.springs {
        let ua = u.rows(a * d, d);
        let ub = u.rows(b * d, d);
        let e = (ua - ub).dot(axis);
        total += *k * e * e;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn unit_axis_spring_blocks() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[1.0, 0.0], 0.0)
            .spring("a", "b", 1.0)
            .build()
            .unwrap();
        let sys = assemble(&net).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, -1.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                -1.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        assert_eq!(sys.stiffness, expected);
    }

    #[test]
    fn diagonal_spring_off_diagonal_block() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[1.0, 1.0], 0.0)
            .spring("a", "b", 2.0)
            .build()
            .unwrap();
        let k: DMatrix<f64> = assemble(&net).unwrap().stiffness;
        for r in 0..2 {
            for c in 0..2 {
                assert!((k[(r, 2 + c)] + 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_network_has_zero_stiffness() {
        let net = Network::builder(3)
            .terminal("a", &[0.0, 0.0, 0.0], 2.0)
            .terminal("b", &[1.0, 0.0, 0.0], 0.0)
            .build()
            .unwrap();
        let sys = assemble(&net).unwrap();
        assert!(sys.stiffness.iter().all(|v| *v == 0.0));
        assert_eq!(sys.mass, v(&[2.0, 2.0, 2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn spring_energy_examples() {
        let o = v(&[0.0, 0.0]);
        assert_eq!(spring_energy(&o, &v(&[1.0, 0.0]), 1.0, &v(&[1.0, 0.0]), &o).unwrap(), 1.0);
        assert_eq!(spring_energy(&o, &v(&[1.0, 0.0]), 1.0, &v(&[0.0, 5.0]), &o).unwrap(), 0.0);
        let e = spring_energy(&o, &v(&[1.0, 1.0]), 3.0, &v(&[1.0, 0.0]), &o).unwrap();
        assert!((e - 1.5).abs() < 1e-15);
        assert!(matches!(
            spring_energy(&o, &o, 1.0, &o, &o),
            Err(Error::ZeroRestLength(..))
        ));
    }

    #[test]
    fn stretching_a_unit_spring() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[1.0, 0.0], 0.0)
            .spring("a", "b", 1.0)
            .build()
            .unwrap();
        let sys = assemble(&net).unwrap();
        assert_eq!(quadratic_form(&sys, &v(&[0.0, 0.0, 1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(quadratic_form(&sys, &v(&[3.0, -2.0, 3.0, -2.0])).unwrap(), 0.0);
        assert!(quadratic_form(&sys, &v(&[1.0])).is_err());
    }

    #[test]
    fn rotation_about_centroid_stores_no_energy() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[2.0, 0.3], 0.0)
            .interior("c", &[0.7, 1.9], 0.0)
            .spring("a", "b", 1.3)
            .spring("b", "c", 0.4)
            .spring("a", "c", 2.0)
            .build()
            .unwrap();
        let sys = assemble(&net).unwrap();
        let centroid = net.nodes().iter().fold(v(&[0.0, 0.0]), |acc, n| acc + &n.position) / 3.0;
        let mut u = DVector::zeros(6);
        for (i, n) in net.nodes().iter().enumerate() {
            let r = &n.position - &centroid;
            u[2 * i] = -r[1];
            u[2 * i + 1] = r[0];
        }
        assert!(quadratic_form(&sys, &u).unwrap().abs() < 1e-14);
    }
}
