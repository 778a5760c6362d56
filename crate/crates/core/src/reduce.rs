//! Elimination of interior nodes: static Schur complements, the dynamic
//! response at a frequency, and the explicit modal (pole/residue) form.
//!
//! Interior nodes are grouped into connected components of the
//! interior-to-interior spring graph. Distinct components only couple through
//! the terminals, so `A_II` is block diagonal and every elimination is done
//! one component at a time, with its pseudo-inverse cutoff relative to that
//! block.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{assemble, AssembledSystem};
use crate::error::{Error, Result};
use crate::linalg::{self, pinv, select, sym_eigen, symmetrize};
use crate::model::{ModalResponse, ModalTerm, Network, StaticResponse};
use crate::scalar::{lit, to_f64, Scalar, Tolerances};

/// Uncoupled-mode threshold: a mode with `|c̃|² <= COUPLING * λ * |K̃|` does
/// not reach the terminals.
const COUPLING: f64 = 1e-18;

/// Terminal / interior split of a network's nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub terminals: Vec<usize>,
    pub interior: Vec<usize>,
    /// Interior nodes with positive mass.
    pub massive: Vec<usize>,
    /// Massless interior nodes.
    pub massless: Vec<usize>,
}

impl Partition {
    pub fn of<T: Scalar>(net: &Network<T>) -> Self {
        let terminals = net.terminals();
        let interior = net.interior();
        let (massive, massless) = interior
            .iter()
            .partition(|&&i| net.nodes()[i].mass > T::zero());
        Partition {
            terminals,
            interior,
            massive,
            massless,
        }
    }
}

/// Connected components of the interior nodes under interior-interior
/// springs, each sorted, ordered by smallest member.
pub fn interior_components<T: Scalar>(net: &Network<T>) -> Vec<Vec<usize>> {
    let n = net.nodes().len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let nodes = net.nodes();
    for s in net.springs() {
        let (a, b) = s.ends;
        if !nodes[a].is_terminal() && !nodes[b].is_terminal() {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in net.interior() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Numerical nullspace of `A_II` (floppy modes).
#[derive(Debug, Clone, PartialEq)]
pub struct FloppyModes<T: Scalar> {
    /// Interior node indices; basis rows follow their degrees of freedom.
    pub interior: Vec<usize>,
    /// Orthonormal columns spanning the nullspace.
    pub basis: DMatrix<T>,
    /// Relative singular value cutoff used.
    pub tolerance: f64,
    /// Largest `|A_II v|` over basis vectors, relative to `|A|`.
    pub stiffness_residual: T,
    /// Largest `|A_BI v|` over basis vectors, relative to `|A|`.
    pub coupling_residual: T,
}

impl<T: Scalar> FloppyModes<T> {
    pub fn is_empty(&self) -> bool {
        self.basis.ncols() == 0
    }

    pub fn len(&self) -> usize {
        self.basis.ncols()
    }
}

fn static_from_system<T: Scalar>(
    net: &Network<T>,
    sys: &AssembledSystem<T>,
    tol: &Tolerances,
) -> DMatrix<T> {
    let b = sys.dofs_of(&net.terminals());
    let groups: Vec<Vec<usize>> = interior_components(net).iter().map(|c| sys.dofs_of(c)).collect();
    let w = linalg::schur_from_factor(&sys.compatibility(), &b, &groups, tol.pinv_rcond);
    let floor = linalg::roundoff_floor(linalg::max_abs(&sys.stiffness), sys.stiffness.nrows());
    linalg::strip_small(&w, floor)
}

/// Static terminal response `W = A_BB − A_BI A_II† A_IB`.
pub fn static_response<T: Scalar>(net: &Network<T>) -> Result<StaticResponse<T>> {
    static_response_with(net, &T::tolerances())
}

pub fn static_response_with<T: Scalar>(
    net: &Network<T>,
    tol: &Tolerances,
) -> Result<StaticResponse<T>> {
    let sys = assemble(net)?;
    let w = static_from_system(net, &sys, tol);
    StaticResponse::new(net.terminal_positions(), w)
}

/// Floppy modes of the interior: the numerical nullspace of `A_II`.
pub fn floppy_modes<T: Scalar>(net: &Network<T>) -> Result<FloppyModes<T>> {
    floppy_modes_with(net, &T::tolerances())
}

pub fn floppy_modes_with<T: Scalar>(net: &Network<T>, tol: &Tolerances) -> Result<FloppyModes<T>> {
    let sys = assemble(net)?;
    let interior = net.interior();
    let d = net.dimension();
    let ni = interior.len() * d;
    let position: std::collections::HashMap<usize, usize> =
        interior.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut cols: Vec<DVector<T>> = Vec::new();
    for comp in interior_components(net) {
        let c = sys.dofs_of(&comp);
        let kcc = select(&sys.stiffness, &c, &c);
        let null = linalg::nullspace(&kcc, tol.pinv_rcond);
        for j in 0..null.ncols() {
            let mut v = DVector::zeros(ni);
            for (r, &node) in comp.iter().enumerate() {
                let k = position[&node];
                for q in 0..d {
                    v[k * d + q] = null[(r * d + q, j)];
                }
            }
            cols.push(v);
        }
    }
    let basis = if cols.is_empty() {
        DMatrix::zeros(ni, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    let b = sys.dofs_of(&net.terminals());
    let i = sys.dofs_of(&interior);
    let scale = linalg::max_abs(&sys.stiffness);
    let (mut stiff_res, mut coup_res) = (T::zero(), T::zero());
    if basis.ncols() > 0 && scale > T::zero() {
        let kii = select(&sys.stiffness, &i, &i);
        let kbi = select(&sys.stiffness, &b, &i);
        for j in 0..basis.ncols() {
            let v = basis.column(j);
            stiff_res = stiff_res.max((&kii * v).norm() / scale);
            coup_res = coup_res.max((&kbi * v).norm() / scale);
        }
    }
    Ok(FloppyModes {
        interior,
        basis,
        tolerance: tol.pinv_rcond,
        stiffness_residual: stiff_res,
        coupling_residual: coup_res,
    })
}

/// `|(I − A_II A_II†) A_IB| / |A_IB|`: how far the coupling block leaves the
/// range of `A_II` (zero in exact arithmetic). Computed as `|N Nᵀ A_IB|`
/// with `N` an orthonormal nullspace basis of `A_II`.
pub fn range_containment_residual<T: Scalar>(net: &Network<T>) -> Result<T> {
    let tol = T::tolerances();
    let sys = assemble(net)?;
    let b = sys.dofs_of(&net.terminals());
    let i = sys.dofs_of(&net.interior());
    if i.is_empty() {
        return Ok(T::zero());
    }
    let kii = select(&sys.stiffness, &i, &i);
    let kib = select(&sys.stiffness, &i, &b);
    let norm = kib.norm();
    if norm == T::zero() {
        return Ok(T::zero());
    }
    // Range of the symmetric A_II is the complement of its nullspace.
    let null = linalg::nullspace(&kii, tol.pinv_rcond);
    let resid = &null * (null.transpose() * &kib);
    Ok(resid.norm() / norm)
}

/// One interior component after elimination of its massless nodes.
struct MassiveBlock<T: Scalar> {
    /// `K̃_BJ`
    kbj: DMatrix<T>,
    /// `K̃_JJ`
    kjj: DMatrix<T>,
    /// Diagonal of `M_JJ`.
    mjj: DVector<T>,
}

/// `K̃_BB`, `M_BB` and the massive blocks of a network.
struct Condensed<T: Scalar> {
    /// Largest stiffness entry of the full network, the reference for
    /// floppy and coupling thresholds.
    kref: T,
    kbb: DMatrix<T>,
    mbb: DVector<T>,
    blocks: Vec<MassiveBlock<T>>,
}

fn condense<T: Scalar>(net: &Network<T>, tol: &Tolerances) -> Result<Condensed<T>> {
    let sys = assemble(net)?;
    let nodes = net.nodes();
    let b = sys.dofs_of(&net.terminals());
    let mbb = DVector::from_iterator(b.len(), b.iter().map(|&i| sys.mass[i]));
    // Massless interior nodes are eliminated statically; the terminals and
    // the massive interior nodes of every component are kept.
    let mut keep = b.clone();
    let mut massless = Vec::new();
    let mut massive = Vec::new();
    for comp in interior_components(net) {
        let (jn, ln): (Vec<usize>, Vec<usize>) =
            comp.iter().partition(|&&i| nodes[i].mass > T::zero());
        let j = sys.dofs_of(&jn);
        let at: Vec<usize> = (keep.len()..keep.len() + j.len()).collect();
        keep.extend(&j);
        if !ln.is_empty() {
            massless.push(sys.dofs_of(&ln));
        }
        if !j.is_empty() {
            massive.push((j, at));
        }
    }
    let reduced = linalg::schur_from_factor(&sys.compatibility(), &keep, &massless, tol.pinv_rcond);
    let local_b: Vec<usize> = (0..b.len()).collect();
    let kbb = select(&reduced, &local_b, &local_b);
    let blocks = massive
        .into_iter()
        .map(|(j, at)| MassiveBlock {
            kbj: select(&reduced, &local_b, &at),
            kjj: select(&reduced, &at, &at),
            mjj: DVector::from_iterator(j.len(), j.iter().map(|&i| sys.mass[i])),
        })
        .collect();
    let kref = linalg::max_abs(&sys.stiffness);
    Ok(Condensed {
        kref,
        kbb: linalg::strip_small(&kbb, linalg::roundoff_floor(kref, sys.stiffness.nrows())),
        mbb,
        blocks,
    })
}

/// Terminal-coupled modes of one massive block: `(ω², c̃)` pairs. Modes
/// below `rcond` times the larger of the block's top eigenvalue and
/// `kref / m_min` count as floppy.
fn coupled_modes<T: Scalar>(block: &MassiveBlock<T>, kref: T, tol: &Tolerances) -> Vec<(T, DVector<T>)> {
    let inv_sqrt = block.mjj.map(|m| T::one() / m.sqrt());
    let c = DMatrix::from_fn(block.kjj.nrows(), block.kjj.ncols(), |r, q| {
        block.kjj[(r, q)] * inv_sqrt[r] * inv_sqrt[q]
    });
    let (vals, vecs) = sym_eigen(&c);
    let lmax = vals.iter().fold(T::zero(), |a, v| a.max(*v));
    if lmax <= T::zero() {
        return Vec::new();
    }
    let kscale = kref.max(linalg::max_abs(&block.kjj)).max(linalg::max_abs(&block.kbj));
    let soft = inv_sqrt.iter().fold(T::zero(), |a, v| a.max(*v * *v));
    let floor = lmax.max(kscale * soft) * lit::<T>(tol.pinv_rcond);
    let mut out = Vec::new();
    for (k, &lambda) in vals.iter().enumerate() {
        if lambda <= floor {
            continue;
        }
        let scaled = vecs.column(k).component_mul(&inv_sqrt);
        let ct = &block.kbj * scaled;
        if ct.norm_squared() <= lit::<T>(COUPLING) * lambda * kscale {
            continue;
        }
        out.push((lambda, ct));
    }
    out
}

/// Dynamic response `W(ω)` by direct elimination of the interior.
pub fn dynamic_response_at<T: Scalar>(net: &Network<T>, omega: T) -> Result<DMatrix<T>> {
    dynamic_response_at_with(net, omega, &T::tolerances())
}

pub fn dynamic_response_at_with<T: Scalar>(
    net: &Network<T>,
    omega: T,
    tol: &Tolerances,
) -> Result<DMatrix<T>> {
    let cond = condense(net, tol)?;
    let w2 = omega * omega;
    let modes: Vec<Vec<(T, DVector<T>)>> =
        cond.blocks.iter().map(|b| coupled_modes(b, cond.kref, tol)).collect();
    let max_res = modes
        .iter()
        .flatten()
        .fold(T::one(), |a, (l, _)| a.max(*l));
    let guard = max_res * lit::<T>(tol.resonance_guard);
    for (l, _) in modes.iter().flatten() {
        if (w2 - *l).abs() < guard {
            return Err(Error::ResonanceProximity {
                omega_sq: to_f64(w2),
                resonance: to_f64(*l),
            });
        }
    }
    let mut w = &cond.kbb - DMatrix::from_diagonal(&cond.mbb) * w2;
    for block in &cond.blocks {
        let shifted = &block.kjj - DMatrix::from_diagonal(&block.mjj) * w2;
        w -= &block.kbj * pinv(&shifted, tol.pinv_rcond) * block.kbj.transpose();
    }
    Ok(symmetrize(&w))
}

/// Explicit modal form `A − ω² M + Σ C_i / (ω² − ω_i²)` of a network.
pub fn extract_modal<T: Scalar>(net: &Network<T>) -> Result<ModalResponse<T>> {
    extract_modal_with(net, &T::tolerances())
}

pub fn extract_modal_with<T: Scalar>(
    net: &Network<T>,
    tol: &Tolerances,
) -> Result<ModalResponse<T>> {
    let cond = condense(net, tol)?;
    let mut modes: Vec<(T, DVector<T>)> = cond
        .blocks
        .iter()
        .flat_map(|b| coupled_modes(b, cond.kref, tol))
        .collect();
    modes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let nb = cond.kbb.nrows();
    let mut terms: Vec<ModalTerm<T>> = Vec::new();
    let mut group: Vec<(T, DVector<T>)> = Vec::new();
    let flush = |group: &mut Vec<(T, DVector<T>)>, terms: &mut Vec<ModalTerm<T>>| {
        if group.is_empty() {
            return;
        }
        let count = lit::<T>(group.len() as f64);
        let mean = group.iter().fold(T::zero(), |a, (l, _)| a + *l) / count;
        let mut residue = DMatrix::zeros(nb, nb);
        for (_, c) in group.iter() {
            residue += c * c.transpose();
        }
        terms.push(ModalTerm {
            omega_sq: mean,
            residue: symmetrize(&residue),
        });
        group.clear();
    };
    for (lambda, ct) in modes {
        if let Some((first, _)) = group.first() {
            if (lambda - *first).abs() > lit::<T>(tol.cluster) * first.max(T::one()) {
                flush(&mut group, &mut terms);
            }
        }
        group.push((lambda, ct));
    }
    flush(&mut group, &mut terms);
    let masses = net.terminal_masses();
    ModalResponse::new(net.terminal_positions(), cond.kbb, masses, terms)
}

/// Eigenvalues of `M_JJ^{-1/2} K̃_JJ M_JJ^{-1/2}` whose modes couple to the
/// terminals, ascending. These are the resonances `ω_i²`.
pub fn resonances<T: Scalar>(net: &Network<T>) -> Result<Vec<T>> {
    let tol = T::tolerances();
    let cond = condense(net, &tol)?;
    let mut out: Vec<T> = cond
        .blocks
        .iter()
        .flat_map(|b| coupled_modes(b, cond.kref, &tol))
        .map(|(l, _)| l)
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(k1: f64, k2: f64) -> Network<f64> {
        Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[2.0, 0.0], 0.0)
            .interior("m", &[1.0, 0.0], 0.0)
            .spring("a", "m", k1)
            .spring("m", "b", k2)
            .build()
            .unwrap()
    }

    fn single_mass(k: f64, m: f64) -> Network<f64> {
        Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .interior("m", &[1.0, 0.0], m)
            .spring("a", "m", k)
            .build()
            .unwrap()
    }

    #[test]
    fn no_interior_gives_stiffness() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[1.0, 0.0], 0.0)
            .spring("a", "b", 3.0)
            .build()
            .unwrap();
        let w = static_response(&net).unwrap().matrix;
        assert!((w - assemble(&net).unwrap().stiffness).norm() < 1e-14);
    }

    #[test]
    fn series_chain_halves_stiffness() {
        let w = static_response(&chain(1.0, 1.0)).unwrap().matrix;
        let f = DVector::from_column_slice(&[-1.0, 0.0, 1.0, 0.0]);
        let expected = &f * f.transpose() * 0.5;
        assert!((w - expected).norm() < 1e-14);
    }

    #[test]
    fn dangling_spring_contributes_nothing() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .interior("m", &[1.0, 0.5], 0.0)
            .spring("a", "m", 4.0)
            .build()
            .unwrap();
        assert!(static_response(&net).unwrap().matrix.norm() < 1e-14);
    }

    #[test]
    fn collinear_chain_floppy_mode() {
        let modes = floppy_modes(&chain(1.0, 1.0)).unwrap();
        assert_eq!(modes.len(), 1);
        let v = modes.basis.column(0);
        assert!(v[0].abs() < 1e-14 && (v[1].abs() - 1.0).abs() < 1e-14);
        assert!(modes.coupling_residual < 1e-14);
    }

    #[test]
    fn triangulated_interior_is_rigid() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[2.0, 0.0], 0.0)
            .interior("m", &[1.0, 1.0], 0.0)
            .spring("a", "m", 1.0)
            .spring("b", "m", 1.0)
            .build()
            .unwrap();
        assert!(floppy_modes(&net).unwrap().is_empty());
    }

    #[test]
    fn isolated_interior_node_has_d_modes() {
        let net = Network::builder(3)
            .terminal("a", &[0.0, 0.0, 0.0], 0.0)
            .interior("m", &[1.0, 1.0, 1.0], 0.0)
            .build()
            .unwrap();
        assert_eq!(floppy_modes(&net).unwrap().len(), 3);
    }

    #[test]
    fn single_mass_chain_dynamic() {
        let net = single_mass(1.0, 1.0);
        let w = dynamic_response_at(&net, 2f64.sqrt()).unwrap();
        assert!((w[(0, 0)] - 2.0).abs() < 1e-13);
        assert!(matches!(
            dynamic_response_at(&net, 1.0),
            Err(Error::ResonanceProximity { .. })
        ));
    }

    #[test]
    fn zero_frequency_matches_static() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.5)
            .terminal("b", &[2.0, 0.3], 0.0)
            .interior("m", &[1.0, 1.0], 2.0)
            .interior("l", &[1.2, -0.4], 0.0)
            .spring("a", "m", 1.0)
            .spring("b", "m", 1.5)
            .spring("m", "l", 0.7)
            .spring("a", "l", 0.2)
            .build()
            .unwrap();
        let w0 = dynamic_response_at(&net, 0.0).unwrap();
        let ws = static_response(&net).unwrap().matrix;
        assert!((w0 - ws).norm() < 1e-12);
    }

    #[test]
    fn single_mass_chain_modal_terms() {
        let modal = extract_modal(&single_mass(1.0, 1.0)).unwrap();
        assert_eq!(modal.terms.len(), 1);
        assert!((modal.terms[0].omega_sq - 1.0).abs() < 1e-14);
        assert!((modal.terms[0].residue[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((modal.a[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn static_network_has_no_terms() {
        let modal = extract_modal(&chain(1.0, 2.0)).unwrap();
        assert!(modal.terms.is_empty());
        let ws = static_response(&chain(1.0, 2.0)).unwrap().matrix;
        assert!((modal.a - ws).norm() < 1e-14);
    }

    #[test]
    fn identical_decoupled_chains_cluster() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[0.0, 3.0], 0.0)
            .interior("m", &[1.0, 0.0], 1.0)
            .interior("n", &[1.0, 3.0], 1.0)
            .spring("a", "m", 1.0)
            .spring("b", "n", 1.0)
            .build()
            .unwrap();
        let modal = extract_modal(&net).unwrap();
        assert_eq!(modal.terms.len(), 1);
        assert_eq!(linalg::rank(&modal.terms[0].residue, 1e-9), 2);
    }
}
