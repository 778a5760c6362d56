//! Robustness: response drift under small stiffness perturbations, and
//! elimination of floppy modes by weak complete-graph springs and anchors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::assembly::assemble;
use crate::linalg::{norm2, select};
use crate::model::{Network, Node, Spring};
use crate::reduce::{dynamic_response_at, floppy_modes, floppy_modes_with, resonances, static_response, FloppyModes};
use crate::scalar::{lit, to_f64, Scalar};
use crate::synth2d::PlacementPolicy;

/// Relative stiffness changes `k → k + ε l` and new springs `ε l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<T: Scalar> {
    /// Spring index (in `Network::springs`) to relative factor `l`.
    pub scaled: BTreeMap<usize, T>,
    /// Node pair to factor `l > 0`.
    pub added: Vec<((usize, usize), T)>,
    pub epsilon: T,
}

impl<T: Scalar> Perturbation<T> {
    pub fn new(epsilon: T) -> Self {
        Perturbation {
            scaled: BTreeMap::new(),
            added: Vec::new(),
            epsilon,
        }
    }

    /// Scales every spring by `k → k (1 + ε)`.
    pub fn uniform(net: &Network<T>, epsilon: T) -> Self {
        let mut p = Perturbation::new(epsilon);
        for (s, spring) in net.springs().iter().enumerate() {
            p.scaled.insert(s, spring.stiffness);
        }
        p
    }

    /// Random factors on about half the springs (`l` uniform in `[−k, k]`)
    /// plus `added` new springs with `l` in `[0.1, 1]` between random pairs.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, net: &Network<T>, added: usize, epsilon: T) -> Self {
        let mut p = Perturbation::new(epsilon);
        for (s, spring) in net.springs().iter().enumerate() {
            if rng.gen::<bool>() {
                p.scaled.insert(s, spring.stiffness * lit(rng.gen_range(-1.0..1.0)));
            }
        }
        let n = net.nodes().len();
        if n >= 2 {
            for _ in 0..added {
                let a = rng.gen_range(0..n);
                let mut b = rng.gen_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                p.added.push(((a, b), lit(rng.gen_range(0.1..1.0))));
            }
        }
        p
    }

    pub fn with_epsilon(&self, epsilon: T) -> Self {
        Perturbation {
            epsilon,
            ..self.clone()
        }
    }
}

/// The perturbed network: stiffness `k + ε l` on scaled springs and `ε l`
/// on added ones. The node set is unchanged.
pub fn apply_perturbation<T: Scalar>(net: &Network<T>, pert: &Perturbation<T>) -> Result<Network<T>> {
    let n = net.nodes().len();
    let mut springs: Vec<Spring<T>> = net.springs().to_vec();
    for (&s, &l) in &pert.scaled {
        let spring = springs
            .get_mut(s)
            .ok_or_else(|| Error::InvalidNetwork(format!("perturbation scales missing spring {s}")))?;
        spring.stiffness += pert.epsilon * l;
        if spring.stiffness < T::zero() {
            return Err(Error::NegativeStiffness {
                spring: s,
                stiffness: to_f64(spring.stiffness),
            });
        }
    }
    for (k, &((a, b), l)) in pert.added.iter().enumerate() {
        if a >= n || b >= n || a == b {
            return Err(Error::InvalidNetwork(format!("added spring {k} has invalid ends ({a}, {b})")));
        }
        if l < T::zero() {
            return Err(Error::NegativeStiffness {
                spring: net.springs().len() + k,
                stiffness: to_f64(pert.epsilon * l),
            });
        }
        springs.push(Spring {
            ends: (a, b),
            stiffness: pert.epsilon * l,
        });
    }
    Network::new(net.dimension(), net.nodes().to_vec(), springs)
}

/// Drift `e(ε) = max_ω |W(ω; ε) − W(ω)|₂` and its log-log fit.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub epsilons: Vec<f64>,
    pub drifts: Vec<f64>,
    /// Least-squares slope of `log e` against `log ε`; `None` with fewer
    /// than two positive drifts.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Fit residuals in log space, one per point used.
    pub residuals: Vec<f64>,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, residuals)`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, Vec<f64>)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = pts.iter().map(|p| p.1 - (intercept + slope * p.0)).collect();
    Some((slope, intercept, residuals))
}

fn response_at<T: Scalar>(net: &Network<T>, omega: T) -> Result<DMatrix<T>> {
    if omega == T::zero() {
        Ok(static_response(net)?.matrix)
    } else {
        dynamic_response_at(net, omega)
    }
}

/// Measures the response drift of `pert` scaled to each `ε` at the given
/// frequencies (`ω = 0` is the static response).
pub fn stability_experiment<T: Scalar>(
    net: &Network<T>,
    pert: &Perturbation<T>,
    eps_list: &[T],
    omegas: &[T],
) -> Result<StabilityReport> {
    let base: Vec<DMatrix<T>> = omegas.iter().map(|&w| response_at(net, w)).collect::<Result<_>>()?;
    let mut drifts = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let perturbed = apply_perturbation(net, &pert.with_epsilon(eps))?;
        let mut worst = 0.0f64;
        for (w, b) in omegas.iter().zip(&base) {
            let d = response_at(&perturbed, *w)? - b;
            worst = worst.max(to_f64(norm2(&d)));
        }
        drifts.push(worst);
    }
    let epsilons: Vec<f64> = eps_list.iter().map(|e| to_f64(*e)).collect();
    let fit = loglog_fit(&epsilons, &drifts);
    Ok(StabilityReport {
        slope: fit.as_ref().map(|f| f.0),
        intercept: fit.as_ref().map(|f| f.1),
        residuals: fit.map(|f| f.2).unwrap_or_default(),
        epsilons,
        drifts,
    })
}

/// Whether every floppy mode of the perturbed network is a floppy mode of
/// the original one.
pub fn floppy_nullspace_containment<T: Scalar>(net: &Network<T>, pert: &Perturbation<T>) -> Result<bool> {
    let before = floppy_modes(net)?;
    let after = floppy_modes(&apply_perturbation(net, pert)?)?;
    if after.is_empty() {
        return Ok(true);
    }
    if before.is_empty() {
        return Ok(false);
    }
    let proj = &before.basis * before.basis.transpose();
    let outside = &after.basis - proj * &after.basis;
    Ok(outside.norm() <= lit::<T>(1e-8) * T::from_usize(after.len()).unwrap_or_else(T::one).sqrt())
}

/// Result of [`eliminate_floppy`].
#[derive(Debug, Clone, PartialEq)]
pub struct FloppyFixReport<T: Scalar> {
    pub fixed_network: Network<T>,
    pub added_spring_constant: T,
    pub added_springs: usize,
    pub anchor_nodes: Vec<String>,
    /// Largest spectral-norm drift of the response over the probe grid.
    pub residual_drift: T,
    /// Probe frequencies used for the drift (0 is the static response).
    pub probe_omegas: Vec<f64>,
    /// Floppy modes left in the fixed network (empty on success).
    pub remaining_modes: FloppyModes<T>,
}

impl<T: Scalar> FloppyFixReport<T> {
    pub fn fixed(&self) -> bool {
        self.remaining_modes.is_empty()
    }
}

/// Affine rank of a point set (0 for a single point).
fn affine_rank<T: Scalar>(points: &[DVector<T>]) -> usize {
    if points.len() < 2 {
        return 0;
    }
    let d = points[0].len();
    let diffs = DMatrix::from_fn(d, points.len() - 1, |r, c| points[c + 1][r] - points[0][r]);
    let scale = diffs.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    if scale == T::zero() {
        return 0;
    }
    crate::linalg::rank(&(&diffs * diffs.transpose()), 1e-18)
}

fn unique_label<T: Scalar>(nodes: &[Node<T>], base: &str) -> String {
    let mut k = 0;
    loop {
        let l = format!("{base}{k}");
        if !nodes.iter().any(|n| n.label == l) {
            return l;
        }
        k += 1;
    }
}

/// Anchor positions making the terminal set affinely spanning, placed at
/// distance `eps_hull / 2` off the terminal line (d = 2) or plane (d = 3).
fn anchor_positions<T: Scalar>(net: &Network<T>, policy: &PlacementPolicy<T>) -> Result<Vec<DVector<T>>> {
    let d = net.dimension();
    let terminals = net.terminal_positions();
    let rank = affine_rank(&terminals);
    if rank >= d {
        return Ok(Vec::new());
    }
    if rank == 0 || (d == 3 && rank == 1) {
        return Err(Error::UnfixableFloppy(format!(
            "terminals span an affine subspace of dimension {rank} in {d}D; rotations about it cannot be removed"
        )));
    }
    let h = to_f64(policy.eps_hull) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
    let pts: Vec<Vec<f64>> = terminals.iter().map(|p| p.iter().map(|v| to_f64(*v)).collect()).collect();
    let others: Vec<Vec<f64>> = net.nodes().iter().map(|n| n.position.iter().map(|v| to_f64(*v)).collect()).collect();
    let min_sep = to_f64(policy.min_separation);
    let far_enough = |p: &[f64]| {
        others.iter().all(|q| {
            let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
            d2.sqrt() >= min_sep
        })
    };
    for _ in 0..policy.max_retries {
        let candidate: Vec<Vec<f64>> = if d == 2 {
            // Extreme terminals along the line, unit normal.
            let dir = {
                let mut best = (0.0, 0, 0);
                for i in 0..pts.len() {
                    for j in (i + 1)..pts.len() {
                        let l = ((pts[j][0] - pts[i][0]).powi(2) + (pts[j][1] - pts[i][1]).powi(2)).sqrt();
                        if l > best.0 {
                            best = (l, i, j);
                        }
                    }
                }
                best
            };
            let (a, b) = (&pts[dir.1], &pts[dir.2]);
            let n = [-(b[1] - a[1]) / dir.0, (b[0] - a[0]) / dir.0];
            [1.0, -1.0]
                .iter()
                .map(|side| {
                    let t: f64 = rng.gen();
                    vec![
                        a[0] + t * (b[0] - a[0]) + side * h * n[0],
                        a[1] + t * (b[1] - a[1]) + side * h * n[1],
                    ]
                })
                .collect()
        } else {
            // Plane normal from the two most independent offsets.
            let o = &pts[0];
            let mut best = (0.0, [0.0; 3]);
            for i in 1..pts.len() {
                for j in (i + 1)..pts.len() {
                    let u: Vec<f64> = (0..3).map(|k| pts[i][k] - o[k]).collect();
                    let v: Vec<f64> = (0..3).map(|k| pts[j][k] - o[k]).collect();
                    let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                    let l = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                    if l > best.0 {
                        best = (l, [c[0] / l, c[1] / l, c[2] / l]);
                    }
                }
            }
            let w: Vec<f64> = (0..pts.len()).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            let base: Vec<f64> = (0..3)
                .map(|k| pts.iter().zip(&w).map(|(p, wi)| p[k] * wi).sum::<f64>() / total)
                .collect();
            vec![(0..3).map(|k| base[k] + h * best.1[k]).collect()]
        };
        if candidate.iter().all(|p| far_enough(p)) {
            return Ok(candidate
                .into_iter()
                .map(|p| DVector::from_iterator(d, p.into_iter().map(lit::<T>)))
                .collect());
        }
    }
    Err(Error::DegeneratePlacement("no admissible anchor position".into()))
}

/// Probe grid: 16 log-spaced frequencies over `[0.1, 10]·√ω_i²` of the
/// original network's resonances (or `[0.1, 10]`), plus `ω = 0`.
fn drift_grid(resonances: &[f64]) -> Vec<f64> {
    let (lo, hi) = match (resonances.first(), resonances.last()) {
        (Some(a), Some(b)) => (0.1 * a.sqrt(), 10.0 * b.sqrt()),
        _ => (0.1, 10.0),
    };
    let mut grid = vec![0.0];
    grid.extend((0..16).map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / 15.0).exp()));
    grid
}

/// Adds springs of stiffness `eps_k` between every unconnected node pair
/// (plus anchors when the terminals do not span the space) and reports the
/// remaining floppy modes and the response drift.
pub fn eliminate_floppy<T: Scalar>(net: &Network<T>, eps_k: T, policy: &PlacementPolicy<T>) -> Result<FloppyFixReport<T>> {
    if !(eps_k > T::zero() && eps_k.is_finite()) {
        return Err(Error::InvalidNetwork(format!("eps_k must be positive, got {eps_k}")));
    }
    policy.validate()?;
    let anchors = anchor_positions(net, policy)?;
    let mut nodes = net.nodes().to_vec();
    let mut anchor_labels = Vec::new();
    for p in anchors {
        let label = unique_label(&nodes, "anchor");
        nodes.push(Node::interior(label.clone(), p.as_slice(), T::zero()));
        anchor_labels.push(label);
    }
    let mut springs = net.springs().to_vec();
    let connected: std::collections::HashSet<(usize, usize)> = springs.iter().map(|s| s.ends).collect();
    let mut added = 0;
    for a in 0..nodes.len() {
        for b in (a + 1)..nodes.len() {
            if !connected.contains(&(a, b)) {
                springs.push(Spring {
                    ends: (a, b),
                    stiffness: eps_k,
                });
                added += 1;
            }
        }
    }
    let fixed = Network::new(net.dimension(), nodes, springs)?;
    // A mode the fill stiffens by even a small fraction of `eps_k` is fixed;
    // resolve the interior spectrum that finely, but not into roundoff.
    let sys = assemble(&fixed)?;
    let inner = sys.dofs_of(&fixed.interior());
    let top = to_f64(norm2(&select(&sys.stiffness, &inner, &inner)));
    let mut tol = T::tolerances();
    if top > 0.0 {
        let floor = 64.0 * to_f64(T::default_epsilon());
        tol.pinv_rcond = (1e-5 * to_f64(eps_k) / top).max(floor).min(tol.pinv_rcond);
    }
    let remaining = floppy_modes_with(&fixed, &tol)?;

    let original: Vec<f64> = resonances(net)?.iter().map(|r| to_f64(*r)).collect();
    let modified: Vec<f64> = resonances(&fixed)?.iter().map(|r| to_f64(*r)).collect();
    let near = |w2: f64| original.iter().chain(&modified).any(|r| (w2 - r).abs() <= 0.05 * r);
    let mut drift = T::zero();
    let mut used = Vec::new();
    for omega in drift_grid(&original) {
        if omega > 0.0 && near(omega * omega) {
            continue;
        }
        let w: T = lit(omega);
        let (a, b) = match (response_at(net, w), response_at(&fixed, w)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::ResonanceProximity { .. }), _) | (_, Err(Error::ResonanceProximity { .. })) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        drift = drift.max(norm2(&(b - a)));
        used.push(omega);
    }
    Ok(FloppyFixReport {
        fixed_network: fixed,
        added_spring_constant: eps_k,
        added_springs: added,
        anchor_nodes: anchor_labels,
        residual_drift: drift,
        probe_omegas: used,
        remaining_modes: remaining,
    })
}

/// Interior displacement field of a floppy mode, one vector per interior
/// node (in `FloppyModes::interior` order).
pub fn mode_displacements<T: Scalar>(modes: &FloppyModes<T>, k: usize, dimension: usize) -> Vec<DVector<T>> {
    let col = modes.basis.column(k);
    (0..modes.interior.len())
        .map(|i| DVector::from_iterator(dimension, (0..dimension).map(|q| col[i * dimension + q])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;

    fn chain() -> Network<f64> {
        Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[2.0, 0.0], 0.0)
            .interior("m", &[1.0, 0.0], 0.0)
            .spring("a", "m", 1.0)
            .spring("m", "b", 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let net = chain();
        let pert = Perturbation::uniform(&net, 0.0);
        assert_eq!(apply_perturbation(&net, &pert).unwrap(), net);
    }

    #[test]
    fn scaling_one_spring() {
        let net = chain();
        let mut pert = Perturbation::new(0.5);
        pert.scaled.insert(0, 1.0);
        let p = apply_perturbation(&net, &pert).unwrap();
        assert!((p.springs()[0].stiffness - 1.5).abs() < 1e-15);
    }

    #[test]
    fn added_spring_shows_in_stiffness() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[1.0, 0.0], 0.0)
            .terminal("c", &[0.0, 1.0], 0.0)
            .spring("a", "b", 1.0)
            .build()
            .unwrap();
        let mut pert = Perturbation::<f64>::new(1e-6);
        pert.added.push(((0, 2), 1.0));
        let diff: nalgebra::DMatrix<f64> = assemble(&apply_perturbation(&net, &pert).unwrap()).unwrap().stiffness
            - assemble(&net).unwrap().stiffness;
        assert!((diff[(1, 1)] - 1e-6).abs() < 1e-18);
        assert!((diff[(1, 5)] + 1e-6).abs() < 1e-18);
        assert!(diff[(0, 0)].abs() < 1e-18);
    }

    #[test]
    fn negative_result_rejected() {
        let net = chain();
        let mut pert = Perturbation::new(1.0);
        pert.scaled.insert(0, -2.0);
        assert!(matches!(apply_perturbation(&net, &pert), Err(Error::NegativeStiffness { .. })));
    }

    #[test]
    fn uniform_scaling_slope_is_one() {
        let net = chain();
        let pert = Perturbation::uniform(&net, 1.0);
        let eps = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
        let report = stability_experiment(&net, &pert, &eps, &[0.0]).unwrap();
        assert!((report.slope.unwrap() - 1.0).abs() < 0.05);
        let single = stability_experiment(&net, &pert, &[1e-3], &[0.0]).unwrap();
        assert!(single.slope.is_none());
        assert_eq!(single.drifts.len(), 1);
    }

    #[test]
    fn spring_on_floppy_mode_leaves_response() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[2.0, 0.0], 0.0)
            .terminal("c", &[1.0, 1.0], 0.0)
            .interior("m", &[1.0, 0.0], 0.0)
            .spring("a", "m", 1.0)
            .spring("m", "b", 1.0)
            .build()
            .unwrap();
        let mut pert = Perturbation::new(1.0);
        pert.added.push(((2, 3), 1.0));
        assert!(floppy_nullspace_containment(&net, &pert.with_epsilon(1e-3)).unwrap());
        let eps = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
        let report = stability_experiment(&net, &pert, &eps, &[0.0]).unwrap();
        // The new spring only loads the floppy vertical mode of `m`.
        assert!(report.drifts.iter().all(|d| *d < 1e-12), "{:?}", report);

        let mut direct = Perturbation::new(1.0);
        direct.added.push(((0, 2), 1.0));
        let report = stability_experiment(&net, &direct, &eps, &[0.0]).unwrap();
        assert!((report.slope.unwrap() - 1.0).abs() < 0.05, "{:?}", report);
    }

    #[test]
    fn containment_examples() {
        let net = chain();
        let mut fill = Perturbation::new(1e-3);
        fill.added.push(((0, 1), 1.0));
        assert!(floppy_nullspace_containment(&net, &fill).unwrap());
        assert!(floppy_nullspace_containment(&net, &Perturbation::uniform(&net, 1e-3)).unwrap());
    }

    #[test]
    fn chain_is_fixed_by_anchors() {
        let report = eliminate_floppy(&chain(), 1e-4, &PlacementPolicy::default()).unwrap();
        assert!(report.fixed());
        assert_eq!(report.anchor_nodes.len(), 2);
        assert!(report.residual_drift < 1e-2);
        let finer = eliminate_floppy(&chain(), 1e-5, &PlacementPolicy::default()).unwrap();
        assert!(finer.residual_drift < report.residual_drift);
    }

    #[test]
    fn rigid_network_needs_no_anchors() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[2.0, 0.0], 0.0)
            .terminal("c", &[1.0, 2.0], 0.0)
            .interior("m", &[1.0, 1.0], 0.0)
            .spring("a", "m", 1.0)
            .spring("b", "m", 1.0)
            .build()
            .unwrap();
        let coarse = eliminate_floppy(&net, 1e-3, &PlacementPolicy::default()).unwrap();
        let fine = eliminate_floppy(&net, 1e-6, &PlacementPolicy::default()).unwrap();
        assert!(coarse.anchor_nodes.is_empty() && coarse.fixed());
        assert!(fine.residual_drift < coarse.residual_drift);
    }

    #[test]
    fn collinear_terminals_in_3d_are_unfixable() {
        let net = Network::builder(3)
            .terminal("a", &[0.0, 0.0, 0.0], 0.0)
            .terminal("b", &[1.0, 0.0, 0.0], 0.0)
            .interior("m", &[0.5, 0.5, 0.0], 0.0)
            .spring("a", "m", 1.0)
            .build()
            .unwrap();
        assert!(matches!(
            eliminate_floppy(&net, 1e-3, &PlacementPolicy::default()),
            Err(Error::UnfixableFloppy(_))
        ));
    }

    #[test]
    fn coplanar_terminals_in_3d_get_one_anchor() {
        let net = Network::builder(3)
            .terminal("a", &[0.0, 0.0, 0.0], 0.0)
            .terminal("b", &[1.0, 0.0, 0.0], 0.0)
            .terminal("c", &[0.0, 1.0, 0.0], 0.0)
            .interior("m", &[0.3, 0.3, 0.0], 0.0)
            .spring("a", "m", 1.0)
            .build()
            .unwrap();
        let report = eliminate_floppy(&net, 1e-3, &PlacementPolicy::default()).unwrap();
        assert_eq!(report.anchor_nodes.len(), 1);
        assert!(report.fixed());
    }
}
