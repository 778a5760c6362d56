//! Dynamic synthesis: resonance gadgets with response
//! `f fᵀ ω² / (ω² − ω0²)` and networks realizing full modal responses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, sub, P2};
use crate::model::{evaluate_modal_with, ModalResponse, Network};
use crate::realizability::{split_modal, split_rank_one};
use crate::reduce::{dynamic_response_at_with, static_response_with};
use crate::scalar::{lit, to_f64, Scalar, Tolerances};
use crate::synth2d::{rank_one_piece, with_retries, Draft, PlacementPolicy, Placer, Provenance, Springs, SynthesisReport};

/// Placements whose torque lever `|rhs| / (|Δ| |f|)` exceeds this are
/// re-drawn.
const MAX_LEVER: f64 = 1e8;

/// A network with one resonance at `omega0_sq` and response
/// `f fᵀ ω² / (ω² − ω0²)` at its terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonantGadget<T: Scalar> {
    pub network: Network<T>,
    /// Node indices of the two auxiliary masses.
    pub auxiliary: [usize; 2],
    /// Forces `(f_{n+1}, f_{n+2})` completing `f` to a balanced system.
    pub auxiliary_forces: [DVector<T>; 2],
    /// Mass on each auxiliary node, `|a|² / ω0²`.
    pub mass: T,
    pub omega0_sq: T,
}

fn norm(a: P2) -> f64 {
    dot(a, a).sqrt()
}

/// Places the two auxiliary nodes, balances `forces` with them and builds
/// the static rank-one network on terminals plus auxiliaries. Returns the
/// springs, auxiliary node indices and forces; masses are set in the draft.
pub(crate) fn resonator_piece<T: Scalar>(
    draft: &mut Draft<T>,
    placer: &mut Placer,
    ports: &[usize],
    forces: &[P2],
    omega0_sq: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, [usize; 2], [P2; 2])> {
    let pts: Vec<P2> = ports.iter().map(|&p| draft.point(p)).collect();
    let total = forces.iter().fold([0.0, 0.0], |a, f| [a[0] + f[0], a[1] + f[1]]);
    let fsum: f64 = forces.iter().map(|f| norm(*f)).sum();
    let fnorm = forces.iter().map(|f| dot(*f, *f)).sum::<f64>().sqrt();
    with_retries(draft, placer, "resonance gadget", |draft, placer, _| {
        let xa = placer.sample(&draft.points(), placer.eps / 2.0, |_| true)?;
        let ia = draft.add(xa, Provenance::Resonator);
        let xb = placer.sample(&draft.points(), placer.eps / 2.0, |_| true)?;
        let ib = draft.add(xb, Provenance::Resonator);
        let delta = sub(xb, xa);
        let rhs = -pts
            .iter()
            .zip(forces)
            .map(|(x, f)| cross(sub(*x, xa), *f))
            .sum::<f64>();
        if rhs.abs() > MAX_LEVER * norm(delta) * fsum {
            return Err(Error::DegeneratePlacement("auxiliary nodes too close for the torque balance".into()));
        }
        let n2 = dot(delta, delta);
        // The part along `delta` exerts no torque about `xa`; it keeps the
        // auxiliary forces at the scale of `f` when `f` is already balanced.
        let s = fnorm / n2.sqrt();
        let gb = [-rhs * delta[1] / n2 + delta[0] * s, rhs * delta[0] / n2 + delta[1] * s];
        let ga = [-total[0] - gb[0], -total[1] - gb[1]];
        let mut all_ports = ports.to_vec();
        all_ports.extend([ia, ib]);
        let mut all_forces = forces.to_vec();
        all_forces.extend([ga, gb]);
        let (springs, _) = rank_one_piece(draft, placer, &all_ports, &all_forces, T::one(), tol)?;
        let mass = lit::<T>(dot(ga, ga) + dot(gb, gb)) / omega0_sq;
        draft.masses[ia] = mass;
        draft.masses[ib] = mass;
        Ok((springs, [ia, ib], [ga, gb]))
    })
}

fn check_planar<T: Scalar>(positions: &[DVector<T>]) -> Result<()> {
    if positions.iter().any(|p| p.len() != 2) {
        return Err(Error::NotSupported("synthesis is implemented for planar networks only".into()));
    }
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            if positions[i] == positions[j] {
                return Err(Error::DegenerateTarget(format!("terminals {i} and {j} coincide")));
            }
        }
    }
    Ok(())
}

fn forces_of<T: Scalar>(f: &DVector<T>, n: usize) -> Vec<P2> {
    (0..n).map(|i| [to_f64(f[2 * i]), to_f64(f[2 * i + 1])]).collect()
}

/// Resonance gadget for an arbitrary (not necessarily balanced) force
/// vector `f` at `positions`.
pub fn make_resonant_gadget<T: Scalar>(
    positions: &[DVector<T>],
    f: &DVector<T>,
    omega0_sq: T,
    policy: &PlacementPolicy<T>,
) -> Result<ResonantGadget<T>> {
    check_planar(positions)?;
    let n = positions.len();
    if f.len() != 2 * n {
        return Err(Error::DimensionMismatch(format!("force vector of length {} for {n} terminals", f.len())));
    }
    if !(omega0_sq > T::zero() && omega0_sq.is_finite()) {
        return Err(Error::DegenerateTarget(format!("resonance {omega0_sq} must be positive and finite")));
    }
    if f.iter().all(|v| *v == T::zero()) {
        return Err(Error::DegenerateTarget("resonance gadget needs a nonzero force".into()));
    }
    let tol = T::tolerances();
    let mut draft = Draft::new(positions, &vec![T::zero(); n]);
    let mut placer = Placer::new(policy, positions)?;
    let ports: Vec<usize> = (0..n).collect();
    let (springs, aux, forces) = resonator_piece(&mut draft, &mut placer, &ports, &forces_of(f, n), omega0_sq, &tol)?;
    let mass = draft.masses[aux[0]];
    let to_vec = |a: P2| DVector::from_column_slice(&[lit::<T>(a[0]), lit::<T>(a[1])]);
    Ok(ResonantGadget {
        network: draft.network(&springs)?,
        auxiliary: aux,
        auxiliary_forces: [to_vec(forces[0]), to_vec(forces[1])],
        mass,
        omega0_sq,
    })
}

/// Frequencies `ω` (not squared) for probing a response with the given
/// resonances `ω_i²`: log-spaced in `ω²` over `[0.1 min, 10 max]` (or
/// `[0.01, 100]` without resonances), keeping away from every resonance by
/// at least a tenth of the smallest spacing and outside the evaluation guard.
pub fn probe_frequencies(resonances: &[f64], count: usize) -> Vec<f64> {
    let mut r: Vec<f64> = resonances.iter().copied().filter(|x| *x > 0.0).collect();
    r.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let (lo, hi) = match (r.first(), r.last()) {
        (Some(a), Some(b)) => (0.1 * a, 10.0 * b),
        _ => (0.01, 100.0),
    };
    let mut spacing = r.first().copied().unwrap_or(1.0);
    for w in r.windows(2) {
        if w[1] > w[0] {
            spacing = spacing.min(w[1] - w[0]);
        }
    }
    // Never closer than ten resonance guards.
    let guard = 1e-7 * r.last().copied().unwrap_or(1.0).max(1.0);
    let gap = (0.1 * spacing).max(guard);
    let fine = 64 * count.max(1);
    let candidates: Vec<f64> = (0..fine)
        .map(|k| {
            let t = (k as f64 + 0.5) / fine as f64;
            (lo.ln() + t * (hi.ln() - lo.ln())).exp()
        })
        .filter(|w2| r.iter().all(|x| (w2 - x).abs() >= gap))
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|k| {
            let idx = ((k as f64 + 0.5) * candidates.len() as f64 / count as f64) as usize;
            candidates[idx.min(candidates.len() - 1)].sqrt()
        })
        .collect()
}

/// Largest relative deviation `|W_net(ω) − W_target(ω)| / |W_target(ω)|`
/// over probe frequencies of the target.
pub fn modal_roundtrip_error<T: Scalar>(target: &ModalResponse<T>, net: &Network<T>, count: usize, tol: &Tolerances) -> Result<T> {
    let resonances: Vec<f64> = target.terms.iter().map(|t| to_f64(t.omega_sq)).collect();
    let mut worst = T::zero();
    let mut check = |want: DMatrix<T>, got: DMatrix<T>, floor: T| {
        let diff = (&got - &want).norm();
        let n = want.norm().max(floor);
        let e = if n > T::zero() { diff / n } else { diff };
        worst = worst.max(e);
    };
    // W(0) may cancel to roundoff; judge it on the scale of its terms.
    let w0 = static_response_with(net, tol)?.matrix;
    check(target.static_part(), w0, target.reference_scale());
    for omega in probe_frequencies(&resonances, count) {
        let omega: T = lit(omega);
        check(evaluate_modal_with(target, omega, tol)?, dynamic_response_at_with(net, omega, tol)?, T::zero());
    }
    Ok(worst)
}

/// Network realizing a validated planar modal response: the static part
/// by rank-one gadgets, each resonant piece by a resonance gadget, and the
/// terminal masses read off `M`.
pub fn synth_dynamic<T: Scalar>(resp: &ModalResponse<T>, policy: &PlacementPolicy<T>) -> Result<SynthesisReport<T>> {
    let tol = T::tolerances();
    check_planar(&resp.terminal_positions)?;
    let split = split_modal(resp, &tol)?;
    let statics = split_rank_one(&split.static_part, &tol)?;
    let n = resp.terminal_positions.len();
    let mut draft = Draft::new(&resp.terminal_positions, &split.masses);
    let mut placer = Placer::new(policy, &resp.terminal_positions)?;
    let ports: Vec<usize> = (0..n).collect();
    let mut springs = Vec::new();
    let mut calibration = Vec::new();
    for piece in &statics {
        let (s, ratio) = rank_one_piece(&mut draft, &mut placer, &ports, &forces_of(&piece.force, n), piece.lambda, &tol)?;
        springs.extend(s);
        calibration.push(ratio);
    }
    for piece in &split.dynamic {
        let w0 = piece.omega0_sq.unwrap_or_else(T::one);
        let (s, _, _) = resonator_piece(&mut draft, &mut placer, &ports, &forces_of(&piece.force, n), w0, &tol)?;
        springs.extend(s);
        calibration.push(piece.lambda);
    }
    let network = draft.network(&springs)?;
    Ok(SynthesisReport {
        roundtrip_error: modal_roundtrip_error(resp, &network, 20, &tol)?,
        crossings: network.crossing_count(),
        placed: draft.placed(),
        calibration,
        network,
    })
}
