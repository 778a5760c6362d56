//! Planar synthesis: networks realizing balanced rank-one static targets,
//! and by superposition any realizable static response.
//!
//! Every construction starts from unit stiffnesses, solves the built piece
//! forward and rescales it so its response is exactly `λ f fᵀ`. Generic
//! choices (auxiliary points, offsets) come from a seeded generator and are
//! re-drawn when a degeneracy or verification test fails.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, convex_hull, cross, dist, dot, hull_distance, line_chord, sub, P2};
use crate::model::{check_balanced, BalancedForceSystem, Network, Node, Spring, StaticResponse};
use crate::realizability::split_rank_one;
use crate::reduce::static_response_with;
use crate::scalar::{lit, to_f64, Scalar, Tolerances};

/// Forces below this fraction of the largest one are treated as zero.
const ZERO_FORCE: f64 = 1e-9;
/// Smallest admissible sine between the two arms of a three-terminal gadget.
const MIN_SINE: f64 = 1e-3;
/// Hub sine above which a three-force split counts as well conditioned.
const GOOD_SINE: f64 = 0.25;
/// Auxiliary points kept at least this fraction of `ε/2` off terminal lines.
const LINE_CLEARANCE: f64 = 0.1;
/// Nesting limit for the three-terminal split.
const MAX_DEPTH: usize = 8;

/// Where and how generic auxiliary points may be placed.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementPolicy<T: Scalar> {
    /// Radius of the neighborhood of the terminal hull that holds every
    /// placed node.
    pub eps_hull: T,
    /// Points no placed node may come within `min_separation` of.
    pub forbidden: Vec<DVector<T>>,
    pub rng_seed: u64,
    pub min_separation: T,
    pub max_retries: usize,
}

impl<T: Scalar> Default for PlacementPolicy<T> {
    fn default() -> Self {
        PlacementPolicy {
            eps_hull: lit(0.5),
            forbidden: Vec::new(),
            rng_seed: 0,
            min_separation: lit(1e-3),
            max_retries: 64,
        }
    }
}

impl<T: Scalar> PlacementPolicy<T> {
    pub fn with_seed(seed: u64) -> Self {
        PlacementPolicy {
            rng_seed: seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_hull > T::zero() && self.eps_hull.is_finite()) {
            return Err(Error::DegeneratePlacement(format!(
                "eps_hull must be positive, got {}",
                self.eps_hull
            )));
        }
        if !(self.min_separation >= T::zero() && self.min_separation < self.eps_hull) {
            return Err(Error::DegeneratePlacement(format!(
                "min_separation {} must lie in [0, eps_hull)",
                self.min_separation
            )));
        }
        if self.max_retries == 0 {
            return Err(Error::DegeneratePlacement("max_retries must be positive".into()));
        }
        if self.forbidden.iter().any(|p| p.len() != 2) {
            return Err(Error::DimensionMismatch("forbidden points must be planar".into()));
        }
        Ok(())
    }
}

/// Which construction placed an interior node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Offset node `x + ε f` of a three-terminal gadget.
    ThreeTerminal,
    /// Shared point splitting a three-terminal system in two.
    LineSplit,
    /// Zero-torque point splitting a four-terminal system.
    BalancingPoint,
    /// Shared point of the induction step for more than four terminals.
    Induction,
    /// Auxiliary mass of a resonance gadget.
    Resonator,
    /// Anchor added to remove floppy modes.
    Anchor,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::ThreeTerminal => "three-terminal",
            Provenance::LineSplit => "line-split",
            Provenance::BalancingPoint => "balancing-point",
            Provenance::Induction => "induction",
            Provenance::Resonator => "resonator",
            Provenance::Anchor => "anchor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedNode<T: Scalar> {
    /// Node index in the synthesized network.
    pub index: usize,
    pub position: DVector<T>,
    pub provenance: Provenance,
}

/// A synthesized network with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisReport<T: Scalar> {
    pub network: Network<T>,
    /// Stiffness scale `λ / c` applied to each top-level piece.
    pub calibration: Vec<T>,
    pub placed: Vec<PlacedNode<T>>,
    /// Relative deviation of the network's response from the target.
    pub roundtrip_error: T,
    /// Pairs of springs whose segments cross.
    pub crossings: usize,
}

pub(crate) type Springs<T> = Vec<(usize, usize, T)>;

pub(crate) fn p2<T: Scalar>(v: &DVector<T>) -> P2 {
    [to_f64(v[0]), to_f64(v[1])]
}

fn add(a: P2, b: P2) -> P2 {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(a: P2, s: f64) -> P2 {
    [a[0] * s, a[1] * s]
}

fn norm(a: P2) -> f64 {
    dot(a, a).sqrt()
}

fn neg(a: P2) -> P2 {
    [-a[0], -a[1]]
}

fn line_distance(y: P2, a: P2, b: P2) -> f64 {
    let ab = sub(b, a);
    cross(ab, sub(y, a)).abs() / norm(ab)
}

/// Solution of `r ∧ f = c` of minimal norm plus `s·r̂`.
fn torque_solution(r: P2, c: f64, s: f64) -> P2 {
    let n2 = dot(r, r);
    let n = n2.sqrt();
    [-c * r[1] / n2 + s * r[0] / n, c * r[0] / n2 + s * r[1] / n]
}

pub(crate) fn label(prefix: &str, i: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

/// Nodes under construction. Terminals come first; placed nodes are only
/// appended, so a failed attempt is undone by truncation.
pub(crate) struct Draft<T: Scalar> {
    pub positions: Vec<DVector<T>>,
    pub masses: Vec<T>,
    pub provenance: Vec<Option<Provenance>>,
    pub terminals: usize,
}

impl<T: Scalar> Draft<T> {
    pub fn new(terminals: &[DVector<T>], masses: &[T]) -> Self {
        Draft {
            positions: terminals.to_vec(),
            masses: masses.to_vec(),
            provenance: vec![None; terminals.len()],
            terminals: terminals.len(),
        }
    }

    pub fn point(&self, i: usize) -> P2 {
        p2(&self.positions[i])
    }

    pub fn points(&self) -> Vec<P2> {
        self.positions.iter().map(p2).collect()
    }

    pub fn add(&mut self, p: P2, provenance: Provenance) -> usize {
        self.positions
            .push(DVector::from_column_slice(&[lit(p[0]), lit(p[1])]));
        self.masses.push(T::zero());
        self.provenance.push(Some(provenance));
        self.positions.len() - 1
    }

    pub fn checkpoint(&self) -> usize {
        self.positions.len()
    }

    pub fn rollback(&mut self, checkpoint: usize) {
        self.positions.truncate(checkpoint);
        self.masses.truncate(checkpoint);
        self.provenance.truncate(checkpoint);
    }

    pub fn network(&self, springs: &Springs<T>) -> Result<Network<T>> {
        let n = self.positions.len();
        let inner = n - self.terminals;
        let nodes = (0..n)
            .map(|i| {
                let pos = self.positions[i].as_slice();
                if i < self.terminals {
                    Node::terminal(label("t", i, self.terminals), pos, self.masses[i])
                } else {
                    let k = i - self.terminals;
                    Node::interior(label("i", k, inner), pos, self.masses[i])
                }
            })
            .collect();
        let springs = springs
            .iter()
            .map(|&(a, b, k)| Spring {
                ends: (a, b),
                stiffness: k,
            })
            .collect();
        Network::new(2, nodes, springs)
    }

    pub fn placed(&self) -> Vec<PlacedNode<T>> {
        (self.terminals..self.positions.len())
            .filter_map(|i| {
                self.provenance[i].map(|provenance| PlacedNode {
                    index: i,
                    position: self.positions[i].clone(),
                    provenance,
                })
            })
            .collect()
    }
}

/// Seeded source of generic points inside the neighborhood of the terminal
/// hull.
pub(crate) struct Placer {
    rng: ChaCha8Rng,
    hull: Vec<P2>,
    pub eps: f64,
    pub min_sep: f64,
    forbidden: Vec<P2>,
    pub max_retries: usize,
    depth: usize,
}

impl Placer {
    pub fn new<T: Scalar>(policy: &PlacementPolicy<T>, terminals: &[DVector<T>]) -> Result<Self> {
        policy.validate()?;
        let pts: Vec<P2> = terminals.iter().map(p2).collect();
        Ok(Placer {
            rng: ChaCha8Rng::seed_from_u64(policy.rng_seed),
            hull: convex_hull(&pts),
            eps: to_f64(policy.eps_hull),
            min_sep: to_f64(policy.min_separation),
            forbidden: policy.forbidden.iter().map(p2).collect(),
            max_retries: policy.max_retries,
            depth: 0,
        })
    }

    pub fn in_region(&self, p: P2, radius: f64) -> bool {
        hull_distance(p, &self.hull) <= radius * (1.0 + 1e-12)
    }

    /// Distance from `p` to the nearest occupied or forbidden point.
    pub fn clearance(&self, p: P2, occupied: &[P2]) -> f64 {
        occupied
            .iter()
            .chain(self.forbidden.iter())
            .map(|q| dist(p, *q))
            .fold(f64::INFINITY, f64::min)
    }

    /// Draws points in the `radius`-neighborhood of the hull that pass
    /// `accept` and the separation test; returns the best clearance of a few.
    pub fn sample(&mut self, occupied: &[P2], radius: f64, accept: impl Fn(P2) -> bool) -> Result<P2> {
        let (lo, hi) = bounding_box(&self.hull);
        let mut best: Option<(f64, P2)> = None;
        let mut found = 0;
        for _ in 0..4000 {
            let p = [
                lo[0] - radius + self.rng.gen::<f64>() * (hi[0] - lo[0] + 2.0 * radius),
                lo[1] - radius + self.rng.gen::<f64>() * (hi[1] - lo[1] + 2.0 * radius),
            ];
            if !self.in_region(p, radius) || !accept(p) {
                continue;
            }
            let clear = self.clearance(p, occupied);
            if clear < self.min_sep {
                continue;
            }
            if best.map_or(true, |(c, _)| clear > c) {
                best = Some((clear, p));
            }
            found += 1;
            if found == 8 {
                break;
            }
        }
        best.map(|(_, p)| p)
            .ok_or_else(|| Error::DegeneratePlacement("no admissible point in the hull neighborhood".into()))
    }
}

fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::GadgetVerificationFailed(_)
            | Error::DegeneratePlacement(_)
            | Error::RankDeficient(_)
            | Error::NoBalancingPoint(_)
    )
}

/// Runs `body` until it succeeds, undoing placed nodes after each failure.
pub(crate) fn with_retries<T: Scalar, S>(
    draft: &mut Draft<T>,
    placer: &mut Placer,
    what: &str,
    mut body: impl FnMut(&mut Draft<T>, &mut Placer, usize) -> Result<S>,
) -> Result<S> {
    let checkpoint = draft.checkpoint();
    let mut last = String::new();
    let attempts = placer.max_retries;
    for attempt in 0..attempts {
        match body(draft, placer, attempt) {
            Ok(s) => return Ok(s),
            Err(e) if retryable(&e) => {
                draft.rollback(checkpoint);
                last = e.to_string();
            }
            Err(e) => {
                draft.rollback(checkpoint);
                return Err(e);
            }
        }
    }
    Err(Error::RetryExhausted {
        attempts,
        reason: format!("{what}: {last}"),
    })
}

/// Static response of the springs with `ports` as terminals and every other
/// endpoint as a massless interior node.
fn forward<T: Scalar>(draft: &Draft<T>, ports: &[usize], springs: &Springs<T>, tol: &Tolerances) -> Result<DMatrix<T>> {
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut nodes = Vec::new();
    for (k, &p) in ports.iter().enumerate() {
        index.insert(p, k);
        nodes.push(Node::terminal(format!("p{k}"), draft.positions[p].as_slice(), T::zero()));
    }
    for &(a, b, _) in springs {
        for x in [a, b] {
            if !index.contains_key(&x) {
                index.insert(x, nodes.len());
                nodes.push(Node::interior(format!("q{x}"), draft.positions[x].as_slice(), T::zero()));
            }
        }
    }
    let springs = springs
        .iter()
        .map(|&(a, b, k)| Spring {
            ends: (index[&a], index[&b]),
            stiffness: k,
        })
        .collect();
    let net = Network::new(2, nodes, springs)?;
    Ok(static_response_with(&net, tol)?.matrix)
}

fn stacked<T: Scalar>(forces: &[P2]) -> DVector<T> {
    DVector::from_iterator(forces.len() * 2, forces.iter().flat_map(|f| [lit(f[0]), lit(f[1])]))
}

/// Verifies the springs respond as `c f fᵀ` and rescales them to `λ f fᵀ`.
pub(crate) fn calibrate<T: Scalar>(
    draft: &Draft<T>,
    ports: &[usize],
    forces: &[P2],
    springs: Springs<T>,
    lambda: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, T)> {
    let w = forward(draft, ports, &springs, tol)?;
    let f: DVector<T> = stacked(forces);
    let fn2 = f.norm_squared();
    let c = f.dot(&(&w * &f)) / (fn2 * fn2);
    let dev = (&w - &f * f.transpose() * c).norm();
    if !(c > T::zero()) || !(dev <= lit::<T>(tol.gadget) * c * fn2) {
        return Err(Error::GadgetVerificationFailed(format!(
            "response deviates from rank one by {:.3e}",
            to_f64(dev / (c.abs() * fn2))
        )));
    }
    let ratio = lambda / c;
    Ok((springs.into_iter().map(|(a, b, k)| (a, b, k * ratio)).collect(), ratio))
}

/// Springs realizing `λ f fᵀ` on `ports` (forces given per port).
pub(crate) fn rank_one_piece<T: Scalar>(
    draft: &mut Draft<T>,
    placer: &mut Placer,
    ports: &[usize],
    forces: &[P2],
    lambda: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, T)> {
    let fmax = forces.iter().map(|f| norm(*f)).fold(0.0, f64::max);
    if fmax == 0.0 || lambda == T::zero() {
        return Ok((Vec::new(), T::zero()));
    }
    let (ports, forces): (Vec<usize>, Vec<P2>) = ports
        .iter()
        .zip(forces)
        .filter(|(_, f)| norm(**f) > ZERO_FORCE * fmax)
        .map(|(p, f)| (*p, *f))
        .unzip();
    match ports.len() {
        1 => Err(Error::DegenerateTarget(
            "a single nonzero force cannot be balanced".into(),
        )),
        2 => pair_piece(draft, &ports, &forces, lambda, tol),
        3 => three_piece(draft, placer, &ports, &forces, lambda, tol),
        4 => four_piece(draft, placer, &ports, &forces, lambda, tol),
        _ => induction_piece(draft, placer, &ports, &forces, lambda, tol),
    }
}

fn pair_piece<T: Scalar>(
    draft: &Draft<T>,
    ports: &[usize],
    forces: &[P2],
    lambda: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, T)> {
    let axis = sub(draft.point(ports[1]), draft.point(ports[0]));
    let f = forces[0];
    let fnorm = norm(f);
    let slack = 10.0 * tol.gadget * fnorm;
    if cross(axis, f).abs() / norm(axis) > slack || norm(add(f, forces[1])) > slack {
        return Err(Error::DegenerateTarget(
            "two-terminal forces must be opposite and along the axis".into(),
        ));
    }
    let k = lambda * lit::<T>(fnorm * fnorm);
    Ok((vec![(ports[0], ports[1], k)], k))
}

/// Numerical rank of `[f₁, f₂, x₁−x₀, x₂−x₀]` with unit-normalized columns.
fn three_rank(pts: &[P2], forces: &[P2]) -> usize {
    let cols = [forces[1], forces[2], sub(pts[1], pts[0]), sub(pts[2], pts[0])];
    let mut g = [[0.0; 2]; 2];
    let mut any = false;
    for c in cols {
        let n = norm(c);
        if n == 0.0 {
            continue;
        }
        any = true;
        let u = scale(c, 1.0 / n);
        for r in 0..2 {
            for s in 0..2 {
                g[r][s] += u[r] * u[s];
            }
        }
    }
    if !any {
        return 0;
    }
    let tr = g[0][0] + g[1][1];
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (hi, lo) = (tr / 2.0 + disc, (tr / 2.0 - disc).max(0.0));
    if (lo / hi).sqrt() > 1e-9 {
        2
    } else {
        1
    }
}

fn three_piece<T: Scalar>(
    draft: &mut Draft<T>,
    placer: &mut Placer,
    ports: &[usize],
    forces: &[P2],
    lambda: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, T)> {
    let pts: Vec<P2> = ports.iter().map(|&p| draft.point(p)).collect();
    if three_rank(&pts, forces) == 2 {
        match rank2_piece(draft, placer, ports, forces, lambda, tol) {
            Ok(built) => return Ok(built),
            Err(e) if retryable(&e) || matches!(e, Error::RetryExhausted { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    split_piece(draft, placer, ports, forces, lambda, tol)
}

/// Hub and arm order maximizing `|f_a ∧ (x_a − x_h)| / |x_a − x_h|`.
/// Largest sine between a force and its arm from another port; small
/// values mean a nearly degenerate (stiff, ill-conditioned) gadget.
fn hub_quality(pts: &[P2], forces: &[P2]) -> f64 {
    let mut best = 0.0f64;
    for h in 0..pts.len() {
        for a in 0..pts.len() {
            let arm = sub(pts[a], pts[h]);
            let d = norm(arm) * norm(forces[a]);
            if a != h && d > 0.0 {
                best = best.max(cross(forces[a], arm).abs() / d);
            }
        }
    }
    best
}

fn best_hub(pts: &[P2], forces: &[P2]) -> Option<(usize, usize, usize)> {
    let mut best = None;
    let mut score = 0.0;
    for (h, a, b) in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)] {
        let arm = sub(pts[a], pts[h]);
        let s = cross(forces[a], arm).abs() / (norm(arm) * norm(forces[a]).max(f64::MIN_POSITIVE));
        if s > score {
            score = s;
            best = Some((h, a, b));
        }
    }
    best.filter(|_| score > 1e-9)
}

/// Offsets `x_a + ε f_a`, `x_b + ε f_b` are admissible: arms from the hub
/// not collinear, inside the hull neighborhood, separated from other nodes.
fn offsets_admissible(placer: &Placer, hub: P2, anchors: [P2; 2], offsets: [P2; 2], occupied: &[P2]) -> bool {
    let (u, v) = (sub(offsets[0], hub), sub(offsets[1], hub));
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 || cross(u, v).abs() < MIN_SINE * nu * nv {
        return false;
    }
    if dist(offsets[0], offsets[1]) < placer.min_sep {
        return false;
    }
    for k in 0..2 {
        let x = offsets[k];
        if !placer.in_region(x, placer.eps) || dist(x, anchors[k]) == 0.0 {
            return false;
        }
        let others: Vec<P2> = occupied.iter().copied().filter(|q| *q != anchors[k]).collect();
        if placer.clearance(x, &others) < placer.min_sep {
            return false;
        }
    }
    true
}

fn rank2_piece<T: Scalar>(
    draft: &mut Draft<T>,
    placer: &mut Placer,
    ports: &[usize],
    forces: &[P2],
    lambda: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, T)> {
    let pts: Vec<P2> = ports.iter().map(|&p| draft.point(p)).collect();
    let (h, a, b) = best_hub(&pts, forces)
        .ok_or_else(|| Error::RankDeficient("no hub with a non-degenerate arm".into()))?;
    let eps0 = placer.eps / 2.0 / norm(forces[a]).max(norm(forces[b]));
    let checkpoint = draft.checkpoint();
    let mut last = String::from("no admissible offset");
    for k in 0..placer.max_retries {
        let e = eps0 * 0.5f64.powi(k as i32);
        let offsets = [add(pts[a], scale(forces[a], e)), add(pts[b], scale(forces[b], e))];
        if !offsets_admissible(placer, pts[h], [pts[a], pts[b]], offsets, &draft.points()) {
            continue;
        }
        let ia = draft.add(offsets[0], Provenance::ThreeTerminal);
        let ib = draft.add(offsets[1], Provenance::ThreeTerminal);
        let one = T::one();
        let springs = vec![
            (ports[h], ia, one),
            (ports[h], ib, one),
            (ports[a], ia, one),
            (ports[b], ib, one),
            (ia, ib, one),
        ];
        match calibrate(draft, ports, forces, springs, lambda, tol) {
            Ok(built) => return Ok(built),
            Err(e @ Error::GadgetVerificationFailed(_)) => {
                draft.rollback(checkpoint);
                last = e.to_string();
            }
            Err(e) => {
                draft.rollback(checkpoint);
                return Err(e);
            }
        }
    }
    Err(Error::RetryExhausted {
        attempts: placer.max_retries,
        reason: format!("three-terminal gadget: {last}"),
    })
}

/// Splits a balanced three-force system at a generic point `y` into two
/// three-force systems whose union, with `y` interior, is rank one.
fn split_piece<T: Scalar>(
    draft: &mut Draft<T>,
    placer: &mut Placer,
    ports: &[usize],
    forces: &[P2],
    lambda: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, T)> {
    if placer.depth >= MAX_DEPTH {
        return Err(Error::DegeneratePlacement("three-terminal split nested too deeply".into()));
    }
    let pts: Vec<P2> = ports.iter().map(|&p| draft.point(p)).collect();
    let fmax = forces.iter().map(|f| norm(*f)).fold(0.0, f64::max);
    let (x0, f0, f1, f2) = (pts[0], forces[0], forces[1], forces[2]);
    let c = cross(sub(pts[2], x0), f2);
    placer.depth += 1;
    let out = with_retries(draft, placer, "three-terminal split", |draft, placer, _| {
        let clearance = LINE_CLEARANCE * placer.eps / 2.0;
        let off_lines = |y: P2| {
            [(0, 1), (0, 2), (1, 2)]
                .iter()
                .all(|&(i, j)| line_distance(y, pts[i], pts[j]) >= clearance)
        };
        let y = placer.sample(&draft.points(), placer.eps / 2.0, off_lines)?;
        let iy = draft.add(y, Provenance::LineSplit);
        let f = torque_solution(sub(y, x0), c, fmax);
        let (mut springs, _) = rank_one_piece(
            draft,
            placer,
            &[iy, ports[0], ports[1]],
            &[f, sub(add(f0, f2), f), f1],
            T::one(),
            tol,
        )?;
        let (second, _) = rank_one_piece(
            draft,
            placer,
            &[iy, ports[0], ports[2]],
            &[neg(f), sub(f, f2), f2],
            T::one(),
            tol,
        )?;
        springs.extend(second);
        calibrate(draft, ports, forces, springs, lambda, tol)
    });
    placer.depth -= 1;
    out
}

struct Chord {
    i: usize,
    j: usize,
    origin: P2,
    dir: P2,
    span: (f64, f64),
    weight: f64,
}

/// Zero lines of the pair torques `x_i∧f_i + x_j∧f_j − y∧(f_i+f_j)` that
/// cross the `radius`-neighborhood of the hull.
fn balancing_chords(pts: &[P2], forces: &[P2], hull: &[P2], radius: f64) -> Vec<Chord> {
    let fmax = forces.iter().map(|f| norm(*f)).fold(0.0, f64::max);
    let mut out = Vec::new();
    for i in 0..4 {
        for j in (i + 1)..4 {
            let g = add(forces[i], forces[j]);
            let gn = norm(g);
            if gn <= 1e-9 * fmax {
                continue;
            }
            let kappa = cross(pts[i], forces[i]) + cross(pts[j], forces[j]);
            let origin = scale([g[1], -g[0]], kappa / (gn * gn));
            if let Some(span) = line_chord(origin, g, hull, radius) {
                out.push(Chord {
                    i,
                    j,
                    origin,
                    dir: g,
                    span,
                    weight: (gn / fmax).min(1.0),
                });
            }
        }
    }
    out
}

impl Placer {
    /// A pair `{i, j}` and a point on its zero-torque line, as far from
    /// occupied points as possible on the first attempt and random after.
    fn balancing_point(&mut self, pts: &[P2], forces: &[P2], occupied: &[P2], attempt: usize) -> Result<(usize, usize, P2)> {
        let chords = balancing_chords(pts, forces, &self.hull, self.eps / 4.0);
        if chords.is_empty() {
            return Err(Error::NoBalancingPoint(
                "no pair torque line meets the hull neighborhood".into(),
            ));
        }
        let at = |c: &Chord, t: f64| add(c.origin, scale(c.dir, t));
        if attempt == 0 {
            let mut best: Option<(f64, usize, usize, P2)> = None;
            for c in &chords {
                let g = c.dir;
                let rest: Vec<usize> = (0..4).filter(|&k| k != c.i && k != c.j).collect();
                for s in 0..=32 {
                    let t = c.span.0 + (c.span.1 - c.span.0) * (0.5 + (s as f64 - 16.0) / 32.0);
                    let y = at(c, t);
                    let clear = self.clearance(y, occupied);
                    if clear < self.min_sep {
                        continue;
                    }
                    let first = hub_quality(&[y, pts[c.i], pts[c.j]], &[neg(g), forces[c.i], forces[c.j]]);
                    let second = hub_quality(&[y, pts[rest[0]], pts[rest[1]]], &[g, forces[rest[0]], forces[rest[1]]]);
                    let conditioning = (first.min(second) / GOOD_SINE).min(1.0);
                    let score = clear * c.weight * conditioning;
                    if best.map_or(true, |b| score > b.0) {
                        best = Some((score, c.i, c.j, y));
                    }
                }
            }
            return best.map(|(_, i, j, y)| (i, j, y)).ok_or_else(|| {
                Error::DegeneratePlacement("balancing lines pass too close to occupied points".into())
            });
        }
        let c = &chords[self.rng.gen_range(0..chords.len())];
        let t = self.rng.gen_range(c.span.0..=c.span.1);
        let y = at(c, t);
        if self.clearance(y, occupied) < self.min_sep {
            return Err(Error::DegeneratePlacement("balancing point too close to a node".into()));
        }
        Ok((c.i, c.j, y))
    }
}

fn four_piece<T: Scalar>(
    draft: &mut Draft<T>,
    placer: &mut Placer,
    ports: &[usize],
    forces: &[P2],
    lambda: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, T)> {
    let pts: Vec<P2> = ports.iter().map(|&p| draft.point(p)).collect();
    // The chords depend on the ports alone; only the caller can move them.
    if balancing_chords(&pts, forces, &placer.hull, placer.eps / 4.0).is_empty() {
        return Err(Error::NoBalancingPoint(
            "no pair torque line meets the hull neighborhood".into(),
        ));
    }
    with_retries(draft, placer, "four-terminal split", |draft, placer, attempt| {
        let (i, j, y) = placer.balancing_point(&pts, forces, &draft.points(), attempt)?;
        let iy = draft.add(y, Provenance::BalancingPoint);
        let g = add(forces[i], forces[j]);
        let rest: Vec<usize> = (0..4).filter(|&k| k != i && k != j).collect();
        let (k, t) = (rest[0], rest[1]);
        let (mut springs, _) = rank_one_piece(
            draft,
            placer,
            &[iy, ports[i], ports[j]],
            &[neg(g), forces[i], forces[j]],
            T::one(),
            tol,
        )?;
        let (second, _) = rank_one_piece(
            draft,
            placer,
            &[iy, ports[k], ports[t]],
            &[g, forces[k], forces[t]],
            T::one(),
            tol,
        )?;
        springs.extend(second);
        calibrate(draft, ports, forces, springs, lambda, tol)
    })
}

fn induction_piece<T: Scalar>(
    draft: &mut Draft<T>,
    placer: &mut Placer,
    ports: &[usize],
    forces: &[P2],
    lambda: T,
    tol: &Tolerances,
) -> Result<(Springs<T>, T)> {
    let pts: Vec<P2> = ports.iter().map(|&p| draft.point(p)).collect();
    let p = ports.len();
    let r = p / 2;
    let fmax = forces.iter().map(|f| norm(*f)).fold(0.0, f64::max);
    let c = -(1..=r).map(|i| cross(sub(pts[i], pts[0]), forces[i])).sum::<f64>();
    with_retries(draft, placer, "induction split", |draft, placer, _| {
        let y = placer.sample(&draft.points(), placer.eps / 2.0, |_| true)?;
        let iy = draft.add(y, Provenance::Induction);
        let f = torque_solution(sub(y, pts[0]), c, fmax);
        let fp = neg(forces[..=r].iter().fold(f, |acc, g| add(acc, *g)));

        let mut ports1 = vec![iy, ports[0]];
        let mut forces1 = vec![f, add(forces[0], fp)];
        ports1.extend_from_slice(&ports[1..=r]);
        forces1.extend_from_slice(&forces[1..=r]);
        let mut ports2 = vec![iy, ports[0]];
        let mut forces2 = vec![neg(f), neg(fp)];
        ports2.extend_from_slice(&ports[r + 1..]);
        forces2.extend_from_slice(&forces[r + 1..]);

        let (mut springs, _) = rank_one_piece(draft, placer, &ports1, &forces1, T::one(), tol)?;
        let (second, _) = rank_one_piece(draft, placer, &ports2, &forces2, T::one(), tol)?;
        springs.extend(second);
        calibrate(draft, ports, forces, springs, lambda, tol)
    })
}

fn check_planar_terminals<T: Scalar>(positions: &[DVector<T>]) -> Result<()> {
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

fn check_system<T: Scalar>(sys: &BalancedForceSystem<T>, tol: &Tolerances) -> Result<()> {
    check_planar_terminals(&sys.points)?;
    if !check_balanced(sys, tol.balance)?.balanced {
        return Err(Error::DegenerateTarget("force system is not balanced".into()));
    }
    Ok(())
}

fn relative_error<T: Scalar>(got: &DMatrix<T>, want: &DMatrix<T>) -> T {
    let diff = (got - want).norm();
    let n = want.norm();
    if n > T::zero() {
        diff / n
    } else {
        diff
    }
}

/// Builds a report for springs realizing `target` on the draft's terminals.
fn finish<T: Scalar>(draft: &Draft<T>, springs: &Springs<T>, calibration: Vec<T>, target: &DMatrix<T>, tol: &Tolerances) -> Result<SynthesisReport<T>> {
    let network = draft.network(springs)?;
    let w = static_response_with(&network, tol)?.matrix;
    Ok(SynthesisReport {
        roundtrip_error: relative_error(&w, target),
        crossings: network.crossing_count(),
        placed: draft.placed(),
        calibration,
        network,
    })
}

fn system_forces<T: Scalar>(sys: &BalancedForceSystem<T>) -> Vec<P2> {
    sys.forces.iter().map(p2).collect()
}

fn run_system<T: Scalar>(
    sys: &BalancedForceSystem<T>,
    lambda: T,
    policy: &PlacementPolicy<T>,
    build: impl FnOnce(&mut Draft<T>, &mut Placer, &[usize], &[P2], &Tolerances) -> Result<(Springs<T>, T)>,
) -> Result<SynthesisReport<T>> {
    let tol = T::tolerances();
    check_system(sys, &tol)?;
    if !(lambda >= T::zero()) {
        return Err(Error::DegenerateTarget(format!("lambda must be non-negative, got {lambda}")));
    }
    let mut draft = Draft::new(&sys.points, &vec![T::zero(); sys.points.len()]);
    let mut placer = Placer::new(policy, &sys.points)?;
    let ports: Vec<usize> = (0..sys.points.len()).collect();
    let forces = system_forces(sys);
    let f: DVector<T> = stacked(&forces);
    let target = &f * f.transpose() * lambda;
    let all_zero = forces.iter().all(|f| norm(*f) == 0.0);
    let (springs, ratio) = if all_zero || lambda == T::zero() {
        (Vec::new(), T::zero())
    } else {
        build(&mut draft, &mut placer, &ports, &forces, &tol)?
    };
    finish(&draft, &springs, vec![ratio], &target, &tol)
}

/// Single spring realizing `λ f fᵀ` for opposite forces along the axis.
pub fn synth_pair<T: Scalar>(x1: &DVector<T>, x2: &DVector<T>, f: &DVector<T>, lambda: T) -> Result<Network<T>> {
    let sys = BalancedForceSystem::from_stacked(&[x1.clone(), x2.clone()], f);
    check_planar_terminals(&sys.points)?;
    let tol = T::tolerances();
    let draft = Draft::new(&sys.points, &[T::zero(), T::zero()]);
    let forces = system_forces(&sys);
    if forces.iter().all(|f| norm(*f) == 0.0) || lambda == T::zero() {
        return draft.network(&Vec::new());
    }
    let (springs, _) = pair_piece(&draft, &[0, 1], &forces, lambda, &tol)?;
    draft.network(&springs)
}

/// Offset step `ε` for the three-terminal gadget on hub `x0`: the largest
/// of `ε0, ε0/2, …` (with `ε0 = eps_hull / (2 max |f_i|)`) for which the
/// offset points are admissible.
pub fn choose_eps_noncollinear<T: Scalar>(
    x0: &DVector<T>,
    x1: &DVector<T>,
    x2: &DVector<T>,
    f1: &DVector<T>,
    f2: &DVector<T>,
    policy: &PlacementPolicy<T>,
) -> Result<T> {
    let positions = [x0.clone(), x1.clone(), x2.clone()];
    check_planar_terminals(&positions)?;
    let pts: Vec<P2> = positions.iter().map(p2).collect();
    let forces = [[0.0, 0.0], p2(f1), p2(f2)];
    if three_rank(&pts, &forces) < 2 {
        return Err(Error::RankDeficient(
            "forces and terminal offsets span a line".into(),
        ));
    }
    let placer = Placer::new(policy, &positions)?;
    let fmax = norm(forces[1]).max(norm(forces[2]));
    let eps0 = placer.eps / 2.0 / fmax;
    for k in 0..placer.max_retries {
        let e = eps0 * 0.5f64.powi(k as i32);
        let offsets = [add(pts[1], scale(forces[1], e)), add(pts[2], scale(forces[2], e))];
        if offsets_admissible(&placer, pts[0], [pts[1], pts[2]], offsets, &pts) {
            return Ok(lit(e));
        }
    }
    Err(Error::RetryExhausted {
        attempts: placer.max_retries,
        reason: "no admissible offset step".into(),
    })
}

/// Five-spring gadget for a three-force system whose forces and terminal
/// offsets span the plane.
pub fn synth_three_rank2<T: Scalar>(
    sys: &BalancedForceSystem<T>,
    lambda: T,
    policy: &PlacementPolicy<T>,
) -> Result<SynthesisReport<T>> {
    expect_terminals(sys, 3)?;
    run_system(sys, lambda, policy, |draft, placer, ports, forces, tol| {
        let pts: Vec<P2> = ports.iter().map(|&p| draft.point(p)).collect();
        if three_rank(&pts, forces) < 2 {
            return Err(Error::RankDeficient(
                "forces and terminal offsets span a line".into(),
            ));
        }
        if forces.iter().any(|f| norm(*f) == 0.0) {
            return rank_one_piece(draft, placer, ports, forces, lambda, tol);
        }
        rank2_piece(draft, placer, ports, forces, lambda, tol)
    })
}

/// Three-force synthesis through a generic split point; covers collinear
/// terminals with forces along their line.
pub fn synth_three_rank1<T: Scalar>(
    sys: &BalancedForceSystem<T>,
    lambda: T,
    policy: &PlacementPolicy<T>,
) -> Result<SynthesisReport<T>> {
    expect_terminals(sys, 3)?;
    run_system(sys, lambda, policy, |draft, placer, ports, forces, tol| {
        if forces.iter().any(|f| norm(*f) == 0.0) {
            return rank_one_piece(draft, placer, ports, forces, lambda, tol);
        }
        split_piece(draft, placer, ports, forces, lambda, tol)
    })
}

/// A pair `{i, j}` and a point `y*` where the torque of forces `i`, `j`
/// about `y*` vanishes, so `(y*, −f_i−f_j), (x_i, f_i), (x_j, f_j)` is
/// balanced.
pub fn find_balancing_point<T: Scalar>(
    sys: &BalancedForceSystem<T>,
    policy: &PlacementPolicy<T>,
) -> Result<((usize, usize), DVector<T>)> {
    expect_terminals(sys, 4)?;
    check_planar_terminals(&sys.points)?;
    let tol = T::tolerances();
    if !check_balanced(sys, tol.balance)?.balanced {
        return Err(Error::NoBalancingPoint("force system is not balanced".into()));
    }
    let mut placer = Placer::new(policy, &sys.points)?;
    let pts: Vec<P2> = sys.points.iter().map(p2).collect();
    let forces = system_forces(sys);
    let to_vec = |y: P2| DVector::from_column_slice(&[lit::<T>(y[0]), lit::<T>(y[1])]);
    match placer.balancing_point(&pts, &forces, &pts, 0) {
        Ok((i, j, y)) => return Ok(((i, j), to_vec(y))),
        Err(Error::NoBalancingPoint(_)) => {}
        Err(e) => return Err(e),
    }
    let scale_f = forces.iter().map(|f| norm(*f)).fold(0.0, f64::max).max(1e-300);
    for i in 0..4 {
        for j in (i + 1)..4 {
            let g = add(forces[i], forces[j]);
            let kappa = cross(pts[i], forces[i]) + cross(pts[j], forces[j]);
            if norm(g) <= 1e-9 * scale_f && kappa.abs() <= tol.balance * scale_f {
                let y = placer.sample(&pts, placer.eps / 2.0, |_| true)?;
                return Ok(((i, j), to_vec(y)));
            }
        }
    }
    Err(Error::NoBalancingPoint(
        "no pair torque vanishes near the terminals".into(),
    ))
}

/// Four-force synthesis: split at a balancing point into two three-force
/// systems.
pub fn synth_four<T: Scalar>(
    sys: &BalancedForceSystem<T>,
    lambda: T,
    policy: &PlacementPolicy<T>,
) -> Result<SynthesisReport<T>> {
    expect_terminals(sys, 4)?;
    run_system(sys, lambda, policy, |draft, placer, ports, forces, tol| {
        rank_one_piece(draft, placer, ports, forces, lambda, tol)
    })
}

/// Network whose static response is `λ f fᵀ` for a balanced planar `f`.
pub fn synth_rank_one<T: Scalar>(
    positions: &[DVector<T>],
    f: &DVector<T>,
    lambda: T,
    policy: &PlacementPolicy<T>,
) -> Result<SynthesisReport<T>> {
    check_planar_terminals(positions)?;
    if f.len() != positions.len() * 2 {
        return Err(Error::DimensionMismatch(format!(
            "force vector of length {} for {} terminals",
            f.len(),
            positions.len()
        )));
    }
    let sys = BalancedForceSystem::from_stacked(positions, f);
    run_system(&sys, lambda, policy, |draft, placer, ports, forces, tol| {
        rank_one_piece(draft, placer, ports, forces, lambda, tol)
    })
}

/// Network whose static response equals a realizable planar target.
pub fn synth_static<T: Scalar>(resp: &StaticResponse<T>, policy: &PlacementPolicy<T>) -> Result<SynthesisReport<T>> {
    let tol = T::tolerances();
    check_planar_terminals(&resp.terminal_positions)?;
    let pieces = split_rank_one(resp, &tol)?;
    let n = resp.terminal_positions.len();
    let mut draft = Draft::new(&resp.terminal_positions, &vec![T::zero(); n]);
    let mut placer = Placer::new(policy, &resp.terminal_positions)?;
    let ports: Vec<usize> = (0..n).collect();
    let mut springs = Vec::new();
    let mut calibration = Vec::new();
    for piece in &pieces {
        let forces: Vec<P2> = (0..n)
            .map(|i| [to_f64(piece.force[2 * i]), to_f64(piece.force[2 * i + 1])])
            .collect();
        let (s, ratio) = rank_one_piece(&mut draft, &mut placer, &ports, &forces, piece.lambda, &tol)?;
        springs.extend(s);
        calibration.push(ratio);
    }
    finish(&draft, &springs, calibration, &resp.matrix, &tol)
}

fn expect_terminals<T: Scalar>(sys: &BalancedForceSystem<T>, n: usize) -> Result<()> {
    if sys.points.len() != n || sys.forces.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected {n} terminals, got {}",
            sys.points.len()
        )));
    }
    Ok(())
}
