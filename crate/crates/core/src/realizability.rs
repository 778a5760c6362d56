//! Checks that a static matrix or modal response function is realizable by
//! a spring-mass network, and splits realizable targets into rank-one pieces.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{norm2, sym_eigen, symmetrize};
use crate::model::{check_balanced, rigid_motions, ModalResponse, ModalTerm, StaticResponse};
use crate::scalar::{lit, to_f64, Scalar, Tolerances};

/// Outcome of one named condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst relative residual observed (0 when not applicable).
    pub residual: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, residual: f64, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed,
            residual,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "ok" } else { "FAIL" };
        write!(f, "{:<22} {status:<4} residual {:.3e}", self.name, self.residual)?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

/// Per-condition result of [`validate_static`].
#[derive(Debug, Clone, PartialEq)]
pub struct StaticReport {
    pub shape: Check,
    pub symmetry: Check,
    pub psd: Check,
    pub balance: Check,
}

impl StaticReport {
    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }

    pub fn checks(&self) -> [&Check; 4] {
        [&self.shape, &self.symmetry, &self.psd, &self.balance]
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks().into_iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for StaticReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.checks() {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Per-condition result of [`validate_modal`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModalReport {
    pub masses: Check,
    pub a_symmetry: Check,
    pub residue_symmetry: Check,
    pub residue_psd: Check,
    pub frequencies_positive: Check,
    pub frequencies_distinct: Check,
    /// Checks on `W(0) = A − Σ C_i / ω_i²`.
    pub static_part: StaticReport,
}

impl ModalReport {
    pub fn passed(&self) -> bool {
        self.own_checks().iter().all(|c| c.passed) && self.static_part.passed()
    }

    fn own_checks(&self) -> [&Check; 6] {
        [
            &self.masses,
            &self.a_symmetry,
            &self.residue_symmetry,
            &self.residue_psd,
            &self.frequencies_positive,
            &self.frequencies_distinct,
        ]
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.own_checks()
            .into_iter()
            .filter(|c| !c.passed)
            .chain(self.static_part.failures())
            .collect()
    }
}

impl fmt::Display for ModalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.own_checks() {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}", self.static_part)
    }
}

fn symmetry_residual<T: Scalar>(m: &DMatrix<T>, reference: T) -> f64 {
    let norm = m.norm().max(reference);
    if norm == T::zero() {
        return 0.0;
    }
    to_f64((m - m.transpose()).norm() / norm)
}

/// `-λ_min / max(|m|, reference)` clamped at zero; 0 for a zero matrix.
fn psd_residual<T: Scalar>(m: &DMatrix<T>, reference: T) -> f64 {
    let s = symmetrize(m);
    let scale = norm2(&s).max(reference);
    if scale == T::zero() {
        return 0.0;
    }
    let (vals, _) = sym_eigen(&s);
    let min = vals.iter().fold(T::zero(), |a, v| a.min(*v));
    to_f64(-min / scale).max(0.0)
}

/// Checks (a) shape and finiteness, (b) symmetry, (c) positive
/// semi-definiteness and (d) force/torque balance of every column.
pub fn validate_static<T: Scalar>(resp: &StaticResponse<T>, tol: &Tolerances) -> StaticReport {
    validate_static_against(resp, tol, T::zero())
}

/// As [`validate_static`], with symmetry and definiteness residuals taken
/// relative to at least `reference`.
fn validate_static_against<T: Scalar>(resp: &StaticResponse<T>, tol: &Tolerances, reference: T) -> StaticReport {
    let w = &resp.matrix;
    let n = resp.terminal_positions.len();
    let d = resp.terminal_positions.first().map_or(0, |p| p.len());
    let finite = w.iter().all(|v| v.is_finite())
        && resp.terminal_positions.iter().flatten().all(|v| v.is_finite());
    let square = w.shape() == (n * d, n * d);
    let shape = Check::new(
        "shape",
        finite && square,
        0.0,
        match (square, finite) {
            (false, _) => format!("{}x{} for {n} terminals in {d}D", w.nrows(), w.ncols()),
            (true, false) => "non-finite entries".into(),
            _ => String::new(),
        },
    );
    if !shape.passed {
        let skipped = |name| Check::new(name, false, f64::NAN, "skipped");
        return StaticReport {
            shape,
            symmetry: skipped("symmetry"),
            psd: skipped("positive semidefinite"),
            balance: skipped("balanced columns"),
        };
    }
    let sym = symmetry_residual(w, reference);
    let psd = psd_residual(w, reference);
    let mut worst = 0.0f64;
    let mut worst_col = None;
    let mut all_balanced = true;
    for j in 0..w.ncols() {
        let check = match check_balanced(&resp.column_forces(j), tol.balance) {
            Ok(c) => c,
            Err(_) => {
                all_balanced = false;
                continue;
            }
        };
        let r = to_f64(check.force_residual.norm().max(check.torque_residual.norm()) / check.scale);
        if !check.balanced {
            all_balanced = false;
        }
        if r > worst {
            worst = r;
            worst_col = Some(j);
        }
    }
    StaticReport {
        shape,
        symmetry: Check::new("symmetry", sym <= tol.symmetry, sym, ""),
        psd: Check::new("positive semidefinite", psd <= tol.psd, psd, ""),
        balance: Check::new(
            "balanced columns",
            all_balanced,
            worst,
            match (all_balanced, worst_col) {
                (false, Some(j)) => format!("column {j}"),
                _ => String::new(),
            },
        ),
    }
}

/// Checks the structure of a modal response and validates its static part.
pub fn validate_modal<T: Scalar>(resp: &ModalResponse<T>, tol: &Tolerances) -> ModalReport {
    let bad_mass = resp
        .masses
        .iter()
        .position(|m| !m.is_finite() || *m < T::zero());
    let masses = Check::new(
        "terminal masses",
        bad_mass.is_none(),
        0.0,
        bad_mass.map_or(String::new(), |i| format!("terminal {i}")),
    );
    let a_sym = symmetry_residual(&resp.a, T::zero());
    let a_symmetry = Check::new("A symmetry", a_sym <= tol.symmetry, a_sym, "");

    let (mut sym_worst, mut psd_worst) = (0.0f64, 0.0f64);
    let (mut sym_at, mut psd_at) = (None, None);
    let mut finite = true;
    for (i, t) in resp.terms.iter().enumerate() {
        if !t.residue.iter().all(|v| v.is_finite()) {
            finite = false;
            sym_at = Some(i);
            continue;
        }
        let s = symmetry_residual(&t.residue, T::zero());
        if s > sym_worst {
            sym_worst = s;
            sym_at = Some(i);
        }
        let p = psd_residual(&t.residue, T::zero());
        if p > psd_worst {
            psd_worst = p;
            psd_at = Some(i);
        }
    }
    let sym_ok = finite && sym_worst <= tol.symmetry;
    let psd_ok = finite && psd_worst <= tol.psd;
    let residue_symmetry = Check::new(
        "residue symmetry",
        sym_ok,
        sym_worst,
        if sym_ok { String::new() } else { format!("term {}", sym_at.unwrap_or(0)) },
    );
    let residue_psd = Check::new(
        "residue semidefinite",
        psd_ok,
        psd_worst,
        if psd_ok { String::new() } else { format!("term {}", psd_at.unwrap_or(0)) },
    );

    let bad_freq = resp
        .terms
        .iter()
        .position(|t| !t.omega_sq.is_finite() || t.omega_sq <= T::zero());
    let frequencies_positive = Check::new(
        "resonances positive",
        bad_freq.is_none(),
        0.0,
        bad_freq.map_or(String::new(), |i| format!("term {i}")),
    );
    let mut sorted: Vec<f64> = resp.terms.iter().map(|t| to_f64(t.omega_sq)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut closest = f64::INFINITY;
    let mut distinct = true;
    for w in sorted.windows(2) {
        let gap = (w[1] - w[0]).abs() / w[0].abs().max(1.0);
        closest = closest.min(gap);
        if gap <= tol.cluster {
            distinct = false;
        }
    }
    let frequencies_distinct = Check::new(
        "resonances distinct",
        distinct,
        if closest.is_finite() { closest } else { 0.0 },
        if distinct { "" } else { "repeated resonance" },
    );

    let static_part = if bad_freq.is_none() {
        match StaticResponse::new(resp.terminal_positions.clone(), resp.static_part()) {
            Ok(s) => validate_static_against(&s, tol, resp.reference_scale()),
            Err(e) => skipped_static(&e.to_string()),
        }
    } else {
        skipped_static("non-positive resonance")
    };
    ModalReport {
        masses,
        a_symmetry,
        residue_symmetry,
        residue_psd,
        frequencies_positive,
        frequencies_distinct,
        static_part,
    }
}

fn skipped_static(reason: &str) -> StaticReport {
    let skipped = |name| Check::new(name, false, f64::NAN, "skipped");
    StaticReport {
        shape: Check::new("shape", false, f64::NAN, reason.to_string()),
        symmetry: skipped("symmetry"),
        psd: skipped("positive semidefinite"),
        balance: skipped("balanced columns"),
    }
}

/// A single rank-one piece `λ f fᵀ`, optionally resonant:
/// `λ f fᵀ ω² / (ω² − ω0²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneTarget<T: Scalar> {
    pub lambda: T,
    pub force: DVector<T>,
    pub omega0_sq: Option<T>,
}

impl<T: Scalar> RankOneTarget<T> {
    pub fn static_piece(lambda: T, force: DVector<T>) -> Self {
        RankOneTarget {
            lambda,
            force,
            omega0_sq: None,
        }
    }

    pub fn resonant(lambda: T, force: DVector<T>, omega0_sq: T) -> Self {
        RankOneTarget {
            lambda,
            force,
            omega0_sq: Some(omega0_sq),
        }
    }

    /// `λ f fᵀ`.
    pub fn matrix(&self) -> DMatrix<T> {
        &self.force * self.force.transpose() * self.lambda
    }

    /// The piece's response at `omega` (no resonance guard).
    pub fn response_at(&self, omega: T) -> DMatrix<T> {
        let m = self.matrix();
        match self.omega0_sq {
            None => m,
            Some(w0) => {
                let w2 = omega * omega;
                m * (w2 / (w2 - w0))
            }
        }
    }
}

fn validated_static<T: Scalar>(resp: &StaticResponse<T>, tol: &Tolerances) -> Result<()> {
    let report = validate_static(resp, tol);
    if report.passed() {
        Ok(())
    } else {
        Err(Error::ValidationFailed(describe(&report.failures())))
    }
}

fn describe(failures: &[&Check]) -> String {
    failures
        .iter()
        .map(|c| format!("{} (residual {:.3e})", c.name, c.residual))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Orthogonal projector onto the balanced subspace at `points`.
pub fn balanced_projector<T: Scalar>(points: &[DVector<T>]) -> DMatrix<T> {
    // Translations lie in the rigid range, so centring changes nothing but
    // the conditioning.
    let d = points.first().map_or(2, |p| p.len());
    let count = lit::<T>(points.len().max(1) as f64);
    let centroid = points.iter().fold(DVector::zeros(d), |acc, p| acc + p) / count;
    let centred: Vec<DVector<T>> = points.iter().map(|p| p - &centroid).collect();
    let r = rigid_motions(&centred);
    let n = r.nrows();
    let (vals, vecs) = sym_eigen(&(&r * r.transpose()));
    let lmax = vals.iter().fold(T::zero(), |a, v| a.max(*v));
    let mut p = DMatrix::zeros(n, n);
    for (k, l) in vals.iter().enumerate() {
        if *l <= lmax * lit::<T>(1e-12) {
            let u = vecs.column(k);
            p += u * u.transpose();
        }
    }
    p
}

/// Positive eigenpairs of a symmetric PSD matrix, eigenvalues in
/// `[−tol, tol]·|m|` dropped.
fn positive_eigenpairs<T: Scalar>(m: &DMatrix<T>, rel: f64, reference: T) -> Vec<(T, DVector<T>)> {
    let s = symmetrize(m);
    let scale = norm2(&s).max(reference);
    if scale == T::zero() {
        return Vec::new();
    }
    let (vals, vecs) = sym_eigen(&s);
    let floor = scale * lit::<T>(rel);
    (0..vals.len())
        .rev()
        .filter(|&k| vals[k] > floor)
        .map(|k| (vals[k], vecs.column(k).into_owned()))
        .collect()
}

/// Spectral split `W = Σ λ_i w_i w_iᵀ` over positive eigenvalues, largest
/// first. Each unit force vector is balanced.
pub fn split_rank_one<T: Scalar>(
    resp: &StaticResponse<T>,
    tol: &Tolerances,
) -> Result<Vec<RankOneTarget<T>>> {
    validated_static(resp, tol)?;
    let proj = balanced_projector(&resp.terminal_positions);
    Ok(positive_eigenpairs(&resp.matrix, tol.psd, T::zero())
        .into_iter()
        .map(|(lambda, w)| {
            let mut f = &proj * w;
            let norm = f.norm();
            if norm > T::zero() {
                f /= norm;
            }
            RankOneTarget::static_piece(lambda, f)
        })
        .collect())
}

/// A modal response split into its static part, terminal masses and
/// resonant rank-one pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSplit<T: Scalar> {
    pub static_part: StaticResponse<T>,
    pub masses: Vec<T>,
    /// Pieces `f fᵀ ω² / (ω² − ω0²)` with `λ = 1`.
    pub dynamic: Vec<RankOneTarget<T>>,
}

impl<T: Scalar> ModalSplit<T> {
    /// Rebuilds the modal form: `A = W(0) + Σ f fᵀ`, `C_i = ω_i² Σ f fᵀ`.
    pub fn reassemble(&self, tol: &Tolerances) -> Result<ModalResponse<T>> {
        let positions = self.static_part.terminal_positions.clone();
        let mut a = self.static_part.matrix.clone();
        let mut terms: Vec<ModalTerm<T>> = Vec::new();
        for piece in &self.dynamic {
            let w0 = piece
                .omega0_sq
                .ok_or_else(|| Error::InvalidNetwork("static piece in dynamic list".into()))?;
            let m = piece.matrix();
            a += &m;
            let c = m * w0;
            match terms
                .iter_mut()
                .find(|t| (t.omega_sq - w0).abs() <= lit::<T>(tol.cluster) * w0.max(T::one()))
            {
                Some(t) => t.residue += c,
                None => terms.push(ModalTerm {
                    omega_sq: w0,
                    residue: c,
                }),
            }
        }
        ModalResponse::new(positions, a, self.masses.clone(), terms)
    }
}

/// Splits a validated modal response into `W(0)`, masses and one resonant
/// target `√λ_j c_j / ω_i` per positive eigenpair of each residue.
pub fn split_modal<T: Scalar>(resp: &ModalResponse<T>, tol: &Tolerances) -> Result<ModalSplit<T>> {
    let report = validate_modal(resp, tol);
    if !report.passed() {
        return Err(Error::ValidationFailed(describe(&report.failures())));
    }
    // Drop the cancellation noise of W(0) so the static part is PSD on its
    // own scale.
    let nd = resp.a.nrows();
    let mut w0 = DMatrix::zeros(nd, nd);
    for (lambda, v) in positive_eigenpairs(&resp.static_part(), tol.psd, resp.reference_scale()) {
        w0 += &v * v.transpose() * lambda;
    }
    let static_part = StaticResponse::new(resp.terminal_positions.clone(), w0)?;
    let mut dynamic = Vec::new();
    for term in &resp.terms {
        let omega = term.omega_sq.sqrt();
        for (lambda, c) in positive_eigenpairs(&term.residue, tol.psd, T::zero()) {
            dynamic.push(RankOneTarget::resonant(
                T::one(),
                c * (lambda.sqrt() / omega),
                term.omega_sq,
            ));
        }
    }
    Ok(ModalSplit {
        static_part,
        masses: resp.masses.clone(),
        dynamic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::model::{evaluate_modal, Network};
    use crate::reduce::extract_modal;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn pts() -> Vec<DVector<f64>> {
        vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])]
    }

    fn spring_k() -> StaticResponse<f64> {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 0.0)
            .terminal("b", &[1.0, 0.0], 0.0)
            .spring("a", "b", 1.0)
            .build()
            .unwrap();
        StaticResponse::new(pts(), assemble(&net).unwrap().stiffness).unwrap()
    }

    #[test]
    fn single_spring_passes() {
        assert!(validate_static(&spring_k(), &Tolerances::DOUBLE).passed());
    }

    #[test]
    fn antisymmetric_perturbation_fails_symmetry() {
        let mut k = spring_k();
        k.matrix[(0, 1)] += 0.1;
        k.matrix[(1, 0)] -= 0.1;
        let r = validate_static(&k, &Tolerances::DOUBLE);
        assert!(!r.symmetry.passed);
    }

    #[test]
    fn identity_fails_balance() {
        let r = validate_static(
            &StaticResponse::new(pts(), DMatrix::identity(4, 4)).unwrap(),
            &Tolerances::DOUBLE,
        );
        assert!(r.symmetry.passed && r.psd.passed);
        assert!(!r.balance.passed);
    }

    #[test]
    fn negative_definite_fails_psd() {
        let mut k = spring_k();
        k.matrix *= -1.0;
        assert!(!validate_static(&k, &Tolerances::DOUBLE).psd.passed);
    }

    #[test]
    fn single_spring_splits_to_one_piece() {
        let pieces = split_rank_one(&spring_k(), &Tolerances::DOUBLE).unwrap();
        assert_eq!(pieces.len(), 1);
        assert!((pieces[0].lambda - 2.0).abs() < 1e-14);
        let w = v(&[-1.0, 0.0, 1.0, 0.0]) / 2f64.sqrt();
        assert!((pieces[0].force.dot(&w).abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_input_recovered() {
        let f = v(&[-1.0, 0.0, 1.0, 0.0]) / 2f64.sqrt();
        let resp = StaticResponse::new(pts(), &f * f.transpose() * 3.0).unwrap();
        let pieces = split_rank_one(&resp, &Tolerances::DOUBLE).unwrap();
        assert_eq!(pieces.len(), 1);
        assert!((pieces[0].lambda - 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_splits_to_nothing() {
        let resp = StaticResponse::new(pts(), DMatrix::zeros(4, 4)).unwrap();
        assert!(split_rank_one(&resp, &Tolerances::DOUBLE).unwrap().is_empty());
    }

    #[test]
    fn unbalanced_target_is_rejected() {
        let resp = StaticResponse::new(pts(), DMatrix::identity(4, 4)).unwrap();
        assert!(matches!(
            split_rank_one(&resp, &Tolerances::DOUBLE),
            Err(Error::ValidationFailed(_))
        ));
    }

    fn pure_resonance() -> ModalResponse<f64> {
        let f = v(&[-1.0, 0.0, 1.0, 0.0]);
        let c = &f * f.transpose();
        ModalResponse::new(
            pts(),
            c.clone(),
            vec![0.0, 0.0],
            vec![ModalTerm {
                omega_sq: 1.0,
                residue: c,
            }],
        )
        .unwrap()
    }

    #[test]
    fn extracted_modal_validates() {
        let net = Network::builder(2)
            .terminal("a", &[0.0, 0.0], 1.0)
            .terminal("b", &[2.0, 0.0], 0.0)
            .interior("m", &[1.0, 1.0], 1.0)
            .spring("a", "m", 1.0)
            .spring("b", "m", 2.0)
            .spring("a", "b", 0.5)
            .build()
            .unwrap();
        let modal = extract_modal(&net).unwrap();
        assert!(validate_modal(&modal, &Tolerances::DOUBLE).passed());
    }

    #[test]
    fn duplicate_resonances_fail() {
        let mut r = pure_resonance();
        r.terms.push(r.terms[0].clone());
        r.a *= 2.0;
        let report = validate_modal(&r, &Tolerances::DOUBLE);
        assert!(!report.frequencies_distinct.passed);
    }

    #[test]
    fn indefinite_residue_fails() {
        let mut r = pure_resonance();
        r.terms[0].residue = DMatrix::from_diagonal(&v(&[1.0, -1.0, 0.0, 0.0]));
        assert!(!validate_modal(&r, &Tolerances::DOUBLE).residue_psd.passed);
    }

    #[test]
    fn pure_resonance_splits() {
        let split = split_modal(&pure_resonance(), &Tolerances::DOUBLE).unwrap();
        assert!(split.static_part.matrix.norm() < 1e-14);
        assert_eq!(split.dynamic.len(), 1);
        let piece = &split.dynamic[0];
        assert_eq!(piece.omega0_sq, Some(1.0));
        assert!((piece.force.norm() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn no_terms_split_is_static() {
        let r = ModalResponse::new(pts(), spring_k().matrix, vec![1.0, 2.0], vec![]).unwrap();
        let split = split_modal(&r, &Tolerances::DOUBLE).unwrap();
        assert!(split.dynamic.is_empty());
        assert!((&split.static_part.matrix - &r.a).norm() < 1e-15);
        assert_eq!(split.masses, vec![1.0, 2.0]);
    }

    #[test]
    fn rank_two_residue_gives_two_pieces() {
        let p = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let f1 = v(&[-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let f2 = v(&[0.0, -1.0, 0.0, 0.0, 0.0, 1.0]);
        let c = &f1 * f1.transpose() + &f2 * f2.transpose() * 2.0;
        let r = ModalResponse::new(
            p,
            c.clone() / 4.0,
            vec![0.0; 3],
            vec![ModalTerm { omega_sq: 4.0, residue: c }],
        )
        .unwrap();
        let split = split_modal(&r, &Tolerances::DOUBLE).unwrap();
        assert_eq!(split.dynamic.len(), 2);
        let back = split.reassemble(&Tolerances::DOUBLE).unwrap();
        for w in [0.3, 1.1, 3.7] {
            let a = evaluate_modal(&r, w).unwrap();
            let b = evaluate_modal(&back, w).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }
}
