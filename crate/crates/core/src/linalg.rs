//! Dense linear algebra helpers shared by the analysis and synthesis code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::scalar::{lit, Scalar};

/// Returns `(m + m^T) / 2`.
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Largest absolute entry (zero for empty matrices).
pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Whether `m` is square and symmetric up to rounding.
pub fn is_symmetric<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= m.norm() * lit::<T>(1e-12)
}

/// Spectral norm (largest singular value).
pub fn norm2<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    if is_symmetric(m) {
        let (vals, _) = sym_eigen(m);
        return vals.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    }
    let (vals, _) = sym_eigen(&(m.transpose() * m));
    vals.iter().fold(T::zero(), |acc, v| acc.max(*v)).max(T::zero()).sqrt()
}

/// Moore-Penrose pseudo-inverse; singular values at or below
/// `rcond * sigma_max` are discarded.
///
/// Symmetric input goes through the symmetric eigen-decomposition, which
/// stays accurate on clustered spectra where the SVD iteration may not.
pub fn pinv<T: Scalar>(m: &DMatrix<T>, rcond: f64) -> DMatrix<T> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    if is_symmetric(m) {
        let (vals, vecs) = sym_eigen(m);
        let smax = vals.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        let cut = smax * lit::<T>(rcond);
        let mut out = DMatrix::zeros(r, r);
        if smax <= T::zero() {
            return out;
        }
        for (k, l) in vals.iter().enumerate() {
            if l.abs() > cut {
                let v = vecs.column(k);
                out += (v * v.transpose()) / *l;
            }
        }
        return out;
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(T::zero(), |a, v| a.max(*v));
    let mut out = DMatrix::zeros(c, r);
    if smax <= T::zero() {
        return out;
    }
    let cut = smax * lit::<T>(rcond);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > cut {
            let inv = T::one() / *s;
            let vk = vt.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) * inv;
        }
    }
    out
}

/// Orthonormal basis (as columns) of the numerical nullspace of `m`:
/// right singular vectors with singular value at or below `rel * sigma_max`.
pub fn nullspace<T: Scalar>(m: &DMatrix<T>, rel: f64) -> DMatrix<T> {
    let (r, c) = m.shape();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    if r == 0 {
        return DMatrix::identity(c, c);
    }
    if is_symmetric(m) {
        let (vals, vecs) = sym_eigen(m);
        let smax = vals.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        let cut = smax * lit::<T>(rel);
        let cols: Vec<DVector<T>> = (0..c)
            .filter(|&k| smax <= T::zero() || vals[k].abs() <= cut)
            .map(|k| vecs.column(k).into_owned())
            .collect();
        return if cols.is_empty() {
            DMatrix::zeros(c, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
    }
    // Pad to at least square so the SVD returns a full set of right vectors.
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.iter().fold(T::zero(), |a, v| a.max(*v));
    let cut = smax * lit::<T>(rel);
    let cols: Vec<DVector<T>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| smax <= T::zero() || **s <= cut)
        .map(|(k, _)| vt.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(c, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Numerical rank: number of singular values above `rel * sigma_max`.
pub fn rank<T: Scalar>(m: &DMatrix<T>, rel: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv: Vec<T> = if is_symmetric(m) {
        sym_eigen(m).0.iter().map(|v| v.abs()).collect()
    } else {
        m.singular_values().iter().copied().collect()
    };
    let smax = sv.iter().fold(T::zero(), |a, v| a.max(*v));
    if smax <= T::zero() {
        return 0;
    }
    let cut = smax * lit::<T>(rel);
    sv.iter().filter(|s| **s > cut).count()
}

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
pub fn sym_eigen<T: Scalar>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let cols: Vec<DVector<T>> = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).into_owned())
        .collect();
    (values, DMatrix::from_columns(&cols))
}

/// Symmetric part of `m` with eigencomponents of magnitude at most `floor`
/// removed. Returns the symmetric part unchanged when there are none.
pub fn strip_small<T: Scalar>(m: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let (vals, vecs) = sym_eigen(m);
    if vals.iter().all(|v| v.abs() > floor) {
        return symmetrize(m);
    }
    if vals.iter().all(|v| v.abs() <= floor) {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let mut out = symmetrize(m);
    for (k, l) in vals.iter().enumerate() {
        if l.abs() <= floor && *l != T::zero() {
            let v = vecs.column(k);
            out -= (v * v.transpose()) * *l;
        }
    }
    symmetrize(&out)
}

/// Orthonormal basis of the range of `y`, dropping directions whose squared
/// singular value is at or below `rcond` times the largest.
pub fn range_basis<T: Scalar>(y: &DMatrix<T>, rcond: f64) -> DMatrix<T> {
    let (vals, vecs) = sym_eigen(&(y.transpose() * y));
    let top = vals.iter().fold(T::zero(), |a, v| a.max(*v));
    let cut = top * lit::<T>(rcond);
    let cols: Vec<DVector<T>> = (0..vals.len())
        .filter(|&k| top > T::zero() && vals[k] > cut)
        .map(|k| y * vecs.column(k) / vals[k].sqrt())
        .collect();
    if cols.is_empty() {
        return DMatrix::zeros(y.nrows(), 0);
    }
    DMatrix::from_columns(&cols).qr().q()
}

/// Schur complement `K_kk − K_ke K_ee† K_ek` of `K = Mᵀ M` onto the `keep`
/// columns, eliminating each group of columns in turn. Computed as
/// `Xᵀ (I − P) X` with `P` the projector onto the eliminated range, so the
/// result is PSD and free of cancellation. Groups must touch disjoint rows.
pub fn schur_from_factor<T: Scalar>(m: &DMatrix<T>, keep: &[usize], groups: &[Vec<usize>], rcond: f64) -> DMatrix<T> {
    let rows: Vec<usize> = (0..m.nrows()).collect();
    let mut x = select(m, &rows, keep);
    for g in groups {
        let y = select(m, &rows, g);
        let q = range_basis(&y, rcond);
        if q.ncols() > 0 {
            x -= &q * (q.transpose() * &x);
        }
    }
    symmetrize(&(x.transpose() * x))
}

/// Roundoff level of a Schur complement over `ndof` unknowns of a stiffness
/// matrix with largest entry `kref`.
pub fn roundoff_floor<T: Scalar>(kref: T, ndof: usize) -> T {
    kref * T::default_epsilon() * lit::<T>(16.0 * ndof.max(1) as f64)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    let (vals, _) = sym_eigen(m);
    vals.iter().fold(T::max_value().unwrap_or(T::one()), |a, v| a.min(*v))
}

/// Extracts the submatrix with the given row and column indices.
pub fn select<T: Scalar>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_deficient_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0f64, 0.0, 0.0, 0.0]);
        let p = pinv(&m, 1e-10);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(p[(1, 1)].abs() < 1e-15);
    }

    #[test]
    fn pinv_satisfies_penrose_identities() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 1.0, 0.0, 1.0]);
        let p = pinv(&m, 1e-10);
        assert!((&m * &p * &m - &m).norm() < 1e-12);
        assert!((&p * &m * &p - &p).norm() < 1e-12);
    }

    #[test]
    fn nullspace_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = nullspace(&m, 1e-10);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() < 1e-14);
    }

    #[test]
    fn strip_small_removes_roundoff_only() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0f64, 0.0, 0.0, -1e-17]);
        let s = strip_small(&m, 1e-14);
        assert_eq!(s[(1, 1)], 0.0);
        assert!((s[(0, 0)] - 1.0).abs() < 1e-15);
        let keep = DMatrix::from_row_slice(2, 2, &[2.0f64, 1.0, 1.0, 2.0]);
        assert_eq!(strip_small(&keep, 1e-14), keep);
    }

    #[test]
    fn rank_and_eigen() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0f64, 1.0, 1.0, 1.0]);
        assert_eq!(rank(&m, 1e-9), 1);
        let (vals, _) = sym_eigen(&m);
        assert!(vals[0].abs() < 1e-15 && (vals[1] - 2.0).abs() < 1e-14);
    }
}
