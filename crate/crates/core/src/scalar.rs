//! Scalar abstraction and numeric tolerances.

use std::fmt;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type the library is generic over (`f32` or `f64`).
///
/// Everything that needs eigen- or singular-value decompositions goes through
/// nalgebra, so the bound is nalgebra's `RealField` plus the num-traits
/// conversions used for literals.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + fmt::Display + fmt::LowerExp + Default
{
    /// Default tolerances appropriate for the precision of the type.
    fn tolerances() -> Tolerances;
}

impl Scalar for f64 {
    fn tolerances() -> Tolerances {
        Tolerances::DOUBLE
    }
}

impl Scalar for f32 {
    fn tolerances() -> Tolerances {
        Tolerances::SINGLE
    }
}

/// Converts an `f64` literal into the scalar type.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Converts a scalar to `f64` for reporting.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Relative tolerances used across the crate. All values are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Force/torque balance check, relative to the force scale.
    pub balance: f64,
    /// Smallest admissible eigenvalue for PSD checks, relative to the norm.
    pub psd: f64,
    /// Symmetry check, relative to the norm.
    pub symmetry: f64,
    /// Singular values below `pinv_rcond * sigma_max` count as zero.
    pub pinv_rcond: f64,
    /// Resonances closer than `cluster * max(1, omega^2)` are merged.
    pub cluster: f64,
    /// Evaluation guard around poles: `resonance_guard * max(1, max omega_i^2)`.
    pub resonance_guard: f64,
    /// Numerical rank cutoff for geometric rank decisions.
    pub rank: f64,
    /// Acceptable relative deviation of a built gadget from `c f f^T`.
    pub gadget: f64,
}

impl Tolerances {
    pub const DOUBLE: Tolerances = Tolerances {
        balance: 1e-9,
        psd: 1e-9,
        symmetry: 1e-9,
        pinv_rcond: 1e-10,
        cluster: 1e-8,
        resonance_guard: 1e-8,
        rank: 1e-9,
        gadget: 1e-10,
    };

    pub const SINGLE: Tolerances = Tolerances {
        balance: 1e-4,
        psd: 1e-4,
        symmetry: 1e-4,
        pinv_rcond: 1e-5,
        cluster: 1e-4,
        resonance_guard: 1e-4,
        rank: 1e-4,
        gadget: 1e-3,
    };

    /// Returns a copy with the validation tolerances (balance, PSD, symmetry)
    /// replaced by `tol`.
    pub fn with_validation(mut self, tol: f64) -> Self {
        self.balance = tol;
        self.psd = tol;
        self.symmetry = tol;
        self
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances::DOUBLE
    }
}
