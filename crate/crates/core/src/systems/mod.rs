//! The maps under study: a common interface plus three concrete families
//! (hyperbolic toral automorphisms, circle extensions over them, and
//! derived-from-Anosov deformations).

mod da;
mod linear;
mod skew;

pub use da::DaModel;
pub use linear::LinearToral;
pub use skew::{SkewCircleExtension, TrigPoly};

use nalgebra::{SMatrix, SVector};

use crate::error::{DynError, Result};
use crate::real::Real;
use crate::torus::TorusPoint;

/// Exact spectral data for models whose differential is constant.
#[derive(Debug, Clone)]
pub struct SpectrumHint<S, const D: usize> {
    /// Eigenvalue moduli, descending.
    pub moduli: [S; D],
    /// Signed eigenvalues (descending modulus) when all are real.
    pub eigenvalues: Option<[S; D]>,
    /// Unit eigenvectors matching `eigenvalues`, when real and simple.
    pub eigenvectors: Option<[SVector<S, D>; D]>,
}

/// A smooth diffeomorphism of T^D with an explicitly computable inverse and
/// differential. Everything downstream (splittings, exponents, leaves,
/// Newton closures) is written against this interface.
pub trait MapModel<S: Real, const D: usize> {
    fn name(&self) -> &'static str;

    fn evaluate(&self, x: &TorusPoint<S, D>) -> TorusPoint<S, D>;

    fn inverse(&self, y: &TorusPoint<S, D>) -> TorusPoint<S, D>;

    /// Jacobian of the map at `x` (in cover coordinates; the torus is
    /// parallelizable so this is a plain matrix).
    fn differential(&self, x: &TorusPoint<S, D>) -> SMatrix<S, D, D>;

    /// Jacobian of the inverse map at `y`; equals `differential(f^{-1}(y))^{-1}`.
    fn inverse_differential(&self, y: &TorusPoint<S, D>) -> SMatrix<S, D, D>;

    /// The lift to the universal cover R^D (no wrapping). Commutes with
    /// integer translations composed with the linear part.
    fn evaluate_cover(&self, v: &SVector<S, D>) -> SVector<S, D>;

    /// Exact spectrum for constant-differential models.
    fn spectrum_hint(&self) -> Option<SpectrumHint<S, D>> {
        None
    }
}

/// Forward (`n > 0`) or backward (`n < 0`) orbit segment, returning the
/// |n|+1 points x, f(x), ..., f^n(x) in orbit order. Guarded by a hard cap
/// so a bad config cannot silently allocate gigabytes.
pub fn orbit_segment<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    x: &TorusPoint<S, D>,
    n: i64,
    cap: usize,
) -> Result<Vec<TorusPoint<S, D>>> {
    let len = n.unsigned_abs() as usize;
    if len > cap {
        return Err(DynError::SegmentTooLong {
            requested: len,
            cap,
        });
    }
    let mut out = Vec::with_capacity(len + 1);
    out.push(*x);
    let mut cur = *x;
    for _ in 0..len {
        cur = if n >= 0 {
            model.evaluate(&cur)
        } else {
            model.inverse(&cur)
        };
        out.push(cur);
    }
    Ok(out)
}
