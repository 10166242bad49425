//! Toral automorphisms induced by unimodular integer matrices.

use nalgebra::{SMatrix, SVector};

use crate::error::{DynError, Result};
use crate::linalg;
use crate::real::Real;
use crate::torus::TorusPoint;

use super::{MapModel, SpectrumHint};

/// x -> A x mod Z^D for an integer matrix with determinant +-1. The integer
/// inverse is exact, so forward and backward dynamics are both closed-form.
#[derive(Debug, Clone)]
pub struct LinearToral<S, const D: usize> {
    matrix: [[i64; D]; D],
    inverse: [[i64; D]; D],
    a: SMatrix<S, D, D>,
    a_inv: SMatrix<S, D, D>,
}

impl<S: Real, const D: usize> LinearToral<S, D> {
    pub fn new(matrix: [[i64; D]; D]) -> Result<Self> {
        let det = linalg::integer_det(&matrix);
        if det.abs() != 1 {
            return Err(DynError::Invalid(format!(
                "toral automorphism needs |det| = 1, got det = {det}"
            )));
        }
        let inverse = linalg::integer_inverse(&matrix).expect("unimodular");
        Ok(Self {
            matrix,
            inverse,
            a: linalg::int_to_smatrix(&matrix),
            a_inv: linalg::int_to_smatrix(&inverse),
        })
    }

    pub fn matrix(&self) -> &[[i64; D]; D] {
        &self.matrix
    }

    pub fn inverse_matrix(&self) -> &[[i64; D]; D] {
        &self.inverse
    }

    pub fn as_smatrix(&self) -> &SMatrix<S, D, D> {
        &self.a
    }
}

impl<S: Real> LinearToral<S, 2> {
    /// The Arnold cat map [[2,1],[1,1]].
    pub fn cat() -> Self {
        Self::new([[2, 1], [1, 1]]).expect("cat map is unimodular")
    }
}

impl<S: Real> LinearToral<S, 3> {
    /// The symmetric 3x3 automorphism [[2,1,0],[1,2,1],[0,1,1]], with three
    /// distinct real eigenvalues straddling 1: a genuinely partially
    /// hyperbolic linear model with expanding center.
    pub fn m3() -> Self {
        Self::new([[2, 1, 0], [1, 2, 1], [0, 1, 1]]).expect("m3 is unimodular")
    }
}

impl<S: Real, const D: usize> MapModel<S, D> for LinearToral<S, D> {
    fn name(&self) -> &'static str {
        "linear_toral"
    }

    fn evaluate(&self, x: &TorusPoint<S, D>) -> TorusPoint<S, D> {
        TorusPoint::wrap_unchecked(self.a * x.coords())
    }

    fn inverse(&self, y: &TorusPoint<S, D>) -> TorusPoint<S, D> {
        TorusPoint::wrap_unchecked(self.a_inv * y.coords())
    }

    fn differential(&self, _x: &TorusPoint<S, D>) -> SMatrix<S, D, D> {
        self.a
    }

    fn inverse_differential(&self, _y: &TorusPoint<S, D>) -> SMatrix<S, D, D> {
        self.a_inv
    }

    fn evaluate_cover(&self, v: &SVector<S, D>) -> SVector<S, D> {
        self.a * v
    }

    fn spectrum_hint(&self) -> Option<SpectrumHint<S, D>> {
        // Closed-form spectra are implemented for the sizes this crate
        // actually uses; other sizes just decline the hint.
        spectrum_for(&self.a)
    }
}

fn spectrum_for<S: Real, const D: usize>(a: &SMatrix<S, D, D>) -> Option<SpectrumHint<S, D>> {
    if D == 2 {
        let a2 = SMatrix::<S, 2, 2>::from_fn(|i, j| a[(i, j)]);
        let moduli2 = linalg::eigen2_moduli(&a2);
        let mut moduli = [S::zero(); D];
        moduli[0] = moduli2[0];
        moduli[1] = moduli2[1];
        let (eigenvalues, eigenvectors) = match linalg::real_eigen2(&a2) {
            Some((vals, vecs)) => {
                let mut ev = [S::zero(); D];
                ev[0] = vals[0];
                ev[1] = vals[1];
                let mut evec = [SVector::<S, D>::zeros(); D];
                for k in 0..2 {
                    evec[k] = SVector::from_fn(|i, _| vecs[k][i]);
                }
                (Some(ev), Some(evec))
            }
            None => (None, None),
        };
        Some(SpectrumHint {
            moduli,
            eigenvalues,
            eigenvectors,
        })
    } else if D == 3 {
        let a3 = SMatrix::<S, 3, 3>::from_fn(|i, j| a[(i, j)]);
        let moduli3 = linalg::eigen3_moduli(&a3);
        let mut moduli = [S::zero(); D];
        for k in 0..3 {
            moduli[k] = moduli3[k];
        }
        let (eigenvalues, eigenvectors) = match linalg::real_eigen3(&a3) {
            Some((vals, vecs)) => {
                let mut ev = [S::zero(); D];
                let mut evec = [SVector::<S, D>::zeros(); D];
                for k in 0..3 {
                    ev[k] = vals[k];
                    evec[k] = SVector::from_fn(|i, _| vecs[k][i]);
                }
                (Some(ev), Some(evec))
            }
            None => (None, None),
        };
        Some(SpectrumHint {
            moduli,
            eigenvalues,
            eigenvectors,
        })
    } else {
        None
    }
}
