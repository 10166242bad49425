//! Derived-from-Anosov deformations: compose a linear automorphism with a
//! compactly supported shear along its center eigendirection.
//!
//! f = h o A, where A has three distinct real eigenvalues and
//! `h(x) = x - s * b(|w|/r) * (e_c . w) e_c` with `w = x - c` (nearest
//! image), for the bump b(t) = (1 - t^2)^3 on [0,1). Outside the ball of radius r
//! around c the map is exactly A. The deformation weakens the center
//! multiplier near c: at c = 0 (a fixed point of A) the center eigenvalue
//! of Df becomes lambda_c (1 - s), which for suitable s drops below 1 and
//! creates a periodic point whose center exponent has the opposite sign
//! from the linear model's.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{DynError, Result};
use crate::linalg;
use crate::real::Real;
use crate::torus::{wrap_displacement, TorusPoint};

use super::MapModel;

#[derive(Debug, Clone)]
pub struct DaModel<S> {
    linear: [[i64; 3]; 3],
    a: Matrix3<S>,
    a_inv: Matrix3<S>,
    center: TorusPoint<S, 3>,
    radius: S,
    strength: S,
    e_c: Vector3<S>,
    eigenvalues: [S; 3],
    eigenvectors: [Vector3<S>; 3],
}

impl<S: Real> DaModel<S> {
    pub fn new(
        linear: [[i64; 3]; 3],
        center: TorusPoint<S, 3>,
        radius: f64,
        strength: f64,
    ) -> Result<Self> {
        if linalg::integer_det(&linear).abs() != 1 {
            return Err(DynError::Invalid("linear part must be unimodular".into()));
        }
        if !(0.0..1.0).contains(&strength) {
            return Err(DynError::Invalid(format!(
                "shear strength must be in [0, 1) for invertibility, got {strength}"
            )));
        }
        if !(radius > 0.0 && radius < 0.49) {
            return Err(DynError::Invalid(format!(
                "deformation radius must be in (0, 0.49), got {radius}"
            )));
        }
        let a = linalg::int_to_smatrix::<S, 3>(&linear);
        let Some((vals, vecs)) = linalg::real_eigen3(&a) else {
            return Err(DynError::Invalid(
                "linear part needs three distinct real eigenvalues".into(),
            ));
        };
        let a_inv = linalg::int_to_smatrix(&linalg::integer_inverse(&linear).expect("unimodular"));
        Ok(Self {
            linear,
            a,
            a_inv,
            center,
            radius: S::of(radius),
            strength: S::of(strength),
            // Middle modulus = center direction.
            e_c: vecs[1],
            eigenvalues: vals,
            eigenvectors: vecs,
        })
    }

    /// The standard example: deform the symmetric automorphism
    /// [[2,1,0],[1,2,1],[0,1,1]] around its fixed point at the origin.
    pub fn m3_da(radius: f64, strength: f64) -> Result<Self> {
        Self::new(
            [[2, 1, 0], [1, 2, 1], [0, 1, 1]],
            TorusPoint::origin(),
            radius,
            strength,
        )
    }

    pub fn center_direction(&self) -> &Vector3<S> {
        &self.e_c
    }

    pub fn linear_eigenvalues(&self) -> &[S; 3] {
        &self.eigenvalues
    }

    pub fn linear_eigenvectors(&self) -> &[Vector3<S>; 3] {
        &self.eigenvectors
    }

    pub fn deformation_center(&self) -> &TorusPoint<S, 3> {
        &self.center
    }

    pub fn radius(&self) -> S {
        self.radius
    }

    pub fn strength(&self) -> S {
        self.strength
    }

    pub fn linear_matrix(&self) -> &[[i64; 3]; 3] {
        &self.linear
    }

    fn bump(t: S) -> S {
        if t >= S::one() {
            S::zero()
        } else {
            let u = S::one() - t * t;
            u * u * u
        }
    }

    fn bump_prime(t: S) -> S {
        if t >= S::one() {
            S::zero()
        } else {
            let u = S::one() - t * t;
            -S::of(6.0) * t * u * u
        }
    }

    /// Shear evaluated on a cover displacement from the deformation center.
    fn shear_cover(&self, u: &Vector3<S>) -> Vector3<S> {
        let w = wrap_displacement::<S, 3>(&(u - self.center.coords()));
        let nw = w.norm();
        if nw >= self.radius {
            return *u;
        }
        let t = nw / self.radius;
        u - self.e_c * (self.strength * Self::bump(t) * self.e_c.dot(&w))
    }

    fn shear_jacobian_at(&self, x: &TorusPoint<S, 3>) -> Matrix3<S> {
        let w = wrap_displacement::<S, 3>(&(x.coords() - self.center.coords()));
        let nw = w.norm();
        if nw >= self.radius {
            return Matrix3::identity();
        }
        let t = nw / self.radius;
        // grad_x b(|w|/r) = b'(t) w / (r |w|); the whole differential is the
        // rank-one-in-output form I - e_c v^T.
        let mut v = self.e_c * (self.strength * Self::bump(t));
        if nw > S::of(1e-300) {
            v += w * (self.strength * self.e_c.dot(&w) * Self::bump_prime(t) / (self.radius * nw));
        }
        Matrix3::identity() - self.e_c * v.transpose()
    }

    /// Invert the shear by damped Newton from the identity guess. The shear
    /// moves points by at most s*r < 1/2, so cover arithmetic around the
    /// target needs no extra unwrapping.
    fn shear_inverse(&self, y: &TorusPoint<S, 3>) -> TorusPoint<S, 3> {
        let tol = S::of(1e-15).max(S::default_epsilon() * S::of(4.0));
        let target = *y.coords();
        let mut u = target;
        let mut res = self.shear_cover(&u) - target;
        for _ in 0..64 {
            if res.norm() < tol {
                break;
            }
            let x = TorusPoint::wrap_unchecked(u);
            let j = self.shear_jacobian_at(&x);
            let step = j.try_inverse().expect("shear jacobian is invertible") * res;
            let mut damp = S::one();
            let mut improved = false;
            for _ in 0..24 {
                let cand = u - step * damp;
                let cres = self.shear_cover(&cand) - target;
                if cres.norm() < res.norm() {
                    u = cand;
                    res = cres;
                    improved = true;
                    break;
                }
                damp *= S::of(0.5);
            }
            if !improved {
                break;
            }
        }
        debug_assert!(
            res.norm() < S::of(1e-10).max(S::default_epsilon() * S::of(1e4)),
            "shear inversion stalled at residual {:.3e}",
            res.norm().as_f64()
        );
        TorusPoint::wrap_unchecked(u)
    }
}

impl<S: Real> MapModel<S, 3> for DaModel<S> {
    fn name(&self) -> &'static str {
        "derived_from_anosov"
    }

    fn evaluate(&self, x: &TorusPoint<S, 3>) -> TorusPoint<S, 3> {
        let ax = TorusPoint::wrap_unchecked(self.a * x.coords());
        TorusPoint::wrap_unchecked(self.shear_cover(ax.coords()))
    }

    fn inverse(&self, y: &TorusPoint<S, 3>) -> TorusPoint<S, 3> {
        let pre = self.shear_inverse(y);
        TorusPoint::wrap_unchecked(self.a_inv * pre.coords())
    }

    fn differential(&self, x: &TorusPoint<S, 3>) -> SMatrix<S, 3, 3> {
        let ax = TorusPoint::wrap_unchecked(self.a * x.coords());
        self.shear_jacobian_at(&ax) * self.a
    }

    fn inverse_differential(&self, y: &TorusPoint<S, 3>) -> SMatrix<S, 3, 3> {
        let pre = self.shear_inverse(y);
        self.a_inv
            * self
                .shear_jacobian_at(&pre)
                .try_inverse()
                .expect("shear jacobian is invertible")
    }

    fn evaluate_cover(&self, v: &SVector<S, 3>) -> SVector<S, 3> {
        self.shear_cover(&(self.a * v))
    }
}
