//! Circle extensions over hyperbolic automorphisms of T^2.
//!
//! Coordinates are (x1, x2, theta); the base map is a unimodular hyperbolic
//! matrix acting on (x1, x2) and the fiber map is
//! `theta -> theta + alpha + c(x) + eps * sin(2 pi theta)` mod 1,
//! with c a real trigonometric polynomial on the base. For eps = 0 and
//! c = 0 the extension is a rigid rotation in the fiber and the center
//! exponent vanishes identically.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2, Vector3};

use crate::error::{DynError, Result};
use crate::linalg;
use crate::real::Real;
use crate::torus::TorusPoint;

use super::{MapModel, SpectrumHint};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Finite real trigonometric polynomial on T^2:
/// c(x) = sum_k a_k cos(2 pi k.x) + b_k sin(2 pi k.x).
#[derive(Debug, Clone, Default)]
pub struct TrigPoly<S> {
    pub terms: Vec<([i64; 2], S, S)>,
}

impl<S: Real> TrigPoly<S> {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// Single term a*cos(2 pi k.x) + b*sin(2 pi k.x).
    pub fn term(k: [i64; 2], a: f64, b: f64) -> Self {
        Self {
            terms: vec![(k, S::of(a), S::of(b))],
        }
    }

    pub fn eval(&self, x: &Vector2<S>) -> S {
        let mut acc = S::zero();
        for &(k, a, b) in &self.terms {
            let phase = S::of(TWO_PI) * (S::of(k[0] as f64) * x[0] + S::of(k[1] as f64) * x[1]);
            acc += a * phase.cos() + b * phase.sin();
        }
        acc
    }

    pub fn gradient(&self, x: &Vector2<S>) -> Vector2<S> {
        let mut g = Vector2::zeros();
        for &(k, a, b) in &self.terms {
            let kv = Vector2::new(S::of(k[0] as f64), S::of(k[1] as f64));
            let phase = S::of(TWO_PI) * kv.dot(x);
            let d = -a * phase.sin() + b * phase.cos();
            g += kv * (S::of(TWO_PI) * d);
        }
        g
    }

    /// sup |c| is bounded by the sum of coefficient magnitudes.
    pub fn sup_bound(&self) -> S {
        self.terms
            .iter()
            .map(|&(_, a, b)| (a * a + b * b).sqrt())
            .fold(S::zero(), |s, t| s + t)
    }
}

#[derive(Debug, Clone)]
pub struct SkewCircleExtension<S> {
    base: [[i64; 2]; 2],
    a: Matrix2<S>,
    a_inv: Matrix2<S>,
    alpha: S,
    eps: S,
    coupling: TrigPoly<S>,
}

impl<S: Real> SkewCircleExtension<S> {
    pub fn new(base: [[i64; 2]; 2], alpha: f64, eps: f64, coupling: TrigPoly<S>) -> Result<Self> {
        if linalg::integer_det(&base).abs() != 1 {
            return Err(DynError::Invalid(format!(
                "base must be unimodular, det = {}",
                linalg::integer_det(&base)
            )));
        }
        let a = linalg::int_to_smatrix::<S, 2>(&base);
        let moduli = linalg::eigen2_moduli(&a);
        if (moduli[0] - S::one()).abs() < S::of(1e-9) || (moduli[1] - S::one()).abs() < S::of(1e-9)
        {
            return Err(DynError::Invalid(
                "base automorphism is not hyperbolic".into(),
            ));
        }
        if TWO_PI * eps.abs() >= 1.0 {
            return Err(DynError::Invalid(format!(
                "fiber map must stay a diffeomorphism: need 2 pi |eps| < 1, got {:.4}",
                TWO_PI * eps.abs()
            )));
        }
        let base_inv = linalg::integer_inverse(&base).expect("unimodular");
        Ok(Self {
            base,
            a,
            a_inv: linalg::int_to_smatrix(&base_inv),
            alpha: S::of(alpha),
            eps: S::of(eps),
            coupling,
        })
    }

    /// Uncoupled extension of the cat map with rotation number `alpha`.
    pub fn cat_rotation(alpha: f64, eps: f64) -> Result<Self> {
        Self::new([[2, 1], [1, 1]], alpha, eps, TrigPoly::zero())
    }

    pub fn eps(&self) -> S {
        self.eps
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }

    pub fn coupling(&self) -> &TrigPoly<S> {
        &self.coupling
    }

    pub fn base_matrix(&self) -> &[[i64; 2]; 2] {
        &self.base
    }

    fn base_of(x: &TorusPoint<S, 3>) -> Vector2<S> {
        Vector2::new(x.coords()[0], x.coords()[1])
    }

    fn fiber_shift(&self, theta: S) -> S {
        self.eps * (S::of(TWO_PI) * theta).sin()
    }

    fn fiber_derivative(&self, theta: S) -> S {
        S::one() + S::of(TWO_PI) * self.eps * (S::of(TWO_PI) * theta).cos()
    }

    /// Invert theta -> theta + alpha + c + eps sin(2 pi theta) for a fixed
    /// base point. The iteration contracts at rate 2 pi |eps| < 1.
    fn fiber_inverse(&self, c: S, theta_out: S) -> S {
        let target = theta_out - self.alpha - c;
        let mut theta = target;
        for _ in 0..64 {
            let next = target - self.fiber_shift(theta);
            if (next - theta).abs() < S::of(1e-16) {
                theta = next;
                break;
            }
            theta = next;
        }
        theta
    }
}

impl<S: Real> MapModel<S, 3> for SkewCircleExtension<S> {
    fn name(&self) -> &'static str {
        "skew_circle_extension"
    }

    fn evaluate(&self, x: &TorusPoint<S, 3>) -> TorusPoint<S, 3> {
        let b = Self::base_of(x);
        let nb = self.a * b;
        let theta = x.coords()[2];
        let ntheta = theta + self.alpha + self.coupling.eval(&b) + self.fiber_shift(theta);
        TorusPoint::wrap_unchecked(Vector3::new(nb[0], nb[1], ntheta))
    }

    fn inverse(&self, y: &TorusPoint<S, 3>) -> TorusPoint<S, 3> {
        let nb = Self::base_of(y);
        let b = self.a_inv * nb;
        let c = self.coupling.eval(&b);
        let theta = self.fiber_inverse(c, y.coords()[2]);
        TorusPoint::wrap_unchecked(Vector3::new(b[0], b[1], theta))
    }

    fn differential(&self, x: &TorusPoint<S, 3>) -> SMatrix<S, 3, 3> {
        let b = Self::base_of(x);
        let g = self.coupling.gradient(&b);
        let fd = self.fiber_derivative(x.coords()[2]);
        SMatrix::<S, 3, 3>::new(
            self.a[(0, 0)],
            self.a[(0, 1)],
            S::zero(),
            self.a[(1, 0)],
            self.a[(1, 1)],
            S::zero(),
            g[0],
            g[1],
            fd,
        )
    }

    fn inverse_differential(&self, y: &TorusPoint<S, 3>) -> SMatrix<S, 3, 3> {
        let pre = self.inverse(y);
        self.differential(&pre)
            .try_inverse()
            .expect("fiber derivative is bounded away from zero")
    }

    fn evaluate_cover(&self, v: &SVector<S, 3>) -> SVector<S, 3> {
        let b = Vector2::new(v[0], v[1]);
        let nb = self.a * b;
        let theta = v[2];
        let ntheta = theta + self.alpha + self.coupling.eval(&b) + self.fiber_shift(theta);
        Vector3::new(nb[0], nb[1], ntheta)
    }

    fn spectrum_hint(&self) -> Option<SpectrumHint<S, 3>> {
        // Constant differential only in the fully uncoupled, eps = 0 case.
        if !self.coupling.terms.is_empty() || self.eps != S::zero() {
            return None;
        }
        let m2 = linalg::eigen2_moduli(&self.a);
        let mut moduli = [m2[0], S::one(), m2[1]];
        moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let (vals2, vecs2) = linalg::real_eigen2(&self.a)?;
        let lift = |v: &Vector2<S>| Vector3::new(v[0], v[1], S::zero());
        Some(SpectrumHint {
            moduli,
            eigenvalues: Some([vals2[0], S::one(), vals2[1]]),
            eigenvectors: Some([
                lift(&vecs2[0]),
                Vector3::new(S::zero(), S::zero(), S::one()),
                lift(&vecs2[1]),
            ]),
        })
    }
}
