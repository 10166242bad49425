//! Points on the d-torus T^d = R^d / Z^d and lifts to the universal cover.
//!
//! Representatives live in the half-open cube [0,1)^d. The metric is the
//! quotient (nearest-image) Euclidean metric. Nearest-image ties at
//! coordinate displacement 1/2 resolve toward the nonnegative translate, so
//! `wrap_displacement` always lands in [-1/2, 1/2) reflected: each coordinate
//! is in (-1/2, 1/2].

use nalgebra::SVector;

use crate::error::{DynError, Result};
use crate::real::Real;

/// A point of T^d, stored by its canonical representative in [0,1)^d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusPoint<S, const D: usize> {
    coords: SVector<S, D>,
}

impl<S: Real, const D: usize> TorusPoint<S, D> {
    /// Reduce an arbitrary cover point mod Z^d.
    pub fn wrap(v: SVector<S, D>) -> Result<Self> {
        let mut out = SVector::<S, D>::zeros();
        for i in 0..D {
            let x = v[i];
            if !x.is_finite() {
                return Err(DynError::NonFinite);
            }
            let mut f = x - x.floor();
            // x - floor(x) can round up to exactly 1.0 for tiny negative x.
            if f >= S::one() {
                f = S::zero();
            }
            out[i] = f;
        }
        Ok(Self { coords: out })
    }

    /// Like [`wrap`](Self::wrap) but panics on non-finite input. Convenient in
    /// hot loops where finiteness is already guaranteed.
    pub fn wrap_unchecked(v: SVector<S, D>) -> Self {
        Self::wrap(v).expect("finite coordinates")
    }

    pub fn coords(&self) -> &SVector<S, D> {
        &self.coords
    }

    pub fn into_coords(self) -> SVector<S, D> {
        self.coords
    }

    pub fn origin() -> Self {
        Self {
            coords: SVector::zeros(),
        }
    }

    /// Quotient metric: length of the shortest displacement between any lifts.
    pub fn distance(&self, other: &Self) -> S {
        wrap_displacement::<S, D>(&(self.coords - other.coords)).norm()
    }

    /// Displacement from `self` to `other` through the nearest image of `other`.
    pub fn displacement_to(&self, other: &Self) -> SVector<S, D> {
        wrap_displacement::<S, D>(&(other.coords - self.coords))
    }
}

/// Nearest-image representative of a cover displacement; each coordinate of
/// the result lies in (-1/2, 1/2], ties going to +1/2.
pub fn wrap_displacement<S: Real, const D: usize>(v: &SVector<S, D>) -> SVector<S, D> {
    let half = S::of(0.5);
    let mut out = SVector::<S, D>::zeros();
    for i in 0..D {
        // Subtracting ceil(x - 1/2) maps ties at half-integers upward, which
        // is what keeps the +1/2 representative rather than -1/2.
        out[i] = v[i] - (v[i] - half).ceil();
    }
    out
}

/// Free function form of the quotient metric.
pub fn torus_distance<S: Real, const D: usize>(a: &TorusPoint<S, D>, b: &TorusPoint<S, D>) -> S {
    a.distance(b)
}

/// A tangent vector: a base point together with a direction in R^d.
#[derive(Debug, Clone, Copy)]
pub struct TangentVector<S, const D: usize> {
    pub base: TorusPoint<S, D>,
    pub dir: SVector<S, D>,
}

impl<S: Real, const D: usize> TangentVector<S, D> {
    pub fn unit(base: TorusPoint<S, D>, dir: SVector<S, D>) -> Result<Self> {
        let n = dir.norm();
        if !n.is_finite() || n <= S::zero() {
            return Err(DynError::NonFinite);
        }
        Ok(Self {
            base,
            dir: dir / n,
        })
    }
}

/// A finite path lifted to the universal cover.
///
/// `cover[i]` projects to `base[i]`; `offsets[i]` is the integer translate,
/// kept exactly so the projection relation survives floating-point assembly
/// of long paths.
#[derive(Debug, Clone)]
pub struct LiftedPath<S, const D: usize> {
    pub base: Vec<TorusPoint<S, D>>,
    pub cover: Vec<SVector<S, D>>,
    pub offsets: Vec<[i64; D]>,
}

/// Lift a torus path to the cover, starting at the given cover point.
///
/// Each consecutive pair must be closer than 1/2 in the quotient metric so
/// the choice of lift is forced; a wider gap is rejected as ambiguous. The
/// start must project to the first path point.
pub fn canonical_lift<S: Real, const D: usize>(
    points: &[TorusPoint<S, D>],
    start: SVector<S, D>,
) -> Result<LiftedPath<S, D>> {
    let Some(first) = points.first() else {
        return Ok(LiftedPath {
            base: Vec::new(),
            cover: Vec::new(),
            offsets: Vec::new(),
        });
    };
    let start_wrapped = TorusPoint::wrap(start)?;
    if start_wrapped.distance(first) > S::of(1e-12) {
        return Err(DynError::LiftMismatch);
    }

    // Integer offset of `start` relative to the canonical representative.
    let mut offset = [0i64; D];
    for i in 0..D {
        offset[i] = (start[i] - first.coords()[i]).round().as_f64() as i64;
    }

    let half = S::of(0.5);
    let mut base = Vec::with_capacity(points.len());
    let mut cover = Vec::with_capacity(points.len());
    let mut offsets = Vec::with_capacity(points.len());

    let mut prev = *first;
    for (k, p) in points.iter().enumerate() {
        if k > 0 {
            let gap = prev.distance(p);
            if gap >= half {
                return Err(DynError::AmbiguousLift { gap: gap.as_f64() });
            }
            // The nearest-image displacement determines how the integer
            // offset advances: raw difference minus the wrapped difference
            // is an exact (small) integer vector.
            let raw = p.coords() - prev.coords();
            let disp = wrap_displacement::<S, D>(&raw);
            for i in 0..D {
                offset[i] -= (raw[i] - disp[i]).round().as_f64() as i64;
            }
            prev = *p;
        }
        let mut c = *p.coords();
        for i in 0..D {
            c[i] += S::of(offset[i] as f64);
        }
        base.push(*p);
        cover.push(c);
        offsets.push(offset);
    }

    Ok(LiftedPath {
        base,
        cover,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    type P3 = TorusPoint<f64, 3>;

    fn pt(x: f64, y: f64, z: f64) -> P3 {
        P3::wrap(Vector3::new(x, y, z)).unwrap()
    }

    #[test]
    fn wrap_examples() {
        let p = pt(1.25, -0.25, 3.0);
        assert_eq!(*p.coords(), Vector3::new(0.25, 0.75, 0.0));
        let q = pt(-1e-17, 1.0, -3.5);
        assert!(q.coords()[0] >= 0.0 && q.coords()[0] < 1.0);
        assert_eq!(q.coords()[1], 0.0);
        assert_eq!(q.coords()[2], 0.5);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(P3::wrap(Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(P3::wrap(Vector3::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = pt(0.0, 0.0, 0.0);
        let b = pt(0.5, 0.5, 0.5);
        assert_abs_diff_eq!(a.distance(&b), 3f64.sqrt() / 2.0, epsilon = 1e-15);
        let c = pt(0.9, 0.0, 0.0);
        assert_abs_diff_eq!(a.distance(&c), 0.1, epsilon = 1e-15);
        assert_eq!(a.distance(&a), 0.0);
    }

    #[test]
    fn displacement_tie_is_nonnegative() {
        let d = wrap_displacement::<f64, 3>(&Vector3::new(0.5, -0.5, 1.5));
        assert_eq!(d, Vector3::new(0.5, 0.5, 0.5));
        let e = wrap_displacement::<f64, 3>(&Vector3::new(0.4, 0.6, -0.2));
        assert_abs_diff_eq!(e[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(e[2], -0.2, epsilon = 1e-15);
    }

    #[test]
    fn lift_follows_nearest_images() {
        // A path that walks off the fundamental domain: the lift must track
        // the short steps, not the representatives.
        let pts = vec![pt(0.9, 0.0, 0.0), pt(0.05, 0.0, 0.0), pt(0.2, 0.0, 0.0)];
        let lift = canonical_lift(&pts, Vector3::new(0.9, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(lift.cover[1][0], 1.05, epsilon = 1e-15);
        assert_abs_diff_eq!(lift.cover[2][0], 1.2, epsilon = 1e-15);
        assert_eq!(lift.offsets[2], [1, 0, 0]);
        // The float cover projects back within rounding; the exact base and
        // integer offsets are the authoritative decomposition.
        for (c, b) in lift.cover.iter().zip(&lift.base) {
            assert!(P3::wrap(*c).unwrap().distance(b) <= 1e-12);
        }
        // Consecutive cover displacements stay short.
        for w in lift.cover.windows(2) {
            assert!((w[1] - w[0]).norm() < 0.5);
        }
    }

    #[test]
    fn lift_rejects_wide_gap() {
        let pts = vec![pt(0.0, 0.0, 0.0), pt(0.5, 0.5, 0.0)];
        let err = canonical_lift(&pts, Vector3::zeros()).unwrap_err();
        assert!(matches!(err, DynError::AmbiguousLift { .. }));
    }

    #[test]
    fn lift_rejects_mismatched_start() {
        let pts = vec![pt(0.1, 0.0, 0.0)];
        assert!(matches!(
            canonical_lift(&pts, Vector3::zeros()),
            Err(DynError::LiftMismatch)
        ));
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
            let p = pt(x, y, z);
            let q = P3::wrap(*p.coords()).unwrap();
            prop_assert_eq!(p, q);
        }

        #[test]
        fn distance_is_a_metric(
            a in prop::array::uniform3(0.0..1.0f64),
            b in prop::array::uniform3(0.0..1.0f64),
            c in prop::array::uniform3(0.0..1.0f64),
        ) {
            let pa = pt(a[0], a[1], a[2]);
            let pb = pt(b[0], b[1], b[2]);
            let pc = pt(c[0], c[1], c[2]);
            let ab = pa.distance(&pb);
            let ba = pb.distance(&pa);
            prop_assert!((ab - ba).abs() <= 1e-15);
            prop_assert!(ab <= pa.distance(&pc) + pc.distance(&pb) + 1e-12);
            prop_assert!(ab <= 3f64.sqrt() / 2.0 + 1e-15);
        }

        #[test]
        fn displacement_realizes_distance(
            a in prop::array::uniform3(0.0..1.0f64),
            b in prop::array::uniform3(0.0..1.0f64),
        ) {
            let pa = pt(a[0], a[1], a[2]);
            let pb = pt(b[0], b[1], b[2]);
            let d = pa.displacement_to(&pb);
            prop_assert!((d.norm() - pa.distance(&pb)).abs() <= 1e-15);
            // Moving along the displacement reaches b.
            let reached = P3::wrap(pa.coords() + d).unwrap();
            prop_assert!(reached.distance(&pb) <= 1e-12);
        }

        #[test]
        fn lift_roundtrip(
            steps in prop::collection::vec(prop::array::uniform3(-0.2..0.2f64), 1..40),
            start in prop::array::uniform3(0.0..1.0f64),
        ) {
            let mut cur = Vector3::new(start[0], start[1], start[2]);
            let mut pts = vec![P3::wrap(cur).unwrap()];
            for s in &steps {
                cur += Vector3::new(s[0], s[1], s[2]);
                pts.push(P3::wrap(cur).unwrap());
            }
            let lift = canonical_lift(&pts, *pts[0].coords()).unwrap();
            for (c, b) in lift.cover.iter().zip(&lift.base) {
                prop_assert!(P3::wrap(*c).unwrap().distance(b) <= 1e-12);
            }
            for w in lift.cover.windows(2) {
                prop_assert!((w[1] - w[0]).norm() < 0.5);
            }
        }
    }
}
