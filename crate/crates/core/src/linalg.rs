//! Small dense linear-algebra helpers: exact integer determinants and
//! inverses for toral matrices, closed-form eigenproblems in dimensions 2
//! and 3, and a modified Gram-Schmidt QR with positive diagonal.
//!
//! The eigen routines go through the characteristic polynomial with a
//! Newton polish rather than a general Schur decomposition: the matrices
//! here are tiny, the closed forms are deterministic across platforms, and
//! the polish brings roots to machine accuracy.

use nalgebra::{SMatrix, SVector};

use crate::real::Real;

/// Determinant of an integer matrix, exact in i128 (Laplace expansion; the
/// sizes in this crate are 2 and 3, so the recursion cost is irrelevant).
pub fn integer_det<const D: usize>(m: &[[i64; D]; D]) -> i64 {
    let rows: Vec<Vec<i128>> = m
        .iter()
        .map(|r| r.iter().map(|&x| x as i128).collect())
        .collect();
    let d = det_rec(&rows);
    i64::try_from(d).expect("determinant fits i64")
}

fn det_rec(m: &[Vec<i128>]) -> i128 {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    let mut acc = 0i128;
    for j in 0..n {
        if m[0][j] == 0 {
            continue;
        }
        let minor: Vec<Vec<i128>> = m[1..]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(c, _)| *c != j)
                    .map(|(_, &v)| v)
                    .collect()
            })
            .collect();
        let sign = if j % 2 == 0 { 1 } else { -1 };
        acc += sign * m[0][j] * det_rec(&minor);
    }
    acc
}

/// Exact inverse of a unimodular integer matrix (|det| = 1), via the
/// adjugate. Returns `None` when |det| != 1.
pub fn integer_inverse<const D: usize>(m: &[[i64; D]; D]) -> Option<[[i64; D]; D]> {
    let det = integer_det(m);
    if det != 1 && det != -1 {
        return None;
    }
    let mut inv = [[0i64; D]; D];
    for i in 0..D {
        for j in 0..D {
            // adj[i][j] = cofactor(j, i)
            let minor: Vec<Vec<i128>> = (0..D)
                .filter(|&r| r != j)
                .map(|r| {
                    (0..D)
                        .filter(|&c| c != i)
                        .map(|c| m[r][c] as i128)
                        .collect()
                })
                .collect();
            let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
            let cof = if D == 1 { 1 } else { sign * det_rec(&minor) };
            inv[i][j] = i64::try_from(cof * det as i128).expect("cofactor fits i64");
        }
    }
    Some(inv)
}

pub fn int_to_smatrix<S: Real, const D: usize>(m: &[[i64; D]; D]) -> SMatrix<S, D, D> {
    SMatrix::from_fn(|i, j| S::of(m[i][j] as f64))
}

/// Roots of x^3 - c2 x^2 + c1 x - c0 (the characteristic polynomial of a
/// 3x3 matrix in terms of trace, second invariant, determinant).
pub struct CubicRoots<S> {
    /// Real roots, Newton-polished, unsorted.
    pub real: Vec<S>,
    /// Modulus of the complex-conjugate pair, if present.
    pub pair_modulus: Option<S>,
}

pub fn cubic_roots<S: Real>(c2: S, c1: S, c0: S) -> CubicRoots<S> {
    let third = S::of(1.0 / 3.0);
    // Depress: x = t + c2/3 gives t^3 + p t + q = 0.
    let shift = c2 * third;
    let p = c1 - c2 * c2 * third;
    let q = -c0 + c1 * shift - S::of(2.0 / 27.0) * c2 * c2 * c2;
    // t^3 + p t + q with our sign conventions: expand (t+s)^3 - c2(t+s)^2 + ...
    // q here is the constant term of the depressed cubic.
    let half_q = q * S::of(0.5);
    let disc = half_q * half_q + (p * third) * (p * third) * (p * third);

    let polish = |x0: S| -> S {
        let mut x = x0;
        for _ in 0..4 {
            let f = ((x - c2) * x + c1) * x - c0;
            let df = (S::of(3.0) * x - S::of(2.0) * c2) * x + c1;
            if df.abs() > S::of(1e-300) {
                x -= f / df;
            }
        }
        x
    };

    if disc <= S::zero() {
        // Three real roots: trigonometric form.
        let m = S::of(2.0) * (-p * third).max(S::zero()).sqrt();
        let arg = if m <= S::zero() {
            S::zero()
        } else {
            let c = (S::of(3.0) * q / (p * m)).max(-S::one()).min(S::one());
            c.acos() * third
        };
        let two_pi_3 = S::of(2.0 * std::f64::consts::PI / 3.0);
        let real = (0..3)
            .map(|k| polish(m * (arg - two_pi_3 * S::of_usize(k)).cos() + shift))
            .collect();
        CubicRoots {
            real,
            pair_modulus: None,
        }
    } else {
        // One real root (Cardano), complex pair modulus from the product of
        // roots: r * |z|^2 = c0.
        let s = disc.sqrt();
        let u = cbrt(-half_q + s);
        let v = cbrt(-half_q - s);
        let r = polish(u + v + shift);
        let pair_sq = (c0 / r).abs();
        CubicRoots {
            real: vec![r],
            pair_modulus: Some(pair_sq.sqrt()),
        }
    }
}

fn cbrt<S: Real>(x: S) -> S {
    let ax = x.abs();
    if ax == S::zero() {
        return S::zero();
    }
    let r = ax.powf(S::of(1.0 / 3.0));
    if x < S::zero() {
        -r
    } else {
        r
    }
}

/// Eigenvalue moduli of a 3x3 matrix, descending.
pub fn eigen3_moduli<S: Real>(a: &SMatrix<S, 3, 3>) -> [S; 3] {
    let c2 = a.trace();
    let c1 = minor2(a, 0) + minor2(a, 1) + minor2(a, 2);
    let c0 = a.determinant();
    let roots = cubic_roots(c2, c1, c0);
    let mut mods: Vec<S> = roots.real.iter().map(|r| r.abs()).collect();
    if let Some(m) = roots.pair_modulus {
        mods.push(m);
        mods.push(m);
    }
    mods.sort_by(|x, y| y.partial_cmp(x).unwrap());
    [mods[0], mods[1], mods[2]]
}

fn minor2<S: Real>(a: &SMatrix<S, 3, 3>, k: usize) -> S {
    let (i, j) = match k {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    a[(i, i)] * a[(j, j)] - a[(i, j)] * a[(j, i)]
}

/// All-real simple eigendecomposition of a 3x3 matrix: eigenvalues sorted by
/// descending modulus with matching unit eigenvectors. `None` when a complex
/// pair is present or two moduli coincide within relative 1e-9.
pub fn real_eigen3<S: Real>(a: &SMatrix<S, 3, 3>) -> Option<([S; 3], [SVector<S, 3>; 3])> {
    let c2 = a.trace();
    let c1 = minor2(a, 0) + minor2(a, 1) + minor2(a, 2);
    let c0 = a.determinant();
    let roots = cubic_roots(c2, c1, c0);
    if roots.pair_modulus.is_some() || roots.real.len() != 3 {
        return None;
    }
    let mut vals = roots.real.clone();
    vals.sort_by(|x, y| y.abs().partial_cmp(&x.abs()).unwrap());
    let scale = vals[0].abs().max(S::of(1e-30));
    for w in vals.windows(2) {
        if (w[0].abs() - w[1].abs()).abs() <= S::of(1e-9) * scale {
            return None;
        }
    }
    let mut vecs = [SVector::<S, 3>::zeros(); 3];
    for (k, &lam) in vals.iter().enumerate() {
        vecs[k] = kernel_vector3(&(a - SMatrix::identity() * lam))?;
    }
    Some(([vals[0], vals[1], vals[2]], vecs))
}

/// Unit kernel vector of a (numerically) rank-2 3x3 matrix: the largest
/// cross product of row pairs is orthogonal to the row space.
fn kernel_vector3<S: Real>(b: &SMatrix<S, 3, 3>) -> Option<SVector<S, 3>> {
    let r0 = SVector::<S, 3>::new(b[(0, 0)], b[(0, 1)], b[(0, 2)]);
    let r1 = SVector::<S, 3>::new(b[(1, 0)], b[(1, 1)], b[(1, 2)]);
    let r2 = SVector::<S, 3>::new(b[(2, 0)], b[(2, 1)], b[(2, 2)]);
    let cands = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = cands
        .iter()
        .max_by(|u, v| u.norm().partial_cmp(&v.norm()).unwrap())?;
    let n = best.norm();
    if n <= S::of(1e-14) {
        return None;
    }
    Some(sign_normalize(best / n))
}

/// Eigenvalue moduli of a 2x2 matrix, descending.
pub fn eigen2_moduli<S: Real>(a: &SMatrix<S, 2, 2>) -> [S; 2] {
    let tr = a.trace();
    let det = a.determinant();
    let disc = tr * tr - S::of(4.0) * det;
    if disc >= S::zero() {
        let s = disc.sqrt();
        let l1 = (tr + s) * S::of(0.5);
        let l2 = (tr - s) * S::of(0.5);
        let (m1, m2) = (l1.abs(), l2.abs());
        if m1 >= m2 {
            [m1, m2]
        } else {
            [m2, m1]
        }
    } else {
        let m = det.abs().sqrt();
        [m, m]
    }
}

/// Real simple eigendecomposition of a 2x2 matrix, descending modulus.
pub fn real_eigen2<S: Real>(a: &SMatrix<S, 2, 2>) -> Option<([S; 2], [SVector<S, 2>; 2])> {
    let tr = a.trace();
    let det = a.determinant();
    let disc = tr * tr - S::of(4.0) * det;
    if disc <= S::zero() {
        return None;
    }
    let s = disc.sqrt();
    let mut vals = [(tr + s) * S::of(0.5), (tr - s) * S::of(0.5)];
    if vals[0].abs() < vals[1].abs() {
        vals.swap(0, 1);
    }
    let scale = vals[0].abs().max(S::of(1e-30));
    if (vals[0].abs() - vals[1].abs()).abs() <= S::of(1e-9) * scale {
        return None;
    }
    let mut vecs = [SVector::<S, 2>::zeros(); 2];
    for (k, &lam) in vals.iter().enumerate() {
        let b = a - SMatrix::<S, 2, 2>::identity() * lam;
        // Kernel of a rank-1 2x2 matrix, from whichever row is larger.
        let r0 = SVector::<S, 2>::new(b[(0, 0)], b[(0, 1)]);
        let r1 = SVector::<S, 2>::new(b[(1, 0)], b[(1, 1)]);
        let r = if r0.norm() >= r1.norm() { r0 } else { r1 };
        let v = SVector::<S, 2>::new(-r[1], r[0]);
        let n = v.norm();
        if n <= S::of(1e-14) {
            return None;
        }
        vecs[k] = sign_normalize(v / n);
    }
    Some((vals, vecs))
}

/// Fix the sign of a unit vector: first coordinate of magnitude > 1e-9
/// becomes positive. Keeps eigenvector output deterministic.
pub fn sign_normalize<S: Real, const D: usize>(v: SVector<S, D>) -> SVector<S, D> {
    for i in 0..D {
        if v[i].abs() > S::of(1e-9) {
            return if v[i] < S::zero() { -v } else { v };
        }
    }
    v
}

/// QR factorization by twice-iterated modified Gram-Schmidt, with the sign
/// convention R[i][i] > 0. Two passes keep Q orthogonal to machine
/// precision even for the badly conditioned products that appear in long
/// cocycle iterations.
pub fn mgs_qr<S: Real, const D: usize>(m: &SMatrix<S, D, D>) -> (SMatrix<S, D, D>, SMatrix<S, D, D>) {
    let mut q = *m;
    let mut r = SMatrix::<S, D, D>::zeros();
    for j in 0..D {
        let mut v = q.column(j).into_owned();
        let scale = v.norm();
        for _pass in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let c = qi.dot(&v);
                r[(i, j)] += c;
                v -= qi.into_owned() * c;
            }
        }
        let n = v.norm();
        r[(j, j)] = n;
        // A residual at roundoff scale is noise, not a direction: fall back
        // to a deterministic completion of the orthonormal frame.
        if n > (scale * S::of(1e-13)).max(S::of(1e-300)) {
            v /= n;
        } else {
            // Degenerate column: substitute a deterministic unit vector
            // orthogonal to the previous ones (Gram-Schmidt on basis vectors).
            v = SVector::zeros();
            'outer: for b in 0..D {
                let mut e = SVector::<S, D>::zeros();
                e[b] = S::one();
                for i in 0..j {
                    let qi = q.column(i);
                    let c = qi.dot(&e);
                    e -= qi.into_owned() * c;
                }
                if e.norm() > S::of(0.5) {
                    v = e / e.norm();
                    break 'outer;
                }
            }
        }
        q.set_column(j, &v);
    }
    (q, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix2, Matrix3, Vector3};

    #[test]
    fn integer_det_and_inverse() {
        let cat = [[2i64, 1], [1, 1]];
        assert_eq!(integer_det(&cat), 1);
        let inv = integer_inverse(&cat).unwrap();
        assert_eq!(inv, [[1, -1], [-1, 2]]);

        let m3 = [[2i64, 1, 0], [1, 2, 1], [0, 1, 1]];
        assert_eq!(integer_det(&m3), 1);
        let inv3 = integer_inverse(&m3).unwrap();
        // Multiply back: must be the identity exactly.
        for i in 0..3 {
            for j in 0..3 {
                let s: i64 = (0..3).map(|k| m3[i][k] * inv3[k][j]).sum();
                assert_eq!(s, if i == j { 1 } else { 0 });
            }
        }

        assert_eq!(integer_det(&[[2i64, 0], [0, 2]]), 4);
        assert!(integer_inverse(&[[2i64, 0], [0, 2]]).is_none());
    }

    // Oracle: roots of x^3 - 5x^2 + 6x - 1 by bisection, frozen to full
    // precision. This cubic is the characteristic polynomial of the
    // 3x3 matrix [[2,1,0],[1,2,1],[0,1,1]].
    fn bisect_root(mut lo: f64, mut hi: f64) -> f64 {
        let f = |x: f64| ((x - 5.0) * x + 6.0) * x - 1.0;
        assert!(f(lo) * f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cubic_matches_bisection_oracle() {
        let expected = [
            bisect_root(3.0, 4.0),
            bisect_root(1.0, 2.0),
            bisect_root(0.0, 1.0),
        ];
        // Frozen values for the record.
        assert_abs_diff_eq!(expected[0], 3.2469796037174672, epsilon = 1e-14);
        assert_abs_diff_eq!(expected[1], 1.5549581320873711, epsilon = 1e-14);
        assert_abs_diff_eq!(expected[2], 0.19806226419516171, epsilon = 1e-14);

        let roots = cubic_roots(5.0, 6.0, 1.0);
        assert_eq!(roots.real.len(), 3);
        assert!(roots.pair_modulus.is_none());
        let mut got = roots.real.clone();
        got.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (g, e) in got.iter().zip(&expected) {
            assert_abs_diff_eq!(*g, *e, epsilon = 1e-13);
        }
    }

    #[test]
    fn eigen3_on_m3() {
        let a: Matrix3<f64> = Matrix3::new(2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 1.0);
        let (vals, vecs) = real_eigen3(&a).unwrap();
        assert_abs_diff_eq!(vals[0], 3.2469796037174672, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 1.5549581320873711, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[2], 0.19806226419516171, epsilon = 1e-12);
        for (k, v) in vecs.iter().enumerate() {
            assert_abs_diff_eq!((a * v - v * vals[k]).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-14);
        }
        // Symmetric matrix: eigenvectors orthogonal.
        assert!(vecs[0].dot(&vecs[1]).abs() < 1e-10);
        assert!(vecs[0].dot(&vecs[2]).abs() < 1e-10);
    }

    #[test]
    fn eigen3_complex_pair() {
        // Rotation-by-90-degrees block plus a stretch: eigenvalues 2, ±i.
        let a = Matrix3::new(2.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!(real_eigen3(&a).is_none());
        let m = eigen3_moduli(&a);
        assert_abs_diff_eq!(m[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen2_on_cat_map() {
        let a = Matrix2::new(2.0, 1.0, 1.0, 1.0);
        let (vals, vecs) = real_eigen2(&a).unwrap();
        let golden = (3.0 + 5f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(vals[0], golden, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[1], (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-14);
        for (k, v) in vecs.iter().enumerate() {
            assert!((a * v - v * vals[k]).norm() < 1e-13);
        }
    }

    #[test]
    fn qr_reconstructs_and_is_orthogonal() {
        let a = Matrix3::new(2.0, 1.0, 0.5, 1.0, 2.0, 1.0, 0.25, 1.0, 1.0);
        let (q, r) = mgs_qr(&a);
        assert!((q * r - a).norm() < 1e-13);
        assert!((q.transpose() * q - Matrix3::identity()).norm() < 1e-13);
        for i in 0..3 {
            assert!(r[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn qr_survives_near_singular_columns() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let a = Matrix3::from_columns(&[v, v * (1.0 + 1e-14), Vector3::new(0.0, 0.0, 1.0)]);
        let (q, _r) = mgs_qr(&a);
        assert!((q.transpose() * q - Matrix3::identity()).norm() < 1e-10);
    }
}
