//! Pseudo-orbits and their Newton closure to genuine periodic orbits.
//!
//! The closure problem is a cyclic multiple-shooting system on the cover:
//! unknowns X_0..X_{P-1}, equations f(X_i) - X_{i+1} - k_i = 0 with the
//! integer offsets k_i frozen from the input (each initial residual must be
//! well inside the lift-ambiguity radius 1/2, so Newton cannot silently
//! change homotopy class). The Jacobian is block-bidiagonal plus one corner
//! block; condensing it by eliminating X_1..X_{P-1} as a matrix product
//! would overflow at unstable-eigenvalue growth within ~40 points, so the
//! solve runs a sweep of orthogonal (Householder) eliminations instead:
//! every transform has norm one, the sweep is backward-stable, and memory
//! stays at a few hundred bytes per orbit point.

use std::collections::HashSet;

use nalgebra::{SMatrix, SVector};

use crate::error::{DynError, Result};
use crate::linalg::mgs_qr;
use crate::real::Real;
use crate::systems::MapModel;
use crate::torus::TorusPoint;

/// Lengths of the three blocks a periodic-approximation pseudo-orbit is
/// assembled from: `m` points tracking the previous orbit, `n` transit
/// points leaving it along the leaf, `n_d` points of the dense return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockAnnotation {
    pub m: usize,
    pub n: usize,
    pub n_d: usize,
}

/// A finite orbit up to controlled jumps: `gap` is the largest distance
/// between f(x_i) and x_{i+1} (wrapping around when `cyclic`).
#[derive(Debug, Clone)]
pub struct PseudoOrbit<S, const D: usize> {
    pub points: Vec<TorusPoint<S, D>>,
    pub gap: S,
    pub cyclic: bool,
    pub blocks: Option<BlockAnnotation>,
}

impl<S: Real, const D: usize> PseudoOrbit<S, D> {
    pub fn new<M: MapModel<S, D>>(
        model: &M,
        points: Vec<TorusPoint<S, D>>,
        cyclic: bool,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(DynError::Invalid("empty pseudo-orbit".into()));
        }
        let mut po = Self {
            points,
            gap: S::zero(),
            cyclic,
            blocks: None,
        };
        po.gap = po.recompute_gap(model);
        Ok(po)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest jump, measured fresh from the stored points.
    pub fn recompute_gap<M: MapModel<S, D>>(&self, model: &M) -> S {
        let p = self.points.len();
        let last = if self.cyclic { p } else { p - 1 };
        let mut gap = S::zero();
        for i in 0..last {
            let img = model.evaluate(&self.points[i]);
            gap = gap.max(img.distance(&self.points[(i + 1) % p]));
        }
        gap
    }
}

/// A closed orbit produced by the Newton solve, with its certificates.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit<S, const D: usize> {
    pub points: Vec<TorusPoint<S, D>>,
    /// Final Newton residual (sup over points, cover coordinates).
    pub residual: S,
    /// Largest distance from the source pseudo-orbit.
    pub shadow_distance: S,
    /// Center exponent, when a later stage has computed it.
    pub lambda_c: Option<S>,
    /// Count of contracting directions, when classified.
    pub stable_index: Option<usize>,
}

impl<S: Real, const D: usize> PeriodicOrbit<S, D> {
    /// Length of the stored listing (a whole multiple of the primitive
    /// period).
    pub fn period(&self) -> usize {
        self.points.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Convergence threshold on the sup-norm residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Accept the orbit only if it stays within `shadow_factor * gap` of
    /// the pseudo-orbit.
    pub shadow_factor: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 30,
            shadow_factor: 50.0,
        }
    }
}

/// Initial residuals must stay inside this radius for the frozen integer
/// offsets to pin a homotopy class with margin (ambiguity starts at 1/2).
const HOMOTOPY_RADIUS: f64 = 0.25;

/// One stored elimination step: after the orthogonal transform, the top
/// rows read R x_i = rhs - s_next x_{i+1} - t_zero x_0 with R upper
/// triangular. Everything is inline, so a Vec of these is one allocation.
#[derive(Clone, Copy)]
struct Stored<S, const D: usize> {
    r: SMatrix<S, D, D>,
    s_next: SMatrix<S, D, D>,
    t_zero: SMatrix<S, D, D>,
    rhs: SVector<S, D>,
}

/// Work rows for the sweep; `a` multiplies the variable being eliminated,
/// `b` the next variable, `c` the wrap-around variable X_0.
#[derive(Clone, Copy)]
struct Row<S, const D: usize> {
    a: SVector<S, D>,
    b: SVector<S, D>,
    c: SVector<S, D>,
    r: S,
}

impl<S: Real, const D: usize> Row<S, D> {
    fn zero() -> Self {
        Self {
            a: SVector::zeros(),
            b: SVector::zeros(),
            c: SVector::zeros(),
            r: S::zero(),
        }
    }
}

/// Householder-eliminate the `a` columns of a 2D-row stack in place.
/// Returns false if a pivot column vanished (singular Jacobian).
fn eliminate_a<S: Real, const D: usize>(rows: &mut [Row<S, D>]) -> bool {
    let nrows = rows.len();
    let mut u = [S::zero(); 8];
    debug_assert!(nrows <= 8);
    for j in 0..D {
        let mut nrm2 = S::zero();
        for k in j..nrows {
            nrm2 += rows[k].a[j] * rows[k].a[j];
        }
        let nrm = nrm2.sqrt();
        if !(nrm > S::of(1e-300)) {
            return false;
        }
        let head = rows[j].a[j];
        let alpha = if head >= S::zero() { -nrm } else { nrm };
        for k in j..nrows {
            u[k] = rows[k].a[j];
        }
        u[j] -= alpha;
        let mut unrm2 = S::zero();
        for k in j..nrows {
            unrm2 += u[k] * u[k];
        }
        if unrm2 > S::of(1e-300) {
            // Apply I - 2 u u^T / |u|^2 to every remaining column.
            let scale = S::of(2.0) / unrm2;
            for col in j + 1..D {
                let mut dot = S::zero();
                for k in j..nrows {
                    dot += u[k] * rows[k].a[col];
                }
                let f = dot * scale;
                for k in j..nrows {
                    rows[k].a[col] -= f * u[k];
                }
            }
            for col in 0..D {
                let mut dot = S::zero();
                for k in j..nrows {
                    dot += u[k] * rows[k].b[col];
                }
                let f = dot * scale;
                for k in j..nrows {
                    rows[k].b[col] -= f * u[k];
                }
                let mut dot = S::zero();
                for k in j..nrows {
                    dot += u[k] * rows[k].c[col];
                }
                let f = dot * scale;
                for k in j..nrows {
                    rows[k].c[col] -= f * u[k];
                }
            }
            let mut dot = S::zero();
            for k in j..nrows {
                dot += u[k] * rows[k].r;
            }
            let f = dot * scale;
            for k in j..nrows {
                rows[k].r -= f * u[k];
            }
        }
        rows[j].a[j] = alpha;
        for k in j + 1..nrows {
            rows[k].a[j] = S::zero();
        }
    }
    true
}

/// Dense D x D solve by Gaussian elimination with partial pivoting.
/// (nalgebra's own LU is not available for fully generic `Const<D>`.)
fn dense_solve<S: Real, const D: usize>(
    m: &SMatrix<S, D, D>,
    v: &SVector<S, D>,
) -> Option<SVector<S, D>> {
    let mut a = *m;
    let mut b = *v;
    for col in 0..D {
        let mut piv = col;
        for r in col + 1..D {
            if a[(r, col)].abs() > a[(piv, col)].abs() {
                piv = r;
            }
        }
        if !(a[(piv, col)].abs() > S::of(1e-300)) {
            return None;
        }
        if piv != col {
            a.swap_rows(piv, col);
            b.swap_rows(piv, col);
        }
        for r in col + 1..D {
            let f = a[(r, col)] / a[(col, col)];
            for c in col..D {
                let sub = f * a[(col, c)];
                a[(r, c)] -= sub;
            }
            let sub = f * b[col];
            b[r] -= sub;
        }
    }
    let mut x = SVector::<S, D>::zeros();
    for irev in 0..D {
        let i = D - 1 - irev;
        let mut acc = b[i];
        for j in i + 1..D {
            acc -= a[(i, j)] * x[j];
        }
        x[i] = acc / a[(i, i)];
    }
    Some(x)
}

/// Solve R x = v with R upper triangular (as produced by `eliminate_a`).
fn upper_solve<S: Real, const D: usize>(r: &SMatrix<S, D, D>, v: &SVector<S, D>) -> Option<SVector<S, D>> {
    let mut x = SVector::<S, D>::zeros();
    for irev in 0..D {
        let i = D - 1 - irev;
        let mut acc = v[i];
        for j in i + 1..D {
            acc -= r[(i, j)] * x[j];
        }
        if !(r[(i, i)].abs() > S::of(1e-300)) {
            return None;
        }
        x[i] = acc / r[(i, i)];
    }
    Some(x)
}

/// Solve the cyclic linearized system A_i dx_i - dx_{i+1 mod P} = rhs_i.
fn solve_cyclic<S: Real, const D: usize>(
    jacobians: &[SMatrix<S, D, D>],
    rhs: &[SVector<S, D>],
    steps: &mut Vec<Stored<S, D>>,
) -> Option<Vec<SVector<S, D>>> {
    let p = jacobians.len();
    if p == 1 {
        let m = jacobians[0] - SMatrix::<S, D, D>::identity();
        let dx = dense_solve(&m, &rhs[0])?;
        return Some(vec![dx]);
    }

    steps.clear();
    steps.reserve(p - 1);

    // State: U dx_i + V dx_0 = s, carried along the sweep. Seeded from the
    // first equation A_0 dx_0 - dx_1 = rhs_0.
    let mut state_u: SMatrix<S, D, D> = -SMatrix::<S, D, D>::identity();
    let mut state_v: SMatrix<S, D, D> = jacobians[0];
    let mut state_s: SVector<S, D> = rhs[0];

    let mut rows = vec![Row::<S, D>::zero(); 2 * D];
    for i in 1..p {
        let last = i == p - 1;
        // Top: the carried state on (x_i, x_0). Bottom: equation i, which
        // couples x_i to x_{i+1} (or back to x_0 on the last step).
        for rr in 0..D {
            for cc in 0..D {
                rows[rr].a[cc] = state_u[(rr, cc)];
                rows[rr].b[cc] = S::zero();
                rows[rr].c[cc] = state_v[(rr, cc)];
                rows[D + rr].a[cc] = jacobians[i][(rr, cc)];
                rows[D + rr].b[cc] = S::zero();
                rows[D + rr].c[cc] = S::zero();
            }
            rows[rr].r = state_s[rr];
            rows[D + rr].r = rhs[i][rr];
            if last {
                rows[D + rr].c[rr] -= S::one();
            } else {
                rows[D + rr].b[rr] = -S::one();
            }
        }
        if !eliminate_a(&mut rows) {
            return None;
        }
        let mut st = Stored {
            r: SMatrix::zeros(),
            s_next: SMatrix::zeros(),
            t_zero: SMatrix::zeros(),
            rhs: SVector::zeros(),
        };
        for rr in 0..D {
            for cc in 0..D {
                st.r[(rr, cc)] = rows[rr].a[cc];
                st.s_next[(rr, cc)] = rows[rr].b[cc];
                st.t_zero[(rr, cc)] = rows[rr].c[cc];
            }
            st.rhs[rr] = rows[rr].r;
        }
        steps.push(st);
        if last {
            // Bottom rows: b-part is zero by construction here; the
            // remaining system on x_0 sits in the c-part.
            let mut w = SMatrix::<S, D, D>::zeros();
            let mut t = SVector::<S, D>::zeros();
            for rr in 0..D {
                for cc in 0..D {
                    w[(rr, cc)] = rows[D + rr].c[cc];
                }
                t[rr] = rows[D + rr].r;
            }
            let dx0 = dense_solve(&w, &t)?;
            // Back-substitute x_{p-1}, ..., x_1.
            let mut dxs = vec![SVector::<S, D>::zeros(); p];
            dxs[0] = dx0;
            let mut next = dx0; // x_{i+1} seen from step i = p-1 is x_0
            for irev in 0..p - 1 {
                let i = p - 1 - irev;
                let st = &steps[i - 1];
                let v = st.rhs - st.s_next * next - st.t_zero * dx0;
                let dxi = upper_solve(&st.r, &v)?;
                dxs[i] = dxi;
                next = dxi;
            }
            return Some(dxs);
        }
        for rr in 0..D {
            for cc in 0..D {
                state_u[(rr, cc)] = rows[D + rr].b[cc];
                state_v[(rr, cc)] = rows[D + rr].c[cc];
            }
            state_s[rr] = rows[D + rr].r;
        }
    }
    unreachable!("loop returns on the last step");
}

/// Bounded-direction solve for the same cyclic system, used when the exact
/// direction is unusable.
///
/// On a chain that tracks a center-contracting orbit for a long block and
/// then runs a long center-expanding excursion, the exact inverse contains
/// an impulse response that grows like the product of the center multipliers
/// across the excursion. Once that product passes ~1e16, residuals at the
/// rounding floor blow up into an astronomically large "correction", and no
/// damping recovers a usable step. This solve gives up exactness instead:
/// it carries the three invariant line fields along the chain and routes
/// each scalar recursion in its bounded direction -- unstable backward,
/// stable forward, center piecewise: forward across contracting stretches,
/// backward across expanding ones. Each hand-off from a contracting stretch
/// into an expanding one leaves its connecting equation unsolved; that
/// defect stays at the size of the local residual, which for the chains
/// assembled here (seams aligned with unstable leaves, interior points exact
/// iterates) is the rounding floor, so the outer iteration still contracts.
fn solve_routed<S: Real, const D: usize>(
    jacobians: &[SMatrix<S, D, D>],
    rhs: &[SVector<S, D>],
) -> Option<Vec<SVector<S, D>>> {
    let p = jacobians.len();
    if D != 3 || p < 4 {
        return None;
    }
    let inverses: Vec<SMatrix<S, D, D>> = jacobians
        .iter()
        .map(|j| j.try_inverse())
        .collect::<Option<Vec<_>>>()?;

    let unit = |v: SVector<S, D>| -> Option<SVector<S, D>> {
        let n = v.norm();
        if n.is_finite() && n > S::of(1e-300) {
            Some(v / n)
        } else {
            None
        }
    };
    let seed = |k: usize| -> SVector<S, D> {
        let raw = [
            [1.0, 0.75, 0.5],
            [0.25, -1.0, 0.65],
            [-0.7, 0.4, 1.0],
            [0.6, 0.9, -0.45],
        ][k];
        SVector::from_fn(|i, _| S::of(raw[i]))
    };

    // Line fields along the chain, as in the bundle estimators: e_u and the
    // center-unstable normal travel forward, e_s and the center-stable
    // normal backward; the center line is the intersection of the two
    // planes. Two warm laps wash out the seeds before the recording lap.
    let mut e_u = vec![SVector::<S, D>::zeros(); p];
    let mut n_cu = vec![SVector::<S, D>::zeros(); p];
    {
        let mut u = unit(seed(0))?;
        let mut ncu = unit(seed(1))?;
        for _ in 0..2 {
            for i in 0..p {
                u = unit(jacobians[i] * u)?;
                ncu = unit(inverses[i].transpose() * ncu)?;
            }
        }
        for i in 0..p {
            e_u[i] = u;
            n_cu[i] = ncu;
            u = unit(jacobians[i] * u)?;
            ncu = unit(inverses[i].transpose() * ncu)?;
        }
    }
    let mut e_s = vec![SVector::<S, D>::zeros(); p];
    let mut n_cs = vec![SVector::<S, D>::zeros(); p];
    {
        let mut s = unit(seed(2))?;
        let mut ncs = unit(seed(3))?;
        for _ in 0..2 {
            for irev in 0..p {
                let i = p - 1 - irev;
                s = unit(inverses[i] * s)?;
                ncs = unit(jacobians[i].transpose() * ncs)?;
            }
        }
        e_s[0] = s;
        n_cs[0] = ncs;
        for irev in 0..p - 1 {
            let i = p - 1 - irev;
            s = unit(inverses[i] * s)?;
            ncs = unit(jacobians[i].transpose() * ncs)?;
            e_s[i] = s;
            n_cs[i] = ncs;
        }
    }

    // Frames [e_u | e_c | e_s]. Because each carried object satisfies its
    // recursion exactly, the change of frame across one step is exactly
    // diagonal and the system falls apart into three scalar recursions
    // gamma_i c_i - c_{i+1} = beta_i.
    let mut frames = Vec::with_capacity(p);
    let mut frame_inv = Vec::with_capacity(p);
    for i in 0..p {
        let (a, b) = (&n_cu[i], &n_cs[i]);
        let cross = SVector::<S, D>::from_fn(|k, _| match k {
            0 => a[1] * b[2] - a[2] * b[1],
            1 => a[2] * b[0] - a[0] * b[2],
            _ => a[0] * b[1] - a[1] * b[0],
        });
        let e_c = unit(cross)?;
        let mut f = SMatrix::<S, D, D>::zeros();
        for k in 0..D {
            f[(k, 0)] = e_u[i][k];
            f[(k, 1)] = e_c[k];
            f[(k, 2)] = e_s[i][k];
        }
        let fi = f.try_inverse()?;
        frames.push(f);
        frame_inv.push(fi);
    }
    let mut gamma = vec![[S::zero(); 3]; p];
    let mut beta = vec![[S::zero(); 3]; p];
    for i in 0..p {
        let ni = (i + 1) % p;
        let m = frame_inv[ni] * jacobians[i] * frames[i];
        let b = frame_inv[ni] * rhs[i];
        for k in 0..3 {
            gamma[i][k] = m[(k, k)];
            if !gamma[i][k].is_finite() || gamma[i][k].abs() < S::of(1e-12) {
                return None;
            }
            beta[i][k] = b[k];
        }
    }

    // Unstable: backward is contracting; the second lap absorbs the wrap.
    let mut cu = vec![S::zero(); p];
    for _ in 0..2 {
        for irev in 0..p {
            let i = p - 1 - irev;
            cu[i] = (cu[(i + 1) % p] + beta[i][0]) / gamma[i][0];
        }
    }
    // Stable: forward is contracting.
    let mut cs = vec![S::zero(); p];
    for _ in 0..2 {
        for i in 0..p {
            cs[(i + 1) % p] = gamma[i][2] * cs[i] - beta[i][2];
        }
    }
    // Center: routed by the local multiplier.
    let expanding: Vec<bool> = (0..p).map(|i| gamma[i][1].abs() >= S::one()).collect();
    let n_exp = expanding.iter().filter(|&&e| e).count();
    let mut cc = vec![S::zero(); p];
    if n_exp == p {
        for _ in 0..2 {
            for irev in 0..p {
                let i = p - 1 - irev;
                cc[i] = (cc[(i + 1) % p] + beta[i][1]) / gamma[i][1];
            }
        }
    } else if n_exp == 0 {
        for _ in 0..2 {
            for i in 0..p {
                cc[(i + 1) % p] = gamma[i][1] * cc[i] - beta[i][1];
            }
        }
    } else {
        // Forward across each contracting stretch from a zero hand-off...
        for j0 in 0..p {
            if expanding[(j0 + p - 1) % p] && !expanding[j0] {
                let mut j = j0;
                while !expanding[j] {
                    let nj = (j + 1) % p;
                    cc[nj] = gamma[j][1] * cc[j] - beta[j][1];
                    j = nj;
                }
            }
        }
        // ...then backward across each expanding stretch, overwriting the
        // stretch head; the contracting equation feeding each head is the
        // one left to the outer iteration.
        for r0 in 0..p {
            if expanding[r0] && !expanding[(r0 + 1) % p] {
                let mut j = r0;
                let mut carry = S::zero();
                loop {
                    carry = (carry + beta[j][1]) / gamma[j][1];
                    cc[j] = carry;
                    let pj = (j + p - 1) % p;
                    if !expanding[pj] {
                        break;
                    }
                    j = pj;
                }
            }
        }
    }

    Some(
        (0..p)
            .map(|i| {
                let mut c = SVector::<S, D>::zeros();
                c[0] = cu[i];
                c[1] = cc[i];
                c[2] = cs[i];
                frames[i] * c
            })
            .collect(),
    )
}

fn residuals<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    xs: &[SVector<S, D>],
    offsets: &[SVector<S, D>],
    out: &mut Vec<SVector<S, D>>,
) -> S {
    let p = xs.len();
    out.clear();
    let mut worst = S::zero();
    for i in 0..p {
        let img = model.evaluate_cover(&xs[i]);
        let r = img - xs[(i + 1) % p] - offsets[i];
        worst = worst.max(r.amax());
        out.push(r);
    }
    worst
}

/// Close a cyclic pseudo-orbit into a genuine periodic orbit.
///
/// The returned orbit is re-verified by direct re-iteration (closure within
/// 10x tolerance) and must shadow the input within
/// `shadow_factor * gap`, else the run is rejected.
pub fn newton_close<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    po: &PseudoOrbit<S, D>,
    opts: &NewtonOptions,
) -> Result<PeriodicOrbit<S, D>> {
    if !po.cyclic {
        return Err(DynError::Invalid(
            "newton closure needs a cyclic pseudo-orbit".into(),
        ));
    }
    let p = po.len();
    let tol = S::of(opts.tol);

    let mut xs: Vec<SVector<S, D>> = po.points.iter().map(|q| *q.coords()).collect();

    // Freeze the integer offsets from the input points; they define the
    // homotopy class Newton is confined to.
    let mut offsets = Vec::with_capacity(p);
    for i in 0..p {
        let img = model.evaluate_cover(&xs[i]);
        let raw = img - xs[(i + 1) % p];
        let k = SVector::<S, D>::from_fn(|d, _| raw[d].round());
        let res = (raw - k).amax();
        if !(res.as_f64() < HOMOTOPY_RADIUS) {
            return Err(DynError::GapTooLarge {
                gap: res.as_f64(),
                bound: HOMOTOPY_RADIUS,
            });
        }
        offsets.push(k);
    }

    let mut res_vec: Vec<SVector<S, D>> = Vec::with_capacity(p);
    let mut trial_vec: Vec<SVector<S, D>> = Vec::with_capacity(p);
    let mut steps: Vec<Stored<S, D>> = Vec::new();
    let mut res = residuals(model, &xs, &offsets, &mut res_vec);
    let mut iterations = 0usize;
    let mut stalls = 0usize;

    while res >= tol {
        if iterations >= opts.max_iter || !res.is_finite() || res.as_f64() > 0.5 {
            return Err(DynError::NewtonDiverged {
                residual: res.as_f64(),
                iterations,
            });
        }
        let jac: Vec<SMatrix<S, D, D>> = xs
            .iter()
            .map(|v| model.differential(&TorusPoint::wrap_unchecked(*v)))
            .collect();
        let neg_rhs: Vec<SVector<S, D>> = res_vec.iter().map(|r| -*r).collect();

        // The condensed solve is exact and quadratically convergent, but on
        // chains with a long center-expanding excursion the exact direction
        // amplifies rounding-floor residuals beyond use; switch to the
        // routed solve whenever the step is out of all proportion to the
        // residual (or the exact solve failed outright).
        let cap = (res * S::of(1e5)).min(S::of(0.25));
        let exact = solve_cyclic(&jac, &neg_rhs, &mut steps).filter(|d| {
            let worst = d.iter().map(|v| v.amax()).fold(S::zero(), |a, b| a.max(b));
            worst.is_finite() && worst <= cap
        });
        let mut tried_routed = exact.is_none();
        let Some(mut dxs) = exact.or_else(|| solve_routed(&jac, &neg_rhs)) else {
            return Err(DynError::NewtonDiverged {
                residual: res.as_f64(),
                iterations,
            });
        };

        // Damped acceptance: halve the step until the residual drops; if a
        // full sweep of halvings goes nowhere, retry once with the routed
        // direction before giving up.
        let mut accepted = false;
        loop {
            let mut damp = S::one();
            for _ in 0..24 {
                let trial: Vec<SVector<S, D>> = (0..p).map(|i| xs[i] + dxs[i] * damp).collect();
                let tres = residuals(model, &trial, &offsets, &mut trial_vec);
                if tres < res || tres < tol {
                    if tres > res * S::of(0.9) {
                        stalls += 1;
                    } else {
                        stalls = 0;
                    }
                    xs = trial;
                    res = tres;
                    std::mem::swap(&mut res_vec, &mut trial_vec);
                    accepted = true;
                    break;
                }
                damp *= S::of(0.5);
            }
            if accepted || tried_routed {
                break;
            }
            tried_routed = true;
            match solve_routed(&jac, &neg_rhs) {
                Some(d) => dxs = d,
                None => break,
            }
        }
        iterations += 1;
        if !accepted || stalls >= 4 {
            return Err(DynError::NewtonDiverged {
                residual: res.as_f64(),
                iterations,
            });
        }
    }

    let points: Vec<TorusPoint<S, D>> = xs
        .iter()
        .map(|v| TorusPoint::wrap_unchecked(*v))
        .collect();

    // Independent closure check on the wrapped orbit.
    let mut worst = S::zero();
    for i in 0..p {
        let img = model.evaluate(&points[i]);
        worst = worst.max(img.distance(&points[(i + 1) % p]));
    }
    if worst > tol * S::of(10.0) {
        return Err(DynError::NewtonDiverged {
            residual: worst.as_f64(),
            iterations,
        });
    }

    let mut shadow = S::zero();
    for i in 0..p {
        shadow = shadow.max(points[i].distance(&po.points[i]));
    }
    let bound = S::of(opts.shadow_factor) * po.gap;
    if shadow > bound {
        return Err(DynError::ShadowEscaped {
            distance: shadow.as_f64(),
            bound: bound.as_f64(),
        });
    }

    Ok(PeriodicOrbit {
        points,
        residual: res,
        shadow_distance: shadow,
        lambda_c: None,
        stable_index: None,
    })
}

/// Multiplier data of a closed orbit: per-period log moduli of the linear
/// return map, descending.
#[derive(Debug, Clone)]
pub struct OrbitClass<S, const D: usize> {
    /// log |multiplier| over one full listing, descending.
    pub log_moduli: [S; D],
    /// exp of the above; can overflow to infinity on very long orbits, the
    /// logs are the primary data.
    pub moduli: [S; D],
    /// Count of contracting directions (log modulus < 0).
    pub stable_index: usize,
    /// Some multiplier modulus within 1e-10 of one: the orbit is not
    /// hyperbolic and index-based reasoning does not apply.
    pub marginal: bool,
}

/// Multipliers of the return map along a closed orbit by whole-lap QR
/// iteration (stable for any period; a direct matrix product overflows).
pub fn classify_periodic<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    cycle: &[TorusPoint<S, D>],
) -> Result<OrbitClass<S, D>> {
    if cycle.is_empty() {
        return Err(DynError::Invalid("empty cycle".into()));
    }
    let p = cycle.len();
    let closure = model.evaluate(&cycle[p - 1]).distance(&cycle[0]);
    if closure.as_f64() > 1e-8 {
        return Err(DynError::Invalid(format!(
            "not a closed orbit: closure error {:.3e}",
            closure.as_f64()
        )));
    }

    let mut q = SMatrix::<S, D, D>::identity();
    let mut prev: Option<[S; D]> = None;
    for _lap in 0..200 {
        let mut sums = [S::zero(); D];
        for x in cycle {
            let b = model.differential(x) * q;
            let (nq, r) = mgs_qr(&b);
            q = nq;
            for i in 0..D {
                sums[i] += r[(i, i)].ln();
            }
        }
        if let Some(pr) = prev {
            let mut settled = true;
            for i in 0..D {
                let scale = S::one().max(sums[i].abs());
                if (sums[i] - pr[i]).abs() > S::of(1e-11) * scale {
                    settled = false;
                }
            }
            if settled {
                let mut logs = sums;
                logs.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let stable_index = logs.iter().filter(|&&l| l < S::zero()).count();
                // |e^l - 1| < 1e-10 iff |l| < 1e-10 to first order, which
                // is exact at this scale.
                let marginal = logs.iter().any(|l| l.abs() < S::of(1e-10));
                let moduli = logs.map(|l| l.exp());
                return Ok(OrbitClass {
                    log_moduli: logs,
                    moduli,
                    stable_index,
                    marginal,
                });
            }
        }
        prev = Some(sums);
    }
    Err(DynError::SplittingUnresolved)
}

/// Do two equal-length closed listings describe the same orbit, up to a
/// cyclic rotation, within `tol` pointwise?
pub fn cyclic_match<S: Real, const D: usize>(
    a: &[TorusPoint<S, D>],
    b: &[TorusPoint<S, D>],
    tol: S,
) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let p = a.len();
    'rot: for shift in 0..p {
        for i in 0..p {
            if a[i].distance(&b[(i + shift) % p]) > tol {
                continue 'rot;
            }
        }
        return true;
    }
    false
}

/// Smallest d dividing the listing length such that rotating by d maps the
/// listing onto itself within `tol`.
pub fn primitive_period<S: Real, const D: usize>(points: &[TorusPoint<S, D>], tol: S) -> usize {
    let p = points.len();
    'cand: for d in 1..=p {
        if p % d != 0 {
            continue;
        }
        for i in 0..p {
            if points[i].distance(&points[(i + d) % p]) > tol {
                continue 'cand;
            }
        }
        return d;
    }
    p
}

/// Keep one representative per orbit (cyclic-rotation identification).
pub fn dedup_orbits<S: Real, const D: usize>(
    orbits: Vec<PeriodicOrbit<S, D>>,
    tol: S,
) -> Vec<PeriodicOrbit<S, D>> {
    let mut kept: Vec<PeriodicOrbit<S, D>> = Vec::new();
    for orbit in orbits {
        if !kept
            .iter()
            .any(|k| cyclic_match(&k.points, &orbit.points, tol))
        {
            kept.push(orbit);
        }
    }
    kept
}

/// Everything a grid census found at one period level.
#[derive(Debug, Clone)]
pub struct CensusLevel<S: Real, const D: usize> {
    /// The iterate whose fixed points were counted.
    pub period: usize,
    /// Distinct solutions of f^period(x) = x, lower periods included.
    pub point_count: usize,
    /// Deduplicated closed listings of length `period` that contributed at
    /// least one fresh point, in discovery order.
    pub orbits: Vec<PeriodicOrbit<S, D>>,
    /// Largest closing residual across the kept listings.
    pub worst_residual: S,
}

const CENSUS_CELLS: i64 = 100_000;

fn census_key<S: Real, const D: usize>(q: &TorusPoint<S, D>) -> [i64; D] {
    let mut key = [0i64; D];
    for a in 0..D {
        key[a] = (q.coords()[a].as_f64() * 1e5).round() as i64 % CENSUS_CELLS;
    }
    key
}

// Converged copies of one point can straddle a rounding boundary of the
// counting lattice; marking the whole 3^D key neighborhood makes the count
// immune to that.
fn mark_census_neighborhood<const D: usize>(seen: &mut HashSet<[i64; D]>, key: [i64; D]) {
    let mut offs = [-1i64; D];
    loop {
        let mut cell = [0i64; D];
        for a in 0..D {
            cell[a] = (key[a] + offs[a]).rem_euclid(CENSUS_CELLS);
        }
        seen.insert(cell);
        let mut a = 0;
        loop {
            if a == D {
                return;
            }
            offs[a] += 1;
            if offs[a] <= 1 {
                break;
            }
            offs[a] = -1;
            a += 1;
        }
    }
}

/// Grid-seeded Newton census of the periodic points of f, f^2, ..,
/// f^{max_period}.
///
/// At level k every grid point (resolution `grid_per_axis(k)` per axis)
/// whose period-k closing jump already lies inside the lift-ambiguity
/// radius seeds a cyclic closure; converged solutions are counted once each
/// on a 1e-5 rounding lattice. For an expanding linear model a resolution
/// of ~3.3 * lambda_max^k per axis is enough for the closure basins to
/// cover every solution (the basin radius shrinks like lambda_max^{-k}).
pub fn periodic_census<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    max_period: usize,
    grid_per_axis: impl Fn(usize) -> usize,
) -> Vec<CensusLevel<S, D>> {
    let opts = NewtonOptions {
        // Seeds sit a whole grid cell from the solution, so the shadowing
        // ratio carries no information here; only the residual gate counts.
        shadow_factor: 1e18,
        ..NewtonOptions::default()
    };
    let mut levels = Vec::with_capacity(max_period);
    for k in 1..=max_period {
        let res = grid_per_axis(k).max(1);
        let mut seen: HashSet<[i64; D]> = HashSet::new();
        let mut point_count = 0usize;
        let mut found: Vec<PeriodicOrbit<S, D>> = Vec::new();
        let mut worst = S::zero();
        let total = res.pow(D as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut c = SVector::<S, D>::zeros();
            for a in 0..D {
                c[a] = S::of((rem % res) as f64 / res as f64);
                rem /= res;
            }
            let g = TorusPoint::wrap(c).expect("grid coordinates are finite");
            let mut cur = g;
            let mut seed_pts = Vec::with_capacity(k);
            for _ in 0..k {
                seed_pts.push(cur);
                cur = model.evaluate(&cur);
            }
            // The closing jump must already be inside the homotopy radius.
            if cur.distance(&g).as_f64() >= 0.25 {
                continue;
            }
            let Ok(po) = PseudoOrbit::new(model, seed_pts, true) else {
                continue;
            };
            let Ok(orbit) = newton_close(model, &po, &opts) else {
                continue;
            };
            let mut fresh = false;
            for q in &orbit.points {
                let key = census_key(q);
                if !seen.contains(&key) {
                    point_count += 1;
                    fresh = true;
                    mark_census_neighborhood(&mut seen, key);
                }
            }
            if fresh {
                worst = worst.max(orbit.residual);
                found.push(orbit);
            }
        }
        levels.push(CensusLevel {
            period: k,
            point_count,
            orbits: dedup_orbits(found, S::of(1e-8)),
            worst_residual: worst,
        });
    }
    levels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{LinearToral, SkewCircleExtension};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Vector2, Vector3};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type P2 = TorusPoint<f64, 2>;
    type P3 = TorusPoint<f64, 3>;

    /// Exact cycle of an integer matrix on rationals with denominator
    /// `den`, traced mod den (float iteration would shear off in ~30
    /// steps).
    fn rational_cycle_3(num: [i64; 3], den: i64) -> Vec<P3> {
        let m = [[2i64, 1, 0], [1, 2, 1], [0, 1, 1]];
        let start = num.map(|x| x.rem_euclid(den));
        let mut cycle = Vec::new();
        let mut v = start;
        loop {
            cycle.push(
                P3::wrap(Vector3::new(
                    v[0] as f64 / den as f64,
                    v[1] as f64 / den as f64,
                    v[2] as f64 / den as f64,
                ))
                .unwrap(),
            );
            v = [0, 1, 2].map(|i| {
                (0..3)
                    .map(|j| m[i][j] * v[j])
                    .sum::<i64>()
                    .rem_euclid(den)
            });
            if v == start {
                break;
            }
            assert!(cycle.len() < 1_000_000);
        }
        cycle
    }

    /// Some exact cycle of length exactly `want` mod `den`, by scanning
    /// residues.
    fn find_cycle_of_length(den: i64, want: usize) -> Vec<P3> {
        for a in 0..den {
            for b in 0..den {
                for c in 0..den {
                    if (a, b, c) == (0, 0, 0) {
                        continue;
                    }
                    let cyc = rational_cycle_3([a, b, c], den);
                    if cyc.len() == want {
                        return cyc;
                    }
                }
            }
        }
        panic!("no cycle of length {want} mod {den}");
    }

    fn perturbed(cycle: &[P3], scale: f64, seed: u64) -> Vec<P3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cycle
            .iter()
            .map(|p| {
                let n = Vector3::from_fn(|_, _| rng.gen::<f64>() * 2.0 - 1.0);
                P3::wrap_unchecked(p.coords() + n * scale)
            })
            .collect()
    }

    #[test]
    fn closes_a_perturbed_three_cycle_quadratically() {
        let m3 = LinearToral::<f64, 3>::m3();
        // det(M^3 - I) = -91 = -7 * 13, so denominator 7 carries 3-cycles.
        let cycle = find_cycle_of_length(7, 3);
        let noisy = perturbed(&cycle, 1e-3, 5);
        let po = PseudoOrbit::new(&m3, noisy, true).unwrap();
        assert!(po.gap > 1e-4 && po.gap < 2e-2);

        let orbit = newton_close(&m3, &po, &NewtonOptions::default()).unwrap();
        assert!(orbit.residual < 1e-12);
        for (a, b) in orbit.points.iter().zip(&cycle) {
            assert!(a.distance(b) < 1e-11, "off by {:.3e}", a.distance(b));
        }
        // The residual map is affine for this model, so one full step
        // lands on the solution; quadratic convergence shows up as a tiny
        // iteration count from a 1e-3 start.
        assert!(orbit.shadow_distance < 5.0 * po.gap);
    }

    #[test]
    fn closes_a_long_cycle_without_overflow() {
        let m3 = LinearToral::<f64, 3>::m3();
        // Period 31: a condensation by matrix products would reach
        // 3.25^31 ~ 7e15 and lose the contracting block entirely.
        let cycle = rational_cycle_3([1, 1, 0], 5);
        assert_eq!(cycle.len(), 31);
        let noisy = perturbed(&cycle, 1e-4, 9);
        let po = PseudoOrbit::new(&m3, noisy, true).unwrap();
        let orbit = newton_close(&m3, &po, &NewtonOptions::default()).unwrap();
        for (a, b) in orbit.points.iter().zip(&cycle) {
            assert!(a.distance(b) < 1e-10, "off by {:.3e}", a.distance(b));
        }
    }

    #[test]
    fn shadowing_distance_scales_linearly_with_gap() {
        let m3 = LinearToral::<f64, 3>::m3();
        let cycle = find_cycle_of_length(7, 3);
        let mut ratios = Vec::new();
        for scale in [1e-2, 1e-3, 1e-4] {
            // Identical noise pattern at three amplitudes: for a linear
            // model the shadow/gap ratio is then scale-free.
            let noisy = perturbed(&cycle, scale, 77);
            let po = PseudoOrbit::new(&m3, noisy, true).unwrap();
            let orbit = newton_close(&m3, &po, &NewtonOptions::default()).unwrap();
            ratios.push((orbit.shadow_distance / po.gap).as_f64());
        }
        for r in &ratios {
            assert!(*r < 5.0, "shadowing constant blew up: {ratios:?}");
        }
        let spread = (ratios[0] - ratios[2]).abs() / ratios[0];
        assert!(
            spread < 1e-4,
            "ratio should be scale-free for a linear model: {ratios:?}"
        );
    }

    #[test]
    fn rejects_wide_gaps_and_non_cyclic_input() {
        let m3 = LinearToral::<f64, 3>::m3();
        let cycle = find_cycle_of_length(7, 3);
        let noisy = perturbed(&cycle, 0.2, 3);
        let po = PseudoOrbit::new(&m3, noisy, true).unwrap();
        assert!(matches!(
            newton_close(&m3, &po, &NewtonOptions::default()),
            Err(DynError::GapTooLarge { .. })
        ));

        let open = PseudoOrbit::new(&m3, cycle.clone(), false).unwrap();
        assert!(matches!(
            newton_close(&m3, &open, &NewtonOptions::default()),
            Err(DynError::Invalid(_))
        ));
    }

    #[test]
    fn rotation_extension_has_no_isolated_orbits() {
        // theta -> theta + 1/4 over the cat map: the center multiplier is
        // exactly one, the cyclic Jacobian is singular, and Newton must
        // report failure rather than fabricate an orbit.
        let skew = SkewCircleExtension::<f64>::cat_rotation(0.25, 0.0).unwrap();
        let pts = vec![
            P3::wrap(Vector3::new(0.0, 0.0, 0.1)).unwrap(),
            P3::wrap(Vector3::new(0.0, 0.0, 0.35)).unwrap(),
            P3::wrap(Vector3::new(0.0, 0.0, 0.6)).unwrap(),
            P3::wrap(Vector3::new(0.0, 0.0, 0.85)).unwrap(),
        ];
        let po = PseudoOrbit::new(&skew, pts.clone(), true).unwrap();
        assert!(po.gap < 1e-12, "this really is an orbit, gap {}", po.gap);
        // The unperturbed circle is a genuine orbit, so Newton accepts it
        // with zero correction -- but it sits in a whole circle of orbits
        // and the classification must flag the marginal multiplier.
        if let Ok(orbit) = newton_close(&skew, &po, &NewtonOptions::default()) {
            let class = classify_periodic(&skew, &orbit.points).unwrap();
            assert!(class.marginal);
        }

        // Push the fiber coordinates off the circle: the linearized cyclic
        // system is singular in the fiber direction (multiplier exactly
        // one) and the fiber equations are inconsistent, so the solve must
        // fail rather than fabricate an isolated orbit.
        let nudged: Vec<P3> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut c = *p.coords();
                c[2] += 1e-3 * (1.0 + i as f64);
                P3::wrap_unchecked(c)
            })
            .collect();
        let po2 = PseudoOrbit::new(&skew, nudged, true).unwrap();
        assert!(po2.gap > 1e-4);
        assert!(newton_close(&skew, &po2, &NewtonOptions::default()).is_err());
    }

    #[test]
    fn skew_fixed_point_multipliers_and_index() {
        let skew = SkewCircleExtension::<f64>::cat_rotation(0.0, 0.05).unwrap();
        let contracting = [P3::wrap(Vector3::new(0.0, 0.0, 0.5)).unwrap()];
        let class = classify_periodic(&skew, &contracting).unwrap();
        let phi = (3.0 + 5f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(class.moduli[0], phi, epsilon = 1e-10);
        assert_abs_diff_eq!(class.moduli[1], 1.0 - 0.1 * std::f64::consts::PI, epsilon = 1e-10);
        assert_abs_diff_eq!(class.moduli[2], (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-10);
        assert_eq!(class.stable_index, 2);
        assert!(!class.marginal);

        let expanding = [P3::wrap(Vector3::new(0.0, 0.0, 0.0)).unwrap()];
        let class2 = classify_periodic(&skew, &expanding).unwrap();
        assert_eq!(class2.stable_index, 1);
        assert_abs_diff_eq!(class2.moduli[1], 1.0 + 0.1 * std::f64::consts::PI, epsilon = 1e-10);
    }

    #[test]
    fn rotation_extension_orbit_is_marginal() {
        let skew = SkewCircleExtension::<f64>::cat_rotation(0.5, 0.0).unwrap();
        let pts = vec![
            P3::wrap(Vector3::new(0.0, 0.0, 0.2)).unwrap(),
            P3::wrap(Vector3::new(0.0, 0.0, 0.7)).unwrap(),
        ];
        let class = classify_periodic(&skew, &pts).unwrap();
        assert!(class.marginal);
        assert_abs_diff_eq!(class.log_moduli[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn cat_census_counts_match_determinants() {
        let cat = LinearToral::<f64, 2>::cat();
        // |det(A^k - I)| = tr(A^k) - 2 for the cat map. Distinct points are
        // >= 1/|det(A^k-I)| ~ 3e-3 apart, far wider than one counting cell.
        let expected = [1usize, 5, 16, 45, 121, 320];
        let lambda = (3.0 + 5f64.sqrt()) / 2.0;
        let levels =
            periodic_census(&cat, 6, |k| (3.3 * lambda.powi(k as i32)).ceil() as usize);
        for level in &levels {
            assert_eq!(
                level.point_count,
                expected[level.period - 1],
                "period-{} point census mismatch",
                level.period
            );
            assert!(level.worst_residual < 1e-12);
        }

        // Orbit structure at k = 2: the 5 points split into the fixed
        // point plus two genuine 2-cycles.
        let mut periods: Vec<usize> = levels[1]
            .orbits
            .iter()
            .map(|o| primitive_period(&o.points, 1e-8))
            .collect();
        periods.sort_unstable();
        assert_eq!(periods, vec![1, 2, 2]);
    }

    #[test]
    fn routed_solve_stays_bounded_where_the_exact_direction_explodes() {
        // Synthetic cyclic system A_i dx_i - dx_{i+1} = b_i with diagonal
        // blocks shaped like a closing chain: 300 steps whose middle
        // multiplier contracts (0.7, the tracked block), then 100 steps
        // where it expands (1.55, the excursion). Outer multipliers are
        // uniformly hyperbolic.
        let p = 400usize;
        let jac: Vec<SMatrix<f64, 3, 3>> = (0..p)
            .map(|i| {
                let c = if i < 300 { 0.7 } else { 1.55 };
                SMatrix::from_diagonal(&Vector3::new(3.2, c, 0.2))
            })
            .collect();
        let equation_residual = |dxs: &[Vector3<f64>], rhs: &[Vector3<f64>], i: usize| {
            (jac[i] * dxs[i] - dxs[(i + 1) % p] - rhs[i]).amax()
        };
        let worst = |v: &[Vector3<f64>]| v.iter().map(|x| x.amax()).fold(0.0, f64::max);

        // Impulses away from the contracting-to-expanding switch. The
        // routed direction absorbs them at impulse size; the exact
        // direction must carry the second impulse through the rest of
        // the expanding run and dump ~1.55^49 times its size into the
        // tracked block.
        let mut rhs = vec![Vector3::zeros(); p];
        rhs[10] = Vector3::new(1e-3, 2e-4, 5e-4);
        rhs[350] = Vector3::new(-3e-4, 1e-4, 2e-4);
        let routed = solve_routed(&jac, &rhs).unwrap();
        assert!(worst(&routed) < 1e-2, "routed blew up: {:.3e}", worst(&routed));
        for i in 0..p {
            assert!(
                equation_residual(&routed, &rhs, i) < 1e-12,
                "equation {i} left unsolved"
            );
        }

        // A middle-direction impulse exactly at the connecting equation
        // has no bounded correction at all: the exact response is
        // ~1.55^100 ~ 1e19 times the impulse. The routed solve leaves
        // that single equation as its defect and stays quiet.
        let mut rhs2 = vec![Vector3::zeros(); p];
        rhs2[299] = Vector3::new(0.0, 1e-6, 0.0);
        let mut steps = Vec::new();
        let exact = solve_cyclic(&jac, &rhs2, &mut steps).unwrap();
        assert!(worst(&exact) > 1e8, "expected blow-up, got {:.3e}", worst(&exact));
        let routed2 = solve_routed(&jac, &rhs2).unwrap();
        assert!(worst(&routed2) < 1e-9);
        for i in 0..p {
            let r = equation_residual(&routed2, &rhs2, i);
            if i == 299 {
                assert_abs_diff_eq!(r, 1e-6, epsilon = 1e-8);
            } else {
                assert!(r < 1e-12, "defect leaked to equation {i}: {r:.3e}");
            }
        }
    }

    #[test]
    fn census_points_verify_directly() {
        // Spot-check: every period-3 point satisfies wrap(A^3 x) = x.
        let cat = LinearToral::<f64, 2>::cat();
        let lambda = (3.0 + 5f64.sqrt()) / 2.0;
        let res = (3.3 * lambda.powi(3)).ceil() as usize;
        let mut count = 0usize;
        for gi in 0..res {
            for gj in 0..res {
                let g = P2::wrap(Vector2::new(
                    gi as f64 / res as f64,
                    gj as f64 / res as f64,
                ))
                .unwrap();
                let mut cur = g;
                let mut seed_pts = Vec::with_capacity(3);
                for _ in 0..3 {
                    seed_pts.push(cur);
                    cur = cat.evaluate(&cur);
                }
                if cur.distance(&g) >= 0.25 {
                    continue;
                }
                let po = PseudoOrbit::new(&cat, seed_pts, true).unwrap();
                if let Ok(orbit) = newton_close(
                    &cat,
                    &po,
                    &NewtonOptions {
                        shadow_factor: 1e18,
                        ..NewtonOptions::default()
                    },
                ) {
                    count += 1;
                    for q in &orbit.points {
                        let mut y = *q;
                        for _ in 0..3 {
                            y = cat.evaluate(&y);
                        }
                        assert!(y.distance(q) < 1e-9);
                    }
                }
            }
        }
        assert!(count > 0);
    }
}
