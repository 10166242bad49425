//! Strong-unstable leaf segments grown through a point.
//!
//! A leaf is represented as a polyline whose vertices are anchored to a
//! short straight seed segment placed a few steps back along the orbit:
//! every vertex remembers the seed point it is the forward image of, so
//! refinement inserts seed midpoints and maps them forward instead of
//! interpolating in the stretched image (which would smear the curve).

use crate::bundles::{estimate_unstable_direction, DEFAULT_LOOKBACK};
use crate::error::{DynError, Result};
use crate::real::Real;
use crate::systems::MapModel;
use crate::torus::{wrap_displacement, TorusPoint};

/// Hard cap on leaf polyline vertices unless the caller raises it.
pub const DEFAULT_VERTEX_BUDGET: usize = 2_000_000;

/// A polyline along the strong unstable leaf through `origin`, with arc
/// length measured from the origin vertex (negative on one side).
#[derive(Debug, Clone)]
pub struct LeafSegment<S, const D: usize> {
    pub polyline: Vec<TorusPoint<S, D>>,
    /// Cumulative arc length at each vertex; zero at `center`.
    pub arcs: Vec<S>,
    /// Index of the vertex sitting at the origin point.
    pub center: usize,
    pub origin: TorusPoint<S, D>,
    /// Max spacing between consecutive vertices.
    pub h: S,
}

impl<S: Real, const D: usize> LeafSegment<S, D> {
    pub fn len(&self) -> usize {
        self.polyline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polyline.is_empty()
    }

    /// Arc-length extent on each side of the origin (negative, positive).
    pub fn extent(&self) -> (S, S) {
        (self.arcs[0], self.arcs[self.arcs.len() - 1])
    }

    /// Point at signed arc length `s` from the origin, linearly
    /// interpolated between the bracketing vertices; clamps to the ends.
    pub fn point_at_arc(&self, s: S) -> TorusPoint<S, D> {
        let n = self.arcs.len();
        if s <= self.arcs[0] {
            return self.polyline[0];
        }
        if s >= self.arcs[n - 1] {
            return self.polyline[n - 1];
        }
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.arcs[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = self.arcs[hi] - self.arcs[lo];
        if !(span > S::zero()) {
            return self.polyline[lo];
        }
        let t = (s - self.arcs[lo]) / span;
        let disp =
            wrap_displacement(&(self.polyline[hi].coords() - self.polyline[lo].coords()));
        TorusPoint::wrap_unchecked(self.polyline[lo].coords() + disp * t)
    }
}

/// One vertex of a curve being pushed forward: the seed point on the
/// original segment, its current image, and a monotone parameter used to
/// keep insertion order and locate the center.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AnchorVert<S, const D: usize> {
    pub tag: S,
    pub seed: TorusPoint<S, D>,
    pub cur: TorusPoint<S, D>,
}

/// A polyline under forward iteration with seed-anchored refinement.
#[derive(Debug, Clone)]
pub(crate) struct AnchoredCurve<S, const D: usize> {
    pub verts: Vec<AnchorVert<S, D>>,
    pub steps: usize,
    pub budget: usize,
}

impl<S: Real, const D: usize> AnchoredCurve<S, D> {
    pub fn from_points(points: &[(S, TorusPoint<S, D>)], budget: usize) -> Self {
        Self {
            verts: points
                .iter()
                .map(|(t, p)| AnchorVert {
                    tag: *t,
                    seed: *p,
                    cur: *p,
                })
                .collect(),
            steps: 0,
            budget,
        }
    }

    pub fn advance<M: MapModel<S, D>>(&mut self, model: &M) {
        for v in &mut self.verts {
            v.cur = model.evaluate(&v.cur);
        }
        self.steps += 1;
    }

    fn budget_error(&self) -> DynError {
        DynError::LeafBudgetExhausted {
            cap: self.budget,
            target: 0.0,
        }
    }

    /// Insert seed midpoints until consecutive images are within `h`.
    /// Each inserted seed is mapped forward `steps` times from scratch.
    pub fn refine<M: MapModel<S, D>>(&mut self, model: &M, h: S) -> Result<()> {
        let mut out: Vec<AnchorVert<S, D>> = Vec::with_capacity(self.verts.len());
        for idx in 0..self.verts.len() {
            if idx == 0 {
                out.push(self.verts[0]);
                continue;
            }
            // Depth-first subdivision of the gap to the previous vertex.
            let mut stack = vec![self.verts[idx]];
            while let Some(right) = stack.pop() {
                let left = *out.last().unwrap();
                if left.cur.distance(&right.cur) <= h {
                    out.push(right);
                    continue;
                }
                if out.len() + stack.len() > self.budget {
                    return Err(self.budget_error());
                }
                let seed_mid = TorusPoint::wrap_unchecked(
                    left.seed.coords()
                        + wrap_displacement(&(right.seed.coords() - left.seed.coords()))
                            * S::of(0.5),
                );
                let mut cur = seed_mid;
                for _ in 0..self.steps {
                    cur = model.evaluate(&cur);
                }
                let mid = AnchorVert {
                    tag: (left.tag + right.tag) * S::of(0.5),
                    seed: seed_mid,
                    cur,
                };
                // Tag collapse means the subdivision stopped making
                // progress (degenerate data); bail instead of spinning.
                if !(mid.tag > left.tag && mid.tag < right.tag) {
                    return Err(self.budget_error());
                }
                stack.push(right);
                stack.push(mid);
            }
        }
        self.verts = out;
        Ok(())
    }

    /// Drop vertices whose arc length from the vertex nearest `tag0`
    /// exceeds `keep` (one vertex beyond the cut is retained per side).
    pub fn trim_around_tag(&mut self, tag0: S, keep: S) {
        let center = match self.verts.iter().position(|v| v.tag >= tag0) {
            Some(i) => i,
            None => self.verts.len() - 1,
        };
        let mut lo = center;
        let mut acc = S::zero();
        while lo > 0 {
            acc += self.verts[lo].cur.distance(&self.verts[lo - 1].cur);
            lo -= 1;
            if acc > keep {
                break;
            }
        }
        let mut hi = center;
        acc = S::zero();
        while hi + 1 < self.verts.len() {
            acc += self.verts[hi].cur.distance(&self.verts[hi + 1].cur);
            hi += 1;
            if acc > keep {
                break;
            }
        }
        self.verts.drain(hi + 1..);
        self.verts.drain(..lo);
    }
}

/// Grow the strong unstable leaf through `x` to arc radius `radius` on
/// each side, with vertex spacing at most `h`.
///
/// The segment is seeded a few steps back along the orbit (where the
/// required piece is tiny) and pushed forward with anchored refinement,
/// so the result is a genuine local unstable manifold up to seed-segment
/// curvature, not a straight-line extrapolation.
pub fn grow_unstable_leaf<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    x: &TorusPoint<S, D>,
    radius: S,
    h: S,
    budget: usize,
) -> Result<LeafSegment<S, D>> {
    if !(radius > S::zero()) || !(h > S::zero()) {
        return Err(DynError::Invalid("leaf needs radius > 0 and h > 0".into()));
    }
    if radius <= h {
        return Ok(LeafSegment {
            polyline: vec![*x],
            arcs: vec![S::zero()],
            center: 0,
            origin: *x,
            h,
        });
    }
    let seed_half = S::of(5.0) * h;

    // Walk backward until the accumulated unstable stretch blows the seed
    // half-length past the requested radius.
    let goal = radius * S::of(1.3) / seed_half;
    let mut y = *x;
    let mut back = 0usize;
    let mut stretch = S::one();
    while stretch < goal {
        y = model.inverse(&y);
        back += 1;
        let e = estimate_unstable_direction(model, &y, DEFAULT_LOOKBACK, 11)?;
        stretch *= (model.differential(&y) * e.dir).norm();
        if back > 512 {
            return Err(DynError::LeafBudgetExhausted {
                cap: budget,
                target: radius.as_f64(),
            });
        }
    }

    let e_seed = estimate_unstable_direction(model, &y, DEFAULT_LOOKBACK, 11)?;
    let mut seeds = Vec::new();
    for i in -5i32..=5 {
        let t = S::of(i as f64) * h;
        seeds.push((t, TorusPoint::wrap_unchecked(y.coords() + e_seed.dir * t)));
    }
    let mut curve = AnchoredCurve::from_points(&seeds, budget);
    for _ in 0..back {
        curve.advance(model);
        curve
            .refine(model, h)
            .map_err(|e| retarget_budget(e, radius.as_f64()))?;
        curve.trim_around_tag(S::zero(), radius * S::of(1.05));
    }

    // Final trim to the radius ball and arc-length bookkeeping, measured
    // from the vertex that landed on x.
    curve.trim_around_tag(S::zero(), radius);
    let center = curve
        .verts
        .iter()
        .position(|v| v.tag >= S::zero())
        .unwrap_or(0);
    let n = curve.verts.len();
    let mut arcs = vec![S::zero(); n];
    for i in (0..center).rev() {
        arcs[i] = arcs[i + 1] - curve.verts[i].cur.distance(&curve.verts[i + 1].cur);
    }
    for i in center + 1..n {
        arcs[i] = arcs[i - 1] + curve.verts[i].cur.distance(&curve.verts[i - 1].cur);
    }
    let polyline: Vec<TorusPoint<S, D>> = curve.verts.iter().map(|v| v.cur).collect();

    let leaf = LeafSegment {
        center,
        origin: polyline[center],
        polyline,
        arcs,
        h,
    };
    check_tangents(model, &leaf)?;
    Ok(leaf)
}

pub(crate) fn retarget_budget(e: DynError, target: f64) -> DynError {
    match e {
        DynError::LeafBudgetExhausted { cap, .. } => {
            DynError::LeafBudgetExhausted { cap, target }
        }
        other => other,
    }
}

/// Sampled tangent gate: centered chords must stay within 1e-3 radians of
/// the estimated unstable direction.
fn check_tangents<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    leaf: &LeafSegment<S, D>,
) -> Result<()> {
    let n = leaf.polyline.len();
    if n < 3 {
        return Ok(());
    }
    let samples = 256.min(n - 2);
    for s in 0..samples {
        let i = 1 + s * (n - 2) / samples;
        let chord = wrap_displacement(
            &(leaf.polyline[i + 1].coords() - leaf.polyline[i - 1].coords()),
        );
        let norm = chord.norm();
        if !(norm > S::zero()) {
            continue;
        }
        let e = estimate_unstable_direction(model, &leaf.polyline[i], DEFAULT_LOOKBACK, 11)?;
        let cosang = (chord / norm).dot(&e.dir).abs().min(S::one());
        if cosang.acos() > S::of(1e-3) {
            return Err(DynError::LeafLostDirection);
        }
    }
    Ok(())
}

/// Convenience wrapper using the default vertex budget.
pub fn grow_leaf<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    x: &TorusPoint<S, D>,
    radius: S,
    h: S,
) -> Result<LeafSegment<S, D>> {
    grow_unstable_leaf(model, x, radius, h, DEFAULT_VERTEX_BUDGET)
}
