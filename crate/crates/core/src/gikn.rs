//! The inductive loop that drives center exponents to zero: each step
//! replaces a fiber-contracting closed orbit `q` by a much longer closed
//! orbit `p` that spends most of its period tracking `q` and the rest on a
//! free excursion through the expanding part of the system. Tracking keeps
//! `p` a good approximation of `q` (certified by a goodness report at a
//! halving closeness scale), the excursion drags the center exponent a
//! fixed fraction toward zero, and the realized schedules feed the limit
//! criterion for the weak-* convergent tail of periodic measures.
//!
//! Everything the step promises is measured on the orbit Newton actually
//! produced, never inferred from the plan: the exponent window, the
//! goodness level, and the tracking proportion are hard gates, while the
//! block-wise Birkhoff behavior and homoclinic relation are recorded as
//! advisory diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundles::DEFAULT_LOOKBACK;
use crate::error::{DynError, Result};
use crate::exponents::{center_exponent_periodic, phi_at, phi_lipschitz, phi_sup_norm};
use crate::gibbs::{phi_along, GibbsReport};
use crate::leaf::{grow_unstable_leaf, LeafSegment, DEFAULT_VERTEX_BUDGET};
use crate::measures::{
    goodness_check_aligned, limit_check_from_reports, support_density, weak_star_distance,
    AtomicMeasure, GoodnessReport, LimitCheckSummary, SupportDensity, TestFunctionFamily,
};
use crate::newton::{newton_close, NewtonOptions, PeriodicOrbit};
use crate::orbits::{build_gikn_pseudo_orbit_with_tour, find_dense_return, heteroclinic_intersects};
use crate::real::Real;
use crate::systems::{orbit_segment, MapModel};
use crate::torus::TorusPoint;

/// Planner safety factor on the exponent-window ceiling: a candidate block
/// is skipped when its predicted exponent uses up more than this fraction
/// of the allowed decay eta * |lambda(q)|. The goodness floor pushes the
/// tracking proportion up against this ceiling more at every step, so the
/// pad has to stay thin; the measured gate keeps the full say.
const PLAN_ETA_SAFETY: f64 = 0.96;

/// Attempts to re-plan a step when the discovered return time beats the
/// estimate the block lengths were chosen against.
const PLAN_ATTEMPTS: usize = 8;

/// Skip the homoclinic-relation audit above this period: growing invariant
/// manifolds at every point of a long orbit costs more than the advisory
/// answer is worth.
const AUDIT_PERIOD_CAP: usize = 1_000;

/// Constants and knobs of the inductive loop. Build one with
/// [`compute_constants`] and override fields as needed; [`validate`]
/// recomputes the derived entries and rejects inconsistent overrides.
///
/// [`validate`]: GiknParams::validate
#[derive(Debug, Clone)]
pub struct GiknParams<S: Real> {
    /// Sup-norm bound A for the center log-expansion over the torus.
    pub phi_sup: S,
    /// Empirical expansion floor from the leaf-sampling report.
    pub tau0_hat: S,
    /// Contraction retention rho = 1 / (2 A); the goodness schedule per
    /// step is kappa >= 1 - 2 rho |lambda(q)|.
    pub rho: S,
    /// Exponent decay factor eta = (2A - tau0) / (2A), in (1/2, 1).
    pub eta: S,
    /// Hard cap on the per-step margin delta_n.
    pub delta: S,
    /// Per-step margin as a fraction of min(|lambda(q)|, tau0); must stay
    /// below 1/4 so every step satisfies delta < min(|lambda|, tau0) / 4.
    pub delta_frac: S,
    /// Hard cap on the per-step gap scale d_n.
    pub d: S,
    /// Modulus bound for the center log-expansion (grid-sampled slope).
    pub l_max: S,
    /// Threshold the sampled leaf averages must clear for the expansion
    /// reservoir to count as observed.
    pub positivity_threshold: S,
    /// Closeness scale of the first step; step k uses eps0 * 2^{-k}.
    pub eps0: S,
    /// Time by which every sampled leaf average has cleared the floor;
    /// transit blocks are never shorter than this.
    pub n0_hat: usize,
    /// Refuse plans whose closed orbit would exceed this period.
    pub max_period: usize,
    pub seed: u64,
    /// Floor on the transit length independent of the sampling data.
    pub n_min: usize,
    /// Candidate draws for the transit seed before the step gives up.
    pub x_retries: usize,
    /// Floor on the tracking length as a multiple of the return time.
    pub m_over_nd: S,
    /// Plan the certified goodness with this multiplicative headroom.
    pub kappa_pad: S,
    /// Plan the tracking proportion with this multiplicative headroom.
    pub proportion_pad: S,
    /// Slack on the per-step decay cap (1 + eta) / 2.
    pub decay_slack: S,
    /// Character-truncation order for weak-* distances.
    pub n_terms: usize,
    /// Iteration cap for each dense-return search.
    pub dense_max_time: usize,
    /// Vertex budget for each leaf search.
    pub vertex_budget: usize,
    /// Burn-in length for splitting estimates.
    pub lookback: usize,
    /// Route each step's free block through the region sample before
    /// closing up. Sharpens the support at a steep cost in period.
    pub density_augmentation: bool,
    /// The run passes only if the last exponent lands within this of zero.
    pub final_lambda_tol: S,
    /// Mean free-block expansion the planner assumes when predicting the
    /// next exponent; nonpositive disables the prediction.
    pub transit_average_hint: S,
    /// Probe points the final support is measured against (and toured when
    /// density augmentation is on).
    pub region_sample: Vec<TorusPoint<S, 3>>,
}

impl<S: Real> GiknParams<S> {
    /// Recompute the derived constants and reject inconsistent or
    /// out-of-range fields.
    pub fn validate(&self) -> Result<()> {
        if !(self.phi_sup > S::zero()) {
            return Err(DynError::Invalid(
                "need a positive sup bound for the center log-expansion".into(),
            ));
        }
        if !(self.tau0_hat > S::zero()) {
            return Err(DynError::NoExpansionReservoir);
        }
        if self.tau0_hat > self.phi_sup * S::of(1.0 + 1e-9) {
            return Err(DynError::Invalid(format!(
                "expansion floor {:.3e} exceeds the sup bound {:.3e} it lives under",
                self.tau0_hat.as_f64(),
                self.phi_sup.as_f64()
            )));
        }
        let a2 = S::of(2.0) * self.phi_sup;
        let rho = S::one() / a2;
        let eta = (a2 - self.tau0_hat) / a2;
        let close = |a: S, b: S| (a - b).abs() <= S::of(1e-9) * (S::one() + b.abs());
        if !close(self.rho, rho) {
            return Err(DynError::Invalid(format!(
                "rho = {:.12e} disagrees with 1 / (2 phi_sup) = {:.12e}",
                self.rho.as_f64(),
                rho.as_f64()
            )));
        }
        if !close(self.eta, eta) {
            return Err(DynError::Invalid(format!(
                "eta = {:.12e} disagrees with (2 phi_sup - tau0) / (2 phi_sup) = {:.12e}",
                self.eta.as_f64(),
                eta.as_f64()
            )));
        }
        if !(self.delta_frac > S::zero()) || !(self.delta_frac < S::of(0.25)) {
            return Err(DynError::Invalid(format!(
                "delta_frac must sit in (0, 1/4), got {:.3}",
                self.delta_frac.as_f64()
            )));
        }
        if !(self.delta > S::zero())
            || !(self.d > S::zero())
            || self.d > S::of(0.25)
            || !(self.eps0 > S::zero())
            || !(self.final_lambda_tol > S::zero())
        {
            return Err(DynError::Invalid(
                "delta, d (<= 1/4), eps0 and final_lambda_tol must be positive".into(),
            ));
        }
        if self.kappa_pad < S::one() || self.proportion_pad < S::one() {
            return Err(DynError::Invalid(
                "planning pads must be at least one".into(),
            ));
        }
        if self.decay_slack < S::zero() {
            return Err(DynError::Invalid("decay slack must be nonnegative".into()));
        }
        if self.n_min == 0 || self.x_retries == 0 || self.max_period < 2 || self.n_terms == 0 {
            return Err(DynError::Invalid(
                "n_min, x_retries, n_terms must be >= 1 and max_period >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Per-step decay cap on |lambda(p)| / |lambda(q)|.
    pub fn decay_cap(&self) -> S {
        (S::one() + self.eta) * S::of(0.5) * (S::one() + self.decay_slack)
    }
}

/// Derive the run constants from the map and a leaf-sampling report:
/// the sup bound via grid plus probe-point sampling with a safety factor,
/// then rho and eta from the sampled expansion floor. Fails with the
/// no-reservoir error when the sampling verdict is negative, since every
/// later step leans on that floor.
pub fn compute_constants<S: Real, M: MapModel<S, 3>>(
    model: &M,
    region_sample: &[TorusPoint<S, 3>],
    gibbs: &GibbsReport<S>,
    seed: u64,
) -> Result<GiknParams<S>> {
    if !gibbs.empirically_mostly_expanding || !(gibbs.tau0_hat > S::zero()) {
        return Err(DynError::NoExpansionReservoir);
    }
    let lookback = DEFAULT_LOOKBACK;
    let safety = 0.05;
    let mut phi_sup = phi_sup_norm(model, 16, lookback, safety, seed)?;
    for (i, x) in region_sample.iter().enumerate() {
        let v = phi_at(model, x, lookback, seed ^ (i as u64 + 1))?.abs() * S::of(1.0 + safety);
        phi_sup = phi_sup.max(v);
    }
    let a2 = S::of(2.0) * phi_sup;
    let l_max = phi_lipschitz(model, 16, lookback, safety, seed)?;
    let eps0 = S::of(2.0);
    // Gap scale small against the modulus of the observable, so one d-gap
    // cannot move a center log-expansion by more than about half a unit of
    // the first closeness scale.
    let d = S::of(0.25)
        .min(S::of(0.5) / (l_max + S::one()))
        .min(eps0 * S::of(0.5) / (l_max + S::one()));
    Ok(GiknParams {
        phi_sup,
        tau0_hat: gibbs.tau0_hat,
        rho: S::one() / a2,
        eta: (a2 - gibbs.tau0_hat) / a2,
        delta: gibbs.delta_hat,
        delta_frac: S::of(0.2),
        d,
        l_max,
        positivity_threshold: gibbs.positivity_threshold,
        eps0,
        n0_hat: gibbs.n0_hat.unwrap_or(1),
        max_period: 200_000,
        seed,
        n_min: 1,
        x_retries: 64,
        m_over_nd: S::of(10.0),
        kappa_pad: S::of(1.02),
        proportion_pad: S::of(1.05),
        decay_slack: S::of(0.1),
        n_terms: 64,
        dense_max_time: 20_000,
        vertex_budget: DEFAULT_VERTEX_BUDGET,
        lookback,
        density_augmentation: false,
        final_lambda_tol: S::of(1e-2),
        transit_average_hint: gibbs.mean_average,
        region_sample: region_sample.to_vec(),
    })
}

/// Per-transit-step window for the tracking/transit ratio m/n,
///
///   ( (A + 2 delta + L) / (L - 2 delta), (A + 3 delta + L) / (L - 3 delta) )
///
/// with L = |lambda(q)| and A = 2 phi_sup. Requires lambda(q) < 0 and
/// 0 < delta < L / 4 (which keeps both denominators positive).
pub fn mn_window<S: Real>(lambda_q: S, delta: S, phi_sup: S) -> Result<(S, S)> {
    if !(lambda_q < S::zero()) {
        return Err(DynError::Invalid(format!(
            "the reference orbit must contract along the center, got lambda = {:.6e}",
            lambda_q.as_f64()
        )));
    }
    let l = -lambda_q;
    if !(delta > S::zero()) || !(delta < l * S::of(0.25)) {
        return Err(DynError::Invalid(format!(
            "margin delta = {:.3e} must sit in (0, |lambda| / 4) = (0, {:.3e})",
            delta.as_f64(),
            (l * S::of(0.25)).as_f64()
        )));
    }
    if phi_sup < l {
        return Err(DynError::Invalid(format!(
            "sup bound {:.3e} sits below the exponent {:.3e} it is meant to bound",
            phi_sup.as_f64(),
            l.as_f64()
        )));
    }
    let a = S::of(2.0) * phi_sup;
    let two = S::of(2.0);
    let three = S::of(3.0);
    let lo = (a + two * delta + l) / (l - two * delta);
    let hi = (a + three * delta + l) / (l - three * delta);
    Ok((lo, hi))
}

/// Smallest tracking length at the smallest transit length: the first
/// integer pair (m, n) with n >= n_min and m strictly inside n times the
/// ratio window. The window has positive length, so the scan always lands
/// unless it blows past the defensive transit cap.
pub fn select_mn<S: Real>(
    lambda_q: S,
    delta: S,
    phi_sup: S,
    n_min: usize,
) -> Result<(usize, usize)> {
    let (lo, hi) = mn_window(lambda_q, delta, phi_sup)?;
    let n_cap = 1_000_000usize;
    let mut n = n_min.max(1);
    while n <= n_cap {
        let m_lo = n as f64 * lo.as_f64();
        let m_hi = n as f64 * hi.as_f64();
        let mut m = (m_lo.floor() as i64 + 1).max(1);
        while (m as f64) < m_hi {
            if m as f64 > m_lo {
                return Ok((m as usize, n));
            }
            m += 1;
        }
        n += 1;
    }
    Err(DynError::EmptyWindow { n_cap })
}

/// One block plan: tracking length, transit length, the ratio window they
/// were chosen from, and the exponent the planner expects if the free
/// block averages out to the sampling mean.
#[derive(Debug, Clone, Copy)]
struct Plan<S> {
    m: usize,
    n: usize,
    window: (S, S),
    predicted_lambda: Option<S>,
}

/// Find the cheapest block satisfying every planning constraint at once:
/// m a whole number of q-periods strictly inside the ratio window, long
/// enough against the return-time estimate, with predicted tracking
/// proportion and goodness certificate clearing their padded schedules,
/// and (when a hint is available) a predicted exponent that stays safely
/// inside the decay window. Scans transit lengths upward and takes the
/// first hit, so the period never grows beyond what the constraints force.
fn plan_step<S: Real>(
    lambda_q: S,
    delta_n: S,
    m_q: usize,
    n_d_est: usize,
    params: &GiknParams<S>,
) -> Result<Plan<S>> {
    let window = mn_window(lambda_q, delta_n, params.phi_sup)?;
    let (lo, hi) = window;
    let l = -lambda_q;
    let a2 = S::of(2.0) * params.phi_sup;
    let kappa_req = S::one() - S::of(2.0) * params.rho * l;
    let kappa_need = kappa_req * params.kappa_pad;
    let tp_need = (S::one() - l / a2) * params.proportion_pad;
    let eta_cap = if params.transit_average_hint > S::zero() {
        Some(params.eta * l * S::of(PLAN_ETA_SAFETY))
    } else {
        None
    };
    let m_floor_nd = (params.m_over_nd.as_f64() * n_d_est as f64).ceil() as usize;
    let n_cap = ((params.max_period as f64 / lo.as_f64()).ceil() as usize).max(1) + 1;
    let n_floor = params.n_min.max(params.n0_hat).max(1);

    let mut n = n_floor;
    while n <= n_cap {
        let m_lo = n as f64 * lo.as_f64();
        let m_hi = n as f64 * hi.as_f64();
        let mut k = ((m_lo / m_q as f64).floor() as usize).max(0) + 1;
        loop {
            let m = k * m_q;
            if m as f64 >= m_hi {
                break;
            }
            k += 1;
            if m as f64 <= m_lo {
                continue;
            }
            let p_est = m + n + n_d_est;
            if p_est > params.max_period || m < m_floor_nd {
                continue;
            }
            let tp = S::of(m as f64 / p_est as f64);
            if tp < tp_need {
                continue;
            }
            if kappa_req > S::zero() {
                let kappa_pred = S::of((m as f64 - 2.0 * m_q as f64) / p_est as f64);
                if kappa_pred < kappa_need {
                    continue;
                }
            }
            let predicted = eta_cap.map(|cap| {
                let lam = tp * lambda_q + (S::one() - tp) * params.transit_average_hint;
                (lam, lam.abs() < cap)
            });
            if let Some((_, false)) = predicted {
                continue;
            }
            return Ok(Plan {
                m,
                n,
                window,
                predicted_lambda: predicted.map(|(lam, _)| lam),
            });
        }
        n += 1;
    }
    Err(DynError::EmptyWindow { n_cap })
}

/// Everything one step measured, gated and recorded.
#[derive(Debug, Clone)]
pub struct GiknStep<S: Real> {
    /// Center exponent of the reference orbit this step tracked.
    pub lambda_q: S,
    /// Measured center exponent of the closed orbit the step produced.
    pub lambda_p: S,
    /// |lambda_p| / |lambda_q|.
    pub ratio: S,
    /// Tracking length (a whole number of q-periods).
    pub m: usize,
    /// Designed transit length.
    pub n: usize,
    /// Discovered return time of the closing block.
    pub n_d: usize,
    /// Extra free-block points spent touring the region sample.
    pub tour_len: usize,
    /// Full period of the produced orbit.
    pub period: usize,
    /// Margin used for this step's window and floor checks.
    pub delta_n: S,
    /// Gap scale of this step's pseudo-orbit.
    pub d_n: S,
    /// Closeness scale of this step's goodness certificate.
    pub eps: S,
    /// Per-transit-step ratio window the block was chosen from.
    pub window: (S, S),
    /// Largest seam of the assembled pseudo-orbit.
    pub gap: S,
    /// How far Newton's orbit strayed from the assembled loop.
    pub shadow_distance: S,
    /// Final closure residual of the Newton orbit.
    pub residual: S,
    pub orbit: PeriodicOrbit<S, 3>,
    /// Goodness schedule 1 - 2 rho |lambda_q| this step had to certify.
    pub kappa_required: S,
    pub goodness: GoodnessReport<S>,
    /// m / period, and the floor 1 + lambda_q / (2 phi_sup) it must clear.
    pub time_proportion: S,
    pub time_proportion_bound: S,
    /// Weak-* distance between the new and old periodic measures.
    pub weak_star: S,
    /// Advisory: the produced exponent cleared half the reference one.
    pub halving_ok: bool,
    /// Advisory: largest deviation of a whole-lap tracked average from
    /// lambda_q, and whether it stayed within delta_n.
    pub tracked_deviation: S,
    pub tracked_ok: bool,
    /// Advisory: smallest transit partial average past the uniformization
    /// time, and whether it stayed above the sampled floor.
    pub transit_floor: S,
    pub transit_ok: bool,
    /// Advisory: whether unstable leaves and stable manifolds of the two
    /// orbits cross both ways; None when skipped or undecidable.
    pub homoclinic_audit: Option<bool>,
    /// Leaf position the accepted transit seed was drawn at.
    pub x_arc: S,
    /// Candidate draws spent before a transit seed was accepted.
    pub x_draws: usize,
    /// Plans tried before the discovered return time matched.
    pub plan_attempts: usize,
    /// Exponent the planner predicted from the sampling mean, if any.
    pub predicted_lambda: Option<S>,
}

/// Mix a step index into the master seed (splitmix-style) so each step
/// draws from an independent, reproducible stream.
fn mix_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw transit seeds on the leaf until one keeps every partial average
/// beyond the uniformization time above the floor plus margin.
fn pick_transit_seed<S: Real, M: MapModel<S, 3>>(
    model: &M,
    leaf: &LeafSegment<S, 3>,
    n: usize,
    bar: S,
    n0: usize,
    params: &GiknParams<S>,
    step_seed: u64,
    attempt: usize,
) -> Result<(TorusPoint<S, 3>, S, usize)> {
    let (a_lo, a_hi) = leaf.extent();
    let n0 = n0.max(1);
    for t in 0..params.x_retries {
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        rng.set_stream((attempt * params.x_retries + t + 1) as u64);
        let u: f64 = rng.gen();
        let arc = a_lo + (a_hi - a_lo) * S::of(u);
        let x = leaf.point_at_arc(arc);
        let seg = orbit_segment(model, &x, (n - 1) as i64, n)?;
        let phis = match phi_along(model, &seg, step_seed ^ 0x9b1f) {
            Ok((v, _)) => v,
            Err(_) => continue,
        };
        let mut sum = S::zero();
        let mut ok = true;
        for (k, phi) in phis.iter().enumerate() {
            sum += *phi;
            let steps = k + 1;
            if steps >= n0 && !(sum / S::of(steps as f64) > bar) {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok((x, arc, t + 1));
        }
    }
    Err(DynError::Invalid(format!(
        "no transit seed on the leaf kept its averages above {:.4} after {} draws",
        bar.as_f64(),
        params.x_retries
    )))
}

/// One inductive step at the given closeness scale. See the module notes
/// for the gate/advisory split; errors carry the measured value that
/// broke the contract.
pub fn gikn_step<S: Real, M: MapModel<S, 3>>(
    model: &M,
    q: &PeriodicOrbit<S, 3>,
    params: &GiknParams<S>,
    eps: S,
) -> Result<GiknStep<S>> {
    params.validate()?;
    gikn_step_seeded(model, q, params, eps, params.seed, None)
}

fn gikn_step_seeded<S: Real, M: MapModel<S, 3>>(
    model: &M,
    q: &PeriodicOrbit<S, 3>,
    params: &GiknParams<S>,
    eps: S,
    step_seed: u64,
    n_d_hint: Option<usize>,
) -> Result<GiknStep<S>> {
    let m_q = q.period();
    let lambda_q = match q.lambda_c {
        Some(l) => l,
        None => center_exponent_periodic(model, &q.points)
            .map_err(|e| e.at("measuring the reference exponent"))?,
    };
    if !(lambda_q < S::zero()) {
        return Err(DynError::Invalid(format!(
            "the reference orbit must contract along the center, got lambda = {:.6e}",
            lambda_q.as_f64()
        )));
    }
    let l = -lambda_q;
    let delta_n = params.delta.min(params.delta_frac * l.min(params.tau0_hat));
    if !(delta_n > S::zero()) {
        return Err(DynError::Invalid("collapsed step margin".into()));
    }
    let d_n = params.d.min(eps * S::of(0.25));
    if !(d_n > S::zero()) {
        return Err(DynError::Invalid("collapsed gap scale".into()));
    }

    // One leaf serves both the transit-seed draws and the return probe.
    let q0 = &q.points[0];
    let leaf_radius = d_n * S::of(0.25);
    let leaf = grow_unstable_leaf(model, q0, leaf_radius, d_n / S::of(1024.0), params.vertex_budget)
        .map_err(|e| e.at("growing the seed leaf"))?;

    let tour: Vec<TorusPoint<S, 3>> = if params.density_augmentation {
        params
            .region_sample
            .iter()
            .filter(|r| q.points.iter().all(|p| p.distance(r) > eps * S::of(0.5)))
            .copied()
            .collect()
    } else {
        Vec::new()
    };

    let n_floor = params.n_min.max(params.n0_hat).max(1);
    let mut n_d_est = match n_d_hint {
        Some(h) => h.max(1),
        None => {
            // Probe the return time once with a throwaway transit so the
            // first plan is built against a measured value.
            let mut z = leaf.point_at_arc(leaf_radius * S::of(0.5));
            for _ in 0..n_floor {
                z = model.evaluate(&z);
            }
            let probe =
                find_dense_return(model, &z, q0, d_n, params.dense_max_time, params.vertex_budget)
                    .map_err(|e| e.at("probing the return time"))?;
            probe.steps.max(1) * (tour.len() + 1)
        }
    };

    let bar = params.tau0_hat + delta_n;
    let mut accepted = None;
    let mut attempts = 0;
    for attempt in 0..PLAN_ATTEMPTS {
        attempts = attempt + 1;
        let plan = plan_step(lambda_q, delta_n, m_q, n_d_est, params)?;
        let (x, x_arc, x_draws) = pick_transit_seed(
            model, &leaf, plan.n, bar, params.n0_hat, params, step_seed, attempt,
        )?;
        let po = build_gikn_pseudo_orbit_with_tour(
            model,
            q,
            &x,
            plan.m,
            plan.n,
            d_n,
            &tour,
            params.dense_max_time,
            params.vertex_budget,
        )
        .map_err(|e| e.at("assembling the pseudo-orbit"))?;
        let blocks = po.blocks.clone().expect("assembled with annotation");
        let free_extra = blocks.n - plan.n + blocks.n_d;
        let p_len = po.len();
        // Re-check the plan against the discovered free-block length; on a
        // miss, fold the measurement into the estimate and plan again.
        let tp = S::of(plan.m as f64 / p_len as f64);
        let kappa_req = S::one() - S::of(2.0) * params.rho * l;
        let kappa_pred = S::of((plan.m as f64 - 2.0 * m_q as f64) / p_len as f64);
        let ok = p_len <= params.max_period
            && S::of(plan.m as f64) >= params.m_over_nd * S::of(blocks.n_d as f64)
            && tp >= (S::one() - l / (S::of(2.0) * params.phi_sup)) * params.proportion_pad
            && (kappa_req <= S::zero() || kappa_pred >= kappa_req * params.kappa_pad);
        if ok {
            accepted = Some((plan, x_arc, x_draws, po, blocks));
            break;
        }
        n_d_est = free_extra.max(n_d_est + 1);
    }
    let (plan, x_arc, x_draws, po, blocks) = accepted.ok_or_else(|| {
        DynError::Invalid(format!(
            "the discovered return time kept outrunning the plan after {PLAN_ATTEMPTS} attempts \
             (last estimate {n_d_est} steps)"
        ))
    })?;
    let p_len = po.len();

    // Closing tolerance: the first correction deposits curvature-sized
    // quadratic remainders (~ gap^2) at the hand-offs where the chain turns
    // from center-contracting to center-expanding, and a center residual at
    // such a hand-off has no bounded linear correction -- absorbing it needs
    // exponential growth through one of the neighbouring stretches. Double
    // precision therefore cannot close these chains much below ~1e-9; 1e-8
    // still re-verifies at 1e-7 and sits far under every tolerance used
    // downstream on the closed orbit.
    let newton_opts = NewtonOptions {
        tol: 1e-8,
        ..NewtonOptions::default()
    };
    let orbit0 = newton_close(model, &po, &newton_opts)
        .map_err(|e| e.at("closing the pseudo-orbit"))?;
    let lambda_p = center_exponent_periodic(model, &orbit0.points)
        .map_err(|e| e.at("measuring the produced exponent"))?;
    let mut orbit = orbit0;
    orbit.lambda_c = Some(lambda_p);

    // Hard gates, measured on the closed orbit.
    if !(lambda_p < S::zero()) {
        return Err(DynError::Invalid(format!(
            "exponent window violated: measured lambda = {:.6e} is not negative",
            lambda_p.as_f64()
        )));
    }
    if !(lambda_p > params.eta * lambda_q) {
        return Err(DynError::Invalid(format!(
            "exponent window violated: measured lambda = {:.6e} at or below the floor \
             eta * lambda(q) = {:.6e}",
            lambda_p.as_f64(),
            (params.eta * lambda_q).as_f64()
        )));
    }
    let kappa_required = S::one() - S::of(2.0) * params.rho * l;
    let goodness = goodness_check_aligned(model, &orbit.points, &q.points, eps, 0)
        .map_err(|e| e.at("certifying goodness"))?;
    if goodness.kappa < kappa_required {
        return Err(DynError::Invalid(format!(
            "goodness certificate kappa = {:.6} fell below the schedule \
             1 - 2 rho |lambda(q)| = {:.6}",
            goodness.kappa.as_f64(),
            kappa_required.as_f64()
        )));
    }
    let time_proportion = S::of(plan.m as f64 / p_len as f64);
    let time_proportion_bound = S::one() + lambda_q / (S::of(2.0) * params.phi_sup);
    if time_proportion < time_proportion_bound {
        return Err(DynError::Invalid(format!(
            "tracking proportion {:.6} fell below 1 + lambda(q) / (2 phi_sup) = {:.6}",
            time_proportion.as_f64(),
            time_proportion_bound.as_f64()
        )));
    }

    // Advisory diagnostics on the assembled chain (splitting transport
    // crosses the small seams, so these are measurements, not gates).
    let (tracked_deviation, tracked_ok, transit_floor, transit_ok) = match phi_along(
        model,
        &po.points,
        step_seed ^ 0x2f5d,
    ) {
        Ok((phis, _)) => {
            let mut dev = S::zero();
            let mut sum = S::zero();
            for lap in 0..plan.m / m_q {
                for j in 0..m_q {
                    sum += phis[lap * m_q + j];
                }
                let avg = sum / S::of(((lap + 1) * m_q) as f64);
                dev = dev.max((avg - lambda_q).abs());
            }
            let n0 = params.n0_hat.max(1);
            let mut floor = S::of(f64::INFINITY);
            let mut tsum = S::zero();
            for k in 0..plan.n {
                tsum += phis[plan.m + k];
                if k + 1 >= n0 {
                    floor = floor.min(tsum / S::of((k + 1) as f64));
                }
            }
            (dev, dev <= delta_n, floor, floor > params.tau0_hat)
        }
        Err(_) => (S::of(f64::NAN), false, S::of(f64::NAN), false),
    };

    let family = TestFunctionFamily::<3>::characters(params.n_terms);
    let mu_p = AtomicMeasure::uniform_on(&orbit.points)?;
    let mu_q = AtomicMeasure::uniform_on(&q.points)?;
    let weak_star = weak_star_distance(&mu_p, &mu_q, &family, params.n_terms)
        .map_err(|e| e.at("measuring the weak-* displacement"))?;

    let homoclinic_audit = if m_q <= AUDIT_PERIOD_CAP && p_len <= AUDIT_PERIOD_CAP {
        let radius = S::of(4.0);
        let angle_tol = S::of(1e-3);
        match (
            heteroclinic_intersects(model, &orbit, q, radius, angle_tol, params.vertex_budget),
            heteroclinic_intersects(model, q, &orbit, radius, angle_tol, params.vertex_budget),
        ) {
            (Ok(a), Ok(b)) => Some(a && b),
            _ => None,
        }
    } else {
        None
    };

    Ok(GiknStep {
        lambda_q,
        lambda_p,
        ratio: lambda_p.abs() / lambda_q.abs(),
        m: plan.m,
        n: plan.n,
        n_d: blocks.n_d,
        tour_len: blocks.n - plan.n,
        period: p_len,
        delta_n,
        d_n,
        eps,
        window: plan.window,
        gap: po.gap,
        shadow_distance: orbit.shadow_distance,
        residual: orbit.residual,
        orbit,
        kappa_required,
        goodness,
        time_proportion,
        time_proportion_bound,
        weak_star,
        halving_ok: lambda_p < lambda_q * S::of(0.5),
        tracked_deviation,
        tracked_ok,
        transit_floor,
        transit_ok,
        homoclinic_audit,
        x_arc,
        x_draws,
        plan_attempts: attempts,
        predicted_lambda: plan.predicted_lambda,
    })
}

/// A whole run: the realized steps and schedules, the limit-criterion
/// summary over them, and the verdict. A step that breaks its contract
/// truncates the run; the truncated run is returned with the failure
/// recorded, never discarded.
#[derive(Debug, Clone)]
pub struct GiknRun<S: Real> {
    pub steps: Vec<GiknStep<S>>,
    /// Orbit point lists, starting with the seed orbit.
    pub orbits: Vec<Vec<TorusPoint<S, 3>>>,
    /// Center exponents, starting with the seed orbit's.
    pub lambda_trace: Vec<S>,
    pub eps_schedule: Vec<S>,
    pub kappa_schedule: Vec<S>,
    pub eps_sum: S,
    /// Product of the certified goodness levels.
    pub kappa_product: S,
    pub eta: S,
    pub rho: S,
    /// Per-step cap on |lambda(p)| / |lambda(q)|.
    pub decay_cap: S,
    pub limit: Option<LimitCheckSummary<S>>,
    /// How the final orbit covers the region sample and vice versa.
    pub region_cover: Option<SupportDensity<S>>,
    pub final_lambda: S,
    pub final_lambda_tol: S,
    pub requested_steps: usize,
    /// Step index (1-based) and message of the first broken contract.
    pub failure: Option<(usize, String)>,
    pub passed: bool,
}

/// Run the loop for `steps` steps from the seed orbit, halving the
/// closeness scale each time. Gates per step: the exponent window, the
/// goodness schedule, the tracking proportion (inside the step), then
/// strict exponent decrease and the decay cap (here). After the loop the
/// realized schedules feed the limit criterion and the final exponent is
/// checked against the tolerance.
pub fn run_gikn<S: Real, M: MapModel<S, 3>>(
    model: &M,
    seed_orbit: &PeriodicOrbit<S, 3>,
    steps: usize,
    params: &GiknParams<S>,
) -> Result<GiknRun<S>> {
    params.validate()?;
    if steps == 0 {
        return Err(DynError::Invalid("need at least one step".into()));
    }
    let lambda_1 = center_exponent_periodic(model, &seed_orbit.points)
        .map_err(|e| e.at("measuring the seed exponent"))?;
    if !(lambda_1 < S::zero()) {
        return Err(DynError::Invalid(format!(
            "the seed orbit must contract along the center, got lambda = {:.6e}",
            lambda_1.as_f64()
        )));
    }
    let mut q = seed_orbit.clone();
    q.lambda_c = Some(lambda_1);

    let decay_cap = params.decay_cap();
    let mut run_steps: Vec<GiknStep<S>> = Vec::with_capacity(steps);
    let mut orbits = vec![q.points.clone()];
    let mut lambda_trace = vec![lambda_1];
    let mut eps_schedule = Vec::with_capacity(steps);
    let mut kappa_schedule = Vec::with_capacity(steps);
    let mut failure: Option<(usize, String)> = None;
    let mut n_d_hint = None;

    let mut eps = params.eps0;
    for k in 1..=steps {
        eps *= S::of(0.5);
        let step_seed = mix_seed(params.seed, k);
        match gikn_step_seeded(model, &q, params, eps, step_seed, n_d_hint) {
            Err(e) => {
                failure = Some((k, format!("{e}")));
                break;
            }
            Ok(st) => {
                let ratio = st.ratio;
                orbits.push(st.orbit.points.clone());
                lambda_trace.push(st.lambda_p);
                eps_schedule.push(eps);
                kappa_schedule.push(st.kappa_required);
                let q_next = st.orbit.clone();
                let bad = if !(ratio < S::one()) {
                    Some(format!(
                        "exponent failed to decrease: |lambda| ratio = {:.6}",
                        ratio.as_f64()
                    ))
                } else if ratio > decay_cap {
                    Some(format!(
                        "decay cap breached: |lambda| ratio = {:.6} > {:.6}",
                        ratio.as_f64(),
                        decay_cap.as_f64()
                    ))
                } else {
                    None
                };
                n_d_hint = Some(st.n_d + st.tour_len);
                run_steps.push(st);
                if let Some(msg) = bad {
                    failure = Some((k, msg));
                    break;
                }
                q = q_next;
            }
        }
    }

    let mut limit = None;
    if !run_steps.is_empty() {
        let reports: Vec<GoodnessReport<S>> =
            run_steps.iter().map(|s| s.goodness.clone()).collect();
        let used = &orbits[..reports.len() + 1];
        match limit_check_from_reports(
            &reports,
            used,
            &eps_schedule,
            &kappa_schedule,
            params.n_terms,
        ) {
            Ok(summary) => limit = Some(summary),
            Err(e) => {
                if failure.is_none() {
                    failure = Some((run_steps.len(), format!("limit criterion: {e}")));
                }
            }
        }
    }

    let region_cover = if params.region_sample.is_empty() || orbits.len() < 2 {
        None
    } else {
        support_density(
            &[orbits.last().expect("nonempty").clone()],
            &params.region_sample,
            32,
        )
        .ok()
    };

    let final_lambda = *lambda_trace.last().expect("seeded");
    let eps_sum = eps_schedule.iter().fold(S::zero(), |a, e| a + *e);
    let kappa_product = run_steps
        .iter()
        .fold(S::one(), |a, s| a * s.goodness.kappa);
    let limit_passed = limit.as_ref().map_or(false, |l| l.passed);
    let passed = failure.is_none()
        && run_steps.len() == steps
        && limit_passed
        && final_lambda.abs() <= params.final_lambda_tol;

    Ok(GiknRun {
        steps: run_steps,
        orbits,
        lambda_trace,
        eps_schedule,
        kappa_schedule,
        eps_sum,
        kappa_product,
        eta: params.eta,
        rho: params.rho,
        decay_cap,
        limit,
        region_cover,
        final_lambda,
        final_lambda_tol: params.final_lambda_tol,
        requested_steps: steps,
        failure,
        passed,
    })
}
