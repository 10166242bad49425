//! Empirical sampling of center expansion along unstable leaves.
//!
//! Points drawn uniformly in arc length on a grown leaf stand in for
//! Lebesgue-random leaf points; their forward Birkhoff averages of the
//! center log-expansion probe the family of measures such averages can
//! converge to. Everything here is a finite-sample, finite-horizon
//! diagnostic: the report never claims convergence, it records what was
//! observed and labels the expansion verdict as empirical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundles::{orbit_splittings, DEFAULT_LOOKBACK};
use crate::error::{DynError, Result};
use crate::exponents::{birkhoff_center_average, center_log_expansion};
use crate::leaf::{grow_unstable_leaf, DEFAULT_VERTEX_BUDGET};
use crate::measures::AtomicMeasure;
use crate::real::Real;
use crate::systems::{orbit_segment, MapModel};
use crate::torus::TorusPoint;

/// Smallest horizon accepted for sampling: below this the partial
/// averages are all transient and the report would measure noise.
pub const MIN_HORIZON: usize = 1_000;

/// Default positivity threshold for the expansion verdict.
pub const POSITIVITY_THRESHOLD: f64 = 1e-3;

/// One leaf point with its forward center-expansion record.
#[derive(Debug, Clone)]
pub struct GibbsSample<S: Real, const D: usize> {
    /// Sampled leaf point (uniform in arc length).
    pub y: TorusPoint<S, D>,
    /// Arc-length coordinate of `y` on the leaf (zero at the anchor).
    pub arc: S,
    pub horizon: usize,
    /// Uniform measure on the first `horizon` forward iterates of `y`.
    pub empirical: AtomicMeasure<S, D>,
    /// Full-horizon Birkhoff average of the center log-expansion.
    pub center_average: S,
    /// k -> (1/k) sum of the first k center log-expansions, k = 1..=horizon.
    pub partial_averages: Vec<S>,
    /// Orbit points whose center direction had to be borrowed from a
    /// neighbor (at most 1% or the sample is rejected).
    pub unresolved: usize,
}

/// Draw `n_samples` points uniformly in arc length on the unstable leaf
/// through `anchor` and record each one's forward center-expansion data.
///
/// Sample `i` is produced from stream `i` of the master seed, so earlier
/// samples are unchanged when `n_samples` grows and the whole output is a
/// pure function of the arguments.
pub fn sample_u_gibbs<S: Real, M: MapModel<S, 3>>(
    model: &M,
    anchor: &TorusPoint<S, 3>,
    leaf_radius: S,
    n: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<GibbsSample<S, 3>>> {
    if n < MIN_HORIZON {
        return Err(DynError::Invalid(format!(
            "sampling horizon {n} below the minimum {MIN_HORIZON}"
        )));
    }
    if n_samples == 0 {
        return Err(DynError::Invalid("need at least one sample".into()));
    }
    if !(leaf_radius > S::zero()) {
        return Err(DynError::Invalid("leaf radius must be positive".into()));
    }
    let h = leaf_radius / S::of(512.0);
    let leaf = grow_unstable_leaf(model, anchor, leaf_radius, h, DEFAULT_VERTEX_BUDGET)?;
    let (lo, hi) = leaf.extent();

    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let u: f64 = rng.gen();
        let arc = lo + (hi - lo) * S::of(u);
        let y = leaf.point_at_arc(arc);
        let orbit = orbit_segment(model, &y, (n - 1) as i64, n)?;
        let (phis, unresolved) = phi_along(model, &orbit, seed ^ 0x9b1f)?;

        let mut partial_averages = Vec::with_capacity(n);
        let mut sum = S::zero();
        for (k, phi) in phis.iter().enumerate() {
            sum += *phi;
            partial_averages.push(sum / S::of_usize(k + 1));
        }
        let center_average = partial_averages[n - 1];
        out.push(GibbsSample {
            y,
            arc,
            horizon: n,
            empirical: AtomicMeasure::uniform_on(&orbit)?,
            center_average,
            partial_averages,
            unresolved,
        });
    }
    Ok(out)
}

/// Center log-expansion at every orbit point via the two-sweep splitting.
/// Isolated unresolved points borrow the nearest resolved value so the
/// partial-average trace stays total; more than 1% unresolved is an error.
pub(crate) fn phi_along<S: Real, M: MapModel<S, 3>>(
    model: &M,
    orbit: &[TorusPoint<S, 3>],
    seed: u64,
) -> Result<(Vec<S>, usize)> {
    let splits = orbit_splittings(model, orbit, DEFAULT_LOOKBACK, seed)?;
    let n = orbit.len();
    let mut phis: Vec<Option<S>> = Vec::with_capacity(n);
    let mut unresolved = 0usize;
    for sp in &splits {
        if sp.e_c.is_some() {
            phis.push(Some(center_log_expansion(model, sp)?));
        } else {
            phis.push(None);
            unresolved += 1;
        }
    }
    if unresolved * 100 > n {
        return Err(DynError::OrbitSplittingUnresolved {
            unresolved,
            total: n,
        });
    }
    let mut filled = Vec::with_capacity(n);
    let mut last: Option<S> = None;
    for p in &phis {
        if p.is_some() {
            last = *p;
        }
        filled.push(last);
    }
    // Leading gap, if any: borrow backwards from the first resolved value.
    let mut next: Option<S> = None;
    for (k, p) in filled.iter_mut().enumerate().rev() {
        if p.is_none() {
            *p = next;
        } else {
            next = *p;
        }
        let _ = k;
    }
    let out: Option<Vec<S>> = filled.into_iter().collect();
    match out {
        Some(v) => Ok((v, unresolved)),
        None => Err(DynError::CenterNotResolved),
    }
}

/// Summary of a batch of leaf samples: the empirical expansion floor and
/// the time by which all sampled averages have cleared it.
#[derive(Debug, Clone)]
pub struct GibbsReport<S> {
    pub n_samples: usize,
    pub horizon: usize,
    pub min_average: S,
    pub max_average: S,
    pub mean_average: S,
    pub stddev_average: S,
    /// Empirical expansion floor: exactly half the minimum sampled
    /// average (the half-the-infimum rule).
    pub tau0_hat: S,
    /// Margin used for the uniformization time below: tau0_hat / 2.
    pub delta_hat: S,
    /// Least N such that every sampled partial average exceeds
    /// tau0_hat + delta_hat from N on; None when the verdict is negative.
    pub n0_hat: Option<usize>,
    pub positivity_threshold: S,
    /// Empirical verdict only: finitely many samples at a finite horizon
    /// watched the expansion stay positive. Requires
    /// min_average > positivity_threshold.
    pub empirically_mostly_expanding: bool,
}

/// Reduce samples to a [`GibbsReport`] with the default positivity
/// threshold.
pub fn estimate_tau0<S: Real, const D: usize>(
    samples: &[GibbsSample<S, D>],
) -> Result<GibbsReport<S>> {
    estimate_tau0_with(samples, S::of(POSITIVITY_THRESHOLD))
}

pub fn estimate_tau0_with<S: Real, const D: usize>(
    samples: &[GibbsSample<S, D>],
    positivity_threshold: S,
) -> Result<GibbsReport<S>> {
    if samples.is_empty() {
        return Err(DynError::Invalid("no samples to summarize".into()));
    }
    let horizon = samples[0].horizon;
    if samples.iter().any(|s| s.horizon != horizon) {
        return Err(DynError::Invalid("samples mix horizons".into()));
    }
    let n = samples.len();
    let mut min_average = samples[0].center_average;
    let mut max_average = min_average;
    let mut sum = S::zero();
    for s in samples {
        min_average = min_average.min(s.center_average);
        max_average = max_average.max(s.center_average);
        sum += s.center_average;
    }
    let mean_average = sum / S::of_usize(n);
    let mut var = S::zero();
    for s in samples {
        let d = s.center_average - mean_average;
        var += d * d;
    }
    let stddev_average = if n > 1 {
        (var / S::of_usize(n - 1)).sqrt()
    } else {
        S::zero()
    };

    let tau0_hat = min_average * S::of(0.5);
    let delta_hat = tau0_hat * S::of(0.5);
    let empirically_mostly_expanding = min_average > positivity_threshold;

    let n0_hat = if empirically_mostly_expanding {
        // Per sample: one past the last partial average at or below the
        // bar. The full-horizon average sits above it by construction
        // (it is at least 2*tau0_hat > tau0_hat + delta_hat), so the
        // maximum over samples is a genuine uniformization time.
        let bar = tau0_hat + delta_hat;
        let mut n0 = 1usize;
        for s in samples {
            let mut last_bad = 0usize;
            for (k, avg) in s.partial_averages.iter().enumerate() {
                if !(*avg > bar) {
                    last_bad = k + 1;
                }
            }
            n0 = n0.max(last_bad + 1);
        }
        Some(n0)
    } else {
        None
    };

    Ok(GibbsReport {
        n_samples: n,
        horizon,
        min_average,
        max_average,
        mean_average,
        stddev_average,
        tau0_hat,
        delta_hat,
        n0_hat,
        positivity_threshold,
        empirically_mostly_expanding,
    })
}

/// Center Birkhoff averages from volume-uniform random starting points:
/// the sign test for average center expansion with respect to volume.
#[derive(Debug, Clone)]
pub struct LebCenterEstimate<S> {
    pub mean: S,
    /// Empirical standard error of the mean (sample stddev / sqrt(count)).
    pub std_error: S,
    pub per_sample: Vec<S>,
    pub horizon: usize,
}

pub fn leb_center_exponent<S: Real, M: MapModel<S, 3>>(
    model: &M,
    n: usize,
    n_samples: usize,
    seed: u64,
) -> Result<LebCenterEstimate<S>> {
    if n < MIN_HORIZON {
        return Err(DynError::Invalid(format!(
            "sampling horizon {n} below the minimum {MIN_HORIZON}"
        )));
    }
    if n_samples == 0 {
        return Err(DynError::Invalid("need at least one sample".into()));
    }
    let mut per_sample = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let x = TorusPoint::wrap_unchecked(nalgebra::SVector::<S, 3>::from_fn(|_, _| {
            S::of(rng.gen::<f64>())
        }));
        let avg = birkhoff_center_average(model, &x, n, DEFAULT_LOOKBACK, seed ^ 0x9b1f)?;
        per_sample.push(avg.mean);
    }
    let count = S::of_usize(n_samples);
    let mean = per_sample.iter().fold(S::zero(), |a, b| a + *b) / count;
    let std_error = if n_samples > 1 {
        let var = per_sample
            .iter()
            .map(|v| (*v - mean) * (*v - mean))
            .fold(S::zero(), |a, b| a + b)
            / S::of_usize(n_samples - 1);
        (var / count).sqrt()
    } else {
        S::zero()
    };
    Ok(LebCenterEstimate {
        mean,
        std_error,
        per_sample,
        horizon: n,
    })
}
