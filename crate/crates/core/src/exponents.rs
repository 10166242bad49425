//! Lyapunov exponents: full spectra by QR cocycle iteration, center
//! exponents of periodic orbits by two independent routes, and Birkhoff
//! averages of the center log-expansion observable
//! phi(x) = log |Df restricted to E^c(x)|.

use nalgebra::SMatrix;

use crate::bundles::{orbit_splittings, periodic_orbit_splittings, Splitting};
use crate::error::{DynError, Result};
use crate::linalg;
use crate::real::Real;
use crate::systems::{orbit_segment, MapModel};
use crate::torus::TorusPoint;

/// phi at a point with known splitting: the log stretch of the center line.
pub fn center_log_expansion<S: Real, M: MapModel<S, 3>>(
    model: &M,
    sp: &Splitting<S, 3>,
) -> Result<S> {
    let ec = sp.e_c.as_ref().ok_or(DynError::CenterNotResolved)?;
    Ok((model.differential(&sp.base) * ec).norm().ln())
}

/// Convenience: estimate the splitting at `x` and evaluate phi there.
pub fn phi_at<S: Real, M: MapModel<S, 3>>(
    model: &M,
    x: &TorusPoint<S, 3>,
    lookback: usize,
    seed: u64,
) -> Result<S> {
    let sp = crate::bundles::estimate_splitting(model, x, lookback, seed)?;
    center_log_expansion(model, &sp)
}

#[derive(Debug, Clone)]
pub struct LyapunovSpectrum<S, const D: usize> {
    /// Averaged log diagonal entries of the cocycle QR iteration, sorted
    /// descending.
    pub exponents: [S; D],
    /// Accumulation length (after burn-in).
    pub n: usize,
    /// Discarded transient steps.
    pub burn_in: usize,
}

/// Full Lyapunov spectrum at `x` by QR-reorthogonalized cocycle iteration.
///
/// The frame starts at the identity and the first min(n/8, 1024) steps are
/// discarded before logs accumulate: the transient while the frame aligns
/// with the Oseledets flag would otherwise pollute the average at O(1/n),
/// which matters when the true exponents are wanted to many digits.
pub fn qr_lyapunov_spectrum<S: Real, const D: usize, M: MapModel<S, D>>(
    model: &M,
    x: &TorusPoint<S, D>,
    n: usize,
) -> Result<LyapunovSpectrum<S, D>> {
    if n < 100 {
        return Err(DynError::Invalid(format!(
            "spectrum estimation needs n >= 100, got {n}"
        )));
    }
    let burn_in = (n / 8).min(1024);
    let mut q = SMatrix::<S, D, D>::identity();
    let mut cur = *x;
    let mut sums = [S::zero(); D];
    for step in 0..burn_in + n {
        let b = model.differential(&cur) * q;
        let (nq, r) = linalg::mgs_qr(&b);
        q = nq;
        if step >= burn_in {
            for i in 0..D {
                sums[i] += r[(i, i)].ln();
            }
        }
        cur = model.evaluate(&cur);
    }
    let mut exponents = [S::zero(); D];
    for i in 0..D {
        exponents[i] = sums[i] / S::of_usize(n);
    }
    exponents.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(LyapunovSpectrum {
        exponents,
        n,
        burn_in,
    })
}

/// Center exponent of a periodic orbit, with an internal consistency gate.
///
/// Very short periods (<= 8) multiply the differentials into one monodromy
/// matrix and read off the middle eigenvalue modulus; beyond that the
/// product's eigenvalue spread outruns the f64 mantissa and the middle
/// root degrades, so longer periods use repeated QR laps around the cycle
/// (the frame is re-stabilized every step, and lap sums converge
/// geometrically to the exact log multipliers). Either route is then
/// cross-checked against the Birkhoff sum of phi over the cycle's own
/// invariant splitting; disagreement beyond 1e-8 is an error, not a
/// warning.
///
/// The cycle is first rotated to a canonical starting point, so relabeling
/// the same orbit cyclically returns bit-identical output.
pub fn center_exponent_periodic<S: Real, M: MapModel<S, 3>>(
    model: &M,
    cycle: &[TorusPoint<S, 3>],
) -> Result<S> {
    if cycle.is_empty() {
        return Err(DynError::Invalid("empty cycle".into()));
    }
    let cycle = canonical_rotation(cycle);
    let p = cycle.len();

    let cocycle = if p <= 8 {
        let mut m = SMatrix::<S, 3, 3>::identity();
        for x in &cycle {
            m = model.differential(x) * m;
        }
        let moduli = linalg::eigen3_moduli(&m);
        let mid = moduli[1];
        // Middle modulus within 1e-12 of a neighbor: no center slot.
        if !(mid > S::zero())
            || moduli[0] - mid < S::of(1e-12)
            || mid - moduli[2] < S::of(1e-12)
        {
            return Err(DynError::CenterNotResolved);
        }
        mid.ln() / S::of_usize(p)
    } else {
        qr_lap_middle_exponent(model, &cycle)?
    };

    // Independent route: Birkhoff average of phi over the periodic
    // splitting.
    let splits = periodic_orbit_splittings(model, &cycle, 0x9e3779b97f4a7c15)?;
    let mut sum = S::zero();
    for sp in &splits {
        sum += center_log_expansion(model, sp)?;
    }
    let birkhoff = sum / S::of_usize(p);

    if (cocycle - birkhoff).abs() > S::of(1e-8) {
        return Err(DynError::CenterRouteMismatch {
            cocycle: cocycle.as_f64(),
            birkhoff: birkhoff.as_f64(),
        });
    }
    Ok(cocycle)
}

fn canonical_rotation<S: Real, const D: usize>(cycle: &[TorusPoint<S, D>]) -> Vec<TorusPoint<S, D>> {
    let mut best = 0usize;
    for i in 1..cycle.len() {
        let (a, b) = (cycle[i].coords(), cycle[best].coords());
        for d in 0..D {
            if a[d] < b[d] {
                best = i;
                break;
            }
            if a[d] > b[d] {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(cycle.len());
    out.extend_from_slice(&cycle[best..]);
    out.extend_from_slice(&cycle[..best]);
    out
}

/// Middle Lyapunov exponent of a long cycle by whole-lap QR iteration: lap
/// sums converge geometrically to the exact log multipliers as the frame
/// locks onto the periodic Oseledets flag.
fn qr_lap_middle_exponent<S: Real, M: MapModel<S, 3>>(
    model: &M,
    cycle: &[TorusPoint<S, 3>],
) -> Result<S> {
    let p = cycle.len();
    let mut q = SMatrix::<S, 3, 3>::identity();
    let mut prev: Option<[S; 3]> = None;
    for _lap in 0..96 {
        let mut sums = [S::zero(); 3];
        for x in cycle {
            let b = model.differential(x) * q;
            let (nq, r) = linalg::mgs_qr(&b);
            q = nq;
            for i in 0..3 {
                sums[i] += r[(i, i)].ln();
            }
        }
        if let Some(pr) = prev {
            let scale = S::one().max(sums[1].abs());
            if (sums[1] - pr[1]).abs() <= S::of(1e-11) * scale {
                // Per-iterate multiplier moduli; the middle one must sit
                // more than 1e-12 away from both neighbors.
                let pp = S::of_usize(p);
                let m = [
                    (sums[0] / pp).exp(),
                    (sums[1] / pp).exp(),
                    (sums[2] / pp).exp(),
                ];
                if m[0] - m[1] < S::of(1e-12) || m[1] - m[2] < S::of(1e-12) {
                    return Err(DynError::CenterNotResolved);
                }
                return Ok(sums[1] / pp);
            }
        }
        prev = Some(sums);
    }
    Err(DynError::CenterNotResolved)
}

#[derive(Debug, Clone)]
pub struct BirkhoffAverage<S> {
    pub mean: S,
    /// Points whose center direction resolved; the mean runs over these.
    pub resolved: usize,
    pub total: usize,
}

/// Average phi along the forward orbit of `x` (n terms), using the
/// two-sweep orbit splitting. Fails if more than 1% of the points do not
/// resolve a center direction.
pub fn birkhoff_center_average<S: Real, M: MapModel<S, 3>>(
    model: &M,
    x: &TorusPoint<S, 3>,
    n: usize,
    lookback: usize,
    seed: u64,
) -> Result<BirkhoffAverage<S>> {
    if n == 0 {
        return Err(DynError::Invalid("empty Birkhoff average".into()));
    }
    let seg = orbit_segment(model, x, (n - 1) as i64, n)?;
    let splits = orbit_splittings(model, &seg, lookback, seed)?;
    let mut sum = S::zero();
    let mut resolved = 0usize;
    for sp in &splits {
        if sp.e_c.is_some() {
            sum += center_log_expansion(model, sp)?;
            resolved += 1;
        }
    }
    if (n - resolved) * 100 > n {
        return Err(DynError::OrbitSplittingUnresolved {
            unresolved: n - resolved,
            total: n,
        });
    }
    Ok(BirkhoffAverage {
        mean: sum / S::of_usize(resolved),
        resolved,
        total: n,
    })
}

/// Center exponent of an atomic measure: the weighted average of phi over
/// the atoms, each with its own estimated splitting. Atoms whose center
/// direction does not resolve are skipped (with weight renormalization)
/// as long as they carry at most 1% of the atom count.
pub fn measure_center_exponent<S: Real, M: MapModel<S, 3>>(
    model: &M,
    mu: &crate::measures::AtomicMeasure<S, 3>,
    lookback: usize,
    seed: u64,
) -> Result<S> {
    let total = mu.len();
    let mut sum = S::zero();
    let mut mass = S::zero();
    let mut unresolved = 0usize;
    for (i, x) in mu.atoms().iter().enumerate() {
        match crate::bundles::estimate_splitting(model, x, lookback, seed) {
            Ok(sp) if sp.e_c.is_some() => {
                sum += mu.weight(i) * center_log_expansion(model, &sp)?;
                mass += mu.weight(i);
            }
            Ok(_) | Err(DynError::SplittingUnresolved) | Err(DynError::CenterNotResolved) => {
                unresolved += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if unresolved * 100 > total {
        return Err(DynError::OrbitSplittingUnresolved {
            unresolved,
            total,
        });
    }
    if !(mass > S::zero()) {
        return Err(DynError::CenterNotResolved);
    }
    Ok(sum / mass)
}

/// Sup-norm of phi estimated on a uniform grid, inflated by the safety
/// factor (grid maxima undershoot the true sup).
pub fn phi_sup_norm<S: Real, M: MapModel<S, 3>>(
    model: &M,
    grid_res: usize,
    lookback: usize,
    safety: f64,
    seed: u64,
) -> Result<S> {
    let phi = phi_grid(model, grid_res, lookback, seed)?;
    let mut sup = S::zero();
    for v in &phi {
        sup = sup.max(v.abs());
    }
    Ok(sup * S::of(1.0 + safety))
}

/// Lipschitz constant of phi estimated from grid differences along the
/// axes, inflated by the safety factor.
pub fn phi_lipschitz<S: Real, M: MapModel<S, 3>>(
    model: &M,
    grid_res: usize,
    lookback: usize,
    safety: f64,
    seed: u64,
) -> Result<S> {
    let phi = phi_grid(model, grid_res, lookback, seed)?;
    let r = grid_res;
    let h = S::one() / S::of_usize(r);
    let mut lip = S::zero();
    let at = |i: usize, j: usize, k: usize| phi[(k * r + j) * r + i];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let c = at(i, j, k);
                let nbrs = [at((i + 1) % r, j, k), at(i, (j + 1) % r, k), at(i, j, (k + 1) % r)];
                for nb in nbrs {
                    lip = lip.max((nb - c).abs() / h);
                }
            }
        }
    }
    Ok(lip * S::of(1.0 + safety))
}

/// The center observable phi bundled with its estimation knobs and a
/// grid-sampled sup-norm bound, so downstream stages do not thread
/// lookback/seed/safety triples around separately.
pub struct CenterCocycle<'a, S: Real, M: MapModel<S, 3>> {
    model: &'a M,
    lookback: usize,
    seed: u64,
    sup_norm: S,
}

impl<'a, S: Real, M: MapModel<S, 3>> CenterCocycle<'a, S, M> {
    pub fn new(
        model: &'a M,
        grid_res: usize,
        lookback: usize,
        safety: f64,
        seed: u64,
    ) -> Result<Self> {
        let sup_norm = phi_sup_norm(model, grid_res, lookback, safety, seed)?;
        Ok(Self {
            model,
            lookback,
            seed,
            sup_norm,
        })
    }

    pub fn phi(&self, x: &TorusPoint<S, 3>) -> Result<S> {
        phi_at(self.model, x, self.lookback, self.seed)
    }

    /// Upper bound on sup |phi| (grid max times the safety factor).
    pub fn sup_norm(&self) -> S {
        self.sup_norm
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn phi_grid<S: Real, M: MapModel<S, 3>>(
    model: &M,
    grid_res: usize,
    lookback: usize,
    seed: u64,
) -> Result<Vec<S>> {
    assert!(grid_res >= 2);
    let r = grid_res;
    let mut out = Vec::with_capacity(r * r * r);
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let x = TorusPoint::wrap_unchecked(nalgebra::Vector3::new(
                    S::of_usize(i) / S::of_usize(r),
                    S::of_usize(j) / S::of_usize(r),
                    S::of_usize(k) / S::of_usize(r),
                ));
                out.push(phi_at(model, &x, lookback, seed)?);
            }
        }
    }
    Ok(out)
}
