use thiserror::Error;

/// Errors shared across the crate.
///
/// The convention: a failed *numerical verification* (a residual that did not
/// shrink, a splitting that did not separate) is an error, while a negative
/// *mathematical answer* (an empty good subset, κ = 0) is an ordinary result.
#[derive(Debug, Error)]
pub enum DynError {
    #[error("non-finite coordinate in input")]
    NonFinite,

    #[error("consecutive gap {gap:.6} >= 1/2, lift is ambiguous")]
    AmbiguousLift { gap: f64 },

    #[error("cover point does not project to the stated base point")]
    LiftMismatch,

    #[error("orbit segment length {requested} exceeds cap {cap}")]
    SegmentTooLong { requested: usize, cap: usize },

    #[error("splitting not resolved at this N")]
    SplittingUnresolved,

    #[error("center not resolved")]
    CenterNotResolved,

    #[error("center exponent routes disagree: cocycle {cocycle:.12e} vs Birkhoff {birkhoff:.12e}")]
    CenterRouteMismatch { cocycle: f64, birkhoff: f64 },

    #[error("splitting unresolved on {unresolved} of {total} orbit points (> 1%)")]
    OrbitSplittingUnresolved { unresolved: usize, total: usize },

    #[error("leaf growth lost the unstable direction")]
    LeafLostDirection,

    #[error("leaf vertex budget {cap} exhausted before arc radius {target:.3e} was reached")]
    LeafBudgetExhausted { cap: usize, target: f64 },

    #[error("minimality not observed at this d")]
    NoDenseReturn,

    #[error("newton did not converge: residual {residual:.3e} after {iterations} iterations")]
    NewtonDiverged { residual: f64, iterations: usize },

    #[error("shadowed orbit escaped")]
    ShadowEscaped { distance: f64, bound: f64 },

    #[error("mostly expanding hypothesis not observed; GIKN step has no expansion reservoir")]
    NoExpansionReservoir,

    #[error("empty (m, n) window for every n up to {n_cap}")]
    EmptyWindow { n_cap: usize },

    #[error("pseudo-orbit gap {gap:.3e} exceeds bound {bound:.3e}")]
    GapTooLarge { gap: f64, bound: f64 },

    #[error("{context}: {source}")]
    Stage {
        context: &'static str,
        #[source]
        source: Box<DynError>,
    },

    #[error("{0}")]
    Invalid(String),
}

impl DynError {
    /// Wrap an error with the pipeline stage it came from.
    pub fn at(self, context: &'static str) -> Self {
        DynError::Stage {
            context,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, DynError>;
