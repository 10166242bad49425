use num_traits::cast::{FromPrimitive, ToPrimitive};

/// Scalar abstraction for all numerics in this crate.
///
/// Everything is written against this trait so the same code runs in `f64`
/// (the default throughout) and `f32` (smoke-level sanity checks). The two
/// helpers exist because literals show up constantly in dynamical formulas
/// and `S::from_f64(0.5).unwrap()` everywhere is unreadable.
pub trait Real: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {
    /// Convert an `f64` constant into `Self` (lossy for `f32`).
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar is representable as f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits in scalar")
    }
}

impl<T: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy> Real for T {}
