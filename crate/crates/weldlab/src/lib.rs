//! Numerical laboratory for random conformal geometry.
//!
//! Gaussian free fields, Liouville fields, quantum surfaces, SLE-type Loewner
//! evolutions and conformal welding, at desk scale. Infinite measures are
//! represented by weighted samples over a finite window of the additive
//! constant; every random object is a pure function of a root seed.

pub mod conformal;
pub mod error;
pub mod gff;
pub mod ig;
pub mod io;
pub mod liouville;
pub mod qsurface;
pub mod rng;
pub mod sle;
pub mod stats;
pub mod welding;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// `Q = γ/2 + 2/γ`.
pub fn q_of(gamma: f64) -> f64 {
    gamma / 2.0 + 2.0 / gamma
}

/// `|z|_+ = max(|z|, 1)`.
pub fn abs_plus(z: C64) -> f64 {
    z.norm().max(1.0)
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 2.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("gamma must lie in (0,2), got {gamma}")))
    }
}
