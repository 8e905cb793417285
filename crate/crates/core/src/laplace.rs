//! Laplace noise by inverse CDF.

use rand::Rng;

use crate::rng::open_unit;

/// Inverse CDF of Laplace(0, `scale`) at `u` in `(0, 1)`.
pub fn laplace_quantile(u: f64, scale: f64) -> f64 {
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

/// One Laplace(0, `scale`) draw from a single clamped uniform.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    laplace_quantile(open_unit(rng), scale)
}
