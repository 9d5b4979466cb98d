//! Noise primitives. Every sampler takes its generator explicitly so draws
//! are replayable.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Uniform on the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Gumbel(0, β) via `−β ln(−ln U)`.
pub fn sample_gumbel<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    -beta * (-open_unit(rng).ln()).ln()
}

/// Laplace(0, b) via the inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    let u = open_unit(rng) - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Zero-mean Gaussian with standard deviation `sigma`.
pub fn sample_gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}
