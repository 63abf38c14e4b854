//! Standard normal density, distribution and tail functions.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ(x), evaluated through `erfc` so the lower tail keeps full relative precision.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x) without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// P(lo ≤ Z ≤ hi) for a standard normal Z.
pub fn interval_prob(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo >= 0.0 {
        sf(lo) - sf(hi)
    } else if hi <= 0.0 {
        cdf(hi) - cdf(lo)
    } else {
        1.0 - cdf(lo) - sf(hi)
    }
}

/// E[Z² 1{Z > u}] = u φ(u) + 1 − Φ(u).
pub fn upper_second_moment(u: f64) -> f64 {
    if u == f64::INFINITY {
        return 0.0;
    }
    if u == f64::NEG_INFINITY {
        return 1.0;
    }
    u * pdf(u) + sf(u)
}

/// E[Z² 1{Z < l}] = Φ(l) − l φ(l).
pub fn lower_second_moment(l: f64) -> f64 {
    upper_second_moment(-l)
}

/// E[Z⁴ 1{Z > u}] = (u³ + 3u) φ(u) + 3(1 − Φ(u)).
pub fn upper_fourth_moment(u: f64) -> f64 {
    if u == f64::INFINITY {
        return 0.0;
    }
    if u == f64::NEG_INFINITY {
        return 3.0;
    }
    (u * u * u + 3.0 * u) * pdf(u) + 3.0 * sf(u)
}

/// E[Z⁴ 1{Z < l}].
pub fn lower_fourth_moment(l: f64) -> f64 {
    upper_fourth_moment(-l)
}
