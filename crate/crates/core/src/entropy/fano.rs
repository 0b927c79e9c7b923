//! Maximum predictability from an entropy rate via Fano's inequality.
//!
//! Solves `S = H_b(Π) + (1 - Π) log2(N - 1)` for `Π ∈ [1/N, 1]`, where `H_b`
//! is the binary entropy in bits.

/// Residual tolerance of the returned root.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// `H_b(Π) + (1 - Π) log2(N - 1) - S`.
pub fn fano_residual(pi: f64, entropy: f64, n_locations: usize) -> f64 {
    let tail = if n_locations > 1 {
        (1.0 - pi) * ((n_locations - 1) as f64).log2()
    } else {
        0.0
    };
    binary_entropy(pi) + tail - entropy
}

/// Upper bound on next-location predictability for entropy `entropy` (bits)
/// over `n_locations` distinct locations.
///
/// One location, or zero entropy, gives 1. Entropy at or above `log2 N`
/// clamps to `1/N`. Otherwise the root is found by bisection; the residual
/// decreases monotonically in `Π` on `[1/N, 1]`.
pub fn max_predictability(entropy: f64, n_locations: usize) -> f64 {
    if n_locations <= 1 || entropy <= 0.0 {
        return 1.0;
    }
    let n = n_locations as f64;
    if entropy >= n.log2() {
        return 1.0 / n;
    }
    let (mut lo, mut hi) = (1.0 / n, 1.0);
    let mut best = (f64::INFINITY, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = fano_residual(mid, entropy, n_locations);
        if r.abs() < best.0 {
            best = (r.abs(), mid);
        }
        if r == 0.0 || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.1
}
