//! Match-length (Lempel-Ziv) entropy-rate estimation.
//!
//! For each position `i`, `Λ_i` is the length of the shortest substring
//! starting at `i` that does not occur entirely inside `seq[..i]`. When the
//! whole remainder does occur, `Λ_i` is one more than the remaining length.
//! The estimate is `n log2 n / Σ Λ_i` bits per symbol.

use super::suffix::{inverse, lcp_array, suffix_array, SparseMin};

/// `Λ_i` for every position, computed in O(n log n).
///
/// Uses the fact that the longest earlier match at `i + 1` is at least one
/// shorter than the one at `i`, so total extension work is linear; each
/// "does `seq[i..i+L)` occur inside `seq[..i]`" test is a suffix-array
/// interval lookup plus a minimum over suffix positions.
pub fn match_lengths(seq: &[u32]) -> Vec<usize> {
    let n = seq.len();
    if n == 0 {
        return Vec::new();
    }
    let sa = suffix_array(seq);
    let isa = inverse(&sa);
    let lcp = lcp_array(seq, &sa, &isa);
    let lcp_min = SparseMin::new(&lcp);
    let pos_min = SparseMin::new(&sa);

    // Some suffix j with LCP(j, i) >= len and j + len <= i?
    let occurs_before = |i: usize, len: usize| -> bool {
        if len > i {
            return false;
        }
        let r = isa[i];
        // widen [lo, hi] around r while neighbouring LCPs stay >= len
        let (mut a, mut b) = (0, r);
        while a < b {
            let mid = (a + b) / 2;
            if lcp_min.min(mid + 1, r) >= len {
                b = mid;
            } else {
                a = mid + 1;
            }
        }
        let lo = a;
        let (mut a, mut b) = (r, n - 1);
        while a < b {
            let mid = (a + b).div_ceil(2);
            if lcp_min.min(r + 1, mid) >= len {
                a = mid;
            } else {
                b = mid - 1;
            }
        }
        let hi = a;
        pos_min.min(lo, hi) + len <= i
    };

    let mut out = Vec::with_capacity(n);
    let mut m = 0usize;
    for i in 0..n {
        m = m.saturating_sub(1).min(n - i);
        while m < n - i && occurs_before(i, m + 1) {
            m += 1;
        }
        out.push(m + 1);
    }
    out
}

/// `n log2 n / Σ Λ_i`; `None` when `n < 2`.
pub fn lz_estimate(seq: &[u32]) -> Option<f64> {
    let n = seq.len();
    if n < 2 {
        return None;
    }
    let total: usize = match_lengths(seq).iter().sum();
    let nf = n as f64;
    Some(nf * nf.log2() / total as f64)
}
