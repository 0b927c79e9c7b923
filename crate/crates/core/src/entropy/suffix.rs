//! Suffix arrays over integer alphabets, LCP arrays and range-minimum tables.

/// Suffix array of `text` by prefix doubling with radix sorting, O(n log n).
pub fn suffix_array(text: &[u32]) -> Vec<usize> {
    let n = text.len();
    if n == 0 {
        return Vec::new();
    }
    // initial ranks: dense order of the symbols
    let mut sorted: Vec<u32> = text.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rank: Vec<usize> = text
        .iter()
        .map(|s| sorted.binary_search(s).expect("symbol present"))
        .collect();
    let mut max_rank = sorted.len();

    let mut sa: Vec<usize> = (0..n).collect();
    sa.sort_by_key(|&i| rank[i]);
    let mut tmp = vec![0usize; n];
    let mut by_second = vec![0usize; n];
    let mut counts = Vec::new();
    let mut k = 1;
    loop {
        let second = |i: usize, rank: &[usize]| if i + k < n { rank[i + k] + 1 } else { 0 };
        // order by second key: suffixes without one first, the rest follow sa
        let mut p = 0;
        for i in n.saturating_sub(k)..n {
            by_second[p] = i;
            p += 1;
        }
        for &i in &sa {
            if i >= k {
                by_second[p] = i - k;
                p += 1;
            }
        }
        // stable counting sort by first key
        counts.clear();
        counts.resize(max_rank + 1, 0);
        for &i in &by_second {
            counts[rank[i] + 1] += 1;
        }
        for c in 1..counts.len() {
            counts[c] += counts[c - 1];
        }
        for &i in &by_second {
            let slot = &mut counts[rank[i]];
            sa[*slot] = i;
            *slot += 1;
        }

        tmp[sa[0]] = 0;
        for r in 1..n {
            let (a, b) = (sa[r - 1], sa[r]);
            let same = rank[a] == rank[b] && second(a, &rank) == second(b, &rank);
            tmp[b] = tmp[a] + usize::from(!same);
        }
        std::mem::swap(&mut rank, &mut tmp);
        max_rank = rank[sa[n - 1]] + 1;
        if max_rank == n {
            break;
        }
        k *= 2;
    }
    sa
}

/// Inverse permutation of a suffix array.
pub fn inverse(sa: &[usize]) -> Vec<usize> {
    let mut isa = vec![0; sa.len()];
    for (r, &i) in sa.iter().enumerate() {
        isa[i] = r;
    }
    isa
}

/// Kasai's algorithm: `lcp[r]` is the longest common prefix of the suffixes
/// at ranks `r-1` and `r`; `lcp[0] = 0`.
pub fn lcp_array(text: &[u32], sa: &[usize], isa: &[usize]) -> Vec<usize> {
    let n = text.len();
    let mut lcp = vec![0; n];
    let mut h = 0usize;
    for i in 0..n {
        let r = isa[i];
        if r == 0 {
            h = 0;
            continue;
        }
        let j = sa[r - 1];
        while i + h < n && j + h < n && text[i + h] == text[j + h] {
            h += 1;
        }
        lcp[r] = h;
        h = h.saturating_sub(1);
    }
    lcp
}

/// Sparse table answering range-minimum queries in O(1).
#[derive(Debug, Clone)]
pub struct SparseMin {
    levels: Vec<Vec<usize>>,
}

impl SparseMin {
    pub fn new(values: &[usize]) -> Self {
        let mut levels = vec![values.to_vec()];
        let mut width = 1;
        while 2 * width <= values.len() {
            let prev = levels.last().unwrap();
            let next: Vec<usize> = (0..=values.len() - 2 * width)
                .map(|i| prev[i].min(prev[i + width]))
                .collect();
            levels.push(next);
            width *= 2;
        }
        SparseMin { levels }
    }

    /// Minimum over `lo..=hi`.
    pub fn min(&self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let len = hi - lo + 1;
        let level = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let row = &self.levels[level];
        row[lo].min(row[hi + 1 - (1 << level)])
    }
}
