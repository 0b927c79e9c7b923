//! Burrows-Wheeler transform over integer symbols with a unique lowest sentinel.

use std::collections::BTreeMap;

use super::suffix::suffix_array;

/// Last column of the sorted rotations of `seq + $`. `None` is the sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BwtOutput {
    pub transformed: Vec<Option<u32>>,
    /// Row of the sorted rotation matrix holding the original `seq + $`.
    pub primary_index: usize,
}

impl BwtOutput {
    /// The transformed symbols with the sentinel removed.
    pub fn without_sentinel(&self) -> Vec<u32> {
        self.transformed.iter().flatten().copied().collect()
    }
}

/// Forward transform. Because the sentinel is unique and sorts lowest,
/// sorting rotations is the same as sorting suffixes.
pub fn bwt_forward(seq: &[u32]) -> BwtOutput {
    // shift by one so that 0 is free for the sentinel
    let mut text: Vec<u32> = seq
        .iter()
        .map(|&s| s.checked_add(1).expect("symbol u32::MAX is reserved"))
        .collect();
    text.push(0);
    let sa = suffix_array(&text);
    let mut primary_index = 0;
    let transformed = sa
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            if i == 0 {
                primary_index = r;
                None
            } else {
                match text[i - 1] {
                    0 => None,
                    c => Some(c - 1),
                }
            }
        })
        .collect();
    BwtOutput {
        transformed,
        primary_index,
    }
}

/// Inverse transform via the last-to-first mapping.
pub fn bwt_inverse(out: &BwtOutput) -> Vec<u32> {
    let last = &out.transformed;
    let n = last.len();
    if n == 0 {
        return Vec::new();
    }
    // rank of each row's last symbol among equal symbols above it
    let mut seen: BTreeMap<Option<u32>, usize> = BTreeMap::new();
    let occ: Vec<usize> = last
        .iter()
        .map(|c| {
            let e = seen.entry(*c).or_insert(0);
            *e += 1;
            *e - 1
        })
        .collect();
    // first row of each symbol in the sorted first column
    let mut first_row = BTreeMap::new();
    let mut acc = 0;
    for (c, count) in &seen {
        first_row.insert(*c, acc);
        acc += count;
    }
    debug_assert_eq!(last[out.primary_index], None);

    let mut seq = vec![0u32; n - 1];
    // row 0 is the rotation starting with the sentinel; its last symbol ends seq
    let mut row = 0;
    for slot in seq.iter_mut().rev() {
        let c = last[row];
        *slot = c.expect("sentinel appears once");
        row = first_row[&c] + occ[row];
    }
    seq
}
