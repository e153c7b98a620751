//! The nine-district worked example used throughout the tests and docs.
//!
//! Labels in the literature are 1-based; the helpers here convert them.

use crate::graph::EliminationOrdering;
use crate::windows::WindowFamily;

/// 1-based labels to 0-based indices.
pub fn zero_based(labels: &[usize]) -> Vec<usize> {
    labels.iter().map(|v| v - 1).collect()
}

pub fn one_based_pairs(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    pairs.iter().map(|&(a, b)| (a - 1, b - 1)).collect()
}

/// The 20-window family over nine vertices.
pub fn z20_windows() -> WindowFamily {
    let one_based: [&[usize]; 20] = [
        &[1],
        &[2],
        &[3],
        &[4],
        &[5],
        &[6],
        &[7],
        &[8],
        &[9],
        &[4, 5],
        &[7, 8],
        &[4, 8],
        &[3, 7],
        &[4, 5, 8],
        &[2, 4],
        &[1, 3],
        &[2, 3],
        &[2, 4, 5],
        &[3, 6],
        &[8, 9],
    ];
    WindowFamily::new(one_based.iter().map(|w| zero_based(w)).collect()).expect("fixture windows are valid")
}

/// Observed counts for the worked example; they sum to 28.
pub const Z20_COUNTS: [u32; 9] = [2, 7, 7, 2, 2, 2, 2, 2, 2];

/// Elimination ordering (9, 1, 6, 3, 7, 2, 4, 5, 8) in 1-based labels.
pub fn reference_ordering() -> EliminationOrdering {
    EliminationOrdering::new(zero_based(&[9, 1, 6, 3, 7, 2, 4, 5, 8])).expect("fixture ordering is a permutation")
}
