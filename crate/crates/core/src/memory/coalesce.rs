//! Half-warp coalescing model.

/// Threads whose contiguous accesses merge into one memory transaction.
pub const HALF_WARP: usize = 16;

/// Memory transactions for one block's access sequence.
///
/// Accesses are taken 16 at a time (the last group may be shorter). Within a
/// group every maximal run of consecutive addresses costs one transaction;
/// a repeated address stays in the current run.
/// Indirect layouts read an address table first, doubling the count.
pub fn transaction_count(addresses: &[u64], indirect: bool) -> u64 {
    let direct: u64 = addresses
        .chunks(HALF_WARP)
        .map(|group| 1 + group.windows(2).filter(|w| w[1] != w[0] && w[0].checked_add(1) != Some(w[1])).count() as u64)
        .sum();
    if indirect {
        2 * direct
    } else {
        direct
    }
}

/// Fewest transactions any layout can achieve for `n` direct accesses.
pub fn min_transactions(n: usize) -> u64 {
    n.div_ceil(HALF_WARP) as u64
}
