//! Deterministic data-parallel helpers.
//!
//! Work is cut into fixed-size chunks whose boundaries never depend on the
//! thread count. Chunk results are folded in chunk order, so the parallel and
//! sequential builds produce bit-identical sums.

use std::ops::Range;

/// Consumers per chunk in model evaluations.
pub const CHUNK: usize = 128;

fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..len)
        .step_by(chunk.max(1))
        .map(|start| start..(start + chunk).min(len))
        .collect()
}

/// Maps every chunk of `0..len` through `map` and folds the results left to
/// right with `combine`.
pub fn ordered_chunk_fold<T, F, C>(len: usize, chunk: usize, map: F, mut combine: C) -> Option<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
    C: FnMut(&mut T, T),
{
    let partials = map_in_order(chunk_ranges(len, chunk), map);
    let mut iter = partials.into_iter();
    let mut acc = iter.next()?;
    for part in iter {
        combine(&mut acc, part);
    }
    Some(acc)
}

/// Applies `f` to every item, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map_in_order<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_in_order<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    F: Fn(I) -> T,
{
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_exactly() {
        let ranges = chunk_ranges(300, 128);
        assert_eq!(ranges, vec![0..128, 128..256, 256..300]);
        assert!(chunk_ranges(0, 128).is_empty());
    }

    #[test]
    fn fold_is_order_preserving() {
        let out = ordered_chunk_fold(
            10,
            3,
            |r| r.map(|i| i.to_string()).collect::<String>(),
            |a, b| a.push_str(&b),
        );
        assert_eq!(out.as_deref(), Some("0123456789"));
    }
}
