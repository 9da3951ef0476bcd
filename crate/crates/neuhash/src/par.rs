//! Chunked data parallelism with a sequential fallback.
//!
//! Work is first partitioned into at most `threads` contiguous chunks; the
//! partition depends only on the requested thread count, never on how the
//! chunks are scheduled. Results come back in chunk order, so any caller that
//! reduces them sequentially gets bit-identical output for a fixed `threads`
//! value whether or not the `parallel` feature is enabled. `threads == 0`
//! means "use the machine's available parallelism"; `threads == 1` is the
//! fully sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn effective_threads(threads: usize) -> usize {
    if threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        threads
    }
}

/// Maps `f` over contiguous chunks of `items`, returning one result per chunk
/// in chunk order. `f` receives the offset of its chunk within `items`.
pub fn map_chunks<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync,
{
    if items.is_empty() {
        return Vec::new();
    }
    let t = effective_threads(threads).clamp(1, items.len());
    let chunk_size = items.len().div_ceil(t);

    #[cfg(feature = "parallel")]
    {
        if t > 1 {
            return items
                .par_chunks(chunk_size)
                .enumerate()
                .map(|(i, chunk)| f(i * chunk_size, chunk))
                .collect();
        }
    }

    items
        .chunks(chunk_size)
        .enumerate()
        .map(|(i, chunk)| f(i * chunk_size, chunk))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_keep_order() {
        let items: Vec<u64> = (0..1000).collect();
        let sums = map_chunks(&items, 4, |_, c| c.iter().sum::<u64>());
        assert_eq!(sums.len(), 4);
        assert_eq!(sums.iter().sum::<u64>(), 1000 * 999 / 2);
        let seq = map_chunks(&items, 1, |_, c| c.iter().sum::<u64>());
        assert_eq!(seq.len(), 1);
        assert_eq!(seq[0], sums.iter().sum::<u64>());
    }

    #[test]
    fn offsets_are_chunk_starts() {
        let items: Vec<u32> = (0..10).collect();
        let offsets = map_chunks(&items, 3, |off, _| off);
        assert_eq!(offsets, vec![0, 4, 8]);
    }
}
