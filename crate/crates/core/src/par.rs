//! Sequential/parallel dispatch for per-post loops.
//!
//! With the `parallel` feature these helpers use rayon; without it they run
//! on the calling thread. Output order always follows input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of worker threads the parallel helpers will use.
pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();

    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// Maps `f` over `items`, preserving order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().map(f).collect();

    #[cfg(not(feature = "parallel"))]
    return items.iter().map(f).collect();
}

/// Keeps the items for which `pred` holds, preserving order.
pub fn filter_slice<T, F>(items: &[T], pred: F) -> Vec<T>
where
    T: Sync + Send + Clone,
    F: Fn(&T) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().filter(|t| pred(t)).cloned().collect();

    #[cfg(not(feature = "parallel"))]
    return items.iter().filter(|t| pred(t)).cloned().collect();
}

/// Sequential map, always available so callers and benches can compare.
pub fn map_slice_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
