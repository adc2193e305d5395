//! Index-ordered parallel map with a sequential fallback.
//!
//! Results always come back in index order, so any fold over them is
//! independent of the worker count.

/// Maps `f` over `0..n`. `threads == 1` (or a build without the `parallel`
/// feature) runs on the calling thread; `threads == 0` uses rayon's global
/// pool.
pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if threads == 1 {
            return (0..n).map(f).collect();
        }
        if threads == 0 {
            return (0..n).into_par_iter().map(f).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(_) => (0..n).map(f).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        (0..n).map(f).collect()
    }
}

/// True when the crate was built with rayon support.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_thread_count() {
        let seq = map_indexed(257, 1, |i| i * i);
        for threads in [0, 2, 3, 8] {
            assert_eq!(map_indexed(257, threads, |i| i * i), seq);
        }
    }
}
