//! Execution mode for batch evaluations.
//!
//! Every embarrassingly parallel loop in the crate (oracle batches during
//! cross fits, validation-set error sums, grid sweeps) goes through
//! [`map_indexed`]. With the `parallel` feature the work is split over the
//! rayon pool, otherwise it runs in order on the calling thread. The mode can
//! also be switched at runtime, which the benches use to compare both paths
//! in a single binary.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

const SEQUENTIAL: u8 = 0;
const PARALLEL: u8 = 1;

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") {
    PARALLEL
} else {
    SEQUENTIAL
});

/// Selects the execution mode for subsequent batch evaluations.
///
/// Requesting [`Execution::Parallel`] without the `parallel` feature is a
/// no-op that keeps the sequential path.
pub fn set_execution(mode: Execution) {
    let value = match mode {
        Execution::Parallel if cfg!(feature = "parallel") => PARALLEL,
        _ => SEQUENTIAL,
    };
    MODE.store(value, Ordering::Relaxed);
}

pub fn execution() -> Execution {
    match MODE.load(Ordering::Relaxed) {
        PARALLEL => Execution::Parallel,
        _ => Execution::Sequential,
    }
}

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if execution() == Execution::Parallel && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] but stops at the first error in index order.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

/// Number of worker threads available to the parallel path.
pub fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        if execution() == Execution::Parallel {
            return rayon::current_num_threads();
        }
    }
    1
}

/// Caps the global worker pool at `threads`. A value of 1 switches to the
/// sequential path. The pool can only be sized once per process, so later
/// calls with a different count fail.
pub fn limit_threads(threads: usize) -> crate::Result<()> {
    if threads == 0 {
        return Err(crate::Error::InvalidArgument("thread count must be at least 1".into()));
    }
    if threads == 1 {
        set_execution(Execution::Sequential);
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    {
        if rayon::current_num_threads() == threads {
            return Ok(());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| crate::Error::InvalidArgument(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v = map_indexed(1000, |i| i * 3);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 3 * i));
    }

    #[test]
    fn first_error_in_index_order_wins() {
        let r: Result<Vec<usize>, usize> =
            try_map_indexed(100, |i| if i % 7 == 5 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(5));
    }
}
