//! Data-parallel helpers. With the `parallel` feature the work is spread
//! over the rayon pool; without it everything runs in order on the caller.
//! Results are always returned in index order, so output never depends on
//! scheduling.

pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indices_sequential(n, f)
    }
}

pub fn map_indices_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Runs `f` with the global pool capped at `jobs` workers. `None` or the
/// sequential build leaves the default in place.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(j) = jobs {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let v = map_indices(100, |i| i * i);
        assert_eq!(v, map_indices_sequential(100, |i| i * i));
    }

    #[test]
    fn job_cap_runs_closure() {
        assert_eq!(with_jobs(Some(2), || map_indices(5, |i| i).len()), 5);
    }
}
