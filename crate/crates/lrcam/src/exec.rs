//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (the default) enabled, `map_indexed` fans work
//! out over rayon's global pool when asked; with the feature disabled the
//! `parallel` argument is ignored and everything runs on the calling thread.
//! Results are always ordered by index, so output is identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// True when the `parallel` feature is compiled in.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_is_stable() {
        let seq = map_indexed(1000, false, |i| i * 3);
        let par = map_indexed(1000, true, |i| i * 3);
        assert_eq!(seq, par);
    }
}
