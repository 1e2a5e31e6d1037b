//! Chunked data parallelism with a sequential fallback.
//!
//! Work is always cut into the same fixed-size chunks and the per-chunk
//! results come back in chunk order, so a caller that folds them left to
//! right gets bit-identical output whichever path ran.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Samples per work unit for batch gradients and evaluation.
pub const DEFAULT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon thread pool; identical to `Sequential` when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Whether work actually runs on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Applies `f` to consecutive chunks of `items`, returning results in chunk
/// order.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_chunks(chunk).map(f).collect(),
        _ => items.chunks(chunk).map(f).collect(),
    }
}

/// Maps every item independently, preserving order.
pub fn map_items<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_are_ordered_and_identical() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.1).sin()).collect();
        let sum = |c: &[f64]| c.iter().sum::<f64>();
        let a = map_chunks(&xs, 64, Execution::Sequential, sum);
        let b = map_chunks(&xs, 64, Execution::Parallel, sum);
        assert_eq!(a.len(), 16);
        assert_eq!(a, b);
        let total = |v: &[f64]| v.iter().fold(0.0, |acc, x| acc + x);
        assert_eq!(total(&a).to_bits(), total(&b).to_bits());
        assert_eq!(
            map_items(&xs, Execution::Parallel, |x| x * 2.0),
            map_items(&xs, Execution::Sequential, |x| x * 2.0)
        );
    }
}
