//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction here splits its input into fixed-size chunks and combines
//! the per-chunk results in chunk order, so the floating-point result does not
//! depend on the thread count or on which execution mode ran it.

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Parallel when the `parallel` feature is compiled in, sequential otherwise.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `0..len`, returning results in index order.
pub fn map_indexed<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Splits `0..len` into chunks of `chunk` indices, computes one partial per
/// chunk and folds the partials left to right with `combine`.
pub fn chunked_reduce<T, F, C>(len: usize, chunk: usize, exec: Execution, f: F, combine: C) -> Option<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    C: Fn(T, T) -> T,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    let partials = map_indexed(n_chunks, exec, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(len))
    });
    partials.into_iter().reduce(combine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let a = map_indexed(1000, Execution::Parallel, |i| i * 3);
        let b = map_indexed(1000, Execution::Sequential, |i| i * 3);
        assert_eq!(a, b);
        assert_eq!(a[999], 2997);
    }

    #[test]
    fn reduce_is_mode_independent() {
        let xs: Vec<f64> = (0..10_007).map(|i| ((i as f64) * 0.37).sin() * 1e3).collect();
        let sum = |exec| {
            chunked_reduce(xs.len(), 64, exec, |r| xs[r].iter().sum::<f64>(), |a, b| a + b).unwrap()
        };
        assert_eq!(sum(Execution::Parallel).to_bits(), sum(Execution::Sequential).to_bits());
    }

    #[test]
    fn empty_reduce_is_none() {
        assert!(chunked_reduce(0, 8, Execution::Sequential, |_| 1.0, |a: f64, b| a + b).is_none());
    }
}
