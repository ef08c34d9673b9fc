//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper splits work into chunks whose boundaries depend only on the
//! input length and the requested chunk size, never on the thread count, so
//! results are bit-identical between [`Execution::Sequential`] and
//! [`Execution::Parallel`]. Without the `parallel` feature both variants run
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Map `f` over fixed-size chunks of `items` (the last chunk may be shorter),
/// preserving chunk order.
pub fn map_chunks<T, R, F>(exec: Execution, items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_chunks(chunk).map(f).collect();
    }
    let _ = exec;
    items.chunks(chunk).map(f).collect()
}

/// Apply `f` to each `(index, chunk)` of a mutable slice.
pub fn for_each_chunk_mut<T, F>(exec: Execution, items: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        items
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    items.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_agree() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let sum = |c: &[f64]| c.iter().sum::<f64>();
        let a = map_chunks(Execution::Sequential, &xs, 37, sum);
        let b = map_chunks(Execution::Parallel, &xs, 37, sum);
        assert_eq!(a, b);
        assert_eq!(a.len(), 28);

        let mut ys = xs.clone();
        let mut zs = xs.clone();
        for_each_chunk_mut(Execution::Sequential, &mut ys, 10, |i, c| {
            c.iter_mut().for_each(|v| *v *= i as f64)
        });
        for_each_chunk_mut(Execution::Parallel, &mut zs, 10, |i, c| {
            c.iter_mut().for_each(|v| *v *= i as f64)
        });
        assert_eq!(ys, zs);
    }
}
