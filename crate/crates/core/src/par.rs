//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] fans work out
//! over the rayon pool; without it, both variants run on the calling thread.
//! Results are always collected in index order and reduced sequentially by
//! the caller, so sums are bit-identical for any worker count.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be distributed across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Splits `0..n` into fixed-size blocks and evaluates `f(block_range)` per
/// block. Block boundaries depend only on `n` and `block`, never on the pool.
pub fn map_blocks<T, F>(n: usize, block: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let block = block.max(1);
    let n_blocks = n.div_ceil(block);
    map_indexed(n_blocks, exec, |b| {
        let start = b * block;
        f(start..(start + block).min(n))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_range_in_order() {
        let blocks = map_blocks(10, 3, Execution::Parallel, |r| r);
        assert_eq!(blocks, vec![0..3, 3..6, 6..9, 9..10]);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let f = |i: usize| (i as f64).sqrt();
        assert_eq!(
            map_indexed(100, Execution::Sequential, f),
            map_indexed(100, Execution::Parallel, f)
        );
    }
}
