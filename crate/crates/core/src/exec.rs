//! Execution mode for data-parallel loops.
//!
//! Every parallel loop in the crate goes through [`Exec`], which maps over an index range
//! and returns results in index order. Reductions are performed sequentially over that
//! ordered output, so results do not depend on the thread count. Without the `parallel`
//! feature both modes run sequentially.

/// How data-parallel loops are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Whether this mode actually runs on the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Ordered map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Ordered map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Ordered map with early exit on the first error (by index).
    pub fn try_map_range<R, E, F>(self, n: usize, f: F) -> Result<Vec<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize) -> Result<R, E> + Sync + Send,
    {
        self.map_range(n, f).into_iter().collect()
    }

    /// Sum of `f(i)` over `0..n`, chunked so that the summation order is fixed.
    pub fn sum_range<F>(self, n: usize, chunk: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunk = chunk.max(1);
        let nchunks = n.div_ceil(chunk);
        let partial = self.map_range(nchunks, |c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        });
        partial.into_iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let a = Exec::Sequential.sum_range(10_000, 97, f);
        let b = Exec::Parallel.sum_range(10_000, 97, f);
        assert_eq!(a.to_bits(), b.to_bits());
        let v = Exec::Parallel.map_range(50, |i| i * i);
        assert_eq!(v[7], 49);
    }
}
