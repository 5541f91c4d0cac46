//! Execution mode for data-parallel loops.

use serde::{Deserialize, Serialize};

/// How per-item work (sentences, n-gram statistics, grid points) is scheduled.
///
/// `Parallel` uses the rayon global pool when the crate is built with the
/// `parallel` feature; without it the request silently degrades to
/// `Sequential`. Results are identical in both modes: every helper here
/// preserves input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
    /// True when this mode will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map over a slice.
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

    /// Order-preserving map that also receives the item index.
    pub fn map_indexed<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }

    /// Fallible order-preserving map; returns the error of the lowest failing index.
    pub fn try_map<T, R, E, F>(self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
    {
        self.map_indexed(items, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(a[10], 100);
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs: Vec<i32> = (0..100).collect();
        let r: Result<Vec<i32>, usize> = Exec::Parallel.try_map(&xs, |i, &x| {
            if x % 30 == 29 {
                Err(i)
            } else {
                Ok(x)
            }
        });
        assert_eq!(r, Err(29));
    }
}
