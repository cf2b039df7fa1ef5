//! Data-parallel helpers. With the `parallel` feature the closures run on a
//! rayon pool; without it they run in order on the calling thread. Callers
//! derive randomness from [`crate::rng::substream`], so both paths produce
//! identical results.

use serde::{Deserialize, Serialize};

/// Degree of parallelism requested by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Parallelism {
    /// Single-threaded reference mode.
    #[default]
    Serial,
    /// Use the global rayon pool.
    Pool,
}

impl Parallelism {
    pub fn from_threads(threads: usize) -> Self {
        if threads <= 1 {
            Parallelism::Serial
        } else {
            Parallelism::Pool
        }
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        Parallelism::Serial => (0..n).map(f).collect(),
        Parallelism::Pool => pool_map_range(n, f),
    }
}

/// Apply `f` to each element with its index, possibly in parallel.
pub fn for_each_mut<T, F>(mode: Parallelism, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match mode {
        Parallelism::Serial => items.iter_mut().enumerate().for_each(|(i, x)| f(i, x)),
        Parallelism::Pool => pool_for_each_mut(items, f),
    }
}

#[cfg(feature = "parallel")]
fn pool_map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn pool_map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn pool_for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

#[cfg(not(feature = "parallel"))]
fn pool_for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_pool_agree() {
        let a = map_range(Parallelism::Serial, 100, |i| i * i);
        let b = map_range(Parallelism::Pool, 100, |i| i * i);
        assert_eq!(a, b);
        let mut v = vec![1usize; 50];
        for_each_mut(Parallelism::Pool, &mut v, |i, x| *x += i);
        assert_eq!(v[49], 50);
    }
}
