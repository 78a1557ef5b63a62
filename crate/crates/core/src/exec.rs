//! Execution policy for data-parallel loops.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How index-parallel work is scheduled.
///
/// `Parallel` uses the rayon global pool when the crate is built with the
/// `parallel` feature and silently degrades to `Sequential` otherwise. Every
/// helper returns results in index order; callers reduce them sequentially.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Map `f` over `0..len`, preserving order.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..len).into_par_iter().map(f).collect(),
            _ => (0..len).map(f).collect(),
        }
    }

    /// Run `f(index, chunk)` over consecutive chunks of `data` of length `width`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], width: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => data
                .par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
            _ => data
                .chunks_mut(width)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
        }
    }

    /// Sum of `f(i)` over `0..len`, reduced left to right.
    pub fn sum<F>(self, len: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        self.map(len, f).into_iter().fold(0.0, |acc, x| acc + x)
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}
