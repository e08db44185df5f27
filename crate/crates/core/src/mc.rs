//! Deterministic parallel Monte Carlo accumulation.
//!
//! Work is cut into fixed-size blocks of path indices. Blocks run in
//! parallel, results come back in block order, and partial statistics are
//! merged by a fixed pairwise tree, so sums are bitwise independent of the
//! number of worker threads.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paths per work item.
pub const BLOCK_SIZE: usize = 512;

/// Runs `f` on consecutive index blocks of `0..n` in parallel, preserving order.
pub fn map_blocks<T, F>(n: usize, block: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let block = block.max(1);
    let n_blocks = n.div_ceil(block);
    (0..n_blocks)
        .into_par_iter()
        .map(|b| f(b * block..((b + 1) * block).min(n)))
        .collect()
}

/// Pairwise reduction with a fixed shape determined only by `items.len()`.
pub fn tree_reduce<T, F: Fn(T, T) -> T>(mut items: Vec<T>, merge: F) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Streaming mean and variance (Welford, Chan merge).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / n as f64;
        Moments { count: n, mean, m2 }
    }

    pub fn from_slice(xs: &[f64]) -> Moments {
        let mut m = Moments::default();
        for &x in xs {
            m.push(x);
        }
        m
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean, std_error: self.std_error() }
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// `|value - target| ≤ k · std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// Accumulates a fixed-width vector of per-path quantities block by block.
pub fn accumulate<F>(n_paths: usize, width: usize, per_path: F) -> Result<Vec<Moments>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let blocks = map_blocks(n_paths, BLOCK_SIZE, |range| -> Result<Vec<Moments>> {
        let mut acc = vec![Moments::default(); width];
        let mut row = vec![0.0; width];
        for p in range {
            per_path(p, &mut row)?;
            for (m, &x) in acc.iter_mut().zip(&row) {
                m.push(x);
            }
        }
        Ok(acc)
    });
    let blocks = blocks.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(tree_reduce(blocks, |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect())
        .unwrap_or_else(|| vec![Moments::default(); width]))
}

/// Runs `f` inside a dedicated pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(threads: usize, f: F) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::validation("threads", e.to_string()))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let whole = Moments::from_slice(&xs);
        let merged = Moments::from_slice(&xs[..313]).merge(Moments::from_slice(&xs[313..]));
        assert_eq!(whole.count, merged.count);
        assert!((whole.mean - merged.mean).abs() < 1e-12);
        assert!((whole.variance() - merged.variance()).abs() < 1e-10);
    }

    #[test]
    fn accumulate_is_thread_count_invariant() {
        let run = |threads| {
            with_threads(threads, || {
                accumulate(5000, 2, |p, row| {
                    row[0] = (p as f64).sin();
                    row[1] = (p as f64 * 0.1).cos().powi(3);
                    Ok(())
                })
                .unwrap()
            })
            .unwrap()
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn tree_reduce_shapes() {
        assert_eq!(tree_reduce(Vec::<u32>::new(), |a, b| a + b), None);
        assert_eq!(tree_reduce(vec![1, 2, 3, 4, 5], |a, b| a + b), Some(15));
    }
}
