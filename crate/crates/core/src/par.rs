//! Data-parallel cell kernels.
//!
//! Every reduction walks the index range in fixed-size chunks and adds the
//! chunk partials left to right, so the sequential and the rayon paths give
//! bitwise-identical results regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of cells per reduction chunk.
pub const CHUNK: usize = 256;

/// Execution policy for cell kernels.
///
/// `Parallel` silently degrades to sequential execution when the crate is
/// built without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

fn chunk_sum<F>(start: usize, end: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64,
{
    let mut acc = 0.0;
    for i in start..end {
        acc += f(i);
    }
    acc
}

/// Deterministic `Σ_{i<n} f(i)`.
pub fn sum<F>(exec: Exec, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = |c: usize| chunk_sum(c * CHUNK, ((c + 1) * CHUNK).min(n), &f);
    let partials: Vec<f64> = if exec.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            (0..chunks).into_par_iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            unreachable!()
        }
    } else {
        (0..chunks).map(partial).collect()
    };
    partials.into_iter().sum()
}

/// `out[i] = f(i)` for every index.
pub fn fill<F>(exec: Exec, out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let body = |(c, chunk): (usize, &mut [f64])| {
        let base = c * CHUNK;
        for (off, v) in chunk.iter_mut().enumerate() {
            *v = f(base + off);
        }
    };
    if exec.is_parallel() {
        #[cfg(feature = "parallel")]
        out.par_chunks_mut(CHUNK).enumerate().for_each(body);
    } else {
        out.chunks_mut(CHUNK).enumerate().for_each(body);
    }
}

/// Maps `f` over `0..n` and collects, preserving order.
pub fn map<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if exec.is_parallel() {
        #[cfg(feature = "parallel")]
        {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Runs `f` on a dedicated pool of `workers` threads; without the
/// `parallel` feature, or with `None`, it simply calls `f`.
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("could not build a pool of {n} workers: {e}"),
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    f()
}

/// Dot product `w · Σ a_i b_i` with the chunked reduction order.
pub fn dot(exec: Exec, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum(exec, a.len(), |i| a[i] * b[i])
}
