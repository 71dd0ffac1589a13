//! Thin switch between rayon and sequential iteration.
//!
//! Reductions split the index range into fixed-size chunks, reduce each
//! chunk in order, then fold the chunk results sequentially. The chunking
//! does not depend on the number of threads, so sums are reproducible.

use crate::C64;

pub const CHUNK: usize = 4096;

/// Fill `out[i] = f(i)` for every index.
pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    }
}

/// Fill `out` in blocks of `width` consecutive entries; block `i` is handed
/// to `f(i, block)`.
pub fn fill_blocks<T, F>(out: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(width).enumerate().for_each(|(i, b)| f(i, b));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(width).enumerate().for_each(|(i, b)| f(i, b));
    }
}

fn chunk_results<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let nchunks = len.div_ceil(CHUNK);
    let range = move |c: usize| c * CHUNK..((c + 1) * CHUNK).min(len);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..nchunks).into_par_iter().map(|c| f(range(c))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..nchunks).map(|c| f(range(c))).collect()
    }
}

/// Deterministic maximum of `f(i)` over `0..len` (NaN-free inputs assumed).
pub fn max_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    chunk_results(len, |r| r.map(&f).fold(0.0_f64, f64::max))
        .into_iter()
        .fold(0.0, f64::max)
}

/// Deterministic real sum of `f(i)` over `0..len`.
pub fn sum_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    chunk_results(len, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

/// Deterministic complex sum of `f(i)` over `0..len`.
pub fn csum_by<F>(len: usize, f: F) -> C64
where
    F: Fn(usize) -> C64 + Sync + Send,
{
    chunk_results(len, |r| r.map(&f).sum::<C64>())
        .into_iter()
        .sum()
}

/// Map `f` over `0..len` collecting results in order.
pub fn map_collect<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Real dot-product style sum `Σ Re(conj(a_i) b_i)`, deterministic.
pub fn dot_re(a: &[C64], b: &[C64]) -> f64 {
    sum_by(a.len(), |i| (a[i].conj() * b[i]).re)
}

pub fn norm2_sq(a: &[C64]) -> f64 {
    sum_by(a.len(), |i| a[i].norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions_match_sequential() {
        let n = 3 * CHUNK + 17;
        let s = sum_by(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
        assert_eq!(max_by(n, |i| (i % 1000) as f64), 999.0);
        let mut v = vec![0usize; 100];
        fill(&mut v, |i| 2 * i);
        assert_eq!(v[37], 74);
    }
}

/// Size the global pool. A no-op in sequential builds.
pub fn configure_threads(threads: usize) -> crate::Result<()> {
    if threads == 0 {
        return Err(crate::Error::invalid("thread count must be >= 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| crate::Error::invalid(format!("thread pool: {e}")))?;
    Ok(())
}
