//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature these dispatch to rayon once the estimated
//! work crosses [`MIN_PARALLEL_WORK`]; without it they are plain loops.
//! Callers only hand out disjoint output chunks or ordered maps, so the
//! result never depends on the number of threads.

/// Below this many scalar operations a kernel stays on the calling thread.
pub const MIN_PARALLEL_WORK: usize = 1 << 15;

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    use super::MIN_PARALLEL_WORK;

    pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, work: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if work >= MIN_PARALLEL_WORK && rayon::current_num_threads() > 1 {
            data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        } else {
            data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        }
    }

    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        if rayon::current_num_threads() > 1 {
            (0..n).into_par_iter().map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    }

    pub fn install<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
        if threads == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
                f()
            }
        }
    }

    pub fn current_threads() -> usize {
        rayon::current_num_threads()
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, _work: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }

    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }

    pub fn install<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
        f()
    }

    pub fn current_threads() -> usize {
        1
    }
}

/// Apply `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of
/// `data`. `work` is a rough operation count used to decide whether
/// splitting is worthwhile.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if data.is_empty() {
        return;
    }
    imp::for_each_chunk_mut(data, chunk.max(1), work, f)
}

/// Ordered map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    imp::map_range(n, f)
}

/// Ordered map over a slice.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    imp::map_range(items.len(), |i| f(&items[i]))
}

/// Run `f` inside a pool of `threads` workers. `0` keeps the current pool.
pub fn install<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    imp::install(threads, f)
}

pub fn current_threads() -> usize {
    imp::current_threads()
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
