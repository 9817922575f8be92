//! Reproducible parallel Monte Carlo.
//!
//! Work is cut into fixed-size chunks; chunk `i` draws from ChaCha8 seeded
//! with `seed` on stream `i`. Results are returned in chunk order, so the
//! output depends on `(seed, chunk)` only, never on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Default number of samples per chunk.
pub const DEFAULT_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct McConfig {
    pub seed: u64,
    pub workers: usize,
    pub chunk: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { seed: 1, workers: default_workers(), chunk: DEFAULT_CHUNK }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// The generator of chunk `i`.
pub fn chunk_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

/// Runs `f(rng, n)` on every chunk of `total` samples (the last chunk may be
/// short) and returns the chunk results in order.
pub fn run_chunks<T, F>(cfg: &McConfig, total: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunk = cfg.chunk.max(1);
    let n_chunks = total.div_ceil(chunk);
    let sizes: Vec<usize> = (0..n_chunks).map(|i| chunk.min(total - i * chunk)).collect();
    let workers = cfg.workers.clamp(1, n_chunks.max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n_chunks).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n_chunks {
                    break;
                }
                let mut rng = chunk_rng(cfg.seed, i as u64);
                let out = f(&mut rng, sizes[i]);
                results.lock().expect("no panics while holding the lock")[i] = Some(out);
            });
        }
    });
    slots.into_iter().map(|o| o.expect("every chunk ran")).collect()
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::INFINITY);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn independent_of_worker_count() {
        let run = |workers| {
            let cfg = McConfig { seed: 7, workers, chunk: 10 };
            run_chunks(&cfg, 95, |rng, n| (0..n).map(|_| rng.random::<u32>()).collect::<Vec<_>>())
        };
        let a = run(1);
        assert_eq!(a.len(), 10);
        assert_eq!(a[9].len(), 5);
        assert_eq!(a, run(4));
    }

    #[test]
    fn streams_differ() {
        let mut a = chunk_rng(3, 0);
        let mut b = chunk_rng(3, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }
}
