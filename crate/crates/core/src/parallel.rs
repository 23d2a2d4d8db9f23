//! Per-model work dispatch, parallel with the `parallel` feature.

use serde::{Deserialize, Serialize};

/// How independent per-model tasks are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

impl ExecMode {
    /// Whether tasks actually run concurrently in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Applies `f` to every item and returns results in item order, whatever the
/// execution mode.
pub fn map_mut<T, R, F>(items: &mut [T], mode: ExecMode, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        use rayon::prelude::*;
        return items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = mode;
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Runs `f` with at most `threads` workers for parallel dispatch.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        return pool.install(f);
    }
    let _ = threads;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_in_both_modes() {
        for mode in [ExecMode::Parallel, ExecMode::Sequential] {
            let mut v: Vec<u64> = (0..64).collect();
            let out = map_mut(&mut v, mode, |i, x| {
                *x += 1;
                i as u64 * 10
            });
            assert_eq!(out, (0..64).map(|i| i * 10).collect::<Vec<_>>());
            assert_eq!(v[63], 64);
        }
    }
}
