//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature, [`Exec::Parallel`] runs on a dedicated rayon
//! pool. Without it, every mode runs sequentially. Results always come back in
//! input order, so callers see identical output either way.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Sequential,
    /// `threads == 0` uses one thread per available core.
    Parallel { threads: usize },
}

impl Exec {
    /// `workers <= 1` runs sequentially; `0` means all cores.
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel { threads: workers }
        }
    }

    /// Threads actually used.
    pub fn threads(&self) -> usize {
        match self {
            Exec::Sequential => 1,
            #[cfg(feature = "parallel")]
            Exec::Parallel { threads: 0 } => rayon::current_num_threads(),
            #[cfg(feature = "parallel")]
            Exec::Parallel { threads } => *threads,
            #[cfg(not(feature = "parallel"))]
            Exec::Parallel { .. } => 1,
        }
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel { threads } => {
                use rayon::prelude::*;
                match rayon::ThreadPoolBuilder::new().num_threads(*threads).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
                    Err(e) => {
                        log::warn!("thread pool unavailable ({e}), running sequentially");
                        items.iter().map(f).collect()
                    }
                }
            }
            #[cfg(not(feature = "parallel"))]
            Exec::Parallel { .. } => items.iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..500).collect();
        let f = |x: &u64| x * x + 1;
        let a = Exec::Sequential.map(&xs, f);
        let b = Exec::Parallel { threads: 4 }.map(&xs, f);
        let c = Exec::from_workers(0).map(&xs, f);
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a[3], 10);
    }
}
