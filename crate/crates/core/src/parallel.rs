//! Order-preserving data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work runs on a dedicated rayon pool
//! sized to the requested worker count; without it, or with one worker, items
//! are mapped in order on the calling thread. Results are identical either way.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[derive(Clone)]
pub struct WorkerPool {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool").field("workers", &self.workers).finish()
    }
}

impl WorkerPool {
    pub fn new(workers: usize) -> Self {
        let workers = workers.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = (workers > 1)
                .then(|| {
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(workers)
                        .thread_name(|i| format!("pipeplan-worker-{i}"))
                        .build()
                        .ok()
                        .map(Arc::new)
                })
                .flatten();
            WorkerPool { workers, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            WorkerPool { workers }
        }
    }

    pub fn sequential() -> Self {
        WorkerPool::new(1)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Maps `f` over `items`, returning results in input order.
    pub fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.into_par_iter().map(f).collect());
        }
        items.into_iter().map(f).collect()
    }
}

impl Default for WorkerPool {
    fn default() -> Self {
        WorkerPool::new(available_workers())
    }
}

pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
