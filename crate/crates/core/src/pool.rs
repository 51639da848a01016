use rayon::ThreadPoolBuilder;

/// Runs `f` on a dedicated pool of `workers` threads. With one worker, parallel
/// iterators inside `f` visit items strictly in order.
pub(crate) fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}
