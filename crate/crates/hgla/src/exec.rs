//! Thread-pool window executor.

use hgla_core::block::WindowExecutor;
use hgla_core::VideoLatent;

/// Runs window jobs on up to `threads` scoped worker threads. Each window is
/// processed exactly once with serial per-window work, so results are
/// bitwise identical to the serial executor regardless of thread count.
#[derive(Debug, Clone, Copy)]
pub struct ThreadsExecutor {
    threads: usize,
}

impl ThreadsExecutor {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }
}

impl WindowExecutor for ThreadsExecutor {
    fn for_each_window(
        &self,
        windows: &mut [VideoLatent],
        job: &(dyn Fn(&mut VideoLatent) + Sync),
    ) {
        if self.threads == 1 || windows.len() <= 1 {
            for w in windows {
                job(w);
            }
            return;
        }
        let chunk = windows.len().div_ceil(self.threads);
        std::thread::scope(|scope| {
            for slice in windows.chunks_mut(chunk) {
                scope.spawn(move || {
                    for w in slice {
                        job(w);
                    }
                });
            }
        });
    }
}
