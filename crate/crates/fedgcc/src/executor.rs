//! Scoped-thread client executor.

use std::num::NonZeroUsize;
use std::thread;

use fedgcc_core::federated::{ClientExecutor, ClientState};

use crate::error::{AppError, Result};

pub const THREADS_ENV: &str = "FEDGCC_THREADS";

/// Splits the participating clients into contiguous chunks, one per worker.
/// Every client owns its random stream, so the split does not affect results.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    threads: NonZeroUsize,
}

impl Threaded {
    pub fn new(threads: NonZeroUsize) -> Self {
        Self { threads }
    }

    /// Worker count from `FEDGCC_THREADS`, else the available parallelism.
    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => Self::parse(&v),
            Err(_) => Ok(Self::new(
                thread::available_parallelism().unwrap_or(NonZeroUsize::MIN),
            )),
        }
    }

    fn parse(value: &str) -> Result<Self> {
        value
            .trim()
            .parse::<NonZeroUsize>()
            .map(Self::new)
            .map_err(|_| {
                AppError::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got {value:?}"
                ))
            })
    }

    pub fn threads(&self) -> usize {
        self.threads.get()
    }
}

impl ClientExecutor for Threaded {
    fn map_clients<T, F>(&self, clients: &mut [&mut ClientState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut ClientState) -> T + Sync,
    {
        let workers = self.threads.get().min(clients.len());
        if workers <= 1 {
            return clients.iter_mut().map(|c| f(c)).collect();
        }
        let chunk = clients.len().div_ceil(workers);
        let f = &f;
        thread::scope(|s| {
            let handles: Vec<_> = clients
                .chunks_mut(chunk)
                .map(|part| s.spawn(move || part.iter_mut().map(|c| f(c)).collect::<Vec<T>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect()
        })
    }
}
