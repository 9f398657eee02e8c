use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{DialError, Result};

/// Fixed-size worker pool. Results always come back in index order, so any
/// reduction over them is independent of scheduling. One worker runs inline.
pub struct Workers {
    pool: Option<ThreadPool>,
}

impl Workers {
    pub fn new(n: usize) -> Result<Workers> {
        if n == 0 {
            return Err(DialError::InvalidConfig(
                "workers must be at least 1".into(),
            ));
        }
        if n == 1 {
            return Ok(Workers { pool: None });
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| DialError::InvalidConfig(e.to_string()))?;
        Ok(Workers { pool: Some(pool) })
    }

    pub fn count(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}
