//! Execution policy for grid sweeps.
//!
//! Sweeps are split into fixed chunks of [`CHUNK`] points and reassembled in
//! input order, so the parallel and sequential paths produce identical output.
//! Without the `parallel` feature every policy runs sequentially.

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Order-preserving fallible map. The first error in input order wins.
    pub fn try_map<T, U, F>(self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U> + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(&f).collect(),
            Execution::Parallel => par_try_map(items, &f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_try_map<T, U, F>(items: &[T], f: &F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    use rayon::prelude::*;
    let chunks: Vec<Result<Vec<U>>> =
        items.par_chunks(CHUNK).map(|c| c.iter().map(f).collect()).collect();
    let mut out = Vec::with_capacity(items.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[cfg(not(feature = "parallel"))]
fn par_try_map<T, U, F>(items: &[T], f: &F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U>,
{
    items.iter().map(f).collect()
}

/// Run `f` with at most `workers` threads for parallel sweeps.
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| crate::error::Error::InvalidInput(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(f())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn both_policies_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| Ok(x * x + 1);
        let a = Execution::Sequential.try_map(&xs, f).unwrap();
        let b = Execution::Parallel.try_map(&xs, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[999], 999 * 999 + 1);
    }

    #[test]
    fn first_error_in_order_is_reported() {
        let xs: Vec<u64> = (0..1000).collect();
        let r = Execution::Parallel.try_map(&xs, |&x| {
            if x == 300 || x == 900 {
                Err(Error::InvalidInput(format!("{x}")))
            } else {
                Ok(x)
            }
        });
        match r {
            Err(Error::InvalidInput(s)) => assert_eq!(s, "300"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
