//! Grid-parallel helpers.
//!
//! Work items are mapped in parallel but always collected in index order, so
//! every reduction performed on the collected results is deterministic. The
//! serial switch turns the parallel map into a plain loop.

use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

static SERIAL: AtomicBool = AtomicBool::new(false);

pub fn set_serial(serial: bool) {
    SERIAL.store(serial, Ordering::SeqCst);
}

pub fn is_serial() -> bool {
    SERIAL.load(Ordering::SeqCst) || rayon::current_num_threads() <= 1
}

/// `(0..n).map(f)` collected in order.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if is_serial() {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// Like [`map`] but stops at the first error in index order.
pub fn try_map<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map(n, f).into_iter().collect()
}
