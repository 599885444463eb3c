//! Order-preserving parallel map. Results come back in input order whatever
//! the thread count, so reductions over them are reproducible.

use rayon::prelude::*;

/// `threads == 0` means one worker per core; `threads == 1` runs inline.
pub fn map_ordered<T, R, F>(threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    let threads = if threads == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { threads };
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running inline");
            items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..100).collect();
        let a = map_ordered(1, &xs, |i, x| i as u64 * x);
        let b = map_ordered(4, &xs, |i, x| i as u64 * x);
        assert_eq!(a, b);
    }
}
