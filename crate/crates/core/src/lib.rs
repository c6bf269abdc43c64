//! Build knowledge-conflict preference data for retrieval-augmented generation:
//! probe a model's parametric answers, forge conflicting answers, build conflicting
//! and irrelevant contexts, sample error-type negatives, assemble balanced preference
//! pairs and score models on adherence and robustness.

pub mod config;
pub mod context;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod forge;
pub mod gateway;
pub mod jsonl;
pub mod negatives;
pub mod pairs;
pub mod pipeline;
pub mod probe;
pub mod prompts;
pub mod text;
pub mod toy;
pub mod validate;

pub use error::{Error, Result};

use std::sync::atomic::{AtomicUsize, Ordering};

/// Applies `f` to every item on at most `parallelism` threads, returning results in
/// input order.
pub fn fan_out<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break out;
                        }
                        out.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    slots.sort_by_key(|(i, _)| *i);
    slots.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn fan_out_preserves_order() {
        let items: Vec<u32> = (0..100).collect();
        assert_eq!(super::fan_out(&items, 8, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(super::fan_out(&Vec::<u32>::new(), 4, |x| *x).is_empty());
    }
}
