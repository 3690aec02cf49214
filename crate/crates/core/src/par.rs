//! Deterministic fork-join over a slice with a capped worker count.
//!
//! Results land at their item's index no matter which thread produced them,
//! so any later reduction can run in item order and the outcome is identical
//! for every thread count.

/// Apply `f` to each item, using up to `threads` workers. `f` receives the
/// item index and the item.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }

    let mut out: Vec<Option<R>> = Vec::with_capacity(items.len());
    out.resize_with(items.len(), || None);
    let chunk = items.len().div_ceil(threads);

    std::thread::scope(|scope| {
        let f = &f;
        let mut rest: &mut [Option<R>] = &mut out;
        let mut start = 0usize;
        while start < items.len() {
            let take = chunk.min(items.len() - start);
            let (head, tail) = rest.split_at_mut(take);
            rest = tail;
            let begin = start;
            scope.spawn(move || {
                for (off, slot) in head.iter_mut().enumerate() {
                    let idx = begin + off;
                    *slot = Some(f(idx, &items[idx]));
                }
            });
            start += take;
        }
    });

    out.into_iter().map(|r| r.expect("worker filled slot")).collect()
}
