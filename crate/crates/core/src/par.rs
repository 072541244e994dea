//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the `*_auto` functions dispatch to
//! rayon; without it they run on the calling thread. The `*_seq` variants are
//! always sequential and exist so benchmarks can compare both paths in one
//! build. Reductions are restricted to `min`/`max`/index-ordered collects,
//! which give identical results regardless of scheduling.

/// Evaluation strategy for batch work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Auto,
    Sequential,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        matches!(self, Exec::Auto) && cfg!(feature = "parallel")
    }
}

/// Map `f` over `0..len`, preserving index order in the output.
pub fn map_range<T, F>(exec: Exec, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Map `f` over a slice, preserving order.
pub fn map_slice<S, T, F>(exec: Exec, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// First index (smallest) in `0..len` where `pred` holds.
pub fn find_first<F>(exec: Exec, len: usize, pred: F) -> Option<usize>
where
    F: Fn(usize) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().find_first(|&i| pred(i));
    }
    let _ = exec;
    (0..len).find(|&i| pred(i))
}

/// Minimum of `f(i)` over `0..len` together with the first index attaining it.
/// NaN values compare as smaller than everything so they surface.
pub fn argmin<F>(exec: Exec, len: usize, f: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let better = |a: (usize, f64), b: (usize, f64)| -> (usize, f64) {
        let a_wins = match (a.1.is_nan(), b.1.is_nan()) {
            (true, false) => true,
            (false, true) => false,
            _ => a.1 < b.1 || (a.1 == b.1 && a.0 <= b.0),
        };
        if a_wins {
            a
        } else {
            b
        }
    };
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(|i| (i, f(i))).reduce_with(better);
    }
    let _ = exec;
    (0..len).map(|i| (i, f(i))).reduce(better)
}

/// Maximum of `f(i)` with the first index attaining it.
pub fn argmax<F>(exec: Exec, len: usize, f: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    argmin(exec, len, |i| -f(i)).map(|(i, v)| (i, -v))
}

/// Default worker count: the machine's available parallelism.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Run `f` with at most `jobs` rayon workers (inline without `parallel`).
pub fn with_jobs<R, F>(jobs: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_is_schedule_independent() {
        let f = |i: usize| ((i * 7919) % 101) as f64;
        let a = argmin(Exec::Auto, 5000, f).unwrap();
        let b = argmin(Exec::Sequential, 5000, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1, 0.0);
        assert_eq!(a.0, 0);
    }

    #[test]
    fn find_first_returns_smallest_index() {
        let hit = find_first(Exec::Auto, 10_000, |i| i % 997 == 5 && i > 0);
        assert_eq!(hit, Some(5));
    }

    #[test]
    fn pools_preserve_order() {
        let v = with_jobs(2, || map_range(Exec::Auto, 100, |i| i * i));
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn nan_surfaces_in_argmin() {
        let v = [1.0, f64::NAN, -3.0];
        let (i, x) = argmin(Exec::Sequential, 3, |i| v[i]).unwrap();
        assert_eq!(i, 1);
        assert!(x.is_nan());
    }
}
