//! Data-parallel helpers for the embarrassingly parallel workloads: oracle
//! sweeps, step-size sweeps, and benchmark repetitions.
//!
//! With the `parallel` feature (default) `map` fans out over rayon; without
//! it the build falls back to plain sequential iteration. `map_seq` is
//! always available so the two execution paths can be compared directly.

pub fn map_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_par<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

/// Map with the build's default execution policy.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    map_par(items, f)
}

/// Map with the build's default execution policy.
#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    map_seq(items, f)
}

#[cfg(test)]
mod tests {
    #[test]
    fn map_preserves_order() {
        let out = super::map(vec![1, 2, 3, 4], |x| x * x);
        assert_eq!(out, vec![1, 4, 9, 16]);
    }
}
