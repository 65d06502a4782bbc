//! Order-preserving map over independent items: rayon workers when the
//! `parallel` feature is on, a plain loop otherwise. Results come back in
//! input order either way, so reductions over them are deterministic.

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        parallel_map(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sequential_map(items, f)
    }
}

pub fn sequential_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_input_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let want: Vec<u64> = xs.iter().map(|x| x * x).collect();
        assert_eq!(map(&xs, |x| x * x), want);
        assert_eq!(sequential_map(&xs, |x| x * x), want);
        #[cfg(feature = "parallel")]
        assert_eq!(parallel_map(&xs, |x| x * x), want);
    }
}
