use rayon::prelude::*;
use smer_core::train::Executor;

/// Data-parallel executor over the global rayon pool. `collect` keeps input
/// order, so reductions stay bit-identical to [`smer_core::train::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.par_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smer_core::train::Sequential;

    #[test]
    fn order_matches_sequential() {
        let xs: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761) % 977;
        assert_eq!(Rayon.map(&xs, f), Sequential.map(&xs, f));
    }
}
