//! Differentiable operations recorded on a [`Graph`](crate::autograd::Graph).

mod attention;
pub(crate) mod conv;
mod elementwise;
pub mod filter;
pub mod norm;
mod reduce;
mod spectral;

/// `f(i)` for `i in 0..n`, possibly on several threads, returned in order.
pub(crate) fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> alloc::vec::Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// `f(i, chunk)` over consecutive `len`-sized chunks of `data`.
pub(crate) fn for_each_chunk_mut(data: &mut [f64], len: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(len).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

pub use filter::{filter1d_replicate, Axis};
pub use norm::{BatchStats, BN_EPS};
