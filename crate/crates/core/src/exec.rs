//! Chunked map over collocation points.
//!
//! Work is split into fixed-size chunks whose results come back in chunk
//! order, so any reduction performed by the caller is identical whether the
//! chunks ran on a thread pool or one after another.

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Points per chunk.
pub const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Rayon thread pool when the `parallel` feature is on, otherwise sequential.
    #[default]
    Parallel,
    Sequential,
}

fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK)).map(|c| c * CHUNK..((c + 1) * CHUNK).min(n)).collect()
}

/// `f` over consecutive chunks of `0..n`, results in chunk order.
pub fn map_chunks<T, F>(n: usize, mode: ExecMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunks(n);
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(f).collect()
        }
        _ => ranges.into_iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let parts = map_chunks(70, ExecMode::Parallel, |r| r);
        assert_eq!(parts, vec![0..32, 32..64, 64..70]);
        assert!(map_chunks(0, ExecMode::Sequential, |r| r).is_empty());
    }

    #[test]
    fn modes_agree_bitwise() {
        let f = |r: Range<usize>| r.map(|i| (i as f64 * 0.1).sin()).sum::<f64>();
        let a: f64 = map_chunks(1000, ExecMode::Parallel, f).iter().sum();
        let b: f64 = map_chunks(1000, ExecMode::Sequential, f).iter().sum();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
