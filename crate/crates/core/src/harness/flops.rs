//! Analytic FLOP counts for attention.
//!
//! Convention: one multiply-accumulate is 2 FLOPs, and each softmax element
//! costs 5 (max, subtract, exp, sum, divide). Only the score, softmax and
//! value-weighting stages are counted, plus K-Means on the sparse path;
//! projections are identical for every variant and are left out.

/// FLOPs charged per softmax element.
pub const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 5;

/// Human-readable statement of the convention, written next to reports.
pub const CONVENTION: &str =
    "2 flops per multiply-accumulate; 5 flops per softmax element; clustering 2*n*k*d*iters";

/// K-Means work: `k` centroids of width `d` for `iters` assignment passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KMeansCost {
    pub k: u64,
    pub d: u64,
    pub iters: u64,
}

/// Attention over a `rows × cols` score block for one head.
fn block(rows: u64, cols: u64, d_k: u64) -> u64 {
    let scores = 2 * rows * cols * d_k;
    let softmax = SOFTMAX_FLOPS_PER_ELEMENT * rows * cols;
    let weighting = 2 * rows * cols * d_k;
    scores + softmax + weighting
}

/// `heads · (2n²d_k + 5n² + 2n²d_k)`.
pub fn flop_dense(n: u64, d_k: u64, heads: u64) -> u64 {
    heads * block(n, n, d_k)
}

/// Rectangular cross-attention: `n_q` queries over `n_kv` keys.
pub fn flop_cross(n_q: u64, n_kv: u64, d_k: u64, heads: u64) -> u64 {
    heads * block(n_q, n_kv, d_k)
}

/// Attention part of [`flop_sparse`]: `heads · Σ_c (4 s_c² d_k + 5 s_c²)`.
pub fn flop_sparse_attention(cluster_sizes: &[u64], d_k: u64, heads: u64) -> u64 {
    heads * cluster_sizes.iter().map(|&s| block(s, s, d_k)).sum::<u64>()
}

/// Clustering term `2·n·k·d·i`.
pub fn flop_kmeans(n: u64, cost: KMeansCost) -> u64 {
    2 * n * cost.k * cost.d * cost.iters
}

/// Cluster-restricted attention plus the clustering that produced it.
pub fn flop_sparse(cluster_sizes: &[u64], d_k: u64, heads: u64, kmeans: KMeansCost) -> u64 {
    let n: u64 = cluster_sizes.iter().sum();
    flop_sparse_attention(cluster_sizes, d_k, heads) + flop_kmeans(n, kmeans)
}

/// Sizes of `k` clusters over `n` tokens differing by at most one.
pub fn balanced_sizes(n: u64, k: u64) -> Vec<u64> {
    (0..k).map(|c| n / k + u64::from(c < n % k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dense_plug_in() {
        assert_eq!(flop_dense(1, 1, 1), 9);
        assert_eq!(flop_dense(20, 8, 2), 4 * flop_dense(10, 8, 2));
    }

    #[test]
    fn dense_spreadsheet_value() {
        // n=64, d_k=64, heads=4 computed term by term:
        // scores 2·64·64·64 = 524288, softmax 5·64·64 = 20480, weighting 524288
        let per_head = 524_288 + 20_480 + 524_288;
        assert_eq!(flop_dense(64, 64, 4), 4 * per_head);
        assert_eq!(flop_dense(64, 64, 4), 4_276_224);
    }

    #[test]
    fn singleton_clusters() {
        let n = 37;
        let sizes = vec![1; n];
        assert_eq!(flop_sparse_attention(&sizes, 16, 3), 3 * n as u64 * (4 * 16 + 5));
    }

    #[test]
    fn balanced_clusters_divide_by_k() {
        for k in 1..20u64 {
            let n = k * 24;
            let sizes = balanced_sizes(n, k);
            assert_eq!(flop_sparse_attention(&sizes, 64, 2) * k, flop_dense(n, 64, 2));
        }
    }

    #[test]
    fn balanced_sizes_cover_n() {
        let s = balanced_sizes(4096, 12);
        assert_eq!(s.iter().sum::<u64>(), 4096);
        assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
    }

    proptest! {
        #[test]
        fn one_cluster_no_iters_is_dense(n in 1u64..5000, d_k in 1u64..256, heads in 1u64..16) {
            let kc = KMeansCost { k: 1, d: d_k, iters: 0 };
            prop_assert_eq!(flop_sparse(&[n], d_k, heads, kc), flop_dense(n, d_k, heads));
        }
    }
}
