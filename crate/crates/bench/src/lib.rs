//! Fixtures shared by the criterion benchmarks.

use smmt_core::numeric::Tensor;

/// Deterministic pseudo-random `n × d` matrix with entries in `[-1, 1]`.
pub fn fixture(n: usize, d: usize, salt: u64) -> Tensor {
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let data = (0..n * d)
        .map(|_| {
            // xorshift64*
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            let r = state.wrapping_mul(0x2545_F491_4F6C_DD1D);
            (r >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(vec![n, d], data).expect("positive extents")
}
