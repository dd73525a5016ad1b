//! Property tests for the forward kernels.

use autograd::{Graph, NdArray};
use proptest::prelude::*;

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Shapes straddle the small-product cutoff so both GEMM paths run.
    #[test]
    fn matmul_matches_naive_product(
        m in 1usize..40, k in 1usize..40, n in 1usize..40, seed in any::<u64>(),
    ) {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let a: Vec<f64> = (0..m * k).map(|_| next()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| next()).collect();
        let g = Graph::new();
        let got = g
            .constant(NdArray::from_vec(vec![m, k], a.clone()))
            .matmul(g.constant(NdArray::from_vec(vec![k, n], b.clone())))
            .value();
        for (x, y) in got.data().iter().zip(naive_matmul(&a, &b, m, k, n)) {
            prop_assert!((x - y).abs() < 1e-12 * (k as f64));
        }
    }

    #[test]
    fn roll_round_trips(len in 1usize..12, rows in 1usize..4, shift in -20isize..20) {
        let data: Vec<f64> = (0..rows * len).map(|i| i as f64).collect();
        let g = Graph::new();
        let x = g.constant(NdArray::from_vec(vec![rows, len], data.clone()));
        let rolled = x.roll(1, shift).value();
        let back = x.roll(1, shift).roll(1, -shift).value();
        prop_assert_eq!(back.data(), &data[..]);
        let s = shift.rem_euclid(len as isize) as usize;
        for r in 0..rows {
            for i in 0..len {
                prop_assert_eq!(rolled.data()[r * len + (i + s) % len], data[r * len + i]);
            }
        }
    }
}
