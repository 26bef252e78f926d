//! Benchmark inputs shared by the criterion benches.

use setree_core::{block_features, generate_sbm, Graph};

/// Two-block SBM with average degree about 10 and 16-dimensional block
/// features.
pub fn attributed_sbm(n: usize, seed: u64) -> Graph {
    let n = n - n % 2;
    let p_in = 16.0 / n as f64;
    let p_out = 4.0 / n as f64;
    let sbm = generate_sbm(n, 2, p_in, p_out, seed).expect("valid SBM parameters");
    let x = block_features(&sbm.labels, 16, 1.0, seed).expect("valid feature parameters");
    sbm.graph.with_attributes(x).expect("one feature row per vertex")
}
